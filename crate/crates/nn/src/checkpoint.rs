//! "CPNN" checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"CPNN"
//! version u16 (= 1)
//! repeated until EOF:
//!   name_len u16, name utf-8 bytes
//!   rank u8, dims u32 × rank
//!   data f64 × prod(dims)
//! ```

use std::io::{Read, Write};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CPNN";
pub const VERSION: u16 = 1;

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn write_records<T: Scalar, W: Write>(w: &mut W, records: &[(&str, &Tensor<T>)]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in records {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("rank too large: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[rank])?;
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("dim too large: {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&x.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads every record; `offset` in errors is the byte position of the failure.
pub fn read_records<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor<f64>)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(bad("not a CPNN file"));
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        let len = u16::from_le_bytes(cur.array()?) as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| bad(format!("invalid utf-8 name at offset {}", cur.pos - len)))?
            .to_owned();
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.array()?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(cur.array()?));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad(format!("truncated at offset {}", self.buf.len())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Writes every parameter of `store` in registration order.
pub fn save_store<T: Scalar, W: Write>(store: &ParamStore<T>, w: &mut W) -> Result<()> {
    let records: Vec<(&str, &Tensor<T>)> = store
        .iter()
        .map(|(_, p)| (p.name.as_str(), &p.tensor))
        .collect();
    write_records(w, &records)
}

/// Copies records into same-named parameters of `store`. Every parameter must
/// be present with a matching shape; extra records are ignored.
pub fn load_into_store<T: Scalar>(
    store: &mut ParamStore<T>,
    records: &[(String, Tensor<f64>)],
) -> Result<()> {
    for p in store.params_mut() {
        let (_, t) = records
            .iter()
            .find(|(n, _)| *n == p.name)
            .ok_or_else(|| bad(format!("missing parameter {}", p.name)))?;
        if t.shape() != p.tensor.shape() {
            return Err(bad(format!(
                "{}: shape {:?} in file, {:?} expected",
                p.name,
                t.shape(),
                p.tensor.shape()
            )));
        }
        p.tensor = t.cast();
    }
    Ok(())
}
