//! CPVS container: a little-endian binary serialization of [`CodecStream`].
//!
//! ```text
//! header  "CPVS" | version u16 | width u32 | height u32 | channels u8 | block_size u8
//!         | gop_size u32 | fps u16 | fusion_window u32 | frame_count u32
//! frame   tag u8 (0 = I, 1 = P)
//!   I     width*height*channels pixels, u8, row-major interleaved
//!   P     ref_offset u32 | rows*cols (d_row i16, d_col i16) | width*height*channels i16
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{CodecError, Result};
use crate::model::{
    validate_stream, CodecStream, EncodedFrame, Frame, MotionField, MotionVector, PFrame, ResidualPlane,
    VideoConfig,
};

pub const MAGIC: [u8; 4] = *b"CPVS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 1 + 4 + 2 + 4 + 4;

const TAG_I: u8 = 0;
const TAG_P: u8 = 1;

fn narrow<T: TryFrom<usize>>(value: usize, field: &str) -> Result<T> {
    T::try_from(value).map_err(|_| CodecError::Invalid(format!("{field} {value} does not fit the container field")))
}

/// Serializes a validated stream into `out`; returns the number of bytes written.
pub fn write_stream_to<W: Write>(stream: &CodecStream, mut out: W) -> Result<u64> {
    validate_stream(stream).into_result()?;
    let cfg = &stream.config;
    let mut buf = Vec::with_capacity(HEADER_LEN + stream.frames.len() * cfg.frame_len() * 2);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&narrow::<u32>(cfg.width, "width")?.to_le_bytes());
    buf.extend_from_slice(&narrow::<u32>(cfg.height, "height")?.to_le_bytes());
    buf.push(narrow::<u8>(cfg.channels, "channels")?);
    buf.push(narrow::<u8>(cfg.block_size, "block_size")?);
    buf.extend_from_slice(&narrow::<u32>(cfg.gop_size, "gop_size")?.to_le_bytes());
    buf.extend_from_slice(&narrow::<u16>(cfg.fps, "fps")?.to_le_bytes());
    buf.extend_from_slice(&narrow::<u32>(cfg.fusion_window, "fusion_window")?.to_le_bytes());
    buf.extend_from_slice(&narrow::<u32>(stream.frames.len(), "frame_count")?.to_le_bytes());
    for frame in &stream.frames {
        match frame {
            EncodedFrame::I(f) => {
                buf.push(TAG_I);
                buf.extend_from_slice(f.pixels());
            }
            EncodedFrame::P(p) => {
                buf.push(TAG_P);
                buf.extend_from_slice(&narrow::<u32>(p.ref_offset, "ref_offset")?.to_le_bytes());
                for v in p.motion.vectors() {
                    let dy = i16::try_from(v.dy).map_err(|_| CodecError::Invalid("motion exceeds i16".into()))?;
                    let dx = i16::try_from(v.dx).map_err(|_| CodecError::Invalid("motion exceeds i16".into()))?;
                    buf.extend_from_slice(&dy.to_le_bytes());
                    buf.extend_from_slice(&dx.to_le_bytes());
                }
                for r in p.residual.values() {
                    buf.extend_from_slice(&r.to_le_bytes());
                }
            }
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(buf.len() as u64)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    frame: Option<usize>,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CodecError::Format {
                offset: self.bytes.len() as u64,
                frame: self.frame,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i16s(&mut self, n: usize, what: &str) -> Result<Vec<i16>> {
        let raw = self.take(n * 2, what)?;
        Ok(raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect())
    }

    fn fail(&self, offset: usize, message: impl Into<String>) -> CodecError {
        CodecError::Format {
            offset: offset as u64,
            frame: self.frame,
            message: message.into(),
        }
    }
}

/// Parses and validates a CPVS byte buffer.
pub fn read_stream_from(bytes: &[u8]) -> Result<CodecStream> {
    let mut cur = Cursor { bytes, pos: 0, frame: None };
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(cur.fail(0, "not a CPVS file"));
    }
    cur.pos = 4;
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(cur.fail(4, format!("unsupported CPVS version {version}")));
    }
    let width = cur.u32("width")? as usize;
    let height = cur.u32("height")? as usize;
    let channels = cur.u8("channels")? as usize;
    let block_size = cur.u8("block_size")? as usize;
    let gop_size = cur.u32("gop_size")? as usize;
    let fps = cur.u16("fps")? as usize;
    let fusion_window = cur.u32("fusion_window")? as usize;
    let frame_count = cur.u32("frame_count")? as usize;
    let config = VideoConfig {
        width,
        height,
        channels,
        block_size,
        gop_size,
        fps,
        fusion_window,
    };
    config
        .validate()
        .map_err(|e| cur.fail(6, format!("invalid header: {e}")))?;
    if frame_count == 0 {
        return Err(cur.fail(HEADER_LEN - 4, "frame_count must be at least 1"));
    }
    let (rows, cols, len) = (config.grid_rows(), config.grid_cols(), config.frame_len());
    let mut frames = Vec::with_capacity(frame_count.min(1 << 16));
    for index in 0..frame_count {
        cur.frame = Some(index);
        let tag_at = cur.pos;
        let frame = match cur.u8("frame tag")? {
            TAG_I => {
                let pixels = cur.take(len, "I-frame pixels")?.to_vec();
                EncodedFrame::I(Frame::new(width, height, channels, pixels)?)
            }
            TAG_P => {
                let ref_offset = cur.u32("ref_offset")? as usize;
                let motion = cur.i16s(rows * cols * 2, "motion field")?;
                let vectors = motion
                    .chunks_exact(2)
                    .map(|v| MotionVector::new(i32::from(v[0]), i32::from(v[1])))
                    .collect();
                let residual = cur.i16s(len, "residual plane")?;
                EncodedFrame::P(PFrame {
                    ref_offset,
                    motion: MotionField::new(rows, cols, block_size, vectors)?,
                    residual: ResidualPlane::new(width, height, channels, residual)?,
                })
            }
            other => return Err(cur.fail(tag_at, format!("unknown frame tag {other}"))),
        };
        frames.push(frame);
    }
    if cur.pos != bytes.len() {
        cur.frame = None;
        return Err(cur.fail(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let stream = CodecStream { config, frames };
    validate_stream(&stream).into_result()?;
    Ok(stream)
}

/// Writes `stream` to `path` atomically; returns the number of bytes written.
pub fn write_stream(stream: &CodecStream, path: &Path) -> Result<u64> {
    let mut written = 0;
    atomic_write(path, |f| {
        written = write_stream_to(stream, f)?;
        Ok(())
    })?;
    Ok(written)
}

pub fn read_stream(path: &Path) -> Result<CodecStream> {
    read_stream_from(&std::fs::read(path)?)
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write never leaves a partial file behind.
pub fn atomic_write<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<&mut std::fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CodecError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CodecStream {
        let cfg = VideoConfig::new(4, 4, 1).with_block(2).with_gop(2).with_window(1).with_fps(5);
        let i = Frame::from_fn(&cfg, |y, x, _| (y * 4 + x) as u8);
        let mut motion = MotionField::zeros(&cfg);
        let mut vectors = motion.vectors().to_vec();
        vectors[1] = MotionVector::new(-1, 2);
        motion = MotionField::new(2, 2, 2, vectors).unwrap();
        let mut residual = vec![0i16; 16];
        residual[0] = 3;
        residual[15] = 7;
        let p = PFrame {
            ref_offset: 1,
            motion,
            residual: ResidualPlane::new(4, 4, 1, residual).unwrap(),
        };
        CodecStream {
            config: cfg,
            frames: vec![EncodedFrame::I(i), EncodedFrame::P(p)],
        }
    }

    #[test]
    fn header_layout_is_little_endian() {
        let mut buf = Vec::new();
        write_stream_to(&tiny(), &mut buf).unwrap();
        assert_eq!(
            &buf[..HEADER_LEN],
            &[
                b'C', b'P', b'V', b'S', 1, 0, 4, 0, 0, 0, 4, 0, 0, 0, 1, 2, 2, 0, 0, 0, 5, 0, 1, 0, 0, 0, 2, 0,
                0, 0
            ]
        );
        // I tag + 16 pixels, P tag + ref_offset + 4 vectors + 16 residuals
        assert_eq!(buf.len(), HEADER_LEN + 17 + 1 + 4 + 16 + 32);
        let p = HEADER_LEN + 17;
        assert_eq!(buf[p], 1);
        assert_eq!(&buf[p + 1..p + 5], &[1, 0, 0, 0]);
        assert_eq!(&buf[p + 9..p + 13], &[0xff, 0xff, 2, 0]);
        assert_eq!(&buf[p + 21..p + 23], &[3, 0]);
    }

    #[test]
    fn round_trips() {
        let s = tiny();
        let mut buf = Vec::new();
        write_stream_to(&s, &mut buf).unwrap();
        assert_eq!(read_stream_from(&buf).unwrap(), s);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut buf = Vec::new();
        write_stream_to(&tiny(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_stream_from(&bad).unwrap_err().to_string().contains("not a CPVS file"));
        let mut bad = buf;
        bad[4] = 2;
        assert!(read_stream_from(&bad).unwrap_err().to_string().contains("version 2"));
    }

    #[test]
    fn truncation_names_frame_and_offset() {
        let mut buf = Vec::new();
        write_stream_to(&tiny(), &mut buf).unwrap();
        let cut = HEADER_LEN + 17 + 10;
        let err = read_stream_from(&buf[..cut]).unwrap_err();
        match err {
            CodecError::Format { offset, frame, .. } => {
                assert_eq!(frame, Some(1));
                assert_eq!(offset, cut as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_stream_from(&buf[..cut]).unwrap_err().to_string().contains("frame 1"));
    }

    #[test]
    fn empty_stream_is_not_written() {
        let s = CodecStream {
            config: tiny().config,
            frames: Vec::new(),
        };
        assert!(write_stream_to(&s, Vec::new()).is_err());
    }
}
