//! Model checkpoints in the CPNN record format. The model configuration is
//! stored as an extra `meta.config` record next to the parameters.

use std::io::{Read, Write};
use std::path::Path;

use deltatok_core::container::atomic_write;
use deltatok_nn::checkpoint::{load_into_store, read_records, write_records};
use deltatok_nn::{Scalar, Tensor};

use crate::config::ModelConfig;
use crate::error::{EncoderError, Result};
use crate::model::DeltaTokModel;

pub const CONFIG_RECORD: &str = "meta.config";

pub fn save_model<T: Scalar, W: Write>(model: &DeltaTokModel<T>, w: &mut W) -> Result<()> {
    let values = model.config.to_record();
    let meta: Tensor<T> = Tensor::new(vec![values.len()], values.iter().map(|&v| T::of(v)).collect())?;
    if meta.data().iter().zip(&values).any(|(m, v)| m.as_f64() != *v) {
        return Err(EncoderError::Config(
            "configuration values are not exactly representable at this precision".into(),
        ));
    }
    let mut records: Vec<(&str, &Tensor<T>)> = vec![(CONFIG_RECORD, &meta)];
    records.extend(model.store.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)));
    write_records(w, &records)?;
    Ok(())
}

pub fn load_model<T: Scalar, R: Read>(r: &mut R) -> Result<DeltaTokModel<T>> {
    let records = read_records(r)?;
    let (_, meta) = records
        .iter()
        .find(|(n, _)| n == CONFIG_RECORD)
        .ok_or_else(|| EncoderError::Config(format!("checkpoint has no {CONFIG_RECORD} record")))?;
    let config = ModelConfig::from_record(meta.data())?;
    let mut model = DeltaTokModel::new(config)?;
    load_into_store(&mut model.store, &records)?;
    Ok(model)
}

pub fn save_model_file<T: Scalar>(model: &DeltaTokModel<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save_model(model, &mut buf)?;
    atomic_write(path, |w| Ok(w.write_all(&buf)?))?;
    Ok(())
}

pub fn load_model_file<T: Scalar>(path: &Path) -> Result<DeltaTokModel<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f)
}
