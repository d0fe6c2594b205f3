mod common;

use std::path::PathBuf;

use common::{random_pframe, random_tensor, rng, small_config};
use deltatok_encoder::checkpoint::{load_model, load_model_file, save_model, save_model_file};
use deltatok_encoder::{DeltaTokModel32, DeltaTokModel64, ModelConfig};
use sha2::{Digest, Sha256};

const GOLDEN_SHA256: &str = "d337cdce8c23832d205cafef8874761db798e830bb936b5b9e5418a8655f3e70";

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_small.cpnn")
}

fn golden_model() -> DeltaTokModel64 {
    DeltaTokModel64::new(ModelConfig { layers: 1, ..small_config(2024) }).unwrap()
}

fn bytes_of(model: &DeltaTokModel64) -> Vec<u8> {
    let mut buf = Vec::new();
    save_model(model, &mut buf).unwrap();
    buf
}

#[test]
fn golden_checkpoint_is_stable() {
    let bytes = bytes_of(&golden_model());
    assert_eq!(hex::encode(Sha256::digest(&bytes)), GOLDEN_SHA256);
    assert_eq!(std::fs::read(golden_path()).unwrap(), bytes);
    let loaded: DeltaTokModel64 = load_model_file(&golden_path()).unwrap();
    assert_eq!(loaded.config, golden_model().config);
}

#[test]
fn round_trip_is_bit_exact() {
    let mut model = DeltaTokModel64::new(small_config(5)).unwrap();
    // perturb so the loaded values cannot come from re-initialization
    let mut r = rng(1);
    for p in model.store.params_mut() {
        if p.trainable {
            let noise = random_tensor(&mut r, p.tensor.shape());
            p.tensor.add_assign(&noise);
        }
    }
    let bytes = bytes_of(&model);
    let loaded: DeltaTokModel64 = load_model(&mut bytes.as_slice()).unwrap();
    assert_eq!(loaded.config, model.config);
    for ((_, a), (_, b)) in model.store.iter().zip(loaded.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.trainable, b.trainable);
        assert_eq!(a.tensor, b.tensor);
    }
    let prev = random_tensor(&mut r, &[4, 8]);
    let p = random_pframe(&mut r, 32, 32, 1, 8);
    assert_eq!(
        model.pretrain_forward(&prev, &p).unwrap(),
        loaded.pretrain_forward(&prev, &p).unwrap()
    );
    assert_eq!(bytes_of(&loaded), bytes);
}

#[test]
fn files_are_written_atomically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cpnn");
    let model = golden_model();
    save_model_file(&model, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes_of(&model));
    assert!(save_model_file(&model, &dir.path().join("missing/m.cpnn")).is_err());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn single_precision_checkpoints() {
    let model: DeltaTokModel32 = golden_model().cast();
    let mut buf = Vec::new();
    save_model(&model, &mut buf).unwrap();
    let loaded: DeltaTokModel32 = load_model(&mut buf.as_slice()).unwrap();
    assert_eq!(loaded.store.iter().count(), model.store.iter().count());
    // seeds that f32 cannot hold exactly are refused
    let odd: DeltaTokModel32 = DeltaTokModel32::new(ModelConfig { seed: (1 << 30) + 1, ..small_config(0) }).unwrap();
    assert!(save_model(&odd, &mut Vec::new()).is_err());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = bytes_of(&golden_model());
    assert!(load_model::<f64, _>(&mut &bytes[..bytes.len() - 3]).is_err());
    assert!(load_model::<f64, _>(&mut &bytes[..10]).is_err());
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(load_model::<f64, _>(&mut bad.as_slice()).is_err());
}
