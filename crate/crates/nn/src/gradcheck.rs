//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used here, so the check stays independent of
//! the backward rules it validates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
    /// Norm floor below which both gradients count as zero.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 24,
            seed: 0,
            floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub coords: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.rel_err)
    }
}

fn coords(len: usize, opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    if len <= opts.max_coords {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut idx = sample(&mut rng, len, opts.max_coords).into_vec();
    idx.sort_unstable();
    idx
}

fn rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let an = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = an.max(nn);
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}

/// Compares `analytic` (store order) against finite differences of `loss`
/// for every trainable parameter.
pub fn check_params(
    store: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    loss: impl Fn(&ParamStore<f64>) -> f64,
    opts: &GradCheckOptions,
) -> GradCheckReport {
    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for (i, (id, p)) in store.iter().enumerate() {
        if !p.trainable {
            continue;
        }
        let picked = coords(p.tensor.len(), opts, i as u64);
        let mut numeric = Vec::with_capacity(picked.len());
        let mut an = Vec::with_capacity(picked.len());
        for &c in &picked {
            let orig = p.tensor.data()[c];
            probe.get_mut(id).tensor.data_mut()[c] = orig + opts.step;
            let plus = loss(&probe);
            probe.get_mut(id).tensor.data_mut()[c] = orig - opts.step;
            let minus = loss(&probe);
            probe.get_mut(id).tensor.data_mut()[c] = orig;
            numeric.push((plus - minus) / (2.0 * opts.step));
            an.push(analytic[i].data()[c]);
        }
        report.tensors.push(TensorCheck {
            name: p.name.clone(),
            rel_err: rel_err(&an, &numeric, opts.floor),
            analytic_norm: an.iter().map(|a| a * a).sum::<f64>().sqrt(),
            coords: picked.len(),
        });
    }
    report
}

/// Finite-difference check of the gradient with respect to one input tensor.
pub fn check_input(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    loss: impl Fn(&Tensor<f64>) -> f64,
    opts: &GradCheckOptions,
) -> TensorCheck {
    let picked = coords(x.len(), opts, 0xdead);
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(picked.len());
    let mut an = Vec::with_capacity(picked.len());
    for &c in &picked {
        let orig = x.data()[c];
        probe.data_mut()[c] = orig + opts.step;
        let plus = loss(&probe);
        probe.data_mut()[c] = orig - opts.step;
        let minus = loss(&probe);
        probe.data_mut()[c] = orig;
        numeric.push((plus - minus) / (2.0 * opts.step));
        an.push(analytic.data()[c]);
    }
    TensorCheck {
        name: "input".into(),
        rel_err: rel_err(&an, &numeric, opts.floor),
        analytic_norm: an.iter().map(|a| a * a).sum::<f64>().sqrt(),
        coords: picked.len(),
    }
}
