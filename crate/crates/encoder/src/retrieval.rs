//! Next-frame retrieval: does the predicted embedding of frame `t` find
//! frame `t` among the other frames of its video?

use std::collections::BTreeMap;

use deltatok_core::EncodedFrame;
use deltatok_nn::Tensor;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::model::DeltaTokModel;
use crate::train::EncodedVideo;

pub const RECALL_KS: [usize; 3] = [1, 2, 5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub ours: BTreeMap<String, f64>,
    pub baseline: BTreeMap<String, f64>,
    pub num_queries: usize,
}

impl RetrievalReport {
    pub fn ours_at(&self, k: usize) -> f64 {
        self.ours[&format!("recall@{k}")]
    }

    pub fn baseline_at(&self, k: usize) -> f64 {
        self.baseline[&format!("recall@{k}")]
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// 0-based rank of `target` when `candidates` are sorted by decreasing
/// cosine similarity to `query`, ties broken by lower index.
pub fn rank_of(query: &[f64], candidates: &[(usize, Vec<f64>)], target: usize) -> Option<usize> {
    let mut scored: Vec<(f64, usize)> = candidates.iter().map(|(i, c)| (cosine(query, c), *i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.iter().position(|&(_, i)| i == target)
}

fn pooled(t: &Tensor<f64>) -> Vec<f64> {
    t.mean_rows()
}

/// Per-query ranks `(ours, baseline)` for one video.
fn video_ranks(model: &DeltaTokModel<f64>, video: &EncodedVideo) -> Result<Vec<(usize, usize)>> {
    let tokens: Vec<Tensor<f64>> = video.frames.iter().map(|f| model.embed_iframe(f)).collect::<Result<_>>()?;
    let pooled_db: Vec<Vec<f64>> = tokens.iter().map(pooled).collect();
    let mut ranks = Vec::new();
    for (t, frame) in video.stream.frames.iter().enumerate().skip(1) {
        let EncodedFrame::P(p) = frame else { continue };
        let prev = t - 1;
        let candidates: Vec<(usize, Vec<f64>)> = pooled_db
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != prev)
            .map(|(j, e)| (j, e.clone()))
            .collect();
        let ours = pooled(&model.pretrain_forward(&tokens[prev], p)?);
        let rank = |q: &[f64]| rank_of(q, &candidates, t).expect("target is a candidate");
        ranks.push((rank(&ours), rank(&pooled_db[prev])));
    }
    Ok(ranks)
}

/// Recall@{1,2,5} of the predicted embedding ("ours") against the previous
/// frame's own embedding ("baseline"). Videos with fewer than two retained
/// frames are skipped.
pub fn retrieval_eval(model: &DeltaTokModel<f64>, videos: &[EncodedVideo]) -> Result<RetrievalReport> {
    let usable: Vec<&EncodedVideo> = videos
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            if v.frames.len() < 2 {
                log::warn!("video {i} has fewer than 2 retained frames; skipped");
                None
            } else {
                Some(v)
            }
        })
        .collect();
    let ranks: Vec<(usize, usize)> = usable
        .par_iter()
        .map(|v| video_ranks(model, v))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let n = ranks.len();
    let recall = |pick: fn(&(usize, usize)) -> usize| -> BTreeMap<String, f64> {
        RECALL_KS
            .iter()
            .map(|&k| {
                let hits = ranks.iter().filter(|r| pick(r) < k).count();
                let value = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
                (format!("recall@{k}"), value)
            })
            .collect()
    };
    Ok(RetrievalReport {
        ours: recall(|r| r.0),
        baseline: recall(|r| r.1),
        num_queries: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_resolve_to_lowest_index() {
        let same = vec![1.0, 0.0];
        let cands = vec![(3, same.clone()), (1, same.clone()), (2, same.clone())];
        assert_eq!(rank_of(&same, &cands, 1), Some(0));
        assert_eq!(rank_of(&same, &cands, 2), Some(1));
        assert_eq!(rank_of(&same, &cands, 3), Some(2));
    }

    #[test]
    fn cosine_of_orthogonal_and_zero() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
    }
}
