//! Token accounting, context-budget planning and GOP sampling.

use crate::error::{CodecError, Result};

/// Default cap on sampled GOPs per video.
pub const DEFAULT_GOP_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetQuery {
    /// Source duration in seconds; informational for [`plan_budget`].
    pub duration: f64,
    pub fps: usize,
    pub gop_size: usize,
    pub fusion_window: usize,
    pub keyframes_per_gop: usize,
    /// Tokens per I-frame.
    pub m: usize,
    /// Tokens per P-frame.
    pub n: usize,
    pub context_budget: usize,
    pub per_frame_overhead: usize,
}

impl BudgetQuery {
    /// Settings of the 1-keyframe configuration at 30 fps with 1-second windows.
    pub fn reference(context_budget: usize) -> Self {
        Self {
            duration: 0.0,
            fps: 30,
            gop_size: 240,
            fusion_window: 30,
            keyframes_per_gop: 1,
            m: 210,
            n: 8,
            context_budget,
            per_frame_overhead: 0,
        }
    }

    pub fn slots(&self) -> usize {
        self.gop_size / self.fusion_window
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fps", self.fps),
            ("gop_size", self.gop_size),
            ("fusion_window", self.fusion_window),
            ("keyframes_per_gop", self.keyframes_per_gop),
            ("m", self.m),
            ("n", self.n),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CodecError::Config(format!("{name} must be positive")));
        }
        if !(self.duration >= 0.0) {
            return Err(CodecError::Config("duration must be non-negative".into()));
        }
        if self.gop_size % self.fusion_window != 0 {
            return Err(CodecError::Config(format!(
                "gop_size {} is not a multiple of fusion_window {}",
                self.gop_size, self.fusion_window
            )));
        }
        if self.keyframes_per_gop > self.slots() {
            return Err(CodecError::Config(format!(
                "keyframes_per_gop {} exceeds {} slots per GOP",
                self.keyframes_per_gop,
                self.slots()
            )));
        }
        Ok(())
    }
}

pub fn tokens_per_gop(q: &BudgetQuery) -> Result<usize> {
    q.validate()?;
    let slots = q.slots();
    let k = q.keyframes_per_gop;
    Ok(k * q.m + (slots - k) * q.n + slots * q.per_frame_overhead)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetPlan {
    Coverage {
        max_gops: usize,
        max_duration_seconds: f64,
        tokens_used: usize,
        tokens_per_gop: usize,
    },
    /// The budget does not fit a single GOP.
    NoCoverage { tokens_per_gop: usize },
}

impl BudgetPlan {
    pub fn max_duration_seconds(&self) -> f64 {
        match *self {
            Self::Coverage {
                max_duration_seconds, ..
            } => max_duration_seconds,
            Self::NoCoverage { .. } => 0.0,
        }
    }

    pub fn max_gops(&self) -> usize {
        match *self {
            Self::Coverage { max_gops, .. } => max_gops,
            Self::NoCoverage { .. } => 0,
        }
    }
}

pub fn plan_budget(q: &BudgetQuery) -> Result<BudgetPlan> {
    let per_gop = tokens_per_gop(q)?;
    let max_gops = q.context_budget / per_gop;
    if max_gops == 0 {
        return Ok(BudgetPlan::NoCoverage { tokens_per_gop: per_gop });
    }
    Ok(BudgetPlan::Coverage {
        max_gops,
        max_duration_seconds: (max_gops * q.gop_size) as f64 / q.fps as f64,
        tokens_used: max_gops * per_gop,
        tokens_per_gop: per_gop,
    })
}

/// Uniform GOP sampling: all indices when `total <= cap`, otherwise
/// `floor(j * total / cap)` for `j in 0..cap`.
pub fn sample_gops(total_gops: usize, cap: usize) -> Vec<usize> {
    if total_gops <= cap {
        return (0..total_gops).collect();
    }
    (0..cap).map(|j| j * total_gops / cap).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub config_label: String,
    pub context_budget: usize,
    pub max_duration_seconds: f64,
}

/// Keyframe configurations compared in the scaling curve, as `(label, k)`.
pub const SCALING_CONFIGS: [(&str, usize); 4] =
    [("1 keyframe/GOP", 1), ("2 keyframes/GOP", 2), ("4 keyframes/GOP", 4), ("dense", 8)];

pub fn scaling_curve(budgets: &[usize]) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(budgets.len() * SCALING_CONFIGS.len());
    for &(label, k) in &SCALING_CONFIGS {
        for &budget in budgets {
            let q = BudgetQuery {
                keyframes_per_gop: k,
                ..BudgetQuery::reference(budget)
            };
            rows.push(ScalingRow {
                config_label: label.to_string(),
                context_budget: budget,
                max_duration_seconds: plan_budget(&q)?.max_duration_seconds(),
            });
        }
    }
    Ok(rows)
}

/// Budgets from 16K to 1M tokens, doubling.
pub fn default_scaling_budgets() -> Vec<usize> {
    (0..=6).map(|i| 15_625 << i).collect()
}

pub fn write_scaling_csv<W: std::io::Write>(rows: &[ScalingRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["config_label", "context_budget", "max_duration_seconds"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.config_label.clone(),
            r.context_budget.to_string(),
            r.max_duration_seconds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CodecError {
    CodecError::Invalid(format!("csv: {e}"))
}
