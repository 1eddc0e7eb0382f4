//! Threshold search for weighted-sum detectors.
//!
//! Candidates form a grid `step, 2·step, …` up to `⌈μ_max + 6σ_max⌉`, where
//! `μ_max` and `σ_max` are the largest mean and standard deviation of the
//! weighted sum over the intervals of an all-ones sequence. The default step
//! of 1 suits integer weights. The lowest error wins; ties go to the smaller
//! threshold.

use serde::{Deserialize, Serialize};

use crate::ber::{AnalyticEnsemble, TailMethod};
use crate::channel::{BitSequence, SignalModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub error: f64,
}

pub fn threshold_candidates(
    model: &SignalModel,
    weights: &[f64],
    sequence_length: usize,
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::domain("threshold_candidates", "step must be > 0"));
    }
    if weights.len() != model.tx().samples_per_interval() {
        return Err(Error::domain("threshold_candidates", "weights do not match the sample count"));
    }
    let len = sequence_length.max(1);
    let response = model.sampled_response(len);
    let ones = BitSequence::ones(len);
    let (mut mu_max, mut sd_max) = (0.0f64, 0.0f64);
    for j in 0..len {
        let lambdas = response.means(ones.bits(), j);
        let mu: f64 = lambdas.iter().zip(weights).map(|(l, w)| w * l).sum();
        let var: f64 = lambdas.iter().zip(weights).map(|(l, w)| w * w * l).sum();
        mu_max = mu_max.max(mu);
        sd_max = sd_max.max(var.sqrt());
    }
    let top = (mu_max + 6.0 * sd_max).ceil();
    let n = (top / step).floor() as usize;
    if n == 0 {
        return Err(Error::domain("optimize_threshold", "no candidate thresholds: weighted sum is always near 0"));
    }
    Ok((1..=n).map(|k| k as f64 * step).collect())
}

fn pick(candidates: &[f64], errors: &[f64]) -> ThresholdChoice {
    let mut best = ThresholdChoice { threshold: candidates[0], error: errors[0] };
    for (&t, &e) in candidates.iter().zip(errors).skip(1) {
        if e < best.error {
            best = ThresholdChoice { threshold: t, error: e };
        }
    }
    best
}

/// Threshold minimizing the analytic average error over `ensemble`.
pub fn optimize_threshold_analytic(
    model: &SignalModel,
    weights: &[f64],
    ensemble: &[BitSequence],
    step: f64,
) -> Result<ThresholdChoice> {
    let first = ensemble.first().ok_or_else(|| Error::domain("optimize_threshold", "ensemble is empty"))?;
    let candidates = threshold_candidates(model, weights, first.len(), step)?;
    let analytic = AnalyticEnsemble::new(model, ensemble, weights, TailMethod::Auto)?;
    let errors = analytic.average_errors(&candidates);
    Ok(pick(&candidates, &errors))
}

/// Threshold minimizing the empirical error given the weighted sums observed
/// for transmitted ones and zeros.
pub fn optimize_threshold_empirical(ones: &[f64], zeros: &[f64], candidates: &[f64]) -> Result<ThresholdChoice> {
    if candidates.is_empty() {
        return Err(Error::domain("optimize_threshold", "no candidate thresholds"));
    }
    let total = ones.len() + zeros.len();
    if total == 0 {
        return Err(Error::domain("optimize_threshold", "no observations"));
    }
    let mut ones = ones.to_vec();
    let mut zeros = zeros.to_vec();
    ones.sort_by(f64::total_cmp);
    zeros.sort_by(f64::total_cmp);
    let errors: Vec<f64> = candidates
        .iter()
        .map(|&xi| {
            let missed = ones.partition_point(|&s| s < xi);
            let false_alarms = zeros.len() - zeros.partition_point(|&s| s < xi);
            (missed + false_alarms) as f64 / total as f64
        })
        .collect();
    Ok(pick(candidates, &errors))
}
