//! Bit-error analysis: analytic error probability of weighted-sum detectors
//! and Monte Carlo error rates for any detector.
//!
//! For a weighted sum `Σ w_m X_m` of independent Poisson counts the exact
//! distribution is only Poisson when every contributing weight is equal; in
//! that case the exact CDF is used. Otherwise the sum is approximated by a
//! normal with mean `Σ w_m λ_m` and variance `Σ w_m² λ_m` with a −0.5
//! continuity correction. That approximation is poor in the far tails, which
//! shows up as analytic error probabilities below about 0.01 drifting from
//! simulation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::{gaussian_cdf, ln_poisson_pmf, poisson_cdf, BitSequence, CdfMethod, SampledResponse, SignalModel};
use crate::detect::Detector;
use crate::error::{Error, Result};
use crate::parallel::{try_map_indexed, Execution};
use crate::sim::rng::{stream, Domain};
use crate::sim::{inject_noise, random_sequence, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerMethod {
    AnalyticPoisson,
    AnalyticGaussian,
    MonteCarlo,
}

/// How [`weighted_sum_tail`] evaluates the CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Exact Poisson when all positive weights are equal, else Gaussian.
    #[default]
    Auto,
    Poisson,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    /// `Pr(Σ w_m X_m < ξ)`.
    pub probability: f64,
    pub method: BerMethod,
    /// Gaussian with zero variance: the result is a step function.
    pub degenerate: bool,
}

/// The common value of all positive weights, if they share one.
fn common_weight(weights: &[f64]) -> Option<f64> {
    let mut positive = weights.iter().copied().filter(|&w| w > 0.0);
    let first = positive.next()?;
    positive.all(|w| w == first).then_some(first)
}

/// `Pr(Σ w_m X_m < ξ)` for independent `X_m ~ Poisson(λ_m)`.
pub fn tail_from_means(lambdas: &[f64], weights: &[f64], threshold: f64, method: TailMethod) -> Result<TailEstimate> {
    if lambdas.len() != weights.len() {
        return Err(Error::domain("weighted_sum_tail", "means and weights differ in length"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::domain("weighted_sum_tail", "weights and means must be >= 0"));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        let p = if threshold > 0.0 { 1.0 } else { 0.0 };
        return Ok(TailEstimate { probability: p, method: BerMethod::AnalyticPoisson, degenerate: false });
    }
    let common = common_weight(weights);
    let use_poisson = match method {
        TailMethod::Auto => common.is_some(),
        TailMethod::Poisson => {
            if common.is_none() {
                return Err(Error::domain("weighted_sum_tail", "Poisson form needs equal positive weights"));
            }
            true
        }
        TailMethod::Gaussian => false,
    };
    if use_poisson {
        let w = common.expect("checked");
        let mean: f64 = lambdas.iter().zip(weights).filter(|(_, &wm)| wm > 0.0).map(|(l, _)| l).sum();
        let k = (threshold / w).ceil();
        let p = if k <= 0.0 { 0.0 } else { poisson_cdf(k as u64, mean, CdfMethod::Gamma)? };
        return Ok(TailEstimate { probability: p, method: BerMethod::AnalyticPoisson, degenerate: false });
    }
    let mean: f64 = lambdas.iter().zip(weights).map(|(l, w)| w * l).sum();
    let var: f64 = lambdas.iter().zip(weights).map(|(l, w)| w * w * l).sum();
    Ok(TailEstimate {
        probability: gaussian_cdf(threshold, mean, var),
        method: BerMethod::AnalyticGaussian,
        degenerate: var <= 0.0,
    })
}

/// `Pr(Σ w_m N_obs(t(j, m)) < ξ)` given the transmitted `sequence`.
pub fn weighted_sum_tail(
    model: &SignalModel,
    sequence: &BitSequence,
    j: usize,
    weights: &[f64],
    threshold: f64,
    method: TailMethod,
) -> Result<TailEstimate> {
    if j >= sequence.len() {
        return Err(Error::domain("weighted_sum_tail", format!("interval {j} outside sequence")));
    }
    let lambdas = model.sampled_response(sequence.len()).means(sequence.bits(), j);
    tail_from_means(&lambdas, weights, threshold, method)
}

/// Error probability of bit `j`: `Pr(sum < ξ)` if it is a 1, else
/// `Pr(sum >= ξ)`.
pub fn analytic_bit_error(
    model: &SignalModel,
    sequence: &BitSequence,
    j: usize,
    weights: &[f64],
    threshold: f64,
) -> Result<f64> {
    let tail = weighted_sum_tail(model, sequence, j, weights, threshold, TailMethod::Auto)?.probability;
    Ok(if sequence.get(j) == 1 { tail } else { 1.0 - tail })
}

/// Sequences drawn with `Pr(1) = p1` per bit, independent of the Monte Carlo
/// sequences of the same seed.
pub fn random_ensemble(p1: f64, len: usize, count: usize, seed: u64) -> Vec<BitSequence> {
    use rand::Rng;
    (0..count as u64)
        .map(|i| {
            let mut rng = stream(seed, Domain::Ensemble, i);
            BitSequence::new((0..len).map(|_| u8::from(rng.random::<f64>() < p1)).collect()).expect("non-empty")
        })
        .collect()
}

/// Per-bit sum statistics of an ensemble, reusable across thresholds.
#[derive(Debug, Clone)]
pub struct AnalyticEnsemble {
    sequences: usize,
    len: usize,
    /// `(bit, mean, variance)` per sequence and interval; for the Poisson
    /// form the mean is of the unweighted count sum and `variance` is unused.
    stats: Vec<(u8, f64, f64)>,
    common_weight: Option<f64>,
}

impl AnalyticEnsemble {
    pub fn new(model: &SignalModel, ensemble: &[BitSequence], weights: &[f64], method: TailMethod) -> Result<Self> {
        let Some(first) = ensemble.first() else {
            return Err(Error::domain("average_error_probability", "ensemble is empty"));
        };
        let len = first.len();
        if ensemble.iter().any(|s| s.len() != len) {
            return Err(Error::domain("average_error_probability", "sequences differ in length"));
        }
        if weights.len() != model.tx().samples_per_interval() {
            return Err(Error::domain("average_error_probability", "weights do not match the sample count"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("average_error_probability", "weights must be >= 0"));
        }
        let common = match method {
            TailMethod::Gaussian => None,
            TailMethod::Auto => common_weight(weights),
            TailMethod::Poisson => Some(
                common_weight(weights)
                    .ok_or_else(|| Error::domain("average_error_probability", "Poisson form needs equal weights"))?,
            ),
        };
        let response: SampledResponse = model.sampled_response(len);
        let mut buf = vec![0.0; weights.len()];
        let mut stats = Vec::with_capacity(ensemble.len() * len);
        for seq in ensemble {
            for j in 0..len {
                response.means_into(seq.bits(), j, &mut buf);
                let entry = if common.is_some() {
                    let mean = buf.iter().zip(weights).filter(|(_, &w)| w > 0.0).map(|(l, _)| l).sum();
                    (seq.get(j), mean, 0.0)
                } else {
                    let mean = buf.iter().zip(weights).map(|(l, w)| w * l).sum();
                    let var = buf.iter().zip(weights).map(|(l, w)| w * w * l).sum();
                    (seq.get(j), mean, var)
                };
                stats.push(entry);
            }
        }
        let all_zero = !weights.iter().any(|&w| w > 0.0);
        Ok(Self { sequences: ensemble.len(), len, stats, common_weight: if all_zero { None } else { common } })
    }

    pub fn method(&self) -> BerMethod {
        if self.common_weight.is_some() {
            BerMethod::AnalyticPoisson
        } else {
            BerMethod::AnalyticGaussian
        }
    }

    fn bit_error(&self, (bit, mean, var): (u8, f64, f64), threshold: f64) -> f64 {
        let tail = match self.common_weight {
            Some(w) => {
                let k = (threshold / w).ceil();
                if k <= 0.0 {
                    0.0
                } else {
                    poisson_cdf(k as u64, mean, CdfMethod::Gamma).expect("validated mean")
                }
            }
            None if mean == 0.0 && var == 0.0 => {
                if threshold > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            None => gaussian_cdf(threshold, mean, var),
        };
        if bit == 1 {
            tail
        } else {
            1.0 - tail
        }
    }

    /// Mean error over intervals for each sequence.
    pub fn per_sequence_errors(&self, threshold: f64) -> Vec<f64> {
        self.stats
            .chunks_exact(self.len)
            .map(|c| c.iter().map(|&s| self.bit_error(s, threshold)).sum::<f64>() / self.len as f64)
            .collect()
    }

    /// Mean error in each interval across the ensemble.
    pub fn per_bit_errors(&self, threshold: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for chunk in self.stats.chunks_exact(self.len) {
            for (o, &s) in out.iter_mut().zip(chunk) {
                *o += self.bit_error(s, threshold);
            }
        }
        out.iter_mut().for_each(|o| *o /= self.sequences as f64);
        out
    }

    pub fn average_error(&self, threshold: f64) -> f64 {
        self.stats.iter().map(|&s| self.bit_error(s, threshold)).sum::<f64>() / self.stats.len() as f64
    }

    /// [`Self::average_error`] at every threshold, sharing per-bit work.
    pub fn average_errors(&self, thresholds: &[f64]) -> Vec<f64> {
        let mut totals = vec![0.0; thresholds.len()];
        match self.common_weight {
            Some(w) => {
                let counts: Vec<u64> = thresholds.iter().map(|&xi| (xi / w).ceil().max(0.0) as u64).collect();
                let top = counts.iter().copied().max().unwrap_or(0) as usize;
                let mut below = vec![0.0; top + 1];
                for &(bit, mean, _) in &self.stats {
                    // below[c] = Pr(X < c)
                    let mut acc: f64 = 0.0;
                    for (c, slot) in below.iter_mut().enumerate() {
                        *slot = acc.min(1.0);
                        acc += ln_poisson_pmf(c as u64, mean).exp();
                    }
                    for (t, &c) in totals.iter_mut().zip(&counts) {
                        let tail = below[c as usize];
                        *t += if bit == 1 { tail } else { 1.0 - tail };
                    }
                }
            }
            None => {
                for &s in &self.stats {
                    for (t, &xi) in totals.iter_mut().zip(thresholds) {
                        *t += self.bit_error(s, xi);
                    }
                }
            }
        }
        let n = self.stats.len() as f64;
        totals.iter_mut().for_each(|t| *t /= n);
        totals
    }

    pub fn report(&self, threshold: f64) -> BerReport {
        let per_bit = self.per_bit_errors(threshold);
        let average = per_bit.iter().sum::<f64>() / per_bit.len() as f64;
        BerReport {
            per_bit,
            average,
            ensemble_size: self.sequences as u64,
            method: self.method(),
            ci95: None,
            per_bit_ci95: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }
}

/// Average analytic error over intervals and sequences of the ensemble.
pub fn average_error_probability(
    model: &SignalModel,
    ensemble: &[BitSequence],
    weights: &[f64],
    threshold: f64,
) -> Result<f64> {
    Ok(AnalyticEnsemble::new(model, ensemble, weights, TailMethod::Auto)?.average_error(threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub per_bit: Vec<f64>,
    pub average: f64,
    /// Sequences (analytic) or realizations (Monte Carlo).
    pub ensemble_size: u64,
    pub method: BerMethod,
    /// 95% normal-approximation half-width of `average` (Monte Carlo only).
    pub ci95: Option<f64>,
    pub per_bit_ci95: Vec<f64>,
}

fn half_width(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Error counts per interval.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BerTally {
    pub errors: Vec<u64>,
    pub realizations: u64,
}

impl BerTally {
    pub fn new(len: usize) -> Self {
        Self { errors: vec![0; len], realizations: 0 }
    }

    pub fn add(&mut self, truth: &BitSequence, decided: &BitSequence) -> Result<()> {
        if truth.len() != self.errors.len() || decided.len() != truth.len() {
            return Err(Error::domain("BerTally", "sequence length mismatch"));
        }
        for (e, (a, b)) in self.errors.iter_mut().zip(truth.bits().iter().zip(decided.bits())) {
            *e += u64::from(a != b);
        }
        self.realizations += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &BerTally) {
        for (a, b) in self.errors.iter_mut().zip(&other.errors) {
            *a += b;
        }
        self.realizations += other.realizations;
    }

    pub fn total_errors(&self) -> u64 {
        self.errors.iter().sum()
    }

    pub fn transmissions(&self) -> u64 {
        self.realizations * self.errors.len() as u64
    }

    pub fn report(&self) -> BerReport {
        let n = self.realizations;
        let per_bit: Vec<f64> = self.errors.iter().map(|&e| e as f64 / n.max(1) as f64).collect();
        let average = self.total_errors() as f64 / self.transmissions().max(1) as f64;
        BerReport {
            per_bit_ci95: per_bit.iter().map(|&p| half_width(p, n)).collect(),
            per_bit,
            average,
            ensemble_size: n,
            method: BerMethod::MonteCarlo,
            ci95: Some(half_width(average, self.transmissions())),
        }
    }
}

/// Simulates `realization_count` random sequences, adds noise, applies every
/// detector to the same observations and reports each detector's error rate.
pub fn monte_carlo_ber_many(sim: &Simulator, detectors: &[&dyn Detector], exec: Execution) -> Result<Vec<BerReport>> {
    let tx = sim.tx();
    let cfg = sim.config();
    let len = tx.sequence_length;
    let per_realization = try_map_indexed(cfg.realization_count, exec, |i| {
        let truth = random_sequence(tx.p1, len, cfg.master_seed, i);
        let clean = sim.run_realization(&truth, i)?;
        let obs = inject_noise(&clean, tx, cfg.master_seed, i);
        detectors
            .iter()
            .map(|d| {
                let mut tally = BerTally::new(len);
                tally.add(&truth, &d.detect(&obs)?)?;
                Ok(tally)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut totals = vec![BerTally::new(len); detectors.len()];
    for tallies in &per_realization {
        for (t, r) in totals.iter_mut().zip(tallies) {
            t.merge(r);
        }
    }
    Ok(totals.iter().map(BerTally::report).collect())
}

pub fn monte_carlo_ber(sim: &Simulator, detector: &dyn Detector, exec: Execution) -> Result<BerReport> {
    Ok(monte_carlo_ber_many(sim, &[detector], exec)?.remove(0))
}

pub const BER_CSV_HEADER: &str = "j,pe_analytic,pe_mc,ci95";

/// One row per interval (`j` one-based); missing columns are left empty.
pub fn write_ber_csv<W: Write + ?Sized>(
    w: &mut W,
    analytic: Option<&BerReport>,
    mc: Option<&BerReport>,
) -> std::io::Result<()> {
    writeln!(w, "{BER_CSV_HEADER}")?;
    let len = analytic.map_or(0, |r| r.per_bit.len()).max(mc.map_or(0, |r| r.per_bit.len()));
    let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for j in 0..len {
        let a = analytic.and_then(|r| r.per_bit.get(j).copied());
        let m = mc.and_then(|r| r.per_bit.get(j).copied());
        let ci = mc.and_then(|r| r.per_bit_ci95.get(j).copied());
        writeln!(w, "{},{},{},{}", j + 1, cell(a), cell(m), cell(ci))?;
    }
    Ok(())
}
