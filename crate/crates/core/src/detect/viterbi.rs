//! Maximum-likelihood sequence detection.
//!
//! Samples are treated as independent Poisson counts given the transmitted
//! sequence, so the sequence log-likelihood is a sum over intervals of
//! `Σ_m [s ln λ − λ]` (the `ln s!` term is the same for every candidate and
//! is dropped). The trellis state holds the last `F` bits; each survivor
//! keeps its full history, so ISI from bits older than `F` intervals still
//! enters `λ` exactly. With `F = B` no paths are merged and the result is
//! the exhaustive maximum.
//!
//! Ties are resolved deterministically: between two candidates with equal
//! likelihood, the one with a 0 in the most recent position where they
//! differ wins.

use std::cmp::Ordering;

use super::Detector;
use crate::channel::{BitSequence, SampledResponse, SignalModel};
use crate::error::{Error, Result};
use crate::sim::ObservationMatrix;

/// Means are floored here so that a path implying zero mean with a nonzero
/// count gets a huge penalty instead of `-inf`.
pub const MEAN_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct ViterbiSpec {
    memory: usize,
    response: SampledResponse,
}

impl ViterbiSpec {
    /// Trellis with explicit memory `memory` for sequences of
    /// `sequence_length` bits under `model`.
    pub fn new(model: &SignalModel, memory: usize, sequence_length: usize) -> Result<Self> {
        if memory == 0 || memory > sequence_length {
            return Err(Error::domain(
                "ViterbiSpec",
                format!("memory must lie in 1..={sequence_length}, got {memory}"),
            ));
        }
        if memory > 20 {
            return Err(Error::domain("ViterbiSpec", "memory above 20 would need over a million states"));
        }
        Ok(Self { memory, response: model.sampled_response(sequence_length) })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn response(&self) -> &SampledResponse {
        &self.response
    }
}

fn check_shape(obs: &ObservationMatrix, response: &SampledResponse) -> Result<()> {
    if obs.intervals() > response.len() || obs.samples() != response.samples() {
        return Err(Error::domain(
            "ml_sequence_detect",
            format!(
                "observations are {}x{}, model covers {}x{}",
                obs.intervals(),
                obs.samples(),
                response.len(),
                response.samples()
            ),
        ));
    }
    Ok(())
}

/// Log-likelihood of interval `j` given `history[..=j]`.
fn interval_ll(obs: &ObservationMatrix, response: &SampledResponse, history: &[u8], j: usize, buf: &mut [f64]) -> f64 {
    response.means_into(history, j, buf);
    obs.row(j)
        .iter()
        .zip(buf.iter())
        .map(|(&s, &lambda)| {
            let lambda = lambda.max(MEAN_FLOOR);
            f64::from(s) * lambda.ln() - lambda
        })
        .sum()
}

/// Log-likelihood of `sequence`, accumulated interval by interval.
pub fn sequence_log_likelihood(
    obs: &ObservationMatrix,
    response: &SampledResponse,
    sequence: &BitSequence,
) -> Result<f64> {
    check_shape(obs, response)?;
    if sequence.len() != obs.intervals() {
        return Err(Error::domain("sequence_log_likelihood", "sequence and observations differ in length"));
    }
    let mut buf = vec![0.0; obs.samples()];
    let mut total = 0.0;
    for j in 0..obs.intervals() {
        total += interval_ll(obs, response, sequence.bits(), j, &mut buf);
    }
    Ok(total)
}

/// Tie order: the candidate with a 0 at the latest differing bit is better.
fn prefer(a: &[u8], b: &[u8]) -> Ordering {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return if *x == 0 { Ordering::Greater } else { Ordering::Less };
        }
    }
    Ordering::Equal
}

fn better(ll_a: f64, hist_a: &[u8], ll_b: f64, hist_b: &[u8]) -> bool {
    match ll_a.total_cmp(&ll_b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => prefer(hist_a, hist_b) == Ordering::Greater,
    }
}

#[derive(Clone)]
struct Survivor {
    ll: f64,
    history: Vec<u8>,
}

pub fn ml_sequence_detect(obs: &ObservationMatrix, spec: &ViterbiSpec) -> Result<BitSequence> {
    let response = &spec.response;
    check_shape(obs, response)?;
    let b = obs.intervals();
    let f = spec.memory.min(b);
    let states = 1usize << f;
    let mask = states - 1;
    let mut buf = vec![0.0; obs.samples()];
    // no emissions before the sequence starts: only the all-zero state
    let mut current: Vec<Option<Survivor>> = vec![None; states];
    current[0] = Some(Survivor { ll: 0.0, history: Vec::with_capacity(b) });
    for j in 0..b {
        let mut next: Vec<Option<Survivor>> = vec![None; states];
        for (state, surv) in current.iter().enumerate() {
            let Some(surv) = surv else { continue };
            for bit in 0..2u8 {
                let mut history = surv.history.clone();
                history.push(bit);
                let ll = surv.ll + interval_ll(obs, response, &history, j, &mut buf);
                let target = ((state << 1) | bit as usize) & mask;
                let replace = match &next[target] {
                    None => true,
                    Some(old) => better(ll, &history, old.ll, &old.history),
                };
                if replace {
                    next[target] = Some(Survivor { ll, history });
                }
            }
        }
        current = next;
    }
    let best = current
        .into_iter()
        .flatten()
        .reduce(|a, b| if better(b.ll, &b.history, a.ll, &a.history) { b } else { a })
        .expect("at least one survivor");
    if !best.ll.is_finite() {
        return Err(Error::numeric("ml_sequence_detect", "best path has non-finite likelihood"));
    }
    BitSequence::new(best.history)
}

/// Brute-force maximum over all `2^B` sequences with the same objective and
/// tie rule as [`ml_sequence_detect`].
pub fn exhaustive_ml(obs: &ObservationMatrix, response: &SampledResponse) -> Result<BitSequence> {
    check_shape(obs, response)?;
    let b = obs.intervals();
    if b > 20 {
        return Err(Error::domain("exhaustive_ml", "sequence too long for exhaustive search"));
    }
    let mut best: Option<(f64, BitSequence)> = None;
    for idx in 0..(1u64 << b) {
        // bit j of idx is interval j
        let seq = BitSequence::from_index(idx, b);
        let ll = sequence_log_likelihood(obs, response, &seq)?;
        let replace = match &best {
            None => true,
            Some((bl, bs)) => better(ll, seq.bits(), *bl, bs.bits()),
        };
        if replace {
            best = Some((ll, seq));
        }
    }
    Ok(best.expect("non-empty search").1)
}

impl Detector for ViterbiSpec {
    fn detect(&self, observations: &ObservationMatrix) -> Result<BitSequence> {
        ml_sequence_detect(observations, self)
    }
}
