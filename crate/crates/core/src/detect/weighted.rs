//! Weighted-sum detectors: decide 1 in interval `j` iff
//! `Σ_m w_m s[j, m] >= ξ`.

use serde::{Deserialize, Serialize};

use super::Detector;
use crate::channel::{BitSequence, SignalModel};
use crate::error::{Error, Result};
use crate::sim::ObservationMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSumSpec {
    weights: Vec<f64>,
    threshold: f64,
}

impl WeightedSumSpec {
    pub fn new(weights: Vec<f64>, threshold: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("WeightedSumSpec", "need at least one weight"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::domain("WeightedSumSpec", "weights must be finite and >= 0"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::domain("WeightedSumSpec", "at least one weight must be positive"));
        }
        if !(threshold > 0.0) || !threshold.is_finite() {
            return Err(Error::domain("WeightedSumSpec", format!("threshold must be > 0, got {threshold}")));
        }
        Ok(Self { weights, threshold })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

pub fn weighted_sum(weights: &[f64], counts: &[u32]) -> f64 {
    weights.iter().zip(counts).map(|(w, &c)| w * f64::from(c)).sum()
}

pub fn weighted_sum_decide(spec: &WeightedSumSpec, counts: &[u32]) -> Result<u8> {
    if counts.len() != spec.weights.len() {
        return Err(Error::domain(
            "weighted_sum_decide",
            format!("{} counts for {} weights", counts.len(), spec.weights.len()),
        ));
    }
    Ok(u8::from(weighted_sum(&spec.weights, counts) >= spec.threshold))
}

impl Detector for WeightedSumSpec {
    fn detect(&self, observations: &ObservationMatrix) -> Result<BitSequence> {
        let bits = observations.rows().map(|row| weighted_sum_decide(self, row)).collect::<Result<Vec<_>>>()?;
        BitSequence::new(bits)
    }
}

/// `w_m = N̄_TX(g(m))` from an emission in the current interval only.
pub fn matched_filter_weights(model: &SignalModel) -> Vec<f64> {
    model.current_interval_response()
}

pub fn equal_weights(samples: usize) -> Vec<f64> {
    vec![1.0; samples]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DegradationMode;
    use crate::env::{Environment, TransmissionSpec};
    use proptest::prelude::*;

    #[test]
    fn inclusive_threshold() {
        let w = vec![1.0, 1.0, 2.0];
        let at = |xi| weighted_sum_decide(&WeightedSumSpec::new(w.clone(), xi).unwrap(), &[3, 1, 2]).unwrap();
        assert_eq!(at(8.0), 1);
        assert_eq!(at(9.0), 0);
        let spec = WeightedSumSpec::new(w, 1.0).unwrap();
        assert_eq!(weighted_sum_decide(&spec, &[0, 0, 0]).unwrap(), 0);
        assert!(weighted_sum_decide(&spec, &[1, 2]).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(WeightedSumSpec::new(vec![0.0, 0.0], 1.0).is_err());
        assert!(WeightedSumSpec::new(vec![1.0, -1.0], 1.0).is_err());
        assert!(WeightedSumSpec::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn matched_weights_peak_near_maximum() {
        let tx = TransmissionSpec::uniform(5000, 200e-6, 1, 20);
        let model = SignalModel::new(Environment::base_case(), tx.clone(), DegradationMode::StrictBound).unwrap();
        let w = matched_filter_weights(&model);
        assert!(w.iter().all(|&x| x >= 0.0));
        let best = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        let nearest = (0..w.len())
            .min_by(|&a, &b| {
                (tx.sample_offsets[a] - 34.36e-6).abs().total_cmp(&(tx.sample_offsets[b] - 34.36e-6).abs())
            })
            .unwrap();
        assert_eq!(best, nearest);

        let single = model.with_sample_offsets(vec![34.36e-6]).unwrap();
        assert!((matched_filter_weights(&single)[0] - 5.20).abs() < 0.005);

        let mut tx2 = tx;
        tx2.molecules_per_one *= 2;
        let doubled = SignalModel::new(Environment::base_case(), tx2, DegradationMode::StrictBound).unwrap();
        for (a, b) in w.iter().zip(matched_filter_weights(&doubled)) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b);
        }
    }

    proptest! {
        #[test]
        fn monotone_in_counts(
            w in proptest::collection::vec(0.0f64..5.0, 4),
            c in proptest::collection::vec(0u32..50, 4),
            k in 0usize..4,
            xi in 0.1f64..200.0,
        ) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let spec = WeightedSumSpec::new(w, xi).unwrap();
            let before = weighted_sum_decide(&spec, &c).unwrap();
            let mut up = c.clone();
            up[k] += 1;
            prop_assert!(weighted_sum_decide(&spec, &up).unwrap() >= before);
        }

        #[test]
        fn scale_invariant(
            w in proptest::collection::vec(0u32..8, 3),
            c in proptest::collection::vec(0u32..50, 3),
            xi in 1u32..200,
            scale in 1u32..16,
        ) {
            // powers of two keep the scaled sums exact
            prop_assume!(w.iter().any(|&x| x > 0));
            let s = f64::from(1u32 << (scale % 8));
            let base = WeightedSumSpec::new(w.iter().map(|&x| f64::from(x)).collect(), f64::from(xi)).unwrap();
            let scaled = WeightedSumSpec::new(w.iter().map(|&x| f64::from(x) * s).collect(), f64::from(xi) * s).unwrap();
            prop_assert_eq!(weighted_sum_decide(&base, &c).unwrap(), weighted_sum_decide(&scaled, &c).unwrap());
        }

        #[test]
        fn unit_weights_are_count_sum(c in proptest::collection::vec(0u32..50, 5), xi in 1u32..250) {
            let spec = WeightedSumSpec::new(equal_weights(5), f64::from(xi)).unwrap();
            let total: u32 = c.iter().sum();
            prop_assert_eq!(weighted_sum_decide(&spec, &c).unwrap(), u8::from(total >= xi));
        }
    }
}
