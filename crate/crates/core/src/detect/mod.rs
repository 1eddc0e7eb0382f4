//! Bit detectors operating on one [`ObservationMatrix`] at a time.
//!
//! * [`weighted`]: per-interval weighted-sum thresholding, including the
//!   matched filter and equal-weight detectors.
//! * [`viterbi`]: maximum-likelihood sequence detection over a trellis with
//!   limited explicit memory.
//! * [`threshold`]: threshold search for weighted-sum detectors.

pub mod threshold;
pub mod viterbi;
pub mod weighted;

pub use threshold::{optimize_threshold_analytic, optimize_threshold_empirical, threshold_candidates, ThresholdChoice};
pub use viterbi::{exhaustive_ml, ml_sequence_detect, sequence_log_likelihood, ViterbiSpec};
pub use weighted::{equal_weights, matched_filter_weights, weighted_sum, weighted_sum_decide, WeightedSumSpec};

use crate::channel::BitSequence;
use crate::error::Result;
use crate::sim::ObservationMatrix;

pub trait Detector: Send + Sync {
    fn detect(&self, observations: &ObservationMatrix) -> Result<BitSequence>;
}

impl<F> Detector for F
where
    F: Fn(&ObservationMatrix) -> Result<BitSequence> + Send + Sync,
{
    fn detect(&self, observations: &ObservationMatrix) -> Result<BitSequence> {
        self(observations)
    }
}
