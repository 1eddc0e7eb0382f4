//! Closed-form expected channel response and ISI superposition.
//!
//! The receiver count is modelled as Poisson with mean
//! `N̄_TX(t) + N̄_noise(t)`. `N̄_TX` uses the uniform concentration assumption:
//! the concentration at the receiver centre, at the flow-shifted distance,
//! times the receiver volume. That assumption degrades as the receiver gets
//! closer to the transmitter, and further still under flow towards the
//! receiver. With enzymes the point concentration is the exponential-decay
//! form treated as exact; it is a lower bound on the true reaction-diffusion
//! solution when `k = k1`.

mod poisson;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub use poisson::{gaussian_cdf, ln_poisson_pmf, poisson_cdf, poisson_pmf, poisson_support, CdfMethod};

use crate::env::{effective_distance_unchecked, Environment, RateMode, TransmissionSpec};
use crate::error::{Error, Result};

/// A binary transmitter sequence `W`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitSequence(Vec<u8>);

impl BitSequence {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::domain("BitSequence", "sequence must hold at least one bit"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::domain("BitSequence", format!("bits must be 0 or 1, found {b}")));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len.max(1)])
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1; len.max(1)])
    }

    /// Bits of `value`, least significant first, `len` of them.
    pub fn from_index(value: u64, len: usize) -> Self {
        Self((0..len).map(|i| ((value >> i) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, j: usize) -> u8 {
        self.0[j]
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }
}

impl From<BitSequence> for Vec<u8> {
    fn from(s: BitSequence) -> Self {
        s.0
    }
}

/// Degradation term applied to the expected concentration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DegradationMode {
    #[default]
    StrictBound,
    Approximation,
    /// Drop the enzyme term regardless of the environment.
    None,
}

impl DegradationMode {
    pub fn rate_mode(self) -> Option<RateMode> {
        match self {
            DegradationMode::StrictBound => Some(RateMode::StrictBound),
            DegradationMode::Approximation => Some(RateMode::Approximation),
            DegradationMode::None => None,
        }
    }
}

/// Analytic signal model for one environment and transmission schedule.
#[derive(Debug, Clone)]
pub struct SignalModel {
    env: Environment,
    tx: TransmissionSpec,
    mode: DegradationMode,
    decay_rate: f64,
}

impl SignalModel {
    pub fn new(env: Environment, tx: TransmissionSpec, mode: DegradationMode) -> Result<Self> {
        env.validate()?;
        tx.validate()?;
        let decay_rate = match mode.rate_mode() {
            Some(rm) => env.degradation_rate(rm)?,
            None => 0.0,
        };
        Ok(Self { env, tx, mode, decay_rate })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn tx(&self) -> &TransmissionSpec {
        &self.tx
    }

    pub fn degradation_mode(&self) -> DegradationMode {
        self.mode
    }

    /// `k C_E_Tot` as used by this model, s⁻¹.
    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    /// Same model with a different sampling schedule.
    pub fn with_sample_offsets(&self, offsets: Vec<f64>) -> Result<Self> {
        let mut tx = self.tx.clone();
        tx.sample_offsets = offsets;
        tx.validate()?;
        Ok(Self { tx, ..self.clone() })
    }

    fn check_time(op: &'static str, t: f64) -> Result<()> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::domain(op, format!("time must be > 0, got {t}")));
        }
        Ok(())
    }

    /// Expected point concentration at `distance` from an impulse of
    /// `N_AEM` molecules released at `t = 0`.
    pub fn point_concentration(&self, distance: f64, t: f64) -> Result<f64> {
        Self::check_time("point_concentration", t)?;
        if !(distance >= 0.0) {
            return Err(Error::domain("point_concentration", "distance must be >= 0"));
        }
        let d = self.env.diffusion_a();
        let n = self.tx.molecules_per_one as f64;
        Ok(n / (4.0 * PI * d * t).powf(1.5) * (-self.decay_rate * t - distance * distance / (4.0 * d * t)).exp())
    }

    /// Probability that one molecule released at `t = 0` is inside the
    /// receiver at `t`.
    pub fn p_obs(&self, t: f64) -> Result<f64> {
        Self::check_time("p_obs", t)?;
        Ok(self.p_obs_unchecked(t))
    }

    pub(crate) fn p_obs_unchecked(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let d = self.env.diffusion_a();
        let r = effective_distance_unchecked(&self.env, t);
        self.env.receiver_volume() / (4.0 * PI * d * t).powf(1.5) * (-self.decay_rate * t - r * r / (4.0 * d * t)).exp()
    }

    /// Expected count due to the transmitter at time `t`, summing every
    /// emission made strictly before `t`.
    pub fn expected_tx_signal(&self, sequence: &BitSequence, t: f64) -> Result<f64> {
        Self::check_time("expected_tx_signal", t)?;
        let n = self.tx.molecules_per_one as f64;
        let ti = self.tx.bit_interval;
        let mut sum = 0.0;
        for (j, &bit) in sequence.bits().iter().enumerate() {
            let start = j as f64 * ti;
            if start >= t {
                break;
            }
            if bit == 1 {
                sum += self.p_obs_unchecked(t - start);
            }
        }
        Ok(n * sum)
    }

    pub fn expected_total_signal(&self, sequence: &BitSequence, t: f64) -> Result<f64> {
        Ok(self.expected_tx_signal(sequence, t)? + self.tx.noise.mean_at(t))
    }

    /// Expected current-interval signal `N̄_TX(g(m))` at each sample offset.
    pub fn current_interval_response(&self) -> Vec<f64> {
        let n = self.tx.molecules_per_one as f64;
        self.tx.sample_offsets.iter().map(|&g| n * self.p_obs_unchecked(g)).collect()
    }

    /// Precomputes the per-lag response at every sample offset for sequences
    /// of `len` bits.
    pub fn sampled_response(&self, len: usize) -> SampledResponse {
        let n = self.tx.molecules_per_one as f64;
        let ti = self.tx.bit_interval;
        let g = &self.tx.sample_offsets;
        let per_lag =
            (0..len).map(|lag| g.iter().map(|&gm| n * self.p_obs_unchecked(lag as f64 * ti + gm)).collect()).collect();
        let noise = (0..len).map(|j| g.iter().map(|&gm| self.tx.noise.mean_at(j as f64 * ti + gm)).collect()).collect();
        SampledResponse { per_lag, noise }
    }
}

/// `N_AEM P_obs(lag T_int + g(m))` for every lag and sample, plus noise means
/// at every `t(j, m)`.
#[derive(Debug, Clone)]
pub struct SampledResponse {
    per_lag: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

impl SampledResponse {
    pub fn len(&self) -> usize {
        self.per_lag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_lag.is_empty()
    }

    pub fn samples(&self) -> usize {
        self.per_lag.first().map_or(0, Vec::len)
    }

    pub fn lag(&self, lag: usize) -> &[f64] {
        &self.per_lag[lag]
    }

    /// Expected counts `λ(j, m)` for interval `j` given the bits emitted in
    /// intervals `0..=j` (`history[k]` for `k <= j`).
    pub fn means_into(&self, history: &[u8], j: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.noise[j]);
        for (k, &bit) in history[..=j].iter().enumerate() {
            if bit == 1 {
                for (o, r) in out.iter_mut().zip(&self.per_lag[j - k]) {
                    *o += r;
                }
            }
        }
    }

    pub fn means(&self, history: &[u8], j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.samples()];
        self.means_into(history, j, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_model(samples: usize) -> SignalModel {
        let tx = TransmissionSpec::uniform(5000, 200e-6, 4, samples);
        SignalModel::new(Environment::base_case(), tx, DegradationMode::StrictBound).unwrap()
    }

    #[test]
    fn impulse_peak() {
        let model = base_model(1);
        let d = model.env().diffusion_a();
        let t_max = 300e-9f64.powi(2) / (6.0 * d);
        assert_relative_eq!(t_max, 34.36e-6, max_relative = 1e-3);
        let p = model.p_obs(34.36e-6).unwrap();
        assert_relative_eq!(p, 1.0407e-3, max_relative = 1e-4);
        assert_eq!(format!("{:.2}", 5000.0 * p), "5.20");
        let late = model.p_obs(234.36e-6).unwrap();
        assert_relative_eq!(late, 2.101_424e-4, max_relative = 1e-5);
    }

    #[test]
    fn p_obs_limits() {
        let model = base_model(1);
        assert!(model.p_obs(1e-9).unwrap() < 1e-300);
        assert!(model.p_obs(1.0).unwrap() < 1e-9);
        assert!(model.p_obs(0.0).is_err());
        assert!(model.point_concentration(1e-7, -1.0).is_err());
    }

    #[test]
    fn p_obs_is_unimodal_with_analytic_peak() {
        let model = base_model(1);
        let d = model.env().diffusion_a();
        let t_star = 300e-9f64.powi(2) / (6.0 * d);
        let mut prev = 0.0;
        let mut rising = true;
        for i in 1..2000 {
            let t = i as f64 * 0.1e-6;
            let p = model.p_obs(t).unwrap();
            if rising && p < prev {
                rising = false;
                assert!((t - 0.1e-6 - t_star).abs() < 0.11e-6, "peak near {t}");
            } else if !rising {
                assert!(p <= prev);
            }
            prev = p;
        }
        // derivative vanishes at the maximiser
        let h = 1e-9;
        let slope = (model.p_obs(t_star + h).unwrap() - model.p_obs(t_star - h).unwrap()) / (2.0 * h);
        assert!(slope.abs() * t_star / model.p_obs(t_star).unwrap() < 1e-6);
    }

    #[test]
    fn enzyme_factor_is_exact() {
        let tx = TransmissionSpec::uniform(5000, 200e-6, 1, 1);
        let off = SignalModel::new(Environment::base_case(), tx.clone(), DegradationMode::StrictBound).unwrap();
        let env = Environment::base_case().with_enzymes(84.0);
        let on = SignalModel::new(env.clone(), tx.clone(), DegradationMode::StrictBound).unwrap();
        let none = SignalModel::new(env, tx, DegradationMode::None).unwrap();
        let t = 50e-6;
        let kc = on.decay_rate();
        assert_relative_eq!(
            on.point_concentration(2e-7, t).unwrap(),
            off.point_concentration(2e-7, t).unwrap() * (-kc * t).exp(),
            max_relative = 1e-12
        );
        assert_eq!(none.p_obs(t).unwrap(), off.p_obs(t).unwrap());
    }

    #[test]
    fn isi_superposition() {
        let model = base_model(1);
        let seq = BitSequence::new(vec![1, 1]).unwrap();
        let v = model.expected_tx_signal(&seq, 234.36e-6).unwrap();
        assert_relative_eq!(v, 6.254_298, max_relative = 1e-5);
        let zeros = BitSequence::zeros(5);
        assert_eq!(model.expected_tx_signal(&zeros, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn noise_is_additive() {
        let tx = TransmissionSpec::uniform(5000, 200e-6, 1, 1).with_noise(50.0);
        let model = SignalModel::new(Environment::base_case(), tx, DegradationMode::StrictBound).unwrap();
        let one = BitSequence::ones(1);
        let v = model.expected_total_signal(&one, 34.36e-6).unwrap();
        assert_eq!(format!("{v:.2}"), "55.20");
        let tx_only = model.expected_tx_signal(&one, 34.36e-6).unwrap();
        assert_relative_eq!(v - tx_only, 50.0, max_relative = 1e-12);
    }

    #[test]
    fn sampled_response_matches_direct_sum() {
        let model = base_model(5);
        let table = model.sampled_response(4);
        let seq = BitSequence::new(vec![1, 0, 1, 1]).unwrap();
        for j in 0..4 {
            let means = table.means(seq.bits(), j);
            for (m, &lam) in means.iter().enumerate() {
                let t = model.tx().sample_time(j, m);
                let direct = model.expected_total_signal(&seq, t).unwrap();
                assert_relative_eq!(lam, direct, max_relative = 1e-12);
            }
        }
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn linear_and_additive(bits in proptest::collection::vec(0u8..2, 1..8), t_us in 1.0f64..1500.0) {
            let t = t_us * 1e-6;
            let model = base_model(1);
            let seq = BitSequence::new(bits.clone()).unwrap();
            let total = model.expected_tx_signal(&seq, t).unwrap();
            let mut parts = 0.0;
            for (k, &b) in bits.iter().enumerate() {
                let mut single = vec![0u8; bits.len()];
                single[k] = b;
                parts += model.expected_tx_signal(&BitSequence::new(single).unwrap(), t).unwrap();
            }
            prop_assert!((total - parts).abs() <= 1e-12 * total.max(1e-300));

            let mut tx2 = model.tx().clone();
            tx2.molecules_per_one *= 3;
            let m3 = SignalModel::new(model.env().clone(), tx2, DegradationMode::StrictBound).unwrap();
            let tripled = m3.expected_tx_signal(&seq, t).unwrap();
            prop_assert!((tripled - 3.0 * total).abs() <= 1e-12 * tripled.max(1e-300));
        }

        #[test]
        fn enzymes_never_increase_signal(bits in proptest::collection::vec(0u8..2, 1..6), t_us in 1.0f64..1000.0) {
            let t = t_us * 1e-6;
            let tx = TransmissionSpec::uniform(5000, 100e-6, bits.len(), 1);
            let off = SignalModel::new(Environment::base_case(), tx.clone(), DegradationMode::StrictBound).unwrap();
            let on = SignalModel::new(Environment::base_case().with_enzymes(84.0), tx, DegradationMode::StrictBound).unwrap();
            let seq = BitSequence::new(bits).unwrap();
            prop_assert!(on.expected_tx_signal(&seq, t).unwrap() <= off.expected_tx_signal(&seq, t).unwrap());
        }
    }
}
