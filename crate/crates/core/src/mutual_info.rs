//! Dependence between two receiver observations made `t_o` apart.
//!
//! A molecule seen inside the receiver at `t1` is assumed uniformly placed in
//! the sphere; [`p_stay`] is the probability it is inside again at `t2`.
//! Combined with the arrival probability of molecules that were outside,
//! this gives the conditional and joint count distributions and the mutual
//! information in bits. Flow is not supported here.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::channel::{ln_poisson_pmf, poisson_support, SignalModel};
use crate::error::{Error, Result};
use crate::quadrature;

/// Absolute tolerance of the radial quadrature.
pub const QUADRATURE_TOLERANCE: f64 = 1e-12;

/// Default coverage of each truncated marginal.
pub const DEFAULT_COVERAGE: f64 = 1.0 - 1e-9;

/// How molecules outside the receiver at `t1` arrive by `t2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// Poisson with mean `N_A P_arr`, ignoring that `s1` molecules are
    /// already inside.
    #[default]
    Poisson,
    /// Binomial over the `N_A − s1` molecules that were outside.
    ExactBinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePairSpec {
    pub t1: f64,
    pub t2: f64,
    /// Molecules released at `t = 0`.
    pub molecule_count: u64,
    /// Minimum mass each truncated summation range must cover.
    pub truncation_mass: f64,
    pub arrivals: ArrivalModel,
}

impl SamplePairSpec {
    pub fn new(t1: f64, t2: f64, molecule_count: u64) -> Result<Self> {
        let spec = Self { t1, t2, molecule_count, truncation_mass: DEFAULT_COVERAGE, arrivals: ArrivalModel::Poisson };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lag(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t2 > self.t1) {
            return Err(Error::domain(
                "SamplePairSpec",
                format!("need 0 < t1 < t2, got t1={} t2={}", self.t1, self.t2),
            ));
        }
        if self.molecule_count == 0 {
            return Err(Error::domain("SamplePairSpec", "molecule_count must be >= 1"));
        }
        if !(self.truncation_mass > 0.0 && self.truncation_mass < 1.0) {
            return Err(Error::domain("SamplePairSpec", "truncation_mass must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Probability mass over consecutive counts starting at `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pub offset: u64,
    pub masses: Vec<f64>,
}

impl CountDistribution {
    pub fn pmf(&self, k: u64) -> f64 {
        if k < self.offset {
            return 0.0;
        }
        self.masses.get((k - self.offset) as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.masses.iter().enumerate().map(|(i, p)| (self.offset + i as u64) as f64 * p).sum()
    }

    pub fn max_count(&self) -> u64 {
        self.offset + self.masses.len() as u64 - 1
    }

    /// Total-variation distance `½ Σ |p − q|`.
    pub fn total_variation(&self, other: &CountDistribution) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.max_count().max(other.max_count());
        0.5 * (lo..=hi).map(|k| (self.pmf(k) - other.pmf(k)).abs()).sum::<f64>()
    }
}

/// Joint distribution of `(s1, s2)`; rows start at `s1_offset`, columns at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub s1_offset: u64,
    pub rows: Vec<Vec<f64>>,
}

impl JointDistribution {
    pub fn get(&self, s1: u64, s2: u64) -> f64 {
        if s1 < self.s1_offset {
            return 0.0;
        }
        self.rows.get((s1 - self.s1_offset) as usize).and_then(|r| r.get(s2 as usize)).copied().unwrap_or(0.0)
    }

    pub fn columns(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn marginal_s1(&self) -> CountDistribution {
        CountDistribution { offset: self.s1_offset, masses: self.rows.iter().map(|r| r.iter().sum()).collect() }
    }

    pub fn marginal_s2(&self) -> CountDistribution {
        let mut masses = vec![0.0; self.columns()];
        for row in &self.rows {
            for (m, p) in masses.iter_mut().zip(row) {
                *m += p;
            }
        }
        CountDistribution { offset: 0, masses }
    }

    pub fn cells(&self) -> impl Iterator<Item = (u64, u64, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(i, row)| {
            row.iter().enumerate().map(move |(s2, &p)| (self.s1_offset + i as u64, s2 as u64, p))
        })
    }
}

fn check_lag(op: &'static str, t_o: f64) -> Result<()> {
    if !(t_o > 0.0) || !t_o.is_finite() {
        return Err(Error::domain(op, format!("lag must be > 0, got {t_o}")));
    }
    Ok(())
}

fn no_flow(op: &'static str, model: &SignalModel) -> Result<()> {
    if model.env().has_flow() {
        return Err(Error::domain(op, "observation dependence is only modelled without flow"));
    }
    Ok(())
}

/// Concentration at distance `r` from the receiver centre, `t_o` after a
/// single molecule was uniformly placed in the receiver, without enzymes.
fn residual_concentration_free(radius: f64, diffusion: f64, r: f64, t_o: f64) -> f64 {
    let a = diffusion * t_o;
    let s = 2.0 * a.sqrt();
    let norm = 3.0 / (4.0 * PI * radius.powi(3));
    let erf_part = 0.5 * norm * (erf((radius - r) / s) + erf((radius + r) / s));
    // [exp(-(R+r)²/4a) - exp(-(R-r)²/4a)] / r, with its r -> 0 limit
    let x = radius * r / (2.0 * a);
    let bracket = if r == 0.0 {
        -(radius / a) * (-radius * radius / (4.0 * a)).exp()
    } else if x < 1.0 {
        -2.0 * (-(radius * radius + r * r) / (4.0 * a)).exp() * x.sinh() / r
    } else {
        ((-(radius + r).powi(2) / (4.0 * a)).exp() - (-(radius - r).powi(2) / (4.0 * a)).exp()) / r
    };
    erf_part + norm * (a / PI).sqrt() * bracket
}

/// Point concentration at distance `r` from the receiver centre, `t_o` after
/// one molecule was observed (uniformly placed) inside the receiver.
pub fn residual_concentration(model: &SignalModel, r: f64, t_o: f64) -> Result<f64> {
    check_lag("residual_concentration", t_o)?;
    if !(r >= 0.0) {
        return Err(Error::domain("residual_concentration", "distance must be >= 0"));
    }
    let env = model.env();
    let c = residual_concentration_free(env.receiver_radius, env.diffusion_a(), r, t_o);
    Ok(c * (-model.decay_rate() * t_o).exp())
}

fn p_stay_free(radius: f64, diffusion: f64, t_o: f64) -> f64 {
    let a = diffusion * t_o;
    let ratio = a / (radius * radius);
    erf(radius / a.sqrt()) + (a / PI).sqrt() / radius * ((1.0 - 2.0 * ratio) * (-1.0 / ratio).exp() + 2.0 * ratio - 3.0)
}

/// Probability that a molecule observed inside the receiver is inside again
/// `t_o` later (closed form).
pub fn p_stay(model: &SignalModel, t_o: f64) -> Result<f64> {
    check_lag("p_stay", t_o)?;
    let env = model.env();
    let p = p_stay_free(env.receiver_radius, env.diffusion_a(), t_o);
    Ok(p.clamp(0.0, 1.0) * (-model.decay_rate() * t_o).exp())
}

/// [`p_stay`] by adaptive quadrature of the residual concentration over the
/// receiver volume. Independent of the closed form.
pub fn p_stay_quadrature(model: &SignalModel, t_o: f64) -> Result<f64> {
    check_lag("p_stay_quadrature", t_o)?;
    let env = model.env();
    let (radius, d) = (env.receiver_radius, env.diffusion_a());
    // integrate over x = r / r_obs; integrand is dimensionless
    let integrand = |x: f64| {
        let r = x * radius;
        4.0 * PI * residual_concentration_free(radius, d, r, t_o) * radius.powi(3) * x * x
    };
    let est = quadrature::integrate(integrand, 0.0, 1.0, QUADRATURE_TOLERANCE, 4000)
        .map_err(|e| Error::numeric("p_stay_quadrature", format!("t_o = {t_o:e}: {e}")))?;
    Ok(est.value * (-model.decay_rate() * t_o).exp())
}

/// Probability that an observed molecule is outside the receiver (and not
/// degraded) `t_o` later.
pub fn p_leave(model: &SignalModel, t_o: f64) -> Result<f64> {
    check_lag("p_leave", t_o)?;
    Ok((-model.decay_rate() * t_o).exp() - p_stay(model, t_o)?)
}

/// Probability that a molecule outside at `t1` is inside at `t2`.
///
/// Negative values mean the uniform-concentration approximations are
/// inconsistent at these times; they are clamped to zero with a warning when
/// below `-1e-12`.
pub fn p_arrive(model: &SignalModel, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 > 0.0 && t2 > t1) {
        return Err(Error::domain("p_arrive", format!("need 0 < t1 < t2, got t1={t1} t2={t2}")));
    }
    let raw = model.p_obs(t2)? - model.p_obs(t1)? * p_stay(model, t2 - t1)?;
    if raw < -1e-12 {
        log::warn!("p_arrive({t1:e}, {t2:e}) = {raw:e} < 0; clamped");
    }
    Ok(raw.max(0.0))
}

fn ln_binomial_pmf(n: u64, k: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if p <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p >= 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let (n, k) = (n as f64, k as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + k * p.ln() + (n - k) * (-p).ln_1p()
}

/// Distribution of the arrival count, truncated to `1e-12` of tail mass.
fn arrival_distribution(spec: &SamplePairSpec, p_arr: f64, s1: u64) -> Result<CountDistribution> {
    const TAIL: f64 = 1e-12;
    match spec.arrivals {
        ArrivalModel::Poisson => {
            let mean = spec.molecule_count as f64 * p_arr;
            let range = poisson_support(mean, TAIL)?;
            let masses = range.clone().map(|k| ln_poisson_pmf(k, mean).exp()).collect();
            Ok(CountDistribution { offset: *range.start(), masses })
        }
        ArrivalModel::ExactBinomial => {
            let n = spec.molecule_count.saturating_sub(s1);
            let mut masses = Vec::new();
            let mut acc = 0.0;
            for k in 0..=n {
                let p = ln_binomial_pmf(n, k, p_arr).exp();
                masses.push(p);
                acc += p;
                if acc >= 1.0 - TAIL {
                    break;
                }
            }
            if acc < 1.0 - 1e-9 {
                return Err(Error::numeric("conditional_count_dist", format!("arrival mass {acc} short of 1")));
            }
            Ok(CountDistribution { offset: 0, masses })
        }
    }
}

struct PairTerms {
    stay: f64,
    arrive: f64,
    mean_t1: f64,
}

fn pair_terms(spec: &SamplePairSpec, model: &SignalModel) -> Result<PairTerms> {
    spec.validate()?;
    let stay = p_stay(model, spec.lag())?;
    let arrive = p_arrive(model, spec.t1, spec.t2)?;
    let mean_t1 = spec.molecule_count as f64 * model.p_obs(spec.t1)?;
    Ok(PairTerms { stay, arrive, mean_t1 })
}

fn conditional_from_terms(spec: &SamplePairSpec, terms: &PairTerms, s1: u64) -> Result<CountDistribution> {
    let arrivals = arrival_distribution(spec, terms.arrive, s1)?;
    // s2 = (molecules that stayed) + arrivals. A molecule observed at t1 is
    // still counted at t2 with probability p_stay; the rest left or degraded.
    let stays: Vec<f64> = (0..=s1).map(|k| ln_binomial_pmf(s1, k, terms.stay).exp()).collect();
    let hi = s1 + arrivals.max_count();
    let lo = arrivals.offset;
    let mut masses = vec![0.0; (hi - lo + 1) as usize];
    for (k, &ps) in stays.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (i, &pa) in arrivals.masses.iter().enumerate() {
            masses[k + i] += ps * pa;
        }
    }
    Ok(CountDistribution { offset: lo, masses })
}

/// Distribution of the count at `t2` given `s1` molecules were seen at `t1`.
pub fn conditional_count_dist(spec: &SamplePairSpec, model: &SignalModel, s1: u64) -> Result<CountDistribution> {
    no_flow("conditional_count_dist", model)?;
    let terms = pair_terms(spec, model)?;
    conditional_from_terms(spec, &terms, s1)
}

/// Joint distribution of the two observations over truncated ranges.
pub fn joint_count_dist(spec: &SamplePairSpec, model: &SignalModel) -> Result<JointDistribution> {
    no_flow("joint_count_dist", model)?;
    let terms = pair_terms(spec, model)?;
    let range = poisson_support(terms.mean_t1, 1.0 - spec.truncation_mass)?;
    let mut rows = Vec::new();
    for s1 in range.clone() {
        let p1 = ln_poisson_pmf(s1, terms.mean_t1).exp();
        let cond = conditional_from_terms(spec, &terms, s1)?;
        let mut row = vec![0.0; (cond.max_count() + 1) as usize];
        for (i, &p) in cond.masses.iter().enumerate() {
            row[cond.offset as usize + i] = p1 * p;
        }
        rows.push(row);
    }
    Ok(JointDistribution { s1_offset: *range.start(), rows })
}

fn mutual_information_of(joint: &JointDistribution) -> f64 {
    let total: f64 = joint.rows.iter().flatten().sum();
    let m1 = joint.marginal_s1();
    let m2 = joint.marginal_s2();
    let mut mi = 0.0;
    for (s1, s2, p) in joint.cells() {
        if p <= 0.0 {
            continue;
        }
        let pj = p / total;
        let prod = m1.pmf(s1) / total * (m2.pmf(s2) / total);
        mi += pj * (pj / prod).log2();
    }
    mi
}

/// Mutual information between the two observations in bits.
///
/// The marginals are taken from the truncated joint itself, so the result
/// is a proper KL divergence and never meaningfully negative; they match
/// the Poisson marginals to within the truncation mass.
pub fn mutual_information(spec: &SamplePairSpec, model: &SignalModel) -> Result<f64> {
    let joint = joint_count_dist(spec, model)?;
    Ok(mutual_information_of(&joint).max(0.0))
}

/// Plug-in mutual information estimate (bits) from paired observations.
pub fn empirical_mutual_information(samples: &[(u32, u32)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::domain("empirical_mutual_information", "need at least two samples"));
    }
    let n = samples.len() as f64;
    let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
    let mut left: HashMap<u32, u64> = HashMap::new();
    let mut right: HashMap<u32, u64> = HashMap::new();
    for &(a, b) in samples {
        *joint.entry((a, b)).or_default() += 1;
        *left.entry(a).or_default() += 1;
        *right.entry(b).or_default() += 1;
    }
    let mut cells: Vec<_> = joint.into_iter().collect();
    cells.sort_unstable();
    let mi = cells
        .into_iter()
        .map(|((a, b), c)| {
            let pj = c as f64 / n;
            let pa = left[&a] as f64 / n;
            let pb = right[&b] as f64 / n;
            pj * (pj / (pa * pb)).log2()
        })
        .sum::<f64>();
    Ok(mi.max(0.0))
}

/// Plug-in entropy in bits of a sample of counts.
pub fn empirical_entropy(samples: &[u32]) -> f64 {
    let mut hist: HashMap<u32, u64> = HashMap::new();
    for &s in samples {
        *hist.entry(s).or_default() += 1;
    }
    let n = samples.len() as f64;
    let mut counts: Vec<_> = hist.into_values().collect();
    counts.sort_unstable();
    -counts.into_iter().map(|c| c as f64 / n).map(|p| p * p.log2()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DegradationMode;
    use crate::env::{Environment, TransmissionSpec};
    use approx::assert_abs_diff_eq;

    fn model(env: Environment) -> SignalModel {
        SignalModel::new(env, TransmissionSpec::uniform(5000, 200e-6, 1, 1), DegradationMode::StrictBound).unwrap()
    }

    #[test]
    fn residual_concentration_limits() {
        let m = model(Environment::base_case());
        let r_obs: f64 = 45e-9;
        let uniform = 3.0 / (4.0 * PI * r_obs.powi(3));
        let c0 = residual_concentration(&m, 0.0, 1e-12).unwrap();
        assert_abs_diff_eq!(c0 / uniform, 1.0, epsilon = 1e-9);
        let c_small_r = residual_concentration(&m, 1e-15, 1e-6).unwrap();
        let c_zero_r = residual_concentration(&m, 0.0, 1e-6).unwrap();
        assert_abs_diff_eq!(c_small_r / c_zero_r, 1.0, epsilon = 1e-9);
        for r in [0.0, 2e-8, 1e-7] {
            assert!(residual_concentration(&m, r, 10.0).unwrap() < 1e-6 * uniform);
        }
        assert!(residual_concentration(&m, 1e-8, 0.0).is_err());
    }

    #[test]
    fn residual_concentration_integrates_to_one() {
        let m = model(Environment::base_case());
        for t_o in [0.1e-6, 1e-6, 5e-6, 50e-6] {
            let d = m.env().diffusion_a();
            let r_obs = m.env().receiver_radius;
            let upper = 1.0 + 14.0 * (d * t_o).sqrt() / r_obs;
            let est = quadrature::integrate(
                |x| 4.0 * PI * x * x * r_obs.powi(3) * residual_concentration(&m, x * r_obs, t_o).unwrap(),
                0.0,
                upper,
                1e-11,
                4000,
            )
            .unwrap();
            assert_abs_diff_eq!(est.value, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn p_stay_matches_quadrature() {
        let plain = model(Environment::base_case());
        let enz = model(Environment::base_case().with_enzymes(84.0));
        for t_us in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0] {
            let t = t_us * 1e-6;
            for m in [&plain, &enz] {
                let a = p_stay(m, t).unwrap();
                let b = p_stay_quadrature(m, t).unwrap();
                assert!((a - b).abs() < 1e-9, "t_o={t_us}us closed {a} quad {b}");
            }
            let factor = (-enz.decay_rate() * t).exp();
            assert_abs_diff_eq!(p_stay(&enz, t).unwrap(), p_stay(&plain, t).unwrap() * factor, epsilon = 1e-15);
        }
    }

    #[test]
    fn p_stay_values() {
        let m = model(Environment::base_case());
        assert_abs_diff_eq!(p_stay(&m, 1e-15).unwrap(), 1.0, epsilon = 1e-4);
        assert!(p_stay(&m, 1.0).unwrap() < 1e-6);
        assert_abs_diff_eq!(p_stay(&m, 5e-6).unwrap(), 0.065, epsilon = 1e-3);
        assert_abs_diff_eq!(p_leave(&m, 5e-6).unwrap(), 0.935, epsilon = 1e-3);
        assert_abs_diff_eq!(p_stay(&m, 1e-6).unwrap() + p_leave(&m, 1e-6).unwrap(), 1.0, epsilon = 1e-15);
        assert!(p_leave(&m, 1e-15).unwrap() < 1e-4);
        assert!(p_stay(&m, 0.0).is_err());
    }

    #[test]
    fn p_arrive_limits() {
        let m = model(Environment::base_case());
        let near = p_arrive(&m, 10e-6, 10e-6 + 1e-12).unwrap();
        assert!(near < 1e-3 * m.p_obs(10e-6).unwrap());
        // far tail of t1: arrival probability is the unconditional one
        let t1 = 1e-9;
        assert_abs_diff_eq!(p_arrive(&m, t1, 30e-6).unwrap(), m.p_obs(30e-6).unwrap(), epsilon = 1e-15);
        assert!(p_arrive(&m, 2e-5, 1e-5).is_err());
    }

    #[test]
    fn conditional_normalises() {
        let m = model(Environment::base_case());
        let spec = SamplePairSpec::new(10e-6, 12e-6, 5000).unwrap();
        for s1 in 0..10 {
            let d = conditional_count_dist(&spec, &m, s1).unwrap();
            assert_abs_diff_eq!(d.total(), 1.0, epsilon = 1e-9);
        }
        let d0 = conditional_count_dist(&spec, &m, 0).unwrap();
        let mean = 5000.0 * p_arrive(&m, 10e-6, 12e-6).unwrap();
        for k in 0..10 {
            assert_abs_diff_eq!(d0.pmf(k), ln_poisson_pmf(k, mean).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn exact_binomial_arrivals_close_to_poisson() {
        let m = model(Environment::base_case());
        let mut spec = SamplePairSpec::new(20e-6, 22e-6, 5000).unwrap();
        let poisson = conditional_count_dist(&spec, &m, 3).unwrap();
        spec.arrivals = ArrivalModel::ExactBinomial;
        let exact = conditional_count_dist(&spec, &m, 3).unwrap();
        assert_abs_diff_eq!(exact.total(), 1.0, epsilon = 1e-9);
        assert!(poisson.total_variation(&exact) < 1e-3);
    }

    #[test]
    fn joint_marginalises_to_poisson() {
        let m = model(Environment::base_case());
        for (t1, to) in [(10e-6, 1e-6), (20e-6, 2e-6), (50e-6, 5e-6)] {
            let spec = SamplePairSpec::new(t1, t1 + to, 5000).unwrap();
            let joint = joint_count_dist(&spec, &m).unwrap();
            let mean1 = 5000.0 * m.p_obs(t1).unwrap();
            let mean2 = 5000.0 * m.p_obs(t1 + to).unwrap();
            let m1 = joint.marginal_s1();
            let m2 = joint.marginal_s2();
            for (s1, p) in m1.masses.iter().enumerate() {
                let k = m1.offset + s1 as u64;
                assert_abs_diff_eq!(*p, ln_poisson_pmf(k, mean1).exp(), epsilon = 1e-6);
            }
            for k in 0..m2.masses.len() as u64 {
                assert_abs_diff_eq!(m2.pmf(k), ln_poisson_pmf(k, mean2).exp(), epsilon = 1e-6);
            }
            assert!(joint.cells().all(|(_, _, p)| p >= 0.0));
        }
    }

    #[test]
    fn joint_factorises_at_long_lags() {
        let m = model(Environment::base_case());
        let spec = SamplePairSpec::new(20e-6, 120e-6, 5000).unwrap();
        let joint = joint_count_dist(&spec, &m).unwrap();
        let (m1, m2) = (joint.marginal_s1(), joint.marginal_s2());
        let worst = joint.cells().map(|(a, b, p)| (p - m1.pmf(a) * m2.pmf(b)).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "worst {worst}");
    }

    #[test]
    fn mutual_information_shape() {
        let m = model(Environment::base_case());
        for t1 in [10e-6, 20e-6, 50e-6] {
            let mut prev = f64::INFINITY;
            for k in 1..=40 {
                let to = k as f64 * 0.5e-6;
                let spec = SamplePairSpec::new(t1, t1 + to, 5000).unwrap();
                let mi = mutual_information(&spec, &m).unwrap();
                assert!(mi >= 0.0);
                assert!(mi <= prev + 1e-4, "non-monotone at t1={t1} to={to}");
                if to >= 4e-6 {
                    assert!(mi < 0.01, "t1={t1} to={to} mi={mi}");
                }
                prev = mi;
            }
        }
    }

    #[test]
    fn mi_rejects_flow() {
        let m = model(Environment::base_case().with_flow([0.001, 0.0, 0.0]));
        let spec = SamplePairSpec::new(10e-6, 12e-6, 5000).unwrap();
        assert!(mutual_information(&spec, &m).is_err());
    }

    #[test]
    fn empirical_mi_cases() {
        assert!(empirical_mutual_information(&[]).is_err());
        assert_eq!(empirical_mutual_information(&[(3, 3); 10]).unwrap(), 0.0);
        let xs: Vec<u32> = (0..1000).map(|i| (i * 7 % 5) as u32).collect();
        let pairs: Vec<_> = xs.iter().map(|&x| (x, x)).collect();
        assert_abs_diff_eq!(empirical_mutual_information(&pairs).unwrap(), empirical_entropy(&xs), epsilon = 1e-12);
        let indep: Vec<_> = (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).collect();
        assert_abs_diff_eq!(empirical_mutual_information(&indep).unwrap(), 0.0, epsilon = 1e-12);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn p_stay_decreasing(t in 1e-8f64..1e-3, f in 1.001f64..3.0) {
            let m = model(Environment::base_case());
            prop_assert!(p_stay(&m, t * f).unwrap() <= p_stay(&m, t).unwrap());
        }

        #[test]
        fn arrival_bounded_by_p_obs(t1 in 1e-6f64..200e-6, to in 0.5e-6f64..50e-6) {
            let m = model(Environment::base_case());
            let pa = p_arrive(&m, t1, t1 + to).unwrap();
            prop_assert!(pa >= 0.0);
            prop_assert!(pa <= m.p_obs(t1 + to).unwrap());
        }
    }
}
