//! Event-driven propagation of free A molecules.
//!
//! Molecules do not interact, so each one is followed on its own from
//! emission to the last sampling time. Far from the receiver a molecule is
//! moved straight to the first time it could possibly touch the receiver:
//! the first passage of its displacement along the direction of the
//! receiver centre to the tangent plane. Until then it cannot be inside, so
//! the samples in between read zero for it. By the strong Markov property
//! the perpendicular displacement at that instant is an independent
//! Gaussian. Close to the receiver the molecule jumps directly to the next
//! sampling time with the exact Gaussian transition. Both moves are exact
//! for Brownian motion with constant drift, so the result does not depend
//! on a time step.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::env::Vec3;

/// Direct jumps are used when the gap to the receiver is within this many
/// standard deviations of the displacement up to the next sample.
const DIRECT_JUMP_SIGMAS: f64 = 3.0;

/// Below this drift Peclet-like ratio the Lévy (driftless) law is used.
const DRIFTLESS: f64 = 1e-12;

fn gauss3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Inverse Gaussian draw with mean `mean` and shape `shape`.
///
/// Michael–Schucany–Haas, rearranged so that it stays accurate when
/// `mean / shape` is huge (weak drift).
pub fn inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let w = mean * z * z / (2.0 * shape);
    let x = mean / (1.0 + w + (w * w + 2.0 * w).sqrt());
    let u: f64 = rng.random();
    if u * (mean + x) <= mean {
        x
    } else {
        mean * mean / x
    }
}

/// First time a 1-D Brownian motion started at 0, with drift `drift` and
/// variance `sigma2` per unit time, reaches `level > 0`. `None` when the
/// level is never reached.
pub fn first_passage_time<R: Rng + ?Sized>(level: f64, drift: f64, sigma2: f64, rng: &mut R) -> Option<f64> {
    let nu = drift * level / sigma2;
    let shape = level * level / sigma2;
    if nu.abs() < DRIFTLESS {
        let z: f64 = rng.sample(StandardNormal);
        let t = shape / (z * z);
        return t.is_finite().then_some(t);
    }
    if drift < 0.0 {
        let reach = (2.0 * nu).exp();
        if rng.random::<f64>() >= reach {
            return None;
        }
    }
    Some(inverse_gaussian(level / drift.abs(), shape, rng))
}

/// `Pr(first passage <= t)` for [`first_passage_time`]; used as a test oracle.
pub fn first_passage_cdf(level: f64, drift: f64, sigma2: f64, t: f64) -> f64 {
    use statrs::function::erf::erfc;
    let s = (sigma2 * t).sqrt();
    let phi = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
    if drift == 0.0 {
        return erfc(level / (s * std::f64::consts::SQRT_2));
    }
    phi((drift * t - level) / s) + (2.0 * drift * level / sigma2).exp() * phi((-level - drift * t) / s)
}

/// Geometry and transport shared by every molecule of a realization.
#[derive(Debug, Clone)]
pub(crate) struct Transport {
    pub center: Vec3,
    pub radius: f64,
    /// `2 D_A`.
    pub sigma2: f64,
    pub flow: Vec3,
    /// First-order degradation rate, s⁻¹ (0 for none).
    pub decay_rate: f64,
}

impl Transport {
    /// Follows one molecule emitted at the origin at `emitted`, adding it to
    /// `counts[i]` for every `times[i]` (from `first` on) at which it is
    /// inside the receiver.
    pub fn follow<R: Rng + ?Sized>(&self, emitted: f64, times: &[f64], first: usize, counts: &mut [u32], rng: &mut R) {
        let death = if self.decay_rate > 0.0 {
            emitted + Exp::new(self.decay_rate).expect("positive rate").sample(rng)
        } else {
            f64::INFINITY
        };
        let horizon = match times.last() {
            Some(&t) => t.min(death),
            None => return,
        };
        let r2 = self.radius * self.radius;
        let mut pos = Vec3::zeros();
        let mut now = emitted;
        let mut idx = first;
        while idx < times.len() {
            let next = times[idx];
            if next >= death {
                return;
            }
            let rel = self.center - pos;
            let dist = rel.norm();
            let gap = dist - self.radius;
            let dt = next - now;
            if gap <= DIRECT_JUMP_SIGMAS * (self.sigma2 * dt).sqrt() {
                pos += self.flow * dt + gauss3(rng) * (self.sigma2 * dt).sqrt();
                now = next;
                if (pos - self.center).norm_squared() <= r2 {
                    counts[idx] += 1;
                }
                idx += 1;
                continue;
            }
            let u = rel / dist;
            let along = self.flow.dot(&u);
            let Some(tau) = first_passage_time(gap, along, self.sigma2, rng) else {
                return;
            };
            let hit = now + tau;
            if hit >= horizon {
                return;
            }
            let mut perp = gauss3(rng);
            perp -= u * perp.dot(&u);
            pos += u * gap + (self.flow - u * along) * tau + perp * (self.sigma2 * tau).sqrt();
            now = hit;
            idx += times[idx..].partition_point(|&t| t <= hit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::{stream, Domain};

    fn ks_against<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn first_passage_matches_closed_form() {
        let mut rng = stream(11, Domain::Propagation, 0);
        let sigma2 = 2.0 * 4.366e-10;
        let level = 255e-9;
        // drift magnitudes from none to strongly advective
        for drift in [0.0, 1e-4, 3e-3, 3e-2, -3e-3, -3e-2] {
            let n = 40_000;
            let mut hits = Vec::new();
            let horizon = 1e-3;
            for _ in 0..n {
                if let Some(t) = first_passage_time(level, drift, sigma2, &mut rng) {
                    if t <= horizon {
                        hits.push(t);
                    }
                }
            }
            let p_h = first_passage_cdf(level, drift, sigma2, horizon);
            let frac = hits.len() as f64 / n as f64;
            let se = (p_h * (1.0 - p_h) / n as f64).sqrt();
            assert!((frac - p_h).abs() < 4.0 * se + 1e-12, "drift {drift}: {frac} vs {p_h}");
            if hits.len() > 1000 {
                let d = ks_against(&mut hits, |t| first_passage_cdf(level, drift, sigma2, t) / p_h);
                assert!(d < 1.63 / (n as f64 * frac).sqrt() * 1.2, "drift {drift}: KS {d}");
            }
        }
    }

    #[test]
    fn inverse_gaussian_moments() {
        let mut rng = stream(5, Domain::Propagation, 1);
        for (mean, shape) in [(1.0, 1.0), (2.0, 0.1), (1e6, 1.0), (0.01, 50.0)] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| inverse_gaussian(mean, shape, &mut rng)).collect();
            assert!(draws.iter().all(|x| *x > 0.0 && x.is_finite()));
            // the harmonic-type moment E[1/X] = 1/mean + 1/shape is finite for all parameters
            let inv = draws.iter().map(|x| 1.0 / x).sum::<f64>() / n as f64;
            let expect = 1.0 / mean + 1.0 / shape;
            let var = 1.0 / (mean * shape) + 2.0 / (shape * shape);
            assert!((inv - expect).abs() < 5.0 * (var / n as f64).sqrt(), "({mean},{shape}): {inv} vs {expect}");
        }
    }
}
