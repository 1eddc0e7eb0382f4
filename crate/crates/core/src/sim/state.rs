//! Fixed-step particle state: diffusion, reactions and counting.
//!
//! This is the reference stepper. It carries every molecule explicitly and
//! is the only engine that can simulate enzymes as particles.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Environment, Vec3};
use crate::error::{Error, Result};

use super::EnzymeMode;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimState {
    /// Free A molecules.
    pub free: Vec<Vec3>,
    /// Free enzymes.
    pub enzymes: Vec<Vec3>,
    /// Bound EA complexes.
    pub complexes: Vec<Vec3>,
    pub time: f64,
    pub emitted: u64,
    pub degraded: u64,
    /// Complexes that touched the enzyme boundary in the last diffusion step.
    boundary_hits: Vec<usize>,
}

impl SimState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Releases `n` A molecules at the origin.
    pub fn emit(&mut self, n: u64) {
        self.free.resize(self.free.len() + n as usize, Vec3::zeros());
        self.emitted += n;
    }

    /// Emitted A = free A + bound A + degraded A.
    pub fn is_conserved(&self) -> bool {
        self.emitted == self.free.len() as u64 + self.complexes.len() as u64 + self.degraded
    }

    pub fn enzyme_total(&self) -> usize {
        self.enzymes.len() + self.complexes.len()
    }
}

/// Axis-aligned cube that holds enzymes; centred between transmitter and
/// receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnzymeBox {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl EnzymeBox {
    pub fn for_env(env: &Environment) -> Self {
        let half = 0.5 * env.enzyme_volume.cbrt();
        let c = Vec3::new(0.5 * env.receiver_distance, 0.0, 0.0);
        let h = Vec3::repeat(half);
        Self { lo: c - h, hi: c + h }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }

    /// Mirrors `p` back inside; true if any wall was crossed.
    fn reflect(&self, p: &mut Vec3) -> bool {
        let mut crossed = false;
        for i in 0..3 {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            // repeated folding handles steps longer than the box
            while p[i] < lo || p[i] > hi {
                crossed = true;
                if p[i] < lo {
                    p[i] = 2.0 * lo - p[i];
                } else {
                    p[i] = 2.0 * hi - p[i];
                }
            }
        }
        crossed
    }

    pub fn uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        Vec3::new(
            rng.random_range(self.lo.x..=self.hi.x),
            rng.random_range(self.lo.y..=self.hi.y),
            rng.random_range(self.lo.z..=self.hi.z),
        )
    }
}

/// Binding radius for which an A–E pair closer than `r_B` after a step of
/// `dt` reproduces the rate `k1` when the step is long compared to `r_B`.
pub fn binding_radius(k1: f64, dt: f64) -> f64 {
    (3.0 * k1 * dt / (4.0 * PI)).cbrt()
}

/// Smoluchowski diffusion-limited radius `k1 / (4π (D_A + D_E))`.
pub fn diffusion_limited_radius(k1: f64, d_a: f64, d_e: f64) -> f64 {
    k1 / (4.0 * PI * (d_a + d_e))
}

/// Reaction parameters resolved for one environment and step.
#[derive(Debug, Clone)]
pub struct Kinetics {
    pub mode: EnzymeMode,
    /// First-order degradation rate used in `FirstOrder` mode, s⁻¹.
    pub decay_rate: f64,
    pub k_minus1: f64,
    pub k2: f64,
    pub binding_radius: f64,
    pub enzyme_box: EnzymeBox,
}

impl Kinetics {
    pub fn new(env: &Environment, mode: EnzymeMode, decay_rate: f64, dt: f64) -> Self {
        Self {
            mode,
            decay_rate,
            k_minus1: env.reactions.k_minus1,
            k2: env.reactions.k2,
            binding_radius: binding_radius(env.reactions.k1, dt),
            enzyme_box: EnzymeBox::for_env(env),
        }
    }

    /// Places `round(C_E_Tot V_enz)` enzymes uniformly in the box.
    pub fn populate<R: Rng + ?Sized>(&self, env: &Environment, state: &mut SimState, rng: &mut R) -> Result<()> {
        let expected = env.reactions.enzyme_total_concentration * env.enzyme_volume;
        if expected > 5e7 {
            return Err(Error::config(
                "environment.enzyme_volume",
                format!("explicit enzymes would need {expected:.3e} particles; shrink the enzyme volume"),
            ));
        }
        let n = expected.round() as usize;
        state.enzymes = (0..n).map(|_| self.enzyme_box.uniform(rng)).collect();
        Ok(())
    }
}

fn gauss3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Moves every free particle by its Brownian displacement plus `v Δt`.
/// Enzymes and complexes are kept inside the enzyme box by reflection;
/// complexes that hit the wall are queued for [`react_step`].
pub fn diffuse_step<R: Rng + ?Sized>(state: &mut SimState, dt: f64, env: &Environment, rng: &mut R) {
    let drift = env.flow_vec() * dt;
    let step = |d: f64| (2.0 * d * dt).sqrt();
    let sa = step(env.species_a.diffusion_coefficient);
    for p in &mut state.free {
        *p += drift + gauss3(rng) * sa;
    }
    state.boundary_hits.clear();
    if state.enzymes.is_empty() && state.complexes.is_empty() {
        state.time += dt;
        return;
    }
    let bx = EnzymeBox::for_env(env);
    let se = step(env.species_e.diffusion_coefficient);
    for p in &mut state.enzymes {
        *p += drift + gauss3(rng) * se;
        bx.reflect(p);
    }
    let sea = step(env.species_ea.diffusion_coefficient);
    for (i, p) in state.complexes.iter_mut().enumerate() {
        *p += drift + gauss3(rng) * sea;
        if bx.reflect(p) {
            state.boundary_hits.push(i);
        }
    }
    state.time += dt;
}

type Cell = (i64, i64, i64);

fn cell_of(p: &Vec3, size: f64) -> Cell {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64, (p.z / size).floor() as i64)
}

/// Applies one step of reactions.
///
/// * `Off`: nothing.
/// * `FirstOrder`: each free A degrades with probability `1 − e^{−k C Δt}`.
/// * `Explicit`: complexes resolve with probability `1 − e^{−(k₋₁+k₂)Δt}`
///   (always, if they hit the enzyme boundary), splitting `k₋₁ : k₂` between
///   release of A and degradation; then every free A within the binding
///   radius of a free enzyme binds to it (one A per enzyme per step).
pub fn react_step<R: Rng + ?Sized>(state: &mut SimState, dt: f64, kinetics: &Kinetics, rng: &mut R) {
    match kinetics.mode {
        EnzymeMode::Off => {}
        EnzymeMode::FirstOrder => {
            if kinetics.decay_rate <= 0.0 {
                return;
            }
            let p = -(-kinetics.decay_rate * dt).exp_m1();
            let before = state.free.len();
            state.free.retain(|_| rng.random::<f64>() >= p);
            state.degraded += (before - state.free.len()) as u64;
        }
        EnzymeMode::Explicit => {
            resolve_complexes(state, dt, kinetics, rng);
            bind(state, kinetics);
        }
    }
}

fn resolve_complexes<R: Rng + ?Sized>(state: &mut SimState, dt: f64, kinetics: &Kinetics, rng: &mut R) {
    let total = kinetics.k_minus1 + kinetics.k2;
    if state.complexes.is_empty() || total <= 0.0 {
        return;
    }
    let p_resolve = -(-total * dt).exp_m1();
    let p_release = kinetics.k_minus1 / total;
    let mut forced = vec![false; state.complexes.len()];
    for &i in &state.boundary_hits {
        forced[i] = true;
    }
    let complexes = std::mem::take(&mut state.complexes);
    for (p, forced) in complexes.into_iter().zip(forced) {
        if !forced && rng.random::<f64>() >= p_resolve {
            state.complexes.push(p);
            continue;
        }
        state.enzymes.push(p);
        if rng.random::<f64>() < p_release {
            state.free.push(p);
        } else {
            state.degraded += 1;
        }
    }
    state.boundary_hits.clear();
}

fn bind(state: &mut SimState, kinetics: &Kinetics) {
    let rb = kinetics.binding_radius;
    if state.free.is_empty() || state.enzymes.is_empty() || rb <= 0.0 {
        return;
    }
    // every A is listed in its own and the 26 surrounding cells so each
    // enzyme needs a single lookup
    let mut grid: HashMap<Cell, Vec<u32>> = HashMap::with_capacity(state.free.len() * 27);
    for (i, p) in state.free.iter().enumerate() {
        let (cx, cy, cz) = cell_of(p, rb);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    grid.entry((cx + dx, cy + dy, cz + dz)).or_default().push(i as u32);
                }
            }
        }
    }
    let rb2 = rb * rb;
    let mut taken = vec![false; state.free.len()];
    let mut bound_enzyme = vec![false; state.enzymes.len()];
    let mut new_complexes = Vec::new();
    for (k, e) in state.enzymes.iter().enumerate() {
        let Some(list) = grid.get(&cell_of(e, rb)) else {
            continue;
        };
        for &i in list {
            let i = i as usize;
            if !taken[i] && (state.free[i] - e).norm_squared() <= rb2 {
                taken[i] = true;
                bound_enzyme[k] = true;
                new_complexes.push(state.free[i]);
                break;
            }
        }
    }
    if new_complexes.is_empty() {
        return;
    }
    let mut it = taken.iter();
    state.free.retain(|_| !*it.next().unwrap());
    let mut it = bound_enzyme.iter();
    state.enzymes.retain(|_| !*it.next().unwrap());
    state.complexes.extend(new_complexes);
}

/// Free A molecules inside the receiver (boundary inclusive).
pub fn observe(state: &SimState, env: &Environment) -> u32 {
    let c = env.receiver_center();
    let r2 = env.receiver_radius * env.receiver_radius;
    state.free.iter().filter(|p| (*p - c).norm_squared() <= r2).count() as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::{stream, Domain};

    #[test]
    fn zero_diffusion_and_flow_keeps_positions() {
        let mut env = Environment::base_case();
        env.species_a.diffusion_coefficient = 0.0;
        let mut s = SimState::new();
        s.emit(5);
        s.free[2] = Vec3::new(1.0, 2.0, 3.0);
        let before = s.free.clone();
        let mut rng = stream(1, Domain::Propagation, 0);
        diffuse_step(&mut s, 1e-6, &env, &mut rng);
        assert_eq!(s.free, before);
    }

    #[test]
    fn observe_counts_inside_only() {
        let env = Environment::base_case();
        let mut s = SimState::new();
        assert_eq!(observe(&s, &env), 0);
        s.free.push(env.receiver_center());
        s.free.push(env.receiver_center() + Vec3::new(env.receiver_radius, 0.0, 0.0));
        s.free.push(env.receiver_center() + Vec3::new(0.0, 1.01 * env.receiver_radius, 0.0));
        assert_eq!(observe(&s, &env), 2);
    }

    #[test]
    fn off_mode_leaves_state() {
        let env = Environment::base_case().with_enzymes(84.0);
        let k = Kinetics::new(&env, EnzymeMode::Off, 1e4, 0.5e-6);
        let mut s = SimState::new();
        s.emit(100);
        let before = s.clone();
        let mut rng = stream(1, Domain::Propagation, 0);
        react_step(&mut s, 0.5e-6, &k, &mut rng);
        assert_eq!(s, before);
    }

    #[test]
    fn binding_radius_scale() {
        let rb = binding_radius(2e-19, 0.5e-6);
        assert!((rb - 2.88e-9).abs() < 0.01e-9, "{rb}");
        let env = Environment::base_case();
        let smol = diffusion_limited_radius(2e-19, env.diffusion_a(), env.species_e.diffusion_coefficient);
        assert!(smol < 1e-10);
    }

    #[test]
    fn reflection_stays_inside() {
        let bx = EnzymeBox { lo: Vec3::zeros(), hi: Vec3::repeat(1.0) };
        let mut p = Vec3::new(-0.25, 1.5, 3.2);
        assert!(bx.reflect(&mut p));
        assert!(bx.contains(&p));
        assert!((p - Vec3::new(0.25, 0.5, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn explicit_mode_conserves() {
        let mut env = Environment::base_case().with_enzymes(84.0);
        env.enzyme_volume = (0.6e-6f64).powi(3);
        let dt = 0.5e-6;
        let k = Kinetics::new(&env, EnzymeMode::Explicit, 0.0, dt);
        let mut rng = stream(3, Domain::Enzymes, 0);
        let mut s = SimState::new();
        k.populate(&env, &mut s, &mut rng).unwrap();
        let n_e = s.enzyme_total();
        s.emit(500);
        for _ in 0..100 {
            diffuse_step(&mut s, dt, &env, &mut rng);
            react_step(&mut s, dt, &k, &mut rng);
            assert!(s.is_conserved());
            assert_eq!(s.enzyme_total(), n_e);
        }
        assert!(s.degraded > 0);
    }
}
