//! Particle-based stochastic simulation of the channel.
//!
//! A realization releases `N_AEM` A molecules at the origin at the start of
//! every interval whose bit is 1 and records how many free A molecules are
//! inside the receiver at each sampling time. Additive noise is not
//! simulated as particles; [`inject_noise`] adds Poisson draws afterwards.
//!
//! Two engines are available:
//!
//! * [`Propagation::EventDriven`] (default) follows each molecule on its own
//!   with exact Brownian transitions between sampling times and first
//!   passages to the receiver neighbourhood; degradation is an exponential
//!   lifetime. It does not need a time step and cannot model enzymes as
//!   particles.
//! * [`Propagation::FixedStep`] advances a [`SimState`] in steps of `Δt`
//!   through [`diffuse_step`], [`react_step`] and [`observe`]. Explicit
//!   enzyme simulation always uses it.
//!
//! Every realization draws from its own random stream derived from
//! `(master_seed, realization index)`, so results are bit-identical
//! regardless of thread count or scheduling.

mod propagate;
pub mod rng;
mod state;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use propagate::{first_passage_cdf, first_passage_time, inverse_gaussian};
pub use state::{
    binding_radius, diffuse_step, diffusion_limited_radius, observe, react_step, EnzymeBox, Kinetics, SimState,
};

use crate::channel::BitSequence;
use crate::env::{Environment, RateMode, TransmissionSpec};
use crate::error::{Error, Result};
use propagate::Transport;
use rng::{stream, Domain};

/// How enzymes act on A molecules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnzymeMode {
    /// E, EA particles with binding, unbinding and conversion.
    Explicit,
    /// A degrades directly at rate `k C_E_Tot`.
    #[default]
    FirstOrder,
    /// Ignore enzymes.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    #[default]
    EventDriven,
    FixedStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Δt, s. Sampling times must be multiples of it.
    pub time_step: f64,
    pub master_seed: u64,
    pub realization_count: u64,
    pub enzyme_mode: EnzymeMode,
    pub propagation: Propagation,
    /// Which `k` sets the first-order degradation rate.
    pub first_order_rate: RateMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            time_step: 0.5e-6,
            master_seed: 1,
            realization_count: 20_000,
            enzyme_mode: EnzymeMode::FirstOrder,
            propagation: Propagation::EventDriven,
            first_order_rate: RateMode::Approximation,
        }
    }
}

fn is_multiple(x: f64, step: f64) -> bool {
    let r = x / step;
    (r - r.round()).abs() <= 1e-6 * r.abs().max(1.0)
}

impl SimConfig {
    pub fn validate(&self, tx: &TransmissionSpec) -> Result<()> {
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return Err(Error::config("simulation.time_step", "must be > 0"));
        }
        if self.realization_count == 0 {
            return Err(Error::config("simulation.realization_count", "must be >= 1"));
        }
        let dt = self.time_step;
        if !is_multiple(tx.bit_interval, dt) {
            return Err(Error::config(
                "transmission.bit_interval",
                format!("{:e} s is not a multiple of the time step {dt:e} s", tx.bit_interval),
            ));
        }
        for (m, &g) in tx.sample_offsets.iter().enumerate() {
            if !is_multiple(g, dt) {
                return Err(Error::config(
                    "transmission.sample_offsets",
                    format!(
                        "g({}) = {g:e} s is not a multiple of the time step {dt:e} s; \
                         sampling times must fall on the simulation time grid",
                        m + 1
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Counts `s[j, m]`, row-major over intervals `j` and samples `m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMatrix {
    intervals: usize,
    samples: usize,
    counts: Vec<u32>,
}

impl ObservationMatrix {
    pub fn zeros(intervals: usize, samples: usize) -> Self {
        Self { intervals, samples, counts: vec![0; intervals * samples] }
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let samples = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || samples == 0 || rows.iter().any(|r| r.len() != samples) {
            return Err(Error::domain("ObservationMatrix", "rows must be non-empty and of equal length"));
        }
        Ok(Self { intervals: rows.len(), samples, counts: rows.concat() })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn get(&self, j: usize, m: usize) -> u32 {
        self.counts[j * self.samples + m]
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.counts[j * self.samples..(j + 1) * self.samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.counts.chunks_exact(self.samples)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Keeps only the listed sample columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() || columns.iter().any(|&c| c >= self.samples) {
            return Err(Error::domain("select_columns", "column index out of range"));
        }
        let counts = self.rows().flat_map(|r| columns.iter().map(move |&c| r[c])).collect();
        Ok(Self { intervals: self.intervals, samples: columns.len(), counts })
    }
}

/// Simulator bound to one environment, schedule and configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    env: Environment,
    tx: TransmissionSpec,
    cfg: SimConfig,
    decay_rate: f64,
    /// Flattened sampling times `t(j, m)`.
    times: Vec<f64>,
}

impl Simulator {
    pub fn new(env: &Environment, tx: &TransmissionSpec, cfg: &SimConfig) -> Result<Self> {
        env.validate()?;
        tx.validate()?;
        cfg.validate(tx)?;
        let decay_rate = match cfg.enzyme_mode {
            EnzymeMode::FirstOrder => env.degradation_rate(cfg.first_order_rate)?,
            EnzymeMode::Off | EnzymeMode::Explicit => 0.0,
        };
        let times = (0..tx.sequence_length)
            .flat_map(|j| (0..tx.samples_per_interval()).map(move |m| (j, m)))
            .map(|(j, m)| tx.sample_time(j, m))
            .collect();
        Ok(Self { env: env.clone(), tx: tx.clone(), cfg: cfg.clone(), decay_rate, times })
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn tx(&self) -> &TransmissionSpec {
        &self.tx
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// First-order degradation rate applied to free A, s⁻¹.
    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    fn uses_fixed_step(&self) -> bool {
        self.cfg.propagation == Propagation::FixedStep
            || (self.cfg.enzyme_mode == EnzymeMode::Explicit && self.env.reactions.enzymes_active())
    }

    /// Runs realization `index` for `sequence`.
    pub fn run_realization(&self, sequence: &BitSequence, index: u64) -> Result<ObservationMatrix> {
        if sequence.len() != self.tx.sequence_length {
            return Err(Error::domain(
                "run_realization",
                format!("sequence has {} bits, schedule expects {}", sequence.len(), self.tx.sequence_length),
            ));
        }
        if self.uses_fixed_step() {
            self.run_fixed_step(sequence, index)
        } else {
            Ok(self.run_event_driven(sequence, index))
        }
    }

    fn run_event_driven(&self, sequence: &BitSequence, index: u64) -> ObservationMatrix {
        let m = self.tx.samples_per_interval();
        let mut out = ObservationMatrix::zeros(sequence.len(), m);
        let transport = Transport {
            center: self.env.receiver_center(),
            radius: self.env.receiver_radius,
            sigma2: 2.0 * self.env.diffusion_a(),
            flow: self.env.flow_vec(),
            decay_rate: self.decay_rate,
        };
        let mut rng = stream(self.cfg.master_seed, Domain::Propagation, index);
        for (j, &bit) in sequence.bits().iter().enumerate() {
            if bit == 0 {
                continue;
            }
            let emitted = j as f64 * self.tx.bit_interval;
            for _ in 0..self.tx.molecules_per_one {
                transport.follow(emitted, &self.times, j * m, &mut out.counts, &mut rng);
            }
        }
        out
    }

    fn run_fixed_step(&self, sequence: &BitSequence, index: u64) -> Result<ObservationMatrix> {
        let dt = self.cfg.time_step;
        let step_of = |t: f64| (t / dt).round() as u64;
        let mode = if self.env.reactions.enzymes_active() { self.cfg.enzyme_mode } else { EnzymeMode::Off };
        let kinetics = Kinetics::new(&self.env, mode, self.decay_rate, dt);
        let mut state = SimState::new();
        if mode == EnzymeMode::Explicit {
            let mut erng = stream(self.cfg.master_seed, Domain::Enzymes, index);
            kinetics.populate(&self.env, &mut state, &mut erng)?;
        }
        let mut rng = stream(self.cfg.master_seed, Domain::Propagation, index);
        let sample_steps: Vec<u64> = self.times.iter().map(|&t| step_of(t)).collect();
        let interval_steps = step_of(self.tx.bit_interval);
        let last = *sample_steps.last().expect("at least one sample");
        let mut out = ObservationMatrix::zeros(sequence.len(), self.tx.samples_per_interval());
        let mut next_sample = 0;
        for k in 0..last {
            if k % interval_steps == 0 {
                let j = (k / interval_steps) as usize;
                if j < sequence.len() && sequence.get(j) == 1 {
                    state.emit(self.tx.molecules_per_one);
                }
            }
            diffuse_step(&mut state, dt, &self.env, &mut rng);
            react_step(&mut state, dt, &kinetics, &mut rng);
            while next_sample < sample_steps.len() && sample_steps[next_sample] == k + 1 {
                out.counts[next_sample] = observe(&state, &self.env);
                next_sample += 1;
            }
        }
        debug_assert!(state.is_conserved());
        Ok(out)
    }
}

/// Runs one realization; see [`Simulator::run_realization`].
pub fn run_realization(
    env: &Environment,
    tx: &TransmissionSpec,
    cfg: &SimConfig,
    sequence: &BitSequence,
    index: u64,
) -> Result<ObservationMatrix> {
    Simulator::new(env, tx, cfg)?.run_realization(sequence, index)
}

/// Bits drawn independently with `Pr(1) = p1` from the sequence stream of
/// realization `index`.
pub fn random_sequence(p1: f64, len: usize, master_seed: u64, index: u64) -> BitSequence {
    let mut rng = stream(master_seed, Domain::Sequence, index);
    let bits = (0..len).map(|_| u8::from(rng.random::<f64>() < p1)).collect();
    BitSequence::new(bits).expect("non-empty binary sequence")
}

/// Adds an independent Poisson draw with mean `N̄_noise(t(j, m))` to every
/// entry, using `rng`.
pub fn inject_noise_with<R: Rng + ?Sized>(matrix: &mut ObservationMatrix, tx: &TransmissionSpec, rng: &mut R) {
    if tx.noise.is_zero() {
        return;
    }
    let m = matrix.samples;
    for (idx, c) in matrix.counts.iter_mut().enumerate() {
        let (j, k) = (idx / m, idx % m);
        let mean = tx.noise.mean_at(tx.sample_time(j, k));
        if mean > 0.0 {
            let draw: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
            *c += draw as u32;
        }
    }
}

/// [`inject_noise_with`] on the noise stream of realization `index`.
pub fn inject_noise(
    matrix: &ObservationMatrix,
    tx: &TransmissionSpec,
    master_seed: u64,
    index: u64,
) -> ObservationMatrix {
    let mut out = matrix.clone();
    let mut rng = stream(master_seed, Domain::Noise, index);
    inject_noise_with(&mut out, tx, &mut rng);
    out
}

pub const TRACE_HEADER: &str = "realization,j,m,t_s,count";

/// Appends one realization to a raw trace CSV (`j`, `m` one-based).
pub fn write_trace<W: Write + ?Sized>(
    w: &mut W,
    tx: &TransmissionSpec,
    realization: u64,
    matrix: &ObservationMatrix,
) -> std::io::Result<()> {
    for j in 0..matrix.intervals {
        for m in 0..matrix.samples {
            writeln!(w, "{realization},{},{},{:e},{}", j + 1, m + 1, tx.sample_time(j, m), matrix.get(j, m))?;
        }
    }
    Ok(())
}
