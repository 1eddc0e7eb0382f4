//! Physical environment: constants, geometry, flow, species and enzyme kinetics.
//!
//! Everything here is plain data plus a handful of closed-form relations
//! (Einstein diffusion, receiver volume, flow-shifted distance, Peclet number,
//! effective degradation constant). All lengths are in metres, times in
//! seconds, concentrations in molecule/m³.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Boltzmann constant in J/K, at the precision the model is quoted with.
pub const BOLTZMANN: f64 = 1.38e-23;
pub const AVOGADRO: f64 = 6.022_140_76e23;
pub const ZERO_CELSIUS: f64 = 273.15;

/// Converts a molar concentration in µM to molecule/m³.
pub fn micromolar_to_number_density(um: f64) -> f64 {
    // 1 µM = 1e-6 mol/L = 1e-3 mol/m³
    um * 1e-3 * AVOGADRO
}

pub fn celsius_to_kelvin(c: f64) -> f64 {
    c + ZERO_CELSIUS
}

/// Stokes–Einstein diffusion coefficient `k_B T / (6 π η R)` in m²/s.
pub fn einstein_diffusion(temperature: f64, viscosity: f64, radius: f64) -> Result<f64> {
    const OP: &str = "einstein_diffusion";
    for (name, v) in [("temperature", temperature), ("viscosity", viscosity), ("radius", radius)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(OP, format!("{name} must be positive and finite, got {v}")));
        }
    }
    Ok(BOLTZMANN * temperature / (6.0 * PI * viscosity * radius))
}

/// Volume of the spherical receiver.
pub fn receiver_volume(radius: f64) -> Result<f64> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::domain("receiver_volume", format!("radius must be positive, got {radius}")));
    }
    Ok(4.0 / 3.0 * PI * radius.powi(3))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub name: String,
    pub radius: f64,
    pub diffusion_coefficient: f64,
}

impl SpeciesSpec {
    /// Species whose diffusion coefficient follows the Einstein relation.
    pub fn from_einstein(name: &str, radius: f64, temperature: f64, viscosity: f64) -> Result<Self> {
        let d = einstein_diffusion(temperature, viscosity, radius)?;
        Ok(Self { name: name.to_owned(), radius, diffusion_coefficient: d })
    }

    /// Species with an experimentally supplied diffusion coefficient.
    pub fn with_diffusion(name: &str, radius: f64, diffusion_coefficient: f64) -> Result<Self> {
        let s = Self { name: name.to_owned(), radius, diffusion_coefficient };
        s.validate("species")?;
        Ok(s)
    }

    fn validate(&self, key: &str) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::config(format!("{key}.radius"), "must be > 0"));
        }
        if !(self.diffusion_coefficient > 0.0) || !self.diffusion_coefficient.is_finite() {
            return Err(Error::config(format!("{key}.diffusion_coefficient"), "must be > 0"));
        }
        Ok(())
    }
}

/// Which effective degradation constant to use in the concentration bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// `k = k1`: the expected concentration is a strict lower bound.
    #[default]
    StrictBound,
    /// `k = k1 k2 / (k-1 + k2)`.
    Approximation,
}

/// Michaelis–Menten rates and total enzyme number density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReactionSpec {
    /// Binding rate, molecule⁻¹ m³ s⁻¹.
    pub k1: f64,
    /// Unbinding rate, s⁻¹.
    pub k_minus1: f64,
    /// Conversion rate, s⁻¹.
    pub k2: f64,
    /// Total enzyme number density, molecule/m³. Zero disables enzymes.
    pub enzyme_total_concentration: f64,
}

impl ReactionSpec {
    pub fn none() -> Self {
        Self { k1: 0.0, k_minus1: 0.0, k2: 0.0, enzyme_total_concentration: 0.0 }
    }

    pub fn enzymes_active(&self) -> bool {
        self.enzyme_total_concentration > 0.0 && self.k1 > 0.0
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("k1", self.k1),
            ("k_minus1", self.k_minus1),
            ("k2", self.k2),
            ("enzyme_total_concentration", self.enzyme_total_concentration),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("environment.reactions.{name}"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Effective degradation constant `k` of the concentration bound.
pub fn degradation_rate_constant(reactions: &ReactionSpec, mode: RateMode) -> Result<f64> {
    match mode {
        RateMode::StrictBound => Ok(reactions.k1),
        RateMode::Approximation => {
            let denom = reactions.k_minus1 + reactions.k2;
            if denom <= 0.0 {
                return Err(Error::domain(
                    "degradation_rate_constant",
                    "k_minus1 + k2 must be positive in approximation mode",
                ));
            }
            Ok(reactions.k1 * reactions.k2 / denom)
        }
    }
}

/// The propagation environment. Transmitter at the origin, receiver sphere at
/// `(receiver_distance, 0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Kelvin.
    pub temperature: f64,
    /// kg m⁻¹ s⁻¹.
    pub viscosity: f64,
    /// Steady uniform flow, m/s.
    pub flow: [f64; 3],
    pub species_a: SpeciesSpec,
    pub species_e: SpeciesSpec,
    pub species_ea: SpeciesSpec,
    pub reactions: ReactionSpec,
    /// Transmitter to receiver-centre distance `x0`.
    pub receiver_distance: f64,
    pub receiver_radius: f64,
    /// Volume that bounds enzyme molecules in explicit-enzyme simulation, m³.
    /// Only the particle simulator reads it; it is a tuning knob, not physics.
    pub enzyme_volume: f64,
}

impl Environment {
    /// Water at 25 °C, 0.5/2.5/3 nm molecules, x0 = 300 nm, r_obs = 45 nm,
    /// no flow and no enzymes.
    pub fn base_case() -> Self {
        let temperature = celsius_to_kelvin(25.0);
        let viscosity = 1e-3;
        let d = |r: f64| einstein_diffusion(temperature, viscosity, r).expect("constant inputs");
        let x0 = 300e-9;
        Self {
            temperature,
            viscosity,
            flow: [0.0; 3],
            species_a: SpeciesSpec { name: "A".into(), radius: 0.5e-9, diffusion_coefficient: d(0.5e-9) },
            species_e: SpeciesSpec { name: "E".into(), radius: 2.5e-9, diffusion_coefficient: d(2.5e-9) },
            species_ea: SpeciesSpec { name: "EA".into(), radius: 3e-9, diffusion_coefficient: d(3e-9) },
            reactions: ReactionSpec { k1: 2e-19, k_minus1: 1e4, k2: 1e6, enzyme_total_concentration: 0.0 },
            receiver_distance: x0,
            receiver_radius: 45e-9,
            enzyme_volume: default_enzyme_volume(x0),
        }
    }

    /// Same environment with `micromolar` µM of enzymes.
    pub fn with_enzymes(mut self, micromolar: f64) -> Self {
        self.reactions.enzyme_total_concentration = micromolar_to_number_density(micromolar);
        self
    }

    pub fn with_flow(mut self, flow: [f64; 3]) -> Self {
        self.flow = flow;
        self
    }

    pub fn with_receiver_distance(mut self, x0: f64) -> Self {
        self.receiver_distance = x0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, key: &str, msg: &str| {
            if !ok {
                errors.push(Error::config(key, msg));
            }
        };
        check(self.temperature > 0.0 && self.temperature.is_finite(), "environment.temperature", "must be > 0 K");
        check(self.viscosity > 0.0 && self.viscosity.is_finite(), "environment.viscosity", "must be > 0");
        check(self.flow.iter().all(|v| v.is_finite()), "environment.flow", "components must be finite");
        check(self.receiver_distance > 0.0, "environment.receiver_distance", "must be > 0");
        check(self.receiver_radius > 0.0, "environment.receiver_radius", "must be > 0");
        check(
            self.receiver_distance > self.receiver_radius,
            "environment.receiver_distance",
            "receiver must not contain the transmitter (x0 > r_obs)",
        );
        check(self.enzyme_volume > 0.0, "environment.enzyme_volume", "must be > 0");
        for (key, s) in [
            ("environment.species.a", &self.species_a),
            ("environment.species.e", &self.species_e),
            ("environment.species.ea", &self.species_ea),
        ] {
            if let Err(e) = s.validate(key) {
                errors.push(e);
            }
        }
        if let Err(e) = self.reactions.validate() {
            errors.push(e);
        }
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.pop().unwrap()),
            _ => Err(Error::ConfigList(errors)),
        }
    }

    pub fn flow_vec(&self) -> Vec3 {
        Vec3::from(self.flow)
    }

    pub fn receiver_center(&self) -> Vec3 {
        Vec3::new(self.receiver_distance, 0.0, 0.0)
    }

    pub fn receiver_volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.receiver_radius.powi(3)
    }

    pub fn diffusion_a(&self) -> f64 {
        self.species_a.diffusion_coefficient
    }

    pub fn has_flow(&self) -> bool {
        self.flow.iter().any(|&v| v != 0.0)
    }

    /// First-order degradation rate `k C_E_Tot` in s⁻¹; zero without enzymes.
    pub fn degradation_rate(&self, mode: RateMode) -> Result<f64> {
        if !self.reactions.enzymes_active() {
            return Ok(0.0);
        }
        Ok(degradation_rate_constant(&self.reactions, mode)? * self.reactions.enzyme_total_concentration)
    }
}

/// Cube of side `10 x0`.
pub fn default_enzyme_volume(receiver_distance: f64) -> f64 {
    let side = 10.0 * receiver_distance;
    side * side * side
}

/// Distance from the flow-displaced emission point to the receiver centre.
pub fn effective_distance(env: &Environment, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain("effective_distance", format!("time must be >= 0, got {t}")));
    }
    Ok(effective_distance_unchecked(env, t))
}

pub(crate) fn effective_distance_unchecked(env: &Environment, t: f64) -> f64 {
    let [vx, vy, vz] = env.flow;
    let dx = env.receiver_distance - vx * t;
    (dx * dx + (vy * t).powi(2) + (vz * t).powi(2)).sqrt()
}

/// `x0 · v / D_A`.
pub fn peclet_number(env: &Environment, speed: f64) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::domain("peclet_number", format!("speed must be >= 0, got {speed}")));
    }
    Ok(env.receiver_distance * speed / env.diffusion_a())
}

/// Time-varying expected count from additive noise sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseProfile {
    Constant {
        mean: f64,
    },
    /// Piecewise constant: `means[i]` holds from `times[i]` until the next
    /// breakpoint. Before the first breakpoint the mean is zero.
    Steps {
        times: Vec<f64>,
        means: Vec<f64>,
    },
}

impl Default for NoiseProfile {
    fn default() -> Self {
        NoiseProfile::Constant { mean: 0.0 }
    }
}

impl NoiseProfile {
    pub fn constant(mean: f64) -> Self {
        NoiseProfile::Constant { mean }
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        match self {
            NoiseProfile::Constant { mean } => *mean,
            NoiseProfile::Steps { times, means } => {
                let idx = times.partition_point(|&bp| bp <= t);
                if idx == 0 {
                    0.0
                } else {
                    means[idx - 1]
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NoiseProfile::Constant { mean } => *mean == 0.0,
            NoiseProfile::Steps { means, .. } => means.iter().all(|&m| m == 0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            NoiseProfile::Constant { mean } => {
                if !(*mean >= 0.0) || !mean.is_finite() {
                    return Err(Error::config("transmission.noise.mean", "must be finite and >= 0"));
                }
            }
            NoiseProfile::Steps { times, means } => {
                if times.len() != means.len() {
                    return Err(Error::config("transmission.noise", "times and means differ in length"));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config("transmission.noise.times", "must be strictly increasing"));
                }
                if means.iter().any(|m| !(*m >= 0.0)) {
                    return Err(Error::config("transmission.noise.means", "must be >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Modulation and sampling schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSpec {
    /// Molecules released for a binary 1 (`N_AEM`).
    pub molecules_per_one: u64,
    /// Bit interval `T_int`, s.
    pub bit_interval: f64,
    /// Probability of a 1.
    pub p1: f64,
    /// Bits per sequence `B`.
    pub sequence_length: usize,
    /// Offsets `g(m)` of the samples inside each interval, s. Length `M`.
    pub sample_offsets: Vec<f64>,
    pub noise: NoiseProfile,
}

impl TransmissionSpec {
    /// Equally spaced samples, `g(m) = m T_int / M`.
    pub fn uniform(molecules_per_one: u64, bit_interval: f64, sequence_length: usize, samples: usize) -> Self {
        Self {
            molecules_per_one,
            bit_interval,
            p1: 0.5,
            sequence_length,
            sample_offsets: uniform_offsets(bit_interval, samples),
            noise: NoiseProfile::default(),
        }
    }

    pub fn with_noise(mut self, mean: f64) -> Self {
        self.noise = NoiseProfile::constant(mean);
        self
    }

    pub fn samples_per_interval(&self) -> usize {
        self.sample_offsets.len()
    }

    /// Global sampling time `t(j, m) = j T_int + g(m)` with zero-based `j`, `m`.
    pub fn sample_time(&self, j: usize, m: usize) -> f64 {
        j as f64 * self.bit_interval + self.sample_offsets[m]
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.molecules_per_one == 0 {
            errors.push(Error::config("transmission.molecules_per_one", "must be > 0"));
        }
        if !(self.bit_interval > 0.0) || !self.bit_interval.is_finite() {
            errors.push(Error::config("transmission.bit_interval", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.p1) {
            errors.push(Error::config("transmission.p1", "must lie in [0, 1]"));
        }
        if self.sequence_length == 0 {
            errors.push(Error::config("transmission.sequence_length", "must be >= 1"));
        }
        let g = &self.sample_offsets;
        if g.is_empty() {
            errors.push(Error::config("transmission.samples_per_interval", "must be >= 1"));
        } else {
            if g.windows(2).any(|w| w[1] <= w[0]) {
                errors.push(Error::config("transmission.sample_offsets", "must be strictly increasing"));
            }
            if !(g[0] > 0.0) {
                errors.push(Error::config("transmission.sample_offsets", "must be > 0"));
            }
            if g[g.len() - 1] > self.bit_interval * (1.0 + 1e-12) {
                errors.push(Error::config("transmission.sample_offsets", "last offset must not exceed bit_interval"));
            }
        }
        if let Err(e) = self.noise.validate() {
            errors.push(e);
        }
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.pop().unwrap()),
            _ => Err(Error::ConfigList(errors)),
        }
    }
}

pub fn uniform_offsets(bit_interval: f64, samples: usize) -> Vec<f64> {
    (1..=samples).map(|m| m as f64 * bit_interval / samples as f64).collect()
}
