//! Experiment configuration files (TOML or JSON).
//!
//! ```toml
//! [environment]
//! receiver_distance = 300e-9     # required, m
//! receiver_radius = 45e-9        # required, m
//! temperature_c = 25.0
//! viscosity = 1e-3               # kg m^-1 s^-1
//! flow = [0.0, 0.0, 0.0]         # m/s
//! # enzyme_volume = 2.7e-17      # m^3, default (10 x0)^3
//!
//! [environment.species.a]
//! radius = 0.5e-9                # diffusion from the Einstein relation
//! # diffusion = 4.4e-10          # or given directly, m^2/s
//!
//! [reactions]
//! k1 = 2e-19                     # m^3 molecule^-1 s^-1
//! k_minus1 = 1e4                 # s^-1
//! k2 = 1e6                       # s^-1
//! enzyme_concentration_um = 0.0
//!
//! [transmission]
//! molecules_per_one = 5000       # required
//! bit_interval = 200e-6          # required, s
//! p1 = 0.5
//! sequence_length = 100
//! samples_per_interval = 20      # or sample_offsets = [...]
//! noise_mean = 0.0               # or noise = { kind = "steps", times = [...], means = [...] }
//!
//! [simulation]
//! time_step = 0.5e-6
//! master_seed = 1
//! realization_count = 200
//! enzyme_mode = "first_order"    # explicit | first_order | off
//! propagation = "event_driven"   # event_driven | fixed_step
//! first_order_rate = "approximation"
//!
//! [analysis]
//! degradation_mode = "strict_bound"
//! ensemble_size = 1000
//! threshold_step = 1.0
//! memory = 2
//! mi_arrivals = "poisson"
//!
//! [sweep]                        # experiment grids; unset lists use the experiment's defaults
//! samples = [1, 2, 5, 10, 20]    # M values of BER curves
//! min_spacing = 5e-6             # s; larger M are dropped (0 disables the cap)
//! t1 = [10e-6, 20e-6, 50e-6]     # first observation times of the MI sweep
//! lags = [0.5e-6, 1e-6]          # t_o grid of the analytic MI
//! empirical_lags = [1e-6, 2e-6]  # t_o values also estimated by simulation
//!
//! [[sweep.cases]]                # BER cases; omitted fields keep the values above
//! label = "vx_pos"
//! flow = [0.003, 0.0, 0.0]
//! enzyme_concentration_um = 0.0
//! noise_mean = 1.0
//! receiver_distance = 300e-9
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::DegradationMode;
use crate::env::{
    celsius_to_kelvin, default_enzyme_volume, micromolar_to_number_density, uniform_offsets, Environment, NoiseProfile,
    ReactionSpec, SpeciesSpec, TransmissionSpec,
};
use crate::error::{Error, Result};
use crate::mutual_info::ArrivalModel;
use crate::sim::SimConfig;

pub const REQUIRED_KEYS: [&str; 4] = [
    "environment.receiver_distance",
    "environment.receiver_radius",
    "transmission.molecules_per_one",
    "transmission.bit_interval",
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    environment: RawEnvironment,
    #[serde(default)]
    reactions: RawReactions,
    #[serde(default)]
    transmission: RawTransmission,
    #[serde(default)]
    simulation: SimConfig,
    #[serde(default)]
    analysis: AnalysisConfig,
    #[serde(default)]
    sweep: SweepConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvironment {
    receiver_distance: Option<f64>,
    receiver_radius: Option<f64>,
    temperature_c: Option<f64>,
    viscosity: Option<f64>,
    flow: Option<[f64; 3]>,
    enzyme_volume: Option<f64>,
    #[serde(default)]
    species: RawSpeciesSet,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpeciesSet {
    a: Option<RawSpecies>,
    e: Option<RawSpecies>,
    ea: Option<RawSpecies>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpecies {
    radius: f64,
    diffusion: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReactions {
    k1: Option<f64>,
    k_minus1: Option<f64>,
    k2: Option<f64>,
    enzyme_concentration_um: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransmission {
    molecules_per_one: Option<u64>,
    bit_interval: Option<f64>,
    p1: Option<f64>,
    sequence_length: Option<usize>,
    samples_per_interval: Option<usize>,
    sample_offsets: Option<Vec<f64>>,
    noise_mean: Option<f64>,
    noise: Option<NoiseProfile>,
}

/// Settings of the analytic side of experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Degradation term of the analytic signal model.
    pub degradation_mode: DegradationMode,
    /// Random sequences for analytic average error probabilities.
    pub ensemble_size: usize,
    /// Spacing of the threshold search grid.
    pub threshold_step: f64,
    /// Explicit memory `F` of the sequence detector.
    pub memory: usize,
    pub mi_arrivals: ArrivalModel,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            degradation_mode: DegradationMode::StrictBound,
            ensemble_size: 1000,
            threshold_step: 1.0,
            memory: 2,
            mi_arrivals: ArrivalModel::Poisson,
        }
    }
}

/// One curve of a BER experiment. Unset fields inherit the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseOverride {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enzyme_concentration_um: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_distance: Option<f64>,
}

impl CaseOverride {
    pub fn named(label: &str) -> Self {
        Self {
            label: label.to_string(),
            flow: None,
            enzyme_concentration_um: None,
            noise_mean: None,
            receiver_distance: None,
        }
    }
}

/// Grids swept by the experiments. `None` means the experiment default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub samples: Option<Vec<usize>>,
    /// Minimum spacing between samples, s.
    pub min_spacing: Option<f64>,
    pub t1: Option<Vec<f64>>,
    pub lags: Option<Vec<f64>>,
    pub empirical_lags: Option<Vec<f64>>,
    pub cases: Option<Vec<CaseOverride>>,
}

impl SweepConfig {
    fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if let Some(ms) = &self.samples {
            if ms.is_empty() || ms.contains(&0) {
                errors.push(Error::config("sweep.samples", "must be a non-empty list of counts >= 1"));
            }
        }
        if let Some(s) = self.min_spacing {
            if !(s >= 0.0) || !s.is_finite() {
                errors.push(Error::config("sweep.min_spacing", "must be finite and >= 0"));
            }
        }
        for (key, list) in
            [("sweep.t1", &self.t1), ("sweep.lags", &self.lags), ("sweep.empirical_lags", &self.empirical_lags)]
        {
            if let Some(v) = list {
                if v.is_empty() || v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                    errors.push(Error::config(key, "must be a non-empty list of positive times"));
                }
            }
        }
        if let Some(cases) = &self.cases {
            if cases.is_empty() {
                errors.push(Error::config("sweep.cases", "must not be empty"));
            }
            for (i, c) in cases.iter().enumerate() {
                let ok =
                    !c.label.is_empty() && c.label.chars().all(|ch| ch.is_ascii_alphanumeric() || "_-+.".contains(ch));
                if !ok {
                    errors.push(Error::config(
                        format!("sweep.cases[{i}].label"),
                        "must be non-empty and use only letters, digits, '_', '-', '+', '.'",
                    ));
                }
                if cases[..i].iter().any(|o| o.label == c.label) {
                    errors.push(Error::config(format!("sweep.cases[{i}].label"), "duplicate label"));
                }
                if let Some(n) = c.noise_mean {
                    if !(n >= 0.0) || !n.is_finite() {
                        errors.push(Error::config(format!("sweep.cases[{i}].noise_mean"), "must be finite and >= 0"));
                    }
                }
                if let Some(e) = c.enzyme_concentration_um {
                    if !(e >= 0.0) || !e.is_finite() {
                        errors.push(Error::config(
                            format!("sweep.cases[{i}].enzyme_concentration_um"),
                            "must be finite and >= 0",
                        ));
                    }
                }
                if let Some(x) = c.receiver_distance {
                    if !(x > 0.0) || !x.is_finite() {
                        errors.push(Error::config(format!("sweep.cases[{i}].receiver_distance"), "must be > 0"));
                    }
                }
            }
        }
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.pop().unwrap()),
            _ => Err(Error::ConfigList(errors)),
        }
    }
}

/// A fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub environment: Environment,
    pub transmission: TransmissionSpec,
    pub simulation: SimConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepConfig,
}

impl ResolvedConfig {
    /// Base case: no noise, flow or enzymes; 5000 molecules, 200 µs bits,
    /// 20 samples per bit, 100-bit sequences.
    pub fn base_case() -> Self {
        Self {
            environment: Environment::base_case(),
            transmission: TransmissionSpec::uniform(5000, 200e-6, 100, 20),
            simulation: SimConfig::default(),
            analysis: AnalysisConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut keep = |r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::ConfigList(list)) => errors.extend(list),
            Err(e) => errors.push(e),
        };
        keep(self.environment.validate());
        keep(self.transmission.validate());
        keep(self.simulation.validate(&self.transmission));
        keep(self.sweep.validate());
        if !(self.analysis.threshold_step > 0.0) {
            keep(Err(Error::config("analysis.threshold_step", "must be > 0")));
        }
        if self.analysis.ensemble_size == 0 {
            keep(Err(Error::config("analysis.ensemble_size", "must be >= 1")));
        }
        if self.analysis.memory == 0 {
            keep(Err(Error::config("analysis.memory", "must be >= 1")));
        }
        match errors.len() {
            0 => Ok(()),
            1 => Err(errors.pop().unwrap()),
            _ => Err(Error::ConfigList(errors)),
        }
    }

    /// Replaces the schedule with `samples` equally spaced samples.
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.transmission.sample_offsets = uniform_offsets(self.transmission.bit_interval, samples);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Toml,
        }
    }
}

fn deserialize<T: DeserializeOwned>(text: &str, format: Format) -> Result<T> {
    match format {
        Format::Toml => {
            let de = toml::Deserializer::parse(text).map_err(|e| Error::Parse(format!("TOML: {e}")))?;
            serde_path_to_error::deserialize(de).map_err(|e| {
                let path = e.path().to_string();
                Error::config(path, e.into_inner().message().trim().to_string())
            })
        }
        Format::Json => {
            let mut de = serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                Error::config(path, format!("{inner} (line {}, column {})", inner.line(), inner.column()))
            })
        }
    }
}

fn species(
    raw: Option<RawSpecies>,
    name: &str,
    default_radius: f64,
    kelvin: f64,
    viscosity: f64,
) -> Result<SpeciesSpec> {
    match raw {
        None => SpeciesSpec::from_einstein(name, default_radius, kelvin, viscosity),
        Some(RawSpecies { radius, diffusion: Some(d) }) => SpeciesSpec::with_diffusion(name, radius, d),
        Some(RawSpecies { radius, diffusion: None }) => SpeciesSpec::from_einstein(name, radius, kelvin, viscosity),
    }
}

/// Parses, applies defaults and validates.
pub fn parse_config(text: &str, format: Format) -> Result<ResolvedConfig> {
    let raw: RawFile = deserialize(text, format)?;
    let missing: Vec<Error> = [
        (raw.environment.receiver_distance.is_none(), REQUIRED_KEYS[0]),
        (raw.environment.receiver_radius.is_none(), REQUIRED_KEYS[1]),
        (raw.transmission.molecules_per_one.is_none(), REQUIRED_KEYS[2]),
        (raw.transmission.bit_interval.is_none(), REQUIRED_KEYS[3]),
    ]
    .into_iter()
    .filter(|(absent, _)| *absent)
    .map(|(_, key)| Error::config(key, "required key is missing"))
    .collect();
    if !missing.is_empty() {
        return Err(if missing.len() == 1 { missing.into_iter().next().unwrap() } else { Error::ConfigList(missing) });
    }

    let base = Environment::base_case();
    let env_raw = raw.environment;
    let kelvin = celsius_to_kelvin(env_raw.temperature_c.unwrap_or(25.0));
    let viscosity = env_raw.viscosity.unwrap_or(base.viscosity);
    let tag = |key: &'static str| move |e: Error| Error::config(key, e.to_string());
    let x0 = env_raw.receiver_distance.unwrap();
    let base_rx = &base.reactions;
    let environment = Environment {
        temperature: kelvin,
        viscosity,
        flow: env_raw.flow.unwrap_or([0.0; 3]),
        species_a: species(env_raw.species.a, "A", base.species_a.radius, kelvin, viscosity)
            .map_err(tag("environment.species.a"))?,
        species_e: species(env_raw.species.e, "E", base.species_e.radius, kelvin, viscosity)
            .map_err(tag("environment.species.e"))?,
        species_ea: species(env_raw.species.ea, "EA", base.species_ea.radius, kelvin, viscosity)
            .map_err(tag("environment.species.ea"))?,
        reactions: ReactionSpec {
            k1: raw.reactions.k1.unwrap_or(base_rx.k1),
            k_minus1: raw.reactions.k_minus1.unwrap_or(base_rx.k_minus1),
            k2: raw.reactions.k2.unwrap_or(base_rx.k2),
            enzyme_total_concentration: micromolar_to_number_density(
                raw.reactions.enzyme_concentration_um.unwrap_or(0.0),
            ),
        },
        receiver_distance: x0,
        receiver_radius: env_raw.receiver_radius.unwrap(),
        enzyme_volume: env_raw.enzyme_volume.unwrap_or_else(|| default_enzyme_volume(x0)),
    };

    let t = raw.transmission;
    let bit_interval = t.bit_interval.unwrap();
    let sample_offsets = match (t.sample_offsets, t.samples_per_interval) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "transmission.sample_offsets",
                "give either sample_offsets or samples_per_interval, not both",
            ))
        }
        (Some(g), None) => g,
        (None, m) => uniform_offsets(bit_interval, m.unwrap_or(1)),
    };
    let noise = match (t.noise, t.noise_mean) {
        (Some(_), Some(_)) => {
            return Err(Error::config("transmission.noise", "give either noise or noise_mean, not both"))
        }
        (Some(n), None) => n,
        (None, mean) => NoiseProfile::constant(mean.unwrap_or(0.0)),
    };
    let transmission = TransmissionSpec {
        molecules_per_one: t.molecules_per_one.unwrap(),
        bit_interval,
        p1: t.p1.unwrap_or(0.5),
        sequence_length: t.sequence_length.unwrap_or(1),
        sample_offsets,
        noise,
    };
    let resolved = ResolvedConfig {
        environment,
        transmission,
        simulation: raw.simulation,
        analysis: raw.analysis,
        sweep: raw.sweep,
    };
    resolved.validate()?;
    Ok(resolved)
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, Format::from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[environment]
receiver_distance = 300e-9
receiver_radius = 45e-9

[transmission]
molecules_per_one = 5000
bit_interval = 200e-6
samples_per_interval = 20
"#;

    #[test]
    fn empty_file_lists_required_keys() {
        let err = parse_config("", Format::Toml).unwrap_err();
        let msg = err.to_string();
        for key in REQUIRED_KEYS {
            assert!(msg.contains(key), "missing {key} in {msg}");
        }
    }

    #[test]
    fn minimal_file_resolves_to_base_case() {
        let cfg = parse_config(BASE, Format::Toml).unwrap();
        assert_eq!(cfg.environment, Environment::base_case());
        assert_eq!(cfg.transmission.molecules_per_one, 5000);
        assert_eq!(cfg.transmission.samples_per_interval(), 20);
        assert_eq!(cfg.simulation.time_step, 0.5e-6);
    }

    #[test]
    fn unknown_keys_are_reported_with_path() {
        let text = format!("{BASE}\n[simulation]\ntime_stp = 1e-6\n");
        let msg = parse_config(&text, Format::Toml).unwrap_err().to_string();
        assert!(msg.contains("simulation") && msg.contains("time_stp"), "{msg}");
    }

    #[test]
    fn off_grid_offsets_rejected() {
        let text = BASE.replace("samples_per_interval = 20", "sample_offsets = [34.36e-6, 100e-6]");
        let msg = parse_config(&text, Format::Toml).unwrap_err().to_string();
        assert!(msg.contains("transmission.sample_offsets") && msg.contains("multiple of the time step"), "{msg}");
    }

    #[test]
    fn invariant_violations_cite_keys() {
        let text = BASE.replace("receiver_radius = 45e-9", "receiver_radius = -1.0");
        let msg = parse_config(&text, Format::Toml).unwrap_err().to_string();
        assert!(msg.contains("environment.receiver_radius"), "{msg}");
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"environment": {"receiver_distance": 3e-7, "receiver_radius": 4.5e-8, "flow": [0.003, 0, 0]},
                       "transmission": {"molecules_per_one": 5000, "bit_interval": 1e-4, "noise_mean": 1.0},
                       "reactions": {"enzyme_concentration_um": 84}}"#;
        let cfg = parse_config(json, Format::Json).unwrap();
        assert_eq!(cfg.environment.flow, [0.003, 0.0, 0.0]);
        assert!(cfg.environment.reactions.enzymes_active());
        assert_eq!(cfg.transmission.noise, NoiseProfile::constant(1.0));
        let bad = parse_config(r#"{"environment": {"receiver_distance": "x"}}"#, Format::Json).unwrap_err();
        assert!(bad.to_string().contains("environment.receiver_distance"), "{bad}");
    }

    #[test]
    fn sweep_cases_parse_and_validate() {
        let text =
            format!("{BASE}\n[sweep]\nsamples = [1, 4]\n[[sweep.cases]]\nlabel = \"vy\"\nflow = [0.0, 0.003, 0.0]\n");
        let cfg = parse_config(&text, Format::Toml).unwrap();
        assert_eq!(cfg.sweep.samples, Some(vec![1, 4]));
        let cases = cfg.sweep.cases.unwrap();
        assert_eq!(cases[0].flow, Some([0.0, 0.003, 0.0]));
        assert_eq!(cases[0].noise_mean, None);

        let bad = format!("{BASE}\n[[sweep.cases]]\nlabel = \"a,b\"\n");
        let msg = parse_config(&bad, Format::Toml).unwrap_err().to_string();
        assert!(msg.contains("sweep.cases[0].label"), "{msg}");
        let typo = format!("{BASE}\n[[sweep.cases]]\nlabel = \"a\"\nnoise = 1.0\n");
        assert!(parse_config(&typo, Format::Toml).is_err());
    }
}
