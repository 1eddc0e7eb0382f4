//! Batch experiments behind the command-line tool.
//!
//! Each experiment has a `compute_*` function returning plain result
//! structs, and [`run_experiment`] which resolves the configuration, runs
//! one of them and writes the CSV tables, a `summary.json` and a
//! `manifest.json` into the output directory. CSV bodies depend only on the
//! configuration and seed; the wall time and start time live in the
//! manifest.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::ber::{random_ensemble, AnalyticEnsemble, BerReport, BerTally, TailMethod};
use crate::channel::{BitSequence, SignalModel};
use crate::config::{load_config, CaseOverride, ResolvedConfig};
use crate::detect::{
    equal_weights, matched_filter_weights, threshold_candidates, Detector, ViterbiSpec, WeightedSumSpec,
};
use crate::env::{
    default_enzyme_volume, micromolar_to_number_density, uniform_offsets, Environment, NoiseProfile, TransmissionSpec,
};
use crate::error::{Error, Result};
use crate::mutual_info::{empirical_mutual_information, mutual_information, SamplePairSpec, DEFAULT_COVERAGE};
use crate::parallel::{map_indexed, Execution};
use crate::sim::{inject_noise, random_sequence, write_trace, ObservationMatrix, Simulator, TRACE_HEADER};

/// Realizations handled by one task of the parallel map.
const CHUNK: u64 = 64;

/// MI level the sweep summary reports the crossing of.
pub const MI_FLOOR_BITS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Impulse,
    MiSweep,
    BerIsifree,
    BerIsi,
    BerDistance,
    BerEnzyme,
    BerFlow,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Impulse,
        ExperimentId::MiSweep,
        ExperimentId::BerIsifree,
        ExperimentId::BerIsi,
        ExperimentId::BerDistance,
        ExperimentId::BerEnzyme,
        ExperimentId::BerFlow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Impulse => "impulse",
            ExperimentId::MiSweep => "mi-sweep",
            ExperimentId::BerIsifree => "ber-isifree",
            ExperimentId::BerIsi => "ber-isi",
            ExperimentId::BerDistance => "ber-distance",
            ExperimentId::BerEnzyme => "ber-enzyme",
            ExperimentId::BerFlow => "ber-flow",
        }
    }

    pub fn is_ber(self) -> bool {
        !matches!(self, ExperimentId::Impulse | ExperimentId::MiSweep)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = if s == "mi" { "mi-sweep".to_string() } else { s };
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s || id.as_str().strip_prefix("ber-") == Some(s.as_str()))
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|id| id.as_str()).collect();
                Error::Parse(format!("unknown experiment `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Viterbi sequence detector with explicit memory `F`.
    Ml,
    Matched,
    Equal,
    /// Weighted sum with user-supplied weights.
    Custom,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Ml => "ml",
            DetectorKind::Matched => "matched",
            DetectorKind::Equal => "equal",
            DetectorKind::Custom => "custom",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ml" => Ok(DetectorKind::Ml),
            "matched" => Ok(DetectorKind::Matched),
            "equal" => Ok(DetectorKind::Equal),
            "custom" => Ok(DetectorKind::Custom),
            other => Err(Error::Parse(format!("unknown detector `{other}`; expected ml, matched, equal or custom"))),
        }
    }
}

/// Command-line overrides and execution settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Replaces `simulation.master_seed`.
    pub seed: Option<u64>,
    /// Multiplies `simulation.realization_count`.
    pub scale: f64,
    pub detectors: Vec<DetectorKind>,
    /// Weights of [`DetectorKind::Custom`]; their count fixes `M`.
    pub custom_weights: Option<Vec<f64>>,
    /// Replaces `analysis.memory`.
    pub memory: Option<usize>,
    /// Restricts the experiment to one sample count `M`.
    pub samples: Option<usize>,
    /// Number of leading realizations whose raw counts are dumped.
    pub trace: Option<u64>,
    pub execution: Execution,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: None,
            scale: 1.0,
            detectors: vec![DetectorKind::Ml, DetectorKind::Matched, DetectorKind::Equal],
            custom_weights: None,
            memory: None,
            samples: None,
            trace: None,
            execution: Execution::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::config("--scale", format!("must be a finite number > 0, got {}", self.scale)));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("--detector", "at least one detector is needed"));
        }
        let custom = self.detectors.contains(&DetectorKind::Custom);
        match (&self.custom_weights, custom) {
            (None, true) => return Err(Error::config("--weights", "the custom detector needs a weights file")),
            (Some(w), _) => {
                if w.is_empty() || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || !w.iter().any(|&x| x > 0.0) {
                    return Err(Error::config("--weights", "weights must be finite, >= 0 and not all zero"));
                }
                if let Some(m) = self.samples {
                    if m != w.len() {
                        return Err(Error::config(
                            "--weights",
                            format!("{} weights given but --samples is {m}", w.len()),
                        ));
                    }
                }
            }
            (None, false) => {}
        }
        if self.memory == Some(0) {
            return Err(Error::config("--memory", "must be >= 1"));
        }
        if self.samples == Some(0) {
            return Err(Error::config("--samples", "must be >= 1"));
        }
        Ok(())
    }

    fn realizations(&self, configured: u64) -> u64 {
        ((configured as f64 * self.scale).ceil() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    /// `None` runs the built-in configuration of `id`.
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub options: RunOptions,
}

/// Files written and the headline numbers of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: ExperimentId,
    pub seed: u64,
    pub scale: f64,
    pub realizations: u64,
    pub parallel: bool,
    pub config_path: Option<PathBuf>,
    pub config: ResolvedConfig,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

/// Configuration an experiment runs with when no file is given; the files
/// under `configs/` spell out the same values.
pub fn default_config(id: ExperimentId) -> ResolvedConfig {
    let mut cfg = ResolvedConfig::base_case();
    let tx = &mut cfg.transmission;
    match id {
        ExperimentId::Impulse => {
            tx.sequence_length = 1;
            tx.sample_offsets = uniform_offsets(100e-6, 200);
            tx.bit_interval = 100e-6;
            cfg.simulation.realization_count = 20_000;
        }
        ExperimentId::MiSweep => {
            tx.sequence_length = 1;
            cfg.simulation.realization_count = 100_000;
        }
        ExperimentId::BerIsifree => {
            tx.sequence_length = 1;
            tx.noise = NoiseProfile::constant(50.0);
            cfg.simulation.realization_count = 20_000;
        }
        ExperimentId::BerIsi | ExperimentId::BerDistance => {
            cfg.simulation.realization_count = 200;
        }
        ExperimentId::BerEnzyme | ExperimentId::BerFlow => {
            tx.bit_interval = 100e-6;
            tx.sample_offsets = uniform_offsets(100e-6, 20);
            cfg.simulation.realization_count = 200;
            if id == ExperimentId::BerFlow {
                tx.noise = NoiseProfile::constant(1.0);
            }
        }
    }
    cfg
}

/// Sample counts `M` swept by default.
pub fn default_samples(id: ExperimentId) -> Vec<usize> {
    match id {
        ExperimentId::BerIsifree => vec![1, 2, 5, 10, 20, 50, 100],
        _ => vec![1, 2, 5, 10, 20],
    }
}

/// Minimum sample spacing applied by default, s. The single-bit experiment
/// samples densely on purpose.
pub fn default_min_spacing(id: ExperimentId) -> f64 {
    match id {
        ExperimentId::BerIsifree => 0.0,
        _ => 5e-6,
    }
}

pub fn default_cases(id: ExperimentId) -> Vec<CaseOverride> {
    let with = |label: &str, f: &dyn Fn(&mut CaseOverride)| {
        let mut c = CaseOverride::named(label);
        f(&mut c);
        c
    };
    match id {
        ExperimentId::BerIsi => {
            vec![with("noise_0", &|c| c.noise_mean = Some(0.0)), with("noise_0.5", &|c| c.noise_mean = Some(0.5))]
        }
        ExperimentId::BerDistance => [250e-9, 300e-9, 400e-9, 500e-9]
            .iter()
            .map(|&x0| with(&format!("x0_{:.0}nm", x0 * 1e9), &|c| c.receiver_distance = Some(x0)))
            .collect(),
        ExperimentId::BerEnzyme => vec![
            with("no_enzymes", &|c| {
                c.enzyme_concentration_um = Some(0.0);
                c.noise_mean = Some(0.0);
            }),
            with("enzymes_84uM", &|c| {
                c.enzyme_concentration_um = Some(84.0);
                c.noise_mean = Some(0.0);
            }),
            with("no_enzymes_noise_1", &|c| {
                c.enzyme_concentration_um = Some(0.0);
                c.noise_mean = Some(1.0);
            }),
            with("enzymes_84uM_noise_0.5", &|c| {
                c.enzyme_concentration_um = Some(84.0);
                c.noise_mean = Some(0.5);
            }),
        ],
        ExperimentId::BerFlow => vec![
            with("no_flow", &|c| c.flow = Some([0.0; 3])),
            with("vx_+0.003", &|c| c.flow = Some([0.003, 0.0, 0.0])),
            with("vx_-0.001", &|c| c.flow = Some([-0.001, 0.0, 0.0])),
            with("vy_+0.003", &|c| c.flow = Some([0.0, 0.003, 0.0])),
        ],
        _ => vec![CaseOverride::named("base")],
    }
}

/// Loads (or builds) the configuration of `spec` and applies the overrides.
pub fn resolve_config(spec: &ExperimentSpec) -> Result<ResolvedConfig> {
    spec.options.validate()?;
    let mut cfg = match &spec.config_path {
        Some(path) => load_config(path)?,
        None => default_config(spec.id),
    };
    apply_options(&mut cfg, spec.id, &spec.options)?;
    Ok(cfg)
}

fn apply_options(cfg: &mut ResolvedConfig, id: ExperimentId, opts: &RunOptions) -> Result<()> {
    if let Some(seed) = opts.seed {
        cfg.simulation.master_seed = seed;
    }
    if let Some(f) = opts.memory {
        cfg.analysis.memory = f;
    }
    let samples = opts.samples.or(opts.custom_weights.as_ref().map(Vec::len));
    if let Some(m) = samples {
        if id.is_ber() {
            cfg.sweep.samples = Some(vec![m]);
        } else if id == ExperimentId::Impulse {
            cfg.transmission.sample_offsets = uniform_offsets(cfg.transmission.bit_interval, m);
        }
    }
    cfg.validate()
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs realizations `0..n` in chunks, folding each chunk with `step` and
/// the chunk results in index order with `merge`.
fn fold_realizations<A, I, S, M>(n: u64, exec: Execution, init: I, step: S, mut merge: M) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    S: Fn(&mut A, u64) -> Result<()> + Sync + Send,
    M: FnMut(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts = map_indexed(chunks, exec, |c| {
        let mut acc = init();
        for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
            step(&mut acc, i).map_err(|e| Error::Realization { index: i, source: Box::new(e) })?;
        }
        Ok(acc)
    });
    let mut total = init();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
            writeln!(w)
        })
    }
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

// ---------------------------------------------------------------- impulse

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpulsePoint {
    pub t_s: f64,
    pub expected_count_analytic: f64,
    pub mean_count_sim: f64,
    /// Standard error of `mean_count_sim`.
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResult {
    pub points: Vec<ImpulsePoint>,
    /// Time and value of the analytic maximum, found on the continuum.
    pub peak_time_s: f64,
    pub peak_count: f64,
    /// Grid point nearest to the analytic peak.
    pub peak_grid_point: ImpulsePoint,
    pub realizations: u64,
}

/// Maximum of a unimodal function on a grid-bracketed interval.
fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Expected and simulated response to a single emission at every sample
/// offset of the configured schedule.
pub fn compute_impulse(cfg: &ResolvedConfig, opts: &RunOptions) -> Result<ImpulseResult> {
    let mut tx = cfg.transmission.clone();
    tx.sequence_length = 1;
    let model = SignalModel::new(cfg.environment.clone(), tx.clone(), cfg.analysis.degradation_mode)?;
    let one = BitSequence::ones(1);
    let analytic = |t: f64| model.expected_total_signal(&one, t);

    let times = tx.sample_offsets.clone();
    let values = times.iter().map(|&t| analytic(t)).collect::<Result<Vec<_>>>()?;
    let tx_only = |t: f64| model.expected_tx_signal(&one, t).unwrap_or(f64::NEG_INFINITY);
    let best = (0..times.len()).max_by(|&a, &b| tx_only(times[a]).total_cmp(&tx_only(times[b]))).unwrap_or(0);
    let lo = if best == 0 { times[0] * 1e-3 } else { times[best - 1] };
    let hi = times.get(best + 1).copied().unwrap_or(times[best]);
    let peak_time_s = golden_max(tx_only, lo, hi, 1e-6 * hi);
    let peak_count = tx_only(peak_time_s);

    let n = opts.realizations(cfg.simulation.realization_count);
    let mut sim_cfg = cfg.simulation.clone();
    sim_cfg.realization_count = n;
    let sim = Simulator::new(&cfg.environment, &tx, &sim_cfg)?;
    let k = times.len();
    let seed = sim_cfg.master_seed;
    let (sum, sum_sq) = fold_realizations(
        n,
        opts.execution,
        || (vec![0u64; k], vec![0u64; k]),
        |(s, q), i| {
            let obs = inject_noise(&sim.run_realization(&one, i)?, &tx, seed, i);
            for (m, &c) in obs.counts().iter().enumerate() {
                s[m] += u64::from(c);
                q[m] += u64::from(c) * u64::from(c);
            }
            Ok(())
        },
        |(s, q), (s2, q2)| {
            s.iter_mut().zip(s2).for_each(|(a, b)| *a += b);
            q.iter_mut().zip(q2).for_each(|(a, b)| *a += b);
        },
    )?;
    let nf = n as f64;
    let points: Vec<ImpulsePoint> = times
        .iter()
        .zip(&values)
        .enumerate()
        .map(|(m, (&t, &a))| {
            let mean = sum[m] as f64 / nf;
            let var = if n > 1 { (sum_sq[m] as f64 - nf * mean * mean).max(0.0) / (nf - 1.0) } else { 0.0 };
            ImpulsePoint { t_s: t, expected_count_analytic: a, mean_count_sim: mean, sem: (var / nf).sqrt() }
        })
        .collect();
    let nearest = (0..points.len())
        .min_by(|&a, &b| (points[a].t_s - peak_time_s).abs().total_cmp(&(points[b].t_s - peak_time_s).abs()))
        .unwrap_or(0);
    Ok(ImpulseResult { peak_grid_point: points[nearest], points, peak_time_s, peak_count, realizations: n })
}

fn write_impulse(out: &mut Output, result: &ImpulseResult) -> Result<()> {
    out.write("impulse.csv", |w| {
        writeln!(w, "t_s,expected_count_analytic,mean_count_sim,sem")?;
        for p in &result.points {
            writeln!(w, "{:e},{:e},{:e},{:e}", p.t_s, p.expected_count_analytic, p.mean_count_sim, p.sem)?;
        }
        Ok(())
    })
}

// ------------------------------------------------------- mutual information

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiRow {
    pub t1_s: f64,
    pub to_s: f64,
    pub mi_bits_analytic: f64,
    pub mi_bits_empirical: Option<f64>,
    /// Simulated pairs behind `mi_bits_empirical` (0 when not simulated).
    pub n_trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiResult {
    pub rows: Vec<MiRow>,
    pub trials: u64,
    /// Per `t1`: smallest swept lag from which the analytic MI stays below
    /// [`MI_FLOOR_BITS`].
    pub settles_below_floor: Vec<(f64, Option<f64>)>,
}

fn default_lags() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.5e-6).collect()
}

/// Rounds `t` to a whole number of picoseconds, so that times built from
/// different sums compare equal.
fn time_key(t: f64) -> i64 {
    (t * 1e12).round() as i64
}

/// Analytic MI over the `t1` × lag grid, and plug-in estimates from
/// simulated single emissions at the empirical lags.
pub fn compute_mi(cfg: &ResolvedConfig, opts: &RunOptions) -> Result<MiResult> {
    let t1s = cfg.sweep.t1.clone().unwrap_or_else(|| vec![10e-6, 20e-6, 50e-6]);
    let lags = cfg.sweep.lags.clone().unwrap_or_else(default_lags);
    let emp_lags = cfg.sweep.empirical_lags.clone().unwrap_or_else(|| vec![1e-6, 2e-6]);
    let env = &cfg.environment;
    let model = SignalModel::new(env.clone(), cfg.transmission.clone(), cfg.analysis.degradation_mode)?;
    let n_mol = cfg.transmission.molecules_per_one;

    // sampling times of the simulated emission
    let mut times: Vec<f64> =
        t1s.iter().flat_map(|&t1| std::iter::once(t1).chain(emp_lags.iter().map(move |&l| t1 + l))).collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by_key(|t| time_key(*t));
    let index_of = |t: f64| times.iter().position(|&x| time_key(x) == time_key(t));

    let n = opts.realizations(cfg.simulation.realization_count);
    let samples = if emp_lags.is_empty() || n < 2 {
        Vec::new()
    } else {
        let tx = TransmissionSpec {
            molecules_per_one: n_mol,
            bit_interval: *times.last().expect("non-empty"),
            p1: 1.0,
            sequence_length: 1,
            sample_offsets: times.clone(),
            noise: NoiseProfile::default(),
        };
        let sim = Simulator::new(env, &tx, &cfg.simulation)?;
        let one = BitSequence::ones(1);
        fold_realizations(
            n,
            opts.execution,
            Vec::new,
            |acc: &mut Vec<u32>, i| {
                acc.extend_from_slice(sim.run_realization(&one, i)?.counts());
                Ok(())
            },
            |acc, part| acc.extend(part),
        )?
    };
    let k = times.len();

    let mut all_lags: Vec<f64> = lags.iter().chain(&emp_lags).copied().collect();
    all_lags.sort_by(f64::total_cmp);
    all_lags.dedup_by_key(|t| time_key(*t));

    let mut rows = Vec::new();
    let mut settles = Vec::new();
    for &t1 in &t1s {
        let mut last_above: Option<f64> = None;
        let mut first_lag = None;
        for &lag in &all_lags {
            let mut spec = SamplePairSpec::new(t1, t1 + lag, n_mol)?;
            spec.truncation_mass = DEFAULT_COVERAGE;
            spec.arrivals = cfg.analysis.mi_arrivals;
            let mi = mutual_information(&spec, &model)?;
            first_lag.get_or_insert(lag);
            if mi >= MI_FLOOR_BITS {
                last_above = Some(lag);
            }
            let simulated = emp_lags.iter().any(|&l| time_key(l) == time_key(lag)) && !samples.is_empty();
            let (emp, trials) = if simulated {
                let (a, b) = (index_of(t1).expect("t1 sampled"), index_of(t1 + lag).expect("t2 sampled"));
                let pairs: Vec<(u32, u32)> = samples.chunks_exact(k).map(|row| (row[a], row[b])).collect();
                (Some(empirical_mutual_information(&pairs)?), n)
            } else {
                (None, 0)
            };
            rows.push(MiRow { t1_s: t1, to_s: lag, mi_bits_analytic: mi, mi_bits_empirical: emp, n_trials: trials });
        }
        let settle = match last_above {
            None => first_lag,
            Some(l) => all_lags.iter().copied().find(|&x| x > l),
        };
        settles.push((t1, settle));
    }
    Ok(MiResult { rows, trials: if samples.is_empty() { 0 } else { n }, settles_below_floor: settles })
}

fn write_mi(out: &mut Output, result: &MiResult) -> Result<()> {
    out.write("mi.csv", |w| {
        writeln!(w, "t1_s,to_s,mi_bits_analytic,mi_bits_empirical,n_trials")?;
        for r in &result.rows {
            writeln!(
                w,
                "{:e},{:e},{:e},{},{}",
                r.t1_s,
                r.to_s,
                r.mi_bits_analytic,
                opt_cell(r.mi_bits_empirical),
                r.n_trials
            )?;
        }
        Ok(())
    })
}

// ------------------------------------------------------------------ BER

/// One curve family of a BER experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct BerCase {
    pub label: String,
    pub environment: Environment,
    pub transmission: TransmissionSpec,
}

/// Applies the case overrides of the configuration (or the experiment's
/// defaults) to its environment and schedule.
pub fn resolve_cases(cfg: &ResolvedConfig, id: ExperimentId) -> Result<Vec<BerCase>> {
    let overrides = cfg.sweep.cases.clone().unwrap_or_else(|| default_cases(id));
    overrides
        .into_iter()
        .map(|c| {
            let mut env = cfg.environment.clone();
            let mut tx = cfg.transmission.clone();
            if let Some(flow) = c.flow {
                env.flow = flow;
            }
            if let Some(um) = c.enzyme_concentration_um {
                env.reactions.enzyme_total_concentration = micromolar_to_number_density(um);
            }
            if let Some(x0) = c.receiver_distance {
                // keep the enzyme box tied to the distance unless it was set explicitly
                if env.enzyme_volume == default_enzyme_volume(env.receiver_distance) {
                    env.enzyme_volume = default_enzyme_volume(x0);
                }
                env.receiver_distance = x0;
            }
            if let Some(noise) = c.noise_mean {
                tx.noise = NoiseProfile::constant(noise);
            }
            env.validate().map_err(|e| Error::config(format!("sweep.cases.{}", c.label), e.to_string()))?;
            Ok(BerCase { label: c.label, environment: env, transmission: tx })
        })
        .collect()
}

/// Sample counts to sweep and those dropped by the spacing cap.
pub fn sample_counts(cfg: &ResolvedConfig, id: ExperimentId) -> (Vec<usize>, Vec<usize>) {
    let mut ms = cfg.sweep.samples.clone().unwrap_or_else(|| default_samples(id));
    ms.sort_unstable();
    ms.dedup();
    let spacing = cfg.sweep.min_spacing.unwrap_or_else(|| default_min_spacing(id));
    if spacing <= 0.0 {
        return (ms, Vec::new());
    }
    let cap = ((cfg.transmission.bit_interval / spacing) * (1.0 + 1e-9)).floor() as usize;
    ms.into_iter().partition(|&m| m <= cap)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub case: String,
    pub x0_m: f64,
    pub samples: usize,
    pub detector: DetectorKind,
    pub threshold: Option<f64>,
    pub pe_analytic: Option<f64>,
    pub pe_mc: f64,
    pub ci95: f64,
    pub transmissions: u64,
    #[serde(skip)]
    pub analytic_report: Option<BerReport>,
    #[serde(skip)]
    pub mc_report: Option<BerReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerCaseResult {
    pub label: String,
    pub samples: Vec<usize>,
    pub realizations: u64,
    pub points: Vec<CurvePoint>,
}

impl BerCaseResult {
    pub fn point(&self, samples: usize, detector: DetectorKind) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.samples == samples && p.detector == detector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerResult {
    pub experiment: ExperimentId,
    pub samples: Vec<usize>,
    /// Sample counts removed by the minimum-spacing cap.
    pub dropped_samples: Vec<usize>,
    pub cases: Vec<BerCaseResult>,
}

impl BerResult {
    pub fn case(&self, label: &str) -> Option<&BerCaseResult> {
        self.cases.iter().find(|c| c.label == label)
    }
}

struct PreparedDetector {
    kind: DetectorKind,
    detector: Box<dyn Detector>,
    threshold: Option<f64>,
    analytic: Option<BerReport>,
}

fn analysis_ensemble(tx: &TransmissionSpec, size: usize, seed: u64) -> Vec<BitSequence> {
    let b = tx.sequence_length;
    if tx.p1 == 0.5 && b < 63 && (1u64 << b) <= size as u64 {
        (0..1u64 << b).map(|v| BitSequence::from_index(v, b)).collect()
    } else {
        random_ensemble(tx.p1, b, size, seed)
    }
}

fn prepare_detectors(
    case: &BerCase,
    cfg: &ResolvedConfig,
    opts: &RunOptions,
    samples: usize,
    ensemble: &[BitSequence],
) -> Result<Vec<PreparedDetector>> {
    let mut tx = case.transmission.clone();
    tx.sample_offsets = uniform_offsets(tx.bit_interval, samples);
    let model = SignalModel::new(case.environment.clone(), tx, cfg.analysis.degradation_mode)?;
    let b = case.transmission.sequence_length;
    let mut out = Vec::new();
    for &kind in &opts.detectors {
        let weights = match kind {
            DetectorKind::Ml => {
                let spec = ViterbiSpec::new(&model, cfg.analysis.memory.min(b), b)?;
                out.push(PreparedDetector { kind, detector: Box::new(spec), threshold: None, analytic: None });
                continue;
            }
            DetectorKind::Matched => matched_filter_weights(&model),
            DetectorKind::Equal => equal_weights(samples),
            DetectorKind::Custom => {
                let w = opts.custom_weights.clone().expect("validated");
                if w.len() != samples {
                    return Err(Error::config("--weights", format!("{} weights for M = {samples}", w.len())));
                }
                w
            }
        };
        let analytic = AnalyticEnsemble::new(&model, ensemble, &weights, TailMethod::Auto)?;
        let candidates = threshold_candidates(&model, &weights, b, cfg.analysis.threshold_step)?;
        let errors = analytic.average_errors(&candidates);
        let mut best = 0;
        for (i, &e) in errors.iter().enumerate() {
            if e < errors[best] {
                best = i;
            }
        }
        let threshold = candidates[best];
        let report = analytic.report(threshold);
        out.push(PreparedDetector {
            kind,
            detector: Box::new(WeightedSumSpec::new(weights, threshold)?),
            threshold: Some(threshold),
            analytic: Some(report),
        });
    }
    Ok(out)
}

/// Simulates one case on the union of all sampling grids and scores every
/// detector at every `M` on the same realizations.
pub fn run_ber_case(
    case: &BerCase,
    cfg: &ResolvedConfig,
    samples: &[usize],
    opts: &RunOptions,
    trace: Option<&mut dyn Write>,
) -> Result<BerCaseResult> {
    if samples.is_empty() {
        return Err(Error::config("sweep.samples", "no sample count survives the spacing cap"));
    }
    let union = samples.iter().fold(1, |acc, &m| acc / gcd(acc, m) * m);
    let mut tx_union = case.transmission.clone();
    tx_union.sample_offsets = uniform_offsets(tx_union.bit_interval, union);
    let n = opts.realizations(cfg.simulation.realization_count);
    let mut sim_cfg = cfg.simulation.clone();
    sim_cfg.realization_count = n;
    let sim = Simulator::new(&case.environment, &tx_union, &sim_cfg).map_err(|e| {
        Error::config(
            format!("sweep.cases.{}", case.label),
            format!("union grid of M = {samples:?} ({union} samples per interval): {e}"),
        )
    })?;
    let seed = sim_cfg.master_seed;
    let b = tx_union.sequence_length;
    let ensemble = analysis_ensemble(&tx_union, cfg.analysis.ensemble_size, seed);

    let mut columns = Vec::new();
    let mut detectors = Vec::new();
    for &m in samples {
        columns.push((1..=m).map(|k| k * union / m - 1).collect::<Vec<_>>());
        detectors.push(prepare_detectors(case, cfg, opts, m, &ensemble)?);
    }
    let slots: usize = detectors.iter().map(Vec::len).sum();

    let observe = |i: u64| -> Result<(BitSequence, ObservationMatrix)> {
        let truth = random_sequence(tx_union.p1, b, seed, i);
        let clean = sim.run_realization(&truth, i)?;
        Ok((truth, inject_noise(&clean, &tx_union, seed, i)))
    };
    let tallies = fold_realizations(
        n,
        opts.execution,
        || vec![BerTally::new(b); slots],
        |acc, i| {
            let (truth, obs) = observe(i)?;
            let mut slot = 0;
            for (cols, dets) in columns.iter().zip(&detectors) {
                let sub = obs.select_columns(cols)?;
                for d in dets {
                    acc[slot].add(&truth, &d.detector.detect(&sub)?)?;
                    slot += 1;
                }
            }
            Ok(())
        },
        |acc, part| acc.iter_mut().zip(&part).for_each(|(a, p)| a.merge(p)),
    )?;

    if let Some(w) = trace {
        let limit = opts.trace.unwrap_or(0).min(n);
        for i in 0..limit {
            let (_, obs) = observe(i)?;
            write_trace(w, &tx_union, i, &obs).map_err(|e| Error::io("trace", e))?;
        }
    }

    let mut points = Vec::new();
    let mut slot = 0;
    for (&m, dets) in samples.iter().zip(&detectors) {
        for d in dets {
            let mc = tallies[slot].report();
            slot += 1;
            points.push(CurvePoint {
                case: case.label.clone(),
                x0_m: case.environment.receiver_distance,
                samples: m,
                detector: d.kind,
                threshold: d.threshold,
                pe_analytic: d.analytic.as_ref().map(|r| r.average),
                pe_mc: mc.average,
                ci95: mc.ci95.unwrap_or(0.0),
                transmissions: tallies[slot - 1].transmissions(),
                analytic_report: d.analytic.clone(),
                mc_report: Some(mc),
            });
        }
    }
    Ok(BerCaseResult { label: case.label.clone(), samples: samples.to_vec(), realizations: n, points })
}

/// Every case of a BER experiment, without writing anything.
pub fn compute_ber(cfg: &ResolvedConfig, id: ExperimentId, opts: &RunOptions) -> Result<BerResult> {
    let (samples, dropped) = sample_counts(cfg, id);
    if !dropped.is_empty() {
        warn!("M = {dropped:?} dropped: samples would be closer than the minimum spacing");
    }
    let cases = resolve_cases(cfg, id)?
        .iter()
        .map(|case| {
            info!("case {}", case.label);
            run_ber_case(case, cfg, &samples, opts, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BerResult { experiment: id, samples, dropped_samples: dropped, cases })
}

fn write_ber(out: &mut Output, result: &BerResult) -> Result<()> {
    out.write("curves.csv", |w| {
        writeln!(w, "case,x0_m,samples,detector,threshold,pe_analytic,pe_mc,ci95,transmissions")?;
        for p in result.cases.iter().flat_map(|c| &c.points) {
            writeln!(
                w,
                "{},{:e},{},{},{},{},{:e},{:e},{}",
                p.case,
                p.x0_m,
                p.samples,
                p.detector,
                opt_cell(p.threshold),
                opt_cell(p.pe_analytic),
                p.pe_mc,
                p.ci95,
                p.transmissions
            )?;
        }
        Ok(())
    })?;
    out.write("per_interval.csv", |w| {
        writeln!(w, "case,samples,detector,j,pe_analytic,pe_mc,ci95")?;
        for p in result.cases.iter().flat_map(|c| &c.points) {
            let Some(mc) = &p.mc_report else { continue };
            for (j, (&pe, &ci)) in mc.per_bit.iter().zip(&mc.per_bit_ci95).enumerate() {
                let a = p.analytic_report.as_ref().and_then(|r| r.per_bit.get(j).copied());
                writeln!(w, "{},{},{},{},{},{:e},{:e}", p.case, p.samples, p.detector, j + 1, opt_cell(a), pe, ci)?;
            }
        }
        Ok(())
    })
}

// ------------------------------------------------------------------ driver

/// Resolves the configuration of `spec`, runs the experiment and writes its
/// result files. `version` goes into the manifest.
pub fn run_experiment(spec: &ExperimentSpec, version: &str) -> Result<RunOutcome> {
    let cfg = resolve_config(spec)?;
    run_resolved(spec, &cfg, version)
}

/// [`run_experiment`] with an already resolved configuration.
pub fn run_resolved(spec: &ExperimentSpec, cfg: &ResolvedConfig, version: &str) -> Result<RunOutcome> {
    let started_unix_s = unix_now();
    let clock = Instant::now();
    let opts = &spec.options;
    let mut out = Output::new(&spec.out_dir)?;
    let mut notes = Vec::new();
    let realizations = opts.realizations(cfg.simulation.realization_count);
    info!("{} with {realizations} realizations", spec.id);

    let summary = match spec.id {
        ExperimentId::Impulse => {
            let r = compute_impulse(cfg, opts)?;
            write_impulse(&mut out, &r)?;
            if let Some(limit) = opts.trace {
                let mut tx = cfg.transmission.clone();
                tx.sequence_length = 1;
                let sim = Simulator::new(&cfg.environment, &tx, &cfg.simulation)?;
                out.write("trace.csv", |w| {
                    writeln!(w, "{TRACE_HEADER}")?;
                    for i in 0..limit.min(realizations) {
                        let obs = sim.run_realization(&BitSequence::ones(1), i).map_err(std::io::Error::other)?;
                        let obs = inject_noise(&obs, &tx, cfg.simulation.master_seed, i);
                        write_trace(w, &tx, i, &obs)?;
                    }
                    Ok(())
                })?;
            }
            serde_json::json!({
                "peak_time_s": r.peak_time_s,
                "peak_count": r.peak_count,
                "peak_grid_point": r.peak_grid_point,
                "realizations": r.realizations,
            })
        }
        ExperimentId::MiSweep => {
            let r = compute_mi(cfg, opts)?;
            write_mi(&mut out, &r)?;
            if !cfg.transmission.noise.is_zero() {
                notes.push("additive noise is not part of the observation-dependence model and was ignored".into());
            }
            serde_json::json!({
                "trials": r.trials,
                "mi_floor_bits": MI_FLOOR_BITS,
                "settles_below_floor": r.settles_below_floor.iter()
                    .map(|(t1, lag)| serde_json::json!({"t1_s": t1, "to_s": lag}))
                    .collect::<Vec<_>>(),
            })
        }
        id => {
            let (samples, dropped) = sample_counts(cfg, id);
            if !dropped.is_empty() {
                let note = format!(
                    "M = {dropped:?} dropped: fewer than {:e} s between samples",
                    cfg.sweep.min_spacing.unwrap_or_else(|| default_min_spacing(id))
                );
                warn!("{note}");
                notes.push(note);
            }
            let mut cases = Vec::new();
            for case in resolve_cases(cfg, id)? {
                info!("case {}", case.label);
                let result = if opts.trace.is_some() {
                    let name = format!("trace_{}.csv", case.label);
                    let mut buf = Vec::new();
                    writeln!(buf, "{TRACE_HEADER}").map_err(|e| Error::io(&name, e))?;
                    let r = run_ber_case(&case, cfg, &samples, opts, Some(&mut buf))?;
                    out.write(&name, |w| w.write_all(&buf))?;
                    r
                } else {
                    run_ber_case(&case, cfg, &samples, opts, None)?
                };
                cases.push(result);
            }
            let r = BerResult { experiment: id, samples, dropped_samples: dropped, cases };
            write_ber(&mut out, &r)?;
            serde_json::to_value(&r).map_err(|e| Error::Parse(e.to_string()))?
        }
    };
    out.json("summary.json", &summary)?;

    let wall_time_s = clock.elapsed().as_secs_f64();
    let mut outputs: Vec<String> =
        out.files.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "molcomm".into(),
        version: version.into(),
        experiment: spec.id,
        seed: cfg.simulation.master_seed,
        scale: opts.scale,
        realizations,
        parallel: opts.execution == Execution::Parallel && Execution::available(),
        config_path: spec.config_path.clone(),
        config: cfg.clone(),
        started_unix_s,
        wall_time_s,
        outputs,
        notes,
    };
    out.json("manifest.json", &manifest)?;
    Ok(RunOutcome { files: out.files, summary, wall_time_s })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.as_str().parse::<ExperimentId>().unwrap(), id);
        }
        assert_eq!("isi".parse::<ExperimentId>().unwrap(), ExperimentId::BerIsi);
        assert_eq!("mi".parse::<ExperimentId>().unwrap(), ExperimentId::MiSweep);
        assert!("fig9".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn defaults_validate() {
        for id in ExperimentId::ALL {
            default_config(id).validate().unwrap();
            let (kept, _) = sample_counts(&default_config(id), id);
            assert!(!kept.is_empty());
        }
    }

    #[test]
    fn spacing_cap() {
        let mut cfg = default_config(ExperimentId::BerEnzyme);
        cfg.sweep.samples = Some(vec![1, 10, 20, 25, 50]);
        let (kept, dropped) = sample_counts(&cfg, ExperimentId::BerEnzyme);
        assert_eq!(kept, vec![1, 10, 20]);
        assert_eq!(dropped, vec![25, 50]);
    }

    #[test]
    fn golden_section_finds_parabola_top() {
        let x = golden_max(|x| -(x - 0.3f64).powi(2), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn options_are_checked() {
        let mut o = RunOptions { scale: 0.0, ..RunOptions::default() };
        assert!(o.validate().is_err());
        o.scale = 1.0;
        o.detectors = vec![DetectorKind::Custom];
        assert!(o.validate().is_err());
        o.custom_weights = Some(vec![1.0, 2.0]);
        o.samples = Some(3);
        assert!(o.validate().is_err());
        o.samples = None;
        assert!(o.validate().is_ok());
    }

    #[test]
    fn distance_override_moves_enzyme_box() {
        let cfg = default_config(ExperimentId::BerDistance);
        let cases = resolve_cases(&cfg, ExperimentId::BerDistance).unwrap();
        assert_eq!(cases.len(), 4);
        let far = &cases[3].environment;
        assert_eq!(far.receiver_distance, 500e-9);
        assert_eq!(far.enzyme_volume, default_enzyme_volume(500e-9));
    }

    #[test]
    fn small_ber_run_is_reproducible() {
        let mut cfg = default_config(ExperimentId::BerIsi);
        cfg.transmission.sequence_length = 6;
        cfg.transmission.molecules_per_one = 500;
        cfg.simulation.realization_count = 8;
        cfg.analysis.ensemble_size = 64;
        cfg.sweep.samples = Some(vec![2, 5]);
        let opts = RunOptions::default();
        let a = compute_ber(&cfg, ExperimentId::BerIsi, &opts).unwrap();
        let seq = RunOptions { execution: Execution::Sequential, ..opts };
        let b = compute_ber(&cfg, ExperimentId::BerIsi, &seq).unwrap();
        assert_eq!(a, b);
        let case = &a.cases[0];
        assert_eq!(case.points.len(), 2 * 3);
        for p in &case.points {
            assert_eq!(p.transmissions, 8 * 6);
            assert!((0.0..=1.0).contains(&p.pe_mc));
        }
        assert!(case.point(5, DetectorKind::Matched).unwrap().threshold.is_some());
        assert!(case.point(5, DetectorKind::Ml).unwrap().pe_analytic.is_none());
    }
}
