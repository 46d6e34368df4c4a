//! Experiment configuration, presets and report writing.
//!
//! A run is described by one TOML document resolved as
//! `base <- preset <- user file <- command-line overrides`. Tables merge key
//! by key, except that a table whose `mode` differs from the one it
//! overrides is replaced whole. Unknown keys are rejected.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::afc::{
    build_comb, echo_trace, fit_stretched_exponential, memory_timeline, spinwave_excitation,
    CombConfig, CombSpectrum, EchoTrace, EfficiencyBreakdown, MemoryModel, MemoryTimeline,
    StretchedExp,
};
use crate::detection::{
    calibrate_residual_coupling, mu1, noise_probability, qubit_fidelity, simulate_run,
    snr_analytic, Estimate, GateConfig, NoiseModel, RunStatistics,
};
use crate::ensemble::{BlochVector, DetuningDistribution, LineShape, SpinEnsemble};
use crate::error::Error;
use crate::pulses::{
    integrate_bloch, inversion_error_profile, AdiabaticPulseSpec, ChirpEnvelope, ErrorProfile,
    IntegratorConfig, InversionPulse, PulseSpec,
};
use crate::seeds;
use crate::sequences::{
    build_sequence, calibrate_systematic_error, sequence_population_error, thermalization_curve,
    thermalization_monte_carlo, write_thermalization_csv, MonteCarloCurve, SequenceKind,
    ThermalizationCurve,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides `output_dir` (but not `--out`).
pub const OUT_DIR_ENV: &str = "AFCSIM_OUT_DIR";

const BASE: &str = include_str!("../presets/base.toml");

const PRESETS: [(&str, &str); 7] = [
    ("adiabatic", include_str!("../presets/adiabatic.toml")),
    ("fig1d", include_str!("../presets/fig1d.toml")),
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2b", include_str!("../presets/fig2b.toml")),
    ("fig2c", include_str!("../presets/fig2c.toml")),
    ("pole_phase", include_str!("../presets/pole_phase.toml")),
    ("table1", include_str!("../presets/table1.toml")),
];

/// Number of samples in the exported echo trace, spanning [0, 2/Delta].
const ECHO_TRACE_SAMPLES: usize = 2001;

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

pub fn base_source() -> &'static str {
    BASE
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Thermalization,
    Storage,
    Inversion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Option<String>,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub format: OutputFormat,
    pub output_dir: PathBuf,
    pub run: RunConfig,
    pub ensemble: EnsembleConfig,
    pub pulse: PulseConfig,
    pub sequence: SequenceConfig,
    pub thermalization: ThermalizationConfig,
    pub comb: CombConfig,
    pub memory: MemoryConfig,
    pub noise: NoiseConfig,
    pub gate: GateConfig,
    pub timeline: TimelineConfig,
    pub adiabatic: AdiabaticConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Mean input photon number per mode.
    pub mu: f64,
    /// Spin storage times, seconds; one report row per value and mode.
    pub t_s: Vec<f64>,
    pub trials: u64,
    pub modes: usize,
    /// Probability that a qubit is present before the memory.
    pub qubit_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub shape: LineShape,
    pub fwhm: f64,
    /// Spins in Monte Carlo ensembles.
    pub spins: usize,
}

impl EnsembleConfig {
    pub fn line(&self) -> DetuningDistribution {
        DetuningDistribution {
            shape: self.shape,
            fwhm: self.fwhm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub jitter_sd: f64,
    /// Finite drive strength, Hz; absent means a hard pulse.
    #[serde(default)]
    pub rabi_frequency: Option<f64>,
    pub calibration: PulseCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseCalibration {
    /// Use the given fractional angle error.
    Fixed { systematic_error: f64 },
    /// Choose the error so one XX sequence of length `t_s` moves `target`
    /// population on resonance.
    XxError { target: f64, t_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageSequence {
    None,
    Xx,
    Xy4,
    Xy8,
    Kdd,
}

impl StorageSequence {
    pub fn kind(&self) -> Option<SequenceKind> {
        match self {
            StorageSequence::None => None,
            StorageSequence::Xx => Some(SequenceKind::Xx),
            StorageSequence::Xy4 => Some(SequenceKind::Xy4),
            StorageSequence::Xy8 => Some(SequenceKind::Xy8),
            StorageSequence::Kdd => Some(SequenceKind::Kdd),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub kind: StorageSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalizationConfig {
    pub kinds: Vec<SequenceKind>,
    pub n_max: usize,
    /// Length of one sequence, seconds.
    pub t_s: f64,
    /// Polar angle of the starting spins away from |s>, radians, with random
    /// azimuth per spin.
    pub initial_tilt: f64,
    /// Scramble each spin's phase between passes.
    pub randomize_frames: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Probability that an input photon ends up as a spin excitation.
    pub write_stage: f64,
    pub line_samples: usize,
    #[serde(default)]
    pub t2: Option<f64>,
    pub calibration: MemoryCalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemoryCalibration {
    /// Fixed readout loss, no spin decay.
    None { readout_loss: f64 },
    /// Readout loss chosen so that eta(t_s) equals `eta`.
    Target { t_s: f64, eta: f64 },
    /// Readout loss and a stretched-exponential spin decay fitted to
    /// measured (t_s, eta) points.
    Fit { points: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub optical_readout_noise: f64,
    /// Population left in |g> per storage sequence.
    pub residual_population: f64,
    /// Noise that `residual_population` should contribute; sets beta.
    pub noise_floor: f64,
    /// Added RF noise beyond the floor.
    pub extra_rf_noise: f64,
    pub detector_dark: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineConfig {
    pub mode_duration: f64,
    pub dead_time_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdiabaticConfig {
    pub peak_rabi: f64,
    pub chirp_span: f64,
    pub duration: f64,
    pub envelope: ChirpEnvelope,
    /// Detuning grid points across +-2 FWHM.
    pub samples: usize,
    /// Rabi frequency of the rectangular pi pulse used for comparison.
    pub compare_rabi: f64,
}

impl AdiabaticConfig {
    pub fn spec(&self) -> AdiabaticPulseSpec {
        AdiabaticPulseSpec {
            peak_rabi: self.peak_rabi,
            chirp_span: self.chirp_span,
            duration: self.duration,
            envelope: self.envelope,
        }
    }
}

/// Command-line values applied on top of the resolved document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub trials: Option<u64>,
    pub spins: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(t) = self.trials {
            cfg.run.trials = t;
        }
        if let Some(n) = self.spins {
            cfg.ensemble.spins = n;
        }
    }
}

// ---------------------------------------------------------------------------
// Errors and diagnostics

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    /// Dotted config path, e.g. `comb.finesse`.
    pub field: String,
    pub message: String,
    /// 1-based line in the user file, when the key appears there.
    pub line: Option<usize>,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown preset `{name}`; valid presets: {}", valid.join(", "))]
    UnknownPreset {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Diagnostic>),

    #[error(transparent)]
    Simulation(#[from] Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn list(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for capacity, domain and calibration
    /// failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::UnknownPreset { .. }
            | ExperimentError::Parse { .. }
            | ExperimentError::Invalid(_)
            | ExperimentError::Simulation(Error::InvalidArgument(_)) => 2,
            ExperimentError::Simulation(_) => 3,
            ExperimentError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Loading

fn parse_table(origin: &str, text: &str) -> Result<toml::Table, ExperimentError> {
    text.parse::<toml::Table>()
        .map_err(|e| ExperimentError::Parse {
            origin: origin.to_string(),
            message: e.to_string().trim_end().to_string(),
        })
}

/// Deep merge; a table is replaced whole when both sides carry a different
/// `mode`.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let switched = matches!(
                    (b.get("mode"), o.get("mode")),
                    (Some(x), Some(y)) if x != y
                );
                if switched {
                    *b = o;
                } else {
                    merge(b, o);
                }
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table, ExperimentError> {
    let src = preset_source(name).ok_or_else(|| ExperimentError::UnknownPreset {
        name: name.to_string(),
        valid: preset_names(),
    })?;
    parse_table(&format!("preset {name}"), src)
}

/// Builds the config from the base defaults, an optional preset and an
/// optional user document. A `preset` key in the user document selects the
/// preset when `preset` is `None`.
pub fn resolve(
    preset: Option<&str>,
    user: Option<(&str, &str)>,
) -> Result<ExperimentConfig, ExperimentError> {
    let mut doc = parse_table("base", BASE)?;
    let user_table = user
        .map(|(origin, text)| parse_table(origin, text))
        .transpose()?;
    let from_user = match user_table.as_ref().and_then(|t| t.get("preset")) {
        None => None,
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(ExperimentError::Invalid(vec![Diagnostic {
                field: "preset".into(),
                message: "must be a preset name".into(),
                line: user.and_then(|u| locate(u.1, "preset")),
            }]))
        }
    };
    let name = preset.map(str::to_string).or(from_user);
    if let Some(name) = &name {
        merge(&mut doc, preset_table(name)?);
        doc.insert("preset".into(), toml::Value::String(name.clone()));
    }
    if let Some(t) = user_table {
        merge(&mut doc, t);
    }

    let mut unknown = Vec::new();
    let parsed: Result<ExperimentConfig, toml::de::Error> =
        serde_ignored::deserialize(toml::Value::Table(doc), |path| {
            unknown.push(path.to_string())
        });
    let source = user.map(|u| u.1);
    if !unknown.is_empty() {
        return Err(ExperimentError::Invalid(
            unknown
                .into_iter()
                .map(|field| Diagnostic {
                    line: source.and_then(|s| locate(s, &field)),
                    message: "unknown key".into(),
                    field,
                })
                .collect(),
        ));
    }
    parsed.map_err(|e| ExperimentError::Parse {
        origin: user.map_or("config", |u| u.0).to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// Resolves `target` (a config file path or a preset name), applies the
/// overrides and validates.
pub fn load(target: &str, overrides: &Overrides) -> Result<ExperimentConfig, ExperimentError> {
    let path = Path::new(target);
    let looks_like_file =
        path.is_file() || target.ends_with(".toml") || target.contains(std::path::MAIN_SEPARATOR);
    let text;
    let (mut cfg, source) = if looks_like_file {
        text = fs::read_to_string(path).map_err(|e| ExperimentError::Parse {
            origin: target.to_string(),
            message: e.to_string(),
        })?;
        (resolve(None, Some((target, &text)))?, Some(text.as_str()))
    } else {
        (resolve(Some(target), None)?, None)
    };
    overrides.apply(&mut cfg);
    let mut diags = validate_config(&cfg);
    if !diags.is_empty() {
        if let Some(src) = source {
            for d in &mut diags {
                d.line = locate(src, &d.field);
            }
        }
        return Err(ExperimentError::Invalid(diags));
    }
    Ok(cfg)
}

/// Line of `field` (dotted path, optional `[i]` suffix) in a TOML source.
fn locate(source: &str, field: &str) -> Option<usize> {
    let field = field.split('[').next().unwrap_or(field);
    let mut table = String::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            table = h.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if table == field {
                return Some(i + 1);
            }
            continue;
        }
        if let Some((k, _)) = t.split_once('=') {
            let k = k.trim();
            let full = if table.is_empty() {
                k.to_string()
            } else {
                format!("{table}.{k}")
            };
            if full == field {
                return Some(i + 1);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Validation

struct Checker(Vec<Diagnostic>);

impl Checker {
    fn check(&mut self, ok: bool, field: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.0.push(Diagnostic {
                field: field.to_string(),
                message: message(),
                line: None,
            });
        }
    }

    fn positive(&mut self, v: f64, field: &str, name: &str) {
        self.check(v > 0.0 && v.is_finite(), field, || {
            format!("{name} must be > 0 (got {v})")
        });
    }

    fn non_negative(&mut self, v: f64, field: &str, name: &str) {
        self.check(v >= 0.0 && v.is_finite(), field, || {
            format!("{name} must be >= 0 (got {v})")
        });
    }

    fn probability(&mut self, v: f64, field: &str, name: &str) {
        self.check((0.0..=1.0).contains(&v), field, || {
            format!("{name} must lie in [0, 1] (got {v})")
        });
    }
}

/// Every violated constraint; an empty list means the config is runnable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut c = Checker(Vec::new());

    c.check(!cfg.output_dir.as_os_str().is_empty(), "output_dir", || {
        "output_dir must not be empty".into()
    });

    let run = &cfg.run;
    c.non_negative(run.mu, "run.mu", "run.mu");
    c.check(!run.t_s.is_empty(), "run.t_s", || {
        "run.t_s needs at least one value".into()
    });
    for (i, t) in run.t_s.iter().enumerate() {
        c.check(*t > 0.0 && t.is_finite(), &format!("run.t_s[{i}]"), || {
            format!("DDSequence timing: t_s must be > 0 (got {t})")
        });
    }
    c.check(run.trials >= 1, "run.trials", || {
        "run.trials must be >= 1".into()
    });
    c.check(run.modes >= 1, "run.modes", || {
        "run.modes must be >= 1".into()
    });
    c.check(
        run.qubit_probability > 0.0 && run.qubit_probability <= 1.0,
        "run.qubit_probability",
        || {
            format!(
                "run.qubit_probability must lie in (0, 1] (got {})",
                run.qubit_probability
            )
        },
    );

    c.positive(
        cfg.ensemble.fwhm,
        "ensemble.fwhm",
        "DetuningDistribution.fwhm",
    );
    c.check(cfg.ensemble.spins >= 1, "ensemble.spins", || {
        "ensemble.spins must be >= 1".into()
    });

    c.non_negative(
        cfg.pulse.jitter_sd,
        "pulse.jitter_sd",
        "PulseSpec.jitter_sd",
    );
    if let Some(r) = cfg.pulse.rabi_frequency {
        c.positive(r, "pulse.rabi_frequency", "PulseSpec.rabi_frequency");
    }
    match cfg.pulse.calibration {
        PulseCalibration::Fixed { systematic_error } => c.check(
            systematic_error.is_finite() && systematic_error > -1.0,
            "pulse.calibration.systematic_error",
            || {
                format!(
                    "PulseSpec.systematic_error must be finite and > -1 (got {systematic_error})"
                )
            },
        ),
        PulseCalibration::XxError { target, t_s } => {
            c.check(
                (0.0..=0.5).contains(&target),
                "pulse.calibration.target",
                || format!("calibration target must lie in [0, 0.5] (got {target})"),
            );
            c.check(
                t_s > 0.0 && t_s.is_finite(),
                "pulse.calibration.t_s",
                || format!("DDSequence timing: t_s must be > 0 (got {t_s})"),
            );
        }
    }

    let th = &cfg.thermalization;
    c.check(!th.kinds.is_empty(), "thermalization.kinds", || {
        "thermalization.kinds needs at least one sequence".into()
    });
    c.check(
        !th.kinds.contains(&SequenceKind::Custom),
        "thermalization.kinds",
        || "custom sequences cannot be named in a config".into(),
    );
    c.check(th.n_max >= 1, "thermalization.n_max", || {
        "thermalization.n_max must be >= 1".into()
    });
    c.check(
        th.t_s > 0.0 && th.t_s.is_finite(),
        "thermalization.t_s",
        || format!("DDSequence timing: t_s must be > 0 (got {})", th.t_s),
    );
    c.check(
        (0.0..=std::f64::consts::PI).contains(&th.initial_tilt),
        "thermalization.initial_tilt",
        || format!("initial_tilt must lie in [0, pi] (got {})", th.initial_tilt),
    );

    for (name, message) in cfg.comb.diagnostics() {
        c.0.push(Diagnostic {
            field: format!("comb.{name}"),
            message,
            line: None,
        });
    }

    let m = &cfg.memory;
    c.probability(m.write_stage, "memory.write_stage", "memory.write_stage");
    c.check(m.line_samples >= 1, "memory.line_samples", || {
        "memory.line_samples must be >= 1".into()
    });
    if let Some(t2) = m.t2 {
        c.positive(t2, "memory.t2", "memory.t2");
    }
    match &m.calibration {
        MemoryCalibration::None { readout_loss } => c.probability(
            *readout_loss,
            "memory.calibration.readout_loss",
            "MemoryModel.readout_loss",
        ),
        MemoryCalibration::Target { t_s, eta } => {
            c.check(
                *t_s > 0.0 && t_s.is_finite(),
                "memory.calibration.t_s",
                || format!("DDSequence timing: t_s must be > 0 (got {t_s})"),
            );
            c.check(*eta > 0.0 && *eta <= 1.0, "memory.calibration.eta", || {
                format!("target efficiency must lie in (0, 1] (got {eta})")
            });
        }
        MemoryCalibration::Fit { points } => {
            c.check(points.len() >= 3, "memory.calibration.points", || {
                format!("a decay fit needs >= 3 points (got {})", points.len())
            });
            for (i, [t, eta]) in points.iter().enumerate() {
                c.check(
                    *t > 0.0 && *eta > 0.0 && *eta <= 1.0,
                    &format!("memory.calibration.points[{i}]"),
                    || format!("fit points need t_s > 0 and eta in (0, 1] (got [{t}, {eta}])"),
                );
            }
        }
    }

    let n = &cfg.noise;
    c.probability(
        n.optical_readout_noise,
        "noise.optical_readout_noise",
        "NoiseModel.optical_readout_noise",
    );
    c.check(
        (0.0..=0.5).contains(&n.residual_population),
        "noise.residual_population",
        || {
            format!(
                "residual population must lie in [0, 0.5] (got {})",
                n.residual_population
            )
        },
    );
    c.probability(n.noise_floor, "noise.noise_floor", "noise.noise_floor");
    c.check(
        n.noise_floor == 0.0 || n.residual_population > 0.0,
        "noise.residual_population",
        || "a non-zero noise_floor needs residual_population > 0 to set the coupling".into(),
    );
    c.probability(
        n.extra_rf_noise,
        "noise.extra_rf_noise",
        "NoiseModel.extra_rf_noise",
    );
    c.probability(
        n.detector_dark,
        "noise.detector_dark",
        "NoiseModel.detector_dark",
    );
    c.check(
        n.optical_readout_noise + n.noise_floor + n.extra_rf_noise + n.detector_dark <= 1.0,
        "noise",
        || "noise contributions must sum to <= 1".into(),
    );

    let g = &cfg.gate;
    c.positive(g.bin_width, "gate.bin_width", "GateConfig.bin_width");
    c.check(g.n_bins >= 1, "gate.n_bins", || {
        "GateConfig.n_bins must be >= 1".into()
    });
    c.positive(
        g.signal_width,
        "gate.signal_width",
        "GateConfig.signal_width",
    );

    c.positive(
        cfg.timeline.mode_duration,
        "timeline.mode_duration",
        "timeline.mode_duration",
    );
    c.check(
        (0.0..1.0).contains(&cfg.timeline.dead_time_fraction),
        "timeline.dead_time_fraction",
        || {
            format!(
                "dead_time_fraction must lie in [0, 1) (got {})",
                cfg.timeline.dead_time_fraction
            )
        },
    );

    let a = &cfg.adiabatic;
    c.non_negative(
        a.peak_rabi,
        "adiabatic.peak_rabi",
        "AdiabaticPulseSpec.peak_rabi",
    );
    c.positive(
        a.chirp_span,
        "adiabatic.chirp_span",
        "AdiabaticPulseSpec.chirp_span",
    );
    c.positive(
        a.duration,
        "adiabatic.duration",
        "AdiabaticPulseSpec.duration",
    );
    c.check(a.samples >= 3, "adiabatic.samples", || {
        "adiabatic.samples must be >= 3".into()
    });
    c.positive(
        a.compare_rabi,
        "adiabatic.compare_rabi",
        "adiabatic.compare_rabi",
    );

    c.0
}

// ---------------------------------------------------------------------------
// Pipelines

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseCalibrationReport {
    pub systematic_error: f64,
    /// Population moved by one XX sequence on resonance with this error.
    pub xx_error_per_sequence: f64,
}

/// The pi-pulse template for every sequence in the run.
pub fn pulse_template(
    cfg: &ExperimentConfig,
) -> crate::Result<(PulseSpec, PulseCalibrationReport)> {
    let mut base = PulseSpec::pi(0.0).with_jitter(cfg.pulse.jitter_sd);
    if let Some(r) = cfg.pulse.rabi_frequency {
        base = base.with_rabi_frequency(r);
    }
    let (eps, t_xx) = match cfg.pulse.calibration {
        PulseCalibration::Fixed { systematic_error } => (systematic_error, cfg.thermalization.t_s),
        PulseCalibration::XxError { target, t_s } => (
            calibrate_systematic_error(SequenceKind::Xx, t_s, &base, target, 0.0)?,
            t_s,
        ),
    };
    let pulse = base.with_systematic_error(eps);
    let xx = build_sequence(SequenceKind::Xx, t_xx, &pulse)?;
    Ok((
        pulse,
        PulseCalibrationReport {
            systematic_error: eps,
            xx_error_per_sequence: sequence_population_error(&xx, 0.0),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveResult {
    pub kind: SequenceKind,
    /// Population moved by one pass on resonance.
    pub error_per_sequence: f64,
    pub closed_form: ThermalizationCurve,
    pub monte_carlo: MonteCarloCurve,
}

/// Closed-form and Monte Carlo thermalization curves for every configured
/// sequence kind, on a resonant ensemble of `ensemble.spins` spins.
pub fn thermalization_pipeline(
    cfg: &ExperimentConfig,
    pulse: &PulseSpec,
) -> crate::Result<Vec<CurveResult>> {
    let th = &cfg.thermalization;
    th.kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            let seq = build_sequence(*kind, th.t_s, pulse)?;
            let eps = sequence_population_error(&seq, 0.0);
            let seed = seeds::derive(cfg.seed, seeds::STREAM_CURVES, k as u64);
            let mut ens = SpinEnsemble::resonant(cfg.ensemble.spins)?;
            if th.initial_tilt > 0.0 {
                ens = ens.with_random_tilt(th.initial_tilt, seed);
            }
            Ok(CurveResult {
                kind: *kind,
                error_per_sequence: eps,
                closed_form: thermalization_curve(eps, th.n_max)?,
                monte_carlo: thermalization_monte_carlo(
                    &ens,
                    &seq,
                    th.n_max,
                    seed,
                    th.randomize_frames,
                )?,
            })
        })
        .collect()
}

/// Table-1 style row. Estimates come from the photon-counting simulation;
/// `*_model` columns are the analytic values it samples from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub t_s: f64,
    pub mode: usize,
    pub eta: Option<Estimate>,
    pub p_n: Estimate,
    pub mu1: Option<Estimate>,
    pub snr: Estimate,
    pub eta_model: f64,
    pub p_n_model: f64,
    pub snr_model: f64,
    pub mu1_model: f64,
    pub fidelity: f64,
    pub quantum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryCalibrationReport {
    pub conversion_efficiency: f64,
    pub readout_loss: f64,
    /// Fitted effective spin decay; a calibration artifact, not a prediction.
    pub spin_decay: Option<StretchedExp>,
    pub residual_coupling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StorageResult {
    pub calibration: MemoryCalibrationReport,
    pub spinwave_excitation: f64,
    pub breakdowns: Vec<(f64, EfficiencyBreakdown)>,
    pub timelines: Vec<MemoryTimeline>,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunStatistics>,
    pub comb: CombSpectrum,
    pub echo: EchoTrace,
}

/// Builds and calibrates the memory model described by `cfg`.
pub fn memory_model(cfg: &ExperimentConfig, pulse: &PulseSpec) -> crate::Result<MemoryModel> {
    let m = &cfg.memory;
    let mut model = MemoryModel {
        comb: cfg.comb,
        conversion_efficiency: MemoryModel::conversion_for_write_stage(&cfg.comb, m.write_stage)?,
        spin_line: cfg.ensemble.line(),
        sequence_kind: cfg.sequence.kind.kind(),
        readout_loss: 0.0,
        spin_decay: None,
        t2: m.t2,
        line_samples: m.line_samples,
    };
    match &m.calibration {
        MemoryCalibration::None { readout_loss } => model.readout_loss = *readout_loss,
        MemoryCalibration::Target { t_s, eta } => {
            model.readout_loss = model.calibrate_readout_loss(*t_s, pulse, *eta)?;
        }
        MemoryCalibration::Fit { points } => {
            // Divide out the modeled factors; what remains is (1 - loss) x decay.
            let residual = points
                .iter()
                .map(|[t, eta]| Ok((*t, eta / model.breakdown(*t, pulse)?.eta)))
                .collect::<crate::Result<Vec<_>>>()?;
            let (amplitude, decay) = fit_stretched_exponential(&residual)?;
            let loss = 1.0 - amplitude;
            if !(0.0..=1.0).contains(&loss) {
                return Err(Error::Calibration(format!(
                    "fitted readout transmission {amplitude:.4} is outside [0, 1]"
                )));
            }
            model.readout_loss = loss;
            model.spin_decay = Some(decay);
        }
    }
    Ok(model)
}

pub fn storage_pipeline(cfg: &ExperimentConfig, pulse: &PulseSpec) -> crate::Result<StorageResult> {
    let model = memory_model(cfg, pulse)?;
    let n = &cfg.noise;
    let beta = if n.noise_floor > 0.0 {
        calibrate_residual_coupling(n.residual_population, n.noise_floor)?
    } else {
        0.0
    };
    // Residual population and the extra RF noise only exist with RF pulses.
    let rf = model.sequence_kind.is_some();
    let noise = NoiseModel {
        optical_readout_noise: n.optical_readout_noise,
        residual_coupling: beta,
        extra_rf_noise: if rf { n.extra_rf_noise } else { 0.0 },
        detector_dark: n.detector_dark,
    };
    let rho_err = if rf { n.residual_population } else { 0.0 };
    let p_n = noise_probability(&noise, rho_err)?;

    let run = &cfg.run;
    let mut out = StorageResult {
        calibration: MemoryCalibrationReport {
            conversion_efficiency: model.conversion_efficiency,
            readout_loss: model.readout_loss,
            spin_decay: model.spin_decay,
            residual_coupling: beta,
        },
        spinwave_excitation: spinwave_excitation(run.mu, &model)?,
        breakdowns: Vec::new(),
        timelines: Vec::new(),
        rows: Vec::new(),
        runs: Vec::new(),
        comb: build_comb(&cfg.comb)?,
        echo: echo_trace(
            &cfg.comb,
            0.0,
            2.0 / cfg.comb.periodicity,
            ECHO_TRACE_SAMPLES,
        )?,
    };
    for &t_s in &run.t_s {
        let timeline = memory_timeline(
            cfg.comb.periodicity,
            t_s,
            run.modes,
            cfg.timeline.mode_duration,
            cfg.timeline.dead_time_fraction,
        )?;
        let breakdown = model.breakdown(t_s, pulse)?;
        let eta = breakdown.eta;
        let snr_model = snr_analytic(run.mu, eta, p_n)?;
        let mu1_model = mu1(p_n, eta)?;
        let bound = qubit_fidelity(mu1_model, run.qubit_probability)?;
        for mode in 0..run.modes {
            let index = out.rows.len() as u64;
            let stats = simulate_run(
                run.mu,
                eta,
                p_n,
                run.trials,
                &cfg.gate,
                seeds::derive(cfg.seed, seeds::STREAM_RUNS, index),
            )?;
            out.rows.push(ReportRow {
                t_s,
                mode,
                eta: stats.eta,
                p_n: stats.p_n,
                mu1: stats.mu1,
                snr: stats.snr,
                eta_model: eta,
                p_n_model: p_n,
                snr_model,
                mu1_model,
                fidelity: bound.fidelity,
                quantum: bound.quantum,
            });
            out.runs.push(stats);
        }
        out.breakdowns.push((t_s, breakdown));
        out.timelines.push(timeline);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InversionResult {
    pub adiabaticity: f64,
    /// exp(-adiabaticity): Landau-Zener non-adiabatic transition probability.
    pub landau_zener_error: f64,
    /// |z(step) - z(step/2)| on resonance.
    pub richardson_drift: f64,
    pub adiabatic: ErrorProfile,
    pub rectangular: ErrorProfile,
}

pub fn inversion_pipeline(cfg: &ExperimentConfig) -> crate::Result<InversionResult> {
    let spec = cfg.adiabatic.spec();
    spec.validate()?;
    let icfg = IntegratorConfig::for_duration(spec.duration);
    let line = cfg.ensemble.line();
    let z = |c: &IntegratorConfig| integrate_bloch(BlochVector::S, &spec, 0.0, c).map(|b| b.z);
    let drift = (z(&icfg)? - z(&icfg.halved())?).abs();
    let rect = PulseSpec::pi(0.0).with_rabi_frequency(cfg.adiabatic.compare_rabi);
    Ok(InversionResult {
        adiabaticity: spec.adiabaticity(),
        landau_zener_error: (-spec.adiabaticity()).exp(),
        richardson_drift: drift,
        adiabatic: inversion_error_profile(
            &InversionPulse::Adiabatic(spec, icfg),
            &line,
            cfg.adiabatic.samples,
        )?,
        rectangular: inversion_error_profile(
            &InversionPulse::Instant(rect),
            &line,
            cfg.adiabatic.samples,
        )?,
    })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub kind: SequenceKind,
    pub error_per_sequence: f64,
    pub n_max: usize,
    pub rho_g_closed_form_final: f64,
    pub rho_g_monte_carlo_final: f64,
    pub rho_g_closed_form_at_50: Option<f64>,
    pub rho_g_monte_carlo_at_50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Results {
    Thermalization {
        curves: Vec<CurveSummary>,
        #[serde(skip_serializing_if = "Option::is_none")]
        data: Option<Vec<CurveResult>>,
    },
    Storage {
        calibration: MemoryCalibrationReport,
        spinwave_excitation: f64,
        breakdowns: Vec<(f64, EfficiencyBreakdown)>,
        timelines: Vec<MemoryTimeline>,
        rows: Vec<ReportRow>,
        echo_peak: (f64, f64),
        #[serde(skip_serializing_if = "Option::is_none")]
        histograms: Option<Vec<RunStatistics>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        comb: Option<CombSpectrum>,
        #[serde(skip_serializing_if = "Option::is_none")]
        echo: Option<EchoTrace>,
    },
    Inversion {
        adiabaticity: f64,
        landau_zener_error: f64,
        richardson_drift: f64,
        adiabatic_mean_error: f64,
        adiabatic_max_error: f64,
        rectangular_mean_error: f64,
        rectangular_max_error: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        data: Option<InversionResult>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report<'a> {
    pub schema_version: u32,
    pub preset: Option<&'a str>,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub config: &'a ExperimentConfig,
    pub pulse_calibration: PulseCalibrationReport,
    pub files: Vec<String>,
    pub results: Results,
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    ) -> Result<(), ExperimentError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(&path))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn write_rows<W: Write>(w: &mut W, rows: &[ReportRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "t_s,mode,eta,eta_stderr,p_n,p_n_stderr,mu1,mu1_stderr,snr,snr_stderr,\
         eta_model,p_n_model,snr_model,mu1_model,fidelity,quantum"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t_s,
            r.mode,
            opt(r.eta.map(|e| e.value)),
            opt(r.eta.map(|e| e.stderr)),
            r.p_n.value,
            r.p_n.stderr,
            opt(r.mu1.map(|e| e.value)),
            opt(r.mu1.map(|e| e.stderr)),
            r.snr.value,
            r.snr.stderr,
            r.eta_model,
            r.p_n_model,
            r.snr_model,
            r.mu1_model,
            r.fidelity,
            r.quantum
        )?;
    }
    Ok(())
}

fn write_inversion<W: Write>(w: &mut W, res: &InversionResult) -> std::io::Result<()> {
    writeln!(w, "detuning_hz,error_adiabatic,error_rectangular")?;
    for (a, r) in res.adiabatic.points.iter().zip(&res.rectangular.points) {
        writeln!(w, "{},{},{}", a.0, a.1, r.1)?;
    }
    Ok(())
}

fn at(v: &[f64], n: usize) -> Option<f64> {
    v.get(n).copied()
}

/// Runs the configured pipeline and writes `report.json` plus, for CSV
/// output, one CSV per table or trace into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    let diags = validate_config(cfg);
    if !diags.is_empty() {
        return Err(ExperimentError::Invalid(diags));
    }
    let (pulse, pulse_calibration) = pulse_template(cfg)?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv = cfg.format == OutputFormat::Csv;
    let mut out = Writer {
        dir,
        files: Vec::new(),
    };

    let results = match cfg.pipeline {
        Pipeline::Thermalization => {
            let curves = thermalization_pipeline(cfg, &pulse)?;
            let summaries = curves
                .iter()
                .map(|c| CurveSummary {
                    kind: c.kind,
                    error_per_sequence: c.error_per_sequence,
                    n_max: cfg.thermalization.n_max,
                    rho_g_closed_form_final: *c.closed_form.rho_g.last().expect("n_max >= 1"),
                    rho_g_monte_carlo_final: *c.monte_carlo.rho_g.last().expect("n_max >= 1"),
                    rho_g_closed_form_at_50: at(&c.closed_form.rho_g, 50),
                    rho_g_monte_carlo_at_50: at(&c.monte_carlo.rho_g, 50),
                })
                .collect();
            if csv {
                for c in &curves {
                    out.write(&format!("thermalization_{}.csv", c.kind.name()), |w| {
                        write_thermalization_csv(w, &c.closed_form, &c.monte_carlo)
                    })?;
                }
            }
            Results::Thermalization {
                curves: summaries,
                data: (!csv).then_some(curves),
            }
        }
        Pipeline::Storage => {
            let res = storage_pipeline(cfg, &pulse)?;
            if csv {
                out.write("rows.csv", |w| write_rows(w, &res.rows))?;
                for (i, run) in res.runs.iter().enumerate() {
                    out.write(&format!("histogram_{i:02}.csv"), |w| {
                        run.write_histogram_csv(w)
                    })?;
                }
                out.write("comb.csv", |w| res.comb.write_csv(w))?;
                out.write("echo.csv", |w| res.echo.write_csv(w))?;
            }
            Results::Storage {
                calibration: res.calibration,
                spinwave_excitation: res.spinwave_excitation,
                breakdowns: res.breakdowns,
                timelines: res.timelines,
                rows: res.rows,
                echo_peak: res.echo.argmax(),
                histograms: (!csv).then_some(res.runs),
                comb: (!csv).then_some(res.comb),
                echo: (!csv).then_some(res.echo),
            }
        }
        Pipeline::Inversion => {
            let res = inversion_pipeline(cfg)?;
            if csv {
                out.write("inversion.csv", |w| write_inversion(w, &res))?;
            }
            Results::Inversion {
                adiabaticity: res.adiabaticity,
                landau_zener_error: res.landau_zener_error,
                richardson_drift: res.richardson_drift,
                adiabatic_mean_error: res.adiabatic.weighted_mean,
                adiabatic_max_error: res.adiabatic.max_error(),
                rectangular_mean_error: res.rectangular.weighted_mean,
                rectangular_max_error: res.rectangular.max_error(),
                data: (!csv).then_some(res),
            }
        }
    };

    let mut files = out.files.clone();
    files.push("report.json".into());
    let report = Report {
        schema_version: SCHEMA_VERSION,
        preset: cfg.preset.as_deref(),
        pipeline: cfg.pipeline,
        seed: cfg.seed,
        config: cfg,
        pulse_calibration,
        files: files.clone(),
        results,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| ExperimentError::Io {
        path: dir.join("report.json"),
        source: e.into(),
    })?;
    out.write("report.json", |w| writeln!(w, "{json}"))?;
    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        files,
    })
}
