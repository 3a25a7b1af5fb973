//! Command-line entry points: stream generation, stream analysis, and the
//! electromagnetic curves, all driven by a plain-text config so every run is
//! reproducible from its metadata sidecar.
//!
//! Physics parameters live in the config file (sections per module); flags
//! select inputs, outputs, and which analyses to run. Every command writes a
//! `<output>.meta.toml` sidecar echoing the resolved configuration, the
//! command, and the seed actually used. Exit codes: 0 success, 2 config
//! error, 3 malformed input file, 4 computation error, 1 I/O failure.
//! Diagnostics go to stderr; data goes to stdout only for `-` outputs.

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::emitter::{
    apply_detection, simulate_emission, DetectorChain, EmitterModel, ExcitationSpec, CHANNEL_A,
    CHANNEL_B, CHANNEL_SYNC,
};
use crate::inference::{
    blinking_stats, correlate_channels, decay_histogram, derived_metrics, fit_antibunching_cw,
    fit_cos_squared, fit_decay, fit_saturation, normalize_cw, pulsed_purity, write_decay_csv,
    write_histogram_csv, InferenceError, MetricsInput, MetricsReport,
};
use crate::plasmon::{
    analyze_peak, hybrid_response, scattering_spectrum, write_hybrid_csv, write_spectrum_csv,
    NanorodSpec, Permittivity,
};
use crate::tags::{intensity_trace, read_stream_from_path, write_stream, TagStream};
use crate::waveguide::{
    channeling_fractions, mode_sweep, solve_guided_mode, write_sweep_csv, FiberSpec, SweepParameter,
};

/// Environment variable naming a directory that overrides built-in data
/// assets: `gold_permittivity.csv` for the metal table and
/// `presets/<name>.toml` for emitter presets.
pub const ASSET_DIR_VAR: &str = "FIBERSPS_ASSET_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Computation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Computation(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Configuration

/// Full run configuration. Commands read only the sections they need;
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub emitter: Option<EmitterSection>,
    pub excitation: Option<ExcitationSpec>,
    pub detector: DetectorChain,
    pub run: Option<RunSection>,
    pub fiber: FiberSection,
    pub rod: RodSection,
    pub hybrid: HybridSection,
    pub modes: ModesSection,
    pub lspr: LsprSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        // toml reports line/column spans in its message.
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    fn emitter_model(&self) -> Result<EmitterModel, CliError> {
        self.emitter
            .as_ref()
            .ok_or_else(|| CliError::Config("config is missing an [emitter] section".into()))?
            .resolve()
    }
}

/// Emitter section: either `preset = "name"` or a full inline model.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum EmitterSection {
    Preset(PresetRef),
    Model(EmitterModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRef {
    pub preset: String,
}

// Dispatch on the presence of a `preset` key instead of deriving an
// untagged enum, so typos are reported by field name rather than as a
// failure to match any variant.
impl<'de> Deserialize<'de> for EmitterSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = toml::Value::deserialize(d)?;
        let has_preset = value.as_table().is_some_and(|t| t.contains_key("preset"));
        if has_preset {
            PresetRef::deserialize(value)
                .map(EmitterSection::Preset)
                .map_err(serde::de::Error::custom)
        } else {
            EmitterModel::deserialize(value)
                .map(EmitterSection::Model)
                .map_err(serde::de::Error::custom)
        }
    }
}

impl EmitterSection {
    pub fn resolve(&self) -> Result<EmitterModel, CliError> {
        let model = match self {
            EmitterSection::Preset(p) => preset_model(&p.preset)?,
            EmitterSection::Model(m) => *m,
        };
        model
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(model)
    }
}

/// Looks up an emitter preset, preferring `presets/<name>.toml` under the
/// asset-dir override when present.
pub fn preset_model(name: &str) -> Result<EmitterModel, CliError> {
    if let Some(dir) = asset_dir() {
        let path = dir.join("presets").join(format!("{name}.toml"));
        if path.exists() {
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            return toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
        }
    }
    match name {
        "coupled" => Ok(EmitterModel::coupled()),
        "uncoupled" => Ok(EmitterModel::uncoupled()),
        other => Err(CliError::Config(format!(
            "unknown emitter preset '{other}' (built in: coupled, uncoupled)"
        ))),
    }
}

fn asset_dir() -> Option<PathBuf> {
    std::env::var_os(ASSET_DIR_VAR).map(PathBuf::from)
}

/// Simulation run parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: f64,
    /// Omit to let the tool draw one; the sidecar records it either way.
    pub seed: Option<u64>,
    pub output: PathBuf,
    /// Optional second file with the pre-detection emission stream.
    #[serde(default)]
    pub emission_output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiberSection {
    pub diameter_nm: f64,
    pub core_index: f64,
    pub clad_index: f64,
    /// Emission wavelength used for mode solving, nm.
    pub wavelength_nm: f64,
}

impl Default for FiberSection {
    fn default() -> Self {
        FiberSection {
            diameter_nm: 320.0,
            core_index: 1.457,
            clad_index: 1.0,
            wavelength_nm: 640.0,
        }
    }
}

impl FiberSection {
    fn to_spec(self) -> FiberSpec {
        FiberSpec::new(self.diameter_nm, self.core_index, self.clad_index)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RodSection {
    pub length_nm: f64,
    pub diameter_nm: f64,
    /// Effective embedding index; defaults to the calibrated value.
    pub medium_index: Option<f64>,
}

impl Default for RodSection {
    fn default() -> Self {
        RodSection {
            length_nm: 75.0,
            diameter_nm: 30.0,
            medium_index: None,
        }
    }
}

impl RodSection {
    fn to_spec(self) -> NanorodSpec {
        let medium = self
            .medium_index
            .unwrap_or(NanorodSpec::gold_75x30().medium_index);
        NanorodSpec::new(self.length_nm, self.diameter_nm, medium)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSection {
    /// Wavelength for the rod response, nm.
    pub wavelength_nm: f64,
    pub standoff_nm: f64,
    pub d_min_nm: f64,
    pub d_max_nm: f64,
    pub d_step_nm: f64,
}

impl Default for HybridSection {
    fn default() -> Self {
        HybridSection {
            wavelength_nm: 650.0,
            standoff_nm: 5.0,
            d_min_nm: 0.0,
            d_max_nm: 50.0,
            d_step_nm: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModesSection {
    pub wavelength_nm: f64,
    pub diameter_min_nm: f64,
    pub diameter_max_nm: f64,
    pub diameter_step_nm: f64,
}

impl Default for ModesSection {
    fn default() -> Self {
        ModesSection {
            wavelength_nm: 640.0,
            diameter_min_nm: 200.0,
            diameter_max_nm: 500.0,
            diameter_step_nm: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsprSection {
    pub min_nm: f64,
    pub max_nm: f64,
    pub step_nm: f64,
}

impl Default for LsprSection {
    fn default() -> Self {
        LsprSection {
            min_nm: 450.0,
            max_nm: 900.0,
            step_nm: 2.0,
        }
    }
}

fn grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && max > min) {
        return Err(CliError::Config(format!(
            "bad sweep range: min {min}, max {max}, step {step}"
        )));
    }
    let n = ((max - min) / step).round() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

/// The metal table for a rod: the built-in gold data (or the asset-dir
/// override) with the rod's finite-size damping applied.
fn rod_metal(rod: &NanorodSpec) -> Result<Permittivity, CliError> {
    let base = match asset_dir() {
        Some(dir) => {
            let path = dir.join("gold_permittivity.csv");
            if path.exists() {
                let file = fs::File::open(&path)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                Permittivity::from_csv(std::io::BufReader::new(file))
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
            } else {
                Permittivity::gold()
            }
        }
        None => Permittivity::gold(),
    };
    Ok(base.with_surface_damping(rod.effective_path_length(), 1.0))
}

// ---------------------------------------------------------------------------
// Sidecar

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    flags: Vec<String>,
    config: &'a RunConfig,
}

fn write_sidecar(output: &Path, sidecar: &Sidecar) -> Result<(), CliError> {
    if output == Path::new("-") {
        return Ok(());
    }
    let mut path = output.as_os_str().to_owned();
    path.push(".meta.toml");
    let text = toml::to_string_pretty(sidecar)
        .map_err(|e| CliError::Io(format!("sidecar serialization: {e}")))?;
    fs::write(&path, text)?;
    Ok(())
}

/// Opens an output sink; `-` selects stdout.
fn open_sink(path: &Path) -> Result<Box<dyn IoWrite>, CliError> {
    if path == Path::new("-") {
        Ok(Box::new(std::io::stdout().lock()))
    } else {
        Ok(Box::new(std::io::BufWriter::new(fs::File::create(path)?)))
    }
}

// ---------------------------------------------------------------------------
// Command-line surface

#[derive(Debug, Parser)]
#[command(
    name = "fibersps",
    version,
    about = "Photon-stream simulation and analysis for a nanofiber-coupled single-photon source"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a photon stream from a config file and write it as NTG1.
    Simulate {
        /// Config with [emitter], [excitation], [run] (and optional
        /// [detector]) sections.
        #[arg(long)]
        config: PathBuf,
        /// Override the output path from the config; `-` writes to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run selected analyses over a recorded NTG1 stream.
    Analyze(AnalyzeArgs),
    /// Emitter-displacement sweep of the rod-on-fiber response.
    Hybrid {
        /// Optional config providing [fiber], [rod], [hybrid] sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "hybrid.csv")]
        output: PathBuf,
    },
    /// Guided-mode channeling efficiency versus fiber diameter.
    Modes {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "modes.csv")]
        output: PathBuf,
    },
    /// Nanorod scattering spectrum with peak and width.
    Lspr {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "lspr.csv")]
        output: PathBuf,
    },
    /// Run the full set of figure-level artifacts into a directory.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        output_dir: PathBuf,
        /// Seed for all stochastic stages.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// NTG1 input file.
    pub input: PathBuf,
    /// Fit the sync-referenced decay histogram.
    #[arg(long)]
    pub decay: bool,
    /// Correlate the two detector channels.
    #[arg(long)]
    pub g2: bool,
    /// Treat --g2 as a pulsed purity measurement instead of a CW dip fit.
    #[arg(long)]
    pub pulsed: bool,
    /// Two-state intermittency statistics of the intensity trace.
    #[arg(long)]
    pub blinking: bool,
    /// CSV of intensity,rate rows to fit the saturation law.
    #[arg(long)]
    pub saturation: Option<PathBuf>,
    /// Bin width for decay histograms, ps.
    #[arg(long, default_value_t = 50)]
    pub decay_bin_ps: u64,
    /// Bin width for correlation histograms, ps.
    #[arg(long, default_value_t = 1000)]
    pub g2_bin_ps: u64,
    /// Correlation window half-width, ns (default: 40 CW, 10.5 periods pulsed).
    #[arg(long)]
    pub max_lag_ns: Option<u64>,
    /// Intensity-trace bin for --blinking, ms.
    #[arg(long, default_value_t = 17.0)]
    pub trace_bin_ms: f64,
    /// Detector timing jitter assumed by the decay fit, ps.
    #[arg(long, default_value_t = 290.0)]
    pub jitter_fwhm_ps: f64,
    /// Reference lifetime for the decay-rate enhancement, ns.
    #[arg(long, default_value_t = 55.0)]
    pub reference_lifetime_ns: f64,
    /// Comparison spontaneous-emission rate in MHz for the enhancement factor.
    #[arg(long)]
    pub comparison_gamma_mhz: Option<f64>,
    /// Report destination; companion CSVs use this stem.
    #[arg(long, default_value = "analysis_report.txt")]
    pub output: PathBuf,
}

/// Parses the process arguments, runs the command, and returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, output } => cmd_simulate(&config, output.as_deref()),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Hybrid { config, output } => {
            let cfg = load_or_default(config.as_deref())?;
            cmd_hybrid(&cfg, &output)
        }
        Command::Modes { config, output } => {
            let cfg = load_or_default(config.as_deref())?;
            cmd_modes(&cfg, &output)
        }
        Command::Lspr { config, output } => {
            let cfg = load_or_default(config.as_deref())?;
            cmd_lspr(&cfg, &output)
        }
        Command::Report {
            config,
            output_dir,
            seed,
        } => {
            let cfg = load_or_default(config.as_deref())?;
            cmd_report(&cfg, &output_dir, seed)
        }
    }
}

fn load_or_default(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

// ---------------------------------------------------------------------------
// simulate

pub fn cmd_simulate(config_path: &Path, output_override: Option<&Path>) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let model = config.emitter_model()?;
    let excitation = config
        .excitation
        .ok_or_else(|| CliError::Config("config is missing an [excitation] section".into()))?;
    let run = config
        .run
        .clone()
        .ok_or_else(|| CliError::Config("config is missing a [run] section".into()))?;
    excitation
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    config
        .detector
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(msg) = excitation.lifetime_warning(model.lifetime_ns) {
        eprintln!("warning: {msg}");
    }

    let seed = match run.seed {
        Some(s) => s,
        None => {
            let s = rand::thread_rng().next_u64();
            eprintln!("note: no seed in config; using auto-generated seed {s}");
            s
        }
    };

    let emitted = simulate_emission(&model, &excitation, run.duration_s, seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let detected = apply_detection(&emitted, &config.detector, seed.wrapping_add(1))
        .map_err(|e| CliError::Config(e.to_string()))?;

    let output = output_override.unwrap_or(&run.output);
    let mut sink = open_sink(output)?;
    write_stream(&detected, &mut sink).map_err(|e| CliError::Io(e.to_string()))?;
    drop(sink);
    if let Some(path) = &run.emission_output {
        let mut sink = open_sink(path)?;
        write_stream(&emitted, &mut sink).map_err(|e| CliError::Io(e.to_string()))?;
    }

    // Echo the fully resolved configuration so the sidecar alone reproduces
    // the run even when the config named a preset or omitted the seed.
    let mut echo = config.clone();
    echo.emitter = Some(EmitterSection::Model(model));
    if let Some(r) = &mut echo.run {
        r.seed = Some(seed);
        r.output = output.to_path_buf();
    }
    write_sidecar(
        output,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "simulate",
            seed: Some(seed),
            inputs: vec![config_path.display().to_string()],
            flags: Vec::new(),
            config: &echo,
        },
    )?;

    eprintln!(
        "simulate: {} emitted, {} detected over {} s -> {}",
        emitted.len(),
        detected.channel_count_of(CHANNEL_A) + detected.channel_count_of(CHANNEL_B),
        run.duration_s,
        output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

/// A finished analysis either yields report lines or explains why the
/// stream could not support it; estimator failures are reported inline
/// rather than aborting the whole report.
fn push_outcome(
    lines: &mut Vec<String>,
    label: &str,
    outcome: Result<Vec<String>, InferenceError>,
) {
    match outcome {
        Ok(mut section) => lines.append(&mut section),
        Err(e) => lines.push(format!("{label}: insufficient events ({e})")),
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let stream = read_stream_from_path(&args.input)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.input.display())))?;
    let stem = args.output.with_extension("");
    let stem = stem.to_string_lossy().into_owned();
    let mut lines = vec![
        format!("input: {}", args.input.display()),
        format!(
            "duration: {:.3} s, {} records ({:.1} c/s on A, {:.1} c/s on B)",
            stream.duration_seconds(),
            stream.len(),
            stream.channel_rate(CHANNEL_A),
            stream.channel_rate(CHANNEL_B),
        ),
    ];

    let mut lifetime_ns = None;
    let mut g2_value = None;

    if args.decay {
        push_outcome(
            &mut lines,
            "decay",
            decay_section(args, &stream, &stem, &mut lifetime_ns),
        );
    }
    if args.g2 {
        if args.pulsed {
            push_outcome(
                &mut lines,
                "purity",
                purity_section(args, &stream, &stem, &mut g2_value),
            );
        } else {
            push_outcome(
                &mut lines,
                "g2",
                cw_g2_section(args, &stream, &stem, &mut g2_value),
            );
        }
    }
    if args.blinking {
        push_outcome(&mut lines, "blinking", blinking_section(args, &stream));
    }
    if let Some(csv) = &args.saturation {
        let points = read_saturation_csv(csv)?;
        push_outcome(
            &mut lines,
            "saturation",
            saturation_section(args, &points, lifetime_ns, g2_value),
        );
    }

    let mut sink = open_sink(&args.output)?;
    for line in &lines {
        writeln!(sink, "{line}")?;
    }
    drop(sink);

    let flags = analyze_flags(args);
    write_sidecar(
        &args.output,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "analyze",
            seed: None,
            inputs: vec![args.input.display().to_string()],
            flags,
            config: &RunConfig::default(),
        },
    )?;
    eprintln!("analyze: report written to {}", args.output.display());
    Ok(())
}

fn analyze_flags(args: &AnalyzeArgs) -> Vec<String> {
    let mut flags = Vec::new();
    for (on, name) in [
        (args.decay, "--decay"),
        (args.g2, "--g2"),
        (args.pulsed, "--pulsed"),
        (args.blinking, "--blinking"),
    ] {
        if on {
            flags.push(name.to_string());
        }
    }
    if let Some(p) = &args.saturation {
        flags.push(format!("--saturation {}", p.display()));
    }
    flags
}

fn decay_section(
    args: &AnalyzeArgs,
    stream: &TagStream,
    stem: &str,
    lifetime_ns: &mut Option<f64>,
) -> Result<Vec<String>, InferenceError> {
    let hist = decay_histogram(stream, CHANNEL_SYNC, args.decay_bin_ps)?;
    let fit = fit_decay(&hist, args.jitter_fwhm_ps)?;
    let tau = fit.fit.value("tau_ns").unwrap();
    *lifetime_ns = Some(tau);
    let path = format!("{stem}_decay.csv");
    if let Ok(mut f) = fs::File::create(&path) {
        let _ = write_decay_csv(&hist, &mut f);
    }
    let mut lines = vec![format!(
        "decay: tau = {tau:.4} ns +/- {:.4} (jitter-aware: {}, resolution-limited: {})",
        fit.fit.uncertainty("tau_ns").unwrap(),
        fit.jitter_aware,
        fit.resolution_limited,
    )];
    lines.push(format!("decay: histogram -> {path}"));
    Ok(lines)
}

fn cw_g2_section(
    args: &AnalyzeArgs,
    stream: &TagStream,
    stem: &str,
    g2_value: &mut Option<f64>,
) -> Result<Vec<String>, InferenceError> {
    let max_lag_ps = args.max_lag_ns.unwrap_or(40) * 1000;
    let hist = correlate_channels(stream, CHANNEL_A, CHANNEL_B, args.g2_bin_ps, max_lag_ps)?;
    let hist = normalize_cw(
        hist,
        stream.channel_rate(CHANNEL_A),
        stream.channel_rate(CHANNEL_B),
        stream.duration_seconds(),
    )?;
    let fit = fit_antibunching_cw(&hist)?;
    let g2 = fit.value("g2_0").unwrap();
    *g2_value = Some(g2);
    let path = format!("{stem}_g2.csv");
    if let Ok(mut f) = fs::File::create(&path) {
        let _ = write_histogram_csv(&hist, &mut f);
    }
    Ok(vec![
        format!(
            "g2: g2(0) = {g2:.4} +/- {:.4}, rise time = {:.3} ns +/- {:.3}, baseline = {:.4}",
            fit.uncertainty("g2_0").unwrap(),
            fit.value("rise_time_ns").unwrap(),
            fit.uncertainty("rise_time_ns").unwrap(),
            fit.value("baseline").unwrap(),
        ),
        format!("g2: histogram -> {path}"),
    ])
}

fn purity_section(
    args: &AnalyzeArgs,
    stream: &TagStream,
    stem: &str,
    g2_value: &mut Option<f64>,
) -> Result<Vec<String>, InferenceError> {
    let syncs = stream.channel_timestamps(CHANNEL_SYNC);
    let period_ps = syncs
        .windows(2)
        .map(|p| p[1] - p[0])
        .filter(|&g| g > 0)
        .min()
        .ok_or_else(|| {
            InferenceError::DegenerateData("no sync channel to define the pulse period".into())
        })?;
    let max_lag_ps = match args.max_lag_ns {
        Some(ns) => ns * 1000,
        None => period_ps * 10 + period_ps / 2,
    };
    let hist = correlate_channels(stream, CHANNEL_A, CHANNEL_B, args.g2_bin_ps, max_lag_ps)?;
    let fit = pulsed_purity(&hist, period_ps)?;
    let g2 = fit.value("g2_0").unwrap();
    *g2_value = Some(g2);
    let path = format!("{stem}_g2.csv");
    if let Ok(mut f) = fs::File::create(&path) {
        let _ = write_histogram_csv(&hist, &mut f);
    }
    Ok(vec![
        format!(
            "purity: g2(0) = {g2:.4} +/- {:.4} (pulse period {:.1} ns)",
            fit.uncertainty("g2_0").unwrap(),
            period_ps as f64 / 1000.0,
        ),
        format!("purity: histogram -> {path}"),
    ])
}

fn blinking_section(args: &AnalyzeArgs, stream: &TagStream) -> Result<Vec<String>, InferenceError> {
    let bin_ticks = (args.trace_bin_ms * 1e9) as u64;
    let trace = intensity_trace(stream, bin_ticks, &[CHANNEL_A, CHANNEL_B]);
    let stats = blinking_stats(&trace, args.trace_bin_ms * 1e-3)?;
    if stats.unimodal {
        return Ok(vec![
            "blinking: unimodal intensity histogram; no two-state switching resolved".into(),
        ]);
    }
    Ok(vec![format!(
        "blinking: bimodal, on-fraction {:.3}, threshold {:.0} counts/bin, \
         mean dwells {:.2} s on / {:.2} s off ({} / {} runs)",
        stats.on_fraction,
        stats.threshold,
        stats.mean_on_dwell_s,
        stats.mean_off_dwell_s,
        stats.on_runs,
        stats.off_runs,
    )])
}

fn read_saturation_csv(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        let parse = |s: Option<&str>| -> Option<f64> { s?.trim().parse().ok() };
        let first_numeric = parse(line.split(',').next()).is_some();
        if line.is_empty() || (idx == 0 && !first_numeric) {
            continue; // header or blank
        }
        let mut cols = line.split(',');
        match (parse(cols.next()), parse(cols.next())) {
            (Some(i), Some(r)) => points.push((i, r)),
            _ => {
                return Err(CliError::Input(format!(
                    "{}:{}: expected 'intensity,rate', got '{line}'",
                    path.display(),
                    idx + 1
                )))
            }
        }
    }
    Ok(points)
}

fn saturation_section(
    args: &AnalyzeArgs,
    points: &[(f64, f64)],
    lifetime_ns: Option<f64>,
    g2_value: Option<f64>,
) -> Result<Vec<String>, InferenceError> {
    let fit = fit_saturation(points)?;
    let n_max = fit.value("n_max").unwrap();
    let i_sat = fit.value("i_sat").unwrap();
    let mut lines = vec![format!(
        "saturation: N_max = {:.4} Mc/s +/- {:.4}, I_sat = {i_sat:.1} W/cm2 +/- {:.1}",
        n_max / 1e6,
        fit.uncertainty("n_max").unwrap() / 1e6,
        fit.uncertainty("i_sat").unwrap(),
    )];
    let Some(tau) = lifetime_ns else {
        lines.push(
            "metrics: skipped (no lifetime available; run with --decay on a pulsed stream)".into(),
        );
        return Ok(lines);
    };
    let chain = DetectorChain::default();
    let report = derived_metrics(&MetricsInput {
        n_max_hz: n_max,
        chain_efficiencies: [chain.fiber_to_apd, chain.filter_transmission, chain.apd_qe],
        lifetime_ns: tau,
        reference_lifetime_ns: args.reference_lifetime_ns,
        comparison_gamma_sp_hz: args.comparison_gamma_mhz.map(|m| m * 1e6),
        dop: None,
        g2_0: g2_value,
    })?;
    lines.append(&mut metrics_lines(&report));
    Ok(lines)
}

/// One report line per derived-metric field that is present.
fn metrics_lines(report: &MetricsReport) -> Vec<String> {
    let mut lines = vec![
        format!("metrics: alpha = {:.4}", report.alpha),
        format!("metrics: Gamma_SP = {:.4} MHz", report.gamma_sp_hz / 1e6),
        format!("metrics: decay-rate enhancement PF = {:.3}", report.pf),
        format!(
            "metrics: coupling efficiency eta = {:.3}%",
            report.coupling_efficiency * 100.0
        ),
    ];
    if let Some(ef) = report.ef {
        lines.push(format!("metrics: emission enhancement EF = {ef:.3}"));
    }
    if let Some(dop) = report.dop {
        lines.push(format!("metrics: DOP = {dop:.4}"));
    }
    if let Some(g2) = report.g2_0 {
        lines.push(format!("metrics: g2(0) = {g2:.4}"));
    }
    lines
}

// ---------------------------------------------------------------------------
// Electromagnetic curves

pub fn cmd_hybrid(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let fiber = config.fiber.to_spec();
    let mode = solve_guided_mode(&fiber, config.fiber.wavelength_nm)
        .map_err(|e| CliError::Computation(e.to_string()))?;
    let fractions = channeling_fractions(&mode, fiber.radius())
        .map_err(|e| CliError::Computation(e.to_string()))?;
    let rod = config.rod.to_spec();
    let metal = rod_metal(&rod)?;
    let h = config.hybrid;
    let displacements = grid(h.d_min_nm, h.d_max_nm, h.d_step_nm)?;
    let rows = hybrid_response(
        &rod,
        &metal,
        h.wavelength_nm,
        &fractions,
        h.standoff_nm,
        &displacements,
    )
    .map_err(|e| CliError::Computation(e.to_string()))?;
    let mut sink = open_sink(output)?;
    write_hybrid_csv(&rows, &mut sink)?;
    drop(sink);
    write_sidecar(
        output,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "hybrid",
            seed: None,
            inputs: Vec::new(),
            flags: Vec::new(),
            config,
        },
    )?;
    let peak = rows
        .iter()
        .max_by(|a, b| a.pf_avg.total_cmp(&b.pf_avg))
        .unwrap();
    eprintln!(
        "hybrid: PF_avg peaks at d = {:.0} nm ({:.2}), EF there {:.2}, DOP {:.3} -> {}",
        peak.displacement,
        peak.pf_avg,
        peak.enhancement,
        peak.dop,
        output.display()
    );
    Ok(())
}

pub fn cmd_modes(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let m = config.modes;
    let diameters = grid(m.diameter_min_nm, m.diameter_max_nm, m.diameter_step_nm)?;
    let template = config.fiber.to_spec();
    let rows = mode_sweep(
        &template,
        m.wavelength_nm,
        SweepParameter::DiameterNm,
        &diameters,
    )
    .map_err(|e| CliError::Computation(e.to_string()))?;
    let mut sink = open_sink(output)?;
    write_sweep_csv(&rows, &mut sink)?;
    drop(sink);
    write_sidecar(
        output,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "modes",
            seed: None,
            inputs: Vec::new(),
            flags: Vec::new(),
            config,
        },
    )?;
    let best = rows
        .iter()
        .max_by(|a, b| a.efficiency.total_cmp(&b.efficiency))
        .unwrap();
    eprintln!(
        "modes: channeling efficiency peaks at {:.0} nm diameter ({:.4}) -> {}",
        best.parameter,
        best.efficiency,
        output.display()
    );
    Ok(())
}

pub fn cmd_lspr(config: &RunConfig, output: &Path) -> Result<(), CliError> {
    let rod = config.rod.to_spec();
    let metal = rod_metal(&rod)?;
    let l = config.lspr;
    let wavelengths = grid(l.min_nm, l.max_nm, l.step_nm)?;
    let rows = scattering_spectrum(&rod, &metal, &wavelengths)
        .map_err(|e| CliError::Computation(e.to_string()))?;
    let mut sink = open_sink(output)?;
    write_spectrum_csv(&rows, &mut sink)?;
    drop(sink);
    write_sidecar(
        output,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "lspr",
            seed: None,
            inputs: Vec::new(),
            flags: Vec::new(),
            config,
        },
    )?;
    let avg: Vec<f64> = rows.iter().map(|r| r.sigma_avg).collect();
    let peak =
        analyze_peak(&wavelengths, &avg).map_err(|e| CliError::Computation(e.to_string()))?;
    eprintln!(
        "lspr: peak {:.1} nm, FWHM {:.1} nm -> {}",
        peak.peak_wavelength,
        peak.fwhm,
        output.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(config: &RunConfig, dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let seed = seed.unwrap_or_else(|| {
        let s = rand::thread_rng().next_u64();
        eprintln!("note: no --seed given; using auto-generated seed {s}");
        s
    });
    fs::create_dir_all(dir)?;
    let mut md = Vec::new();
    writeln!(md, "# Source characterization report\n").ok();
    writeln!(
        md,
        "Generated by fibersps {} with seed {seed}.\n",
        env!("CARGO_PKG_VERSION")
    )
    .ok();

    // Guided mode and channeling optimum.
    cmd_modes(config, &dir.join("modes.csv"))?;
    let fiber = config.fiber.to_spec();
    let mode = solve_guided_mode(&fiber, config.fiber.wavelength_nm)
        .map_err(|e| CliError::Computation(e.to_string()))?;
    let fractions = channeling_fractions(&mode, fiber.radius())
        .map_err(|e| CliError::Computation(e.to_string()))?;
    writeln!(md, "## Guided mode\n").ok();
    writeln!(
        md,
        "- {} nm fiber at {} nm: n_eff = {:.4}, surface channeling T = ({:.3}, {:.3}, {:.3})",
        config.fiber.diameter_nm,
        config.fiber.wavelength_nm,
        mode.effective_index,
        fractions.t_x,
        fractions.t_y,
        fractions.t_z
    )
    .ok();
    writeln!(md, "- diameter sweep: `modes.csv`\n").ok();

    // Scattering spectrum.
    cmd_lspr(config, &dir.join("lspr.csv"))?;
    let rod = config.rod.to_spec();
    let metal = rod_metal(&rod)?;
    let l = config.lspr;
    let wavelengths = grid(l.min_nm, l.max_nm, l.step_nm)?;
    let rows = scattering_spectrum(&rod, &metal, &wavelengths)
        .map_err(|e| CliError::Computation(e.to_string()))?;
    let avg: Vec<f64> = rows.iter().map(|r| r.sigma_avg).collect();
    let peak =
        analyze_peak(&wavelengths, &avg).map_err(|e| CliError::Computation(e.to_string()))?;
    writeln!(md, "## Nanorod scattering\n").ok();
    writeln!(
        md,
        "- {} x {} nm rod: peak {:.1} nm, FWHM {:.1} nm (`lspr.csv`)\n",
        config.rod.length_nm, config.rod.diameter_nm, peak.peak_wavelength, peak.fwhm
    )
    .ok();

    // Hybrid response.
    cmd_hybrid(config, &dir.join("hybrid.csv"))?;
    writeln!(md, "## Rod-on-fiber response\n").ok();
    writeln!(md, "- displacement sweep: `hybrid.csv`\n").ok();

    // Stream-level results per preset.
    writeln!(md, "## Photon streams\n").ok();
    let chain = config.detector;
    let mut n_max = [0.0f64; 2];
    let mut lifetimes = [0.0f64; 2];
    for (idx, name) in ["coupled", "uncoupled"].iter().enumerate() {
        let model = preset_model(name)?;
        let seed = seed.wrapping_add(idx as u64 * 1000);
        writeln!(md, "### {name} preset\n").ok();

        // Lifetime from a pulsed run.
        let excitation = ExcitationSpec::pulsed(387.0, 10.0);
        let duration = if idx == 0 { 10.0 } else { 20.0 };
        let emitted = simulate_emission(&model, &excitation, duration, seed)
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let detected = apply_detection(&emitted, &chain, seed.wrapping_add(1))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        match decay_histogram(&detected, CHANNEL_SYNC, 50)
            .and_then(|h| fit_decay(&h, chain.jitter_fwhm_ps))
        {
            Ok(fit) => {
                let tau = fit.fit.value("tau_ns").unwrap();
                lifetimes[idx] = tau;
                writeln!(
                    md,
                    "- lifetime: {tau:.3} ns +/- {:.3} (jitter-aware: {})",
                    fit.fit.uncertainty("tau_ns").unwrap(),
                    fit.jitter_aware
                )
                .ok();
            }
            Err(e) => {
                writeln!(md, "- lifetime: insufficient events ({e})").ok();
            }
        }

        // Purity from a saturated pulsed run. The slow emitter needs a
        // longer pulse period than the fast one or its decay smears across
        // neighboring pulses and fills the antibunching gap.
        let rep_rate_mhz = if idx == 0 { 10.0 } else { 1.0 };
        let excitation = ExcitationSpec::pulsed(20_000.0, rep_rate_mhz);
        let emitted = simulate_emission(&model, &excitation, 20.0, seed.wrapping_add(2))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let detected = apply_detection(&emitted, &chain, seed.wrapping_add(3))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let period_ps = excitation.period_ps().round() as u64;
        match correlate_channels(
            &detected,
            CHANNEL_A,
            CHANNEL_B,
            1000,
            period_ps * 10 + period_ps / 2,
        )
        .and_then(|h| pulsed_purity(&h, period_ps))
        {
            Ok(fit) => {
                writeln!(
                    md,
                    "- pulsed purity: g2(0) = {:.3} +/- {:.3}",
                    fit.value("g2_0").unwrap(),
                    fit.uncertainty("g2_0").unwrap()
                )
                .ok();
            }
            Err(e) => {
                writeln!(md, "- pulsed purity: insufficient events ({e})").ok();
            }
        }

        // CW antibunching.
        let excitation = ExcitationSpec::cw(6.0);
        let emitted = simulate_emission(&model, &excitation, 60.0, seed.wrapping_add(4))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let detected = apply_detection(&emitted, &chain, seed.wrapping_add(5))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let max_lag = if idx == 0 { 40_000 } else { 400_000 };
        let bin = if idx == 0 { 500 } else { 2000 };
        let cw = correlate_channels(&detected, CHANNEL_A, CHANNEL_B, bin, max_lag)
            .and_then(|h| {
                normalize_cw(
                    h,
                    detected.channel_rate(CHANNEL_A),
                    detected.channel_rate(CHANNEL_B),
                    detected.duration_seconds(),
                )
            })
            .and_then(|h| fit_antibunching_cw(&h));
        match cw {
            Ok(fit) => {
                writeln!(
                    md,
                    "- CW antibunching at 6 W/cm2: g2(0) = {:.3}, rise {:.2} ns +/- {:.2}",
                    fit.value("g2_0").unwrap(),
                    fit.value("rise_time_ns").unwrap(),
                    fit.uncertainty("rise_time_ns").unwrap()
                )
                .ok();
            }
            Err(e) => {
                writeln!(md, "- CW antibunching: insufficient events ({e})").ok();
            }
        }

        // Saturation sweep, blinking disabled so the law is exact.
        let blinkless = model.without_blinking();
        let quiet = DetectorChain {
            dark_rate_hz: 0.0,
            dead_time_ns: 0.0,
            ..chain
        };
        let mut points = Vec::new();
        for (k, &i) in [20.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1600.0, 3200.0]
            .iter()
            .enumerate()
        {
            let emitted = simulate_emission(
                &blinkless,
                &ExcitationSpec::cw(i),
                1.0,
                seed.wrapping_add(10 + k as u64),
            )
            .map_err(|e| CliError::Computation(e.to_string()))?;
            let detected = apply_detection(&emitted, &quiet, seed.wrapping_add(30 + k as u64))
                .map_err(|e| CliError::Computation(e.to_string()))?;
            points.push((
                i,
                (detected.channel_count_of(CHANNEL_A) + detected.channel_count_of(CHANNEL_B))
                    as f64
                    / detected.duration_seconds(),
            ));
        }
        match fit_saturation(&points) {
            Ok(fit) => {
                n_max[idx] = fit.value("n_max").unwrap();
                writeln!(
                    md,
                    "- saturation: N_max = {:.3} Mc/s, I_sat = {:.0} W/cm2",
                    fit.value("n_max").unwrap() / 1e6,
                    fit.value("i_sat").unwrap()
                )
                .ok();
            }
            Err(e) => {
                writeln!(md, "- saturation: fit failed ({e})").ok();
            }
        }

        // Polarization sweep from the Malus response.
        let angles: Vec<f64> = (0..12).map(|k| k as f64 * 180.0 / 11.0).collect();
        let counts: Vec<f64> = angles
            .iter()
            .map(|&a| (50_000.0 * crate::emitter::polarized_counts(&model, a)).round())
            .collect();
        match fit_cos_squared(&angles, &counts) {
            Ok(fit) => {
                writeln!(md, "- polarization: DOP = {:.3}", fit.value("dop").unwrap()).ok();
            }
            Err(e) => {
                writeln!(md, "- polarization: fit failed ({e})").ok();
            }
        }

        // Blinking trace.
        let duration = if idx == 0 { 120.0 } else { 50.0 };
        let emitted = simulate_emission(
            &model,
            &ExcitationSpec::cw(6.0),
            duration,
            seed.wrapping_add(50),
        )
        .map_err(|e| CliError::Computation(e.to_string()))?;
        let detected = apply_detection(&emitted, &chain, seed.wrapping_add(51))
            .map_err(|e| CliError::Computation(e.to_string()))?;
        let trace = intensity_trace(&detected, 17_000_000_000, &[CHANNEL_A, CHANNEL_B]);
        match blinking_stats(&trace, 0.017) {
            Ok(stats) if stats.unimodal => {
                writeln!(md, "- blinking: unimodal intensity histogram\n").ok();
            }
            Ok(stats) => {
                writeln!(
                    md,
                    "- blinking: bimodal, on-fraction {:.2}, dwells {:.2} s / {:.2} s\n",
                    stats.on_fraction, stats.mean_on_dwell_s, stats.mean_off_dwell_s
                )
                .ok();
            }
            Err(e) => {
                writeln!(md, "- blinking: insufficient events ({e})\n").ok();
            }
        }
    }

    // Cross-preset metrics.
    let chain_eff = [chain.fiber_to_apd, chain.filter_transmission, chain.apd_qe];
    if n_max[1] > 0.0 && lifetimes[1] > 0.0 {
        let uncoupled = derived_metrics(&MetricsInput {
            n_max_hz: n_max[1],
            chain_efficiencies: chain_eff,
            lifetime_ns: lifetimes[1],
            reference_lifetime_ns: 55.0,
            comparison_gamma_sp_hz: None,
            dop: None,
            g2_0: None,
        })
        .map_err(|e| CliError::Computation(e.to_string()))?;
        let coupled = derived_metrics(&MetricsInput {
            n_max_hz: n_max[0],
            chain_efficiencies: chain_eff,
            lifetime_ns: lifetimes[0],
            reference_lifetime_ns: 55.0,
            comparison_gamma_sp_hz: Some(uncoupled.gamma_sp_hz),
            dop: None,
            g2_0: None,
        })
        .map_err(|e| CliError::Computation(e.to_string()))?;
        writeln!(md, "## Derived metrics\n").ok();
        for line in metrics_lines(&coupled) {
            writeln!(md, "- coupled {line}").ok();
        }
        for line in metrics_lines(&uncoupled) {
            writeln!(md, "- uncoupled {line}").ok();
        }
    }

    let report_path = dir.join("report.md");
    fs::write(&report_path, &md)?;
    write_sidecar(
        &report_path,
        &Sidecar {
            tool: "fibersps",
            version: env!("CARGO_PKG_VERSION"),
            command: "report",
            seed: Some(seed),
            inputs: Vec::new(),
            flags: Vec::new(),
            config,
        },
    )?;
    eprintln!("report: wrote {}", report_path.display());
    Ok(())
}
