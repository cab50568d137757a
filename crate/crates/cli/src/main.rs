use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pulsenoise::analysis::{integrate, optimize_window, pulse_variance, two_sample_diagnostic};
use pulsenoise::io::{export_trace, ingest_trace, Table, TraceFormat};
use pulsenoise::pipeline::{run_pipeline, RunConfig, ScalingSettings};
use pulsenoise::spectral::{estimate_psd_with, predict_pulsed_noise, SpectrumEstimate, Taper};
use pulsenoise::{classical_noise_check, Error, GatingWindow, Result, Trace, WindowKind};

/// Simulate differential AC-coupled photodetectors and analyze pulse noise.
#[derive(Parser)]
#[command(name = "pulsenoise", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage configured in a TOML file.
    Run(RunArgs),
    /// Simulate a pulse-train trace and write it as CSV.
    Simulate(SimulateArgs),
    /// Integrate the pulses of a trace file and report the area variance.
    Analyze(AnalyzeArgs),
    /// Estimate the noise power density of a trace file.
    Spectrum(SpectrumArgs),
    /// Predict the pulse-area variance of a window from a spectrum table.
    Predict(PredictArgs),
    /// Search window duration and position for the lowest 3-dB photon number.
    OptimizeWindow(OptimizeArgs),
    /// Scan the photon number and fit the noise decomposition.
    Scaling(ScalingArgs),
    /// Parse a trace file and print its properties.
    IngestCheck(IngestCheckArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Overrides the config output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Mean photons per pulse.
    #[arg(long)]
    photons: Option<f64>,
    /// Number of pulses.
    #[arg(long)]
    pulses: Option<usize>,
    /// Electronic noise, electrons rms.
    #[arg(long)]
    enc: Option<f64>,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file (CSV, optional `#` header).
    #[arg(long, short)]
    trace: PathBuf,
    /// Sample interval for amplitude-only files, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// The file holds one amplitude per row.
    #[arg(long)]
    amplitude_only: bool,
}

impl TraceArgs {
    fn read(&self) -> Result<Trace> {
        let format = if self.amplitude_only || self.dt.is_some() {
            TraceFormat::AmplitudeOnly { sample_interval: self.dt }
        } else {
            TraceFormat::TwoColumn
        };
        ingest_trace(&self.trace, format)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Boxcar,
    Dcs,
}

impl From<Kind> for WindowKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Boxcar => WindowKind::Boxcar,
            Kind::Dcs => WindowKind::Dcs,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Take timing and window from a run config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Repetition period, seconds.
    #[arg(long)]
    period: Option<f64>,
    /// Number of pulses.
    #[arg(long)]
    count: Option<usize>,
    /// Start of the first light pulse, seconds on the trace axis.
    #[arg(long)]
    first_pulse: Option<f64>,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Window duration, seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Window start after the pulse start, seconds.
    #[arg(long)]
    start: Option<f64>,
    /// Also report the two-sample baseline diagnostic.
    #[arg(long)]
    two_sample: bool,
    /// Write per-pulse areas here.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    trace: TraceArgs,
    /// Segment length in samples (power of two).
    #[arg(long, default_value_t = 4096)]
    segment: usize,
    /// Apply a Hann taper to each segment.
    #[arg(long)]
    hann: bool,
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Spectrum table written by `spectrum`.
    #[arg(long, short)]
    spectrum: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Window duration, seconds.
    #[arg(long)]
    duration: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    kind: Option<Kind>,
    /// Surface table output.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Photon numbers, comma separated; overrides the config grid.
    #[arg(long, value_delimiter = ',')]
    photons: Option<Vec<f64>>,
    /// Directory for the scaling tables.
    #[arg(long, short)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct IngestCheckArgs {
    #[command(flatten)]
    trace: TraceArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                log::debug!("caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Predict(a) => predict(a),
        Command::OptimizeWindow(a) => optimize(a),
        Command::Scaling(a) => scaling(a),
        Command::IngestCheck(a) => ingest_check(a),
    }
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(dir) = a.output_dir {
        cfg.output_dir = dir;
    }
    let m = run_pipeline(&cfg)?;
    println!("wrote {} files to {}", m.outputs.len(), cfg.output_dir.display());
    for (kind, v) in &m.results.pulse_variance {
        println!("{kind}: pulse-area variance {v:.6e}");
    }
    for (kind, fit) in &m.results.scaling {
        println!(
            "{kind}: n_3db {:.4e}, enc {:.1}, slope {}",
            fit.n_3db,
            fit.enc,
            fit.loglog_slope.map_or("n/a".into(), |s| format!("{s:.3}"))
        );
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(n) = a.photons {
        cfg.pulses.mean_photons_per_pulse = n;
    }
    if let Some(k) = a.pulses {
        cfg.pulses.pulse_count = k;
    }
    if let Some(e) = a.enc {
        cfg.chain.enc_electrons = Some(e);
    }
    let chain = cfg.validate()?;
    let trace = cfg.acquire_trace(&chain)?;
    export_trace(&trace, &a.output)?;
    println!(
        "{} samples, dt {:e} s, first pulse at {:e} s",
        trace.len(),
        trace.sample_interval,
        chain.pulse_start_time(&cfg.pulses, 0)
    );
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let trace = a.trace.read()?;
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let chain = cfg.as_ref().map(|c| c.validate()).transpose()?;
    let need = |name: &str| Error::Config(format!("--{name} is required without --config"));

    let period = a.period.or(cfg.as_ref().map(|c| c.pulses.repetition_period)).ok_or_else(|| need("period"))?;
    let count = a.count.or(cfg.as_ref().map(|c| c.pulses.pulse_count)).ok_or_else(|| need("count"))?;
    let first = match (a.first_pulse, &cfg, &chain) {
        (Some(t), _, _) => t,
        (None, Some(c), Some(ch)) => c.first_pulse_time(ch),
        _ => return Err(need("first-pulse")),
    };
    let kind: WindowKind = a
        .kind
        .map(Into::into)
        .or(cfg.as_ref().map(|c| c.window.kind))
        .unwrap_or(WindowKind::Boxcar);
    let duration = a.duration.or(cfg.as_ref().map(|c| c.window.duration)).ok_or_else(|| need("duration"))?;
    let window = match (a.start.or(cfg.as_ref().and_then(|c| c.window.start)), &cfg, &chain) {
        (Some(s), _, _) => GatingWindow::starting_at(kind, duration, s)?,
        (None, Some(c), Some(ch)) => pulsenoise::analysis::aligned_window(ch, &c.pulses, kind, duration)?,
        _ => return Err(need("start")),
    };
    let abs = GatingWindow {
        offset: window.offset + first,
        ..window
    };
    let areas = integrate(&trace, &abs, period, count)?;
    let var = pulse_variance(&areas)?;
    let unit = if areas.is_calibrated() {
        "photoelectrons^2".to_string()
    } else {
        format!("{}^2 (uncalibrated)", trace.units.label())
    };
    println!("{} window {:e} s from {:e} s after pulse start", kind.name(), window.duration, window.start());
    println!("pulses: {count}");
    println!("variance: {var:.6e} {unit}");
    if a.two_sample {
        let rep = two_sample_diagnostic(&trace, &abs, period, count)?;
        println!(
            "two-sample: dcs variance {:.6e}, two-sample variance {:.6e}, ratio {:.3}",
            rep.dcs_variance, rep.two_sample_variance, rep.ratio
        );
    }
    if let Some(out) = a.output {
        let idx: Vec<f64> = (0..count).map(|i| i as f64).collect();
        let col = format!("area_{}", kind.name());
        Table::from_columns(&["pulse_index", &col], &[&idx, &areas.areas]).write(&out)?;
    }
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let trace = a.trace.read()?;
    let taper = if a.hann { Taper::Hann } else { Taper::None };
    let psd = estimate_psd_with(&trace, a.segment, taper)?;
    psd.to_table().write(&a.output)?;
    println!(
        "{} bins, resolution {:e} Hz, {} segments, total power {:.6e}",
        psd.len(),
        psd.resolution_bandwidth,
        psd.segment_count,
        psd.total_power()
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let psd = SpectrumEstimate::from_table(&Table::read(&a.spectrum)?)?;
    let window = GatingWindow::new(a.kind.into(), a.duration, 0.0)?;
    let p = predict_pulsed_noise(&psd, &window)?;
    println!("predicted variance: {p:.6e}");
    Ok(())
}

fn optimize(a: OptimizeArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let chain = cfg.validate()?;
    let range = cfg
        .analysis
        .optimize
        .ok_or_else(|| Error::Config("config has no [analysis.optimize] search range".into()))?;
    let kind = a.kind.map(Into::into).unwrap_or(cfg.window.kind);
    let opt = optimize_window(&cfg.pulses, &chain, kind, &range, cfg.seed)?;
    opt.to_table().write(&a.output)?;
    println!(
        "best {} window: {:e} s starting {:e} s after the pulse, n_3db {:.4e}",
        kind.name(),
        opt.best.duration,
        opt.best.start(),
        opt.best_n_3db
    );
    Ok(())
}

fn scaling(a: ScalingArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(p) = a.photons {
        cfg.analysis.scaling = Some(ScalingSettings { photon_numbers: p });
    }
    let chain = cfg.validate()?;
    let grid = cfg
        .scaling_grid()
        .ok_or_else(|| Error::Config("no photon numbers: set [analysis.scaling] or --photons".into()))?;
    let windows = cfg.relative_windows(&chain)?;
    let fits = pulsenoise::analysis::noise_scaling_windows(&grid, &chain, &windows, cfg.seed)?;
    std::fs::create_dir_all(&a.output_dir).map_err(|e| io_error(&a.output_dir, e))?;
    for fit in &fits {
        let kind = fit.window.map_or("boxcar", |w| w.kind.name());
        fit.to_table().write(&a.output_dir.join(format!("scaling_{kind}.csv")))?;
        let rep = classical_noise_check(fit);
        println!(
            "{kind}: C {:.4e}, a {:.4e} +- {:.1e}, b {:.3e} +- {:.1e}, n_3db {:.4e}, enc {:.1}, slope {}{}",
            fit.electronic_variance,
            fit.linear_coeff,
            fit.standard_errors.linear_coeff,
            fit.quadratic_coeff,
            fit.standard_errors.quadratic_coeff,
            fit.n_3db,
            fit.enc,
            fit.loglog_slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            if rep.flagged { " [classical noise]" } else { "" }
        );
    }
    Ok(())
}

fn ingest_check(a: IngestCheckArgs) -> Result<()> {
    let t = a.trace.read()?;
    let mean = t.samples.iter().sum::<f64>() / t.len() as f64;
    let var = t.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
    println!("samples: {}", t.len());
    println!("sample_interval: {:e} s", t.sample_interval);
    println!("origin_time: {:e} s", t.origin_time);
    println!("duration: {:e} s", t.duration());
    println!(
        "units: {}{}",
        t.units.label(),
        if t.units.electrons_per_unit().is_some() { "" } else { " (uncalibrated)" }
    );
    println!("mean: {mean:.6e}");
    println!("variance: {var:.6e}");
    Ok(())
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
