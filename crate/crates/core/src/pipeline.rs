//! Config-driven end-to-end runs.
//!
//! A run reads a TOML [`RunConfig`], obtains a trace (simulated or read
//! from disk), integrates its pulses, and optionally estimates the noise
//! spectrum, scans the photon number and searches the window grid. Every
//! artifact is a CSV table in the output directory, listed together with
//! the config, seed and tool version in `manifest.json`. Output bytes are a
//! function of the config alone.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    aligned_window, classical_noise_check, integrate, noise_scaling_windows, optimize_window, pulse_variance,
    ClassicalNoiseReport, NoiseScalingResult, SearchRange,
};
use crate::chain::{synthesize_trace, DetectorChainConfig, Digitizer, Trace};
use crate::error::{Error, Result};
use crate::io::{export_trace, ingest_trace, Table, TraceFormat};
use crate::photon::{sample_pulse_train, CoherentPulseTrainSpec};
use crate::spectral::{estimate_psd_with, predict_pulsed_noise, Taper};
use crate::window::{GatingWindow, WindowKind};

/// Where the trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    #[default]
    Simulate,
    Ingest {
        path: PathBuf,
        /// Set for amplitude-only files.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_interval: Option<f64>,
        #[serde(default)]
        amplitude_only: bool,
        /// Start of the first light pulse on the file's time axis.
        first_pulse_time: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainPreset {
    #[default]
    VersionOne,
    VersionTwo,
    VersionOneSlow,
}

/// A chain preset with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    #[serde(default)]
    pub preset: ChainPreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator_discharge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shaping_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shaper_order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pole_zero_residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enc_electrons: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analog_bandwidth_limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digitizer: Option<Digitizer>,
}

impl ChainSettings {
    pub fn resolve(&self) -> Result<DetectorChainConfig> {
        let mut c = match self.preset {
            ChainPreset::VersionOne => DetectorChainConfig::version_one(),
            ChainPreset::VersionTwo => DetectorChainConfig::version_two(),
            ChainPreset::VersionOneSlow => DetectorChainConfig::version_one_slow(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            integrator_discharge,
            shaping_time,
            shaper_order,
            pole_zero_residual,
            enc_electrons,
            sample_interval,
            analog_bandwidth_limit
        );
        if self.lead_in.is_some() {
            c.lead_in = self.lead_in;
        }
        if self.record_length.is_some() {
            c.record_length = self.record_length;
        }
        if self.digitizer.is_some() {
            c.digitizer = self.digitizer;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Window placement relative to the start of each light pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSettings {
    #[serde(default = "default_kind")]
    pub kind: WindowKind,
    /// `sigma`, seconds.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Inner interval start after the pulse start; placed on the largest
    /// noiseless area when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
}

fn default_kind() -> WindowKind {
    WindowKind::Boxcar
}

fn default_duration() -> f64 {
    1.25e-6
}

impl Default for WindowSettings {
    fn default() -> Self {
        Self {
            kind: default_kind(),
            duration: default_duration(),
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSettings {
    /// Mean photon numbers per pulse; other pulse fields come from `[pulses]`.
    pub photon_numbers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSettings {
    pub segment_length: usize,
    #[serde(default)]
    pub taper: Taper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSettings {
    #[serde(default = "yes")]
    pub write_trace: bool,
    /// Evaluate boxcar and dcs side by side instead of only `window.kind`.
    #[serde(default = "yes")]
    pub both_windows: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<SearchRange>,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            write_trace: true,
            both_windows: true,
            scaling: None,
            spectrum: None,
            optimize: None,
        }
    }
}

/// Complete description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub source: SourceConfig,
    pub pulses: CoherentPulseTrainSpec,
    #[serde(default)]
    pub chain: ChainSettings,
    #[serde(default)]
    pub window: WindowSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("pulsenoise-out")
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("invalid run config: {e}")))?;
        Ok(cfg)
    }

    /// Reads a TOML file; a relative ingest path resolves against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let SourceConfig::Ingest { path: p, .. } = &mut cfg.source {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }

    /// Checks every sub-config; nothing is written when this fails.
    pub fn validate(&self) -> Result<DetectorChainConfig> {
        self.pulses.validate()?;
        let chain = self.chain.resolve()?;
        GatingWindow::new(self.window.kind, self.window.duration, self.window.start.unwrap_or(0.0))?;
        if let SourceConfig::Ingest {
            sample_interval,
            amplitude_only,
            first_pulse_time,
            ..
        } = &self.source
        {
            if *amplitude_only && sample_interval.is_none() {
                log::debug!("amplitude-only ingest without sample_interval; relying on the file header");
            }
            if !first_pulse_time.is_finite() {
                return Err(Error::config("first_pulse_time must be finite"));
            }
            if self.window.start.is_none() {
                log::info!("window start not set for an ingested trace; aligning on the chain model");
            }
        }
        if let Some(s) = &self.analysis.scaling {
            if s.photon_numbers.len() < 3 {
                return Err(Error::config("scaling needs at least 3 photon numbers"));
            }
        }
        if let Some(s) = &self.analysis.spectrum {
            if !s.segment_length.is_power_of_two() || s.segment_length < 2 {
                return Err(Error::config(format!(
                    "spectrum segment length must be a power of two, got {}",
                    s.segment_length
                )));
            }
        }
        Ok(chain)
    }

    /// Window kinds evaluated by the run, configured kind first.
    pub fn window_kinds(&self) -> Vec<WindowKind> {
        let main = self.window.kind;
        if self.analysis.both_windows {
            let other = match main {
                WindowKind::Boxcar => WindowKind::Dcs,
                WindowKind::Dcs => WindowKind::Boxcar,
            };
            vec![main, other]
        } else {
            vec![main]
        }
    }

    /// Windows relative to the pulse start, one per kind.
    pub fn relative_windows(&self, chain: &DetectorChainConfig) -> Result<Vec<GatingWindow>> {
        self.window_kinds()
            .into_iter()
            .map(|kind| match self.window.start {
                Some(start) => GatingWindow::starting_at(kind, self.window.duration, start),
                None => aligned_window(chain, &self.pulses, kind, self.window.duration),
            })
            .collect()
    }

    /// Time of the first pulse on the trace axis.
    pub fn first_pulse_time(&self, chain: &DetectorChainConfig) -> f64 {
        match &self.source {
            SourceConfig::Simulate => chain.pulse_start_time(&self.pulses, 0),
            SourceConfig::Ingest { first_pulse_time, .. } => *first_pulse_time,
        }
    }

    /// The trace this config analyzes.
    pub fn acquire_trace(&self, chain: &DetectorChainConfig) -> Result<Trace> {
        match &self.source {
            SourceConfig::Simulate => {
                let pulses = sample_pulse_train(&self.pulses, self.seed)?;
                synthesize_trace(&pulses, &self.pulses, chain, self.seed)
            }
            SourceConfig::Ingest {
                path,
                sample_interval,
                amplitude_only,
                ..
            } => {
                let format = if *amplitude_only {
                    TraceFormat::AmplitudeOnly {
                        sample_interval: *sample_interval,
                    }
                } else {
                    TraceFormat::TwoColumn
                };
                ingest_trace(path, format)
            }
        }
    }

    /// Pulse specs for the scaling grid.
    pub fn scaling_grid(&self) -> Option<Vec<CoherentPulseTrainSpec>> {
        self.analysis
            .scaling
            .as_ref()
            .map(|s| s.photon_numbers.iter().map(|&n| self.pulses.with_photons(n)).collect())
    }
}

/// Summary of the best window of a search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub best: GatingWindow,
    pub best_n_3db: f64,
}

/// Numbers reported in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunResults {
    /// Relative windows actually used, by kind name.
    pub windows: BTreeMap<String, GatingWindow>,
    pub pulse_variance: BTreeMap<String, f64>,
    /// `true` when areas are in photoelectrons.
    pub calibrated: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub predicted_variance: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scaling: BTreeMap<String, NoiseScalingResult>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub classical_noise: BTreeMap<String, ClassicalNoiseReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization: Option<OptimizationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Artifact file names, relative to the output directory.
    pub outputs: Vec<String>,
    pub results: RunResults,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs every configured stage and writes the artifacts.
///
/// Errors carry the name of the stage that raised them.
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    let chain = config.validate().map_err(|e| e.in_stage("config"))?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).in_stage("output"))?;

    let mut outputs = Vec::new();
    let mut results = RunResults::default();
    let write = |name: &str, table: &Table, outputs: &mut Vec<String>| -> Result<()> {
        table.write(&dir.join(name)).map_err(|e| e.in_stage("output"))?;
        outputs.push(name.to_string());
        Ok(())
    };

    let source_stage = match config.source {
        SourceConfig::Simulate => "simulate",
        SourceConfig::Ingest { .. } => "ingest",
    };
    let trace = config.acquire_trace(&chain).map_err(|e| e.in_stage(source_stage))?;
    if config.analysis.write_trace && matches!(config.source, SourceConfig::Simulate) {
        export_trace(&trace, &dir.join("trace.csv")).map_err(|e| e.in_stage("output"))?;
        outputs.push("trace.csv".into());
    }

    let windows = config.relative_windows(&chain).map_err(|e| e.in_stage("window"))?;
    let t0 = config.first_pulse_time(&chain);
    let spec = &config.pulses;
    let mut columns: Vec<Vec<f64>> = vec![(0..spec.pulse_count).map(|i| i as f64).collect()];
    let mut names = vec!["pulse_index".to_string()];
    for w in &windows {
        let abs = GatingWindow {
            offset: w.offset + t0,
            ..*w
        };
        let areas =
            integrate(&trace, &abs, spec.repetition_period, spec.pulse_count).map_err(|e| e.in_stage("integrate"))?;
        let var = pulse_variance(&areas).map_err(|e| e.in_stage("integrate"))?;
        results.calibrated = areas.is_calibrated();
        results.pulse_variance.insert(w.kind.name().into(), var);
        results.windows.insert(w.kind.name().into(), *w);
        names.push(format!("area_{}", w.kind.name()));
        columns.push(areas.areas);
    }
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let col_refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    write("areas.csv", &Table::from_columns(&name_refs, &col_refs), &mut outputs)?;

    if let Some(s) = &config.analysis.spectrum {
        let psd = estimate_psd_with(&trace, s.segment_length, s.taper).map_err(|e| e.in_stage("spectrum"))?;
        write("spectrum.csv", &psd.to_table(), &mut outputs)?;
        for w in &windows {
            let scale = trace.units.electrons_per_unit().unwrap_or(1.0);
            let p = predict_pulsed_noise(&psd, w).map_err(|e| e.in_stage("spectrum"))?;
            results.predicted_variance.insert(w.kind.name().into(), p * scale * scale);
        }
    }

    if let Some(grid) = config.scaling_grid() {
        let fits = noise_scaling_windows(&grid, &chain, &windows, config.seed).map_err(|e| e.in_stage("scaling"))?;
        for fit in fits {
            let kind = fit.window.map_or("boxcar", |w| w.kind.name()).to_string();
            write(&format!("scaling_{kind}.csv"), &fit.to_table(), &mut outputs)?;
            results.classical_noise.insert(kind.clone(), classical_noise_check(&fit));
            results.scaling.insert(kind, fit);
        }
    }

    if let Some(range) = &config.analysis.optimize {
        let opt = optimize_window(spec, &chain, config.window.kind, range, config.seed)
            .map_err(|e| e.in_stage("optimize"))?;
        write(&format!("surface_{}.csv", config.window.kind.name()), &opt.to_table(), &mut outputs)?;
        results.optimization = Some(OptimizationSummary {
            best: opt.best,
            best_n_3db: opt.best_n_3db,
        });
    }

    outputs.push(MANIFEST_FILE.into());
    let manifest = Manifest {
        tool: "pulsenoise".into(),
        version: crate::VERSION.into(),
        seed: config.seed,
        config: config.clone(),
        outputs,
        results,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::analysis(format!("cannot serialize manifest: {e}")).in_stage("output"))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e).in_stage("output"))?;
    Ok(manifest)
}
