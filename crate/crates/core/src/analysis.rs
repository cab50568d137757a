//! Pulse areas, their variance and how it scales with photon number.
//!
//! A window is laid on every pulse of a train: the inner interval of pulse
//! `i` starts at `window.start() + i * r`. Window edges snap to the nearest
//! sample, so an inner interval covers `m = round(sigma / dt)` samples and
//! each dcs flank `h = round(m / 2)` samples.
//!
//! The noise model fitted to the area variance is
//! `v(N) = C + a N + b N^2`: electronic noise, shot noise and classical
//! (correlated) noise. `n_3db = C / a` is the photon number at which shot
//! noise equals electronic noise.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::{synthesize_with_model, ChainModel, DetectorChainConfig, Trace, TraceUnits};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::photon::{sample_pulse_train, CoherentPulseTrainSpec};
use crate::rng::derive_seed;
use crate::window::{GatingWindow, WindowKind};

/// Per-pulse areas from one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseAreas {
    pub areas: Vec<f64>,
    pub window: GatingWindow,
    pub pulse_count: usize,
    /// Photoelectrons when the trace carried a calibration.
    pub units: TraceUnits,
}

impl PulseAreas {
    pub fn is_calibrated(&self) -> bool {
        matches!(self.units, TraceUnits::Photoelectrons)
    }
}

/// Window geometry on the sample grid.
#[derive(Debug, Clone, Copy)]
struct SampledWindow {
    kind: WindowKind,
    inner: usize,
    flank: usize,
}

impl SampledWindow {
    fn new(kind: WindowKind, duration: f64, dt: f64) -> Self {
        let inner = ((duration / dt).round() as usize).max(1);
        let flank = ((inner as f64 / 2.0).round() as usize).max(1);
        Self { kind, inner, flank }
    }

    /// Samples before and after the inner interval that the window reads.
    fn margins(&self) -> (usize, usize) {
        match self.kind {
            WindowKind::Boxcar => (0, 0),
            WindowKind::Dcs => (self.flank, self.flank),
        }
    }

    fn extent(&self) -> usize {
        let (a, b) = self.margins();
        a + self.inner + b
    }

    fn in_bounds(&self, start: i64, len: usize) -> bool {
        let (before, after) = self.margins();
        start - before as i64 >= 0 && start + (self.inner + after) as i64 <= len as i64
    }

    /// Area with the inner interval starting at sample `s`, from prefix sums.
    fn area(&self, prefix: &[f64], s: usize) -> f64 {
        let sum = |a: usize, b: usize| prefix[b] - prefix[a];
        let m = self.inner;
        let inner = sum(s, s + m) / m as f64;
        match self.kind {
            WindowKind::Boxcar => inner,
            WindowKind::Dcs => {
                let h = self.flank;
                inner - (sum(s - h, s) + sum(s + m, s + m + h)) / (2 * h) as f64
            }
        }
    }
}

fn prefix_sums(samples: &[f64]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    let mut acc = 0.0;
    prefix.push(acc);
    for s in samples {
        acc += s;
        prefix.push(acc);
    }
    prefix
}

fn check_train(repetition_period: f64, pulse_count: usize) -> Result<()> {
    if !(repetition_period > 0.0 && repetition_period.is_finite()) {
        return Err(Error::config(format!("repetition period must be > 0, got {repetition_period}")));
    }
    if pulse_count == 0 {
        return Err(Error::config("pulse count must be >= 1"));
    }
    Ok(())
}

/// Boxcar areas (mean of the trace over each inner interval).
pub fn integrate_boxcar(
    trace: &Trace,
    window: &GatingWindow,
    repetition_period: f64,
    pulse_count: usize,
) -> Result<PulseAreas> {
    integrate(trace, &window.with_kind(WindowKind::Boxcar), repetition_period, pulse_count)
}

/// Baseline-subtracted areas: inner mean minus the mean of the two
/// flanking half-windows.
pub fn integrate_dcs(
    trace: &Trace,
    window: &GatingWindow,
    repetition_period: f64,
    pulse_count: usize,
) -> Result<PulseAreas> {
    integrate(trace, &window.with_kind(WindowKind::Dcs), repetition_period, pulse_count)
}

/// Areas for the window's own kind.
pub fn integrate(
    trace: &Trace,
    window: &GatingWindow,
    repetition_period: f64,
    pulse_count: usize,
) -> Result<PulseAreas> {
    check_train(repetition_period, pulse_count)?;
    let dt = trace.sample_interval;
    let sw = SampledWindow::new(window.kind, window.duration, dt);
    let period_samples = (repetition_period / dt).round() as usize;
    if window.kind == WindowKind::Dcs && pulse_count > 1 && sw.extent() > period_samples {
        return Err(Error::analysis(format!(
            "dcs window of {} s with {} s flanks spans {} samples, more than the {period_samples}-sample \
             repetition period: flanks collide with neighbouring pulses",
            window.duration,
            sw.flank as f64 * dt,
            sw.extent()
        )));
    }
    let prefix = prefix_sums(&trace.samples);
    let mut areas = Vec::with_capacity(pulse_count);
    for i in 0..pulse_count {
        let s = trace.nearest_index(window.start() + i as f64 * repetition_period);
        if !sw.in_bounds(s, trace.len()) {
            return Err(Error::analysis(format!(
                "pulse {i}: {} window starting at {} s (sample {s}) exceeds the trace of {} samples",
                window.kind.name(),
                window.start() + i as f64 * repetition_period,
                trace.len()
            )));
        }
        areas.push(sw.area(&prefix, s as usize));
    }
    let units = match trace.units.electrons_per_unit() {
        Some(e) => {
            if e != 1.0 {
                areas.iter_mut().for_each(|a| *a *= e);
            }
            TraceUnits::Photoelectrons
        }
        None => trace.units.clone(),
    };
    Ok(PulseAreas {
        areas,
        window: *window,
        pulse_count,
        units,
    })
}

/// Population variance `(1/k) sum p_i^2 - ((1/k) sum p_i)^2`.
pub fn pulse_variance(areas: &PulseAreas) -> Result<f64> {
    variance(&areas.areas)
}

fn variance(xs: &[f64]) -> Result<f64> {
    let k = xs.len();
    if k < 2 {
        return Err(Error::analysis(format!("variance needs at least 2 pulses, got {k}")));
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    Ok(xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k as f64)
}

/// Standard errors of the fitted coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStandardErrors {
    pub electronic_variance: f64,
    pub linear_coeff: f64,
    pub quadratic_coeff: f64,
}

/// Variance-versus-photon-number curve and its decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScalingResult {
    pub photon_numbers: Vec<f64>,
    pub variances: Vec<f64>,
    /// Pulses per grid point.
    pub pulse_count: usize,
    pub quantum_efficiency: f64,
    /// `C`.
    pub electronic_variance: f64,
    /// `a`, variance per photon.
    pub linear_coeff: f64,
    /// `b`, variance per photon squared.
    pub quadratic_coeff: f64,
    pub standard_errors: FitStandardErrors,
    /// Slope of `ln(v - C)` against `ln N`; `None` with fewer than two usable points.
    pub loglog_slope: Option<f64>,
    pub n_3db: f64,
    /// `sqrt(eta * C / a)`: electronic noise in photoelectrons at this window.
    pub enc: f64,
    /// Window used, relative to the pulse start, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<GatingWindow>,
}

impl NoiseScalingResult {
    pub fn fitted(&self, photon_number: f64) -> f64 {
        self.electronic_variance + self.linear_coeff * photon_number + self.quadratic_coeff * photon_number.powi(2)
    }

    /// `|a_self - a_other| / a_other`.
    pub fn relative_linear_difference(&self, other: &NoiseScalingResult) -> f64 {
        (self.linear_coeff - other.linear_coeff).abs() / other.linear_coeff.abs()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&[
            "photon_number",
            "variance",
            "fit_electronic",
            "fit_linear",
            "fit_quadratic",
            "fit_total",
        ]);
        for (n, v) in self.photon_numbers.iter().zip(&self.variances) {
            t.push(vec![
                *n,
                *v,
                self.electronic_variance,
                self.linear_coeff * n,
                self.quadratic_coeff * n * n,
                self.fitted(*n),
            ]);
        }
        t
    }
}

/// Fits `v = C + a N + b N^2` by weighted least squares.
///
/// Weights are the inverse sampling variance of a variance estimate from
/// `pulse_count` Gaussian areas, `k / (2 v^2)`, evaluated at the fitted
/// curve (two refinements starting from the observed values). Standard
/// errors follow from the inverse normal matrix.
pub fn fit_noise_scaling(
    photon_numbers: &[f64],
    variances: &[f64],
    pulse_count: usize,
    quantum_efficiency: f64,
) -> Result<NoiseScalingResult> {
    if photon_numbers.len() != variances.len() {
        return Err(Error::analysis(format!(
            "{} photon numbers but {} variances",
            photon_numbers.len(),
            variances.len()
        )));
    }
    if photon_numbers.iter().chain(variances).any(|x| !x.is_finite()) || photon_numbers.iter().any(|n| *n < 0.0) {
        return Err(Error::analysis("photon numbers and variances must be finite, photon numbers >= 0"));
    }
    let mut distinct: Vec<f64> = photon_numbers.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::analysis(format!(
            "degenerate fit: {} distinct photon numbers, need at least 3",
            distinct.len()
        )));
    }
    if pulse_count < 2 {
        return Err(Error::analysis("fit weights need at least 2 pulses per point"));
    }
    let eta = quantum_efficiency;

    let scale = distinct.last().copied().unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let vmax = variances.iter().cloned().fold(0.0, f64::max);
    let floor = if vmax > 0.0 { vmax * 1e-6 } else { 1.0 };
    let k = pulse_count as f64;

    let solve = |expected: &[f64]| -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let weights: Vec<f64> = expected.iter().map(|v| k / (2.0 * v.max(floor).powi(2))).collect();
        let wmax = weights.iter().cloned().fold(0.0, f64::max);
        let mut a = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for ((n, v), w) in photon_numbers.iter().zip(variances).zip(&weights) {
            let x = n / scale;
            let row = Vector3::new(1.0, x, x * x);
            let w = w / wmax;
            a += w * row * row.transpose();
            rhs += w * v * row;
        }
        let sv = a.singular_values();
        if sv.min() <= sv.max() * 1e-14 {
            return Err(Error::analysis("degenerate fit: singular normal equations"));
        }
        let inv = a
            .try_inverse()
            .ok_or_else(|| Error::analysis("degenerate fit: singular normal equations"))?;
        Ok((inv * rhs, inv / wmax))
    };

    let mut expected = variances.to_vec();
    let (mut coef, mut cov) = solve(&expected)?;
    for _ in 0..2 {
        expected = photon_numbers
            .iter()
            .map(|n| {
                let x = n / scale;
                coef[0] + coef[1] * x + coef[2] * x * x
            })
            .collect();
        (coef, cov) = solve(&expected)?;
    }

    let c = coef[0];
    let a = coef[1] / scale;
    let b = coef[2] / (scale * scale);
    let standard_errors = FitStandardErrors {
        electronic_variance: cov[(0, 0)].sqrt(),
        linear_coeff: cov[(1, 1)].sqrt() / scale,
        quadratic_coeff: cov[(2, 2)].sqrt() / (scale * scale),
    };
    if a.is_nan() || a <= 0.0 {
        return Err(Error::analysis(format!(
            "fitted linear (shot-noise) coefficient {a:e} is not positive"
        )));
    }
    let n_3db = c / a;
    Ok(NoiseScalingResult {
        photon_numbers: photon_numbers.to_vec(),
        variances: variances.to_vec(),
        pulse_count,
        quantum_efficiency: eta,
        electronic_variance: c,
        linear_coeff: a,
        quadratic_coeff: b,
        standard_errors,
        loglog_slope: loglog_slope(photon_numbers, variances, c),
        n_3db,
        enc: (eta * n_3db).max(0.0).sqrt(),
        window: None,
    })
}

/// Least-squares slope of `ln(v - C)` against `ln N`.
fn loglog_slope(photon_numbers: &[f64], variances: &[f64], electronic: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = photon_numbers
        .iter()
        .zip(variances)
        .filter(|(n, v)| **n > 0.0 && **v - electronic > 0.0)
        .map(|(n, v)| (n.ln(), (v - electronic).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Minimum pulses per grid point for a scaling run.
pub const MIN_SCALING_PULSES: usize = 500;

fn check_grid(specs: &[CoherentPulseTrainSpec]) -> Result<()> {
    let first = specs.first().ok_or_else(|| Error::config("photon-number grid is empty"))?;
    for s in specs {
        s.validate()?;
        if s.quantum_efficiency != first.quantum_efficiency
            || s.pulse_duration != first.pulse_duration
            || s.repetition_period != first.repetition_period
            || s.pulse_count != first.pulse_count
        {
            return Err(Error::config(
                "all grid points must share quantum efficiency, pulse duration, repetition period and pulse count",
            ));
        }
    }
    if first.pulse_count < MIN_SCALING_PULSES {
        return Err(Error::config(format!(
            "scaling runs need >= {MIN_SCALING_PULSES} pulses per point, got {}",
            first.pulse_count
        )));
    }
    let positive: Vec<f64> = specs.iter().map(|s| s.mean_photons_per_pulse).filter(|n| *n > 0.0).collect();
    let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = positive.iter().cloned().fold(0.0, f64::max);
    if positive.is_empty() || hi / lo < 100.0 * (1.0 - 1e-9) {
        return Err(Error::config(format!(
            "photon-number grid must span at least two decades (got {lo:e} .. {hi:e})"
        )));
    }
    Ok(())
}

/// Shifts a window given relative to the pulse start onto the trace time axis.
pub fn absolute_window(
    window: &GatingWindow,
    config: &DetectorChainConfig,
    spec: &CoherentPulseTrainSpec,
) -> GatingWindow {
    GatingWindow {
        offset: window.offset + config.pulse_start_time(spec, 0),
        ..*window
    }
}

/// Simulates one train per grid point and returns its area variance for
/// each window. Windows are relative to the pulse start.
pub fn scaling_variances(
    specs: &[CoherentPulseTrainSpec],
    config: &DetectorChainConfig,
    windows: &[GatingWindow],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    check_grid(specs)?;
    let model = config.model()?;
    let per_point: Vec<Vec<f64>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let s = derive_seed(seed, i as u64);
            let pulses = sample_pulse_train(spec, s)?;
            let trace = synthesize_with_model(&model, &pulses, spec, s)?;
            windows
                .iter()
                .map(|w| {
                    let abs = absolute_window(w, config, spec);
                    pulse_variance(&integrate(&trace, &abs, spec.repetition_period, spec.pulse_count)?)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // transpose to one curve per window
    Ok((0..windows.len()).map(|w| per_point.iter().map(|p| p[w]).collect()).collect())
}

/// Runs several windows over the same simulated traces and fits each curve.
pub fn noise_scaling_windows(
    specs: &[CoherentPulseTrainSpec],
    config: &DetectorChainConfig,
    windows: &[GatingWindow],
    seed: u64,
) -> Result<Vec<NoiseScalingResult>> {
    let curves = scaling_variances(specs, config, windows, seed)?;
    let photons: Vec<f64> = specs.iter().map(|s| s.mean_photons_per_pulse).collect();
    let (k, eta) = (specs[0].pulse_count, specs[0].quantum_efficiency);
    curves
        .iter()
        .zip(windows)
        .map(|(v, w)| {
            let mut r = fit_noise_scaling(&photons, v, k, eta)?;
            r.window = Some(*w);
            Ok(r)
        })
        .collect()
}

/// Variance-versus-photon-number scan with the quadratic noise fit.
///
/// `window` is relative to the start of each pulse. Grid point `i` uses the
/// seed `derive_seed(seed, i)`, so results do not depend on thread count.
pub fn noise_scaling(
    specs: &[CoherentPulseTrainSpec],
    config: &DetectorChainConfig,
    window: &GatingWindow,
    seed: u64,
) -> Result<NoiseScalingResult> {
    Ok(noise_scaling_windows(specs, config, std::slice::from_ref(window), seed)?.remove(0))
}

/// Window of the given kind and duration placed where it collects the
/// largest noiseless area, relative to the pulse start.
pub fn aligned_window(
    config: &DetectorChainConfig,
    spec: &CoherentPulseTrainSpec,
    kind: WindowKind,
    duration: f64,
) -> Result<GatingWindow> {
    spec.validate()?;
    let model = config.model()?;
    let dt = config.sample_interval;
    let sw = SampledWindow::new(kind, duration, dt);
    let lead = sw.extent();
    let response = unit_response(&model, spec, lead)?;
    let prefix = prefix_sums(&response);
    let (before, after) = sw.margins();
    let last = response.len() - sw.inner - after;
    let best = (before..=last)
        .map(|s| (s, sw.area(&prefix, s)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
        .ok_or_else(|| Error::config("window does not fit in one repetition period"))?;
    GatingWindow::starting_at(kind, sw.inner as f64 * dt, (best as f64 - lead as f64) * dt)
}

/// Noiseless response to one pulse of unit charge over one repetition
/// period, with `pad` zero samples before the pulse and after the period.
fn unit_response(model: &ChainModel, spec: &CoherentPulseTrainSpec, pad: usize) -> Result<Vec<f64>> {
    let dt = model.config().sample_interval;
    let period = (spec.repetition_period / dt).round() as usize;
    let width = model.pulse_samples(spec.pulse_duration);
    let cal = model.calibrate(spec.pulse_duration);
    let mut charges = vec![0.0; period + pad];
    charges[..width].fill(1.0 / width as f64);
    let mut out = vec![0.0; pad];
    out.extend(model.filter_charges(&charges).into_iter().map(|y| y * cal.gain));
    Ok(out)
}

/// Grid for [`optimize_window`]. Durations and starts are in seconds and
/// snap to the sample grid; starts are relative to the pulse start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRange {
    pub duration_min: f64,
    pub duration_max: f64,
    pub duration_step: f64,
    pub start_min: f64,
    pub start_max: f64,
    pub start_step: f64,
}

impl SearchRange {
    fn axis(name: &str, lo: f64, hi: f64, step: f64, dt: f64) -> Result<Vec<i64>> {
        if !(lo.is_finite() && hi.is_finite() && step > 0.0 && step.is_finite()) || lo > hi {
            return Err(Error::config(format!(
                "empty {name} range [{lo}, {hi}] with step {step}"
            )));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        let mut idx: Vec<i64> = (0..n).map(|i| ((lo + i as f64 * step) / dt).round() as i64).collect();
        idx.dedup();
        Ok(idx)
    }

    fn durations(&self, dt: f64) -> Result<Vec<usize>> {
        if self.duration_min.is_nan() || self.duration_min <= 0.0 {
            return Err(Error::config(format!("window durations must be > 0, got {}", self.duration_min)));
        }
        let idx = Self::axis("duration", self.duration_min, self.duration_max, self.duration_step, dt)?;
        Ok(idx.into_iter().map(|m| m.max(1) as usize).collect())
    }

    fn starts(&self, dt: f64) -> Result<Vec<i64>> {
        Self::axis("start", self.start_min, self.start_max, self.start_step, dt)
    }
}

/// One point of the optimization surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub duration: f64,
    pub start: f64,
    pub n_3db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOptimization {
    /// Best window, relative to the pulse start.
    pub best: GatingWindow,
    pub best_n_3db: f64,
    /// Duration-major grid.
    pub surface: Vec<SurfacePoint>,
}

impl WindowOptimization {
    /// Minimum over starts for each duration.
    pub fn duration_profile(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for p in &self.surface {
            match out.last_mut() {
                Some((d, n)) if *d == p.duration => *n = n.min(p.n_3db),
                _ => out.push((p.duration, p.n_3db)),
            }
        }
        out
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["duration_s", "start_s", "n_3db"]);
        for p in &self.surface {
            t.push(vec![p.duration, p.start, p.n_3db]);
        }
        t
    }
}

/// Grid search for the window with the lowest `n_3db`.
///
/// The chain is linear, so `n_3db = C N / V_light` is evaluated from one
/// electronics-only trace (`C`) and one noiseless trace carrying the shot
/// noise of `spec` (`V_light`). Both are simulated once and reused at every
/// grid point.
pub fn optimize_window(
    spec: &CoherentPulseTrainSpec,
    config: &DetectorChainConfig,
    kind: WindowKind,
    range: &SearchRange,
    seed: u64,
) -> Result<WindowOptimization> {
    spec.validate()?;
    if spec.mean_photons_per_pulse.is_nan() || spec.mean_photons_per_pulse <= 0.0 {
        return Err(Error::config("window optimization needs a nonzero photon number"));
    }
    if spec.pulse_count < 2 {
        return Err(Error::config("window optimization needs at least 2 pulses"));
    }
    let dt = config.sample_interval;
    let durations = range.durations(dt)?;
    let starts = range.starts(dt)?;

    let model = config.model()?;
    let dark_spec = spec.with_photons(0.0);
    let dark_pulses = sample_pulse_train(&dark_spec, derive_seed(seed, 0))?;
    let dark = synthesize_with_model(&model, &dark_pulses, &dark_spec, derive_seed(seed, 0))?;
    let quiet = config.clone().with_enc(0.0).model()?;
    let light_pulses = sample_pulse_train(spec, derive_seed(seed, 1))?;
    let light = synthesize_with_model(&quiet, &light_pulses, spec, derive_seed(seed, 1))?;

    let dark_prefix = prefix_sums(&dark.samples);
    let light_prefix = prefix_sums(&light.samples);
    let pulse_starts: Vec<i64> = (0..spec.pulse_count)
        .map(|i| (config.pulse_start_time(spec, i) / dt).round() as i64)
        .collect();
    let period = (spec.repetition_period / dt).round() as usize;
    let n = spec.mean_photons_per_pulse;

    let rows: Vec<Vec<SurfacePoint>> = durations
        .par_iter()
        .map(|&m| {
            let sw = SampledWindow { kind, inner: m, flank: ((m as f64 / 2.0).round() as usize).max(1) };
            if kind == WindowKind::Dcs && sw.extent() > period {
                return Err(Error::config(format!(
                    "dcs window of {} s does not fit in the {} s repetition period",
                    m as f64 * dt,
                    spec.repetition_period
                )));
            }
            starts
                .iter()
                .map(|&s| {
                    let mut dark_areas = Vec::with_capacity(pulse_starts.len());
                    let mut light_areas = Vec::with_capacity(pulse_starts.len());
                    for p in &pulse_starts {
                        let at = p + s;
                        if !sw.in_bounds(at, dark.len()) {
                            return Err(Error::config(format!(
                                "window starting {} s after the pulse leaves the simulated record",
                                s as f64 * dt
                            )));
                        }
                        dark_areas.push(sw.area(&dark_prefix, at as usize));
                        light_areas.push(sw.area(&light_prefix, at as usize));
                    }
                    let c = variance(&dark_areas)?;
                    let v = variance(&light_areas)?;
                    let n_3db = if v > 0.0 { c * n / v } else { f64::INFINITY };
                    Ok(SurfacePoint {
                        duration: m as f64 * dt,
                        start: s as f64 * dt,
                        n_3db,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let surface: Vec<SurfacePoint> = rows.into_iter().flatten().collect();
    let best = surface
        .iter()
        .min_by(|a, b| a.n_3db.total_cmp(&b.n_3db))
        .copied()
        .ok_or_else(|| Error::config("empty search range"))?;
    Ok(WindowOptimization {
        best: GatingWindow::starting_at(kind, best.duration, best.start)?,
        best_n_3db: best.n_3db,
        surface,
    })
}

/// Classical (quadratic) noise diagnosis of a scaling fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalNoiseReport {
    /// Quadratic term exceeds 10% of the linear term at the largest photon number.
    pub flagged: bool,
    /// `b N_max / a`.
    pub quadratic_fraction: f64,
    /// `b / se(b)`.
    pub quadratic_significance: f64,
    /// Shot-noise coefficient, for comparison across windows.
    pub linear_coeff: f64,
    pub linear_standard_error: f64,
}

pub fn classical_noise_check(result: &NoiseScalingResult) -> ClassicalNoiseReport {
    let n_max = result.photon_numbers.iter().cloned().fold(0.0, f64::max);
    let quadratic_fraction = result.quadratic_coeff * n_max / result.linear_coeff;
    let se = result.standard_errors.quadratic_coeff;
    ClassicalNoiseReport {
        flagged: quadratic_fraction > 0.1,
        quadratic_fraction,
        quadratic_significance: if se > 0.0 { result.quadratic_coeff / se } else { f64::INFINITY },
        linear_coeff: result.linear_coeff,
        linear_standard_error: result.standard_errors.linear_coeff,
    }
}

/// dcs area variance next to the two-sample variance of consecutive
/// `sigma`-long baseline means, for a dark trace. For white noise the ratio
/// is 2; excess low-frequency noise raises the two-sample variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub dcs_variance: f64,
    pub two_sample_variance: f64,
    pub ratio: f64,
}

pub fn two_sample_diagnostic(
    trace: &Trace,
    window: &GatingWindow,
    repetition_period: f64,
    pulse_count: usize,
) -> Result<TwoSampleReport> {
    let dcs = pulse_variance(&integrate_dcs(trace, window, repetition_period, pulse_count)?)?;
    let m = ((window.duration / trace.sample_interval).round() as usize).max(1);
    let means: Vec<f64> = trace.samples.chunks_exact(m).map(|c| c.iter().sum::<f64>() / m as f64).collect();
    if means.len() < 2 {
        return Err(Error::analysis("trace too short for a two-sample variance"));
    }
    let scale = trace.units.electrons_per_unit().unwrap_or(1.0);
    let two_sample = means.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2.0 * (means.len() - 1) as f64)
        * scale
        * scale;
    Ok(TwoSampleReport {
        dcs_variance: dcs,
        two_sample_variance: two_sample,
        ratio: dcs / two_sample,
    })
}
