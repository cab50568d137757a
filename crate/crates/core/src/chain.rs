//! Detector electronics: charge integrator, pole/zero-compensated
//! semi-Gaussian shaper and white electronic noise.
//!
//! The chain maps the differential photocurrent `i(t)` (electrons per
//! second) to the output through
//!
//! ```text
//!            (1 - eps) + eps / (1 + s tau_i)
//! H(s) = ---------------------------------------
//!                  (1 + s tau_0)^(n + 1)
//! ```
//!
//! The numerator is the integrator pole `1/(1 + s tau_i)` multiplied by the
//! pole/zero network zero `1 + s (1 - eps) tau_i`; `eps = 0` cancels the pole
//! exactly and `eps > 0` leaves a slow tail carrying a fraction `eps` of the
//! charge. The denominator is the CR differentiator pole plus `n` RC
//! integrator stages, all at `tau_0`. `tau_0` is derived from the shaping
//! time so that the delta response has the FWHM of a Gaussian whose
//! standard deviation is the shaping time.
//!
//! Time series are produced with an exact zero-order-hold discretization of
//! the state-space form, so sampled outputs are exact for inputs that are
//! constant over each sample interval.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photon::{sample_cw_charges, CoherentPulseTrainSpec, PulseChargeSample};
use crate::rng::{self, streams};

/// Integrator, shaper, noise and acquisition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorChainConfig {
    /// Integrator discharge time `tau_i = C_i R_i`, seconds.
    pub integrator_discharge: f64,
    /// Shaping time `tau_s`, seconds.
    pub shaping_time: f64,
    /// Number of low-pass stages after the differentiator.
    pub shaper_order: u32,
    /// Fractional pole/zero mis-cancellation, 0 is perfect.
    #[serde(default)]
    pub pole_zero_residual: f64,
    /// RMS electronic noise in electrons at the optimal boxcar window.
    pub enc_electrons: f64,
    /// Seconds between samples.
    pub sample_interval: f64,
    /// Hertz.
    pub analog_bandwidth_limit: f64,
    /// Baseline recorded before the first pulse; one repetition period when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_in: Option<f64>,
    /// Total record length; `lead_in + (k + 1) r` when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_length: Option<f64>,
    /// Optional A/D quantizer applied to simulated traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digitizer: Option<Digitizer>,
}

/// Uniform mid-tread quantizer spanning `[-full_scale, full_scale]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Digitizer {
    pub bits: u32,
    /// Trace units.
    pub full_scale: f64,
}

impl Digitizer {
    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale / (1u64 << self.bits) as f64
    }

    pub fn quantize(&self, x: f64) -> f64 {
        let lsb = self.lsb();
        ((x / lsb).round() * lsb).clamp(-self.full_scale, self.full_scale)
    }
}

impl DetectorChainConfig {
    /// Discrete-FET integrator with a 3-pole, 330 ns shaper.
    pub fn version_one() -> Self {
        Self {
            integrator_discharge: 50e-6,
            shaping_time: 330e-9,
            shaper_order: 3,
            pole_zero_residual: 0.0,
            enc_electrons: 280.0,
            sample_interval: 10e-9,
            analog_bandwidth_limit: 20e6,
            lead_in: None,
            record_length: None,
            digitizer: None,
        }
    }

    /// Hybrid integrator with a fixed 250 ns single-pole shaper.
    pub fn version_two() -> Self {
        Self {
            shaping_time: 250e-9,
            shaper_order: 1,
            enc_electrons: 340.0,
            ..Self::version_one()
        }
    }

    /// Version I with the shaping time read off the CW roll-off instead.
    pub fn version_one_slow() -> Self {
        Self {
            shaping_time: 1.5e-6,
            ..Self::version_one()
        }
    }

    pub fn with_enc(mut self, enc_electrons: f64) -> Self {
        self.enc_electrons = enc_electrons;
        self
    }

    pub fn with_residual(mut self, pole_zero_residual: f64) -> Self {
        self.pole_zero_residual = pole_zero_residual;
        self
    }

    pub fn with_discharge(mut self, integrator_discharge: f64) -> Self {
        self.integrator_discharge = integrator_discharge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        positive("integrator discharge time", self.integrator_discharge)?;
        positive("shaping time", self.shaping_time)?;
        positive("sample interval", self.sample_interval)?;
        positive("analog bandwidth limit", self.analog_bandwidth_limit)?;
        if self.shaper_order == 0 || self.shaper_order > 12 {
            return Err(Error::config(format!(
                "shaper order must lie in 1..=12, got {}",
                self.shaper_order
            )));
        }
        if !(0.0..1.0).contains(&self.pole_zero_residual) {
            return Err(Error::config(format!(
                "pole/zero residual must lie in [0, 1), got {}",
                self.pole_zero_residual
            )));
        }
        if !(self.enc_electrons >= 0.0 && self.enc_electrons.is_finite()) {
            return Err(Error::config(format!(
                "ENC must be finite and >= 0, got {}",
                self.enc_electrons
            )));
        }
        if self.sample_interval > self.shaping_time / 10.0 * (1.0 + 1e-9) {
            return Err(Error::config(format!(
                "sample interval {} s under-samples the {} s shaping time (need <= tau_s/10)",
                self.sample_interval, self.shaping_time
            )));
        }
        let nyquist = 0.5 / self.sample_interval;
        if self.analog_bandwidth_limit > nyquist * (1.0 + 1e-9) {
            return Err(Error::config(format!(
                "analog bandwidth {} Hz exceeds the Nyquist frequency {} Hz",
                self.analog_bandwidth_limit, nyquist
            )));
        }
        if let Some(lead) = self.lead_in {
            if !(lead >= 0.0 && lead.is_finite()) {
                return Err(Error::config(format!("lead-in must be >= 0, got {lead}")));
            }
        }
        if let Some(len) = self.record_length {
            positive("record length", len)?;
        }
        if let Some(d) = self.digitizer {
            if d.bits == 0 || d.bits > 32 {
                return Err(Error::config(format!("digitizer bits must lie in 1..=32, got {}", d.bits)));
            }
            positive("digitizer full scale", d.full_scale)?;
        }
        Ok(())
    }

    /// Per-stage time constant `tau_0` of the shaper.
    pub fn stage_time_constant(&self) -> f64 {
        let gaussian_fwhm = 2.0 * (2.0 * std::f64::consts::LN_2).sqrt();
        self.shaping_time * gaussian_fwhm / semi_gaussian_fwhm(self.shaper_order)
    }

    fn lead_in_for(&self, spec: &CoherentPulseTrainSpec) -> f64 {
        self.lead_in.unwrap_or(spec.repetition_period)
    }

    /// Start time of pulse `index` (0-based) in a synthesized trace.
    pub fn pulse_start_time(&self, spec: &CoherentPulseTrainSpec, index: usize) -> f64 {
        self.lead_in_for(spec) + index as f64 * spec.repetition_period
    }

    /// Builds the discretized model. Validates the configuration.
    pub fn model(&self) -> Result<ChainModel> {
        ChainModel::new(self)
    }
}

/// FWHM of `x^n e^{-x}` in units of `x`.
pub(crate) fn semi_gaussian_fwhm(n: u32) -> f64 {
    let n = n as f64;
    // log of f(x) / f(n) + ln 2; zero at the half-maximum points
    let g = |x: f64| n * (x / n).ln() - (x - n) + std::f64::consts::LN_2;
    let bisect = |mut lo: f64, mut hi: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (g(mid) > 0.0) == (g(lo) > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let left = bisect(1e-12, n);
    let right = bisect(n, n + 60.0);
    right - left
}

/// Output-unit calibration for a given pulse duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Output units per (electron per second).
    pub gain: f64,
    /// Duration of the optimal boxcar, samples.
    pub window_samples: usize,
    /// First sample of the optimal boxcar, counted from the pulse start.
    pub window_start: usize,
    /// Fraction of the pulse charge inside the optimal boxcar.
    pub captured_fraction: f64,
}

impl Calibration {
    pub fn window_duration(&self, sample_interval: f64) -> f64 {
        self.window_samples as f64 * sample_interval
    }
}

/// Discretized chain, ready to filter sample sequences.
#[derive(Debug, Clone)]
pub struct ChainModel {
    config: DetectorChainConfig,
    tau0: f64,
    dim: usize,
    /// Row-major one-step state transition.
    ad: Vec<f64>,
    /// State increment per unit charge injected uniformly over one sample.
    b_charge: Vec<f64>,
    /// State right after a unit-charge delta.
    b_delta: Vec<f64>,
    delta_calibration: Calibration,
}

impl ChainModel {
    fn new(config: &DetectorChainConfig) -> Result<Self> {
        config.validate()?;
        let tau0 = config.stage_time_constant();
        let tau_i = config.integrator_discharge;
        let eps = config.pole_zero_residual;
        let stages = config.shaper_order as usize + 1;
        let dim = stages + 1;

        // state 0: slow tail branch; states 1..=stages: shaper poles
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        let mut b = vec![0.0; dim];
        a[(0, 0)] = -1.0 / tau_i;
        b[0] = 1.0 / tau_i;
        a[(1, 1)] = -1.0 / tau0;
        a[(1, 0)] = eps / tau0;
        b[1] = (1.0 - eps) / tau0;
        for j in 2..=stages {
            a[(j, j)] = -1.0 / tau0;
            a[(j, j - 1)] = 1.0 / tau0;
        }

        let dt = config.sample_interval;
        let mut aug = DMatrix::<f64>::zeros(dim + 1, dim + 1);
        for r in 0..dim {
            for c in 0..dim {
                aug[(r, c)] = a[(r, c)] * dt;
            }
            aug[(r, dim)] = b[r] * dt;
        }
        let e = aug.exp();
        let mut ad = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                ad[r * dim + c] = e[(r, c)];
            }
        }
        // input is charge / dt over the interval
        let b_charge = (0..dim).map(|r| e[(r, dim)] / dt).collect();

        let mut model = Self {
            config: config.clone(),
            tau0,
            dim,
            ad,
            b_charge,
            b_delta: b,
            delta_calibration: Calibration {
                gain: 1.0,
                window_samples: 1,
                window_start: 0,
                captured_fraction: 1.0,
            },
        };
        model.delta_calibration = model.calibrate(0.0);
        Ok(model)
    }

    pub fn config(&self) -> &DetectorChainConfig {
        &self.config
    }

    pub fn stage_time_constant(&self) -> f64 {
        self.tau0
    }

    /// Calibration used for delta-like inputs and for the transfer function.
    pub fn delta_calibration(&self) -> Calibration {
        self.delta_calibration
    }

    fn step(&self, state: &mut [f64], scratch: &mut [f64], charge: f64) {
        let d = self.dim;
        for ((out, row), b) in scratch.iter_mut().zip(self.ad.chunks_exact(d)).zip(&self.b_charge) {
            *out = b * charge + row.iter().zip(state.iter()).map(|(a, x)| a * x).sum::<f64>();
        }
        state.copy_from_slice(scratch);
    }

    /// Output rate (electrons per second, unit DC gain) at each sample for
    /// charges injected uniformly over each sample interval.
    pub fn filter_charges(&self, charges: &[f64]) -> Vec<f64> {
        let mut state = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        let last = self.dim - 1;
        charges
            .iter()
            .map(|&q| {
                let y = state[last];
                self.step(&mut state, &mut scratch, q);
                y
            })
            .collect()
    }

    /// Exact samples of the continuous unit-charge impulse response, 1/s.
    fn impulse_samples(&self, len: usize) -> Vec<f64> {
        let mut state = self.b_delta.clone();
        let mut scratch = vec![0.0; self.dim];
        let last = self.dim - 1;
        (0..len)
            .map(|_| {
                let y = state[last];
                self.step(&mut state, &mut scratch, 0.0);
                y
            })
            .collect()
    }

    pub(crate) fn pulse_samples(&self, pulse_duration: f64) -> usize {
        ((pulse_duration / self.config.sample_interval).round() as usize).max(1)
    }

    /// Finds the white-noise-optimal boxcar for a unit charge spread over
    /// `pulse_duration` (a delta when zero) and the gain that makes that
    /// boxcar's normalized area equal to the charge.
    pub fn calibrate(&self, pulse_duration: f64) -> Calibration {
        let dt = self.config.sample_interval;
        let span = ((self.config.shaper_order as f64 + 1.0) * 8.0 + 12.0) * self.tau0 / dt;
        let response = if pulse_duration <= 0.0 {
            self.impulse_samples(span.ceil() as usize + 1)
        } else {
            let m = self.pulse_samples(pulse_duration);
            let len = m + span.ceil() as usize + 1;
            let mut charges = vec![0.0; len];
            charges[..m].fill(1.0 / m as f64);
            self.filter_charges(&charges)
        };
        let mut prefix = Vec::with_capacity(response.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for y in &response {
            acc += y * dt;
            prefix.push(acc);
        }
        let len = response.len();
        let mut best = (f64::NEG_INFINITY, 1usize, 0usize, 0.0);
        for m in 1..=len {
            for s in 0..=(len - m) {
                let cap = prefix[s + m] - prefix[s];
                let score = cap * cap / m as f64;
                if score > best.0 {
                    best = (score, m, s, cap);
                }
            }
        }
        let (_, m, s, cap) = best;
        Calibration {
            gain: m as f64 * dt / cap,
            window_samples: m,
            window_start: s,
            captured_fraction: cap,
        }
    }

    /// `|g(f)|^2` in output units squared per (electron/s) squared.
    pub fn transfer_power(&self, frequency: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * frequency;
        let eps = self.config.pole_zero_residual;
        let w = omega * self.config.integrator_discharge;
        let re = (1.0 - eps) + eps / (1.0 + w * w);
        let im = -eps * w / (1.0 + w * w);
        let x = omega * self.tau0;
        let stages = self.config.shaper_order as i32 + 1;
        let g = self.delta_calibration.gain;
        g * g * (re * re + im * im) / (1.0 + x * x).powi(stages)
    }

    /// Noise-free output for the given per-sample charges, trace units.
    fn render(&self, charges: &[f64], gain: f64) -> Vec<f64> {
        let mut out = self.filter_charges(charges);
        out.iter_mut().for_each(|y| *y *= gain);
        out
    }

    /// Adds white electronic noise normalized at `window_samples` and
    /// applies the optional digitizer.
    fn add_noise(&self, samples: &mut [f64], window_samples: usize, seed: u64) {
        let enc = self.config.enc_electrons;
        if enc > 0.0 {
            let sd = enc * (window_samples as f64).sqrt();
            let mut rng = rng::stream(seed, streams::ELECTRONICS);
            for s in samples.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *s += sd * z;
            }
        }
        if let Some(d) = self.config.digitizer {
            samples.iter_mut().for_each(|s| *s = d.quantize(*s));
        }
    }
}

/// Units of trace samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceUnits {
    /// Photoelectron-equivalent units: the optimal boxcar area of a pulse
    /// equals its differential charge.
    #[default]
    Photoelectrons,
    /// Samples in `label` units with a known conversion to photoelectrons.
    Calibrated { label: String, electrons_per_unit: f64 },
    Uncalibrated { label: String },
}

impl TraceUnits {
    pub fn electrons_per_unit(&self) -> Option<f64> {
        match self {
            TraceUnits::Photoelectrons => Some(1.0),
            TraceUnits::Calibrated { electrons_per_unit, .. } => Some(*electrons_per_unit),
            TraceUnits::Uncalibrated { .. } => None,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            TraceUnits::Photoelectrons => "photoelectrons",
            TraceUnits::Calibrated { label, .. } | TraceUnits::Uncalibrated { label } => label,
        }
    }
}

/// Uniformly sampled detector output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub samples: Vec<f64>,
    pub sample_interval: f64,
    pub origin_time: f64,
    pub units: TraceUnits,
}

impl Trace {
    pub fn new(samples: Vec<f64>, sample_interval: f64, origin_time: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("trace must hold at least one sample"));
        }
        if !(sample_interval > 0.0 && sample_interval.is_finite()) {
            return Err(Error::config(format!(
                "sample interval must be > 0, got {sample_interval}"
            )));
        }
        Ok(Self {
            samples,
            sample_interval,
            origin_time,
            units: TraceUnits::Photoelectrons,
        })
    }

    pub fn with_units(mut self, units: TraceUnits) -> Self {
        self.units = units;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.origin_time + index as f64 * self.sample_interval
    }

    /// Nearest sample index for time `t` (may be out of range or negative).
    pub fn nearest_index(&self, t: f64) -> i64 {
        ((t - self.origin_time) / self.sample_interval).round() as i64
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.sample_interval
    }

    /// Full width at half maximum of the largest excursion, seconds.
    pub fn fwhm(&self) -> f64 {
        let (peak_idx, peak) = self
            .samples
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best });
        if peak == 0.0 {
            return 0.0;
        }
        let half = peak / 2.0;
        let above = |v: f64| if peak > 0.0 { v >= half } else { v <= half };
        let crossing = |i0: usize, i1: usize| {
            // linear interpolation between samples i0 (below) and i1 (above)
            let (v0, v1) = (self.samples[i0], self.samples[i1]);
            let frac = (half - v0) / (v1 - v0);
            (i0 as f64 + frac * (i1 as f64 - i0 as f64)) * self.sample_interval
        };
        let mut left = peak_idx;
        while left > 0 && above(self.samples[left - 1]) {
            left -= 1;
        }
        let t_left = if left == 0 { 0.0 } else { crossing(left - 1, left) };
        let mut right = peak_idx;
        while right + 1 < self.samples.len() && above(self.samples[right + 1]) {
            right += 1;
        }
        let t_right = if right + 1 == self.samples.len() {
            right as f64 * self.sample_interval
        } else {
            crossing(right + 1, right)
        };
        t_right - t_left
    }
}

/// Frequency response of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResponse {
    pub frequencies: Vec<f64>,
    /// `|g(f)|^2`.
    pub gain_power: Vec<f64>,
}

impl ChainResponse {
    /// Lowest frequency at which the gain has fallen to half of its value
    /// at the first grid point, by linear interpolation.
    pub fn half_power_frequency(&self) -> Option<f64> {
        self.half_power_frequency_from(*self.gain_power.first()?)
    }

    pub fn half_power_frequency_from(&self, reference: f64) -> Option<f64> {
        let half = reference / 2.0;
        self.gain_power.windows(2).enumerate().find_map(|(i, w)| {
            (w[0] >= half && w[1] < half).then(|| {
                let (f0, f1) = (self.frequencies[i], self.frequencies[i + 1]);
                f0 + (w[0] - half) / (w[0] - w[1]) * (f1 - f0)
            })
        })
    }
}

/// `|g(f)|^2` of the chain, normalized to the delta calibration.
pub fn chain_transfer_power(config: &DetectorChainConfig, frequency: f64) -> Result<f64> {
    Ok(config.model()?.transfer_power(frequency))
}

/// Closed-form response on a frequency grid.
pub fn chain_response(config: &DetectorChainConfig, frequencies: &[f64]) -> Result<ChainResponse> {
    let model = config.model()?;
    Ok(ChainResponse {
        frequencies: frequencies.to_vec(),
        gain_power: frequencies.iter().map(|&f| model.transfer_power(f)).collect(),
    })
}

/// Sampled response to a unit-charge delta injected at `t = 0`.
///
/// Sample values are output units per electron per second, so
/// `dt * sum(samples)` is the response area.
pub fn impulse_response(config: &DetectorChainConfig, duration: f64) -> Result<Trace> {
    let model = config.model()?;
    let dt = config.sample_interval;
    let len = (duration / dt).ceil() as usize + 1;
    let gain = model.delta_calibration.gain;
    let samples = model.impulse_samples(len).into_iter().map(|h| h * gain).collect();
    Trace::new(samples, dt, 0.0)
}

/// Simulates the output trace for a pulse train.
///
/// Pulse `i` starts at `lead_in + i * r` and deposits its differential
/// charge uniformly over `tau` (both rounded to the sample grid). Output
/// units are calibrated on the optimal boxcar for this pulse duration, and
/// the white electronic noise is scaled so that boxcar has standard
/// deviation `enc_electrons`.
pub fn synthesize_trace(
    pulses: &[PulseChargeSample],
    spec: &CoherentPulseTrainSpec,
    config: &DetectorChainConfig,
    seed: u64,
) -> Result<Trace> {
    let model = config.model()?;
    synthesize_with_model(&model, pulses, spec, seed)
}

pub(crate) fn synthesize_with_model(
    model: &ChainModel,
    pulses: &[PulseChargeSample],
    spec: &CoherentPulseTrainSpec,
    seed: u64,
) -> Result<Trace> {
    spec.validate()?;
    let config = &model.config;
    if config.integrator_discharge < 10.0 * spec.pulse_duration {
        log::warn!(
            "integrator discharge time {} s is not >> pulse duration {} s",
            config.integrator_discharge,
            spec.pulse_duration
        );
    }
    let dt = config.sample_interval;
    let lead = config.lead_in_for(spec);
    let needed = lead + spec.train_duration();
    let record = match config.record_length {
        Some(len) if len + 0.5 * dt < needed => {
            return Err(Error::config(format!(
                "record length {len} s cannot hold {} pulses after a {lead} s lead-in ({needed} s needed)",
                spec.pulse_count
            )))
        }
        Some(len) => len,
        None => needed + spec.repetition_period,
    };
    let len = (record / dt).round() as usize;
    let width = model.pulse_samples(spec.pulse_duration);

    let mut charges = vec![0.0; len];
    for p in pulses {
        if p.pulse_index >= spec.pulse_count {
            return Err(Error::config(format!(
                "pulse index {} outside a train of {} pulses",
                p.pulse_index, spec.pulse_count
            )));
        }
        let start = (config.pulse_start_time(spec, p.pulse_index) / dt).round() as usize;
        let end = (start + width).min(len);
        let per_sample = p.differential_electrons / width as f64;
        charges[start..end].iter_mut().for_each(|q| *q += per_sample);
    }

    let cal = model.calibrate(spec.pulse_duration);
    let mut samples = model.render(&charges, cal.gain);
    model.add_noise(&mut samples, cal.window_samples, seed);
    Trace::new(samples, dt, 0.0)
}

/// Simulates continuous illumination with `photon_flux` photons per second
/// (both diodes together) for `duration` seconds.
///
/// Units and noise follow the delta calibration, the same normalization as
/// [`chain_transfer_power`].
pub fn synthesize_cw_trace(
    photon_flux: f64,
    quantum_efficiency: f64,
    imbalance_fraction: f64,
    duration: f64,
    config: &DetectorChainConfig,
    seed: u64,
) -> Result<Trace> {
    let model = config.model()?;
    let dt = config.sample_interval;
    let len = (duration / dt).round() as usize;
    if len == 0 {
        return Err(Error::config(format!("duration {duration} s is shorter than one sample")));
    }
    let charges = sample_cw_charges(photon_flux, quantum_efficiency, imbalance_fraction, dt, len, seed)?;
    let cal = model.delta_calibration;
    let mut samples = model.render(&charges, cal.gain);
    model.add_noise(&mut samples, cal.window_samples, seed);
    Trace::new(samples, dt, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noiseless() -> DetectorChainConfig {
        DetectorChainConfig::version_one().with_enc(0.0)
    }

    #[test]
    fn semi_gaussian_widths() {
        // CR-RC: x e^{-x} half maximum at 0.2319 and 2.6783
        assert_relative_eq!(semi_gaussian_fwhm(1), 2.44639, epsilon = 1e-4);
        assert_relative_eq!(semi_gaussian_fwhm(3), 4.1316, epsilon = 2e-3);
    }

    #[test]
    fn presets_validate() {
        DetectorChainConfig::version_one().validate().unwrap();
        DetectorChainConfig::version_two().validate().unwrap();
        DetectorChainConfig::version_one_slow().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = DetectorChainConfig::version_one();
        c.sample_interval = 50e-9;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = DetectorChainConfig::version_one();
        c.analog_bandwidth_limit = 60e6;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = DetectorChainConfig::version_one();
        c.shaper_order = 0;
        assert!(c.validate().is_err());
        assert!(DetectorChainConfig::version_one().with_residual(-0.1).validate().is_err());
        assert!(DetectorChainConfig::version_one().with_enc(f64::NAN).validate().is_err());
    }

    #[test]
    fn transfer_power_limits() {
        let model = noiseless().model().unwrap();
        let g = model.delta_calibration().gain;
        // unit DC gain of H before calibration
        assert_relative_eq!(model.transfer_power(0.0), g * g, max_relative = 1e-12);
        assert!(model.transfer_power(1e9) < 1e-12 * model.transfer_power(0.0));
        let tailed = noiseless().with_residual(0.05).model().unwrap();
        assert_relative_eq!(
            tailed.transfer_power(0.0) / tailed.delta_calibration().gain.powi(2),
            1.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn version_one_rolls_off_below_600_khz() {
        let freqs: Vec<f64> = (0..=2000).map(|i| i as f64 * 1e3).collect();
        let resp = chain_response(&DetectorChainConfig::version_one(), &freqs).unwrap();
        let f3 = resp.half_power_frequency().unwrap();
        assert!(f3 < 600e3, "{f3}");
        // (1 + x^2)^4 = 2
        let x = (2f64.powf(0.25) - 1.0).sqrt();
        let tau0 = DetectorChainConfig::version_one().stage_time_constant();
        assert_relative_eq!(f3, x / (2.0 * std::f64::consts::PI * tau0), max_relative = 1e-3);
    }

    #[test]
    fn zero_charge_without_noise_is_zero() {
        let spec = CoherentPulseTrainSpec::balanced(0.0, 1e-6, 10e-6, 20);
        let pulses = crate::photon::sample_pulse_train(&spec, 1).unwrap();
        let trace = synthesize_trace(&pulses, &spec, &noiseless(), 1).unwrap();
        assert!(trace.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn impulse_response_area_and_tail() {
        let cfg = noiseless();
        let h = impulse_response(&cfg, 20e-6).unwrap();
        assert_eq!(h.samples[0], 0.0);
        let g = cfg.model().unwrap().delta_calibration().gain;
        let area: f64 = h.samples.iter().sum::<f64>() * h.sample_interval;
        assert_relative_eq!(area, g, max_relative = 1e-6);
        // perfect cancellation: no slow tail after the shaped pulse
        let late = h.samples[1500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let peak = h.samples.iter().fold(0.0f64, |m, v| m.max(*v));
        assert!(late < 1e-9 * peak);
    }

    #[test]
    fn residual_leaves_slow_tail() {
        let cfg = noiseless().with_residual(0.02);
        let h = impulse_response(&cfg, 20e-6).unwrap();
        let dt = h.sample_interval;
        let g = cfg.model().unwrap().delta_calibration().gain;
        let t = 15e-6;
        let tau_i = cfg.integrator_discharge;
        // exponential tail seen through the shaper: H_shaper(-1/tau_i) = (1 - tau0/tau_i)^-(n+1)
        let through = (1.0 - cfg.stage_time_constant() / tau_i).powi(-(cfg.shaper_order as i32 + 1));
        let expected = g * 0.02 / tau_i * (-t / tau_i).exp() * through;
        assert_relative_eq!(h.samples[(t / dt) as usize], expected, max_relative = 1e-3);
    }

    #[test]
    fn calibrated_area_of_isolated_pulse() {
        let cfg = noiseless();
        let model = cfg.model().unwrap();
        let spec = CoherentPulseTrainSpec::balanced(0.0, 20e-9, 10e-6, 1);
        let pulse = [PulseChargeSample {
            pulse_index: 0,
            differential_electrons: 5000.0,
            total_electrons: 5000.0,
        }];
        let trace = synthesize_trace(&pulse, &spec, &cfg, 0).unwrap();
        let cal = model.calibrate(spec.pulse_duration);
        let start = (cfg.pulse_start_time(&spec, 0) / cfg.sample_interval).round() as usize + cal.window_start;
        let area = trace.samples[start..start + cal.window_samples].iter().sum::<f64>()
            / cal.window_samples as f64;
        assert_relative_eq!(area, 5000.0, max_relative = 1e-9);
        // short pulses calibrate like a delta
        let delta = model.delta_calibration();
        assert_relative_eq!(cal.gain, delta.gain, max_relative = 0.01);
    }

    #[test]
    fn optimal_window_for_microsecond_pulse() {
        let model = DetectorChainConfig::version_one().model().unwrap();
        let cal = model.calibrate(1e-6);
        let sigma = cal.window_duration(1e-8);
        assert!((1.2e-6..=1.45e-6).contains(&sigma), "{sigma}");
        assert!((0.8..0.9).contains(&cal.captured_fraction));
    }

    #[test]
    fn record_length_too_short_is_config_error() {
        let mut cfg = noiseless();
        cfg.record_length = Some(50e-6);
        let spec = CoherentPulseTrainSpec::balanced(1e3, 1e-6, 10e-6, 10);
        let pulses = crate::photon::sample_pulse_train(&spec, 0).unwrap();
        assert!(matches!(synthesize_trace(&pulses, &spec, &cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn digitizer_quantizes() {
        let d = Digitizer { bits: 8, full_scale: 128.0 };
        assert_eq!(d.lsb(), 1.0);
        assert_eq!(d.quantize(3.4), 3.0);
        assert_eq!(d.quantize(-1000.0), -128.0);
    }

    #[test]
    fn pileup_follows_imbalance() {
        // imbalanced train: baseline after the train sits above the pre-train level
        let cfg = noiseless().with_residual(0.05);
        let base = CoherentPulseTrainSpec::balanced(1e6, 1e-6, 10e-6, 30).with_imbalance(0.2);
        let level = |n: f64| {
            let spec = base.with_photons(n);
            let pulses = crate::photon::sample_pulse_train(&spec, 2).unwrap();
            let t = synthesize_trace(&pulses, &spec, &cfg, 2).unwrap();
            // just before the 30th pulse, well after the previous shaped pulse
            let i = ((cfg.pulse_start_time(&spec, 29) - 1e-6) / 1e-8) as usize;
            t.samples[i]
        };
        let (l1, l2) = (level(1e6), level(2e6));
        assert!(l1 > 0.0);
        assert_relative_eq!(l2 / l1, 2.0, max_relative = 0.02);
    }
}
