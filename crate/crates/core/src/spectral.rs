//! Noise power densities of sampled traces.
//!
//! All spectra are one-sided densities on the grid `0, df, ..., fs/2` in
//! output units squared per hertz, normalized so that the sum of
//! `power_density * df` over the grid equals the mean-removed trace variance.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::chain::{ChainResponse, Trace};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::window::GatingWindow;

/// Segment-averaged periodogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub power_density: Vec<f64>,
    pub segment_count: usize,
    /// Bin spacing, hertz.
    pub resolution_bandwidth: f64,
}

/// Data taper applied to each segment before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Taper {
    /// Rectangular; keeps Parseval exact.
    #[default]
    None,
    /// Hann window, rescaled to preserve total power on average.
    Hann,
}

impl SpectrumEstimate {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `sum(power_density) * df`.
    pub fn total_power(&self) -> f64 {
        self.power_density.iter().sum::<f64>() * self.resolution_bandwidth
    }

    pub fn nyquist(&self) -> f64 {
        self.frequencies.last().copied().unwrap_or(0.0)
    }

    /// Builds an estimate from tabulated values on a uniform grid starting at 0.
    pub fn from_parts(frequencies: Vec<f64>, power_density: Vec<f64>, segment_count: usize) -> Result<Self> {
        if frequencies.len() < 2 || frequencies.len() != power_density.len() {
            return Err(Error::analysis(format!(
                "spectrum needs >= 2 bins and matching columns ({} frequencies, {} densities)",
                frequencies.len(),
                power_density.len()
            )));
        }
        let df = frequencies[1] - frequencies[0];
        if frequencies[0] != 0.0 || df.is_nan() || df <= 0.0 {
            return Err(Error::analysis("spectrum grid must start at 0 Hz and increase"));
        }
        for (i, f) in frequencies.iter().enumerate() {
            if (f - i as f64 * df).abs() > 1e-6 * df.max(i as f64 * df) {
                return Err(Error::analysis(format!("spectrum grid is not uniform at bin {i} ({f} Hz)")));
            }
        }
        if power_density.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::analysis("power densities must be finite and >= 0"));
        }
        Ok(Self {
            frequencies,
            power_density,
            segment_count,
            resolution_bandwidth: df,
        })
    }

    pub fn to_table(&self) -> Table {
        Table::from_columns(
            &["frequency_hz", "power_density_per_hz"],
            &[&self.frequencies, &self.power_density],
        )
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let f = table.column_at(0)?;
        let p = table.column_at(1)?;
        Self::from_parts(f, p, 1)
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.frequencies.len() == other.frequencies.len()
            && self
                .frequencies
                .iter()
                .zip(&other.frequencies)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(self.resolution_bandwidth))
    }
}

/// Averaged periodogram over non-overlapping segments of `segment_length`
/// samples, without tapering.
pub fn estimate_psd(trace: &Trace, segment_length: usize) -> Result<SpectrumEstimate> {
    estimate_psd_with(trace, segment_length, Taper::None)
}

pub fn estimate_psd_with(trace: &Trace, segment_length: usize, taper: Taper) -> Result<SpectrumEstimate> {
    let l = segment_length;
    if l < 2 || !l.is_power_of_two() {
        return Err(Error::analysis(format!("segment length must be a power of two >= 2, got {l}")));
    }
    if trace.len() < 2 * l {
        return Err(Error::analysis(format!(
            "trace of {} samples is shorter than two segments of {l}",
            trace.len()
        )));
    }
    let segments = trace.len() / l;
    let used = &trace.samples[..segments * l];
    let mean = used.iter().sum::<f64>() / used.len() as f64;

    let weights: Vec<f64> = match taper {
        Taper::None => vec![1.0; l],
        Taper::Hann => {
            let w: Vec<f64> = (0..l)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / l as f64).cos())
                .collect();
            let rms = (w.iter().map(|x| x * x).sum::<f64>() / l as f64).sqrt();
            w.into_iter().map(|x| x / rms).collect()
        }
    };

    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let half = l / 2;
    let mut acc = vec![0.0; half + 1];
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    for seg in used.chunks_exact(l) {
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&weights) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let dt = trace.sample_interval;
    let df = 1.0 / (l as f64 * dt);
    let scale = dt / (l as f64 * segments as f64);
    let power_density = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let fold = if k == 0 || k == half { 1.0 } else { 2.0 };
            fold * a * scale
        })
        .collect();
    Ok(SpectrumEstimate {
        frequencies: (0..=half).map(|k| k as f64 * df).collect(),
        power_density,
        segment_count: segments,
        resolution_bandwidth: df,
    })
}

/// One-sided white density of the differential photocurrent for a detected
/// photoelectron rate (both diodes together), in electrons^2 / s^2 / Hz.
pub fn shot_noise_density(detected_rate: f64) -> f64 {
    2.0 * detected_rate
}

/// `|g|^2 = (lit - dark) / s0`, clamped at zero.
///
/// `white_density` is the one-sided input density `s0`, see
/// [`shot_noise_density`].
pub fn extract_transimpedance(
    lit: &SpectrumEstimate,
    dark: &SpectrumEstimate,
    white_density: f64,
) -> Result<ChainResponse> {
    if !lit.same_grid(dark) {
        return Err(Error::analysis(format!(
            "lit and dark spectra have different grids ({} vs {} bins, df {} vs {})",
            lit.len(),
            dark.len(),
            lit.resolution_bandwidth,
            dark.resolution_bandwidth
        )));
    }
    if !(white_density > 0.0 && white_density.is_finite()) {
        return Err(Error::analysis(format!("input density must be > 0, got {white_density}")));
    }
    let gain_power = lit
        .power_density
        .iter()
        .zip(&dark.power_density)
        .map(|(l, d)| ((l - d) / white_density).max(0.0))
        .collect();
    Ok(ChainResponse {
        frequencies: lit.frequencies.clone(),
        gain_power,
    })
}

/// Predicted pulse-area variance `sum P(f) |p(2 pi f)|^2 df` for a window.
///
/// Fails when the window spectrum is not negligible (below 1e-3 of its
/// peak) at the Nyquist frequency, since the truncated integral would then
/// miss part of the noise.
pub fn predict_pulsed_noise(spectrum: &SpectrumEstimate, window: &GatingWindow) -> Result<f64> {
    let nyquist = spectrum.nyquist();
    let omega_max = 2.0 * std::f64::consts::PI * nyquist;
    let envelope = window.spectrum_envelope(omega_max);
    let peak = window.spectrum_peak();
    if envelope > 1e-3 * peak {
        return Err(Error::analysis(format!(
            "{} window of {} s is not band-limited within the spectrum: |p|^2 bound at Nyquist \
             ({nyquist} Hz) is {:.3e} of peak (needs < 1e-3); use a longer window or finer sampling",
            window.kind.name(),
            window.duration,
            envelope / peak
        )));
    }
    let df = spectrum.resolution_bandwidth;
    Ok(spectrum
        .frequencies
        .iter()
        .zip(&spectrum.power_density)
        .map(|(f, p)| p * window.power_spectrum(2.0 * std::f64::consts::PI * f))
        .sum::<f64>()
        * df)
}

/// `10 log10(lit / dark)` per bin; `None` where the dark density is zero
/// or not positive.
pub fn signal_to_electronic_ratio(lit: &SpectrumEstimate, dark: &SpectrumEstimate) -> Result<Vec<Option<f64>>> {
    if !lit.same_grid(dark) {
        return Err(Error::analysis("lit and dark spectra have different grids"));
    }
    let floor = dark.power_density.iter().cloned().fold(0.0, f64::max) * 1e-12;
    Ok(lit
        .power_density
        .iter()
        .zip(&dark.power_density)
        .map(|(l, d)| (*d > floor && *l > 0.0).then(|| 10.0 * (l / d).log10()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::window::WindowKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn white(n: usize, sd: f64, dt: f64, seed: u64) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        Trace::new(s, dt, 0.0).unwrap()
    }

    fn flat(level: f64, bins: usize, df: f64) -> SpectrumEstimate {
        SpectrumEstimate::from_parts((0..bins).map(|k| k as f64 * df).collect(), vec![level; bins], 1).unwrap()
    }

    #[test]
    fn constant_trace_has_no_power() {
        let t = Trace::new(vec![3.5; 4096], 1e-8, 0.0).unwrap();
        let s = estimate_psd(&t, 256).unwrap();
        assert!(s.power_density.iter().all(|p| p.abs() < 1e-20));
        assert_eq!(s.segment_count, 16);
        assert_relative_eq!(s.resolution_bandwidth, 1.0 / (256.0 * 1e-8));
        assert_relative_eq!(s.nyquist(), 5e7);
    }

    #[test]
    fn white_noise_is_flat() {
        let dt = 1e-8;
        let t = white(256 * 400, 2.0, dt, 1);
        let s = estimate_psd(&t, 256).unwrap();
        let expected = 4.0 / 5e7;
        // interior bins average 400 segments -> 5% per bin
        for p in &s.power_density[1..128] {
            assert!((p / expected - 1.0).abs() < 0.25);
        }
        let mean = s.power_density[1..128].iter().sum::<f64>() / 127.0;
        assert_relative_eq!(mean, expected, max_relative = 0.02);
    }

    #[test]
    fn parseval_holds_exactly_without_taper() {
        let t = white(8192, 1.0, 1e-8, 2);
        let s = estimate_psd(&t, 512).unwrap();
        let mean = t.samples.iter().sum::<f64>() / t.len() as f64;
        let var = t.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t.len() as f64;
        assert_relative_eq!(s.total_power(), var, max_relative = 1e-10);
    }

    #[test]
    fn hann_taper_preserves_white_level() {
        let t = white(256 * 400, 1.0, 1e-8, 3);
        let s = estimate_psd_with(&t, 256, Taper::Hann).unwrap();
        assert_relative_eq!(s.total_power(), 1.0, max_relative = 0.03);
    }

    #[test]
    fn psd_preconditions() {
        let t = Trace::new(vec![0.0; 1000], 1e-8, 0.0).unwrap();
        assert!(matches!(estimate_psd(&t, 1000), Err(Error::Analysis(_))));
        assert!(matches!(estimate_psd(&t, 512), Err(Error::Analysis(_))));
        assert!(estimate_psd(&t, 256).is_ok());
    }

    #[test]
    fn transimpedance_algebra() {
        let dark = flat(0.3, 64, 1e4);
        let same = extract_transimpedance(&dark, &dark, 2.0).unwrap();
        assert!(same.gain_power.iter().all(|g| *g == 0.0));
        let lit = SpectrumEstimate {
            power_density: dark.power_density.iter().map(|d| d + 4.0 * 2.0).collect(),
            ..dark.clone()
        };
        let g = extract_transimpedance(&lit, &dark, 2.0).unwrap();
        assert!(g.gain_power.iter().all(|g| (g - 4.0).abs() < 1e-12));
        // negative fluctuations clamp at zero
        let g = extract_transimpedance(&dark, &lit, 2.0).unwrap();
        assert!(g.gain_power.iter().all(|g| *g == 0.0));
        let other = flat(0.3, 32, 1e4);
        assert!(matches!(extract_transimpedance(&lit, &other, 2.0), Err(Error::Analysis(_))));
    }

    #[test]
    fn prediction_of_flat_spectrum() {
        let sigma = 1e-6;
        let w = GatingWindow::boxcar(sigma, 0.0).unwrap();
        assert_eq!(predict_pulsed_noise(&flat(0.0, 4097, 1e4), &w).unwrap(), 0.0);
        // Omega0 * int_0^inf sinc^2(pi f sigma) df = Omega0 / (2 sigma)
        let got = predict_pulsed_noise(&flat(1.0, 40_001, 1e3), &w).unwrap();
        // rectangle rule counts the 0 Hz bin fully; tail beyond 40 MHz averages sin^2 to 1/2
        let edge = 0.5 * 1e3;
        let tail = 1.0 / (2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * 4e7);
        assert_relative_eq!(got - edge + tail, 1.0 / (2.0 * sigma), max_relative = 1e-4);
    }

    #[test]
    fn prediction_is_additive_and_ignores_dc_for_dcs() {
        let w = GatingWindow::dcs(1e-6, 0.0).unwrap();
        let a = flat(1.0, 8193, 5e3);
        let mut b = flat(0.0, 8193, 5e3);
        b.power_density.iter_mut().enumerate().for_each(|(k, p)| *p = 1.0 / (1.0 + k as f64));
        let sum = SpectrumEstimate {
            power_density: a.power_density.iter().zip(&b.power_density).map(|(x, y)| x + y).collect(),
            ..a.clone()
        };
        let pa = predict_pulsed_noise(&a, &w).unwrap();
        let pb = predict_pulsed_noise(&b, &w).unwrap();
        assert_relative_eq!(predict_pulsed_noise(&sum, &w).unwrap(), pa + pb, max_relative = 1e-12);
        let mut spiked = a.clone();
        spiked.power_density[0] = 1e9;
        assert_eq!(predict_pulsed_noise(&spiked, &w).unwrap(), pa);
    }

    #[test]
    fn prediction_rejects_unresolved_band() {
        // 10 ns window, 1 MHz Nyquist
        let w = GatingWindow::new(WindowKind::Boxcar, 1e-8, 0.0).unwrap();
        let err = predict_pulsed_noise(&flat(1.0, 101, 1e4), &w).unwrap_err();
        assert!(err.to_string().contains("Nyquist"));
    }

    #[test]
    fn ratio_in_db() {
        let dark = flat(2.0, 16, 1.0);
        let r = signal_to_electronic_ratio(&dark, &dark).unwrap();
        assert!(r.iter().all(|x| x.unwrap().abs() < 1e-12));
        let lit = SpectrumEstimate {
            power_density: vec![20.0; 16],
            ..dark.clone()
        };
        let r = signal_to_electronic_ratio(&lit, &dark).unwrap();
        assert!(r.iter().all(|x| (x.unwrap() - 10.0).abs() < 1e-12));
        let mut holes = dark.clone();
        holes.power_density[3] = 0.0;
        assert_eq!(signal_to_electronic_ratio(&lit, &holes).unwrap()[3], None);
    }

    #[test]
    fn table_round_trip() {
        let s = flat(0.25, 9, 100.0);
        let back = SpectrumEstimate::from_table(&s.to_table()).unwrap();
        assert_eq!(back.power_density, s.power_density);
        assert_eq!(back.frequencies, s.frequencies);
    }
}
