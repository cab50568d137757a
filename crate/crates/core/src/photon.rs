//! Coherent light pulses split onto two photodiodes.
//!
//! Only the photocount statistics of a coherent state are modeled: each
//! diode sees Poissonian photoelectron numbers, and finite quantum
//! efficiency thins the photon stream (a thinned Poisson process is still
//! Poisson). Arrival times inside a pulse are not sampled; the pulse is a
//! rectangular envelope of known duration.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Statistical description of a train of coherent light pulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherentPulseTrainSpec {
    /// Mean photon number per pulse, summed over both diodes.
    pub mean_photons_per_pulse: f64,
    /// Rectangular pulse duration in seconds.
    pub pulse_duration: f64,
    /// Pulse repetition period in seconds.
    pub repetition_period: f64,
    pub pulse_count: usize,
    /// `(N1 - N2) / N`, in `[-1, 1]`.
    #[serde(default)]
    pub imbalance_fraction: f64,
    #[serde(default = "default_efficiency")]
    pub quantum_efficiency: f64,
}

fn default_efficiency() -> f64 {
    CoherentPulseTrainSpec::DEFAULT_EFFICIENCY
}

impl CoherentPulseTrainSpec {
    pub const DEFAULT_EFFICIENCY: f64 = 0.9;

    /// Balanced train with the default quantum efficiency.
    pub fn balanced(
        mean_photons_per_pulse: f64,
        pulse_duration: f64,
        repetition_period: f64,
        pulse_count: usize,
    ) -> Self {
        Self {
            mean_photons_per_pulse,
            pulse_duration,
            repetition_period,
            pulse_count,
            imbalance_fraction: 0.0,
            quantum_efficiency: Self::DEFAULT_EFFICIENCY,
        }
    }

    pub fn with_photons(mut self, mean_photons_per_pulse: f64) -> Self {
        self.mean_photons_per_pulse = mean_photons_per_pulse;
        self
    }

    pub fn with_imbalance(mut self, imbalance_fraction: f64) -> Self {
        self.imbalance_fraction = imbalance_fraction;
        self
    }

    pub fn with_efficiency(mut self, quantum_efficiency: f64) -> Self {
        self.quantum_efficiency = quantum_efficiency;
        self
    }

    pub fn with_pulse_count(mut self, pulse_count: usize) -> Self {
        self.pulse_count = pulse_count;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean_photons_per_pulse;
        if !n.is_finite() || n < 0.0 {
            return Err(Error::config(format!(
                "mean photon number must be finite and >= 0, got {n}"
            )));
        }
        if !(self.pulse_duration > 0.0 && self.pulse_duration.is_finite()) {
            return Err(Error::config(format!(
                "pulse duration must be > 0, got {}",
                self.pulse_duration
            )));
        }
        if self.repetition_period <= self.pulse_duration || !self.repetition_period.is_finite() {
            return Err(Error::config(format!(
                "repetition period {} must exceed pulse duration {}",
                self.repetition_period, self.pulse_duration
            )));
        }
        if self.pulse_count == 0 {
            return Err(Error::config("pulse count must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.imbalance_fraction) {
            return Err(Error::config(format!(
                "imbalance fraction must lie in [-1, 1], got {}",
                self.imbalance_fraction
            )));
        }
        let eta = self.quantum_efficiency;
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(Error::config(format!(
                "quantum efficiency must lie in (0, 1], got {eta}"
            )));
        }
        Ok(())
    }

    /// Detected mean photoelectrons per pulse on diode 1 and diode 2.
    pub fn diode_rates(&self) -> (f64, f64) {
        let detected = self.quantum_efficiency * self.mean_photons_per_pulse;
        let r1 = detected * (1.0 + self.imbalance_fraction) / 2.0;
        let r2 = detected * (1.0 - self.imbalance_fraction) / 2.0;
        // imbalance = +-1 can leave -0.0 or a rounding residue
        (r1.max(0.0), r2.max(0.0))
    }

    /// Total duration of the pulse train, `k * r`.
    pub fn train_duration(&self) -> f64 {
        self.pulse_count as f64 * self.repetition_period
    }
}

/// Photoelectron counts produced by one pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseChargeSample {
    pub pulse_index: usize,
    /// `N1 - N2` after detection.
    pub differential_electrons: f64,
    /// `N1 + N2` after detection.
    pub total_electrons: f64,
}

/// Draws per-pulse photoelectron counts for the two diodes.
///
/// Deterministic for a fixed `seed`.
pub fn sample_pulse_train(spec: &CoherentPulseTrainSpec, seed: u64) -> Result<Vec<PulseChargeSample>> {
    spec.validate()?;
    let (rate1, rate2) = spec.diode_rates();
    let mut rng = rng::stream(seed, streams::PHOTONS);
    let mut d1 = PoissonCounter::new(rate1)?;
    let mut d2 = PoissonCounter::new(rate2)?;
    Ok((0..spec.pulse_count)
        .map(|pulse_index| {
            let n1 = d1.draw(&mut rng);
            let n2 = d2.draw(&mut rng);
            PulseChargeSample {
                pulse_index,
                differential_electrons: n1 - n2,
                total_electrons: n1 + n2,
            }
        })
        .collect())
}

/// Theoretical variance of the differential photoelectron count, `eta * N`.
pub fn expected_shot_variance(spec: &CoherentPulseTrainSpec) -> f64 {
    spec.quantum_efficiency * spec.mean_photons_per_pulse
}

/// Differential photoelectrons per sample interval for continuous
/// illumination with `photon_flux` photons per second in total.
pub(crate) fn sample_cw_charges(
    photon_flux: f64,
    quantum_efficiency: f64,
    imbalance_fraction: f64,
    sample_interval: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(photon_flux >= 0.0 && photon_flux.is_finite()) {
        return Err(Error::config(format!("photon flux must be >= 0, got {photon_flux}")));
    }
    if !(quantum_efficiency > 0.0 && quantum_efficiency <= 1.0) {
        return Err(Error::config(format!(
            "quantum efficiency must lie in (0, 1], got {quantum_efficiency}"
        )));
    }
    if !(-1.0..=1.0).contains(&imbalance_fraction) {
        return Err(Error::config(format!(
            "imbalance fraction must lie in [-1, 1], got {imbalance_fraction}"
        )));
    }
    let per_sample = quantum_efficiency * photon_flux * sample_interval;
    let mut d1 = PoissonCounter::new((per_sample * (1.0 + imbalance_fraction) / 2.0).max(0.0))?;
    let mut d2 = PoissonCounter::new((per_sample * (1.0 - imbalance_fraction) / 2.0).max(0.0))?;
    let mut rng = rng::stream(seed, streams::PHOTONS);
    Ok((0..samples).map(|_| d1.draw(&mut rng) - d2.draw(&mut rng)).collect())
}

/// Poisson sampler that tolerates a zero rate.
struct PoissonCounter {
    dist: Option<Poisson<f64>>,
}

impl PoissonCounter {
    fn new(rate: f64) -> Result<Self> {
        if rate == 0.0 {
            return Ok(Self { dist: None });
        }
        Poisson::new(rate)
            .map(|d| Self { dist: Some(d) })
            .map_err(|e| Error::config(format!("invalid Poisson rate {rate}: {e}")))
    }

    fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.dist.as_ref().map_or(0.0, |d| d.sample(rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: f64) -> CoherentPulseTrainSpec {
        CoherentPulseTrainSpec::balanced(n, 1e-6, 10e-6, 2000)
    }

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let k = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / k;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k)
    }

    #[test]
    fn zero_rate_gives_zero_charge() {
        for seed in [0, 1, 99] {
            let pulses = sample_pulse_train(&spec(0.0), seed).unwrap();
            assert!(pulses.iter().all(|p| p.differential_electrons == 0.0 && p.total_electrons == 0.0));
        }
    }

    #[test]
    fn expected_variance_is_detected_mean() {
        let s = spec(1e5).with_efficiency(1.0);
        assert_eq!(expected_shot_variance(&s), 1e5);
        let s = spec(1e5).with_efficiency(0.9);
        assert!((expected_shot_variance(&s) - 9e4).abs() < 1e-9);
        let s = spec(8e4).with_efficiency(1.0).with_imbalance(0.3);
        assert_eq!(expected_shot_variance(&s), 8e4);
    }

    #[test]
    fn full_imbalance_is_single_diode_poisson() {
        let s = spec(1e4).with_efficiency(1.0).with_imbalance(1.0).with_pulse_count(20_000);
        let d: Vec<f64> = sample_pulse_train(&s, 3)
            .unwrap()
            .iter()
            .map(|p| p.differential_electrons)
            .collect();
        let (m, v) = mean_var(&d);
        let k = d.len() as f64;
        // mean sd sqrt(N/k); variance sd ~ N sqrt(2/k)
        assert!((m - 1e4).abs() < 4.0 * (1e4 / k).sqrt(), "mean {m}");
        assert!((v - 1e4).abs() < 4.0 * 1e4 * (2.0 / k).sqrt(), "var {v}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let s = spec(1e6);
        assert_eq!(sample_pulse_train(&s, 11).unwrap(), sample_pulse_train(&s, 11).unwrap());
        assert_ne!(sample_pulse_train(&s, 11).unwrap(), sample_pulse_train(&s, 12).unwrap());
    }

    #[test]
    fn difference_bounded_by_total() {
        let s = spec(50.0).with_imbalance(-0.4);
        for p in sample_pulse_train(&s, 2).unwrap() {
            assert!(p.differential_electrons.abs() <= p.total_electrons);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            spec(-1.0),
            spec(1.0).with_imbalance(1.5),
            spec(1.0).with_efficiency(0.0),
            spec(1.0).with_efficiency(1.2),
            spec(1.0).with_pulse_count(0),
            CoherentPulseTrainSpec::balanced(1.0, 2e-6, 1e-6, 3),
        ];
        for s in bad {
            assert!(matches!(sample_pulse_train(&s, 0), Err(Error::Config(_))), "{s:?}");
        }
    }

    #[test]
    fn cw_charges_have_poisson_variance() {
        let q = sample_cw_charges(1e10, 1.0, 0.0, 1e-8, 50_000, 4).unwrap();
        let (m, v) = mean_var(&q);
        // 100 photoelectrons per sample, split evenly
        assert!(m.abs() < 4.0 * (100.0 / 5e4_f64).sqrt());
        assert!((v - 100.0).abs() < 4.0 * 100.0 * (2.0 / 5e4_f64).sqrt());
    }
}
