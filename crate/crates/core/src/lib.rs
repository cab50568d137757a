//! Simulation and pulse-noise analysis for differential, AC-coupled,
//! charge-integrating photodetectors.
//!
//! The crate models the full measurement chain for weak, microsecond-long
//! light pulses:
//!
//! * [`photon`]: coherent pulse trains split onto two photodiodes
//!   (Poissonian photoelectron counts per diode),
//! * [`chain`]: charge integrator, pole/zero-compensated semi-Gaussian
//!   shaper and white electronic noise, producing sampled traces,
//! * [`window`]: boxcar and double-correlated-sampling gating functions
//!   and their power spectra,
//! * [`spectral`]: averaged-periodogram noise densities, transimpedance
//!   extraction and pulsed-noise prediction from CW spectra,
//! * [`analysis`]: pulse-area integration, variance scaling fits,
//!   3-dB photon number / ENC extraction and window optimization,
//! * [`io`] and [`pipeline`]: trace files, CSV tables and deterministic
//!   end-to-end runs.
//!
//! ```
//! use pulsenoise::analysis::aligned_window;
//! use pulsenoise::{noise_scaling, CoherentPulseTrainSpec, DetectorChainConfig, WindowKind};
//!
//! let chain = DetectorChainConfig::version_one();
//! let base = CoherentPulseTrainSpec::balanced(1e5, 1e-6, 1e-5, 2000);
//! let grid: Vec<_> = [0.0, 1e5, 1e6, 1e7].iter().map(|&n| base.with_photons(n)).collect();
//! let window = aligned_window(&chain, &base, WindowKind::Boxcar, 1.25e-6)?;
//! let fit = noise_scaling(&grid, &chain, &window, 42)?;
//! assert!((fit.n_3db / 8.5e4 - 1.0).abs() < 0.2);
//! # Ok::<(), pulsenoise::Error>(())
//! ```

pub mod analysis;
pub mod chain;
pub mod error;
pub mod io;
pub mod photon;
pub mod pipeline;
pub mod rng;
pub mod spectral;
pub mod window;

pub use analysis::{
    classical_noise_check, fit_noise_scaling, integrate, integrate_boxcar, integrate_dcs,
    noise_scaling, optimize_window, pulse_variance, ClassicalNoiseReport, NoiseScalingResult,
    PulseAreas, SearchRange, WindowOptimization,
};
pub use chain::{
    chain_transfer_power, impulse_response, synthesize_cw_trace, synthesize_trace, ChainResponse,
    DetectorChainConfig, Trace, TraceUnits,
};
pub use error::{Error, Result};
pub use photon::{expected_shot_variance, sample_pulse_train, CoherentPulseTrainSpec, PulseChargeSample};
pub use spectral::{
    estimate_psd, extract_transimpedance, predict_pulsed_noise, signal_to_electronic_ratio,
    SpectrumEstimate,
};
pub use window::{boxcar_power_spectrum, dcs_power_spectrum, GatingWindow, WindowKind};

/// Tool version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
