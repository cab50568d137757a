//! Gating functions used to turn a trace into pulse areas.
//!
//! Both windows are centered on `offset`:
//!
//! * boxcar: `1/sigma` on `(-sigma/2, sigma/2]`,
//! * double-correlated sampling (dcs): `2/sigma` on `(-sigma/2, sigma/2]`
//!   minus `1/sigma` on `(-sigma, sigma]`. This is the same as averaging the
//!   inner interval and subtracting the mean of the two `sigma/2` flanks.
//!
//! Edges follow the Heaviside convention `H(0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Boxcar,
    Dcs,
}

impl WindowKind {
    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Boxcar => "boxcar",
            WindowKind::Dcs => "dcs",
        }
    }
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "boxcar" | "bc" => Ok(WindowKind::Boxcar),
            "dcs" => Ok(WindowKind::Dcs),
            other => Err(Error::config(format!("unknown window kind `{other}`"))),
        }
    }
}

/// A gating window of duration `sigma` centered at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatingWindow {
    pub kind: WindowKind,
    /// `sigma`, seconds.
    pub duration: f64,
    /// Center of the inner interval, seconds.
    pub offset: f64,
}

impl GatingWindow {
    pub fn new(kind: WindowKind, duration: f64, offset: f64) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) || !offset.is_finite() {
            return Err(Error::config(format!(
                "window duration must be finite and > 0 (got {duration}), offset finite (got {offset})"
            )));
        }
        Ok(Self { kind, duration, offset })
    }

    /// Window whose inner interval is `[start, start + duration]`.
    pub fn starting_at(kind: WindowKind, duration: f64, start: f64) -> Result<Self> {
        Self::new(kind, duration, start + duration / 2.0)
    }

    pub fn boxcar(duration: f64, offset: f64) -> Result<Self> {
        Self::new(WindowKind::Boxcar, duration, offset)
    }

    pub fn dcs(duration: f64, offset: f64) -> Result<Self> {
        Self::new(WindowKind::Dcs, duration, offset)
    }

    /// Start of the inner interval (`t0` of the pulse-area integrals).
    pub fn start(&self) -> f64 {
        self.offset - self.duration / 2.0
    }

    pub fn with_kind(self, kind: WindowKind) -> Self {
        Self { kind, ..self }
    }

    /// Window value at time `t`, per second.
    pub fn value(&self, t: f64) -> f64 {
        let x = t - self.offset;
        let s = self.duration;
        let gate = |half: f64| heaviside(x + half) - heaviside(x - half);
        match self.kind {
            WindowKind::Boxcar => gate(s / 2.0) / s,
            WindowKind::Dcs => gate(s / 2.0) / (s / 2.0) - gate(s) / s,
        }
    }

    /// `|p(omega)|^2` for this window.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        match self.kind {
            WindowKind::Boxcar => boxcar_power_spectrum(self.duration, omega),
            WindowKind::Dcs => dcs_power_spectrum(self.duration, omega),
        }
    }

    /// Power spectrum scaled to unit integral over `[0, inf)` in `omega`.
    pub fn normalized_power_spectrum(&self, omega: f64) -> f64 {
        self.power_spectrum(omega) / self.power_spectrum_integral()
    }

    /// `integral_0^inf |p(omega)|^2 d omega = pi * integral p(t)^2 dt`.
    pub fn power_spectrum_integral(&self) -> f64 {
        let energy = match self.kind {
            WindowKind::Boxcar => 1.0 / self.duration,
            WindowKind::Dcs => 2.0 / self.duration,
        };
        std::f64::consts::PI * energy
    }

    /// Time integral of the window: 1 for boxcar, 0 for dcs.
    pub fn integral(&self) -> f64 {
        match self.kind {
            WindowKind::Boxcar => 1.0,
            WindowKind::Dcs => 0.0,
        }
    }

    /// Upper bound of `|p(omega)|^2` for all frequencies at or above `omega`.
    pub(crate) fn spectrum_envelope(&self, omega: f64) -> f64 {
        let x = omega * self.duration;
        if x <= 0.0 {
            return f64::INFINITY;
        }
        match self.kind {
            // |sinc(x/2)| <= 2/x
            WindowKind::Boxcar => (4.0 / (x * x)).min(1.0),
            // 2 |sinc(x/2) - sinc(x)| <= 2 (2/x + 1/x)
            WindowKind::Dcs => 36.0 / (x * x),
        }
    }

    /// Maximum of `|p(omega)|^2`.
    pub(crate) fn spectrum_peak(&self) -> f64 {
        match self.kind {
            WindowKind::Boxcar => 1.0,
            WindowKind::Dcs => {
                let (mut best, mut x) = (0.0f64, 0.0);
                while x < 20.0 {
                    best = best.max(dcs_power_spectrum(1.0, x));
                    x += 1e-3;
                }
                best
            }
        }
    }
}

/// Heaviside step with `H(0) = 0`.
fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `sin(x)/x`, continuous at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(sin(omega sigma/2) / (omega sigma/2))^2`.
pub fn boxcar_power_spectrum(sigma: f64, omega: f64) -> f64 {
    sinc(omega * sigma / 2.0).powi(2)
}

/// `4 (sin(omega sigma/2)/(omega sigma/2) - sin(omega sigma)/(omega sigma))^2`.
pub fn dcs_power_spectrum(sigma: f64, omega: f64) -> f64 {
    let x = omega * sigma;
    let d = if x.abs() < 1e-2 {
        // leading terms of the difference; avoids cancellation near zero
        let x2 = x * x;
        x2 / 8.0 - x2 * x2 * (1.0 / 120.0 - 1.0 / 1920.0) + x2 * x2 * x2 * (1.0 / 5040.0 - 1.0 / 322_560.0)
    } else {
        sinc(x / 2.0) - sinc(x)
    };
    4.0 * d * d
}
