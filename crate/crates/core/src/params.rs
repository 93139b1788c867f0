//! Circuit parameters of the kinemon Hamiltonian
//!
//! ```text
//! H = -E_C d²/dφ² + ½ E_L φ² - E_J1 cos(φ + κ φ_e) - E_J2 cos(φ - (1-κ) φ_e)
//! ```
//!
//! All energies are stored as E/h in GHz. The single-loop geometry is the
//! special case `ej2 = 0, kappa = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{KinemonError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    pub ej1: f64,
    #[serde(default)]
    pub ej2: f64,
    pub ec: f64,
    pub el: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

impl CircuitParams {
    /// Single junction in a single loop.
    pub fn single_loop(ej: f64, ec: f64, el: f64) -> Self {
        Self {
            ej1: ej,
            ej2: 0.0,
            ec,
            el,
            kappa: 1.0,
        }
    }

    /// Two equal junctions with flux split `kappa`.
    pub fn double_loop(ej_per_junction: f64, ec: f64, el: f64, kappa: f64) -> Self {
        Self {
            ej1: ej_per_junction,
            ej2: ej_per_junction,
            ec,
            el,
            kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(KinemonError::param(name, format!("{v} is not finite")))
            }
        };
        finite("ej1", self.ej1)?;
        finite("ej2", self.ej2)?;
        finite("ec", self.ec)?;
        finite("el", self.el)?;
        finite("kappa", self.kappa)?;
        if self.ec <= 0.0 {
            return Err(KinemonError::param("ec", "must be > 0"));
        }
        if self.el <= 0.0 {
            return Err(KinemonError::param(
                "el",
                "must be > 0 (the unshunted limit lives in the charge basis)",
            ));
        }
        if self.ej1 < 0.0 {
            return Err(KinemonError::param("ej1", "must be >= 0"));
        }
        if self.ej2 < 0.0 {
            return Err(KinemonError::param("ej2", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(KinemonError::param("kappa", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn is_single_loop(&self) -> bool {
        self.ej2 == 0.0 && self.kappa == 1.0
    }

    pub fn is_harmonic(&self) -> bool {
        self.ej1 == 0.0 && self.ej2 == 0.0
    }

    /// Potential energy U(φ) at external flux phase `phi_e`, GHz.
    #[inline]
    pub fn potential(&self, phi: f64, phi_e: f64) -> f64 {
        0.5 * self.el * phi * phi
            - self.ej1 * (phi + self.kappa * phi_e).cos()
            - self.ej2 * (phi - (1.0 - self.kappa) * phi_e).cos()
    }

    /// Level spacing of the bare LC oscillator, sqrt(2 E_C E_L).
    pub fn plasma_frequency(&self) -> f64 {
        (2.0 * self.ec * self.el).sqrt()
    }
}
