use serde::{Deserialize, Serialize};

use crate::error::{KinemonError, Result};
use crate::params::CircuitParams;
use crate::stencil::STENCIL_ORDER;

pub const DEFAULT_PHI_MAX: f64 = 8.0;
pub const DEFAULT_NODES: usize = 201;
pub const FIT_NODES: usize = 51;

/// Uniform phase grid including both end points. The wavefunction is taken
/// to vanish outside `[phi_min, phi_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub phi_min: f64,
    pub phi_max: f64,
    pub n_nodes: usize,
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self::symmetric(DEFAULT_PHI_MAX, DEFAULT_NODES)
    }
}

impl PhaseGrid {
    pub fn symmetric(phi_max: f64, n_nodes: usize) -> Self {
        Self {
            phi_min: -phi_max,
            phi_max,
            n_nodes,
        }
    }

    /// Symmetric grid sized to hold the lowest `n_levels` states of `params`
    /// at any flux: classical turning point of the inductive envelope at the
    /// energy `(n_levels + 1) * sqrt(2 E_C (E_L + E_J1 + E_J2))`, plus three
    /// oscillator lengths of tail.
    pub fn compact(params: &CircuitParams, n_nodes: usize, n_levels: usize) -> Self {
        let stiffness = params.el + params.ej1 + params.ej2;
        let omega_max = (2.0 * params.ec * stiffness).sqrt();
        let turning = (2.0 * (n_levels as f64 + 1.0) * omega_max / params.el).sqrt();
        let tail = (2.0 * params.ec / params.el).powf(0.25);
        Self::symmetric(turning + 3.0 * tail, n_nodes)
    }

    pub fn min_nodes() -> usize {
        2 * STENCIL_ORDER + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi_min.is_finite() && self.phi_max.is_finite()) {
            return Err(KinemonError::param("grid", "bounds must be finite"));
        }
        if !(self.phi_min < 0.0 && 0.0 < self.phi_max) {
            return Err(KinemonError::param("grid", "need phi_min < 0 < phi_max"));
        }
        if self.n_nodes < Self::min_nodes() {
            return Err(KinemonError::GridTooCoarse {
                n_nodes: self.n_nodes,
                min_nodes: Self::min_nodes(),
            });
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.phi_max - self.phi_min) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.phi_min + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes).map(move |i| self.node(i))
    }

    /// Same spacing over a domain `factor` times wider.
    pub fn widened(&self, factor: f64) -> Self {
        let h = self.spacing();
        let phi_min = self.phi_min * factor;
        let phi_max = self.phi_max * factor;
        let n_nodes = ((phi_max - phi_min) / h).round() as usize + 1;
        Self {
            phi_min,
            phi_max,
            n_nodes,
        }
    }
}
