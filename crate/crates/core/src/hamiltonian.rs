use nalgebra::DMatrix;

use crate::error::{KinemonError, Result};
use crate::grid::PhaseGrid;
use crate::params::CircuitParams;
use crate::stencil::{HALF_WIDTH, SECOND};

/// Kinemon Hamiltonian on the phase grid, GHz. Exactly symmetric: every
/// off-diagonal pair is written from the same value.
pub fn build_hamiltonian(
    params: &CircuitParams,
    phi_e: f64,
    grid: &PhaseGrid,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    grid.validate()?;
    if !phi_e.is_finite() {
        return Err(KinemonError::param("phi_e", "must be finite"));
    }
    let n = grid.n_nodes;
    let h = grid.spacing();
    let kinetic = -params.ec / (h * h);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let phi = grid.node(i);
        let u = params.potential(phi, phi_e);
        if !u.is_finite() {
            return Err(KinemonError::NonFinitePotential { phi });
        }
        m[(i, i)] = u + kinetic * SECOND[0];
        for d in 1..=HALF_WIDTH {
            if i + d < n {
                let v = kinetic * SECOND[d];
                m[(i, i + d)] = v;
                m[(i + d, i)] = v;
            }
        }
    }
    Ok(m)
}
