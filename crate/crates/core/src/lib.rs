//! Simulation and parameter extraction for inductively shunted transmons
//! ("kinemons").
//!
//! The crate is organised around the single-mode circuit Hamiltonian
//!
//! ```text
//! H = -E_C d²/dφ² + ½ E_L φ² - E_J1 cos(φ + κ φ_e) - E_J2 cos(φ - (1-κ) φ_e)
//! ```
//!
//! discretised with sixth-order finite differences on a phase grid:
//!
//! - [`spectrum`]: eigenpairs, transitions, anharmonicity, equidistance points
//! - [`charge`]: Bloch-band widths of the unshunted junction and offset-charge
//!   independence of the shunted one
//! - [`cqed`]: coupling to a readout resonator and dressed resonator traces
//! - [`lindblad`]: driven-dissipative steady states and two-tone maps
//! - [`fitting`]: extraction of circuit, flux and cavity parameters from
//!   digitised spectral lines
//!
//! All energies are E/h in GHz.

pub mod charge;
pub mod cqed;
pub mod devices;
pub mod eigen;
pub mod error;
pub mod export;
pub mod fitting;
pub mod grid;
pub mod hamiltonian;
pub mod lindblad;
pub mod params;
pub mod spectrum;
pub mod stencil;

pub use eigen::EigenSolution;
pub use error::{KinemonError, Result};
pub use grid::PhaseGrid;
pub use params::CircuitParams;
pub use spectrum::TransitionTable;
