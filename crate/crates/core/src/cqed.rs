//! Kinemon coupled to a readout resonator.
//!
//! The kinemon is first projected onto its lowest eigenstates; the coupling
//! `g (a† - a) ⊗ d/dφ` is written as the Hermitian product
//! `i(a† - a) ⊗ (-i d/dφ)` and tensored as resonator ⊗ kinemon, so the
//! product state `|m, n⟩` (m photons, kinemon level n) sits at index
//! `m * n_kinemon + n`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KinemonError, Result};
use crate::grid::PhaseGrid;
use crate::params::CircuitParams;
use crate::spectrum::solve;
use crate::stencil::first_derivative;

pub const DEFAULT_KINEMON_LEVELS: usize = 6;
pub const DEFAULT_DIMENSION_BOUND: usize = 2048;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
/// Two dressed states whose overlaps with the tracked bare state differ by
/// less than this are treated as an exact degeneracy.
pub const AMBIGUITY_TOLERANCE: f64 = 1e-9;

fn default_levels() -> usize {
    DEFAULT_KINEMON_LEVELS
}

fn default_bound() -> usize {
    DEFAULT_DIMENSION_BOUND
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    /// Resonator frequency ω_r/2π, GHz.
    pub omega_r: f64,
    /// Coupling g/2π, GHz.
    pub g: f64,
    /// Largest photon number kept.
    pub fock_cutoff: usize,
    #[serde(default = "default_levels")]
    pub n_kinemon_levels: usize,
    #[serde(default = "default_bound")]
    pub dimension_bound: usize,
}

impl CavityConfig {
    pub fn new(omega_r: f64, g: f64, fock_cutoff: usize) -> Self {
        Self {
            omega_r,
            g,
            fock_cutoff,
            n_kinemon_levels: DEFAULT_KINEMON_LEVELS,
            dimension_bound: DEFAULT_DIMENSION_BOUND,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_kinemon_levels * (self.fock_cutoff + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_r > 0.0 && self.omega_r.is_finite()) {
            return Err(KinemonError::param("omega_r", "must be > 0"));
        }
        if !(self.g >= 0.0 && self.g < self.omega_r) {
            return Err(KinemonError::param("g", "must satisfy 0 <= g < omega_r"));
        }
        if self.fock_cutoff < 3 {
            return Err(KinemonError::param("fock_cutoff", "must be >= 3"));
        }
        if self.n_kinemon_levels < 2 {
            return Err(KinemonError::param("n_kinemon_levels", "must be >= 2"));
        }
        if self.dim() > self.dimension_bound {
            return Err(KinemonError::DimensionTooLarge {
                dim: self.dim(),
                bound: self.dimension_bound,
            });
        }
        Ok(())
    }
}

/// Truncated kinemon eigenbasis: energies and the derivative operator
/// `D_mn = ⟨E_m| d/dφ |E_n⟩`, real and antisymmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct KinemonBasis {
    pub phi_e: f64,
    pub energies: Vec<f64>,
    pub derivative: DMatrix<f64>,
}

impl KinemonBasis {
    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }
}

pub fn kinemon_basis(
    params: &CircuitParams,
    phi_e: f64,
    grid: &PhaseGrid,
    n_levels: usize,
) -> Result<KinemonBasis> {
    let sol = solve(params, phi_e, grid, n_levels)?;
    let psi = &sol.states;
    let d1 = first_derivative(psi.nrows(), sol.spacing);
    let projected = psi.transpose() * (d1 * psi) * sol.spacing;
    let derivative = DMatrix::from_fn(n_levels, n_levels, |m, n| {
        if m < n {
            projected[(m, n)]
        } else if m > n {
            -projected[(n, m)]
        } else {
            0.0
        }
    });
    Ok(KinemonBasis {
        phi_e,
        energies: sol.energies,
        derivative,
    })
}

fn annihilation(cutoff: usize) -> DMatrix<f64> {
    let dim = cutoff + 1;
    DMatrix::from_fn(dim, dim, |r, c| {
        if c == r + 1 {
            (c as f64).sqrt()
        } else {
            0.0
        }
    })
}

/// Largest |H_ij - conj(H_ji)|.
pub fn hermiticity_defect(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Coupled Hamiltonian from a precomputed kinemon basis, truncated to the
/// cavity's `n_kinemon_levels`.
pub fn cqed_hamiltonian_from_basis(basis: &KinemonBasis, cavity: &CavityConfig) -> Result<DMatrix<Complex64>> {
    cavity.validate()?;
    let nq = cavity.n_kinemon_levels;
    if basis.n_levels() < nq {
        return Err(KinemonError::NotEnoughLevels {
            needed: nq,
            got: basis.n_levels(),
        });
    }
    let nr = cavity.fock_cutoff + 1;
    let a = annihilation(cavity.fock_cutoff);
    let quadrature = (a.transpose() - &a).map(|v| Complex64::new(0.0, v));
    let charge = basis
        .derivative
        .view((0, 0), (nq, nq))
        .map(|v| Complex64::new(0.0, -v));
    let mut h = quadrature.kronecker(&charge) * Complex64::new(cavity.g, 0.0);
    for m in 0..nr {
        for n in 0..nq {
            let i = m * nq + n;
            h[(i, i)] += basis.energies[n] + cavity.omega_r * (m as f64 + 0.5);
        }
    }
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let defect = hermiticity_defect(&h);
    let tolerance = HERMITICITY_TOLERANCE * scale;
    if defect > tolerance {
        return Err(KinemonError::NotHermitian { defect, tolerance });
    }
    Ok((&h + h.adjoint()) * Complex64::new(0.5, 0.0))
}

pub fn build_cqed_hamiltonian(
    params: &CircuitParams,
    cavity: &CavityConfig,
    phi_e: f64,
    grid: &PhaseGrid,
    n_kinemon_levels: usize,
) -> Result<DMatrix<Complex64>> {
    let cavity = CavityConfig {
        n_kinemon_levels,
        ..*cavity
    };
    cavity.validate()?;
    let basis = kinemon_basis(params, phi_e, grid, n_kinemon_levels)?;
    cqed_hamiltonian_from_basis(&basis, &cavity)
}

/// Dressed spectrum with bare-state labels `(kinemon level, photon number)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSolution {
    pub phi_e: f64,
    pub energies: Vec<f64>,
    pub labels: Vec<(usize, usize)>,
    /// `overlaps[(bare, dressed)] = |⟨bare|dressed⟩|²`
    pub overlaps: DMatrix<f64>,
    pub n_kinemon: usize,
}

impl CoupledSolution {
    pub fn bare_index(&self, label: (usize, usize)) -> usize {
        label.1 * self.n_kinemon + label.0
    }

    pub fn index_of(&self, label: (usize, usize)) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn energy_of(&self, label: (usize, usize)) -> Option<f64> {
        self.index_of(label).map(|i| self.energies[i])
    }
}

pub fn solve_coupled(basis: &KinemonBasis, cavity: &CavityConfig) -> Result<CoupledSolution> {
    let h = cqed_hamiltonian_from_basis(basis, cavity)?;
    let dim = h.nrows();
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000)
        .ok_or_else(|| KinemonError::EigenNonConvergence(format!("{dim}x{dim} coupled Hamiltonian")))?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let energies: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let overlaps = DMatrix::from_fn(dim, dim, |bare, j| eig.eigenvectors[(bare, order[j])].norm_sqr());
    let nq = cavity.n_kinemon_levels;
    let labels = assign_labels(&overlaps, nq);
    Ok(CoupledSolution {
        phi_e: basis.phi_e,
        energies,
        labels,
        overlaps,
        n_kinemon: nq,
    })
}

/// Greedy unique assignment by decreasing overlap; ties go to the lower
/// photon number, then the lower kinemon level.
fn assign_labels(overlaps: &DMatrix<f64>, nq: usize) -> Vec<(usize, usize)> {
    let dim = overlaps.nrows();
    let mut pairs: Vec<(usize, usize)> = (0..dim).flat_map(|b| (0..dim).map(move |d| (b, d))).collect();
    pairs.sort_by(|&(b1, d1), &(b2, d2)| {
        overlaps[(b2, d2)]
            .total_cmp(&overlaps[(b1, d1)])
            .then((b1 / nq).cmp(&(b2 / nq)))
            .then((b1 % nq).cmp(&(b2 % nq)))
            .then(d1.cmp(&d2))
    });
    let mut labels = vec![None; dim];
    let mut used = vec![false; dim];
    let mut left = dim;
    for (b, d) in pairs {
        if left == 0 {
            break;
        }
        if used[b] || labels[d].is_some() {
            continue;
        }
        used[b] = true;
        labels[d] = Some((b % nq, b / nq));
        left -= 1;
    }
    labels.into_iter().map(|l| l.expect("every dressed state labelled")).collect()
}

pub fn dressed_spectrum(
    params: &CircuitParams,
    cavity: &CavityConfig,
    phi_e: f64,
    grid: &PhaseGrid,
) -> Result<CoupledSolution> {
    cavity.validate()?;
    let basis = kinemon_basis(params, phi_e, grid, cavity.n_kinemon_levels)?;
    solve_coupled(&basis, cavity)
}

fn resonator_line(sol: &CoupledSolution) -> Result<f64> {
    let ground = sol.energy_of((0, 0)).expect("ground label always assigned");
    let bare = sol.bare_index((0, 1));
    let mut weights: Vec<(f64, usize)> = (0..sol.energies.len()).map(|d| (sol.overlaps[(bare, d)], d)).collect();
    weights.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (w0, d0) = weights[0];
    let (w1, d1) = weights[1];
    if w0 - w1 < AMBIGUITY_TOLERANCE {
        return Err(KinemonError::AmbiguousLabel {
            label: (0, 1),
            candidates: [sol.energies[d0] - ground, sol.energies[d1] - ground],
        });
    }
    let one = sol.energy_of((0, 1)).expect("label assigned");
    Ok(one - ground)
}

/// Resonator line for a precomputed kinemon basis.
pub fn resonator_line_from_basis(basis: &KinemonBasis, cavity: &CavityConfig) -> Result<f64> {
    resonator_line(&solve_coupled(basis, cavity)?)
}

/// E(dressed |g,1⟩) - E(dressed |g,0⟩), GHz.
pub fn dressed_resonator_frequency(
    params: &CircuitParams,
    cavity: &CavityConfig,
    phi_e: f64,
    grid: &PhaseGrid,
) -> Result<f64> {
    resonator_line(&dressed_spectrum(params, cavity, phi_e, grid)?)
}

pub fn resonator_trace(
    params: &CircuitParams,
    cavity: &CavityConfig,
    phi_e_list: &[f64],
    grid: &PhaseGrid,
) -> Result<Vec<(f64, f64)>> {
    phi_e_list
        .par_iter()
        .map(|&phi_e| Ok((phi_e, dressed_resonator_frequency(params, cavity, phi_e, grid)?)))
        .collect()
}
