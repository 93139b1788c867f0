//! Flux-dependent transitions, anharmonicity, equidistance points and the
//! special flux points of the two-loop geometry.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{banded_eigensolve, banded_lowest, EigenSolution};
use crate::error::{KinemonError, Result};
use crate::grid::PhaseGrid;
use crate::hamiltonian::build_hamiltonian;
use crate::params::CircuitParams;
use crate::stencil::HALF_WIDTH;

/// Largest allowed `|ψ_k|² h` on the outermost nodes.
pub const BOUNDARY_TOLERANCE: f64 = 1e-10;
/// Growth of the domain when a state touches the boundary.
const WIDEN_FACTOR: f64 = 1.5;
/// |α| below which a bracketed root counts as converged, GHz (10 kHz).
pub const ROOT_TOLERANCE: f64 = 1e-5;
/// |α| below which the whole scan is treated as identically zero, GHz.
const ZERO_ALPHA: f64 = 1e-8;
pub const DEFAULT_SCAN_POINTS: usize = 200;

/// Lowest `k` eigenpairs at `phi_e`, checking that no requested state
/// reaches the grid edge. The domain is widened once before giving up.
pub fn solve(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid, k: usize) -> Result<EigenSolution> {
    let first = solve_unchecked(params, phi_e, grid, k)?;
    match leaking_level(&first) {
        None => Ok(first),
        Some(_) => {
            let wider = grid.widened(WIDEN_FACTOR);
            let second = solve_unchecked(params, phi_e, &wider, k)?;
            match leaking_level(&second) {
                None => Ok(second),
                Some(level) => Err(KinemonError::BoundaryLeak {
                    level,
                    weight: second.boundary_weight(level),
                    tolerance: BOUNDARY_TOLERANCE,
                    phi_max: wider.phi_max,
                }),
            }
        }
    }
}

fn solve_unchecked(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid, k: usize) -> Result<EigenSolution> {
    let h = build_hamiltonian(params, phi_e, grid)?;
    banded_eigensolve(&h, HALF_WIDTH, k, grid.spacing(), phi_e)
}

fn leaking_level(sol: &EigenSolution) -> Option<usize> {
    (0..sol.n_levels()).find(|&l| sol.boundary_weight(l) > BOUNDARY_TOLERANCE)
}

/// Lowest `k` eigenvalues only, through the banded solver. No boundary check.
pub fn levels(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid, k: usize) -> Result<Vec<f64>> {
    let h = build_hamiltonian(params, phi_e, grid)?;
    banded_lowest(h, HALF_WIDTH, k)
}

/// Transition frequencies out of the ground state, GHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTable {
    pub phi_e: f64,
    pub f01: f64,
    pub f12: f64,
    pub f02: f64,
    pub f02_half: f64,
    /// f0n for n = 3, 4, ...
    pub higher: Vec<f64>,
}

impl TransitionTable {
    pub fn from_energies(phi_e: f64, energies: &[f64]) -> Result<Self> {
        if energies.len() < 3 {
            return Err(KinemonError::NotEnoughLevels {
                needed: 3,
                got: energies.len(),
            });
        }
        let f01 = energies[1] - energies[0];
        let f12 = energies[2] - energies[1];
        let f02 = f01 + f12;
        Ok(Self {
            phi_e,
            f01,
            f12,
            f02,
            f02_half: 0.5 * f02,
            higher: energies[3..].iter().map(|e| e - energies[0]).collect(),
        })
    }

    /// α/h = 2 (f02/2 - f01).
    pub fn anharmonicity(&self) -> f64 {
        2.0 * (self.f02_half - self.f01)
    }
}

pub fn transitions(eig: &EigenSolution) -> Result<TransitionTable> {
    TransitionTable::from_energies(eig.phi_e, &eig.energies)
}

pub fn anharmonicity(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid) -> Result<f64> {
    let eig = solve(params, phi_e, grid, 3)?;
    Ok(transitions(&eig)?.anharmonicity())
}

/// Transitions at every flux point, evaluated in parallel; output order
/// follows `phi_e_list`.
pub fn flux_sweep(
    params: &CircuitParams,
    phi_e_list: &[f64],
    n_levels: usize,
    grid: &PhaseGrid,
) -> Result<Vec<TransitionTable>> {
    if phi_e_list.is_empty() {
        return Err(KinemonError::param("phi_e_list", "must not be empty"));
    }
    let n_levels = n_levels.max(3);
    phi_e_list
        .par_iter()
        .map(|&phi_e| transitions(&solve(params, phi_e, grid, n_levels)?))
        .collect()
}

/// Zeros of α(φ_e) over an interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Equidistance {
    Roots(Vec<f64>),
    /// α vanishes identically over the whole interval (harmonic circuit).
    Degenerate { start: f64, end: f64 },
}

impl Equidistance {
    pub fn roots(&self) -> &[f64] {
        match self {
            Equidistance::Roots(r) => r,
            Equidistance::Degenerate { .. } => &[],
        }
    }
}

fn alpha_fast(params: &CircuitParams, phi_e: f64, grid: &PhaseGrid) -> Result<f64> {
    let e = levels(params, phi_e, grid, 3)?;
    Ok(TransitionTable::from_energies(phi_e, &e)?.anharmonicity())
}

/// Sign-change bracketing on a uniform scan mesh followed by bisection.
pub fn find_equidistance_points(
    params: &CircuitParams,
    range: (f64, f64),
    grid: &PhaseGrid,
    scan_points: usize,
) -> Result<Equidistance> {
    let (start, end) = range;
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Err(KinemonError::param("phi_e_range", "need a finite interval with start < end"));
    }
    let scan_points = scan_points.max(2);
    if params.is_harmonic() {
        params.validate()?;
        return Ok(Equidistance::Degenerate { start, end });
    }
    // the eigenvalue-only path skips the boundary check, so check the ends once
    solve(params, start, grid, 3)?;
    solve(params, end, grid, 3)?;

    let mesh: Vec<f64> = (0..scan_points)
        .map(|i| start + (end - start) * i as f64 / (scan_points - 1) as f64)
        .collect();
    let alpha: Vec<f64> = mesh
        .par_iter()
        .map(|&x| alpha_fast(params, x, grid))
        .collect::<Result<_>>()?;
    if alpha.iter().all(|a| a.abs() < ZERO_ALPHA) {
        return Ok(Equidistance::Degenerate { start, end });
    }

    let mut roots = Vec::new();
    let mut i = 0;
    while i < mesh.len() {
        if alpha[i].abs() < ROOT_TOLERANCE {
            // a run of near-zero samples gives one root at its smallest |α|
            let mut best = i;
            let mut j = i;
            while j + 1 < mesh.len() && alpha[j + 1].abs() < ROOT_TOLERANCE {
                j += 1;
                if alpha[j].abs() < alpha[best].abs() {
                    best = j;
                }
            }
            roots.push(mesh[best]);
            i = j + 1;
            continue;
        }
        if i + 1 < mesh.len()
            && alpha[i + 1].abs() >= ROOT_TOLERANCE
            && alpha[i].signum() != alpha[i + 1].signum()
        {
            roots.push(bisect(params, grid, (mesh[i], alpha[i]), mesh[i + 1])?);
        }
        i += 1;
    }
    Ok(Equidistance::Roots(roots))
}

fn bisect(params: &CircuitParams, grid: &PhaseGrid, (mut a, mut fa): (f64, f64), mut b: f64) -> Result<f64> {
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = alpha_fast(params, mid, grid)?;
        if fm.abs() < ROOT_TOLERANCE && (b - a) < 1e-9 {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// φ_e = π (1 + 2k') / (2κ - 1) for every k' in `k_range` (inclusive).
pub fn special_points(kappa: f64, k_range: (i64, i64)) -> Result<Vec<f64>> {
    let denom = 2.0 * kappa - 1.0;
    if denom == 0.0 {
        return Err(KinemonError::SingularKappa);
    }
    if !kappa.is_finite() {
        return Err(KinemonError::param("kappa", "must be finite"));
    }
    Ok((k_range.0..=k_range.1)
        .map(|k| PI * (1 + 2 * k) as f64 / denom)
        .collect())
}
