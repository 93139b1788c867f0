//! Driven-dissipative steady states of the kinemon–resonator system.
//!
//! The cavity drive `Ω (a + a†) cos ω_d t` is removed by moving to the frame
//! generated by `ω_d (a†a + Σ_n n |E_n⟩⟨E_n|)` and dropping counter-rotating
//! terms, which leaves
//!
//! ```text
//! H = Σ_{m,n} [(E_n - E_0 - n ω_d) + m (ω_r - ω_d)] |m,n⟩⟨m,n|
//!   + g Σ_n D_{n,n+1} (a† ⊗ |E_n⟩⟨E_{n+1}| + a ⊗ |E_{n+1}⟩⟨E_n|)
//!   + (Ω/2)(a + a†)
//! ```
//!
//! with collapse operators `√κ a` and `√γ b`. The stationary state is the
//! normalised null vector of the Liouvillian. Density matrices are
//! column-stacked, `vec(AρB) = (Bᵀ ⊗ A) vec ρ`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cqed::{kinemon_basis, CavityConfig, KinemonBasis};
use crate::eigen::EigenSolution;
use crate::error::{KinemonError, Result};
use crate::grid::PhaseGrid;
use crate::params::CircuitParams;

pub const TRACE_TOLERANCE: f64 = 1e-9;
pub const HERMITICITY_TOLERANCE: f64 = 1e-9;
pub const POSITIVITY_TOLERANCE: f64 = 1e-7;
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
pub const LIOUVILLE_BOUND: usize = 4096;
/// Evolution time for the time-domain solver in units of the slowest decay
/// time.
pub const EVOLUTION_DECAY_TIMES: f64 = 40.0;
const EVOLUTION_STEPS: usize = 2000;
/// Relative pivot size below which the bordered system is checked for a
/// degenerate null space.
const SINGULAR_PIVOT: f64 = 1e-12;

type C = Complex64;

const ZERO: C = C::new(0.0, 0.0);
const ONE: C = C::new(1.0, 0.0);
const I: C = C::new(0.0, 1.0);

/// Converts a decay rate in μs⁻¹ to the GHz scale of the Hamiltonian. With
/// energies E/h in GHz the master equation is integrated in τ = 2π t (t in
/// ns), so a rate Γ becomes Γ / (2π · 10³).
pub fn rate_to_ghz(rate_per_us: f64) -> f64 {
    rate_per_us / (2.0 * PI * 1e3)
}

/// Inverse of [`rate_to_ghz`].
pub fn ghz_to_rate(ghz: f64) -> f64 {
    ghz * 2.0 * PI * 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationConfig {
    /// Cavity decay rate κ, μs⁻¹.
    pub kappa_c: f64,
    /// Kinemon decay rate γ, μs⁻¹.
    pub gamma_q: f64,
}

impl DissipationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa_c", self.kappa_c), ("gamma_q", self.gamma_q)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(KinemonError::param(name, "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    /// Drive frequency ω_d/2π, GHz.
    pub omega_drive: f64,
    /// Ω/2π before the rotating-wave approximation, GHz.
    pub amplitude: f64,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.omega_drive.is_finite() {
            return Err(KinemonError::param("omega_drive", "must be finite"));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(KinemonError::param("amplitude", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyStateMethod {
    /// Bordered linear solve for the Liouvillian null vector.
    #[default]
    NullSpace,
    /// Propagation from the vacuum with the exact step propagator.
    TimeEvolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    /// |⟨a⟩|
    pub cavity_amplitude: f64,
    /// 1 - P(|E_0⟩), cavity traced out.
    pub ground_depopulation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub rho: DMatrix<C>,
    pub n_kinemon: usize,
    pub n_fock: usize,
    pub observables: Observables,
    pub trace_error: f64,
    pub hermiticity_defect: f64,
    pub min_eigenvalue: f64,
}

impl SteadyState {
    pub fn cavity_amplitude(&self) -> f64 {
        self.observables.cavity_amplitude
    }

    pub fn ground_depopulation(&self) -> f64 {
        self.observables.ground_depopulation
    }
}

fn identity(n: usize) -> DMatrix<C> {
    DMatrix::identity(n, n)
}

fn annihilation(n_fock: usize) -> DMatrix<C> {
    DMatrix::from_fn(n_fock, n_fock, |r, c| if c == r + 1 { C::new((c as f64).sqrt(), 0.0) } else { ZERO })
}

fn shift_down(n: usize) -> DMatrix<C> {
    DMatrix::from_fn(n, n, |r, c| if c == r + 1 { ONE } else { ZERO })
}

/// `b = 1_r ⊗ Σ_n |E_n⟩⟨E_{n+1}|` on the resonator ⊗ kinemon space. The
/// eigenstates only fix the kinemon dimension.
pub fn kinemon_lowering_operator(eig: &EigenSolution, n_levels: usize, n_fock: usize) -> Result<DMatrix<C>> {
    if n_levels < 2 {
        return Err(KinemonError::param("n_levels", "must be >= 2"));
    }
    if eig.n_levels() < n_levels {
        return Err(KinemonError::NotEnoughLevels {
            needed: n_levels,
            got: eig.n_levels(),
        });
    }
    Ok(identity(n_fock).kronecker(&shift_down(n_levels)))
}

/// Operators of the rotating-frame model on the resonator ⊗ kinemon space.
struct Model {
    h: DMatrix<C>,
    collapse: Vec<DMatrix<C>>,
    a: DMatrix<C>,
    nq: usize,
    nr: usize,
}

fn build_model(
    basis: &KinemonBasis,
    cavity: &CavityConfig,
    dissipation: &DissipationConfig,
    drive: &DriveConfig,
) -> Result<Model> {
    cavity.validate()?;
    dissipation.validate()?;
    drive.validate()?;
    let nq = cavity.n_kinemon_levels;
    let nr = cavity.fock_cutoff + 1;
    if basis.n_levels() < nq {
        return Err(KinemonError::NotEnoughLevels {
            needed: nq,
            got: basis.n_levels(),
        });
    }
    let dim = nq * nr;
    if dim * dim > LIOUVILLE_BOUND {
        return Err(KinemonError::DimensionTooLarge {
            dim: dim * dim,
            bound: LIOUVILLE_BOUND,
        });
    }
    let wd = drive.omega_drive;
    let a_r = annihilation(nr);
    let a = a_r.kronecker(&identity(nq));
    let lower = identity(nr).kronecker(&shift_down(nq));

    let mut h = DMatrix::<C>::zeros(dim, dim);
    for m in 0..nr {
        for n in 0..nq {
            let i = m * nq + n;
            let e = basis.energies[n] - basis.energies[0] - n as f64 * wd + m as f64 * (cavity.omega_r - wd);
            h[(i, i)] = C::new(e, 0.0);
        }
    }
    // a† ⊗ |n⟩⟨n+1| and its conjugate
    let mut exchange = DMatrix::<C>::zeros(nq, nq);
    for n in 0..nq - 1 {
        exchange[(n, n + 1)] = C::new(cavity.g * basis.derivative[(n, n + 1)], 0.0);
    }
    let hop = a_r.adjoint().kronecker(&exchange);
    h += &hop + hop.adjoint();
    h += (&a + a.adjoint()) * C::new(0.5 * drive.amplitude, 0.0);

    let mut collapse = Vec::new();
    let kappa = rate_to_ghz(dissipation.kappa_c);
    let gamma = rate_to_ghz(dissipation.gamma_q);
    if kappa > 0.0 {
        collapse.push(&a * C::new(kappa.sqrt(), 0.0));
    }
    if gamma > 0.0 {
        collapse.push(lower * C::new(gamma.sqrt(), 0.0));
    }
    Ok(Model { h, collapse, a, nq, nr })
}

/// Column-stacked Liouvillian of `-i[H, ρ] + Σ_c (c ρ c† - ½{c†c, ρ})`.
fn liouvillian(model: &Model) -> DMatrix<C> {
    let n = model.h.nrows();
    let id = identity(n);
    let mut l = (id.kronecker(&model.h) - model.h.transpose().kronecker(&id)) * (-I);
    for c in &model.collapse {
        let cdc = c.adjoint() * c;
        l += c.conjugate().kronecker(c);
        l -= (id.kronecker(&cdc) + cdc.transpose().kronecker(&id)) * C::new(0.5, 0.0);
    }
    l
}

/// Numerical null-space dimension: singular values below `rel_tol` times the
/// largest.
pub fn null_space_dimension(l: &DMatrix<C>, rel_tol: f64) -> usize {
    let sv = l.clone().singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s <= rel_tol * top).count()
}

fn unvec(v: &DVector<C>, n: usize) -> DMatrix<C> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

fn null_space_solve(l: &DMatrix<C>, n: usize) -> Result<DMatrix<C>> {
    let big = l.nrows();
    let mut bordered = l.clone();
    for col in 0..big {
        bordered[(0, col)] = ZERO;
    }
    for i in 0..n {
        bordered[(0, i * n + i)] = ONE;
    }
    let mut rhs = DVector::<C>::zeros(big);
    rhs[0] = ONE;
    let lu = bordered.lu();
    let pivots = lu.u().diagonal().map(|z| z.norm());
    if pivots.min() <= SINGULAR_PIVOT * pivots.max() {
        let dimension = null_space_dimension(l, 1e-12);
        if dimension != 1 {
            return Err(KinemonError::DegenerateSteadyState { dimension });
        }
    }
    let solution = lu.solve(&rhs).filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    let x = match solution {
        Some(x) => x,
        None => {
            return Err(KinemonError::DegenerateSteadyState {
                dimension: null_space_dimension(l, 1e-12),
            })
        }
    };
    let scale = l.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let residual = (l * &x).camax();
    let tolerance = RESIDUAL_TOLERANCE * scale;
    if residual > tolerance {
        let dimension = null_space_dimension(l, 1e-12);
        if dimension != 1 {
            return Err(KinemonError::DegenerateSteadyState { dimension });
        }
        return Err(KinemonError::SteadyStateResidual { residual, tolerance });
    }
    Ok(unvec(&x, n))
}

/// Hilbert-space right-hand side of the master equation.
fn master_rhs(model: &Model, rho: &DMatrix<C>) -> DMatrix<C> {
    let mut out = (&model.h * rho - rho * &model.h) * (-I);
    for c in &model.collapse {
        let cdc = c.adjoint() * c;
        out += c * rho * c.adjoint() - (&cdc * rho + rho * &cdc) * C::new(0.5, 0.0);
    }
    out
}

/// Time evolution from the vacuum ⊗ ground state. The generator is assembled
/// column by column from [`master_rhs`] acting on matrix units, so it shares
/// no code with the Kronecker-product Liouvillian.
fn evolve_to_steady_state(model: &Model) -> Result<DMatrix<C>> {
    let n = model.h.nrows();
    let mut generator = DMatrix::<C>::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let mut unit = DMatrix::<C>::zeros(n, n);
            unit[(i, j)] = ONE;
            let image = master_rhs(model, &unit);
            generator.set_column(j * n + i, &DVector::from_column_slice(image.as_slice()));
        }
    }
    let slowest = model
        .collapse
        .iter()
        .map(|c| (c.adjoint() * c).iter().map(|z| z.re).fold(0.0, f64::max))
        .filter(|&r| r > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !slowest.is_finite() {
        return Err(KinemonError::DegenerateSteadyState {
            dimension: null_space_dimension(&generator, 1e-12),
        });
    }
    let total = EVOLUTION_DECAY_TIMES / slowest;
    let dt = total / EVOLUTION_STEPS as f64;
    let step = (&generator * C::new(dt, 0.0)).exp();
    let mut state = DVector::<C>::zeros(n * n);
    state[0] = ONE;
    for _ in 0..EVOLUTION_STEPS {
        state = &step * state;
    }
    Ok(unvec(&state, n))
}

fn observables(rho: &DMatrix<C>, a: &DMatrix<C>, nq: usize, nr: usize) -> Observables {
    let mean_a = (a * rho).trace();
    let ground: f64 = (0..nr).map(|m| rho[(m * nq, m * nq)].re).sum();
    Observables {
        cavity_amplitude: mean_a.norm(),
        ground_depopulation: 1.0 - ground,
    }
}

fn validate_density_matrix(rho: DMatrix<C>, model: &Model) -> Result<SteadyState> {
    let trace_error = (rho.trace() - ONE).norm();
    if trace_error > TRACE_TOLERANCE {
        return Err(KinemonError::InvalidDensityMatrix {
            property: "trace",
            value: trace_error,
        });
    }
    let hermiticity_defect = (&rho - rho.adjoint()).camax();
    if hermiticity_defect > HERMITICITY_TOLERANCE {
        return Err(KinemonError::InvalidDensityMatrix {
            property: "hermiticity",
            value: hermiticity_defect,
        });
    }
    let hermitian = (&rho + rho.adjoint()) * C::new(0.5, 0.0);
    let min_eigenvalue = hermitian.symmetric_eigenvalues().min();
    if min_eigenvalue < -POSITIVITY_TOLERANCE {
        return Err(KinemonError::InvalidDensityMatrix {
            property: "positivity",
            value: min_eigenvalue,
        });
    }
    let observables = observables(&rho, &model.a, model.nq, model.nr);
    Ok(SteadyState {
        rho,
        n_kinemon: model.nq,
        n_fock: model.nr,
        observables,
        trace_error,
        hermiticity_defect,
        min_eigenvalue,
    })
}

/// Steady state for a precomputed kinemon basis. The truncation is taken
/// from `cavity` (`n_kinemon_levels` ⊗ `fock_cutoff + 1`).
pub fn steady_state_from_basis(
    basis: &KinemonBasis,
    cavity: &CavityConfig,
    dissipation: &DissipationConfig,
    drive: &DriveConfig,
    method: SteadyStateMethod,
) -> Result<SteadyState> {
    let model = build_model(basis, cavity, dissipation, drive)?;
    let n = model.h.nrows();
    let rho = match method {
        SteadyStateMethod::NullSpace => null_space_solve(&liouvillian(&model), n)?,
        SteadyStateMethod::TimeEvolution => evolve_to_steady_state(&model)?,
    };
    validate_density_matrix(rho, &model)
}

pub fn steady_state(
    params: &CircuitParams,
    cavity: &CavityConfig,
    dissipation: &DissipationConfig,
    drive: &DriveConfig,
    phi_e: f64,
    grid: &PhaseGrid,
) -> Result<SteadyState> {
    cavity.validate()?;
    let basis = kinemon_basis(params, phi_e, grid, cavity.n_kinemon_levels)?;
    steady_state_from_basis(&basis, cavity, dissipation, drive, SteadyStateMethod::NullSpace)
}

/// Liouvillian of one configuration, for diagnostics.
pub fn build_liouvillian(
    basis: &KinemonBasis,
    cavity: &CavityConfig,
    dissipation: &DissipationConfig,
    drive: &DriveConfig,
) -> Result<DMatrix<C>> {
    Ok(liouvillian(&build_model(basis, cavity, dissipation, drive)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapCell {
    pub phi_e: f64,
    pub omega_d: f64,
    pub value: Option<Observables>,
    pub error: Option<String>,
}

/// Observables on a flux × drive-frequency grid, row-major in flux.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoToneMap {
    pub phi_e: Vec<f64>,
    pub omega_d: Vec<f64>,
    pub cells: Vec<MapCell>,
}

impl TwoToneMap {
    pub fn cell(&self, i_phi: usize, i_drive: usize) -> &MapCell {
        &self.cells[i_phi * self.omega_d.len() + i_drive]
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    /// Ground depopulation along the drive axis at one flux; failed cells
    /// are NaN.
    pub fn depopulation_row(&self, i_phi: usize) -> Vec<f64> {
        (0..self.omega_d.len())
            .map(|j| self.cell(i_phi, j).value.map_or(f64::NAN, |v| v.ground_depopulation))
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn two_tone_map(
    params: &CircuitParams,
    cavity: &CavityConfig,
    dissipation: &DissipationConfig,
    drive_amplitude: f64,
    phi_e_list: &[f64],
    omega_d_list: &[f64],
    grid: &PhaseGrid,
) -> Result<TwoToneMap> {
    if phi_e_list.is_empty() || omega_d_list.is_empty() {
        return Err(KinemonError::param("two_tone_map", "flux and drive lists must be non-empty"));
    }
    cavity.validate()?;
    dissipation.validate()?;
    let bases: Vec<std::result::Result<KinemonBasis, String>> = phi_e_list
        .par_iter()
        .map(|&phi| kinemon_basis(params, phi, grid, cavity.n_kinemon_levels).map_err(|e| e.to_string()))
        .collect();
    let nd = omega_d_list.len();
    let cells = (0..phi_e_list.len() * nd)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / nd, k % nd);
            let drive = DriveConfig {
                omega_drive: omega_d_list[j],
                amplitude: drive_amplitude,
            };
            let result = match &bases[i] {
                Ok(basis) => steady_state_from_basis(basis, cavity, dissipation, &drive, SteadyStateMethod::NullSpace)
                    .map(|s| s.observables)
                    .map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            let (value, error) = match result {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e)),
            };
            MapCell {
                phi_e: phi_e_list[i],
                omega_d: omega_d_list[j],
                value,
                error,
            }
        })
        .collect();
    Ok(TwoToneMap {
        phi_e: phi_e_list.to_vec(),
        omega_d: omega_d_list.to_vec(),
        cells,
    })
}

/// Indices of strict interior local maxima, ignoring NaN samples.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .collect()
}
