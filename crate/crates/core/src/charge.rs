//! Offset-charge sensitivity.
//!
//! Without the inductive shunt the junction potential is periodic and the
//! levels form Bloch bands in the induced charge `n_g`; the band widths are
//! computed by direct diagonalisation in the charge basis. With the shunt the
//! offset charge can be gauged away, which [`shunted_gauge_spectrum`] checks
//! on the phase grid.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eigen::{banded_lowest, tridiagonal_lowest};
use crate::error::{KinemonError, Result};
use crate::grid::PhaseGrid;
use crate::hamiltonian::build_hamiltonian;
use crate::params::CircuitParams;
use crate::stencil::{FIRST, HALF_WIDTH};

pub const DEFAULT_CUTOFF: usize = 30;
pub const DEFAULT_NG_SAMPLES: usize = 41;
const GOLDEN_ITERATIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeBasisConfig {
    pub ej: f64,
    pub ec: f64,
    /// Induced charge in units of 2e; the spectrum has period 1.
    pub n_g: f64,
    /// Largest |n| kept in the Cooper-pair number basis.
    pub charge_cutoff: usize,
}

impl ChargeBasisConfig {
    pub fn new(ej: f64, ec: f64, n_g: f64) -> Self {
        Self {
            ej,
            ec,
            n_g,
            charge_cutoff: DEFAULT_CUTOFF,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.charge_cutoff + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ec > 0.0 && self.ec.is_finite()) {
            return Err(KinemonError::param("ec", "must be > 0"));
        }
        if !(self.ej >= 0.0 && self.ej.is_finite()) {
            return Err(KinemonError::param("ej", "must be >= 0"));
        }
        if !self.n_g.is_finite() {
            return Err(KinemonError::param("n_g", "must be finite"));
        }
        if self.charge_cutoff < 10 {
            return Err(KinemonError::param("charge_cutoff", "must be >= 10"));
        }
        Ok(())
    }

    fn diagonal(&self) -> Vec<f64> {
        let c = self.charge_cutoff as i64;
        (-c..=c)
            .map(|n| {
                let q = n as f64 - self.n_g;
                self.ec * q * q
            })
            .collect()
    }
}

/// E_C (n - n_g)² on the diagonal, -E_J/2 on the first off-diagonals.
pub fn transmon_charge_hamiltonian(cfg: &ChargeBasisConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let diag = cfg.diagonal();
    let n = diag.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i.abs_diff(j) == 1 {
            -0.5 * cfg.ej
        } else {
            0.0
        }
    }))
}

/// Lowest `k` charge-basis levels at the configured offset charge.
pub fn charge_levels(cfg: &ChargeBasisConfig, k: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    let diag = cfg.diagonal();
    let off = vec![-0.5 * cfg.ej; diag.len() - 1];
    tridiagonal_lowest(&diag, &off, k)
}

fn level_at(ej: f64, ec: f64, cutoff: usize, level: usize, n_g: f64) -> Result<f64> {
    let cfg = ChargeBasisConfig {
        ej,
        ec,
        n_g,
        charge_cutoff: cutoff,
    };
    Ok(charge_levels(&cfg, level + 1)?[level])
}

/// Band extent of one level over the induced charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub level: usize,
    pub min: f64,
    pub max: f64,
    pub n_g_at_min: f64,
    pub n_g_at_max: f64,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Band of `level` from `n_samples` uniform samples on [0, 1), with both
/// extrema polished by golden-section search between neighbouring samples.
pub fn band(ej: f64, ec: f64, level: usize, n_samples: usize, cutoff: usize) -> Result<Band> {
    if level > 2 * cutoff {
        return Err(KinemonError::TooManyLevels {
            requested: level + 1,
            dim: 2 * cutoff + 1,
        });
    }
    let n_samples = n_samples.max(3);
    let step = 1.0 / n_samples as f64;
    let samples: Vec<f64> = (0..n_samples)
        .map(|i| level_at(ej, ec, cutoff, level, i as f64 * step))
        .collect::<Result<_>>()?;
    let (mut imin, mut imax) = (0, 0);
    for (i, &e) in samples.iter().enumerate() {
        if e < samples[imin] {
            imin = i;
        }
        if e > samples[imax] {
            imax = i;
        }
    }
    let f = |x: f64| level_at(ej, ec, cutoff, level, x);
    let centre_min = imin as f64 * step;
    let centre_max = imax as f64 * step;
    let (x_min, e_min) = golden(&f, centre_min - step, centre_min + step, 1.0)?;
    let (x_max, e_max) = golden(&f, centre_max - step, centre_max + step, -1.0)?;
    let (n_g_at_min, min) = if e_min < samples[imin] {
        (x_min.rem_euclid(1.0), e_min)
    } else {
        (centre_min, samples[imin])
    };
    let (n_g_at_max, max) = if e_max > samples[imax] {
        (x_max.rem_euclid(1.0), e_max)
    } else {
        (centre_max, samples[imax])
    };
    Ok(Band {
        level,
        min,
        max,
        n_g_at_min,
        n_g_at_max,
    })
}

/// Band width ε_level = max - min over n_g, with the default charge cutoff.
pub fn band_width(ej: f64, ec: f64, level: usize, n_samples: usize) -> Result<f64> {
    Ok(band(ej, ec, level, n_samples, DEFAULT_CUTOFF)?.width())
}

/// Golden-section search minimising `sign * f` on [a, b].
fn golden(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, sign: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = sign * f(c)?;
    let mut fd = sign * f(d)?;
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sign * f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sign * f(d)?;
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?))
}

/// Energy of each level at each offset charge, for CSV export.
pub fn band_energies(ej: f64, ec: f64, n_g_list: &[f64], n_levels: usize, cutoff: usize) -> Result<Vec<(f64, usize, f64)>> {
    let mut out = Vec::with_capacity(n_g_list.len() * n_levels);
    for &n_g in n_g_list {
        let cfg = ChargeBasisConfig {
            ej,
            ec,
            n_g,
            charge_cutoff: cutoff,
        };
        for (level, e) in charge_levels(&cfg, n_levels)?.into_iter().enumerate() {
            out.push((n_g, level, e));
        }
    }
    Ok(out)
}

/// Shunted Hamiltonian with kinetic term E_C (-i d/dφ - n_g)², complex
/// Hermitian. The first derivative uses the sixth-order antisymmetric
/// stencil.
pub fn charge_offset_hamiltonian(
    params: &CircuitParams,
    phi_e: f64,
    n_g: f64,
    grid: &PhaseGrid,
) -> Result<DMatrix<Complex64>> {
    if !n_g.is_finite() {
        return Err(KinemonError::param("n_g", "must be finite"));
    }
    let real = build_hamiltonian(params, phi_e, grid)?;
    let n = grid.n_nodes;
    let h = grid.spacing();
    // E_C(p - n_g)² = E_C p² + 2i E_C n_g d/dφ + E_C n_g²
    let drift = 2.0 * params.ec * n_g / h;
    let mut m = real.map(|v| Complex64::new(v, 0.0));
    for i in 0..n {
        m[(i, i)] += params.ec * n_g * n_g;
        for d in 1..=HALF_WIDTH {
            if i + d < n {
                let v = Complex64::new(0.0, drift * FIRST[d - 1]);
                m[(i, i + d)] += v;
                m[(i + d, i)] += v.conj();
            }
        }
    }
    Ok(m)
}

/// Levels of the shunted circuit at induced charge `n_g`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeOffsetSpectrum {
    pub phi_e: f64,
    pub n_g: f64,
    pub energies: Vec<f64>,
}

/// Lowest `k` levels of [`charge_offset_hamiltonian`]. The n×n Hermitian
/// matrix `A + iB` is solved as the real symmetric 2n×2n matrix
/// `[[A, -B], [B, A]]` with real and imaginary parts interleaved per node,
/// which keeps it banded; every eigenvalue appears twice.
pub fn shunted_gauge_spectrum(
    params: &CircuitParams,
    phi_e: f64,
    n_g: f64,
    grid: &PhaseGrid,
    k: usize,
) -> Result<ChargeOffsetSpectrum> {
    let h = charge_offset_hamiltonian(params, phi_e, n_g, grid)?;
    let n = h.nrows();
    let embedded = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r / 2, c / 2)];
        match (r % 2, c % 2) {
            (0, 0) | (1, 1) => z.re,
            (0, 1) => -z.im,
            _ => z.im,
        }
    });
    let doubled = banded_lowest(embedded, 2 * HALF_WIDTH + 1, 2 * k)?;
    let energies = doubled.chunks(2).map(|pair| 0.5 * (pair[0] + pair[1])).collect();
    Ok(ChargeOffsetSpectrum {
        phi_e,
        n_g,
        energies,
    })
}

/// Per level, max minus min of the shunted energies over `n_g_list`.
pub fn gauge_variation(
    params: &CircuitParams,
    phi_e: f64,
    n_g_list: &[f64],
    grid: &PhaseGrid,
    k: usize,
) -> Result<Vec<f64>> {
    if n_g_list.is_empty() {
        return Err(KinemonError::param("n_g_list", "must not be empty"));
    }
    let spectra: Vec<ChargeOffsetSpectrum> = n_g_list
        .par_iter()
        .map(|&n_g| shunted_gauge_spectrum(params, phi_e, n_g, grid, k))
        .collect::<Result<_>>()?;
    Ok((0..k)
        .map(|m| {
            let (lo, hi) = spectra
                .iter()
                .map(|s| s.energies[m])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
            hi - lo
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::kinemon;
    use crate::spectrum::solve;

    #[test]
    fn gauge_variation_is_tiny() {
        let p = kinemon("I").unwrap().params;
        let grid = PhaseGrid::compact(&p, 801, 6);
        let v = gauge_variation(&p, 0.3, &[0.0, 0.25, 0.5, 0.75], &grid, 6).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.iter().all(|&x| (0.0..1e-8).contains(&x)), "{v:?}");
    }

    #[test]
    fn free_rotor_levels() {
        let cfg = ChargeBasisConfig::new(0.0, 0.9, 0.3);
        let got = charge_levels(&cfg, 6).unwrap();
        let mut expected: Vec<f64> = (-30i64..=30).map(|n| 0.9 * (n as f64 - 0.3).powi(2)).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_offset_is_invisible() {
        let a = charge_levels(&ChargeBasisConfig::new(5.38, 0.9, 0.0), 8).unwrap();
        let b = charge_levels(&ChargeBasisConfig::new(5.38, 0.9, 1.0), 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_symmetric_about_half() {
        for &x in &[0.1, 0.23, 0.4] {
            let a = charge_levels(&ChargeBasisConfig::new(3.0, 1.5, 0.5 - x), 6).unwrap();
            let b = charge_levels(&ChargeBasisConfig::new(3.0, 1.5, 0.5 + x), 6).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tridiagonal_route_matches_dense_matrix() {
        let cfg = ChargeBasisConfig::new(5.38, 0.9, 0.37);
        let dense = transmon_charge_hamiltonian(&cfg).unwrap().symmetric_eigenvalues();
        let mut dense: Vec<f64> = dense.iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        let fast = charge_levels(&cfg, 8).unwrap();
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn free_rotor_ground_band_is_quarter_ec() {
        let b = band(0.0, 0.9, 0, 41, DEFAULT_CUTOFF).unwrap();
        assert!((b.width() - 0.9 / 4.0).abs() < 1e-9, "{}", b.width());
        assert!((b.n_g_at_max - 0.5).abs() < 1e-4);
    }

    #[test]
    fn sampled_width_matches_dense_sampling_oracle() {
        // oracle: 201 plain samples, no refinement
        let oracle = {
            let e: Vec<f64> = (0..201)
                .map(|i| charge_levels(&ChargeBasisConfig::new(5.38, 0.9, i as f64 / 201.0), 1).unwrap()[0])
                .collect();
            e.iter().cloned().fold(f64::MIN, f64::max) - e.iter().cloned().fold(f64::MAX, f64::min)
        };
        let coarse = band(5.38, 0.9, 0, 21, DEFAULT_CUTOFF).unwrap().width();
        assert!((coarse / oracle - 1.0).abs() < 0.01, "{coarse} vs {oracle}");
    }

    #[test]
    fn high_bands_stay_open() {
        let e0 = band_width(5.38, 0.9, 0, 41).unwrap();
        let e5 = band_width(5.38, 0.9, 5, 41).unwrap();
        assert!(e5 / e0 > 1e3, "ratio {}", e5 / e0);
    }

    #[test]
    fn larger_josephson_energy_flattens_ground_band() {
        let mut last = f64::INFINITY;
        for ej in [1.0, 2.0, 4.0, 8.0] {
            let w = band_width(ej, 0.9, 0, 41).unwrap();
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn cutoff_and_level_validation() {
        let mut cfg = ChargeBasisConfig::new(1.0, 1.0, 0.0);
        cfg.charge_cutoff = 5;
        assert!(transmon_charge_hamiltonian(&cfg).is_err());
        assert!(band(1.0, 1.0, 21, 11, 10).is_err());
    }

    #[test]
    fn zero_offset_reduces_to_real_hamiltonian() {
        let p = kinemon("I").unwrap().params;
        let grid = PhaseGrid::default();
        let real = solve(&p, 0.0, &grid, 6).unwrap();
        let gauge = shunted_gauge_spectrum(&p, 0.0, 0.0, &grid, 6).unwrap();
        for (a, b) in real.energies.iter().zip(&gauge.energies) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn embedding_matches_dense_hermitian_solve() {
        let p = kinemon("IV").unwrap().params;
        let grid = PhaseGrid::symmetric(5.0, 61);
        let h = charge_offset_hamiltonian(&p, 0.8, 0.3, &grid).unwrap();
        let defect = (&h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_eq!(defect, 0.0);
        let mut dense: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        dense.sort_by(f64::total_cmp);
        let fast = shunted_gauge_spectrum(&p, 0.8, 0.3, &grid, 5).unwrap();
        for (a, b) in fast.energies.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_ladder_at_any_offset() {
        let p = CircuitParams::single_loop(0.0, 0.47, 8.11);
        let w = p.plasma_frequency();
        let grid = PhaseGrid::compact(&p, 401, 6);
        let s = shunted_gauge_spectrum(&p, 0.0, 0.37, &grid, 5).unwrap();
        for (n, e) in s.energies.iter().enumerate() {
            assert!((e - w * (n as f64 + 0.5)).abs() < 1e-6, "level {n}: {e}");
        }
    }
}
