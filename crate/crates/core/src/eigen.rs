//! Symmetric eigensolvers.
//!
//! [`eigensolve`] returns eigenpairs of a dense real symmetric matrix and
//! normalizes the states with the grid weight. [`banded_lowest`] returns only
//! the lowest eigenvalues of a banded matrix: Givens band-to-tridiagonal
//! reduction followed by Sturm-sequence bisection. It is the hot path for
//! sweeps and fits where eigenvectors are not needed.
//! [`banded_eigensolve`] adds eigenvectors by inverse iteration with a
//! pivoted band LU, at cost linear in the matrix size.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{KinemonError, Result};

const MAX_SWEEPS: usize = 10_000;

/// Lowest eigenpairs at one flux point. `states` holds one column per level,
/// sampled on the grid nodes and normalized so that `Σ ψ² h = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    pub phi_e: f64,
    pub energies: Vec<f64>,
    pub states: DMatrix<f64>,
    pub spacing: f64,
}

impl EigenSolution {
    pub fn n_levels(&self) -> usize {
        self.energies.len()
    }

    pub fn state(&self, level: usize) -> nalgebra::DVectorView<'_, f64> {
        self.states.column(level)
    }

    /// Weight `|ψ_k|² h` on the outermost grid nodes, maximum of both ends.
    pub fn boundary_weight(&self, level: usize) -> f64 {
        let col = self.states.column(level);
        let first = col[0] * col[0];
        let last = col[col.len() - 1] * col[col.len() - 1];
        first.max(last) * self.spacing
    }

    /// Interior sign changes of a state, ignoring samples below `floor`
    /// relative to the largest amplitude.
    pub fn sign_changes(&self, level: usize, floor: f64) -> usize {
        let col = self.states.column(level);
        let cutoff = floor * col.amax();
        let mut last = 0.0f64;
        let mut changes = 0;
        for &v in col.iter() {
            if v.abs() <= cutoff {
                continue;
            }
            if last != 0.0 && v.signum() != last.signum() {
                changes += 1;
            }
            last = v;
        }
        changes
    }
}

/// Largest |H_ij - H_ji|.
pub fn symmetry_defect(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((h[(i, j)] - h[(j, i)]).abs());
        }
    }
    worst
}

/// `k` lowest eigenpairs of a real symmetric matrix, ascending.
pub fn eigensolve(h: &DMatrix<f64>, k: usize, spacing: f64, phi_e: f64) -> Result<EigenSolution> {
    let n = h.nrows();
    if h.ncols() != n || k > n || k == 0 {
        return Err(KinemonError::TooManyLevels {
            requested: k,
            dim: n,
        });
    }
    let defect = symmetry_defect(h);
    if defect != 0.0 {
        return Err(KinemonError::NotHermitian {
            defect,
            tolerance: 0.0,
        });
    }
    let eig = SymmetricEigen::try_new(h.clone(), f64::EPSILON, MAX_SWEEPS).ok_or_else(|| {
        KinemonError::EigenNonConvergence(format!("{n}x{n} symmetric matrix"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut energies = Vec::with_capacity(k);
    let mut states = DMatrix::zeros(n, k);
    for (level, &idx) in order.iter().take(k).enumerate() {
        energies.push(eig.eigenvalues[idx]);
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let norm = (v.norm_squared() * spacing).sqrt();
        v /= norm;
        // deterministic sign: largest component positive
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        states.set_column(level, &v);
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(KinemonError::EigenNonConvergence(
            "non-finite eigenvalue".into(),
        ));
    }
    Ok(EigenSolution {
        phi_e,
        energies,
        states,
        spacing,
    })
}

/// Lowest `k` eigenvalues of a symmetric matrix with half-bandwidth
/// `bandwidth`. The matrix is consumed as workspace.
pub fn banded_lowest(a: DMatrix<f64>, bandwidth: usize, k: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if k > n || k == 0 {
        return Err(KinemonError::TooManyLevels {
            requested: k,
            dim: n,
        });
    }
    // column-major storage of a symmetric matrix is also row-major
    let mut data = a.data.as_vec().clone();
    reduce_band_to_tridiagonal(&mut data, n, bandwidth);
    let diag: Vec<f64> = (0..n).map(|i| data[i * n + i]).collect();
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|i| data[i * n + i + 1]).collect();
    tridiagonal_lowest(&diag, &off, k)
}

/// Same contract as [`eigensolve`] for a symmetric matrix of half-bandwidth
/// `bandwidth`: eigenvalues from [`banded_lowest`], eigenvectors by inverse
/// iteration.
pub fn banded_eigensolve(h: &DMatrix<f64>, bandwidth: usize, k: usize, spacing: f64, phi_e: f64) -> Result<EigenSolution> {
    let n = h.nrows();
    if h.ncols() != n || k > n || k == 0 {
        return Err(KinemonError::TooManyLevels {
            requested: k,
            dim: n,
        });
    }
    let defect = symmetry_defect(h);
    if defect != 0.0 {
        return Err(KinemonError::NotHermitian {
            defect,
            tolerance: 0.0,
        });
    }
    let energies = banded_lowest(h.clone(), bandwidth, k)?;
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(KinemonError::EigenNonConvergence("non-finite eigenvalue".into()));
    }
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let mut states = DMatrix::zeros(n, k);
    for (level, &lambda) in energies.iter().enumerate() {
        let lu = BandLu::new(h, bandwidth, lambda, scale);
        let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i * 7 + level * 3) as f64).sin());
        for _ in 0..3 {
            lu.solve(v.as_mut_slice());
            for prev in 0..level {
                let u = states.column(prev);
                let dot = u.dot(&v) * spacing;
                v.axpy(-dot, &u, 1.0);
            }
            let norm = (v.norm_squared() * spacing).sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(KinemonError::EigenNonConvergence(format!("inverse iteration for level {level}")));
            }
            v /= norm;
        }
        if v[v.iamax()] < 0.0 {
            v.neg_mut();
        }
        states.set_column(level, &v);
    }
    Ok(EigenSolution {
        phi_e,
        energies,
        states,
        spacing,
    })
}

/// LU factors of `H - shift I` for a band matrix with partial pivoting.
/// Row `i` of `u` holds columns `i - bw ..= i + 2bw`.
struct BandLu {
    n: usize,
    bw: usize,
    u: Vec<f64>,
    multipliers: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    fn new(h: &DMatrix<f64>, bw: usize, shift: f64, scale: f64) -> Self {
        let n = h.nrows();
        let width = 3 * bw + 1;
        let mut u = vec![0.0; n * width];
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                u[i * width + j + bw - i] = h[(i, j)] - if i == j { shift } else { 0.0 };
            }
        }
        let mut multipliers = vec![0.0; n * bw];
        let mut pivots = vec![0; n];
        let tiny = f64::EPSILON * scale;
        for i in 0..n {
            let last = (i + bw).min(n - 1);
            let mut piv = i;
            let mut best = u[i * width + bw].abs();
            for r in i + 1..=last {
                let v = u[r * width + i + bw - r].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            pivots[i] = piv;
            if piv != i {
                // rebase row `piv` into the frame of row `i` while swapping
                let shift_by = piv - i;
                let mut moved = vec![0.0; width];
                for (c, m) in moved.iter_mut().enumerate().skip(shift_by) {
                    *m = u[piv * width + c - shift_by];
                }
                let mut back = vec![0.0; width];
                for c in 0..width - shift_by {
                    back[c] = u[i * width + c + shift_by];
                }
                u[i * width..(i + 1) * width].copy_from_slice(&moved);
                u[piv * width..(piv + 1) * width].copy_from_slice(&back);
            }
            if u[i * width + bw].abs() < tiny {
                u[i * width + bw] = tiny;
            }
            let d = u[i * width + bw];
            let right = (i + 2 * bw).min(n - 1);
            for r in i + 1..=last {
                let off = bw + i - r;
                let l = u[r * width + off] / d;
                multipliers[i * bw + r - i - 1] = l;
                u[r * width + off] = 0.0;
                if l != 0.0 {
                    for c in i + 1..=right {
                        u[r * width + c + bw - r] -= l * u[i * width + c + bw - i];
                    }
                }
            }
        }
        Self {
            n,
            bw,
            u,
            multipliers,
            pivots,
        }
    }

    fn solve(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = 3 * bw + 1;
        for i in 0..n {
            b.swap(i, self.pivots[i]);
            for r in i + 1..=(i + bw).min(n - 1) {
                b[r] -= self.multipliers[i * bw + r - i - 1] * b[i];
            }
        }
        #[allow(clippy::needless_range_loop)]
        for i in (0..n).rev() {
            let mut acc = b[i];
            for c in i + 1..=(i + 2 * bw).min(n - 1) {
                acc -= self.u[i * width + c + bw - i] * b[c];
            }
            b[i] = acc / self.u[i * width + bw];
        }
    }
}

/// In-place Givens reduction of a symmetric band matrix (dense row-major
/// storage) to tridiagonal form, Schwarz's bulge-chasing scheme. Only the
/// band plus one bulge diagonal is touched.
fn reduce_band_to_tridiagonal(a: &mut [f64], n: usize, bw: usize) {
    if bw <= 1 || n < 3 {
        return;
    }
    for j in 0..n - 2 {
        let top = (j + bw).min(n - 1);
        for k in (j + 2..=top).rev() {
            rotate_to_zero(a, n, k - 1, j, bw);
            // chase the bulge created at (k + bw, k - 1)
            let mut p = k;
            while p + bw < n {
                let r = p + bw;
                rotate_to_zero(a, n, r - 1, p - 1, bw);
                p = r;
            }
        }
    }
}

/// Symmetric similarity rotation in the plane (p, p+1) that annihilates
/// a[p+1][col].
fn rotate_to_zero(a: &mut [f64], n: usize, p: usize, col: usize, bw: usize) {
    let q = p + 1;
    let x = a[p * n + col];
    let y = a[q * n + col];
    if y == 0.0 {
        return;
    }
    // plain norm: no overflow for entries below 1e150, and much cheaper than hypot
    let r = (x * x + y * y).sqrt();
    let c = x / r;
    let s = y / r;
    let lo = p.saturating_sub(bw + 1);
    let hi = (q + bw + 2).min(n);
    for l in lo..hi {
        if l == p || l == q {
            continue;
        }
        let ap = a[p * n + l];
        let aq = a[q * n + l];
        let np = c * ap + s * aq;
        let nq = -s * ap + c * aq;
        a[p * n + l] = np;
        a[q * n + l] = nq;
        a[l * n + p] = np;
        a[l * n + q] = nq;
    }
    let app = a[p * n + p];
    let aqq = a[q * n + q];
    let apq = a[p * n + q];
    a[p * n + p] = c * c * app + 2.0 * c * s * apq + s * s * aqq;
    a[q * n + q] = s * s * app - 2.0 * c * s * apq + c * c * aqq;
    let off = c * s * (aqq - app) + (c * c - s * s) * apq;
    a[p * n + q] = off;
    a[q * n + p] = off;
    a[q * n + col] = 0.0;
    a[col * n + q] = 0.0;
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        if q == 0.0 {
            q = tiny;
        }
        q = diag[i] - x - off[i - 1] * off[i - 1] / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Sturm count at `x` together with the Newton correction `det / det'` of
/// the characteristic polynomial, from the same pivot recurrence.
fn sturm_newton(diag: &[f64], off: &[f64], x: f64) -> (usize, f64) {
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut count = 0;
    let mut q = diag[0] - x;
    let mut dq = -1.0;
    let mut log_derivative = 0.0;
    for i in 0..diag.len() {
        if i > 0 {
            let e2 = off[i - 1] * off[i - 1];
            let prev = if q == 0.0 { tiny } else { q };
            dq = -1.0 + e2 * dq / (prev * prev);
            q = diag[i] - x - e2 / prev;
        }
        if q < 0.0 {
            count += 1;
        }
        log_derivative += dq / if q == 0.0 { tiny } else { q };
    }
    (count, 1.0 / log_derivative)
}

/// Lowest `k` eigenvalues of a symmetric tridiagonal matrix: bisection until
/// each eigenvalue is isolated, then safeguarded Newton steps on the
/// characteristic polynomial. Sturm counts from every probe tighten the
/// brackets of the later eigenvalues.
pub fn tridiagonal_lowest(diag: &[f64], off: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = diag.len();
    if k > n {
        return Err(KinemonError::TooManyLevels {
            requested: k,
            dim: n,
        });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(KinemonError::EigenNonConvergence(
            "non-finite tridiagonal entries".into(),
        ));
    }
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    lo -= 1e-12 * scale + f64::MIN_POSITIVE;
    hi += 1e-12 * scale + f64::MIN_POSITIVE;

    // lower[j]: largest probe with count <= j; upper[j]: smallest probe with
    // count > j, together with the counts seen there
    let mut lower = vec![(lo, 0usize); k];
    let mut upper = vec![(hi, n); k];
    let record = |lower: &mut Vec<(f64, usize)>, upper: &mut Vec<(f64, usize)>, x: f64, c: usize| {
        for j in 0..k {
            if c > j {
                if x < upper[j].0 {
                    upper[j] = (x, c);
                }
            } else if x > lower[j].0 {
                lower[j] = (x, c);
            }
        }
    };
    let converged = |a: f64, b: f64| b - a <= 2.0 * f64::EPSILON * a.abs().max(b.abs()) + f64::MIN_POSITIVE;

    let mut out = Vec::with_capacity(k);
    for idx in 0..k {
        let mut value = None;
        for _ in 0..400 {
            let (a, ca) = lower[idx];
            let (b, cb) = upper[idx];
            if converged(a, b) {
                break;
            }
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if ca == idx && cb == idx + 1 {
                // isolated: Newton from the midpoint, falling back to
                // bisection whenever a step leaves the bracket
                let mut x = mid;
                loop {
                    let (c, step) = sturm_newton(diag, off, x);
                    record(&mut lower, &mut upper, x, c);
                    let (a, _) = lower[idx];
                    let (b, _) = upper[idx];
                    let next = x - step;
                    if !step.is_finite() || step.abs() <= 4.0 * f64::EPSILON * x.abs() || converged(a, b) {
                        value = Some(if step.is_finite() && next > a && next < b { next } else { x });
                        break;
                    }
                    x = if next > a && next < b { next } else { 0.5 * (a + b) };
                    if x <= a || x >= b {
                        break;
                    }
                }
                break;
            }
            let c = sturm_count(diag, off, mid);
            record(&mut lower, &mut upper, mid, c);
        }
        let v = value.unwrap_or_else(|| 0.5 * (lower[idx].0 + upper[idx].0));
        out.push(v);
        if idx + 1 < k && lower[idx + 1].0 < lower[idx].0 {
            lower[idx + 1] = lower[idx];
        }
    }
    Ok(out)
}
