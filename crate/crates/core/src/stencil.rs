//! Sixth-order central finite-difference stencils.
//!
//! Rows near the boundary use the same central stencil against implicit
//! zeros outside the grid (Dirichlet).

use nalgebra::DMatrix;

pub const STENCIL_ORDER: usize = 6;
pub const HALF_WIDTH: usize = 3;

/// Second derivative, offsets 0..=3 (symmetric).
pub const SECOND: [f64; 4] = [-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0];

/// First derivative, offsets 1..=3 (antisymmetric; offset 0 is zero).
pub const FIRST: [f64; 3] = [3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0];

/// d²/dφ² on `n` nodes with spacing `h`.
pub fn second_derivative(n: usize, h: f64) -> DMatrix<f64> {
    let scale = 1.0 / (h * h);
    DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        if d <= HALF_WIDTH {
            SECOND[d] * scale
        } else {
            0.0
        }
    })
}

/// d/dφ on `n` nodes with spacing `h`. Exactly antisymmetric.
pub fn first_derivative(n: usize, h: f64) -> DMatrix<f64> {
    let scale = 1.0 / h;
    DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        if d == 0 || d > HALF_WIDTH {
            0.0
        } else if j > i {
            FIRST[d - 1] * scale
        } else {
            -FIRST[d - 1] * scale
        }
    })
}
