//! Dense complex LU factorization with partial pivoting — the brute-force
//! oracle for the sparse iterative path on small grids.

use num_complex::Complex64;

use super::{SolverError, StencilOperator};

/// Solve A·x = b by expanding the stencil to a dense matrix and performing
/// in-place LU with partial pivoting.
pub fn lu_solve(op: &StencilOperator, b: &[Complex64]) -> Result<Vec<Complex64>, SolverError> {
    let n = op.len();
    let w = op.width();
    let mut a = vec![Complex64::default(); n * n];
    for k in 0..n {
        a[k * n + k] = op.center[k];
        if k % w + 1 < w {
            a[k * n + k + 1] = op.east[k];
        }
        if k % w > 0 {
            a[k * n + k - 1] = op.west[k];
        }
        if k + w < n {
            a[k * n + k + w] = op.south[k];
        }
        if k >= w {
            a[k * n + k - w] = op.north[k];
        }
    }

    let mut x = b.to_vec();
    for col in 0..n {
        // Pivot on the largest remaining magnitude in this column.
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].norm();
        for row in col + 1..n {
            let mag = a[row * n + col].norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag < 1e-300 {
            return Err(SolverError::SingularDense { row: col });
        }
        if pivot_row != col {
            for c in 0..n {
                a.swap(col * n + c, pivot_row * n + c);
            }
            x.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == Complex64::default() {
                continue;
            }
            a[row * n + col] = Complex64::default();
            let (head, tail) = a.split_at_mut(row * n);
            let src = &head[col * n + col + 1..col * n + n];
            let dst = &mut tail[col + 1..n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= factor * s;
            }
            let pivot_x = x[col];
            x[row] -= factor * pivot_x;
        }
    }

    for row in (0..n).rev() {
        let mut acc = x[row];
        for col in row + 1..n {
            acc -= a[row * n + col] * x[col];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}
