//! Small dense linear-algebra helpers shared by the solver and the
//! estimators. Everything here operates on tiny systems (a handful of
//! columns), so simple direct methods are used throughout.

/// Solves the square system `a * x = b` in place by Gaussian elimination with
/// partial pivoting. `a` is row-major `n x n`. Returns `None` when the pivot
/// collapses (singular system).
pub(crate) fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[r * n + col].abs().total_cmp(&a[s * n + col].abs()))
            .unwrap();
        let pivot = a[pivot_row * n + col];
        if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE * 16.0 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        for row in (col + 1)..n {
            let factor = a[row * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        let diag = a[row * n + row];
        if !diag.is_finite() || diag.abs() < f64::MIN_POSITIVE * 16.0 {
            return None;
        }
        x[row] = acc / diag;
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Least-squares solution of an overdetermined `rows x cols` system by
/// Householder QR. `matrix` is row-major and is consumed. Returns the
/// coefficient vector and the magnitudes of the R diagonal (used by callers
/// for rank diagnostics). `rows >= cols` is required.
pub(crate) fn householder_lstsq(
    rows: usize,
    cols: usize,
    matrix: &mut [f64],
    rhs: &mut [f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    debug_assert!(rows >= cols);
    debug_assert_eq!(matrix.len(), rows * cols);
    debug_assert_eq!(rhs.len(), rows);
    for col in 0..cols {
        // Householder vector for the trailing part of this column.
        let mut norm = 0.0;
        for r in col..rows {
            norm += matrix[r * cols + col] * matrix[r * cols + col];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue; // zero column; R diagonal stays 0 and rank check fires
        }
        let head = matrix[col * cols + col];
        let alpha = if head >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; rows - col];
        v[0] = head - alpha;
        for r in (col + 1)..rows {
            v[r - col] = matrix[r * cols + col];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        matrix[col * cols + col] = alpha;
        for r in (col + 1)..rows {
            matrix[r * cols + col] = 0.0;
        }
        if vtv == 0.0 {
            continue;
        }
        // Apply the reflector to the remaining columns and the rhs.
        for c in (col + 1)..cols {
            let mut dot = 0.0;
            for r in col..rows {
                dot += v[r - col] * matrix[r * cols + c];
            }
            let scale = 2.0 * dot / vtv;
            for r in col..rows {
                matrix[r * cols + c] -= scale * v[r - col];
            }
        }
        let mut dot = 0.0;
        for r in col..rows {
            dot += v[r - col] * rhs[r];
        }
        let scale = 2.0 * dot / vtv;
        for r in col..rows {
            rhs[r] -= scale * v[r - col];
        }
    }
    let r_diag: Vec<f64> = (0..cols).map(|c| matrix[c * cols + c].abs()).collect();
    let mut x = vec![0.0; cols];
    for row in (0..cols).rev() {
        let diag = matrix[row * cols + row];
        if !diag.is_finite() || diag == 0.0 {
            return None;
        }
        let mut acc = rhs[row];
        for k in (row + 1)..cols {
            acc -= matrix[row * cols + k] * x[k];
        }
        x[row] = acc / diag;
    }
    if x.iter().all(|v| v.is_finite()) {
        Some((x, r_diag))
    } else {
        None
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
/// Returns the eigenvalues in no particular order.
pub(crate) fn sym_eigenvalues(n: usize, matrix: &[f64]) -> Vec<f64> {
    debug_assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += a[r * n + c] * a[r * n + c];
            }
        }
        let scale: f64 = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        if off.sqrt() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Median of a slice. Averages the two central elements for even lengths.
/// Panics on empty input.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
