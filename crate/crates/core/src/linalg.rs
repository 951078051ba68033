//! Minimal complex linear algebra used by the closed-form solver.

use num_complex::Complex64;

/// Solves `a * x = b` for a dense complex matrix stored row-major.
///
/// Gaussian elimination with partial pivoting; returns `None` when a pivot
/// collapses to (numerical) zero.
pub(crate) fn solve_dense(
    a: &[Complex64],
    b: &[Complex64],
    n: usize,
) -> Option<Vec<Complex64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();

    for col in 0..n {
        let (pivot_row, pivot_mag) = (col..n)
            .map(|r| (r, m[r * n + col].norm()))
            .max_by(|u, v| u.1.total_cmp(&v.1))?;
        if pivot_mag < 1e-300 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for r in col + 1..n {
            let factor = m[r * n + col] / pivot;
            if factor == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col..n {
                let v = m[col * n + j];
                m[r * n + j] -= factor * v;
            }
            let xv = x[col];
            x[r] -= factor * xv;
        }
    }

    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in col + 1..n {
            acc -= m[col * n + j] * x[j];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Cholesky-based positive-definiteness check for a Hermitian matrix.
pub(crate) fn hermitian_is_positive_definite(a: &[Complex64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k].conj();
            }
            if i == j {
                if sum.re <= 0.0 || sum.im.abs() > 1e-9 * sum.re.abs().max(1e-300) {
                    return false;
                }
                l[i * n + j] = Complex64::new(sum.re.sqrt(), 0.0);
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_known_system() {
        // [ 2   i ] [x0]   [ 1 ]
        // [-i   3 ] [x1] = [ i ]
        let a = vec![
            Complex64::new(2.0, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(0.0, -1.0),
            Complex64::new(3.0, 0.0),
        ];
        let b = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let x = solve_dense(&a, &b, 2).unwrap();
        // Residual check.
        for i in 0..2 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..2 {
                acc += a[i * 2 + j] * x[j];
            }
            assert!((acc - b[i]).norm() < 1e-14);
        }
    }

    #[test]
    fn rejects_singular_matrix() {
        let a = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(4.0, 0.0),
        ];
        let b = vec![Complex64::new(1.0, 0.0); 2];
        assert!(solve_dense(&a, &b, 2).is_none());
    }

    #[test]
    fn definiteness_check() {
        let id = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        assert!(hermitian_is_positive_definite(&id, 2));
        let indef = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        assert!(!hermitian_is_positive_definite(&indef, 2));
    }
}
