//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest condition number accepted before a factorization is refused.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &DMatrix<Complex64>) -> Vec<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// `λ_max / λ_min` of a Hermitian positive-(semi)definite matrix; infinite
/// when the smallest eigenvalue is not positive.
pub fn hermitian_condition_number(a: &DMatrix<Complex64>) -> f64 {
    let ev = hermitian_eigenvalues(a);
    condition_from_eigenvalues(&ev)
}

fn condition_from_eigenvalues(ev: &[f64]) -> f64 {
    let (min, max) = match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) => (lo, hi),
        _ => return f64::INFINITY,
    };
    if min <= 0.0 || !min.is_finite() || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `A x = b` for Hermitian positive-definite `A` through a Cholesky
/// factorization, refusing matrices with condition number above
/// [`CONDITION_LIMIT`]. Returns the solution and the condition number.
pub fn solve_hermitian_pd(
    a: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
) -> Result<(DVector<Complex64>, f64)> {
    let cond = hermitian_condition_number(a);
    if !(cond <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            condition_number: cond,
        });
    }
    let chol = a.clone().cholesky().ok_or(Error::IllConditioned {
        condition_number: cond,
    })?;
    Ok((chol.solve(b), cond))
}

/// Inverse of a real symmetric positive-definite matrix after symmetric
/// diagonal equilibration `D^{-1/2} A D^{-1/2}`.
///
/// The returned condition number is that of the equilibrated matrix, so it
/// is insensitive to the physical units of the individual coordinates.
pub struct EquilibratedInverse {
    pub inverse: DMatrix<f64>,
    pub condition_number: f64,
}

/// Equilibrated (unit-diagonal) version of `a` and the scaling used.
pub fn equilibrate(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = a.nrows();
    let scale = DVector::from_iterator(n, (0..n).map(|i| a[(i, i)].sqrt()));
    if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return None;
    }
    let mut normalized = a.clone();
    for i in 0..n {
        for j in 0..n {
            normalized[(i, j)] /= scale[i] * scale[j];
        }
    }
    // Restore exact symmetry lost to rounding.
    let normalized = (&normalized + normalized.transpose()) * 0.5;
    Some((normalized, scale))
}

/// Condition number of the equilibrated matrix (infinite if any diagonal
/// entry vanishes).
pub fn equilibrated_condition_number(a: &DMatrix<f64>) -> f64 {
    match equilibrate(a) {
        Some((n, _)) => {
            let mut ev: Vec<f64> = n.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|x, y| x.total_cmp(y));
            condition_from_eigenvalues(&ev)
        }
        None => f64::INFINITY,
    }
}

pub fn symmetric_pd_inverse(a: &DMatrix<f64>) -> std::result::Result<EquilibratedInverse, f64> {
    let (normalized, scale) = equilibrate(a).ok_or(f64::INFINITY)?;
    let mut ev: Vec<f64> = normalized.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    let cond = condition_from_eigenvalues(&ev);
    if !(cond < CONDITION_LIMIT) {
        return Err(cond);
    }
    let chol = normalized.cholesky().ok_or(cond)?;
    let mut inverse = chol.inverse();
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            inverse[(i, j)] /= scale[i] * scale[j];
        }
    }
    let inverse = (&inverse + inverse.transpose()) * 0.5;
    Ok(EquilibratedInverse {
        inverse,
        condition_number: cond,
    })
}

/// Hermitian part `(A + A^H) / 2`.
pub fn hermitian_part(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_hermitian_system() {
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(3.0, 0.0),
            ],
        );
        let b = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)]);
        let (x, cond) = solve_hermitian_pd(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() < 1e-14);
        assert!(cond > 1.0);
    }

    #[test]
    fn singular_matrix_is_refused() {
        let a = DMatrix::from_element(3, 3, Complex64::new(1.0, 0.0));
        let b = DVector::from_element(3, Complex64::new(1.0, 0.0));
        assert!(matches!(solve_hermitian_pd(&a, &b), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn equilibrated_inverse_ignores_units() {
        let a = DMatrix::from_row_slice(2, 2, &[1e20, 1e9, 1e9, 4.0]);
        let inv = symmetric_pd_inverse(&a).unwrap();
        let det = 4e20 - 1e18;
        let exact = DMatrix::from_row_slice(2, 2, &[4.0 / det, -1e9 / det, -1e9 / det, 1e20 / det]);
        for (x, y) in inv.inverse.iter().zip(exact.iter()) {
            assert!((x - y).abs() < 1e-12 * y.abs());
        }
        assert!(inv.condition_number < 10.0);
    }

    #[test]
    fn zero_diagonal_is_infinitely_conditioned() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(symmetric_pd_inverse(&a).is_err());
        assert_eq!(equilibrated_condition_number(&a), f64::INFINITY);
    }
}
