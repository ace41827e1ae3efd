//! Singular values by cyclic one-sided (Hestenes) Jacobi rotations.

use serde::{Deserialize, Serialize};

use super::{dot, Matrix};
use crate::{Error, Result, Scalar};

const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SWEEP_CAP: usize = 64;
const MAX_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Jacobi sweeps used.
    pub iterations: usize,
}

/// Extreme singular values of a square matrix.
pub fn sigma_extremes<T: Scalar>(a: &Matrix<T>) -> Result<SpectralReport> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "sigma_extremes needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() > MAX_DIM {
        return Err(Error::contract(format!(
            "sigma_extremes supports dims up to {MAX_DIM}, got {}",
            a.rows()
        )));
    }
    let (sv, iterations) = jacobi(a)?;
    Ok(report(&sv, iterations))
}

/// Largest singular value; any shape.
pub fn spectral_norm<T: Scalar>(a: &Matrix<T>) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    if a.is_square() {
        return sigma_extremes(a).map(|r| r.sigma_max);
    }
    let sv = singular_values(a)?;
    Ok(sv.first().copied().unwrap_or(0.0))
}

/// All `min(rows, cols)` singular values, descending.
pub fn singular_values<T: Scalar>(a: &Matrix<T>) -> Result<Vec<f64>> {
    let (mut sv, _) = if a.rows() >= a.cols() {
        jacobi(a)?
    } else {
        jacobi(&a.transpose())?
    };
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

fn report(sv: &[f64], iterations: usize) -> SpectralReport {
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    SpectralReport {
        sigma_min: if sv.is_empty() { 0.0 } else { sigma_min },
        sigma_max,
        iterations,
    }
}

// Orthogonalizes the columns of `a` (rows >= cols) in place; the column norms
// are the singular values. Works on the transpose so each column is a
// contiguous row.
fn jacobi<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<f64>, usize)> {
    let n = a.cols();
    let mut cols = a.transpose();
    let tol = T::of(OFF_DIAGONAL_TOL).max(T::epsilon() * T::of(4.0));
    let mut norms: Vec<T> = (0..n).map(|j| dot(cols.row(j), cols.row(j))).collect();
    // columns this small relative to the whole matrix are numerically zero
    let total: T = norms.iter().copied().sum();
    let negligible = total * T::epsilon() * T::epsilon();

    for sweep in 1..=SWEEP_CAP {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                let gamma = dot(cols.row(p), cols.row(q));
                if gamma == T::zero()
                    || alpha.min(beta) <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let cs = T::one() / (T::one() + t * t).sqrt();
                let sn = cs * t;
                let (lo, hi) = cols.as_mut_slice().split_at_mut(q * a.rows());
                let rp = &mut lo[p * a.rows()..(p + 1) * a.rows()];
                let rq = &mut hi[..a.rows()];
                for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                    let xp = *x;
                    let yq = *y;
                    *x = cs * xp - sn * yq;
                    *y = sn * xp + cs * yq;
                }
                norms[p] = dot(cols.row(p), cols.row(p));
                norms[q] = dot(cols.row(q), cols.row(q));
            }
        }
        if !rotated {
            let sv = norms.iter().map(|x| x.as_f64().sqrt()).collect();
            return Ok((sv, sweep));
        }
    }
    let sv: Vec<f64> = norms.iter().map(|x| x.as_f64().sqrt()).collect();
    let r = report(&sv, SWEEP_CAP);
    Err(Error::NonConvergence {
        sweeps: SWEEP_CAP,
        sigma_min: r.sigma_min,
        sigma_max: r.sigma_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, skew_from_upper};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_diagonal() {
        let r = sigma_extremes(&Matrix::<f64>::identity(5)).unwrap();
        assert_eq!((r.sigma_min, r.sigma_max), (1.0, 1.0));
        let d = Matrix::from_diag(&[3.0, 0.5, 1.0]);
        let r = sigma_extremes(&d).unwrap();
        assert!((r.sigma_min - 0.5).abs() < 1e-15);
        assert!((r.sigma_max - 3.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_examples() {
        let d = Matrix::from_diag(&[2.0, -7.0]);
        assert!((spectral_norm(&d).unwrap() - 7.0).abs() < 1e-14);

        let u = Matrix::column(&[1.0, -2.0, 0.5, 3.0]);
        let v = Matrix::column(&[0.3, 4.0, -1.0]);
        let uv = u.mul_tr(&v);
        let expected = u.frobenius_norm() * v.frobenius_norm();
        assert!((spectral_norm(&uv).unwrap() - expected).abs() < 1e-12 * expected);
        assert!((spectral_norm(&uv.transpose()).unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn orthogonal_has_unit_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [3, 8, 16] {
            let upper: Vec<f64> = (0..n * (n - 1) / 2)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let q = expm(&skew_from_upper(n, &upper)).unwrap();
            let r = sigma_extremes(&q).unwrap();
            assert!((r.sigma_min - 1.0).abs() < 1e-9);
            assert!((r.sigma_max - 1.0).abs() < 1e-9);
            assert!((spectral_norm(&q).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_symmetric_eigensolver_oracle() {
        for seed in 0..10 {
            let a = random(6, 6, seed);
            let ata = a.tr_mul(&a);
            let na = nalgebra::DMatrix::from_row_slice(6, 6, ata.as_slice());
            let eig = nalgebra::SymmetricEigen::new(na).eigenvalues;
            let mut oracle: Vec<f64> = eig.iter().map(|x| x.max(0.0).sqrt()).collect();
            oracle.sort_by(|x, y| y.total_cmp(x));
            let r = sigma_extremes(&a).unwrap();
            assert!((r.sigma_max - oracle[0]).abs() < 1e-9);
            assert!((r.sigma_min - oracle[5]).abs() < 1e-9);
            let sv = singular_values(&a).unwrap();
            for (x, y) in sv.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic() {
        let a = random(7, 7, 3);
        assert_eq!(sigma_extremes(&a).unwrap(), sigma_extremes(&a).unwrap());
    }

    #[test]
    fn rejects_rectangular_for_extremes() {
        assert!(sigma_extremes(&Matrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn singular_matrix_sigma_min_zero() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        let r = sigma_extremes(&a).unwrap();
        assert!(r.sigma_min < 1e-12);
        assert!((r.sigma_max - 5.0).abs() < 1e-12);
    }
}
