//! Matrix exponential by scaling and squaring with diagonal Padé approximants
//! (degrees 3, 5, 7, 9, 13), and the adjoint of its Fréchet derivative.

use super::{solve, Matrix};
use crate::{Error, Result, Scalar};

// 1-norm thresholds below which the degree-m approximant is accurate to
// double precision without scaling.
const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.53939833006323e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential of a square matrix.
pub fn expm<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() {
        return Err(Error::contract(format!(
            "expm needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let norm = a.norm1().as_f64();
    if !norm.is_finite() {
        return Err(Error::contract("expm input is not finite"));
    }

    let ident = Matrix::identity(n);
    let a2 = a.mul(a);
    for (theta, coeffs) in [
        (THETA_3, &B3[..]),
        (THETA_5, &B5[..]),
        (THETA_7, &B7[..]),
        (THETA_9, &B9[..]),
    ] {
        if norm <= theta {
            let (u, v) = pade_low(a, &a2, &ident, coeffs);
            return pade_quotient(&u, &v);
        }
    }

    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let (a, a2) = if s > 0 {
        let f = T::of(0.5f64.powi(s));
        let f2 = f * f;
        (a.scale(f), a2.scale(f2))
    } else {
        (a.clone(), a2)
    };
    let (u, v) = pade13(&a, &a2, &ident);
    let mut r = pade_quotient(&u, &v)?;
    for _ in 0..s {
        r = r.mul(&r);
    }
    Ok(r)
}

fn c<T: Scalar>(x: f64) -> T {
    T::of(x)
}

// Odd part U and even part V of the numerator for degrees 3..9.
fn pade_low<T: Scalar>(
    a: &Matrix<T>,
    a2: &Matrix<T>,
    ident: &Matrix<T>,
    b: &[f64],
) -> (Matrix<T>, Matrix<T>) {
    let m = b.len() - 1;
    let mut odd = ident.scale(c(b[1]));
    let mut even = ident.scale(c(b[0]));
    let mut pow = ident.clone();
    for k in 1..=m / 2 {
        pow = pow.mul(a2);
        odd.axpy(c(b[2 * k + 1]), &pow);
        even.axpy(c(b[2 * k]), &pow);
    }
    (a.mul(&odd), even)
}

fn pade13<T: Scalar>(a: &Matrix<T>, a2: &Matrix<T>, ident: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let b = &B13;
    let a4 = a2.mul(a2);
    let a6 = a4.mul(a2);

    let mut inner_u = a6.scale(c(b[13]));
    inner_u.axpy(c(b[11]), &a4);
    inner_u.axpy(c(b[9]), a2);
    let mut tail_u = a6.scale(c(b[7]));
    tail_u.axpy(c(b[5]), &a4);
    tail_u.axpy(c(b[3]), a2);
    tail_u.axpy(c(b[1]), ident);
    let mut u_poly = a6.mul(&inner_u);
    u_poly.add_assign(&tail_u);
    let u = a.mul(&u_poly);

    let mut inner_v = a6.scale(c(b[12]));
    inner_v.axpy(c(b[10]), &a4);
    inner_v.axpy(c(b[8]), a2);
    let mut v = a6.mul(&inner_v);
    v.axpy(c(b[6]), &a6);
    v.axpy(c(b[4]), &a4);
    v.axpy(c(b[2]), a2);
    v.axpy(c(b[0]), ident);
    (u, v)
}

// r = (V − U)⁻¹ (V + U)
fn pade_quotient<T: Scalar>(u: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    let p = v + u;
    let q = v - u;
    solve(&q, &p)
}

/// Adjoint of the Fréchet derivative of `expm` at `a`, applied to `g`.
///
/// If `g = ∂L/∂expm(a)` then the result is `∂L/∂a`. Computed as the
/// top-right block of `expm([[aᵀ, g], [0, aᵀ]])`.
pub fn expm_frechet_adjoint<T: Scalar>(a: &Matrix<T>, g: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() || a.shape() != g.shape() {
        return Err(Error::contract(format!(
            "expm_frechet_adjoint needs square matrices of equal size, got {:?} and {:?}",
            a.shape(),
            g.shape()
        )));
    }
    let n = a.rows();
    let mut block = Matrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let at = a[(j, i)];
            block[(i, j)] = at;
            block[(n + i, n + j)] = at;
            block[(i, n + j)] = g[(i, j)];
        }
    }
    let e = expm(&block)?;
    Ok(Matrix::from_fn(n, n, |i, j| e[(i, n + j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::skew_from_upper;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skew(n: usize, scale: f64, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let upper: Vec<f64> = (0..n * (n - 1) / 2)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let s = skew_from_upper(n, &upper);
        let f = s.frobenius_norm();
        s.scale(scale / f)
    }

    fn random(n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    // Truncated Taylor series, 50 terms; only sensible for small norms.
    fn taylor(a: &Matrix<f64>, terms: usize) -> Matrix<f64> {
        let n = a.rows();
        let mut sum = Matrix::identity(n);
        let mut term = Matrix::identity(n);
        for k in 1..terms {
            term = term.mul(a).scale(1.0 / k as f64);
            sum.add_assign(&term);
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(
            expm(&Matrix::<f64>::zeros(4, 4)).unwrap(),
            Matrix::identity(4)
        );
    }

    #[test]
    fn rotation_generator_against_taylor() {
        let th = 0.7f64;
        let a = Matrix::from_rows(&[[0.0, th], [-th, 0.0]]);
        let e = expm(&a).unwrap();
        let closed = Matrix::from_rows(&[[th.cos(), th.sin()], [-th.sin(), th.cos()]]);
        let series = taylor(&a, 50);
        assert!((&e - &closed).max_abs() < 1e-12);
        assert!((&e - &series).max_abs() < 1e-12);
    }

    #[test]
    fn matches_taylor_across_pade_degrees() {
        for (k, scale) in [1e-3, 0.1, 0.5, 1.5, 4.0, 9.0].into_iter().enumerate() {
            let a = random(5, k as u64).scale(scale / 5.0);
            let e = expm(&a).unwrap();
            let t = taylor(&a, 80);
            let rel = (&e - &t).max_abs() / t.max_abs();
            assert!(rel < 1e-12, "scale {scale}: rel {rel}");
        }
    }

    #[test]
    fn inverse_identity_for_skew() {
        for seed in 0..10 {
            let a = random_skew(8, 2.0, seed);
            let p = expm(&a).unwrap().mul(&expm(&-&a).unwrap());
            assert!((&p - &Matrix::identity(8)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn skew_gives_orthogonal_up_to_norm_ten() {
        for seed in 0..20 {
            let n = 2 + (seed as usize % 15);
            let a = random_skew(n, 10.0 * (seed as f64 + 1.0) / 20.0, seed);
            let q = expm(&a).unwrap();
            assert!(q.orthogonality_defect() <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            expm(&Matrix::<f64>::zeros(2, 3)),
            Err(Error::Contract(_))
        ));
        assert!(expm_frechet_adjoint(&Matrix::<f64>::zeros(2, 2), &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn adjoint_at_zero_is_identity_map() {
        let g = random(4, 3);
        let r = expm_frechet_adjoint(&Matrix::zeros(4, 4), &g).unwrap();
        assert!((&r - &g).max_abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let n = 6;
        let a = random_skew(n, 1.5, 11);
        let g = random(n, 12);
        let adj = expm_frechet_adjoint(&a, &g).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut ap = a.clone();
                ap[(i, j)] += h;
                let mut am = a.clone();
                am[(i, j)] -= h;
                let fp = g.tr_mul(&expm(&ap).unwrap()).trace();
                let fm = g.tr_mul(&expm(&am).unwrap()).trace();
                let fd = (fp - fm) / (2.0 * h);
                let rel = (fd - adj[(i, j)]).abs() / adj[(i, j)].abs().max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-7, "worst rel err {worst}");
    }

    #[test]
    fn adjoint_commuting_closed_form() {
        // g = p(a) commutes with a, so the adjoint collapses to expm(aᵀ)·g.
        let a = random(5, 21).scale(0.4);
        let a2 = a.mul(&a);
        let mut g = Matrix::identity(5).scale(0.3);
        g.axpy(-1.2, &a);
        g.axpy(0.5, &a2);
        let g = g.transpose();
        let adj = expm_frechet_adjoint(&a, &g).unwrap();
        let closed = expm(&a.transpose()).unwrap().mul(&g);
        assert!((&adj - &closed).max_abs() < 1e-9);
    }
}
