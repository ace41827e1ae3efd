//! Parameterizations: skew generator → orthogonal matrix, seed vector →
//! positive diagonal, and the initialization schemes for both.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{expm, expm_frechet_adjoint, skew_from_upper, Matrix};
use crate::{Error, Result, Scalar};

/// Orthogonal matrix `expm(A)` with `A` skew-symmetric.
///
/// Only the strict upper triangle of `A` is stored, so any update keeps the
/// generator exactly skew. The exponential is cached until the generator
/// changes.
#[derive(Debug)]
pub struct SkewParam<T> {
    dim: usize,
    upper: Vec<T>,
    cached: OnceLock<Matrix<T>>,
}

impl<T: Clone> Clone for SkewParam<T> {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            upper: self.upper.clone(),
            cached: self.cached.clone(),
        }
    }
}

impl<T: Scalar> SkewParam<T> {
    pub fn zeros(dim: usize) -> Self {
        Self::from_upper(dim, vec![T::zero(); dim * dim.saturating_sub(1) / 2])
    }

    pub fn from_upper(dim: usize, upper: Vec<T>) -> Self {
        assert_eq!(
            upper.len(),
            dim * dim.saturating_sub(1) / 2,
            "upper-triangle length"
        );
        Self {
            dim,
            upper,
            cached: OnceLock::new(),
        }
    }

    /// Reads the strict upper triangle of `a`; the lower triangle is ignored.
    pub fn from_generator(a: &Matrix<T>) -> Self {
        let n = a.rows();
        let mut upper = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                upper.push(a[(i, j)]);
            }
        }
        Self::from_upper(n, upper)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    /// Mutable free parameters; invalidates the cached exponential.
    pub fn upper_mut(&mut self) -> &mut [T] {
        self.cached.take();
        &mut self.upper
    }

    pub fn is_dirty(&self) -> bool {
        self.cached.get().is_none()
    }

    pub fn generator(&self) -> Matrix<T> {
        skew_from_upper(self.dim, &self.upper)
    }

    /// `expm(generator)`, recomputed only after the generator changed.
    pub fn orthogonal(&self) -> &Matrix<T> {
        self.cached
            .get_or_init(|| expm(&self.generator()).expect("skew generator is square"))
    }

    /// Gradient w.r.t. the free upper-triangle coordinates given `∂L/∂Q`.
    pub fn backprop(&self, grad_q: &Matrix<T>) -> Result<Vec<T>> {
        if grad_q.shape() != (self.dim, self.dim) {
            return Err(Error::contract(format!(
                "orthogonal backprop expects {0}x{0} gradient, got {1:?}",
                self.dim,
                grad_q.shape()
            )));
        }
        let full = expm_frechet_adjoint(&self.generator(), grad_q)?;
        let mut out = Vec::with_capacity(self.upper.len());
        for i in 0..self.dim {
            for j in i + 1..self.dim {
                out.push(full[(i, j)] - full[(j, i)]);
            }
        }
        Ok(out)
    }
}

pub fn materialize_orthogonal<T: Scalar>(p: &SkewParam<T>) -> Matrix<T> {
    p.orthogonal().clone()
}

pub fn backprop_orthogonal<T: Scalar>(p: &SkewParam<T>, grad_q: &Matrix<T>) -> Result<Vec<T>> {
    p.backprop(grad_q)
}

/// Positive diagonal `d_i = |s_i| + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalParam<T> {
    pub seed: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> DiagonalParam<T> {
    pub fn new(seed: Vec<T>, epsilon: T) -> Self {
        Self { seed, epsilon }
    }

    /// Seed chosen so that every `d_i` equals `value` (requires `value ≥ ε`).
    pub fn constant(len: usize, value: T, epsilon: T) -> Self {
        Self::new(vec![value - epsilon; len], epsilon)
    }

    pub fn diagonal(&self) -> Vec<T> {
        self.seed.iter().map(|s| s.abs() + self.epsilon).collect()
    }

    /// `∂L/∂s_i = sign(s_i)·∂L/∂d_i` with `sign(0) = 0`.
    pub fn backprop(&self, grad_d: &[T]) -> Result<Vec<T>> {
        if grad_d.len() != self.seed.len() {
            return Err(Error::contract("diagonal backprop length mismatch"));
        }
        Ok(self
            .seed
            .iter()
            .zip(grad_d)
            .map(|(&s, &g)| {
                if s > T::zero() {
                    g
                } else if s < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            })
            .collect())
    }
}

pub fn materialize_diagonal<T: Scalar>(p: &DiagonalParam<T>) -> Vec<T> {
    p.diagonal()
}

pub fn backprop_diagonal<T: Scalar>(p: &DiagonalParam<T>, grad_d: &[T]) -> Result<Vec<T>> {
    p.backprop(grad_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Henaff,
    Cayley,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub scheme: InitScheme,
    /// Lower end of the seed distribution `s ~ U(a, b)`.
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            scheme: InitScheme::Henaff,
            a: 0.0,
            b: 0.0,
            epsilon: 2e-5,
            rng_seed: 0,
        }
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a <= self.b) {
            return Err(Error::contract(format!(
                "init range needs a <= b, got a={} b={}",
                self.a, self.b
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::contract("init epsilon must be >= 0"));
        }
        Ok(())
    }
}

/// Block-diagonal skew generator with 2×2 blocks `[[0, θ], [−θ, 0]]`; the
/// last row and column stay zero when `d_h` is odd.
pub fn block_rotation_generator<T: Scalar>(d_h: usize, angles: &[f64]) -> SkewParam<T> {
    assert_eq!(angles.len(), d_h / 2);
    let mut g = Matrix::zeros(d_h, d_h);
    for (k, &th) in angles.iter().enumerate() {
        g[(2 * k, 2 * k + 1)] = T::of(th);
        g[(2 * k + 1, 2 * k)] = T::of(-th);
    }
    SkewParam::from_generator(&g)
}

pub fn init_skew<T: Scalar>(spec: &InitSpec, d_h: usize) -> SkewParam<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let blocks = d_h / 2;
    let angles: Vec<f64> = match spec.scheme {
        InitScheme::Identity => vec![0.0; blocks],
        InitScheme::Henaff => (0..blocks).map(|_| rng.random_range(-PI..=PI)).collect(),
        InitScheme::Cayley => (0..blocks)
            .map(|_| {
                let u: f64 = rng.random_range(0.0..=FRAC_PI_2);
                -((1.0 - u.cos()) / (1.0 + u.cos())).sqrt()
            })
            .collect(),
    };
    block_rotation_generator(d_h, &angles)
}

/// Gaussian matrix with orthonormal columns (tall) or rows (wide), via
/// modified Gram–Schmidt.
pub fn init_semi_orthogonal<T: Scalar>(rows: usize, cols: usize, rng_seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tall = rows >= cols;
    let (long, short) = if tall { (rows, cols) } else { (cols, rows) };
    // each basis vector is a contiguous row of `basis`
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    if tall {
        Matrix::from_fn(rows, cols, |i, j| T::of(basis[j][i]))
    } else {
        Matrix::from_fn(rows, cols, |i, j| T::of(basis[i][j]))
    }
}

pub fn init_seed_vector<T: Scalar>(spec: &InitSpec, d_h: usize) -> Result<DiagonalParam<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let seed = (0..d_h)
        .map(|_| {
            if spec.a == spec.b {
                T::of(spec.a)
            } else {
                T::of(rng.random_range(spec.a..=spec.b))
            }
        })
        .collect();
    Ok(DiagonalParam::new(seed, T::of(spec.epsilon)))
}
