//! Linear assignment (Hungarian algorithm) and projections onto permutation groups.

use serde::{Deserialize, Serialize};

use super::{spectral_norm, Matrix};
use crate::{Error, Result, Scalar};

/// Result of projecting a matrix onto a permutation group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProjection<T> {
    pub nearest: Matrix<T>,
    /// `perm[i]` is the column holding row `i`'s nonzero.
    pub perm: Vec<usize>,
    pub frobenius_residual: f64,
    /// `‖a − nearest‖₂`, an upper bound on the spectral distance to the group.
    pub spectral_residual: f64,
}

/// Assignment maximizing `Σ benefit[i][perm[i]]` over permutations of a square matrix.
///
/// O(n³) shortest-augmenting-path with row/column potentials.
pub fn hungarian_max<T: Scalar>(benefit: &Matrix<T>) -> Result<Vec<usize>> {
    if !benefit.is_square() {
        return Err(Error::contract("assignment needs a square benefit matrix"));
    }
    let n = benefit.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cost = |i: usize, j: usize| -benefit[(i, j)].as_f64();
    // 1-based indices; column 0 is a virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return Err(Error::contract("assignment: non-finite benefit"));
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    Ok(perm)
}

/// Nearest signed permutation matrix to `a` in Frobenius norm.
///
/// Minimizing `‖a − E‖_F` over `E` with one `±1` per row and column is an
/// assignment problem with benefit `|a_ij|`; the sign of each entry follows
/// `a_ij` (positive when `a_ij = 0`). Also reports the spectral norm of the
/// residual.
pub fn nearest_generalized_permutation<T: Scalar>(a: &Matrix<T>) -> Result<GroupProjection<T>> {
    if !a.is_square() {
        return Err(Error::contract("group projection needs a square matrix"));
    }
    let perm = hungarian_max(&a.map(|x| x.abs()))?;
    let mut e = Matrix::zeros(a.rows(), a.cols());
    for (i, &j) in perm.iter().enumerate() {
        e[(i, j)] = if a[(i, j)] < T::zero() {
            -T::one()
        } else {
            T::one()
        };
    }
    finish(a, e, perm)
}

/// Nearest matrix in the full generalized permutation group (any nonzero
/// entries) in Frobenius norm: keeps the permutation pattern with the largest
/// `Σ a_ij²` and copies those entries.
///
/// When a kept entry is exactly zero the infimum is not attained inside the
/// group; the returned pattern then carries a zero there.
pub fn nearest_in_generalized_group<T: Scalar>(a: &Matrix<T>) -> Result<GroupProjection<T>> {
    if !a.is_square() {
        return Err(Error::contract("group projection needs a square matrix"));
    }
    let perm = hungarian_max(&a.map(|x| x * x))?;
    let mut e = Matrix::zeros(a.rows(), a.cols());
    for (i, &j) in perm.iter().enumerate() {
        e[(i, j)] = a[(i, j)];
    }
    finish(a, e, perm)
}

fn finish<T: Scalar>(a: &Matrix<T>, e: Matrix<T>, perm: Vec<usize>) -> Result<GroupProjection<T>> {
    let r = a - &e;
    Ok(GroupProjection {
        frobenius_residual: r.frobenius_norm().as_f64(),
        spectral_residual: spectral_norm(&r)?,
        nearest: e,
        perm,
    })
}
