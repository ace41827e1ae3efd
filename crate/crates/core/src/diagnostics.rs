//! BPTT Jacobians of the asRNN cell, their singular values, and the
//! quantities in the sufficient condition for non-vanishing gradients.
//!
//! For one sample the step Jacobian is
//! `J(t) = ∂h_t/∂h_{t−1} = D_f⁻¹ U_fᵀ diag(1 − a_t²) U_f D_f W_hh`
//! and a window product is `J(t2, t1) = J(t2) ⋯ J(t1 + 1)`.

use serde::Serialize;

use crate::cells::{AsRnnCache, AsRnnWeights, VanillaCache, VanillaRnn};
use crate::linalg::{
    nearest_generalized_permutation, nearest_in_generalized_group, sigma_extremes, spectral_norm,
    Matrix, SpectralReport,
};
use crate::{Error, Result, Scalar};

fn check_sample<T: Scalar>(h0: &Matrix<T>, sample: usize) -> Result<()> {
    if sample >= h0.cols() {
        return Err(Error::contract(format!(
            "sample {sample} outside batch of {}",
            h0.cols()
        )));
    }
    Ok(())
}

/// `J(t)` for batch column `sample`, `1 ≤ t ≤ T`.
pub fn step_jacobian<T: Scalar>(
    w: &AsRnnWeights<T>,
    cache: &AsRnnCache<T>,
    t: usize,
    sample: usize,
) -> Result<Matrix<T>> {
    if t == 0 || t > cache.steps() {
        return Err(Error::contract(format!(
            "step {t} outside 1..={}",
            cache.steps()
        )));
    }
    check_sample(&cache.h0, sample)?;
    let a = &cache.a[t - 1];
    let sat: Vec<T> = (0..a.rows())
        .map(|i| T::one() - a[(i, sample)] * a[(i, sample)])
        .collect();
    let inv_d: Vec<T> = w.d_f.iter().map(|&d| T::one() / d).collect();
    // D_f⁻¹ U_fᵀ diag(sat) U_f D_f W_hh, evaluated right to left
    let inner = w.u_f.mul(&w.w_hh.scale_rows(&w.d_f)).scale_rows(&sat);
    Ok(w.u_f.tr_mul(&inner).scale_rows(&inv_d))
}

/// `diag(1 − h_t²) W_hh` for the plain tanh cell.
pub fn vanilla_step_jacobian<T: Scalar>(
    m: &VanillaRnn<T>,
    cache: &VanillaCache<T>,
    t: usize,
    sample: usize,
) -> Result<Matrix<T>> {
    if t == 0 || t > cache.h.len() {
        return Err(Error::contract(format!(
            "step {t} outside 1..={}",
            cache.h.len()
        )));
    }
    check_sample(&cache.h0, sample)?;
    let h = &cache.h[t - 1];
    let sat: Vec<T> = (0..h.rows())
        .map(|i| T::one() - h[(i, sample)] * h[(i, sample)])
        .collect();
    Ok(m.w_hh.scale_rows(&sat))
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianWindow<T> {
    pub t1: usize,
    pub t2: usize,
    /// `J(t1 + 1), …, J(t2)` in time order.
    #[serde(skip)]
    pub steps: Vec<Matrix<T>>,
    #[serde(skip)]
    pub product: Matrix<T>,
    pub spectral: SpectralReport,
    /// `σ_min(J(t))` for each step in the window.
    pub step_sigma_min: Vec<f64>,
}

impl<T: Scalar> JacobianWindow<T> {
    /// `Σ log σ_min(J(t))`, a lower bound on `log σ_min` of the product.
    pub fn log_sigma_min_bound(&self) -> f64 {
        self.step_sigma_min.iter().map(|s| s.ln()).sum()
    }
}

/// Left-multiplied product of step Jacobians over `(t1, t2]`.
pub fn window_jacobian<T: Scalar>(
    w: &AsRnnWeights<T>,
    cache: &AsRnnCache<T>,
    t1: usize,
    t2: usize,
    sample: usize,
) -> Result<JacobianWindow<T>> {
    if t1 > t2 || t2 > cache.steps() {
        return Err(Error::contract(format!(
            "window ({t1}, {t2}] outside 0..={}",
            cache.steps()
        )));
    }
    check_sample(&cache.h0, sample)?;
    let n = w.hidden_dim();
    let mut product = Matrix::identity(n);
    let mut steps = Vec::with_capacity(t2 - t1);
    let mut step_sigma_min = Vec::with_capacity(t2 - t1);
    for t in t1 + 1..=t2 {
        let j = step_jacobian(w, cache, t, sample)?;
        product = j.mul(&product);
        step_sigma_min.push(sigma_extremes(&j)?.sigma_min);
        steps.push(j);
    }
    let spectral = if t1 == t2 {
        SpectralReport {
            sigma_min: 1.0,
            sigma_max: 1.0,
            iterations: 0,
        }
    } else {
        sigma_extremes(&product)?
    };
    Ok(JacobianWindow {
        t1,
        t2,
        steps,
        product,
        spectral,
        step_sigma_min,
    })
}

/// Every quantity in the sufficient condition, including intermediates.
/// Degenerate values (zero or infinite bounds) are reported as computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub horizon: usize,
    pub c_x: f64,
    /// `‖D_f‖₂ = max d_f,i`
    pub df_norm: f64,
    pub df_bound: f64,
    pub whh_group_dist_upper: f64,
    /// `σ_min(D_f) / ‖D_f‖₂`
    pub whh_dist_bound: f64,
    pub uf_group_dist_upper: f64,
    pub preconditions_hold: bool,
    pub whh_inv_norm: f64,
    pub whh_norm: f64,
    pub whh_max_norm: f64,
    pub wxh_norm: f64,
    pub b_inf_norm: f64,
    pub bound_numerator: f64,
    pub bound_denominator: f64,
    /// `1 − 1/σ_min(W_hh)`, the bound on `‖W_f h_t‖_∞` under the condition.
    pub saturation_bound: f64,
    /// `σ_min` of the window `(0, min(horizon, T)]`, when a forward cache was supplied.
    pub sigma_min_window: Option<f64>,
}

/// Evaluates the sufficient condition at horizon `t` for inputs bounded by
/// `c_x` in 2-norm. With `cache = Some((cache, sample))` the window Jacobian
/// over the horizon is attached as well.
pub fn theorem_precondition_check<T: Scalar>(
    w: &AsRnnWeights<T>,
    c_x: f64,
    horizon: usize,
    cache: Option<(&AsRnnCache<T>, usize)>,
) -> Result<TheoremReport> {
    if !(c_x > 0.0) || horizon == 0 {
        return Err(Error::contract(
            "theorem check needs C_x > 0 and horizon >= 1",
        ));
    }
    let whh = sigma_extremes(&w.w_hh)?;
    let whh_inv_norm = 1.0 / whh.sigma_min;
    let whh_max_norm = w.w_hh.max_abs().as_f64();
    let wxh_norm = spectral_norm(&w.w_xh)?;
    let b_inf_norm = w.b.iter().fold(0.0f64, |m, &v| m.max(v.as_f64().abs()));
    let growth = whh_max_norm + 1.0;
    let geometric: f64 = (0..horizon).map(|i| growth.powi(i as i32)).sum();
    let bound_denominator = (wxh_norm * c_x + b_inf_norm) * geometric;
    let bound_numerator = if whh_inv_norm >= 1.0 {
        0.0
    } else {
        (1.0 - whh_inv_norm).sqrt().atanh()
    };
    let df_bound = if whh_inv_norm >= 1.0 {
        0.0
    } else if bound_denominator == 0.0 {
        f64::INFINITY
    } else {
        bound_numerator / bound_denominator
    };
    let d: Vec<f64> = w.d_f.iter().map(|v| v.as_f64().abs()).collect();
    let df_norm = d.iter().copied().fold(0.0, f64::max);
    let df_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let whh_dist_bound = if df_norm > 0.0 { df_min / df_norm } else { 0.0 };
    let whh_group_dist_upper = nearest_in_generalized_group(&w.w_hh)?.spectral_residual;
    let uf_group_dist_upper = nearest_generalized_permutation(&w.u_f)?.spectral_residual;
    let sigma_min_window = match cache {
        Some((c, sample)) => Some(
            window_jacobian(w, c, 0, horizon.min(c.steps()), sample)?
                .spectral
                .sigma_min,
        ),
        None => None,
    };
    Ok(TheoremReport {
        horizon,
        c_x,
        df_norm,
        df_bound,
        whh_group_dist_upper,
        whh_dist_bound,
        uf_group_dist_upper,
        preconditions_hold: df_norm <= df_bound && whh_group_dist_upper <= whh_dist_bound,
        whh_inv_norm,
        whh_norm: whh.sigma_max,
        whh_max_norm,
        wxh_norm,
        b_inf_norm,
        bound_numerator,
        bound_denominator,
        saturation_bound: 1.0 - 1.0 / whh.sigma_min,
        sigma_min_window,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationStats {
    /// `max_i |a_t,i|` over the whole batch, for `t = 1..T`.
    pub per_step_max: Vec<f64>,
    pub overall_max: f64,
    /// `1 − 1/σ_min(W_hh)`
    pub bound: f64,
    /// Largest `per_step_max − bound` (negative when the bound holds with room).
    pub max_excess: f64,
}

pub fn saturation_stats<T: Scalar>(
    w: &AsRnnWeights<T>,
    cache: &AsRnnCache<T>,
) -> Result<SaturationStats> {
    let per_step_max: Vec<f64> = cache.a.iter().map(|a| a.max_abs().as_f64()).collect();
    let overall_max = per_step_max.iter().copied().fold(0.0, f64::max);
    let bound = 1.0 - 1.0 / sigma_extremes(&w.w_hh)?.sigma_min;
    let max_excess = per_step_max
        .iter()
        .map(|m| m - bound)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SaturationStats {
        per_step_max,
        overall_max,
        bound,
        max_excess,
    })
}

/// Per-iteration `‖∂L/∂h_t‖` at selected steps, filled by a backward observer.
/// The norm is taken over the whole `d_h × B` gradient block.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradientNormTrace {
    pub steps: Vec<usize>,
    pub iterations: Vec<u64>,
    pub norms: Vec<Vec<f64>>,
}

impl GradientNormTrace {
    pub fn new(steps: Vec<usize>) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    /// Starts a record for `iteration`; pass the returned closure to
    /// `backward_observed`. Steps never visited stay at zero.
    pub fn observer<T: Scalar>(&mut self, iteration: u64) -> impl FnMut(usize, &Matrix<T>) + '_ {
        self.iterations.push(iteration);
        self.norms.push(vec![0.0; self.steps.len()]);
        let steps = &self.steps;
        let row = self.norms.last_mut().expect("row just pushed");
        move |t, g: &Matrix<T>| {
            if let Some(k) = steps.iter().position(|&s| s == t) {
                row[k] = g.frobenius_norm().as_f64();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{Head, HeadMode, Recurrent};
    use crate::linalg::nearest_generalized_permutation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn signed_perm(perm: &[usize], signs: &[f64]) -> Matrix<f64> {
        let n = perm.len();
        Matrix::from_fn(n, n, |i, j| if perm[i] == j { signs[i] } else { 0.0 })
    }

    fn random_weights(d_x: usize, d_h: usize, seed: u64) -> AsRnnWeights<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: f64| rng.random_range(-s..s);
        let gen_hh = Matrix::from_fn(d_h, d_h, |_, _| r(0.8));
        let gen_f = Matrix::from_fn(d_h, d_h, |_, _| r(0.8));
        let skew = |g: &Matrix<f64>| g - &g.transpose();
        AsRnnWeights {
            w_xh: Matrix::from_fn(d_h, d_x, |_, _| r(0.7)),
            w_hh: crate::linalg::expm(&skew(&gen_hh)).unwrap(),
            u_f: crate::linalg::expm(&skew(&gen_f)).unwrap(),
            d_f: (0..d_h).map(|_| 0.3 + r(1.0).abs() * 2.0).collect(),
            b: (0..d_h).map(|_| r(0.3)).collect(),
            head: Head::zeros(2, d_h),
        }
    }

    fn random_inputs(d_x: usize, steps: usize, batch: usize, seed: u64) -> Vec<Matrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..steps)
            .map(|_| Matrix::from_fn(d_x, batch, |_, _| rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn unsaturated_identity_case_is_w_hh() {
        let n = 5;
        let mut w = random_weights(2, n, 1);
        w.u_f = Matrix::identity(n);
        w.d_f = vec![1.0; n];
        w.b = vec![0.0; n];
        let (cache, _) = w
            .forward(
                &vec![Matrix::zeros(2, 1); 3],
                &Matrix::zeros(n, 1),
                HeadMode::PerStep,
            )
            .unwrap();
        for t in 1..=3 {
            let j = step_jacobian(&w, &cache, t, 0).unwrap();
            assert!((&j - &w.w_hh).max_abs() < 1e-15);
            assert!((sigma_extremes(&j).unwrap().sigma_min - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_jacobian_matches_one_step_finite_differences() {
        for seed in 0..20u64 {
            let (d_x, n) = (3, 2 + (seed as usize % 7));
            let w = random_weights(d_x, n, 100 + seed);
            let inputs = random_inputs(d_x, 4, 2, 200 + seed);
            let h0 = Matrix::from_fn(n, 2, |i, j| 0.1 * (i as f64) - 0.2 * j as f64);
            let (cache, _) = w.forward(&inputs, &h0, HeadMode::PerStep).unwrap();
            let t = 3;
            let sample = (seed % 2) as usize;
            let j = step_jacobian(&w, &cache, t, sample).unwrap();
            let prev = cache.hidden(t - 1).col_to_vec(sample);
            let x = Matrix::column(&inputs[t - 1].col_to_vec(sample));
            let step = |h: &[f64]| {
                let (c, _) = w
                    .forward(std::slice::from_ref(&x), &Matrix::column(h), HeadMode::PerStep)
                    .unwrap();
                c.h[0].col_to_vec(0)
            };
            let eps = 1e-6;
            for k in 0..n {
                let mut hp = prev.clone();
                hp[k] += eps;
                let mut hm = prev.clone();
                hm[k] -= eps;
                let (fp, fm) = (step(&hp), step(&hm));
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * eps);
                    let scale = fd.abs().max(j[(i, k)].abs()).max(1e-3);
                    assert!(
                        (fd - j[(i, k)]).abs() / scale <= 1e-6,
                        "seed {seed}: ({i},{k})"
                    );
                }
            }
        }
    }

    #[test]
    fn vanilla_step_jacobian_matches_finite_differences() {
        let m: VanillaRnn<f64> = VanillaRnn::init(3, 2, 5, 2);
        let inputs = random_inputs(2, 3, 1, 4);
        let (cache, _) = m
            .forward(&inputs, &m.zero_state(1), HeadMode::PerStep)
            .unwrap();
        let j = vanilla_step_jacobian(&m, &cache, 2, 0).unwrap();
        let prev = cache.h[0].col_to_vec(0);
        let step = |h: &[f64]| {
            let (c, _) = m
                .forward(&inputs[1..2], &[Matrix::column(h)], HeadMode::PerStep)
                .unwrap();
            c.h[0].col_to_vec(0)
        };
        for k in 0..5 {
            let mut hp = prev.clone();
            hp[k] += 1e-6;
            let mut hm = prev.clone();
            hm[k] -= 1e-6;
            let (fp, fm) = (step(&hp), step(&hm));
            for i in 0..5 {
                assert!(((fp[i] - fm[i]) / 2e-6 - j[(i, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn saturation_limit_kills_jacobian() {
        let n = 3;
        let mut w = random_weights(2, n, 7);
        w.d_f = vec![1.0; n];
        w.u_f = Matrix::identity(n);
        w.b = vec![1e3; n];
        let (cache, _) = w
            .forward(
                &[Matrix::zeros(2, 1)],
                &Matrix::zeros(n, 1),
                HeadMode::PerStep,
            )
            .unwrap();
        assert!(step_jacobian(&w, &cache, 1, 0).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn window_products() {
        let w = random_weights(3, 6, 11);
        let (cache, _) = w
            .forward(
                &random_inputs(3, 8, 1, 12),
                &Matrix::zeros(6, 1),
                HeadMode::PerStep,
            )
            .unwrap();
        let empty = window_jacobian(&w, &cache, 4, 4, 0).unwrap();
        assert_eq!(empty.product, Matrix::identity(6));
        assert_eq!(
            (empty.spectral.sigma_min, empty.spectral.sigma_max),
            (1.0, 1.0)
        );

        let two = window_jacobian(&w, &cache, 2, 4, 0).unwrap();
        let direct = step_jacobian(&w, &cache, 4, 0)
            .unwrap()
            .mul(&step_jacobian(&w, &cache, 3, 0).unwrap());
        assert!((&two.product - &direct).max_abs() < 1e-15);

        let a = window_jacobian(&w, &cache, 0, 3, 0).unwrap();
        let b = window_jacobian(&w, &cache, 3, 8, 0).unwrap();
        let full = window_jacobian(&w, &cache, 0, 8, 0).unwrap();
        assert!((&full.product - &b.product.mul(&a.product)).max_abs() < 1e-10);
        assert!(full.spectral.sigma_min.ln() >= full.log_sigma_min_bound() - 1e-9);

        assert!(window_jacobian(&w, &cache, 5, 4, 0).is_err());
        assert!(window_jacobian(&w, &cache, 0, 9, 0).is_err());
        assert!(step_jacobian(&w, &cache, 0, 0).is_err());
        assert!(step_jacobian(&w, &cache, 1, 1).is_err());
    }

    fn theorem_weights(scale: f64, d: f64) -> AsRnnWeights<f64> {
        let n = 4;
        AsRnnWeights {
            w_xh: crate::param::init_semi_orthogonal(n, 2, 3),
            w_hh: signed_perm(&[2, 0, 3, 1], &[1.0, -1.0, -1.0, 1.0]).scale(scale),
            u_f: signed_perm(&[1, 3, 0, 2], &[-1.0, 1.0, 1.0, -1.0]),
            d_f: vec![d; n],
            b: vec![0.0; n],
            head: Head::zeros(2, n),
        }
    }

    #[test]
    fn orthogonal_recurrence_gives_zero_bound() {
        let r = theorem_precondition_check(&theorem_weights(1.0, 0.1), 1.0, 5, None).unwrap();
        assert!(r.whh_inv_norm >= 1.0 - 1e-12);
        assert_eq!(r.df_bound, 0.0);
        assert!(!r.preconditions_hold);
        assert_eq!(r.whh_group_dist_upper, 0.0);
        assert_eq!(r.whh_dist_bound, 1.0);
    }

    #[test]
    fn scaled_permutation_bound_matches_scalar_formula() {
        let t: usize = 7;
        let w = theorem_weights(2.0, 1e-3);
        let r = theorem_precondition_check(&w, 1.0, t, None).unwrap();
        assert!((r.whh_inv_norm - 0.5).abs() < 1e-14);
        assert!((r.bound_numerator - 0.5f64.sqrt().atanh()).abs() < 1e-14);
        // ‖W_xh‖₂ = 1 (semi-orthogonal), b = 0, ‖W_hh‖_max = 2
        let expected = 0.5f64.sqrt().atanh() / (0..t as i32).map(|i| 3f64.powi(i)).sum::<f64>();
        assert!((r.df_bound - expected).abs() <= 1e-15 * expected.max(1.0));
        assert!(r.preconditions_hold == (1e-3 <= expected));
        assert!((r.saturation_bound - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_drive_gives_infinite_bound() {
        let mut w = theorem_weights(2.0, 1.0);
        w.w_xh = Matrix::zeros(4, 2);
        let r = theorem_precondition_check(&w, 1.0, 3, None).unwrap();
        assert_eq!(r.df_bound, f64::INFINITY);
        assert!(r.preconditions_hold);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["df_bound"].is_null());
    }

    #[test]
    fn signed_permutation_instance_keeps_sigma_min_at_one() {
        let w = theorem_weights(2.0, 1e-10);
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<Matrix<f64>> = (0..20)
            .map(|_| {
                let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
                Matrix::column(&v.iter().map(|x| x / norm).collect::<Vec<_>>())
            })
            .collect();
        let (cache, _) = w
            .forward(&inputs, &Matrix::zeros(n, 1), HeadMode::PerStep)
            .unwrap();
        let r = theorem_precondition_check(&w, 1.0, 20, Some((&cache, 0))).unwrap();
        assert!(r.preconditions_hold, "{r:?}");
        assert_eq!(
            nearest_generalized_permutation(&w.u_f)
                .unwrap()
                .frobenius_residual,
            0.0
        );
        for t in 1..=20 {
            let s = sigma_extremes(&step_jacobian(&w, &cache, t, 0).unwrap()).unwrap();
            assert!(s.sigma_min >= 1.0 - 1e-9);
        }
        assert!(r.sigma_min_window.unwrap() >= 1.0 - 1e-8);
        let sat = saturation_stats(&w, &cache).unwrap();
        assert!(sat.max_excess <= 1e-9);
    }

    #[test]
    fn zero_drive_has_zero_saturation() {
        let mut w = random_weights(2, 4, 3);
        w.b = vec![0.0; 4];
        let (cache, _) = w
            .forward(
                &vec![Matrix::zeros(2, 2); 5],
                &Matrix::zeros(4, 2),
                HeadMode::PerStep,
            )
            .unwrap();
        let s = saturation_stats(&w, &cache).unwrap();
        assert!(s.per_step_max.iter().all(|&m| m == 0.0));
        let mut w2 = random_weights(2, 4, 3);
        w2.b = vec![3.0; 4];
        let (c2, _) = w2
            .forward(
                &random_inputs(2, 5, 2, 1),
                &Matrix::zeros(4, 2),
                HeadMode::PerStep,
            )
            .unwrap();
        assert!(saturation_stats(&w2, &c2).unwrap().overall_max < 1.0);
    }

    #[test]
    fn gradient_trace_is_a_pure_observer() {
        let m: VanillaRnn<f64> = VanillaRnn::init(1, 2, 4, 3);
        let inputs = random_inputs(2, 6, 2, 9);
        let (cache, out) = m
            .forward(&inputs, &m.zero_state(2), HeadMode::PerStep)
            .unwrap();
        let g_out: Vec<Matrix<f64>> = out.iter().map(|y| y.map(|v| v * 0.5 + 0.1)).collect();
        let plain = m.backward(&cache, &g_out).unwrap();
        let mut trace = GradientNormTrace::new(vec![1, 6]);
        let observed = m
            .backward_observed(&cache, &g_out, &mut trace.observer(0))
            .unwrap();
        assert_eq!(plain, observed);
        assert!(trace.norms[0].iter().all(|&v| v > 0.0));

        let zeros: Vec<Matrix<f64>> = out
            .iter()
            .map(|y| Matrix::zeros(y.rows(), y.cols()))
            .collect();
        m.backward_observed(&cache, &zeros, &mut trace.observer(1))
            .unwrap();
        assert_eq!(trace.norms[1], vec![0.0, 0.0]);
        assert_eq!(trace.iterations, vec![0, 1]);
    }
}
