use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    add_into, check_grad_outputs, check_inputs, ensure_finite, output_grad_at, uniform_fan_in,
    Head, HeadMode, ParamGroup, Parameters, Recurrent, TensorInfo, Tensors,
};
use crate::linalg::Matrix;
use crate::param::{
    init_seed_vector, init_semi_orthogonal, init_skew, DiagonalParam, InitSpec, SkewParam,
};
use crate::{Error, Result, Scalar};

/// Adaptive-saturated RNN:
/// `h_t = W_f⁻¹ tanh(W_f (W_xh x_t + W_hh h_{t−1} + b))` with `W_f = U_f D_f`.
#[derive(Debug, Clone)]
pub struct AsRnn<T> {
    pub w_xh: Matrix<T>,
    pub skew_hh: SkewParam<T>,
    pub skew_f: SkewParam<T>,
    pub diag_f: DiagonalParam<T>,
    pub b: Vec<T>,
    pub head: Head<T>,
}

/// Materialized matrices of an asRNN. `w_hh` need not be orthogonal here,
/// which lets diagnostics build cells outside the trainable family.
#[derive(Debug, Clone)]
pub struct AsRnnWeights<T> {
    pub w_xh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub u_f: Matrix<T>,
    pub d_f: Vec<T>,
    pub b: Vec<T>,
    pub head: Head<T>,
}

/// Saved activations of one forward pass.
#[derive(Debug, Clone)]
pub struct AsRnnCache<T> {
    pub mode: HeadMode,
    pub inputs: Vec<Matrix<T>>,
    pub h0: Matrix<T>,
    /// `z_t = W_xh x_t + W_hh h_{t−1} + b`
    pub z: Vec<Matrix<T>>,
    /// `a_t = tanh(W_f z_t) = W_f h_t`
    pub a: Vec<Matrix<T>>,
    pub h: Vec<Matrix<T>>,
}

impl<T> AsRnnCache<T> {
    pub fn steps(&self) -> usize {
        self.h.len()
    }

    /// Hidden state at step `t` (0 gives `h_0`).
    pub fn hidden(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.h0
        } else {
            &self.h[t - 1]
        }
    }
}

/// Gradients with respect to the materialized matrices.
#[derive(Debug, Clone)]
pub struct AsRnnDenseGrads<T> {
    pub w_xh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub u_f: Matrix<T>,
    pub d_f: Vec<T>,
    pub b: Vec<T>,
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
    pub h0: Matrix<T>,
}

/// Gradients with respect to the free parameters, laid out like [`AsRnn`].
#[derive(Debug, Clone, PartialEq)]
pub struct AsRnnGrads<T> {
    pub w_xh: Matrix<T>,
    pub skew_hh: Vec<T>,
    pub skew_f: Vec<T>,
    pub seed_f: Vec<T>,
    pub b: Vec<T>,
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> AsRnn<T> {
    /// Standard initialization: `W_hh` generator from `spec.scheme`, `U_f`
    /// generator zero (identity), `W_xh` semi-orthogonal, `b = 0`,
    /// `s ~ U(a, b)`. Sub-seeds are derived from `spec.rng_seed`.
    pub fn init(spec: &InitSpec, d_x: usize, d_h: usize, d_out: usize) -> Result<Self> {
        spec.validate()?;
        let sub = |k: u64| InitSpec {
            rng_seed: spec
                .rng_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k),
            ..spec.clone()
        };
        let skew_hh = init_skew(&sub(1), d_h);
        let skew_f = SkewParam::zeros(d_h);
        let diag_f = init_seed_vector(&sub(2), d_h)?;
        let w_xh = init_semi_orthogonal(d_h, d_x, sub(3).rng_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(sub(4).rng_seed);
        let head = Head::new(
            uniform_fan_in(d_out, d_h, d_h, &mut rng),
            vec![T::zero(); d_out],
        );
        Ok(Self {
            w_xh,
            skew_hh,
            skew_f,
            diag_f,
            b: vec![T::zero(); d_h],
            head,
        })
    }

    pub fn weights(&self) -> AsRnnWeights<T> {
        AsRnnWeights {
            w_xh: self.w_xh.clone(),
            w_hh: self.skew_hh.orthogonal().clone(),
            u_f: self.skew_f.orthogonal().clone(),
            d_f: self.diag_f.diagonal(),
            b: self.b.clone(),
            head: self.head.clone(),
        }
    }

    /// Maps dense gradients through the parameterizations.
    pub fn grads_from_dense(&self, dense: AsRnnDenseGrads<T>) -> Result<AsRnnGrads<T>> {
        Ok(AsRnnGrads {
            skew_hh: self.skew_hh.backprop(&dense.w_hh)?,
            skew_f: self.skew_f.backprop(&dense.u_f)?,
            seed_f: self.diag_f.backprop(&dense.d_f)?,
            w_xh: dense.w_xh,
            b: dense.b,
            head_w: dense.head_w,
            head_b: dense.head_b,
        })
    }
}

impl<T: Scalar> AsRnnWeights<T> {
    pub fn hidden_dim(&self) -> usize {
        self.w_hh.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_xh.cols()
    }

    fn validate(&self) -> Result<()> {
        let d_h = self.hidden_dim();
        if !self.w_hh.is_square()
            || self.u_f.shape() != (d_h, d_h)
            || self.w_xh.rows() != d_h
            || self.d_f.len() != d_h
            || self.b.len() != d_h
            || self.head.w.cols() != d_h
        {
            return Err(Error::contract("inconsistent asRNN weight shapes"));
        }
        if let Some(index) = self.d_f.iter().position(|&d| d == T::zero()) {
            return Err(Error::SingularSaturation { index });
        }
        Ok(())
    }

    pub fn forward(
        &self,
        inputs: &[Matrix<T>],
        h0: &Matrix<T>,
        mode: HeadMode,
    ) -> Result<(AsRnnCache<T>, Vec<Matrix<T>>)> {
        self.validate()?;
        let d_h = self.hidden_dim();
        check_inputs(inputs, std::slice::from_ref(h0), self.input_dim(), d_h, 1)?;
        let inv_d: Vec<T> = self.d_f.iter().map(|&d| T::one() / d).collect();
        let steps = inputs.len();
        let mut cache = AsRnnCache {
            mode,
            inputs: inputs.to_vec(),
            h0: h0.clone(),
            z: Vec::with_capacity(steps),
            a: Vec::with_capacity(steps),
            h: Vec::with_capacity(steps),
        };
        let mut outputs = Vec::new();
        for (t, x) in inputs.iter().enumerate() {
            let prev = cache.hidden(t);
            let mut z = self.w_xh.mul(x);
            z.add_assign(&self.w_hh.mul(prev));
            z.add_col_broadcast(&self.b);
            let a = self.u_f.mul(&z.scale_rows(&self.d_f)).map(|v| v.tanh());
            // W_f⁻¹ = D_f⁻¹ U_fᵀ
            let h = self.u_f.tr_mul(&a).scale_rows(&inv_d);
            ensure_finite(&h, t + 1)?;
            if mode == HeadMode::PerStep {
                outputs.push(self.head.forward(&h));
            }
            cache.z.push(z);
            cache.a.push(a);
            cache.h.push(h);
        }
        if mode == HeadMode::FinalState {
            outputs.push(self.head.forward(cache.hidden(steps)));
        }
        Ok((cache, outputs))
    }

    pub fn backward(
        &self,
        cache: &AsRnnCache<T>,
        grad_outputs: &[Matrix<T>],
        observer: &mut dyn FnMut(usize, &Matrix<T>),
    ) -> Result<AsRnnDenseGrads<T>> {
        self.validate()?;
        let d_h = self.hidden_dim();
        let steps = cache.steps();
        let batch = cache.h0.cols();
        check_grad_outputs(grad_outputs, steps, cache.mode, self.head.w.rows(), batch)?;
        if cache.h0.rows() != d_h {
            return Err(Error::contract("cache/params hidden size mismatch"));
        }
        let inv_d: Vec<T> = self.d_f.iter().map(|&d| T::one() / d).collect();
        let mut g = AsRnnDenseGrads {
            w_xh: Matrix::zeros(d_h, self.input_dim()),
            w_hh: Matrix::zeros(d_h, d_h),
            u_f: Matrix::zeros(d_h, d_h),
            d_f: vec![T::zero(); d_h],
            b: vec![T::zero(); d_h],
            head_w: Matrix::zeros(self.head.w.rows(), d_h),
            head_b: vec![T::zero(); self.head.b.len()],
            h0: Matrix::zeros(d_h, batch),
        };
        let mut carry = Matrix::zeros(d_h, batch);
        for t in (1..=steps).rev() {
            let h = cache.hidden(t);
            let a = &cache.a[t - 1];
            let z = &cache.z[t - 1];
            let mut gh = carry;
            if let Some(gy) = output_grad_at(grad_outputs, cache.mode, t, steps) {
                let from_head = self.head.backward(h, gy, &mut g.head_w, &mut g.head_b);
                gh.add_assign(&from_head);
            }
            observer(t, &gh);

            // h = D⁻¹ v, v = Uᵀ a
            let gv = gh.scale_rows(&inv_d);
            for i in 0..d_h {
                let s: T = gh.row(i).iter().zip(h.row(i)).map(|(&x, &y)| x * y).sum();
                g.d_f[i] -= s * inv_d[i];
            }
            g.u_f.acc_mul_tr(a, &gv);
            let ga = self.u_f.mul(&gv);

            // a = tanh(U w), w = D z
            let gu = super::tanh_backward(&ga, a);
            let w = z.scale_rows(&self.d_f);
            g.u_f.acc_mul_tr(&gu, &w);
            let gw = self.u_f.tr_mul(&gu);
            for i in 0..d_h {
                let s: T = gw.row(i).iter().zip(z.row(i)).map(|(&x, &y)| x * y).sum();
                g.d_f[i] += s;
            }
            let gz = gw.scale_rows(&self.d_f);

            g.w_xh.acc_mul_tr(&gz, &cache.inputs[t - 1]);
            g.w_hh.acc_mul_tr(&gz, cache.hidden(t - 1));
            add_into(&mut g.b, &gz.sum_cols());
            carry = self.w_hh.tr_mul(&gz);
        }
        g.h0 = carry;
        Ok(g)
    }
}

impl<T: Scalar> Tensors<T> for AsRnn<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_xh.as_slice(),
            self.skew_hh.upper(),
            self.skew_f.upper(),
            &self.diag_f.seed,
            &self.b,
            self.head.w.as_slice(),
            &self.head.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_xh.as_mut_slice(),
            self.skew_hh.upper_mut(),
            self.skew_f.upper_mut(),
            &mut self.diag_f.seed,
            &mut self.b,
            self.head.w.as_mut_slice(),
            &mut self.head.b,
        ]
    }
}

impl<T: Scalar> Parameters<T> for AsRnn<T> {
    fn tensor_info(&self) -> Vec<TensorInfo> {
        let d_h = self.b.len();
        let tri = d_h * d_h.saturating_sub(1) / 2;
        vec![
            TensorInfo {
                name: "w_xh",
                shape: vec![d_h, self.w_xh.cols()],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "skew_hh",
                shape: vec![tri],
                group: ParamGroup::Recurrent,
            },
            TensorInfo {
                name: "skew_f",
                shape: vec![tri],
                group: ParamGroup::Recurrent,
            },
            TensorInfo {
                name: "seed_f",
                shape: vec![d_h],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "b",
                shape: vec![d_h],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "head_w",
                shape: vec![self.head.w.rows(), d_h],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "head_b",
                shape: vec![self.head.b.len()],
                group: ParamGroup::Main,
            },
        ]
    }
}

impl<T: Scalar> Tensors<T> for AsRnnGrads<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_xh.as_slice(),
            &self.skew_hh,
            &self.skew_f,
            &self.seed_f,
            &self.b,
            self.head_w.as_slice(),
            &self.head_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_xh.as_mut_slice(),
            &mut self.skew_hh,
            &mut self.skew_f,
            &mut self.seed_f,
            &mut self.b,
            self.head_w.as_mut_slice(),
            &mut self.head_b,
        ]
    }
}

impl<T: Scalar> Recurrent<T> for AsRnn<T> {
    type Cache = AsRnnCache<T>;
    type Grads = AsRnnGrads<T>;

    fn input_dim(&self) -> usize {
        self.w_xh.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.b.len()
    }

    fn output_dim(&self) -> usize {
        self.head.b.len()
    }

    fn zero_state(&self, batch: usize) -> Vec<Matrix<T>> {
        vec![Matrix::zeros(self.hidden_dim(), batch)]
    }

    fn forward(
        &self,
        inputs: &[Matrix<T>],
        init: &[Matrix<T>],
        mode: HeadMode,
    ) -> Result<(AsRnnCache<T>, Vec<Matrix<T>>)> {
        let h0 = init
            .first()
            .ok_or_else(|| Error::contract("asRNN needs one initial state matrix"))?;
        self.weights().forward(inputs, h0, mode)
    }

    fn final_state(&self, cache: &AsRnnCache<T>) -> Vec<Matrix<T>> {
        vec![cache.hidden(cache.steps()).clone()]
    }

    fn backward_observed(
        &self,
        cache: &AsRnnCache<T>,
        grad_outputs: &[Matrix<T>],
        observer: &mut dyn FnMut(usize, &Matrix<T>),
    ) -> Result<AsRnnGrads<T>> {
        let dense = self.weights().backward(cache, grad_outputs, observer)?;
        self.grads_from_dense(dense)
    }
}
