use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    add_into, check_grad_outputs, check_inputs, ensure_finite, output_grad_at, tanh_backward,
    uniform_fan_in, Head, HeadMode, ParamGroup, Parameters, Recurrent, TensorInfo, Tensors,
};
use crate::linalg::Matrix;
use crate::param::init_semi_orthogonal;
use crate::{Error, Result, Scalar};

/// Plain tanh RNN: `h_t = tanh(W_xh x_t + W_hh h_{t−1} + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaRnn<T> {
    pub w_xh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub b: Vec<T>,
    pub head: Head<T>,
}

#[derive(Debug, Clone)]
pub struct VanillaCache<T> {
    pub mode: HeadMode,
    pub inputs: Vec<Matrix<T>>,
    pub h0: Matrix<T>,
    pub h: Vec<Matrix<T>>,
}

impl<T> VanillaCache<T> {
    fn hidden(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.h0
        } else {
            &self.h[t - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanillaGrads<T> {
    pub w_xh: Matrix<T>,
    pub w_hh: Matrix<T>,
    pub b: Vec<T>,
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

impl<T: Scalar> VanillaRnn<T> {
    /// Orthogonal `W_hh`, semi-orthogonal `W_xh`, zero bias.
    pub fn init(rng_seed: u64, d_x: usize, d_h: usize, d_out: usize) -> Self {
        let s = rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(s.wrapping_add(4));
        Self {
            w_xh: init_semi_orthogonal(d_h, d_x, s.wrapping_add(3)),
            w_hh: init_semi_orthogonal(d_h, d_h, s.wrapping_add(1)),
            b: vec![T::zero(); d_h],
            head: Head::new(
                uniform_fan_in(d_out, d_h, d_h, &mut rng),
                vec![T::zero(); d_out],
            ),
        }
    }
}

impl<T: Scalar> Tensors<T> for VanillaRnn<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_xh.as_slice(),
            self.w_hh.as_slice(),
            &self.b,
            self.head.w.as_slice(),
            &self.head.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_xh.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.b,
            self.head.w.as_mut_slice(),
            &mut self.head.b,
        ]
    }
}

impl<T: Scalar> Parameters<T> for VanillaRnn<T> {
    fn tensor_info(&self) -> Vec<TensorInfo> {
        let d_h = self.b.len();
        vec![
            TensorInfo {
                name: "w_xh",
                shape: vec![d_h, self.w_xh.cols()],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "w_hh",
                shape: vec![d_h, d_h],
                group: ParamGroup::Recurrent,
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

impl<T: Scalar> Tensors<T> for VanillaGrads<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_xh.as_slice(),
            self.w_hh.as_slice(),
            &self.b,
            self.head_w.as_slice(),
            &self.head_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_xh.as_mut_slice(),
            self.w_hh.as_mut_slice(),
            &mut self.b,
            self.head_w.as_mut_slice(),
            &mut self.head_b,
        ]
    }
}

impl<T: Scalar> Recurrent<T> for VanillaRnn<T> {
    type Cache = VanillaCache<T>;
    type Grads = VanillaGrads<T>;

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
    ) -> Result<(VanillaCache<T>, Vec<Matrix<T>>)> {
        check_inputs(inputs, init, self.input_dim(), self.hidden_dim(), 1)?;
        let mut cache = VanillaCache {
            mode,
            inputs: inputs.to_vec(),
            h0: init[0].clone(),
            h: Vec::with_capacity(inputs.len()),
        };
        let mut outputs = Vec::new();
        for (t, x) in inputs.iter().enumerate() {
            let mut z = self.w_xh.mul(x);
            z.add_assign(&self.w_hh.mul(cache.hidden(t)));
            z.add_col_broadcast(&self.b);
            let h = z.map(|v| v.tanh());
            ensure_finite(&h, t + 1)?;
            if mode == HeadMode::PerStep {
                outputs.push(self.head.forward(&h));
            }
            cache.h.push(h);
        }
        if mode == HeadMode::FinalState {
            outputs.push(self.head.forward(cache.hidden(inputs.len())));
        }
        Ok((cache, outputs))
    }

    fn final_state(&self, cache: &VanillaCache<T>) -> Vec<Matrix<T>> {
        vec![cache.hidden(cache.h.len()).clone()]
    }

    fn backward_observed(
        &self,
        cache: &VanillaCache<T>,
        grad_outputs: &[Matrix<T>],
        observer: &mut dyn FnMut(usize, &Matrix<T>),
    ) -> Result<VanillaGrads<T>> {
        let d_h = self.hidden_dim();
        let steps = cache.h.len();
        let batch = cache.h0.cols();
        if cache.h0.rows() != d_h {
            return Err(Error::contract("cache/params hidden size mismatch"));
        }
        check_grad_outputs(grad_outputs, steps, cache.mode, self.output_dim(), batch)?;
        let mut g = VanillaGrads {
            w_xh: Matrix::zeros(d_h, self.input_dim()),
            w_hh: Matrix::zeros(d_h, d_h),
            b: vec![T::zero(); d_h],
            head_w: Matrix::zeros(self.output_dim(), d_h),
            head_b: vec![T::zero(); self.output_dim()],
        };
        let mut carry = Matrix::zeros(d_h, batch);
        for t in (1..=steps).rev() {
            let h = cache.hidden(t);
            let mut gh = carry;
            if let Some(gy) = output_grad_at(grad_outputs, cache.mode, t, steps) {
                gh.add_assign(&self.head.backward(h, gy, &mut g.head_w, &mut g.head_b));
            }
            observer(t, &gh);
            let gz = tanh_backward(&gh, h);
            g.w_xh.acc_mul_tr(&gz, &cache.inputs[t - 1]);
            g.w_hh.acc_mul_tr(&gz, cache.hidden(t - 1));
            add_into(&mut g.b, &gz.sum_cols());
            carry = self.w_hh.tr_mul(&gz);
        }
        Ok(g)
    }
}
