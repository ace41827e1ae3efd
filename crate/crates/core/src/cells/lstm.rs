use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    add_into, check_grad_outputs, check_inputs, ensure_finite, output_grad_at, uniform_fan_in,
    Head, HeadMode, ParamGroup, Parameters, Recurrent, TensorInfo, Tensors,
};
use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// LSTM with input, forget, cell and output gates stacked in that order
/// along the rows of `w_x`, `w_h` and `b` (each block `d_h` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    pub b: Vec<T>,
    pub head: Head<T>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub mode: HeadMode,
    pub inputs: Vec<Matrix<T>>,
    pub h0: Matrix<T>,
    pub c0: Matrix<T>,
    /// Activated gates per step, `4 d_h × B`.
    pub gates: Vec<Matrix<T>>,
    pub c: Vec<Matrix<T>>,
    pub tanh_c: Vec<Matrix<T>>,
    pub h: Vec<Matrix<T>>,
}

impl<T> LstmCache<T> {
    fn hidden(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.h0
        } else {
            &self.h[t - 1]
        }
    }

    fn cell(&self, t: usize) -> &Matrix<T> {
        if t == 0 {
            &self.c0
        } else {
            &self.c[t - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    pub b: Vec<T>,
    pub head_w: Matrix<T>,
    pub head_b: Vec<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Lstm<T> {
    /// Uniform `±1/√d_h` weights; forget-gate bias 1, other biases 0.
    pub fn init(rng_seed: u64, d_x: usize, d_h: usize, d_out: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let w_x = uniform_fan_in(4 * d_h, d_x, d_h, &mut rng);
        let w_h = uniform_fan_in(4 * d_h, d_h, d_h, &mut rng);
        let mut b = vec![T::zero(); 4 * d_h];
        b[d_h..2 * d_h].iter_mut().for_each(|x| *x = T::one());
        let head = Head::new(
            uniform_fan_in(d_out, d_h, d_h, &mut rng),
            vec![T::zero(); d_out],
        );
        Self { w_x, w_h, b, head }
    }

    fn d_h(&self) -> usize {
        self.w_h.cols()
    }
}

impl<T: Scalar> Tensors<T> for Lstm<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_x.as_slice(),
            self.w_h.as_slice(),
            &self.b,
            self.head.w.as_slice(),
            &self.head.b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_x.as_mut_slice(),
            self.w_h.as_mut_slice(),
            &mut self.b,
            self.head.w.as_mut_slice(),
            &mut self.head.b,
        ]
    }
}

impl<T: Scalar> Parameters<T> for Lstm<T> {
    fn tensor_info(&self) -> Vec<TensorInfo> {
        let d_h = self.d_h();
        vec![
            TensorInfo {
                name: "w_x",
                shape: vec![4 * d_h, self.w_x.cols()],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "w_h",
                shape: vec![4 * d_h, d_h],
                group: ParamGroup::Main,
            },
            TensorInfo {
                name: "b",
                shape: vec![4 * d_h],
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

impl<T: Scalar> Tensors<T> for LstmGrads<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![
            self.w_x.as_slice(),
            self.w_h.as_slice(),
            &self.b,
            self.head_w.as_slice(),
            &self.head_b,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            self.w_x.as_mut_slice(),
            self.w_h.as_mut_slice(),
            &mut self.b,
            self.head_w.as_mut_slice(),
            &mut self.head_b,
        ]
    }
}

impl<T: Scalar> Recurrent<T> for Lstm<T> {
    type Cache = LstmCache<T>;
    type Grads = LstmGrads<T>;

    fn input_dim(&self) -> usize {
        self.w_x.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.d_h()
    }

    fn output_dim(&self) -> usize {
        self.head.b.len()
    }

    fn zero_state(&self, batch: usize) -> Vec<Matrix<T>> {
        vec![
            Matrix::zeros(self.d_h(), batch),
            Matrix::zeros(self.d_h(), batch),
        ]
    }

    fn forward(
        &self,
        inputs: &[Matrix<T>],
        init: &[Matrix<T>],
        mode: HeadMode,
    ) -> Result<(LstmCache<T>, Vec<Matrix<T>>)> {
        let d_h = self.d_h();
        let batch = check_inputs(inputs, init, self.input_dim(), d_h, 2)?;
        let steps = inputs.len();
        let mut cache = LstmCache {
            mode,
            inputs: inputs.to_vec(),
            h0: init[0].clone(),
            c0: init[1].clone(),
            gates: Vec::with_capacity(steps),
            c: Vec::with_capacity(steps),
            tanh_c: Vec::with_capacity(steps),
            h: Vec::with_capacity(steps),
        };
        let mut outputs = Vec::new();
        for (t, x) in inputs.iter().enumerate() {
            let mut pre = self.w_x.mul(x);
            pre.add_assign(&self.w_h.mul(cache.hidden(t)));
            pre.add_col_broadcast(&self.b);
            for r in 0..4 * d_h {
                let cell_block = (2 * d_h..3 * d_h).contains(&r);
                for v in pre.row_mut(r) {
                    *v = if cell_block { v.tanh() } else { sigmoid(*v) };
                }
            }
            let gates = pre;
            let prev_c = cache.cell(t);
            let mut c = Matrix::zeros(d_h, batch);
            for i in 0..d_h {
                for j in 0..batch {
                    let ig = gates[(i, j)];
                    let fg = gates[(d_h + i, j)];
                    let gg = gates[(2 * d_h + i, j)];
                    c[(i, j)] = fg * prev_c[(i, j)] + ig * gg;
                }
            }
            let tanh_c = c.map(|v| v.tanh());
            let h = Matrix::from_fn(d_h, batch, |i, j| gates[(3 * d_h + i, j)] * tanh_c[(i, j)]);
            ensure_finite(&h, t + 1)?;
            ensure_finite(&c, t + 1)?;
            if mode == HeadMode::PerStep {
                outputs.push(self.head.forward(&h));
            }
            cache.gates.push(gates);
            cache.c.push(c);
            cache.tanh_c.push(tanh_c);
            cache.h.push(h);
        }
        if mode == HeadMode::FinalState {
            outputs.push(self.head.forward(cache.hidden(steps)));
        }
        Ok((cache, outputs))
    }

    fn final_state(&self, cache: &LstmCache<T>) -> Vec<Matrix<T>> {
        let n = cache.h.len();
        vec![cache.hidden(n).clone(), cache.cell(n).clone()]
    }

    fn backward_observed(
        &self,
        cache: &LstmCache<T>,
        grad_outputs: &[Matrix<T>],
        observer: &mut dyn FnMut(usize, &Matrix<T>),
    ) -> Result<LstmGrads<T>> {
        let d_h = self.d_h();
        let steps = cache.h.len();
        let batch = cache.h0.cols();
        if cache.h0.rows() != d_h {
            return Err(Error::contract("cache/params hidden size mismatch"));
        }
        check_grad_outputs(grad_outputs, steps, cache.mode, self.output_dim(), batch)?;
        let mut g = LstmGrads {
            w_x: Matrix::zeros(4 * d_h, self.input_dim()),
            w_h: Matrix::zeros(4 * d_h, d_h),
            b: vec![T::zero(); 4 * d_h],
            head_w: Matrix::zeros(self.output_dim(), d_h),
            head_b: vec![T::zero(); self.output_dim()],
        };
        let one = T::one();
        let mut carry_h = Matrix::zeros(d_h, batch);
        let mut carry_c: Matrix<T> = Matrix::zeros(d_h, batch);
        for t in (1..=steps).rev() {
            let h = cache.hidden(t);
            let mut gh = carry_h;
            if let Some(gy) = output_grad_at(grad_outputs, cache.mode, t, steps) {
                gh.add_assign(&self.head.backward(h, gy, &mut g.head_w, &mut g.head_b));
            }
            observer(t, &gh);
            let gates = &cache.gates[t - 1];
            let tanh_c = &cache.tanh_c[t - 1];
            let prev_c = cache.cell(t - 1);
            let mut gpre = Matrix::zeros(4 * d_h, batch);
            let mut next_carry_c = Matrix::zeros(d_h, batch);
            for i in 0..d_h {
                for j in 0..batch {
                    let ig = gates[(i, j)];
                    let fg = gates[(d_h + i, j)];
                    let gg = gates[(2 * d_h + i, j)];
                    let og = gates[(3 * d_h + i, j)];
                    let tc = tanh_c[(i, j)];
                    let dh = gh[(i, j)];
                    let dc = carry_c[(i, j)] + dh * og * (one - tc * tc);
                    gpre[(i, j)] = dc * gg * ig * (one - ig);
                    gpre[(d_h + i, j)] = dc * prev_c[(i, j)] * fg * (one - fg);
                    gpre[(2 * d_h + i, j)] = dc * ig * (one - gg * gg);
                    gpre[(3 * d_h + i, j)] = dh * tc * og * (one - og);
                    next_carry_c[(i, j)] = dc * fg;
                }
            }
            g.w_x.acc_mul_tr(&gpre, &cache.inputs[t - 1]);
            g.w_h.acc_mul_tr(&gpre, cache.hidden(t - 1));
            add_into(&mut g.b, &gpre.sum_cols());
            carry_h = self.w_h.tr_mul(&gpre);
            carry_c = next_carry_c;
        }
        Ok(g)
    }
}
