//! RMSProp with two learning-rate groups and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::cells::{ParamGroup, Parameters, Recurrent, Tensors};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_main: f64,
    /// Rate for the orthogonal generators (and a vanilla RNN's `W_hh`).
    pub lr_recurrent: f64,
    /// Accumulator decay.
    pub alpha: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_eps_den")]
    pub eps_den: f64,
}

fn default_eps_den() -> f64 {
    1e-8
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_main: 1e-3,
            lr_recurrent: 1e-4,
            alpha: 0.9,
            clip_norm: None,
            eps_den: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Error::Config {
            location: format!("optim.{field}"),
            message: msg.into(),
        };
        if !(self.lr_main > 0.0) {
            return Err(bad("lr_main", "must be > 0"));
        }
        if !(self.lr_recurrent > 0.0) {
            return Err(bad("lr_recurrent", "must be > 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("alpha", "must lie in (0, 1)"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(bad("clip_norm", "must be > 0"));
            }
        }
        if !(self.eps_den > 0.0) {
            return Err(bad("eps_den", "must be > 0"));
        }
        Ok(())
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Main => self.lr_main,
            ParamGroup::Recurrent => self.lr_recurrent,
        }
    }
}

/// Running mean-square accumulators, one per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new<T, P: Parameters<T> + ?Sized>(params: &P) -> Self {
        Self {
            v: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
            step: 0,
        }
    }
}

/// L2 norm over every coordinate of every tensor.
pub fn global_norm<T: Scalar, G: Tensors<T> + ?Sized>(g: &G) -> f64 {
    g.tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&x| {
            let x = x.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales `g` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar, G: Tensors<T> + ?Sized>(g: &mut G, max_norm: f64) -> f64 {
    let norm = global_norm(g);
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One RMSProp update: `v ← αv + (1−α)g²`, `θ ← θ − lr·g/(√v + ε)`.
pub fn rmsprop_step<T: Scalar, M: Recurrent<T>>(
    state: &mut OptimState,
    params: &mut M,
    grads: &M::Grads,
    cfg: &OptimConfig,
) -> Result<()> {
    let info = params.tensor_info();
    let gs = grads.tensors();
    let mut ps = params.tensors_mut();
    if gs.len() != ps.len() || state.v.len() != ps.len() {
        return Err(Error::contract("optimizer: tensor count mismatch"));
    }
    for (k, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
        if p.len() != g.len() || state.v[k].len() != p.len() {
            return Err(Error::contract(format!(
                "optimizer: shape mismatch in tensor {}",
                info[k].name
            )));
        }
    }
    let (a, lr_of) = (cfg.alpha, |k: usize| cfg.lr(info[k].group));
    for (k, (p, g)) in ps.iter_mut().zip(&gs).enumerate() {
        let lr = lr_of(k);
        for ((theta, &gi), v) in p.iter_mut().zip(g.iter()).zip(state.v[k].iter_mut()) {
            let gi = gi.as_f64();
            *v = a * *v + (1.0 - a) * gi * gi;
            *theta -= T::of(lr * gi / (v.sqrt() + cfg.eps_den));
        }
    }
    drop(ps);
    params.refresh();
    state.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{AsRnn, AsRnnGrads, VanillaRnn};
    use crate::linalg::Matrix;
    use crate::param::{InitScheme, InitSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Bundle(Vec<Vec<f64>>);

    impl Tensors<f64> for Bundle {
        fn tensors(&self) -> Vec<&[f64]> {
            self.0.iter().map(|v| v.as_slice()).collect()
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            self.0.iter_mut().map(|v| v.as_mut_slice()).collect()
        }
    }

    #[test]
    fn clip_under_threshold_is_noop() {
        let mut g = Bundle(vec![vec![3.0], vec![4.0]]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g.0, vec![vec![3.0], vec![4.0]]);
    }

    #[test]
    fn clip_over_threshold_rescales_exactly() {
        let mut g = Bundle(vec![vec![12.0, 0.0], vec![16.0]]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 20.0);
        assert_eq!(g.0, vec![vec![6.0, 0.0], vec![8.0]]);
    }

    #[test]
    fn clip_zero_gradient() {
        let mut g = Bundle(vec![vec![0.0; 3]]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 0.0);
        assert_eq!(g.0, vec![vec![0.0; 3]]);
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut g = Bundle(
                (0..4)
                    .map(|_| (0..7).map(|_| rng.random_range(-50.0..50.0)).collect())
                    .collect(),
            );
            let max = rng.random_range(0.1..20.0);
            clip_global_norm(&mut g, max);
            assert!(global_norm(&g) <= max + 1e-12);
        }
    }

    fn tiny_vanilla() -> VanillaRnn<f64> {
        VanillaRnn::init(0, 1, 1, 1)
    }

    fn vanilla_grads(m: &VanillaRnn<f64>, fill: f64) -> crate::cells::VanillaGrads<f64> {
        let (cache, out) = m
            .forward(
                &[Matrix::zeros(m.input_dim(), 1)],
                &m.zero_state(1),
                crate::cells::HeadMode::FinalState,
            )
            .unwrap();
        let mut g = m
            .backward(&cache, &[Matrix::zeros(out[0].rows(), 1)])
            .unwrap();
        g.tensors_mut().into_iter().for_each(|t| t.fill(fill));
        g
    }

    #[test]
    fn first_step_hand_value() {
        let mut m = tiny_vanilla();
        let before: Vec<f64> = m.tensors().iter().map(|t| t[0]).collect();
        let g = vanilla_grads(&m, 1.0);
        let cfg = OptimConfig {
            lr_main: 0.1,
            lr_recurrent: 0.1,
            alpha: 0.9,
            clip_norm: None,
            eps_den: 1e-8,
        };
        let mut st = OptimState::new(&m);
        rmsprop_step(&mut st, &mut m, &g, &cfg).unwrap();
        for (k, t) in m.tensors().iter().enumerate() {
            assert!((st.v[k][0] - 0.1).abs() < 1e-15);
            let delta = t[0] - before[k];
            assert!((delta + 0.316_227_756_0).abs() < 1e-9, "{delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut m = tiny_vanilla();
        let before = m.clone();
        let g = vanilla_grads(&m, 0.0);
        let mut st = OptimState::new(&m);
        rmsprop_step(&mut st, &mut m, &g, &OptimConfig::default()).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn groups_use_their_own_rate() {
        let mut m: VanillaRnn<f64> = VanillaRnn::init(3, 2, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = OptimConfig {
            lr_main: 0.03,
            lr_recurrent: 0.002,
            alpha: 0.8,
            clip_norm: None,
            eps_den: 1e-8,
        };
        let mut st = OptimState::new(&m);
        // scalar oracle replaying the rule coordinate by coordinate
        let mut theta: Vec<Vec<f64>> = m.tensors().iter().map(|t| t.to_vec()).collect();
        let mut v: Vec<Vec<f64>> = theta.iter().map(|t| vec![0.0; t.len()]).collect();
        let groups: Vec<ParamGroup> = m.tensor_info().iter().map(|i| i.group).collect();
        for _ in 0..5 {
            let mut g = vanilla_grads(&m, 0.0);
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            }
            for (k, gt) in g.tensors().iter().enumerate() {
                let lr = if groups[k] == ParamGroup::Recurrent {
                    0.002
                } else {
                    0.03
                };
                for i in 0..gt.len() {
                    v[k][i] = 0.8 * v[k][i] + 0.2 * gt[i] * gt[i];
                    theta[k][i] -= lr * gt[i] / (v[k][i].sqrt() + 1e-8);
                }
            }
            rmsprop_step(&mut st, &mut m, &g, &cfg).unwrap();
        }
        for (k, t) in m.tensors().iter().enumerate() {
            for i in 0..t.len() {
                assert!((t[i] - theta[k][i]).abs() < 1e-14);
            }
        }
        assert_eq!(st.step, 5);
    }

    #[test]
    fn orthogonality_survives_many_updates() {
        let spec = InitSpec {
            scheme: InitScheme::Henaff,
            a: 0.5,
            b: 2.0,
            epsilon: 1e-3,
            rng_seed: 4,
        };
        let mut m: AsRnn<f64> = AsRnn::init(&spec, 3, 12, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = OptimConfig {
            lr_main: 0.01,
            lr_recurrent: 0.05,
            alpha: 0.9,
            clip_norm: Some(10.0),
            eps_den: 1e-8,
        };
        let mut st = OptimState::new(&m);
        for _ in 0..100 {
            let mut g: AsRnnGrads<f64> = AsRnnGrads {
                w_xh: Matrix::zeros(12, 3),
                skew_hh: vec![0.0; 66],
                skew_f: vec![0.0; 66],
                seed_f: vec![0.0; 12],
                b: vec![0.0; 12],
                head_w: Matrix::zeros(4, 12),
                head_b: vec![0.0; 4],
            };
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0));
            }
            clip_global_norm(&mut g, 10.0);
            rmsprop_step(&mut st, &mut m, &g, &cfg).unwrap();
        }
        assert!(m.skew_hh.orthogonal().orthogonality_defect() <= 1e-10);
        assert!(m.skew_f.orthogonal().orthogonality_defect() <= 1e-10);
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut m = tiny_vanilla();
        let g = vanilla_grads(&m, 1.0);
        let mut st = OptimState {
            v: vec![vec![0.0]],
            step: 0,
        };
        assert!(rmsprop_step(&mut st, &mut m, &g, &OptimConfig::default()).is_err());
    }

    #[test]
    fn validation_rejects_bad_alpha() {
        let cfg = OptimConfig {
            alpha: 1.0,
            ..OptimConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
    }
}
