use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ModelKind;
use crate::cells::gradcheck::{fd_report, TensorError};
use crate::cells::{AsRnn, HeadMode, Lstm, Recurrent, VanillaRnn};
use crate::linalg::Matrix;
use crate::param::{InitScheme, InitSpec};
use crate::{Error, Result};

/// Pass threshold on the worst relative error.
pub const GRADCHECK_THRESHOLD: f64 = 1e-5;

const FD_STEP: f64 = 1e-6;
const BATCH: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub model: ModelKind,
    pub d_h: usize,
    pub d_x: usize,
    pub steps: usize,
    pub seed: u64,
    pub per_tensor: Vec<TensorError>,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn jitter(xs: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    xs.iter_mut()
        .for_each(|x| *x += rng.random_range(-scale..scale));
}

fn check<M: Recurrent<f64>>(
    model: &M,
    inputs: &[Matrix<f64>],
    seed: u64,
    corrupt: bool,
) -> Result<Vec<TensorError>> {
    // plant an off-by-a-lot error in one analytic coordinate
    let mut tamper = |g: &mut [Vec<f64>]| {
        if corrupt {
            if let Some(x) = g
                .iter_mut()
                .find(|t| !t.is_empty())
                .and_then(|t| t.first_mut())
            {
                *x += 0.5 + x.abs();
            }
        }
    };
    fd_report(model, inputs, HeadMode::PerStep, seed, FD_STEP, &mut tamper)
}

/// Compares the analytic BPTT gradient of a random `model` instance with
/// central finite differences on a random sequence of length `steps`.
/// `corrupt` perturbs one analytic coordinate so the check must fail.
pub fn gradcheck(
    model: ModelKind,
    d_h: usize,
    d_x: usize,
    steps: usize,
    seed: u64,
    corrupt: bool,
) -> Result<GradcheckReport> {
    if d_h == 0 || d_x == 0 || steps == 0 {
        return Err(Error::contract("gradcheck needs d_h, d_x and T >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_out = 3;
    let inputs: Vec<Matrix<f64>> = (0..steps)
        .map(|_| Matrix::from_fn(d_x, BATCH, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let probe_seed = rng.random();
    let per_tensor = match model {
        ModelKind::Asrnn => {
            let spec = InitSpec {
                scheme: InitScheme::Henaff,
                a: 0.3,
                b: 1.5,
                epsilon: 0.05,
                rng_seed: rng.random(),
            };
            let mut m: AsRnn<f64> = AsRnn::init(&spec, d_x, d_h, d_out)?;
            jitter(m.skew_f.upper_mut(), &mut rng, 0.3);
            jitter(&mut m.b, &mut rng, 0.2);
            jitter(&mut m.head.b, &mut rng, 0.2);
            m.refresh();
            check(&m, &inputs, probe_seed, corrupt)?
        }
        ModelKind::Rnn => {
            let mut m: VanillaRnn<f64> = VanillaRnn::init(rng.random(), d_x, d_h, d_out);
            jitter(&mut m.b, &mut rng, 0.2);
            check(&m, &inputs, probe_seed, corrupt)?
        }
        ModelKind::Lstm => {
            let mut m: Lstm<f64> = Lstm::init(rng.random(), d_x, d_h, d_out);
            jitter(&mut m.b, &mut rng, 0.2);
            check(&m, &inputs, probe_seed, corrupt)?
        }
    };
    let worst = per_tensor
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        model,
        d_h,
        d_x,
        steps,
        seed,
        per_tensor,
        worst,
        threshold: GRADCHECK_THRESHOLD,
        pass: worst <= GRADCHECK_THRESHOLD,
    })
}
