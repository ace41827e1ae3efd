use crate::linalg::Matrix;
use crate::{Error, Result, Scalar};

/// Softmax of column `j` of `logits`, computed in f64 with max-shift.
pub fn softmax_column<T: Scalar>(logits: &Matrix<T>, j: usize) -> Vec<f64> {
    let col: Vec<f64> = (0..logits.rows())
        .map(|i| logits[(i, j)].as_f64())
        .collect();
    let m = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = col.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn check_shapes<T: Scalar>(
    logits: &[Matrix<T>],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<usize> {
    if logits.len() != targets.len() || logits.len() != mask.len() {
        return Err(Error::contract(format!(
            "{} output steps, {} target steps, {} mask steps",
            logits.len(),
            targets.len(),
            mask.len()
        )));
    }
    let mut count = 0;
    for (t, ((y, tg), m)) in logits.iter().zip(targets).zip(mask).enumerate() {
        if tg.len() != y.cols() || m.len() != y.cols() {
            return Err(Error::contract(format!("step {t}: batch size mismatch")));
        }
        for (&c, &on) in tg.iter().zip(m) {
            if on && c >= y.rows() {
                return Err(Error::contract(format!(
                    "step {t}: target {c} out of range"
                )));
            }
            count += usize::from(on);
        }
    }
    if count == 0 {
        return Err(Error::contract("empty mask"));
    }
    Ok(count)
}

/// Mean masked softmax cross-entropy in nats and its gradient with respect
/// to the raw logits. `logits[t]` is `C × B`; `targets[t][j]` and
/// `mask[t][j]` address batch column `j` at step `t`.
pub fn loss_and_grad<T: Scalar>(
    logits: &[Matrix<T>],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<(f64, Vec<Matrix<T>>)> {
    let count = check_shapes(logits, targets, mask)?;
    let inv = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for ((y, tg), m) in logits.iter().zip(targets).zip(mask) {
        let mut g = Matrix::zeros(y.rows(), y.cols());
        for j in 0..y.cols() {
            if !m[j] {
                continue;
            }
            let col: Vec<f64> = (0..y.rows()).map(|i| y[(i, j)].as_f64()).collect();
            let mx = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + col.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - col[tg[j]];
            for (i, &v) in col.iter().enumerate() {
                let p = (v - lse).exp();
                let d = if i == tg[j] { p - 1.0 } else { p };
                g[(i, j)] = T::of(d * inv);
            }
        }
        grads.push(g);
    }
    Ok((total * inv, grads))
}

/// Fraction of masked positions whose arg-max logit equals the target.
pub fn accuracy<T: Scalar>(
    logits: &[Matrix<T>],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<f64> {
    let count = check_shapes(logits, targets, mask)?;
    let mut hits = 0usize;
    for ((y, tg), m) in logits.iter().zip(targets).zip(mask) {
        for j in 0..y.cols() {
            if !m[j] {
                continue;
            }
            let mut best = 0;
            for i in 1..y.rows() {
                if y[(i, j)] > y[(best, j)] {
                    best = i;
                }
            }
            hits += usize::from(best == tg[j]);
        }
    }
    Ok(hits as f64 / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let y = vec![Matrix::<f64>::zeros(8, 3); 2];
        let (l, _) = loss_and_grad(
            &y,
            &[vec![0, 3, 7], vec![1, 2, 5]],
            &[vec![true; 3], vec![true; 3]],
        )
        .unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_costs_nothing() {
        let mut y = Matrix::<f64>::zeros(5, 1);
        y[(2, 0)] = 1e3;
        let (l, g) = loss_and_grad(&[y], &[vec![2]], &[vec![true]]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g[0].max_abs() == 0.0);
    }

    #[test]
    fn empty_mask_rejected() {
        let y = vec![Matrix::<f64>::zeros(3, 2)];
        assert!(matches!(
            loss_and_grad(&y, &[vec![0, 0]], &[vec![false, false]]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn masked_positions_ignored() {
        let mut y = Matrix::<f64>::zeros(4, 2);
        y[(1, 1)] = 50.0;
        let (l, g) = loss_and_grad(&[y], &[vec![0, 0]], &[vec![true, false]]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!((0..4).all(|i| g[0][(i, 1)] == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let y0 = Matrix::from_fn(6, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.37 - 0.6);
        let targets = vec![vec![1, 4, 5]];
        let mask = vec![vec![true, true, false]];
        let (_, g) = loss_and_grad(std::slice::from_ref(&y0), &targets, &mask).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            for j in 0..3 {
                let mut p = y0.clone();
                p[(i, j)] += h;
                let mut m = y0.clone();
                m[(i, j)] -= h;
                let fd = (loss_and_grad(&[p], &targets, &mask).unwrap().0
                    - loss_and_grad(&[m], &targets, &mask).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[0][(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn memoryless_copy_predictor_hits_baseline() {
        for (k, l) in [(10usize, 100usize), (10, 1000), (1, 0)] {
            let steps = l + 2 * k;
            let mut logits = Vec::new();
            let mut targets = Vec::new();
            for t in 0..steps {
                let mut y = Matrix::<f64>::zeros(10, 1);
                if t < l + k {
                    y[(0, 0)] = 1e3;
                    targets.push(vec![0]);
                } else {
                    (2..10).for_each(|c| y[(c, 0)] = 0.0);
                    (0..2).for_each(|c| y[(c, 0)] = -1e3);
                    targets.push(vec![2 + t % 8]);
                }
                logits.push(y);
            }
            let mask = vec![vec![true]; steps];
            let (loss, _) = loss_and_grad(&logits, &targets, &mask).unwrap();
            let baseline = k as f64 * 8f64.ln() / steps as f64;
            assert!(
                (loss - baseline).abs() <= 1e-12,
                "{k},{l}: {loss} vs {baseline}"
            );
        }
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let y = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let a = accuracy(&[y], &[vec![0, 0]], &[vec![true, true]]).unwrap();
        assert_eq!(a, 0.5);
    }
}
