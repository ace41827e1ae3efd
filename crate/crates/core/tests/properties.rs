use asrnn::cells::Tensors;
use asrnn::linalg::{expm, nearest_generalized_permutation, skew_from_upper, Matrix};
use asrnn::optim::{clip_global_norm, global_norm};
use asrnn::tasks::{
    gen_copy_batch, invert_permutation, permutation_from_seed, unigram_entropy_bits, CopySpec,
    BLANK, START,
};
use proptest::prelude::*;

struct Flat(Vec<Vec<f64>>);

impl Tensors<f64> for Flat {
    fn tensors(&self) -> Vec<&[f64]> {
        self.0.iter().map(|t| t.as_slice()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.iter_mut().map(|t| t.as_mut_slice()).collect()
    }
}

fn square(n: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * n).prop_map(move |v| Matrix::new(n, n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clipping_caps_norm_and_keeps_direction(
        parts in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 1..12), 1..5),
        max_norm in 0.1..20.0f64,
    ) {
        let mut g = Flat(parts.clone());
        let before = clip_global_norm(&mut g, max_norm);
        let after = global_norm(&g);
        prop_assert!(after <= max_norm * (1.0 + 1e-12) || before <= max_norm);
        if before <= max_norm {
            prop_assert_eq!(&g.0, &parts);
        } else {
            let s = max_norm / before;
            for (a, b) in g.0.iter().flatten().zip(parts.iter().flatten()) {
                prop_assert!((a - b * s).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn expm_of_skew_is_orthogonal(n in 1usize..9, scale in 0.0..4.0f64, seed in any::<u64>()) {
        let upper: Vec<f64> = (0..n * (n - 1) / 2)
            .map(|i| scale * (((seed.wrapping_add(i as u64 * 7919)) % 2001) as f64 / 1000.0 - 1.0))
            .collect();
        let q = expm(&skew_from_upper(n, &upper)).unwrap();
        prop_assert!(q.orthogonality_defect() < 1e-12);
    }

    #[test]
    fn signed_permutation_projection_beats_random_candidates(a in square(5), seed in any::<u64>()) {
        let best = nearest_generalized_permutation(&a).unwrap();
        let perm = permutation_from_seed(5, seed);
        let mut e = Matrix::zeros(5, 5);
        for (i, &j) in perm.iter().enumerate() {
            e[(i, j)] = if seed >> i & 1 == 1 { 1.0 } else { -1.0 };
        }
        let other = (&a - &e).frobenius_norm();
        prop_assert!(best.frobenius_residual <= other + 1e-12);
    }

    #[test]
    fn inverse_permutation_round_trips(n in 1usize..200, seed in any::<u64>()) {
        let p = permutation_from_seed(n, seed);
        let inv = invert_permutation(&p);
        for (i, &j) in p.iter().enumerate() {
            prop_assert_eq!(inv[j], i);
        }
    }

    #[test]
    fn copy_batches_have_the_expected_layout(k in 1usize..6, l in 0usize..20, batch in 1usize..5, seed in any::<u64>()) {
        let spec = CopySpec { k, l, batch, rng_seed: seed };
        let b = gen_copy_batch::<f64>(&spec);
        prop_assert_eq!(b.inputs.len(), l + 2 * k);
        prop_assert_eq!(b.targets.len(), l + 2 * k);
        for j in 0..batch {
            let ids: Vec<usize> = b.inputs.iter().map(|x| (0..x.rows()).find(|&r| x[(r, j)] == 1.0).unwrap()).collect();
            prop_assert_eq!(ids[l + k], START);
            for i in 0..k {
                prop_assert_eq!(b.targets[l + k + i][j], ids[i]);
                prop_assert!(ids[i] > START);
            }
            prop_assert!(b.targets[..l + k].iter().all(|t| t[j] == BLANK));
        }
    }

    #[test]
    fn unigram_entropy_is_bounded(ids in prop::collection::vec(0usize..16, 1..300)) {
        let h = unigram_entropy_bits(&ids, 16);
        prop_assert!((0.0..=4.0 + 1e-12).contains(&h));
    }
}
