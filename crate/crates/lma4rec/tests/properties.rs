//! Property tests over randomized inputs: differentiation correctness on
//! random shapes, softmax normalization, augmentation operator contracts,
//! and preprocessing idempotence.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lma4rec::augment::{
    build_correlation, crop, insert, mask_items, reorder, select_augmentation, substitute,
    AugmentConfig, AugmentOp,
};
use lma4rec::autodiff::{grad_check, Tape, Tensor};
use lma4rec::data::{five_core_filter, Interaction};

fn small_dims() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..4, 1..=3)
}

fn tensor_for(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n)
        .prop_map(move |data| Tensor::param(shape.clone(), data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn softmax_rows_always_sum_to_one(t in small_dims().prop_flat_map(tensor_for), shift in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let x = tape.constant(t.shape().to_vec(), t.data().to_vec()).unwrap();
        let y = tape.softmax_lastdim(x).unwrap();
        let n = *t.shape().last().unwrap();
        for row in tape.value(y).chunks(n) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        // shift invariance: adding a constant to the input leaves softmax unchanged
        let shifted_data: Vec<f64> = t.data().iter().map(|v| v + shift).collect();
        let xs = tape.constant(t.shape().to_vec(), shifted_data).unwrap();
        let ys = tape.softmax_lastdim(xs).unwrap();
        let (a, b) = (tape.value(y).to_vec(), tape.value(ys).to_vec());
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn elementwise_chain_passes_grad_check(t in small_dims().prop_flat_map(tensor_for)) {
        let err = grad_check(
            |tape, vars| {
                let s = tape.sigmoid(vars[0]);
                let sq = tape.mul(s, vars[0])?;
                let sp = tape.softplus(sq);
                Ok(tape.mean_all(sp))
            },
            &[t],
            1e-4,
        ).unwrap();
        prop_assert!(err < 1e-4, "max rel err {}", err);
    }

    #[test]
    fn matmul_layernorm_softmax_chain_passes_grad_check(
        m in 1usize..4, k in 1usize..4, n in 2usize..4,
        seed in 0u64..1_000_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize, cols: usize| {
            let data: Vec<f64> = (0..rows * cols).map(|_| rand::Rng::random_range(&mut rng, -1.5..1.5)).collect();
            Tensor::param(vec![rows, cols], data).unwrap()
        };
        let a = draw(m, k);
        let b = draw(k, n);
        let gain = Tensor::param(vec![n], vec![1.1; n]).unwrap();
        let bias = Tensor::param(vec![n], vec![-0.2; n]).unwrap();
        let err = grad_check(
            |tape, vars| {
                let p = tape.matmul(vars[0], vars[1])?;
                let ln = tape.layer_norm(p, vars[2], vars[3], 1e-6)?;
                let sm = tape.softmax_lastdim(ln)?;
                let sq = tape.mul(sm, sm)?;
                Ok(tape.sum_all(sq))
            },
            &[a, b, gain, bias],
            1e-4,
        ).unwrap();
        prop_assert!(err < 1e-4, "max rel err {}", err);
    }
}

fn item_seq() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..=30, 1..=40)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn augmentation_contracts_hold(seq in item_seq(), seed in 0u64..u64::MAX, ratio in 0.05f64..1.0) {
        let mask_token = 31u32;
        let table = {
            let refs: [&[u32]; 1] = [&seq];
            build_correlation(&refs, 30, 5, 10)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let cropped = crop(&seq, ratio, &mut rng);
        prop_assert!(!cropped.seq.is_empty());
        prop_assert!(seq.windows(cropped.seq.len()).any(|w| w == cropped.seq.as_slice()));

        let masked = mask_items(&seq, ratio, mask_token, &mut rng);
        prop_assert_eq!(masked.len(), seq.len());
        let mask_count = (ratio * seq.len() as f64).floor() as usize;
        prop_assert_eq!(masked.iter().filter(|&&i| i == mask_token).count(), mask_count);

        let reordered = reorder(&seq, ratio, &mut rng);
        let mut a = reordered.clone();
        let mut b = seq.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);

        let substituted = substitute(&seq, ratio, &table, &mut rng);
        prop_assert_eq!(substituted.len(), seq.len());

        let inserted = insert(&seq, ratio, &table, 50, &mut rng);
        prop_assert!(inserted.len() <= 50);
        prop_assert!(inserted.len() >= seq.len().min(50));

        // vocabulary closure over every operator output
        for out in [&cropped.seq, &masked, &reordered, &substituted, &inserted] {
            prop_assert!(out.iter().all(|&i| (1..=mask_token).contains(&i)));
        }
    }

    #[test]
    fn selection_is_deterministic_and_respects_the_length_rule(
        seq in item_seq(), seed in 0u64..u64::MAX,
    ) {
        let cfg = AugmentConfig::default();
        let refs: [&[u32]; 1] = [&seq];
        let table = build_correlation(&refs, 30, 5, 10);
        let one = select_augmentation(&seq, &cfg, &table, 31, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        let two = select_augmentation(&seq, &cfg, &table, 31, 50, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(&one, &two);
        prop_assert!(!one.seq.is_empty());
        if seq.len() <= cfg.short_sequence_threshold {
            prop_assert!(matches!(one.op, AugmentOp::Substitute | AugmentOp::Insert));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn five_core_filter_is_idempotent_when_nonempty(
        pairs in prop::collection::vec((0u8..12, 0u8..12), 30..120),
    ) {
        let interactions: Vec<Interaction> = pairs
            .iter()
            .enumerate()
            .map(|(t, (u, i))| Interaction {
                user: format!("u{u}"),
                item: format!("i{i}"),
                timestamp: t as i64,
            })
            .collect();
        if let Ok(once) = five_core_filter(interactions) {
            let twice = five_core_filter(once.clone()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
