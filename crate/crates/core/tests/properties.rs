//! Property tests for the data plans, the loss gradients, the schedule,
//! and the step-size bound.

use std::collections::BTreeSet;

use proptest::prelude::*;

use tdcd::data::{make_partition, standardize, synth_regression, RowScheme};
use tdcd::loss::{
    estimate_lipschitz, full_gradient, max_step_size, LipschitzInfo, LipschitzMethod, LossSpec,
};
use tdcd::oracle::finite_diff_gradient;
use tdcd::protocol::{MinibatchSchedule, Sampling};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_covers_columns_and_rows(
        m in 1usize..60,
        d in 1usize..20,
        n in 1usize..6,
        k in 1usize..6,
        scheme in prop_oneof![Just(RowScheme::Contiguous), Just(RowScheme::Strided)],
        seed in any::<u64>(),
    ) {
        prop_assume!(n <= d && k <= m);
        let plan = make_partition(m, d, n, k, None, scheme, Some(seed)).unwrap();
        // Vertical blocks concatenate to 0..d exactly.
        let mut expected_start = 0;
        for (start, end) in &plan.vertical_blocks {
            prop_assert_eq!(*start, expected_start);
            prop_assert!(end > start);
            expected_start = *end;
        }
        prop_assert_eq!(expected_start, d);
        // Each silo's shards partition 0..m.
        for silo in 0..n {
            let mut seen = vec![false; m];
            for shard in &plan.row_assignment[silo] {
                prop_assert!(shard.windows(2).all(|w| w[0] < w[1]));
                for &row in shard {
                    prop_assert!(!seen[row], "row {} assigned twice", row);
                    seen[row] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
        }
        if plan.equal_split {
            prop_assert_eq!(m % k, 0);
        }
    }

    #[test]
    fn standardize_twice_is_identity(seed in any::<u64>(), m in 2usize..30, d in 1usize..6) {
        let (ds, _) = synth_regression(seed, m, d, 1.0);
        // Degenerate draws could produce a constant column; skip those.
        let Ok(once) = standardize(&ds, &BTreeSet::new()) else { return Ok(()); };
        let twice = standardize(&once, &BTreeSet::new()).unwrap();
        for (a, b) in once.features.data().iter().zip(twice.features.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_data_is_pure_in_its_arguments(seed in any::<u64>()) {
        let (a, wa) = synth_regression(seed, 12, 3, 0.5);
        let (b, wb) = synth_regression(seed, 12, 3, 0.5);
        prop_assert_eq!(a.features.data(), b.features.data());
        prop_assert_eq!(a.labels, b.labels);
        prop_assert_eq!(wa, wb);
    }

    #[test]
    fn schedule_is_deterministic_and_stratified(
        seed in any::<u64>(),
        round in 0u64..1000,
        k in 1usize..5,
    ) {
        let m = 20;
        let plan = make_partition(m, 4, 2, k, None, RowScheme::Contiguous, None).unwrap();
        let b = k * 2;
        let a = MinibatchSchedule::draw(seed, round, 3, b, Sampling::Stratified, &plan).unwrap();
        let again = MinibatchSchedule::draw(seed, round, 3, b, Sampling::Stratified, &plan).unwrap();
        prop_assert_eq!(&a, &again);
        for batch in &a.batches {
            prop_assert_eq!(batch.len(), b);
            for (shard_idx, shard) in plan.row_assignment[0].iter().enumerate() {
                let hits = batch.iter().filter(|i| shard.contains(i)).count();
                prop_assert_eq!(hits, 2, "shard {}", shard_idx);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences(
        seed in any::<u64>(),
        m in 2usize..30,
        d in 1usize..10,
        lambda in 0.0f64..2.0,
        logistic in any::<bool>(),
    ) {
        let (mut ds, w) = synth_regression(seed, m, d, 0.5);
        let spec = if logistic {
            for y in ds.labels.iter_mut() {
                *y = if *y > 0.0 { 1.0 } else { 0.0 };
            }
            LossSpec::logistic(lambda)
        } else {
            LossSpec::ridge(lambda)
        };
        let exact = full_gradient(&spec, &ds, &w);
        let fd = finite_diff_gradient(&spec, &ds, &w, 1e-6);
        for i in 0..d {
            prop_assert!(
                (exact[i] - fd[i]).abs() <= 1e-6 * fd[i].abs().max(1.0),
                "coord {}: {} vs {}", i, exact[i], fd[i]
            );
        }
    }

    #[test]
    fn step_size_bound_sits_exactly_on_the_boundary(
        l in 0.01f64..100.0,
        ratio in 0.01f64..1.0,
        q in 1usize..32,
    ) {
        let info = LipschitzInfo {
            l,
            l_blocks: vec![l * ratio],
            l_max: l * ratio,
            method: LipschitzMethod::Exact,
        };
        let eta = max_step_size(&info, q);
        let condition = |e: f64| 1.0 - e * l - e * e * info.l_max * info.l_max * (q * q) as f64;
        prop_assert!(condition(eta).abs() <= 1e-12);
        prop_assert!(condition(eta * 0.5) > 0.0);
        prop_assert!(condition(eta * 1.01) < 0.0);
    }

    #[test]
    fn block_constants_never_exceed_global(seed in any::<u64>(), n in 1usize..5) {
        let (ds, _) = synth_regression(seed, 25, 8, 0.3);
        let plan = make_partition(25, 8, n, 1, None, RowScheme::Contiguous, None).unwrap();
        let info = estimate_lipschitz(
            &LossSpec::ridge(0.1),
            &ds,
            &plan,
            LipschitzMethod::Exact,
        ).unwrap();
        prop_assert!(info.l_max <= info.l * (1.0 + 1e-9));
        prop_assert!(info.l > 0.0 && info.l_blocks.iter().all(|x| *x > 0.0));
    }
}
