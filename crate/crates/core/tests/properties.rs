use std::sync::Arc;

use fusion_core::data_io::LabeledExample;
use fusion_core::network::{attention_pool, cln_forward, init_params, ArchConfig, FeatureBatch};
use fusion_core::replay::ReservoirBuffer;
use fusion_core::tasks::compute_balancing_vector;
use proptest::prelude::*;

fn arch(f: usize) -> ArchConfig {
    ArchConfig {
        image_size: 8,
        conv_width: 2,
        trunk_hidden: 6,
        feature_dim: f,
        attention_hidden: Some(3),
        cln_hidden: 5,
        num_outputs: 4,
        ..ArchConfig::default()
    }
}

fn batch() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..6, 1usize..10).prop_flat_map(|(f, k)| (Just(f), prop::collection::vec(-50.0f64..50.0, f * k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pooling_ignores_row_order((f, data) in batch(), seed in 0u64..1000, rot in 0usize..10) {
        let p = init_params(&arch(f), seed).unwrap();
        let k = data.len() / f;
        let r = FeatureBatch::new(k, f, data.clone()).unwrap();
        let mut rows: Vec<&[f64]> = data.chunks(f).collect();
        rows.rotate_left(rot % k);
        let r2 = FeatureBatch::new(k, f, rows.concat()).unwrap();
        let a = attention_pool(&p, &r).unwrap();
        let b = attention_pool(&p, &r2).unwrap();
        for (x, y) in a.me.iter().zip(&b.me) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn pooled_point_is_in_the_hull((f, data) in batch(), seed in 0u64..1000) {
        let p = init_params(&arch(f), seed).unwrap();
        let k = data.len() / f;
        let m = attention_pool(&p, &FeatureBatch::new(k, f, data.clone()).unwrap()).unwrap();
        prop_assert!((m.alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for j in 0..f {
            let col: Vec<f64> = (0..k).map(|i| data[i * f + j]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.me[j] >= lo - 1e-9 && m.me[j] <= hi + 1e-9);
        }
    }

    #[test]
    fn classifier_logits_are_finite(x in prop::collection::vec(-1e3f64..1e3, 4), seed in 0u64..500) {
        let p = init_params(&arch(4), seed).unwrap();
        let z = cln_forward(&p, &x).unwrap();
        prop_assert_eq!(z.len(), 4);
        prop_assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn reservoir_holds_min_of_capacity_and_seen(cap in 1usize..20, n in 0usize..100, seed in any::<u64>()) {
        let mut buf = ReservoirBuffer::new(cap, seed).unwrap();
        let x: Arc<[f64]> = Arc::from(vec![0.0]);
        for i in 0..n {
            buf.insert(LabeledExample { x: x.clone(), y: i, origin: Some(i) });
        }
        prop_assert_eq!(buf.len(), cap.min(n));
        let mut ys: Vec<usize> = buf.items().iter().map(|e| e.y).collect();
        ys.sort_unstable();
        ys.dedup();
        prop_assert_eq!(ys.len(), buf.len());
        prop_assert!(ys.iter().all(|&y| y < n));
    }

    #[test]
    fn balancing_weights_lie_in_unit_interval(sizes in prop::collection::vec(1usize..200, 1..30)) {
        let b = compute_balancing_vector(&sizes, 1e-8).unwrap();
        prop_assert!(b.gamma_norm.iter().all(|w| (0.0..=1.0).contains(w)));
        let min = *sizes.iter().min().unwrap();
        let max = *sizes.iter().max().unwrap();
        for (s, w) in sizes.iter().zip(&b.gamma_norm) {
            if min == max {
                prop_assert_eq!(*w, 1.0);
            } else if *s == min {
                prop_assert_eq!(*w, 1.0);
            } else if *s == max {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }
}
