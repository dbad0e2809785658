//! Property tests for the normalization and invariance contracts.

use hrkd_core::graph::{self, compute_ratios, GraphConfig};
use hrkd_core::losses::pred_loss;
use hrkd_core::params::{ParamInit, ParamSet};
use hrkd_core::tape::Tape;
use hrkd_core::tensor::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_rows_always_sum_to_one(
        values in proptest::collection::vec(-50.0f64..50.0, 12)
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3, 4], values).unwrap());
        let s = tape.softmax(x, 1).unwrap();
        for r in 0..3 {
            let sum: f64 = tape.data(s)[r * 4..(r + 1) * 4].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pred_loss_shift_invariance(
        z_s in proptest::collection::vec(-5.0f64..5.0, 4),
        z_t in proptest::collection::vec(-5.0f64..5.0, 4),
        shift in -20.0f64..20.0,
        temp in 0.25f64..4.0,
    ) {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(z_s.clone()));
        let b = tape.constant(Tensor::row(z_t.clone()));
        let a2 = tape.constant(Tensor::row(z_s.iter().map(|v| v + shift).collect()));
        let b2 = tape.constant(Tensor::row(z_t.iter().map(|v| v + shift).collect()));
        let base = pred_loss(&mut tape, &[a], &[b], temp).unwrap();
        let shifted = pred_loss(&mut tape, &[a2], &[b2], temp).unwrap();
        let x = tape.scalar_value(base).unwrap();
        let y = tape.scalar_value(shifted).unwrap();
        prop_assert!((x - y).abs() < 1e-8, "{} vs {}", x, y);
    }

    #[test]
    fn ratio_rows_are_always_normalized(seed in 0u64..500, domains in 1usize..6) {
        let cfg = GraphConfig { layers: 1, in_dim: 3, hidden_dim: 2, heads: 2 };
        let mut init = ParamInit::new(seed);
        let mut params = ParamSet::new();
        graph::append_params(&mut params, &mut init, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, false);
        let mut cursor = 0;
        let layers = graph::bind(&vars, &mut cursor, &cfg);
        let rows: Vec<Vec<f64>> = (0..domains)
            .map(|_| (0..3).map(|_| init.normal(2.0)).collect())
            .collect();
        let input = tape.constant(Tensor::from_rows(&rows).unwrap());
        let out = compute_ratios(&mut tape, &[input], &layers).unwrap();
        let r = tape.data(out.rows[0]);
        let sum: f64 = r.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(r.iter().all(|&v| v > 0.0));
    }
}
