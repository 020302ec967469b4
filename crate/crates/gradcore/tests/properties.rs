use gradcore::{Graph, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn slice_and_concat_round_trip(rows in 1usize..12, cols in 1usize..6, cut in 0usize..12) {
        let cut = cut.min(rows);
        let data: Vec<f64> = (0..rows * cols).map(|i| i as f64 * 0.5).collect();
        let t = Tensor::from_vec(&[rows, cols], data).unwrap();
        let (a, b) = (t.slice_rows(0, cut), t.slice_rows(cut, rows));
        let joined = Tensor::concat_rows(&[&a, &b]).unwrap();
        prop_assert_eq!(joined.data(), t.data());
        prop_assert_eq!(joined.shape(), t.shape());
    }

    #[test]
    fn cross_entropy_ignores_logit_shift(
        logits in prop::collection::vec(-5.0f64..5.0, 12),
        shift in -50.0f64..50.0,
        target in 0usize..4,
    ) {
        let loss = |v: Vec<f64>| {
            let mut g = Graph::no_grad();
            let x = g.input(Tensor::from_vec(&[3, 4], v).unwrap());
            let l = g.cross_entropy(x, &[target, (target + 1) % 4, 0], None).unwrap();
            g.value(l).item()
        };
        let base = loss(logits.clone());
        let moved = loss(logits.iter().map(|v| v + shift).collect());
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() < 1e-9);
    }
}
