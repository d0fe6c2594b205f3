use deltatok_nn::{pairwise_sum, Graph, ParamStore, Tensor};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 1usize..9).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c))
    })
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions((r, c, data) in matrix()) {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::new(vec![r, c], data).unwrap()).unwrap();
        let y = g.softmax_rows(x).unwrap();
        let y = g.value(y);
        prop_assert!(y.is_finite());
        for i in 0..r {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(y.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn pairwise_sum_is_close_to_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..300)) {
        let naive: f64 = xs.iter().sum();
        let scale = xs.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
        prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-12 * scale);
    }

    #[test]
    fn tensor_cast_round_trips_f32((r, c, data) in matrix()) {
        let t = Tensor::new(vec![r, c], data.iter().map(|&v| v as f32 as f64).collect()).unwrap();
        prop_assert_eq!(t.cast::<f32>().cast::<f64>(), t);
    }
}
