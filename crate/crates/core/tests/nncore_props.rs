use dupforge::nncore::{
    bce_loss, conv2d, cosine_sim, lstm_step, LstmParams, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vecs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #[test]
    fn lstm_hidden_is_bounded(seed in 0u64..1000, x in vecs(3), h in vecs(4), c in vecs(4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = LstmParams::<f64>::new(3, 4, &mut rng);
        let (h2, c2) = lstm_step(&x, &h, &c, &p).unwrap();
        prop_assert!(h2.iter().all(|v| v.abs() < 1.0));
        prop_assert!(c2.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn conv_is_additive(seed in 0u64..1000, stride in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = Tensor::<f64>::uniform(&[2, 2, 3, 3], 1.0, &mut rng);
        let zero = Tensor::zeros(&[2]);
        let x1 = Tensor::<f64>::uniform(&[2, 6, 6], 1.0, &mut rng);
        let x2 = Tensor::<f64>::uniform(&[2, 6, 6], 1.0, &mut rng);
        let sum: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect();
        let xs = Tensor::new(&[2, 6, 6], sum).unwrap();
        let (y1, y2, ys) = (
            conv2d(&x1, &k, &zero, stride).unwrap(),
            conv2d(&x2, &k, &zero, stride).unwrap(),
            conv2d(&xs, &k, &zero, stride).unwrap(),
        );
        for i in 0..ys.len() {
            let expect = y1.data()[i] + y2.data()[i];
            prop_assert!((ys.data()[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn cosine_symmetric_and_scale_invariant(u in vecs(5), v in vecs(5), alpha in 0.01f64..100.0) {
        let s = cosine_sim(&u, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(s, cosine_sim(&v, &u).unwrap());
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((cosine_sim(&scaled, &v).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn bce_nonnegative(p in 0.0f64..=1.0, y in 0u8..=1) {
        prop_assert!(bce_loss(p, y as f64) >= 0.0);
    }
}
