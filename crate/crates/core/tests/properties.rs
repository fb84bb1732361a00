//! Property tests over the engine invariants.

use proptest::prelude::*;
use splitstream_core::layers::{
    activation_forward, conv2d_forward, pool2d_forward, ActivationKind, ConvLayer, PoolLayer,
    PoolMode,
};
use splitstream_core::loss::{loss_forward, LossKind};
use splitstream_core::Tensor;

prop_compose! {
    fn image(max_side: usize)(
        h in 2usize..=8,
        w in 2usize..=8,
        c in 1usize..=3,
        seed in any::<u64>(),
    ) -> Tensor<f32> {
        let _ = max_side;
        let mut rng = splitstream_core::XorShift64::new(seed);
        Tensor::new(vec![h * 2, w * 2, c],
            (0..h * 2 * w * 2 * c).map(|_| rng.uniform(-2.0, 2.0) as f32).collect()).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_output_dims_are_exact(h in 3usize..=12, w in 3usize..=12, k in 1usize..=3) {
        prop_assume!(k <= h && k <= w);
        let layer = ConvLayer::new(k, 1, 2,
            Tensor::zeros(vec![k, k, 1, 2]), Tensor::zeros(vec![2])).unwrap();
        let out = conv2d_forward(&Tensor::<f32>::zeros(vec![h, w, 1]), &layer).unwrap();
        prop_assert_eq!(out.dims(), &[h - k + 1, w - k + 1, 2]);
    }

    #[test]
    fn max_pool_dominates_avg_pool(input in image(16)) {
        let max = pool2d_forward(&input, &PoolLayer { window: 2, mode: PoolMode::Max }).unwrap();
        let avg = pool2d_forward(&input, &PoolLayer { window: 2, mode: PoolMode::Avg }).unwrap();
        for (m, a) in max.data().iter().zip(avg.data()) {
            prop_assert!(m >= a, "max {} < avg {}", m, a);
        }
    }

    #[test]
    fn avg_pool_preserves_channel_means(input in image(16)) {
        let avg = pool2d_forward(&input, &PoolLayer { window: 2, mode: PoolMode::Avg }).unwrap();
        let c = input.dims()[2];
        for ch in 0..c {
            let mean_in: f64 = (0..input.dims()[0])
                .flat_map(|y| (0..input.dims()[1]).map(move |x| (y, x)))
                .map(|(y, x)| input.at3(y, x, ch) as f64)
                .sum::<f64>() / (input.dims()[0] * input.dims()[1]) as f64;
            let mean_out: f64 = (0..avg.dims()[0])
                .flat_map(|y| (0..avg.dims()[1]).map(move |x| (y, x)))
                .map(|(y, x)| avg.at3(y, x, ch) as f64)
                .sum::<f64>() / (avg.dims()[0] * avg.dims()[1]) as f64;
            prop_assert!((mean_in - mean_out).abs() < 1e-6,
                "channel {} mean drifted: {} vs {}", ch, mean_in, mean_out);
        }
    }

    #[test]
    fn sigmoid_strictly_inside_unit_interval(x in -500.0f32..500.0) {
        let out = activation_forward(&Tensor::from_vec(vec![x]), ActivationKind::Sigmoid);
        let v = out.data()[0];
        prop_assert!(v > 0.0 && v < 1.0, "sigmoid({}) = {}", x, v);
    }

    #[test]
    fn leaky_relu_is_identity_on_nonnegatives(x in 0.0f32..1e6) {
        let out = activation_forward(
            &Tensor::from_vec(vec![x]),
            ActivationKind::leaky_relu_default(),
        );
        prop_assert_eq!(out.data()[0], x);
    }

    #[test]
    fn msle_zero_on_self_and_losses_nonnegative(seed in any::<u64>(), n in 1usize..32) {
        let mut rng = splitstream_core::XorShift64::new(seed);
        let y: Vec<f32> = (0..n).map(|_| rng.uniform(0.0, 100.0) as f32).collect();
        let p: Vec<f32> = (0..n).map(|_| rng.uniform(0.0, 100.0) as f32).collect();
        let yt = Tensor::from_vec(y);
        let pt = Tensor::from_vec(p);
        prop_assert_eq!(loss_forward(&yt, &yt, LossKind::Msle).unwrap(), 0.0);
        prop_assert!(loss_forward(&yt, &pt, LossKind::Msle).unwrap() >= 0.0);
        prop_assert!(loss_forward(&yt, &pt, LossKind::Mse).unwrap() >= 0.0);
    }

    #[test]
    fn forward_ops_are_deterministic(input in image(16)) {
        let layer = ConvLayer::new(2, input.dims()[2], 2,
            Tensor::filled(vec![2, 2, input.dims()[2], 2], 0.3f32),
            Tensor::zeros(vec![2])).unwrap();
        let a = conv2d_forward(&input, &layer).unwrap();
        let b = conv2d_forward(&input, &layer).unwrap();
        prop_assert_eq!(a, b);
    }
}
