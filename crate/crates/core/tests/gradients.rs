mod common;

use caae_core::neural::{Activation, LossSpec};
use caae_core::seed;
use common::*;
use proptest::prelude::*;
use rand::Rng;

const TOL: f64 = 1e-4;

fn hidden_act(code: u8) -> Activation {
    match code % 3 {
        0 => Activation::Relu,
        1 => Activation::Tanh,
        _ => Activation::Identity,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mse_gradients_match_differences(s in any::<u64>(), widths in proptest::collection::vec(1usize..=64, 2..=4), acts in proptest::collection::vec(any::<u8>(), 3), out_act in 0u8..3) {
        let mut rng = seed::rng(s);
        let acts: Vec<Activation> = (0..widths.len() - 1)
            .map(|i| if i + 2 == widths.len() {
                [Activation::Identity, Activation::Tanh, Activation::Softmax][out_act as usize]
            } else {
                hidden_act(acts[i])
            })
            .collect();
        let net = random_net(&mut rng, &widths, &acts);
        let x = smooth_batch(&mut rng, &[&net], 3, widths[0]);
        let target = random_matrix(&mut rng, 3, *widths.last().unwrap(), 1.0);
        let err = check_single(&mut rng, &net, &x, LossSpec::mse(1.0), &target);
        prop_assert!(err < TOL, "rel err {err}");
    }

    #[test]
    fn cross_entropy_gradients_match_differences(s in any::<u64>(), widths in proptest::collection::vec(2usize..=64, 2..=4), acts in proptest::collection::vec(any::<u8>(), 3), logits in any::<bool>()) {
        let mut rng = seed::rng(s);
        let n = widths.len() - 1;
        let acts: Vec<Activation> = (0..n)
            .map(|i| if i + 1 == n {
                if logits { Activation::Identity } else { Activation::Softmax }
            } else {
                hidden_act(acts[i])
            })
            .collect();
        let net = random_net(&mut rng, &widths, &acts);
        let x = smooth_batch(&mut rng, &[&net], 4, widths[0]);
        let target = random_targets(&mut rng, 4, *widths.last().unwrap());
        let w = rng.random_range(0.1..2.0);
        let err = check_single(&mut rng, &net, &x, LossSpec::cross_entropy(w), &target);
        prop_assert!(err < TOL, "rel err {err}");
    }

    #[test]
    fn composite_gradients_match_differences(s in any::<u64>(), d in 1usize..=16, input in 2usize..=24, users in 2usize..=8, lambda_id in 0.0f64..3.0) {
        let mut rng = seed::rng(s);
        let enc = random_net(&mut rng, &[input, 16, d], &[Activation::Tanh, Activation::Tanh]);
        let dec = random_net(&mut rng, &[d, 16, input], &[Activation::Tanh, Activation::Identity]);
        let head = random_net(&mut rng, &[d, 8, users], &[Activation::Relu, Activation::Softmax]);
        let x = smooth_batch(&mut rng, &[&enc, &head], 4, input);
        let u = random_targets(&mut rng, 4, users);
        let err = check_composite(&mut rng, &enc, &dec, &head, &x, &u, 1.0, lambda_id);
        prop_assert!(err < TOL, "rel err {err}");
    }
}
