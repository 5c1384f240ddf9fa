use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xnet::data::Dataset;
use xnet::mlp::{mlp_param_count, mlp_train, Activation, Mlp, MlpSpec};

fn spec_strategy() -> impl Strategy<Value = MlpSpec> {
    (
        prop::collection::vec(1usize..5, 2..5),
        prop::sample::select(vec![Activation::Tanh, Activation::Sigmoid]),
        any::<u64>(),
    )
        .prop_map(|(mut sizes, activation, seed)| {
            *sizes.last_mut().unwrap() = 1;
            MlpSpec { activation, seed, ..MlpSpec::new(sizes) }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_finite_differences(spec in spec_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = spec.layer_sizes[0];
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(x, y).unwrap();
        let mut net = Mlp::new(&spec).unwrap();
        let grad = net.gradient(&data);
        let p = net.params();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] = p[i] + h;
            net.set_params(&q);
            let up = net.loss(&data);
            q[i] = p[i] - h;
            net.set_params(&q);
            let down = net.loss(&data);
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-3);
            prop_assert!(rel <= 1e-5, "param {i}: {} vs {numeric}", grad[i]);
        }
        net.set_params(&p);
    }

    #[test]
    fn param_count_matches_enumeration(spec in spec_strategy()) {
        let mut entries = 0;
        for pair in spec.layer_sizes.windows(2) {
            for _out in 0..pair[1] {
                for _in in 0..pair[0] {
                    entries += 1;
                }
                entries += 1;
            }
        }
        prop_assert_eq!(mlp_param_count(&spec), entries);
        prop_assert_eq!(Mlp::new(&spec).unwrap().params().len(), entries);
    }
}

#[test]
fn hand_counts() {
    assert_eq!(mlp_param_count(&MlpSpec::new(vec![1, 8, 1])), 25);
    assert_eq!(mlp_param_count(&MlpSpec::new(vec![1, 1])), 2);
    assert_eq!(mlp_param_count(&MlpSpec::new(vec![2, 14, 1])), 57);
}

#[test]
fn linear_target_is_learned_deterministically() {
    let x: Vec<Vec<f64>> = (0..40).map(|i| vec![-1.0 + i as f64 / 20.0]).collect();
    let y = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
    let data = Dataset::new(x, y).unwrap();
    let spec = MlpSpec::new(vec![1, 4, 1]);
    let a = mlp_train(&data, &spec, 0.99).unwrap();
    let b = mlp_train(&data, &spec, 0.99).unwrap();
    assert!(a.r2_train >= 0.99);
    assert_eq!(a, b);
}
