mod common;

use mmh_core::markov_chain::{occupation_integral, sample_path, transition_probabilities};
use mmh_core::rng::path_stream;
use mmh_core::MarkovChainSpec;
use proptest::prelude::*;

fn chain_strategy() -> impl Strategy<Value = MarkovChainSpec> {
    (2usize..=4)
        .prop_flat_map(|n| proptest::collection::vec(0.0f64..4.0, n * n).prop_map(move |v| (n, v)))
        .prop_map(|(n, v)| {
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                let mut sum = 0.0;
                for j in 0..n {
                    if i != j {
                        rows[i][j] = v[i * n + j];
                        sum += v[i * n + j];
                    }
                }
                rows[i][i] = -sum;
            }
            MarkovChainSpec::new(&rows).unwrap()
        })
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_rows_are_distributions(spec in chain_strategy(), t in 0.0f64..20.0) {
        for row in transition_probabilities(&spec, t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn semigroup(spec in chain_strategy(), s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let lhs = matmul(&transition_probabilities(&spec, s), &transition_probabilities(&spec, t));
        let rhs = transition_probabilities(&spec, s + t);
        for (l, r) in lhs.iter().flatten().zip(rhs.iter().flatten()) {
            prop_assert!((l - r).abs() < 1e-8);
        }
    }

    #[test]
    fn occupation_is_additive(spec in chain_strategy(), seed in any::<u64>(), t in 0.0f64..2.0, u in 2.0f64..4.0) {
        let mut rng = path_stream(seed, 0);
        let path = sample_path(&spec, 0.0, 5.0, 0, &mut rng).unwrap();
        let g = |s: f64, e: usize| (1.0 + e as f64) * (0.3 * s).sin() + 0.1 * e as f64;
        let whole = occupation_integral(&path, g, t, 5.0);
        let split = occupation_integral(&path, g, t, u) + occupation_integral(&path, g, u, 5.0);
        prop_assert!((whole - split).abs() < 1e-10);
    }
}

#[test]
fn empirical_distribution_matches_transition_matrix() {
    let mut rng = common::rng(3);
    for n in 2..=3 {
        let spec = common::random_chain(&mut rng, n);
        let t = 0.8;
        let paths = 100_000;
        let mut counts = vec![0usize; n];
        for i in 0..paths {
            let mut r = path_stream(40 + n as u64, i as u64);
            let path = sample_path(&spec, 0.0, 2.0, 0, &mut r).unwrap();
            counts[path.state_at(t)] += 1;
        }
        let p = &transition_probabilities(&spec, t)[0];
        for j in 0..n {
            let freq = counts[j] as f64 / paths as f64;
            let se = (p[j] * (1.0 - p[j]) / paths as f64).sqrt();
            assert!((freq - p[j]).abs() < 3.0 * se, "state {j}: {freq} vs {}", p[j]);
        }
    }
}

#[test]
fn sampled_paths_are_reproducible() {
    let spec = common::random_chain(&mut common::rng(5), 3);
    let a = sample_path(&spec, 0.0, 5.0, 1, &mut path_stream(9, 17)).unwrap();
    let b = sample_path(&spec, 0.0, 5.0, 1, &mut path_stream(9, 17)).unwrap();
    let c = sample_path(&spec, 0.0, 5.0, 1, &mut path_stream(9, 18)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
