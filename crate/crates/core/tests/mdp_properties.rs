#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use fail_core::environments::{
    make_lipschitz_chain, make_abstraction_mdp, make_tree_mdp, random_mdp, random_policy, row_lipschitz,
    value_block_spread, RandomMdpConfig, Smoothness,
};
use fail_core::mdp::{
    exact_state_distribution, exact_value, performance_difference, push_forward, rollout, state_distributions, Mdp,
    PolicySequence,
};
use fail_core::Seed;
use proptest::prelude::*;

fn instance(seed: u64, horizon: usize, max_obs: usize, actions: usize) -> (Mdp, PolicySequence, PolicySequence) {
    let config = RandomMdpConfig {
        horizon,
        min_obs: 1,
        max_obs,
        actions,
        support: max_obs,
    };
    let mdp = random_mdp(&config, Seed(seed)).unwrap();
    let a = random_policy(&mdp, Seed(seed).split(1));
    let b = random_policy(&mdp, Seed(seed).split(2));
    (mdp, a, b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pdl_terms_sum_to_gap(seed in any::<u64>(), horizon in 2usize..=6, max_obs in 1usize..=20, actions in 1usize..=4) {
        let (mdp, pi, star) = instance(seed, horizon, max_obs, actions);
        let pdl = performance_difference(&mdp, &pi, &star).unwrap();
        let direct = exact_value(&mdp, &pi).unwrap() - exact_value(&mdp, &star).unwrap();
        prop_assert!((pdl.per_step_terms.iter().sum::<f64>() - direct).abs() <= 1e-9);
    }

    #[test]
    fn marginals_push_forward(seed in any::<u64>(), horizon in 2usize..=6, max_obs in 1usize..=12, actions in 1usize..=4) {
        let (mdp, pi, _) = instance(seed, horizon, max_obs, actions);
        let dists = state_distributions(&mdp, &pi);
        for h in 0..mdp.horizon() - 1 {
            // Independent accumulation over the dense transition rows.
            let mut next = vec![0.0; mdp.obs_count(h + 1)];
            for x in 0..mdp.obs_count(h) {
                for a in 0..mdp.action_count() {
                    for (y, p) in mdp.transition_dense(h, x, a).iter().enumerate() {
                        next[y] += dists[h][x] * pi.0[h].prob(x, a) * p;
                    }
                }
            }
            for (u, v) in next.iter().zip(&dists[h + 1]) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
            let direct = exact_state_distribution(&mdp, &pi, h + 1).unwrap();
            prop_assert_eq!(&direct, &dists[h + 1]);
            prop_assert_eq!(&push_forward(&mdp, h, &dists[h], &pi.0[h]), &dists[h + 1]);
        }
    }

    #[test]
    fn value_in_unit_interval(seed in any::<u64>(), horizon in 1usize..=6, max_obs in 1usize..=10, actions in 1usize..=4) {
        let (mdp, pi, _) = instance(seed, horizon, max_obs, actions);
        let j = exact_value(&mdp, &pi).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
    }

    #[test]
    fn json_round_trip(seed in any::<u64>(), horizon in 1usize..=4) {
        let (mdp, _, _) = instance(seed, horizon, 5, 2);
        let back = Mdp::from_json(&mdp.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, mdp);
    }

    #[test]
    fn tree_paths_reach_one_leaf(horizon in 2usize..=8, path in proptest::collection::vec(0usize..2, 7)) {
        let leaves = 1usize << (horizon - 1);
        let mut costs = vec![1.0; leaves];
        costs[0] = 0.0;
        let (mdp, _) = make_tree_mdp(horizon, &costs).unwrap();
        for h in 0..horizon {
            prop_assert_eq!(mdp.obs_count(h), 1usize << h);
        }
        let mut x = 0;
        for (h, &a) in path.iter().take(horizon - 1).enumerate() {
            let row = mdp.transition(h, x, a);
            prop_assert_eq!(row.len(), 1);
            x = row[0].0;
        }
        prop_assert_eq!(x, fail_core::environments::tree_leaf(&path[..horizon - 1]));
    }

    #[test]
    fn lifted_values_constant_on_blocks(seed in any::<u64>(), m in 1usize..=3, s in 1usize..=3) {
        let (mdp, expert) = make_abstraction_mdp(m, s, 4, 2, Seed(seed)).unwrap();
        prop_assert!(value_block_spread(&mdp, &expert).unwrap() <= 1e-9);
    }
}

#[test]
fn lipschitz_chain_inequalities_hold_on_all_pairs() {
    for seed in 0..5 {
        let sm = Smoothness { transition: 2.0, policy: 1.5 };
        let (mdp, expert) = make_lipschitz_chain(12, 3, 2, sm, Seed(seed)).unwrap();
        let metric = &mdp.metric().unwrap()[0];
        for h in 0..mdp.horizon() - 1 {
            for a in 0..mdp.action_count() {
                let rows: Vec<Vec<f64>> = (0..12).map(|x| mdp.transition_dense(h, x, a)).collect();
                for x in 0..12 {
                    for y in 0..12 {
                        let l1: f64 = rows[x].iter().zip(&rows[y]).map(|(p, q)| (p - q).abs()).sum();
                        assert!(l1 <= sm.transition * metric.get(x, y) + 1e-9);
                    }
                }
                assert!(row_lipschitz(&rows, metric) <= sm.transition + 1e-9);
            }
            for x in 0..12 {
                for y in 0..12 {
                    let l1: f64 = expert.0[h].row(x).iter().zip(expert.0[h].row(y)).map(|(p, q)| (p - q).abs()).sum();
                    assert!(l1 <= sm.policy * metric.get(x, y) + 1e-9);
                }
            }
        }
    }
}

#[test]
fn monte_carlo_value_within_three_sigma() {
    for seed in 0..5 {
        let (mdp, pi, _) = instance(100 + seed, 4, 6, 3);
        let exact = exact_value(&mdp, &pi).unwrap();
        let n = 4000;
        let costs: Vec<f64> = (0..n)
            .map(|i| rollout(&mdp, &pi, Seed(seed).split(i), None).unwrap().terminal_cost.unwrap())
            .collect();
        let mean = costs.iter().sum::<f64>() / n as f64;
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "seed {seed}: {mean} vs {exact} (se {se})");
    }
}
