//! Self-contained experiments: tree separation between observation-only
//! identification and random search, the overlap of small samples from huge
//! observation sets, and cross-checks of the Lipschitz program.

use crate::discriminators::{lipschitz_best_response, HandleRepr, WeightedSample, WITNESS_TOL};
use crate::environments::{make_tree_mdp, separation_leaf_costs};
use crate::error::Result;
use crate::fail::{tree_identify_expert, MeteredEnv};
use crate::mdp::rollout;
use crate::oracle::{bounded_lipschitz_transport, lipschitz_grid_max, LipschitzInstance};
use crate::rng::Seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

/// Largest random-search budget.
pub const RL_BUDGET_CAP: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub horizon: usize,
    pub seed: u64,
    pub ilfo_trajectories: usize,
    pub ilfo_success: bool,
    pub rl_budget: usize,
    pub rl_trajectories: usize,
    pub rl_success: bool,
}

pub fn rl_budget(horizon: usize, factor: f64) -> usize {
    ((factor * 2.0 * (horizon - 1) as f64).floor() as usize).min(RL_BUDGET_CAP)
}

/// One tree with a seeded 0-cost leaf. Identification gets one expert
/// observation sequence; random search plays uniform action sequences until
/// it reaches the 0-cost leaf or exhausts its budget.
pub fn separation_run(horizon: usize, rl_budget_factor: f64, seed: Seed) -> Result<SeparationRow> {
    let leaves = 1usize << (horizon.max(2) - 1);
    let target = seed.split(0).rng().random_range(0..leaves);
    let (mdp, expert) = make_tree_mdp(horizon, &separation_leaf_costs(horizon, target))?;
    let expert_obs = rollout(&mdp, &expert, seed.split(1), None)?.observations;

    let mut env = MeteredEnv::new(&mdp);
    let actions = tree_identify_expert(&mut env, &expert_obs, seed.split(2))?;
    let ilfo_trajectories = env.trajectories();
    let ilfo_success = env.execute(&actions, seed.split(3))?.terminal_cost == Some(0.0);

    let budget = rl_budget(horizon, rl_budget_factor);
    let mut rl_env = MeteredEnv::new(&mdp);
    let mut rng = seed.split(4).rng();
    let mut rl_success = false;
    let mut plan = vec![0; horizon - 1];
    for i in 0..budget {
        for a in plan.iter_mut() {
            *a = rng.random_range(0..2);
        }
        if rl_env.execute(&plan, seed.split2(5, i as u64))?.terminal_cost == Some(0.0) {
            rl_success = true;
            break;
        }
    }
    Ok(SeparationRow {
        horizon,
        seed: seed.0,
        ilfo_trajectories,
        ilfo_success,
        rl_budget: budget,
        rl_trajectories: rl_env.trajectories(),
        rl_success,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub states: usize,
    pub samples: usize,
    pub seed: u64,
    /// Distinct observations shared by the expert set and the set of the
    /// policy that acts like the expert.
    pub overlap_same_policy: usize,
    /// Same for the policy that takes the other action.
    pub overlap_other_policy: usize,
    pub l1_same_policy: f64,
    pub l1_other_policy: f64,
}

/// `sum_x |p_hat(x) - q_hat(x)|` between empirical histograms.
pub fn empirical_l1(a: &[usize], b: &[usize]) -> f64 {
    let mut mass: HashMap<usize, f64> = HashMap::new();
    for &x in a {
        *mass.entry(x).or_default() += 1.0 / a.len() as f64;
    }
    for &x in b {
        *mass.entry(x).or_default() -= 1.0 / b.len() as f64;
    }
    let mut vals: Vec<f64> = mass.into_values().collect();
    vals.sort_by(f64::total_cmp);
    vals.iter().map(|v| v.abs()).sum()
}

pub fn overlap(a: &[usize], b: &[usize]) -> usize {
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    sa.intersection(&sb).count()
}

/// Two actions from a single start observation over `states` next
/// observations: the expert's action lands uniformly on the upper half,
/// the other action uniformly on the lower half. Draws `samples`
/// next-observations for the expert, for a policy equal to the expert and
/// for the policy taking the other action. Sampling is direct, so huge
/// observation sets need no table.
pub fn capacity_run(states: usize, samples: usize, seed: Seed) -> Result<CapacityRow> {
    if states < 2 || samples == 0 {
        return Err(crate::Error::InvalidArgument(format!(
            "capacity demo needs at least 2 states and 1 sample, got {states} and {samples}"
        )));
    }
    let half = states / 2;
    let upper = |rng: &mut crate::rng::StreamRng| half + rng.random_range(0..states - half);
    let lower = |rng: &mut crate::rng::StreamRng| rng.random_range(0..half);
    let mut r_expert = seed.split(0).rng();
    let mut r_same = seed.split(1).rng();
    let mut r_other = seed.split(2).rng();
    let expert: Vec<usize> = (0..samples).map(|_| upper(&mut r_expert)).collect();
    let same: Vec<usize> = (0..samples).map(|_| upper(&mut r_same)).collect();
    let other: Vec<usize> = (0..samples).map(|_| lower(&mut r_other)).collect();
    Ok(CapacityRow {
        states,
        samples,
        seed: seed.0,
        overlap_same_policy: overlap(&expert, &same),
        overlap_other_policy: overlap(&expert, &other),
        l1_same_policy: empirical_l1(&expert, &same),
        l1_other_policy: empirical_l1(&expert, &other),
    })
}

/// Tolerance between the program optimum and the grid maximum.
pub const GRID_TOL: f64 = 2e-2;
pub const GRID_STEP: f64 = 1e-2;
/// Tolerance for the closed form and the transport value.
pub const EXACT_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpCheckRow {
    pub size: usize,
    pub seed: u64,
    pub points: usize,
    pub lp_value: f64,
    pub grid_value: f64,
    pub transport_value: f64,
    /// `min(2, L d)` when there is one point per side.
    pub closed_form: Option<f64>,
    /// Largest `|f(y_i) - alpha_i|` at the support points.
    pub witness_interpolation_error: f64,
    /// Largest `|f(x) - f(x')| - L* d(x, x')` over all pairs.
    pub witness_slope_excess: f64,
    pub witness_sup: f64,
    pub pass: bool,
    /// Present only for failing rows.
    pub instance: Option<LipschitzInstance>,
}

/// Solves one random instance through the discriminator path and compares
/// it with the grid search, the transport dual and the witness properties.
pub fn lp_check_run(size: usize, seed: Seed) -> Result<LpCheckRow> {
    let inst = LipschitzInstance::random(size.max(1), seed);
    let dist = inst.distances();
    let weights = inst.weights();
    let samples: Vec<WeightedSample> = weights.iter().enumerate().map(|(i, &w)| WeightedSample::new(i, w)).collect();
    let (f, lp_value) = lipschitz_best_response(&samples, &dist, inst.lipschitz)?;
    let grid_value = lipschitz_grid_max(&weights, &dist, inst.lipschitz, GRID_STEP);
    let transport_value =
        bounded_lipschitz_transport(&inst.positive_points(), &inst.negative_points(), &dist, inst.lipschitz);
    let closed_form =
        (inst.positive == 1 && inst.negative == 1).then(|| (inst.lipschitz * dist.get(0, 1)).min(2.0));

    let (mut interp, mut excess, mut sup) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    if let HandleRepr::Lipschitz { points, alpha, lipschitz_star } = &f.repr {
        for (&y, a) in points.iter().zip(alpha) {
            interp = interp.max((f.eval(y) - a).abs());
        }
        for x in 0..dist.len() {
            sup = sup.max(f.eval(x).abs());
            for y in 0..dist.len() {
                excess = excess.max((f.eval(x) - f.eval(y)).abs() - lipschitz_star * dist.get(x, y));
            }
        }
    } else {
        excess = 0.0;
        sup = f.values().iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let pass = (lp_value - grid_value).abs() <= GRID_TOL
        && (lp_value - transport_value).abs() <= EXACT_TOL
        && closed_form.is_none_or(|c| (lp_value - c).abs() <= EXACT_TOL)
        && interp <= WITNESS_TOL
        && excess <= WITNESS_TOL
        && sup <= 1.0 + WITNESS_TOL;
    Ok(LpCheckRow {
        size,
        seed: seed.0,
        points: inst.coords.len(),
        lp_value,
        grid_value,
        transport_value,
        closed_form,
        witness_interpolation_error: interp,
        witness_slope_excess: excess,
        witness_sup: sup,
        pass,
        instance: (!pass).then_some(inst),
    })
}
