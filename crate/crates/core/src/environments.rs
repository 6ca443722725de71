//! Constructed test environments, experts and expert demonstrations.

use crate::error::{Error, Result};
use crate::mdp::{
    exact_state_distribution, expert_value_functions, optimal_policy, simulate, DistanceMatrix, Mdp,
    PolicySequence, PolicyTable, SparseRow,
};
use crate::rng::{sample_categorical, Seed, StreamRng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Perfect binary tree with `2^h` observations at step `h` (0-based).
/// Action 0 moves to child `2x`, action 1 to child `2x + 1`. The expert is
/// cost-optimal everywhere (lowest action on ties), so from the root it
/// follows the unique path to the cheapest leaf.
pub fn make_tree_mdp(horizon: usize, leaf_costs: &[f64]) -> Result<(Mdp, PolicySequence)> {
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!("tree horizon must be at least 2, got {horizon}")));
    }
    if horizon > 30 {
        return Err(Error::InvalidArgument(format!("tree horizon {horizon} is too large")));
    }
    let leaves = 1usize << (horizon - 1);
    if leaf_costs.len() != leaves {
        return Err(Error::InvalidArgument(format!(
            "{} leaf costs for {leaves} leaves",
            leaf_costs.len()
        )));
    }
    let min = leaf_costs.iter().copied().fold(f64::INFINITY, f64::min);
    if leaf_costs.iter().filter(|&&c| c == min).count() != 1 {
        return Err(Error::NonUniqueMinimizer);
    }
    let obs_counts: Vec<usize> = (0..horizon).map(|h| 1usize << h).collect();
    let transitions: Vec<Vec<Vec<SparseRow>>> = (0..horizon - 1)
        .map(|h| {
            (0..obs_counts[h])
                .map(|x| vec![vec![(2 * x, 1.0)], vec![(2 * x + 1, 1.0)]])
                .collect()
        })
        .collect();
    let mdp = Mdp::from_sparse(obs_counts, 2, transitions, leaf_costs.to_vec(), vec![1.0])?;
    let expert = optimal_policy(&mdp);
    Ok((mdp, expert))
}

/// Leaf costs with a single 0-cost leaf and cost 1 everywhere else.
pub fn separation_leaf_costs(horizon: usize, target_leaf: usize) -> Vec<f64> {
    let leaves = 1usize << (horizon.max(1) - 1);
    (0..leaves).map(|i| if i == target_leaf { 0.0 } else { 1.0 }).collect()
}

/// Leaf reached by an action sequence (0 = left, 1 = right) from the root.
pub fn tree_leaf(actions: &[usize]) -> usize {
    actions.iter().fold(0, |x, &a| 2 * x + a)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    for x in &mut out {
        *x /= s;
    }
    out
}

fn standard_normal(rng: &mut StreamRng) -> f64 {
    // Box-Muller; the second variate is discarded to keep streams simple.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// i.i.d. Gaussian noise over `n` grid positions, smoothed along the grid
/// with a Gaussian kernel of width `width` (in normalized coordinates).
fn smoothed_noise(n: usize, dim: usize, width: f64, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| standard_normal(rng)).collect()).collect();
    let pos = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let mut acc = vec![0.0; dim];
            let mut total = 0.0;
            for (j, r) in raw.iter().enumerate() {
                let d = pos(i) - pos(j);
                let k = (-d * d / (2.0 * width * width)).exp();
                total += k;
                for (a, v) in acc.iter_mut().zip(r) {
                    *a += k * v;
                }
            }
            acc.iter().map(|a| a / total).collect()
        })
        .collect()
}

/// `max_{x != y} ||row(x) - row(y)||_1 / d(x, y)`.
pub fn row_lipschitz(rows: &[Vec<f64>], metric: &DistanceMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for x in 0..rows.len() {
        for y in x + 1..rows.len() {
            let l1: f64 = rows[x].iter().zip(&rows[y]).map(|(a, b)| (a - b).abs()).sum();
            let d = metric.get(x, y);
            if d > 0.0 {
                worst = worst.max(l1 / d);
            } else if l1 > 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}

/// Pulls rows toward their mean until the Lipschitz bound holds.
fn contract_rows(rows: &mut [Vec<f64>], metric: &DistanceMatrix, bound: f64, max_attempts: usize) -> Result<()> {
    let dim = rows[0].len();
    let mean: Vec<f64> = (0..dim)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
        .collect();
    for _ in 0..max_attempts {
        if row_lipschitz(rows, metric) <= bound {
            return Ok(());
        }
        for r in rows.iter_mut() {
            for (v, m) in r.iter_mut().zip(&mean) {
                *v = m + 0.5 * (*v - m);
            }
        }
    }
    if row_lipschitz(rows, metric) <= bound {
        Ok(())
    } else {
        Err(Error::LipschitzConstruction(max_attempts))
    }
}

pub const LIPSCHITZ_MAX_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    /// Bound on `||P(.|x,a) - P(.|x',a)||_1 / d(x, x')`.
    pub transition: f64,
    /// Bound on `||pi(.|x) - pi(.|x')||_1 / d(x, x')` for the expert.
    pub policy: f64,
}

/// States on a line (distance normalized to diameter 1) with transition rows
/// and expert rows that are Lipschitz in the state. Rows come from smoothed
/// Gaussian noise projected to the simplex; every pair is then checked and
/// rows are contracted toward their mean until the bounds hold. The terminal
/// cost is Lipschitz with constant at most `transition + policy`.
pub fn make_lipschitz_chain(
    n_states: usize,
    horizon: usize,
    actions: usize,
    smoothness: Smoothness,
    seed: Seed,
) -> Result<(Mdp, PolicySequence)> {
    if n_states == 0 || horizon == 0 || actions == 0 {
        return Err(Error::InvalidArgument("chain sizes must be positive".into()));
    }
    let (lp_, lpi) = (smoothness.transition, smoothness.policy);
    if !(lp_ > 0.0 && lpi > 0.0) {
        return Err(Error::InvalidArgument("Lipschitz constants must be positive".into()));
    }
    let metric = DistanceMatrix::line(n_states);
    let mut rng = seed.rng();
    let width_for = |l: f64| (1.0 / l).clamp(1.0 / n_states as f64, 1.0);

    let mut transitions = Vec::with_capacity(horizon.saturating_sub(1));
    let mut expert = Vec::with_capacity(horizon.saturating_sub(1));
    for _ in 0..horizon - 1 {
        let mut per_action: Vec<Vec<Vec<f64>>> = Vec::with_capacity(actions);
        for _ in 0..actions {
            let noise = smoothed_noise(n_states, n_states, width_for(lp_), &mut rng);
            let mut rows: Vec<Vec<f64>> = noise
                .iter()
                .map(|r| project_to_simplex(&r.iter().map(|v| 1.0 / n_states as f64 + 0.5 * v).collect::<Vec<_>>()))
                .collect();
            contract_rows(&mut rows, &metric, lp_, LIPSCHITZ_MAX_ATTEMPTS)?;
            per_action.push(rows);
        }
        let step: Vec<Vec<Vec<f64>>> = (0..n_states)
            .map(|x| (0..actions).map(|a| per_action[a][x].clone()).collect())
            .collect();
        transitions.push(step);

        let noise = smoothed_noise(n_states, actions, width_for(lpi), &mut rng);
        let mut rows: Vec<Vec<f64>> = noise
            .iter()
            .map(|r| project_to_simplex(&r.iter().map(|v| 1.0 / actions as f64 + v).collect::<Vec<_>>()))
            .collect();
        contract_rows(&mut rows, &metric, lpi, LIPSCHITZ_MAX_ATTEMPTS)?;
        expert.push(PolicyTable(rows));
    }

    let noise = smoothed_noise(n_states, 1, width_for(lp_ + lpi), &mut rng);
    let mut cost: Vec<Vec<f64>> = noise.iter().map(|r| vec![(0.5 + r[0]).clamp(0.0, 1.0)]).collect();
    contract_rows(&mut cost, &metric, lp_ + lpi, LIPSCHITZ_MAX_ATTEMPTS)?;
    let terminal_cost: Vec<f64> = cost.iter().map(|c| c[0].clamp(0.0, 1.0)).collect();

    let init: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = init.iter().sum();
    let initial_dist = init.iter().map(|v| v / total).collect();

    let mdp = Mdp::from_dense(vec![n_states; horizon], actions, transitions, terminal_cost, initial_dist)?
        .with_metric(vec![metric; horizon])?;
    Ok((mdp, PolicySequence(expert)))
}

fn random_simplex(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Lifts a random abstract MDP with `abstract_count` states per step to
/// `concrete_per_abstract` copies of each. Concrete observation `x` belongs
/// to block `x / concrete_per_abstract`. Within a target block, mass is
/// split with weights drawn independently for every `(x, a)`, so rows
/// differ between copies while block totals agree. Costs and expert rows
/// are copied from the abstract level.
pub fn make_abstraction_mdp(
    concrete_per_abstract: usize,
    abstract_count: usize,
    horizon: usize,
    actions: usize,
    seed: Seed,
) -> Result<(Mdp, PolicySequence)> {
    if concrete_per_abstract == 0 || abstract_count == 0 || horizon == 0 || actions == 0 {
        return Err(Error::InvalidArgument("abstraction sizes must be positive".into()));
    }
    let m = concrete_per_abstract;
    let n = m * abstract_count;
    let mut rng = seed.rng();
    let mut transitions = Vec::new();
    let mut expert = Vec::new();
    for _ in 0..horizon - 1 {
        let abstract_rows: Vec<Vec<Vec<f64>>> = (0..abstract_count)
            .map(|_| (0..actions).map(|_| random_simplex(abstract_count, &mut rng)).collect())
            .collect();
        let step: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|x| {
                (0..actions)
                    .map(|a| {
                        let mut row = vec![0.0; n];
                        for s2 in 0..abstract_count {
                            let split = random_simplex(m, &mut rng);
                            for (j, w) in split.iter().enumerate() {
                                row[s2 * m + j] = abstract_rows[x / m][a][s2] * w;
                            }
                        }
                        row
                    })
                    .collect()
            })
            .collect();
        transitions.push(step);
        let abstract_policy: Vec<Vec<f64>> = (0..abstract_count).map(|_| random_simplex(actions, &mut rng)).collect();
        expert.push(PolicyTable((0..n).map(|x| abstract_policy[x / m].clone()).collect()));
    }
    let abstract_cost: Vec<f64> = (0..abstract_count).map(|_| rng.random::<f64>()).collect();
    let terminal_cost = (0..n).map(|x| abstract_cost[x / m]).collect();
    let initial_dist = random_simplex(n, &mut rng);
    let phi: Vec<usize> = (0..n).map(|x| x / m).collect();
    let mdp = Mdp::from_dense(vec![n; horizon], actions, transitions, terminal_cost, initial_dist)?
        .with_abstraction(vec![phi; horizon])?;
    Ok((mdp, PolicySequence(expert)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BisimulationViolation {
    Cost { x: usize, other: usize },
    Expert { step: usize, x: usize, other: usize, action: usize },
    Transition { step: usize, x: usize, other: usize, action: usize, block: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisimulationReport {
    pub holds: bool,
    pub violation: Option<BisimulationViolation>,
}

pub const BISIMULATION_TOL: f64 = 1e-9;

/// Checks, for every observation against the first member of its block,
/// equal terminal cost, equal expert rows and equal block-aggregated
/// transition mass, all within [`BISIMULATION_TOL`].
pub fn verify_bisimulation(mdp: &Mdp, expert: &PolicySequence) -> Result<BisimulationReport> {
    let phi = mdp.abstraction().ok_or(Error::MissingAbstraction)?;
    expert.validate(mdp)?;
    if !expert.is_complete(mdp) {
        return Err(Error::MissingPolicyRow(expert.len()));
    }
    let fail = |v| Ok(BisimulationReport { holds: false, violation: Some(v) });
    let reps = |h: usize| -> Vec<usize> {
        let blocks = phi[h].iter().max().map_or(0, |b| b + 1);
        let mut rep = vec![usize::MAX; blocks];
        for (x, &s) in phi[h].iter().enumerate() {
            if rep[s] == usize::MAX {
                rep[s] = x;
            }
        }
        rep
    };

    let last = mdp.horizon() - 1;
    let rep = reps(last);
    for (x, &s) in phi[last].iter().enumerate() {
        let r = rep[s];
        if (mdp.terminal_cost()[x] - mdp.terminal_cost()[r]).abs() > BISIMULATION_TOL {
            return fail(BisimulationViolation::Cost { x, other: r });
        }
    }
    for h in 0..last {
        let rep = reps(h);
        let blocks_next = phi[h + 1].iter().max().map_or(0, |b| b + 1);
        let block_mass = |x: usize, a: usize| {
            let mut m = vec![0.0; blocks_next];
            for &(y, p) in mdp.transition(h, x, a) {
                m[phi[h + 1][y]] += p;
            }
            m
        };
        for (x, &s) in phi[h].iter().enumerate() {
            let r = rep[s];
            if r == x {
                continue;
            }
            for a in 0..mdp.action_count() {
                if (expert.0[h].prob(x, a) - expert.0[h].prob(r, a)).abs() > BISIMULATION_TOL {
                    return fail(BisimulationViolation::Expert { step: h, x, other: r, action: a });
                }
            }
            for a in 0..mdp.action_count() {
                let (mx, mr) = (block_mass(x, a), block_mass(r, a));
                if let Some(block) = (0..blocks_next).find(|&b| (mx[b] - mr[b]).abs() > BISIMULATION_TOL) {
                    return fail(BisimulationViolation::Transition { step: h, x, other: r, action: a, block });
                }
            }
        }
    }
    Ok(BisimulationReport { holds: true, violation: None })
}

/// `max` over blocks of the spread of `V*_h` within the block, over all steps.
pub fn value_block_spread(mdp: &Mdp, expert: &PolicySequence) -> Result<f64> {
    let phi = mdp.abstraction().ok_or(Error::MissingAbstraction)?;
    let vf = expert_value_functions(mdp, expert)?;
    let mut worst: f64 = 0.0;
    for (h, v) in vf.v.iter().enumerate() {
        for x in 0..v.len() {
            for y in x + 1..v.len() {
                if phi[h][x] == phi[h][y] {
                    worst = worst.max((v[x] - v[y]).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// One demonstration record. Deliberately carries no action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub h: usize,
    pub x: usize,
    pub seed_index: u64,
}

/// Expert observations per step, each drawn from its own expert rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub seed: Seed,
    pub n_per_step: usize,
    /// `demos[h]` for `h in 0..horizon`.
    pub demos: Vec<Vec<usize>>,
}

impl DemoSet {
    pub fn horizon(&self) -> usize {
        self.demos.len()
    }

    pub fn step(&self, h: usize) -> &[usize] {
        &self.demos[h]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.demos.iter().map(Vec::len).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = DemoRecord> + '_ {
        self.demos.iter().enumerate().flat_map(|(h, xs)| {
            xs.iter()
                .enumerate()
                .map(move |(i, &x)| DemoRecord { h, x, seed_index: i as u64 })
        })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records() {
            let _ = writeln!(out, "{}", serde_json::to_string(&r)?);
        }
        Ok(out)
    }

    /// Parses records written by [`DemoSet::to_jsonl`]. Records are placed by
    /// their `seed_index`, so line order does not matter.
    pub fn from_jsonl(text: &str, seed: Seed) -> Result<Self> {
        let mut by_step: Vec<Vec<(u64, usize)>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: DemoRecord = serde_json::from_str(line)
                .map_err(|e| Error::InvalidArgument(format!("demo line {}: {e}", i + 1)))?;
            if by_step.len() <= r.h {
                by_step.resize(r.h + 1, Vec::new());
            }
            by_step[r.h].push((r.seed_index, r.x));
        }
        let mut demos = Vec::with_capacity(by_step.len());
        for mut step in by_step {
            step.sort_unstable();
            demos.push(step.into_iter().map(|(_, x)| x).collect::<Vec<_>>());
        }
        let n_per_step = demos.iter().map(Vec::len).min().unwrap_or(0);
        Ok(DemoSet { seed, n_per_step, demos })
    }

    /// Checks every observation against the MDP's step sizes.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        if self.demos.len() > mdp.horizon() {
            return Err(Error::InvalidArgument("demonstrations exceed the horizon".into()));
        }
        for (h, xs) in self.demos.iter().enumerate() {
            for &x in xs {
                mdp.check_obs(h, x)?;
            }
        }
        Ok(())
    }
}

/// For each step `h`, `n_per_step` observations at step `h`, each taken from
/// a fresh expert rollout seeded by `seed.split2(h, i)`.
pub fn generate_demos(mdp: &Mdp, expert: &PolicySequence, n_per_step: usize, seed: Seed) -> Result<DemoSet> {
    if n_per_step == 0 {
        return Err(Error::InvalidArgument("n_per_step must be at least 1".into()));
    }
    expert.validate(mdp)?;
    if !expert.is_complete(mdp) {
        return Err(Error::MissingPolicyRow(expert.len()));
    }
    let mut demos = Vec::with_capacity(mdp.horizon());
    for h in 0..mdp.horizon() {
        let mut xs = Vec::with_capacity(n_per_step);
        for i in 0..n_per_step {
            let traj = simulate(mdp, seed.split2(h as u64, i as u64), |t, x, rng| {
                if t >= h {
                    return Ok(None);
                }
                let row = expert.0[t].row(x);
                let a = sample_categorical(row, rng);
                Ok(Some((a, row[a])))
            })?;
            xs.push(traj.observations[h]);
        }
        demos.push(xs);
    }
    Ok(DemoSet { seed, n_per_step, demos })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpConfig {
    pub horizon: usize,
    pub min_obs: usize,
    pub max_obs: usize,
    pub actions: usize,
    /// Number of successors each transition row is spread over (at most).
    pub support: usize,
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        RandomMdpConfig {
            horizon: 4,
            min_obs: 2,
            max_obs: 6,
            actions: 3,
            support: usize::MAX,
        }
    }
}

/// Random dense-ish MDP for property tests.
pub fn random_mdp(config: &RandomMdpConfig, seed: Seed) -> Result<Mdp> {
    if config.horizon == 0 || config.actions == 0 || config.min_obs == 0 || config.min_obs > config.max_obs {
        return Err(Error::InvalidArgument("bad random MDP configuration".into()));
    }
    let mut rng = seed.rng();
    let obs_counts: Vec<usize> = (0..config.horizon)
        .map(|_| rng.random_range(config.min_obs..=config.max_obs))
        .collect();
    let mut transitions = Vec::with_capacity(config.horizon - 1);
    for h in 0..config.horizon - 1 {
        let next = obs_counts[h + 1];
        let step: Vec<Vec<SparseRow>> = (0..obs_counts[h])
            .map(|_| {
                (0..config.actions)
                    .map(|_| {
                        let k = config.support.clamp(1, next);
                        let mut ys: Vec<usize> = (0..next).collect();
                        for i in 0..k {
                            let j = rng.random_range(i..next);
                            ys.swap(i, j);
                        }
                        let p = random_simplex(k, &mut rng);
                        ys[..k].iter().copied().zip(p).collect()
                    })
                    .collect()
            })
            .collect();
        transitions.push(step);
    }
    let terminal_cost = (0..obs_counts[config.horizon - 1]).map(|_| rng.random::<f64>()).collect();
    let initial_dist = random_simplex(obs_counts[0], &mut rng);
    Mdp::from_sparse(obs_counts, config.actions, transitions, terminal_cost, initial_dist)
}

/// Random stochastic policy covering every action step.
pub fn random_policy(mdp: &Mdp, seed: Seed) -> PolicySequence {
    let mut rng = seed.rng();
    PolicySequence(
        (0..mdp.horizon() - 1)
            .map(|h| PolicyTable((0..mdp.obs_count(h)).map(|_| random_simplex(mdp.action_count(), &mut rng)).collect()))
            .collect(),
    )
}

/// Random deterministic policy covering every action step.
pub fn random_deterministic_policy(mdp: &Mdp, seed: Seed) -> PolicySequence {
    let mut rng = seed.rng();
    PolicySequence(
        (0..mdp.horizon() - 1)
            .map(|h| {
                let acts: Vec<usize> = (0..mdp.obs_count(h)).map(|_| rng.random_range(0..mdp.action_count())).collect();
                PolicyTable::deterministic(&acts, mdp.action_count())
            })
            .collect(),
    )
}

/// Exact expert marginals for every step, for comparing against demos.
pub fn expert_marginals(mdp: &Mdp, expert: &PolicySequence) -> Result<Vec<Vec<f64>>> {
    (0..mdp.horizon()).map(|h| exact_state_distribution(mdp, expert, h)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::exact_value;

    #[test]
    fn two_leaf_tree() {
        let (mdp, expert) = make_tree_mdp(2, &[1.0, 0.0]).unwrap();
        assert_eq!(mdp.obs_counts().iter().sum::<usize>(), 3);
        assert_eq!(expert.0[0].row(0), &[0.0, 1.0]);
        assert_eq!(exact_value(&mdp, &expert).unwrap(), 0.0);
    }

    #[test]
    fn tree_sizes_and_uniform_value() {
        let costs: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 16.0).collect();
        let (mdp, expert) = make_tree_mdp(5, &costs).unwrap();
        assert_eq!(mdp.obs_counts().iter().sum::<usize>(), 31);
        let mean = costs.iter().sum::<f64>() / 16.0;
        let j = exact_value(&mdp, &PolicySequence::uniform(&mdp)).unwrap();
        assert!((j - mean).abs() < 1e-12);
        assert_eq!(exact_value(&mdp, &expert).unwrap(), 0.0);
        assert!(matches!(make_tree_mdp(3, &[0.0, 0.0, 1.0, 1.0]), Err(Error::NonUniqueMinimizer)));
    }

    #[test]
    fn tree_leaf_index() {
        assert_eq!(tree_leaf(&[1, 0, 1]), 5);
        assert_eq!(tree_leaf(&[]), 0);
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.5, 0.8, -0.3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| *v >= 0.0));
        assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
    }

    #[test]
    fn chain_respects_bounds() {
        let s = Smoothness { transition: 1.5, policy: 0.8 };
        let (mdp, expert) = make_lipschitz_chain(9, 4, 3, s, Seed(3)).unwrap();
        let metric = &mdp.metric().unwrap()[0];
        for h in 0..3 {
            for a in 0..3 {
                let rows: Vec<Vec<f64>> = (0..9).map(|x| mdp.transition_dense(h, x, a)).collect();
                assert!(row_lipschitz(&rows, metric) <= 1.5 + 1e-12);
            }
            assert!(row_lipschitz(&expert.0[h].0, metric) <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn lifted_mdp_is_bisimilar() {
        let (mdp, expert) = make_abstraction_mdp(3, 4, 4, 2, Seed(8)).unwrap();
        let r = verify_bisimulation(&mdp, &expert).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(value_block_spread(&mdp, &expert).unwrap() < 1e-9);
        let (mdp, expert) = make_abstraction_mdp(1, 4, 3, 2, Seed(1)).unwrap();
        assert!(verify_bisimulation(&mdp, &expert).unwrap().holds);
    }

    #[test]
    fn bisimulation_needs_abstraction() {
        let (mdp, expert) = make_tree_mdp(2, &[0.0, 1.0]).unwrap();
        assert!(matches!(verify_bisimulation(&mdp, &expert), Err(Error::MissingAbstraction)));
    }

    #[test]
    fn deterministic_demos() {
        let (mdp, expert) = make_tree_mdp(4, &separation_leaf_costs(4, 5)).unwrap();
        let demos = generate_demos(&mdp, &expert, 7, Seed(2)).unwrap();
        assert_eq!(demos.counts(), vec![7; 4]);
        // Leaf 5 = right, left, right.
        let path = [0, 1, 2, 5];
        for h in 0..4 {
            assert!(demos.step(h).iter().all(|&x| x == path[h]));
        }
    }

    #[test]
    fn demo_jsonl_round_trip() {
        let (mdp, expert) = make_abstraction_mdp(2, 2, 3, 2, Seed(4)).unwrap();
        let demos = generate_demos(&mdp, &expert, 5, Seed(9)).unwrap();
        let text = demos.to_jsonl().unwrap();
        assert!(!text.contains("\"a\""));
        let back = DemoSet::from_jsonl(&text, Seed(9)).unwrap();
        assert_eq!(back, demos);
        let bad = "{\"h\":0,\"x\":1,\"seed_index\":0,\"a\":1}";
        assert!(DemoSet::from_jsonl(bad, Seed(0)).is_err());
    }

    #[test]
    fn random_mdp_is_valid() {
        let cfg = RandomMdpConfig { horizon: 5, min_obs: 1, max_obs: 7, actions: 4, support: 3 };
        let mdp = random_mdp(&cfg, Seed(12)).unwrap();
        assert_eq!(mdp.horizon(), 5);
        assert!(random_policy(&mdp, Seed(1)).validate(&mdp).is_ok());
    }
}
