//! Single-step min-max game between a policy player and a discriminator.
//!
//! The discriminator best-responds to the current policy; the policy player
//! runs follow-the-regularized-leader with an entropy regularizer on the
//! accumulated linear losses. The utility is linear in the policy:
//! `u(pi, f) = sum_{x,a} pi(a|x) G_f[x][a] - mean_expert(f)` with
//! `G_f[x][a] = sum_{i : x_i = x, a_i = a} f(x'_i) / (p_i N)`.

use crate::discriminators::{best_response, two_sample_weights, FunctionClass, FunctionHandle, Transition};
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, PROB_TOL};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyClassSpec {
    /// Explicit candidate policies for one step.
    FiniteList { candidates: Vec<PolicyTable> },
    /// Row-wise softmax over a logit table; `logits` is the starting point.
    TabularSoftmax { logits: Vec<Vec<f64>> },
}

impl PolicyClassSpec {
    pub fn tabular(states: usize, actions: usize) -> Self {
        PolicyClassSpec::TabularSoftmax {
            logits: vec![vec![0.0; actions]; states],
        }
    }

    pub fn states(&self) -> usize {
        match self {
            PolicyClassSpec::FiniteList { candidates } => candidates[0].states(),
            PolicyClassSpec::TabularSoftmax { logits } => logits.len(),
        }
    }

    pub fn actions(&self) -> usize {
        match self {
            PolicyClassSpec::FiniteList { candidates } => candidates[0].0.first().map_or(0, Vec::len),
            PolicyClassSpec::TabularSoftmax { logits } => logits.first().map_or(0, Vec::len),
        }
    }

    /// Number of experts the exponential-weights learner mixes over.
    pub fn arms(&self) -> usize {
        match self {
            PolicyClassSpec::FiniteList { candidates } => candidates.len(),
            PolicyClassSpec::TabularSoftmax { logits } => logits.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyClassSpec::FiniteList { candidates } => {
                let first = candidates
                    .first()
                    .ok_or_else(|| Error::InvalidPolicy("empty candidate list".into()))?;
                let (n, k) = (first.states(), first.0.first().map_or(0, Vec::len));
                if n == 0 || k == 0 {
                    return Err(Error::InvalidPolicy("candidate policies are empty".into()));
                }
                for (i, c) in candidates.iter().enumerate() {
                    c.validate(n, k)
                        .map_err(|e| Error::InvalidPolicy(format!("candidate {i}: {e}")))?;
                }
            }
            PolicyClassSpec::TabularSoftmax { logits } => {
                let k = logits.first().map_or(0, Vec::len);
                if logits.is_empty() || k == 0 {
                    return Err(Error::InvalidPolicy("empty logit table".into()));
                }
                if logits.iter().any(|r| r.len() != k || r.iter().any(|v| !v.is_finite())) {
                    return Err(Error::InvalidPolicy("malformed logit table".into()));
                }
            }
        }
        Ok(())
    }

    /// Whether `policy` equals one of the candidates (or, for the softmax
    /// class, is representable up to `tol`: every row has full support).
    pub fn contains(&self, policy: &PolicyTable, tol: f64) -> bool {
        match self {
            PolicyClassSpec::FiniteList { candidates } => candidates.iter().any(|c| {
                c.0.iter()
                    .zip(&policy.0)
                    .all(|(r, s)| r.iter().zip(s).all(|(a, b)| (a - b).abs() <= tol))
            }),
            PolicyClassSpec::TabularSoftmax { .. } => policy.0.iter().flatten().all(|p| *p > 0.0),
        }
    }
}

/// Default FTRL scale `sqrt(ln M / (T K^2))`, with `M` the number of arms.
pub fn default_eta(arms: usize, actions: usize, iterations: usize) -> f64 {
    let m = arms.max(1) as f64;
    let k = actions.max(1) as f64;
    (m.ln() / (iterations.max(1) as f64 * k * k)).sqrt()
}

/// Row-wise `softmax(logits)`.
pub fn softmax_policy(logits: &[Vec<f64>]) -> PolicyTable {
    PolicyTable(logits.iter().map(|r| softmax(r)).collect())
}

fn softmax(r: &[f64]) -> Vec<f64> {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Mixture weights of the exponential-weights learner over candidates.
pub fn candidate_weights(candidates: &[PolicyTable], cumulative: &[Vec<f64>], eta: f64) -> Vec<f64> {
    let losses: Vec<f64> = candidates.iter().map(|c| linear_loss(c, cumulative)).collect();
    softmax(&losses.iter().map(|l| -eta * l).collect::<Vec<_>>())
}

fn linear_loss(policy: &PolicyTable, g: &[Vec<f64>]) -> f64 {
    policy
        .0
        .iter()
        .zip(g)
        .map(|(p, g)| p.iter().zip(g).map(|(p, g)| p * g).sum::<f64>())
        .sum()
}

/// FTRL iterate given accumulated per-(state, action) costs.
///
/// Softmax class: `pi(a|x) ~ exp(theta0[x][a] - eta C[x][a])`. Finite list:
/// exponential weights over candidates on their accumulated linear losses,
/// returned as the per-state sampling distribution of the mixture.
pub fn ftrl_step(class: &PolicyClassSpec, cumulative: &[Vec<f64>], eta: f64) -> PolicyTable {
    match class {
        PolicyClassSpec::TabularSoftmax { logits } => PolicyTable(
            logits
                .iter()
                .zip(cumulative)
                .map(|(t, c)| softmax(&t.iter().zip(c).map(|(t, c)| t - eta * c).collect::<Vec<_>>()))
                .collect(),
        ),
        PolicyClassSpec::FiniteList { candidates } => {
            let w = candidate_weights(candidates, cumulative, eta);
            mixture(candidates, &w)
        }
    }
}

fn readout(class: &PolicyClassSpec, cumulative: &[Vec<f64>], eta: f64, mode: Readout, mix: PolicyTable) -> PolicyTable {
    match (class, mode) {
        (PolicyClassSpec::FiniteList { candidates }, Readout::Leader) => {
            let w = candidate_weights(candidates, cumulative, eta);
            let mut lead = 0;
            for (i, &v) in w.iter().enumerate() {
                if v > w[lead] {
                    lead = i;
                }
            }
            candidates[lead].clone()
        }
        _ => mix,
    }
}

fn mixture(candidates: &[PolicyTable], w: &[f64]) -> PolicyTable {
    let (n, k) = (candidates[0].states(), candidates[0].0[0].len());
    let mut rows = vec![vec![0.0; k]; n];
    for (c, &wc) in candidates.iter().zip(w) {
        if wc == 0.0 {
            continue;
        }
        for (r, cr) in rows.iter_mut().zip(&c.0) {
            for (v, p) in r.iter_mut().zip(cr) {
                *v += wc * p;
            }
        }
    }
    PolicyTable(rows)
}

/// Per-(state, action) coefficient of the learner term of the utility.
pub fn utility_coefficients(f: &FunctionHandle, learner: &[Transition], states: usize, actions: usize) -> Result<Vec<Vec<f64>>> {
    let n = learner.len() as f64;
    let mut g = vec![vec![0.0; actions]; states];
    for (i, t) in learner.iter().enumerate() {
        if !(t.p > 0.0) {
            return Err(Error::ZeroPropensity(i));
        }
        if t.x >= states || t.a >= actions {
            return Err(Error::InvalidArgument(format!("learner tuple {i} is outside the policy table")));
        }
        g[t.x][t.a] += f.eval(t.next) / (t.p * n);
    }
    Ok(g)
}

fn expert_mean(f: &FunctionHandle, expert_obs: &[usize]) -> f64 {
    expert_obs.iter().map(|&x| f.eval(x)).sum::<f64>() / expert_obs.len() as f64
}

/// `sum_i (pi(a_i|x_i) / p_i) f(x'_i) / N - sum_j f(x~_j) / N'`.
pub fn utility(policy: &PolicyTable, f: &FunctionHandle, learner: &[Transition], expert_obs: &[usize]) -> Result<f64> {
    if learner.is_empty() || expert_obs.is_empty() {
        return Err(Error::InvalidArgument("utility needs both datasets".into()));
    }
    let n = learner.len() as f64;
    let mut first = 0.0;
    for (i, t) in learner.iter().enumerate() {
        if !(t.p > 0.0) {
            return Err(Error::ZeroPropensity(i));
        }
        first += policy.prob(t.x, t.a) / t.p * f.eval(t.next);
    }
    Ok(first / n - expert_mean(f, expert_obs))
}

/// Hex prefix of a SHA-256 over the policy's probabilities.
pub fn policy_digest(policy: &PolicyTable) -> String {
    let mut h = Sha256::new();
    for row in &policy.0 {
        for p in row {
            h.update(p.to_le_bytes());
        }
    }
    let bytes = h.finalize();
    let mut s = String::with_capacity(16);
    for b in &bytes[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub discriminator: String,
    pub utility: f64,
    pub policy_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameTranscript {
    pub records: Vec<IterationRecord>,
    /// Index of the first iteration with the smallest utility.
    pub selected: usize,
    pub eta: f64,
    pub final_policy: PolicyTable,
}

impl GameTranscript {
    pub fn selected_utility(&self) -> f64 {
        self.records[self.selected].utility
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// One JSON object per iteration.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r)?);
        }
        Ok(out)
    }

    pub fn records_from_jsonl(text: &str) -> Result<Vec<IterationRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }
}

/// How a finite candidate list turns its weights into the returned policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Per-state sampling distribution of the weighted mixture.
    #[default]
    Mixture,
    /// The candidate with the largest weight (lowest index on ties).
    Leader,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub iterations: usize,
    /// Overrides [`default_eta`].
    pub eta: Option<f64>,
    #[serde(default)]
    pub readout: Readout,
}

impl GameConfig {
    pub fn new(iterations: usize) -> Self {
        GameConfig {
            iterations,
            eta: None,
            readout: Readout::Mixture,
        }
    }
}

fn check_game_inputs(expert_obs: &[usize], learner: &[Transition], iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    if expert_obs.is_empty() || learner.is_empty() {
        return Err(Error::InvalidArgument("game needs nonempty learner and expert data".into()));
    }
    Ok(())
}

/// Runs the best-response / FTRL game for `config.iterations` rounds and
/// returns the iterate with the smallest recorded utility.
pub fn minmax_solve(
    expert_obs: &[usize],
    learner: &[Transition],
    policies: &PolicyClassSpec,
    discriminators: &FunctionClass,
    config: GameConfig,
) -> Result<(PolicyTable, GameTranscript)> {
    check_game_inputs(expert_obs, learner, config.iterations)?;
    policies.validate()?;
    let (states, actions) = (policies.states(), policies.actions());
    let eta = config
        .eta
        .unwrap_or_else(|| default_eta(policies.arms(), actions, config.iterations));
    let mut cumulative = vec![vec![0.0; actions]; states];
    let mut records = Vec::with_capacity(config.iterations);
    let mut best: Option<(usize, f64, PolicyTable)> = None;
    for n in 0..config.iterations {
        let policy = ftrl_step(policies, &cumulative, eta);
        let wrap = |e: Error| Error::Game { iteration: n, source: Box::new(e) };
        let samples = two_sample_weights(learner, &policy, expert_obs).map_err(wrap)?;
        let (f, value) = best_response(discriminators, &samples).map_err(wrap)?;
        records.push(IterationRecord {
            iteration: n,
            discriminator: f.id(),
            utility: value,
            policy_digest: policy_digest(&policy),
        });
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((n, value, readout(policies, &cumulative, eta, config.readout, policy)));
        }
        let g = utility_coefficients(&f, learner, states, actions).map_err(wrap)?;
        for (c, g) in cumulative.iter_mut().zip(&g) {
            for (c, g) in c.iter_mut().zip(g) {
                *c += g;
            }
        }
    }
    let (selected, _, policy) = best.expect("at least one iteration");
    let transcript = GameTranscript {
        records,
        selected,
        eta,
        final_policy: policy.clone(),
    };
    Ok((policy, transcript))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Score-function form; every recorded propensity must equal the current
    /// policy's probability of the recorded action.
    Reinforce,
    /// Importance-weighted form; valid for any behaviour policy.
    ImportanceWeighted,
    /// Score-function form while the data is on-policy, importance-weighted
    /// otherwise. Both agree exactly when the data is on-policy.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgConfig {
    pub iterations: usize,
    /// Step size at iteration `n` (1-based) is `eta0 / sqrt(n)`.
    pub eta0: f64,
    pub mode: GradientMode,
}

/// Tolerance for deciding that data is on-policy.
pub const ON_POLICY_TOL: f64 = 1e-9;

fn is_on_policy(policy: &PolicyTable, learner: &[Transition]) -> Option<(usize, f64, f64)> {
    learner
        .iter()
        .enumerate()
        .find(|(_, t)| (policy.prob(t.x, t.a) - t.p).abs() > ON_POLICY_TOL)
        .map(|(i, t)| (i, t.p, policy.prob(t.x, t.a)))
}

/// Gradient of the utility in the logits for a fixed discriminator.
pub fn utility_gradient(
    logits: &[Vec<f64>],
    f: &FunctionHandle,
    learner: &[Transition],
    mode: GradientMode,
) -> Result<Vec<Vec<f64>>> {
    let policy = softmax_policy(logits);
    let (states, actions) = (logits.len(), logits.first().map_or(0, Vec::len));
    let mismatch = is_on_policy(&policy, learner);
    let use_score = match mode {
        GradientMode::Reinforce => {
            if let Some((index, recorded, current)) = mismatch {
                return Err(Error::PropensityMismatch { index, recorded, current });
            }
            true
        }
        GradientMode::ImportanceWeighted => false,
        GradientMode::Auto => mismatch.is_none(),
    };
    let mut grad = vec![vec![0.0; actions]; states];
    if use_score {
        // (1/N) sum_i grad log pi(a_i|x_i) f(x'_i)
        let n = learner.len() as f64;
        for (i, t) in learner.iter().enumerate() {
            if !(t.p > 0.0) {
                return Err(Error::ZeroPropensity(i));
            }
            let fv = f.eval(t.next) / n;
            if fv == 0.0 {
                continue;
            }
            for b in 0..actions {
                let ind = if b == t.a { 1.0 } else { 0.0 };
                grad[t.x][b] += fv * (ind - policy.prob(t.x, b));
            }
        }
    } else {
        let g = utility_coefficients(f, learner, states, actions)?;
        for x in 0..states {
            let mean: f64 = (0..actions).map(|a| policy.prob(x, a) * g[x][a]).sum();
            for b in 0..actions {
                grad[x][b] = policy.prob(x, b) * (g[x][b] - mean);
            }
        }
    }
    Ok(grad)
}

/// Min-max game where the policy player takes gradient steps on softmax
/// logits instead of running FTRL. Returns the logits of the iterate with
/// the smallest utility.
pub fn pg_minmax_solve(
    expert_obs: &[usize],
    learner: &[Transition],
    theta0: &[Vec<f64>],
    discriminators: &FunctionClass,
    config: PgConfig,
) -> Result<(Vec<Vec<f64>>, GameTranscript)> {
    check_game_inputs(expert_obs, learner, config.iterations)?;
    PolicyClassSpec::TabularSoftmax { logits: theta0.to_vec() }.validate()?;
    if !(config.eta0 >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size {}", config.eta0)));
    }
    let mut theta = theta0.to_vec();
    let mut records = Vec::with_capacity(config.iterations);
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    for n in 0..config.iterations {
        let wrap = |e: Error| Error::Game { iteration: n, source: Box::new(e) };
        let policy = softmax_policy(&theta);
        let samples = two_sample_weights(learner, &policy, expert_obs).map_err(wrap)?;
        let (f, value) = best_response(discriminators, &samples).map_err(wrap)?;
        records.push(IterationRecord {
            iteration: n,
            discriminator: f.id(),
            utility: value,
            policy_digest: policy_digest(&policy),
        });
        if best.as_ref().is_none_or(|b| value < b.1) {
            best = Some((n, value, theta.clone()));
        }
        let grad = utility_gradient(&theta, &f, learner, config.mode).map_err(wrap)?;
        let step = config.eta0 / ((n + 1) as f64).sqrt();
        for (t, g) in theta.iter_mut().zip(&grad) {
            for (t, g) in t.iter_mut().zip(g) {
                *t -= step * g;
            }
        }
    }
    let (selected, _, theta) = best.expect("at least one iteration");
    let transcript = GameTranscript {
        records,
        selected,
        eta: config.eta0,
        final_policy: softmax_policy(&theta),
    };
    Ok((theta, transcript))
}

/// Regret of exponential weights on a loss sequence over `K` arms with the
/// given `eta`: `sum_t <p_t, l_t> - min_a sum_t l_t(a)`.
pub fn exponential_weights_regret(losses: &[Vec<f64>], eta: f64) -> f64 {
    let k = losses.first().map_or(0, Vec::len);
    let mut cumulative = vec![0.0; k];
    let mut incurred = 0.0;
    for l in losses {
        let p = softmax(&cumulative.iter().map(|c| -eta * c).collect::<Vec<_>>());
        incurred += p.iter().zip(l).map(|(p, l)| p * l).sum::<f64>();
        for (c, l) in cumulative.iter_mut().zip(l) {
            *c += l;
        }
    }
    incurred - cumulative.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Checks that a table is a valid policy over `actions` actions.
pub fn is_valid_policy(policy: &PolicyTable, actions: usize) -> bool {
    policy.0.iter().all(|r| {
        r.len() == actions && r.iter().all(|p| *p >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL
    })
}
