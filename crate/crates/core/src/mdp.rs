//! Explicit finite-horizon decision processes.
//!
//! Steps are 0-based: observations live at steps `0..horizon`, actions are
//! taken at steps `0..horizon - 1`, and the cost is paid only at the last
//! step. Transition rows are stored sparsely so that deep binary trees stay
//! cheap; the JSON document uses dense arrays.

use crate::error::{Error, Result};
use crate::rng::{sample_categorical, sample_sparse, Seed, StreamRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Validation tolerance for probability vectors.
pub const PROB_TOL: f64 = 1e-9;
/// Tolerance used when two exact DP quantities must agree.
pub const IDENTITY_TOL: f64 = 1e-12;

pub const SCHEMA_VERSION: u32 = 1;

pub type SparseRow = Vec<(usize, f64)>;

/// Pairwise distances over the observations of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceMatrix(pub Vec<Vec<f64>>);

impl DistanceMatrix {
    /// `d(x, y) = 1` for `x != y`.
    pub fn discrete(n: usize) -> Self {
        DistanceMatrix(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect())
                .collect(),
        )
    }

    /// Points `0..n` on a line, scaled to diameter 1.
    pub fn line(n: usize) -> Self {
        let scale = if n > 1 { (n - 1) as f64 } else { 1.0 };
        DistanceMatrix(
            (0..n)
                .map(|i| (0..n).map(|j| (i as f64 - j as f64).abs() / scale).collect())
                .collect(),
        )
    }

    /// Euclidean distances between coordinate vectors.
    pub fn euclidean(points: &[Vec<f64>]) -> Self {
        DistanceMatrix(
            points
                .iter()
                .map(|p| {
                    points
                        .iter()
                        .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                        .collect()
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[i][j]
    }

    pub fn diameter(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, &d| m.max(d))
    }

    /// Rescales so that the largest distance is 1 (no-op for a single point).
    pub fn normalized(&self) -> Self {
        let diam = self.diameter();
        if diam <= 0.0 {
            return self.clone();
        }
        DistanceMatrix(self.0.iter().map(|r| r.iter().map(|d| d / diam).collect()).collect())
    }

    /// Exhaustive check of the metric axioms (zero diagonal, symmetry,
    /// triangle inequality) within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let n = self.len();
        for (i, row) in self.0.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidMdp(format!("metric row {i} has length {}", row.len())));
            }
            if row.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(Error::InvalidMdp(format!("metric row {i} has a negative or non-finite entry")));
            }
            if row[i].abs() > tol {
                return Err(Error::InvalidMdp(format!("metric d({i},{i}) = {}", row[i])));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if (self.0[i][j] - self.0[j][i]).abs() > tol {
                    return Err(Error::InvalidMdp(format!("metric not symmetric at ({i},{j})")));
                }
                for k in 0..n {
                    if self.0[i][k] > self.0[i][j] + self.0[j][k] + tol {
                        return Err(Error::InvalidMdp(format!(
                            "triangle inequality fails for ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Per-state action distributions for one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyTable(pub Vec<Vec<f64>>);

impl PolicyTable {
    pub fn uniform(states: usize, actions: usize) -> Self {
        PolicyTable(vec![vec![1.0 / actions as f64; actions]; states])
    }

    /// One deterministic action per state.
    pub fn deterministic(actions: &[usize], action_count: usize) -> Self {
        PolicyTable(
            actions
                .iter()
                .map(|&a| {
                    let mut row = vec![0.0; action_count];
                    row[a] = 1.0;
                    row
                })
                .collect(),
        )
    }

    pub fn states(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.0[x][a]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.0[x]
    }

    pub fn validate(&self, states: usize, actions: usize) -> Result<()> {
        if self.0.len() != states {
            return Err(Error::InvalidPolicy(format!(
                "table has {} rows, expected {states}",
                self.0.len()
            )));
        }
        for (x, row) in self.0.iter().enumerate() {
            validate_distribution(row, actions)
                .map_err(|e| Error::InvalidPolicy(format!("row {x}: {e}")))?;
        }
        Ok(())
    }
}

fn validate_distribution(p: &[f64], len: usize) -> std::result::Result<(), String> {
    if p.len() != len {
        return Err(format!("length {} != {len}", p.len()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err("negative or non-finite entry".into());
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(format!("sums to {s}"));
    }
    Ok(())
}

/// Time-indexed policies; may hold only a prefix of the horizon while a
/// forward learner is still running.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicySequence(pub Vec<PolicyTable>);

impl PolicySequence {
    pub fn new(steps: Vec<PolicyTable>) -> Self {
        PolicySequence(steps)
    }

    pub fn uniform(mdp: &Mdp) -> Self {
        PolicySequence(
            (0..mdp.horizon() - 1)
                .map(|h| PolicyTable::uniform(mdp.obs_count(h), mdp.action_count()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn step(&self, h: usize) -> Option<&PolicyTable> {
        self.0.get(h)
    }

    pub fn push(&mut self, table: PolicyTable) {
        self.0.push(table);
    }

    pub fn prefix(&self, len: usize) -> PolicySequence {
        PolicySequence(self.0[..len.min(self.0.len())].to_vec())
    }

    pub fn is_complete(&self, mdp: &Mdp) -> bool {
        self.0.len() == mdp.horizon() - 1
    }

    /// Checks every stored step against the MDP's shape.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        if self.0.len() > mdp.horizon() - 1 {
            return Err(Error::InvalidPolicy(format!(
                "{} steps for horizon {}",
                self.0.len(),
                mdp.horizon()
            )));
        }
        for (h, t) in self.0.iter().enumerate() {
            t.validate(mdp.obs_count(h), mdp.action_count())
                .map_err(|e| Error::InvalidPolicy(format!("step {h}: {e}")))?;
        }
        Ok(())
    }

    fn require_complete(&self, mdp: &Mdp) -> Result<()> {
        if !self.is_complete(mdp) {
            return Err(Error::MissingPolicyRow(self.0.len()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    /// Probability with which each recorded action was drawn.
    pub action_probs: Vec<f64>,
    /// Present only when the rollout reached the last step.
    pub terminal_cost: Option<f64>,
}

impl Trajectory {
    pub fn is_complete(&self, mdp: &Mdp) -> bool {
        self.observations.len() == mdp.horizon()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    horizon: usize,
    obs_counts: Vec<usize>,
    action_count: usize,
    transitions: Vec<Vec<Vec<SparseRow>>>,
    terminal_cost: Vec<f64>,
    initial_dist: Vec<f64>,
    metric: Option<Vec<DistanceMatrix>>,
    abstraction: Option<Vec<Vec<usize>>>,
}

impl Mdp {
    /// Builds and validates an MDP from sparse transition rows
    /// `transitions[h][x][a]` for `h in 0..horizon - 1`.
    pub fn from_sparse(
        obs_counts: Vec<usize>,
        action_count: usize,
        transitions: Vec<Vec<Vec<SparseRow>>>,
        terminal_cost: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let horizon = obs_counts.len();
        if horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be positive".into()));
        }
        if action_count == 0 {
            return Err(Error::InvalidMdp("action count must be positive".into()));
        }
        if obs_counts.contains(&0) {
            return Err(Error::InvalidMdp("every step needs at least one observation".into()));
        }
        if transitions.len() != horizon - 1 {
            return Err(Error::InvalidMdp(format!(
                "{} transition steps for horizon {horizon}",
                transitions.len()
            )));
        }
        let mut cleaned = Vec::with_capacity(horizon - 1);
        for (h, step) in transitions.into_iter().enumerate() {
            if step.len() != obs_counts[h] {
                return Err(Error::InvalidMdp(format!(
                    "step {h} has {} transition rows, expected {}",
                    step.len(),
                    obs_counts[h]
                )));
            }
            let mut step_rows = Vec::with_capacity(step.len());
            for (x, rows) in step.into_iter().enumerate() {
                if rows.len() != action_count {
                    return Err(Error::InvalidMdp(format!(
                        "state {x} at step {h} has {} actions",
                        rows.len()
                    )));
                }
                let mut action_rows = Vec::with_capacity(action_count);
                for (a, row) in rows.into_iter().enumerate() {
                    let mut total = 0.0;
                    let mut kept = Vec::with_capacity(row.len());
                    for (y, p) in row {
                        if y >= obs_counts[h + 1] || !p.is_finite() || p < 0.0 {
                            return Err(Error::InvalidMdp(format!(
                                "bad entry ({y}, {p}) in P(.|{x},{a}) at step {h}"
                            )));
                        }
                        total += p;
                        if p > 0.0 {
                            kept.push((y, p));
                        }
                    }
                    if (total - 1.0).abs() > PROB_TOL {
                        return Err(Error::InvalidMdp(format!(
                            "P(.|{x},{a}) at step {h} sums to {total}"
                        )));
                    }
                    kept.sort_by_key(|e| e.0);
                    action_rows.push(kept);
                }
                step_rows.push(action_rows);
            }
            cleaned.push(step_rows);
        }
        if terminal_cost.len() != obs_counts[horizon - 1] {
            return Err(Error::InvalidMdp("terminal cost length mismatch".into()));
        }
        if terminal_cost.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidMdp("terminal cost must lie in [0, 1]".into()));
        }
        validate_distribution(&initial_dist, obs_counts[0])
            .map_err(|e| Error::InvalidMdp(format!("initial distribution: {e}")))?;
        Ok(Mdp {
            horizon,
            obs_counts,
            action_count,
            transitions: cleaned,
            terminal_cost,
            initial_dist,
            metric: None,
            abstraction: None,
        })
    }

    /// Builds an MDP from dense rows `transitions[h][x][a][y]`.
    pub fn from_dense(
        obs_counts: Vec<usize>,
        action_count: usize,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        terminal_cost: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        for (h, step) in transitions.iter().enumerate() {
            for rows in step {
                for row in rows {
                    if obs_counts.get(h + 1).is_some_and(|&n| row.len() != n) {
                        return Err(Error::InvalidMdp(format!(
                            "dense row at step {h} has length {}",
                            row.len()
                        )));
                    }
                }
            }
        }
        let sparse = transitions
            .into_iter()
            .map(|step| {
                step.into_iter()
                    .map(|rows| {
                        rows.into_iter()
                            .map(|row| row.into_iter().enumerate().collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self::from_sparse(obs_counts, action_count, sparse, terminal_cost, initial_dist)
    }

    pub fn with_metric(mut self, metric: Vec<DistanceMatrix>) -> Result<Self> {
        if metric.len() != self.horizon {
            return Err(Error::InvalidMdp("metric needs one matrix per step".into()));
        }
        for (h, m) in metric.iter().enumerate() {
            if m.len() != self.obs_counts[h] {
                return Err(Error::InvalidMdp(format!("metric size mismatch at step {h}")));
            }
            m.validate(PROB_TOL)?;
        }
        self.metric = Some(metric);
        Ok(self)
    }

    pub fn with_abstraction(mut self, abstraction: Vec<Vec<usize>>) -> Result<Self> {
        if abstraction.len() != self.horizon {
            return Err(Error::InvalidMdp("abstraction needs one map per step".into()));
        }
        for (h, m) in abstraction.iter().enumerate() {
            if m.len() != self.obs_counts[h] {
                return Err(Error::InvalidMdp(format!("abstraction size mismatch at step {h}")));
            }
        }
        self.abstraction = Some(abstraction);
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn obs_count(&self, h: usize) -> usize {
        self.obs_counts[h]
    }

    pub fn obs_counts(&self) -> &[usize] {
        &self.obs_counts
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn terminal_cost(&self) -> &[f64] {
        &self.terminal_cost
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn metric(&self) -> Option<&[DistanceMatrix]> {
        self.metric.as_deref()
    }

    pub fn abstraction(&self) -> Option<&[Vec<usize>]> {
        self.abstraction.as_deref()
    }

    /// Nonzero entries of `P(. | x, a)` at step `h`, sorted by successor.
    #[inline]
    pub fn transition(&self, h: usize, x: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[h][x][a]
    }

    pub fn transition_dense(&self, h: usize, x: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.obs_counts[h + 1]];
        for &(y, p) in self.transition(h, x, a) {
            row[y] += p;
        }
        row
    }

    pub(crate) fn check_step(&self, h: usize) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::StepOutOfRange {
                step: h,
                valid: format!("0..{}", self.horizon),
            });
        }
        Ok(())
    }

    pub(crate) fn check_obs(&self, h: usize, x: usize) -> Result<()> {
        if x >= self.obs_counts[h] {
            return Err(Error::InvalidObservation {
                step: h,
                obs: x,
                count: self.obs_counts[h],
            });
        }
        Ok(())
    }

    /// Samples `x' ~ P(. | x, a)` at step `h`.
    pub fn step<R: Rng + ?Sized>(&self, h: usize, x: usize, a: usize, rng: &mut R) -> usize {
        sample_sparse(self.transition(h, x, a), rng)
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.initial_dist, rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MdpDocument::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// The on-disk JSON form: explicit dense arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct MdpDocument {
    pub schema_version: u32,
    pub horizon: usize,
    pub obs_counts: Vec<usize>,
    pub action_count: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub terminal_cost: Vec<f64>,
    pub initial_dist: Vec<f64>,
    pub metric: Option<Vec<Vec<Vec<f64>>>>,
    pub abstraction: Option<Vec<Vec<usize>>>,
}

impl From<&Mdp> for MdpDocument {
    fn from(m: &Mdp) -> Self {
        let transitions = (0..m.horizon - 1)
            .map(|h| {
                (0..m.obs_counts[h])
                    .map(|x| (0..m.action_count).map(|a| m.transition_dense(h, x, a)).collect())
                    .collect()
            })
            .collect();
        MdpDocument {
            schema_version: SCHEMA_VERSION,
            horizon: m.horizon,
            obs_counts: m.obs_counts.clone(),
            action_count: m.action_count,
            transitions,
            terminal_cost: m.terminal_cost.clone(),
            initial_dist: m.initial_dist.clone(),
            metric: m.metric.as_ref().map(|ms| ms.iter().map(|d| d.0.clone()).collect()),
            abstraction: m.abstraction.clone(),
        }
    }
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidMdp(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        if doc.horizon != doc.obs_counts.len() {
            return Err(Error::InvalidMdp("horizon disagrees with obs_counts".into()));
        }
        let mut mdp = Mdp::from_dense(
            doc.obs_counts,
            doc.action_count,
            doc.transitions,
            doc.terminal_cost,
            doc.initial_dist,
        )?;
        if let Some(metric) = doc.metric {
            mdp = mdp.with_metric(metric.into_iter().map(DistanceMatrix).collect())?;
        }
        if let Some(abs) = doc.abstraction {
            mdp = mdp.with_abstraction(abs)?;
        }
        Ok(mdp)
    }
}

/// Runs one episode, asking `choose(h, x, rng)` for `(action, probability)`
/// at every action step. Returning `None` stops the episode early.
pub fn simulate<F>(mdp: &Mdp, seed: Seed, mut choose: F) -> Result<Trajectory>
where
    F: FnMut(usize, usize, &mut StreamRng) -> Result<Option<(usize, f64)>>,
{
    let mut rng = seed.rng();
    let mut x = mdp.sample_initial(&mut rng);
    let mut traj = Trajectory {
        observations: vec![x],
        actions: Vec::new(),
        action_probs: Vec::new(),
        terminal_cost: None,
    };
    for h in 0..mdp.horizon() - 1 {
        let Some((a, p)) = choose(h, x, &mut rng)? else {
            return Ok(traj);
        };
        x = mdp.step(h, x, a, &mut rng);
        traj.actions.push(a);
        traj.action_probs.push(p);
        traj.observations.push(x);
    }
    traj.terminal_cost = Some(mdp.terminal_cost()[x]);
    Ok(traj)
}

/// Samples a trajectory under `policies`. At `explore_step` the action is
/// uniform over the action set (recorded probability `1/K`). With an
/// exploration step the policy only has to cover the steps before it, and
/// the episode stops at the first step without a policy row.
pub fn rollout(
    mdp: &Mdp,
    policies: &PolicySequence,
    seed: Seed,
    explore_step: Option<usize>,
) -> Result<Trajectory> {
    let k = mdp.action_count();
    match explore_step {
        Some(e) => {
            if e + 1 >= mdp.horizon() {
                return Err(Error::StepOutOfRange {
                    step: e,
                    valid: format!("0..{}", mdp.horizon() - 1),
                });
            }
            if policies.len() < e {
                return Err(Error::MissingPolicyRow(policies.len()));
            }
        }
        None => policies.require_complete(mdp)?,
    }
    simulate(mdp, seed, |h, x, rng| {
        if explore_step == Some(h) {
            let a = rng.random_range(0..k);
            return Ok(Some((a, 1.0 / k as f64)));
        }
        match policies.step(h) {
            Some(t) => {
                let row = t.row(x);
                let a = sample_categorical(row, rng);
                Ok(Some((a, row[a])))
            }
            None => Ok(None),
        }
    })
}

/// `mu_{h+1}(y) = sum_{x,a} mu_h(x) pi(a|x) P(y|x,a)`.
pub fn push_forward(mdp: &Mdp, h: usize, dist: &[f64], policy: &PolicyTable) -> Vec<f64> {
    let mut next = vec![0.0; mdp.obs_count(h + 1)];
    for (x, &mass) in dist.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        for (a, &pa) in policy.row(x).iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for &(y, p) in mdp.transition(h, x, a) {
                next[y] += mass * pa * p;
            }
        }
    }
    next
}

/// Marginal over observations at step `h` under the first `h` policies.
pub fn exact_state_distribution(mdp: &Mdp, policies: &PolicySequence, h: usize) -> Result<Vec<f64>> {
    mdp.check_step(h)?;
    if policies.len() < h {
        return Err(Error::MissingPolicyRow(policies.len()));
    }
    let mut dist = mdp.initial_dist().to_vec();
    for t in 0..h {
        dist = push_forward(mdp, t, &dist, &policies.0[t]);
    }
    Ok(dist)
}

/// All marginals reachable by the stored prefix (`policies.len() + 1` of them,
/// capped at the horizon).
pub fn state_distributions(mdp: &Mdp, policies: &PolicySequence) -> Vec<Vec<f64>> {
    let steps = policies.len().min(mdp.horizon() - 1);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(mdp.initial_dist().to_vec());
    for t in 0..steps {
        let next = push_forward(mdp, t, &out[t], &policies.0[t]);
        out.push(next);
    }
    out
}

/// `Q_f(x, a) = E_{x' ~ P(.|x,a)} f(x')` at step `h`.
pub fn q_backup(mdp: &Mdp, h: usize, f: &[f64]) -> Vec<Vec<f64>> {
    (0..mdp.obs_count(h))
        .map(|x| {
            (0..mdp.action_count())
                .map(|a| mdp.transition(h, x, a).iter().map(|&(y, p)| p * f[y]).sum())
                .collect()
        })
        .collect()
}

/// Bellman backup of `f` under `policy`: `x -> E_{a ~ pi(x), x' ~ P} f(x')`.
pub fn bellman_backup(mdp: &Mdp, h: usize, policy: &PolicyTable, f: &[f64]) -> Vec<f64> {
    q_backup(mdp, h, f)
        .iter()
        .enumerate()
        .map(|(x, q)| q.iter().zip(policy.row(x)).map(|(q, p)| q * p).sum())
        .collect()
}

/// Expected terminal cost of a complete policy sequence, by backward induction.
pub fn exact_value(mdp: &Mdp, policies: &PolicySequence) -> Result<f64> {
    policies.require_complete(mdp)?;
    let mut v = mdp.terminal_cost().to_vec();
    for h in (0..mdp.horizon() - 1).rev() {
        v = bellman_backup(mdp, h, &policies.0[h], &v);
    }
    Ok(mdp.initial_dist().iter().zip(&v).map(|(p, v)| p * v).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunctions {
    /// `v[h][x]` for `h in 0..horizon`.
    pub v: Vec<Vec<f64>>,
    /// `q[h][x][a]` for `h in 0..horizon - 1`.
    pub q: Vec<Vec<Vec<f64>>>,
}

/// Value and action-value functions of `expert`; `V_H` is the terminal cost.
pub fn expert_value_functions(mdp: &Mdp, expert: &PolicySequence) -> Result<ValueFunctions> {
    expert.require_complete(mdp)?;
    let horizon = mdp.horizon();
    let mut v = vec![Vec::new(); horizon];
    let mut q = vec![Vec::new(); horizon - 1];
    v[horizon - 1] = mdp.terminal_cost().to_vec();
    for h in (0..horizon - 1).rev() {
        let qh = q_backup(mdp, h, &v[h + 1]);
        v[h] = qh
            .iter()
            .enumerate()
            .map(|(x, row)| row.iter().zip(expert.0[h].row(x)).map(|(q, p)| q * p).sum())
            .collect();
        q[h] = qh;
    }
    Ok(ValueFunctions { v, q })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerformanceDifference {
    pub gap: f64,
    /// One term per action step.
    pub per_step_terms: Vec<f64>,
}

/// Decomposes `J(learner) - J(expert)` into expected expert advantages along
/// the learner's own state distribution.
pub fn performance_difference(
    mdp: &Mdp,
    learner: &PolicySequence,
    expert: &PolicySequence,
) -> Result<PerformanceDifference> {
    learner.require_complete(mdp)?;
    let vf = expert_value_functions(mdp, expert)?;
    let dists = state_distributions(mdp, learner);
    let per_step_terms: Vec<f64> = (0..mdp.horizon() - 1)
        .map(|h| {
            dists[h]
                .iter()
                .enumerate()
                .map(|(x, &mass)| {
                    let adv: f64 = learner.0[h]
                        .row(x)
                        .iter()
                        .zip(&vf.q[h][x])
                        .map(|(p, q)| p * q)
                        .sum::<f64>()
                        - vf.v[h][x];
                    mass * adv
                })
                .sum()
        })
        .collect();
    Ok(PerformanceDifference {
        gap: per_step_terms.iter().sum(),
        per_step_terms,
    })
}

/// Lowest index whose value is within [`IDENTITY_TOL`] of the minimum.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values
        .iter()
        .position(|&v| v <= min + IDENTITY_TOL)
        .unwrap_or(0)
}

/// Cost-minimizing deterministic policy, ties broken toward the lowest action.
pub fn optimal_policy(mdp: &Mdp) -> PolicySequence {
    let horizon = mdp.horizon();
    let mut v = mdp.terminal_cost().to_vec();
    let mut steps = vec![PolicyTable(Vec::new()); horizon - 1];
    for h in (0..horizon - 1).rev() {
        let q = q_backup(mdp, h, &v);
        let actions: Vec<usize> = q.iter().map(|row| argmin_lowest(row)).collect();
        v = q.iter().zip(&actions).map(|(row, &a)| row[a]).collect();
        steps[h] = PolicyTable::deterministic(&actions, mdp.action_count());
    }
    PolicySequence(steps)
}
