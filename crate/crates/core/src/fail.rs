//! Forward training drivers built on the single-step game, plus model-based
//! class construction and the tree identification procedure.
//!
//! Step `h` (0-based) learns the policy for action step `h` by matching the
//! learner's observations at `h + 1` against expert observations at `h + 1`.
//! Discriminator classes passed to the drivers are therefore indexed by
//! action step: entry `h` is a class on the observations of step `h + 1`.

use crate::discriminators::{FiniteClass, FunctionClass, Transition, dedup_tabulated};
use crate::environments::DemoSet;
use crate::error::{Error, Result};
use crate::game::{
    minmax_solve, pg_minmax_solve, policy_digest, softmax_policy, GameConfig, GameTranscript, GradientMode, PgConfig, PolicyClassSpec,
    Readout, ON_POLICY_TOL,
};
use crate::mdp::{
    argmin_lowest, bellman_backup, exact_value, q_backup, rollout, simulate, Mdp, PolicySequence, PolicyTable,
    Trajectory,
};
use crate::rng::{sample_categorical, Seed, StreamRng};
use serde::{Deserialize, Serialize};

/// Environment wrapper that counts every episode started.
#[derive(Debug)]
pub struct MeteredEnv<'a> {
    mdp: &'a Mdp,
    trajectories: usize,
}

impl<'a> MeteredEnv<'a> {
    pub fn new(mdp: &'a Mdp) -> Self {
        MeteredEnv { mdp, trajectories: 0 }
    }

    pub fn mdp(&self) -> &'a Mdp {
        self.mdp
    }

    pub fn trajectories(&self) -> usize {
        self.trajectories
    }

    /// See [`rollout`].
    pub fn rollout(&mut self, policies: &PolicySequence, seed: Seed, explore_step: Option<usize>) -> Result<Trajectory> {
        self.trajectories += 1;
        rollout(self.mdp, policies, seed, explore_step)
    }

    /// Follows `prefix` and stops on reaching step `h`.
    pub fn rollout_to(&mut self, prefix: &PolicySequence, h: usize, seed: Seed) -> Result<Trajectory> {
        if prefix.len() < h {
            return Err(Error::MissingPolicyRow(prefix.len()));
        }
        self.trajectories += 1;
        simulate(self.mdp, seed, |t, x, rng| {
            if t >= h {
                return Ok(None);
            }
            let row = prefix.0[t].row(x);
            let a = sample_categorical(row, rng);
            Ok(Some((a, row[a])))
        })
    }

    /// Plays a fixed action sequence (recorded probability 1) and stops when
    /// it runs out.
    pub fn execute(&mut self, actions: &[usize], seed: Seed) -> Result<Trajectory> {
        let k = self.mdp.action_count();
        if let Some(&a) = actions.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidArgument(format!("action {a} outside 0..{k}")));
        }
        self.trajectories += 1;
        simulate(self.mdp, seed, |t, _, _| Ok(actions.get(t).map(|&a| (a, 1.0))))
    }
}

/// One-step access to the expert: given an observation at step `h`, the
/// expert acts and only the resulting observation is revealed.
#[derive(Debug)]
pub struct ExpertOracle<'a> {
    mdp: &'a Mdp,
    expert: &'a PolicySequence,
    queries: usize,
}

impl<'a> ExpertOracle<'a> {
    pub fn new(mdp: &'a Mdp, expert: &'a PolicySequence) -> Result<Self> {
        expert.validate(mdp)?;
        if !expert.is_complete(mdp) {
            return Err(Error::MissingPolicyRow(expert.len()));
        }
        Ok(ExpertOracle { mdp, expert, queries: 0 })
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn step(&mut self, h: usize, x: usize, rng: &mut StreamRng) -> Result<usize> {
        if h + 1 >= self.mdp.horizon() {
            return Err(Error::StepOutOfRange {
                step: h,
                valid: format!("0..{}", self.mdp.horizon() - 1),
            });
        }
        self.mdp.check_obs(h, x)?;
        self.queries += 1;
        let a = sample_categorical(self.expert.0[h].row(x), rng);
        Ok(self.mdp.step(h, x, a, rng))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learner rollouts per step.
    pub n: usize,
    /// Expert observations used per step; `None` uses all available.
    pub n_prime: Option<usize>,
    pub iterations: usize,
    pub eta: Option<f64>,
    #[serde(default)]
    pub readout: Readout,
    pub seed: Seed,
}

impl TrainConfig {
    pub fn new(n: usize, n_prime: usize, iterations: usize, seed: Seed) -> Self {
        TrainConfig {
            n,
            n_prime: Some(n_prime),
            iterations,
            eta: None,
            readout: Readout::Mixture,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub algorithm: String,
    pub seed: u64,
    pub n: usize,
    pub n_prime: usize,
    pub iterations: usize,
    pub policy_digests: Vec<String>,
    /// Selected game value per step.
    pub game_values: Vec<f64>,
    pub trajectories: usize,
    pub expert_queries: usize,
    pub j_learned: f64,
    pub j_expert: Option<f64>,
    pub gap: Option<f64>,
    /// Final game transcript per step. Written separately, not part of the JSON.
    #[serde(skip)]
    pub transcripts: Vec<GameTranscript>,
}

impl TrainReport {
    /// Fills in the expert value and the gap, both by exact evaluation.
    pub fn evaluate(&mut self, mdp: &Mdp, learned: &PolicySequence, expert: &PolicySequence) -> Result<()> {
        let j = exact_value(mdp, learned)?;
        let je = exact_value(mdp, expert)?;
        self.j_learned = j;
        self.j_expert = Some(je);
        self.gap = Some(j - je);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_classes(mdp: &Mdp, policies: usize, discriminators: &[FunctionClass]) -> Result<()> {
    let steps = mdp.horizon() - 1;
    if policies != steps || discriminators.len() != steps {
        return Err(Error::InvalidArgument(format!(
            "need {steps} policy classes and discriminator classes, got {policies} and {}",
            discriminators.len()
        )));
    }
    for (h, f) in discriminators.iter().enumerate() {
        if f.domain_size() != mdp.obs_count(h + 1) {
            return Err(Error::InvalidArgument(format!(
                "discriminator class {h} has domain {} but step {} has {} observations",
                f.domain_size(),
                h + 1,
                mdp.obs_count(h + 1)
            )));
        }
    }
    Ok(())
}

fn expert_slice(demos: &DemoSet, step: usize, n_prime: Option<usize>) -> Result<&[usize]> {
    let have = if step < demos.horizon() { demos.step(step).len() } else { 0 };
    let needed = n_prime.unwrap_or(have).max(1);
    if have < needed {
        return Err(Error::InsufficientDemos { step, needed, have });
    }
    Ok(&demos.step(step)[..needed])
}

fn transition_at(traj: &Trajectory, h: usize) -> Transition {
    Transition {
        x: traj.observations[h],
        a: traj.actions[h],
        p: traj.action_probs[h],
        next: traj.observations[h + 1],
    }
}

fn report(algorithm: &str, config: &TrainConfig, n_prime: usize, mdp: &Mdp, learned: &PolicySequence) -> Result<TrainReport> {
    Ok(TrainReport {
        algorithm: algorithm.into(),
        seed: config.seed.0,
        n: config.n,
        n_prime,
        iterations: config.iterations,
        policy_digests: learned.0.iter().map(policy_digest).collect(),
        game_values: Vec::new(),
        trajectories: 0,
        expert_queries: 0,
        j_learned: exact_value(mdp, learned)?,
        j_expert: None,
        gap: None,
        transcripts: Vec::new(),
    })
}

fn check_budget(config: &TrainConfig) -> Result<()> {
    if config.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if config.iterations == 0 {
        return Err(Error::InvalidArgument("at least one game iteration is required".into()));
    }
    Ok(())
}

/// Forward training from expert observations only. Consumes exactly
/// `n * (H - 1)` trajectories.
pub fn fail_train(
    mdp: &Mdp,
    demos: &DemoSet,
    policies: &[PolicyClassSpec],
    discriminators: &[FunctionClass],
    config: &TrainConfig,
) -> Result<(PolicySequence, TrainReport)> {
    check_budget(config)?;
    check_classes(mdp, policies.len(), discriminators)?;
    demos.validate(mdp)?;
    let steps = mdp.horizon() - 1;
    for h in 0..steps {
        expert_slice(demos, h + 1, config.n_prime)?;
    }
    let mut env = MeteredEnv::new(mdp);
    let mut learned = PolicySequence::new(Vec::with_capacity(steps));
    let mut values = Vec::with_capacity(steps);
    let mut transcripts = Vec::with_capacity(steps);
    let mut used = 0;
    for h in 0..steps {
        let expert_obs = expert_slice(demos, h + 1, config.n_prime)?;
        used = expert_obs.len();
        let mut learner = Vec::with_capacity(config.n);
        for i in 0..config.n {
            let traj = env.rollout(&learned, config.seed.split2(h as u64, i as u64), Some(h))?;
            learner.push(transition_at(&traj, h));
        }
        let game = GameConfig {
            iterations: config.iterations,
            eta: config.eta,
            readout: config.readout,
        };
        let (pi, transcript) = minmax_solve(expert_obs, &learner, &policies[h], &discriminators[h], game)?;
        pi.validate(mdp.obs_count(h), mdp.action_count())?;
        values.push(transcript.selected_utility());
        transcripts.push(transcript);
        learned.push(pi);
    }
    let mut rep = report("fail", config, used, mdp, &learned)?;
    rep.game_values = values;
    rep.transcripts = transcripts;
    rep.trajectories = env.trajectories();
    Ok((learned, rep))
}

/// Interactive variant: at each step, `n` exploration rollouts plus `n`
/// prefix rollouts whose last observation is handed to the expert for one
/// step. Consumes exactly `2 n (H - 1)` trajectories.
pub fn ifail_train(
    mdp: &Mdp,
    expert: &PolicySequence,
    policies: &[PolicyClassSpec],
    discriminators: &[FunctionClass],
    config: &TrainConfig,
) -> Result<(PolicySequence, TrainReport)> {
    check_budget(config)?;
    check_classes(mdp, policies.len(), discriminators)?;
    let mut oracle = ExpertOracle::new(mdp, expert)?;
    let steps = mdp.horizon() - 1;
    let mut env = MeteredEnv::new(mdp);
    let mut learned = PolicySequence::new(Vec::with_capacity(steps));
    let mut values = Vec::with_capacity(steps);
    let mut transcripts = Vec::with_capacity(steps);
    for h in 0..steps {
        let mut learner = Vec::with_capacity(config.n);
        let mut expert_obs = Vec::with_capacity(config.n);
        for i in 0..config.n {
            let traj = env.rollout(&learned, config.seed.split2(2 * h as u64, i as u64), Some(h))?;
            learner.push(transition_at(&traj, h));
            let handoff_seed = config.seed.split2(2 * h as u64 + 1, i as u64);
            let prefix = env.rollout_to(&learned, h, handoff_seed)?;
            let mut rng = handoff_seed.split(u64::MAX).rng();
            expert_obs.push(oracle.step(h, prefix.observations[h], &mut rng)?);
        }
        let game = GameConfig {
            iterations: config.iterations,
            eta: config.eta,
            readout: config.readout,
        };
        let (pi, transcript) = minmax_solve(&expert_obs, &learner, &policies[h], &discriminators[h], game)?;
        values.push(transcript.selected_utility());
        transcripts.push(transcript);
        learned.push(pi);
    }
    let mut rep = report("ifail", config, config.n, mdp, &learned)?;
    rep.game_values = values;
    rep.transcripts = transcripts;
    rep.trajectories = env.trajectories();
    rep.expert_queries = oracle.queries();
    Ok((learned, rep))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgTrainConfig {
    pub base: TrainConfig,
    pub eta0: f64,
    pub mode: GradientMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgTrainReport {
    pub report: TrainReport,
    /// `refresh_values[h][t]`: selected game value for step `t` when it was
    /// refreshed during outer step `h`.
    pub refresh_values: Vec<Vec<f64>>,
    /// Largest gap between a recorded propensity and the collecting policy.
    pub propensity_drift: f64,
}

/// Policy-gradient forward training. At outer step `h`, `n` trajectories
/// follow the current softmax policies up to `h - 1`, explore uniformly at
/// `h` and record propensities at every step; then every step `t <= h` is
/// refreshed from its own dataset. Consumes `n * (H - 1)` trajectories.
pub fn fail_star_train(
    mdp: &Mdp,
    demos: &DemoSet,
    theta0: &[Vec<Vec<f64>>],
    discriminators: &[FunctionClass],
    config: &PgTrainConfig,
) -> Result<(PolicySequence, PgTrainReport)> {
    let base = &config.base;
    check_budget(base)?;
    check_classes(mdp, theta0.len(), discriminators)?;
    demos.validate(mdp)?;
    let steps = mdp.horizon() - 1;
    for (h, th) in theta0.iter().enumerate() {
        if th.len() != mdp.obs_count(h) || th.iter().any(|r| r.len() != mdp.action_count()) {
            return Err(Error::InvalidArgument(format!("initial logits for step {h} have the wrong shape")));
        }
    }
    for h in 0..steps {
        expert_slice(demos, h + 1, base.n_prime)?;
    }
    let mut env = MeteredEnv::new(mdp);
    let mut theta: Vec<Vec<Vec<f64>>> = theta0.to_vec();
    let mut values = vec![0.0; steps];
    let mut transcripts: Vec<Option<GameTranscript>> = vec![None; steps];
    let mut refresh_values = Vec::with_capacity(steps);
    let mut drift: f64 = 0.0;
    let mut used = 0;
    for h in 0..steps {
        let current = PolicySequence::new(theta[..h].iter().map(|t| softmax_policy(t)).collect());
        let mut data: Vec<Vec<Transition>> = vec![Vec::with_capacity(base.n); h + 1];
        for i in 0..base.n {
            let traj = env.rollout(&current, base.seed.split2(h as u64, i as u64), Some(h))?;
            for (t, d) in data.iter_mut().enumerate() {
                let tr = transition_at(&traj, t);
                if t < h {
                    drift = drift.max((current.0[t].prob(tr.x, tr.a) - tr.p).abs());
                }
                d.push(tr);
            }
        }
        let mut refreshed = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let expert_obs = expert_slice(demos, t + 1, base.n_prime)?;
            used = expert_obs.len();
            let pg = PgConfig {
                iterations: base.iterations,
                eta0: config.eta0,
                mode: config.mode,
            };
            let (th, transcript) = pg_minmax_solve(expert_obs, &data[t], &theta[t], &discriminators[t], pg)?;
            theta[t] = th;
            values[t] = transcript.selected_utility();
            refreshed.push(values[t]);
            transcripts[t] = Some(transcript);
        }
        refresh_values.push(refreshed);
    }
    let learned = PolicySequence::new(theta.iter().map(|t| softmax_policy(t)).collect());
    let mut rep = report("fail_star", base, used, mdp, &learned)?;
    rep.game_values = values;
    rep.transcripts = transcripts.into_iter().flatten().collect();
    rep.trajectories = env.trajectories();
    Ok((
        learned,
        PgTrainReport {
            report: rep,
            refresh_values,
            propensity_drift: drift,
        },
    ))
}

/// Whether a recorded propensity drift counts as on-policy.
pub fn is_on_policy_drift(drift: f64) -> bool {
    drift <= ON_POLICY_TOL
}

/// Default cap on the size of a constructed discriminator class.
pub const MODEL_CLASS_CAP: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBasedClasses {
    /// One finite policy list per action step.
    pub policies: Vec<PolicyClassSpec>,
    /// One finite class per observation step.
    pub discriminators: Vec<FiniteClass>,
    /// Greedy policies enumerated per action step before deduplication.
    pub raw_policy_counts: Vec<usize>,
}

impl ModelBasedClasses {
    /// Discriminator classes indexed by action step, as the drivers expect.
    pub fn game_discriminators(&self) -> Vec<FunctionClass> {
        self.discriminators[1..].iter().cloned().map(FunctionClass::Finite).collect()
    }
}

/// Builds policy and discriminator classes from candidate models.
///
/// For each action step `h`, the policy list holds the greedy (lowest action
/// on ties) policies of `Q(x, a) = E_{x' ~ P(x, a)} f(x')` over models `P`
/// and `f` in the step-`h + 1` class. The step-`h` discriminator class is the
/// given one plus every backup `x -> E_{a ~ pi(x), x' ~ P} f'(x')` over
/// models, constructed policies and constructed step-`h + 1` functions,
/// deduplicated and closed under negation.
pub fn model_based_construct(models: &[Mdp], classes: &[FiniteClass], cap: usize) -> Result<ModelBasedClasses> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("model list is empty".into()))?;
    let horizon = first.horizon();
    for m in models {
        if m.obs_counts() != first.obs_counts() || m.action_count() != first.action_count() {
            return Err(Error::InvalidArgument("models differ in shape".into()));
        }
    }
    if classes.len() != horizon {
        return Err(Error::InvalidArgument(format!("need {horizon} discriminator classes, got {}", classes.len())));
    }
    for (h, c) in classes.iter().enumerate() {
        if c.domain_size() != first.obs_count(h) {
            return Err(Error::InvalidArgument(format!("class {h} has the wrong domain size")));
        }
        if c.len() > cap {
            return Err(Error::ClassCap { size: c.len(), cap });
        }
    }
    let k = first.action_count();
    let mut policies = vec![PolicyClassSpec::tabular(1, 1); horizon - 1];
    let mut raw_counts = vec![0; horizon - 1];
    let mut built: Vec<FiniteClass> = vec![classes[horizon - 1].clone(); horizon];
    for h in (0..horizon - 1).rev() {
        let mut candidates: Vec<PolicyTable> = Vec::new();
        for m in models {
            for f in classes[h + 1].functions() {
                let q = q_backup(m, h, f);
                let actions: Vec<usize> = q.iter().map(|row| argmin_lowest(row)).collect();
                candidates.push(PolicyTable::deterministic(&actions, k));
            }
        }
        raw_counts[h] = candidates.len();
        let mut unique: Vec<PolicyTable> = Vec::with_capacity(candidates.len());
        for c in candidates {
            if !unique.contains(&c) {
                unique.push(c);
            }
        }
        let raw = classes[h].len() + models.len() * unique.len() * built[h + 1].len();
        if raw > cap.saturating_mul(100) {
            return Err(Error::ClassCap { size: raw, cap });
        }
        let mut fs: Vec<Vec<f64>> = classes[h].functions().to_vec();
        for m in models {
            for pi in &unique {
                for g in built[h + 1].functions() {
                    fs.push(bellman_backup(m, h, pi, g));
                }
            }
        }
        let fs = dedup_tabulated(fs);
        if fs.len() > cap {
            return Err(Error::ClassCap { size: fs.len(), cap });
        }
        let class = FiniteClass::with_negations(fs)?;
        if class.len() > cap {
            return Err(Error::ClassCap { size: class.len(), cap });
        }
        built[h] = class;
        policies[h] = PolicyClassSpec::FiniteList { candidates: unique };
    }
    Ok(ModelBasedClasses {
        policies,
        discriminators: built,
        raw_policy_counts: raw_counts,
    })
}

/// Recovers the expert's action sequence on a deterministic binary tree from
/// one expert observation sequence, probing both children at every level.
/// Uses exactly `2 (H - 1)` episodes of `env`.
pub fn tree_identify_expert(env: &mut MeteredEnv<'_>, expert_obs: &[usize], seed: Seed) -> Result<Vec<usize>> {
    let horizon = env.mdp().horizon();
    if expert_obs.len() != horizon {
        return Err(Error::InvalidArgument(format!(
            "expected {horizon} expert observations, got {}",
            expert_obs.len()
        )));
    }
    let mut prefix: Vec<usize> = Vec::with_capacity(horizon - 1);
    for h in 0..horizon - 1 {
        let mut matched = None;
        for a in 0..2 {
            prefix.push(a);
            let traj = env.execute(&prefix, seed.split2(h as u64, a as u64))?;
            prefix.pop();
            if traj.observations.get(h + 1) == Some(&expert_obs[h + 1]) && matched.is_none() {
                matched = Some(a);
            }
        }
        match matched {
            Some(a) => prefix.push(a),
            None => return Err(Error::NoMatchingChild(h + 1)),
        }
    }
    Ok(prefix)
}

/// Plug-in inherent Bellman error of finite classes given per observation
/// step: for each action step `h`,
/// `max_{g in F_{h+1}} min_{f in F_h} max_x |f(x) - (expert backup of g)(x)|`.
pub fn inherent_bellman_error(mdp: &Mdp, expert: &PolicySequence, classes: &[FiniteClass]) -> Result<Vec<f64>> {
    if classes.len() != mdp.horizon() {
        return Err(Error::InvalidArgument(format!("need {} classes", mdp.horizon())));
    }
    expert.validate(mdp)?;
    (0..mdp.horizon() - 1)
        .map(|h| {
            let table = expert.step(h).ok_or(Error::MissingPolicyRow(h))?;
            Ok(classes[h + 1]
                .functions()
                .iter()
                .map(|g| {
                    let backup = bellman_backup(mdp, h, table, g);
                    classes[h]
                        .functions()
                        .iter()
                        .map(|f| f.iter().zip(&backup).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max))
        })
        .collect()
}
