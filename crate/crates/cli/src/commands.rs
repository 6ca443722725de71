//! Subcommand bodies. Table rows report the seed index `s`; table runs use
//! `Seed(s).split(param)` with the horizon, state count or size as `param`.

use crate::config::{discriminator_classes, policy_classes, Algorithm, EnvironmentSpec, ExperimentConfig, PolicyKind};
use anyhow::{bail, Context, Result};
use fail_core::environments::{generate_demos, DemoSet};
use fail_core::experiments::{capacity_run, lp_check_run, separation_run, CapacityRow, LpCheckRow, SeparationRow};
use fail_core::fail::{
    fail_star_train, fail_train, ifail_train, tree_identify_expert, MeteredEnv, PgTrainConfig, TrainConfig, TrainReport,
};
use fail_core::game::{policy_digest, GameTranscript, GradientMode};
use fail_core::mdp::{exact_value, rollout, Mdp, PolicySequence, PolicyTable};
use fail_core::Seed;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Runs `f` on every seed in a pool of `jobs` workers (0 = rayon default)
/// and returns the results in seed order.
pub fn run_seeds<T, F>(seeds: &[u64], jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn csv_string<R: Serialize>(rows: &[R], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Prints a table and also writes it to `out/name` when an output directory is given.
fn emit(out: Option<&Path>, name: &str, table: &str) -> Result<()> {
    print!("{table}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write(&dir.join(name), table)?;
    }
    Ok(())
}

pub fn demo_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("demos_seed{seed}.jsonl"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    environment: &'a EnvironmentSpec,
    n_per_step: usize,
    horizon: usize,
    j_expert: f64,
}

pub fn gen_expert(config: &ExperimentConfig, jobs: usize) -> Result<()> {
    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    let (mdp, expert) = config.environment.build()?;
    let j_expert = exact_value(&mdp, &expert)?;
    let sets = run_seeds(&config.seeds, jobs, |s| Ok(generate_demos(&mdp, &expert, config.n_prime, Seed(s))?))?;
    for (&s, demos) in config.seeds.iter().zip(&sets) {
        write(&demo_file(out, s), &demos.to_jsonl()?)?;
        let manifest = Manifest {
            seed: s,
            environment: &config.environment,
            n_per_step: config.n_prime,
            horizon: mdp.horizon(),
            j_expert,
        };
        write(&out.join(format!("manifest_seed{s}.json")), &serde_json::to_string_pretty(&manifest)?)?;
    }
    println!("wrote {} demo sets to {} (expert value {j_expert})", sets.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub env: String,
    pub n: usize,
    pub n_prime: usize,
    #[serde(rename = "T")]
    pub iterations: usize,
    pub trajectories_used: usize,
    #[serde(rename = "J_learned")]
    pub j_learned: f64,
    #[serde(rename = "J_expert")]
    pub j_expert: f64,
    pub gap: f64,
    pub wall_time: f64,
}

pub const SUMMARY_HEADER: [&str; 10] =
    ["algorithm", "env", "n", "n_prime", "T", "trajectories_used", "J_learned", "J_expert", "gap", "wall_time"];

fn load_demos(config: &ExperimentConfig, mdp: &Mdp, expert: &PolicySequence, seed: u64) -> Result<DemoSet> {
    match &config.demos {
        Some(dir) => {
            let path = demo_file(dir, seed);
            let text = fs::read_to_string(&path).with_context(|| format!("reading demo file {}", path.display()))?;
            Ok(DemoSet::from_jsonl(&text, Seed(seed)).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => Ok(generate_demos(mdp, expert, config.n_prime, Seed(seed))?),
    }
}

fn blank_report(config: &ExperimentConfig, seed: u64, learned: &PolicySequence, mdp: &Mdp) -> Result<TrainReport> {
    Ok(TrainReport {
        algorithm: config.algorithm.name().into(),
        seed,
        n: config.n,
        n_prime: config.n_prime,
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

/// Deterministic policy that plays `actions[h]` at the observation on `path`
/// and action 0 elsewhere.
fn path_policy(mdp: &Mdp, path: &[usize], actions: &[usize]) -> PolicySequence {
    PolicySequence::new(
        actions
            .iter()
            .enumerate()
            .map(|(h, &a)| {
                let mut acts = vec![0; mdp.obs_count(h)];
                acts[path[h]] = a;
                PolicyTable::deterministic(&acts, mdp.action_count())
            })
            .collect(),
    )
}

fn require_tree(config: &ExperimentConfig) -> Result<()> {
    if !matches!(config.environment, EnvironmentSpec::Tree { .. }) {
        bail!("{} needs the tree environment", config.algorithm.name());
    }
    Ok(())
}

pub fn train_one(config: &ExperimentConfig, mdp: &Mdp, expert: &PolicySequence, seed: u64) -> Result<TrainReport> {
    let base = TrainConfig {
        n: config.n,
        n_prime: Some(config.n_prime),
        iterations: config.iterations,
        eta: config.eta,
        readout: config.readout,
        seed: Seed(seed),
    };
    let (learned, mut rep) = match config.algorithm {
        Algorithm::Fail => {
            let demos = load_demos(config, mdp, expert, seed)?;
            let p = policy_classes(config.classes.policy, mdp)?;
            let f = discriminator_classes(&config.classes.discriminator, mdp)?;
            fail_train(mdp, &demos, &p, &f, &base)?
        }
        Algorithm::Ifail => {
            let p = policy_classes(config.classes.policy, mdp)?;
            let f = discriminator_classes(&config.classes.discriminator, mdp)?;
            ifail_train(mdp, expert, &p, &f, &base)?
        }
        Algorithm::FailStar => {
            if config.classes.policy != PolicyKind::Tabular {
                bail!("fail_star trains tabular softmax policies only");
            }
            let demos = load_demos(config, mdp, expert, seed)?;
            let f = discriminator_classes(&config.classes.discriminator, mdp)?;
            let theta0: Vec<Vec<Vec<f64>>> =
                (0..mdp.horizon() - 1).map(|h| vec![vec![0.0; mdp.action_count()]; mdp.obs_count(h)]).collect();
            let pg = PgTrainConfig { base, eta0: config.eta0, mode: GradientMode::Auto };
            let (learned, rep) = fail_star_train(mdp, &demos, &theta0, &f, &pg)?;
            (learned, rep.report)
        }
        Algorithm::TreeIdentify => {
            require_tree(config)?;
            let path = rollout(mdp, expert, Seed(seed), None)?.observations;
            let mut env = MeteredEnv::new(mdp);
            let actions = tree_identify_expert(&mut env, &path, Seed(seed).split(1))?;
            let learned = path_policy(mdp, &path, &actions);
            let mut rep = blank_report(config, seed, &learned, mdp)?;
            rep.trajectories = env.trajectories();
            (learned, rep)
        }
        Algorithm::RlRandomSearchBaseline => {
            require_tree(config)?;
            // Uniform action plans; keeps the first cheapest plan and stops at cost 0.
            let steps = mdp.horizon() - 1;
            let mut env = MeteredEnv::new(mdp);
            let mut rng = Seed(seed).split(0).rng();
            let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
            for i in 0..config.n {
                let plan: Vec<usize> = (0..steps).map(|_| rng.random_range(0..mdp.action_count())).collect();
                let traj = env.execute(&plan, Seed(seed).split2(1, i as u64))?;
                let cost = traj.terminal_cost.context("plan did not reach the last step")?;
                if best.as_ref().is_none_or(|(c, _, _)| cost < *c) {
                    best = Some((cost, plan, traj.observations));
                }
                if cost == 0.0 {
                    break;
                }
            }
            let (_, plan, path) = best.context("empty search budget")?;
            let learned = path_policy(mdp, &path, &plan);
            let mut rep = blank_report(config, seed, &learned, mdp)?;
            rep.trajectories = env.trajectories();
            (learned, rep)
        }
    };
    rep.evaluate(mdp, &learned, expert)?;
    Ok(rep)
}

pub fn train(config: &ExperimentConfig, jobs: usize) -> Result<()> {
    let out = config.out_dir()?;
    fs::create_dir_all(out)?;
    let (mdp, expert) = config.environment.build()?;
    let runs = run_seeds(&config.seeds, jobs, |s| {
        let start = Instant::now();
        let rep = train_one(config, &mdp, &expert, s).with_context(|| format!("seed {s}"))?;
        Ok((rep, start.elapsed().as_secs_f64()))
    })?;
    let mut rows = Vec::with_capacity(runs.len());
    for (rep, wall) in &runs {
        write(&out.join(format!("report_seed{}.json", rep.seed)), &rep.to_json()?)?;
        for (h, t) in rep.transcripts.iter().enumerate() {
            write(&out.join(format!("transcript_seed{}_step{h}.jsonl", rep.seed)), &t.to_jsonl()?)?;
        }
        rows.push(SummaryRow {
            algorithm: rep.algorithm.clone(),
            env: config.environment.name().into(),
            n: rep.n,
            n_prime: rep.n_prime,
            iterations: rep.iterations,
            trajectories_used: rep.trajectories,
            j_learned: rep.j_learned,
            j_expert: rep.j_expert.unwrap_or(f64::NAN),
            gap: rep.gap.unwrap_or(f64::NAN),
            wall_time: *wall,
        });
    }
    let table = csv_string(&rows, &SUMMARY_HEADER)?;
    emit(Some(out), "summary.csv", &table)
}

pub fn separation(horizons: &[usize], factor: f64, seeds: &[u64], jobs: usize, out: Option<&Path>) -> Result<()> {
    if let Some(&h) = horizons.iter().find(|&&h| h < 2) {
        bail!("horizon {h} is too short for the separation tree");
    }
    let mut rows: Vec<SeparationRow> = Vec::new();
    for &h in horizons {
        rows.extend(run_seeds(seeds, jobs, |s| {
            Ok(SeparationRow { seed: s, ..separation_run(h, factor, Seed(s).split(h as u64))? })
        })?);
    }
    let header = ["horizon", "seed", "ilfo_trajectories", "ilfo_success", "rl_budget", "rl_trajectories", "rl_success"];
    emit(out, "separation.csv", &csv_string(&rows, &header)?)?;
    let bad: Vec<&SeparationRow> =
        rows.iter().filter(|r| !r.ilfo_success || r.ilfo_trajectories != 2 * (r.horizon - 1)).collect();
    if let Some(r) = bad.first() {
        bail!("identification failed or overspent at H={} seed {}", r.horizon, r.seed);
    }
    Ok(())
}

#[derive(Serialize)]
struct CapacitySummary {
    states: usize,
    samples: usize,
    seeds: usize,
    overlap_probability: f64,
    mean_l1_same_policy: f64,
    mean_l1_other_policy: f64,
}

pub fn capacity(states: &[usize], samples: usize, seeds: &[u64], jobs: usize, out: Option<&Path>) -> Result<()> {
    let mut rows: Vec<CapacityRow> = Vec::new();
    let mut summary = Vec::new();
    for &x in states {
        let batch = run_seeds(seeds, jobs, |s| {
            Ok(CapacityRow { seed: s, ..capacity_run(x, samples, Seed(s).split(x as u64))? })
        })?;
        let k = batch.len().max(1) as f64;
        summary.push(CapacitySummary {
            states: x,
            samples,
            seeds: batch.len(),
            overlap_probability: batch.iter().filter(|r| r.overlap_same_policy > 0).count() as f64 / k,
            mean_l1_same_policy: batch.iter().map(|r| r.l1_same_policy).sum::<f64>() / k,
            mean_l1_other_policy: batch.iter().map(|r| r.l1_other_policy).sum::<f64>() / k,
        });
        rows.extend(batch);
    }
    let header = ["states", "samples", "seeds", "overlap_probability", "mean_l1_same_policy", "mean_l1_other_policy"];
    emit(out, "capacity_summary.csv", &csv_string(&summary, &header)?)?;
    if let Some(dir) = out {
        let header = [
            "states",
            "samples",
            "seed",
            "overlap_same_policy",
            "overlap_other_policy",
            "l1_same_policy",
            "l1_other_policy",
        ];
        write(&dir.join("capacity.csv"), &csv_string(&rows, &header)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LpTableRow {
    size: usize,
    seed: u64,
    points: usize,
    lp_value: f64,
    grid_value: f64,
    transport_value: f64,
    closed_form: Option<f64>,
    witness_interpolation_error: f64,
    witness_slope_excess: f64,
    pass: bool,
}

impl From<&LpCheckRow> for LpTableRow {
    fn from(r: &LpCheckRow) -> Self {
        LpTableRow {
            size: r.size,
            seed: r.seed,
            points: r.points,
            lp_value: r.lp_value,
            grid_value: r.grid_value,
            transport_value: r.transport_value,
            closed_form: r.closed_form,
            witness_interpolation_error: r.witness_interpolation_error,
            witness_slope_excess: r.witness_slope_excess,
            pass: r.pass,
        }
    }
}

pub fn lp_check(sizes: &[usize], seeds: &[u64], jobs: usize, out: Option<&Path>) -> Result<()> {
    let mut rows: Vec<LpCheckRow> = Vec::new();
    for &size in sizes {
        rows.extend(run_seeds(seeds, jobs, |s| {
            Ok(LpCheckRow { seed: s, ..lp_check_run(size, Seed(s).split(size as u64))? })
        })?);
    }
    let table: Vec<LpTableRow> = rows.iter().map(LpTableRow::from).collect();
    let header = [
        "size",
        "seed",
        "points",
        "lp_value",
        "grid_value",
        "transport_value",
        "closed_form",
        "witness_interpolation_error",
        "witness_slope_excess",
        "pass",
    ];
    emit(out, "lp_check.csv", &csv_string(&table, &header)?)?;
    let failed: Vec<&LpCheckRow> = rows.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        eprintln!("failing instance (size {}, seed {}): {}", r.size, r.seed, serde_json::to_string(&r.instance)?);
    }
    if !failed.is_empty() {
        bail!("{} of {} LP checks failed", failed.len(), rows.len());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct TranscriptSummary {
    pub file: String,
    pub iterations: usize,
    pub selected: usize,
    pub selected_utility: f64,
    pub first_utility: f64,
    pub last_utility: f64,
}

/// Summarizes every `transcript_*.jsonl` file in `dir`, sorted by file name.
pub fn report(dir: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("transcript_") && name.ends_with(".jsonl")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no transcript files in {}", dir.display());
    }
    let mut rows = Vec::with_capacity(files.len());
    for path in &files {
        let text = fs::read_to_string(path)?;
        let records = GameTranscript::records_from_jsonl(&text).with_context(|| format!("parsing {}", path.display()))?;
        let first = records.first().with_context(|| format!("{} is empty", path.display()))?;
        let (selected, best) = records
            .iter()
            .enumerate()
            .fold((0, first), |(i, b), (j, r)| if r.utility < b.utility { (j, r) } else { (i, b) });
        rows.push(TranscriptSummary {
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            iterations: records.len(),
            selected,
            selected_utility: best.utility,
            first_utility: first.utility,
            last_utility: records.last().unwrap().utility,
        });
    }
    let header = ["file", "iterations", "selected", "selected_utility", "first_utility", "last_utility"];
    print!("{}", csv_string(&rows, &header)?);
    Ok(())
}
