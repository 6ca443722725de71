use fail_core::environments::{make_tree_mdp, DemoSet};
use fail_core::mdp::exact_value;
use fail_core::Seed;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fail-lfo"));
    c.env_remove("FAIL_LFO_JOBS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const TREE4: &str = r#"
algorithm = "fail"
n = 50
n_prime = 100
iterations = 20
seeds = [0, 1]

[environment]
name = "tree"
horizon = 4
leaf_costs = [0.3, 0.9, 0.0, 1.0, 0.5, 0.6, 0.7, 0.8]
"#;

const TREE2: &str = r#"
algorithm = "fail"
n = 50
n_prime = 50
iterations = 100
readout = "leader"

[environment]
name = "tree"
horizon = 2
leaf_costs = [1.0, 0.0]

[classes]
policy = "deterministic"
discriminator = { type = "sign_patterns" }
"#;

#[test]
fn gen_expert_writes_demos_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TREE4);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&["gen-expert", "--config", &cfg, "--out", a.to_str().unwrap()]));
    ok(&run(&["gen-expert", "--config", &cfg, "--out", b.to_str().unwrap()]));
    for name in ["demos_seed0.jsonl", "demos_seed1.jsonl", "manifest_seed0.json", "manifest_seed1.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let demos = DemoSet::from_jsonl(&fs::read_to_string(a.join("demos_seed0.jsonl")).unwrap(), Seed(0)).unwrap();
    assert_eq!(demos.counts(), vec![100; 4]);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest_seed1.json")).unwrap()).unwrap();
    let (mdp, expert) = make_tree_mdp(4, &[0.3, 0.9, 0.0, 1.0, 0.5, 0.6, 0.7, 0.8]).unwrap();
    assert_eq!(manifest["j_expert"].as_f64().unwrap(), exact_value(&mdp, &expert).unwrap());
    assert_eq!(manifest["seed"].as_u64(), Some(1));
}

#[test]
fn train_tree_ten_seeds_recovers_expert() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TREE2);
    let out = dir.path().join("run");
    ok(&run(&["train", "--config", &cfg, "--seed-count", "10", "--out", out.to_str().unwrap()]));
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["algorithm", "env", "n", "n_prime", "T", "trajectories_used", "J_learned", "J_expert", "gap", "wall_time"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        assert_eq!(&r[0], "fail");
        assert_eq!(&r[1], "tree");
        assert_eq!(&r[5], "50");
        assert_eq!(r[8].parse::<f64>().unwrap(), 0.0);
    }
    assert!(out.join("report_seed9.json").exists());
    assert!(out.join("transcript_seed9_step0.jsonl").exists());
}

#[test]
fn reports_are_identical_across_reruns_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TREE4.replace("\"fail\"", "\"ifail\""));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&["train", "--config", &cfg, "--out", a.to_str().unwrap(), "--jobs", "1"]));
    let out = bin()
        .args(["train", "--config", &cfg, "--out", b.to_str().unwrap()])
        .env("FAIL_LFO_JOBS", "4")
        .output()
        .unwrap();
    ok(&out);
    for s in 0..2 {
        let name = format!("report_seed{s}.json");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report_seed0.json")).unwrap()).unwrap();
    assert_eq!(report["trajectories"].as_u64(), Some(2 * 50 * 3));
}

#[test]
fn missing_demo_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("demos = \"{}\"\n{TREE4}", dir.path().join("nowhere").display());
    let cfg = write_config(dir.path(), &body);
    let out = run(&["train", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("demos_seed0.jsonl"));
}

#[test]
fn train_reads_generated_demos() {
    let dir = tempfile::tempdir().unwrap();
    let demos = dir.path().join("demos");
    let body = format!("demos = \"{}\"\n{TREE4}", demos.display());
    let cfg = write_config(dir.path(), &body);
    ok(&run(&["gen-expert", "--config", &cfg, "--out", demos.to_str().unwrap()]));
    let a = dir.path().join("from_files");
    ok(&run(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]));
    // Without a demos directory the same sets are generated in memory.
    let cfg2 = write_config(dir.path(), TREE4);
    let b = dir.path().join("in_memory");
    ok(&run(&["train", "--config", &cfg2, "--out", b.to_str().unwrap()]));
    assert_eq!(fs::read(a.join("report_seed1.json")).unwrap(), fs::read(b.join("report_seed1.json")).unwrap());
}

#[test]
fn tree_identify_and_baseline_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TREE4.replace("\"fail\"", "\"tree_identify\""));
    let out = dir.path().join("id");
    ok(&run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    for r in reader.records() {
        let r = r.unwrap();
        assert_eq!(&r[5], "6");
        assert_eq!(r[8].parse::<f64>().unwrap(), 0.0);
    }

    let cfg = write_config(dir.path(), &TREE4.replace("\"fail\"", "\"rl_random_search_baseline\""));
    let out = dir.path().join("rl");
    ok(&run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    for r in reader.records() {
        let used: usize = r.unwrap()[5].parse().unwrap();
        assert!((1..=50).contains(&used));
    }
}

#[test]
fn tree_only_algorithms_reject_other_environments() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
algorithm = "tree_identify"
n = 5
n_prime = 5
iterations = 5
seeds = [0]

[environment]
name = "random"
horizon = 3
min_obs = 2
max_obs = 3
actions = 2
support = 2
"#;
    let cfg = write_config(dir.path(), body);
    let out = run(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn fail_star_runs_on_random_mdp() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"
algorithm = "fail_star"
n = 40
n_prime = 40
iterations = 10
seeds = [0]

[environment]
name = "random"
horizon = 3
min_obs = 2
max_obs = 3
actions = 2
support = 2
seed = 5
"#;
    let cfg = write_config(dir.path(), body);
    let out = dir.path().join("run");
    ok(&run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let r = reader.records().next().unwrap().unwrap();
    assert_eq!(&r[0], "fail_star");
    assert_eq!(&r[5], "80");
}

#[test]
fn empty_seed_list_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TREE4.replace("seeds = [0, 1]", "seeds = []"));
    let out = run(&["train", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds"));
}

#[test]
fn separation_small_horizons() {
    let text = ok(&run(&["separation", "--horizons", "2,4", "--seed-count", "5"]));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    for r in &rows {
        let h: usize = r[0].parse().unwrap();
        assert_eq!(r[2].parse::<usize>().unwrap(), 2 * (h - 1));
        assert_eq!(&r[3], "true");
        if h == 2 {
            assert_eq!(&r[4], "2");
        }
    }
}

#[test]
fn separation_rejects_horizon_one() {
    assert!(!run(&["separation", "--horizons", "1"]).status.success());
}

#[test]
fn capacity_two_states_always_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&run(&[
        "capacity-demo",
        "--states",
        "2",
        "--samples",
        "100",
        "--seed-count",
        "20",
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let r = reader.records().next().unwrap().unwrap();
    assert_eq!(r[3].parse::<f64>().unwrap(), 1.0);
    assert!(dir.path().join("capacity.csv").exists());
}

#[test]
fn lp_check_empty_sizes_gives_empty_table() {
    let text = ok(&run(&["lp-check", "--sizes", ""]));
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("size,seed"));
}

#[test]
fn lp_check_small_sizes_pass() {
    let text = ok(&run(&["lp-check", "--sizes", "1,2", "--seed-count", "5"]));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| &r[9] == "true"));
}

#[test]
fn report_summarizes_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TREE4);
    let out = dir.path().join("run");
    ok(&run(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]));
    let text = ok(&run(&["report", "--input", out.to_str().unwrap()]));
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2 * 3);
    for r in &rows {
        assert_eq!(&r[1], "20");
        let sel: f64 = r[3].parse().unwrap();
        assert!(sel <= r[4].parse::<f64>().unwrap() && sel <= r[5].parse::<f64>().unwrap());
    }
    assert!(!run(&["report", "--input", dir.path().join("missing").to_str().unwrap()]).status.success());
}

#[test]
fn commands_needing_config_fail_without_it() {
    let out = run(&["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
