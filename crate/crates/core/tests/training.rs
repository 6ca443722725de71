use fail_core::discriminators::{distribution_ipm, FiniteClass, FunctionClass, FunctionHandle, HandleRepr, Transition};
use fail_core::environments::{
    generate_demos, make_abstraction_mdp, make_lipschitz_chain, make_tree_mdp, random_mdp, RandomMdpConfig, Smoothness,
};
use fail_core::fail::{
    fail_star_train, fail_train, ifail_train, model_based_construct, tree_identify_expert, ExpertOracle, MeteredEnv,
    PgTrainConfig, TrainConfig, MODEL_CLASS_CAP,
};
use fail_core::game::{pg_minmax_solve, utility_gradient, GameTranscript, GradientMode, PgConfig, PolicyClassSpec, Readout};
use fail_core::mdp::{exact_state_distribution, exact_value, rollout, Mdp, PolicySequence, PolicyTable};
use fail_core::{Error, Seed};
use rand::Rng;

fn tree_classes() -> (Vec<PolicyClassSpec>, Vec<FunctionClass>) {
    (
        vec![PolicyClassSpec::FiniteList {
            candidates: vec![PolicyTable::deterministic(&[0], 2), PolicyTable::deterministic(&[1], 2)],
        }],
        vec![FunctionClass::Finite(FiniteClass::sign_patterns(2).unwrap())],
    )
}

fn all_deterministic(states: usize, actions: usize) -> Vec<PolicyTable> {
    let total = actions.pow(states as u32);
    (0..total)
        .map(|mut code| {
            let acts: Vec<usize> = (0..states)
                .map(|_| {
                    let a = code % actions;
                    code /= actions;
                    a
                })
                .collect();
            PolicyTable::deterministic(&acts, actions)
        })
        .collect()
}

#[test]
fn meter_counts_and_valid_intermediate_policies() {
    let config = RandomMdpConfig { horizon: 4, min_obs: 2, max_obs: 4, actions: 2, support: 2 };
    let mdp = random_mdp(&config, Seed(1)).unwrap();
    let expert = fail_core::mdp::optimal_policy(&mdp);
    let demos = generate_demos(&mdp, &expert, 100, Seed(2)).unwrap();
    let policies: Vec<PolicyClassSpec> = (0..3).map(|h| PolicyClassSpec::tabular(mdp.obs_count(h), 2)).collect();
    let f: Vec<FunctionClass> =
        (1..4).map(|h| FunctionClass::Finite(FiniteClass::sign_patterns(mdp.obs_count(h)).unwrap())).collect();
    let (learned, rep) = fail_train(&mdp, &demos, &policies, &f, &TrainConfig::new(37, 100, 20, Seed(3))).unwrap();
    assert_eq!(rep.trajectories, 37 * 3);
    learned.validate(&mdp).unwrap();
    assert!(learned.is_complete(&mdp));

    let (_, rep) = ifail_train(&mdp, &expert, &policies, &f, &TrainConfig::new(11, 11, 20, Seed(3))).unwrap();
    assert_eq!(rep.trajectories, 2 * 11 * 3);
    assert_eq!(rep.expert_queries, 11 * 3);
}

#[test]
fn report_gap_matches_exact_evaluation() {
    let (mdp, expert) = make_tree_mdp(3, &[0.4, 0.0, 0.9, 1.0]).unwrap();
    let demos = generate_demos(&mdp, &expert, 200, Seed(5)).unwrap();
    let policies: Vec<PolicyClassSpec> = (0..2).map(|h| PolicyClassSpec::tabular(1 << h, 2)).collect();
    let f: Vec<FunctionClass> = (1..3).map(|h| FunctionClass::Finite(FiniteClass::sign_patterns(1 << h).unwrap())).collect();
    let (learned, mut rep) = fail_train(&mdp, &demos, &policies, &f, &TrainConfig::new(200, 200, 50, Seed(6))).unwrap();
    rep.evaluate(&mdp, &learned, &expert).unwrap();
    let direct = exact_value(&mdp, &learned).unwrap() - exact_value(&mdp, &expert).unwrap();
    assert_eq!(rep.gap, Some(direct));
    assert_eq!(rep.j_learned, exact_value(&mdp, &learned).unwrap());
    let json = rep.to_json().unwrap();
    assert!(!json.contains("wall"));
}

#[test]
fn uniform_demonstrations_are_matched() {
    let config = RandomMdpConfig { horizon: 3, min_obs: 2, max_obs: 4, actions: 2, support: 2 };
    let mdp = random_mdp(&config, Seed(21)).unwrap();
    let uniform = PolicySequence::uniform(&mdp);
    let (n, t) = (2000, 200);
    let demos = generate_demos(&mdp, &uniform, n, Seed(22)).unwrap();
    let policies: Vec<PolicyClassSpec> = (0..2).map(|h| PolicyClassSpec::tabular(mdp.obs_count(h), 2)).collect();
    let f: Vec<FunctionClass> =
        (1..3).map(|h| FunctionClass::Finite(FiniteClass::sign_patterns(mdp.obs_count(h)).unwrap())).collect();
    let (learned, _) = fail_train(&mdp, &demos, &policies, &f, &TrainConfig::new(n, n, t, Seed(23))).unwrap();
    for h in 1..3 {
        let ours = exact_state_distribution(&mdp, &learned, h).unwrap();
        let target = exact_state_distribution(&mdp, &uniform, h).unwrap();
        let (ipm, _) = distribution_ipm(&f[h - 1], &ours, &target).unwrap();
        let k = mdp.action_count() as f64;
        let states = mdp.obs_count(h) as f64;
        let tol = 2.0 * k / (t as f64).sqrt() + 3.0 * states.sqrt() * ((k / n as f64).sqrt() + (1.0 / n as f64).sqrt());
        assert!(ipm <= tol, "step {h}: {ipm} > {tol}");
    }
}

#[test]
fn zero_rollouts_is_an_error() {
    let (mdp, expert) = make_tree_mdp(2, &[0.0, 1.0]).unwrap();
    let demos = generate_demos(&mdp, &expert, 10, Seed(0)).unwrap();
    let (p, f) = tree_classes();
    assert!(fail_train(&mdp, &demos, &p, &f, &TrainConfig::new(0, 10, 5, Seed(0))).is_err());
    assert!(ifail_train(&mdp, &expert, &p, &f, &TrainConfig::new(0, 10, 5, Seed(0))).is_err());
}

#[test]
fn both_algorithms_recover_tree_expert() {
    let (mdp, expert) = make_tree_mdp(2, &[1.0, 0.0]).unwrap();
    let (p, f) = tree_classes();
    for s in 0..10 {
        let mut config = TrainConfig::new(50, 50, 100, Seed(s));
        config.readout = Readout::Leader;
        let demos = generate_demos(&mdp, &expert, 50, Seed(50 + s)).unwrap();
        let (a, _) = fail_train(&mdp, &demos, &p, &f, &config).unwrap();
        let (b, _) = ifail_train(&mdp, &expert, &p, &f, &config).unwrap();
        assert_eq!(a, expert);
        assert_eq!(b, expert);
    }
}

#[test]
fn deterministic_expert_queries_form_a_point_mass() {
    let (mdp, expert) = make_tree_mdp(4, &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let prefix = PolicySequence::new(vec![PolicyTable::deterministic(&[1], 2), PolicyTable::deterministic(&[0, 0], 2)]);
    let mut env = MeteredEnv::new(&mdp);
    let mut oracle = ExpertOracle::new(&mdp, &expert).unwrap();
    let h = 2;
    let answers: Vec<usize> = (0..20)
        .map(|i| {
            let t = env.rollout_to(&prefix, h, Seed(i)).unwrap();
            assert!(t.actions.len() == h && t.terminal_cost.is_none());
            oracle.step(h, t.observations[h], &mut Seed(100 + i).rng()).unwrap()
        })
        .collect();
    assert!(answers.iter().all(|&x| x == answers[0]));

    // Learned step policy picks the expert action at the visited state.
    let policies: Vec<PolicyClassSpec> =
        (0..3).map(|h| PolicyClassSpec::FiniteList { candidates: all_deterministic(1 << h, 2) }).collect();
    let f: Vec<FunctionClass> = (1..4).map(|h| FunctionClass::Finite(FiniteClass::sign_patterns(1 << h).unwrap())).collect();
    let mut config = TrainConfig::new(60, 60, 100, Seed(7));
    config.readout = Readout::Leader;
    let (learned, _) = ifail_train(&mdp, &expert, &policies, &f, &config).unwrap();
    let path = rollout(&mdp, &expert, Seed(0), None).unwrap();
    for h in 0..3 {
        let x = path.observations[h];
        assert_eq!(learned.0[h].row(x), expert.0[h].row(x), "step {h}");
    }
}

#[test]
fn fail_star_data_is_on_policy() {
    let (mdp, expert) = make_tree_mdp(3, &[1.0, 0.0, 1.0, 1.0]).unwrap();
    let demos = generate_demos(&mdp, &expert, 300, Seed(3)).unwrap();
    let f: Vec<FunctionClass> = (1..3).map(|h| FunctionClass::Finite(FiniteClass::sign_patterns(1 << h).unwrap())).collect();
    let theta0: Vec<Vec<Vec<f64>>> = (0..2).map(|h| vec![vec![0.0; 2]; 1 << h]).collect();
    let config = PgTrainConfig { base: TrainConfig::new(300, 300, 50, Seed(4)), eta0: 1.0, mode: GradientMode::Auto };
    let (learned, rep) = fail_star_train(&mdp, &demos, &theta0, &f, &config).unwrap();
    assert!(rep.propensity_drift <= 1e-9);
    assert_eq!(rep.report.trajectories, 300 * 2);
    assert_eq!(rep.refresh_values.len(), 2);
    assert_eq!(rep.refresh_values[1].len(), 2);
    learned.validate(&mdp).unwrap();
}

#[test]
fn fail_star_refresh_values_audit() {
    // Reported, not asserted: fraction of runs where each refreshed step's
    // selected value does not increase across outer steps.
    let sm = Smoothness { transition: 2.0, policy: 2.0 };
    let mut monotone = 0;
    let runs = 10;
    for s in 0..runs {
        let (mdp, expert) = make_lipschitz_chain(5, 3, 2, sm, Seed(s)).unwrap();
        let demos = generate_demos(&mdp, &expert, 200, Seed(100 + s)).unwrap();
        let f: Vec<FunctionClass> = (1..3).map(|_| FunctionClass::Finite(FiniteClass::sign_patterns(5).unwrap())).collect();
        let theta0 = vec![vec![vec![0.0; 2]; 5]; 2];
        let config = PgTrainConfig { base: TrainConfig::new(200, 200, 30, Seed(200 + s)), eta0: 1.0, mode: GradientMode::Auto };
        let (_, rep) = fail_star_train(&mdp, &demos, &theta0, &f, &config).unwrap();
        let first = rep.refresh_values[0][0];
        let second = rep.refresh_values[1][0];
        monotone += (second <= first + 1e-12) as usize;
    }
    println!("non-increasing refreshed value in {monotone}/{runs} runs");
}

#[test]
fn model_based_policy_count_before_dedup() {
    let config = RandomMdpConfig { horizon: 2, min_obs: 2, max_obs: 3, actions: 2, support: 2 };
    let a = random_mdp(&config, Seed(1)).unwrap();
    let doc: fail_core::mdp::MdpDocument = serde_json::from_str(&a.to_json().unwrap()).unwrap();
    let mut doc2 = doc;
    for row in doc2.transitions.iter_mut().flatten().flatten() {
        row.reverse();
    }
    let b = Mdp::try_from(doc2).unwrap();
    let n0 = a.obs_count(0);
    let n1 = a.obs_count(1);
    let f1: Vec<f64> = (0..n1).map(|x| x as f64 / n1 as f64).collect();
    let neg: Vec<f64> = f1.iter().map(|v| -v).collect();
    let classes = vec![
        FiniteClass::sign_patterns(n0).unwrap(),
        FiniteClass::new(vec![vec![0.0; n1], f1, neg]).unwrap(),
    ];
    assert_eq!(classes[1].len(), 3);
    let built = model_based_construct(&[a, b], &classes, MODEL_CLASS_CAP).unwrap();
    assert_eq!(built.raw_policy_counts, vec![6]);
    assert_eq!(built.discriminators.len(), 2);
}

#[test]
fn model_based_cap_is_enforced() {
    let config = RandomMdpConfig { horizon: 2, min_obs: 3, max_obs: 3, actions: 2, support: 3 };
    let a = random_mdp(&config, Seed(2)).unwrap();
    let classes = vec![FiniteClass::sign_patterns(3).unwrap(), FiniteClass::sign_patterns(3).unwrap()];
    let err = model_based_construct(&[a], &classes, 4).unwrap_err();
    assert!(matches!(err, Error::ClassCap { .. }));
}

#[test]
fn identification_on_deep_tree() {
    let mut rng = Seed(9).rng();
    let costs: Vec<f64> = (0..512).map(|_| rng.random::<f64>()).collect();
    let (mdp, expert) = make_tree_mdp(10, &costs).unwrap();
    let obs = rollout(&mdp, &expert, Seed(1), None).unwrap().observations;
    let mut env = MeteredEnv::new(&mdp);
    let actions = tree_identify_expert(&mut env, &obs, Seed(2)).unwrap();
    assert_eq!(env.trajectories(), 18);
    let policy = PolicySequence::new(
        (0..9)
            .map(|h| {
                let mut acts = vec![0; 1 << h];
                acts[obs[h]] = actions[h];
                PolicyTable::deterministic(&acts, 2)
            })
            .collect(),
    );
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(exact_value(&mdp, &policy).unwrap(), min);
}

#[test]
fn identification_on_two_level_tree() {
    let (mdp, expert) = make_tree_mdp(2, &[0.5, 0.1]).unwrap();
    let obs = rollout(&mdp, &expert, Seed(0), None).unwrap().observations;
    let mut env = MeteredEnv::new(&mdp);
    assert_eq!(tree_identify_expert(&mut env, &obs, Seed(0)).unwrap(), vec![1]);
    assert_eq!(env.trajectories(), 2);
}

#[test]
fn abstraction_regime_values_near_zero() {
    let (mdp, expert) = make_abstraction_mdp(3, 2, 3, 2, Seed(4)).unwrap();
    let n = 2000;
    let demos = generate_demos(&mdp, &expert, n, Seed(5)).unwrap();
    let phi = mdp.abstraction().unwrap().to_vec();
    let policies: Vec<PolicyClassSpec> =
        (0..2).map(|h| PolicyClassSpec::FiniteList { candidates: vec![expert.0[h].clone()] }).collect();
    let f: Vec<FunctionClass> = (1..3).map(|h| FunctionClass::PiecewiseConstant { abstraction: phi[h].clone() }).collect();
    let (learned, rep) = fail_train(&mdp, &demos, &policies, &f, &TrainConfig::new(n, n, 20, Seed(6))).unwrap();
    assert_eq!(learned, expert);
    let k = mdp.action_count() as f64;
    let blocks = 2.0f64;
    let tol = 3.0 * blocks.sqrt() * ((k / n as f64).sqrt() + (1.0 / n as f64).sqrt());
    for v in &rep.game_values {
        assert!(v.abs() <= tol, "{v} > {tol}");
    }
}

#[test]
fn gradient_pushes_toward_lower_discriminator() {
    let theta = vec![vec![0.0, 0.0]];
    let learner = vec![
        Transition { x: 0, a: 0, p: 0.5, next: 0 },
        Transition { x: 0, a: 1, p: 0.5, next: 1 },
    ];
    let f = FunctionHandle::from_values(HandleRepr::Finite { index: 0 }, vec![1.0, 0.0]);
    let g = utility_gradient(&theta, &f, &learner, GradientMode::Reinforce).unwrap();
    // A descent step raises the logit of action 1, whose successor has lower f.
    assert!(g[0][0] > 0.0 && g[0][1] < 0.0);
}

#[test]
fn zero_discriminator_leaves_logits_unchanged() {
    let theta = vec![vec![0.2, -0.1], vec![0.0, 0.7]];
    let learner = vec![
        Transition { x: 0, a: 0, p: 0.5, next: 1 },
        Transition { x: 1, a: 1, p: 0.4, next: 0 },
    ];
    let zero = FunctionClass::Finite(FiniteClass::new(vec![vec![0.0; 2]]).unwrap());
    let cfg = PgConfig { iterations: 5, eta0: 3.0, mode: GradientMode::ImportanceWeighted };
    let (out, transcript) = pg_minmax_solve(&[0, 1], &learner, &theta, &zero, cfg).unwrap();
    assert_eq!(out, theta);
    assert_eq!(transcript.len(), 5);
}

#[test]
fn strict_score_form_rejects_off_policy_data() {
    let theta = vec![vec![0.0, 0.0]];
    let learner = vec![Transition { x: 0, a: 0, p: 0.9, next: 1 }];
    let f = FunctionClass::Finite(FiniteClass::sign_patterns(2).unwrap());
    let cfg = PgConfig { iterations: 3, eta0: 1.0, mode: GradientMode::Reinforce };
    let err = pg_minmax_solve(&[0], &learner, &theta, &f, cfg).unwrap_err();
    match err {
        Error::Game { iteration, source } => {
            assert_eq!(iteration, 0);
            assert!(matches!(*source, Error::PropensityMismatch { index: 0, .. }));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn transcript_jsonl_round_trip() {
    let (mdp, expert) = make_tree_mdp(2, &[0.0, 1.0]).unwrap();
    let demos = generate_demos(&mdp, &expert, 30, Seed(0)).unwrap();
    let learner: Vec<Transition> = (0..30)
        .map(|i| {
            let t = rollout(&mdp, &PolicySequence::new(vec![]), Seed(i), Some(0)).unwrap();
            Transition { x: 0, a: t.actions[0], p: t.action_probs[0], next: t.observations[1] }
        })
        .collect();
    let (p, f) = tree_classes();
    let (_, tr) =
        fail_core::game::minmax_solve(demos.step(1), &learner, &p[0], &f[0], fail_core::game::GameConfig::new(12)).unwrap();
    let text = tr.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 12);
    let back = GameTranscript::records_from_jsonl(&text).unwrap();
    assert_eq!(back, tr.records);
    let min = back.iter().map(|r| r.utility).fold(f64::INFINITY, f64::min);
    assert_eq!(back[tr.selected].utility, min);
    assert!(back[..tr.selected].iter().all(|r| r.utility > min));
}
