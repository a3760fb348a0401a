use mvmc_core::harness::{self, output, ExperimentConfig, ExperimentKind, FitOutcome};
use mvmc_core::mlmc::{EstimatorKind, LevelSchedule};
use mvmc_core::Error;

fn small(kind: &str, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
        kind = "{kind}"
        seed = 5
        {extra}
        [model]
        name = "mean-field-ou"
        alpha = 1.0
        sigma = 1.0
        init_mean = 1.0
        init_var = 0.5
        "#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

fn csv_with_threads(cfg: &ExperimentConfig, threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let out = pool.install(|| harness::run(cfg)).unwrap();
    output::csv_string(&out.table).unwrap()
}

#[test]
fn tables_are_identical_across_worker_counts() {
    let configs = [
        small("iid-variance", "functional = \"cos-mean\"\ngrid = [4, 8, 16]\nsamples = 40"),
        small("particle-variance", "functional = \"cos-mean\"\ngrid = [4, 8, 16]\nsamples = 20"),
        small("strong-poc", "grid = [4, 8, 16]\nsamples = 10\n[options]\nsteps = 8"),
        small("euler-strong", "grid = [2, 4, 8]\nsamples = 10\n[options]\nparticles = 8\nreference_steps = 32"),
        small(
            "weak-error",
            "functional = \"second-moment\"\ngrid = [4, 8, 16]\nsamples = 20\n[options]\nmax_samples = 200",
        ),
        small("complexity", "functional = \"second-moment\"\ngrid = [0.3, 0.2, 0.15]\nsamples = 2"),
        small("estimate", "functional = \"cos-mean\"\nsamples = 1\n[options]\nepsilon = 0.2"),
    ];
    for cfg in &configs {
        let a = csv_with_threads(cfg, 1);
        assert_eq!(a, csv_with_threads(cfg, 3), "{}", cfg.kind);
        assert_eq!(a, csv_with_threads(cfg, 1), "{}", cfg.kind);
        assert!(a.lines().count() > 1);
    }
}

#[test]
fn linear_iid_variance_is_flagged_zero() {
    let cfg = small("iid-variance", "functional = \"mean\"\ngrid = [4, 8, 16, 32]\nsamples = 30");
    let out = harness::run(&cfg).unwrap();
    assert_eq!(out.fit("antithetic"), Some(&FitOutcome::AllZero));
    assert!(out.table.column("antithetic_variance").unwrap().iter().all(|v| *v == Some(0.0)));
    assert!(out.fit("standard").unwrap().fitted().is_some());
}

#[test]
fn strong_statistic_vanishes_without_noise() {
    let text = r#"
        kind = "strong-poc"
        grid = [2, 4, 8]
        samples = 5
        [model]
        name = "mean-field-ou"
        alpha = 1.0
        sigma = 0.0
        init_mean = 2.0
        init_var = 0.0
        [options]
        steps = 16
    "#;
    let out = harness::run(&ExperimentConfig::from_toml(text).unwrap()).unwrap();
    assert!(out.table.column("statistic").unwrap().iter().all(|v| *v == Some(0.0)));
    assert_eq!(out.fit("statistic"), Some(&FitOutcome::AllZero));
}

#[test]
fn euler_strong_at_reference_resolution_is_zero() {
    let cfg = small(
        "euler-strong",
        "grid = [2, 4, 8, 16]\nsamples = 4\n[options]\nparticles = 8\nreference_steps = 16\nreference = \"euler\"",
    );
    let out = harness::run(&cfg).unwrap();
    let col = out.table.column("w2_squared").unwrap();
    assert_eq!(col[3], Some(0.0));
    assert!(col[0].unwrap() > col[1].unwrap());
    assert_eq!(out.notes["w2_zero_points_dropped"], 1);

    let bad = small("euler-strong", "grid = [3, 4, 8]\nsamples = 4\n[options]\nreference_steps = 16");
    assert!(matches!(harness::run(&bad), Err(Error::Config(_))));
}

#[test]
fn kuramoto_euler_strong_rate() {
    let text = r#"
        kind = "euler-strong"
        grid = [8, 16, 32, 64]
        samples = 40
        [model]
        name = "kuramoto"
        coupling = 1.0
        sigma = 1.0
        [options]
        particles = 32
        reference_steps = 512
    "#;
    let out = harness::run(&ExperimentConfig::from_toml(text).unwrap()).unwrap();
    assert_eq!(out.notes["reference"], "euler");
    let slope = out.fit("w2").unwrap().slope().unwrap();
    assert!((slope - 2.0).abs() < 0.5, "slope {slope}");
}

#[test]
fn weak_error_needs_a_closed_form() {
    let text = r#"
        kind = "weak-error"
        functional = "second-moment"
        grid = [4, 8, 16]
        samples = 10
        [model]
        name = "kuramoto"
        coupling = 1.0
        sigma = 1.0
    "#;
    let err = harness::run(&ExperimentConfig::from_toml(text).unwrap()).unwrap_err();
    assert!(matches!(err, Error::Unsupported(_)));
}

#[test]
fn mean_functional_has_no_weak_bias() {
    let cfg = small(
        "weak-error",
        "functional = \"mean\"\ngrid = [4, 8, 16]\nsamples = 400\n[options]\nmax_samples = 400",
    );
    let out = harness::run(&cfg).unwrap();
    let bias = out.table.column("bias").unwrap();
    let se = out.table.column("stderr").unwrap();
    for (b, s) in bias.iter().zip(&se) {
        assert!(b.unwrap().abs() < 4.0 * s.unwrap(), "bias {b:?} stderr {s:?}");
    }
}

#[test]
fn weak_bias_shrinks_with_step_at_large_n() {
    let text = r#"
        kind = "weak-error"
        functional = "second-moment"
        grid = [2, 4, 8]
        samples = 50
        [model]
        name = "mean-field-ou"
        alpha = 1.0
        sigma = 1.4142135623730951
        [options]
        axis = "steps"
        particles = 256
        max_samples = 2000
    "#;
    let out = harness::run(&ExperimentConfig::from_toml(text).unwrap()).unwrap();
    let b: Vec<f64> = out.table.column("abs_bias").unwrap().into_iter().map(Option::unwrap).collect();
    let se: Vec<f64> = out.table.column("stderr").unwrap().into_iter().map(Option::unwrap).collect();
    for i in 1..b.len() {
        assert!(b[i] < b[i - 1] + 3.0 * (se[i] + se[i - 1]), "{b:?}");
    }
}

#[test]
fn complexity_costs_match_schedules_and_ignore_seed() {
    let a = small("complexity", "functional = \"second-moment\"\ngrid = [0.3, 0.2, 0.15]\nsamples = 2");
    let mut b = a.clone();
    b.seed = 77;
    let (ra, rb) = (harness::run(&a).unwrap(), harness::run(&b).unwrap());
    for col in ["cost_amlmc_euler", "cost_ensemble", "cost_amlmc_exact"] {
        assert_eq!(ra.table.column(col), rb.table.column(col), "{col}");
    }
    let costs = ra.table.column("cost_amlmc_euler").unwrap();
    for (e, c) in [0.3, 0.2, 0.15].iter().zip(costs) {
        let s = LevelSchedule::from_epsilon(*e, 1.0).unwrap();
        assert_eq!(c, Some(s.cost(EstimatorKind::AmlmcEuler) as f64));
    }
    assert_ne!(ra.table.column("rmse_amlmc_euler"), rb.table.column("rmse_amlmc_euler"));
}

#[test]
fn estimate_accepts_counts_or_epsilon() {
    let by_counts = small(
        "estimate",
        "functional = \"second-moment\"\nsamples = 1\n[options]\nestimator = \"mlmc-standard\"\nbase_n = 2\ncounts = [40, 20, 10]",
    );
    let out = harness::run(&by_counts).unwrap();
    let report = out.report.as_ref().unwrap();
    assert_eq!(report.kind, EstimatorKind::MlmcStandard);
    assert_eq!(out.table.rows.len(), 3);
    assert_eq!(out.notes["estimate"], report.estimate);

    let mut both = by_counts.clone();
    both.options.epsilon = Some(0.1);
    assert!(matches!(harness::run(&both), Err(Error::Config(_))));
    let mut neither = by_counts;
    neither.options.counts = None;
    assert!(harness::run(&neither).is_err());
}

#[test]
fn outputs_carry_metadata() {
    let cfg = small("strong-poc", "grid = [4, 8, 16]\nsamples = 5\n[options]\nsteps = 4");
    let out = harness::run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = output::write_outcome(&cfg, &out, dir.path()).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("n,steps,samples,statistic,stderr\n"));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(meta["config_hash"], cfg.hash());
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["kind"], "strong-poc");
    assert!(meta["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(meta["fits"]["statistic"]["slope"].is_number());
    let back = ExperimentConfig::from_toml(meta["config"].as_str().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn every_kind_has_a_preset() {
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::preset(kind.name()).unwrap();
        assert_eq!(cfg.kind, kind);
    }
}
