use std::path::Path;
use std::process::{Command, Output};

fn lme(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lme"))
        .args(args)
        .current_dir(dir)
        .env_remove("LME_SEED")
        .output()
        .expect("failed to run lme")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .trim()
        .parse()
        .unwrap()
}

const ZERO_PAIR: &str = r#"{"visible_count": 2, "hidden_count": 0, "weights": []}"#;
const LN2_PAIR: &str = r#"{"visible_count": 2, "hidden_count": 0, "weights": [{"a": 0, "b": 1, "value": 0.6931471805599453}]}"#;

#[test]
fn train_writes_model_and_monotone_trace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.txt"), "1 1\n0 1\n1 0\n1 1\n").unwrap();
    let o = lme(&["train", "--data", "d.txt", "--hidden", "1", "--seed", "4", "-o", "run"], dir.path());
    assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", stderr(&o));
    assert!(dir.path().join("run/model.json").is_file());
    let trace = std::fs::read_to_string(dir.path().join("run/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "outer_iter,log_likelihood,entropy,max_residual,q_value");
    let ll: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(ll.len() > 1);
    for w in ll.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    let termination = stdout(&o).lines().next().unwrap().to_string();
    let expected = if o.status.code() == Some(0) { "termination converged" } else { "termination iteration_cap" };
    assert!(termination == expected || termination == "termination stalled", "{termination}");
}

#[test]
fn gradient_optimizer_and_inner_steps_route() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.txt"), "1 1\n0 1\n1 0\n1 1\n").unwrap();
    let o = lme(
        &["train", "--data", "d.txt", "--hidden", "1", "--optimizer", "gradient-em", "--set", "outer_iteration_cap=40", "-o", "g"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.path().join("g/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 42);
    assert!(trace.lines().skip(1).all(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap().is_finite()));

    let o = lme(&["train", "--data", "d.txt", "--hidden", "1", "--inner-steps", "0", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verbose_streams_progress_to_stderr_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.txt"), "1 1\n0 1\n").unwrap();
    let o = lme(
        &["--verbose", "train", "--data", "d.txt", "--hidden", "1", "--set", "outer_iteration_cap=5", "-o", "v"],
        dir.path(),
    );
    assert_eq!(stderr(&o).lines().filter(|l| l.starts_with("iter")).count(), 6);
    assert!(stdout(&o).lines().all(|l| !l.starts_with("iter")));
}

#[test]
fn malformed_dataset_exits_1_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "0 1 0 1 1\n01x11\n").unwrap();
    let o = lme(&["train", "--data", "bad.txt", "--hidden", "1", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.txt:2"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.txt"), "1 1\n").unwrap();
    assert_eq!(lme(&["frobnicate"], dir.path()).status.code(), Some(1));
    let o = lme(&["train", "--data", "d.txt", "--hidden", "1", "--set", "speed=3", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("inner_steps"), "{}", stderr(&o));
    std::fs::write(dir.path().join("c.cfg"), "inner_steps = 2\nwat = 1\n").unwrap();
    let o = lme(&["train", "--data", "d.txt", "--hidden", "1", "--config", "c.cfg", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c.cfg:2"), "{}", stderr(&o));
    assert_eq!(lme(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn eval_prints_labeled_metrics() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("zero.json"), ZERO_PAIR).unwrap();
    std::fs::write(dir.path().join("ln2.json"), LN2_PAIR).unwrap();
    let o = lme(&["eval", "ln2.json", "ln2.json"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(value(&stdout(&o), "cross_entropy").abs() < 1e-12);

    let o = lme(&["eval", "zero.json", "zero.json"], dir.path());
    assert!((value(&stdout(&o), "truth_entropy") - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);

    std::fs::write(dir.path().join("d.txt"), "1 1\n0 0\n").unwrap();
    let o = lme(&["eval", "zero.json", "ln2.json", "--data", "d.txt"], dir.path());
    let out = stdout(&o);
    assert!((value(&out, "cross_entropy") - 0.04986).abs() < 1e-4);
    assert!((value(&out, "truth_log_likelihood") - 0.25f64.ln()).abs() < 1e-12);
    assert!((value(&out, "estimate_log_likelihood") - 0.5 * (0.4f64.ln() + 0.2f64.ln())).abs() < 1e-12);

    std::fs::write(
        dir.path().join("three.json"),
        r#"{"visible_count": 3, "hidden_count": 0, "weights": []}"#,
    )
    .unwrap();
    assert_eq!(lme(&["eval", "zero.json", "three.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn sample_writes_seeded_datasets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), LN2_PAIR).unwrap();
    assert_eq!(lme(&["sample", "m.json", "-n", "3", "--seed", "9", "-o", "a.txt"], dir.path()).status.code(), Some(0));
    let a = std::fs::read_to_string(dir.path().join("a.txt")).unwrap();
    assert_eq!(a.lines().count(), 3);
    assert!(a.lines().all(|l| l.split(' ').count() == 2));
    lme(&["sample", "m.json", "-n", "3", "--seed", "9", "-o", "b.txt"], dir.path());
    assert_eq!(a, std::fs::read_to_string(dir.path().join("b.txt")).unwrap());
    assert_eq!(lme(&["sample", "m.json", "-n", "0", "-o", "c.txt"], dir.path()).status.code(), Some(1));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), LN2_PAIR).unwrap();
    let run = |seed: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_lme"))
            .args(["sample", "m.json", "-n", "50", "-o", out])
            .current_dir(dir.path())
            .env("LME_SEED", seed)
            .status()
            .unwrap()
    };
    run("21", "env.txt");
    lme(&["sample", "m.json", "-n", "50", "--seed", "21", "-o", "flag.txt"], dir.path());
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("env.txt"), read("flag.txt"));
    run("22", "other.txt");
    assert_ne!(read("env.txt"), read("other.txt"));
}

#[test]
fn select_writes_annotated_picks() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.json"), r#"{"visible_count": 3, "hidden_count": 0, "weights": [{"a": 0, "b": 1, "value": 1.0}]}"#).unwrap();
    lme(&["sample", "m.json", "-n", "40", "-o", "d.txt"], dir.path());
    let o = lme(
        &["select", "--data", "d.txt", "--hidden", "1", "--restarts", "5", "--set", "outer_iteration_cap=50", "--jobs", "2", "-o", "sel"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "candidates"), 5.0);
    assert!(value(&out, "lme_entropy") >= value(&out, "mle_entropy"));
    assert!(value(&out, "mle_log_likelihood") >= value(&out, "lme_log_likelihood"));
    let lme_file = std::fs::read_to_string(dir.path().join("sel/lme.json")).unwrap();
    assert!(lme_file.contains("\"selection\": \"lme\""));
    assert!(std::fs::read_to_string(dir.path().join("sel/mle.json")).unwrap().contains("\"mle\""));
    assert_eq!(std::fs::read_to_string(dir.path().join("sel/candidates.csv")).unwrap().lines().count(), 6);

    // Strict eligibility with a cap too short to converge: no selection, exit 2.
    let o = lme(
        &["select", "--data", "d.txt", "--hidden", "1", "--restarts", "2", "--eligibility", "converged", "--set", "outer_iteration_cap=3", "-o", "strict"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no converged candidate"));
}

#[test]
fn experiment_row_accounting_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec!["experiment", "exp1", "--restarts", "3", "--trials", "2", "--sizes", "50", "--set", "outer_iteration_cap=40", "-o", out]
    };
    let o = lme(&args("a"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("exp1 T=50 mean_ce lme"));
    lme(&args("b"), dir.path());
    let results = std::fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2);
    for f in ["results.csv", "aggregate.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    let aggregate = std::fs::read_to_string(dir.path().join("a/aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().filter(|l| l.starts_with("exp1,50,")).count(), 2);

    let o = lme(&["experiment", "exp7", "-o", "c"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exp1, exp2, exp3"));
}

#[test]
fn experiment_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("tiny.cfg"),
        "name = tiny\ntruth_hidden = 1\ntruth_visible = 3\nestimator_hidden = 1\nsample_sizes = 20\n\
         trials = 1\nrestarts = 2\nouter_iteration_cap = 20\n",
    )
    .unwrap();
    let o = lme(&["experiment", "tiny.cfg", "-o", "t"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let agg = std::fs::read_to_string(dir.path().join("t/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().filter(|l| l.starts_with("tiny,20,")).count(), 2);
}
