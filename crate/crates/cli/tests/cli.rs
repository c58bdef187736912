use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FAST: &str = r#"
[oracle]
episodes = 20000

[tabular]
episodes = 300

[regret]
rollouts = 200

[soda]
total_steps = 400
hidden = [16]
batch_size = 16
eval_interval = 200
eval_episodes = 3
learning_rate = 0.001

[demos]
count = 2
"#;

fn soda(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("fast.toml");
    if !config.exists() {
        fs::write(&config, FAST).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_soda"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn invalid_arguments_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(soda(p, &["collect-demos", "--n", "0"]).status.code(), Some(2));
    assert_eq!(soda(p, &["ablate", "--axis", "demo-colour"]).status.code(), Some(2));
    assert_eq!(soda(p, &["train-soda", "--demos", "missing.jsonl"]).status.code(), Some(2));
    assert_eq!(soda(p, &["--env", "nowhere", "train-tabular"]).status.code(), Some(2));
    assert_eq!(soda(p, &["--seed-list", "1,1", "train-soda"]).status.code(), Some(2));
    let bad = p.join("bad.toml");
    fs::write(&bad, "[soda]\nlearning_rat = 1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_soda"))
        .args(["--config", bad.to_str().unwrap(), "train-soda"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn demos_collected_then_reused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&soda(p, &["collect-demos", "--n", "3", "--quality", "suboptimal"]));
    let text = read(p, "demos.jsonl");
    assert_eq!(text.lines().count(), 3);
    assert!(p.join("out/collect-demos.config.toml").exists());
    let demos = p.join("out/demos.jsonl");
    ok(&soda(p, &["--seed-list", "5", "train-soda", "--demos", demos.to_str().unwrap()]));
    assert!(p.join("out/soda_seed5.csv").exists());
}

#[test]
fn one_curve_per_seed_plus_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&soda(p, &["--seed-list", "0,1,2", "train-baseline", "--kind", "mixed"]));
    for s in 0..3 {
        let csv = read(p, &format!("mixed_seed{s}.csv"));
        assert!(csv.starts_with("seed,step,episode,return,success,eval_success,loss_online,loss_demo\n"));
        assert!(p.join(format!("out/mixed_seed{s}.ckpt")).exists());
    }
    let agg = read(p, "mixed_aggregate.csv");
    assert_eq!(agg.lines().next(), Some("step,eval_success_mean,eval_success_std"));
    assert_eq!(agg.lines().count(), 3);

    // The checkpoint evaluates against the environment it was trained on.
    let ckpt = p.join("out/mixed_seed0.ckpt");
    ok(&soda(p, &["--seed-list", "0", "eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "4"]));
    assert!(read(p, "eval.csv").starts_with("seed,episodes,success_rate\n0,4,"));
    let wrong = soda(p, &["--env", "easy", "eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let names = [
        "soda_seed0.csv",
        "soda_seed1.csv",
        "soda_seed0.ckpt",
        "soda_aggregate.csv",
        "tabular_warm_seed0.csv",
        "tabular_warm_seed1_q.csv",
        "tabular_warm_aggregate.csv",
        "train-soda.config.toml",
    ];
    let run = || {
        ok(&soda(p, &["--seed-list", "0,1", "train-soda"]));
        ok(&soda(p, &["--env", "easy", "--seed-list", "0,1", "train-tabular", "--init", "warm"]));
        names.map(|n| fs::read(p.join("out").join(n)).unwrap())
    };
    let first = run();
    fs::remove_dir_all(p.join("out")).unwrap();
    let second = run();
    for ((a, b), name) in first.iter().zip(&second).zip(names) {
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn regret_report_outputs_and_oracle_cache() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let first = soda(p, &["--env", "easy", "--seed-list", "0,1", "regret-report"]);
    ok(&first);
    assert!(String::from_utf8_lossy(&first.stderr).contains("oracle: training"));
    let second = soda(p, &["--env", "easy", "--seed-list", "0,1", "regret-report"]);
    ok(&second);
    let log = String::from_utf8_lossy(&second.stderr);
    assert!(log.contains("oracle: cache hit") && !log.contains("oracle: training"), "{log}");

    let summary = read(p, "regret.csv");
    assert_eq!(summary.lines().next(), Some("difficulty,policy,dist,regret"));
    assert_eq!(summary.lines().count(), 1 + 3 * 2);
    assert_eq!(read(p, "regret_per_seed.csv").lines().count(), 1 + 2 * 3 * 2);
    for policy in ["converged", "warm", "cold"] {
        let heat = read(p, &format!("heatmap_easy_{policy}.csv"));
        let total: f64 = heat.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9, "{policy}: {total}");
        assert_eq!(heat.lines().count(), 1 + 25);
    }
}

#[test]
fn ablation_writes_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = p.join("fast.toml");
    fs::write(&cfg, format!("{FAST}\n[ablate]\ncounts = [1, 2]\n")).unwrap();
    ok(&soda(p, &["--seed-list", "3", "ablate", "--axis", "demo-count"]));
    let long = read(p, "ablate_demo_count.csv");
    assert_eq!(long.lines().next(), Some("axis_value,seed,step,eval_success"));
    // Two settings, one seed, two evaluations each.
    assert_eq!(long.lines().count(), 1 + 2 * 2);
    assert!(long.lines().skip(1).all(|l| l.starts_with("1,3,") || l.starts_with("2,3,")));
    assert_eq!(read(p, "ablate_demo_count_summary.csv").lines().count(), 3);
}
