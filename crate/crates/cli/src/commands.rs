use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use soda::approx::{checkpoint, evaluate, train_cold, train_mixed_baseline, train_soda, AgentMode, CategoricalHead, SodaConfig, SodaRun};
use soda::demos::{load_demos, save_demos, warm_start_q, DemoSet};
use soda::env_grid::GridSpec;
use soda::env_pointnav::{scripted_demos, DemoQuality};
use soda::regret::{report, RegretReport};
use soda::tabular::{greedy_demos, greedy_success_rate, train, train_oracle, Init, LearningCurve, QTable, TrainConfig};
use soda::Environment;

use crate::config::{usage, EnvChoice, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InitKind {
    Cold,
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Cold,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    DemoCount,
    DemoQuality,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Resolved configuration written next to a command's outputs.
fn snapshot(cfg: &ExperimentConfig, command: &str) -> Result<()> {
    write(&cfg.out.join(format!("{command}.config.toml")), cfg.to_toml()?)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn grid_only(choice: EnvChoice, command: &str) -> Result<GridSpec> {
    match choice {
        EnvChoice::Grid(spec, _) => Ok(spec),
        EnvChoice::PointNav(_) => Err(usage(format!("{command} needs a grid environment"))),
    }
}

/// Converged table for `env`, cached by map fingerprint and oracle settings.
pub fn oracle_for(cfg: &ExperimentConfig, env: &GridSpec) -> Result<QTable> {
    let settings = Sha256::digest(serde_json::to_vec(&cfg.oracle)?);
    let name = format!("oracle-{}-{}.csv", &env.fingerprint()[..16], &hex::encode(settings)[..16]);
    let path = cfg.cache_dir().join(name);
    if path.exists() {
        let (q, env_id) = QTable::load_csv(&path)?;
        if env_id == env.id() && q.n_states() == env.n_states() {
            eprintln!("oracle: cache hit {}", path.display());
            return Ok(q);
        }
    }
    eprintln!("oracle: training for {} episodes", cfg.oracle.episodes);
    let q = train_oracle(env, &cfg.oracle)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    q.save_csv(&env.id(), &path)?;
    eprintln!("oracle: cached at {}", path.display());
    Ok(q)
}

fn collect(cfg: &ExperimentConfig, choice: &EnvChoice, n: usize, quality: DemoQuality) -> Result<DemoSet> {
    match choice {
        EnvChoice::Grid(spec, _) => {
            if quality != DemoQuality::Optimal {
                return Err(usage("grid demonstrations come from the oracle and are always optimal"));
            }
            let oracle = oracle_for(cfg, spec)?;
            Ok(greedy_demos(spec, &oracle, n, cfg.demos.seed)?)
        }
        EnvChoice::PointNav(spec) => Ok(scripted_demos(spec, quality, n, cfg.demos.seed)?),
    }
}

/// Demonstrations from `path` (flag, then config), else freshly collected.
fn demos_for(cfg: &ExperimentConfig, choice: &EnvChoice, path: Option<&Path>) -> Result<DemoSet> {
    match path.or(cfg.demos.path.as_deref()) {
        Some(p) => {
            if !p.exists() {
                return Err(usage(format!("demo file {} not found", p.display())));
            }
            Ok(load_demos(p)?)
        }
        None => collect(cfg, choice, cfg.demos.count, cfg.demos.quality),
    }
}

pub fn collect_demos(
    cfg: &ExperimentConfig,
    n: Option<usize>,
    quality: Option<DemoQuality>,
    output: Option<PathBuf>,
) -> Result<()> {
    let choice = cfg.env_choice("pointnav")?;
    let n = n.unwrap_or(cfg.demos.count);
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let demos = collect(cfg, &choice, n, quality.unwrap_or(cfg.demos.quality))?;
    let path = output.unwrap_or_else(|| cfg.out.join("demos.jsonl"));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    save_demos(&demos, &path)?;
    snapshot(cfg, "collect-demos")?;
    let lens: Vec<String> = demos.trajectories().iter().map(|t| t.len().to_string()).collect();
    println!("wrote {} demonstrations to {} (lengths {})", demos.len(), path.display(), lens.join(","));
    Ok(())
}

fn tabular_aggregate(curves: &[LearningCurve]) -> Result<String> {
    let episodes = curves.iter().map(|c| c.records.len()).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let rets: Vec<f64> = curves.iter().map(|c| c.records[e].ret).collect();
        let wins: Vec<f64> = curves.iter().map(|c| c.records[e].success as u8 as f64).collect();
        let (rm, rs) = mean_std(&rets);
        let (sm, ss) = mean_std(&wins);
        rows.push(vec![e.to_string(), rm.to_string(), rs.to_string(), sm.to_string(), ss.to_string()]);
    }
    csv_string(&["episode", "return_mean", "return_std", "success_mean", "success_std"], &rows)
}

pub fn train_tabular(cfg: &ExperimentConfig, init: InitKind, demos_path: Option<&Path>) -> Result<()> {
    let choice = cfg.env_choice("easy")?;
    let demos = match init {
        InitKind::Warm => Some(demos_for(cfg, &choice, demos_path)?),
        InitKind::Cold => None,
    };
    let env = grid_only(choice, "train-tabular")?;
    snapshot(cfg, "train-tabular")?;
    let tag = match init {
        InitKind::Cold => "cold",
        InitKind::Warm => "warm",
    };
    let mut curves = Vec::new();
    for &seed in &cfg.seeds {
        let tc = TrainConfig { seed, ..cfg.tabular.clone() };
        let how = demos.as_ref().map_or(Init::Cold, Init::Warm);
        let (q, curve) = train(&env, &tc, how)?;
        write(&cfg.out.join(format!("tabular_{tag}_seed{seed}.csv")), curve.to_csv()?)?;
        q.save_csv(&env.id(), &cfg.out.join(format!("tabular_{tag}_seed{seed}_q.csv")))?;
        println!(
            "seed {seed}: first success at episode {:?}, 90% rolling success (window 100) at {:?}",
            curve.episodes_to_first_success(),
            curve.episodes_to_rolling_success(0.9, 100)
        );
        curves.push(curve);
    }
    write(&cfg.out.join(format!("tabular_{tag}_aggregate.csv")), tabular_aggregate(&curves)?)?;
    Ok(())
}

fn soda_aggregate(runs: &[SodaRun]) -> Result<String> {
    let n = runs.iter().map(|r| r.evals.len()).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let vals: Vec<f64> = runs.iter().map(|r| r.evals[i].success_rate).collect();
        let (m, s) = mean_std(&vals);
        rows.push(vec![runs[0].evals[i].step.to_string(), m.to_string(), s.to_string()]);
    }
    csv_string(&["step", "eval_success_mean", "eval_success_std"], &rows)
}

fn run_agent<E: Environment>(env: &E, mode: AgentMode, demos: Option<&DemoSet>, config: &SodaConfig) -> Result<SodaRun> {
    Ok(match (mode, demos) {
        (AgentMode::Soda, Some(d)) => train_soda(env, d, config)?,
        (AgentMode::Mixed, Some(d)) => train_mixed_baseline(env, d, config)?,
        (AgentMode::Cold, _) => train_cold(env, config)?,
        (_, None) => return Err(usage(format!("{} mode needs demonstrations", mode.name()))),
    })
}

fn agent_runs<E: Environment>(
    cfg: &ExperimentConfig,
    env: &E,
    mode: AgentMode,
    demos: Option<&DemoSet>,
    config: &SodaConfig,
    seed: u64,
) -> Result<SodaRun> {
    let sc = SodaConfig { seed, ..config.clone() };
    let run = run_agent(env, mode, demos, &sc)?;
    println!(
        "{} seed {seed}: final success {:.3}, area under curve {:.3}, first eval >= {} at step {:?}",
        mode.name(),
        run.final_success(),
        run.area_under_curve(),
        cfg.ablate.threshold,
        run.steps_to_threshold(cfg.ablate.threshold)
    );
    Ok(run)
}

fn train_agent(cfg: &ExperimentConfig, mode: AgentMode, demos_path: Option<&Path>, command: &str) -> Result<()> {
    let choice = cfg.env_choice("pointnav")?;
    let demos = match mode {
        AgentMode::Cold => None,
        _ => Some(demos_for(cfg, &choice, demos_path)?),
    };
    snapshot(cfg, command)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let run = match &choice {
            EnvChoice::Grid(env, _) => agent_runs(cfg, env, mode, demos.as_ref(), &cfg.soda, seed)?,
            EnvChoice::PointNav(env) => agent_runs(cfg, env, mode, demos.as_ref(), &cfg.soda, seed)?,
        };
        let stem = format!("{}_seed{seed}", mode.name());
        write(&cfg.out.join(format!("{stem}.csv")), run.to_csv()?)?;
        let sc = SodaConfig { seed, ..cfg.soda.clone() };
        checkpoint::save(&cfg.out.join(format!("{stem}.ckpt")), &run.net, &sc.digest())?;
        runs.push(run);
    }
    write(&cfg.out.join(format!("{}_aggregate.csv", mode.name())), soda_aggregate(&runs)?)?;
    Ok(())
}

pub fn train_soda_cmd(cfg: &ExperimentConfig, demos_path: Option<&Path>) -> Result<()> {
    train_agent(cfg, AgentMode::Soda, demos_path, "train-soda")
}

pub fn train_baseline(cfg: &ExperimentConfig, kind: BaselineKind, demos_path: Option<&Path>) -> Result<()> {
    let mode = match kind {
        BaselineKind::Cold => AgentMode::Cold,
        BaselineKind::Mixed => AgentMode::Mixed,
    };
    train_agent(cfg, mode, demos_path, "train-baseline")
}

struct TierResult {
    label: String,
    seed: u64,
    reports: Vec<RegretReport>,
}

fn heatmap_csv(env: &GridSpec, masses: &[f64]) -> Result<String> {
    let rows: Vec<Vec<String>> = masses
        .iter()
        .enumerate()
        .map(|(cell, m)| {
            let (x, y) = env.coords(cell);
            vec![x.to_string(), y.to_string(), m.to_string()]
        })
        .collect();
    csv_string(&["x", "y", "mass"], &rows)
}

pub fn regret_report(cfg: &ExperimentConfig) -> Result<()> {
    let envs: Vec<(String, GridSpec)> = match &cfg.env {
        Some(_) => {
            let choice = cfg.env_choice("easy")?;
            let label = choice.label();
            vec![(label, grid_only(choice, "regret-report")?)]
        }
        None => cfg
            .regret
            .tiers
            .iter()
            .map(|&t| (t.name().to_string(), GridSpec::preset(t)))
            .collect(),
    };
    snapshot(cfg, "regret-report")?;
    let mut results = Vec::new();
    for (label, env) in &envs {
        let oracle = oracle_for(cfg, env)?;
        let demos = greedy_demos(env, &oracle, cfg.regret.demo_count.max(1), cfg.demos.seed)?;
        let mut warm = QTable::zeros(env.n_states(), env.n_actions());
        warm_start_q(&mut warm, &demos, cfg.tabular.gamma)?;
        let cold = QTable::zeros(env.n_states(), env.n_actions());
        let tables = [("converged", &oracle), ("warm", &warm), ("cold", &cold)];
        let mut mass_sums = vec![vec![0.0; env.n_states()]; tables.len()];
        for &seed in &cfg.seeds {
            let mut reports = Vec::new();
            for (k, (name, q)) in tables.iter().enumerate() {
                let r = report(name, env, q, &oracle, cfg.regret.epsilon, cfg.regret.rollouts, cfg.regret.max_steps, seed)?;
                for (acc, m) in mass_sums[k].iter_mut().zip(r.distribution.mass()) {
                    *acc += m / cfg.seeds.len() as f64;
                }
                reports.push(r);
            }
            results.push(TierResult {
                label: label.clone(),
                seed,
                reports,
            });
        }
        for ((name, _), masses) in tables.iter().zip(&mass_sums) {
            write(&cfg.out.join(format!("heatmap_{label}_{name}.csv")), heatmap_csv(env, masses)?)?;
        }
    }

    let mut per_seed = Vec::new();
    for r in &results {
        for rep in &r.reports {
            for (dist, value) in [("uniform", rep.regret_uniform), ("onpolicy", rep.regret_onpolicy)] {
                per_seed.push(vec![r.label.clone(), r.seed.to_string(), rep.policy_id.clone(), dist.into(), value.to_string()]);
            }
        }
    }
    write(
        &cfg.out.join("regret_per_seed.csv"),
        csv_string(&["difficulty", "seed", "policy", "dist", "regret"], &per_seed)?,
    )?;

    let mut summary = Vec::new();
    for (label, _) in &envs {
        for policy in ["converged", "warm", "cold"] {
            for dist in ["uniform", "onpolicy"] {
                let vals: Vec<f64> = per_seed
                    .iter()
                    .filter(|row| &row[0] == label && row[2] == policy && row[3] == dist)
                    .map(|row| row[4].parse().expect("written above"))
                    .collect();
                let (mean, _) = mean_std(&vals);
                summary.push(vec![label.clone(), policy.into(), dist.into(), mean.to_string()]);
            }
        }
    }
    write(&cfg.out.join("regret.csv"), csv_string(&["difficulty", "policy", "dist", "regret"], &summary)?)?;

    println!("{:<10} {:>12} {:>12} {:>12} {:>12}", "tier", "warm-unif", "warm-onpol", "cold-unif", "cold-onpol");
    for (label, _) in &envs {
        let get = |policy: &str, dist: &str| {
            summary
                .iter()
                .find(|r| &r[0] == label && r[1] == policy && r[2] == dist)
                .map(|r| r[3].parse::<f64>().expect("written above"))
                .unwrap_or(f64::NAN)
        };
        println!(
            "{:<10} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            label,
            get("warm", "uniform"),
            get("warm", "onpolicy"),
            get("cold", "uniform"),
            get("cold", "onpolicy")
        );
    }
    Ok(())
}

fn ablation_rows<E: Environment>(
    cfg: &ExperimentConfig,
    env: &E,
    settings: &[(String, DemoSet)],
    rows: &mut Vec<Vec<String>>,
    summary: &mut Vec<Vec<String>>,
) -> Result<()> {
    for (value, demos) in settings {
        for &seed in &cfg.seeds {
            let run = agent_runs(cfg, env, AgentMode::Soda, Some(demos), &cfg.soda, seed)?;
            for e in &run.evals {
                rows.push(vec![value.clone(), seed.to_string(), e.step.to_string(), e.success_rate.to_string()]);
            }
            summary.push(vec![
                value.clone(),
                seed.to_string(),
                run.final_success().to_string(),
                run.steps_to_threshold(cfg.ablate.threshold)
                    .map(|s| s.to_string())
                    .unwrap_or_default(),
                run.area_under_curve().to_string(),
            ]);
        }
    }
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig, axis: Axis) -> Result<()> {
    let choice = cfg.env_choice("pointnav")?;
    let settings: Vec<(String, DemoSet)> = match axis {
        Axis::DemoCount => {
            let largest = cfg.ablate.counts.iter().copied().max().ok_or_else(|| usage("ablate.counts is empty"))?;
            if cfg.ablate.counts.contains(&0) {
                return Err(usage("demo counts must be positive"));
            }
            let pool = match &cfg.demos.path {
                Some(_) => demos_for(cfg, &choice, None)?,
                None => collect(cfg, &choice, largest, cfg.demos.quality)?,
            };
            if pool.len() < largest {
                return Err(usage(format!("demo pool holds {} trajectories, need {largest}", pool.len())));
            }
            cfg.ablate
                .counts
                .iter()
                .map(|&n| Ok((n.to_string(), pool.take(n)?)))
                .collect::<Result<_>>()?
        }
        Axis::DemoQuality => [DemoQuality::Optimal, DemoQuality::Suboptimal]
            .into_iter()
            .map(|q| {
                let name = format!("{q:?}").to_lowercase();
                Ok((name, collect(cfg, &choice, cfg.demos.count, q)?))
            })
            .collect::<Result<_>>()?,
    };
    snapshot(cfg, "ablate")?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    match &choice {
        EnvChoice::Grid(env, _) => ablation_rows(cfg, env, &settings, &mut rows, &mut summary)?,
        EnvChoice::PointNav(env) => ablation_rows(cfg, env, &settings, &mut rows, &mut summary)?,
    }
    let tag = match axis {
        Axis::DemoCount => "demo_count",
        Axis::DemoQuality => "demo_quality",
    };
    write(
        &cfg.out.join(format!("ablate_{tag}.csv")),
        csv_string(&["axis_value", "seed", "step", "eval_success"], &rows)?,
    )?;
    write(
        &cfg.out.join(format!("ablate_{tag}_summary.csv")),
        csv_string(&["axis_value", "seed", "final_success", "steps_to_threshold", "area_under_curve"], &summary)?,
    )?;
    Ok(())
}

fn eval_net<E: Environment>(env: &E, ck: &checkpoint::Checkpoint, episodes: usize, seeds: &[u64]) -> Result<Vec<f64>> {
    if ck.net.input_dim() != env.feature_dim() || ck.net.n_actions() != env.n_actions() {
        return Err(usage(format!(
            "checkpoint expects {} inputs and {} actions; environment has {} and {}",
            ck.net.input_dim(),
            ck.net.n_actions(),
            env.feature_dim(),
            env.n_actions()
        )));
    }
    let head = CategoricalHead::new(ck.net.n_bins())?;
    seeds.iter().map(|&s| Ok(evaluate(env, &ck.net, &head, episodes, s)?)).collect()
}

pub fn eval(cfg: &ExperimentConfig, path: &Path, episodes: Option<usize>) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("{} not found", path.display())));
    }
    let episodes = episodes.unwrap_or(cfg.soda.eval_episodes);
    if episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let is_net = path.extension().is_some_and(|e| e == "ckpt");
    let rates = if is_net {
        let ck = checkpoint::load(path)?;
        match cfg.env_choice("pointnav")? {
            EnvChoice::Grid(env, _) => eval_net(&env, &ck, episodes, &cfg.seeds)?,
            EnvChoice::PointNav(env) => eval_net(&env, &ck, episodes, &cfg.seeds)?,
        }
    } else {
        let (q, env_id) = QTable::load_csv(path)?;
        let env = grid_only(cfg.env_choice("easy")?, "evaluating a Q-table")?;
        if env_id != env.id() {
            return Err(usage(format!("Q-table was trained on {env_id}, not {}", env.id())));
        }
        cfg.seeds
            .iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                Ok(greedy_success_rate(&env, &q, episodes, env.max_steps(), &mut rng)?)
            })
            .collect::<Result<Vec<f64>>>()?
    };
    snapshot(cfg, "eval")?;
    let rows: Vec<Vec<String>> = cfg
        .seeds
        .iter()
        .zip(&rates)
        .map(|(s, r)| vec![s.to_string(), episodes.to_string(), r.to_string()])
        .collect();
    write(&cfg.out.join("eval.csv"), csv_string(&["seed", "episodes", "success_rate"], &rows)?)?;
    for (s, r) in cfg.seeds.iter().zip(&rates) {
        println!("seed {s}: greedy success {r:.3} over {episodes} episodes");
    }
    Ok(())
}
