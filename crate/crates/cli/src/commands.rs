//! Subcommand arguments and their implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use alloc_envs::{do_nothing_episode, evaluate_static, greedy_static_baseline, input_dim, EnvSpec, Environment};
use alloc_layers::{
    check_feasibility, cp_project, exact_project, load_constraints, prescale, projection_gap, sampling, ConstraintSet,
    Method, FEASIBILITY_TOL,
};
use alloc_rl::{
    evaluate, load_checkpoint, save_checkpoint, train, write_learning_curve, write_training_log, Ddpg, TrainMethod,
    TrainerConfig,
};
use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checks::{gradcheck, GradTarget};
use crate::exit::{InternalFailure, ThresholdFailure};
use crate::manifest::RunManifest;

pub const MANIFEST: &str = "manifest.json";

/// Seeds as `7`, `1,2,3`, or an inclusive range `0..31` (also `0..=31`).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if b < a {
            return Err(format!("empty seed range {s}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// A preset name or a path to an environment TOML file.
pub fn load_env(name: &str) -> anyhow::Result<EnvSpec> {
    match EnvSpec::preset(name) {
        Some(spec) => Ok(spec),
        None if Path::new(name).exists() => Ok(EnvSpec::load(Path::new(name))?),
        None => bail!("unknown environment {name:?}: expected a file or one of {}", alloc_envs::PRESETS.join(", ")),
    }
}

// ---------------------------------------------------------------- project

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectMethod {
    Cs,
    Appropt,
    Exact,
    Cp,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long, value_enum)]
    pub method: ProjectMethod,
    /// Constraint set (TOML).
    #[arg(long)]
    pub bounds: PathBuf,
    /// CSV of raw inputs, one instance per row, no header.
    #[arg(long, conflicts_with = "random")]
    pub input: Option<PathBuf>,
    /// Number of random raw inputs to draw.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-instance CSV; a manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct ProjectRow {
    z: Vec<f64>,
    feasible: bool,
    sum_residual: f64,
    checksum: Option<f64>,
    gap: Option<f64>,
}

fn input_width(method: ProjectMethod, cons: &ConstraintSet) -> usize {
    match method {
        ProjectMethod::Cs | ProjectMethod::Appropt => cons.tree.n_pins(),
        _ => cons.tree.n_entities(),
    }
}

fn project_one(method: ProjectMethod, cons: &ConstraintSet, x: &[f64]) -> anyhow::Result<ProjectRow> {
    let (z, checksum, gap) = match method {
        ProjectMethod::Cs | ProjectMethod::Appropt => {
            let m = if method == ProjectMethod::Cs { Method::Cs } else { Method::AppOpt };
            let tree = cons.tree.with_method(m);
            let ev = tree.evaluate(x, true)?;
            let gap = if m == Method::AppOpt && tree.is_flat() {
                Some(projection_gap(&prescale(x, &cons.bounds)?, &cons.bounds)?.gap)
            } else {
                None
            };
            (ev.z, ev.jacobian.map(|j| j.checksum()), gap)
        }
        ProjectMethod::Exact if cons.tree.is_flat() => (exact_project(x, &cons.bounds)?.0.into_inner(), None, None),
        _ => (cp_project(x, &cons.tree)?.into_inner(), None, None),
    };
    let report = check_feasibility(&z, &cons.bounds, Some(&cons.tree), FEASIBILITY_TOL)?;
    Ok(ProjectRow { feasible: report.feasible, sum_residual: report.sum_residual, z, checksum, gap })
}

fn read_inputs(path: &Path, width: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}", path.display(), i + 1))?;
        if row.len() != width {
            bail!("{} row {}: expected {width} values, got {}", path.display(), i + 1, row.len());
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn project(args: &ProjectArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let cons = load_constraints(&args.bounds)?;
    let width = input_width(args.method, &cons);
    let inputs = match (&args.input, args.random) {
        (Some(p), _) => read_inputs(p, width)?,
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..n).map(|_| sampling::random_raw(&mut rng, width, 2.0)).collect()
        }
        (None, None) => bail!("pass --input FILE or --random N"),
    };
    let rows = inputs.iter().map(|x| project_one(args.method, &cons, x)).collect::<anyhow::Result<Vec<_>>>()?;
    let infeasible = rows.iter().filter(|r| !r.feasible).count();
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    println!("instances: {}, infeasible: {infeasible}", rows.len());
    if !gaps.is_empty() {
        let (m, s) = mean_std(&gaps);
        let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
        println!("projection gap: min {min:.3e}, mean {m:.3e} +- {s:.3e}, max {max:.3e}");
    }
    if let Some(out) = &args.out {
        let bounds_text = fs::read_to_string(&args.bounds)?;
        let mut manifest = RunManifest::new("project", argv, &[&bounds_text], vec![args.seed]);
        let manifest_path = out.with_extension("manifest.json");
        let manifest_name = manifest_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        file.write_all(manifest.csv_preamble(&manifest_name).as_bytes())?;
        let mut w = csv::Writer::from_writer(file);
        let n = cons.tree.n_entities();
        let mut header = vec!["instance".to_string()];
        header.extend((0..n).map(|k| format!("z_{k}")));
        header.extend(["feasible", "sum_residual", "jacobian_checksum", "gap"].map(String::from));
        w.write_record(&header)?;
        for (i, r) in rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(r.z.iter().map(f64::to_string));
            rec.push(u8::from(r.feasible).to_string());
            rec.push(r.sum_residual.to_string());
            rec.push(r.checksum.map(|c| c.to_string()).unwrap_or_default());
            rec.push(r.gap.map(|g| g.to_string()).unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        manifest.outputs.push(out.display().to_string());
        manifest.finish(&manifest_path)?;
    }
    if infeasible > 0 {
        return Err(InternalFailure(format!("{infeasible} infeasible outputs")).into());
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum)]
    pub target: GradTarget,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

pub fn gradcheck_cmd(args: &GradcheckArgs) -> anyhow::Result<()> {
    if args.trials == 0 {
        log::warn!("no trials requested; nothing was checked");
    }
    let stats = gradcheck(args.target, args.trials, args.seed)?;
    println!(
        "target {:?}: {} trials, {} compared, {} skipped at kinks, max relative error {:.3e}",
        args.target, stats.trials, stats.compared, stats.kinks, stats.max_error
    );
    if stats.max_error > args.tolerance {
        return Err(
            ThresholdFailure(format!("max relative error {:.3e} > {:.1e}", stats.max_error, args.tolerance)).into()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small networks for the toy environments.
    Desk,
    /// The full-size reference setup.
    Reference,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name or environment TOML.
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub method: TrainMethod,
    #[arg(long)]
    pub episodes: usize,
    /// One seed, a list `1,2,3` or a range `1..3`; several seeds get one
    /// subdirectory each.
    #[arg(long, value_parser = parse_seeds, default_value = "0")]
    pub seed: std::vec::Vec<u64>,
    /// Trainer TOML; overrides the preset (the method flag still wins).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation episodes after training (seeds 42 onward); 0 skips.
    #[arg(long, default_value_t = 0)]
    pub eval_episodes: usize,
    /// Worker threads for independent seeds.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

pub const EVAL_SEED: u64 = 42;

pub fn eval_seeds(first: u64, episodes: usize) -> Vec<u64> {
    (0..episodes as u64).map(|i| first + i).collect()
}

/// Trainer config for `method` on `spec`, from a file or the preset.
pub fn resolve_config(
    spec: &EnvSpec,
    method: TrainMethod,
    file: Option<&Path>,
    preset: Preset,
) -> anyhow::Result<TrainerConfig> {
    let mut cfg = match (file, preset) {
        (Some(p), _) => TrainerConfig::load(p)?,
        (None, Preset::Desk) => TrainerConfig::desk_for(method, spec.kind()),
        (None, Preset::Reference) => TrainerConfig::reference_for(method, spec.kind()),
    };
    cfg.method = method;
    cfg.validate()?;
    Ok(cfg)
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub eval: Option<(f64, f64)>,
}

fn train_one(
    spec: &EnvSpec,
    cfg: &TrainerConfig,
    args: &TrainArgs,
    argv: &[String],
    seed: u64,
    dir: &Path,
) -> anyhow::Result<TrainOutcome> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let env_text = spec.to_toml();
    let cfg_text = cfg.to_toml();
    let mut manifest = RunManifest::new("train", argv.to_vec(), &[&env_text, &cfg_text], vec![seed]);
    let mut env = spec.build()?;
    let mut agent = Ddpg::new(cfg.clone(), input_dim(env.n_entities()), env.constraints(), env.n_resources(), seed)?;
    let episodes = args.episodes;
    let records = train(&mut agent, env.as_mut(), episodes, seed, |r| {
        if (r.episode + 1) % 100 == 0 || r.episode + 1 == episodes {
            log::info!("seed {seed} episode {} reward {:.3} sigma {:.4}", r.episode + 1, r.reward, r.sigma);
        }
    })?;
    let preamble = manifest.csv_preamble(MANIFEST);
    let mut write_csv = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> alloc_rl::Result<()>| -> anyhow::Result<()> {
        let mut buf = preamble.clone().into_bytes();
        f(&mut buf)?;
        fs::write(dir.join(name), buf)?;
        manifest.outputs.push(name.to_string());
        Ok(())
    };
    write_csv("learning_curve.csv", &|b| write_learning_curve(b, &records))?;
    write_csv("training_log.csv", &|b| write_training_log(b, &records))?;
    fs::write(dir.join("env.toml"), &env_text)?;
    fs::write(dir.join("trainer.toml"), &cfg_text)?;
    save_checkpoint(&agent, &dir.join("checkpoint.json"))?;
    manifest.outputs.extend(["env.toml", "trainer.toml", "checkpoint.json"].map(String::from));
    let eval = if args.eval_episodes > 0 {
        let scores = evaluate(&agent, env.as_mut(), &eval_seeds(EVAL_SEED, args.eval_episodes))?;
        Some(mean_std(&scores))
    } else {
        None
    };
    manifest.finish(&dir.join(MANIFEST))?;
    Ok(TrainOutcome { seed, dir: dir.to_path_buf(), eval })
}

pub fn train_cmd(args: &TrainArgs, argv: Vec<String>) -> anyhow::Result<Vec<TrainOutcome>> {
    let spec = load_env(&args.env)?;
    let cfg = resolve_config(&spec, args.method, args.config.as_deref(), args.preset)?;
    let seeds = &args.seed;
    let dir_for = |s: u64| if seeds.len() == 1 { args.out.clone() } else { args.out.join(format!("seed-{s}")) };
    let workers = args.parallel.clamp(1, seeds.len().max(1));
    let mut outcomes: Vec<anyhow::Result<TrainOutcome>> = Vec::new();
    for chunk in seeds.chunks(workers) {
        let results = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&s| {
                    let (spec, cfg, argv, dir) = (&spec, &cfg, &argv, dir_for(s));
                    scope.spawn(move || train_one(spec, cfg, args, argv, s, &dir))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect::<Vec<_>>()
        });
        outcomes.extend(results);
    }
    let outcomes = outcomes.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    for o in &outcomes {
        match o.eval {
            Some((m, s)) => println!("seed {}: {} (evaluation {m:.3} +- {s:.3})", o.seed, o.dir.display()),
            None => println!("seed {}: {}", o.seed, o.dir.display()),
        }
    }
    Ok(outcomes)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub env: String,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// First evaluation seed; episodes use consecutive seeds.
    #[arg(long, default_value_t = EVAL_SEED)]
    pub seed: u64,
    /// Per-episode scores.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_cmd(args: &EvalArgs, argv: Vec<String>) -> anyhow::Result<(f64, f64)> {
    let spec = load_env(&args.env)?;
    let mut env = spec.build()?;
    let snap = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let agent = Ddpg::from_snapshot(snap, env.constraints(), 0)?;
    let seeds = eval_seeds(args.seed, args.episodes);
    let scores = evaluate(&agent, env.as_mut(), &seeds)?;
    let (m, s) = mean_std(&scores);
    println!("evaluation over {} episodes from seed {}: {m:.4} +- {s:.4}", args.episodes, args.seed);
    if let Some(out) = &args.out {
        let ckpt = fs::read_to_string(&args.checkpoint)?;
        write_scores(out, "eval", argv, &[&spec.to_toml(), &ckpt], &seeds, &scores)?;
    }
    Ok((m, s))
}

fn write_scores(
    out: &Path,
    command: &str,
    argv: Vec<String>,
    parts: &[&str],
    seeds: &[u64],
    scores: &[f64],
) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new(command, argv, parts, seeds.to_vec());
    let manifest_path = out.with_extension("manifest.json");
    let name = manifest_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    file.write_all(manifest.csv_preamble(&name).as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["seed", "reward"])?;
    for (s, r) in seeds.iter().zip(scores) {
        w.write_record([s.to_string(), r.to_string()])?;
    }
    w.flush()?;
    manifest.outputs.push(out.display().to_string());
    manifest.finish(&manifest_path)
}

// ---------------------------------------------------------------- baseline

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    /// Greedy static allocation built on the baseline seeds.
    Greedy,
    /// Keep whatever distribution the episode starts with.
    DoNothing,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long, value_enum, default_value_t = Policy::Greedy)]
    pub policy: Policy,
    /// Episodes the greedy allocation is built on.
    #[arg(long, value_parser = parse_seeds, default_value = "0..31")]
    pub seeds: std::vec::Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub eval_episodes: usize,
    #[arg(long, default_value_t = EVAL_SEED)]
    pub eval_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Greedy-static allocation for `env` and its per-episode scores on `eval`.
pub fn greedy_scores(env: &dyn Environment, build_seeds: &[u64], eval: &[u64]) -> anyhow::Result<(Vec<u32>, Vec<f64>)> {
    let alloc = greedy_static_baseline(env, env.n_resources(), build_seeds)?;
    let scores = evaluate_static(env, alloc.counts(), eval)?;
    Ok((alloc.counts().to_vec(), scores))
}

pub fn do_nothing_scores(env: &mut dyn Environment, eval: &[u64]) -> anyhow::Result<Vec<f64>> {
    Ok(eval.iter().map(|&s| do_nothing_episode(env, s)).collect::<Result<Vec<_>, _>>()?)
}

pub fn baseline_cmd(args: &BaselineArgs, argv: Vec<String>) -> anyhow::Result<(f64, f64)> {
    let spec = load_env(&args.env)?;
    let mut env = spec.build()?;
    let eval = eval_seeds(args.eval_seed, args.eval_episodes);
    let scores = match args.policy {
        Policy::Greedy => {
            let (counts, scores) = greedy_scores(env.as_ref(), &args.seeds, &eval)?;
            let on_build = evaluate_static(env.as_ref(), &counts, &args.seeds)?;
            let (m, s) = mean_std(&on_build);
            println!("greedy-static allocation: {counts:?}");
            println!("score on {} baseline seeds: {m:.4} +- {s:.4}", args.seeds.len());
            scores
        }
        Policy::DoNothing => do_nothing_scores(env.as_mut(), &eval)?,
    };
    let (m, s) = mean_std(&scores);
    println!("evaluation over {} episodes from seed {}: {m:.4} +- {s:.4}", eval.len(), args.eval_seed);
    if let Some(out) = &args.out {
        write_scores(out, "baseline", argv, &[&spec.to_toml()], &eval, &scores)?;
    }
    Ok((m, s))
}

// ---------------------------------------------------------------- curves

#[derive(Debug, Args)]
pub struct CurvesArgs {
    /// Training output directories.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Long-format CSV: run, env, method, seed, episode, reward.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn curves_cmd(args: &CurvesArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let mut rows = Vec::new();
    let mut parts = Vec::new();
    for dir in &args.runs {
        let cfg = TrainerConfig::load(&dir.join("trainer.toml"))?;
        let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)
            .with_context(|| format!("{}/{MANIFEST}", dir.display()))?;
        // the name the run was started with, else the environment family
        let env_name = match manifest.args.iter().position(|a| a == "--env") {
            Some(i) if i + 1 < manifest.args.len() => manifest.args[i + 1].clone(),
            _ => EnvSpec::from_toml(&fs::read_to_string(dir.join("env.toml"))?)?.kind().to_string(),
        };
        let seed = manifest.seeds.first().copied().unwrap_or(0);
        let curve = dir.join("learning_curve.csv");
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&curve)?;
        for rec in rdr.records() {
            let rec = rec?;
            rows.push([
                dir.display().to_string(),
                env_name.clone(),
                cfg.method.to_string(),
                seed.to_string(),
                rec[0].to_string(),
                rec[1].to_string(),
            ]);
        }
        parts.push(manifest.config_hash);
    }
    let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let mut manifest = RunManifest::new("curves", argv, &refs, Vec::new());
    let manifest_path = args.out.with_extension("manifest.json");
    let name = manifest_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let mut file = fs::File::create(&args.out)?;
    file.write_all(manifest.csv_preamble(&name).as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["run", "env", "method", "seed", "episode", "reward"])?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    manifest.outputs.push(args.out.display().to_string());
    manifest.finish(&manifest_path)?;
    println!("{} rows from {} runs", rows.len(), args.runs.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1, 4,2").unwrap(), vec![1, 4, 2]);
        assert_eq!(parse_seeds("0..31").unwrap().len(), 32);
        assert_eq!(parse_seeds("3..=5").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("5..3").is_err());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
