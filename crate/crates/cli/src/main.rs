//! Command-line front end: meta-training, single runs, baselines and
//! post-hoc analysis of run archives.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use levelguide::harness::{
    decision_consistency, export_run, igd, feasible_nondominated, paired_traces, read_json, run_baseline, run_episode,
    write_cycles_csv, write_solutions_csv, Baseline, EpisodeResult, ProblemRotation, RunConfig, RunMetadata,
};
use levelguide::meta::{train_meta, ActionPolicy, FixedPolicy, GreedyPolicy, PolicyNet, RandomPolicy};
use levelguide::problems::{load_front_csv, ProblemRegistry, ProblemSpec, RunArchive};

#[derive(Debug, Parser)]
#[command(name = "levelguide", version, about = "Level-guided surrogate-assisted constrained multiobjective optimization")]
struct Cli {
    /// Run seed; overrides `seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for all written artifacts.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train a region-selection policy.
    Train {
        /// Comma-separated problem names, e.g. `toy-a,toy-b:5`.
        #[arg(long, value_delimiter = ',', default_value = "toy-a,toy-b")]
        problems: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Checkpoint path; defaults to `<out-dir>/policy.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one episode and export its artifacts.
    Run {
        #[command(flatten)]
        target: Target,
        /// `random`, `fixed:<action>` or a checkpoint path.
        #[arg(long, default_value = "random")]
        policy: String,
    },
    /// Run an ablation: `cv`, `tanh`, `mean_maxcci`, `random_policy` or `fixed_action:<k>`.
    Baseline {
        #[command(flatten)]
        target: Target,
        #[arg(long)]
        mode: String,
        /// Policy choosing actions for the constraint-mapping ablations.
        #[arg(long, default_value = "random")]
        policy: String,
    },
    /// Feasible-front IGD of saved archives.
    Evaluate {
        #[command(flatten)]
        target: Target,
        /// `archive.json` files written by `run` or `baseline`.
        #[arg(required = true)]
        archives: Vec<PathBuf>,
    },
    /// Fraction of decisions on which two policies agree along one trajectory.
    Consistency {
        #[command(flatten)]
        target: Target,
        /// Policy that drives the episode.
        #[arg(long)]
        a: String,
        /// Policy queried on the same states.
        #[arg(long)]
        b: String,
    },
    /// Rewrite the CSV tables of a saved archive.
    Export {
        archive: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Target {
    #[arg(long, default_value = "toy-b")]
    problem: String,
    /// Reference front CSV replacing the built-in one.
    #[arg(long)]
    front: Option<PathBuf>,
}

impl Target {
    fn problem(&self) -> Result<ProblemSpec> {
        let p = ProblemRegistry::with_builtins().get(&self.problem)?;
        Ok(match &self.front {
            Some(path) => p.with_reference_front(load_front_csv(path)?)?,
            None => p,
        })
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override `{o}` is not KEY=VALUE");
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.episode.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn policy_from(spec: &str, seed: u64) -> Result<Box<dyn ActionPolicy>> {
    if spec == "random" {
        return Ok(Box::new(RandomPolicy::new(seed)));
    }
    if let Some(a) = spec.strip_prefix("fixed:") {
        let a: usize = a.parse().with_context(|| format!("bad action in `{spec}`"))?;
        return Ok(Box::new(FixedPolicy(a)));
    }
    let (net, _) = PolicyNet::load(Path::new(spec)).with_context(|| format!("loading policy `{spec}`"))?;
    Ok(Box::new(GreedyPolicy::new(Arc::new(net), 0.0, seed)))
}

fn summarize(r: &EpisodeResult, dir: &Path) -> Result<()> {
    export_run(r, dir)?;
    let igd = r.final_igd.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
    println!(
        "{}: {} evaluations, {} feasible, final IGD {igd}, wrote {}",
        r.problem,
        r.archive.len(),
        r.archive.feasible_count(),
        dir.display()
    );
    Ok(())
}

fn train(cfg: &RunConfig, problems: &[String], out: &Path, dir: &Path) -> Result<()> {
    let registry = ProblemRegistry::with_builtins();
    let specs = problems.iter().map(|p| registry.get(p)).collect::<levelguide::Result<Vec<_>>>()?;
    let source = ProblemRotation::new(specs, cfg.episode.clone())?;
    let (net, report) = train_meta(&source, &cfg.train_config())?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    net.save(out, serde_json::json!({ "config": cfg.to_flat()?, "problems": problems }))?;
    let trace = dir.join("rewards.csv");
    let mut w = csv::Writer::from_path(&trace)?;
    w.write_record(["episode", "problem", "reward", "sliding_avg"])?;
    for r in &report.records {
        w.write_record([r.episode.to_string(), r.label.clone(), r.reward.to_string(), r.sliding_avg.to_string()])?;
    }
    w.flush()?;
    println!(
        "trained {} episodes ({} discarded, {} updates); policy {}, rewards {}",
        report.records.len(),
        report.discarded,
        report.updates,
        out.display(),
        trace.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    let seed = cfg.episode.seed;
    let dir = cli.out_dir.clone();
    match &cli.command {
        Command::Train {
            problems,
            episodes,
            workers,
            out,
        } => {
            cfg.episodes = episodes.unwrap_or(cfg.episodes);
            cfg.workers = workers.unwrap_or(cfg.workers);
            let out = out.clone().unwrap_or_else(|| dir.join("policy.ckpt"));
            train(&cfg, problems, &out, &dir)?;
        }
        Command::Run { target, policy } => {
            let mut policy = policy_from(policy, seed)?;
            let r = run_episode(&target.problem()?, &cfg.episode, policy.as_mut())?;
            summarize(&r, &dir)?;
        }
        Command::Baseline { target, mode, policy } => {
            let baseline: Baseline = mode.parse()?;
            let mut guide = policy_from(policy, seed)?;
            let r = run_baseline(&target.problem()?, &cfg.episode, baseline, guide.as_mut())?;
            summarize(&r, &dir)?;
        }
        Command::Evaluate { target, archives } => {
            let problem = target.problem()?;
            let front = problem.reference_front()?;
            println!("archive,evaluations,feasible,igd");
            for path in archives {
                let archive: RunArchive = read_json(path)?;
                let v = igd(&feasible_nondominated(&archive.solutions), front)?;
                println!(
                    "{},{},{},{}",
                    path.display(),
                    archive.len(),
                    archive.feasible_count(),
                    v.map(|x| x.to_string()).unwrap_or_default()
                );
            }
        }
        Command::Consistency { target, a, b } => {
            let (mut pa, mut pb) = (policy_from(a, seed)?, policy_from(b, seed)?);
            let (ta, tb) = paired_traces(&target.problem()?, &cfg.episode, pa.as_mut(), pb.as_mut())?;
            println!("{}", decision_consistency(&ta, &tb)?);
        }
        Command::Export { archive } => {
            let loaded: RunArchive = read_json(archive)?;
            fs::create_dir_all(&dir)?;
            write_solutions_csv(&loaded, &dir.join("solutions.csv"))?;
            write_cycles_csv(&loaded, &dir.join("cycles.csv"))?;
            if let Some(meta) = archive.parent().map(|p| p.join("metadata.json")).filter(|p| p.exists()) {
                let m: RunMetadata = read_json(&meta)?;
                println!("{} (seed {}): {} evaluations", m.problem, m.seed, m.evaluations);
            }
            println!("wrote {}", dir.display());
        }
    }
    Ok(())
}
