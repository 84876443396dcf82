use anyhow::Context;
use bayesg::exec::{execute, ExecError};
use bayesg::harness::{
    ablation_suite, export_graph_artifacts, load_checkpoint, run_experiment, ConfigError,
    ExperimentConfig, HarnessError,
};
use bayesg::rng::mix;
use bayesg::trainer::{MaskMode, Method, TrainError};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "bayesg", about = "Decentralized multi-agent A2C with latent graph inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML); defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<Method>,
    /// Masking strategy: learned, none, or random.
    #[arg(long)]
    mask: Option<MaskMode>,
    /// Comma-separated mask feature groups, e.g. "state,policy,traj".
    #[arg(long)]
    mask_features: Option<String>,
    /// Environment graph: grid:RxC or file:<edge-list>.
    #[arg(long)]
    env: Option<String>,
    /// Output directory (overridden by BAYESG_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExecArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Message drop probability.
    #[arg(long)]
    drop: Option<f64>,
    /// Delivery delay in microticks.
    #[arg(long)]
    delay: Option<u64>,
    /// Defaults to the checkpoint config's [exec] episodes.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    delta_control: Option<u64>,
    #[arg(long)]
    delta_comm: Option<u64>,
    /// Threshold the posterior mean mask instead of sampling per step.
    #[arg(long)]
    mean_mask: bool,
    /// Also dump per-step trajectories (step, node, queue sum, action, reward).
    #[arg(long)]
    trajectory: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train per the config's seed list and write metrics/checkpoints.
    Train(TrainArgs),
    /// Run decentralized execution from a checkpoint.
    Exec(ExecArgs),
    /// Run the masking and feature ablation suites.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the aggregated latent graph from a checkpoint.
    ExportGraph {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        probe_seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config, reporting the first problem found.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig, ConfigError> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(cli: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    if let Ok(env) = std::env::var("BAYESG_OUT") {
        return PathBuf::from(env);
    }
    cli.clone().unwrap_or_else(|| PathBuf::from(&cfg.experiment.out_dir))
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.experiment.seeds = vec![seed];
    }
    if let Some(m) = args.method {
        cfg.trainer.method = m;
    }
    if let Some(m) = args.mask {
        cfg.trainer.mask_mode = m;
    }
    if let Some(f) = &args.mask_features {
        let parsed = bayesg::mask::MaskFeatureConfig::parse(f)
            .map_err(ConfigError::Invalid)?;
        cfg.trainer.mask_features = parsed.into();
    }
    if let Some(e) = &args.env {
        cfg.env.graph = e.clone();
    }
    cfg.validate()?;
    let dir = out_dir(&args.out, &cfg);
    let summary = run_experiment(&cfg, &dir)?;
    for o in &summary.per_seed {
        match &o.error {
            None => println!("seed {}: ok", o.seed),
            Some(e) => println!("seed {}: FAILED ({e})", o.seed),
        }
    }
    println!("artifacts written to {}", dir.display());
    if summary.per_seed.iter().any(|o| o.error.is_some()) {
        anyhow::bail!("one or more seeds failed");
    }
    Ok(())
}

fn cmd_exec(args: ExecArgs) -> anyhow::Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let cfg = &loaded.config;
    let mut exec_cfg = cfg.exec_config();
    if let Some(p) = args.drop {
        exec_cfg.drop_prob = p;
    }
    if let Some(d) = args.delay {
        exec_cfg.delay_ticks = d;
    }
    if let Some(c) = args.delta_control {
        exec_cfg.delta_control = c;
    }
    if let Some(c) = args.delta_comm {
        exec_cfg.delta_comm = c;
    }
    if args.mean_mask {
        exec_cfg.mean_mask = true;
    }
    let episodes = args.episodes.unwrap_or(cfg.exec.episodes).max(1);
    let dir = out_dir(&args.out, cfg);
    std::fs::create_dir_all(&dir)?;

    let tr = &loaded.trainer;
    let params: Vec<_> = tr.slots.iter().map(|s| s.params.clone()).collect();
    let egos: Vec<_> = tr.slots.iter().map(|s| s.ego.clone()).collect();
    let dims: Vec<_> = tr.slots.iter().map(|s| s.dims).collect();

    let mut returns_csv = std::fs::File::create(dir.join("exec_returns.csv"))?;
    writeln!(returns_csv, "episode,return")?;
    let mut edge_totals: Vec<(usize, usize, u64, u64, u64, f64)> = Vec::new();
    for ep in 0..episodes {
        let eval_seed = mix(cfg.experiment.eval_seed, ep as u64);
        let report =
            execute(&tr.cfg, &exec_cfg, &tr.env, &params, &egos, &dims, eval_seed)?;
        writeln!(returns_csv, "{ep},{}", report.total_return)?;
        if edge_totals.is_empty() {
            edge_totals = report
                .messages
                .per_edge
                .iter()
                .map(|e| (e.from, e.to, 0, 0, 0, 0.0))
                .collect();
        }
        for (tot, e) in edge_totals.iter_mut().zip(&report.messages.per_edge) {
            tot.2 += e.sent;
            tot.3 += e.delivered;
            tot.4 += e.dropped;
            tot.5 += e.retained_fraction;
        }
        if args.trajectory {
            let mut f = std::fs::File::create(dir.join(format!("trajectory_ep{ep}.csv")))?;
            writeln!(f, "step,node,queue_sum,action,reward")?;
            for (t, actions) in report.actions.iter().enumerate() {
                for (node, &a) in actions.iter().enumerate() {
                    writeln!(
                        f,
                        "{t},{node},{},{a},{}",
                        report.queue_sums[t][node], report.rewards[t][node]
                    )?;
                }
            }
        }
    }
    let mut f = std::fs::File::create(dir.join("exec_edges.csv"))?;
    writeln!(f, "from,to,sent,delivered,dropped,mean_retained_fraction")?;
    for (from, to, sent, delivered, dropped, retained) in edge_totals {
        writeln!(
            f,
            "{from},{to},{sent},{delivered},{dropped},{}",
            retained / episodes as f64
        )?;
    }
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_ablate(config: Option<PathBuf>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(&config)?;
    cfg.validate()?;
    let dir = out_dir(&out, &cfg);
    let report = ablation_suite(&cfg, &dir)?;
    println!("{:<22} {:>14} {:>14}", "variant", "mean_final", "std_final");
    for row in report.masking.iter().chain(&report.features) {
        println!("{:<22} {:>14.3} {:>14.3}", row.label, row.mean, row.std);
    }
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn cmd_export_graph(
    checkpoint: &Path,
    probe_seed: Option<u64>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let probe = probe_seed.unwrap_or(loaded.config.experiment.eval_seed);
    let dir = out_dir(&out, &loaded.config);
    export_graph_artifacts(&loaded.trainer, probe, &dir)?;
    println!("latent graph written to {}", dir.display());
    Ok(())
}

/// 0 success, 2 configuration error, 3 numeric failure (1 otherwise).
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            return match h {
                HarnessError::Config(_) => 2,
                HarnessError::AllSeedsFailed(_) => 3,
                HarnessError::Checkpoint(_) => 2,
                HarnessError::Io(_) => 1,
            };
        }
        if let Some(t) = cause.downcast_ref::<TrainError>() {
            return match t {
                TrainError::NonFinite { .. } | TrainError::Optim(_) | TrainError::Env(_) => 3,
            };
        }
        if cause.is::<ExecError>() {
            return 3;
        }
        if cause.is::<bayesg::harness::CheckpointError>() {
            return 2;
        }
    }
    if err.to_string().contains("seeds failed") {
        return 3;
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Exec(args) => cmd_exec(args),
        Command::Ablate { config, out } => cmd_ablate(config, out),
        Command::ExportGraph { checkpoint, probe_seed, out } => {
            cmd_export_graph(&checkpoint, probe_seed, out)
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::from_path(&config)
                .with_context(|| format!("validating {}", config.display()))?;
            cfg.env_config()?; // also checks the graph spec resolves
            println!("ok: {}", config.display());
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code(&e));
        }
    }
}
