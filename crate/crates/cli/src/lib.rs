//! `uavx` command-line driver: train agents, compare runs and roll out
//! frozen policies.
//!
//! Every command writes into an output directory containing a single
//! `manifest.txt`. Re-running a command with the same arguments overwrites
//! its outputs with identical CSVs.

mod compare;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use uavx_core::config::KvDoc;
use uavx_core::qpolicy::PolicyPair;
use uavx_core::trainer::{self, ExperimentConfig};

pub use compare::{compare_runs, read_blocks_csv, RunBlocks};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit code for unusable input: missing or malformed config, bad flags.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "uavx", version, about = "Train and evaluate depth-camera UAV obstacle-avoidance agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a training experiment and write its logs, metrics and checkpoints.
    Train(TrainArgs),
    /// Join the block metrics of several runs into comparison tables and plots.
    Compare(CompareArgs),
    /// Fly greedy episodes with a saved policy and log the trajectories.
    Rollout(RolloutArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config file (key = value lines).
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Start from a shipped world preset: corridor, simple or complex.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override any config key, e.g. `--set q.gamma=0.95`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// epsilon_greedy, convergence or guidance.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Output directory (default: $UAVX_OUT_ROOT/<world>-<strategy>-s<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "UAVX_OUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub out_root: PathBuf,
    /// Suppress per-episode progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run directories, each containing blocks.csv.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "UAVX_OUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub out_root: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// World to fly in; defaults to the config saved next to the checkpoint.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of episodes.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "UAVX_OUT_ROOT", default_value = "runs", hide_env_values = true)]
    pub out_root: PathBuf,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        Self { code: EXIT_FAILURE, error: e.into() }
    }
}

fn usage(error: impl Into<anyhow::Error>) -> CliError {
    CliError { code: EXIT_USAGE, error: error.into() }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Rollout(a) => cmd_rollout(&a),
    }
}

/// Reads the config named by the flags and applies overrides. Failures here
/// are usage errors.
fn load_config(args: &ConfigArgs, extra: &[(&str, String)], fallback: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let mut doc = match (&args.config, &args.preset) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(usage(anyhow::anyhow!("config file not found: {}", path.display())));
            }
            KvDoc::load(path).with_context(|| format!("in {}", path.display())).map_err(usage)?
        }
        (None, Some(name)) => {
            let mut d = KvDoc::default();
            d.set("world", name.as_str());
            d
        }
        (None, None) => match fallback.filter(|p| p.is_file()) {
            Some(path) => KvDoc::load(path).with_context(|| format!("in {}", path.display())).map_err(usage)?,
            None => return Err(usage(anyhow::anyhow!("one of --config or --preset is required"))),
        },
    };
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| usage(anyhow::anyhow!("--set expects KEY=VALUE, got {o:?}")))?;
        doc.set(k.trim(), v.trim());
    }
    for (k, v) in extra {
        doc.set(k, v.as_str());
    }
    let origin = args
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .or_else(|| args.preset.as_ref().map(|p| format!("preset {p}")))
        .or_else(|| fallback.map(|p| p.display().to_string()))
        .unwrap_or_default();
    ExperimentConfig::from_doc(doc).with_context(|| format!("in {origin}")).map_err(usage)
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// `manifest.txt`: run facts as `key = value`, then the config snapshot.
pub struct Manifest {
    pub command: &'static str,
    pub fields: Vec<(String, String)>,
    pub config: Option<String>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = format!("# uavx run manifest\nversion = {VERSION}\ncommand = {}\n", self.command);
        for (k, v) in &self.fields {
            s.push_str(&format!("{k} = {v}\n"));
        }
        if let Some(cfg) = &self.config {
            s.push_str("\n[config]\n");
            s.push_str(cfg);
        }
        s
    }
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let mut extra = Vec::new();
    if let Some(s) = &a.strategy {
        extra.push(("strategy", s.clone()));
    }
    if let Some(s) = a.seed {
        extra.push(("seed", s.to_string()));
    }
    if let Some(e) = a.episodes {
        extra.push(("episodes", e.to_string()));
    }
    let cfg = load_config(&a.config, &extra, None)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let world = cfg.world_preset.clone().unwrap_or_else(|| cfg.world.name.clone());
        a.out_root.join(format!("{world}-{}-s{}", cfg.explore.strategy, cfg.seed))
    });
    let ckpt_root = out.join("checkpoints");
    create_dir(&ckpt_root)?;
    let episodes_path = out.join("episodes.csv");
    let blocks_path = out.join("blocks.csv");
    let config_path = out.join("config.cfg");
    let config_text = cfg.to_config_text();
    write_file(&config_path, &config_text)?;

    let started = unix_now();
    let file = File::create(&episodes_path).with_context(|| format!("creating {}", episodes_path.display()))?;
    let mut csv = BufWriter::new(file);
    let quiet = a.quiet;
    let every = cfg.checkpoint_every;
    let total = cfg.episodes;
    let result = trainer::run_experiment(&cfg, Some(&mut csv), |rec, agent| {
        if !quiet {
            eprintln!(
                "episode {:>4}/{total}  steps {:>3}  reward {:>9.3}  eps {:.3}{}",
                rec.episode,
                rec.steps,
                rec.total_reward,
                rec.epsilon,
                if rec.collided { "  collided" } else { "" }
            );
        }
        if every > 0 && rec.episode % every == 0 && rec.episode < total {
            agent.pair.save_checkpoint(&ckpt_root.join(format!("episode_{:05}", rec.episode)), agent.train_steps)?;
        }
        Ok(())
    })
    .with_context(|| format!("training run writing to {}", out.display()))?;
    drop(csv);
    let final_dir = ckpt_root.join("final");
    result.agent.pair.save_checkpoint(&final_dir, result.agent.train_steps)?;
    let blocks_file = File::create(&blocks_path).with_context(|| format!("creating {}", blocks_path.display()))?;
    trainer::write_blocks_csv(&result.blocks, BufWriter::new(blocks_file))
        .with_context(|| format!("writing {}", blocks_path.display()))?;

    let manifest = Manifest {
        command: "train",
        fields: vec![
            ("seed".into(), cfg.seed.to_string()),
            ("strategy".into(), cfg.explore.strategy.to_string()),
            ("world".into(), cfg.world.name.clone()),
            ("episodes".into(), cfg.episodes.to_string()),
            ("started_unix".into(), started.to_string()),
            ("finished_unix".into(), unix_now().to_string()),
            ("episodes_csv".into(), "episodes.csv".into()),
            ("blocks_csv".into(), "blocks.csv".into()),
            ("config".into(), "config.cfg".into()),
            ("checkpoints".into(), "checkpoints".into()),
            ("env_steps".into(), result.agent.env_steps.to_string()),
            ("train_steps".into(), result.agent.train_steps.to_string()),
        ],
        config: Some(config_text),
    };
    write_file(&out.join("manifest.txt"), &manifest.render())?;
    for b in &result.blocks {
        println!(
            "block {}{}: mean_reward {:.3}  mean_steps {:.1}  collision_rate {:.2}",
            b.block_index,
            if b.partial { " (partial)" } else { "" },
            b.mean_reward,
            b.mean_steps,
            b.collision_rate
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> Result<(), CliError> {
    let out = a.out.clone().unwrap_or_else(|| a.out_root.join("comparison"));
    let runs = a.runs.iter().map(|d| read_blocks_csv(d)).collect::<anyhow::Result<Vec<_>>>()?;
    create_dir(&out)?;
    let written = compare_runs(&runs, &out)?;
    let started = unix_now();
    let mut fields: Vec<(String, String)> =
        a.runs.iter().enumerate().map(|(i, r)| (format!("input.{i}"), r.display().to_string())).collect();
    fields.push(("started_unix".into(), started.to_string()));
    fields.push(("finished_unix".into(), unix_now().to_string()));
    for (i, p) in written.iter().enumerate() {
        fields.push((format!("output.{i}"), p.file_name().unwrap_or_default().to_string_lossy().into_owned()));
    }
    write_file(&out.join("manifest.txt"), &Manifest { command: "compare", fields, config: None }.render())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_rollout(a: &RolloutArgs) -> Result<(), CliError> {
    // checkpoints/<name>/ sits two levels below the run directory
    let saved = a.checkpoint.parent().and_then(Path::parent).map(|run| run.join("config.cfg"));
    let cfg = load_config(&a.config, &[], saved.as_deref())?;
    if !a.checkpoint.is_dir() {
        return Err(usage(anyhow::anyhow!("checkpoint directory not found: {}", a.checkpoint.display())));
    }
    let (pair, _) = PolicyPair::load_checkpoint(&a.checkpoint, cfg.q.optimizer)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    if pair.online.input_dim() != cfg.input_dim() {
        return Err(usage(anyhow::anyhow!(
            "checkpoint expects {} inputs but the config produces {}",
            pair.online.input_dim(),
            cfg.input_dim()
        )));
    }
    let out = a.out.clone().unwrap_or_else(|| a.out_root.join("rollout"));
    create_dir(&out)?;
    let started = unix_now();
    let outcomes = trainer::greedy_rollout(&cfg, &pair, a.n, a.seed)?;
    let traj_path = out.join("trajectory.csv");
    let mut w = BufWriter::new(File::create(&traj_path).with_context(|| format!("creating {}", traj_path.display()))?);
    let io = |e: std::io::Error| anyhow::Error::new(e).context(format!("writing {}", traj_path.display()));
    writeln!(w, "{}", trainer::TRAJECTORY_CSV_HEADER).map_err(io)?;
    for (i, o) in outcomes.iter().enumerate() {
        for s in &o.trajectory {
            writeln!(w, "{}", trainer::trajectory_row(i + 1, s)).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    for (i, o) in outcomes.iter().enumerate() {
        println!(
            "episode {}: steps {} total_reward {}{}",
            i + 1,
            o.steps,
            o.total_reward,
            if o.collided { " collided" } else { "" }
        );
    }
    let n = outcomes.len().max(1) as f64;
    let mean_reward = outcomes.iter().map(|o| o.total_reward).sum::<f64>() / n;
    let mean_steps = outcomes.iter().map(|o| o.steps as f64).sum::<f64>() / n;
    println!("mean_reward {mean_reward} mean_steps {mean_steps}");
    let manifest = Manifest {
        command: "rollout",
        fields: vec![
            ("seed".into(), a.seed.to_string()),
            ("episodes".into(), a.n.to_string()),
            ("checkpoint".into(), a.checkpoint.display().to_string()),
            ("started_unix".into(), started.to_string()),
            ("finished_unix".into(), unix_now().to_string()),
            ("trajectory_csv".into(), "trajectory.csv".into()),
            ("mean_reward".into(), mean_reward.to_string()),
            ("mean_steps".into(), mean_steps.to_string()),
        ],
        config: Some(cfg.to_config_text()),
    };
    write_file(&out.join("manifest.txt"), &manifest.render())?;
    Ok(())
}
