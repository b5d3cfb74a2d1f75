use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mmwrelay::a3c::{self, Learner, Policy};
use mmwrelay::config::{ExperimentConfig, PolicyKind};
use mmwrelay::metrics::{moving_average, EpisodeMetrics, MOVING_AVERAGE_WINDOW};
use mmwrelay::modelfile;
use mmwrelay::svg::{self, Series};

#[derive(Parser)]
#[command(name = "mmwrelay", version, about = "Train and evaluate mmWave relay placement policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write the model and learning curves.
    Learn(Common),
    /// Evaluate a trained model or a baseline policy.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vehicle density per meter per lane.
    #[arg(long)]
    lambda: Option<f64>,
    /// mmWave penetration ratio.
    #[arg(long)]
    rmm: Option<f64>,
    /// Controllable share of mmWave vehicles.
    #[arg(long)]
    rctrl: Option<f64>,
    /// State design: pt, ptcl or ptdl.
    #[arg(long)]
    state: Option<String>,
    /// Policy for eval: rl, stay or vfa.
    #[arg(long)]
    policy: Option<String>,
    /// Mobility of non-controllable vehicles: constant or random.
    #[arg(long)]
    mobility: Option<String>,
    /// Episodes to learn (learn) or to evaluate (eval).
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed_world: Option<u64>,
    #[arg(long)]
    seed_model: Option<u64>,
    #[arg(long)]
    seed_rollout: Option<u64>,
    /// Model to evaluate.
    #[arg(long)]
    model_in: Option<PathBuf>,
    /// Where to write the trained model; relative paths are under the output directory.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Apply gradient updates in a fixed order on one thread.
    #[arg(long)]
    serial: bool,
    /// Also write SVG charts.
    #[arg(long)]
    svg: bool,
    /// Write a checkpoint every N learning episodes.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue learning from a checkpoint manifest.
    #[arg(long)]
    resume: Option<PathBuf>,
}

impl Common {
    fn config(&self, learning: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let mut set = |key: &str, value: Option<String>| -> Result<()> {
            if let Some(v) = value {
                cfg.set(key, &v).with_context(|| format!("--{}", key.replace('_', "-")))?;
            }
            Ok(())
        };
        set("lambda", self.lambda.map(|v| v.to_string()))?;
        set("r_mm", self.rmm.map(|v| v.to_string()))?;
        set("r_ctrl", self.rctrl.map(|v| v.to_string()))?;
        set("state", self.state.clone())?;
        set("policy", self.policy.clone())?;
        set("mobility", self.mobility.clone())?;
        let episodes_key = if learning { "episodes_learn" } else { "episodes_test" };
        set(episodes_key, self.episodes.map(|v| v.to_string()))?;
        set("max_steps", self.steps.map(|v| v.to_string()))?;
        set("seed_world", self.seed_world.map(|v| v.to_string()))?;
        set("seed_model", self.seed_model.map(|v| v.to_string()))?;
        set("seed_rollout", self.seed_rollout.map(|v| v.to_string()))?;
        if let Some(p) = &self.model_in {
            cfg.model_in = Some(p.clone());
        }
        if let Some(p) = &self.model_out {
            cfg.model_out = p.clone();
        }
        if let Some(p) = &self.out_dir {
            cfg.out_dir = p.clone();
        }
        if self.serial {
            cfg.learner.serial = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_metrics(m: &EpisodeMetrics, dir: &Path, prefix: &str) -> Result<()> {
    m.write_episodes_csv(create(&dir.join(format!("{prefix}_metrics.csv")))?)?;
    m.write_steps_csv(create(&dir.join(format!("{prefix}_steps.csv")))?)?;
    Ok(())
}

fn indexed(values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().map(|(i, &v)| ((i + 1) as f64, v)).collect()
}

fn ma_points(values: &[f64]) -> Vec<(f64, f64)> {
    moving_average(values, MOVING_AVERAGE_WINDOW)
        .into_iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| ((i + 1) as f64, v)))
        .collect()
}

fn learn(args: &Common) -> Result<()> {
    let cfg = args.config(true)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.emit())?;

    let mut learner = match &args.resume {
        Some(manifest) => {
            let (ck, hash) = modelfile::load_checkpoint(manifest)
                .with_context(|| format!("reading checkpoint {}", manifest.display()))?;
            if hash != cfg.hash() {
                bail!("checkpoint was written with a different configuration");
            }
            Learner::resume(&cfg.env, &cfg.learner, ck)?
        }
        None => Learner::new(&cfg.env, &cfg.learner, cfg.seeds)?,
    };
    while learner.episodes_done() < cfg.learner.episodes_learn {
        learner.run_episode()?;
        let done = learner.episodes_done();
        if let Some(e) = learner.metrics().episodes.last() {
            eprintln!(
                "episode {done}: final coverage {:.4}, mean accumulated reward {:.1}",
                e.final_coverage,
                e.accumulated_reward_mean()
            );
        }
        if args.checkpoint_every.is_some_and(|n| n > 0 && done % n == 0) {
            let base = cfg.out_dir.join(format!("checkpoint-{done:05}"));
            modelfile::save_checkpoint(&learner.checkpoint(), &base, &cfg.hash())?;
        }
    }
    let run = learner.finish();

    let model_path = cfg.out_dir.join(&cfg.model_out);
    modelfile::save(&run.model, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    write_metrics(&run.metrics, &cfg.out_dir, "learn")?;
    if args.svg {
        let m = &run.metrics;
        let chart = svg::line_chart(
            "moving average of final coverage",
            "episode",
            "coverage",
            &[Series {
                label: "final coverage",
                points: ma_points(&m.final_coverages()),
            }],
        );
        fs::write(cfg.out_dir.join("learn_coverage.svg"), chart)?;
        let chart = svg::line_chart(
            "moving average of accumulated reward",
            "episode",
            "reward",
            &[Series {
                label: "accumulated reward",
                points: ma_points(&m.accumulated_reward_means()),
            }],
        );
        fs::write(cfg.out_dir.join("learn_reward.svg"), chart)?;
    }
    println!("model {}", model_path.display());
    println!("updates {}", run.updates);
    Ok(())
}

fn eval(args: &Common) -> Result<()> {
    let cfg = args.config(false)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let model = match cfg.policy {
        PolicyKind::Rl => {
            let Some(path) = &cfg.model_in else {
                bail!("--policy rl needs --model-in");
            };
            let shape = cfg.learner.net_shape(&cfg.env.road);
            Some(modelfile::load_for(path, &shape).with_context(|| format!("loading {}", path.display()))?)
        }
        _ => None,
    };
    let policy = match (cfg.policy, &model) {
        (PolicyKind::Rl, Some(m)) => Policy::Rl(m),
        (PolicyKind::Vfa, _) => Policy::Vfa(cfg.vfa.clone()),
        _ => Policy::Stay,
    };
    let metrics = a3c::run_eval(&policy, &cfg.env, &cfg.learner, cfg.seeds)?;
    write_metrics(&metrics, &cfg.out_dir, "eval")?;
    let mean = metrics.mean_final_coverage();
    fs::write(
        cfg.out_dir.join("eval_summary.txt"),
        format!("policy {}\nepisodes {}\nmean_final_coverage {mean}\n", cfg.policy.as_str(), metrics.episodes.len()),
    )?;
    if args.svg {
        let chart = svg::line_chart(
            "mean coverage per step",
            "step",
            "coverage",
            &[Series {
                label: cfg.policy.as_str(),
                points: indexed(&metrics.coverage_curve()),
            }],
        );
        fs::write(cfg.out_dir.join("eval_coverage.svg"), chart)?;
    }
    println!("mean_final_coverage {mean}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Learn(args) => learn(args),
        Command::Eval(args) => eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
