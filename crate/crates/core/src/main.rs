use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmt_core::cli::{cmd_ablate, cmd_eval, cmd_explain, cmd_gradcheck, cmd_synth, cmd_train, ExplainArgs, RunConfig};
use cmt_core::data::Task;
use cmt_core::interpret::write_json;
use cmt_core::model::Mode;
use cmt_core::traineval::Direction;
use cmt_core::Error;

#[derive(Parser)]
#[command(name = "cmt", version, about = "Cross-modal transformer over EHR time series and clinical notes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// JSON run config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cohort directory.
    #[arg(long, global = true)]
    cohort: Option<PathBuf>,
    /// Single seed, replacing the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted override, e.g. `train.lr=0.001`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    task: Option<String>,
    #[arg(long, global = true)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cumulative note-type ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "increasing")]
        direction: String,
    },
    /// Attention heatmap, divergence report and rollout for one stay.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stay: String,
        /// Cross-modal checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// EHR-only checkpoint for the divergence report.
        #[arg(long)]
        ehr_checkpoint: Option<PathBuf>,
        /// Directory with layer_<i>.cmt attention and sidecar.json.
        #[arg(long)]
        rollout: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        cls_index: usize,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in &c.set {
        cfg.set(s)?;
    }
    if let Some(t) = &c.task {
        cfg.task = t.parse::<Task>()?;
    }
    if let Some(m) = &c.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
        cfg.synth.seed = s;
    }
    if c.out.is_some() {
        cfg.out = c.out.clone();
    }
    if c.cohort.is_some() {
        cfg.cohort = c.cohort.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { common } => {
            for r in cmd_synth(&load_config(&common)?)? {
                println!(
                    "{:?}: decomp {}/{} ({:.2}%)",
                    r.split,
                    r.decomp_pos,
                    r.decomp_total,
                    100.0 * r.decomp_rate()
                );
            }
        }
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            cmd_train(&cfg)?;
            println!("checkpoint written to {}", cfg.out_path()?.join("checkpoint").display());
        }
        Command::Eval { common, checkpoint } => {
            let r = cmd_eval(&load_config(&common)?, &checkpoint)?;
            println!("{} {}: auprc {:?} auroc {:?}", r.task, r.mode, r.report.auprc, r.report.auroc);
        }
        Command::Ablate { common, direction } => {
            let table = cmd_ablate(&load_config(&common)?, direction.parse::<Direction>()?)?;
            for (arm, s) in &table.summaries {
                println!("{arm}: auprc {:?} ± {:?}", s.auprc.mean, s.auprc.ci_halfwidth);
            }
        }
        Command::Explain { common, stay, checkpoint, ehr_checkpoint, rollout, cls_index } => {
            let cfg = load_config(&common)?;
            cmd_explain(&cfg, &ExplainArgs { stay, checkpoint, ehr_checkpoint, rollout, cls_index })?;
            println!("explanations written to {}", cfg.out_path()?.display());
        }
        Command::Gradcheck { common, instances } => {
            let cfg = load_config(&common)?;
            let s = cmd_gradcheck(instances, cfg.seeds[0])?;
            println!("sum_of_squares: {:.3e}", s.sum_of_squares_rel_err);
            for r in &s.reports {
                println!(
                    "{}: max rel err {:.3e} (tol {:.0e}, {} coords, {} round-off limited) {}",
                    r.name,
                    r.max_rel_err,
                    r.tolerance,
                    r.coords,
                    r.noise_limited,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            println!("{:.1} s", s.seconds);
            if let Some(out) = &cfg.out {
                std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
                write_json(&out.join("gradcheck.json"), &s)?;
            }
            if !s.passed() {
                return Err(Error::Generation("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = std::env::var("CMT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
