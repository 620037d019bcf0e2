//! Thin experiment launcher. All logic lives in the library; see the crate
//! examples for API-level walkthroughs.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dblp::config::{preset, ExperimentConfig, Mode, PRESET_NAMES};
use dblp::metrics::summary_kv;
use dblp::node::{run_server, run_worker};
use dblp::runner::run;

#[derive(Parser, Debug)]
#[command(name = "dblp", about = "Bounded-loss gradient transport experiments")]
struct Args {
    /// TOML experiment config (mutually exclusive with --preset).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Canned experiment; one of: microburst-effnet, microburst-resnet,
    /// background-loss, toy-convergence.
    #[arg(long)]
    preset: Option<String>,

    /// Role override: simulate | server | worker.
    #[arg(long)]
    mode: Option<String>,

    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Directory for metrics.csv / baseline.csv / summary.txt / manifest.toml.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Step-count override.
    #[arg(long)]
    steps: Option<u64>,

    /// Server mode: TCP control address to bind (e.g. 0.0.0.0:7000).
    #[arg(long)]
    listen: Option<String>,

    /// Worker mode: server control address to join.
    #[arg(long)]
    connect: Option<String>,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, String> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), None) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        (None, Some(name)) => preset(name).map_err(|e| e.to_string())?,
        (None, None) => {
            return Err(format!(
                "pass --config <file> or --preset <{}>",
                PRESET_NAMES.join("|")
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    if let Some(mode) = &args.mode {
        cfg.mode = match mode.as_str() {
            "simulate" => Mode::Simulate,
            "server" => Mode::Server,
            "worker" => Mode::Worker,
            other => return Err(format!("unknown mode {other:?}")),
        };
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.loss.seed = seed;
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(listen) = &args.listen {
        cfg.listen = Some(listen.clone());
    }
    if let Some(connect) = &args.connect {
        cfg.connect = Some(connect.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DBLP_LOG")).init();
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };

    match cfg.mode {
        Mode::Simulate => match run(&cfg) {
            Ok(artifacts) => {
                print!("{}", summary_kv(&artifacts.summary));
                if let Some(path) = &artifacts.metrics_path {
                    eprintln!("wrote {}", path.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Mode::Server => match run_server(&cfg) {
            Ok(records) => {
                eprintln!(
                    "server finished: {} worker-to-server rounds recorded",
                    records.len()
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
        Mode::Worker => match run_worker(&cfg) {
            Ok(report) => {
                eprintln!("worker {} finished", report.worker_id);
                if let Some(acc) = report.final_accuracy {
                    eprintln!("final train accuracy: {acc:.4}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
