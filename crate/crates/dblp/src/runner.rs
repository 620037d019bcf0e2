//! Experiment driver: runs a simulated all-reduce experiment (plus an
//! optional comparison run under the same seed and loss script) and writes
//! the metrics artifacts.

use std::fs;
use std::path::PathBuf;

use thiserror::Error;

use crate::allreduce::{AllreduceError, SimCluster};
use crate::config::{ConfigError, ExperimentConfig, Mode, ToleranceMode};
use crate::metrics::{
    summarize, summary_kv, write_csv, LatencySummary, MetricsError, RoundMetrics,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Allreduce(#[from] AllreduceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("socket runs need the node role entry points, not the batch runner")]
    WrongMode,
}

impl RunnerError {
    /// Process exit code convention: config problems are 2, runtime 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Everything a finished run produced, with paths when an output directory
/// was configured.
#[derive(Debug)]
pub struct RunArtifacts {
    pub records: Vec<RoundMetrics>,
    pub comparison: Option<Vec<RoundMetrics>>,
    pub summary: LatencySummary,
    pub metrics_path: Option<PathBuf>,
    pub baseline_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

fn run_cluster(
    cfg: &ExperimentConfig,
    tolerance: &ToleranceMode,
) -> Result<Vec<RoundMetrics>, RunnerError> {
    let mut cluster = SimCluster::with_tolerance(cfg, tolerance)?;
    for _ in 0..cfg.steps {
        cluster.step()?;
    }
    Ok(cluster.into_records())
}

/// Runs the experiment described by `cfg` end to end and writes artifacts
/// (`metrics.csv`, optional `baseline.csv`, `summary.txt`, `manifest.toml`)
/// into `cfg.out_dir` when set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunArtifacts, RunnerError> {
    cfg.validate()?;
    if cfg.mode != Mode::Simulate {
        return Err(RunnerError::WrongMode);
    }

    log::info!(
        "running {} steps, {} workers, tolerance {}",
        cfg.steps,
        cfg.workers,
        cfg.tolerance.label()
    );
    let records = run_cluster(cfg, &cfg.tolerance)?;
    let comparison = match &cfg.comparison {
        Some(mode) => {
            log::info!("running comparison with tolerance {}", mode.label());
            Some(run_cluster(cfg, mode)?)
        }
        None => None,
    };
    let summary = summarize(&records, comparison.as_deref())?;

    let mut artifacts = RunArtifacts {
        records,
        comparison,
        summary,
        metrics_path: None,
        baseline_path: None,
        summary_path: None,
    };

    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
        let metrics_path = dir.join("metrics.csv");
        write_csv(&metrics_path, &artifacts.records)?;
        artifacts.metrics_path = Some(metrics_path);
        if let Some(baseline) = &artifacts.comparison {
            let baseline_path = dir.join("baseline.csv");
            write_csv(&baseline_path, baseline)?;
            artifacts.baseline_path = Some(baseline_path);
        }
        let summary_path = dir.join("summary.txt");
        fs::write(&summary_path, summary_kv(&artifacts.summary))?;
        artifacts.summary_path = Some(summary_path);
        fs::write(dir.join("manifest.toml"), cfg.to_toml())?;
    }

    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;

    #[test]
    fn run_writes_artifacts_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = preset("background-loss").unwrap();
        cfg.steps = 8;
        cfg.out_dir = Some(dir.path().to_path_buf());
        let first = run(&cfg).unwrap();
        assert!(first.metrics_path.as_ref().unwrap().exists());
        assert!(first.baseline_path.as_ref().unwrap().exists());
        assert!(first.summary_path.as_ref().unwrap().exists());
        assert!(dir.path().join("manifest.toml").exists());
        let bytes_a = std::fs::read(first.metrics_path.as_ref().unwrap()).unwrap();

        let dir2 = tempfile::tempdir().unwrap();
        cfg.out_dir = Some(dir2.path().to_path_buf());
        let second = run(&cfg).unwrap();
        let bytes_b = std::fs::read(second.metrics_path.as_ref().unwrap()).unwrap();
        assert_eq!(
            bytes_a, bytes_b,
            "same config + seed must give identical CSV bytes"
        );
    }

    #[test]
    fn socket_configs_are_rejected_by_batch_runner() {
        let mut cfg = preset("background-loss").unwrap();
        cfg.mode = crate::config::Mode::Server;
        cfg.listen = Some("127.0.0.1:0".into());
        assert!(matches!(run(&cfg), Err(RunnerError::WrongMode)));
    }
}
