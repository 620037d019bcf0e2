//! Per-round latency and pass-count recording with tail/average/CDF
//! summaries.
//!
//! Records are written as CSV with the schema:
//! `round,worker_id,direction,latency_s,passes,tolerance,clr_active,burst,chunks_total,chunks_received`.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no records to summarize")]
    EmptyRecords,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Worker to server (gradient push).
    W2S,
    /// Server to worker (mean broadcast).
    S2W,
}

/// One transfer's record: latency measured at the sender from first chunk
/// transmission to stop receipt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub worker_id: u32,
    pub direction: Direction,
    pub latency_s: f64,
    pub passes: u32,
    pub tolerance: f64,
    pub clr_active: bool,
    pub burst: bool,
    pub chunks_total: u32,
    pub chunks_received: u32,
}

/// Latency aggregates over a run, optionally paired with a comparison run.
#[derive(Debug, Clone)]
pub struct LatencySummary {
    pub average: f64,
    /// Maximum latency over the run.
    pub tail: f64,
    pub p99: f64,
    /// Worst latency per burst round: (round, self, comparison, speedup).
    pub bursts: Vec<BurstStat>,
    pub comparison_average: Option<f64>,
    pub comparison_tail: Option<f64>,
    pub tail_speedup: Option<f64>,
    pub average_speedup: Option<f64>,
    pub total_passes: u64,
    pub comparison_total_passes: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct BurstStat {
    pub round: u64,
    pub latency: f64,
    pub comparison_latency: Option<f64>,
    /// comparison / self.
    pub speedup: Option<f64>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn worst_per_burst(records: &[RoundMetrics]) -> Vec<(u64, f64)> {
    let mut rounds: Vec<u64> = records
        .iter()
        .filter(|r| r.burst)
        .map(|r| r.round)
        .collect();
    rounds.sort_unstable();
    rounds.dedup();
    rounds
        .into_iter()
        .map(|round| {
            let worst = records
                .iter()
                .filter(|r| r.round == round && r.burst)
                .map(|r| r.latency_s)
                .fold(0.0f64, f64::max);
            (round, worst)
        })
        .collect()
}

/// Average, tail (max), p99, per-burst latencies, and speedups against an
/// optional comparison run aligned by round.
pub fn summarize(
    records: &[RoundMetrics],
    comparison: Option<&[RoundMetrics]>,
) -> Result<LatencySummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut latencies: Vec<f64> = records.iter().map(|r| r.latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    let average = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let tail = *latencies.last().unwrap();
    let p99 = percentile(&latencies, 0.99);
    let total_passes: u64 = records.iter().map(|r| r.passes as u64).sum();

    let mut summary = LatencySummary {
        average,
        tail,
        p99,
        bursts: worst_per_burst(records)
            .into_iter()
            .map(|(round, latency)| BurstStat {
                round,
                latency,
                comparison_latency: None,
                speedup: None,
            })
            .collect(),
        comparison_average: None,
        comparison_tail: None,
        tail_speedup: None,
        average_speedup: None,
        total_passes,
        comparison_total_passes: None,
    };

    if let Some(other) = comparison {
        if other.is_empty() {
            return Err(MetricsError::EmptyRecords);
        }
        let other_avg = other.iter().map(|r| r.latency_s).sum::<f64>() / other.len() as f64;
        let other_tail = other.iter().map(|r| r.latency_s).fold(0.0f64, f64::max);
        summary.comparison_average = Some(other_avg);
        summary.comparison_tail = Some(other_tail);
        summary.average_speedup = Some(other_avg / average);
        summary.tail_speedup = Some(other_tail / tail);
        summary.comparison_total_passes = Some(other.iter().map(|r| r.passes as u64).sum());
        let other_bursts = worst_per_burst(other);
        for burst in &mut summary.bursts {
            if let Some(&(_, lat)) = other_bursts.iter().find(|(r, _)| *r == burst.round) {
                burst.comparison_latency = Some(lat);
                burst.speedup = Some(lat / burst.latency);
            }
        }
    }
    Ok(summary)
}

/// Empirical CDF: sorted (latency, k/n) points ending at (tail, 1.0).
pub fn cdf(records: &[RoundMetrics]) -> Result<Vec<(f64, f64)>, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let mut latencies: Vec<f64> = records.iter().map(|r| r.latency_s).collect();
    latencies.sort_by(f64::total_cmp);
    let n = latencies.len() as f64;
    Ok(latencies
        .into_iter()
        .enumerate()
        .map(|(k, lat)| (lat, (k + 1) as f64 / n))
        .collect())
}

pub fn write_csv<P: AsRef<Path>>(path: P, records: &[RoundMetrics]) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Vec<RoundMetrics>, MetricsError> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}

/// Machine-readable `key=value` rendering of a summary.
pub fn summary_kv(summary: &LatencySummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("average_s={}\n", summary.average));
    out.push_str(&format!("tail_s={}\n", summary.tail));
    out.push_str(&format!("p99_s={}\n", summary.p99));
    out.push_str(&format!("total_passes={}\n", summary.total_passes));
    if let (Some(avg), Some(tail)) = (summary.comparison_average, summary.comparison_tail) {
        out.push_str(&format!("comparison_average_s={avg}\n"));
        out.push_str(&format!("comparison_tail_s={tail}\n"));
        out.push_str(&format!(
            "average_speedup={}\n",
            summary.average_speedup.unwrap()
        ));
        out.push_str(&format!("tail_speedup={}\n", summary.tail_speedup.unwrap()));
    }
    if let Some(p) = summary.comparison_total_passes {
        out.push_str(&format!("comparison_total_passes={p}\n"));
    }
    for burst in &summary.bursts {
        out.push_str(&format!(
            "burst_{}_latency_s={}\n",
            burst.round, burst.latency
        ));
        if let Some(speedup) = burst.speedup {
            out.push_str(&format!("burst_{}_speedup={speedup}\n", burst.round));
        }
    }
    out
}
