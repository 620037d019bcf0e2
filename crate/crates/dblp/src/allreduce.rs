//! Centralized all-reduce: gather worker gradients, reduce to the mean,
//! schedule the tolerance from the mean gradient's norm, and broadcast.
//!
//! [`SimCluster`] hosts the server and all workers in one thread over the
//! simulated network, advancing every session in lockstep; the socket roles
//! live in [`crate::node`].

use thiserror::Error;

use crate::clr::{l2_norm_flat, ToleranceSchedule};
use crate::config::{ExperimentConfig, ToleranceMode, WorkloadSpec};
use crate::lossnet::{SimLink, SimNet};
use crate::metrics::{Direction, RoundMetrics};
use crate::sim::run_transfer;
use crate::transport::{bytes_to_floats, floats_to_bytes, TransportConfig, TransportError};
use crate::wire::MetadataAnnouncement;
use crate::workload::{batch_indices, make_blobs, synth_gradient, BlobDataset, ToyModel};

#[derive(Debug, Error)]
pub enum AllreduceError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("worker {worker} lost: {source}")]
    WorkerLost {
        worker: u32,
        #[source]
        source: TransportError,
    },
    #[error(transparent)]
    Clr(#[from] crate::clr::ClrError),
    #[error(transparent)]
    Workload(#[from] crate::workload::WorkloadError),
}

/// Element-wise arithmetic mean over N gradient buffers. Accumulation is in
/// f64, in worker-index order, divided by N, then rounded once to f32 — the
/// order is part of the contract so independent implementations agree
/// bit-for-bit.
pub fn reduce_mean(gradients: &[Vec<f32>]) -> Result<Vec<f32>, AllreduceError> {
    let first_len = gradients
        .first()
        .ok_or_else(|| AllreduceError::LayoutMismatch("no gradients".into()))?
        .len();
    if gradients.iter().any(|g| g.len() != first_len) {
        return Err(AllreduceError::LayoutMismatch(format!(
            "buffer lengths {:?}",
            gradients.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    let inv = 1.0f64 / gradients.len() as f64;
    let mut out = vec![0.0f32; first_len];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for g in gradients {
            acc += g[i] as f64;
        }
        *slot = (acc * inv) as f32;
    }
    Ok(out)
}

/// Checks that both endpoints agreed on the same layout after the handshake.
pub fn verify_layout(
    local: &MetadataAnnouncement,
    remote: &MetadataAnnouncement,
) -> Result<(), AllreduceError> {
    if local != remote {
        return Err(AllreduceError::LayoutMismatch(format!(
            "local {local:?} vs remote {remote:?}"
        )));
    }
    Ok(())
}

/// Result of one global step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub round: u64,
    pub mean_gradient: Vec<f32>,
    /// Tolerance used for the broadcast (post-reduce CLR decision).
    pub active_tolerance: f64,
    pub mean_norm: f64,
}

enum WorkerState {
    Synthetic {
        element_count: usize,
        profile: crate::workload::NormProfile,
    },
    Toy {
        model: ToyModel,
        data: BlobDataset,
        batch_size: usize,
        lr: f32,
    },
}

/// The per-worker side of a step — gradient production and update
/// application — shared by the in-process cluster and the socket worker.
pub struct WorkerRuntime {
    state: WorkerState,
    seed: u64,
    worker_id: u64,
}

impl WorkerRuntime {
    pub fn new(cfg: &ExperimentConfig, worker_id: u64) -> Result<Self, AllreduceError> {
        let state = match &cfg.workload {
            WorkloadSpec::Synthetic {
                profile,
                element_count,
            } => {
                profile.validate()?;
                WorkerState::Synthetic {
                    element_count: *element_count,
                    profile: profile.clone(),
                }
            }
            WorkloadSpec::Toy {
                classes,
                features,
                per_class,
                separation,
                batch_size,
                learning_rate,
            } => WorkerState::Toy {
                // Identical initialization on every worker; disjoint data.
                model: ToyModel::new(*classes, *features, cfg.seed),
                data: make_blobs(
                    *classes,
                    *features,
                    *per_class,
                    *separation,
                    cfg.seed ^ (worker_id + 1),
                ),
                batch_size: *batch_size,
                lr: *learning_rate,
            },
        };
        Ok(Self {
            state,
            seed: cfg.seed,
            worker_id,
        })
    }

    /// Ordered tensor layout this worker will announce.
    pub fn layout(&self) -> Vec<(String, u64)> {
        match &self.state {
            WorkerState::Synthetic { element_count, .. } => {
                vec![("synthetic".to_string(), *element_count as u64)]
            }
            WorkerState::Toy { model, .. } => model.layout(),
        }
    }

    pub fn gradient(&self, step: u64) -> Result<Vec<f32>, AllreduceError> {
        match &self.state {
            WorkerState::Synthetic {
                element_count,
                profile,
            } => Ok(synth_gradient(
                step,
                profile,
                *element_count,
                self.seed,
                self.worker_id,
            )?),
            WorkerState::Toy {
                model,
                data,
                batch_size,
                ..
            } => {
                let batch = batch_indices(step, *batch_size, data.len());
                Ok(model.grad(data, &batch))
            }
        }
    }

    /// Applies a reduced gradient (SGD step for the toy model, no-op for the
    /// synthetic workload).
    pub fn apply(&mut self, mean: &[f32]) {
        if let WorkerState::Toy { model, lr, .. } = &mut self.state {
            let lr = *lr;
            model.apply(mean, lr);
        }
    }

    pub fn params(&self) -> Option<Vec<f32>> {
        match &self.state {
            WorkerState::Toy { model, .. } => Some(model.flat_params()),
            WorkerState::Synthetic { .. } => None,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        match &self.state {
            WorkerState::Toy { model, data, .. } => Some(model.eval(data)),
            WorkerState::Synthetic { .. } => None,
        }
    }
}

struct WorkerSession {
    runtime: WorkerRuntime,
    w2s: SimLink,
    s2w: SimLink,
}

enum Tolerance {
    Fixed(f64),
    Scheduled(ToleranceSchedule),
}

impl Tolerance {
    fn current(&self) -> f64 {
        match self {
            Tolerance::Fixed(p) => *p,
            Tolerance::Scheduled(s) => s.current(),
        }
    }

    fn clr_active(&self) -> bool {
        match self {
            Tolerance::Fixed(_) => false,
            Tolerance::Scheduled(s) => s.clr_active(),
        }
    }

    fn advance(&mut self, step: u64, norm: f64) -> f64 {
        match self {
            Tolerance::Fixed(p) => *p,
            Tolerance::Scheduled(s) => s.advance(step, norm),
        }
    }
}

/// In-process deterministic cluster: a server and N workers advancing in
/// lockstep over simulated channels.
pub struct SimCluster {
    sessions: Vec<WorkerSession>,
    tolerance: Tolerance,
    transport: TransportConfig,
    net: SimNet,
    meta: MetadataAnnouncement,
    round: u64,
    records: Vec<RoundMetrics>,
    burst_rounds: Vec<u64>,
}

impl SimCluster {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, AllreduceError> {
        Self::with_tolerance(cfg, &cfg.tolerance)
    }

    /// Builds the cluster with an explicit tolerance mode (used for paired
    /// comparison runs sharing the rest of the config).
    pub fn with_tolerance(
        cfg: &ExperimentConfig,
        tolerance: &ToleranceMode,
    ) -> Result<Self, AllreduceError> {
        if cfg.workers == 0 {
            return Err(AllreduceError::LayoutMismatch(
                "cluster needs at least one worker".into(),
            ));
        }
        let transport = cfg.transport.to_transport_config(cfg.seed);
        let sessions: Vec<WorkerSession> = (0..cfg.workers)
            .map(|w| {
                Ok(WorkerSession {
                    runtime: WorkerRuntime::new(cfg, w as u64)?,
                    w2s: SimLink::new(w as u64 * 2),
                    s2w: SimLink::new(w as u64 * 2 + 1),
                })
            })
            .collect::<Result<_, AllreduceError>>()?;
        let meta =
            MetadataAnnouncement::from_layout(&sessions[0].runtime.layout(), transport.max_payload);
        let tolerance = match tolerance {
            ToleranceMode::Fixed { p } => Tolerance::Fixed(*p),
            ToleranceMode::Adaptive { .. } => {
                Tolerance::Scheduled(ToleranceSchedule::new(tolerance.clr_config().unwrap())?)
            }
        };
        Ok(Self {
            sessions,
            tolerance,
            transport,
            net: SimNet::new(cfg.loss.clone(), cfg.delay.clone(), cfg.timing.clone()),
            meta,
            round: 0,
            records: Vec::new(),
            burst_rounds: cfg.loss.bursts.iter().map(|&(r, _)| r).collect(),
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn metadata(&self) -> &MetadataAnnouncement {
        &self.meta
    }

    pub fn records(&self) -> &[RoundMetrics] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RoundMetrics> {
        self.records
    }

    /// Flat parameters of worker `i`'s model (toy workload only).
    pub fn worker_params(&self, i: usize) -> Option<Vec<f32>> {
        self.sessions[i].runtime.params()
    }

    /// Train accuracy of worker `i` on its own shard (toy workload only).
    pub fn worker_accuracy(&self, i: usize) -> Option<f64> {
        self.sessions[i].runtime.accuracy()
    }

    pub fn worker_count(&self) -> usize {
        self.sessions.len()
    }

    /// One global step: gather with the pre-step tolerance, reduce, advance
    /// the schedule on the mean norm, broadcast with the updated tolerance,
    /// apply updates on toy workers.
    pub fn step(&mut self) -> Result<StepResult, AllreduceError> {
        let round = self.round;
        let burst = self.burst_rounds.contains(&round);
        // Tolerance for worker->server transfers: decided before receiving,
        // from the previous step's CLR state.
        let tol_in = self.tolerance.current();
        let clr_in = self.tolerance.clr_active();

        let mut gathered = Vec::with_capacity(self.sessions.len());
        for worker in 0..self.sessions.len() {
            let session = &mut self.sessions[worker];
            let gradient = session.runtime.gradient(round)?;
            let bytes = floats_to_bytes(&gradient);
            let outcome = run_transfer(
                &bytes,
                round,
                tol_in,
                &self.transport,
                &mut self.net,
                &mut session.w2s,
            )
            .map_err(|source| AllreduceError::WorkerLost {
                worker: worker as u32,
                source,
            })?;
            self.records.push(RoundMetrics {
                round,
                worker_id: worker as u32,
                direction: Direction::W2S,
                latency_s: outcome.send.elapsed.as_secs_f64(),
                passes: outcome.send.passes,
                tolerance: tol_in,
                clr_active: clr_in,
                burst,
                chunks_total: outcome.recv.chunks_total,
                chunks_received: outcome.recv.chunks_received,
            });
            gathered.push(bytes_to_floats(&outcome.recv.buffer));
        }

        let mean = reduce_mean(&gathered)?;
        let mean_norm = l2_norm_flat(&mean);
        // Post-reduce CLR decision governs the broadcast and next step's gather.
        let tol_out = self.tolerance.advance(round, mean_norm);
        let clr_out = self.tolerance.clr_active();

        let mean_bytes = floats_to_bytes(&mean);
        for worker in 0..self.sessions.len() {
            let session = &mut self.sessions[worker];
            let outcome = run_transfer(
                &mean_bytes,
                round,
                tol_out,
                &self.transport,
                &mut self.net,
                &mut session.s2w,
            )
            .map_err(|source| AllreduceError::WorkerLost {
                worker: worker as u32,
                source,
            })?;
            self.records.push(RoundMetrics {
                round,
                worker_id: worker as u32,
                direction: Direction::S2W,
                latency_s: outcome.send.elapsed.as_secs_f64(),
                passes: outcome.send.passes,
                tolerance: tol_out,
                clr_active: clr_out,
                burst,
                chunks_total: outcome.recv.chunks_total,
                chunks_received: outcome.recv.chunks_received,
            });
            let received = bytes_to_floats(&outcome.recv.buffer);
            session.runtime.apply(&received);
        }

        self.round += 1;
        Ok(StepResult {
            round,
            mean_gradient: mean,
            active_tolerance: tol_out,
            mean_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, Mode, TransportSettings};
    use crate::lossnet::{LossModel, LossSchedule};
    use crate::rng::CounterRng;
    use crate::workload::NormProfile;

    #[test]
    fn reduce_mean_basics() {
        let mean = reduce_mean(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(mean, vec![3.0, 4.0]);
        let single = reduce_mean(&[vec![7.0, -1.5]]).unwrap();
        assert_eq!(single, vec![7.0, -1.5]);
    }

    #[test]
    fn reduce_mean_matches_naive_oracle() {
        let mut rng = CounterRng::new(4, 0);
        let buffers: Vec<Vec<f32>> = (0..5)
            .map(|_| (0..64).map(|_| rng.range_f64(-3.0, 3.0) as f32).collect())
            .collect();
        let mean = reduce_mean(&buffers).unwrap();
        for i in 0..64 {
            let mut acc = 0.0f64;
            for b in &buffers {
                acc += b[i] as f64;
            }
            let expect = (acc / 5.0) as f32;
            assert_eq!(mean[i].to_bits(), expect.to_bits(), "element {i}");
        }
    }

    #[test]
    fn reduce_mean_rejects_mismatched_layouts() {
        assert!(matches!(
            reduce_mean(&[vec![1.0], vec![1.0, 2.0]]),
            Err(AllreduceError::LayoutMismatch(_))
        ));
    }

    #[test]
    fn handshake_chunk_arithmetic() {
        // 2-tensor model (10 + 6 elements), 32-byte payload: ceil(64/32) = 2.
        let meta = MetadataAnnouncement::from_layout(&[("a".into(), 10), ("b".into(), 6)], 32);
        assert_eq!(meta.total_chunks, 2);
        verify_layout(&meta, &meta.clone()).unwrap();
        let other = MetadataAnnouncement::from_layout(&[("a".into(), 16)], 32);
        assert!(verify_layout(&meta, &other).is_err());
    }

    fn small_synthetic_config() -> ExperimentConfig {
        ExperimentConfig {
            mode: Mode::Simulate,
            workers: 3,
            steps: 5,
            seed: 3,
            tolerance: crate::config::ToleranceMode::Fixed { p: 0.0 },
            comparison: None,
            loss: LossSchedule {
                base_loss: 0.0,
                bursts: vec![],
                seed: 3,
                model: LossModel::PerPassRate,
            },
            delay: Default::default(),
            timing: Default::default(),
            transport: TransportSettings {
                max_payload: 16,
                ..Default::default()
            },
            workload: crate::config::WorkloadSpec::Synthetic {
                profile: NormProfile::constant(10.0),
                element_count: 64,
            },
            out_dir: None,
            listen: None,
            connect: None,
        }
    }

    #[test]
    fn lossless_step_broadcasts_exact_mean() {
        let cfg = small_synthetic_config();
        let mut cluster = SimCluster::new(&cfg).unwrap();
        let result = cluster.step().unwrap();
        // Recompute the expected mean directly from the workload.
        let grads: Vec<Vec<f32>> = (0..3)
            .map(|w| synth_gradient(0, &NormProfile::constant(10.0), 64, cfg.seed, w).unwrap())
            .collect();
        let expect = reduce_mean(&grads).unwrap();
        assert_eq!(result.mean_gradient, expect);
        for record in cluster.records() {
            assert_eq!(record.chunks_received, record.chunks_total);
        }
    }

    #[test]
    fn tolerance_consistent_within_direction_per_round() {
        let mut cfg = preset("background-loss").unwrap();
        cfg.steps = 12;
        cfg.workload = crate::config::WorkloadSpec::Synthetic {
            profile: NormProfile::constant(10.0),
            element_count: 640,
        };
        cfg.transport.max_payload = 16;
        let mut cluster = SimCluster::new(&cfg).unwrap();
        for _ in 0..12 {
            cluster.step().unwrap();
        }
        for round in 0..12u64 {
            for dir in [Direction::W2S, Direction::S2W] {
                let tolerances: Vec<f64> = cluster
                    .records()
                    .iter()
                    .filter(|r| r.round == round && r.direction == dir)
                    .map(|r| r.tolerance)
                    .collect();
                assert_eq!(tolerances.len(), 3);
                assert!(tolerances.windows(2).all(|w| w[0] == w[1]));
            }
        }
    }

    #[test]
    fn step_zero_uses_p_low_everywhere() {
        let mut cfg = preset("background-loss").unwrap();
        cfg.workload = crate::config::WorkloadSpec::Synthetic {
            profile: NormProfile::constant(10.0),
            element_count: 640,
        };
        cfg.transport.max_payload = 16;
        let mut cluster = SimCluster::new(&cfg).unwrap();
        cluster.step().unwrap();
        for record in cluster.records() {
            assert_eq!(record.tolerance, 0.008, "{record:?}");
            assert!(record.clr_active);
        }
    }
}
