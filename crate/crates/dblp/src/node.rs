//! Socket-mode roles: a server that gathers gradients from N workers over
//! real UDP/TCP and broadcasts the mean, and the matching worker loop.
//!
//! Control plane per worker is one TCP stream; it carries the handshake,
//! the per-step `begin`/`mean`/`done` announcements, and the transport's
//! probe/bitmap/stop messages (phases never overlap, so frames can't be
//! misattributed). Gradient chunks flow over a dedicated UDP socket pair.

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::allreduce::{reduce_mean, verify_layout, AllreduceError, WorkerRuntime};
use crate::clr::{l2_norm_flat, ToleranceSchedule};
use crate::config::{ConfigError, ExperimentConfig, Mode, ToleranceMode};
use crate::metrics::{write_csv, Direction, MetricsError, RoundMetrics};
use crate::socket::{FramedStream, UdpDataChannel};
use crate::transport::{
    bytes_to_floats, dblp_recv, dblp_send, floats_to_bytes, TransportConfig, TransportError,
};
use crate::wire::{decode_metadata, encode_metadata, MetadataAnnouncement};

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Allreduce(#[from] AllreduceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("worker thread panicked")]
    WorkerPanic,
}

impl NodeError {
    pub fn exit_code(&self) -> i32 {
        match self {
            NodeError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn parse_kv<'a>(frame: &'a str, key: &str) -> Result<&'a str, NodeError> {
    frame
        .split_whitespace()
        .find_map(|part| {
            part.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
        })
        .ok_or_else(|| NodeError::Protocol(format!("missing {key} in {frame:?}")))
}

fn text_frame(stream: &mut FramedStream) -> Result<String, NodeError> {
    loop {
        let bytes = stream.expect_frame(HANDSHAKE_TIMEOUT)?;
        // A probe/bitmap/stop from the tail of the previous transfer can
        // cross a phase boundary; control kinds are < 0x10, text is ASCII.
        if matches!(bytes.first(), Some(b) if *b < 0x10) {
            continue;
        }
        return String::from_utf8(bytes).map_err(|_| NodeError::Protocol("non-utf8 frame".into()));
    }
}

/// Per-step announcement the server sends on the control stream.
struct StepAnnounce {
    verb: &'static str,
    round: u64,
    tolerance: f64,
    clr_active: bool,
}

impl StepAnnounce {
    fn encode(&self) -> Vec<u8> {
        format!(
            "{} round={} tolerance={} clr={}",
            self.verb, self.round, self.tolerance, self.clr_active as u8
        )
        .into_bytes()
    }

    fn parse(text: &str) -> Result<Self, NodeError> {
        let verb = match text.split_whitespace().next() {
            Some("begin") => "begin",
            Some("mean") => "mean",
            Some("done") => {
                return Ok(Self {
                    verb: "done",
                    round: 0,
                    tolerance: 0.0,
                    clr_active: false,
                })
            }
            other => {
                return Err(NodeError::Protocol(format!(
                    "unknown announcement {other:?}"
                )))
            }
        };
        let round = parse_kv(text, "round")?
            .parse()
            .map_err(|_| NodeError::Protocol(format!("bad round in {text:?}")))?;
        let tolerance = parse_kv(text, "tolerance")?
            .parse()
            .map_err(|_| NodeError::Protocol(format!("bad tolerance in {text:?}")))?;
        let clr_active = parse_kv(text, "clr")? == "1";
        Ok(Self {
            verb,
            round,
            tolerance,
            clr_active,
        })
    }
}

enum Cmd {
    Begin {
        round: u64,
        tolerance: f64,
        clr_active: bool,
    },
    Mean {
        round: u64,
        bytes: Arc<Vec<u8>>,
        tolerance: f64,
        clr_active: bool,
    },
    Done,
}

struct HandlerSetup {
    worker_id: u32,
    ctrl: FramedStream,
    data: UdpDataChannel,
    meta: MetadataAnnouncement,
    transport: TransportConfig,
    burst_rounds: Vec<u64>,
    cmds: mpsc::Receiver<Cmd>,
    gather: mpsc::Sender<(u32, Vec<f32>)>,
}

fn serve_worker(mut h: HandlerSetup) -> Result<Vec<RoundMetrics>, NodeError> {
    let mut records = Vec::new();
    let buffer_len = h.meta.buffer_len();
    for cmd in h.cmds.iter() {
        match cmd {
            Cmd::Begin {
                round,
                tolerance,
                clr_active,
            } => {
                let announce = StepAnnounce {
                    verb: "begin",
                    round,
                    tolerance,
                    clr_active,
                };
                h.ctrl.send_frame(&announce.encode())?;
                let outcome = dblp_recv(
                    round,
                    buffer_len,
                    tolerance,
                    &h.transport,
                    &mut h.data,
                    &mut h.ctrl,
                )?;
                records.push(RoundMetrics {
                    round,
                    worker_id: h.worker_id,
                    direction: Direction::W2S,
                    latency_s: outcome.elapsed.as_secs_f64(),
                    passes: 0, // pass count is a sender-side statistic
                    tolerance,
                    clr_active,
                    burst: h.burst_rounds.contains(&round),
                    chunks_total: outcome.chunks_total,
                    chunks_received: outcome.chunks_received,
                });
                let floats = bytes_to_floats(&outcome.buffer);
                h.gather
                    .send((h.worker_id, floats))
                    .map_err(|_| NodeError::Protocol("coordinator gone".into()))?;
            }
            Cmd::Mean {
                round,
                bytes,
                tolerance,
                clr_active,
            } => {
                let announce = StepAnnounce {
                    verb: "mean",
                    round,
                    tolerance,
                    clr_active,
                };
                h.ctrl.send_frame(&announce.encode())?;
                dblp_send(&bytes, round, &h.transport, &mut h.data, &mut h.ctrl)?;
            }
            Cmd::Done => {
                h.ctrl.send_frame(b"done")?;
                break;
            }
        }
    }
    Ok(records)
}

/// Runs the gather/reduce/broadcast server. Blocks until all steps complete;
/// writes `metrics.csv` (worker-to-server rows) into `cfg.out_dir` when set.
pub fn run_server(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>, NodeError> {
    cfg.validate()?;
    if cfg.mode != Mode::Server {
        return Err(NodeError::Protocol("config mode is not `server`".into()));
    }
    let listen = cfg
        .listen
        .as_deref()
        .ok_or_else(|| NodeError::Protocol("server mode needs --listen".into()))?;
    let listener = TcpListener::bind(listen)?;
    log::info!("listening on {}", listener.local_addr()?);

    let transport = cfg.transport.to_transport_config(cfg.seed);
    // The server mirrors worker 0's layout; all workers must announce the same.
    let expected_meta = MetadataAnnouncement::from_layout(
        &WorkerRuntime::new(cfg, 0)?.layout(),
        transport.max_payload,
    );

    let (gather_tx, gather_rx) = mpsc::channel::<(u32, Vec<f32>)>();
    let mut cmd_txs = Vec::new();
    let mut handles = Vec::new();
    for worker_id in 0..cfg.workers as u32 {
        let (stream, peer) = listener.accept()?;
        log::info!("worker {worker_id} connected from {peer}");
        let mut ctrl = FramedStream::new(stream)?;

        let hello = text_frame(&mut ctrl)?;
        let worker_data_port: u16 = parse_kv(&hello, "data_port")?
            .parse()
            .map_err(|_| NodeError::Protocol(format!("bad data_port in {hello:?}")))?;
        let remote_meta = decode_metadata(&ctrl.expect_frame(HANDSHAKE_TIMEOUT)?)
            .map_err(TransportError::Wire)?;
        verify_layout(&expected_meta, &remote_meta)?;

        let mut data = UdpDataChannel::bind((listener.local_addr()?.ip(), 0))?;
        data.connect((peer.ip(), worker_data_port))?;
        ctrl.send_frame(
            format!(
                "welcome worker_id={} steps={} data_port={}",
                worker_id,
                cfg.steps,
                data.local_port()?
            )
            .as_bytes(),
        )?;
        ctrl.send_frame(&encode_metadata(&expected_meta))?;

        let (cmd_tx, cmd_rx) = mpsc::channel();
        cmd_txs.push(cmd_tx);
        let setup = HandlerSetup {
            worker_id,
            ctrl,
            data,
            meta: expected_meta.clone(),
            transport: transport.clone(),
            burst_rounds: cfg.loss.bursts.iter().map(|&(r, _)| r).collect(),
            cmds: cmd_rx,
            gather: gather_tx.clone(),
        };
        handles.push(thread::spawn(move || serve_worker(setup)));
    }
    drop(gather_tx);

    let mut tolerance: Option<ToleranceSchedule> = match &cfg.tolerance {
        ToleranceMode::Fixed { .. } => None,
        ToleranceMode::Adaptive { .. } => Some(
            ToleranceSchedule::new(cfg.tolerance.clr_config().unwrap())
                .map_err(AllreduceError::Clr)?,
        ),
    };
    let fixed = match &cfg.tolerance {
        ToleranceMode::Fixed { p } => *p,
        ToleranceMode::Adaptive { .. } => 0.0,
    };

    let result = (|| -> Result<(), NodeError> {
        for round in 0..cfg.steps {
            let (tol_in, clr_in) = match &tolerance {
                Some(s) => (s.current(), s.clr_active()),
                None => (fixed, false),
            };
            for tx in &cmd_txs {
                tx.send(Cmd::Begin {
                    round,
                    tolerance: tol_in,
                    clr_active: clr_in,
                })
                .map_err(|_| NodeError::WorkerPanic)?;
            }
            let mut gathered: Vec<Option<Vec<f32>>> = vec![None; cfg.workers];
            for _ in 0..cfg.workers {
                let (id, grad) = gather_rx.recv().map_err(|_| NodeError::WorkerPanic)?;
                gathered[id as usize] = Some(grad);
            }
            let buffers: Vec<Vec<f32>> = gathered
                .into_iter()
                .map(|g| g.expect("one gradient per worker"))
                .collect();
            let mean = reduce_mean(&buffers)?;
            let norm = l2_norm_flat(&mean);
            let (tol_out, clr_out) = match &mut tolerance {
                Some(s) => {
                    let t = s.advance(round, norm);
                    (t, s.clr_active())
                }
                None => (fixed, false),
            };
            let bytes = Arc::new(floats_to_bytes(&mean));
            for tx in &cmd_txs {
                tx.send(Cmd::Mean {
                    round,
                    bytes: bytes.clone(),
                    tolerance: tol_out,
                    clr_active: clr_out,
                })
                .map_err(|_| NodeError::WorkerPanic)?;
            }
        }
        for tx in &cmd_txs {
            tx.send(Cmd::Done).map_err(|_| NodeError::WorkerPanic)?;
        }
        Ok(())
    })();

    let mut records = Vec::new();
    for handle in handles {
        match handle.join() {
            Ok(Ok(mut r)) => records.append(&mut r),
            Ok(Err(e)) => return Err(e),
            Err(_) => return Err(NodeError::WorkerPanic),
        }
    }
    result?;

    records.sort_by_key(|r| (r.round, r.worker_id));
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(dir.join("metrics.csv"), &records)?;
    }
    Ok(records)
}

/// Outcome of a worker process: its broadcast-side metrics and, for the toy
/// workload, the final model parameters.
pub struct WorkerReport {
    pub worker_id: u32,
    pub records: Vec<RoundMetrics>,
    pub final_params: Option<Vec<f32>>,
    pub final_accuracy: Option<f64>,
}

/// Connects to the server and participates in all steps. Writes
/// `worker-<id>-metrics.csv` (server-to-worker rows) into `cfg.out_dir`.
pub fn run_worker(cfg: &ExperimentConfig) -> Result<WorkerReport, NodeError> {
    cfg.validate()?;
    if cfg.mode != Mode::Worker {
        return Err(NodeError::Protocol("config mode is not `worker`".into()));
    }
    let connect = cfg
        .connect
        .as_deref()
        .ok_or_else(|| NodeError::Protocol("worker mode needs --connect".into()))?;
    let stream = TcpStream::connect(connect)?;
    let server_ip = stream.peer_addr()?.ip();
    let mut ctrl = FramedStream::new(stream)?;
    let mut data = UdpDataChannel::bind("0.0.0.0:0")?;

    // Worker id arrives in the welcome; announce our layout with a provisional
    // runtime (layouts are identical across worker ids).
    let transport = cfg.transport.to_transport_config(cfg.seed);
    let provisional = WorkerRuntime::new(cfg, 0)?;
    let meta = MetadataAnnouncement::from_layout(&provisional.layout(), transport.max_payload);
    ctrl.send_frame(format!("hello data_port={}", data.local_port()?).as_bytes())?;
    ctrl.send_frame(&encode_metadata(&meta))?;

    let welcome = text_frame(&mut ctrl)?;
    let worker_id: u32 = parse_kv(&welcome, "worker_id")?
        .parse()
        .map_err(|_| NodeError::Protocol(format!("bad worker_id in {welcome:?}")))?;
    let steps: u64 = parse_kv(&welcome, "steps")?
        .parse()
        .map_err(|_| NodeError::Protocol(format!("bad steps in {welcome:?}")))?;
    let server_port: u16 = parse_kv(&welcome, "data_port")?
        .parse()
        .map_err(|_| NodeError::Protocol(format!("bad data_port in {welcome:?}")))?;
    let server_meta =
        decode_metadata(&ctrl.expect_frame(HANDSHAKE_TIMEOUT)?).map_err(TransportError::Wire)?;
    verify_layout(&meta, &server_meta)?;
    data.connect((server_ip, server_port))?;
    log::info!("joined as worker {worker_id}, {steps} steps");

    let mut runtime = WorkerRuntime::new(cfg, worker_id as u64)?;
    let burst_rounds: Vec<u64> = cfg.loss.bursts.iter().map(|&(r, _)| r).collect();
    let buffer_len = meta.buffer_len();
    let mut records = Vec::new();

    loop {
        let announce = StepAnnounce::parse(&text_frame(&mut ctrl)?)?;
        match announce.verb {
            "begin" => {
                let gradient = runtime.gradient(announce.round)?;
                let bytes = floats_to_bytes(&gradient);
                dblp_send(&bytes, announce.round, &transport, &mut data, &mut ctrl)?;
            }
            "mean" => {
                let outcome = dblp_recv(
                    announce.round,
                    buffer_len,
                    announce.tolerance,
                    &transport,
                    &mut data,
                    &mut ctrl,
                )?;
                records.push(RoundMetrics {
                    round: announce.round,
                    worker_id,
                    direction: Direction::S2W,
                    latency_s: outcome.elapsed.as_secs_f64(),
                    passes: 0,
                    tolerance: announce.tolerance,
                    clr_active: announce.clr_active,
                    burst: burst_rounds.contains(&announce.round),
                    chunks_total: outcome.chunks_total,
                    chunks_received: outcome.chunks_received,
                });
                runtime.apply(&bytes_to_floats(&outcome.buffer));
            }
            "done" => break,
            other => return Err(NodeError::Protocol(format!("unexpected verb {other}"))),
        }
    }

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(
            Path::new(dir).join(format!("worker-{worker_id}-metrics.csv")),
            &records,
        )?;
    }
    Ok(WorkerReport {
        worker_id,
        records,
        final_params: runtime.params(),
        final_accuracy: runtime.accuracy(),
    })
}
