//! Localhost integration of the OS-socket path: a raw send/recv pair over
//! UDP + framed TCP, and a full three-worker all-reduce with real roles.

use std::net::TcpListener;
use std::thread;

use dblp::config::{preset, Mode, ToleranceMode};
use dblp::node::{run_server, run_worker, NodeError};
use dblp::socket::{FramedStream, UdpDataChannel};
use dblp::transport::{dblp_recv, dblp_send, TransportConfig};

#[test]
fn raw_transfer_over_loopback_delivers_everything() {
    let cfg = TransportConfig {
        max_payload: 512,
        ..TransportConfig::default()
    };
    let data: Vec<u8> = (0..40_000u32).map(|i| (i % 251) as u8).collect();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let ctrl_addr = listener.local_addr().unwrap();

    let mut send_data = UdpDataChannel::bind("127.0.0.1:0").unwrap();
    let mut recv_data = UdpDataChannel::bind("127.0.0.1:0").unwrap();
    let send_port = send_data.local_port().unwrap();
    let recv_port = recv_data.local_port().unwrap();
    send_data.connect(("127.0.0.1", recv_port)).unwrap();
    recv_data.connect(("127.0.0.1", send_port)).unwrap();

    let sender_cfg = cfg.clone();
    let payload = data.clone();
    let sender = thread::spawn(move || {
        let stream = std::net::TcpStream::connect(ctrl_addr).unwrap();
        let mut ctrl = FramedStream::new(stream).unwrap();
        dblp_send(&payload, 9, &sender_cfg, &mut send_data, &mut ctrl).unwrap()
    });

    let (stream, _) = listener.accept().unwrap();
    let mut ctrl = FramedStream::new(stream).unwrap();
    // Zero tolerance: loopback UDP is lossless, one pass suffices.
    let outcome = dblp_recv(9, data.len(), 0.0, &cfg, &mut recv_data, &mut ctrl).unwrap();
    let send_outcome = sender.join().unwrap();

    assert_eq!(outcome.buffer, data);
    assert_eq!(outcome.chunks_received, outcome.chunks_total);
    assert_eq!(outcome.stale_dropped, 0);
    assert!(
        send_outcome.passes <= 2,
        "loopback should not retransmit much"
    );
}

#[test]
fn three_worker_socket_allreduce_converges_like_the_sim_path() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");

    let mut cfg = preset("toy-convergence").unwrap();
    cfg.steps = 25;
    // Loopback is lossless, so a zero tolerance is exact here.
    cfg.tolerance = ToleranceMode::Fixed { p: 0.0 };
    let workers = cfg.workers;

    let mut server_cfg = cfg.clone();
    server_cfg.mode = Mode::Server;
    server_cfg.listen = Some(addr.clone());
    let server = thread::spawn(move || run_server(&server_cfg));

    let worker_handles: Vec<_> = (0..workers)
        .map(|_| {
            let mut worker_cfg = cfg.clone();
            worker_cfg.mode = Mode::Worker;
            worker_cfg.connect = Some(addr.clone());
            thread::spawn(move || {
                for _ in 0..50 {
                    match run_worker(&worker_cfg) {
                        Err(NodeError::Io(_)) => {
                            thread::sleep(std::time::Duration::from_millis(100))
                        }
                        other => return other,
                    }
                }
                panic!("server never came up");
            })
        })
        .collect();

    let records = server.join().unwrap().unwrap();
    assert_eq!(
        records.len(),
        25 * workers,
        "one gather row per worker per step"
    );
    assert!(records.iter().all(|r| r.chunks_received == r.chunks_total));

    // Lossless socket run must land on the exact same trajectory as the
    // lossless simulated run.
    let mut sim_cfg = cfg.clone();
    sim_cfg.loss = dblp::lossnet::LossSchedule::lossless(cfg.seed);
    let mut cluster = dblp::SimCluster::new(&sim_cfg).unwrap();
    for _ in 0..sim_cfg.steps {
        cluster.step().unwrap();
    }

    let mut reports: Vec<_> = worker_handles
        .into_iter()
        .map(|h| h.join().unwrap().unwrap())
        .collect();
    reports.sort_by_key(|r| r.worker_id);
    for report in reports {
        assert_eq!(report.records.len(), 25);
        let expected = cluster.worker_params(report.worker_id as usize).unwrap();
        let got = report.final_params.unwrap();
        assert_eq!(
            got.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            expected.iter().map(|f| f.to_bits()).collect::<Vec<_>>(),
            "worker {} diverged from the simulated trajectory",
            report.worker_id
        );
    }
}
