//! Runs the real-socket all-reduce on localhost: one server and three
//! workers, each in its own thread, exchanging gradient chunks over UDP with
//! control signals over TCP. In a deployment each role runs as its own
//! process via the `dblp` binary (`--mode server` / `--mode worker`).
//!
//!     cargo run --release --example socket_allreduce

use std::net::TcpListener;
use std::thread;

use dblp::config::{preset, Mode};
use dblp::node::{run_server, run_worker};

fn main() {
    // Pick a free port up front so workers know where to join.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let addr = format!("127.0.0.1:{port}");

    let mut cfg = preset("toy-convergence").expect("preset exists");
    cfg.steps = 40;
    // The wire protocol tolerates real loss; on loopback there is none, so
    // the simulator-only loss schedule is irrelevant here.
    let workers = cfg.workers;

    let mut server_cfg = cfg.clone();
    server_cfg.mode = Mode::Server;
    server_cfg.listen = Some(addr.clone());
    let server = thread::spawn(move || run_server(&server_cfg).expect("server run"));

    let worker_handles: Vec<_> = (0..workers)
        .map(|_| {
            let mut worker_cfg = cfg.clone();
            worker_cfg.mode = Mode::Worker;
            worker_cfg.connect = Some(addr.clone());
            thread::spawn(move || {
                // The server may still be binding its listener; retry briefly.
                for _ in 0..50 {
                    match run_worker(&worker_cfg) {
                        Ok(report) => return report,
                        Err(dblp::node::NodeError::Io(_)) => {
                            thread::sleep(std::time::Duration::from_millis(100));
                        }
                        Err(e) => panic!("worker run: {e}"),
                    }
                }
                panic!("server never came up");
            })
        })
        .collect();

    let records = server.join().expect("server thread");
    println!("server recorded {} gather rounds", records.len());
    for handle in worker_handles {
        let report = handle.join().expect("worker thread");
        println!(
            "worker {}: {} broadcast rounds, final shard accuracy {:.4}",
            report.worker_id,
            report.records.len(),
            report.final_accuracy.expect("toy workload")
        );
    }
}
