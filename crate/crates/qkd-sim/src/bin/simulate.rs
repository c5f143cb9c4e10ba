//! Command-line front end: runs a session and writes `trace.csv`,
//! `qber.csv`, and `summary.json` into the output directory.
//!
//! Exit status: 0 on a completed session, 1 for configuration errors,
//! 2 when the session itself fails (transport loss or the feedback
//! control failure budget is exhausted).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use qkd_sim::config::{Mode, RunConfig};
use qkd_sim::output::write_artifacts;
use qkd_sim::session::{run_alice, run_bob, run_single, SessionOutcome};
use qkd_sim::transport::TcpEndpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Both parties in-process over a loopback transport.
    Single,
    /// Transmitter side; connects to Bob at --peer.
    Alice,
    /// Receiver side; listens for Alice on --peer.
    Bob,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Single => Mode::Single,
            ModeArg::Alice => Mode::Alice,
            ModeArg::Bob => Mode::Bob,
        }
    }
}

/// Polarization-encoded fiber QKD link simulator.
#[derive(Debug, Parser)]
#[command(name = "simulate", version, about)]
struct Cli {
    /// Scenario preset name (fiber50, fiber75, fiber100) or a path to a
    /// key=value scenario file.
    #[arg(long, default_value = "fiber50")]
    scenario: String,

    /// Seed for all randomness; equal seeds reproduce runs byte for byte.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Seconds of key exchange to simulate (control time is extra).
    #[arg(long, default_value_t = 3600.0)]
    duration: f64,

    #[arg(long, value_enum, default_value_t = ModeArg::Single)]
    mode: ModeArg,

    /// Peer address. For --mode alice the address to connect to; for
    /// --mode bob the address to listen on.
    #[arg(long)]
    peer: Option<String>,

    /// Directory for trace.csv, qber.csv, and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Scenario override as key=value; repeatable (e.g. --set gain_x1=3).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = Vec::new();
    for kv in &cli.set {
        match kv.split_once('=') {
            Some((k, v)) => overrides.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                eprintln!("error: --set expects key=value, got {kv:?}");
                return ExitCode::from(1);
            }
        }
    }
    let run = RunConfig {
        scenario: cli.scenario,
        seed: cli.seed,
        duration_s: cli.duration,
        mode: cli.mode.into(),
        peer_address: cli.peer,
        output_dir: cli.out,
        overrides,
    };
    let cfg = match run.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    match run.mode {
        Mode::Single => {
            let (bob, _) = run_single(&cfg, run.seed, run.duration_s);
            finish_bob(&run, &cfg, bob)
        }
        Mode::Bob => {
            let addr = run.peer_address.as_deref().expect("resolve() checked peer");
            let mut ep = match TcpEndpoint::accept_one(addr) {
                Ok(ep) => ep,
                Err(e) => {
                    eprintln!("error: listening on {addr}: {e}");
                    return ExitCode::from(2);
                }
            };
            let bob = run_bob(&cfg, run.seed, run.duration_s, &mut ep);
            finish_bob(&run, &cfg, bob)
        }
        Mode::Alice => {
            let addr = run.peer_address.as_deref().expect("resolve() checked peer");
            let mut ep = match TcpEndpoint::connect(addr) {
                Ok(ep) => ep,
                Err(e) => {
                    eprintln!("error: connecting to {addr}: {e}");
                    return ExitCode::from(2);
                }
            };
            let alice = run_alice(&cfg, run.seed, &mut ep);
            match alice.outcome {
                SessionOutcome::Completed => {
                    let sifted: u64 = alice.records.iter().map(|r| r.1).sum();
                    println!("alice: session complete, {} intervals, {sifted} sifted bits", alice.records.len());
                    ExitCode::SUCCESS
                }
                outcome => {
                    eprintln!("error: session failed: {outcome:?}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

fn finish_bob(
    run: &RunConfig,
    cfg: &qkd_sim::config::ScenarioConfig,
    bob: qkd_sim::session::SessionOutput,
) -> ExitCode {
    if let Err(e) = write_artifacts(&run.output_dir, cfg, run.seed, run.duration_s, &bob) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match &bob.outcome {
        SessionOutcome::Completed => {
            let sifted: u64 = bob.records.iter().map(|r| r.sifted_bits).sum();
            let errors: u64 = bob.records.iter().map(|r| r.errors).sum();
            let qber = if sifted > 0 { errors as f64 / sifted as f64 } else { f64::NAN };
            println!(
                "session complete: {} intervals, {sifted} sifted bits, qber {:.3}%, artifacts in {}",
                bob.records.len(),
                qber * 100.0,
                run.output_dir.display()
            );
            ExitCode::SUCCESS
        }
        outcome => {
            eprintln!("error: session failed: {outcome:?} (partial artifacts written)");
            ExitCode::from(2)
        }
    }
}
