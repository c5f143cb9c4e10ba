//! Run artifacts: `trace.csv`, `qber.csv`, and `summary.json`.
//!
//! The writers are deliberately plain and fully deterministic: the same
//! `SessionOutput` always produces byte-identical files, so runs can be
//! compared with `diff` and regression-tested by hash.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::session::{Phase, SessionOutcome, SessionOutput};

/// Artifact-writing failures.
#[derive(Debug, Error)]
pub enum OutputError {
    #[error("failed to write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to serialize summary: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path, source: std::io::Error) -> OutputError {
    OutputError::Io { path: path.display().to_string(), source }
}

/// Fixed six-decimal float formatting for the CSVs.
fn csv_f64(x: f64) -> String {
    format!("{x:.6}")
}

/// Renders the per-second trace as CSV text.
pub fn trace_csv(out: &SessionOutput) -> String {
    let mut s = String::from("time_s,phase,s1_hat,s2_hat,v_x1,v_x2\n");
    for r in &out.trace {
        let phase = match r.phase {
            Phase::Qkd => "qkd",
            Phase::Control => "control",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            csv_f64(r.time_s),
            phase,
            csv_f64(r.s1),
            csv_f64(r.s2),
            csv_f64(r.v_x1),
            csv_f64(r.v_x2),
        ));
    }
    s
}

/// Renders the per-interval QBER log as CSV text. An interval with no
/// sifted bits gets an empty QBER field rather than a fake zero.
pub fn qber_csv(out: &SessionOutput) -> String {
    let mut s = String::from("interval_index,sifted_bits,errors,qber\n");
    for r in &out.records {
        let q = r.qber.map(csv_f64).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", r.interval_index, r.sifted_bits, r.errors, q));
    }
    s
}

/// Mean and population standard deviation, `None` for an empty slice.
fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    Some((m, v.sqrt()))
}

/// The (S1, S2) estimates at which converged feedback cycles handed the
/// channel back to key exchange: the two verification samples that ended
/// each converged cycle. These, rather than every control-phase sample,
/// describe the state the system actually keys at — mid-cycle samples
/// include the excursion the cycle exists to remove.
pub fn converged_exit_samples(out: &SessionOutput) -> (Vec<f64>, Vec<f64>) {
    let ctl: Vec<_> = out.trace.iter().filter(|r| r.phase == Phase::Control).collect();
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    let mut off = 0usize;
    for r in &out.records {
        let k = r.control_samples as usize;
        if r.converged && k >= 2 && off + k <= ctl.len() {
            for row in &ctl[off + k - 2..off + k] {
                s1.push(row.s1);
                s2.push(row.s2);
            }
        }
        off += k;
    }
    (s1, s2)
}

#[derive(Debug, Serialize)]
struct MomentSummary {
    mean: f64,
    std: f64,
    samples: usize,
}

fn moments(xs: &[f64]) -> Option<MomentSummary> {
    mean_std(xs).map(|(mean, std)| MomentSummary { mean, std, samples: xs.len() })
}

#[derive(Debug, Serialize)]
struct SopSummary {
    s1: Option<MomentSummary>,
    s2: Option<MomentSummary>,
}

#[derive(Debug, Serialize)]
struct QberSummary {
    /// Errors over sifted bits, pooled across the whole run.
    overall: Option<f64>,
    /// Moments of the per-interval QBER series.
    per_interval: Option<MomentSummary>,
    total_sifted_bits: u64,
    total_errors: u64,
    alarmed_intervals: u32,
}

#[derive(Debug, Serialize)]
struct DutySummary {
    control_seconds: f64,
    qkd_seconds: f64,
    /// Fraction of wall time spent in feedback control.
    control_fraction: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ConvergenceSummary {
    control_cycles: u32,
    converged_cycles: u32,
    mean_samples_per_cycle: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    seed: u64,
    duration_s: f64,
    outcome: &'a SessionOutcome,
    intervals: usize,
    qber: QberSummary,
    /// SOP held at converged feedback-cycle exits.
    controlled_sop: SopSummary,
    duty: DutySummary,
    convergence: ConvergenceSummary,
    detection: &'a crate::session::AggregateStats,
    config: &'a ScenarioConfig,
}

/// Renders the run summary as pretty-printed JSON.
pub fn summary_json(
    cfg: &ScenarioConfig,
    seed: u64,
    duration_s: f64,
    out: &SessionOutput,
) -> Result<String, OutputError> {
    let total_sifted: u64 = out.records.iter().map(|r| r.sifted_bits).sum();
    let total_errors: u64 = out.records.iter().map(|r| r.errors).sum();
    let per_interval: Vec<f64> = out.records.iter().filter_map(|r| r.qber).collect();
    let control_s: f64 = out.records.iter().map(|r| r.control_seconds).sum();
    let qkd_s: f64 = out.records.iter().map(|r| r.qkd_seconds).sum();
    let (exit_s1, exit_s2) = converged_exit_samples(out);
    let summary = Summary {
        seed,
        duration_s,
        outcome: &out.outcome,
        intervals: out.records.len(),
        qber: QberSummary {
            overall: (total_sifted > 0).then(|| total_errors as f64 / total_sifted as f64),
            per_interval: moments(&per_interval),
            total_sifted_bits: total_sifted,
            total_errors,
            alarmed_intervals: out.records.iter().filter(|r| r.alarm).count() as u32,
        },
        controlled_sop: SopSummary { s1: moments(&exit_s1), s2: moments(&exit_s2) },
        duty: DutySummary {
            control_seconds: control_s,
            qkd_seconds: qkd_s,
            control_fraction: (control_s + qkd_s > 0.0).then(|| control_s / (control_s + qkd_s)),
        },
        convergence: ConvergenceSummary {
            control_cycles: out.control_cycles,
            converged_cycles: out.converged_cycles,
            mean_samples_per_cycle: (out.control_cycles > 0).then(|| {
                out.records.iter().map(|r| r.control_samples as f64).sum::<f64>()
                    / out.control_cycles as f64
            }),
        },
        detection: &out.stats,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    Ok(text)
}

/// Writes all three artifacts into `dir`, creating it if needed.
pub fn write_artifacts(
    dir: &Path,
    cfg: &ScenarioConfig,
    seed: u64,
    duration_s: f64,
    out: &SessionOutput,
) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, text: &str| -> Result<(), OutputError> {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| io_err(&path, e))
    };
    write("trace.csv", &trace_csv(out))?;
    write("qber.csv", &qber_csv(out))?;
    write("summary.json", &summary_json(cfg, seed, duration_s, out)?)
}
