//! Session engine: alternating feedback-control and QKD communication
//! cycles over the classical channel.
//!
//! Bob owns the quantum-side simulation (fiber drift, detection,
//! controller); Alice's process answers the control handshake and
//! reveals bases. Each interval is [control cycle → QKD segment of
//! `control_interval_s` seconds]; `duration_s` counts QKD (communication)
//! seconds only, so a run always produces `ceil(duration / interval)`
//! intervals regardless of how long control takes.
//!
//! Time is stepped at one-second resolution. Every second — control
//! sample or QKD window — first evolves the fiber drift, then simulates
//! that second's pulse train in aggregate (one multinomial draw per sent
//! state over the click categories), so multi-hour runs stay cheap
//! without changing the statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, UnitSphere};
use serde::Serialize;

use crate::channel::{apply_channel, evolve_drift, transmittance, ChannelState};
use crate::config::ScenarioConfig;
use crate::controller::{run_feedback_cycle, ControllerError, ControllerState};
use crate::detection::{accumulate_window, click_probabilities, SourceConfig};
use crate::stokes::{estimate_stokes, EstimatedSop, PoincareRotation, StokesVector, CIRC_AXIS};
use crate::transport::{loopback_pair, ClassicalMessage, Endpoint};

/// Derives an independent stream seed from the shared run seed and a
/// role label, so both processes agree without sharing RNG state.
pub fn subseed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x1_0000_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a trace row describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Qkd,
    Control,
}

/// One second of the run, as written to trace.csv. Control rows carry
/// the estimated SOP the controller acted on; QKD rows carry the true
/// SOP a compensated H reference would have (the quantity the feedback
/// holds near (1, 0)), since no reference is measured while keying.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_s: f64,
    pub phase: Phase,
    pub s1: f64,
    pub s2: f64,
    pub v_x1: f64,
    pub v_x2: f64,
}

/// Per-interval log entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionRecord {
    pub interval_index: u32,
    pub sifted_bits: u64,
    pub errors: u64,
    /// `None` when nothing survived sifting (QBER undefined, not zero).
    pub qber: Option<f64>,
    pub control_seconds: f64,
    pub qkd_seconds: f64,
    pub converged: bool,
    pub control_samples: u32,
    /// QBER above the configured security threshold.
    pub alarm: bool,
}

/// How the session ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SessionOutcome {
    Completed,
    /// Classical channel failed; records up to that point are kept.
    TransportLost(String),
    /// More feedback cycles hit the iteration cap than the budget allows.
    ControlBudgetExhausted,
}

/// Session-wide tallies that do not fit a single interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AggregateStats {
    pub total_pulses: u64,
    pub single_clicks: u64,
    pub double_clicks: u64,
    /// Single clicks whose decoded basis matched Alice's (both bases).
    pub matched_pairs: u64,
    /// Single clicks by [Alice basis][Bob basis]; 0 = HV, 1 = QR.
    pub basis_table: [[u64; 2]; 2],
}

/// Everything Bob's side produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub records: Vec<SessionRecord>,
    pub trace: Vec<TraceRow>,
    pub stats: AggregateStats,
    pub outcome: SessionOutcome,
    pub control_cycles: u32,
    pub converged_cycles: u32,
}

/// Alice's side of the run: what she learns through the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct AliceOutput {
    /// (interval_index, sifted_bits, errors) from SiftResult messages.
    pub records: Vec<(u32, u64, u64)>,
    pub outcome: SessionOutcome,
}

/// Splits `n` trials over `probs` (which must sum to ~1) with sequential
/// conditional binomial draws.
fn multinomial(n: u64, probs: &[f64], rng: &mut ChaCha12Rng) -> Vec<u64> {
    let mut out = Vec::with_capacity(probs.len());
    let mut rem_n = n;
    let mut rem_p = 1.0f64;
    for (k, &p) in probs.iter().enumerate() {
        if k == probs.len() - 1 {
            out.push(rem_n);
            break;
        }
        if rem_n == 0 || rem_p <= p {
            out.push(rem_n);
            rem_n = 0;
            rem_p -= p;
            continue;
        }
        let q = (p / rem_p).clamp(0.0, 1.0);
        let draw = Binomial::new(rem_n, q).expect("probability in [0,1]").sample(rng);
        out.push(draw);
        rem_n -= draw;
        rem_p -= p;
    }
    out
}

/// Tallies from one QKD segment, accumulated window by window.
#[derive(Debug, Clone, Copy, Default)]
struct SegmentTally {
    sifted: u64,
    errors: u64,
    stats: AggregateStats,
}

/// The quantum side of the link: fiber state, source and detector bank.
struct QuantumSim<'a> {
    cfg: &'a ScenarioConfig,
    state: ChannelState,
    rng: ChaCha12Rng,
    transmittance: f64,
    src_qkd: SourceConfig,
    src_ref: SourceConfig,
    /// Alice's frame misalignment, applied to every sent SOP.
    offset: PoincareRotation,
    time_s: f64,
}

impl<'a> QuantumSim<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(subseed(seed, "quantum"));
        // Cold start: the fiber's initial birefringence is arbitrary.
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::PI);
        let state = ChannelState {
            birefringence: PoincareRotation::new(axis, angle).expect("unit axis"),
            elapsed_s: 0.0,
        };
        QuantumSim {
            cfg,
            state,
            rng,
            transmittance: transmittance(&cfg.fiber),
            src_qkd: SourceConfig::new(cfg.fiber.source_mean_photons_qkd),
            src_ref: SourceConfig::new(cfg.fiber.source_mean_photons_ref),
            offset: PoincareRotation::about(CIRC_AXIS, cfg.fiber.v_laser_offset_rad),
            time_s: 0.0,
        }
    }

    fn drift_one_second(&mut self) {
        evolve_drift(&mut self.state, 1.0, self.cfg.fiber.drift_angle_std, &mut self.rng);
        self.time_s += 1.0;
    }

    /// True output SOP of an H reference through fiber + compensator.
    fn compensated_h(&self, actuator: &PoincareRotation) -> StokesVector {
        apply_channel(&self.offset.rotate(&StokesVector::H), &self.state, actuator)
    }

    /// One second of reference pulses, measured.
    fn ref_second(&mut self, actuator: &PoincareRotation) -> EstimatedSop {
        self.drift_one_second();
        let sop = self.compensated_h(actuator);
        let n = self.src_ref.rep_rate_hz as u64;
        let counts =
            accumulate_window(&sop, n, &self.src_ref, self.transmittance, &self.cfg.detector, &mut self.rng);
        estimate_stokes(&counts).unwrap_or(EstimatedSop { s1_hat: 0.0, s2_hat: 0.0, window_pulses: n })
    }

    /// One second of QKD pulses, aggregated: Alice's four states are
    /// split multinomially, then each state's pulses are split over the
    /// six click categories (four singles, multi, none).
    fn qkd_second(&mut self, actuator: &PoincareRotation, tally: &mut SegmentTally) {
        self.drift_one_second();
        let n = self.src_qkd.rep_rate_hz as u64;
        let sent = [StokesVector::H, StokesVector::V, StokesVector::Q, StokesVector::R];
        let state_counts = multinomial(n, &[0.25; 4], &mut self.rng);
        for (i, (&count, sop)) in state_counts.iter().zip(&sent).enumerate() {
            if count == 0 {
                continue;
            }
            let out = apply_channel(&self.offset.rotate(sop), &self.state, actuator);
            let p = click_probabilities(&out, &self.src_qkd, self.transmittance, &self.cfg.detector);
            let none: f64 = p.iter().map(|&q| 1.0 - q).product();
            let mut cats = [0.0f64; 6];
            for d in 0..4 {
                cats[d] = if p[d] < 1.0 { p[d] / (1.0 - p[d]) * none } else { 0.0 };
            }
            let singles: f64 = cats[..4].iter().sum();
            cats[4] = (1.0 - none - singles).max(0.0);
            cats[5] = none;
            let c = multinomial(count, &cats, &mut self.rng);

            tally.stats.total_pulses += count;
            tally.stats.single_clicks += c[0] + c[1] + c[2] + c[3];
            tally.stats.double_clicks += c[4];
            let alice_basis = usize::from(i >= 2);
            tally.stats.basis_table[alice_basis][0] += c[0] + c[1];
            tally.stats.basis_table[alice_basis][1] += c[2] + c[3];
            tally.stats.matched_pairs += if alice_basis == 0 { c[0] + c[1] } else { c[2] + c[3] };
            // Key bits come from the HV arm only: with an H-referenced
            // control loop the QR arm's alignment is not guaranteed.
            match i {
                0 => {
                    tally.sifted += c[0] + c[1];
                    tally.errors += c[1];
                }
                1 => {
                    tally.sifted += c[0] + c[1];
                    tally.errors += c[0];
                }
                _ => {}
            }
        }
    }
}

impl AggregateStats {
    fn absorb(&mut self, other: &AggregateStats) {
        self.total_pulses += other.total_pulses;
        self.single_clicks += other.single_clicks;
        self.double_clicks += other.double_clicks;
        self.matched_pairs += other.matched_pairs;
        for a in 0..2 {
            for b in 0..2 {
                self.basis_table[a][b] += other.basis_table[a][b];
            }
        }
    }
}

macro_rules! try_net {
    ($out:expr, $e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => {
                $out.outcome = SessionOutcome::TransportLost(err.to_string());
                return $out;
            }
        }
    };
}

/// Runs Bob's side to completion: control handshakes, the quantum
/// simulation, sifting, and per-interval records. On transport failure
/// the partial records accumulated so far are returned.
pub fn run_bob(
    cfg: &ScenarioConfig,
    seed: u64,
    duration_s: f64,
    ep: &mut dyn Endpoint,
) -> SessionOutput {
    let mut out = SessionOutput {
        records: Vec::new(),
        trace: Vec::new(),
        stats: AggregateStats::default(),
        outcome: SessionOutcome::Completed,
        control_cycles: 0,
        converged_cycles: 0,
    };
    let mut sim = QuantumSim::new(cfg, seed);
    let mut ctl = ControllerState::new(cfg.thresholds);
    let mut failures = 0u32;
    let mut qkd_done = 0.0f64;
    let mut interval: u32 = 0;
    // SiftResult for the previous interval is sent during the next
    // handshake, after ControlDone.
    let mut pending_sift: Option<(u32, u64, u64)> = None;

    let expect_ref_start = |msg: ClassicalMessage| match msg {
        ClassicalMessage::RefStart => Ok(()),
        other => Err(crate::transport::TransportError::UnknownKind(other.kind())),
    };

    while qkd_done < duration_s {
        // Control phase.
        try_net!(out, ep.send(&ClassicalMessage::ControlAsk));
        try_net!(out, expect_ref_start(try_net!(out, ep.recv())));
        if pending_sift.is_some() {
            // Alice reveals the previous segment's bases before control.
            let msg = try_net!(out, ep.recv());
            if !matches!(msg, ClassicalMessage::BasisReveal { .. }) {
                out.outcome = SessionOutcome::TransportLost(format!(
                    "expected BasisReveal, got kind {}",
                    msg.kind()
                ));
                return out;
            }
        }
        let trace = &mut out.trace;
        let mut plant = |st: &ControllerState| {
            let sop = sim.ref_second(&st.actuator_rotation(&cfg.actuator));
            trace.push(TraceRow {
                time_s: sim.time_s,
                phase: Phase::Control,
                s1: sop.s1_hat,
                s2: sop.s2_hat,
                v_x1: st.v_x1,
                v_x2: st.v_x2,
            });
            sop
        };
        let (samples, converged) =
            match run_feedback_cycle(&mut plant, &mut ctl, &cfg.actuator, cfg.max_control_iters) {
                Ok(report) => (report.iterations, true),
                Err(ControllerError::NotConverged { iterations, .. }) => (iterations, false),
                Err(other) => {
                    out.outcome = SessionOutcome::TransportLost(other.to_string());
                    return out;
                }
            };
        out.control_cycles += 1;
        if converged {
            out.converged_cycles += 1;
        } else {
            failures += 1;
        }
        try_net!(out, ep.send(&ClassicalMessage::ControlDone));
        if let Some((idx, sifted, errors)) = pending_sift.take() {
            try_net!(
                out,
                ep.send(&ClassicalMessage::SiftResult { interval_index: idx, sifted_bits: sifted, errors })
            );
        }
        if failures > cfg.control_failure_budget {
            out.outcome = SessionOutcome::ControlBudgetExhausted;
            let _ = finish(ep, &mut pending_sift);
            return out;
        }

        // QKD segment.
        let seg_seconds = (duration_s - qkd_done).min(cfg.fiber.control_interval_s).ceil() as u64;
        let actuator = ctl.actuator_rotation(&cfg.actuator);
        let mut tally = SegmentTally::default();
        for _ in 0..seg_seconds {
            sim.qkd_second(&actuator, &mut tally);
            let true_sop = sim.compensated_h(&actuator);
            out.trace.push(TraceRow {
                time_s: sim.time_s,
                phase: Phase::Qkd,
                s1: true_sop.s1,
                s2: true_sop.s2,
                v_x1: ctl.v_x1,
                v_x2: ctl.v_x2,
            });
        }
        qkd_done += seg_seconds as f64;
        out.stats.absorb(&tally.stats);
        let qber = (tally.sifted > 0).then(|| tally.errors as f64 / tally.sifted as f64);
        out.records.push(SessionRecord {
            interval_index: interval,
            sifted_bits: tally.sifted,
            errors: tally.errors,
            qber,
            control_seconds: samples as f64,
            qkd_seconds: seg_seconds as f64,
            converged,
            control_samples: samples,
            alarm: qber.is_some_and(|q| q > cfg.qber_alarm_threshold),
        });
        pending_sift = Some((interval, tally.sifted, tally.errors));
        interval += 1;
    }

    if let Err(e) = finish(ep, &mut pending_sift) {
        out.outcome = SessionOutcome::TransportLost(e.to_string());
    }
    out
}

/// Final handshake: SessionEnd, the last BasisReveal/SiftResult pair,
/// and Alice's closing SessionEnd.
fn finish(
    ep: &mut dyn Endpoint,
    pending_sift: &mut Option<(u32, u64, u64)>,
) -> Result<(), crate::transport::TransportError> {
    ep.send(&ClassicalMessage::SessionEnd)?;
    let msg = ep.recv()?;
    if !matches!(msg, ClassicalMessage::BasisReveal { .. }) {
        return Err(crate::transport::TransportError::UnknownKind(msg.kind()));
    }
    if let Some((idx, sifted, errors)) = pending_sift.take() {
        ep.send(&ClassicalMessage::SiftResult { interval_index: idx, sifted_bits: sifted, errors })?;
    }
    ep.send(&ClassicalMessage::SessionEnd)?;
    match ep.recv()? {
        ClassicalMessage::SessionEnd => Ok(()),
        other => Err(crate::transport::TransportError::UnknownKind(other.kind())),
    }
}

/// Runs Alice's side: answer control asks, reveal bases, collect sift
/// results. Her basis reveal is a seed-derived commitment of the pulse
/// train she (conceptually) sent for the segment.
pub fn run_alice(cfg: &ScenarioConfig, seed: u64, ep: &mut dyn Endpoint) -> AliceOutput {
    let mut out = AliceOutput { records: Vec::new(), outcome: SessionOutcome::Completed };
    let pulses_per_segment = (cfg.fiber.control_interval_s
        * SourceConfig::new(cfg.fiber.source_mean_photons_qkd).rep_rate_hz) as u64;
    let reveal = |segment: u32| {
        let mut rng = ChaCha12Rng::seed_from_u64(subseed(seed, "alice").wrapping_add(segment as u64));
        let mut bits = vec![0u8; 8];
        rand::Rng::fill(&mut rng, bits.as_mut_slice());
        ClassicalMessage::BasisReveal {
            start_pulse: segment as u64 * pulses_per_segment,
            bit_count: 64,
            bits,
        }
    };
    let mut asks = 0u32;
    let mut revealed = 0u32;
    loop {
        let msg = try_net!(out, ep.recv());
        match msg {
            ClassicalMessage::ControlAsk => {
                try_net!(out, ep.send(&ClassicalMessage::RefStart));
                if asks > 0 {
                    try_net!(out, ep.send(&reveal(revealed)));
                    revealed += 1;
                }
                asks += 1;
            }
            ClassicalMessage::ControlDone => {}
            ClassicalMessage::SiftResult { interval_index, sifted_bits, errors } => {
                out.records.push((interval_index, sifted_bits, errors));
            }
            ClassicalMessage::SessionEnd => {
                try_net!(out, ep.send(&reveal(revealed)));
                loop {
                    match try_net!(out, ep.recv()) {
                        ClassicalMessage::SiftResult { interval_index, sifted_bits, errors } => {
                            out.records.push((interval_index, sifted_bits, errors));
                        }
                        ClassicalMessage::SessionEnd => {
                            try_net!(out, ep.send(&ClassicalMessage::SessionEnd));
                            return out;
                        }
                        other => {
                            out.outcome = SessionOutcome::TransportLost(format!(
                                "unexpected kind {}",
                                other.kind()
                            ));
                            return out;
                        }
                    }
                }
            }
            other => {
                out.outcome =
                    SessionOutcome::TransportLost(format!("unexpected kind {}", other.kind()));
                return out;
            }
        }
    }
}

/// Runs both parties in one process over the loopback transport.
pub fn run_single(cfg: &ScenarioConfig, seed: u64, duration_s: f64) -> (SessionOutput, AliceOutput) {
    let (mut a, mut b) = loopback_pair();
    let alice_cfg = cfg.clone();
    let alice = std::thread::spawn(move || run_alice(&alice_cfg, seed, &mut a));
    let bob = run_bob(cfg, seed, duration_s, &mut b);
    let alice = alice.join().expect("alice thread");
    (bob, alice)
}
