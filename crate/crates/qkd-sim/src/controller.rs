//! SOP-stabilization feedback: drive V(X2) until |S2| < T2 and V(X1),
//! with direction-reversal search, until S1 > T1.
//!
//! Actuator geometry: X1 stresses the fiber at 45° and rotates the SOP
//! about the QR (S2) axis; X2 stresses at 0° and rotates about the HV
//! (S1) axis. Light passes X2 first, then X1, so the measured S2 depends
//! on V(X2) alone (an S2-axis rotation preserves the second Stokes
//! component) while X1 moves the state within the S1-S3 plane toward H.
//! Each correction step uses a fresh one-second sampling window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stokes::{EstimatedSop, PoincareRotation, HV_AXIS, QR_AXIS};

#[derive(Debug, Error)]
pub enum ControllerError {
    /// No voltage plus an integer number of 2π-voltages lands in the
    /// driver range. Cannot occur while the range spans at least one
    /// 2π-voltage.
    #[error("voltage {0} V cannot be wrapped into the driver range")]
    Unwrappable(f64),
    /// The feedback cycle hit its iteration cap; the caller logs the
    /// excursion and retries at the next interruption interval.
    #[error("feedback did not converge within {iterations} samples")]
    NotConverged { iterations: u32, samples: Vec<ControlSample> },
}

/// Which piezo actuator a voltage is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actuator {
    /// Stress at 45°: rotation about the QR (S2) axis.
    X1,
    /// Stress at 0°: rotation about the HV (S1) axis.
    X2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorConfig {
    /// Voltage producing a full 2π retardance on X1.
    pub v_2pi_x1: f64,
    /// Voltage producing a full 2π retardance on X2.
    pub v_2pi_x2: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Volts per unit S1 error.
    pub gain_x1: f64,
    /// Volts per unit S2 error.
    pub gain_x2: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        ActuatorConfig {
            v_2pi_x1: 52.2,
            v_2pi_x2: 49.0,
            v_min: 0.0,
            v_max: 150.0,
            // Low gains trade iteration count for stability: larger values
            // overshoot through the thresholds and oscillate, which both
            // lengthens cycles and degrades the S1 held during key exchange.
            gain_x1: 2.0,
            gain_x2: 2.0,
        }
    }
}

impl ActuatorConfig {
    fn v_2pi(&self, which: Actuator) -> f64 {
        match which {
            Actuator::X1 => self.v_2pi_x1,
            Actuator::X2 => self.v_2pi_x2,
        }
    }
}

/// The S1/S2 decision thresholds: T1 near 1 for S1, T2 near 0 for |S2|,
/// and the reversal threshold T3 < T1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl Thresholds {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Self {
        assert!(t1 > t3, "T1 must exceed T3");
        Thresholds { t1, t2, t3 }
    }

    pub fn satisfied(&self, s: &EstimatedSop) -> bool {
        s.s1_hat > self.t1 && s.s2_hat.abs() < self.t2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlPhase {
    Idle,
    AdjustingX2,
    AdjustingX1,
    Converged,
}

/// Persistent controller state. Voltages and the X1 search direction
/// survive across cycles; the X2 slope sign is re-probed each cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub v_x1: f64,
    pub v_x2: f64,
    pub dir_x1: f64,
    pub thresholds: Thresholds,
    pub phase: ControlPhase,
    /// Local sign of dS2/dV(X2), probed once per cycle with a 1 V step.
    sign_x2: Option<f64>,
    last_s1: Option<f64>,
    last_s2: Option<f64>,
}

impl ControllerState {
    pub fn new(thresholds: Thresholds) -> Self {
        ControllerState {
            v_x1: 0.0,
            v_x2: 0.0,
            dir_x1: 1.0,
            thresholds,
            phase: ControlPhase::Idle,
            sign_x2: None,
            last_s1: None,
            last_s2: None,
        }
    }

    /// Combined actuator rotation at the present voltages: X2 first (about
    /// the HV axis), then X1 (about the QR axis).
    pub fn actuator_rotation(&self, cfg: &ActuatorConfig) -> PoincareRotation {
        let rx2 = voltage_to_rotation(self.v_x2, Actuator::X2, cfg);
        let rx1 = voltage_to_rotation(self.v_x1, Actuator::X1, cfg);
        rx2.compose(&rx1)
    }

    fn begin_cycle(&mut self) {
        self.sign_x2 = None;
        self.last_s1 = None;
        self.last_s2 = None;
        self.phase = ControlPhase::AdjustingX2;
    }
}

/// Retardance of one actuator at a given voltage: angle 2π·v/v_2pi about
/// the actuator's eigen-axis.
pub fn voltage_to_rotation(v: f64, which: Actuator, cfg: &ActuatorConfig) -> PoincareRotation {
    let angle = 2.0 * std::f64::consts::PI * v / cfg.v_2pi(which);
    match which {
        Actuator::X1 => PoincareRotation::about(QR_AXIS, angle),
        Actuator::X2 => PoincareRotation::about(HV_AXIS, angle),
    }
}

/// Shifts `v` by whole 2π-voltages until it lies inside the driver range,
/// leaving the applied rotation unchanged modulo 2π.
pub fn wrap_voltage(v: f64, which: Actuator, cfg: &ActuatorConfig) -> Result<f64, ControllerError> {
    let period = cfg.v_2pi(which);
    if cfg.v_max - cfg.v_min < period {
        return Err(ControllerError::Unwrappable(v));
    }
    let mut out = v;
    while out > cfg.v_max {
        out -= period;
    }
    while out < cfg.v_min {
        out += period;
    }
    Ok(out)
}

/// One X2 correction: leaves the voltage alone inside the |S2| < T2
/// deadband, otherwise steps proportionally to the S2 error along the
/// probed slope direction.
pub fn step_x2(
    st: &mut ControllerState,
    s2_hat: f64,
    cfg: &ActuatorConfig,
) -> Result<(), ControllerError> {
    if s2_hat.abs() < st.thresholds.t2 {
        st.last_s2 = Some(s2_hat);
        return Ok(());
    }
    // If a previous step made |S2| clearly worse the probed sign was wrong
    // (or the plant moved); flip before stepping again.
    if let Some(prev) = st.last_s2 {
        if s2_hat.abs() > prev.abs() + 0.02 && prev.abs() >= st.thresholds.t2 {
            st.sign_x2 = Some(-st.sign_x2.unwrap_or(1.0));
        }
    }
    let sign = st.sign_x2.unwrap_or(1.0);
    let dv = cfg.gain_x2 * (0.0 - s2_hat) * sign;
    st.v_x2 = wrap_voltage(st.v_x2 + dv, Actuator::X2, cfg)?;
    st.last_s2 = Some(s2_hat);
    Ok(())
}

/// One X1 correction: satisfied above T1, otherwise a proportional step
/// along the current search direction. A measurement that has fallen
/// below T3 while still dropping reverses the direction first.
pub fn step_x1(
    st: &mut ControllerState,
    s1_hat: f64,
    cfg: &ActuatorConfig,
) -> Result<(), ControllerError> {
    if s1_hat > st.thresholds.t1 {
        st.last_s1 = Some(s1_hat);
        return Ok(());
    }
    if let Some(prev) = st.last_s1 {
        if s1_hat < st.thresholds.t3 && s1_hat < prev {
            st.dir_x1 = -st.dir_x1;
        }
    }
    let dv = st.dir_x1 * cfg.gain_x1 * (1.0 - s1_hat);
    st.v_x1 = wrap_voltage(st.v_x1 + dv, Actuator::X1, cfg)?;
    st.last_s1 = Some(s1_hat);
    Ok(())
}

/// One line of the controller trace, recorded after each sampling window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub v_x1: f64,
    pub v_x2: f64,
    pub s1_hat: f64,
    pub s2_hat: f64,
    pub dir_x1: f64,
}

#[derive(Debug, Clone)]
pub struct CycleReport {
    pub iterations: u32,
    pub samples: Vec<ControlSample>,
}

/// Runs one feedback-control cycle: repeatedly samples the plant (one
/// second per sample, Alice sending the H reference) and alternates X2
/// and X1 corrections, X2 first, until the thresholds S1 > T1 and
/// |S2| < T2 hold on consecutive samples (correction plus verification)
/// or the iteration cap is reached. When only one actuator still needs
/// correction its steps run on every sample instead of every other one.
///
/// The X2 slope sign is unknown at cycle start; the first needed X2
/// correction is replaced by a +1 V probe whose effect on the next X2
/// sample fixes the sign.
pub fn run_feedback_cycle<F>(
    plant: &mut F,
    st: &mut ControllerState,
    cfg: &ActuatorConfig,
    max_iters: u32,
) -> Result<CycleReport, ControllerError>
where
    F: FnMut(&ControllerState) -> EstimatedSop,
{
    st.begin_cycle();
    let mut samples = Vec::new();
    let mut iterations = 0u32;
    let mut x2_turn = true;
    let mut probe_baseline: Option<f64> = None;
    let mut satisfied_streak = 0u32;

    loop {
        let sop = plant(st);
        iterations += 1;
        samples.push(ControlSample {
            v_x1: st.v_x1,
            v_x2: st.v_x2,
            s1_hat: sop.s1_hat,
            s2_hat: sop.s2_hat,
            dir_x1: st.dir_x1,
        });

        let x2_needed = sop.s2_hat.abs() >= st.thresholds.t2;
        let x1_needed = sop.s1_hat <= st.thresholds.t1;

        if !x2_needed && !x1_needed {
            satisfied_streak += 1;
            if satisfied_streak >= 2 {
                st.phase = ControlPhase::Converged;
                debug_assert!(st.thresholds.satisfied(&sop));
                return Ok(CycleReport { iterations, samples });
            }
        } else {
            satisfied_streak = 0;
        }
        if iterations >= max_iters {
            st.phase = ControlPhase::Idle;
            return Err(ControllerError::NotConverged { iterations, samples });
        }

        let act_x2 = x2_needed && (x2_turn || !x1_needed);
        if act_x2 {
            st.phase = ControlPhase::AdjustingX2;
            if let Some(base) = probe_baseline.take() {
                // dS2/dV from the 1 V probe; an unresolvable probe
                // (|ΔS2| lost in noise) falls back to +1 and the
                // worse-after-step check in step_x2 corrects it.
                let delta = sop.s2_hat - base;
                st.sign_x2 = Some(if delta.abs() > 1e-6 { delta.signum() } else { 1.0 });
                step_x2(st, sop.s2_hat, cfg)?;
            } else if st.sign_x2.is_none() {
                probe_baseline = Some(sop.s2_hat);
                st.v_x2 = wrap_voltage(st.v_x2 + 1.0, Actuator::X2, cfg)?;
            } else {
                step_x2(st, sop.s2_hat, cfg)?;
            }
        } else if x1_needed {
            st.phase = ControlPhase::AdjustingX1;
            step_x1(st, sop.s1_hat, cfg)?;
        }
        x2_turn = !x2_turn;
    }
}
