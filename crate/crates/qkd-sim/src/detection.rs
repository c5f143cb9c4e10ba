//! Weak-coherent source, splitter tree, polarizing beam splitters with
//! finite extinction, and gated detectors with efficiency and dark counts.
//!
//! Detectors are indexed in role order H, V, Q, R throughout (physically
//! D1, D0, D2, D3). Each pulse reaches a given detector's arm with
//! probability 1/2 (the 50/50 basis/monitor splitter tree), projects onto
//! the detector's polarization, and clicks with
//! `1 − (1−dark)·exp(−μ·t·η·arm·p_pol)`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::stokes::{ClickCounts, StokesVector};

/// Pulsed weak-coherent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Mean photons per pulse (μ).
    pub mean_photons_per_pulse: f64,
    pub rep_rate_hz: f64,
}

impl SourceConfig {
    pub fn new(mean_photons_per_pulse: f64) -> Self {
        SourceConfig { mean_photons_per_pulse, rep_rate_hz: 1e6 }
    }
}

/// Detector bank parameters, role order H, V, Q, R.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Quantum efficiency, identical across the bank.
    pub efficiency: f64,
    /// Dark click probability per gate: H (D1), V (D0), Q (D2), R (D3).
    pub dark_prob_per_gate: [f64; 4],
    /// Probability of a photon leaking to the wrong PBS port.
    pub pbs_extinction: f64,
    /// Fraction of photons lost to the monitoring arm of each basis.
    pub monitor_split: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 0.20,
            dark_prob_per_gate: [8e-7, 4e-7, 4e-7, 8e-7],
            pbs_extinction: 0.005,
            monitor_split: 0.5,
        }
    }
}

/// Which detectors fired within one gate. Multiple detectors may click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PulseOutcome {
    /// Role order H, V, Q, R.
    pub clicked: [bool; 4],
}

impl PulseOutcome {
    pub fn any(&self) -> bool {
        self.clicked.iter().any(|&c| c)
    }

    pub fn click_count(&self) -> usize {
        self.clicked.iter().filter(|&&c| c).count()
    }
}

/// PBS projection probabilities for each detector given an arriving SOP,
/// including extinction leakage. Role order H, V, Q, R.
fn projection_probs(s: &StokesVector, pbs_extinction: f64) -> [f64; 4] {
    let x = pbs_extinction;
    let p = |aligned: f64| (1.0 - x) * (1.0 + aligned) / 2.0 + x * (1.0 - aligned) / 2.0;
    [p(s.s1), p(-s.s1), p(s.s2), p(-s.s2)]
}

/// Per-gate click probability of each detector for pulses of SOP `s`.
pub fn click_probabilities(
    s: &StokesVector,
    src: &SourceConfig,
    transmittance: f64,
    det: &DetectorConfig,
) -> [f64; 4] {
    let proj = projection_probs(s, det.pbs_extinction);
    let arm = det.monitor_split;
    let mut out = [0.0; 4];
    for d in 0..4 {
        let lambda = src.mean_photons_per_pulse * transmittance * det.efficiency * arm * proj[d];
        out[d] = 1.0 - (1.0 - det.dark_prob_per_gate[d]) * (-lambda).exp();
    }
    out
}

/// One independent Bernoulli draw per detector.
pub fn sample_pulse(probabilities: &[f64; 4], rng: &mut impl Rng) -> PulseOutcome {
    let mut clicked = [false; 4];
    for d in 0..4 {
        clicked[d] = rng.random::<f64>() < probabilities[d];
    }
    PulseOutcome { clicked }
}

/// Accumulates clicks over a sampling window with one binomial draw per
/// detector. Statistically identical to summing per-pulse outcomes and
/// fast enough for multi-hour sessions.
pub fn accumulate_window(
    s: &StokesVector,
    n_pulses: u64,
    src: &SourceConfig,
    transmittance: f64,
    det: &DetectorConfig,
    rng: &mut impl Rng,
) -> ClickCounts {
    assert!(n_pulses > 0);
    let p = click_probabilities(s, src, transmittance, det);
    let draw = |p: f64, rng: &mut dyn rand::RngCore| {
        Binomial::new(n_pulses, p).expect("probability in [0,1]").sample(rng)
    };
    ClickCounts {
        i_h: draw(p[0], rng),
        i_v: draw(p[1], rng),
        i_q: draw(p[2], rng),
        i_r: draw(p[3], rng),
    }
}

/// Reference path: sums independent per-pulse outcomes. Kept as the slow
/// oracle the binomial path is validated against.
pub fn accumulate_window_per_pulse(
    s: &StokesVector,
    n_pulses: u64,
    src: &SourceConfig,
    transmittance: f64,
    det: &DetectorConfig,
    rng: &mut impl Rng,
) -> ClickCounts {
    assert!(n_pulses > 0);
    let p = click_probabilities(s, src, transmittance, det);
    let mut c = ClickCounts::default();
    for _ in 0..n_pulses {
        let o = sample_pulse(&p, rng);
        c.i_h += o.clicked[0] as u64;
        c.i_v += o.clicked[1] as u64;
        c.i_q += o.clicked[2] as u64;
        c.i_r += o.clicked[3] as u64;
    }
    c
}
