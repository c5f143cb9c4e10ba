//! BB84 encoding, decoding and sifting.
//!
//! Alice draws a uniform basis (HV or QR) and bit per pulse; Bob decodes
//! from the detector bank's click pattern. Sifting keeps pairs with
//! matching bases and unambiguous (single-click) detections; the QBER is
//! the mismatched-bit fraction of the kept pairs.

use rand::Rng;
use thiserror::Error;

use crate::detection::PulseOutcome;
use crate::stokes::StokesVector;

#[derive(Debug, Error)]
pub enum ProtocolError {
    /// No pairs survived sifting; the interval's QBER is undefined.
    #[error("sifting kept no pairs")]
    EmptySift,
}

/// Measurement/encoding basis on the Poincaré equator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Horizontal/vertical (S1 axis).
    Hv,
    /// +45°/−45°, written Q/R here (S2 axis).
    Qr,
}

/// One pulse as prepared by Alice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitRecord {
    pub pulse_index: u64,
    pub basis: Basis,
    /// H and Q encode 0; V and R encode 1.
    pub bit: u8,
}

impl QubitRecord {
    /// The SOP this record puts on the fiber.
    pub fn sop(&self) -> StokesVector {
        match (self.basis, self.bit) {
            (Basis::Hv, 0) => StokesVector::H,
            (Basis::Hv, _) => StokesVector::V,
            (Basis::Qr, 0) => StokesVector::Q,
            (Basis::Qr, _) => StokesVector::R,
        }
    }
}

/// One pulse as decoded by Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionRecord {
    pub pulse_index: u64,
    pub decoded_basis: Basis,
    pub bit: u8,
    /// More than one detector fired; the sifter discards these.
    pub double_click: bool,
}

/// Draws a uniform basis and bit; returns the record plus the sent SOP.
pub fn alice_encode<R: Rng + ?Sized>(pulse_index: u64, rng: &mut R) -> (QubitRecord, StokesVector) {
    let basis = if rng.random::<bool>() { Basis::Hv } else { Basis::Qr };
    let bit = u8::from(rng.random::<bool>());
    let rec = QubitRecord { pulse_index, basis, bit };
    let sop = rec.sop();
    (rec, sop)
}

/// Maps a click pattern to a detection record. Detector order follows
/// [`PulseOutcome`]: H, V, Q, R. No clicks yields `None`; multiple clicks
/// yield a record flagged `double_click` (basis/bit from the first
/// firing detector, never used downstream).
pub fn bob_decode(pulse_index: u64, outcome: &PulseOutcome) -> Option<DetectionRecord> {
    let first = outcome.clicked.iter().position(|&c| c)?;
    let (decoded_basis, bit) = match first {
        0 => (Basis::Hv, 0),
        1 => (Basis::Hv, 1),
        2 => (Basis::Qr, 0),
        _ => (Basis::Qr, 1),
    };
    Some(DetectionRecord {
        pulse_index,
        decoded_basis,
        bit,
        double_click: outcome.click_count() > 1,
    })
}

/// Result of sifting one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiftOutcome {
    pub kept: u64,
    pub errors: u64,
    pub qber: f64,
}

/// Sifts aligned records: keeps single-click detections whose decoded
/// basis matches Alice's, and counts bit mismatches. Both inputs must be
/// sorted by pulse index (they are produced that way).
pub fn sift(alice: &[QubitRecord], bob: &[DetectionRecord]) -> Result<SiftOutcome, ProtocolError> {
    let mut kept = 0u64;
    let mut errors = 0u64;
    let mut ai = alice.iter().peekable();
    for d in bob {
        while ai.peek().is_some_and(|q| q.pulse_index < d.pulse_index) {
            ai.next();
        }
        let Some(q) = ai.peek() else { break };
        if q.pulse_index != d.pulse_index || d.double_click || q.basis != d.decoded_basis {
            continue;
        }
        kept += 1;
        if q.bit != d.bit {
            errors += 1;
        }
    }
    if kept == 0 {
        return Err(ProtocolError::EmptySift);
    }
    Ok(SiftOutcome { kept, errors, qber: errors as f64 / kept as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn encoding_table() {
        assert_eq!(QubitRecord { pulse_index: 0, basis: Basis::Hv, bit: 0 }.sop(), StokesVector::H);
        assert_eq!(QubitRecord { pulse_index: 0, basis: Basis::Hv, bit: 1 }.sop(), StokesVector::V);
        assert_eq!(QubitRecord { pulse_index: 0, basis: Basis::Qr, bit: 0 }.sop(), StokesVector::Q);
        assert_eq!(QubitRecord { pulse_index: 0, basis: Basis::Qr, bit: 1 }.sop(), StokesVector::R);
    }

    #[test]
    fn alice_draws_are_uniform() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 100_000u64;
        let mut counts = [0u64; 4];
        for i in 0..n {
            let (q, _) = alice_encode(i, &mut rng);
            let idx = match (q.basis, q.bit) {
                (Basis::Hv, 0) => 0,
                (Basis::Hv, _) => 1,
                (Basis::Qr, 0) => 2,
                (Basis::Qr, _) => 3,
            };
            counts[idx] += 1;
        }
        // Binomial(1e5, 1/4): mean 25000, std ≈ 137; allow 3σ.
        for c in counts {
            assert!((c as f64 - 25_000.0).abs() < 3.0 * 137.0, "counts {counts:?}");
        }
    }

    #[test]
    fn decode_click_patterns() {
        let one = |i: usize| {
            let mut clicked = [false; 4];
            clicked[i] = true;
            PulseOutcome { clicked }
        };
        assert_eq!(bob_decode(0, &PulseOutcome { clicked: [false; 4] }), None);
        let r = bob_decode(7, &one(0)).unwrap();
        assert_eq!((r.decoded_basis, r.bit, r.double_click), (Basis::Hv, 0, false));
        let r = bob_decode(7, &one(1)).unwrap();
        assert_eq!((r.decoded_basis, r.bit), (Basis::Hv, 1));
        let r = bob_decode(7, &one(2)).unwrap();
        assert_eq!((r.decoded_basis, r.bit), (Basis::Qr, 0));
        let r = bob_decode(7, &one(3)).unwrap();
        assert_eq!((r.decoded_basis, r.bit), (Basis::Qr, 1));
        let r = bob_decode(7, &PulseOutcome { clicked: [true, true, false, false] }).unwrap();
        assert!(r.double_click);
        let r = bob_decode(7, &PulseOutcome { clicked: [true, false, false, true] }).unwrap();
        assert!(r.double_click);
    }

    #[test]
    fn sift_perfect_agreement() {
        let alice: Vec<_> = (0..100)
            .map(|i| QubitRecord {
                pulse_index: i,
                basis: if i % 2 == 0 { Basis::Hv } else { Basis::Qr },
                bit: (i % 3 == 0) as u8,
            })
            .collect();
        let bob: Vec<_> = alice
            .iter()
            .map(|q| DetectionRecord {
                pulse_index: q.pulse_index,
                decoded_basis: q.basis,
                bit: q.bit,
                double_click: false,
            })
            .collect();
        let out = sift(&alice, &bob).unwrap();
        assert_eq!((out.kept, out.errors), (100, 0));
        assert_eq!(out.qber, 0.0);
    }

    #[test]
    fn sift_discards_double_clicks_and_basis_mismatch() {
        let alice = vec![
            QubitRecord { pulse_index: 0, basis: Basis::Hv, bit: 0 },
            QubitRecord { pulse_index: 1, basis: Basis::Hv, bit: 1 },
            QubitRecord { pulse_index: 2, basis: Basis::Qr, bit: 0 },
        ];
        let bob = vec![
            DetectionRecord { pulse_index: 0, decoded_basis: Basis::Hv, bit: 0, double_click: true },
            DetectionRecord { pulse_index: 1, decoded_basis: Basis::Qr, bit: 1, double_click: false },
            DetectionRecord { pulse_index: 2, decoded_basis: Basis::Qr, bit: 1, double_click: false },
        ];
        let out = sift(&alice, &bob).unwrap();
        assert_eq!((out.kept, out.errors), (1, 1));
        assert_eq!(out.qber, 1.0);
    }

    #[test]
    fn sift_empty_is_an_error() {
        let alice = vec![QubitRecord { pulse_index: 0, basis: Basis::Hv, bit: 0 }];
        let bob = vec![];
        assert!(matches!(sift(&alice, &bob), Err(ProtocolError::EmptySift)));
    }

    #[test]
    fn dark_counts_only_give_half_qber() {
        // With μ=0, Bob's clicks are dark counts uncorrelated with Alice's
        // bits, so matched-basis pairs agree half the time.
        use crate::detection::{click_probabilities, sample_pulse, DetectorConfig, SourceConfig};
        let src = SourceConfig::new(0.0);
        // Inflate darks so the test gathers statistics quickly.
        let det = DetectorConfig { dark_prob_per_gate: [2e-3; 4], ..DetectorConfig::default() };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut alice = Vec::new();
        let mut bob = Vec::new();
        for i in 0..2_000_000u64 {
            let (q, sop) = alice_encode(i, &mut rng);
            alice.push(q);
            let probs = click_probabilities(&sop, &src, 1.0, &det);
            let out = sample_pulse(&probs, &mut rng);
            if let Some(d) = bob_decode(i, &out) {
                bob.push(d);
            }
        }
        let out = sift(&alice, &bob).unwrap();
        assert!(out.kept > 1500, "kept {}", out.kept);
        // Binomial(kept, 1/2): 4σ band.
        let sigma = 0.5 / (out.kept as f64).sqrt();
        assert!((out.qber - 0.5).abs() < 4.0 * sigma, "qber {}", out.qber);
    }
}
