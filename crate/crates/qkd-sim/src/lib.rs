//! Simulator for a polarization-encoded one-way fiber QKD link with
//! active single-photon SOP stabilization: Poincaré-sphere math, a
//! drifting birefringent channel, photon-counting detection, the
//! two-actuator threshold feedback controller, BB84 sessions with QBER
//! accounting, and a framed classical channel so Alice and Bob can run as
//! separate processes.

pub mod channel;
pub mod config;
pub mod controller;
pub mod detection;
pub mod output;
pub mod protocol;
pub mod session;
pub mod stokes;
pub mod transport;
