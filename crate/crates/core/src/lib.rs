//! Distributed H-infinity control of vehicle platoons over weighted directed graphs.
//!
//! The pipeline: describe the communication topology ([`topology`]), build the
//! coupling matrix and check its eigenstructure, assemble the closed-loop platoon
//! dynamics ([`plant`]), bound and compute worst-case disturbance amplification
//! ([`analysis`]), synthesize feedback gains from a small LMI ([`synthesis`]),
//! simulate the loop under disturbance profiles ([`simulate`]), and replay recorded
//! leader trajectories after smoothing ([`ingest`]).

pub mod analysis;
pub mod ingest;
pub mod plant;
pub mod simulate;
pub mod synthesis;
pub mod topology;
