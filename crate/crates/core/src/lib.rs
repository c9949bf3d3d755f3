//! Simulation of regime-switching diffusions with state-dependent,
//! possibly infinite switching rates.

// `!(x > 0.0)` guards are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod builtin;
pub mod certify;
pub mod error;
pub mod hybrid;
pub mod integrate;
pub mod jumps;
pub mod model;
pub mod probe;
pub mod rng;

/// Library version, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{Result, SimError};
pub use integrate::{integrate_segment, BrownianGrid, SegmentPath};
pub use jumps::{sample_stream, JumpEvent, JumpStream};
pub use model::{gamma_row, mark_jump, truncate_coefficients, ConstantRates, GammaRow, RateMatrix, RegimeModel, Segment};
pub use rng::{Purpose, StreamKey};
pub use hybrid::{
    auto_truncation, simulate, simulate_ladder, simulate_path, simulate_truncated, simulate_with_truncated_coefficients, HybridPath,
    LevelExit, PathSample, PathStatus, SimConfig, Switch, Truncation,
};
pub use certify::{
    check_condition_exp, check_condition_poly, check_local_bounded_beta_sum, gronwall_bound_poly, CertGrid, CertReport, ExponentialCert,
    PolynomialCert, PowerLawQ,
};
pub use probe::{ctmc_oracle, estimate_moment, estimate_tau_tail, feller_probe, Estimate, ProbeReport};
