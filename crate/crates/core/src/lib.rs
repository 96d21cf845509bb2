//! Privacy-preserving feature valuation for vertical federated learning.
//!
//! Parties pseudonymize their sample IDs with a double keyed hash, discretize
//! each feature into bins of encrypted IDs, and submit only those groups to a
//! PSI coordinator. The coordinator walks seeded feature permutations and
//! returns per-combination intersection cardinalities, from which each party
//! reconstructs conditional-mutual-information terms and averages them into
//! per-feature Shapley values — without any raw data or model leaving a party.
//!
//! The [`oracle`] module computes the same quantities directly from the
//! discretized table; the two paths agree to floating-point noise, which the
//! acceptance suite asserts end to end.

pub mod binning;
pub mod client;
pub mod cmi;
pub mod coordinator;
pub mod error;
pub mod ident;
pub mod oracle;
pub mod orchestrator;
pub mod server;
pub mod wire;

pub use error::{Error, ErrorCode, Result};
