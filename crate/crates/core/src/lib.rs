//! Black-box auditing of LLM endpoints through stable numerical recall.
//!
//! A reference endpoint is fingerprinted by enrolling numerical recall probes
//! that it answers consistently, then calibrated against itself. Suspect
//! endpoints are audited with exact binomial tests against that calibration,
//! optionally with a two-round design that detects and sizes partial
//! (mixed-routing) substitution.

pub mod audit;
pub mod batch;
pub mod clock;
pub mod domains;
pub mod enroll;
pub mod oracle;
pub mod parse;
pub mod power;
pub mod stats;
