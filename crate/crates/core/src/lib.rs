//! Inconsistency analysis for browser fingerprint logs.
//!
//! Evasive bots rewrite individual fingerprint attributes (user agent, screen
//! resolution, hardware concurrency, ...) independently of one another, which
//! leaves two kinds of tell-tale contradictions that genuine browsers never
//! produce:
//!
//! - **Spatial** — attributes inside a single request contradict each other
//!   (an iPhone claiming a 1920x1080 screen, Safari on Linux, an IP located
//!   in France with a Los Angeles timezone).
//! - **Temporal** — attributes that cannot change for a real device mutate
//!   between requests that share a cookie or an IP address.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`model`] — attribute values, fingerprint records, category sets.
//! 2. [`normalize`] — JSONL ingestion, user-agent parsing, IP geolocation,
//!    timezone offset resolution, blocklist annotation.
//! 3. [`spatial`] — pairwise distinct-value counting that surfaces candidate
//!    contradictions for review.
//! 4. [`rules`] — a small filter-rule language plus the knowledge base that
//!    adjudicates candidates and compiles them into executable rules.
//! 5. [`temporal`] — per-cookie / per-IP history tracking that flags mutation
//!    of immutable attributes.
//! 6. [`synth`] — deterministic synthetic corpus generation for benchmarks.
//! 7. [`eval`] — detection-rate / TNR reporting and train-test splits.

#![deny(unsafe_code)]

pub mod eval;
pub mod model;
pub mod normalize;
pub mod rules;
pub mod spatial;
pub mod synth;
pub mod temporal;
