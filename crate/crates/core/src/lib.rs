//! Cost-aware routing of software-engineering tasks to model capability tiers.
//!
//! Every task is assigned to the cheapest of three tiers (light, standard,
//! heavy) using pre-computed per-file code-health signals. The crate also
//! carries the evaluation harness used to decide whether that routing pays
//! off: the expected-cost model with heavy-tier fallback, oracle and baseline
//! policies, rank-based effect sizes and the pilot go/no-go gates.
//!
//! Module map:
//!
//! - [`codehealth`]: sub-factor extraction and the 1-10 composite score.
//! - [`featurestore`]: incremental, content-hash keyed feature table.
//! - [`router`]: heuristic, classifier, oracle and baseline policies.
//! - [`costmodel`]: expected cost, savings, cost gate, Monte Carlo simulation.
//! - [`outcomes`]: majority-vote verdicts, corpus ingestion, synthetic corpora.
//! - [`stats`]: probability of superiority, Brunner-Munzel, MCC, matching, Shapley.
//! - [`evaluation`]: policy comparison, pilot gates, composite vs sub-factor study.

pub mod codehealth;
pub mod config;
pub mod costmodel;
pub mod error;
pub mod evaluation;
pub mod featurestore;
pub mod io;
pub mod outcomes;
pub mod rng;
pub mod router;
pub mod stats;

pub use error::{Error, Result};

/// Version tag written into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
