//! Image-to-habitat causal pipeline.
//!
//! The stages mirror the command-line subcommands: a species is identified
//! ([`recognition`]), its occurrences are pulled from GBIF ([`occurrence`]),
//! pseudo-absences are drawn around them ([`sampling`]), each point receives
//! the nineteen WorldClim bioclimatic values ([`climate`]), a DAG is learned
//! over those variables ([`discovery`]), backdoor-adjusted effects on presence
//! are estimated ([`inference`]) and finally rendered as text ([`explain`]).
//! [`pipeline`] chains the stages and [`synth`] provides ground-truth
//! benchmarks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod climate;
pub mod discovery;
pub mod explain;
pub mod http;
pub mod inference;
pub mod occurrence;
pub mod pipeline;
pub mod recognition;
pub mod sampling;
pub mod synth;

/// Number of WorldClim bioclimatic variables.
pub const N_BIO: usize = 19;

/// Column names `BIO1` .. `BIO19` in canonical order.
pub fn bio_names() -> Vec<String> {
    (1..=N_BIO).map(|i| format!("BIO{i}")).collect()
}
