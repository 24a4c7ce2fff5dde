//! Command-line harness around `cefpn-core`: builds a neck from a
//! [`RunConfig`], feeds it a [`SyntheticBackbone`] and emits forward,
//! gradient-check and cost reports as JSON documents and text tables.

pub mod backbone;
pub mod config;
pub mod report;
pub mod run;

pub use backbone::SyntheticBackbone;
pub use config::{BackboneKind, Precision, RunConfig, Suite};
pub use report::{CostSuiteReport, CostVariant, ForwardReport, GradcheckSuiteReport, LevelStats};
pub use run::{cost_variants, run, run_cost, run_forward, run_gradcheck, write_documents, Document};
