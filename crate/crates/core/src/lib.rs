//! Perioperative risk modeling: preprocess perioperative tabular and
//! intraoperative time-series data, train paired preoperative-only and
//! preoperative+intraoperative random-forest models per complication plus a
//! stacked mortality model, and compare them with AUROC, AUPRC, Youden
//! operating points, bootstrap CIs, Wilcoxon tests, and net reclassification
//! improvement.

pub mod cohort;
pub mod error;
pub mod eval;
pub mod forest;
pub mod pipeline;
pub mod transform;
pub mod rng;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
