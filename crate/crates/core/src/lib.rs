//! Template inference and data extraction for documents generated from a
//! fixed template (forms, reports, invoices).
//!
//! The pipeline: predict which phrases are template fields, label rows as
//! key/value/key-value/metadata, infer a template tree from the labels, and
//! use the template to pull structured records out of every document.

pub mod cli;
pub mod error;
pub mod extract;
pub mod fields;
pub mod harness;
pub mod labeling;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod solver;
pub mod template;

pub use error::{Error, Result};
