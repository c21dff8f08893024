//! Antibody–antigen residue graphs and bipartite link prediction.
//!
//! The crate turns antibody–antigen complex structures into a pair of residue
//! graphs (antibody CDR residues and antigen surface residues), trains a
//! two-branch graph convolutional link predictor on them, aggregates edge
//! probabilities into epitope calls and evaluates/splits datasets.
//!
//! Pipeline, module by module:
//!
//! - [`structure`]: PDB parsing, complex extraction and validation.
//! - [`geometry`]: contact maps and Shrake–Rupley solvent accessibility.
//! - [`alignment`]: global alignment and SEQRES/ATMSEQ position maps.
//! - [`graph`]: CDR masks, graph-pair assembly and JSON serialization.
//! - [`encoding`]: one-hot, BLOSUM62 and external (EMB1) node features.
//! - [`tensor`] and [`model`]: reverse-mode autodiff and the link predictor.
//! - [`training`]: Adam, the fit loop and random hyperparameter search.
//! - [`evaluation`]: MCC, precision, recall, F1 and AUC-ROC reports.
//! - [`split`]: clustering, deduplication, epitope groups and dataset splits.
//! - [`cli`]: the `epigraph` command-line front end.

pub mod alignment;
pub mod cli;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod graph;
pub mod model;
pub mod split;
pub mod structure;
pub mod tensor;
pub mod toy;
pub mod training;

pub use error::{Error, Result};
