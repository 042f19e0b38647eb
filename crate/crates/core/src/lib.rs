//! Multi-cancer gene-expression analysis.
//!
//! The crate covers the full analysis path for an RNA-Seq expression panel
//! (samples × genes, five tumour classes):
//!
//! * [`exprmatrix`] loads the two-file CSV distribution, subsets by class and
//!   normalizes columns.
//! * [`dimred`] projects samples with PCA or exact t-SNE and builds
//!   agglomerative dendrograms.
//! * [`mixture`] fits diagonal-covariance Gaussian mixtures by EM.
//! * [`netbuild`] computes blocked Pearson correlations and thresholds them
//!   into sparse patient or gene networks.
//! * [`centrality`] ranks nodes by degree, eigenvector, PageRank and
//!   betweenness.
//! * [`genesel`] screens every gene with a one-predictor multinomial logit.
//! * [`exprgroup`] bins normalized expression into groups and compares the
//!   groupings of two classes.
//!
//! Heavy inner loops run through [`exec::Exec`], which dispatches to rayon
//! when the `parallel` feature is enabled and falls back to plain iteration
//! otherwise. Both paths produce bit-identical results.

pub mod centrality;
pub mod dimred;
pub mod error;
pub mod exec;
pub mod exprgroup;
pub mod exprmatrix;
pub mod genesel;
pub mod mixture;
pub mod netbuild;
pub mod stats;

pub use error::{Error, Result};
pub use exec::Exec;
pub use exprmatrix::{CancerType, ExpressionMatrix};
