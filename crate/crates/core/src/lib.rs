//! Local distinguishability of orthogonal bipartite pure states.
//!
//! The crate decides, certifies or refutes whether a finite set of orthogonal
//! pure states shared by two parties can be told apart with certainty using
//! only local measurements and classical communication (LOCC):
//!
//! - [`states`]: amplitude-matrix representation and Schmidt decomposition.
//! - [`ensemble`]: validated orthogonal ensembles, built-in examples, generators.
//! - [`protocol`]: trees of local projective measurements and their exact verifier.
//! - [`criteria`]: the Schmidt-number-sum necessary condition, product-vector
//!   certificates, and the complete 2⊗2 classification.
//! - [`search`]: bounded depth-first synthesis of measurement protocols.
//! - [`cli`]: file formats, reports and the `locc` command line.

pub mod cli;
pub mod criteria;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod protocol;
pub mod search;
pub mod states;

pub use ensemble::{canned_example, random_ensemble, Ensemble, RandomKind};
pub use error::{Error, Result};
pub use states::{BipartiteState, SchmidtDecomposition};
