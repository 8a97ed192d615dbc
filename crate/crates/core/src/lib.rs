//! Randomized trace estimation for static matrices and for slowly drifting
//! matrix streams, with an experiment harness.
//!
//! Matrices are only ever touched through matrix-vector products
//! ([`oracle::LinearOperator`]), and every product is counted in a
//! [`oracle::QueryLedger`].

pub mod error;
pub mod linalg;
pub mod oracle;
pub mod seed;
pub mod static_estimators;
pub mod stream;
pub mod dynamic_tree;
pub mod baselines;
pub mod bench;

pub use error::{Result, TraceError};
