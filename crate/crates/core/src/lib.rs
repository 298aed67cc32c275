// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod bayes;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod harness;
pub mod hdp;
pub mod lda;
pub mod online_em;
pub mod rng;
pub mod special;
pub mod stirling;
pub mod variational;

pub use error::{Error, Result};
