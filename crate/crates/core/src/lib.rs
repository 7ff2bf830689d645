//! Learning-to-rank building blocks for hotel-search style data.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches
//! the filesystem, parses text files or talks to a terminal lives in the
//! companion `ltrkit` crate; this one holds the data model, the feature
//! transforms, the ranking models and the ensemble combiners.
//!
//! A typical flow:
//!
//! 1. build or generate a [`schema::Dataset`],
//! 2. split it with [`schema::split_validation`],
//! 3. fit a [`features::Pipeline`] on the training part and apply it,
//! 4. fit a [`model::ModelConfig`] on the resulting matrix,
//! 5. score held-out rows and [`metrics::evaluate`] them at NDCG@38,
//! 6. optionally combine several score lists with [`ensemble`].
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod ensemble;
pub mod error;
pub mod features;
pub mod fm;
pub mod linear;
pub mod math;
pub mod metrics;
pub mod model;
pub mod schema;
pub mod tree;

pub use error::{Error, Result};
