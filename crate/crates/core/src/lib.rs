//! Threshold-free binarization of anomaly score maps.
//!
//! A score map is turned into a binary segmentation mask by
//!
//! 1. building sub- and superlevel cubical filtrations over a threshold schedule,
//! 2. computing H0/H1 persistence diagrams and truncating them per threshold,
//! 3. chaining diagrams across thresholds and across filtrations with entropic
//!    optimal transport, scoring each feature by its strongest stable match,
//! 4. backprojecting the top-ranked features into a pseudo-label mask, and
//! 5. adapting a small per-pixel head on those pseudo-labels before the final
//!    decision rule.
//!
//! [`pipeline::segment_grid`] runs the whole chain for one sample.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chaining;
pub mod cli;
pub mod error;
pub mod filtration;
pub mod grid_io;
pub mod metrics;
pub mod persistence;
pub mod pipeline;
pub mod rng;
pub mod transport;
pub mod ttt;

pub use error::{Error, Result};
pub use filtration::{FiltrationTag, ThresholdSchedule};
pub use grid_io::{BinaryMask, ScoreGrid};
pub use persistence::{PersistenceDiagram, PersistencePoint};
