//! Answer-centric refinement of hard negatives in retrieval training data.
//!
//! Each negative is reduced to the answer snippet it contains (if any), all
//! snippets are ranked listwise against the positive's snippet, and negatives
//! ranked above that anchor are promoted or filtered. See [`pipeline`] for the
//! end-to-end entry points.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod review;
pub mod rules;
pub mod stage1;
pub mod stage2;
