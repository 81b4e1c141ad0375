//! Detection of influential points in feature rankings.
//!
//! The pipeline ranks features by a two-sample t-test, re-ranks them once
//! per deleted case, fits an exponentially decaying rank weight to the
//! observed rank changes, and scores each case by its total weighted rank
//! change.

pub mod baselines;
pub mod influence;
pub mod ingest;
pub mod ranker;
pub mod weights;
pub mod synthetic;
pub mod pipeline;
pub mod plot;
pub mod report;
