//! Spatio-temporal analytics for geotagged message streams: corpus
//! preparation, locality measures (focus, entropy, spread), event timelines,
//! LDA topics and follow-graph propagation.

pub mod cli;
pub mod corpus;
pub mod geodesy;
pub mod metrics;
pub mod propagation;
pub mod synth;
pub mod temporal;
pub mod topics;
