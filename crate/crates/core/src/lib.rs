//! Multi-class, multi-modal trajectory forecasting at desk scale:
//! agent-centric scenario features, vectorized lane-map context, a
//! from-scratch transformer forecaster with anchor and prediction
//! decoders, training, K-means endpoint ensembling, and the standard
//! displacement metrics.

pub mod checkpoint;
pub mod config;
pub mod dataio;
pub mod ensemble;
pub mod features;
pub mod geom;
pub mod kmeans;
pub mod map;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod synth;
pub mod train;
