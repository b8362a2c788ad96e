//! Event-camera activity recognition with calibrated uncertainty.
pub mod bayes;
pub mod blob;
pub mod calibration;
pub mod classifier;
pub mod event;
pub mod features;
pub mod fsutil;
pub mod pipeline;
pub mod repr;
pub mod synth;
