//! Camera-based on-orbit inspection: relative dynamics, feature visibility, a switched
//! distance observer, a daisy-chained goal estimator, a barrier-robustified LQR controller
//! and a k-means goal planner, orchestrated by a deterministic closed-loop simulator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod error;
pub mod frames;
pub mod observer;
pub mod output;
pub mod planner;
pub mod plot;
pub mod scene;
pub mod scheduler;
pub mod sim;

pub use error::{Error, Result};
