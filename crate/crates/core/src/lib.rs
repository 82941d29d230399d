//! Behavioral, variation-aware simulator for 1FeFET-1C charge-domain
//! compute-in-memory arrays.
//!
//! The crate is organized bottom-up:
//!
//! - [`device`]: stochastic FeFET threshold and cell-capacitor models.
//! - [`array`]: the N×M cell grid and its CAM-search, MAC and
//!   current-domain operation schedules.
//! - [`sensing`]: column ADC quantization and sense-margin accounting.
//! - [`variation`]: Monte-Carlo experiments (transfer curves, worst-case
//!   activation, quality-loss studies).
//! - [`hdc`]: binary hypervector algebra and associative memory backed
//!   either by exact Hamming search or by simulated CAM tiles.
//! - [`cost`]: analytical energy / latency / EDP model.
//! - [`mapper`]: greedy allocation of neuro-symbolic workloads onto
//!   dual-mode arrays.
//! - [`experiment`]: reproducible experiment configs and CSV/JSON output.

pub mod array;
pub mod cost;
pub mod device;
pub mod error;
pub mod experiment;
pub mod hdc;
pub mod mapper;
pub mod rng;
pub mod sensing;
pub mod stats;
pub mod variation;

pub use error::{Error, Result};
