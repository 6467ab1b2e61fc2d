//! Data-driven reduced-order models for waveform inversion.

pub mod assess;
pub mod block;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod grid;
pub mod internal;
pub mod inversion;
pub mod io;
pub mod models;
pub mod objective;
pub mod passive;
pub mod oracle;
pub mod rom;
pub mod signal;
pub mod wave;

pub use error::{Error, Result};
