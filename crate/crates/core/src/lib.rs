//! Copy-aware automatic post-editing.
//!
//! The crate covers the whole pipeline at desk scale: a small reverse-mode
//! autodiff engine ([`tensor`]), transformer blocks with copy-score scaling
//! ([`nn`]), the post-editing network with its copy predictor and copy head
//! ([`model`]), copy-label generation ([`labeling`]), training ([`train`]),
//! beam decoding ([`decode`]), metrics ([`eval`]) and corpus handling
//! ([`data`]).

pub mod ablation;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod files;
pub mod heatmap;
pub mod labeling;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
