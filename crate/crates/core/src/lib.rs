//! Defacing/refacing risk audit for head MRI.
//!
//! The crate covers NIfTI I/O and resampling ([`volume`]), head masks and
//! face cropping ([`mask`]), defacing surrogates ([`deface`]), marching
//! cubes + KD-tree surface distances ([`surface`]), masked PSNR/SSIM
//! ([`quality`]), the evaluation statistics ([`stats`]), the cascaded
//! x0-prediction DDIM sampler ([`ddim`]) and synthetic phantoms
//! ([`phantom`]). [`cli`] wires them into batch commands.

// NaN-rejecting `!(a < b)` guards and small fixed-size index loops are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod ddim;
pub mod deface;
pub mod error;
pub mod json_float;
pub mod mask;
pub mod parallel;
pub mod phantom;
pub mod quality;
pub mod stats;
pub mod surface;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Geometry, Volume3D};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
