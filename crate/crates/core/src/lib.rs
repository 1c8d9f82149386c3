// SPDX-License-Identifier: Apache-2.0
//! Inverse lithography toolkit.
//!
//! The crate covers the whole mask-synthesis loop at desk scale:
//!
//! * [`layout`]: binary target rasters and synthetic design generation.
//! * [`litho`]: SVD-kernel aerial images, threshold resist and process corners.
//! * [`metrics`]: MSE, EPE violations, PVB area and the contest score.
//! * [`ilt`]: gradient-based pixel ILT used to produce training labels.
//! * [`ad`]: a small reverse-mode engine over the operations the model needs.
//! * [`cfno`]: the convolutional Fourier neural operator mask generator.
//! * [`lgst`]: training and litho-guided label refinement.
//! * [`tiling`]: half-overlapped tile split/merge for large clips.
//! * [`desk`]: small defaults for running everything on one core.
//!
//! Everything here is pure computation; file formats and the command-line
//! harness live in the companion `litho-cfno-cli` crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod cfno;
pub mod desk;
mod error;
mod fft;
pub mod grid;
pub mod ilt;
pub mod layout;
pub mod lgst;
pub mod litho;
pub mod metrics;
pub mod rng;
pub mod tiling;

pub use error::{Error, Result};
pub use grid::Grid;
