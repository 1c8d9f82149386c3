// SPDX-License-Identifier: Apache-2.0
//! File formats and the command-line harness around `litho-cfno`.
//!
//! - [`rectlist`]: plain-text rectangle layouts
//! - [`pgm`]: binary PGM images
//! - [`kernels`]: `LITHOKERN` optical kernel files
//! - [`checkpoint`]: `CFNOCKPT` tensor containers and model checkpoints
//! - [`config`]: flat `key = value` run configuration
//! - [`dataset`]: dataset directories with a CSV manifest
//! - [`report`]: CSV reports
//! - [`app`]: the `cfno` subcommands

pub mod app;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod kernels;
pub mod pgm;
pub mod rectlist;
pub mod report;

pub use error::{IoError, Result};
