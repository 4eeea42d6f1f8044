//! Check and repair for SFS block images.
//!
//! The crate is layered bottom-up:
//!
//! - [`format`], [`crc32c`], [`image`]: the on-disk layout and raw block I/O.
//! - [`build`], [`corrupt`]: synthetic images and recorded corruption.
//! - [`cache`]: the per-worker block cache.
//! - [`check`]: the five passes and the serial reference checker.
//! - [`engine`]: data-parallel and pipelined execution of the same passes.
//! - [`sched`]: work-proportional thread assignment and core budgeting.

pub mod bitmap;
pub mod build;
pub mod cache;
pub mod check;
pub mod config;
pub mod corrupt;
pub mod crc32c;
pub mod engine;
pub mod error;
pub mod format;
pub mod image;
pub mod sched;

pub use error::{Error, Result};
pub use image::Image;
