//! Face de-identification toolkit.

pub mod adv;
pub mod cli;
pub mod config;
pub mod error;
pub mod embedding;
pub mod ensemble;
pub mod geometry;
pub mod image;
pub mod ksame;
pub mod method;
pub mod metrics;
pub mod naive;
pub mod pipeline;

pub use error::{Error, Result};
pub use image::{Image, PixelRect};
