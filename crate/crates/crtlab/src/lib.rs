//! File formats, training drivers, sweeps and the command line built on
//! `crtlab-core`.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod drivers;
pub mod error;
pub mod fsx;
pub mod kv;
pub mod logs;
pub mod pool;
pub mod ppm;
pub mod records;
pub mod report;
pub mod reproduce;
pub mod svg;
pub mod sweep;
pub mod tokens;

pub use error::{Error, Result};
