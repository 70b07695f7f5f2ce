//! Core of crtlab: a small reverse-mode autodiff engine and everything that
//! trains on top of it.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. All file formats, process orchestration and the command line live
//! in the companion `crtlab` crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(rust_2018_idioms, unused_qualifications)]

extern crate alloc;

pub mod autodiff;
pub mod config;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod quantize;
pub mod rng;
pub mod scaling;
pub mod synth;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tensor::{DType, Real, Tensor};
