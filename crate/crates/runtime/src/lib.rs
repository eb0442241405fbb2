//! Runtime half of the tinyaot inference engine.
//!
//! Everything in here is what generated `predict()` functions call at
//! inference time: quantization arithmetic, the view extraction routine and
//! one kernel per supported operator. The crate is `no_std` and never
//! allocates; every buffer (outputs, view scratch, FC pages) is handed in by
//! the caller so its size is fixed when the model is compiled.
//!
//! Kernels expect their input-independent terms to be folded ahead of time
//! (see the `tinyaot` crate). The parameter structs borrow those constants,
//! which lets generated code keep them in `static` storage.

#![cfg_attr(not(test), no_std)]

mod error;

pub mod activation;
pub mod kernels;
pub mod quant;
pub mod view;

pub use activation::Fused;
pub use error::KernelError;
pub use quant::{QuantParams, Requant};
pub use view::{Padding, Window};
