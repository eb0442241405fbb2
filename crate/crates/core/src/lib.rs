//! Ahead-of-time compiler for int8 quantized neural networks.
//!
//! Pipeline: [`model::load_model`] → [`graph::build_graph`] →
//! [`compile::fold_constants`] → [`memory::plan_memory`] →
//! [`codegen::emit_source`]. [`compile::execute_plan`] runs a plan
//! directly, and [`reference`] holds the two oracles it is checked against.

pub mod cli;
pub mod codegen;
pub mod compile;
pub mod error;
pub mod graph;
pub mod memory;
pub mod model;
pub mod reference;
pub mod synth;

pub use compile::{execute_plan, fold_constants, CompiledPlan};
pub use error::{Error, Result};
pub use graph::{build_graph, Graph};
pub use memory::{plan_memory, MemoryReport};
pub use model::{load_model, ModelFile};
pub use tinyaot_runtime as runtime;
