//! Emitted `predict` modules for the checked-in model corpus.
//!
//! The build script compiles each model under `models/` ahead of time, so
//! every module here is plain generated code calling the runtime kernels.

/// One compiled corpus model.
#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    /// Model file, relative to this crate's manifest directory.
    pub model: &'static str,
    pub ram_budget: Option<usize>,
    pub input_len: usize,
    pub output_len: usize,
    /// The emitted `predict`, adapted to slices.
    pub predict: fn(&[i8]) -> Vec<i8>,
    /// The emitted source text.
    pub source: &'static str,
}

impl Entry {
    pub fn model_path(&self) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(self.model)
    }
}

include!(concat!(env!("OUT_DIR"), "/registry.rs"));

pub fn find(name: &str) -> Option<&'static Entry> {
    CORPUS.iter().find(|e| e.name == name)
}
