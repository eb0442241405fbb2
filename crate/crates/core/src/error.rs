use std::path::PathBuf;

use tinyaot_runtime::KernelError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Schema violation. `path` is a JSON path such as `operators[2].options`.
    #[error("format error at {path}: {message}")]
    Format { path: String, message: String },

    #[error("tensor {tensor} ({name}): value {value} outside the {dtype} range")]
    Range {
        tensor: usize,
        name: String,
        value: i64,
        dtype: &'static str,
    },

    #[error("shape error{}: {message}", op_suffix(*op))]
    Shape { op: Option<usize>, message: String },

    #[error("unsupported operator {op}: {message}")]
    Unsupported { op: usize, message: String },

    #[error("operator {op}: folded term {term} = {value} does not fit in 32 bits")]
    Overflow {
        op: usize,
        term: &'static str,
        value: i128,
    },

    #[error("step {step} needs {working_set} bytes even fully paged, budget is {budget} bytes")]
    Infeasible {
        step: usize,
        working_set: usize,
        budget: usize,
    },

    #[error("input holds {actual} elements, model expects {expected}")]
    Size { expected: usize, actual: usize },

    #[error("unsupported emission: {0}")]
    Emit(String),
}

fn op_suffix(op: Option<usize>) -> String {
    op.map(|i| format!(" in operator {i}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn shape(op: impl Into<Option<usize>>, message: impl Into<String>) -> Self {
        Error::Shape {
            op: op.into(),
            message: message.into(),
        }
    }

    pub(crate) fn kernel(op: usize, err: KernelError) -> Self {
        Error::shape(op, err.to_string())
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Emit(_) => 1,
            Error::Format { .. } | Error::Range { .. } => 2,
            Error::Shape { .. }
            | Error::Unsupported { .. }
            | Error::Overflow { .. }
            | Error::Size { .. } => 3,
            Error::Infeasible { .. } => 4,
        }
    }
}
