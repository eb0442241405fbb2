use core::fmt;

/// Failure raised by a kernel when the buffers it was handed disagree with
/// the geometry in its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelError {
    /// A buffer has the wrong number of elements.
    Length {
        buffer: &'static str,
        expected: usize,
        actual: usize,
    },
    /// An output position outside the operator's output extent.
    Position { row: usize, col: usize },
    /// Page size outside `1..=units`.
    PageSize { page_size: usize, units: usize },
    /// The parameter struct itself is inconsistent (zero dims, bad multiplier...).
    Geometry(&'static str),
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelError::Length {
                buffer,
                expected,
                actual,
            } => write!(
                f,
                "{buffer} buffer holds {actual} elements, expected {expected}"
            ),
            KernelError::Position { row, col } => {
                write!(f, "output position ({row}, {col}) is out of range")
            }
            KernelError::PageSize { page_size, units } => {
                write!(f, "page size {page_size} not in 1..={units}")
            }
            KernelError::Geometry(msg) => write!(f, "invalid kernel geometry: {msg}"),
        }
    }
}

pub(crate) fn check_len(
    buffer: &'static str,
    expected: usize,
    actual: usize,
) -> Result<(), KernelError> {
    if expected == actual {
        Ok(())
    } else {
        Err(KernelError::Length {
            buffer,
            expected,
            actual,
        })
    }
}
