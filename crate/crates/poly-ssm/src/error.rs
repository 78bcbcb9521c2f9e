//! Crate-wide error type. Every public fallible operation returns
//! [`Result`]; messages name the offending shapes, positions, or files so
//! failures are actionable without a debugger.

use std::fmt;

/// Unified error for all modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A value that must stay finite became NaN or infinite.
    NonFinite { context: String },
    /// A hidden state left the finite range during a scan.
    /// `channel` and `position` are 1-based.
    ScanOverflow { channel: usize, position: usize },
    /// The requested configuration is outside what the operation supports.
    Unsupported { reason: String },
    /// The empirical contraction constant reached 1 or more.
    /// `sample`, `channel`, `position` locate the offending transition value.
    ContractionViolation {
        sample: usize,
        channel: usize,
        position: usize,
        value: f64,
    },
    /// A task admits no valid standardization or balance target.
    DegenerateTask { reason: String },
    /// Caller-provided data violates a documented precondition.
    InvalidInput { reason: String },
    /// Analytic gradients disagree with central differences beyond tolerance.
    GradCheckFailed { max_rel_err: f64, tolerance: f64 },
    /// Training produced a non-finite loss at the given epoch (1-based).
    Diverged { epoch: usize },
    /// File system failure, wrapping the underlying message.
    Io { path: String, message: String },
    /// A serialized artifact failed to parse. `line` is 1-based, 0 when the
    /// failure is not line-addressable.
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    /// Command-line or config-file usage error (maps to exit code 2).
    Usage { message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: shape mismatch {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::ScanOverflow { channel, position } => write!(
                f,
                "scan state overflow at channel {channel}, position {position}"
            ),
            Error::Unsupported { reason } => write!(f, "unsupported configuration: {reason}"),
            Error::ContractionViolation {
                sample,
                channel,
                position,
                value,
            } => write!(
                f,
                "contraction violated: |abar| = {value} at sample {sample}, \
                 channel {channel}, position {position} (need < 1)"
            ),
            Error::DegenerateTask { reason } => write!(f, "degenerate task: {reason}"),
            Error::InvalidInput { reason } => write!(f, "invalid input: {reason}"),
            Error::GradCheckFailed {
                max_rel_err,
                tolerance,
            } => write!(
                f,
                "gradient check failed: max relative error {max_rel_err:e} exceeds {tolerance:e}"
            ),
            Error::Diverged { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::Io { path, message } => write!(f, "io error on {path}: {message}"),
            Error::Parse {
                path,
                line,
                message,
            } => {
                if *line > 0 {
                    write!(f, "parse error in {path} at line {line}: {message}")
                } else {
                    write!(f, "parse error in {path}: {message}")
                }
            }
            Error::Usage { message } => write!(f, "usage error: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    /// Process exit code for the CLI: usage and config errors exit 2,
    /// everything else (contract violations at runtime) exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(path: &std::path::Path, err: std::io::Error) -> Error {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
