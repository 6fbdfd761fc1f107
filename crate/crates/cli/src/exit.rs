use bituning::ndgrad::TensorError;
use bituning::Error;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitKind {
    Ok = 0,
    Validation = 1,
    Numerical = 2,
    Io = 3,
}

/// Classifies an error by the first recognised cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> ExitKind {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ExitKind::Io;
        }
        if cause.is::<NumericalFailure>() {
            return ExitKind::Numerical;
        }
    }
    ExitKind::Validation
}

fn classify(e: &Error) -> ExitKind {
    match e {
        Error::Io { .. } => ExitKind::Io,
        Error::NonFinite { .. } => ExitKind::Numerical,
        Error::Tensor(TensorError::NonFinite { .. } | TensorError::Degenerate { .. }) => ExitKind::Numerical,
        _ => ExitKind::Validation,
    }
}

/// Raised when a check (such as gradcheck) completes but reports failures.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}
