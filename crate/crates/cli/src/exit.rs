use std::io;
use std::process::ExitCode;

use sdtseg::Error;

/// Failures raised by the CLI itself rather than the library.
#[derive(Debug)]
pub enum CliError {
    /// Bad file lists, conflicting flags, outputs that would clobber inputs.
    Usage(String),
    /// Unreadable or inconsistent manifest.
    Manifest(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Manifest(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn classify_library(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Io(io) => classify_io(io),
        Error::ShapeMismatch { .. } | Error::GeometryMismatch(_) => ("geometry", 4),
        Error::Config(_) => ("config", 5),
        Error::Json(_) => ("config", 5),
        Error::MalformedHeader(_)
        | Error::UnsupportedDatatype(_)
        | Error::DimensionCount(_)
        | Error::TruncatedData { .. }
        | Error::Checkpoint(_) => ("format", 6),
        Error::Divergence { .. } => ("divergence", 8),
        _ => ("invalid_data", 7),
    }
}

fn classify_io(e: &io::Error) -> (&'static str, u8) {
    match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => ("io", 3),
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => ("format", 6),
        _ => ("io", 3),
    }
}

/// Kind label and exit code for the innermost recognized cause.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify_library(e);
        }
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Usage(_) => ("usage", 2),
                CliError::Manifest(_) => ("config", 5),
            };
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            return classify_io(e);
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return ("config", 5);
        }
    }
    ("internal", 1)
}

fn emit(kind: &str, code: u8, message: String) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "code": code, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

pub fn report(err: &anyhow::Error) -> ExitCode {
    let (kind, code) = classify(err);
    // one line: join the context chain
    let message = err.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
    emit(kind, code, message.replace('\n', " "))
}

pub fn report_usage(err: &clap::Error) -> ExitCode {
    let text = err.to_string();
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
    emit("usage", 2, first.trim_start_matches("error: ").to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_innermost_cause() {
        let e: anyhow::Error = Error::DegenerateMask.into();
        assert_eq!(classify(&e), ("invalid_data", 7));
        let e = anyhow::Error::from(Error::Divergence { epoch: 1, loss: f64::NAN }).context("training");
        assert_eq!(classify(&e), ("divergence", 8));
        let io = io::Error::new(io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::from(Error::Io(io)).context("reading a.nii");
        assert_eq!(classify(&e), ("io", 3));
        let e: anyhow::Error = Error::GeometryMismatch("x".into()).into();
        assert_eq!(classify(&e).1, 4);
        let e: anyhow::Error = Error::MalformedHeader("x".into()).into();
        assert_eq!(classify(&e).1, 6);
        let e = Err::<(), _>(CliError::Usage("x".into())).context("outer").unwrap_err();
        assert_eq!(classify(&e).1, 2);
        assert_eq!(classify(&anyhow::anyhow!("other")).1, 1);
    }
}
