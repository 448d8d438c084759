use std::fmt;

/// A failed stage, printed as one machine-parseable line.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub stage: String,
    pub kind: String,
    pub msg: String,
}

impl CliError {
    pub fn new(stage: &str, kind: &str, msg: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            kind: kind.to_string(),
            msg: msg.into(),
        }
    }

    pub fn core(stage: &str, e: salient_core::Error) -> Self {
        Self::new(stage, e.kind(), e.to_string())
    }

    pub fn missing(stage: &str, artifact: &std::path::Path, upstream: &str) -> Self {
        Self::new(
            stage,
            "missing-artifact",
            format!("{} not found; run stage {upstream} first", artifact.display()),
        )
    }

    pub fn io(stage: &str, path: &std::path::Path, e: impl fmt::Display) -> Self {
        Self::new(stage, "io", format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg: String = self
            .msg
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect::<String>()
            .replace('\\', "\\\\")
            .replace('"', "\\\"");
        write!(f, "error: stage={} kind={} msg=\"{}\"", self.stage, self.kind, msg)
    }
}
