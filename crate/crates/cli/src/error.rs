use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// The config could not be parsed or does not resolve to a valid experiment.
    #[error("{}", config_message(.path, .line, .column, .field, .message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        column: Option<usize>,
        field: String,
        message: String,
    },
    #[error("unknown preset `{0}` (expected fig1, fig2, fig3 or fig4)")]
    UnknownPreset(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] dmssca::Error),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

fn config_message(
    path: &Option<PathBuf>,
    line: &Option<usize>,
    column: &Option<usize>,
    field: &str,
    message: &str,
) -> String {
    let mut loc = path
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<config>".into());
    if let Some(l) = line {
        loc.push_str(&format!(":{l}"));
        if let Some(c) = column {
            loc.push_str(&format!(":{c}"));
        }
    }
    if field.is_empty() || field == "." {
        format!("{loc}: {message}")
    } else {
        format!("{loc}: field `{field}`: {message}")
    }
}

impl CliError {
    /// Process exit status: 2 for configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::UnknownPreset(_) => 2,
            _ => 1,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}
