use std::fmt;

/// Front-end failures, grouped by the exit code they map to.
#[derive(Debug)]
pub enum CliError {
    /// Bad or inconsistent configuration; `field` names the culprit.
    Config { field: String, msg: String },
    Io(String),
    /// Any other library error.
    Core(vanloan::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn config_err<T>(field: impl Into<String>, msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config { field: field.into(), msg: msg.into() })
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }

    /// Attaches a field name to a library error raised while building
    /// from that part of the config.
    pub fn in_field(field: &str) -> impl FnOnce(vanloan::Error) -> CliError + '_ {
        move |e| CliError::Config { field: field.into(), msg: e.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, msg } => write!(f, "config error in `{}`: {}", field, msg),
            CliError::Io(m) => write!(f, "i/o error: {}", m),
            CliError::Core(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for CliError {}

impl From<vanloan::Error> for CliError {
    fn from(e: vanloan::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
