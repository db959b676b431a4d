use std::fmt;
use std::path::Path;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or input files: exit 2.
    Input(String),
    /// A failed check or an internal error: exit 1.
    Failed(String),
    /// Filesystem trouble: exit 3.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<fflp::tasks::TaskError> for CliError {
    fn from(e: fflp::tasks::TaskError) -> CliError {
        use fflp::tasks::TaskError as E;
        match e {
            E::Sim(s) => s.into(),
            E::Snn(s) => CliError::Input(s.to_string()),
            E::Dataset { .. } | E::UnknownTask(_) | E::BadVariant { .. } | E::ActionDim { .. } => {
                CliError::Input(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<fflp::accel::SimError> for CliError {
    fn from(e: fflp::accel::SimError) -> CliError {
        use fflp::accel::SimError as E;
        match e {
            E::Config(_) | E::Snn(_) => CliError::Input(e.to_string()),
            other => CliError::Failed(format!("simulation failed: {other}")),
        }
    }
}

impl From<fflp::evolution::EvolutionError> for CliError {
    fn from(e: fflp::evolution::EvolutionError) -> CliError {
        use fflp::evolution::EvolutionError as E;
        match e {
            E::Task(t) => t.into(),
            E::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}
