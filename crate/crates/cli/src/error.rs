use std::fmt;

/// Exit-code taxonomy: 2 bad input file, 3 bad flags, 4 semantic failure, 5 I/O.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Flags(String),
    Semantic(String),
    Io(String),
}

impl CliError {
    pub const INPUT: u8 = 2;
    pub const FLAGS: u8 = 3;
    pub const SEMANTIC: u8 = 4;
    pub const IO: u8 = 5;

    pub fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => Self::INPUT,
            CliError::Flags(_) => Self::FLAGS,
            CliError::Semantic(_) => Self::SEMANTIC,
            CliError::Io(_) => Self::IO,
        }
    }

    /// Wraps a failure to read or decode `path`.
    pub fn input(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub fn flag(flag: &str, err: impl fmt::Display) -> Self {
        CliError::Flags(format!("{flag}: {err}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Flags(m) | CliError::Semantic(m) | CliError::Io(m) => {
                f.write_str(m)
            }
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
