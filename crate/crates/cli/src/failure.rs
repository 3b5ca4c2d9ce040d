use clinrag::config::ConfigError;
use clinrag::eval::EvalError;
use clinrag::index::IndexError;
use clinrag::store::StoreError;
use clinrag::EngineError;

pub const GENERIC: u8 = 1;
pub const INPUT: u8 = 2;
pub const EXTERNAL: u8 = 3;

/// A message and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: INPUT,
            message: message.into(),
        }
    }

    pub fn external(message: impl Into<String>) -> Self {
        Self {
            code: EXTERNAL,
            message: message.into(),
        }
    }

    pub fn generic(message: impl Into<String>) -> Self {
        Self {
            code: GENERIC,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        if e.is_input_error() {
            Self::input(e.to_string())
        } else {
            Self::generic(e.to_string())
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        if e.is_external() {
            return Self::external(message);
        }
        match e {
            EngineError::Store(s) => s.into(),
            // a snapshot that cannot be read is bad input, whatever the cause
            EngineError::Index(IndexError::Embed(_)) => Self::generic(message),
            EngineError::Index(_) | EngineError::Corpus(_) | EngineError::Community(_) => {
                Self::input(message)
            }
            EngineError::Embed(_) | EngineError::Retrieval(_) | EngineError::Llm(_) => {
                Self::generic(message)
            }
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Engine(e) => e.into(),
            EvalError::MalformedItem { .. }
            | EvalError::Io(_)
            | EvalError::EmptyGrid
            | EvalError::Config(_) => Self::input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            Self::input(e.to_string())
        } else {
            Self::generic(e.to_string())
        }
    }
}
