use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("level generation failed for seed {seed} after {attempts} attempts")]
    Generation { seed: u64, attempts: u32 },
    #[error("environment {index}: {source}")]
    Env { index: usize, source: Box<Error> },
    #[error("minibatch {index}: {source}")]
    Minibatch { index: usize, source: Box<Error> },
}

impl Error {
    pub fn in_env(self, index: usize) -> Self {
        Error::Env { index, source: Box::new(self) }
    }

    pub fn in_minibatch(self, index: usize) -> Self {
        Error::Minibatch { index, source: Box::new(self) }
    }
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
