//! File formats, parallel drivers and the command layer around `ddid-core`.

pub mod commands;
pub mod config;
pub mod io;
pub mod parallel;
pub mod tables;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Load(#[from] io::LoadError),
    #[error("estimation: {0}")]
    Estimation(String),
    #[error("output: {0}")]
    Output(String),
}

impl AppError {
    /// 2 for bad input or configuration, 3 when estimation itself fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Estimation(_) => 3,
            _ => 2,
        }
    }
}
