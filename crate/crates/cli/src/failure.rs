use std::fmt;
use std::path::{Path, PathBuf};

/// Why a subcommand stopped. Missing inputs exit with 2, stage failures with 1.
#[derive(Debug)]
pub enum Failure {
    MissingInput(PathBuf),
    Stage {
        stage: &'static str,
        source: anyhow::Error,
    },
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::MissingInput(_) => 2,
            Failure::Stage { .. } => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::MissingInput(p) => write!(f, "input not found: {}", p.display()),
            Failure::Stage { stage, source } => write!(f, "stage {stage} failed: {source:#}"),
        }
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Outcome<T> {
        self.map_err(|e| Failure::Stage {
            stage,
            source: e.into(),
        })
    }
}

/// Fails with [`Failure::MissingInput`] for the first path that does not exist.
pub fn require_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Outcome {
    for p in paths {
        if !p.exists() {
            return Err(Failure::MissingInput(p.to_path_buf()));
        }
    }
    Ok(())
}

pub fn prepare_out(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).stage("output")
}
