use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "no Dirac point: eigenvalue cluster at mu = {mu:.12} has multiplicity {multiplicity} \
         (lowest bands {bands:?}); tolerance {tol:e}"
    )]
    NotADiracPoint {
        mu: f64,
        multiplicity: usize,
        bands: Vec<f64>,
        tol: f64,
    },

    #[error("symmetry violation: {0}")]
    SymmetryViolation(String),

    #[error("cone fit failure: {0}")]
    ConeFitFailure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
