use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model construction: {0} matrix is singular")]
    SingularParameter(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("event vector unobservable (C·f = 0)")]
    Unobservable,
    #[error("no detection generator within tolerance (residual {0:e})")]
    Degenerate(f64),
    #[error("event vectors not output separable: rank F = {rank_f}, rank CF = {rank_cf}")]
    NotSeparable { rank_f: usize, rank_cf: usize },
    #[error("design infeasible: {0}")]
    Infeasible(String),
    #[error("singular generator output matrix [Cg] (columns {0:?} dependent)")]
    SingularGenerators(Vec<usize>),
    #[error("stream error at sample {index}: {msg}")]
    Stream { index: usize, msg: String },
    #[error("cannot locate: {0}")]
    Locate(String),
    #[error("config: {0}")]
    Config(String),
    #[error("ingestion: {0}")]
    Ingest(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
