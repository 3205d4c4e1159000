use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or unit-inconsistent configuration values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file does not follow the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A file parsed but its payload is incomplete or inconsistent.
    #[error("corrupt file: {0}")]
    CorruptFile(String),

    /// Array shapes do not match the operation's contract.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An iterative optimization diverged (non-finite objective).
    #[error("optimization diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// Projection did not reach the requested tolerance.
    #[error("projection did not converge: residual {residual:.3e} after {iterations} iterations")]
    ProjectionFailed {
        iterations: usize,
        residual: f64,
        /// Best iterate found, flattened [n_shots][n_samples][2].
        best: Vec<f64>,
    },

    /// Sample geometry degenerate (e.g. density compensation denominator is zero).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// No data selected (empty mask, empty image list, empty k-space center).
    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
