use thiserror::Error;

/// Errors raised by the geometry, loss and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric: |a[{i}][{j}] - a[{j}][{i}]| = {diff:e}")]
    AsymmetricInput { i: usize, j: usize, diff: f64 },

    #[error("negative weight {value} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, value: f64 },

    #[error("row {row} has no strictly positive off-diagonal weight")]
    IllConditioned { row: usize },

    #[error("zero off-diagonal weight at ({i}, {j}) has no finite dissimilarity")]
    ZeroWeight { i: usize, j: usize },

    #[error("dissimilarity diagonal entry {index} is {value}, expected 0")]
    NonZeroDiagonal { index: usize, value: f64 },

    #[error("non-finite entry at ({i}, {j})")]
    NonFiniteEntry { i: usize, j: usize },

    #[error("size mismatch: expected {expected}, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("class {class} has {size} member(s); at least 2 are required")]
    SingletonClass { class: usize, size: usize },

    #[error("epsilon must lie in (0, 1), got {0}")]
    BadEpsilon(f64),

    #[error("label row {row} is the zero vector")]
    ZeroLabelVector { row: usize },

    #[error("embedding row {row} is the zero vector; cosine similarity undefined")]
    ZeroVector { row: usize },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("dissimilarity matrix is not a Euclidean distance matrix")]
    NotEdm,

    #[error("dissimilarity matrix is not a spherical Euclidean distance matrix")]
    NotSphericalEdm,

    #[error("dimension too small: need {required}, have {available}")]
    DimensionTooSmall { required: usize, available: usize },

    #[error("radius {radius} exceeds 1/sqrt(2 tau) = {max}")]
    RadiusTooLarge { radius: f64, max: f64 },

    #[error("target configuration has zero variance")]
    DegenerateTarget,

    #[error("temperature order violated: tau = {tau} > tau' = {tau_prime}")]
    TemperatureOrder { tau: f64, tau_prime: f64 },

    #[error("inter-class cosine {beta} is below the feasibility limit {min}")]
    InfeasibleBeta { beta: f64, min: f64 },

    #[error("did not converge: gradient norm {grad_norm:e} after all restarts")]
    NonConvergence { grad_norm: f64 },

    #[error("prototypes {a} and {b} coincide")]
    DuplicatePrototypes { a: usize, b: usize },

    #[error("loss or gradient became non-finite at step {step}")]
    NonFinite { step: usize },

    #[error("invalid parameter: {0}")]
    BadParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
