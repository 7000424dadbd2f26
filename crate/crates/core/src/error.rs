use thiserror::Error;

/// Errors raised by panel construction, estimation and simulation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("rank {rank} out of range 0..={max}")]
    RankOutOfRange { rank: usize, max: usize },

    /// The residualized regressors carry no usable variation.
    #[error("degenerate denominator: {0}")]
    DegenerateDenominator(String),

    #[error("control design is rank deficient")]
    CollinearControls,

    /// First unit whose within variation falls below the floor.
    #[error("unit {0} has insufficient within variation")]
    UnitDegenerate(usize),

    #[error("cross-sectional average augmentation is rank deficient")]
    RankDeficientAugmentation,

    #[error("every k-means restart produced an empty cluster")]
    EmptyCluster,

    #[error("invalid AR(1) coefficient {0}: must lie in [0, 1)")]
    InvalidAlpha(f64),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("dataset carries no latent draws")]
    MissingLatents,

    #[error("weights must be non-negative with mean one: {0}")]
    NegativeWeights(String),

    #[error("every (group, period-cluster) cell is degenerate")]
    AllCellsDegenerate,

    #[error("mean second-moment matrix is singular or not positive definite")]
    SingularMeanMatrix,

    #[error("unknown estimator tag `{0}`")]
    UnknownEstimatorTag(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short stable name of the variant, used as a failure-tally key.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteEntry { .. } => "NonFiniteEntry",
            Error::RankOutOfRange { .. } => "RankOutOfRange",
            Error::DegenerateDenominator(_) => "DegenerateDenominator",
            Error::CollinearControls => "CollinearControls",
            Error::UnitDegenerate(_) => "UnitDegenerate",
            Error::RankDeficientAugmentation => "RankDeficientAugmentation",
            Error::EmptyCluster => "EmptyCluster",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::MissingLatents => "MissingLatents",
            Error::NegativeWeights(_) => "NegativeWeights",
            Error::AllCellsDegenerate => "AllCellsDegenerate",
            Error::SingularMeanMatrix => "SingularMeanMatrix",
            Error::UnknownEstimatorTag(_) => "UnknownEstimatorTag",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
