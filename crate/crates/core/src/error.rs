use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate site id `{0}`")]
    DuplicateSiteId(String),

    #[error("site `{site}` has non-positive sampling variance {se2}")]
    NonPositiveVariance { site: String, se2: f64 },

    #[error("site `{0}` has a non-finite effect estimate")]
    NonFiniteEstimate(String),

    #[error("need at least 2 sites, got {0}")]
    TooFewSites(usize),

    #[error("every site was excluded by the cell-count rule")]
    AllSitesExcluded,

    #[error("invalid binary table for site `{site}`: {reason}")]
    InvalidTable { site: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown distribution shape `{0}`")]
    UnknownShape(String),

    #[error("chain diverged at iteration {iteration}: {what}")]
    ChainDiverged { iteration: usize, what: String },

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("KL divergence is infinite: target has mass at K={0} where the induced pmf is zero")]
    InfiniteDivergence(usize),

    #[error("finite-population variance of the posterior means is zero")]
    DegenerateVariance,

    #[error("length mismatch: expected {0} values, got {1}")]
    LengthMismatch(usize, usize),

    #[error("design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("cluster-robust covariance is not estimable: {0}")]
    SingularSandwich(String),

    #[error("unknown level `{level}` for factor `{factor}`")]
    UnknownLevel { factor: String, level: String },

    #[error("unknown plot kind `{0}`")]
    UnknownKind(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery (chains, quadrature,
    /// degenerate fits) rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ChainDiverged { .. }
                | Error::QuadratureFailure(_)
                | Error::InfiniteDivergence(_)
                | Error::DegenerateVariance
                | Error::RankDeficient { .. }
                | Error::SingularSandwich(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
