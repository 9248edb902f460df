use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("user {0} has no positive peak rate on any RAT")]
    ZeroCoverageUser(usize),
    #[error("RAT {0} covers no user")]
    EmptyRat(usize),
    #[error("peak rate or alpha is not finite")]
    NonFinite,
    #[error("negative peak rate at user {user}, RAT {rat}")]
    NegativeRate { user: usize, rat: usize },
    #[error("alpha must be nonnegative")]
    NegativeAlpha,
    #[error("malformed scenario: {0}")]
    Malformed(String),
    #[error("utility undefined for x = {x} with alpha = {alpha}")]
    DomainError { x: f64, alpha: f64 },
    #[error("user {0} has zero throughput")]
    ZeroThroughput(usize),
    #[error("alpha = 0 has no finite dual program; use the sum-rate closed form")]
    AlphaZeroUnsupported,
    #[error(
        "splitter system residual {residual:.3e} exceeds tolerance; \
         try a tighter tie tolerance (e.g. {suggested_tolerance:.1e})"
    )]
    InfeasibleTieStructure {
        residual: f64,
        suggested_tolerance: f64,
    },
    #[error("fraction for user {user} on RAT {rat} is {value:.3e}, outside [0, 1] beyond clamp tolerance")]
    NegativeFraction { user: usize, rat: usize, value: f64 },
    #[error("more than one user splits across RAT pair ({0}, {1})")]
    TooManySplitters(usize, usize),
    #[error("RAT {0} is shared by several splitters; the two-RAT closed form does not apply")]
    SharedRat(usize),
    #[error("splitter {0} ties more than two RATs; the two-RAT closed form does not apply")]
    WideTieSet(usize),
    #[error("recovered allocation is infeasible: {0}")]
    Infeasible(String),
    #[error("instance too large for exhaustive enumeration (U*B = {0}, limit 6)")]
    TooLarge(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid instance after {attempts} attempts (last error: {last})")]
    DegenerateInstance { attempts: usize, last: String },
    #[error("decentralized trace diverged from the centralized solver at iteration {0}")]
    VerifyMismatch(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name, used in CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ZeroCoverageUser(_) => "ZeroCoverageUser",
            Error::EmptyRat(_) => "EmptyRat",
            Error::NonFinite => "NonFinite",
            Error::NegativeRate { .. } => "NegativeRate",
            Error::NegativeAlpha => "NegativeAlpha",
            Error::Malformed(_) => "Malformed",
            Error::DomainError { .. } => "DomainError",
            Error::ZeroThroughput(_) => "ZeroThroughput",
            Error::AlphaZeroUnsupported => "AlphaZeroUnsupported",
            Error::InfeasibleTieStructure { .. } => "InfeasibleTieStructure",
            Error::NegativeFraction { .. } => "NegativeFraction",
            Error::TooManySplitters(..) => "TooManySplitters",
            Error::SharedRat(_) => "SharedRat",
            Error::WideTieSet(_) => "WideTieSet",
            Error::Infeasible(_) => "Infeasible",
            Error::TooLarge(_) => "TooLarge",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DegenerateInstance { .. } => "DegenerateInstance",
            Error::VerifyMismatch(_) => "VerifyMismatch",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }

    /// True for errors caused by the input instance rather than the solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ZeroCoverageUser(_)
                | Error::EmptyRat(_)
                | Error::NonFinite
                | Error::NegativeRate { .. }
                | Error::NegativeAlpha
                | Error::Malformed(_)
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
