use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps `Config` onto exit code 1 (usage / bad input); verdict
/// failures are not errors and are reported through `Report::pass`.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad dimensions, malformed tables, out-of-range
    /// parameters.
    #[error("configuration: {0}")]
    Config(String),

    /// Operation called outside its domain (e.g. backward solving a
    /// forward-only flow, an initial point not in the required subspace).
    #[error("domain: {0}")]
    Domain(String),

    /// A required hypothesis does not hold, so the requested construction is
    /// refused (e.g. contraction certificate not satisfied).
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    /// A numerical probe contradicted an analytically certified bound.
    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("report serialize: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
