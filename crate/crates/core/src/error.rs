use thiserror::Error;

/// Which assumption clause a coefficient validation failed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Clause {
    /// Boundedness and uniform ellipticity on the 6ε-ball.
    H1,
    /// Smoothness of the diffusion coefficient on the 6ε-ball.
    H2,
    /// Hölder continuity of the drift-to-diffusion ratio on the 6ε-ball.
    H3,
}

impl std::fmt::Display for Clause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Clause::H1 => "H1",
            Clause::H2 => "H2",
            Clause::H3 => "H3",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unsupported derivative order {0}")]
    UnsupportedOrder(u8),

    #[error("assumption {clause} violated at x = {at}: {detail}")]
    Validation {
        clause: Clause,
        at: f64,
        detail: String,
    },

    #[error("non-finite state on path {path} at step {step}")]
    NanDivergence { path: usize, step: usize },

    #[error("event decomposition violated on {violations} of {localized} localized paths (limit {limit})")]
    DecompositionViolation {
        violations: usize,
        localized: usize,
        limit: f64,
    },

    #[error("no event hits at any delta; oracle bounds {oracle:?}")]
    InsufficientHits { oracle: Vec<f64> },

    #[error("|log Z| = {log_z} exceeds the overflow guard (psi_sup = {psi_sup}, delta = {delta})")]
    OverflowGuard { log_z: f64, psi_sup: f64, delta: f64 },

    #[error("only {admissible} admissible frequencies above the noise floor {noise_floor} (max usable theta {max_usable_theta})")]
    InsufficientSignal {
        admissible: usize,
        noise_floor: f64,
        max_usable_theta: f64,
    },

    #[error("beta window is empty: gamma = {gamma} is not below alpha = {alpha}")]
    EmptyWindow { alpha: f64, gamma: f64 },

    #[error("theta = {theta} must exceed (t ^ 1)^(-1/beta) = {threshold}")]
    ThetaTooSmall { theta: f64, threshold: f64 },

    #[error("tail model diverges: gamma = {gamma} must be positive")]
    TailDivergence { gamma: f64 },

    #[error("Malliavin covariance is not positive on path {path}")]
    DegenerateCovariance { path: usize },

    #[error("unsupported (F, G, order) combination: {0}")]
    UnsupportedPair(String),

    #[error("insufficient range: {0}")]
    InsufficientRange(String),

    #[error("ensemble file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
