use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("position {x} lies outside the domain [{lower}, {upper}]")]
    Domain { x: f64, lower: f64, upper: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The candidate w does not satisfy `Lw = psi(., w)` on the grid.
    #[error("invalid martingale function: residual sup {residual_sup:.3e} at x = {worst_x:.6} exceeds tolerance {tolerance:.3e}")]
    InvalidMartingaleFunction {
        residual_sup: f64,
        tolerance: f64,
        worst_x: f64,
        /// `|Lw - psi(x, w(x))|` at every grid node.
        profile: Vec<f64>,
    },

    #[error(
        "solver blow-up in {equation}: sup {value:.3e} exceeds ceiling {ceiling:.3e} at t = {time}"
    )]
    BlowUp {
        equation: &'static str,
        value: f64,
        ceiling: f64,
        time: f64,
    },

    #[error("scheme failure in {equation}: {detail}")]
    SchemeFailure {
        equation: &'static str,
        detail: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("population ceiling {ceiling} exceeded at t = {time} ({population} particles)")]
    PopulationCeiling {
        ceiling: usize,
        population: usize,
        time: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
