use thiserror::Error;

/// Errors raised anywhere in the pricing and symmetry pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("curve is not differentiable at t={at}")]
    NonDifferentiable { at: f64 },

    #[error("quadrature failed to converge on [{lo}, {hi}]")]
    QuadratureFailure { lo: f64, hi: f64 },

    #[error("step size underflow at t={at} (stiff or singular right-hand side)")]
    Stiffness { at: f64 },

    #[error("singular linear system: zero pivot at index {index}")]
    SingularSystem { index: usize },

    #[error("series failed to converge after {terms} terms")]
    SeriesFailure { terms: usize },

    #[error("pole of the gamma function at x={0}")]
    Pole(f64),

    #[error("generator is singular at t={at}: Y(t) - X(t) = {gap:e}")]
    SingularGenerator { at: f64, gap: f64 },

    #[error("invariant chart is singular at t={at}: {factor} vanishes")]
    SingularChart { factor: &'static str, at: f64 },

    #[error("reduced-ODE extraction failed: {0}")]
    Extraction(String),

    #[error("chart does not reduce the PDE: coefficient spread {spread:e} exceeds {tol:e}")]
    InconsistentReduction { spread: f64, tol: f64 },

    #[error("experimental closed form rejected: residual certificate {certificate:e} exceeds {tol:e}")]
    ExperimentalFormRejected { certificate: f64, tol: f64 },

    #[error("degenerate basis: normal equations are rank deficient")]
    DegenerateBasis,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("market price of risk overflows: |mu - r| / sigma at t={at}")]
    MarketPriceOfRisk { at: f64 },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Innermost error, unwrapping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
