use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("diffusion matrix is not positive definite at t={t}, x={x:?}")]
    Decomposition { t: f64, x: Vec<f64> },

    #[error("inf-convolution requires a non-empty point set")]
    EmptyGrid,

    #[error(
        "lattice CFL condition violated (a*dt/dx^2 = {ratio:.4} > 1): use at least {required_steps} time steps"
    )]
    Cfl { ratio: f64, required_steps: usize },

    #[error("lattice drift too strong for dx={dx} at x={x:?}: |mu|*dx = {lhs:.4} exceeds a = {a:.4}; refine space")]
    Peclet { dx: f64, x: Vec<f64>, lhs: f64, a: f64 },

    #[error("{module}: fixed point did not contract at step {step}, state {state}")]
    NonContraction { module: &'static str, step: usize, state: usize },

    #[error("gbsde: rank-deficient regression at time step {step}")]
    RankDeficient { step: usize },

    #[error("{module}: scalar root finder failed at step {step}, state {state}")]
    RootFinder { module: &'static str, step: usize, state: usize },

    #[error("{module}: monotonicity violated between n={n_prev} and n={n_next} (excess {excess:.3e})")]
    Monotonicity { module: &'static str, n_prev: u32, n_next: u32, excess: f64 },

    #[error("forward: negative measure density {value} at t={t}, x={x:?}")]
    NegativeDensity { t: f64, x: Vec<f64>, value: f64 },

    #[error("pde: Newton iteration diverged at time layer {layer}")]
    NewtonDivergence { layer: usize },

    #[error("mismatched specifications: {0}")]
    Mismatch(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
