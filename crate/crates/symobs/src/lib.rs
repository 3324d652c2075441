//! Symmetry-based state observers for ODE systems.
//!
//! The crate implements a design pipeline built on one-parameter groups of
//! transformations of the time/state/input/output space:
//!
//! - [`groups`]: group actions, infinitesimal generators, prolongations and
//!   time-scale classification (UU / BU / CBU),
//! - [`sysmap`]: system maps `(x' - F, y - H)`, exact symmetry residuals and
//!   the asymptotic / variational relaxations,
//! - [`contraction`]: diagonal non-contracting groups and state-input
//!   contraction certificates,
//! - [`norm_est`]: state-input norm estimator filters and the time-varying
//!   group-parameter schedule,
//! - [`observers`]: semiglobal, partial, global, finite-time and asymptotic
//!   variational observers plus high-gain and sliding-mode baselines,
//! - [`bench`]: ready-made benchmark systems with their symmetries and
//!   certificates,
//! - [`sim`]: a fixed-step RK4 harness coupling plant, observer and norm
//!   estimator,
//! - [`verify`]: residual suites used by the CLI and the acceptance tests.

pub mod bench;
pub mod contraction;
pub mod fd;
pub mod groups;
pub mod linalg;
pub mod norm_est;
pub mod observers;
pub mod sim;
pub mod sysmap;
pub mod verify;

use std::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A point fell outside the domain of a (local) group of transformations.
    DomainViolation { what: String },
    /// |dΨᵗ/dt| below tolerance where an inverse is required.
    SingularTimeJacobian { p: f64, t: f64, jac: f64 },
    /// Numerical time-scale evidence is mixed; reported instead of guessed.
    InconclusiveClassification { detail: String },
    /// Saturation bound must be positive.
    NonPositiveBound { c: f64 },
    /// No (λ₁, λ₀) pair satisfies the filter decay inequality on the grid.
    NoFeasibleSelection { detail: String },
    /// The tuning search exceeded its ω cap without satisfying all predicates.
    TuningDiverged { omega_cap: f64 },
    /// Pole placement failed: the pair (C, A) is not observable.
    UnstabilizablePair,
    /// Finite-time observer evaluated at or past the blow-up time.
    PastBlowup { t: f64, dom_plus: f64 },
    /// State norm exceeded the divergence threshold during integration.
    DivergenceDetected { t: f64 },
    /// Triangular benchmark requires k >= 2.
    InvalidK { k: i64 },
    /// Homogeneous benchmark requires r1 > 0, gamma >= 0.
    InvalidExponents { detail: String },
    /// Asymptotic benchmark requires g^t >= max{6, 2k}.
    InvalidGT { gt: f64, required: f64 },
    /// Positive-definite data required (Lyapunov matrix, rate constants).
    InvalidBounds { detail: String },
    /// Malformed scenario or CLI configuration.
    InvalidConfig { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DomainViolation { what } => write!(f, "domain violation: {what}"),
            Error::SingularTimeJacobian { p, t, jac } => {
                write!(f, "singular time jacobian dPsi^t/dt = {jac:e} at p = {p}, t = {t}")
            }
            Error::InconclusiveClassification { detail } => {
                write!(f, "inconclusive time-scale classification: {detail}")
            }
            Error::NonPositiveBound { c } => write!(f, "saturation bound must be > 0, got {c}"),
            Error::NoFeasibleSelection { detail } => {
                write!(f, "no feasible (lambda1, lambda0) selection: {detail}")
            }
            Error::TuningDiverged { omega_cap } => {
                write!(f, "tuning search diverged: no omega <= {omega_cap:e} satisfies the predicates")
            }
            Error::UnstabilizablePair => write!(f, "(C, A) is not observable; cannot place poles"),
            Error::PastBlowup { t, dom_plus } => {
                write!(f, "time {t} at or past blow-up horizon {dom_plus}")
            }
            Error::DivergenceDetected { t } => write!(f, "state diverged at t = {t}"),
            Error::InvalidK { k } => write!(f, "triangular benchmark requires k >= 2, got {k}"),
            Error::InvalidExponents { detail } => write!(f, "invalid exponents: {detail}"),
            Error::InvalidGT { gt, required } => {
                write!(f, "g^t = {gt} below the required {required}")
            }
            Error::InvalidBounds { detail } => write!(f, "invalid bounds: {detail}"),
            Error::InvalidConfig { detail } => write!(f, "invalid configuration: {detail}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
