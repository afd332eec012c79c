use thiserror::Error;

/// Errors shared across the solver, simulator, and diagnostics modules.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid mismatch: [{0}, {1}] x {2} vs [{3}, {4}] x {5}")]
    GridMismatch(f64, f64, usize, f64, f64, usize),

    #[error("insufficient mass: operation needs more than {needed}, density holds {available}")]
    InsufficientMass { needed: f64, available: f64 },

    #[error("infeasible cut at step {step}: requested {requested}, available {available}")]
    InfeasibleCut {
        step: usize,
        requested: f64,
        available: f64,
    },

    #[error("upper-barrier margin {delta} is not below the admissibility floor {eps0}")]
    DeltaTooLarge { delta: f64, eps0: f64 },

    #[error("sandwich violated at step {step} (t = {time}): excess {excess} beyond bound {bound}")]
    SandwichViolation {
        step: usize,
        time: f64,
        excess: f64,
        bound: f64,
    },

    #[error("requested time {t} exceeds the validity window {window}")]
    ValidityWindowExceeded { t: f64, window: f64 },

    #[error("coupling precondition violated: {0}")]
    CouplingPreconditionViolated(String),

    #[error("no snapshot recorded at time {0}")]
    NoSnapshotAtTime(f64),

    #[error("empty time window")]
    EmptyWindow,

    #[error("test function support escapes the grid or horizon")]
    SupportEscapesGrid,

    #[error("population underflow at time {0}")]
    PopulationUnderflow(f64),

    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Non-fatal conditions reported alongside results. The harness decides
/// whether to escalate them (strict mode) or log them.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    KernelWiderThanDomain {
        t: f64,
        width: f64,
        half_domain: f64,
    },
    TruncationLoss {
        location: f64,
        leaked: f64,
    },
    RemovalSupportDiagnostic {
        step: usize,
        slab_inf: f64,
        expected_floor: f64,
    },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::KernelWiderThanDomain {
                t,
                width,
                half_domain,
            } => write!(
                f,
                "kernel wider than domain: 8*sqrt({t}) = {width} > {half_domain}"
            ),
            Warning::TruncationLoss { location, leaked } => write!(
                f,
                "atom at {location} too close to the boundary, about {leaked} mass leaked"
            ),
            Warning::RemovalSupportDiagnostic {
                step,
                slab_inf,
                expected_floor,
            } => write!(
                f,
                "step {step}: removed slab reaches down to {slab_inf}, below the expected floor {expected_floor}"
            ),
        }
    }
}
