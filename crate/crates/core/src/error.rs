use thiserror::Error;

use crate::numeric::NewtonReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Stage of a controller update, used to tag faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultStage {
    StateTransform,
    PsiInverse,
    Stabilization,
    Feedback,
}

impl std::fmt::Display for FaultStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FaultStage::StateTransform => "state-transform",
            FaultStage::PsiInverse => "psi-inverse",
            FaultStage::Stabilization => "stabilization",
            FaultStage::Feedback => "feedback",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("Newton iteration failed after {} iterations (residual {:.3e})", .report.iterations, .report.final_residual)]
    StepFailure { report: NewtonReport },

    #[error("numeric blow-up at t = {time}")]
    BlowUp { time: f64 },

    #[error("rank condition of block {block} fails (smallest singular value {sigma_min:.3e})")]
    RankDeficient { block: usize, sigma_min: f64 },

    #[error("block {block} solve failed at shift {shift}: {reason}")]
    BlockSolve {
        block: usize,
        shift: i64,
        reason: String,
    },

    #[error("shift {shift} missing from window (covers {lo}..={hi})")]
    MissingShift { shift: i64, lo: i64, hi: i64 },

    #[error("input transformation not invertible (determinant {determinant:.3e})")]
    SingularInput { determinant: f64 },

    #[error("singular point: {what} ({value:.3e})")]
    Singular { what: String, value: f64 },

    #[error("combined map F_xz not invertible (smallest singular value {sigma_min:.3e})")]
    NotInvertible { sigma_min: f64 },

    #[error("pole {re}{im:+}i has modulus >= 1")]
    UnstablePole { re: f64, im: f64 },

    #[error("controller fault in {stage}: {source}")]
    ControllerFault {
        stage: FaultStage,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn fault(stage: FaultStage, source: Error) -> Self {
        Error::ControllerFault {
            stage,
            source: Box::new(source),
        }
    }
}
