use serde::Serialize;
use thiserror::Error;

use crate::ids::{AssetId, ParticipantId, TaskId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every rejection the kernel can produce.
///
/// The variant name doubles as the stable wire code returned by the API
/// (see [`Error::code`]).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    // ledger
    #[error("participant {0} is already registered")]
    DuplicateParticipant(ParticipantId),
    #[error("insufficient credits: need {needed}, have {available}")]
    InsufficientCredits { needed: u64, available: u64 },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {0} already has an escrow")]
    EscrowAlreadyExists(TaskId),
    #[error("escrow for task {0} is not open")]
    EscrowNotOpen(TaskId),
    #[error("task {0} is not in a terminal review state")]
    TaskNotTerminal(TaskId),
    #[error("unknown skill {0}")]
    UnknownSkill(AssetId),
    #[error("invocation of {0} was not validated")]
    InvocationNotValidated(AssetId),
    #[error("credit arithmetic overflow")]
    Overflow,

    // taskflow
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("delegated budget exceeded: children would total {requested}, parent bounty is {budget}")]
    BudgetExceeded { requested: u64, budget: u64 },
    #[error("{0} is not the claimant of task {1}")]
    NotClaimant(ParticipantId, TaskId),
    #[error("parent task {0} is not claimed")]
    ParentNotClaimed(TaskId),
    #[error("task {0} cannot be claimed in its current state")]
    TaskNotClaimable(TaskId),
    #[error("{0} cannot claim a task it requested")]
    SelfClaim(ParticipantId),
    #[error("task {0} is not claimed")]
    TaskNotClaimed(TaskId),
    #[error("task {0} still has unresolved subtasks")]
    OpenSubtasks(TaskId),
    #[error("unknown asset {0}")]
    UnknownAssetId(AssetId),
    #[error("{0} may not review task {1}")]
    NotAuthorizedReviewer(ParticipantId, TaskId),
    #[error("task {0} is not in review")]
    TaskNotInReview(TaskId),
    #[error("{0} is not the requester of task {1}")]
    NotRequester(ParticipantId, TaskId),
    #[error("task {0} cannot be cancelled in its current state")]
    TaskNotCancellable(TaskId),

    // assets
    #[error("task {0} is not accepted")]
    TaskNotAccepted(TaskId),
    #[error("{0} did not take part in task {1}")]
    NotParticipant(ParticipantId, TaskId),
    #[error("dependency {0} is not an admitted asset")]
    UnknownDependency(AssetId),
    #[error("asset {0} is not a candidate")]
    AssetNotCandidate(AssetId),
    #[error("validator {validator} is not available for {asset}")]
    ValidatorUnavailable { validator: String, asset: AssetId },
    #[error("candidates of task {0} are missing validation reports")]
    ValidationIncomplete(TaskId),
    #[error("asset {0} is not admitted")]
    AssetNotAdmitted(AssetId),
    #[error("asset {0} is not a skill")]
    NotASkill(AssetId),
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),

    // service
    #[error("malformed command: {0}")]
    MalformedCommand(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("data directory {0} is locked by another process")]
    DataDirLocked(String),
    #[error("storage error: {0}")]
    Storage(String),
}

impl Error {
    /// Stable machine-readable code (the variant name).
    pub fn code(&self) -> &'static str {
        match self {
            Error::DuplicateParticipant(_) => "DuplicateParticipant",
            Error::InsufficientCredits { .. } => "InsufficientCredits",
            Error::UnknownTask(_) => "UnknownTask",
            Error::EscrowAlreadyExists(_) => "EscrowAlreadyExists",
            Error::EscrowNotOpen(_) => "EscrowNotOpen",
            Error::TaskNotTerminal(_) => "TaskNotTerminal",
            Error::UnknownSkill(_) => "UnknownSkill",
            Error::InvocationNotValidated(_) => "InvocationNotValidated",
            Error::Overflow => "Overflow",
            Error::UnknownParticipant(_) => "UnknownParticipant",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::NotClaimant(..) => "NotClaimant",
            Error::ParentNotClaimed(_) => "ParentNotClaimed",
            Error::TaskNotClaimable(_) => "TaskNotClaimable",
            Error::SelfClaim(_) => "SelfClaim",
            Error::TaskNotClaimed(_) => "TaskNotClaimed",
            Error::OpenSubtasks(_) => "OpenSubtasks",
            Error::UnknownAssetId(_) => "UnknownAssetId",
            Error::NotAuthorizedReviewer(..) => "NotAuthorizedReviewer",
            Error::TaskNotInReview(_) => "TaskNotInReview",
            Error::NotRequester(..) => "NotRequester",
            Error::TaskNotCancellable(_) => "TaskNotCancellable",
            Error::TaskNotAccepted(_) => "TaskNotAccepted",
            Error::NotParticipant(..) => "NotParticipant",
            Error::UnknownDependency(_) => "UnknownDependency",
            Error::AssetNotCandidate(_) => "AssetNotCandidate",
            Error::ValidatorUnavailable { .. } => "ValidatorUnavailable",
            Error::ValidationIncomplete(_) => "ValidationIncomplete",
            Error::AssetNotAdmitted(_) => "AssetNotAdmitted",
            Error::NotASkill(_) => "NotASkill",
            Error::EmptyCandidateSet => "EmptyCandidateSet",
            Error::InvalidCandidate(_) => "InvalidCandidate",
            Error::MalformedCommand(_) => "MalformedCommand",
            Error::CorruptLog(_) => "CorruptLog",
            Error::DataDirLocked(_) => "DataDirLocked",
            Error::Storage(_) => "Storage",
        }
    }
}

/// Wire form of an error: `{"error": "<Code>", "message": "..."}`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub error: &'static str,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        ErrorBody {
            error: e.code(),
            message: e.to_string(),
        }
    }
}
