//! Kernel of a credit-backed task marketplace.
//!
//! Requesters lock bounties in escrow, solvers claim and deliver, reviewers
//! settle. Accepted work can be packaged as reusable assets that earn a fee
//! each time another solver invokes them. All state changes flow through
//! [`kernel::Kernel::apply_command`] and are recorded as replayable events.

pub mod assets;
pub mod digest;
pub mod error;
pub mod ids;
pub mod kernel;
pub mod ledger;
pub mod store;
pub mod taskflow;

pub use error::{Error, Result};
pub use ids::{AssetId, EscrowId, HoldId, ParticipantId, ParticipantKind, TaskId};
pub use kernel::{Command, Event, Kernel, KernelConfig, Outcome, Snapshot, State};
pub use ledger::{CreditAmount, RewardFunding, RewardSchedule};
