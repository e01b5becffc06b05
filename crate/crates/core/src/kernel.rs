//! Event-sourced kernel.
//!
//! Every mutation enters as a [`Command`] from an actor. A command either
//! fails without touching state, or is applied and appended to the log as an
//! [`Event`]. State is a pure fold over the log: [`Kernel::replay`] rebuilds
//! it and [`Kernel::state_digest`] fingerprints it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assets::{
    Asset, AssetMetrics, AssetRegistry, CandidateItem, Lineage, ScoreWeights, ScoredAsset,
    ScriptedExecutor, SkillExecutor, ValidationReport, ValidatorSpec,
};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::ids::{AssetId, ParticipantId, ParticipantKind, TaskId};
use crate::ledger::{
    AcceptanceOutcome, Account, CreditAmount, EscrowSource, InvocationRecord, Ledger, LedgerEntry,
    LedgerSnapshot, RewardFunding,
};
use crate::taskflow::{BlobStore, Funding, PayloadEncoding, Task, TaskBook, TaskState, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subplan {
    pub intent: String,
    pub bounty: CreditAmount,
}

/// Every mutating operation, with its full arguments. The acting participant
/// travels alongside in the [`Event`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Command {
    OpenAccount {
        participant: ParticipantId,
        kind: ParticipantKind,
        endowment: CreditAmount,
        /// sha256 of the participant's bearer token, when issued.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token_digest: Option<String>,
    },
    PublishTask {
        intent: String,
        bounty: CreditAmount,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        parent: Option<TaskId>,
    },
    ClaimTask {
        task: TaskId,
    },
    Decompose {
        task: TaskId,
        subplans: Vec<Subplan>,
    },
    SubmitDeliverable {
        task: TaskId,
        payload: String,
        #[serde(default)]
        encoding: PayloadEncoding,
        #[serde(default)]
        used_skills: BTreeSet<AssetId>,
        #[serde(default)]
        consulted: BTreeSet<AssetId>,
        #[serde(default)]
        evidence: Vec<String>,
    },
    Review {
        task: TaskId,
        verdict: Verdict,
        #[serde(default)]
        feedback: String,
        #[serde(default, rename = "final")]
        final_: bool,
    },
    CancelTask {
        task: TaskId,
    },
    ProposeCandidates {
        task: TaskId,
        items: Vec<CandidateItem>,
    },
    Validate {
        asset: AssetId,
        #[serde(default)]
        validators: Vec<ValidatorSpec>,
    },
    Admit {
        task: TaskId,
    },
    RecordInvocation {
        skill: AssetId,
        task: TaskId,
        success: bool,
        latency_ms: u64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::OpenAccount { .. } => "open_account",
            Command::PublishTask { .. } => "publish_task",
            Command::ClaimTask { .. } => "claim_task",
            Command::Decompose { .. } => "decompose",
            Command::SubmitDeliverable { .. } => "submit_deliverable",
            Command::Review { .. } => "review",
            Command::CancelTask { .. } => "cancel_task",
            Command::ProposeCandidates { .. } => "propose_candidates",
            Command::Validate { .. } => "validate",
            Command::Admit { .. } => "admit",
            Command::RecordInvocation { .. } => "record_invocation",
        }
    }
}

/// A command addressed to the kernel, as accepted on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEnvelope {
    pub actor: ParticipantId,
    pub command: Command,
}

impl CommandEnvelope {
    pub fn parse(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::MalformedCommand(e.to_string()))
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Logical time. Never wall clock.
    pub at: u64,
    pub actor: ParticipantId,
    pub command: Command,
    /// Ledger entries the command produced. Replay recomputes and compares
    /// them when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<LedgerEntry>>,
}

impl Event {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub kind: ParticipantKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_digest: Option<String>,
}

/// What happened to the reuse reward of one invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RewardOutcome {
    Paid { fee: CreditAmount, ordinal: u64 },
    /// The payer could not cover the fee; metrics still count the invocation.
    Unpaid { fee: CreditAmount },
    /// Creator invoked its own skill.
    SelfUse,
    /// Failed invocations are not validated and earn nothing.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationEntry {
    pub skill: AssetId,
    pub task: TaskId,
    pub invoker: ParticipantId,
    pub success: bool,
    pub latency_ms: u64,
    pub reward: RewardOutcome,
    pub at: u64,
}

/// Result of a successfully applied command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Account(Account),
    Task(Task),
    Tasks(Vec<Task>),
    Review {
        task: Task,
        /// Bounty paid out by verified settlement (b_t or 0).
        settled: CreditAmount,
        /// Amount parked in a provisional hold (accepted subtasks).
        held: CreditAmount,
        refunded: CreditAmount,
    },
    Assets(Vec<Asset>),
    Validation(ValidationReport),
    Invocation {
        metrics: AssetMetrics,
        reward: RewardOutcome,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub funding: RewardFunding,
}

/// Complete kernel state. Serializes canonically (ordered maps only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub clock: u64,
    pub participants: BTreeMap<ParticipantId, Participant>,
    pub ledger: Ledger,
    pub tasks: TaskBook,
    pub assets: AssetRegistry,
    pub blobs: BlobStore,
    pub invocations: Vec<InvocationEntry>,
}

impl State {
    pub fn new(config: KernelConfig) -> Self {
        State {
            clock: 0,
            participants: BTreeMap::new(),
            ledger: Ledger::new(config.funding),
            tasks: TaskBook::default(),
            assets: AssetRegistry::default(),
            blobs: BlobStore::default(),
            invocations: Vec::new(),
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("state always serializes"))
    }
}

/// Point-in-time copy of the state with its digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub as_of_seq: u64,
    pub state: State,
    pub digest: String,
}

impl Snapshot {
    pub fn verify(&self) -> Result<()> {
        let actual = self.state.digest();
        if actual != self.digest {
            return Err(Error::CorruptLog(format!(
                "snapshot at seq {} has digest {actual}, recorded {}",
                self.as_of_seq, self.digest
            )));
        }
        if self.state.clock != self.as_of_seq {
            return Err(Error::CorruptLog(format!(
                "snapshot claims seq {} but state clock is {}",
                self.as_of_seq, self.state.clock
            )));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct Kernel {
    config: KernelConfig,
    state: State,
    events: Vec<Event>,
    executor: Arc<dyn SkillExecutor>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("config", &self.config)
            .field("clock", &self.state.clock)
            .finish_non_exhaustive()
    }
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::new(KernelConfig::default())
    }
}

impl Kernel {
    pub fn new(config: KernelConfig) -> Self {
        Kernel::with_executor(config, Arc::new(ScriptedExecutor))
    }

    pub fn with_executor(config: KernelConfig, executor: Arc<dyn SkillExecutor>) -> Self {
        Kernel {
            config,
            state: State::new(config),
            events: Vec::new(),
            executor,
        }
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    /// Events applied since this kernel was created or restored.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.state.clock
    }

    pub fn state_digest(&self) -> String {
        self.state.digest()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            as_of_seq: self.state.clock,
            state: self.state.clone(),
            digest: self.state.digest(),
        }
    }

    /// Validate `command` and, if it succeeds, apply it and append its event.
    pub fn apply_command(&mut self, actor: &ParticipantId, command: Command) -> Result<(Event, Outcome)> {
        let seq = self.state.clock + 1;
        let entries_before = self.state.ledger.entries().len();
        let outcome = self.execute(actor, &command, seq)?;
        self.state.clock = seq;
        let event = Event {
            seq,
            at: seq,
            actor: actor.clone(),
            command,
            entries: Some(self.state.ledger.entries()[entries_before..].to_vec()),
        };
        self.events.push(event.clone());
        Ok((event, outcome))
    }

    /// Parse a JSON [`CommandEnvelope`] and apply it.
    pub fn apply_json(&mut self, json: &str) -> Result<(Event, Outcome)> {
        let envelope = CommandEnvelope::parse(json)?;
        self.apply_command(&envelope.actor, envelope.command)
    }

    /// Rebuild a kernel from a complete log.
    pub fn replay<'a>(config: KernelConfig, log: impl IntoIterator<Item = &'a Event>) -> Result<Kernel> {
        let mut kernel = Kernel::new(config);
        kernel.replay_tail(log)?;
        Ok(kernel)
    }

    pub fn replay_with_executor<'a>(
        config: KernelConfig,
        executor: Arc<dyn SkillExecutor>,
        log: impl IntoIterator<Item = &'a Event>,
    ) -> Result<Kernel> {
        let mut kernel = Kernel::with_executor(config, executor);
        kernel.replay_tail(log)?;
        Ok(kernel)
    }

    /// Restore from a snapshot, then apply the events after it.
    pub fn restore<'a>(
        config: KernelConfig,
        executor: Arc<dyn SkillExecutor>,
        snapshot: Snapshot,
        tail: impl IntoIterator<Item = &'a Event>,
    ) -> Result<Kernel> {
        snapshot.verify()?;
        if snapshot.state.ledger.funding() != config.funding {
            return Err(Error::CorruptLog(
                "snapshot was taken under a different reward funding mode".into(),
            ));
        }
        let mut kernel = Kernel {
            config,
            state: snapshot.state,
            events: Vec::new(),
            executor,
        };
        kernel.replay_tail(tail)?;
        Ok(kernel)
    }

    fn replay_tail<'a>(&mut self, log: impl IntoIterator<Item = &'a Event>) -> Result<()> {
        for event in log {
            let expected = self.state.clock + 1;
            if event.seq != expected {
                return Err(Error::CorruptLog(format!(
                    "expected event seq {expected}, found {}",
                    event.seq
                )));
            }
            if event.at != event.seq {
                return Err(Error::CorruptLog(format!(
                    "event {} carries logical time {}",
                    event.seq, event.at
                )));
            }
            let (applied, _) = self
                .apply_command(&event.actor, event.command.clone())
                .map_err(|e| Error::CorruptLog(format!("event {} does not apply: {e}", event.seq)))?;
            if let Some(recorded) = &event.entries {
                if applied.entries.as_ref() != Some(recorded) {
                    return Err(Error::CorruptLog(format!(
                        "ledger entries of event {} differ from the recorded ones",
                        event.seq
                    )));
                }
            }
        }
        Ok(())
    }

    // ── queries ─────────────────────────────────────────────────────────

    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.state.participants.get(id)
    }

    /// Participant whose bearer token hashes to `token_digest`.
    pub fn participant_by_token(&self, token_digest: &str) -> Option<&Participant> {
        self.state
            .participants
            .values()
            .find(|p| p.token_digest.as_deref() == Some(token_digest))
    }

    pub fn account(&self, id: &ParticipantId) -> Option<&Account> {
        self.state.ledger.account(id)
    }

    pub fn task(&self, id: TaskId) -> Result<&Task> {
        self.state.tasks.get(id)
    }

    pub fn tasks(&self, state: Option<TaskState>) -> Vec<&Task> {
        self.state
            .tasks
            .iter()
            .filter(|t| state.is_none_or(|s| t.state == s))
            .collect()
    }

    pub fn participants_of(&self, task: TaskId) -> Result<BTreeSet<ParticipantId>> {
        self.state.tasks.participants_of(task)
    }

    pub fn balance_report(&self) -> LedgerSnapshot {
        self.state.ledger.balance_report()
    }

    pub fn ledger(&self) -> &Ledger {
        &self.state.ledger
    }

    pub fn assets(&self) -> &AssetRegistry {
        &self.state.assets
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.state.blobs
    }

    pub fn invocations(&self) -> &[InvocationEntry] {
        &self.state.invocations
    }

    pub fn lineage(&self, asset: &AssetId) -> Result<Lineage> {
        self.state.assets.lineage(asset)
    }

    pub fn score_capability(
        &self,
        candidates: &BTreeSet<AssetId>,
        weights: &ScoreWeights,
    ) -> Result<Vec<ScoredAsset>> {
        self.state.assets.score_capability(candidates, weights)
    }

    // ── command execution ───────────────────────────────────────────────
    //
    // Each handler runs every fallible check before its first mutation.

    fn execute(&mut self, actor: &ParticipantId, command: &Command, at: u64) -> Result<Outcome> {
        match command {
            Command::OpenAccount {
                participant,
                kind,
                endowment,
                token_digest,
            } => {
                let account = self.state.ledger.open_account(participant.clone(), *endowment)?;
                self.state.participants.insert(
                    participant.clone(),
                    Participant {
                        id: participant.clone(),
                        kind: *kind,
                        token_digest: token_digest.clone(),
                    },
                );
                Ok(Outcome::Account(account))
            }
            Command::PublishTask {
                intent,
                bounty,
                parent,
            } => {
                self.require_actor(actor)?;
                let id = self.publish(actor, intent, *bounty, *parent)?;
                Ok(Outcome::Task(self.state.tasks.get(id)?.clone()))
            }
            Command::ClaimTask { task } => {
                self.require_actor(actor)?;
                Ok(Outcome::Task(self.state.tasks.claim(*task, actor)?.clone()))
            }
            Command::Decompose { task, subplans } => {
                self.require_actor(actor)?;
                self.state.tasks.check_working(*task, actor)?;
                if let Some(empty) = subplans.iter().find(|s| s.intent.trim().is_empty()) {
                    return Err(Error::MalformedCommand(format!(
                        "subtask intent must not be empty (bounty {})",
                        empty.bounty
                    )));
                }
                let total = subplans
                    .iter()
                    .try_fold(CreditAmount::ZERO, |acc, s| acc.checked_add(s.bounty))?;
                self.state.tasks.check_delegation(*task, actor, total)?;
                let mut children = Vec::with_capacity(subplans.len());
                for sub in subplans {
                    let id = self.publish(actor, &sub.intent, sub.bounty, Some(*task))?;
                    children.push(self.state.tasks.get(id)?.clone());
                }
                Ok(Outcome::Tasks(children))
            }
            Command::SubmitDeliverable {
                task,
                payload,
                encoding,
                used_skills,
                consulted,
                evidence,
            } => {
                self.require_actor(actor)?;
                self.state.tasks.check_submit(*task, actor)?;
                let used = self.resolve_assets(used_skills)?;
                let consulted = self.resolve_assets(consulted)?;
                let bytes = encoding.decode(payload)?;
                let (digest, uri) = self.state.blobs.put(bytes);
                let task = self.state.tasks.submit(
                    *task,
                    actor,
                    digest,
                    uri,
                    used,
                    consulted,
                    evidence.clone(),
                )?;
                Ok(Outcome::Task(task.clone()))
            }
            Command::Review {
                task,
                verdict,
                feedback,
                final_,
            } => {
                self.require_actor(actor)?;
                self.review(actor, *task, *verdict, feedback, *final_, at)
            }
            Command::CancelTask { task } => {
                self.require_actor(actor)?;
                self.state.tasks.check_cancel(*task, actor)?;
                self.state
                    .ledger
                    .settle_task(*task, AcceptanceOutcome::Rejected, actor, &[])?;
                Ok(Outcome::Task(self.state.tasks.cancel(*task, actor)?.clone()))
            }
            Command::ProposeCandidates { task, items } => {
                self.require_actor(actor)?;
                let t = self.state.tasks.get(*task)?;
                if t.state != TaskState::Accepted {
                    return Err(Error::TaskNotAccepted(*task));
                }
                if !self.state.tasks.participants_of(*task)?.contains(actor) {
                    return Err(Error::NotParticipant(actor.clone(), *task));
                }
                let proposed =
                    self.state
                        .assets
                        .propose(*task, actor, items.clone(), &mut self.state.blobs)?;
                Ok(Outcome::Assets(proposed))
            }
            Command::Validate { asset, validators } => {
                self.require_actor(actor)?;
                let report = self.state.assets.evaluate(
                    asset,
                    validators,
                    self.executor.as_ref(),
                    &self.state.blobs,
                )?;
                self.state.assets.record_report(report.clone());
                Ok(Outcome::Validation(report))
            }
            Command::Admit { task } => {
                self.require_actor(actor)?;
                self.state.tasks.get(*task)?;
                let admitted = self.state.assets.admit(*task)?;
                for asset in admitted.iter().filter(|a| a.kind == crate::assets::AssetKind::Skill) {
                    self.state.ledger.register_skill(
                        asset.id.clone(),
                        asset.creator.clone(),
                        asset.reward_schedule,
                    );
                }
                Ok(Outcome::Assets(admitted))
            }
            Command::RecordInvocation {
                skill,
                task,
                success,
                latency_ms,
            } => {
                self.require_actor(actor)?;
                self.record_invocation(actor, skill, *task, *success, *latency_ms, at)
            }
        }
    }

    fn require_actor(&self, actor: &ParticipantId) -> Result<()> {
        if self.state.participants.contains_key(actor) {
            Ok(())
        } else {
            Err(Error::UnknownParticipant(actor.clone()))
        }
    }

    fn resolve_assets(&self, refs: &BTreeSet<AssetId>) -> Result<BTreeSet<AssetId>> {
        refs.iter()
            .map(|r| {
                self.state
                    .assets
                    .resolve_admitted(r)
                    .map(|a| a.id.clone())
                    .ok_or_else(|| Error::UnknownAssetId(r.clone()))
            })
            .collect()
    }

    fn publish(
        &mut self,
        requester: &ParticipantId,
        intent: &str,
        bounty: CreditAmount,
        parent: Option<TaskId>,
    ) -> Result<TaskId> {
        if intent.trim().is_empty() {
            return Err(Error::MalformedCommand("task intent must not be empty".into()));
        }
        let funding = self.state.tasks.check_publish(requester, bounty, parent)?;
        let id = self.state.tasks.next_id();
        let source = match funding {
            Funding::Requester => EscrowSource::ParticipantFunded,
            Funding::Parent(parent) => EscrowSource::ParentAdvance { parent },
        };
        self.state.ledger.lock_bounty(requester, id, bounty, source)?;
        Ok(self
            .state
            .tasks
            .insert_published(requester.clone(), intent.to_owned(), bounty, parent))
    }

    fn review(
        &mut self,
        reviewer: &ParticipantId,
        id: TaskId,
        verdict: Verdict,
        feedback: &str,
        final_: bool,
        at: u64,
    ) -> Result<Outcome> {
        self.state.tasks.check_review(id, reviewer)?;
        let task = self.state.tasks.get(id)?;
        let claimant = task.claimant.clone().expect("tasks in review are claimed");
        let is_root = task.parent.is_none();
        let subtree = self.state.tasks.descendants(id);

        let (mut settled, mut held, mut refunded) =
            (CreditAmount::ZERO, CreditAmount::ZERO, CreditAmount::ZERO);
        match (verdict, final_) {
            (Verdict::Accept, _) if is_root => {
                settled = self.state.ledger.settle_task(
                    id,
                    AcceptanceOutcome::Accepted,
                    &claimant,
                    &subtree,
                )?;
            }
            (Verdict::Accept, _) => {
                held = self.state.ledger.hold_task(id, &claimant)?.amount;
            }
            (Verdict::Reject, true) => {
                refunded = self.state.ledger.escrow_for(id).map_or(CreditAmount::ZERO, |e| e.balance);
                self.state.ledger.settle_task(
                    id,
                    AcceptanceOutcome::Rejected,
                    &claimant,
                    &subtree,
                )?;
            }
            (Verdict::Reject, false) => {}
        }
        let task = self
            .state
            .tasks
            .review(id, reviewer, verdict, feedback.to_owned(), final_, at)?
            .clone();
        if task.state == TaskState::Accepted {
            self.state.assets.record_acceptance(&task.used_skills);
        }
        Ok(Outcome::Review {
            task,
            settled,
            held,
            refunded,
        })
    }

    fn record_invocation(
        &mut self,
        invoker: &ParticipantId,
        skill: &AssetId,
        task_id: TaskId,
        success: bool,
        latency_ms: u64,
        at: u64,
    ) -> Result<Outcome> {
        let task = self.state.tasks.get(task_id)?;
        let skill = self.state.assets.require_skill(skill)?;
        if !matches!(task.state, TaskState::Claimed | TaskState::InReview) {
            return Err(Error::TaskNotClaimed(task_id));
        }
        if task.claimant.as_ref() != Some(invoker) {
            return Err(Error::NotClaimant(invoker.clone(), task_id));
        }
        let skill_id = skill.id.clone();
        let creator = skill.creator.clone();

        let metrics = self.state.assets.record_invocation(&skill_id, success, latency_ms)?;
        self.state.tasks.note_skill(task_id, skill_id.clone());
        let reward = if !success {
            RewardOutcome::Failed
        } else if &creator == invoker {
            RewardOutcome::SelfUse
        } else {
            let record = InvocationRecord {
                skill: skill_id.clone(),
                task: task_id,
                payer: invoker.clone(),
                success,
                latency_ms,
            };
            let fee = self.state.ledger.next_fee(&skill_id)?;
            match self.state.ledger.accrue_reuse_reward(&skill_id, &record) {
                Ok(fee) => RewardOutcome::Paid {
                    fee,
                    ordinal: self.state.ledger.reward(&skill_id).map_or(0, |r| r.paid_count),
                },
                Err(Error::InsufficientCredits { .. }) => RewardOutcome::Unpaid { fee },
                Err(e) => return Err(e),
            }
        };
        self.state.invocations.push(InvocationEntry {
            skill: skill_id,
            task: task_id,
            invoker: invoker.clone(),
            success,
            latency_ms,
            reward: reward.clone(),
            at,
        });
        Ok(Outcome::Invocation { metrics, reward })
    }
}
