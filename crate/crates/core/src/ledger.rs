//! Credit accounts, bounty escrow, verified settlement and reuse rewards.
//!
//! Value lives in exactly one of four places: a participant's free balance,
//! an open escrow, a provisional hold, or (before endowment) the mint. Every
//! movement between them is a [`LedgerEntry`] with one debit side and one
//! credit side, so the books can be rebuilt from the entry list alone (see
//! [`audit_entries`]).
//!
//! `Account::locked` is the current balance of the open escrows a participant
//! funded directly. Escrows funded by a parent escrow (delegation advances)
//! and provisional holds are platform-held and not attributed to any account;
//! [`LedgerSnapshot::total_platform_held`] reports them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{AssetId, EscrowId, HoldId, ParticipantId, TaskId};

/// Whole credits. Fractional credits are not representable.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CreditAmount(pub u64);

impl CreditAmount {
    pub const ZERO: CreditAmount = CreditAmount(0);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn checked_add(self, other: CreditAmount) -> Result<CreditAmount> {
        self.0.checked_add(other.0).map(CreditAmount).ok_or(Error::Overflow)
    }

    /// Subtract, failing with `InsufficientCredits` instead of going negative.
    pub fn checked_sub(self, other: CreditAmount) -> Result<CreditAmount> {
        self.0
            .checked_sub(other.0)
            .map(CreditAmount)
            .ok_or(Error::InsufficientCredits {
                needed: other.0,
                available: self.0,
            })
    }
}

impl fmt::Display for CreditAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for CreditAmount {
    fn from(v: u64) -> Self {
        CreditAmount(v)
    }
}

/// Who pays reuse rewards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardFunding {
    /// The claimant of the invoking task pays the skill creator. Closed economy.
    #[default]
    Fee,
    /// The platform mints the reward. Supply grows by the minted total.
    Mint,
}

impl std::str::FromStr for RewardFunding {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fee" => Ok(RewardFunding::Fee),
            "mint" => Ok(RewardFunding::Mint),
            other => Err(format!("unknown reward funding mode `{other}` (expected fee|mint)")),
        }
    }
}

/// Per-reuse reward schedule a skill declares at admission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum RewardSchedule {
    /// Every reuse pays `alpha`.
    Constant { alpha: u64 },
    /// The j-th reuse pays `round(initial * ratio^(j-1))`.
    Decaying { initial: u64, ratio: f64 },
}

impl Default for RewardSchedule {
    fn default() -> Self {
        RewardSchedule::Constant { alpha: 1 }
    }
}

impl RewardSchedule {
    /// Reward for the `ordinal`-th paid reuse (1-based).
    pub fn fee(&self, ordinal: u64) -> CreditAmount {
        match *self {
            RewardSchedule::Constant { alpha } => CreditAmount(alpha),
            RewardSchedule::Decaying { initial, ratio } => {
                let exp = ordinal.saturating_sub(1).min(i32::MAX as u64) as i32;
                CreditAmount((initial as f64 * ratio.powi(exp)).round() as u64)
            }
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        match *self {
            RewardSchedule::Constant { .. } => Ok(()),
            RewardSchedule::Decaying { ratio, .. } if ratio.is_finite() && (0.0..=1.0).contains(&ratio) => {
                Ok(())
            }
            RewardSchedule::Decaying { ratio, .. } => {
                Err(format!("decay ratio must lie in [0, 1], got {ratio}"))
            }
        }
    }
}

/// One side of a ledger entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Participant(ParticipantId),
    Escrow(EscrowId),
    Hold(HoldId),
    /// Source of endowments (and of reuse rewards in mint mode).
    Mint,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Party::Participant(p) => write!(f, "participant:{p}"),
            Party::Escrow(e) => write!(f, "{e}"),
            Party::Hold(h) => write!(f, "{h}"),
            Party::Mint => f.write_str("mint"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Endowment,
    Lock,
    Settle,
    Refund,
    ReuseFee,
    Hold,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub kind: EntryKind,
    pub debit: Party,
    pub credit: Party,
    pub amount: CreditAmount,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<AssetId>,
    /// `j` of a reuse fee entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse_ordinal: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub participant: ParticipantId,
    pub free: CreditAmount,
    pub locked: CreditAmount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowSource {
    ParticipantFunded,
    ParentAdvance { parent: TaskId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscrowStatus {
    Open,
    Settled,
    Refunded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Escrow {
    pub id: EscrowId,
    pub task: TaskId,
    pub funder: Party,
    /// Bounty locked at publication.
    pub amount: CreditAmount,
    /// What the escrow currently holds: `amount` minus outstanding advances
    /// to subtasks, plus anything refunded back from them.
    pub balance: CreditAmount,
    pub source: EscrowSource,
    pub status: EscrowStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldStatus {
    Held,
    Released,
    Refunded,
}

/// Accepted-subtask payout parked until the root task is resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hold {
    pub id: HoldId,
    pub task: TaskId,
    pub escrow: EscrowId,
    pub beneficiary: ParticipantId,
    pub amount: CreditAmount,
    pub status: HoldStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceOutcome {
    Accepted,
    Rejected,
}

/// Reuse-reward book of one admitted skill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillReward {
    pub skill: AssetId,
    pub creator: ParticipantId,
    pub schedule: RewardSchedule,
    /// Number of paid reuse events so far; the next one is `paid_count + 1`.
    pub paid_count: u64,
    /// Cumulative reward R_s.
    pub earned: CreditAmount,
    pub unpaid_count: u64,
}

/// A skill invocation as seen by the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub skill: AssetId,
    pub task: TaskId,
    pub payer: ParticipantId,
    pub success: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub accounts: Vec<Account>,
    pub open_escrows: Vec<Escrow>,
    pub open_holds: Vec<Hold>,
    pub total_free: CreditAmount,
    pub total_locked: CreditAmount,
    /// Open advance escrows plus provisional holds.
    pub total_platform_held: CreditAmount,
    /// `total_free + total_locked + total_platform_held`.
    pub total: CreditAmount,
    pub endowed: CreditAmount,
    pub minted: CreditAmount,
    /// `total == endowed + minted`.
    pub conserved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    funding: RewardFunding,
    accounts: BTreeMap<ParticipantId, Account>,
    escrows: BTreeMap<EscrowId, Escrow>,
    task_escrows: BTreeMap<TaskId, EscrowId>,
    holds: BTreeMap<HoldId, Hold>,
    rewards: BTreeMap<AssetId, SkillReward>,
    entries: Vec<LedgerEntry>,
    endowed: CreditAmount,
    minted: CreditAmount,
}

impl Ledger {
    pub fn new(funding: RewardFunding) -> Self {
        Ledger {
            funding,
            accounts: BTreeMap::new(),
            escrows: BTreeMap::new(),
            task_escrows: BTreeMap::new(),
            holds: BTreeMap::new(),
            rewards: BTreeMap::new(),
            entries: Vec::new(),
            endowed: CreditAmount::ZERO,
            minted: CreditAmount::ZERO,
        }
    }

    pub fn funding(&self) -> RewardFunding {
        self.funding
    }

    pub fn account(&self, participant: &ParticipantId) -> Option<&Account> {
        self.accounts.get(participant)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn escrow_for(&self, task: TaskId) -> Option<&Escrow> {
        self.task_escrows.get(&task).and_then(|id| self.escrows.get(id))
    }

    pub fn escrows(&self) -> impl Iterator<Item = &Escrow> {
        self.escrows.values()
    }

    pub fn holds(&self) -> impl Iterator<Item = &Hold> {
        self.holds.values()
    }

    pub fn reward(&self, skill: &AssetId) -> Option<&SkillReward> {
        self.rewards.get(skill)
    }

    pub fn rewards(&self) -> impl Iterator<Item = &SkillReward> {
        self.rewards.values()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn open_account(
        &mut self,
        participant: ParticipantId,
        endowment: CreditAmount,
    ) -> Result<Account> {
        if self.accounts.contains_key(&participant) {
            return Err(Error::DuplicateParticipant(participant));
        }
        let endowed = self.endowed.checked_add(endowment)?;
        let account = Account {
            participant: participant.clone(),
            free: endowment,
            locked: CreditAmount::ZERO,
        };
        self.accounts.insert(participant.clone(), account.clone());
        self.endowed = endowed;
        self.record(
            EntryKind::Endowment,
            Party::Mint,
            Party::Participant(participant),
            endowment,
            None,
        );
        Ok(account)
    }

    /// Lock `amount` behind `task`.
    ///
    /// Participant-funded locks move credits from the requester's free balance;
    /// parent advances move them out of the parent task's open escrow.
    pub fn lock_bounty(
        &mut self,
        requester: &ParticipantId,
        task: TaskId,
        amount: CreditAmount,
        source: EscrowSource,
    ) -> Result<Escrow> {
        if self.task_escrows.contains_key(&task) {
            return Err(Error::EscrowAlreadyExists(task));
        }
        let account = self
            .accounts
            .get(requester)
            .ok_or_else(|| Error::UnknownParticipant(requester.clone()))?;
        let funder = match source {
            EscrowSource::ParticipantFunded => {
                account.free.checked_sub(amount)?;
                account.locked.checked_add(amount)?;
                Party::Participant(requester.clone())
            }
            EscrowSource::ParentAdvance { parent } => {
                let parent_escrow = self.escrow_for(parent).ok_or(Error::UnknownTask(parent))?;
                if parent_escrow.status != EscrowStatus::Open {
                    return Err(Error::EscrowNotOpen(parent));
                }
                parent_escrow.balance.checked_sub(amount)?;
                Party::Escrow(parent_escrow.id)
            }
        };

        let id = EscrowId(self.escrows.len() as u64 + 1);
        match &funder {
            Party::Participant(p) => {
                let account = self.accounts.get_mut(p).expect("checked above");
                account.free = account.free.checked_sub(amount)?;
                account.locked = account.locked.checked_add(amount)?;
            }
            Party::Escrow(parent) => self.escrow_debit(*parent, amount)?,
            Party::Hold(_) | Party::Mint => unreachable!("escrows are funded by participants or escrows"),
        }
        let escrow = Escrow {
            id,
            task,
            funder: funder.clone(),
            amount,
            balance: amount,
            source,
            status: EscrowStatus::Open,
        };
        self.escrows.insert(id, escrow.clone());
        self.task_escrows.insert(task, id);
        self.record(EntryKind::Lock, funder, Party::Escrow(id), amount, Some(task));
        Ok(escrow)
    }

    /// Accept a delegated subtask: park its escrow balance in a hold for `beneficiary`.
    pub fn hold_task(&mut self, task: TaskId, beneficiary: &ParticipantId) -> Result<Hold> {
        let escrow = self.open_escrow(task)?;
        let (escrow_id, balance) = (escrow.id, escrow.balance);
        self.escrow_debit(escrow_id, balance)?;
        self.escrows.get_mut(&escrow_id).expect("exists").status = EscrowStatus::Settled;
        let hold = Hold {
            id: HoldId(self.holds.len() as u64 + 1),
            task,
            escrow: escrow_id,
            beneficiary: beneficiary.clone(),
            amount: balance,
            status: HoldStatus::Held,
        };
        self.holds.insert(hold.id, hold.clone());
        self.record(
            EntryKind::Hold,
            Party::Escrow(escrow_id),
            Party::Hold(hold.id),
            balance,
            Some(task),
        );
        Ok(hold)
    }

    /// Close `task`'s escrow.
    ///
    /// `subtree` lists the task's descendants; their outstanding holds are
    /// released to their beneficiaries on acceptance and folded back into this
    /// escrow otherwise. Returns the settled bounty: the escrow's full amount
    /// when accepted, zero otherwise.
    pub fn settle_task(
        &mut self,
        task: TaskId,
        outcome: AcceptanceOutcome,
        payee: &ParticipantId,
        subtree: &[TaskId],
    ) -> Result<CreditAmount> {
        let escrow = self.open_escrow(task)?;
        let escrow_id = escrow.id;
        let bounty = escrow.amount;
        if outcome == AcceptanceOutcome::Accepted && !self.accounts.contains_key(payee) {
            return Err(Error::UnknownParticipant(payee.clone()));
        }
        let held: Vec<HoldId> = self
            .holds
            .values()
            .filter(|h| h.status == HoldStatus::Held && subtree.contains(&h.task))
            .map(|h| h.id)
            .collect();

        match outcome {
            AcceptanceOutcome::Accepted => {
                let mut paid = CreditAmount::ZERO;
                for hold_id in held {
                    paid = paid.checked_add(self.release_hold(hold_id)?)?;
                }
                let balance = self.escrows[&escrow_id].balance;
                self.escrow_debit(escrow_id, balance)?;
                self.credit_free(payee, balance)?;
                self.escrows.get_mut(&escrow_id).expect("exists").status = EscrowStatus::Settled;
                self.record(
                    EntryKind::Settle,
                    Party::Escrow(escrow_id),
                    Party::Participant(payee.clone()),
                    balance,
                    Some(task),
                );
                paid = paid.checked_add(balance)?;
                debug_assert_eq!(paid, bounty, "settlement must pay out the whole bounty");
                Ok(bounty)
            }
            AcceptanceOutcome::Rejected => {
                for hold_id in held {
                    self.refund_hold(hold_id, escrow_id, task)?;
                }
                let escrow = &self.escrows[&escrow_id];
                let (balance, funder) = (escrow.balance, escrow.funder.clone());
                self.escrow_debit(escrow_id, balance)?;
                match &funder {
                    Party::Participant(p) => self.credit_free(p, balance)?,
                    Party::Escrow(parent) => self.escrow_credit(*parent, balance)?,
                    Party::Hold(_) | Party::Mint => unreachable!("escrow funder"),
                }
                self.escrows.get_mut(&escrow_id).expect("exists").status = EscrowStatus::Refunded;
                self.record(
                    EntryKind::Refund,
                    Party::Escrow(escrow_id),
                    funder,
                    balance,
                    Some(task),
                );
                Ok(CreditAmount::ZERO)
            }
        }
    }

    /// Bind a reward schedule to a newly admitted skill.
    pub fn register_skill(
        &mut self,
        skill: AssetId,
        creator: ParticipantId,
        schedule: RewardSchedule,
    ) {
        self.rewards.entry(skill.clone()).or_insert(SkillReward {
            skill,
            creator,
            schedule,
            paid_count: 0,
            earned: CreditAmount::ZERO,
            unpaid_count: 0,
        });
    }

    /// Fee the next paid reuse of `skill` would cost.
    pub fn next_fee(&self, skill: &AssetId) -> Result<CreditAmount> {
        let reward = self
            .rewards
            .get(skill)
            .ok_or_else(|| Error::UnknownSkill(skill.clone()))?;
        Ok(reward.schedule.fee(reward.paid_count + 1))
    }

    /// Pay the creator of `skill` for one validated reuse.
    ///
    /// On `InsufficientCredits` nothing moves, but the skill's unpaid counter
    /// is bumped so the shortfall stays visible.
    pub fn accrue_reuse_reward(
        &mut self,
        skill: &AssetId,
        invocation: &InvocationRecord,
    ) -> Result<CreditAmount> {
        if !invocation.success {
            return Err(Error::InvocationNotValidated(skill.clone()));
        }
        let reward = self
            .rewards
            .get(skill)
            .ok_or_else(|| Error::UnknownSkill(skill.clone()))?;
        let ordinal = reward.paid_count + 1;
        let fee = reward.schedule.fee(ordinal);
        let creator = reward.creator.clone();
        if !self.accounts.contains_key(&creator) {
            return Err(Error::UnknownParticipant(creator));
        }
        let source = match self.funding {
            RewardFunding::Fee => {
                let payer = self
                    .accounts
                    .get(&invocation.payer)
                    .ok_or_else(|| Error::UnknownParticipant(invocation.payer.clone()))?;
                if let Err(e) = payer.free.checked_sub(fee) {
                    self.rewards.get_mut(skill).expect("exists").unpaid_count += 1;
                    return Err(e);
                }
                let payer = self.accounts.get_mut(&invocation.payer).expect("exists");
                payer.free = payer.free.checked_sub(fee)?;
                Party::Participant(invocation.payer.clone())
            }
            RewardFunding::Mint => {
                self.minted = self.minted.checked_add(fee)?;
                Party::Mint
            }
        };
        self.credit_free(&creator, fee)?;
        let reward = self.rewards.get_mut(skill).expect("exists");
        reward.paid_count = ordinal;
        reward.earned = reward.earned.checked_add(fee)?;
        let seq = self.entries.len() as u64 + 1;
        self.entries.push(LedgerEntry {
            seq,
            kind: EntryKind::ReuseFee,
            debit: source,
            credit: Party::Participant(creator),
            amount: fee,
            task: Some(invocation.task),
            skill: Some(skill.clone()),
            reuse_ordinal: Some(ordinal),
        });
        Ok(fee)
    }

    pub fn balance_report(&self) -> LedgerSnapshot {
        let sum = |it: &mut dyn Iterator<Item = u64>| CreditAmount(it.sum());
        let total_free = sum(&mut self.accounts.values().map(|a| a.free.0));
        let total_locked = sum(&mut self.accounts.values().map(|a| a.locked.0));
        let open_escrows: Vec<Escrow> = self
            .escrows
            .values()
            .filter(|e| e.status == EscrowStatus::Open)
            .cloned()
            .collect();
        let open_holds: Vec<Hold> = self
            .holds
            .values()
            .filter(|h| h.status == HoldStatus::Held)
            .cloned()
            .collect();
        let advances = open_escrows
            .iter()
            .filter(|e| !matches!(e.funder, Party::Participant(_)))
            .map(|e| e.balance.0);
        let total_platform_held =
            CreditAmount(advances.sum::<u64>() + open_holds.iter().map(|h| h.amount.0).sum::<u64>());
        let total = CreditAmount(total_free.0 + total_locked.0 + total_platform_held.0);
        LedgerSnapshot {
            accounts: self.accounts.values().cloned().collect(),
            open_escrows,
            open_holds,
            total_free,
            total_locked,
            total_platform_held,
            total,
            endowed: self.endowed,
            minted: self.minted,
            conserved: total.0 == self.endowed.0 + self.minted.0,
        }
    }

    fn open_escrow(&self, task: TaskId) -> Result<&Escrow> {
        match self.escrow_for(task) {
            Some(e) if e.status == EscrowStatus::Open => Ok(e),
            _ => Err(Error::EscrowNotOpen(task)),
        }
    }

    fn release_hold(&mut self, id: HoldId) -> Result<CreditAmount> {
        let hold = self.holds.get_mut(&id).expect("hold exists");
        hold.status = HoldStatus::Released;
        let (amount, beneficiary, task) = (hold.amount, hold.beneficiary.clone(), hold.task);
        self.credit_free(&beneficiary, amount)?;
        self.record(
            EntryKind::Release,
            Party::Hold(id),
            Party::Participant(beneficiary),
            amount,
            Some(task),
        );
        Ok(amount)
    }

    fn refund_hold(&mut self, id: HoldId, into: EscrowId, task: TaskId) -> Result<()> {
        let hold = self.holds.get_mut(&id).expect("hold exists");
        hold.status = HoldStatus::Refunded;
        let amount = hold.amount;
        self.escrow_credit(into, amount)?;
        self.record(
            EntryKind::Refund,
            Party::Hold(id),
            Party::Escrow(into),
            amount,
            Some(task),
        );
        Ok(())
    }

    fn credit_free(&mut self, participant: &ParticipantId, amount: CreditAmount) -> Result<()> {
        let account = self
            .accounts
            .get_mut(participant)
            .ok_or_else(|| Error::UnknownParticipant(participant.clone()))?;
        account.free = account.free.checked_add(amount)?;
        Ok(())
    }

    fn escrow_debit(&mut self, id: EscrowId, amount: CreditAmount) -> Result<()> {
        let escrow = self.escrows.get_mut(&id).expect("escrow exists");
        escrow.balance = escrow.balance.checked_sub(amount)?;
        if let Party::Participant(p) = &escrow.funder {
            let account = self.accounts.get_mut(p).expect("funder has an account");
            account.locked = account.locked.checked_sub(amount)?;
        }
        Ok(())
    }

    fn escrow_credit(&mut self, id: EscrowId, amount: CreditAmount) -> Result<()> {
        let escrow = self.escrows.get_mut(&id).expect("escrow exists");
        escrow.balance = escrow.balance.checked_add(amount)?;
        if let Party::Participant(p) = &escrow.funder {
            let account = self.accounts.get_mut(p).expect("funder has an account");
            account.locked = account.locked.checked_add(amount)?;
        }
        Ok(())
    }

    fn record(
        &mut self,
        kind: EntryKind,
        debit: Party,
        credit: Party,
        amount: CreditAmount,
        task: Option<TaskId>,
    ) {
        let seq = self.entries.len() as u64 + 1;
        self.entries.push(LedgerEntry {
            seq,
            kind,
            debit,
            credit,
            amount,
            task,
            skill: None,
            reuse_ordinal: None,
        });
    }
}

/// Result of rebuilding balances from raw ledger entries.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EntryAudit {
    pub balances: BTreeMap<Party, u64>,
    pub endowed: u64,
    pub minted_rewards: u64,
    /// Human-readable description of every violation found.
    pub violations: Vec<String>,
}

impl EntryAudit {
    pub fn total_held(&self) -> u64 {
        self.balances
            .iter()
            .filter(|(p, _)| **p != Party::Mint)
            .map(|(_, v)| *v)
            .sum()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replay a stream of ledger entries with no knowledge of the kernel.
///
/// Flags any entry that would drive a non-mint party negative, any sequence
/// gap, and any mismatch between the value held and the value that entered
/// through the mint.
pub fn audit_entries<'a>(entries: impl IntoIterator<Item = &'a LedgerEntry>) -> EntryAudit {
    let mut audit = EntryAudit::default();
    let mut expected_seq = 1;
    for entry in entries {
        if entry.seq != expected_seq {
            audit
                .violations
                .push(format!("entry seq {} where {} was expected", entry.seq, expected_seq));
        }
        expected_seq = entry.seq + 1;
        if entry.debit == entry.credit {
            audit
                .violations
                .push(format!("entry {} debits and credits {}", entry.seq, entry.debit));
        }
        if entry.debit == Party::Mint {
            match entry.kind {
                EntryKind::Endowment => audit.endowed += entry.amount.0,
                EntryKind::ReuseFee => audit.minted_rewards += entry.amount.0,
                other => audit
                    .violations
                    .push(format!("entry {} mints credits via {other:?}", entry.seq)),
            }
        } else {
            let from = audit.balances.entry(entry.debit.clone()).or_default();
            if *from < entry.amount.0 {
                audit.violations.push(format!(
                    "entry {} moves {} out of {} which holds only {}",
                    entry.seq, entry.amount, entry.debit, from
                ));
                *from = 0;
            } else {
                *from -= entry.amount.0;
            }
        }
        *audit.balances.entry(entry.credit.clone()).or_default() += entry.amount.0;
    }
    let held = audit.total_held();
    if held != audit.endowed + audit.minted_rewards {
        audit.violations.push(format!(
            "held total {held} differs from endowed {} + minted {}",
            audit.endowed, audit.minted_rewards
        ));
    }
    audit
}
