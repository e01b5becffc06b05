//! Task lifecycle: publication, claiming, budgeted decomposition, delivery and review.
//!
//! ```text
//! Published ──claim──▶ Claimed ──submit──▶ InReview ──accept──▶ Accepted
//!     │                   ▲                    │
//!     │                   └──re-claim── Rejected ◀──reject──┤
//!     ▼                                        └──reject(final)──▶ FinallyRejected
//! Cancelled
//! ```
//!
//! [`TaskBook`] only checks and records transitions. Credit movements that
//! accompany them are driven by the kernel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::ids::{AssetId, ParticipantId, TaskId};
use crate::ledger::CreditAmount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Published,
    Claimed,
    InReview,
    Accepted,
    Rejected,
    FinallyRejected,
    Cancelled,
}

impl TaskState {
    pub const ALL: [TaskState; 7] = [
        TaskState::Published,
        TaskState::Claimed,
        TaskState::InReview,
        TaskState::Accepted,
        TaskState::Rejected,
        TaskState::FinallyRejected,
        TaskState::Cancelled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Published => "Published",
            TaskState::Claimed => "Claimed",
            TaskState::InReview => "InReview",
            TaskState::Accepted => "Accepted",
            TaskState::Rejected => "Rejected",
            TaskState::FinallyRejected => "FinallyRejected",
            TaskState::Cancelled => "Cancelled",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TaskState::Accepted | TaskState::FinallyRejected | TaskState::Cancelled
        )
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskState {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        TaskState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown task state `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deliverable {
    pub id: u64,
    pub payload_digest: String,
    pub payload_uri: String,
    pub submitted_by: ParticipantId,
    /// References to process evidence: task states, selected skills,
    /// execution traces, intermediate results.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub reviewer: ParticipantId,
    pub verdict: Verdict,
    pub feedback: String,
    /// Logical time of the review event.
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub intent: String,
    pub requester: ParticipantId,
    pub bounty: CreditAmount,
    pub state: TaskState,
    pub claimant: Option<ParticipantId>,
    pub parent: Option<TaskId>,
    pub plan: Vec<TaskId>,
    pub deliverable: Option<Deliverable>,
    pub review_history: Vec<ReviewRecord>,
    pub used_skills: BTreeSet<AssetId>,
    pub consulted_assets: BTreeSet<AssetId>,
}

/// How a payload string in a command is encoded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadEncoding {
    #[default]
    Utf8,
    Base64,
}

impl PayloadEncoding {
    pub fn decode(self, payload: &str) -> Result<Vec<u8>> {
        match self {
            PayloadEncoding::Utf8 => Ok(payload.as_bytes().to_vec()),
            PayloadEncoding::Base64 => base64::engine::general_purpose::STANDARD
                .decode(payload)
                .map_err(|e| Error::MalformedCommand(format!("payload is not base64: {e}"))),
        }
    }
}

/// Content-addressed payload storage (sha256 hex → bytes).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BlobStore {
    blobs: BTreeMap<String, Vec<u8>>,
}

impl BlobStore {
    /// Store `bytes`, returning `(digest, uri)`.
    pub fn put(&mut self, bytes: Vec<u8>) -> (String, String) {
        let digest = sha256_hex(&bytes);
        let uri = format!("blob://sha256/{digest}");
        self.blobs.entry(digest.clone()).or_insert(bytes);
        (digest, uri)
    }

    pub fn get(&self, digest: &str) -> Option<&[u8]> {
        self.blobs.get(digest).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    /// Digests whose stored bytes no longer hash to their key.
    pub fn corrupted(&self) -> Vec<String> {
        self.blobs
            .iter()
            .filter(|(digest, bytes)| sha256_hex(bytes) != **digest)
            .map(|(digest, _)| digest.clone())
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn tamper(&mut self, digest: &str, bytes: Vec<u8>) {
        self.blobs.insert(digest.to_owned(), bytes);
    }
}

impl Serialize for BlobStore {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let engine = base64::engine::general_purpose::STANDARD;
        let encoded: BTreeMap<&String, String> =
            self.blobs.iter().map(|(k, v)| (k, engine.encode(v))).collect();
        encoded.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BlobStore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let engine = base64::engine::general_purpose::STANDARD;
        let encoded = BTreeMap::<String, String>::deserialize(deserializer)?;
        let blobs = encoded
            .into_iter()
            .map(|(k, v)| engine.decode(v).map(|b| (k, b)))
            .collect::<std::result::Result<_, _>>()
            .map_err(serde::de::Error::custom)?;
        Ok(BlobStore { blobs })
    }
}

/// Funding route decided for a new task's escrow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Funding {
    Requester,
    Parent(TaskId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBook {
    tasks: BTreeMap<TaskId, Task>,
    deliverables: u64,
}

impl TaskBook {
    pub fn get(&self, id: TaskId) -> Result<&Task> {
        self.tasks.get(&id).ok_or(Error::UnknownTask(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn next_id(&self) -> TaskId {
        TaskId(self.tasks.len() as u64 + 1)
    }

    /// Sum of bounties over every subtask ever published under `id`.
    pub fn delegated(&self, id: TaskId) -> Result<CreditAmount> {
        let task = self.get(id)?;
        let total = task
            .plan
            .iter()
            .map(|c| self.tasks[c].bounty.0)
            .try_fold(0u64, |acc, b| acc.checked_add(b))
            .ok_or(Error::Overflow)?;
        Ok(CreditAmount(total))
    }

    /// Check that `requester` may publish a task with `bounty` under `parent`.
    pub fn check_publish(
        &self,
        requester: &ParticipantId,
        bounty: CreditAmount,
        parent: Option<TaskId>,
    ) -> Result<Funding> {
        let Some(parent_id) = parent else {
            return Ok(Funding::Requester);
        };
        self.check_delegation(parent_id, requester, bounty)?;
        Ok(Funding::Parent(parent_id))
    }

    /// Claimant, state and budget checks for delegating `additional` more
    /// credits out of `parent`.
    pub fn check_delegation(
        &self,
        parent: TaskId,
        caller: &ParticipantId,
        additional: CreditAmount,
    ) -> Result<()> {
        let task = self.get(parent)?;
        match &task.claimant {
            None => return Err(Error::ParentNotClaimed(parent)),
            Some(c) if c != caller => return Err(Error::NotClaimant(caller.clone(), parent)),
            Some(_) => {}
        }
        if task.state != TaskState::Claimed {
            return Err(Error::ParentNotClaimed(parent));
        }
        let requested = self.delegated(parent)?.checked_add(additional)?;
        if requested > task.bounty {
            return Err(Error::BudgetExceeded {
                requested: requested.0,
                budget: task.bounty.0,
            });
        }
        Ok(())
    }

    /// Record a freshly published task. The caller has already run
    /// [`check_publish`](Self::check_publish) and locked the escrow.
    pub fn insert_published(
        &mut self,
        requester: ParticipantId,
        intent: String,
        bounty: CreditAmount,
        parent: Option<TaskId>,
    ) -> TaskId {
        let id = self.next_id();
        self.tasks.insert(
            id,
            Task {
                id,
                intent,
                requester,
                bounty,
                state: TaskState::Published,
                claimant: None,
                parent,
                plan: Vec::new(),
                deliverable: None,
                review_history: Vec::new(),
                used_skills: BTreeSet::new(),
                consulted_assets: BTreeSet::new(),
            },
        );
        if let Some(p) = parent {
            self.tasks.get_mut(&p).expect("parent checked").plan.push(id);
        }
        id
    }

    /// A published task may be claimed by anyone but its requester. A task
    /// sent back for revision may only be re-claimed by its current claimant.
    pub fn check_claim(&self, id: TaskId, solver: &ParticipantId) -> Result<()> {
        let task = self.get(id)?;
        if &task.requester == solver {
            return Err(Error::SelfClaim(solver.clone()));
        }
        match task.state {
            TaskState::Published => Ok(()),
            TaskState::Rejected if task.claimant.as_ref() == Some(solver) => Ok(()),
            _ => Err(Error::TaskNotClaimable(id)),
        }
    }

    pub fn claim(&mut self, id: TaskId, solver: &ParticipantId) -> Result<&Task> {
        self.check_claim(id, solver)?;
        let task = self.tasks.get_mut(&id).expect("checked");
        task.state = TaskState::Claimed;
        task.claimant = Some(solver.clone());
        Ok(task)
    }

    /// The caller must be the claimant of a task in `Claimed`.
    pub fn check_working(&self, id: TaskId, caller: &ParticipantId) -> Result<&Task> {
        let task = self.get(id)?;
        if task.claimant.as_ref() != Some(caller) {
            return Err(Error::NotClaimant(caller.clone(), id));
        }
        if task.state != TaskState::Claimed {
            return Err(Error::TaskNotClaimed(id));
        }
        Ok(task)
    }

    pub fn check_submit(&self, id: TaskId, caller: &ParticipantId) -> Result<()> {
        let task = self.check_working(id, caller)?;
        if task.plan.iter().any(|c| !self.tasks[c].state.is_terminal()) {
            return Err(Error::OpenSubtasks(id));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn submit(
        &mut self,
        id: TaskId,
        caller: &ParticipantId,
        payload_digest: String,
        payload_uri: String,
        used_skills: BTreeSet<AssetId>,
        consulted: BTreeSet<AssetId>,
        evidence: Vec<String>,
    ) -> Result<&Task> {
        self.check_submit(id, caller)?;
        self.deliverables += 1;
        let deliverable_id = self.deliverables;
        let task = self.tasks.get_mut(&id).expect("checked");
        task.deliverable = Some(Deliverable {
            id: deliverable_id,
            payload_digest,
            payload_uri,
            submitted_by: caller.clone(),
            evidence,
        });
        task.used_skills.extend(used_skills);
        task.consulted_assets.extend(consulted);
        task.state = TaskState::InReview;
        Ok(task)
    }

    /// Note a skill invoked while working on the task.
    pub fn note_skill(&mut self, id: TaskId, skill: AssetId) {
        if let Some(task) = self.tasks.get_mut(&id) {
            task.used_skills.insert(skill);
        }
    }

    /// Only the task's requester reviews it; for a subtask that is the
    /// claimant who delegated it.
    pub fn check_review(&self, id: TaskId, reviewer: &ParticipantId) -> Result<()> {
        let task = self.get(id)?;
        if task.state != TaskState::InReview {
            return Err(Error::TaskNotInReview(id));
        }
        if &task.requester != reviewer {
            return Err(Error::NotAuthorizedReviewer(reviewer.clone(), id));
        }
        Ok(())
    }

    pub fn review(
        &mut self,
        id: TaskId,
        reviewer: &ParticipantId,
        verdict: Verdict,
        feedback: String,
        final_: bool,
        at: u64,
    ) -> Result<&Task> {
        self.check_review(id, reviewer)?;
        let task = self.tasks.get_mut(&id).expect("checked");
        task.review_history.push(ReviewRecord {
            reviewer: reviewer.clone(),
            verdict,
            feedback,
            at,
        });
        task.state = match (verdict, final_) {
            (Verdict::Accept, _) => TaskState::Accepted,
            (Verdict::Reject, false) => TaskState::Rejected,
            (Verdict::Reject, true) => TaskState::FinallyRejected,
        };
        Ok(task)
    }

    pub fn check_cancel(&self, id: TaskId, by: &ParticipantId) -> Result<()> {
        let task = self.get(id)?;
        if &task.requester != by {
            return Err(Error::NotRequester(by.clone(), id));
        }
        if task.state != TaskState::Published {
            return Err(Error::TaskNotCancellable(id));
        }
        Ok(())
    }

    pub fn cancel(&mut self, id: TaskId, by: &ParticipantId) -> Result<&Task> {
        self.check_cancel(id, by)?;
        let task = self.tasks.get_mut(&id).expect("checked");
        task.state = TaskState::Cancelled;
        Ok(task)
    }

    /// M_t: the claimant plus whoever claimed a task in the plan.
    pub fn participants_of(&self, id: TaskId) -> Result<BTreeSet<ParticipantId>> {
        let task = self.get(id)?;
        let claimant = task.claimant.clone().ok_or(Error::TaskNotClaimed(id))?;
        let mut members = BTreeSet::from([claimant]);
        members.extend(task.plan.iter().filter_map(|c| self.tasks[c].claimant.clone()));
        Ok(members)
    }

    /// Every task below `id` in the delegation tree, depth first.
    pub fn descendants(&self, id: TaskId) -> Vec<TaskId> {
        let mut out = Vec::new();
        let mut stack: Vec<TaskId> = self
            .tasks
            .get(&id)
            .map(|t| t.plan.iter().rev().copied().collect())
            .unwrap_or_default();
        while let Some(next) = stack.pop() {
            out.push(next);
            stack.extend(self.tasks[&next].plan.iter().rev().copied());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> ParticipantId {
        ParticipantId::from(s)
    }

    fn book_with_claimed_root(bounty: u64) -> TaskBook {
        let mut book = TaskBook::default();
        let id = book.insert_published(p("req"), "root".into(), CreditAmount(bounty), None);
        book.claim(id, &p("lead")).unwrap();
        book
    }

    #[test]
    fn state_names_are_canonical() {
        let names: Vec<String> = TaskState::ALL
            .iter()
            .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_owned())
            .collect();
        assert_eq!(
            names,
            [
                "Published",
                "Claimed",
                "InReview",
                "Accepted",
                "Rejected",
                "FinallyRejected",
                "Cancelled"
            ]
        );
        for s in TaskState::ALL {
            assert_eq!(s.as_str().parse::<TaskState>().unwrap(), s);
        }
    }

    #[test]
    fn claim_rules() {
        let mut book = TaskBook::default();
        let id = book.insert_published(p("req"), "x".into(), CreditAmount(5), None);
        assert_eq!(book.check_claim(id, &p("req")), Err(Error::SelfClaim(p("req"))));
        book.claim(id, &p("a")).unwrap();
        assert_eq!(book.get(id).unwrap().claimant, Some(p("a")));
        assert_eq!(book.check_claim(id, &p("b")), Err(Error::TaskNotClaimable(id)));
    }

    #[test]
    fn budget_is_enforced_at_every_mutation() {
        let mut book = book_with_claimed_root(50);
        let root = TaskId(1);
        for _ in 0..2 {
            book.check_publish(&p("lead"), CreditAmount(20), Some(root)).unwrap();
            book.insert_published(p("lead"), "sub".into(), CreditAmount(20), Some(root));
        }
        assert_eq!(
            book.check_publish(&p("lead"), CreditAmount(15), Some(root)),
            Err(Error::BudgetExceeded { requested: 55, budget: 50 })
        );
        book.check_publish(&p("lead"), CreditAmount(10), Some(root)).unwrap();
        assert_eq!(
            book.check_publish(&p("other"), CreditAmount(1), Some(root)),
            Err(Error::NotClaimant(p("other"), root))
        );
    }

    #[test]
    fn publishing_under_unclaimed_parent_fails() {
        let mut book = TaskBook::default();
        let id = book.insert_published(p("req"), "x".into(), CreditAmount(5), None);
        assert_eq!(
            book.check_publish(&p("lead"), CreditAmount(1), Some(id)),
            Err(Error::ParentNotClaimed(id))
        );
    }

    #[test]
    fn participants_include_only_claimed_children() {
        let mut book = book_with_claimed_root(50);
        let root = TaskId(1);
        assert_eq!(book.participants_of(root).unwrap(), BTreeSet::from([p("lead")]));
        let a = book.insert_published(p("lead"), "a".into(), CreditAmount(10), Some(root));
        let b = book.insert_published(p("lead"), "b".into(), CreditAmount(10), Some(root));
        assert_eq!(book.participants_of(root).unwrap(), BTreeSet::from([p("lead")]));
        book.claim(a, &p("s1")).unwrap();
        book.claim(b, &p("s2")).unwrap();
        assert_eq!(
            book.participants_of(root).unwrap(),
            BTreeSet::from([p("lead"), p("s1"), p("s2")])
        );
        let mut fresh = TaskBook::default();
        let id = fresh.insert_published(p("req"), "x".into(), CreditAmount(1), None);
        assert_eq!(fresh.participants_of(id), Err(Error::TaskNotClaimed(id)));
    }

    #[test]
    fn revision_loop() {
        let mut book = book_with_claimed_root(50);
        let id = TaskId(1);
        let lead = p("lead");
        book.submit(id, &lead, "d".into(), "u".into(), BTreeSet::new(), BTreeSet::new(), vec![])
            .unwrap();
        assert_eq!(
            book.check_review(id, &lead),
            Err(Error::NotAuthorizedReviewer(lead.clone(), id))
        );
        book.review(id, &p("req"), Verdict::Reject, "thin".into(), false, 3).unwrap();
        assert_eq!(book.get(id).unwrap().state, TaskState::Rejected);
        assert_eq!(book.check_claim(id, &p("x")), Err(Error::TaskNotClaimable(id)));
        book.claim(id, &lead).unwrap();
        book.submit(id, &lead, "d2".into(), "u2".into(), BTreeSet::new(), BTreeSet::new(), vec![])
            .unwrap();
        let task = book.review(id, &p("req"), Verdict::Accept, "ok".into(), false, 5).unwrap();
        assert_eq!(task.state, TaskState::Accepted);
        assert_eq!(task.review_history.len(), 2);
        assert_eq!(book.check_claim(id, &lead), Err(Error::TaskNotClaimable(id)));
    }

    #[test]
    fn submit_waits_for_subtasks() {
        let mut book = book_with_claimed_root(50);
        let root = TaskId(1);
        let child = book.insert_published(p("lead"), "a".into(), CreditAmount(10), Some(root));
        assert_eq!(book.check_submit(root, &p("lead")), Err(Error::OpenSubtasks(root)));
        book.cancel(child, &p("lead")).unwrap();
        book.check_submit(root, &p("lead")).unwrap();
    }

    #[test]
    fn cancel_rules() {
        let mut book = TaskBook::default();
        let id = book.insert_published(p("req"), "x".into(), CreditAmount(5), None);
        assert_eq!(book.check_cancel(id, &p("x")), Err(Error::NotRequester(p("x"), id)));
        book.claim(id, &p("a")).unwrap();
        assert_eq!(book.check_cancel(id, &p("req")), Err(Error::TaskNotCancellable(id)));
    }

    #[test]
    fn descendants_walk_the_tree() {
        let mut book = book_with_claimed_root(50);
        let root = TaskId(1);
        let a = book.insert_published(p("lead"), "a".into(), CreditAmount(10), Some(root));
        book.claim(a, &p("s1")).unwrap();
        let aa = book.insert_published(p("s1"), "aa".into(), CreditAmount(5), Some(a));
        let b = book.insert_published(p("lead"), "b".into(), CreditAmount(10), Some(root));
        assert_eq!(book.descendants(root), vec![a, aa, b]);
        assert!(book.descendants(b).is_empty());
    }

    #[test]
    fn blob_store_is_content_addressed() {
        let mut blobs = BlobStore::default();
        let (digest, uri) = blobs.put(b"video bytes".to_vec());
        assert_eq!(uri, format!("blob://sha256/{digest}"));
        assert_eq!(blobs.get(&digest), Some(&b"video bytes"[..]));
        assert!(blobs.corrupted().is_empty());
        let json = serde_json::to_string(&blobs).unwrap();
        let back: BlobStore = serde_json::from_str(&json).unwrap();
        assert_eq!(back, blobs);
        blobs.tamper(&digest, b"other".to_vec());
        assert_eq!(blobs.corrupted(), vec![digest]);
    }
}
