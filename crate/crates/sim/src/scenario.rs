//! Scenario files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "case1",
//!   "seed": 7,
//!   "mode": "fee",
//!   "rounds": 0,
//!   "participants": [{"id": "brand-team", "kind": "human", "endowment": 100}],
//!   "script": [
//!     {"action": {"actor": "brand-team", "command": {"type": "publish_task", "intent": "...", "bounty": 50}}},
//!     {"policy": {"rounds": 20, "task_arrival_rate": 0.3}}
//!   ]
//! }
//! ```
//!
//! Actions are kernel commands verbatim. A policy block generates commands
//! from the scenario's random stream for a number of rounds.

use std::path::Path;

use bazaar_core::kernel::Command;
use bazaar_core::{CreditAmount, ParticipantId, ParticipantKind, RewardFunding};
use serde::{Deserialize, Serialize};

use crate::SimError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: RewardFunding,
    pub participants: Vec<ParticipantSpec>,
    #[serde(default)]
    pub script: Vec<Step>,
    /// Rounds for policy blocks that do not set their own.
    #[serde(default)]
    pub rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantSpec {
    pub id: ParticipantId,
    pub kind: ParticipantKind,
    pub endowment: CreditAmount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Action(Action),
    Policy(Policy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub actor: ParticipantId,
    pub command: Command,
    /// Error code this action is expected to fail with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Parameters of the generated economy. Probabilities are per round and
/// per eligible item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policy {
    pub rounds: Option<u64>,
    /// Chance that a participant posts a task in a round.
    pub task_arrival_rate: f64,
    pub max_bounty: u64,
    /// Chance that a published task gets claimed in a round.
    pub claim_probability: f64,
    /// Chance that a fresh top-level claim is split into subtasks.
    pub decomposition_probability: f64,
    /// Chance that a solver invokes the top-scored skill rather than a random one.
    pub skill_reuse_preference: f64,
    /// Skill invocations per attempt.
    pub invocations_per_task: u32,
    /// Chance that a reviewer rejects a submission.
    pub review_strictness: f64,
    /// Rejections after which the next rejection is final.
    pub max_revisions: u32,
    /// Chance that an accepted task yields a candidate skill.
    pub proposal_probability: f64,
    /// Chance that a candidate's test vectors are correct.
    pub candidate_quality: f64,
    /// Per-reuse reward declared by new skills.
    pub skill_alpha: u64,
    /// Bounds of the per-skill success probability drawn at admission.
    pub skill_success: (f64, f64),
    /// Bounds of simulated invocation latency.
    pub latency_ms: (u64, u64),
}

impl Default for Policy {
    fn default() -> Self {
        Policy {
            rounds: None,
            task_arrival_rate: 0.3,
            max_bounty: 40,
            claim_probability: 0.7,
            decomposition_probability: 0.15,
            skill_reuse_preference: 0.7,
            invocations_per_task: 1,
            review_strictness: 0.25,
            max_revisions: 2,
            proposal_probability: 0.5,
            candidate_quality: 0.85,
            skill_alpha: 1,
            skill_success: (0.6, 0.98),
            latency_ms: (50, 3000),
        }
    }
}

impl Policy {
    pub fn check(&self) -> Result<(), String> {
        let probs = [
            ("task_arrival_rate", self.task_arrival_rate),
            ("claim_probability", self.claim_probability),
            ("decomposition_probability", self.decomposition_probability),
            ("skill_reuse_preference", self.skill_reuse_preference),
            ("review_strictness", self.review_strictness),
            ("proposal_probability", self.proposal_probability),
            ("candidate_quality", self.candidate_quality),
            ("skill_success.0", self.skill_success.0),
            ("skill_success.1", self.skill_success.1),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.skill_success.0 > self.skill_success.1 || self.latency_ms.0 > self.latency_ms.1 {
            return Err("range bounds are reversed".into());
        }
        Ok(())
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::ScenarioParse(e.to_string()))?;
        scenario.check()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Scenario::parse(&text)
    }

    fn check(&self) -> Result<(), SimError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(SimError::ScenarioParse(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.participants {
            if !seen.insert(&p.id) {
                return Err(SimError::ScenarioParse(format!("participant {} listed twice", p.id)));
            }
        }
        for step in &self.script {
            if let Step::Policy(policy) = step {
                policy.check().map_err(SimError::ScenarioParse)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_participants_rejected() {
        let text = r#"{"schema_version":1,"name":"x","participants":[
            {"id":"a","kind":"human","endowment":1},{"id":"a","kind":"agent","endowment":2}]}"#;
        assert!(matches!(Scenario::parse(text), Err(SimError::ScenarioParse(_))));
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let text = r#"{"schema_version":9,"name":"x","participants":[]}"#;
        assert!(Scenario::parse(text).is_err());
    }

    #[test]
    fn policy_defaults_fill_in() {
        let text = r#"{"schema_version":1,"name":"x","participants":[],
            "script":[{"policy":{"rounds":3,"review_strictness":0.5}}]}"#;
        let s = Scenario::parse(text).unwrap();
        let Step::Policy(p) = &s.script[0] else { panic!() };
        assert_eq!(p.rounds, Some(3));
        assert_eq!(p.review_strictness, 0.5);
        assert_eq!(p.max_revisions, Policy::default().max_revisions);
    }
}
