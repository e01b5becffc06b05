//! Scenario execution.
//!
//! The runner owns the only random stream. The kernel sees nothing but
//! commands, so a run is fully determined by `(scenario, seed)`.

use std::collections::{BTreeMap, BTreeSet};

use bazaar_core::assets::{
    AssetKind, CandidateItem, DependencyRef, Relation, ScoreWeights, TestVector,
};
use bazaar_core::digest::sha256_hex;
use bazaar_core::kernel::{Command, Event, Subplan};
use bazaar_core::taskflow::{PayloadEncoding, TaskState, Verdict};
use bazaar_core::{
    AssetId, CreditAmount, Kernel, KernelConfig, ParticipantId, RewardFunding, RewardSchedule,
    TaskId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{Action, Policy, Scenario, Step};
use crate::SimError;

/// How many top-ranked skills each round sample keeps.
const TOP_SKILLS: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credits {
    pub free: u64,
    pub locked: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSample {
    pub asset: AssetId,
    pub score: f64,
    pub invocations: u64,
    pub creator_income: u64,
}

/// State of the economy after one round (one scripted action, or one round
/// of a policy block).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSample {
    pub round: u64,
    pub label: String,
    pub last_seq: u64,
    pub tasks_by_state: BTreeMap<String, u64>,
    pub assets: u64,
    pub reuse_paid: u64,
    pub credit_total: u64,
    pub credits: BTreeMap<ParticipantId, Credits>,
    pub top_skills: Vec<SkillSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: RewardFunding,
    pub rounds: Vec<RoundSample>,
    pub events: u64,
    /// Scripted actions that failed with their expected error.
    pub expected_rejections: u64,
    /// Generated commands the kernel refused (e.g. a solver who can no
    /// longer afford a reuse fee).
    pub policy_rejections: u64,
    pub endowed: u64,
    pub minted: u64,
    pub final_total: u64,
    pub final_conservation: bool,
    pub state_digest: String,
    pub log_digest: String,
}

#[derive(Debug)]
pub struct SimRun {
    pub report: SimReport,
    pub kernel: Kernel,
}

impl SimRun {
    pub fn events(&self) -> &[Event] {
        self.kernel.events()
    }

    pub fn log_text(&self) -> String {
        log_text(self.kernel.events())
    }
}

/// The event log as JSON Lines.
pub fn log_text(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_json_line());
        out.push('\n');
    }
    out
}

/// Scripted outcome table entry for one skill.
#[derive(Debug, Clone, Copy)]
struct SkillProfile {
    success: f64,
}

struct Runner {
    kernel: Kernel,
    rng: ChaCha8Rng,
    weights: ScoreWeights,
    profiles: BTreeMap<AssetId, SkillProfile>,
    /// Accepted tasks already considered for asset proposal.
    harvested: BTreeSet<TaskId>,
    rounds: Vec<RoundSample>,
    expected_rejections: u64,
    policy_rejections: u64,
}

pub fn run_scenario(scenario: &Scenario, seed: Option<u64>) -> Result<SimRun, SimError> {
    let seed = seed.unwrap_or(scenario.seed);
    let mut runner = Runner {
        kernel: Kernel::new(KernelConfig { funding: scenario.mode }),
        rng: ChaCha8Rng::seed_from_u64(seed),
        weights: ScoreWeights::default(),
        profiles: BTreeMap::new(),
        harvested: BTreeSet::new(),
        rounds: Vec::new(),
        expected_rejections: 0,
        policy_rejections: 0,
    };
    for p in &scenario.participants {
        runner
            .kernel
            .apply_command(
                &p.id,
                Command::OpenAccount {
                    participant: p.id.clone(),
                    kind: p.kind,
                    endowment: p.endowment,
                    token_digest: None,
                },
            )
            .map_err(|e| SimError::ScenarioParse(format!("participant {}: {e}", p.id)))?;
    }
    for (i, step) in scenario.script.iter().enumerate() {
        match step {
            Step::Action(action) => {
                runner.action(i, action)?;
                runner.sample(format!("action {i}"));
            }
            Step::Policy(policy) => {
                for r in 0..policy.rounds.unwrap_or(scenario.rounds) {
                    runner.policy_round(policy);
                    runner.sample(format!("policy {i} round {r}"));
                }
            }
        }
    }

    let report = runner.kernel.balance_report();
    let sim = SimReport {
        scenario: scenario.name.clone(),
        seed,
        mode: scenario.mode,
        rounds: runner.rounds,
        events: runner.kernel.last_seq(),
        expected_rejections: runner.expected_rejections,
        policy_rejections: runner.policy_rejections,
        endowed: report.endowed.0,
        minted: report.minted.0,
        final_total: report.total.0,
        final_conservation: report.conserved,
        state_digest: runner.kernel.state_digest(),
        log_digest: sha256_hex(log_text(runner.kernel.events()).as_bytes()),
    };
    Ok(SimRun {
        report: sim,
        kernel: runner.kernel,
    })
}

impl Runner {
    fn action(&mut self, index: usize, action: &Action) -> Result<(), SimError> {
        let result = self.kernel.apply_command(&action.actor, action.command.clone());
        match (result, &action.expect_error) {
            (Ok(_), None) => Ok(()),
            (Err(e), Some(code)) if e.code() == code => {
                self.expected_rejections += 1;
                Ok(())
            }
            (Err(e), _) => Err(SimError::PolicyPreconditionViolation {
                step: index,
                command: action.command.name().to_owned(),
                error: e.to_string(),
            }),
            (Ok(_), Some(code)) => Err(SimError::PolicyPreconditionViolation {
                step: index,
                command: action.command.name().to_owned(),
                error: format!("expected {code}, but the command succeeded"),
            }),
        }
    }

    fn sample(&mut self, label: String) {
        let k = &self.kernel;
        let mut tasks_by_state: BTreeMap<String, u64> =
            TaskState::ALL.iter().map(|s| (s.as_str().to_owned(), 0)).collect();
        for t in k.tasks(None) {
            *tasks_by_state.entry(t.state.as_str().to_owned()).or_default() += 1;
        }
        let report = k.balance_report();
        let credits = report
            .accounts
            .iter()
            .map(|a| {
                (
                    a.participant.clone(),
                    Credits {
                        free: a.free.0,
                        locked: a.locked.0,
                    },
                )
            })
            .collect();
        let skills: BTreeSet<AssetId> = k
            .assets()
            .admitted()
            .filter(|a| a.kind == AssetKind::Skill)
            .map(|a| a.id.clone())
            .collect();
        let top_skills = if skills.is_empty() {
            Vec::new()
        } else {
            k.score_capability(&skills, &self.weights)
                .expect("admitted skills always score")
                .into_iter()
                .take(TOP_SKILLS)
                .map(|s| {
                    let asset = k.assets().get(&s.asset).expect("ranked assets exist");
                    SkillSample {
                        invocations: asset.metrics.invocation_count,
                        creator_income: k.ledger().reward(&s.asset).map_or(0, |r| r.earned.0),
                        asset: s.asset,
                        score: s.score,
                    }
                })
                .collect()
        };
        self.rounds.push(RoundSample {
            round: self.rounds.len() as u64,
            label,
            last_seq: k.last_seq(),
            tasks_by_state,
            assets: k.assets().admitted_count() as u64,
            reuse_paid: k.ledger().rewards().map(|r| r.earned.0).sum(),
            credit_total: report.total.0,
            credits,
            top_skills,
        });
    }

    fn submit(&mut self, actor: &ParticipantId, command: Command) -> bool {
        match self.kernel.apply_command(actor, command) {
            Ok(_) => true,
            Err(_) => {
                self.policy_rejections += 1;
                false
            }
        }
    }

    fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.rng.random::<f64>() < p
    }

    fn participants(&self) -> Vec<ParticipantId> {
        self.kernel.state().participants.keys().cloned().collect()
    }

    fn tasks_in(&self, state: TaskState) -> Vec<TaskId> {
        self.kernel.tasks(Some(state)).iter().map(|t| t.id).collect()
    }

    fn policy_round(&mut self, policy: &Policy) {
        self.arrivals(policy);
        self.claims(policy);
        self.work(policy);
        self.reviews(policy);
        self.harvest(policy);
    }

    fn arrivals(&mut self, policy: &Policy) {
        for p in self.participants() {
            if !self.chance(policy.task_arrival_rate) {
                continue;
            }
            let free = self.kernel.account(&p).map_or(0, |a| a.free.0);
            let cap = free.min(policy.max_bounty);
            if cap == 0 {
                continue;
            }
            let bounty = self.rng.random_range(1..=cap);
            let intent = format!("job {} from {p}", self.kernel.last_seq() + 1);
            self.submit(
                &p,
                Command::PublishTask {
                    intent,
                    bounty: CreditAmount(bounty),
                    parent: None,
                },
            );
        }
    }

    fn claims(&mut self, policy: &Policy) {
        let everyone = self.participants();
        for id in self.tasks_in(TaskState::Published) {
            if !self.chance(policy.claim_probability) {
                continue;
            }
            let requester = self.kernel.task(id).expect("listed").requester.clone();
            let solvers: Vec<&ParticipantId> = everyone.iter().filter(|p| **p != requester).collect();
            if solvers.is_empty() {
                continue;
            }
            let solver = solvers[self.rng.random_range(0..solvers.len())].clone();
            self.submit(&solver, Command::ClaimTask { task: id });
        }
        // Returned work goes straight back to its claimant.
        for id in self.tasks_in(TaskState::Rejected) {
            let claimant = self.kernel.task(id).expect("listed").claimant.clone().expect("claimed before");
            self.submit(&claimant, Command::ClaimTask { task: id });
        }
    }

    fn work(&mut self, policy: &Policy) {
        for id in self.tasks_in(TaskState::Claimed) {
            let task = self.kernel.task(id).expect("listed").clone();
            let claimant = task.claimant.clone().expect("claimed");
            let fresh = task.plan.is_empty() && task.review_history.is_empty();
            if fresh && task.parent.is_none() && task.bounty.0 >= 2 && self.chance(policy.decomposition_probability) {
                let subplans = self.split(task.bounty.0);
                self.submit(&claimant, Command::Decompose { task: id, subplans });
                continue;
            }
            let waiting = task
                .plan
                .iter()
                .any(|c| !self.kernel.task(*c).expect("child exists").state.is_terminal());
            if waiting {
                continue;
            }
            let mut used = BTreeSet::new();
            for _ in 0..policy.invocations_per_task {
                if let Some(skill) = self.invoke(policy, &claimant, id) {
                    used.insert(skill);
                }
            }
            self.submit(
                &claimant,
                Command::SubmitDeliverable {
                    task: id,
                    payload: format!("deliverable for task {id} by {claimant}"),
                    encoding: PayloadEncoding::Utf8,
                    used_skills: used,
                    consulted: BTreeSet::new(),
                    evidence: Vec::new(),
                },
            );
        }
    }

    /// Between one and three subtasks whose bounties sum to at most `bounty`.
    fn split(&mut self, bounty: u64) -> Vec<Subplan> {
        let n = self.rng.random_range(1..=bounty.min(3));
        let mut left = self.rng.random_range(n..=bounty);
        (0..n)
            .map(|i| {
                let remaining = n - i - 1;
                let b = if remaining == 0 { left } else { self.rng.random_range(1..=left - remaining) };
                left -= b;
                Subplan {
                    intent: format!("part {} of {bounty}", i + 1),
                    bounty: CreditAmount(b),
                }
            })
            .collect()
    }

    /// Invoke one skill for `task`; returns it when the call succeeded.
    fn invoke(&mut self, policy: &Policy, claimant: &ParticipantId, task: TaskId) -> Option<AssetId> {
        let skills: BTreeSet<AssetId> = self
            .kernel
            .assets()
            .admitted()
            .filter(|a| a.kind == AssetKind::Skill)
            .map(|a| a.id.clone())
            .collect();
        if skills.is_empty() {
            return None;
        }
        let skill = if self.chance(policy.skill_reuse_preference) {
            self.kernel
                .score_capability(&skills, &self.weights)
                .expect("admitted skills always score")[0]
                .asset
                .clone()
        } else {
            skills.iter().nth(self.rng.random_range(0..skills.len())).cloned().expect("in range")
        };
        let profile = match self.profiles.get(&skill) {
            Some(p) => *p,
            None => {
                let (lo, hi) = policy.skill_success;
                let p = SkillProfile {
                    success: lo + (hi - lo) * self.rng.random::<f64>(),
                };
                self.profiles.insert(skill.clone(), p);
                p
            }
        };
        let success = self.chance(profile.success);
        let latency_ms = self.rng.random_range(policy.latency_ms.0..=policy.latency_ms.1);
        let ok = self.submit(
            claimant,
            Command::RecordInvocation {
                skill: skill.clone(),
                task,
                success,
                latency_ms,
            },
        );
        (ok && success).then_some(skill)
    }

    fn reviews(&mut self, policy: &Policy) {
        for id in self.tasks_in(TaskState::InReview) {
            let task = self.kernel.task(id).expect("listed");
            let reviewer = task.requester.clone();
            let rejections = task
                .review_history
                .iter()
                .filter(|r| r.verdict == Verdict::Reject)
                .count() as u32;
            let reject = self.chance(policy.review_strictness);
            self.submit(
                &reviewer,
                Command::Review {
                    task: id,
                    verdict: if reject { Verdict::Reject } else { Verdict::Accept },
                    feedback: if reject { "needs another pass".into() } else { String::new() },
                    final_: reject && rejections >= policy.max_revisions,
                },
            );
        }
    }

    /// Turn some accepted work into candidate skills and run them through
    /// validation and admission.
    fn harvest(&mut self, policy: &Policy) {
        for id in self.tasks_in(TaskState::Accepted) {
            if !self.harvested.insert(id) || !self.chance(policy.proposal_probability) {
                continue;
            }
            let task = self.kernel.task(id).expect("listed").clone();
            let creator = task.claimant.clone().expect("accepted tasks were claimed");
            let used: Vec<AssetId> = task.used_skills.iter().cloned().collect();
            let name = match used.first() {
                Some(base) if self.chance(0.3) => {
                    self.kernel.assets().get(base).expect("used skills exist").name.clone()
                }
                _ => format!("skill-t{id}"),
            };
            let dependencies = used
                .iter()
                .filter(|u| self.kernel.assets().get(u).is_some_and(|a| a.name != name))
                .enumerate()
                .map(|(i, u)| DependencyRef {
                    asset: u.clone(),
                    relation: if i == 0 { Relation::Derives } else { Relation::Depends },
                })
                .collect();
            let good = self.chance(policy.candidate_quality);
            let item = CandidateItem {
                name,
                kind: AssetKind::Skill,
                payload: format!(r#"{{"cases":{{"probe":"ok-{id}"}}}}"#),
                interface: Some("text -> text".into()),
                test_vectors: vec![TestVector {
                    input: "probe".into(),
                    expected: if good { format!("ok-{id}") } else { "wrong".into() },
                }],
                dependencies,
                reward_schedule: Some(RewardSchedule::Constant {
                    alpha: policy.skill_alpha,
                }),
            };
            if !self.submit(&creator, Command::ProposeCandidates { task: id, items: vec![item] }) {
                continue;
            }
            let candidates = self.kernel.assets().candidates_of(id).to_vec();
            for asset in candidates {
                if self.kernel.assets().get(&asset).is_some_and(|a| a.validation.is_none()) {
                    self.submit(&task.requester, Command::Validate { asset, validators: Vec::new() });
                }
            }
            self.submit(&task.requester, Command::Admit { task: id });
        }
    }
}
