//! Property tests over random command sequences driven through the kernel.

use std::collections::BTreeSet;

use bazaar_core::assets::{AssetKind, AssetStatus, CandidateItem, DependencyRef, Relation, TestVector, ValidatorSpec};
use bazaar_core::kernel::{Command, Subplan};
use bazaar_core::ledger::{audit_entries, EscrowStatus, HoldStatus, Party};
use bazaar_core::taskflow::{PayloadEncoding, TaskState, Verdict};
use bazaar_core::{AssetId, CreditAmount, Kernel, KernelConfig, ParticipantId, ParticipantKind, RewardFunding, RewardSchedule, TaskId};
use proptest::prelude::*;

const PEOPLE: [&str; 4] = ["ana", "bo", "cy", "dee"];

#[derive(Debug, Clone)]
enum Op {
    Publish { who: usize, bounty: u64 },
    Claim { who: usize, task: usize },
    Decompose { task: usize, bounties: Vec<u64> },
    Submit { task: usize, skills: Vec<usize> },
    Review { task: usize, accept: bool, final_: bool },
    Cancel { task: usize },
    Propose { task: usize, dep: Option<usize>, alpha: u64, good: bool },
    Validate { asset: usize, approve: Option<bool> },
    Admit { task: usize },
    Invoke { skill: usize, task: usize, success: bool, latency: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0..4usize, 0..60u64).prop_map(|(who, bounty)| Op::Publish { who, bounty }),
        3 => (0..4usize, any::<usize>()).prop_map(|(who, task)| Op::Claim { who, task }),
        2 => (any::<usize>(), prop::collection::vec(0..40u64, 1..4))
            .prop_map(|(task, bounties)| Op::Decompose { task, bounties }),
        3 => (any::<usize>(), prop::collection::vec(any::<usize>(), 0..3))
            .prop_map(|(task, skills)| Op::Submit { task, skills }),
        3 => (any::<usize>(), any::<bool>(), any::<bool>())
            .prop_map(|(task, accept, final_)| Op::Review { task, accept, final_ }),
        1 => any::<usize>().prop_map(|task| Op::Cancel { task }),
        2 => (any::<usize>(), prop::option::of(any::<usize>()), 0..5u64, prop::bool::weighted(0.8))
            .prop_map(|(task, dep, alpha, good)| Op::Propose { task, dep, alpha, good }),
        2 => (any::<usize>(), prop::option::weighted(0.3, any::<bool>()))
            .prop_map(|(asset, approve)| Op::Validate { asset, approve }),
        2 => any::<usize>().prop_map(|task| Op::Admit { task }),
        3 => (any::<usize>(), any::<usize>(), prop::bool::weighted(0.8), 0..3000u64)
            .prop_map(|(skill, task, success, latency)| Op::Invoke { skill, task, success, latency }),
    ]
}

fn pid(i: usize) -> ParticipantId {
    ParticipantId::from(PEOPLE[i % PEOPLE.len()])
}

fn pick<T: Clone>(items: &[T], i: usize) -> Option<T> {
    (!items.is_empty()).then(|| items[i % items.len()].clone())
}

fn skill_item(name: &str, dep: Option<AssetId>, alpha: u64, good: bool) -> CandidateItem {
    CandidateItem {
        name: name.into(),
        kind: AssetKind::Skill,
        payload: r#"{"cases":{"ping":"pong"}}"#.into(),
        interface: Some("text -> text".into()),
        test_vectors: vec![TestVector {
            input: "ping".into(),
            expected: if good { "pong" } else { "pang" }.into(),
        }],
        dependencies: dep
            .map(|asset| DependencyRef { asset, relation: Relation::Derives })
            .into_iter()
            .collect(),
        reward_schedule: Some(RewardSchedule::Constant { alpha }),
    }
}

/// Translate an op into a command against the current state. Ops that name
/// nothing sensible still produce a command; the kernel must reject it.
fn command(k: &Kernel, op: &Op) -> (ParticipantId, Command) {
    let tasks: Vec<TaskId> = k.tasks(None).iter().map(|t| t.id).collect();
    let task_or = |i: usize| pick(&tasks, i).unwrap_or(TaskId(999));
    let claimant_of = |t: TaskId| k.task(t).ok().and_then(|t| t.claimant.clone()).unwrap_or(pid(0));
    let requester_of = |t: TaskId| k.task(t).map(|t| t.requester.clone()).unwrap_or(pid(0));
    let assets: Vec<AssetId> = k.assets().iter().map(|a| a.id.clone()).collect();
    let skills: Vec<AssetId> = k.assets().admitted().map(|a| a.id.clone()).collect();
    match op {
        Op::Publish { who, bounty } => (
            pid(*who),
            Command::PublishTask { intent: "job".into(), bounty: CreditAmount(*bounty), parent: None },
        ),
        Op::Claim { who, task } => (pid(*who), Command::ClaimTask { task: task_or(*task) }),
        Op::Decompose { task, bounties } => {
            let t = task_or(*task);
            (
                claimant_of(t),
                Command::Decompose {
                    task: t,
                    subplans: bounties
                        .iter()
                        .map(|b| Subplan { intent: "part".into(), bounty: CreditAmount(*b) })
                        .collect(),
                },
            )
        }
        Op::Submit { task, skills: picks } => {
            let t = task_or(*task);
            let used: BTreeSet<AssetId> = picks.iter().filter_map(|i| pick(&skills, *i)).collect();
            (
                claimant_of(t),
                Command::SubmitDeliverable {
                    task: t,
                    payload: "result".into(),
                    encoding: PayloadEncoding::Utf8,
                    used_skills: used,
                    consulted: BTreeSet::new(),
                    evidence: vec![],
                },
            )
        }
        Op::Review { task, accept, final_ } => {
            let t = task_or(*task);
            (
                requester_of(t),
                Command::Review {
                    task: t,
                    verdict: if *accept { Verdict::Accept } else { Verdict::Reject },
                    feedback: "fb".into(),
                    final_: *final_,
                },
            )
        }
        Op::Cancel { task } => {
            let t = task_or(*task);
            (requester_of(t), Command::CancelTask { task: t })
        }
        Op::Propose { task, dep, alpha, good } => {
            let t = task_or(*task);
            let dep = dep.and_then(|i| pick(&skills, i));
            let name = format!("skill-{}", k.last_seq() % 5);
            (
                claimant_of(t),
                Command::ProposeCandidates { task: t, items: vec![skill_item(&name, dep, *alpha, *good)] },
            )
        }
        Op::Validate { asset, approve } => {
            let a = pick(&assets, *asset).unwrap_or_else(|| AssetId::from("none@1"));
            let validators = approve
                .map(|approved| vec![ValidatorSpec::ManualReview { approved, note: String::new() }])
                .unwrap_or_default();
            (pid(0), Command::Validate { asset: a, validators })
        }
        Op::Admit { task } => (pid(0), Command::Admit { task: task_or(*task) }),
        Op::Invoke { skill, task, success, latency } => {
            let t = task_or(*task);
            let s = pick(&skills, *skill).unwrap_or_else(|| AssetId::from("none"));
            (
                claimant_of(t),
                Command::RecordInvocation { skill: s, task: t, success: *success, latency_ms: *latency },
            )
        }
    }
}

fn fresh(funding: RewardFunding) -> Kernel {
    let mut k = Kernel::new(KernelConfig { funding });
    for (i, name) in PEOPLE.iter().enumerate() {
        let p = ParticipantId::from(*name);
        k.apply_command(
            &p,
            Command::OpenAccount {
                participant: p.clone(),
                kind: if i % 2 == 0 { ParticipantKind::Human } else { ParticipantKind::Agent },
                endowment: CreditAmount(100 * (i as u64 + 1)),
                token_digest: None,
            },
        )
        .unwrap();
    }
    k
}

/// Conservation recomputed from raw accounts, escrows and holds.
fn independent_total(k: &Kernel) -> u64 {
    let ledger = k.ledger();
    let free: u64 = ledger.accounts().map(|a| a.free.0).sum();
    let open_escrows: u64 = ledger
        .escrows()
        .filter(|e| e.status == EscrowStatus::Open)
        .map(|e| e.balance.0)
        .sum();
    let holds: u64 = ledger.holds().filter(|h| h.status == HoldStatus::Held).map(|h| h.amount.0).sum();
    free + open_escrows + holds
}

fn check_state(k: &Kernel, endowed: u64, prev_k: &mut usize) -> Result<(), TestCaseError> {
    let minted = k.balance_report().minted.0;
    prop_assert_eq!(independent_total(k), endowed + minted);
    prop_assert!(k.balance_report().conserved);

    // locked mirrors the participant-funded open escrows
    for a in k.ledger().accounts() {
        let mine: u64 = k
            .ledger()
            .escrows()
            .filter(|e| e.status == EscrowStatus::Open && e.funder == Party::Participant(a.participant.clone()))
            .map(|e| e.balance.0)
            .sum();
        prop_assert_eq!(a.locked.0, mine);
    }

    for t in k.tasks(None) {
        let children: u64 = t.plan.iter().map(|c| k.task(*c).unwrap().bounty.0).sum();
        prop_assert!(children <= t.bounty.0, "task {} delegates {} of {}", t.id, children, t.bounty);
    }

    prop_assert!(k.assets().topological_order().is_some());
    let now = k.assets().admitted_count();
    prop_assert!(now >= *prev_k);
    *prev_k = now;
    for a in k.assets().admitted() {
        prop_assert_eq!(a.status, AssetStatus::Admitted);
        prop_assert!(a.validation.as_ref().is_some_and(|r| r.verdict == 1));
        prop_assert_eq!(a.metrics.invocation_count, a.metrics.success_count + a.metrics.failure_count);
    }
    Ok(())
}

fn run(funding: RewardFunding, ops: &[Op]) -> Result<Kernel, TestCaseError> {
    let mut k = fresh(funding);
    let endowed = k.balance_report().endowed.0;
    let mut prev_k = 0;
    for op in ops {
        let before = k.state_digest();
        let events = k.events().len();
        let (actor, cmd) = command(&k, op);
        if k.apply_command(&actor, cmd).is_err() {
            prop_assert_eq!(k.state_digest(), before);
            prop_assert_eq!(k.events().len(), events);
        }
        check_state(&k, endowed, &mut prev_k)?;
    }
    Ok(k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fee_mode_sequences_keep_every_invariant(ops in prop::collection::vec(op(), 1..120)) {
        let k = run(RewardFunding::Fee, &ops)?;
        let report = k.balance_report();
        prop_assert_eq!(report.minted.0, 0);
        prop_assert_eq!(report.total, report.endowed);
        let audit = audit_entries(k.ledger().entries());
        prop_assert!(audit.is_clean(), "{:?}", audit.violations);
    }

    #[test]
    fn mint_mode_grows_supply_only_by_minted_rewards(ops in prop::collection::vec(op(), 1..120)) {
        let k = run(RewardFunding::Mint, &ops)?;
        let report = k.balance_report();
        let earned: u64 = k.ledger().rewards().map(|r| r.earned.0).sum();
        prop_assert_eq!(report.minted.0, earned);
        prop_assert_eq!(report.total.0, report.endowed.0 + earned);
    }

    #[test]
    fn replay_reproduces_live_digest(ops in prop::collection::vec(op(), 1..80)) {
        let k = run(RewardFunding::Fee, &ops)?;
        let replayed = Kernel::replay(k.config(), k.events()).unwrap();
        prop_assert_eq!(replayed.state_digest(), k.state_digest());
        let cut = k.events().len() / 2;
        prop_assert!(Kernel::replay(k.config(), &k.events()[..cut]).is_ok());
    }

    #[test]
    fn reuse_income_matches_schedule_sum(ops in prop::collection::vec(op(), 1..150)) {
        let k = run(RewardFunding::Fee, &ops)?;
        for r in k.ledger().rewards() {
            let oracle: u64 = (1..=r.paid_count).map(|j| r.schedule.fee(j).0).sum();
            prop_assert_eq!(r.earned.0, oracle);
            let paid_entries: u64 = k.ledger().entries().iter()
                .filter(|e| e.skill.as_ref() == Some(&r.skill))
                .map(|e| e.amount.0)
                .sum();
            prop_assert_eq!(paid_entries, r.earned.0);
        }
    }
}

#[test]
fn no_one_can_claim_their_own_task_in_any_small_state() {
    // Every task state reachable in a few steps, every participant as claimer.
    let scripts: &[&[&str]] = &[
        &[],
        &["claim"],
        &["claim", "submit"],
        &["claim", "submit", "reject"],
        &["claim", "submit", "accept"],
        &["claim", "submit", "final"],
        &["cancel"],
    ];
    for script in scripts {
        for requester in 0..PEOPLE.len() {
            let mut k = fresh(RewardFunding::Fee);
            let req = pid(requester);
            let solver = pid(requester + 1);
            let (_, out) = k
                .apply_command(&req, Command::PublishTask { intent: "x".into(), bounty: CreditAmount(10), parent: None })
                .unwrap();
            let t = match out {
                bazaar_core::Outcome::Task(t) => t.id,
                _ => unreachable!(),
            };
            for step in *script {
                let (actor, cmd) = match *step {
                    "claim" => (solver.clone(), Command::ClaimTask { task: t }),
                    "submit" => (solver.clone(), Command::SubmitDeliverable {
                        task: t, payload: "p".into(), encoding: PayloadEncoding::Utf8,
                        used_skills: BTreeSet::new(), consulted: BTreeSet::new(), evidence: vec![],
                    }),
                    "cancel" => (req.clone(), Command::CancelTask { task: t }),
                    verdict => (req.clone(), Command::Review {
                        task: t,
                        verdict: if verdict == "accept" { Verdict::Accept } else { Verdict::Reject },
                        feedback: String::new(),
                        final_: verdict == "final",
                    }),
                };
                k.apply_command(&actor, cmd).unwrap();
            }
            let state = k.task(t).unwrap().state;
            let err = k.apply_command(&req, Command::ClaimTask { task: t }).unwrap_err();
            assert_eq!(err.code(), "SelfClaim", "state {state}");
            let outsider = pid(requester + 2);
            let third = k.apply_command(&outsider, Command::ClaimTask { task: t });
            assert_eq!(third.is_ok(), state == TaskState::Published, "state {state}");
        }
    }
}
