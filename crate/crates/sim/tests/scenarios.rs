use std::path::PathBuf;

use bazaar_core::kernel::Command;
use bazaar_core::ledger::EntryKind;
use bazaar_core::taskflow::Verdict;
use bazaar_core::CreditAmount;
use bazaar_sim::metrics::{metrics_csv, metrics_json, CSV_HEADER};
use bazaar_sim::runner::{log_text, RoundSample};
use bazaar_sim::scenario::{Policy, Step};
use bazaar_sim::{check_properties, emit_metrics, run_scenario, MetricsFormat, Scenario, SimError};

fn load(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    Scenario::load(&path).unwrap()
}

fn economy(rounds: u64, seed: u64, policy: Policy) -> Scenario {
    let mut s = load("economy");
    s.seed = seed;
    s.rounds = rounds;
    s.script = vec![Step::Policy(policy)];
    s
}

#[test]
fn corrupted_settlement_is_flagged_as_conservation_failure() {
    let run = run_scenario(&load("case1"), None).unwrap();
    let mut events = run.events().to_vec();
    let accept = events
        .iter_mut()
        .find(|e| matches!(e.command, Command::Review { verdict: Verdict::Accept, .. }) && e.entries.as_ref().is_some_and(|x| !x.is_empty() && x[0].amount.0 == 50))
        .expect("accept event with settlement");
    let entries = accept.entries.as_mut().unwrap();
    assert_eq!(entries[0].kind, EntryKind::Settle);
    entries[0].amount = CreditAmount(60);

    let verdicts = check_properties(&events, None, run.report.mode).unwrap();
    let by_name = |n: &str| verdicts.iter().find(|v| v.property == n).unwrap();
    assert!(!by_name("conservation").passed, "{verdicts:?}");
    assert!(!by_name("replay").passed);
    assert!(by_name("budget_bound").passed);
}

#[test]
fn log_with_a_gap_is_corrupt() {
    let run = run_scenario(&load("case2"), None).unwrap();
    let mut events = run.events().to_vec();
    events.remove(5);
    assert!(matches!(
        check_properties(&events, None, run.report.mode),
        Err(SimError::CorruptLog(_))
    ));
}

#[test]
fn run_without_tasks_passes_vacuously() {
    let mut s = load("economy");
    s.script.clear();
    let run = run_scenario(&s, None).unwrap();
    assert!(run.report.rounds.is_empty());
    let verdicts = check_properties(run.events(), Some(&run.report), s.mode).unwrap();
    assert!(verdicts.iter().all(|v| v.passed), "{verdicts:?}");
}

#[test]
fn unexpected_script_failure_is_a_precondition_violation() {
    let mut s = load("case1");
    // Claiming the brand task before it exists.
    s.script.insert(
        0,
        serde_json::from_str(r#"{"action":{"actor":"video-agent","command":{"type":"claim_task","task":2}}}"#).unwrap(),
    );
    assert!(matches!(
        run_scenario(&s, None),
        Err(SimError::PolicyPreconditionViolation { step: 0, .. })
    ));

    let mut s = load("case1");
    s.script.insert(
        0,
        serde_json::from_str(
            r#"{"action":{"actor":"video-agent","command":{"type":"claim_task","task":2},"expect_error":"UnknownTask"}}"#,
        )
        .unwrap(),
    );
    assert_eq!(run_scenario(&s, None).unwrap().report.expected_rejections, 1);
}

#[test]
fn seed_42_economy_is_reproducible() {
    let s = economy(200, 42, Policy::default());
    let a = run_scenario(&s, None).unwrap();
    let b = run_scenario(&s, None).unwrap();
    assert_eq!(a.report.log_digest, b.report.log_digest);
    assert_eq!(a.report, b.report);
    assert_eq!(log_text(a.events()), log_text(b.events()));
    let c = run_scenario(&s, Some(43)).unwrap();
    assert_ne!(a.report.log_digest, c.report.log_digest);
}

#[test]
fn economy_closes_in_fee_mode_for_many_seeds() {
    for seed in 0..20 {
        let run = run_scenario(&economy(60, seed, Policy::default()), None).unwrap();
        assert!(run.report.final_conservation, "seed {seed}");
        assert_eq!(run.report.final_total, run.report.endowed);
        assert!(run.report.rounds.iter().all(|r| r.credit_total == run.report.endowed));
        let verdicts = check_properties(run.events(), Some(&run.report), run.report.mode).unwrap();
        assert!(verdicts.iter().all(|v| v.passed), "seed {seed}: {verdicts:?}");
    }
}

#[test]
fn mint_mode_supply_grows_by_reuse_income() {
    let mut s = economy(80, 9, Policy::default());
    s.mode = bazaar_core::RewardFunding::Mint;
    let run = run_scenario(&s, None).unwrap();
    let last = run.report.rounds.last().unwrap();
    assert!(last.reuse_paid > 0);
    assert_eq!(run.report.minted, last.reuse_paid);
    assert_eq!(run.report.final_total, run.report.endowed + run.report.minted);
}

#[test]
fn csv_has_fixed_header_and_monotone_asset_column() {
    let run = run_scenario(&economy(200, 42, Policy::default()), None).unwrap();
    let csv = metrics_csv(&run.report).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_HEADER);
    let col = header.iter().position(|h| h == "assets").unwrap();
    let assets: Vec<u64> = reader.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(assets.len(), 200);
    assert!(assets.windows(2).all(|w| w[0] <= w[1]));
    assert!(*assets.last().unwrap() > 0);
}

#[test]
fn json_metrics_round_trip() {
    let run = run_scenario(&economy(30, 5, Policy::default()), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = emit_metrics(&run.report, MetricsFormat::Json, dir.path()).unwrap();
    let back: Vec<RoundSample> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back, run.report.rounds);
    assert_eq!(metrics_json(&run.report), serde_json::to_string_pretty(&back).unwrap());
}

#[test]
fn preferred_skill_usage_and_income_never_fall() {
    let policy = Policy { skill_reuse_preference: 1.0, invocations_per_task: 2, ..Policy::default() };
    let run = run_scenario(&economy(150, 11, policy), None).unwrap();
    let rounds = &run.report.rounds;
    let top = rounds.last().unwrap().top_skills[0].asset.clone();
    let series: Vec<(u64, u64)> = rounds
        .iter()
        .filter_map(|r| r.top_skills.iter().find(|s| s.asset == top))
        .map(|s| (s.invocations, s.creator_income))
        .collect();
    assert!(series.len() > rounds.len() / 2, "top skill rarely ranked");
    assert!(series.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    assert!(series.last().unwrap().0 > series[0].0);
}

#[test]
fn scripted_cases_check_clean() {
    for name in ["case1", "case2"] {
        let run = run_scenario(&load(name), None).unwrap();
        let verdicts = check_properties(run.events(), Some(&run.report), run.report.mode).unwrap();
        assert!(verdicts.iter().all(|v| v.passed), "{name}: {verdicts:?}");
    }
}
