//! Property checks over a recorded event log.

use bazaar_core::kernel::Event;
use bazaar_core::ledger::{audit_entries, EntryKind};
use bazaar_core::{Kernel, KernelConfig, RewardFunding};
use serde::{Deserialize, Serialize};

use crate::runner::SimReport;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyVerdict {
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyVerdict {
    fn new(property: &str, problems: Vec<String>, ok_detail: impl Into<String>) -> Self {
        PropertyVerdict {
            property: property.to_owned(),
            passed: problems.is_empty(),
            detail: if problems.is_empty() { ok_detail.into() } else { problems.join("; ") },
        }
    }
}

/// Evaluate conservation, budget bound, acyclicity, monotone |K|,
/// reuse-sum consistency, metric consistency and replay fidelity.
///
/// Conservation is judged from the ledger entries recorded in the log, so
/// an edited entry is caught even though the kernel would never produce it.
/// The log must otherwise be replayable: gaps or undecodable commands are
/// `CorruptLog`.
pub fn check_properties(
    events: &[Event],
    report: Option<&SimReport>,
    funding: RewardFunding,
) -> Result<Vec<PropertyVerdict>, SimError> {
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return Err(SimError::CorruptLog(format!("event {} carries seq {}", i + 1, e.seq)));
        }
    }

    // Replay the commands alone, stepping so per-event properties can be
    // observed. Recorded entries are compared separately below.
    let config = KernelConfig { funding };
    let mut kernel = Kernel::new(config);
    let mut k_series = Vec::with_capacity(events.len());
    let mut divergent = Vec::new();
    let mut cycles = Vec::new();
    for e in events {
        let (applied, _) = kernel
            .apply_command(&e.actor, e.command.clone())
            .map_err(|err| SimError::CorruptLog(format!("event {} does not apply: {err}", e.seq)))?;
        if e.entries.is_some() && applied.entries != e.entries {
            divergent.push(e.seq);
        }
        if kernel.assets().topological_order().is_none() {
            cycles.push(e.seq);
        }
        k_series.push(kernel.assets().admitted_count() as u64);
    }

    let mut verdicts = Vec::new();

    // Conservation, from the recorded entries.
    let recorded = events.iter().flat_map(|e| e.entries.iter().flatten());
    let audit = audit_entries(recorded);
    let mut problems = audit.violations.clone();
    if funding == RewardFunding::Fee && audit.minted_rewards != 0 {
        problems.push(format!("{} credits minted in fee mode", audit.minted_rewards));
    }
    let live = kernel.balance_report();
    if !live.conserved {
        problems.push(format!(
            "replayed total {} != endowed {} + minted {}",
            live.total, live.endowed, live.minted
        ));
    }
    verdicts.push(PropertyVerdict::new(
        "conservation",
        problems,
        format!("total {} = endowed {} + minted {}", live.total, live.endowed, live.minted),
    ));

    // Budget bound: children never exceed their parent's bounty.
    let mut problems = Vec::new();
    for t in kernel.tasks(None) {
        let children: u64 = t
            .plan
            .iter()
            .map(|c| kernel.task(*c).map_or(0, |c| c.bounty.0))
            .sum();
        if children > t.bounty.0 {
            problems.push(format!("task {} delegates {children} of {}", t.id, t.bounty));
        }
    }
    verdicts.push(PropertyVerdict::new("budget_bound", problems, "every plan within its bounty"));

    verdicts.push(PropertyVerdict::new(
        "acyclicity",
        cycles.iter().map(|s| format!("cycle after event {s}")).collect(),
        format!("{} edges, topologically sortable after every event", kernel.assets().edges().count()),
    ));

    let mut problems: Vec<String> = k_series
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0])
        .map(|(i, w)| format!("|K| fell from {} to {} at event {}", w[0], w[1], i + 2))
        .collect();
    if let Some(report) = report {
        problems.extend(
            report
                .rounds
                .windows(2)
                .filter(|w| w[1].assets < w[0].assets)
                .map(|w| format!("reported |K| fell at round {}", w[1].round)),
        );
    }
    verdicts.push(PropertyVerdict::new(
        "monotone_assets",
        problems,
        format!("|K| = {}", kernel.assets().admitted_count()),
    ));

    // Reuse sum: income equals the schedule summed over paid reuses, and
    // equals the reuse_fee entries actually recorded.
    let mut problems = Vec::new();
    for r in kernel.ledger().rewards() {
        let schedule_sum: u64 = (1..=r.paid_count).map(|j| r.schedule.fee(j).0).sum();
        let entry_sum: u64 = events
            .iter()
            .flat_map(|e| e.entries.iter().flatten())
            .filter(|x| x.kind == EntryKind::ReuseFee && x.skill.as_ref() == Some(&r.skill))
            .map(|x| x.amount.0)
            .sum();
        if r.earned.0 != schedule_sum || r.earned.0 != entry_sum {
            problems.push(format!(
                "{}: earned {} vs schedule {} vs entries {}",
                r.skill, r.earned, schedule_sum, entry_sum
            ));
        }
    }
    verdicts.push(PropertyVerdict::new("reuse_sum", problems, "income matches schedules"));

    let mut problems = Vec::new();
    for a in kernel.assets().admitted() {
        let m = &a.metrics;
        let logged = kernel.invocations().iter().filter(|i| i.skill == a.id);
        let (n, ok) = logged.fold((0u64, 0u64), |(n, ok), i| (n + 1, ok + u64::from(i.success)));
        if m.invocation_count != m.success_count + m.failure_count
            || m.invocation_count != n
            || m.success_count != ok
            || m.latency_samples != n
        {
            problems.push(format!("{}: metrics {:?} vs {n} logged ({ok} ok)", a.id, m));
        }
    }
    verdicts.push(PropertyVerdict::new("metric_consistency", problems, "metrics match invocations"));

    let mut problems: Vec<String> =
        divergent.iter().map(|s| format!("event {s} entries differ on replay")).collect();
    if let Some(report) = report {
        if report.state_digest != kernel.state_digest() {
            problems.push("replayed state digest differs from the report".into());
        }
        if report.events != events.len() as u64 {
            problems.push(format!("report counts {} events, log has {}", report.events, events.len()));
        }
    }
    verdicts.push(PropertyVerdict::new("replay", problems, kernel.state_digest()));

    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_passes_everything() {
        let verdicts = check_properties(&[], None, RewardFunding::Fee).unwrap();
        assert_eq!(verdicts.len(), 7);
        assert!(verdicts.iter().all(|v| v.passed), "{verdicts:?}");
    }
}
