//! The persistent asset layer: reusable skills, workflows, traces and
//! experience records harvested from accepted work.
//!
//! Assets enter as candidates, are validated, and only verdict-1 candidates
//! are admitted. Admission adds edges from the assets a candidate was built
//! on, and those always exist already, so the graph stays acyclic without a
//! cycle check on the write path. Nothing is ever removed from the admitted
//! set.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::ids::{AssetId, ParticipantId, TaskId};
use crate::ledger::RewardSchedule;
use crate::taskflow::BlobStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Skill,
    Workflow,
    Trace,
    Experience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetStatus {
    Candidate,
    Admitted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Depends,
    Derives,
    Composes,
    VersionOf,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Depends => "depends",
            Relation::Derives => "derives",
            Relation::Composes => "composes",
            Relation::VersionOf => "version_of",
        }
    }
}

/// `from` was used to build `to`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AssetEdge {
    pub from: AssetId,
    pub to: AssetId,
    pub relation: Relation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetMetrics {
    pub success_count: u64,
    pub failure_count: u64,
    /// Every recorded invocation; `success_count` of them are validated (u_s).
    pub invocation_count: u64,
    pub latency_sum_ms: u64,
    pub latency_samples: u64,
    /// Tasks that used this skill and were later accepted.
    pub acceptance_hits: u64,
}

impl AssetMetrics {
    pub fn mean_latency_ms(&self) -> f64 {
        if self.latency_samples == 0 {
            0.0
        } else {
            self.latency_sum_ms as f64 / self.latency_samples as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestVector {
    pub input: String,
    pub expected: String,
}

/// A claimed build-on relation, referencing an admitted asset by id or by
/// bare name (latest admitted version).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRef {
    pub asset: AssetId,
    #[serde(default = "default_relation")]
    pub relation: Relation,
}

fn default_relation() -> Relation {
    Relation::Depends
}

/// One proposed artifact of an accepted task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateItem {
    pub name: String,
    pub kind: AssetKind,
    /// Opaque content. For skills run by the scripted executor this is a
    /// JSON lookup table, see [`ScriptedExecutor`].
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interface: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_vectors: Vec<TestVector>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dependencies: Vec<DependencyRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_schedule: Option<RewardSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asset {
    pub id: AssetId,
    pub name: String,
    pub version: u32,
    pub kind: AssetKind,
    pub creator: ParticipantId,
    pub origin_task: TaskId,
    pub status: AssetStatus,
    pub reward_schedule: RewardSchedule,
    pub metrics: AssetMetrics,
    pub content_digest: String,
    pub interface: Option<String>,
    pub test_vectors: Vec<TestVector>,
    /// U_t(k'): resolved, admitted assets this one was built on.
    pub claimed_dependencies: Vec<AssetEdge>,
    pub validation: Option<ValidationReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Structural,
    Digest,
    TestVectors,
    ManualReview,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: CheckName,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub asset: AssetId,
    pub checks: Vec<CheckResult>,
    /// 1 iff every check passed.
    pub verdict: u8,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.verdict == 1
    }
}

/// A validator requested for one `validate` call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ValidatorSpec {
    Structural,
    Digest,
    TestVectors,
    ManualReview {
        approved: bool,
        #[serde(default)]
        note: String,
    },
}

impl ValidatorSpec {
    fn check_name(&self) -> CheckName {
        match self {
            ValidatorSpec::Structural => CheckName::Structural,
            ValidatorSpec::Digest => CheckName::Digest,
            ValidatorSpec::TestVectors => CheckName::TestVectors,
            ValidatorSpec::ManualReview { .. } => CheckName::ManualReview,
        }
    }
}

/// Checks that always run for a kind, in report order.
pub fn mandatory_checks(kind: AssetKind) -> &'static [CheckName] {
    match kind {
        AssetKind::Skill => &[CheckName::Structural, CheckName::Digest, CheckName::TestVectors],
        AssetKind::Workflow => &[CheckName::Structural, CheckName::Digest],
        AssetKind::Trace | AssetKind::Experience => &[CheckName::Structural],
    }
}

fn applicable(kind: AssetKind, check: CheckName) -> bool {
    match check {
        CheckName::Structural | CheckName::ManualReview => true,
        CheckName::Digest => true,
        CheckName::TestVectors => kind == AssetKind::Skill,
    }
}

/// Runs a skill's payload against one test input.
pub trait SkillExecutor: Send + Sync {
    fn execute(&self, skill: &Asset, payload: &[u8], input: &str) -> std::result::Result<String, String>;
}

/// Deterministic reference executor.
///
/// A skill payload is a JSON object `{"cases": {"<input>": "<output>", ...}}`
/// and executing it is a table lookup.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedExecutor;

impl SkillExecutor for ScriptedExecutor {
    fn execute(&self, _skill: &Asset, payload: &[u8], input: &str) -> std::result::Result<String, String> {
        #[derive(Deserialize)]
        struct Script {
            cases: BTreeMap<String, String>,
        }
        let script: Script = serde_json::from_slice(payload)
            .map_err(|e| format!("payload is not a scripted skill: {e}"))?;
        script
            .cases
            .get(input)
            .cloned()
            .ok_or_else(|| format!("no scripted output for input {input:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub success: f64,
    pub latency: f64,
    pub frequency: f64,
    pub acceptance: f64,
    pub latency_scale_ms: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights {
            success: 0.4,
            latency: 0.2,
            frequency: 0.2,
            acceptance: 0.2,
            latency_scale_ms: 1000.0,
        }
    }
}

impl std::str::FromStr for ScoreWeights {
    type Err = String;

    /// `w_succ,w_lat,w_freq,w_acc[,latency_scale_ms]`
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight {p:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut weights = ScoreWeights::default();
        match parts.as_slice() {
            [s, l, f, a] | [s, l, f, a, _] => {
                weights.success = *s;
                weights.latency = *l;
                weights.frequency = *f;
                weights.acceptance = *a;
            }
            _ => return Err("expected 4 or 5 comma-separated numbers".into()),
        }
        if let [.., scale] = parts.as_slice() {
            if parts.len() == 5 {
                weights.latency_scale_ms = *scale;
            }
        }
        if weights.latency_scale_ms <= 0.0 {
            return Err("latency scale must be positive".into());
        }
        Ok(weights)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAsset {
    pub asset: AssetId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub asset: AssetId,
    /// Ancestors, nearest first: each appears after every ancestor built on it.
    pub ancestors: Vec<AssetId>,
    /// Edges among `asset` and its ancestors.
    pub edges: Vec<AssetEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: AssetId,
    pub kind: AssetKind,
    pub creator: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphLink {
    pub to: AssetId,
    pub relation: Relation,
}

/// Adjacency-list export of the admitted graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<GraphNode>,
    pub adjacency: BTreeMap<AssetId, Vec<GraphLink>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssetRegistry {
    assets: BTreeMap<AssetId, Asset>,
    edges: BTreeSet<AssetEdge>,
    by_task: BTreeMap<TaskId, Vec<AssetId>>,
    /// Admission order; `admitted[..n]` is K after n admissions.
    admitted: Vec<AssetId>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl AssetRegistry {
    pub fn get(&self, id: &AssetId) -> Option<&Asset> {
        self.assets.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Asset> {
        self.assets.values()
    }

    /// Admitted assets only; candidates and rejected assets are never served.
    pub fn admitted(&self) -> impl Iterator<Item = &Asset> {
        self.admitted.iter().map(|id| &self.assets[id])
    }

    pub fn admitted_count(&self) -> usize {
        self.admitted.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &AssetEdge> {
        self.edges.iter()
    }

    pub fn candidates_of(&self, task: TaskId) -> &[AssetId] {
        self.by_task.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Resolve an id or bare name to an admitted asset.
    pub fn resolve_admitted(&self, reference: &AssetId) -> Option<&Asset> {
        if let Some(asset) = self.assets.get(reference) {
            return (asset.status == AssetStatus::Admitted).then_some(asset);
        }
        if reference.is_versioned() {
            return None;
        }
        self.assets
            .values()
            .filter(|a| a.name == reference.as_str() && a.status == AssetStatus::Admitted)
            .max_by_key(|a| a.version)
    }

    /// The admitted asset `reference` resolves to, or `AssetNotAdmitted`.
    pub fn require_admitted(&self, reference: &AssetId) -> Result<&Asset> {
        self.resolve_admitted(reference)
            .ok_or_else(|| Error::AssetNotAdmitted(reference.clone()))
    }

    /// Check a batch of candidate items without storing anything. Returns
    /// the resolved dependency edges per item (with `to` left empty).
    pub fn check_candidates(&self, items: &[CandidateItem]) -> Result<Vec<Vec<AssetEdge>>> {
        items
            .iter()
            .map(|item| {
                if !valid_name(&item.name) {
                    return Err(Error::InvalidCandidate(format!(
                        "asset name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                        item.name
                    )));
                }
                if let Some(schedule) = &item.reward_schedule {
                    schedule.check().map_err(Error::InvalidCandidate)?;
                }
                item.dependencies
                    .iter()
                    .map(|dep| {
                        if dep.relation == Relation::VersionOf {
                            return Err(Error::InvalidCandidate(
                                "version_of edges are derived from the asset name".into(),
                            ));
                        }
                        let target = self
                            .resolve_admitted(&dep.asset)
                            .ok_or_else(|| Error::UnknownDependency(dep.asset.clone()))?;
                        Ok(AssetEdge {
                            from: target.id.clone(),
                            to: AssetId::new(""),
                            relation: dep.relation,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    /// Store `items` as candidates of `task`, created by `creator`.
    ///
    /// Preconditions on the task itself (accepted, creator took part) are the
    /// caller's to enforce.
    pub fn propose(
        &mut self,
        task: TaskId,
        creator: &ParticipantId,
        items: Vec<CandidateItem>,
        blobs: &mut BlobStore,
    ) -> Result<Vec<Asset>> {
        let resolved = self.check_candidates(&items)?;
        let mut out = Vec::with_capacity(items.len());
        for (item, deps) in items.into_iter().zip(resolved) {
            let version = self
                .assets
                .values()
                .filter(|a| a.name == item.name)
                .map(|a| a.version)
                .max()
                .unwrap_or(0)
                + 1;
            let id = AssetId::versioned(&item.name, version);
            let (digest, _) = blobs.put(item.payload.into_bytes());
            let claimed_dependencies = deps
                .into_iter()
                .map(|e| AssetEdge { to: id.clone(), ..e })
                .collect();
            let asset = Asset {
                id: id.clone(),
                name: item.name,
                version,
                kind: item.kind,
                creator: creator.clone(),
                origin_task: task,
                status: AssetStatus::Candidate,
                reward_schedule: item.reward_schedule.unwrap_or_default(),
                metrics: AssetMetrics::default(),
                content_digest: digest,
                interface: item.interface,
                test_vectors: item.test_vectors,
                claimed_dependencies,
                validation: None,
            };
            self.assets.insert(id.clone(), asset.clone());
            self.by_task.entry(task).or_default().push(id);
            out.push(asset);
        }
        Ok(out)
    }

    /// Run the kind's mandatory checks plus any extra requested validators.
    pub fn evaluate(
        &self,
        id: &AssetId,
        validators: &[ValidatorSpec],
        executor: &dyn SkillExecutor,
        blobs: &BlobStore,
    ) -> Result<ValidationReport> {
        let asset = self.assets.get(id).ok_or_else(|| Error::UnknownAssetId(id.clone()))?;
        if asset.status != AssetStatus::Candidate {
            return Err(Error::AssetNotCandidate(id.clone()));
        }
        let mut plan: BTreeMap<CheckName, Option<&ValidatorSpec>> = mandatory_checks(asset.kind)
            .iter()
            .map(|c| (*c, None))
            .collect();
        for spec in validators {
            let name = spec.check_name();
            if !applicable(asset.kind, name) {
                return Err(Error::ValidatorUnavailable {
                    validator: format!("{name:?}"),
                    asset: id.clone(),
                });
            }
            plan.insert(name, Some(spec));
        }

        let payload = blobs.get(&asset.content_digest);
        let checks: Vec<CheckResult> = plan
            .into_iter()
            .map(|(name, spec)| {
                let (passed, detail) = match name {
                    CheckName::Structural => structural_check(asset, payload),
                    CheckName::Digest => match payload {
                        Some(bytes) if sha256_hex(bytes) == asset.content_digest => {
                            (true, "payload matches content digest".to_owned())
                        }
                        Some(_) => (false, "payload does not match content digest".to_owned()),
                        None => (false, "payload missing from store".to_owned()),
                    },
                    CheckName::TestVectors => test_vector_check(asset, payload, executor),
                    CheckName::ManualReview => match spec {
                        Some(ValidatorSpec::ManualReview { approved, note }) => (*approved, note.clone()),
                        _ => (false, "no review outcome supplied".to_owned()),
                    },
                };
                CheckResult { name, passed, detail }
            })
            .collect();
        let verdict = u8::from(checks.iter().all(|c| c.passed));
        Ok(ValidationReport {
            asset: id.clone(),
            checks,
            verdict,
        })
    }

    /// Attach a report produced by [`evaluate`](Self::evaluate).
    pub fn record_report(&mut self, report: ValidationReport) {
        if let Some(asset) = self.assets.get_mut(&report.asset) {
            asset.validation = Some(report);
        }
    }

    pub fn check_admit(&self, task: TaskId) -> Result<()> {
        let missing = self
            .candidates_of(task)
            .iter()
            .any(|id| {
                let a = &self.assets[id];
                a.status == AssetStatus::Candidate && a.validation.is_none()
            });
        if missing {
            return Err(Error::ValidationIncomplete(task));
        }
        Ok(())
    }

    /// Promote the task's verdict-1 candidates and reject the rest.
    /// Returns ΔK in proposal order; empty when nothing is pending.
    pub fn admit(&mut self, task: TaskId) -> Result<Vec<Asset>> {
        self.check_admit(task)?;
        let pending: Vec<AssetId> = self
            .candidates_of(task)
            .iter()
            .filter(|id| self.assets[*id].status == AssetStatus::Candidate)
            .cloned()
            .collect();
        let mut delta = Vec::new();
        for id in pending {
            let passed = self.assets[&id]
                .validation
                .as_ref()
                .is_some_and(ValidationReport::passed);
            if !passed {
                self.assets.get_mut(&id).expect("exists").status = AssetStatus::Rejected;
                continue;
            }
            let asset = &self.assets[&id];
            let mut new_edges = asset.claimed_dependencies.clone();
            if let Some(prior) = self
                .assets
                .values()
                .filter(|a| {
                    a.name == asset.name && a.version < asset.version && a.status == AssetStatus::Admitted
                })
                .max_by_key(|a| a.version)
            {
                new_edges.push(AssetEdge {
                    from: prior.id.clone(),
                    to: id.clone(),
                    relation: Relation::VersionOf,
                });
            }
            self.edges.extend(new_edges);
            let asset = self.assets.get_mut(&id).expect("exists");
            asset.status = AssetStatus::Admitted;
            self.admitted.push(id);
            delta.push(asset.clone());
        }
        Ok(delta)
    }

    /// The admitted skill behind `reference`.
    pub fn require_skill(&self, reference: &AssetId) -> Result<&Asset> {
        let asset = self.require_admitted(reference)?;
        if asset.kind != AssetKind::Skill {
            return Err(Error::NotASkill(asset.id.clone()));
        }
        Ok(asset)
    }

    pub fn record_invocation(
        &mut self,
        skill: &AssetId,
        success: bool,
        latency_ms: u64,
    ) -> Result<AssetMetrics> {
        let id = self.require_skill(skill)?.id.clone();
        let metrics = &mut self.assets.get_mut(&id).expect("exists").metrics;
        if success {
            metrics.success_count += 1;
        } else {
            metrics.failure_count += 1;
        }
        metrics.invocation_count += 1;
        metrics.latency_sum_ms = metrics.latency_sum_ms.saturating_add(latency_ms);
        metrics.latency_samples += 1;
        Ok(metrics.clone())
    }

    /// Credit one acceptance to each admitted skill in `skills`.
    pub fn record_acceptance<'a>(&mut self, skills: impl IntoIterator<Item = &'a AssetId>) {
        for id in skills {
            if let Some(asset) = self.assets.get_mut(id) {
                if asset.status == AssetStatus::Admitted && asset.kind == AssetKind::Skill {
                    asset.metrics.acceptance_hits += 1;
                }
            }
        }
    }

    /// Rank admitted skills by weighted performance signals, best first.
    /// Equal scores order by ascending id.
    pub fn score_capability(
        &self,
        candidates: &BTreeSet<AssetId>,
        weights: &ScoreWeights,
    ) -> Result<Vec<ScoredAsset>> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidateSet);
        }
        let mut skills = BTreeMap::new();
        for c in candidates {
            let skill = self.require_skill(c)?;
            skills.insert(&skill.id, skill);
        }
        let max_invocations = skills
            .values()
            .map(|s| s.metrics.invocation_count)
            .max()
            .unwrap_or(0);
        let mut ranked: Vec<ScoredAsset> = skills
            .values()
            .map(|s| ScoredAsset {
                asset: s.id.clone(),
                score: capability_score(&s.metrics, max_invocations, weights),
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.asset.cmp(&b.asset)));
        Ok(ranked)
    }

    /// Everything `asset` was (transitively) built on, ignoring version links.
    pub fn lineage(&self, asset: &AssetId) -> Result<Lineage> {
        let root = self.require_admitted(asset)?.id.clone();
        let parents = |node: &AssetId| -> Vec<&AssetEdge> {
            self.edges
                .iter()
                .filter(|e| &e.to == node && e.relation != Relation::VersionOf)
                .collect()
        };

        let mut members = BTreeSet::new();
        let mut edges = Vec::new();
        let mut queue = VecDeque::from([root.clone()]);
        while let Some(node) = queue.pop_front() {
            for edge in parents(&node) {
                edges.push(edge.clone());
                if members.insert(edge.from.clone()) {
                    queue.push_back(edge.from.clone());
                }
            }
        }
        edges.sort();
        edges.dedup();

        // An ancestor is ready once every member it feeds into is placed.
        let mut pending: BTreeMap<&AssetId, usize> = members.iter().map(|m| (m, 0)).collect();
        for e in &edges {
            if let Some(n) = pending.get_mut(&e.from) {
                *n += 1;
            }
        }
        let mut ready: BTreeSet<AssetId> = BTreeSet::new();
        for e in edges.iter().filter(|e| e.to == root) {
            if let Some(n) = pending.get_mut(&e.from) {
                *n -= 1;
                if *n == 0 {
                    ready.insert(e.from.clone());
                }
            }
        }
        let mut ancestors = Vec::with_capacity(members.len());
        while let Some(next) = ready.pop_first() {
            for e in edges.iter().filter(|e| e.to == next) {
                let n = pending.get_mut(&e.from).expect("member");
                *n -= 1;
                if *n == 0 {
                    ready.insert(e.from.clone());
                }
            }
            ancestors.push(next);
        }
        Ok(Lineage {
            asset: root,
            ancestors,
            edges,
        })
    }

    /// Kahn topological order of the admitted graph, or `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<AssetId>> {
        let mut indegree: BTreeMap<&AssetId, usize> = self.admitted.iter().map(|a| (a, 0)).collect();
        for e in &self.edges {
            *indegree.entry(&e.to).or_default() += 1;
            indegree.entry(&e.from).or_default();
        }
        let mut ready: VecDeque<&AssetId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(a, _)| *a)
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(node) = ready.pop_front() {
            order.push(node.clone());
            for e in self.edges.iter().filter(|e| &e.from == node) {
                let d = indegree.get_mut(&e.to).expect("present");
                *d -= 1;
                if *d == 0 {
                    ready.push_back(&e.to);
                }
            }
        }
        (order.len() == indegree.len()).then_some(order)
    }

    pub fn export(&self) -> GraphExport {
        let nodes = self
            .admitted()
            .map(|a| GraphNode {
                id: a.id.clone(),
                kind: a.kind,
                creator: a.creator.clone(),
            })
            .collect();
        let mut adjacency: BTreeMap<AssetId, Vec<GraphLink>> =
            self.admitted.iter().map(|a| (a.clone(), Vec::new())).collect();
        for e in &self.edges {
            adjacency.entry(e.from.clone()).or_default().push(GraphLink {
                to: e.to.clone(),
                relation: e.relation,
            });
        }
        GraphExport { nodes, adjacency }
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph assets {\n");
        for a in self.admitted() {
            let _ = writeln!(out, "  \"{}\" [label=\"{}\\n{:?}\"];", a.id, a.id, a.kind);
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                e.from,
                e.to,
                e.relation.as_str()
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Weighted sum of smoothed success, latency, frequency and acceptance signals.
pub fn capability_score(metrics: &AssetMetrics, max_invocations: u64, w: &ScoreWeights) -> f64 {
    let invocations = metrics.invocation_count as f64;
    let success = (metrics.success_count as f64 + 1.0) / (invocations + 2.0);
    let latency = 1.0 / (1.0 + metrics.mean_latency_ms() / w.latency_scale_ms);
    let frequency = if max_invocations == 0 {
        0.0
    } else {
        (1.0 + invocations).ln() / (1.0 + max_invocations as f64).ln()
    };
    let acceptance = (metrics.acceptance_hits as f64 + 1.0) / (invocations + 2.0);
    w.success * success + w.latency * latency + w.frequency * frequency + w.acceptance * acceptance
}

fn structural_check(asset: &Asset, payload: Option<&[u8]>) -> (bool, String) {
    let mut problems = Vec::new();
    if payload.is_none_or(<[u8]>::is_empty) {
        problems.push("payload is empty");
    }
    match asset.kind {
        AssetKind::Skill => {
            if asset.interface.as_deref().is_none_or(str::is_empty) {
                problems.push("skill declares no interface");
            }
            if asset.test_vectors.is_empty() {
                problems.push("skill declares no test vectors");
            }
        }
        AssetKind::Workflow => {
            if asset.interface.as_deref().is_none_or(str::is_empty) {
                problems.push("workflow declares no interface");
            }
        }
        AssetKind::Trace | AssetKind::Experience => {}
    }
    if problems.is_empty() {
        (true, format!("well-formed {:?}", asset.kind).to_lowercase())
    } else {
        (false, problems.join("; "))
    }
}

fn test_vector_check(
    asset: &Asset,
    payload: Option<&[u8]>,
    executor: &dyn SkillExecutor,
) -> (bool, String) {
    let Some(payload) = payload else {
        return (false, "payload missing from store".to_owned());
    };
    if asset.test_vectors.is_empty() {
        return (false, "no test vectors declared".to_owned());
    }
    for (i, v) in asset.test_vectors.iter().enumerate() {
        match executor.execute(asset, payload, &v.input) {
            Ok(out) if out == v.expected => {}
            Ok(out) => {
                return (
                    false,
                    format!("vector {i}: expected {:?}, got {out:?}", v.expected),
                )
            }
            Err(e) => return (false, format!("vector {i}: {e}")),
        }
    }
    (true, format!("{} vectors passed", asset.test_vectors.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skill(name: &str, deps: &[(&str, Relation)], cases: &[(&str, &str)], vectors: &[(&str, &str)]) -> CandidateItem {
        let table: BTreeMap<&str, &str> = cases.iter().copied().collect();
        CandidateItem {
            name: name.into(),
            kind: AssetKind::Skill,
            payload: serde_json::json!({ "cases": table }).to_string(),
            interface: Some("text -> text".into()),
            test_vectors: vectors
                .iter()
                .map(|(i, e)| TestVector {
                    input: (*i).into(),
                    expected: (*e).into(),
                })
                .collect(),
            dependencies: deps
                .iter()
                .map(|(a, r)| DependencyRef {
                    asset: AssetId::from(*a),
                    relation: *r,
                })
                .collect(),
            reward_schedule: None,
        }
    }

    fn plain(name: &str, kind: AssetKind) -> CandidateItem {
        CandidateItem {
            name: name.into(),
            kind,
            payload: "notes".into(),
            interface: None,
            test_vectors: vec![],
            dependencies: vec![],
            reward_schedule: None,
        }
    }

    fn admit_all(reg: &mut AssetRegistry, blobs: &mut BlobStore, task: u64, items: Vec<CandidateItem>) -> Vec<Asset> {
        let creator = ParticipantId::from("maker");
        let proposed = reg.propose(TaskId(task), &creator, items, blobs).unwrap();
        for a in &proposed {
            let report = reg.evaluate(&a.id, &[], &ScriptedExecutor, blobs).unwrap();
            reg.record_report(report);
        }
        reg.admit(TaskId(task)).unwrap()
    }

    #[test]
    fn per_kind_mandatory_checks() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let items = vec![
            skill("s", &[], &[("a", "b")], &[("a", "b")]),
            plain("w", AssetKind::Workflow),
            plain("t", AssetKind::Trace),
            plain("x", AssetKind::Experience),
        ];
        let proposed = reg.propose(TaskId(1), &ParticipantId::from("m"), items, &mut blobs).unwrap();
        let table = [
            (vec![CheckName::Structural, CheckName::Digest, CheckName::TestVectors], 1u8),
            // declares no interface
            (vec![CheckName::Structural, CheckName::Digest], 0),
            (vec![CheckName::Structural], 1),
            (vec![CheckName::Structural], 1),
        ];
        for (asset, (names, verdict)) in proposed.iter().zip(table) {
            let report = reg.evaluate(&asset.id, &[], &ScriptedExecutor, &blobs).unwrap();
            let got: Vec<CheckName> = report.checks.iter().map(|c| c.name).collect();
            assert_eq!(got, names, "{}", asset.id);
            assert_eq!(report.verdict, verdict, "{}", asset.id);
        }
        assert_eq!(
            reg.evaluate(&proposed[2].id, &[ValidatorSpec::TestVectors], &ScriptedExecutor, &blobs)
                .unwrap_err()
                .code(),
            "ValidatorUnavailable"
        );
    }

    #[test]
    fn failing_vector_gives_verdict_zero() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let proposed = reg
            .propose(
                TaskId(1),
                &ParticipantId::from("m"),
                vec![skill("s", &[], &[("a", "b"), ("c", "d")], &[("a", "b"), ("c", "x")])],
                &mut blobs,
            )
            .unwrap();
        let report = reg.evaluate(&proposed[0].id, &[], &ScriptedExecutor, &blobs).unwrap();
        assert_eq!(report.verdict, 0);
        assert!(!report.checks[2].passed);
    }

    #[test]
    fn manual_review_is_mandatory_once_requested() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let proposed = reg
            .propose(TaskId(1), &ParticipantId::from("m"), vec![plain("t", AssetKind::Trace)], &mut blobs)
            .unwrap();
        let spec = ValidatorSpec::ManualReview {
            approved: false,
            note: "incomplete".into(),
        };
        let report = reg.evaluate(&proposed[0].id, &[spec], &ScriptedExecutor, &blobs).unwrap();
        assert_eq!(report.verdict, 0);
        assert_eq!(report.checks.len(), 2);
    }

    #[test]
    fn admission_filters_and_is_idempotent() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let items = vec![
            skill("good-a", &[], &[("1", "1")], &[("1", "1")]),
            skill("bad", &[], &[("1", "1")], &[("1", "2")]),
            skill("good-b", &[], &[("1", "1")], &[("1", "1")]),
        ];
        let proposed = reg.propose(TaskId(1), &ParticipantId::from("m"), items, &mut blobs).unwrap();
        assert_eq!(reg.check_admit(TaskId(1)), Err(Error::ValidationIncomplete(TaskId(1))));
        for a in &proposed {
            let r = reg.evaluate(&a.id, &[], &ScriptedExecutor, &blobs).unwrap();
            reg.record_report(r);
        }
        let delta: Vec<AssetId> = reg.admit(TaskId(1)).unwrap().into_iter().map(|a| a.id).collect();
        assert_eq!(delta, vec![AssetId::from("good-a@1"), AssetId::from("good-b@1")]);
        assert!(reg.admit(TaskId(1)).unwrap().is_empty());
        assert_eq!(reg.admitted_count(), 2);
        assert!(reg.resolve_admitted(&AssetId::from("bad@1")).is_none());
        assert_eq!(
            reg.evaluate(&AssetId::from("bad@1"), &[], &ScriptedExecutor, &blobs).unwrap_err(),
            Error::AssetNotCandidate(AssetId::from("bad@1"))
        );
    }

    #[test]
    fn dependencies_become_edges_and_lineage_is_ordered() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("a", &[], ok, ok)]);
        admit_all(&mut reg, &mut blobs, 2, vec![skill("b", &[("a", Relation::Derives)], ok, ok)]);
        admit_all(&mut reg, &mut blobs, 3, vec![skill("c", &[("b@1", Relation::Depends)], ok, ok)]);
        let lineage = reg.lineage(&AssetId::from("c")).unwrap();
        assert_eq!(lineage.ancestors, vec![AssetId::from("b@1"), AssetId::from("a@1")]);
        assert_eq!(lineage.edges.len(), 2);
        assert!(reg.lineage(&AssetId::from("a@1")).unwrap().ancestors.is_empty());
        assert_eq!(reg.topological_order().unwrap().len(), 3);

        let err = reg
            .propose(
                TaskId(4),
                &ParticipantId::from("m"),
                vec![skill("d", &[("ghost", Relation::Depends)], ok, ok)],
                &mut blobs,
            )
            .unwrap_err();
        assert_eq!(err, Error::UnknownDependency(AssetId::from("ghost")));
    }

    #[test]
    fn diamond_lineage_places_shared_ancestor_last() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("base", &[], ok, ok)]);
        admit_all(
            &mut reg,
            &mut blobs,
            2,
            vec![
                skill("left", &[("base", Relation::Derives)], ok, ok),
                skill("right", &[("base", Relation::Depends)], ok, ok),
            ],
        );
        admit_all(
            &mut reg,
            &mut blobs,
            3,
            vec![skill(
                "top",
                &[("left", Relation::Composes), ("right", Relation::Composes), ("base", Relation::Depends)],
                ok,
                ok,
            )],
        );
        let lineage = reg.lineage(&AssetId::from("top")).unwrap();
        assert_eq!(
            lineage.ancestors,
            vec![AssetId::from("left@1"), AssetId::from("right@1"), AssetId::from("base@1")]
        );
    }

    #[test]
    fn reproposing_a_name_creates_a_version() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("s", &[], ok, ok)]);
        let delta = admit_all(&mut reg, &mut blobs, 2, vec![skill("s", &[], ok, ok)]);
        assert_eq!(delta[0].id, AssetId::from("s@2"));
        assert!(reg.edges().any(|e| e.from == AssetId::from("s@1")
            && e.to == AssetId::from("s@2")
            && e.relation == Relation::VersionOf));
        assert_eq!(reg.resolve_admitted(&AssetId::from("s")).unwrap().version, 2);
        // version links are not derivation
        assert!(reg.lineage(&AssetId::from("s@2")).unwrap().ancestors.is_empty());
    }

    #[test]
    fn invocation_counters() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("s", &[], ok, ok)]);
        let id = AssetId::from("s@1");
        reg.record_invocation(&id, true, 100).unwrap();
        reg.record_invocation(&id, true, 100).unwrap();
        reg.record_invocation(&id, false, 100).unwrap();
        let m = reg.record_invocation(&id, true, 120).unwrap();
        assert_eq!((m.success_count, m.failure_count, m.invocation_count), (3, 1, 4));
        let m = reg.record_invocation(&id, false, 10).unwrap();
        assert_eq!((m.success_count, m.failure_count), (3, 2));
        assert_eq!(
            reg.record_invocation(&AssetId::from("nope@1"), true, 1).unwrap_err(),
            Error::AssetNotAdmitted(AssetId::from("nope@1"))
        );
    }

    #[test]
    fn scoring_edge_cases() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("b", &[], ok, ok), skill("a", &[], ok, ok)]);
        let w = ScoreWeights::default();
        assert_eq!(
            reg.score_capability(&BTreeSet::new(), &w).unwrap_err(),
            Error::EmptyCandidateSet
        );
        let single = reg.score_capability(&BTreeSet::from([AssetId::from("b@1")]), &w).unwrap();
        assert_eq!(single.len(), 1);
        let both = reg
            .score_capability(&BTreeSet::from([AssetId::from("a@1"), AssetId::from("b@1")]), &w)
            .unwrap();
        assert_eq!(both[0].asset, AssetId::from("a@1"));
        assert_eq!(both[0].score, both[1].score);
    }

    #[test]
    fn weights_parse() {
        let w: ScoreWeights = "0.5,0.1,0.2,0.2".parse().unwrap();
        assert_eq!(w.success, 0.5);
        assert_eq!(w.latency_scale_ms, 1000.0);
        let w: ScoreWeights = "0.5,0.1,0.2,0.2,250".parse().unwrap();
        assert_eq!(w.latency_scale_ms, 250.0);
        assert!("1,2".parse::<ScoreWeights>().is_err());
    }

    #[test]
    fn exports() {
        let mut reg = AssetRegistry::default();
        let mut blobs = BlobStore::default();
        let ok = &[("x", "y")][..];
        admit_all(&mut reg, &mut blobs, 1, vec![skill("a", &[], ok, ok)]);
        admit_all(&mut reg, &mut blobs, 2, vec![skill("b", &[("a", Relation::Derives)], ok, ok)]);
        let export = reg.export();
        assert_eq!(export.nodes.len(), 2);
        assert_eq!(export.adjacency[&AssetId::from("a@1")][0].to, AssetId::from("b@1"));
        let dot = reg.to_dot();
        assert!(dot.contains("\"a@1\" -> \"b@1\" [label=\"derives\"]"));
    }
}
