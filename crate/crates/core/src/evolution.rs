//! Governed self-modification: hypothesis-carrying patches evaluated in
//! copy-on-write sandboxes, gated merges, and a seeded genetic round over
//! forked agent instances.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::provenance::{BindingKind, EventDraft};
use crate::runtime::{
    fork, AgentInstance, CycleOptions, EndCriteria, Intent, Output, ReasonerResponse, Runtime, ScriptedReasoner,
    Transcript,
};
use crate::store::{ArtifactId, Kind, NewArtifact, Store, StoreSnapshot};
use crate::text::{estimate_tokens, LexicalScorer};
use crate::view::{Disclosure, StepRecord, View, ViewSegment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStatus {
    Proposed,
    Sandboxed,
    Merged,
    Rejected,
}

impl PatchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PatchStatus::Proposed => "proposed",
            PatchStatus::Sandboxed => "sandboxed",
            PatchStatus::Merged => "merged",
            PatchStatus::Rejected => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub patch_id: u64,
    pub target: ArtifactId,
    pub hypothesis: String,
    pub edit: String,
    /// Version numbers to roll back to, most recent first.
    pub rollback_chain: Vec<u32>,
    pub status: PatchStatus,
}

/// A copy-on-write overlay of a store. Writes land in `store`; `base` never
/// changes.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub id: String,
    pub depth: u32,
    base: StoreSnapshot,
    store: Store,
}

impl Sandbox {
    pub fn base(&self) -> &StoreSnapshot {
        &self.base
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    /// Ids changed relative to the base.
    pub fn overlay(&self) -> Vec<ArtifactId> {
        self.store.diverged_from(self.base.as_store())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Check {
    /// Some step output contains the text.
    OutputContains(String),
    OutputLacks(String),
    /// Some rendered view contains the text.
    ViewContains(String),
    ArtifactContains { id: String, text: String },
    ArtifactLacks { id: String, text: String },
}

impl Check {
    fn holds(&self, instance: &AgentInstance, store: &Store) -> bool {
        let steps = instance.trajectory.steps();
        match self {
            Check::OutputContains(t) => steps.iter().any(|s| s.output.text.contains(t.as_str())),
            Check::OutputLacks(t) => !steps.iter().any(|s| s.output.text.contains(t.as_str())),
            Check::ViewContains(t) => steps.iter().any(|s| s.view.render().contains(t.as_str())),
            Check::ArtifactContains { id, text } => store.get(id).is_ok_and(|a| a.content().contains(text.as_str())),
            Check::ArtifactLacks { id, text } => store.get(id).is_ok_and(|a| !a.content().contains(text.as_str())),
        }
    }
}

/// A scripted replay: one cycle from `intent` under `transcript`, judged by
/// `checks`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayTask {
    pub id: String,
    pub intent: String,
    pub transcript: Transcript,
    pub budget: u64,
    pub max_steps: usize,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSuite {
    pub id: String,
    pub tasks: Vec<ReplayTask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub candidate_id: String,
    pub suite_id: String,
    pub passed: usize,
    pub total: usize,
    pub score: f64,
    pub token_cost: u64,
    pub verdict: Verdict,
    /// Score of the unpatched arm in A/B mode.
    pub control_score: Option<f64>,
}

impl FitnessReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.score >= threshold
    }

    pub fn summary(&self) -> String {
        let mut s = format!("suite {}: {}/{} checks, score {}", self.suite_id, self.passed, self.total, self.score);
        if let Some(c) = self.control_score {
            let _ = write!(s, ", control {c}");
        }
        s
    }

    pub const TSV_HEADER: &'static str = "candidate_id\tsuite_id\tpassed\ttotal\tscore\ttoken_cost\tverdict\tcontrol_score";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.candidate_id,
            self.suite_id,
            self.passed,
            self.total,
            self.score,
            self.token_cost,
            if self.verdict == Verdict::Pass { "pass" } else { "fail" },
            self.control_score.map(|c| c.to_string()).unwrap_or_default()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MutationOp {
    DropStep,
    SwapToolReturn,
    InjectFragment,
}

impl MutationOp {
    pub const ALL: [MutationOp; 3] = [MutationOp::DropStep, MutationOp::SwapToolReturn, MutationOp::InjectFragment];

    pub fn as_str(self) -> &'static str {
        match self {
            MutationOp::DropStep => "drop-step",
            MutationOp::SwapToolReturn => "swap-tool-return",
            MutationOp::InjectFragment => "inject-fragment",
        }
    }
}

impl FromStr for MutationOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MutationOp::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mutation op `{s}`")))
    }
}

/// What a mutation actually did to one candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    DropStep { index: usize },
    SwapToolReturn { step: u64, alternate: usize },
    InjectFragment { at: usize, fragment: usize },
    /// The chosen operator had nothing to act on.
    Inert(MutationOp),
}

impl core::fmt::Display for Mutation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Mutation::DropStep { index } => write!(f, "drop-step {index}"),
            Mutation::SwapToolReturn { step, alternate } => write!(f, "swap-tool-return step {step} alternate {alternate}"),
            Mutation::InjectFragment { at, fragment } => write!(f, "inject-fragment {fragment} at {at}"),
            Mutation::Inert(op) => write!(f, "{} (inert)", op.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    /// Most patches merged per `select_merge` call.
    pub cap: usize,
    pub pass_threshold: f64,
    pub mutation_ops: Vec<MutationOp>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig { cap: 5, pass_threshold: 1.0, mutation_ops: MutationOp::ALL.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneticConfig {
    pub population: usize,
    pub survivors: usize,
    pub seed: u64,
    /// Intent the candidates are forked for.
    pub intent: String,
    pub fork_budget: u64,
    /// Replacement reasoner responses, keyed by transcript step.
    pub alternates: Vec<(u64, ReasonerResponse)>,
    pub fragments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateResult {
    pub index: usize,
    pub instance_id: String,
    pub mutation: Mutation,
    pub report: FitnessReport,
}

#[derive(Debug, Clone)]
pub struct GeneticOutcome {
    pub candidates: Vec<CandidateResult>,
    /// Survivor instances in rank order.
    pub survivors: Vec<AgentInstance>,
    pub traces: Vec<ArtifactId>,
}

pub type RuntimeFactory = Box<dyn Fn() -> Runtime + Send + Sync>;

/// Owns patch and sandbox numbering plus the evaluation runtime.
pub struct Evolver {
    pub config: EvolveConfig,
    next_patch: u64,
    next_sandbox: u64,
    make_runtime: RuntimeFactory,
}

impl Default for Evolver {
    fn default() -> Self {
        Evolver::new(EvolveConfig::default())
    }
}

impl Evolver {
    pub fn new(config: EvolveConfig) -> Self {
        Evolver { config, next_patch: 0, next_sandbox: 0, make_runtime: Box::new(Runtime::new) }
    }

    pub fn with_runtime(mut self, make_runtime: RuntimeFactory) -> Self {
        self.make_runtime = make_runtime;
        self
    }

    pub fn propose_patch(&mut self, store: &Store, target: &str, new_body: &str, hypothesis: &str) -> Result<Patch> {
        if hypothesis.trim().is_empty() {
            return Err(Error::HypothesisRequired);
        }
        let version = store.get(target)?.version();
        self.next_patch += 1;
        Ok(Patch {
            patch_id: self.next_patch,
            target: target.into(),
            hypothesis: hypothesis.into(),
            edit: new_body.into(),
            rollback_chain: alloc::vec![version],
            status: PatchStatus::Proposed,
        })
    }

    /// Opens a sandbox over `store`, or over `parent`'s current state when
    /// nesting.
    pub fn open_sandbox(&mut self, store: &Store, parent: Option<&Sandbox>) -> Sandbox {
        self.next_sandbox += 1;
        let (base, depth) = match parent {
            Some(p) => (p.store.snapshot(), p.depth + 1),
            None => (store.snapshot(), 1),
        };
        Sandbox { id: format!("sandbox-{}", self.next_sandbox), depth, store: base.fork(), base }
    }

    /// Runs every task of `suite` as `instance` against a private copy of
    /// `store`. Transcript `overrides` replace responses by step.
    pub fn run_suite(
        &self,
        store: &Store,
        instance: &AgentInstance,
        suite: &TaskSuite,
        overrides: &BTreeMap<u64, ReasonerResponse>,
        candidate_id: &str,
    ) -> Result<(FitnessReport, Vec<AgentInstance>)> {
        if suite.tasks.is_empty() {
            return Err(Error::EmptySuite);
        }
        let (mut passed, mut total, mut cost) = (0, 0, 0);
        let mut finals = Vec::new();
        for task in &suite.tasks {
            let mut scratch = store.clone();
            let mut agent = instance.clone();
            agent.end_criteria = EndCriteria::max_steps(instance.trajectory.len() + task.max_steps);
            let mut transcript = task.transcript.clone();
            for (step, response) in overrides {
                transcript = transcript.with_override(*step, response.clone());
            }
            let mut reasoner = ScriptedReasoner::new(transcript);
            let mut runtime = (self.make_runtime)();
            let before = agent.trajectory.len();
            let ran = runtime.run_cycle(
                &mut scratch,
                &mut agent,
                Intent::user(task.intent.as_str()),
                &CycleOptions::new(task.budget, task.max_steps),
                &mut reasoner,
            );
            cost += agent.trajectory.steps()[before..]
                .iter()
                .map(|s| s.view.total_tokens + estimate_tokens(&s.output.text))
                .sum::<u64>();
            total += task.checks.len();
            if ran.is_ok() {
                passed += task.checks.iter().filter(|c| c.holds(&agent, &scratch)).count();
            }
            finals.push(agent);
        }
        let score = if total == 0 { 1.0 } else { passed as f64 / total as f64 };
        let verdict = if score >= self.config.pass_threshold { Verdict::Pass } else { Verdict::Fail };
        let report = FitnessReport {
            candidate_id: candidate_id.into(),
            suite_id: suite.id.clone(),
            passed,
            total,
            score,
            token_cost: cost,
            verdict,
            control_score: None,
        };
        Ok((report, finals))
    }

    /// Applies `patch` inside `sandbox` and replays `suite` there. With
    /// `ab`, the suite also runs on an unpatched sibling of the sandbox.
    pub fn evaluate_in_sandbox(
        &self,
        sandbox: &mut Sandbox,
        patch: &mut Patch,
        suite: &TaskSuite,
        ab: bool,
    ) -> Result<FitnessReport> {
        if !matches!(patch.status, PatchStatus::Proposed | PatchStatus::Sandboxed) {
            return Err(Error::PatchState(patch.patch_id));
        }
        if suite.tasks.is_empty() {
            return Err(Error::EmptySuite);
        }
        let control = sandbox.store.clone();
        sandbox.store.revise(patch.target.as_str(), &patch.edit, &patch.hypothesis, "evolver")?;
        let agent = AgentInstance::new(format!("replay-{}", patch.patch_id), EndCriteria::max_steps(1));
        let id = format!("patch-{}", patch.patch_id);
        let (mut report, _) = self.run_suite(&sandbox.store, &agent, suite, &BTreeMap::new(), &id)?;
        if ab {
            let (control_report, _) = self.run_suite(&control, &agent, suite, &BTreeMap::new(), &id)?;
            report.control_score = Some(control_report.score);
        }
        patch.status = PatchStatus::Sandboxed;
        Ok(report)
    }

    /// Merges, in patch-id order, every patch whose reports all pass and
    /// beat their control arm, up to the configured cap. Failing patches are
    /// rejected; passing patches beyond the cap stay sandboxed.
    pub fn select_merge(
        &self,
        store: &mut Store,
        candidates: &mut [(Patch, Vec<FitnessReport>)],
        pass_threshold: f64,
    ) -> Result<Vec<u64>> {
        candidates.sort_by_key(|(p, _)| p.patch_id);
        let mut merged = Vec::new();
        for (patch, reports) in candidates.iter_mut() {
            if patch.status != PatchStatus::Sandboxed || reports.is_empty() {
                return Err(Error::PatchState(patch.patch_id));
            }
        }
        for (patch, reports) in candidates.iter_mut() {
            let good = reports
                .iter()
                .all(|r| r.passes(pass_threshold) && r.control_score.is_none_or(|c| r.score >= c));
            if !good {
                patch.status = PatchStatus::Rejected;
                continue;
            }
            if merged.len() >= self.config.cap {
                continue;
            }
            let current = store.get(patch.target.as_str())?.version();
            if patch.rollback_chain.first() != Some(&current) {
                patch.rollback_chain.insert(0, current);
            }
            let summary: Vec<String> = reports.iter().map(FitnessReport::summary).collect();
            let rationale = format!("{} [{}]", patch.hypothesis, summary.join("; "));
            store.revise(patch.target.as_str(), &patch.edit, &rationale, "evolver")?;
            patch.status = PatchStatus::Merged;
            merged.push(patch.patch_id);
        }
        Ok(merged)
    }

    /// One generation: fork `population` mutated candidates from
    /// `baseline`, replay `suite` for each in isolation, keep the best
    /// `survivors`. Only survivors leave records (fork artifact, inherit
    /// event, trace artifact) in `store`.
    pub fn genetic_round(
        &self,
        store: &mut Store,
        baseline: &AgentInstance,
        suite: &TaskSuite,
        config: &GeneticConfig,
    ) -> Result<GeneticOutcome> {
        if config.survivors == 0 || config.population < config.survivors {
            return Err(Error::InvalidPopulation { population: config.population, survivors: config.survivors });
        }
        if self.config.mutation_ops.is_empty() {
            return Err(Error::NoMutations);
        }
        if suite.tasks.is_empty() {
            return Err(Error::EmptySuite);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut alternates: Vec<usize> = (0..config.alternates.len()).collect();
        shuffle(&mut alternates, &mut rng);
        let mut next_alternate = 0;
        let mut round = store.clone();
        let mut candidates = Vec::with_capacity(config.population);
        for index in 0..config.population {
            let mut child = fork(&mut round, &[baseline], &config.intent, config.fork_budget, None, &LexicalScorer)?;
            let op = self.config.mutation_ops[pick(&mut rng, self.config.mutation_ops.len())];
            let mut overrides = BTreeMap::new();
            let mutation = match op {
                MutationOp::DropStep if !child.trajectory.is_empty() => {
                    let at = pick(&mut rng, child.trajectory.len());
                    let mut steps = child.trajectory.steps().to_vec();
                    steps.remove(at);
                    child.trajectory = crate::view::Trajectory::from_steps(child.id.clone(), steps);
                    Mutation::DropStep { index: at }
                }
                MutationOp::SwapToolReturn if !alternates.is_empty() => {
                    let alt = alternates[next_alternate % alternates.len()];
                    next_alternate += 1;
                    let (step, response) = &config.alternates[alt];
                    overrides.insert(*step, response.clone());
                    Mutation::SwapToolReturn { step: *step, alternate: alt }
                }
                MutationOp::InjectFragment if !config.fragments.is_empty() => {
                    let fragment = pick(&mut rng, config.fragments.len());
                    let at = pick(&mut rng, child.trajectory.len() + 1);
                    let mut steps = child.trajectory.steps().to_vec();
                    steps.insert(at, alloc::sync::Arc::new(fragment_step(fragment, &config.fragments[fragment])));
                    child.trajectory = crate::view::Trajectory::from_steps(child.id.clone(), steps);
                    Mutation::InjectFragment { at, fragment }
                }
                other => Mutation::Inert(other),
            };
            candidates.push((index, child, mutation, overrides));
        }
        let mut results = Vec::with_capacity(candidates.len());
        let mut finals = Vec::with_capacity(candidates.len());
        for (index, child, mutation, overrides) in &candidates {
            let sandbox = round.clone();
            let (report, ran) = self.run_suite(&sandbox, child, suite, overrides, &child.id)?;
            results.push(CandidateResult { index: *index, instance_id: child.id.clone(), mutation: mutation.clone(), report });
            finals.push(ran);
        }
        let mut order: Vec<usize> = (0..results.len()).collect();
        order.sort_by(|&a, &b| {
            results[b].report.score.partial_cmp(&results[a].report.score).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        order.truncate(config.survivors);
        store.absorb_counters(&round);
        let baseline_lines: BTreeSet<&str> =
            baseline.trajectory.steps().iter().flat_map(|s| s.output.text.lines()).collect();
        let mut survivors = Vec::new();
        let mut traces = Vec::new();
        for &i in &order {
            let (_, child, mutation, _) = &candidates[i];
            let record = round
                .of_kind(Kind::Fork)
                .find(|a| a.front_matter().get("child") == Some(child.id.as_str()))
                .ok_or_else(|| Error::NotFound(format!("fork record of {}", child.id)))?
                .clone();
            let fork_record = if store.contains(record.id().as_str()) {
                store.get(record.id().as_str())?.id().clone()
            } else {
                store
                    .put(
                        NewArtifact::new(Kind::Fork, record.content())
                            .id(record.id().clone())
                            .name(record.name())
                            .meta("child", child.id.as_str())
                            .author(child.id.as_str()),
                    )?
                    .id()
                    .clone()
            };
            let step = store.clock();
            store.emit(
                EventDraft::new(BindingKind::Inherit, child.id.as_str(), fork_record.as_str())
                    .evidence(format!("parents={} mutation={mutation}", baseline.id))
                    .step(step),
            )?;
            let mut seen = BTreeSet::new();
            let mut novel = String::new();
            for run in &finals[i] {
                for line in run.trajectory.steps().iter().flat_map(|s| s.output.text.lines()) {
                    if !line.trim().is_empty() && !baseline_lines.contains(line) && seen.insert(line) {
                        novel.push_str(line);
                        novel.push('\n');
                    }
                }
            }
            let report = &results[i].report;
            let trace = store.put(
                NewArtifact::new(Kind::Trace, novel)
                    .name(format!("trace-{}", child.id))
                    .meta("candidate", child.id.as_str())
                    .meta("mutation", mutation.to_string())
                    .meta("score", report.score.to_string())
                    .author("evolver"),
            )?;
            traces.push(trace.id().clone());
            survivors.push(child.clone());
        }
        Ok(GeneticOutcome { candidates: results, survivors, traces })
    }
}

fn pick(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        items.swap(i, pick(rng, i + 1));
    }
}

fn fragment_step(index: usize, text: &str) -> StepRecord {
    let source: ArtifactId = format!("fragment-{index}").into();
    StepRecord {
        view: View::from_segments("injected", alloc::vec![ViewSegment::new(source, text.into(), Disclosure::Full)]),
        intent: Intent::agent("injected fragment"),
        output: Output::text(text),
    }
}
