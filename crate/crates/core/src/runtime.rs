//! The execution cycle: project a view, execute the reasoner, apply
//! declared updates, formulate follow-up intents.
//!
//! Reasoner output declares side effects with line directives:
//!
//! ```text
//! ACTION: <tool> <args>
//! WRITE: <artifact-id>
//! <new body lines...>
//! END
//! RATIONALE: <why the write is made>
//! INTENT: <follow-up instruction> [@target-agent]
//! ```
//!
//! Tool results and failures are appended to the step's environment
//! feedback; a failing action never aborts the step.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use sha2::{Digest, Sha256};

use crate::binding::{lens_select, Candidate};
use crate::error::{Error, Result};
use crate::provenance::{BindingKind, EventDraft, EventId, Outcome};
use crate::store::{hex, ArtifactId, Kind, NewArtifact, Store};
use crate::text::{overlap, LexicalScorer, Scorer};
use crate::view::{curate_indices, Projector, StepRecord, Trajectory, View, ViewSegment, Disclosure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IntentSource {
    User,
    Agent,
    SelfDerived,
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Intent {
    pub text: String,
    pub source: IntentSource,
    pub target: Option<String>,
}

impl Intent {
    pub fn user(text: impl Into<String>) -> Self {
        Intent { text: text.into(), source: IntentSource::User, target: None }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Intent { text: text.into(), source: IntentSource::Agent, target: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Action {
    Tool { name: String, args: String },
    Write { artifact: ArtifactId, content: String, rationale: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Output {
    pub text: String,
    pub environment_feedback: String,
    pub actions: Vec<Action>,
}

impl Output {
    pub fn text(text: impl Into<String>) -> Self {
        Output { text: text.into(), ..Default::default() }
    }
}

/// What a reasoner sees for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReasonerRequest {
    pub view_text: String,
    pub intent_text: String,
    pub history_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReasonerResponse {
    pub text: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub actions: Vec<String>,
}

impl ReasonerResponse {
    pub fn text(text: impl Into<String>) -> Self {
        ReasonerResponse { text: text.into(), actions: Vec::new() }
    }
}

/// A uniform reasoning engine behind every agent.
pub trait Reasoner {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse>;
}

impl<R: Reasoner + ?Sized> Reasoner for Box<R> {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse> {
        (**self).respond(request)
    }
}

/// Canned responses keyed by call index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub responses: BTreeMap<u64, ReasonerResponse>,
}

impl Transcript {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        Transcript {
            responses: texts
                .iter()
                .enumerate()
                .map(|(i, t)| (i as u64, ReasonerResponse::text(t.as_ref())))
                .collect(),
        }
    }

    pub fn with_override(mut self, step: u64, response: ReasonerResponse) -> Self {
        self.responses.insert(step, response);
        self
    }
}

/// Replays a transcript; bit-deterministic by construction.
#[derive(Debug, Clone)]
pub struct ScriptedReasoner {
    transcript: Transcript,
    cursor: u64,
}

impl ScriptedReasoner {
    pub fn new(transcript: Transcript) -> Self {
        ScriptedReasoner { transcript, cursor: 0 }
    }

    pub fn calls(&self) -> u64 {
        self.cursor
    }
}

impl Reasoner for ScriptedReasoner {
    fn respond(&mut self, _request: &ReasonerRequest) -> Result<ReasonerResponse> {
        let step = self.cursor;
        let response = self
            .transcript
            .responses
            .get(&step)
            .cloned()
            .ok_or(Error::TranscriptExhausted(step))?;
        self.cursor += 1;
        Ok(response)
    }
}

/// Extractive reasoner: answers with the view line sharing the most words
/// with the intent.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalReasoner;

impl Reasoner for LexicalReasoner {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse> {
        let best = request
            .view_text
            .lines()
            .filter(|l| !l.starts_with("### ") && !l.trim().is_empty())
            .map(|l| (overlap(&request.intent_text, l), l))
            .fold(None::<(usize, &str)>, |acc, (s, l)| match acc {
                Some((bs, _)) if bs >= s => acc,
                _ => Some((s, l)),
            });
        let text = match best {
            Some((s, line)) if s > 0 => line.trim().to_string(),
            _ => "no supporting evidence in view".to_string(),
        };
        Ok(ReasonerResponse::text(text))
    }
}

/// Parses `ACTION:` and `WRITE:` directives out of reasoner text.
pub fn parse_actions(text: &str) -> Vec<Action> {
    let lines: Vec<&str> = text.lines().collect();
    let rationale = lines
        .iter()
        .find_map(|l| l.strip_prefix("RATIONALE:"))
        .map(|r| r.trim().to_string())
        .or_else(|| {
            lines
                .iter()
                .map(|l| l.trim())
                .find(|l| !l.is_empty() && !is_directive(l))
                .map(str::to_string)
        });
    let mut actions = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if let Some(rest) = line.strip_prefix("ACTION:") {
            let rest = rest.trim();
            let (name, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            if !name.is_empty() {
                actions.push(Action::Tool { name: name.into(), args: args.trim().into() });
            }
        } else if let Some(id) = line.strip_prefix("WRITE:") {
            let mut body = Vec::new();
            i += 1;
            while i < lines.len() && lines[i].trim_end() != "END" {
                body.push(lines[i]);
                i += 1;
            }
            let id = id.trim();
            if !id.is_empty() {
                actions.push(Action::Write {
                    artifact: id.into(),
                    content: body.join("\n"),
                    rationale: rationale.clone().unwrap_or_else(|| format!("write to {id}")),
                });
            }
        }
        i += 1;
    }
    actions
}

fn is_directive(line: &str) -> bool {
    ["ACTION:", "WRITE:", "RATIONALE:", "INTENT:", "END"].iter().any(|p| line.starts_with(p))
}

/// Turns a trajectory into follow-up intents.
pub trait Formulator {
    fn formulate(&self, trajectory: &Trajectory) -> Result<Vec<Intent>>;
}

/// Extracts `INTENT:` lines of the last output; a trailing `@agent` token
/// becomes the target.
#[derive(Debug, Clone, Copy, Default)]
pub struct LineFormulator;

impl Formulator for LineFormulator {
    fn formulate(&self, trajectory: &Trajectory) -> Result<Vec<Intent>> {
        let last = trajectory.last().ok_or(Error::NothingToFormulate)?;
        Ok(last
            .output
            .text
            .lines()
            .filter_map(|l| l.strip_prefix("INTENT:"))
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                let (text, target) = match t.rsplit_once(char::is_whitespace) {
                    Some((head, tag)) if tag.len() > 1 && tag.starts_with('@') => {
                        (head.trim_end(), Some(tag[1..].to_string()))
                    }
                    _ => (t, None),
                };
                Intent { text: text.into(), source: IntentSource::Agent, target }
            })
            .collect())
    }
}

pub fn formulate(trajectory: &Trajectory) -> Result<Vec<Intent>> {
    LineFormulator.formulate(trajectory)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndPredicate {
    /// Some output or feedback contains this text.
    RequiredOutputPresent(String),
    /// Summed view tokens across the trajectory reached this many.
    BudgetExhausted(u64),
    SignalReceived(String),
    MaxSteps(usize),
}

impl EndPredicate {
    fn holds(&self, instance: &AgentInstance) -> bool {
        let steps = instance.trajectory.steps();
        match self {
            EndPredicate::RequiredOutputPresent(text) => steps
                .iter()
                .any(|s| s.output.text.contains(text.as_str()) || s.output.environment_feedback.contains(text.as_str())),
            EndPredicate::BudgetExhausted(limit) => steps.iter().map(|s| s.view.total_tokens).sum::<u64>() >= *limit,
            EndPredicate::SignalReceived(name) => instance.signals.contains(name),
            EndPredicate::MaxSteps(n) => steps.len() >= *n,
        }
    }
}

/// Disjunction of completion predicates plus hooks run once on termination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndCriteria {
    predicates: Vec<EndPredicate>,
    hooks: Vec<String>,
}

impl EndCriteria {
    pub fn new(predicates: Vec<EndPredicate>) -> Result<Self> {
        if predicates.is_empty() {
            return Err(Error::NoPredicates);
        }
        Ok(EndCriteria { predicates, hooks: Vec::new() })
    }

    pub fn max_steps(n: usize) -> Self {
        EndCriteria { predicates: alloc::vec![EndPredicate::MaxSteps(n)], hooks: Vec::new() }
    }

    pub fn with_hook(mut self, hook: impl Into<String>) -> Self {
        self.hooks.push(hook.into());
        self
    }

    pub fn predicates(&self) -> &[EndPredicate] {
        &self.predicates
    }

    pub fn hooks(&self) -> &[String] {
        &self.hooks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Active,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInstance {
    pub id: String,
    pub trajectory: Trajectory,
    pub end_criteria: EndCriteria,
    pub parent_ids: Vec<String>,
    pub status: AgentStatus,
    signals: BTreeSet<String>,
    hooks_ran: bool,
}

impl AgentInstance {
    pub fn new(id: impl Into<String>, end_criteria: EndCriteria) -> Self {
        let id = id.into();
        AgentInstance {
            trajectory: Trajectory::new(id.clone()),
            id,
            end_criteria,
            parent_ids: Vec::new(),
            status: AgentStatus::Active,
            signals: BTreeSet::new(),
            hooks_ran: false,
        }
    }

    pub fn with_trajectory(mut self, mut trajectory: Trajectory) -> Self {
        trajectory.set_owner(self.id.clone());
        self.trajectory = trajectory;
        self
    }

    pub fn is_active(&self) -> bool {
        self.status == AgentStatus::Active
    }

    pub fn deliver_signal(&mut self, name: impl Into<String>) {
        self.signals.insert(name.into());
    }
}

/// Digest of an instance's ordered view sequence; intents and outputs do
/// not participate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AgentClassSignature(pub String);

impl fmt::Display for AgentClassSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn class_signature(instance: &AgentInstance) -> AgentClassSignature {
    class_signature_of(instance.trajectory.steps().iter().map(|s| &s.view))
}

pub fn class_signature_of<'a>(views: impl IntoIterator<Item = &'a View>) -> AgentClassSignature {
    let mut h = Sha256::new();
    for view in views {
        let text = view.render();
        h.update((text.len() as u64).to_le_bytes());
        h.update(text.as_bytes());
    }
    AgentClassSignature(hex(&h.finalize()))
}

/// Digest over every recorded step, passed to reasoners in place of the
/// full history.
pub fn trajectory_digest(trajectory: &Trajectory) -> String {
    let mut h = Sha256::new();
    for s in trajectory.steps() {
        for field in [s.view.render().as_str(), &s.intent.text, &s.output.text, &s.output.environment_feedback] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
    }
    hex(&h.finalize())
}

/// Canonical text form of a trajectory, used to compare replays byte-wise.
pub fn serialize_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "owner {}", trajectory.owner());
    for (i, s) in trajectory.steps().iter().enumerate() {
        let _ = writeln!(out, "step {i} budget {} tokens {}", s.view.budget, s.view.total_tokens);
        out.push_str(&s.view.render());
        let _ = writeln!(out, "intent {:?} {:?} {:?}", s.intent.source, s.intent.text, s.intent.target);
        let _ = writeln!(out, "output {:?}", s.output.text);
        let _ = writeln!(out, "feedback {:?}", s.output.environment_feedback);
        let _ = writeln!(out, "actions {:?}", s.output.actions);
    }
    out
}

pub type ToolFn = Box<dyn FnMut(&str) -> core::result::Result<String, String> + Send>;
pub type HookFn = Box<dyn FnMut(&AgentInstance, &mut Store) -> Result<()> + Send>;

/// Built-in hook: stores the last output as a memory artifact.
pub const DISTILL_SUMMARY: &str = "distill-summary";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndEvaluation {
    pub done: bool,
    pub fired: Vec<EndPredicate>,
    pub hooks_run: Vec<String>,
    pub unknown_hooks: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EndCriteria,
    NoIntents,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport {
    pub steps_run: usize,
    pub stop: StopReason,
}

/// Lens stage used by `run_cycle` when a bundle maps the lens role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LensStage {
    pub process: String,
    pub k: usize,
    pub brief_limit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleOptions {
    pub budget: u64,
    pub max_steps: usize,
    pub lens: Option<LensStage>,
}

impl CycleOptions {
    pub fn new(budget: u64, max_steps: usize) -> Self {
        CycleOptions { budget, max_steps, lens: None }
    }

    pub fn from_bundle(bundle: &RoleBundle, budget: u64, max_steps: usize) -> Self {
        let lens = bundle.process_for(Pattern::Lens).map(|p| LensStage {
            process: p.into(),
            k: 5,
            brief_limit: crate::view::DEFAULT_BRIEF_LIMIT,
        });
        CycleOptions { budget, max_steps, lens }
    }
}

/// Tools, termination hooks and the formulator shared by every instance an
/// embedding application runs. Stores are passed per call so the same
/// runtime can drive the persistent store or any sandbox.
pub struct Runtime {
    tools: BTreeMap<String, ToolFn>,
    hooks: BTreeMap<String, HookFn>,
    formulator: Box<dyn Formulator + Send>,
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new()
    }
}

impl Runtime {
    pub fn new() -> Self {
        let mut rt = Runtime { tools: BTreeMap::new(), hooks: BTreeMap::new(), formulator: Box::new(LineFormulator) };
        rt.register_hook(DISTILL_SUMMARY, Box::new(distill_summary));
        rt
    }

    pub fn register_tool(&mut self, name: impl Into<String>, tool: ToolFn) {
        self.tools.insert(name.into(), tool);
    }

    pub fn register_hook(&mut self, name: impl Into<String>, hook: HookFn) {
        self.hooks.insert(name.into(), hook);
    }

    pub fn set_formulator(&mut self, formulator: Box<dyn Formulator + Send>) {
        self.formulator = formulator;
    }

    pub fn execute_step(
        &mut self,
        store: &mut Store,
        instance: &mut AgentInstance,
        view: View,
        intent: &Intent,
        reasoner: &mut dyn Reasoner,
    ) -> Result<Output> {
        if !instance.is_active() {
            return Err(Error::AgentTerminated(instance.id.clone()));
        }
        if !view.is_within_budget() {
            return Err(Error::BudgetExceeded { total: view.total_tokens, budget: view.budget });
        }
        if intent.text.trim().is_empty() {
            return Err(Error::EmptyIntent);
        }
        let request = ReasonerRequest {
            view_text: view.render(),
            intent_text: intent.text.clone(),
            history_digest: trajectory_digest(&instance.trajectory),
        };
        let response = reasoner.respond(&request)?;
        let mut actions = parse_actions(&response.text);
        for raw in &response.actions {
            actions.extend(parse_actions(raw));
        }
        let mut feedback = String::new();
        for action in &actions {
            self.dispatch(store, &instance.id, action, &mut feedback)?;
        }
        let output = Output { text: response.text, environment_feedback: feedback, actions };
        instance.trajectory.push(StepRecord { view, intent: intent.clone(), output: output.clone() });
        store.advance_clock(1);
        self.evaluate_end_criteria(store, instance)?;
        Ok(output)
    }

    fn dispatch(&mut self, store: &mut Store, agent: &str, action: &Action, feedback: &mut String) -> Result<()> {
        let step = store.clock();
        match action {
            Action::Tool { name, args } => match self.tools.get_mut(name) {
                Some(tool) => {
                    let (line, outcome) = match tool(args) {
                        Ok(out) => (format!("[{name}] {out}"), Outcome::Validated),
                        Err(e) => (format!("[{name}] error: {e}"), Outcome::Failed),
                    };
                    push_line(feedback, &line);
                    store.emit(
                        EventDraft::new(BindingKind::ToolCall, agent, name.as_str())
                            .evidence(format!("args={args}"))
                            .step(step)
                            .outcome(outcome),
                    )?;
                }
                None => push_line(feedback, &format!("UnknownTool: {name}")),
            },
            Action::Write { artifact, content, rationale } => {
                match store.revise(artifact.as_str(), content, rationale, agent) {
                    Ok(entry) => push_line(feedback, &format!("[write {artifact}] v{}", entry.version)),
                    Err(e) => push_line(feedback, &format!("[write {artifact}] error: {e}")),
                }
            }
        }
        Ok(())
    }

    /// Tests the end criteria; on the first true result runs the termination
    /// hooks, once, and terminates the instance.
    pub fn evaluate_end_criteria(&mut self, store: &mut Store, instance: &mut AgentInstance) -> Result<EndEvaluation> {
        let fired: Vec<EndPredicate> =
            instance.end_criteria.predicates.iter().filter(|p| p.holds(instance)).cloned().collect();
        let mut eval =
            EndEvaluation { done: !fired.is_empty(), fired, hooks_run: Vec::new(), unknown_hooks: Vec::new() };
        if eval.done && !instance.hooks_ran {
            instance.hooks_ran = true;
            for name in instance.end_criteria.hooks.clone() {
                match self.hooks.get_mut(&name) {
                    Some(hook) => {
                        hook(instance, store)?;
                        eval.hooks_run.push(name);
                    }
                    None => eval.unknown_hooks.push(name),
                }
            }
        }
        if eval.done {
            instance.status = AgentStatus::Terminated;
        }
        Ok(eval)
    }

    /// Project → execute → update → formulate until the end criteria fire,
    /// no intents remain, or `max_steps` steps ran.
    pub fn run_cycle(
        &mut self,
        store: &mut Store,
        instance: &mut AgentInstance,
        intent: Intent,
        options: &CycleOptions,
        reasoner: &mut dyn Reasoner,
    ) -> Result<CycleReport> {
        if options.max_steps == 0 {
            return Err(Error::InvalidMaxSteps);
        }
        if options.budget == 0 {
            return Err(Error::InvalidBudget);
        }
        let mut queue = VecDeque::from([intent]);
        let mut steps_run = 0;
        while steps_run < options.max_steps {
            let Some(intent) = queue.pop_front() else {
                return Ok(CycleReport { steps_run, stop: StopReason::NoIntents });
            };
            let view = self.assemble_view(store, &instance.id, &intent.text, options)?;
            self.execute_step(store, instance, view, &intent, reasoner)?;
            steps_run += 1;
            if !instance.is_active() {
                return Ok(CycleReport { steps_run, stop: StopReason::EndCriteria });
            }
            queue.extend(self.formulator.formulate(&instance.trajectory)?);
        }
        let stop = if queue.is_empty() { StopReason::NoIntents } else { StopReason::MaxSteps };
        Ok(CycleReport { steps_run, stop })
    }

    fn assemble_view(&mut self, store: &mut Store, agent: &str, intent: &str, options: &CycleOptions) -> Result<View> {
        let selection = match &options.lens {
            Some(lens) => {
                let candidates: Vec<Candidate> =
                    store.iter().map(|a| Candidate::new(a.id().as_str(), a.content())).collect();
                let picks =
                    lens_select(&candidates, intent, lens.k, lens.brief_limit, &LexicalScorer, store, &lens.process, None)?;
                Some(picks.into_iter().map(|p| ArtifactId::from(p.id)).collect::<Vec<_>>())
            }
            None => None,
        };
        let _ = agent;
        let pool: Vec<_> = store.iter().collect();
        Projector::default().project(&pool, intent, options.budget, selection.as_deref())
    }

    /// Child seeded with the parent's steps most relevant to `intent`.
    pub fn fork_single(
        &mut self,
        store: &mut Store,
        parent: &AgentInstance,
        intent: &str,
        budget: u64,
    ) -> Result<AgentInstance> {
        fork(store, &[parent], intent, budget, None, &LexicalScorer)
    }

    /// Child composed of curated fragments of several parents, each curated
    /// with an equal share of `budget`.
    pub fn fork_multi(
        &mut self,
        store: &mut Store,
        parents: &[&AgentInstance],
        intent: &str,
        budget: u64,
    ) -> Result<AgentInstance> {
        if parents.len() < 2 {
            return Err(Error::UseForkSingle);
        }
        fork(store, parents, intent, budget / parents.len() as u64, None, &LexicalScorer)
    }
}

fn push_line(buf: &mut String, line: &str) {
    if !buf.is_empty() {
        buf.push('\n');
    }
    buf.push_str(line);
}

fn distill_summary(instance: &AgentInstance, store: &mut Store) -> Result<()> {
    let body = instance.trajectory.last().map(|s| s.output.text.clone()).unwrap_or_default();
    store.put(
        NewArtifact::new(Kind::Memory, body)
            .name(format!("summary-{}", instance.id))
            .meta("agent", instance.id.as_str())
            .author(instance.id.as_str()),
    )?;
    Ok(())
}

/// Contiguous half-open index runs of a sorted index list.
fn runs(indices: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some((_, end)) if *end == i => *end += 1,
            _ => out.push((i, i + 1)),
        }
    }
    out
}

/// Shared fork path: curate each parent with `per_parent_budget`, optionally
/// put a seed step first, record one fork artifact and one inherit event.
pub(crate) fn fork(
    store: &mut Store,
    parents: &[&AgentInstance],
    intent: &str,
    per_parent_budget: u64,
    seed: Option<StepRecord>,
    scorer: &dyn Scorer,
) -> Result<AgentInstance> {
    let child_id = store.allocate_agent_id("agent");
    let mut steps = Vec::new();
    let mut body = String::new();
    if seed.is_some() {
        let _ = writeln!(body, "seed: step 0");
    }
    let mut fragments = String::new();
    for parent in parents {
        let _ = writeln!(body, "parent: {}", parent.id);
    }
    for parent in parents {
        let keep = curate_indices(&parent.trajectory, intent, per_parent_budget, scorer)?;
        for (a, b) in runs(&keep) {
            let _ = writeln!(fragments, "fragment: {} steps {a}..{b}", parent.id);
        }
        steps.extend(keep.into_iter().map(|i| parent.trajectory.steps()[i].clone()));
    }
    body.push_str(&fragments);
    let mut trajectory = Trajectory::new(child_id.clone());
    if let Some(seed) = seed {
        trajectory.push(seed);
    }
    for s in steps {
        trajectory.push((*s).clone());
    }
    let fork_artifact = store.put(
        NewArtifact::new(Kind::Fork, body)
            .name(format!("fork-{child_id}"))
            .meta("child", child_id.as_str())
            .author(child_id.as_str()),
    )?;
    let parent_list: Vec<&str> = parents.iter().map(|p| p.id.as_str()).collect();
    let step = store.clock();
    store.emit(
        EventDraft::new(BindingKind::Inherit, child_id.as_str(), fork_artifact.id().as_str())
            .evidence(format!("parents={} intent={intent}", parent_list.join(",")))
            .step(step),
    )?;
    let mut child = AgentInstance::new(child_id, parents[0].end_criteria.clone()).with_trajectory(trajectory);
    child.parent_ids = parent_list.into_iter().map(String::from).collect();
    Ok(child)
}

/// Seed step carrying a text artifact at full disclosure.
pub(crate) fn seed_step(artifact: &ArtifactId, text: &str, intent: &str) -> StepRecord {
    let segment = ViewSegment::new(artifact.clone(), text.into(), Disclosure::Full);
    StepRecord {
        view: View::from_segments(intent, alloc::vec![segment]),
        intent: Intent::agent(intent),
        output: Output::text(format!("adopted {artifact}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingStrategy {
    /// Keep the pattern inside the current agent.
    EmbeddedMechanism,
    /// Offload to a forked child.
    DerivedExecution,
    /// Bring in a team.
    Collaboration,
}

impl MappingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MappingStrategy::EmbeddedMechanism => "embedded_mechanism",
            MappingStrategy::DerivedExecution => "derived_execution",
            MappingStrategy::Collaboration => "collaboration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceMetrics {
    pub context_utilization: f64,
    pub ambiguity_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftPolicy {
    pub high_watermark: f64,
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        ShiftPolicy { high_watermark: 0.8 }
    }
}

/// Threshold pattern shifter; the decision is logged against `agent`.
pub fn shift_pattern(
    metrics: InstanceMetrics,
    policy: ShiftPolicy,
    store: &mut Store,
    agent: &str,
) -> Result<(MappingStrategy, EventId)> {
    let u = metrics.context_utilization;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidUtilization(u));
    }
    let strategy = if u > policy.high_watermark {
        MappingStrategy::DerivedExecution
    } else if metrics.ambiguity_flag {
        MappingStrategy::Collaboration
    } else {
        MappingStrategy::EmbeddedMechanism
    };
    let step = store.clock();
    let event = store.emit(
        EventDraft::new(BindingKind::Route, agent, strategy.as_str())
            .evidence(format!(
                "utilization={u} ambiguity={} watermark={}",
                metrics.ambiguity_flag, policy.high_watermark
            ))
            .step(step),
    )?;
    Ok((strategy, event))
}

/// Logical patterns that a role bundle maps onto agent processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pattern {
    Worker,
    AgentGenerator,
    Lens,
    Router,
    Curator,
    IndexGenerator,
    TeamGenerator,
    Mediator,
    Evolver,
}

impl Pattern {
    pub const ALL: [Pattern; 9] = [
        Pattern::Worker,
        Pattern::AgentGenerator,
        Pattern::Lens,
        Pattern::Router,
        Pattern::Curator,
        Pattern::IndexGenerator,
        Pattern::TeamGenerator,
        Pattern::Mediator,
        Pattern::Evolver,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::Worker => "worker",
            Pattern::AgentGenerator => "agent_generator",
            Pattern::Lens => "lens",
            Pattern::Router => "router",
            Pattern::Curator => "curator",
            Pattern::IndexGenerator => "index_generator",
            Pattern::TeamGenerator => "team_generator",
            Pattern::Mediator => "mediator",
            Pattern::Evolver => "evolver",
        }
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pattern `{s}`")))
    }
}

/// Which agent process houses each logical pattern. Patterns mapped to the
/// same process share that process's context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleBundle {
    pub name: String,
    assignments: BTreeMap<Pattern, String>,
}

impl RoleBundle {
    pub fn new(name: impl Into<String>) -> Self {
        RoleBundle { name: name.into(), assignments: BTreeMap::new() }
    }

    /// Worker asks an agent generator, which derives a lens instance that
    /// picks the worker's evidence.
    pub fn self_derived_loop() -> Self {
        RoleBundle::new("self-derived-loop")
            .assign(Pattern::Worker, "worker")
            .assign(Pattern::AgentGenerator, "agent-generator")
            .assign(Pattern::Lens, "lens")
    }

    pub fn assign(mut self, pattern: Pattern, process: impl Into<String>) -> Self {
        self.assignments.insert(pattern, process.into());
        self
    }

    pub fn process_for(&self, pattern: Pattern) -> Option<&str> {
        self.assignments.get(&pattern).map(String::as_str)
    }

    pub fn assignments(&self) -> impl Iterator<Item = (Pattern, &str)> {
        self.assignments.iter().map(|(p, s)| (*p, s.as_str()))
    }

    /// Patterns that share a process with `pattern`.
    pub fn cohabitants(&self, pattern: Pattern) -> Vec<Pattern> {
        let Some(process) = self.process_for(pattern) else { return Vec::new() };
        self.assignments.iter().filter(|(p, s)| **p != pattern && s.as_str() == process).map(|(p, _)| *p).collect()
    }
}
