//! File-mediated task rounds: generate, claim, log, complete, review.
//!
//! Each task lives as a `task` artifact whose body carries `## Intent`,
//! `## Log` and `## Result` sections; every state change is a revision, so
//! the palimpsest is the audit trail.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::binding::{route, EventSink, Message, TeamSpec};
use crate::error::{Error, Result};
use crate::store::{Kind, NewArtifact, Store};
use crate::text::{normalize_whitespace, Scorer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskState {
    Pending,
    Claimed,
    Executing,
    Done,
    Failed,
    Reviewed,
}

impl TaskState {
    pub const ALL: [TaskState; 6] = [
        TaskState::Pending,
        TaskState::Claimed,
        TaskState::Executing,
        TaskState::Done,
        TaskState::Failed,
        TaskState::Reviewed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Pending => "pending",
            TaskState::Claimed => "claimed",
            TaskState::Executing => "executing",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
            TaskState::Reviewed => "reviewed",
        }
    }

    pub fn is_finished(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TaskOp {
    Claim,
    AppendLog,
    CompleteOk,
    CompleteFail,
    Review,
}

impl TaskOp {
    pub const ALL: [TaskOp; 5] = [TaskOp::Claim, TaskOp::AppendLog, TaskOp::CompleteOk, TaskOp::CompleteFail, TaskOp::Review];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskOp::Claim => "claim",
            TaskOp::AppendLog => "append_log",
            TaskOp::CompleteOk => "complete(ok)",
            TaskOp::CompleteFail => "complete(fail)",
            TaskOp::Review => "review",
        }
    }
}

/// The legal-transition table; `None` marks an illegal pair.
pub fn transition(state: TaskState, op: TaskOp) -> Option<TaskState> {
    use TaskOp::*;
    use TaskState::*;
    match (state, op) {
        (Pending, Claim) => Some(Claimed),
        (Claimed | Executing, AppendLog) => Some(Executing),
        (Executing, CompleteOk) => Some(Done),
        (Executing, CompleteFail) => Some(Failed),
        (Done | Failed, Review) => Some(Reviewed),
        _ => None,
    }
}

fn step(task: &Task, op: TaskOp) -> Result<TaskState> {
    transition(task.state, op).ok_or_else(|| match op {
        TaskOp::Claim => Error::AlreadyClaimed(task.task_id.clone()),
        _ => Error::IllegalTransition { task: task.task_id.clone(), op: op.as_str(), state: task.state.as_str() },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub task_id: String,
    pub round: u32,
    pub intent_text: String,
    pub assignee: Option<String>,
    pub state: TaskState,
    pub log: Vec<String>,
    pub result_digest: String,
}

impl Task {
    pub fn render_body(&self) -> String {
        let mut out = format!("## Intent\n{}\n\n## Log\n", self.intent_text);
        for entry in &self.log {
            let _ = writeln!(out, "- {}", entry.replace('\n', "\n  "));
        }
        let _ = write!(out, "\n## Result\n{}\n", self.result_digest);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundVerdict {
    Open,
    Accepted,
    Iterate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Round {
    pub round_number: u32,
    pub task_ids: Vec<String>,
    pub verdict: RoundVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryEntry {
    pub round: u32,
    pub task_id: String,
    pub status: TaskState,
    pub summary: String,
}

/// Append-only record of finished tasks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResultMemory {
    entries: Vec<MemoryEntry>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

impl ResultMemory {
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `round \t task_id \t status \t summary`, one record per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.round, escape(&e.task_id), e.status.as_str(), escape(&e.summary));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::InvalidConfig(format!("result memory line {}: `{line}`", n + 1));
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let status = match f[2] {
                "done" => TaskState::Done,
                "failed" => TaskState::Failed,
                _ => return Err(bad()),
            };
            entries.push(MemoryEntry {
                round: f[0].parse().map_err(|_| bad())?,
                task_id: unescape(f[1]),
                status,
                summary: unescape(f[3]),
            });
        }
        Ok(ResultMemory { entries })
    }
}

pub trait Reviewer {
    fn review(&mut self, round: &Round, tasks: &[&Task], memory: &ResultMemory) -> RoundVerdict;
}

/// Accepts when every task succeeded and every summary contains `marker`.
#[derive(Debug, Clone, Default)]
pub struct PredicateReviewer {
    pub marker: String,
}

impl Reviewer for PredicateReviewer {
    fn review(&mut self, _round: &Round, tasks: &[&Task], _memory: &ResultMemory) -> RoundVerdict {
        let ok = tasks.iter().all(|t| t.state == TaskState::Done && t.result_digest.contains(self.marker.as_str()));
        if ok {
            RoundVerdict::Accepted
        } else {
            RoundVerdict::Iterate
        }
    }
}

/// Returns a fixed verdict per round number; unlisted rounds iterate.
#[derive(Debug, Clone, Default)]
pub struct ScriptedReviewer {
    pub verdicts: BTreeMap<u32, RoundVerdict>,
}

impl Reviewer for ScriptedReviewer {
    fn review(&mut self, round: &Round, _tasks: &[&Task], _memory: &ResultMemory) -> RoundVerdict {
        self.verdicts.get(&round.round_number).copied().unwrap_or(RoundVerdict::Iterate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskPoolConfig {
    pub cap: usize,
    pub max_rounds: u32,
}

impl Default for TaskPoolConfig {
    fn default() -> Self {
        TaskPoolConfig { cap: 10, max_rounds: 10 }
    }
}

impl TaskPoolConfig {
    pub fn validate(self) -> Result<Self> {
        if self.cap == 0 {
            return Err(Error::InvalidConfig("task cap must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max rounds must be at least 1".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReviewOutcome {
    pub verdict: RoundVerdict,
    /// No further round may be generated.
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskPool {
    config: TaskPoolConfig,
    tasks: BTreeMap<String, Task>,
    rounds: Vec<Round>,
    memory: ResultMemory,
    warnings: Vec<String>,
    halted: bool,
    /// Generation attempts turned away, so refusals keep counting rounds.
    refused: u32,
}

impl TaskPool {
    pub fn new(config: TaskPoolConfig) -> Result<Self> {
        Ok(TaskPool {
            config: config.validate()?,
            tasks: BTreeMap::new(),
            rounds: Vec::new(),
            memory: ResultMemory::default(),
            warnings: Vec::new(),
            halted: false,
            refused: 0,
        })
    }

    pub fn config(&self) -> TaskPoolConfig {
        self.config
    }

    pub fn task(&self, id: &str) -> Result<&Task> {
        self.tasks.get(id).ok_or_else(|| Error::NotFound(id.into()))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn rounds(&self) -> &[Round] {
        &self.rounds
    }

    pub fn memory(&self) -> &ResultMemory {
        &self.memory
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Materializes up to `cap` task artifacts for the next round; excess
    /// texts are dropped with a warning each.
    pub fn generate_round(&mut self, store: &mut Store, intent: &str, task_texts: &[&str]) -> Result<&Round> {
        let number = self.rounds.len() as u32 + 1;
        if self.halted || number > self.config.max_rounds {
            self.refused += 1;
            let attempt = number + self.refused - 1;
            self.warnings.push(format!("round {attempt} refused: limit of {} rounds", self.config.max_rounds));
            return Err(Error::RoundLimit(self.config.max_rounds));
        }
        if task_texts.is_empty() {
            return Err(Error::EmptyRound);
        }
        for (i, text) in task_texts.iter().enumerate().skip(self.config.cap) {
            self.warnings.push(format!("round {number}: task {} rejected over cap {}: {text}", i + 1, self.config.cap));
        }
        let mut ids = Vec::new();
        for text in task_texts.iter().take(self.config.cap) {
            let mut task = Task {
                task_id: String::new(),
                round: number,
                intent_text: text.to_string(),
                assignee: None,
                state: TaskState::Pending,
                log: Vec::new(),
                result_digest: String::new(),
            };
            let art = store.put(
                NewArtifact::new(Kind::Task, task.render_body())
                    .meta("round", number.to_string())
                    .meta("state", TaskState::Pending.as_str())
                    .meta("assignee", "")
                    .meta("round_intent", normalize_whitespace(intent))
                    .author("dispatcher"),
            )?;
            task.task_id = art.id().to_string();
            ids.push(task.task_id.clone());
            self.tasks.insert(task.task_id.clone(), task);
        }
        self.rounds.push(Round { round_number: number, task_ids: ids, verdict: RoundVerdict::Open });
        Ok(self.rounds.last().expect("just pushed"))
    }

    fn apply(&mut self, store: &mut Store, id: &str, op: TaskOp, author: &str, rationale: &str, edit: impl FnOnce(&mut Task)) -> Result<&Task> {
        let task = self.tasks.get(id).ok_or_else(|| Error::NotFound(id.into()))?;
        let next = step(task, op)?;
        let mut updated = task.clone();
        updated.state = next;
        edit(&mut updated);
        let expected = store.get(id)?.version();
        store.revise_expected(id, expected, &updated.render_body(), rationale, author)?;
        store.set_meta(id, "state", next.as_str())?;
        store.set_meta(id, "assignee", updated.assignee.as_deref().unwrap_or(""))?;
        self.tasks.insert(id.into(), updated);
        Ok(&self.tasks[id])
    }

    /// Exclusive worker claim.
    pub fn claim_task(&mut self, store: &mut Store, id: &str, agent: &str) -> Result<&Task> {
        self.apply(store, id, TaskOp::Claim, agent, &format!("claimed by {agent}"), |t| {
            t.assignee = Some(agent.into());
        })
    }

    /// Direct dispatch: claims on behalf of `agent`.
    pub fn dispatch(&mut self, store: &mut Store, id: &str, agent: &str) -> Result<&Task> {
        self.claim_task(store, id, agent)
    }

    /// Routed dispatch: the router picks the assignee from `team`.
    pub fn dispatch_routed(&mut self, store: &mut Store, id: &str, team: &TeamSpec, scorer: &dyn Scorer) -> Result<&Task> {
        let text = self.task(id)?.intent_text.clone();
        let decision = route(&Message::intent(text), team, scorer, store as &mut dyn EventSink, "dispatcher", None)?;
        self.claim_task(store, id, &decision.agent_id)
    }

    pub fn append_log(&mut self, store: &mut Store, id: &str, entry: &str) -> Result<&Task> {
        let author = self.task(id)?.assignee.clone().unwrap_or_default();
        self.apply(store, id, TaskOp::AppendLog, &author, "execution log", |t| t.log.push(entry.into()))
    }

    /// Finishes a task and appends its result memory entry.
    pub fn complete_task(&mut self, store: &mut Store, id: &str, success: bool, summary: &str) -> Result<&Task> {
        let op = if success { TaskOp::CompleteOk } else { TaskOp::CompleteFail };
        let author = self.task(id)?.assignee.clone().unwrap_or_default();
        let status = if success { "done" } else { "failed" };
        self.apply(store, id, op, &author, &format!("completed: {status}"), |t| t.result_digest = summary.into())?;
        let task = &self.tasks[id];
        self.memory.entries.push(MemoryEntry {
            round: task.round,
            task_id: id.into(),
            status: task.state,
            summary: summary.into(),
        });
        Ok(&self.tasks[id])
    }

    /// Marks every task of a finished round reviewed and records the
    /// reviewer's verdict. An iterate verdict on the last allowed round
    /// halts the pool.
    pub fn review_round(&mut self, store: &mut Store, number: u32, reviewer: &mut dyn Reviewer) -> Result<ReviewOutcome> {
        let idx = self
            .rounds
            .iter()
            .position(|r| r.round_number == number)
            .ok_or_else(|| Error::NotFound(format!("round {number}")))?;
        let round = self.rounds[idx].clone();
        let tasks: Vec<&Task> = round.task_ids.iter().map(|id| &self.tasks[id]).collect();
        if !tasks.iter().all(|t| t.state.is_finished()) {
            return Err(Error::RoundIncomplete(number));
        }
        let verdict = reviewer.review(&round, &tasks, &self.memory);
        for id in &round.task_ids {
            self.apply(store, id, TaskOp::Review, "reviewer", "reviewed", |_| {})?;
        }
        self.rounds[idx].verdict = verdict;
        let halted = verdict == RoundVerdict::Accepted || number >= self.config.max_rounds;
        if verdict == RoundVerdict::Iterate && number >= self.config.max_rounds {
            self.warnings.push(format!("round {number}: iterate requested at the round limit, halting"));
        }
        self.halted |= halted;
        Ok(ReviewOutcome { verdict, halted })
    }
}
