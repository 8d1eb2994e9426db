use alloc::string::String;

use crate::provenance::EventId;
use crate::store::ArtifactId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    // artifact store
    #[error("artifact id `{0}` already exists")]
    IdCollision(ArtifactId),
    #[error("artifact `{0}` not found")]
    NotFound(String),
    #[error("a revision needs a nonempty rationale")]
    RationaleRequired,
    #[error("artifact `{id}` has no version {version}")]
    VersionNotFound { id: ArtifactId, version: u32 },
    #[error("artifact `{0}` is already in the requested tier")]
    NoOpMigration(ArtifactId),
    #[error("artifact `{id}` was edited concurrently (expected v{expected}, found v{found})")]
    ConcurrentEdit { id: ArtifactId, expected: u32, found: u32 },
    #[error("invalid front-matter: {0}")]
    InvalidFrontMatter(String),
    #[error("corrupt history for `{0}`")]
    CorruptHistory(ArtifactId),

    // views
    #[error("budget must be positive")]
    InvalidBudget,
    #[error("at least one branch with one intent each is required")]
    InvalidBranchCount,
    #[error("a stitched outcome must not be empty")]
    EmptyDistillate,
    #[error("view costs {total} tokens but its budget is {budget}")]
    BudgetExceeded { total: u64, budget: u64 },

    // binding
    #[error("k must be at least 1")]
    InvalidK,
    #[error("brief limit must be at least 1")]
    InvalidBriefLimit,
    #[error("max degree must be at least 1")]
    InvalidDegree,
    #[error("team has no roles to route to")]
    NoRoute,
    #[error("no agents available")]
    EmptyRoster,
    #[error("team size must be at least 1")]
    InvalidTeamSize,
    #[error("mediation needs two distinct parties")]
    SameParty,
    #[error("contract clauses still incomplete after {rounds} rounds: {missing}")]
    NegotiationFailed { rounds: u32, missing: String },
    #[error("binding `{object}` crosses task scope `{from}` -> `{to}`")]
    CrossScope { object: String, from: String, to: String },
    #[error("event {0} not found")]
    EventNotFound(EventId),
    #[error("provenance graph is corrupt near event {0}")]
    CorruptProvenance(EventId),
    #[error("parent event {parent} is not an earlier event")]
    InvalidParent { parent: EventId },
    #[error("malformed evidence: {0}")]
    MalformedEvidence(String),

    // runtime
    #[error("agent `{0}` has terminated")]
    AgentTerminated(String),
    #[error("trajectory is empty, nothing to formulate")]
    NothingToFormulate,
    #[error("max steps must be at least 1")]
    InvalidMaxSteps,
    #[error("fork_multi needs at least two parents, use fork_single")]
    UseForkSingle,
    #[error("end criteria need at least one predicate")]
    NoPredicates,
    #[error("intent text must not be empty")]
    EmptyIntent,
    #[error("transcript has no response for step {0}")]
    TranscriptExhausted(u64),
    #[error("reasoner failed: {0}")]
    Reasoner(String),
    #[error("context utilization {0} outside [0, 1]")]
    InvalidUtilization(f64),

    // evolution
    #[error("a patch needs a nonempty hypothesis")]
    HypothesisRequired,
    #[error("task suite is empty")]
    EmptySuite,
    #[error("no mutation operators configured")]
    NoMutations,
    #[error("population {population} must be >= survivors {survivors} >= 1")]
    InvalidPopulation { population: usize, survivors: usize },
    #[error("patch {0} is not in a state that allows this")]
    PatchState(u64),

    // task pool
    #[error("round has no task texts")]
    EmptyRound,
    #[error("task `{0}` is not pending")]
    AlreadyClaimed(String),
    #[error("task `{task}`: {op} not allowed in state {state}")]
    IllegalTransition { task: String, op: &'static str, state: &'static str },
    #[error("round {0} still has unfinished tasks")]
    RoundIncomplete(u32),
    #[error("round limit of {0} reached")]
    RoundLimit(u32),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    // bench
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("no reports to summarize")]
    NoReports,
}
