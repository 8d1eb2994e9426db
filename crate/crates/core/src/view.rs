//! Budgeted projection of artifacts into step views, and trajectory
//! curation.
//!
//! A view is assembled greedily from a ranked pool. Each artifact is offered
//! at the requested disclosure level; when it does not fit the remaining
//! budget it is retried one level lower (brief, then name line) and finally
//! skipped. The total never exceeds the budget.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};
use crate::runtime::{Intent, Output};
use crate::store::{Artifact, ArtifactId};
use crate::text::{estimate_tokens, truncate_chars, LexicalScorer, Scorer};

pub const DEFAULT_BRIEF_LIMIT: usize = 280;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Disclosure {
    /// `kind: name` line only.
    Name = 0,
    /// Head of the body, at most the brief limit in characters.
    Brief = 1,
    Full = 2,
}

impl Disclosure {
    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn lower(self) -> Option<Disclosure> {
        match self {
            Disclosure::Full => Some(Disclosure::Brief),
            Disclosure::Brief => Some(Disclosure::Name),
            Disclosure::Name => None,
        }
    }

    /// This level and every level below it, highest first.
    fn descending(self) -> impl Iterator<Item = Disclosure> {
        core::iter::successors(Some(self), |d| d.lower())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViewSegment {
    pub source: ArtifactId,
    pub text: String,
    pub level: Disclosure,
    pub token_cost: u64,
}

impl ViewSegment {
    pub fn new(source: ArtifactId, text: String, level: Disclosure) -> Self {
        let token_cost = estimate_tokens(&text);
        ViewSegment { source, text, level, token_cost }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct View {
    pub segments: Vec<ViewSegment>,
    pub intent_echo: String,
    pub total_tokens: u64,
    pub budget: u64,
}

impl View {
    pub fn empty(intent: &str, budget: u64) -> Self {
        View { segments: Vec::new(), intent_echo: intent.into(), total_tokens: 0, budget }
    }

    /// A view holding exactly the given segments, with budget equal to their
    /// cost.
    pub fn from_segments(intent: &str, segments: Vec<ViewSegment>) -> Self {
        let total_tokens = segments.iter().map(|s| s.token_cost).sum();
        View { segments, intent_echo: intent.into(), total_tokens, budget: total_tokens }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.segments.iter().any(|s| s.source.as_str() == id)
    }

    pub fn is_within_budget(&self) -> bool {
        self.total_tokens == self.segments.iter().map(|s| s.token_cost).sum::<u64>()
            && self.total_tokens <= self.budget
    }

    /// Text handed to a reasoner: each segment under a
    /// `### <artifact-id> [L<level>]` header, in segment order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            let _ = writeln!(out, "### {} [L{}]", s.source, s.level.level());
            out.push_str(&s.text);
            out.push('\n');
        }
        out
    }

    fn push(&mut self, segment: ViewSegment) {
        self.total_tokens += segment.token_cost;
        self.segments.push(segment);
    }
}

/// One `(view, intent, output)` step.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub view: View,
    pub intent: Intent,
    pub output: Output,
}

/// Append-only step sequence owned by one agent instance. Steps are shared
/// between trajectories (forks, branches) but never mutated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    owner: String,
    steps: Vec<Arc<StepRecord>>,
}

impl Trajectory {
    pub fn new(owner: impl Into<String>) -> Self {
        Trajectory { owner: owner.into(), steps: Vec::new() }
    }

    pub fn from_steps(owner: impl Into<String>, steps: Vec<Arc<StepRecord>>) -> Self {
        Trajectory { owner: owner.into(), steps }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn set_owner(&mut self, owner: impl Into<String>) {
        self.owner = owner.into();
    }

    pub fn steps(&self) -> &[Arc<StepRecord>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last().map(|s| s.as_ref())
    }

    pub fn push(&mut self, step: StepRecord) {
        self.steps.push(Arc::new(step));
    }

    pub fn output_tokens(&self) -> u64 {
        self.steps.iter().map(|s| estimate_tokens(&s.output.text)).sum()
    }
}

/// Projection settings shared by `project` and `expand`.
pub struct Projector<'a> {
    pub brief_limit: usize,
    pub requested: Disclosure,
    pub scorer: &'a dyn Scorer,
}

impl Default for Projector<'_> {
    fn default() -> Self {
        Projector { brief_limit: DEFAULT_BRIEF_LIMIT, requested: Disclosure::Full, scorer: &LexicalScorer }
    }
}

impl<'a> Projector<'a> {
    pub fn with_scorer(scorer: &'a dyn Scorer) -> Self {
        Projector { scorer, ..Default::default() }
    }

    pub fn segment_text(&self, artifact: &Artifact, level: Disclosure) -> String {
        match level {
            Disclosure::Name => format!("{}: {}", artifact.kind(), artifact.name()),
            Disclosure::Brief => truncate_chars(artifact.content(), self.brief_limit).into(),
            Disclosure::Full => artifact.content().into(),
        }
    }

    /// Pool sorted by descending relevance to `intent`, ties by ascending id.
    pub fn rank<'p>(&self, pool: &[&'p Artifact], intent: &str) -> Vec<&'p Artifact> {
        let mut scored: Vec<(f64, &Artifact)> = pool
            .iter()
            .map(|a| {
                let evidence = format!("{} {}", a.name(), a.content());
                (self.scorer.score(intent, a.id().as_str(), &evidence), *a)
            })
            .collect();
        scored.sort_by(|(sa, a), (sb, b)| sb.total_cmp(sa).then_with(|| a.id().cmp(b.id())));
        scored.into_iter().map(|(_, a)| a).collect()
    }

    /// Builds a view for `intent`. With a lens selection, only the selected
    /// artifacts are offered, in selection order.
    pub fn project(
        &self,
        pool: &[&Artifact],
        intent: &str,
        budget: u64,
        selection: Option<&[ArtifactId]>,
    ) -> Result<View> {
        if budget == 0 {
            return Err(Error::InvalidBudget);
        }
        let ordered: Vec<&Artifact> = match selection {
            Some(ids) => {
                let mut seen = BTreeSet::new();
                ids.iter()
                    .filter(|id| seen.insert(id.as_str()))
                    .filter_map(|id| pool.iter().find(|a| a.id() == id).copied())
                    .collect()
            }
            None => self.rank(pool, intent),
        };
        let mut view = View::empty(intent, budget);
        for artifact in ordered {
            if let Some(segment) = self.fit(artifact, self.requested, view.budget - view.total_tokens) {
                view.push(segment);
            }
        }
        Ok(view)
    }

    /// Highest level at or below `level` whose cost fits in `remaining`.
    fn fit(&self, artifact: &Artifact, level: Disclosure, remaining: u64) -> Option<ViewSegment> {
        level.descending().find_map(|lvl| {
            let segment = ViewSegment::new(artifact.id().clone(), self.segment_text(artifact, lvl), lvl);
            (segment.token_cost <= remaining).then_some(segment)
        })
    }

    /// Grows a view under a (usually larger) budget: existing segments are
    /// raised toward full disclosure, then new artifacts are appended by
    /// ranking. Repeats until nothing changes, so expanding an expanded view
    /// with the same arguments is a no-op.
    pub fn expand(&self, view: &View, pool: &[&Artifact], intent: &str, budget: u64) -> Result<View> {
        if view.total_tokens > budget {
            return Err(Error::BudgetExceeded { total: view.total_tokens, budget });
        }
        let mut out = view.clone();
        out.budget = budget;
        let ranked = self.rank(pool, intent);
        loop {
            let mut changed = false;
            for i in 0..out.segments.len() {
                let current = out.segments[i].clone();
                let Some(artifact) = pool.iter().find(|a| *a.id() == current.source) else {
                    continue;
                };
                let remaining = budget - (out.total_tokens - current.token_cost);
                let raised = Disclosure::Full
                    .descending()
                    .take_while(|lvl| *lvl > current.level)
                    .map(|lvl| ViewSegment::new(current.source.clone(), self.segment_text(artifact, lvl), lvl))
                    .find(|s| s.token_cost <= remaining);
                if let Some(seg) = raised {
                    out.total_tokens = out.total_tokens - current.token_cost + seg.token_cost;
                    out.segments[i] = seg;
                    changed = true;
                }
            }
            for artifact in &ranked {
                if out.contains(artifact.id().as_str()) {
                    continue;
                }
                if let Some(seg) = self.fit(artifact, Disclosure::Full, budget - out.total_tokens) {
                    out.push(seg);
                    changed = true;
                }
            }
            if !changed {
                return Ok(out);
            }
        }
    }
}

/// `project` with the default projector.
pub fn project(pool: &[&Artifact], intent: &str, budget: u64, selection: Option<&[ArtifactId]>) -> Result<View> {
    Projector::default().project(pool, intent, budget, selection)
}

/// `expand` with the default projector.
pub fn expand_view(view: &View, pool: &[&Artifact], intent: &str, budget: u64) -> Result<View> {
    Projector::default().expand(view, pool, intent, budget)
}

/// Indices of the steps `curate` keeps, in original order.
///
/// Steps are taken by descending relevance of their output to `intent` (ties
/// by position) until the next one would push the summed output tokens past
/// `budget`.
pub fn curate_indices(trajectory: &Trajectory, intent: &str, budget: u64, scorer: &dyn Scorer) -> Result<Vec<usize>> {
    if budget == 0 {
        return Err(Error::InvalidBudget);
    }
    let mut ranked: Vec<(f64, usize, u64)> = trajectory
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| (scorer.score(intent, "", &s.output.text), i, estimate_tokens(&s.output.text)))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used = 0u64;
    let mut keep = Vec::new();
    for (_, idx, cost) in ranked {
        if used + cost > budget {
            break;
        }
        used += cost;
        keep.push(idx);
    }
    keep.sort_unstable();
    Ok(keep)
}

/// A new trajectory holding the steps most relevant to `intent` within
/// `budget`. The input is untouched.
pub fn curate(trajectory: &Trajectory, intent: &str, budget: u64) -> Result<Trajectory> {
    curate_with(trajectory, intent, budget, &LexicalScorer)
}

pub fn curate_with(trajectory: &Trajectory, intent: &str, budget: u64, scorer: &dyn Scorer) -> Result<Trajectory> {
    let keep = curate_indices(trajectory, intent, budget, scorer)?;
    let steps = keep.into_iter().map(|i| trajectory.steps()[i].clone()).collect();
    Ok(Trajectory::from_steps(trajectory.owner(), steps))
}

/// One curated, independent sub-context per intent.
pub fn branch_context(trajectory: &Trajectory, intents: &[&str], branch_budget: u64) -> Result<Vec<Trajectory>> {
    if intents.is_empty() {
        return Err(Error::InvalidBranchCount);
    }
    intents
        .iter()
        .enumerate()
        .map(|(i, intent)| {
            let mut branch = curate(trajectory, intent, branch_budget)?;
            branch.set_owner(format!("{}/branch-{i}", trajectory.owner()));
            Ok(branch)
        })
        .collect()
}

/// Appends one step carrying only the distilled outcome of `branch`.
pub fn stitch_context(parent: &mut Trajectory, branch: &Trajectory, distilled: &str) -> Result<()> {
    if distilled.trim().is_empty() {
        return Err(Error::EmptyDistillate);
    }
    let intent = format!("stitch {}", branch.owner());
    parent.push(StepRecord {
        view: View::empty(&intent, 0),
        intent: Intent::agent(intent),
        output: Output::text(distilled),
    });
    Ok(())
}
