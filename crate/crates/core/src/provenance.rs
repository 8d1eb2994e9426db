//! Binding provenance: every runtime binding decision is an event, and events
//! link to the decision that caused them. Following parent links from any
//! event yields its supply chain back to a root decision.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EventId(pub u64);

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BindingKind {
    LensSelect,
    Route,
    ToolCall,
    Inherit,
    TierMigration,
    Contract,
    Facade,
}

impl BindingKind {
    pub const ALL: [BindingKind; 7] = [
        BindingKind::LensSelect,
        BindingKind::Route,
        BindingKind::ToolCall,
        BindingKind::Inherit,
        BindingKind::TierMigration,
        BindingKind::Contract,
        BindingKind::Facade,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BindingKind::LensSelect => "lens_select",
            BindingKind::Route => "route",
            BindingKind::ToolCall => "tool_call",
            BindingKind::Inherit => "inherit",
            BindingKind::TierMigration => "tier_migration",
            BindingKind::Contract => "contract",
            BindingKind::Facade => "facade",
        }
    }
}

impl fmt::Display for BindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BindingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BindingKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::MalformedEvidence(alloc::format!("unknown binding kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Outcome {
    Pending,
    Validated,
    Failed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pending => "pending",
            Outcome::Validated => "validated",
            Outcome::Failed => "failed",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pending" => Ok(Outcome::Pending),
            "validated" => Ok(Outcome::Validated),
            "failed" => Ok(Outcome::Failed),
            other => Err(Error::MalformedEvidence(alloc::format!("unknown outcome `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BindingEvent {
    pub id: EventId,
    pub kind: BindingKind,
    pub subject: String,
    pub object: String,
    pub evidence: String,
    pub parent: Option<EventId>,
    pub step: u64,
    pub outcome: Outcome,
}

/// An event before the log assigns it an id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventDraft {
    pub kind: BindingKind,
    pub subject: String,
    pub object: String,
    pub evidence: String,
    pub parent: Option<EventId>,
    pub step: u64,
    pub outcome: Outcome,
}

impl EventDraft {
    pub fn new(kind: BindingKind, subject: impl Into<String>, object: impl Into<String>) -> Self {
        EventDraft {
            kind,
            subject: subject.into(),
            object: object.into(),
            evidence: String::new(),
            parent: None,
            step: 0,
            outcome: Outcome::Pending,
        }
    }

    pub fn evidence(mut self, evidence: impl Into<String>) -> Self {
        self.evidence = evidence.into();
        self
    }

    pub fn parent(mut self, parent: Option<EventId>) -> Self {
        self.parent = parent;
        self
    }

    pub fn step(mut self, step: u64) -> Self {
        self.step = step;
        self
    }

    pub fn outcome(mut self, outcome: Outcome) -> Self {
        self.outcome = outcome;
        self
    }
}

/// Root-first list of events where each element's parent is its predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupplyChain {
    pub events: Vec<BindingEvent>,
}

impl SupplyChain {
    pub fn root(&self) -> &BindingEvent {
        &self.events[0]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_contiguous(&self) -> bool {
        self.events.first().is_some_and(|r| r.parent.is_none())
            && self.events.windows(2).all(|w| w[1].parent == Some(w[0].id))
    }
}

/// Append-only event log with strictly increasing ids.
///
/// A parent must already be in the log when its child is appended, so a log
/// built through [`ProvenanceLog::append`] is acyclic by construction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvenanceLog {
    events: Vec<BindingEvent>,
}

impl ProvenanceLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a log from persisted events, rejecting anything an appending
    /// writer could not have produced.
    pub fn from_events(events: Vec<BindingEvent>) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            if i > 0 && e.id <= events[i - 1].id {
                return Err(Error::CorruptProvenance(e.id));
            }
            if let Some(p) = e.parent {
                if p >= e.id || events[..i].binary_search_by_key(&p, |x| x.id).is_err() {
                    return Err(Error::CorruptProvenance(e.id));
                }
            }
        }
        Ok(ProvenanceLog { events })
    }

    /// Keeps events as found, even with dangling or forward parent links;
    /// [`ProvenanceLog::trace_chain`] then reports corruption when it hits one.
    pub fn from_events_unchecked(mut events: Vec<BindingEvent>) -> Self {
        events.sort_by_key(|e| e.id);
        events.dedup_by_key(|e| e.id);
        ProvenanceLog { events }
    }

    pub fn next_id(&self) -> EventId {
        EventId(self.events.last().map_or(1, |e| e.id.0 + 1))
    }

    pub fn append(&mut self, draft: EventDraft) -> Result<EventId> {
        let id = self.next_id();
        if let Some(parent) = draft.parent {
            if self.get(parent).is_none() {
                return Err(Error::InvalidParent { parent });
            }
        }
        self.events.push(BindingEvent {
            id,
            kind: draft.kind,
            subject: draft.subject,
            object: draft.object,
            evidence: draft.evidence,
            parent: draft.parent,
            step: draft.step,
            outcome: draft.outcome,
        });
        Ok(id)
    }

    pub fn get(&self, id: EventId) -> Option<&BindingEvent> {
        self.events
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.events[i])
    }

    /// Resolves a pending event. Resolution happens at most once.
    pub fn resolve(&mut self, id: EventId, outcome: Outcome) -> Result<&BindingEvent> {
        let idx = self
            .events
            .binary_search_by_key(&id, |e| e.id)
            .map_err(|_| Error::EventNotFound(id))?;
        let event = &mut self.events[idx];
        if event.outcome != Outcome::Pending {
            return Err(Error::MalformedEvidence(alloc::format!(
                "event {id} already resolved as {}",
                event.outcome
            )));
        }
        event.outcome = outcome;
        Ok(&self.events[idx])
    }

    pub fn events(&self) -> &[BindingEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: BindingKind) -> impl Iterator<Item = &BindingEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn validated_uses(&self, object: &str) -> usize {
        self.events
            .iter()
            .filter(|e| e.object == object && e.outcome == Outcome::Validated)
            .count()
    }

    /// Walks parent links back to the root and returns the chain root-first.
    pub fn trace_chain(&self, id: EventId) -> Result<SupplyChain> {
        let mut chain = Vec::new();
        let mut visited = BTreeSet::new();
        let mut cursor = Some(id);
        while let Some(current) = cursor {
            if !visited.insert(current) {
                return Err(Error::CorruptProvenance(current));
            }
            let event = match self.get(current) {
                Some(e) => e,
                None if current == id => return Err(Error::EventNotFound(id)),
                None => return Err(Error::CorruptProvenance(current)),
            };
            chain.push(event.clone());
            cursor = event.parent;
        }
        chain.reverse();
        Ok(SupplyChain { events: chain })
    }

    /// True when no parent link leads into a cycle or outside the log.
    pub fn is_acyclic(&self) -> bool {
        self.events.iter().all(|e| self.trace_chain(e.id).is_ok())
    }
}
