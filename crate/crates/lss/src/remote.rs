//! HTTP-backed reasoner and scorer. Both POST JSON to a single endpoint:
//!
//! * reasoner: `{"view_text", "intent_text", "history_digest"}` answered by
//!   `{"text", "actions"}`
//! * scorer: `{"query", "candidate_id", "evidence"}` answered by `{"score"}`

use std::sync::Mutex;
use std::time::Duration;

use lss_core::runtime::{Reasoner, ReasonerRequest, ReasonerResponse};
use lss_core::Scorer;
use serde::{Deserialize, Serialize};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into()
}

pub struct RemoteReasoner {
    agent: ureq::Agent,
    url: String,
}

impl RemoteReasoner {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        RemoteReasoner { agent: agent(timeout), url: url.into() }
    }
}

impl Reasoner for RemoteReasoner {
    fn respond(&mut self, request: &ReasonerRequest) -> lss_core::Result<ReasonerResponse> {
        let fail = |e: ureq::Error| lss_core::Error::Reasoner(e.to_string());
        self.agent
            .post(&self.url)
            .send_json(request)
            .map_err(fail)?
            .body_mut()
            .read_json::<ReasonerResponse>()
            .map_err(fail)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    query: &'a str,
    candidate_id: &'a str,
    evidence: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// Scores through the endpoint. A failed call scores 0 and is kept; check
/// [`RemoteScorer::take_error`] after a run.
pub struct RemoteScorer {
    agent: ureq::Agent,
    url: String,
    error: Mutex<Option<String>>,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        RemoteScorer { agent: agent(timeout), url: url.into(), error: Mutex::new(None) }
    }

    pub fn take_error(&self) -> Option<String> {
        self.error.lock().unwrap_or_else(|p| p.into_inner()).take()
    }

    fn call(&self, body: &ScoreRequest<'_>) -> Result<f64, ureq::Error> {
        Ok(self.agent.post(&self.url).send_json(body)?.body_mut().read_json::<ScoreResponse>()?.score)
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, query: &str, candidate_id: &str, evidence: &str) -> f64 {
        match self.call(&ScoreRequest { query, candidate_id, evidence }) {
            Ok(s) if s.is_finite() => s,
            Ok(s) => {
                self.error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(format!("non-finite score {s}"));
                0.0
            }
            Err(e) => {
                self.error.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e.to_string());
                0.0
            }
        }
    }

    fn explain(&self, _query: &str, _evidence: &str) -> String {
        "remote".into()
    }
}
