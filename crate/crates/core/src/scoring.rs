//! Learned-model scores behind a small interface: a deterministic hash mock
//! for offline runs and a JSON-over-HTTP client for real services.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LatoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Aesthetic and technical quality of an image.
    Aesthetic,
    /// High-level visual difference between source and target.
    SemanticDiff,
    /// Same-person similarity between two images.
    Identity,
    /// Agreement between the target and the instructed expression.
    Expression,
    /// Whether an edit follows its instruction.
    SemanticConsistency,
    VisualQuality,
    NaturalAppearance,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 7] = [
        ScoreKind::Aesthetic,
        ScoreKind::SemanticDiff,
        ScoreKind::Identity,
        ScoreKind::Expression,
        ScoreKind::SemanticConsistency,
        ScoreKind::VisualQuality,
        ScoreKind::NaturalAppearance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Aesthetic => "aesthetic",
            ScoreKind::SemanticDiff => "semantic_diff",
            ScoreKind::Identity => "identity",
            ScoreKind::Expression => "expression",
            ScoreKind::SemanticConsistency => "sc",
            ScoreKind::VisualQuality => "vq",
            ScoreKind::NaturalAppearance => "na",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a scorer is asked about: a record id, the images it refers to, and
/// any scores the record already carries.
#[derive(Clone, Copy, Debug)]
pub struct ScoreQuery<'a> {
    pub id: &'a str,
    pub refs: &'a [&'a str],
    pub known: &'a BTreeMap<String, f64>,
}

/// A score in `[0, 1]` for one record.
pub trait Scorer: Send + Sync {
    fn score(&self, q: &ScoreQuery, kind: ScoreKind) -> Result<f64>;

    /// Short label recorded in reports.
    fn provenance(&self) -> String;
}

/// Scores from the record's own map when present, otherwise a uniform value
/// derived from SHA-256 of (seed, kind, id).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MockScorer {
    pub seed: u64,
}

impl MockScorer {
    pub fn new(seed: u64) -> Self {
        MockScorer { seed }
    }

    pub fn hashed(&self, id: &str, kind: ScoreKind) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(kind.as_str().as_bytes());
        h.update([0]);
        h.update(id.as_bytes());
        let d = h.finalize();
        let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
        (v >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Scorer for MockScorer {
    fn score(&self, q: &ScoreQuery, kind: ScoreKind) -> Result<f64> {
        Ok(q.known
            .get(kind.as_str())
            .copied()
            .unwrap_or_else(|| self.hashed(q.id, kind)))
    }

    fn provenance(&self) -> String {
        format!("mock:{}", self.seed)
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    id: &'a str,
    kind: ScoreKind,
    refs: &'a [&'a str],
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// `POST {"id", "kind", "refs": [...]}` to the endpoint, expecting
/// `{"score": x}` back. Failed calls are retried `retries` more times.
#[derive(Clone, Debug)]
pub struct HttpScorer {
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: u32,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpScorer {
            endpoint: endpoint.into(),
            timeout,
            retries,
            agent,
        }
    }

    fn call(&self, body: &ScoreRequest) -> std::result::Result<f64, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let parsed: ScoreResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        if parsed.score.is_finite() {
            Ok(parsed.score)
        } else {
            Err("non-finite score".into())
        }
    }
}

impl Scorer for HttpScorer {
    fn score(&self, q: &ScoreQuery, kind: ScoreKind) -> Result<f64> {
        let body = ScoreRequest {
            id: q.id,
            kind,
            refs: q.refs,
        };
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.call(&body) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    log::warn!("{kind} scorer attempt {} for {}: {e}", attempt + 1, q.id);
                    last = e;
                }
            }
        }
        Err(LatoError::Scorer {
            kind: kind.to_string(),
            attempts: self.retries + 1,
            message: last,
        })
    }

    fn provenance(&self) -> String {
        format!("http:{}", self.endpoint)
    }
}

/// One scorer per kind. Asking for a kind with no scorer is a configuration
/// error.
#[derive(Clone, Default)]
pub struct ScorerSuite {
    scorers: BTreeMap<ScoreKind, Arc<dyn Scorer>>,
}

impl ScorerSuite {
    pub fn uniform(scorer: Arc<dyn Scorer>) -> Self {
        ScorerSuite {
            scorers: ScoreKind::ALL.iter().map(|&k| (k, scorer.clone())).collect(),
        }
    }

    pub fn mock(seed: u64) -> Self {
        Self::uniform(Arc::new(MockScorer::new(seed)))
    }

    /// Remote scorers at `{base}/{kind}`.
    pub fn http(base: &str, timeout: Duration, retries: u32) -> Self {
        ScorerSuite {
            scorers: ScoreKind::ALL
                .iter()
                .map(|&k| {
                    let url = format!("{}/{}", base.trim_end_matches('/'), k.as_str());
                    (k, Arc::new(HttpScorer::new(url, timeout, retries)) as Arc<dyn Scorer>)
                })
                .collect(),
        }
    }

    /// Parses `mock`, `mock:SEED` or `http:URL`.
    pub fn from_spec(spec: &str, seed: u64, timeout: Duration, retries: u32) -> Result<Self> {
        if spec == "mock" {
            Ok(Self::mock(seed))
        } else if let Some(s) = spec.strip_prefix("mock:") {
            let seed = s
                .parse()
                .map_err(|_| LatoError::Config(format!("bad mock seed {s:?}")))?;
            Ok(Self::mock(seed))
        } else if let Some(url) = spec.strip_prefix("http:") {
            let url = if url.starts_with("//") { format!("http:{url}") } else { url.to_string() };
            Ok(Self::http(&url, timeout, retries))
        } else {
            Err(LatoError::Config(format!(
                "unknown scorer spec {spec:?} (expected mock, mock:SEED or http:URL)"
            )))
        }
    }

    pub fn with(mut self, kind: ScoreKind, scorer: Arc<dyn Scorer>) -> Self {
        self.scorers.insert(kind, scorer);
        self
    }

    pub fn without(mut self, kind: ScoreKind) -> Self {
        self.scorers.remove(&kind);
        self
    }

    pub fn get(&self, kind: ScoreKind) -> Option<&Arc<dyn Scorer>> {
        self.scorers.get(&kind)
    }

    pub fn score(&self, q: &ScoreQuery, kind: ScoreKind) -> Result<f64> {
        let scorer = self
            .get(kind)
            .ok_or_else(|| LatoError::Config(format!("no {kind} scorer configured")))?;
        scorer.score(q, kind)
    }

    /// Distinct scorer labels, for reports.
    pub fn provenance(&self) -> Vec<String> {
        let mut v: Vec<String> = self.scorers.values().map(|s| s.provenance()).collect();
        v.sort();
        v.dedup();
        v
    }
}

impl fmt::Debug for ScorerSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScorerSuite")
            .field("scorers", &self.provenance())
            .finish()
    }
}
