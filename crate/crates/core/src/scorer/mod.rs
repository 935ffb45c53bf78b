//! Masked-token scoring and the gendered-mass aggregation over top-k predictions.
//!
//! Three backends implement [`Scorer`]: [`MockScorer`] echoes fixed tables,
//! [`SyntheticScorerModel`] is a count model trained on simulated selected
//! populations, and [`RemoteScorer`] calls a fill-mask HTTP endpoint.

mod mock;
mod remote;
mod synthetic;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scm::Gender;
use crate::templates::{mask_count, GenderLexicon, ProbeText};

pub use mock::MockScorer;
pub use remote::{RemoteScorer, RetryPolicy, API_TOKEN_ENV, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT};
pub use synthetic::{train_synthetic_scorer, SyntheticScorerModel, RESIDUAL_TOKEN};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("probe must contain exactly one [MASK]: {0:?}")]
    MissingMask(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("axis value {0:?} was not part of the training axis")]
    UnknownAxisValue(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("scorer configuration: {0}")]
    Config(String),
}

impl ScoreError {
    /// Whether retrying the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            ScoreError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            ScoreError::Timeout | ScoreError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub prob: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, prob: f64) -> Self {
        Self { token: token.into(), prob }
    }
}

/// Top candidates for the masked position, highest probability first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPrediction {
    entries: Vec<TokenScore>,
    k_available: usize,
}

impl MaskPrediction {
    /// Validates and stably sorts `entries` by descending probability;
    /// `k_available` is how many candidates the backend produced.
    pub fn new(mut entries: Vec<TokenScore>, k_available: usize) -> Result<Self, ScoreError> {
        for e in &entries {
            if !(e.prob.is_finite() && (0.0..=1.0).contains(&e.prob)) {
                return Err(ScoreError::Protocol(format!(
                    "probability {} for {:?} outside [0, 1]",
                    e.prob, e.token
                )));
            }
        }
        let total: f64 = entries.iter().map(|e| e.prob).sum();
        if total > 1.0 + 1e-6 {
            return Err(ScoreError::Protocol(format!(
                "probabilities sum to {total} > 1"
            )));
        }
        entries.sort_by(|a, b| b.prob.partial_cmp(&a.prob).unwrap_or(Ordering::Equal));
        Ok(Self { entries, k_available })
    }

    pub fn entries(&self) -> &[TokenScore] {
        &self.entries
    }

    pub fn k_available(&self) -> usize {
        self.k_available
    }

    pub fn total_prob(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    /// Keeps the first `k` entries.
    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GenderMass {
    pub female: f64,
    pub male: f64,
}

impl GenderMass {
    pub fn get(&self, g: Gender) -> f64 {
        match g {
            Gender::Female => self.female,
            Gender::Male => self.male,
        }
    }
}

/// Sums the probability of female-column and male-column tokens among the
/// first `k` predictions. Matching is case-insensitive on whole tokens.
pub fn gender_mass(pred: &MaskPrediction, lexicon: &GenderLexicon, k: usize) -> GenderMass {
    let mut mass = GenderMass::default();
    for e in pred.entries().iter().take(k) {
        match lexicon.gender_of(e.token.trim()) {
            Some(Gender::Female) => mass.female += e.prob,
            Some(Gender::Male) => mass.male += e.prob,
            None => {}
        }
    }
    mass
}

/// A masked-language-model backend.
pub trait Scorer: Send + Sync {
    /// Top-`k` candidates for the probe's `[MASK]`. Callers go through
    /// [`score`], which checks the preconditions first.
    fn predict(&self, probe: &ProbeText, k: usize) -> Result<MaskPrediction, ScoreError>;

    /// Short human-readable identity, recorded in run manifests.
    fn descriptor(&self) -> String;

    /// How many probes may be scored concurrently.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// The `k` the aggregation should use when `requested` was configured.
    fn effective_k(&self, requested: usize) -> usize {
        requested
    }
}

pub fn score(backend: &dyn Scorer, probe: &ProbeText, k: usize) -> Result<MaskPrediction, ScoreError> {
    if mask_count(&probe.text) != 1 {
        return Err(ScoreError::MissingMask(probe.text.clone()));
    }
    if k == 0 {
        return Err(ScoreError::InvalidK);
    }
    backend.predict(probe, k)
}

#[cfg(test)]
pub(crate) fn test_probe(text: &str, w_index: usize, w_value: &str) -> ProbeText {
    ProbeText {
        text: text.into(),
        w_index,
        w_value: w_value.into(),
        verb: None,
        life_stage: None,
        template_id: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::builtin_lexicon;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pred(xs: &[(&str, f64)]) -> MaskPrediction {
        let n = xs.len();
        MaskPrediction::new(xs.iter().map(|&(t, p)| TokenScore::new(t, p)).collect(), n).unwrap()
    }

    #[test]
    fn worked_examples() {
        let lex = builtin_lexicon();
        let cases = [
            (vec![("she", 0.4), ("he", 0.3), ("it", 0.1), ("they", 0.1), ("was", 0.1)], 5, 0.4, 0.3),
            (vec![("it", 0.5), ("they", 0.3), ("a", 0.2)], 5, 0.0, 0.0),
            (vec![("she", 0.2), ("her", 0.2), ("he", 0.1), ("woman", 0.05), ("the", 0.45)], 5, 0.45, 0.1),
            (vec![("she", 0.3), ("he", 0.25), ("her", 0.2), ("him", 0.15), ("his", 0.1)], 3, 0.5, 0.25),
        ];
        for (entries, k, f, m) in cases {
            let g = gender_mass(&pred(&entries), &lex, k);
            assert_abs_diff_eq!(g.female, f, epsilon = 1e-12);
            assert_abs_diff_eq!(g.male, m, epsilon = 1e-12);
        }
    }

    #[test]
    fn prediction_invariants() {
        let p = pred(&[("a", 0.1), ("b", 0.5), ("c", 0.1), ("d", 0.3)]);
        let toks: Vec<_> = p.entries().iter().map(|e| e.token.as_str()).collect();
        assert_eq!(toks, ["b", "d", "a", "c"]);
        assert!(MaskPrediction::new(vec![TokenScore::new("x", 1.2)], 1).is_err());
        assert!(MaskPrediction::new(vec![TokenScore::new("x", 0.7), TokenScore::new("y", 0.7)], 2).is_err());
        assert!(MaskPrediction::new(vec![TokenScore::new("x", f64::NAN)], 1).is_err());
    }

    #[test]
    fn retriable_classification() {
        assert!(ScoreError::Http { status: 429, body: String::new() }.is_retriable());
        assert!(ScoreError::Http { status: 503, body: String::new() }.is_retriable());
        assert!(!ScoreError::Http { status: 404, body: String::new() }.is_retriable());
        assert!(ScoreError::Timeout.is_retriable());
        assert!(!ScoreError::Protocol("x".into()).is_retriable());
    }

    fn arb_prediction() -> impl Strategy<Value = MaskPrediction> {
        let vocab = ["she", "he", "her", "him", "it", "they", "woman", "man", "the", "a"];
        prop::collection::vec((0..vocab.len(), 0.0..1.0f64), 1..10).prop_map(move |raw| {
            let total: f64 = raw.iter().map(|r| r.1).sum::<f64>().max(1e-9);
            let entries = raw
                .iter()
                .map(|&(i, p)| TokenScore::new(vocab[i], p / total * 0.999))
                .collect::<Vec<_>>();
            let n = entries.len();
            MaskPrediction::new(entries, n).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mass_is_monotone_in_k(p in arb_prediction(), k1 in 1usize..10, extra in 0usize..10) {
            let lex = builtin_lexicon();
            let a = gender_mass(&p, &lex, k1);
            let b = gender_mass(&p, &lex, k1 + extra);
            prop_assert!(a.female <= b.female + 1e-15);
            prop_assert!(a.male <= b.male + 1e-15);
            prop_assert!(b.female + b.male <= p.total_prob() + 1e-12);
        }
    }
}
