use serde::{Deserialize, Serialize};

use super::{MaskPrediction, ScoreError, Scorer, TokenScore};
use crate::scm::PopulationSample;
use crate::templates::{AxisSpec, GenderLexicon, ProbeText};

/// Token that carries whatever probability the lexicon words leave over.
pub const RESIDUAL_TOKEN: &str = "<other>";

/// Additively smoothed counts of gendered words per axis level.
///
/// The predicted distribution for a probe depends only on its axis value:
/// `P(word | w) = (count(w, word) + alpha) / (N_w + alpha * |vocabulary|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct SyntheticScorerModel {
    axis: Vec<String>,
    alpha: f64,
    vocabulary: Vec<String>,
    /// `counts[w][word_index]`
    counts: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    axis: Vec<String>,
    alpha: f64,
    counts: Vec<(usize, String, u64)>,
}

impl From<SyntheticScorerModel> for ModelFile {
    fn from(m: SyntheticScorerModel) -> Self {
        let counts = m
            .counts
            .iter()
            .enumerate()
            .flat_map(|(w, row)| {
                row.iter()
                    .zip(&m.vocabulary)
                    .map(move |(&c, word)| (w, word.clone(), c))
            })
            .collect();
        ModelFile { axis: m.axis, alpha: m.alpha, counts }
    }
}

impl TryFrom<ModelFile> for SyntheticScorerModel {
    type Error = ScoreError;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        check_alpha(f.alpha)?;
        let mut vocabulary: Vec<String> = Vec::new();
        for (_, word, _) in &f.counts {
            if !vocabulary.contains(word) {
                vocabulary.push(word.clone());
            }
        }
        let mut counts = vec![vec![0u64; vocabulary.len()]; f.axis.len()];
        for (w, word, c) in f.counts {
            let row = counts
                .get_mut(w)
                .ok_or_else(|| ScoreError::Config(format!("count for w={w} outside the axis")))?;
            let i = vocabulary.iter().position(|v| *v == word).expect("collected above");
            row[i] += c;
        }
        Ok(Self { axis: f.axis, alpha: f.alpha, vocabulary, counts })
    }
}

fn check_alpha(alpha: f64) -> Result<(), ScoreError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(ScoreError::Config(format!("smoothing must be > 0, got {alpha}")))
    }
}

/// Tallies `y_word` per axis level over the selected (`s = 1`) samples.
pub fn train_synthetic_scorer(
    selected_samples: &[PopulationSample],
    lexicon: &GenderLexicon,
    alpha: f64,
    axis: &AxisSpec,
) -> Result<SyntheticScorerModel, ScoreError> {
    check_alpha(alpha)?;
    if selected_samples.is_empty() {
        return Err(ScoreError::Config("no training samples".into()));
    }
    let vocabulary: Vec<String> = lexicon.vocabulary().into_iter().map(String::from).collect();
    let mut counts = vec![vec![0u64; vocabulary.len()]; axis.len()];
    for s in selected_samples.iter().filter(|s| s.s) {
        let row = counts.get_mut(s.w).ok_or_else(|| {
            ScoreError::Config(format!("sample at w={} but axis has {} values", s.w, axis.len()))
        })?;
        let i = vocabulary
            .iter()
            .position(|v| *v == s.y_word)
            .ok_or_else(|| ScoreError::Config(format!("{:?} is not a lexicon word", s.y_word)))?;
        row[i] += 1;
    }
    Ok(SyntheticScorerModel {
        axis: axis.values.clone(),
        alpha,
        vocabulary,
        counts,
    })
}

impl SyntheticScorerModel {
    pub fn axis(&self) -> &[String] {
        &self.axis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn count(&self, w: usize, word: &str) -> u64 {
        self.vocabulary
            .iter()
            .position(|v| v == word)
            .map_or(0, |i| self.counts[w][i])
    }

    pub fn training_size(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Smoothed distribution at axis level `w`, in vocabulary order, plus a
    /// residual token when the lexicon words do not exhaust the mass.
    pub fn distribution(&self, w: usize) -> Vec<TokenScore> {
        let row = &self.counts[w];
        let denom = row.iter().sum::<u64>() as f64 + self.alpha * self.vocabulary.len() as f64;
        let mut out: Vec<TokenScore> = self
            .vocabulary
            .iter()
            .zip(row)
            .map(|(word, &c)| TokenScore::new(word.clone(), (c as f64 + self.alpha) / denom))
            .collect();
        let residual = 1.0 - out.iter().map(|e| e.prob).sum::<f64>();
        if residual > 1e-9 {
            out.push(TokenScore::new(RESIDUAL_TOKEN, residual));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        serde_json::from_str(text).map_err(|e| ScoreError::Config(format!("synthetic model: {e}")))
    }
}

impl Scorer for SyntheticScorerModel {
    fn predict(&self, probe: &ProbeText, k: usize) -> Result<MaskPrediction, ScoreError> {
        let w = self
            .axis
            .iter()
            .position(|v| *v == probe.w_value)
            .ok_or_else(|| ScoreError::UnknownAxisValue(probe.w_value.clone()))?;
        let dist = self.distribution(w);
        let n = dist.len();
        Ok(MaskPrediction::new(dist, n)?.truncated(k))
    }

    fn descriptor(&self) -> String {
        format!(
            "synthetic(alpha={}, trained_on={})",
            self.alpha,
            self.training_size()
        )
    }

    /// The model's whole vocabulary: its mass is spread over every lexicon
    /// word, so a top-5 cut would discard most of the gendered signal.
    fn effective_k(&self, requested: usize) -> usize {
        requested.max(self.vocabulary.len() + 1)
    }
}
