use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MaskPrediction, ScoreError, Scorer, TokenScore};
use crate::templates::ProbeText;

/// Fixed prediction tables, optionally keyed by axis value.
///
/// File form: `{"default": [["she", 0.4], ["he", 0.3]], "by_w_value": {"1801": [...]}}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScorer {
    #[serde(default)]
    pub default: Vec<(String, f64)>,
    #[serde(default)]
    pub by_w_value: BTreeMap<String, Vec<(String, f64)>>,
}

impl MockScorer {
    pub fn constant(table: &[(&str, f64)]) -> Self {
        Self {
            default: table.iter().map(|&(t, p)| (t.to_string(), p)).collect(),
            by_w_value: BTreeMap::new(),
        }
    }

    pub fn with_value(mut self, w_value: &str, table: &[(&str, f64)]) -> Self {
        self.by_w_value.insert(
            w_value.to_string(),
            table.iter().map(|&(t, p)| (t.to_string(), p)).collect(),
        );
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let mock: MockScorer = serde_json::from_str(text)
            .map_err(|e| ScoreError::Config(format!("mock table: {e}")))?;
        for table in std::iter::once(&mock.default).chain(mock.by_w_value.values()) {
            Self::prediction(table)?;
        }
        Ok(mock)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScoreError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn prediction(table: &[(String, f64)]) -> Result<MaskPrediction, ScoreError> {
        let entries = table.iter().map(|(t, p)| TokenScore::new(t.clone(), *p)).collect();
        MaskPrediction::new(entries, table.len())
    }
}

impl Scorer for MockScorer {
    fn predict(&self, probe: &ProbeText, k: usize) -> Result<MaskPrediction, ScoreError> {
        let table = self.by_w_value.get(&probe.w_value).unwrap_or(&self.default);
        Ok(Self::prediction(table)?.truncated(k))
    }

    fn descriptor(&self) -> String {
        "mock".into()
    }
}
