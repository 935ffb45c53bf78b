use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::scm::ScmParams;
use crate::scorer::{MockScorer, DEFAULT_K, DEFAULT_MAX_IN_FLIGHT};
use crate::stats::{MAX_DEGREE, MIN_DEGREE};
use crate::templates::{
    builtin_axis, builtin_lexicon, builtin_templates, AxisCategory, AxisSpec, GenderLexicon,
    TemplateSpec,
};

pub const CACHE_DIR_ENV: &str = "BIASPROBE_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerConfig {
    /// Count model trained on a simulated, selection-filtered corpus.
    Synthetic {
        #[serde(default)]
        params: ScmParams,
        #[serde(default = "default_corpus_n")]
        corpus_n: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    Remote {
        url: String,
        #[serde(default)]
        mask_token: Option<String>,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
    Mock {
        table: PathBuf,
    },
}

fn default_corpus_n() -> usize {
    200_000
}

fn default_alpha() -> f64 {
    1.0
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_degree() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig::Synthetic {
            params: ScmParams::default(),
            corpus_n: default_corpus_n(),
            alpha: default_alpha(),
        }
    }
}

/// Everything needed to reproduce a run. Serialized as one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub category: Option<AxisCategory>,
    #[serde(default)]
    pub axis_file: Option<PathBuf>,
    #[serde(default)]
    pub template_file: Option<PathBuf>,
    #[serde(default)]
    pub lexicon_file: Option<PathBuf>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_degree")]
    pub fit_degree: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scorer: ScorerConfig::default(),
            category: Some(AxisCategory::Date),
            axis_file: None,
            template_file: None,
            lexicon_file: None,
            k: DEFAULT_K,
            fit_degree: 1,
            seed: ScmParams::default().rng_seed,
            out: default_out(),
        }
    }
}

/// Axis, templates, lexicon and mock table loaded from the config.
#[derive(Debug, Clone)]
pub struct ResolvedInputs {
    pub axis: AxisSpec,
    pub templates: Vec<TemplateSpec>,
    pub lexicon: GenderLexicon,
    pub mock: Option<MockScorer>,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&read(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.k == 0 {
            return Err(ExperimentError::Config("k must be >= 1".into()));
        }
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&self.fit_degree) {
            return Err(ExperimentError::Config(format!(
                "fit_degree must lie in [{MIN_DEGREE}, {MAX_DEGREE}], got {}",
                self.fit_degree
            )));
        }
        if self.category == Some(AxisCategory::Custom) && self.axis_file.is_none() {
            return Err(ExperimentError::Config("custom category needs axis_file".into()));
        }
        if self.category.is_none() && self.axis_file.is_none() {
            return Err(ExperimentError::Config("set category or axis_file".into()));
        }
        match &self.scorer {
            ScorerConfig::Synthetic { params, corpus_n, alpha } => {
                params.validate()?;
                if *corpus_n == 0 {
                    return Err(ExperimentError::Config("corpus_n must be >= 1".into()));
                }
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(ExperimentError::Config("alpha must be > 0".into()));
                }
            }
            ScorerConfig::Remote { url, .. } if url.is_empty() => {
                return Err(ExperimentError::Config("remote scorer needs a url".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output root, honouring `BIASPROBE_CACHE_DIR`.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_DIR_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.clone())
    }

    pub fn resolve(&self) -> Result<ResolvedInputs, ExperimentError> {
        self.validate()?;
        let axis = match (&self.axis_file, self.category) {
            (Some(path), _) => AxisSpec::from_lines(&read(path)?)?,
            (None, Some(c)) => builtin_axis(c)?,
            (None, None) => unreachable!("validated"),
        };
        let templates = match (&self.template_file, self.category) {
            (Some(path), _) => TemplateSpec::from_lines(&read(path)?)?,
            (None, Some(c)) if c != AxisCategory::Custom => builtin_templates(c)?,
            _ => {
                return Err(ExperimentError::Config(
                    "a custom axis needs template_file or a built-in category".into(),
                ))
            }
        };
        let lexicon = match &self.lexicon_file {
            Some(path) => GenderLexicon::from_csv(read(path)?.as_bytes())?,
            None => builtin_lexicon(),
        };
        let mock = match &self.scorer {
            ScorerConfig::Mock { table } => Some(MockScorer::from_file(table)?),
            _ => None,
        };
        Ok(ResolvedInputs { axis, templates, lexicon, mock })
    }

    /// The config as hashed: output location and file paths removed (file
    /// contents are hashed separately), the synthetic seed and level count
    /// taken from `seed` and the axis.
    pub fn canonical_json(&self) -> String {
        let mut logical = self.clone();
        logical.out = PathBuf::new();
        logical.axis_file = logical.axis_file.map(|_| PathBuf::from("<file>"));
        logical.template_file = logical.template_file.map(|_| PathBuf::from("<file>"));
        logical.lexicon_file = logical.lexicon_file.map(|_| PathBuf::from("<file>"));
        match &mut logical.scorer {
            ScorerConfig::Synthetic { params, .. } => {
                params.rng_seed = 0;
                params.axis_levels = 0;
            }
            ScorerConfig::Mock { table } => *table = PathBuf::from("<file>"),
            ScorerConfig::Remote { .. } => {}
        }
        // serde_json::Value keeps object keys sorted.
        let value = serde_json::to_value(&logical).expect("config serializes");
        value.to_string()
    }
}

impl ResolvedInputs {
    pub fn lexicon_hash(&self) -> String {
        let mut buf = Vec::new();
        self.lexicon.write_csv(&mut buf).expect("in-memory write");
        sha256_hex(&buf)
    }

    pub fn axis_hash(&self) -> String {
        sha256_hex(self.axis.to_lines().as_bytes())
    }

    pub fn templates_hash(&self) -> String {
        sha256_hex(serde_json::to_string(&self.templates).expect("serializes").as_bytes())
    }

    pub fn mock_hash(&self) -> Option<String> {
        self.mock
            .as_ref()
            .map(|m| sha256_hex(serde_json::to_string(m).expect("serializes").as_bytes()))
    }
}

/// Deterministic run identifier: 16 hex chars of a SHA-256 over the
/// canonical config and the content hashes of every resolved input.
pub fn run_id(config: &ExperimentConfig, inputs: &ResolvedInputs) -> String {
    let mut h = Sha256::new();
    for part in [
        config.canonical_json(),
        inputs.lexicon_hash(),
        inputs.axis_hash(),
        inputs.templates_hash(),
        inputs.mock_hash().unwrap_or_default(),
    ] {
        h.update(part.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}
