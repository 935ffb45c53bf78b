use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use chrono::{DateTime, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{run_id, ExperimentConfig, ResolvedInputs, ScorerConfig};
use super::plot::render_plot;
use super::ExperimentError;
use crate::scm::{apply_selection, sample_population_with, Gender};
use crate::scorer::{
    gender_mass, score, train_synthetic_scorer, GenderMass, RemoteScorer, ScoreError, Scorer,
};
use crate::stats::{aggregate, fit, read_series_csv, write_series_csv, FitResult, SeriesPoint};
use crate::templates::{render_probes, validate_neutral, ProbeText};

/// Probes scored between checkpoint writes.
pub const CHECKPOINT_EVERY: usize = 50;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SERIES_FILE: &str = "series.csv";
pub const FIT_FILE: &str = "fit.json";
pub const PLOT_FILE: &str = "plot.svg";
pub const MASSES_FILE: &str = "masses.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "synthetic_model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Queued,
    Scoring,
    Fitting,
    Done,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Done | RunState::Failed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub state: RunState,
    pub probes_done: usize,
    pub probes_total: usize,
}

/// Gendered mass for one scored probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMass {
    pub probe_index: usize,
    pub w_index: usize,
    pub template_id: usize,
    pub verb: Option<String>,
    pub life_stage: Option<String>,
    pub female: f64,
    pub male: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    run_id: String,
    masses: Vec<ProbeMass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_at: DateTime<Utc>,
    pub completed_at: DateTime<Utc>,
    pub probe_count: usize,
    pub scorer: String,
    pub tool_version: String,
    pub axis_category: String,
    pub axis_len: usize,
    pub lexicon_hash: String,
    pub axis_hash: String,
    /// Lexicon columns that are non-empty, i.e. the series worth plotting.
    pub genders: Vec<Gender>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub series: Vec<SeriesPoint>,
    pub fit: FitResult,
    /// Present when the run was scored in this process.
    pub masses: Option<Vec<ProbeMass>>,
    pub plot_path: PathBuf,
    pub dir: PathBuf,
    /// True when served from an earlier run with the same id.
    pub cached: bool,
}

impl RunResult {
    /// Genders whose series has zero variance, among those the lexicon covers.
    pub fn degenerate_genders(&self) -> Vec<Gender> {
        self.manifest
            .genders
            .iter()
            .copied()
            .filter(|&g| self.fit.is_degenerate(g))
            .collect()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

type ProgressFn = dyn Fn(Progress) + Send + Sync;

/// Executes (or reuses) one experiment run.
pub struct Runner {
    config: ExperimentConfig,
    inputs: ResolvedInputs,
    run_id: String,
    dir: PathBuf,
    scorer: Option<Arc<dyn Scorer>>,
    progress: Option<Arc<ProgressFn>>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    Runner::new(config.clone())?.run()
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        let inputs = config.resolve()?;
        let run_id = run_id(&config, &inputs);
        let dir = config.cache_root().join(&run_id);
        Ok(Self { config, inputs, run_id, dir, scorer: None, progress: None })
    }

    /// Uses `scorer` instead of building one from the config.
    pub fn with_scorer(mut self, scorer: Arc<dyn Scorer>) -> Self {
        self.scorer = Some(scorer);
        self
    }

    pub fn on_progress(mut self, f: impl Fn(Progress) + Send + Sync + 'static) -> Self {
        self.progress = Some(Arc::new(f));
        self
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn inputs(&self) -> &ResolvedInputs {
        &self.inputs
    }

    pub fn is_complete(&self) -> bool {
        self.dir.join(MANIFEST_FILE).is_file()
    }

    pub fn probes(&self) -> Result<Vec<ProbeText>, ExperimentError> {
        Ok(render_probes(&self.inputs.templates, &self.inputs.axis)?)
    }

    fn report(&self, state: RunState, done: usize, total: usize) {
        if let Some(f) = &self.progress {
            f(Progress { state, probes_done: done, probes_total: total });
        }
    }

    fn build_scorer(&self) -> Result<Arc<dyn Scorer>, ExperimentError> {
        if let Some(s) = &self.scorer {
            return Ok(s.clone());
        }
        Ok(match &self.config.scorer {
            ScorerConfig::Synthetic { params, corpus_n, alpha } => {
                let mut params = params.clone();
                params.rng_seed = self.config.seed;
                params.axis_levels = self.inputs.axis.len();
                let population = sample_population_with(&params, *corpus_n, &self.inputs.lexicon)?;
                let selected = apply_selection(&population);
                info!(
                    "synthetic corpus: {} of {} individuals selected",
                    selected.len(),
                    population.len()
                );
                let model =
                    train_synthetic_scorer(&selected, &self.inputs.lexicon, *alpha, &self.inputs.axis)?;
                write_atomic(&self.dir.join(MODEL_FILE), model.to_json().as_bytes())?;
                Arc::new(model)
            }
            ScorerConfig::Remote { url, mask_token, max_in_flight } => {
                Arc::new(RemoteScorer::with_options(
                    url,
                    mask_token.clone(),
                    std::env::var(crate::scorer::API_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
                    crate::scorer::DEFAULT_TIMEOUT,
                    Default::default(),
                    *max_in_flight,
                )?)
            }
            ScorerConfig::Mock { .. } => Arc::new(
                self.inputs
                    .mock
                    .clone()
                    .expect("mock table resolved with the config"),
            ),
        })
    }

    fn load_checkpoint(&self) -> Result<Vec<ProbeMass>, ExperimentError> {
        let path = self.dir.join(CHECKPOINT_FILE);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let cp: Checkpoint = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        if cp.run_id != self.run_id
            || cp.masses.iter().enumerate().any(|(i, m)| m.probe_index != i)
        {
            warn!("ignoring checkpoint at {} that does not match this run", path.display());
            return Ok(Vec::new());
        }
        Ok(cp.masses)
    }

    fn save_checkpoint(&self, masses: &[ProbeMass]) -> Result<(), ExperimentError> {
        let cp = Checkpoint { run_id: self.run_id.clone(), masses: masses.to_vec() };
        write_atomic(
            &self.dir.join(CHECKPOINT_FILE),
            serde_json::to_string(&cp).expect("serializes").as_bytes(),
        )?;
        Ok(())
    }

    /// Scores `probes[start..end]` with up to `workers` concurrent calls.
    /// Results come back in probe order regardless of completion order, and
    /// stop early if a probe failed.
    fn score_chunk(
        scorer: &dyn Scorer,
        probes: &[ProbeText],
        k: usize,
        lexicon: &crate::templates::GenderLexicon,
        workers: usize,
    ) -> Vec<Result<GenderMass, ScoreError>> {
        let slots: Vec<Mutex<Option<Result<GenderMass, ScoreError>>>> =
            probes.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        // After a failure no new probes are started; the chunk is cut there anyway.
        let failed = AtomicBool::new(false);
        thread::scope(|s| {
            for _ in 0..workers.clamp(1, probes.len().max(1)) {
                s.spawn(|| loop {
                    if failed.load(Ordering::Relaxed) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= probes.len() {
                        break;
                    }
                    let r = score(scorer, &probes[i], k).map(|p| gender_mass(&p, lexicon, k));
                    if r.is_err() {
                        failed.store(true, Ordering::Relaxed);
                    }
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map_while(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
            .collect()
    }

    pub fn run(&self) -> Result<RunResult, ExperimentError> {
        if self.is_complete() {
            info!("run {} already complete; reusing", self.run_id);
            let mut result = load_run(&self.dir)?;
            result.cached = true;
            return Ok(result);
        }
        let started_at = Utc::now();
        fs::create_dir_all(&self.dir)?;
        write_atomic(&self.dir.join(CONFIG_FILE), self.config.to_json().as_bytes())?;

        let probes = self.probes()?;
        let total = probes.len();
        let non_neutral = probes
            .iter()
            .filter(|p| !validate_neutral(p, &self.inputs.lexicon))
            .count();
        if non_neutral > 0 {
            warn!("{non_neutral} probe(s) contain lexicon words outside the mask");
        }
        self.report(RunState::Queued, 0, total);

        let scorer = self.build_scorer()?;
        let k = scorer.effective_k(self.config.k);
        let mut masses = self.load_checkpoint()?;
        if !masses.is_empty() {
            info!("resuming {} from probe {}", self.run_id, masses.len());
        }
        self.report(RunState::Scoring, masses.len(), total);

        while masses.len() < total {
            let start = masses.len();
            let end = (start + CHECKPOINT_EVERY).min(total);
            let results = Self::score_chunk(
                scorer.as_ref(),
                &probes[start..end],
                k,
                &self.inputs.lexicon,
                scorer.max_in_flight(),
            );
            let mut failure = None;
            for (offset, r) in results.into_iter().enumerate() {
                let i = start + offset;
                match r {
                    Ok(m) => {
                        let p = &probes[i];
                        masses.push(ProbeMass {
                            probe_index: i,
                            w_index: p.w_index,
                            template_id: p.template_id,
                            verb: p.verb.clone(),
                            life_stage: p.life_stage.clone(),
                            female: m.female,
                            male: m.male,
                        });
                    }
                    Err(e) => {
                        failure = Some((i, e));
                        break;
                    }
                }
            }
            self.save_checkpoint(&masses)?;
            if let Some((probe_index, source)) = failure {
                self.report(RunState::Failed, masses.len(), total);
                return Err(ExperimentError::Scorer { probe_index: Some(probe_index), source });
            }
            self.report(RunState::Scoring, masses.len(), total);
        }

        self.report(RunState::Fitting, total, total);
        let pairs: Vec<(ProbeText, GenderMass)> = probes
            .iter()
            .zip(&masses)
            .map(|(p, m)| (p.clone(), GenderMass { female: m.female, male: m.male }))
            .collect();
        let series = aggregate(&pairs);
        let fit_result = fit(&series, self.config.fit_degree)?;

        let mut series_csv = Vec::new();
        write_series_csv(&series, &mut series_csv)?;
        write_atomic(&self.dir.join(SERIES_FILE), &series_csv)?;
        write_atomic(&self.dir.join(FIT_FILE), fit_result.to_json().as_bytes())?;
        write_masses_csv(&self.dir.join(MASSES_FILE), &masses)?;

        let genders = [Gender::Female, Gender::Male]
            .into_iter()
            .filter(|&g| self.inputs.lexicon.has_column(g))
            .collect();
        let manifest = RunManifest {
            run_id: self.run_id.clone(),
            started_at,
            completed_at: Utc::now(),
            probe_count: total,
            scorer: scorer.descriptor(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            axis_category: self.inputs.axis.category.to_string(),
            axis_len: self.inputs.axis.len(),
            lexicon_hash: self.inputs.lexicon_hash(),
            axis_hash: self.inputs.axis_hash(),
            genders,
            config: self.config.clone(),
        };
        let result = RunResult {
            manifest,
            series,
            fit: fit_result,
            masses: Some(masses),
            plot_path: self.dir.join(PLOT_FILE),
            dir: self.dir.clone(),
            cached: false,
        };
        let svg = render_plot(&result, None)?;
        write_atomic(&result.plot_path, svg.as_bytes())?;
        // The manifest goes last: its presence marks the run complete.
        write_atomic(
            &self.dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&result.manifest).expect("serializes").as_bytes(),
        )?;
        self.report(RunState::Done, total, total);
        Ok(result)
    }
}

fn write_masses_csv(path: &Path, masses: &[ProbeMass]) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| ExperimentError::Io(io::Error::other(e.to_string()));
    wtr.write_record([
        "probe_index",
        "w_index",
        "template_id",
        "verb",
        "life_stage",
        "female",
        "male",
    ])
    .map_err(io)?;
    for m in masses {
        wtr.write_record([
            m.probe_index.to_string(),
            m.w_index.to_string(),
            m.template_id.to_string(),
            m.verb.clone().unwrap_or_default(),
            m.life_stage.clone().unwrap_or_default(),
            m.female.to_string(),
            m.male.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = wtr.into_inner().map_err(|e| ExperimentError::Io(io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Loads a completed run directory.
pub fn load_run(dir: &Path) -> Result<RunResult, ExperimentError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(ExperimentError::NotFound(dir.display().to_string()));
    }
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", manifest_path.display())))?;
    let series = read_series_csv(fs::File::open(dir.join(SERIES_FILE))?)?;
    let fit_result: FitResult = serde_json::from_str(&fs::read_to_string(dir.join(FIT_FILE))?)
        .map_err(|e| ExperimentError::Config(format!("fit.json: {e}")))?;
    Ok(RunResult {
        manifest,
        series,
        fit: fit_result,
        masses: None,
        plot_path: dir.join(PLOT_FILE),
        dir: dir.to_path_buf(),
        cached: true,
    })
}

/// Completed runs under `root`, ordered by completion time.
pub fn list_runs(root: &Path) -> Result<Vec<RunManifest>, ExperimentError> {
    let mut out = Vec::new();
    let entries = match fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    for entry in entries {
        let path = entry?.path().join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&path) {
            match serde_json::from_str::<RunManifest>(&text) {
                Ok(m) => out.push(m),
                Err(e) => warn!("skipping {}: {e}", path.display()),
            }
        }
    }
    out.sort_by(|a, b| a.completed_at.cmp(&b.completed_at).then(a.run_id.cmp(&b.run_id)));
    Ok(out)
}
