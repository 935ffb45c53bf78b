//! Command-line front end. Exit codes: 0 success, 1 config or usage error,
//! 2 scorer or network failure, 3 degenerate statistics.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::experiment::{
    list_runs, load_run, render_plot, ExperimentConfig, ExperimentError, Runner, ScorerConfig,
};
use crate::scm::{
    apply_selection, builtin_dag, dependence_report, sample_population, write_samples_csv,
    CausalDag, DagSpec, BuiltinDag, ScmParams, Variable,
};
use crate::stats::{fit, render_report, report_table};
use crate::templates::{builtin_axis, builtin_lexicon, AxisCategory};

#[derive(Debug, Parser)]
#[command(name = "biasprobe", version, about = "Selection-bias simulation and masked gender probing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the structural model and compare W-G dependence before and after selection.
    Simulate(SimulateArgs),
    /// Query d-separation on one of the built-in DAGs or a DAG file.
    Dsep(DsepArgs),
    /// Render probes, score them, aggregate and fit.
    Probe(ProbeArgs),
    /// Re-fit a completed run at another degree without re-scoring.
    Fit(FitArgs),
    /// Slope and Pearson's r table over completed runs.
    Report(ReportArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
    /// Print the built-in lexicon as CSV.
    Lexicon,
    /// Print a built-in axis, one value per line.
    Axis {
        #[arg(value_enum)]
        category: CategoryArg,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = ScmParams::default().rng_seed)]
    pub seed: u64,
    #[arg(long, default_value_t = 200_000)]
    pub n: usize,
    /// JSON file with ScmParams; the seed flag wins over its rng_seed.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Write all sampled individuals as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Emit the two reports as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DagArg {
    WithGender,
    WithSelection,
}

#[derive(Debug, Args)]
pub struct DsepArgs {
    #[arg(long, value_enum, default_value = "with-gender", conflicts_with = "dag_file")]
    pub dag: DagArg,
    /// JSON DAG description: {"nodes": [...], "directed": [[a, b]], "bidirected": [], "selection": []}.
    #[arg(long)]
    pub dag_file: Option<PathBuf>,
    /// Extra directed edge FROM:TO; unknown endpoints are added as nodes.
    #[arg(long = "extra-edge", value_name = "FROM:TO")]
    pub extra_edges: Vec<String>,
    #[arg(long)]
    pub a: String,
    #[arg(long)]
    pub b: String,
    /// Conditioning nodes, repeated or comma separated.
    #[arg(long, value_delimiter = ',')]
    pub given: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    Synthetic,
    Remote,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CategoryArg {
    Date,
    Place,
    Subreddit,
}

impl From<CategoryArg> for AxisCategory {
    fn from(c: CategoryArg) -> Self {
        match c {
            CategoryArg::Date => AxisCategory::Date,
            CategoryArg::Place => AxisCategory::Place,
            CategoryArg::Subreddit => AxisCategory::Subreddit,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Experiment config JSON; flags given explicitly override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    #[arg(long, value_enum)]
    pub category: Option<CategoryArg>,
    #[arg(long)]
    pub axis_file: Option<PathBuf>,
    #[arg(long)]
    pub template_file: Option<PathBuf>,
    #[arg(long)]
    pub lexicon_file: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fill-mask endpoint URL for the remote scorer.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Mask string of the served model, substituted for [MASK].
    #[arg(long)]
    pub mask_token: Option<String>,
    /// Prediction table JSON for the mock scorer.
    #[arg(long)]
    pub mock_table: Option<PathBuf>,
    /// Simulated population size for the synthetic scorer.
    #[arg(long)]
    pub corpus_n: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use equal access curves for both genders (synthetic control).
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Run id under --out, or a run directory.
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub degree: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Run ids to include; all completed runs when empty.
    pub runs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Directory of built UI assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

fn simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), ExperimentError> {
    let mut params = match &args.params {
        Some(path) => serde_json::from_str::<ScmParams>(&fs::read_to_string(path)?)
            .map_err(config_err)?,
        None => ScmParams::default(),
    };
    params.rng_seed = args.seed;
    let population = sample_population(&params, args.n)?;
    let selected = apply_selection(&population);
    if let Some(path) = &args.csv {
        write_samples_csv(&population, fs::File::create(path)?)?;
    }
    let full = dependence_report(&population, Variable::W, Variable::G, None)?;
    let sel = dependence_report(&selected, Variable::W, Variable::G, None)?;
    if args.json {
        let v = serde_json::json!({ "full": full, "selected": sel });
        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("serializes"))?;
    } else {
        writeln!(out, "W vs G, full population:  {full}")?;
        writeln!(out, "W vs G, selected (S=1):   {sel}")?;
    }
    Ok(())
}

fn dsep(args: &DsepArgs, out: &mut dyn Write) -> Result<(), ExperimentError> {
    let mut dag = match &args.dag_file {
        Some(path) => {
            let spec: DagSpec = serde_json::from_str(&fs::read_to_string(path)?).map_err(config_err)?;
            CausalDag::from_spec(&spec)?
        }
        None => builtin_dag(match args.dag {
            DagArg::WithGender => BuiltinDag::WithGender,
            DagArg::WithSelection => BuiltinDag::WithSelection,
        }),
    };
    for edge in &args.extra_edges {
        let (from, to) = edge
            .split_once(':')
            .ok_or_else(|| config_err(format!("edge {edge:?} is not FROM:TO")))?;
        for n in [from, to] {
            if dag.index_of(n).is_none() {
                dag.add_node(n)?;
            }
        }
        dag.add_edge(from, to)?;
    }
    let separated = dag.d_separated(&args.a, &args.b, &args.given)?;
    let given = if args.given.is_empty() { "{}".to_string() } else { format!("{{{}}}", args.given.join(", ")) };
    writeln!(
        out,
        "{} and {} given {given}: {}",
        args.a,
        args.b,
        if separated { "d-separated" } else { "not d-separated" }
    )?;
    Ok(())
}

fn probe_config(args: &ProbeArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(c) = args.category {
        cfg.category = Some(c.into());
    }
    if let Some(p) = &args.axis_file {
        cfg.axis_file = Some(p.clone());
    }
    if let Some(p) = &args.template_file {
        cfg.template_file = Some(p.clone());
    }
    if let Some(p) = &args.lexicon_file {
        cfg.lexicon_file = Some(p.clone());
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(d) = args.degree {
        cfg.fit_degree = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    match args.scorer {
        Some(ScorerArg::Synthetic) if !matches!(cfg.scorer, ScorerConfig::Synthetic { .. }) => {
            cfg.scorer = ScorerConfig::default();
        }
        Some(ScorerArg::Remote) => {
            let url = args
                .endpoint
                .clone()
                .or_else(|| match &cfg.scorer {
                    ScorerConfig::Remote { url, .. } => Some(url.clone()),
                    _ => None,
                })
                .ok_or_else(|| config_err("--scorer remote needs --endpoint"))?;
            cfg.scorer = ScorerConfig::Remote {
                url,
                mask_token: args.mask_token.clone(),
                max_in_flight: crate::scorer::DEFAULT_MAX_IN_FLIGHT,
            };
        }
        Some(ScorerArg::Mock) => {
            let table = args
                .mock_table
                .clone()
                .ok_or_else(|| config_err("--scorer mock needs --mock-table"))?;
            cfg.scorer = ScorerConfig::Mock { table };
        }
        _ => {}
    }
    if let ScorerConfig::Synthetic { params, corpus_n, alpha } = &mut cfg.scorer {
        if args.symmetric {
            *params = ScmParams::symmetric();
        }
        if let Some(n) = args.corpus_n {
            *corpus_n = n;
        }
        if let Some(a) = args.alpha {
            *alpha = a;
        }
    }
    if let ScorerConfig::Remote { mask_token, .. } = &mut cfg.scorer {
        if args.mask_token.is_some() {
            mask_token.clone_from(&args.mask_token);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_fit_summary(
    out: &mut dyn Write,
    label: &str,
    fit: &crate::stats::FitResult,
) -> io::Result<()> {
    let rows = report_table(&[(label.to_string(), fit.clone())]);
    write!(out, "{}", render_report(&rows))
}

fn probe(args: &ProbeArgs, out: &mut dyn Write) -> Result<(), ExperimentError> {
    let cfg = probe_config(args)?;
    let runner = Runner::new(cfg)?;
    let result = runner.run()?;
    writeln!(
        out,
        "run {} ({} probes{}) -> {}",
        result.manifest.run_id,
        result.manifest.probe_count,
        if result.cached { ", cached" } else { "" },
        result.dir.display()
    )?;
    print_fit_summary(out, &result.manifest.axis_category, &result.fit)?;
    let degenerate = result.degenerate_genders();
    if !degenerate.is_empty() {
        return Err(ExperimentError::Degenerate(format!(
            "zero-variance series for {}",
            degenerate.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

fn resolve_run_dir(run: &str, out: &Path) -> PathBuf {
    let as_path = PathBuf::from(run);
    if as_path.join(crate::experiment::MANIFEST_FILE).is_file() {
        as_path
    } else {
        out.join(run)
    }
}

fn refit(args: &FitArgs, out: &mut dyn Write) -> Result<(), ExperimentError> {
    let dir = resolve_run_dir(&args.run, &args.out);
    let result = load_run(&dir)?;
    let fitted = fit(&result.series, args.degree)?;
    let svg = render_plot(&result, Some(args.degree))?;
    let fit_path = dir.join(format!("fit-degree{}.json", args.degree));
    let plot_path = dir.join(format!("plot-degree{}.svg", args.degree));
    fs::write(&fit_path, fitted.to_json())?;
    fs::write(&plot_path, svg)?;
    writeln!(out, "wrote {} and {}", fit_path.display(), plot_path.display())?;
    print_fit_summary(out, &result.manifest.axis_category, &fitted)?;
    Ok(())
}

fn report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), ExperimentError> {
    let ids: Vec<String> = if args.runs.is_empty() {
        list_runs(&args.out)?.into_iter().map(|m| m.run_id).collect()
    } else {
        args.runs.clone()
    };
    if ids.is_empty() {
        return Err(ExperimentError::NotFound(format!("no completed runs in {}", args.out.display())));
    }
    let mut runs = Vec::new();
    for id in &ids {
        let r = load_run(&resolve_run_dir(id, &args.out))?;
        let label = format!("{} {} {}", r.manifest.run_id, r.manifest.axis_category, r.manifest.scorer);
        runs.push((label, r.fit));
    }
    write!(out, "{}", render_report(&report_table(&runs)))?;
    Ok(())
}

/// Runs one parsed command, writing human output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Dsep(a) => dsep(a, out),
        Command::Probe(a) => probe(a, out),
        Command::Fit(a) => refit(a, out),
        Command::Report(a) => report(a, out),
        Command::Serve(a) => crate::service::serve_blocking(a.port, a.out.clone(), a.static_dir.clone())
            .map_err(ExperimentError::Io),
        Command::Lexicon => {
            builtin_lexicon().write_csv(&mut *out)?;
            Ok(())
        }
        Command::Axis { category } => {
            write!(out, "{}", builtin_axis((*category).into())?.to_lines())?;
            Ok(())
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
