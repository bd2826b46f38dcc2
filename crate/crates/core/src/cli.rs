//! Command-line front end: CSV ingestion, estimation, simulation and bounds.

use crate::efficiency::{bound_gap_panel_rc, dr1_dr2_gap_rc, eff_bound_panel, eff_bound_rc, optimal_lambda, BoundEstimate};
use crate::error::{Error, Result};
use crate::nuisance::PsMethod;
use crate::numkit::Matrix;
use crate::panel_est::{estimate_panel, AttEstimate, Diagnostics, EstimatorTag, InferenceConfig, PanelDataset};
use crate::rc_est::{estimate_rc, RcDataset};
use crate::simulation::{run_mc, DgpSpec, Design, McReport};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "drdid", version, about = "Doubly robust difference-in-differences estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the ATT on a CSV dataset.
    Estimate(Flags),
    /// Run a Monte Carlo experiment on a simulated design.
    Simulate(Flags),
    /// Evaluate efficiency bounds of a simulated design.
    Bounds(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Estimate,
    Simulate,
    Bounds,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Flags {
    /// Input CSV (`id,y0,y1,d,x...` for panel, `id,y,post,d,x...` for rc).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "panel")]
    pub design: String,
    /// Comma-separated estimator tags; defaults to every estimator of the design.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Vec<String>,
    #[arg(long, default_value = "mle")]
    pub ps_method: String,
    /// Drop comparison units whose fitted propensity exceeds this value.
    #[arg(long)]
    pub trim_threshold: Option<f64>,
    #[arg(long, default_value_t = 999)]
    pub bootstrap_draws: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub dgp: u8,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, env = "DRDID_THREADS")]
    pub threads: Option<usize>,
    /// Monte Carlo draws for efficiency bounds.
    #[arg(long, default_value_t = crate::efficiency::DEFAULT_DRAWS)]
    pub draws: usize,
}

/// Validated run configuration, echoed in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub input: Option<PathBuf>,
    pub design: Design,
    pub estimators: Vec<EstimatorTag>,
    pub ps_method: PsMethod,
    pub trim_threshold: Option<f64>,
    pub bootstrap_draws: usize,
    pub level: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub format: Format,
    pub dgp: u8,
    pub n: usize,
    pub reps: usize,
    pub lambda: f64,
    /// Scheduling only; results do not depend on it.
    #[serde(skip)]
    pub threads: Option<usize>,
    pub draws: usize,
}

impl RunConfig {
    pub fn from_flags(command: CommandKind, f: &Flags) -> Result<Self> {
        let design: Design = f.design.parse()?;
        let catalog: &[EstimatorTag] = match design {
            Design::Panel => &EstimatorTag::PANEL,
            Design::Rc => &EstimatorTag::RC,
        };
        let estimators = if f.estimators.is_empty() {
            catalog.to_vec()
        } else {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for s in &f.estimators {
                let tag: EstimatorTag = s.trim().parse()?;
                if !catalog.contains(&tag) {
                    return Err(Error::Usage(format!("estimator '{tag}' is not available for the {design} design")));
                }
                if seen.insert(tag) {
                    out.push(tag);
                }
            }
            out
        };
        if command == CommandKind::Estimate && f.input.is_none() {
            return Err(Error::Usage("estimate requires --input".into()));
        }
        if f.threads == Some(0) {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        let cfg = Self {
            command,
            input: f.input.clone(),
            design,
            estimators,
            ps_method: f.ps_method.parse()?,
            trim_threshold: f.trim_threshold,
            bootstrap_draws: f.bootstrap_draws,
            level: f.level,
            seed: f.seed,
            output: f.output.clone(),
            format: f.format,
            dgp: f.dgp,
            n: f.n,
            reps: f.reps,
            lambda: f.lambda,
            threads: f.threads,
            draws: f.draws,
        };
        cfg.inference().validate()?;
        if command != CommandKind::Estimate {
            cfg.dgp_spec()?;
        }
        Ok(cfg)
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            level: self.level,
            bootstrap_draws: self.bootstrap_draws,
            seed: self.seed,
            trim: self.trim_threshold,
            ps_method: self.ps_method,
        }
    }

    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        DgpSpec::new(self.dgp, self.design, self.n, self.lambda, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
}

/// One estimator's result, or the reason it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub method: EstimatorTag,
    pub att: Option<f64>,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub level: f64,
    pub diagnostics: Option<Diagnostics>,
    pub error: Option<String>,
}

impl EstimateRecord {
    fn from_result(tag: EstimatorTag, level: f64, res: &Result<AttEstimate>) -> Self {
        match res {
            Ok(e) => Self {
                method: tag,
                att: Some(e.att),
                se: e.se,
                ci_lower: e.ci.map(|c| c.0),
                ci_upper: e.ci.map(|c| c.1),
                level: e.level,
                diagnostics: Some(e.diagnostics.clone()),
                error: None,
            },
            Err(err) => Self {
                method: tag,
                att: None,
                se: None,
                ci_lower: None,
                ci_upper: None,
                level,
                diagnostics: None,
                error: Some(describe_error(tag, err)),
            },
        }
    }
}

fn describe_error(tag: EstimatorTag, err: &Error) -> String {
    match err {
        Error::NotPositiveDefinite { pivot, .. } if tag != EstimatorTag::Twfe && *pivot > 0 => {
            format!("{err} (column x{pivot})")
        }
        _ => err.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub treated: usize,
    pub controls: usize,
    pub covariates: usize,
    /// Post-period share; repeated cross-sections only.
    pub lambda_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub dgp: u8,
    pub lambda: f64,
    pub panel: BoundEstimate,
    pub rc: BoundEstimate,
    pub gap: BoundEstimate,
    pub optimal_lambda: BoundEstimate,
    pub dr1_dr2_gap: BoundEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<EstimateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<McReport>,
    /// Efficiency bound of the simulated design and sampling scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency_bound: Option<BoundEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsReport>,
}

impl ReportDocument {
    fn new(config: &RunConfig) -> Self {
        Self {
            provenance: Provenance {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: config.clone(),
            },
            data: None,
            estimates: Vec::new(),
            simulation: None,
            efficiency_bound: None,
            bounds: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Tabular view of the report.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let io = |e: csv::Error| Error::Io(e.to_string());
        if let Some(sim) = &self.simulation {
            w.write_record([
                "estimator", "avg_bias", "med_bias", "rmse", "mean_asy_var", "coverage", "ci_length", "reps", "failures", "mc_se_of_bias",
            ])
            .map_err(io)?;
            for s in &sim.summaries {
                w.write_record([
                    s.estimator.to_string(),
                    s.avg_bias.to_string(),
                    s.med_bias.to_string(),
                    s.rmse.to_string(),
                    cell(s.mean_asy_var),
                    cell(s.coverage),
                    cell(s.ci_length),
                    s.reps.to_string(),
                    s.failures.to_string(),
                    s.mc_se_of_bias.to_string(),
                ])
                .map_err(io)?;
            }
        } else if let Some(b) = &self.bounds {
            w.write_record(["quantity", "value", "mc_se", "draws"]).map_err(io)?;
            for (name, v) in [
                ("panel", b.panel),
                ("rc", b.rc),
                ("gap", b.gap),
                ("optimal_lambda", b.optimal_lambda),
                ("dr1_dr2_gap", b.dr1_dr2_gap),
            ] {
                w.write_record([name.to_string(), v.value.to_string(), v.mc_se.to_string(), v.draws.to_string()]).map_err(io)?;
            }
        } else {
            w.write_record(["method", "att", "se", "ci_lower", "ci_upper", "level", "error"]).map_err(io)?;
            for r in &self.estimates {
                w.write_record([
                    r.method.to_string(),
                    cell(r.att),
                    cell(r.se),
                    cell(r.ci_lower),
                    cell(r.ci_upper),
                    r.level.to_string(),
                    r.error.clone().unwrap_or_default(),
                ])
                .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => self.to_json().map(|s| s + "\n"),
            Format::Csv => self.to_csv(),
        }
    }
}

struct Table {
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, column: String::new(), message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, column: String::new(), message: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no data rows", path.display())));
    }
    Ok(Table { headers, rows })
}

impl Table {
    fn index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()))
    }

    fn covariates(&self) -> Vec<usize> {
        let mut cols: Vec<(usize, usize)> = self
            .headers
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, i)))
            .collect();
        cols.sort();
        cols.into_iter().map(|(_, i)| i).collect()
    }

    fn number(&self, row: usize, col: usize) -> Result<f64> {
        let (line, rec) = &self.rows[row];
        let raw = rec.get(col).unwrap_or("");
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse { line: *line, column: self.headers[col].clone(), message: format!("'{raw}' is not a finite number") }),
        }
    }

    fn binary(&self, row: usize, col: usize) -> Result<f64> {
        let v = self.number(row, col)?;
        if v != 0.0 && v != 1.0 {
            return Err(Error::Parse { line: self.rows[row].0, column: self.headers[col].clone(), message: format!("{v} is not 0 or 1") });
        }
        Ok(v)
    }

    fn check_ids(&self) -> Result<()> {
        let id = self.index("id")?;
        let mut seen = HashSet::new();
        for (line, rec) in &self.rows {
            let v = rec.get(id).unwrap_or("").to_string();
            if !seen.insert(v.clone()) {
                return Err(Error::DuplicateId { id: v, line: *line });
            }
        }
        Ok(())
    }

    fn column(&self, col: usize, binary: bool) -> Result<Vec<f64>> {
        (0..self.rows.len()).map(|r| if binary { self.binary(r, col) } else { self.number(r, col) }).collect()
    }

    fn design(&self) -> Result<Matrix> {
        let cols = self.covariates();
        let mut cov = Vec::with_capacity(self.rows.len() * cols.len());
        for r in 0..self.rows.len() {
            for &c in &cols {
                cov.push(self.number(r, c)?);
            }
        }
        Matrix::with_intercept(self.rows.len(), cols.len(), &cov)
    }
}

/// Reads `id,y0,y1,d,x1..xk`; a constant column is prepended to the covariates.
pub fn load_panel_csv(path: &Path) -> Result<PanelDataset> {
    let t = read_table(path)?;
    let (y0, y1, d) = (t.index("y0")?, t.index("y1")?, t.index("d")?);
    t.check_ids()?;
    PanelDataset::new(t.column(y0, false)?, t.column(y1, false)?, t.column(d, true)?, t.design()?)
}

/// Reads `id,y,post,d,x1..xk`.
pub fn load_rc_csv(path: &Path) -> Result<RcDataset> {
    let t = read_table(path)?;
    let (y, post, d) = (t.index("y")?, t.index("post")?, t.index("d")?);
    t.check_ids()?;
    RcDataset::new(t.column(y, false)?, t.column(post, true)?, t.column(d, true)?, t.design()?)
}

fn summarize(n: usize, d: &[f64], x: &Matrix, lambda_hat: Option<f64>) -> DataSummary {
    let treated = d.iter().filter(|v| **v == 1.0).count();
    DataSummary { n, treated, controls: n - treated, covariates: x.cols() - 1, lambda_hat }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(k) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {k} threads: {e}")))?
            .install(f)),
        None => Ok(f()),
    }
}

/// Runs the selected estimators. Fails only if every estimator fails.
pub fn run_estimate(config: &RunConfig) -> Result<ReportDocument> {
    let path = config.input.as_deref().ok_or_else(|| Error::Usage("estimate requires --input".into()))?;
    let cfg = config.inference();
    let (summary, results) = match config.design {
        Design::Panel => {
            let data = load_panel_csv(path)?;
            let s = summarize(data.n(), data.d(), data.x(), None);
            (s, in_pool(config.threads, || estimate_panel(&data, &config.estimators, &cfg))?)
        }
        Design::Rc => {
            let data = load_rc_csv(path)?;
            let s = summarize(data.n(), data.d(), data.x(), Some(data.lambda_hat()));
            (s, in_pool(config.threads, || estimate_rc(&data, &config.estimators, &cfg))?)
        }
    };
    if let Some(Err(first)) = results.first().map(|r| &r.1) {
        if results.iter().all(|r| r.1.is_err()) {
            return Err(first.clone());
        }
    }
    let mut doc = ReportDocument::new(config);
    doc.data = Some(summary);
    doc.estimates = results.iter().map(|(tag, res)| EstimateRecord::from_result(*tag, config.level, res)).collect();
    Ok(doc)
}

/// Monte Carlo experiment plus the efficiency bound of the design.
pub fn run_simulate(config: &RunConfig) -> Result<ReportDocument> {
    let spec = config.dgp_spec()?;
    let report = run_mc(&spec, &config.estimators, config.reps, &config.inference(), config.threads)?;
    let oracle = spec.oracle();
    let bound = in_pool(config.threads, || match spec.design {
        Design::Panel => eff_bound_panel(&oracle, config.draws, config.seed),
        Design::Rc => eff_bound_rc(&oracle, spec.lambda, config.draws, config.seed),
    })??;
    let mut doc = ReportDocument::new(config);
    doc.simulation = Some(report);
    doc.efficiency_bound = Some(bound);
    Ok(doc)
}

/// Panel and repeated cross-section bounds with the derived comparisons.
pub fn run_bounds(config: &RunConfig) -> Result<ReportDocument> {
    let spec = config.dgp_spec()?;
    let o = spec.oracle();
    let (draws, seed, lambda) = (config.draws, config.seed, spec.lambda);
    let bounds = in_pool(config.threads, || -> Result<BoundsReport> {
        Ok(BoundsReport {
            dgp: spec.dgp_id,
            lambda,
            panel: eff_bound_panel(&o, draws, seed)?,
            rc: eff_bound_rc(&o, lambda, draws, seed)?,
            gap: bound_gap_panel_rc(&o, lambda, draws, seed)?,
            optimal_lambda: optimal_lambda(&o, draws, seed)?,
            dr1_dr2_gap: dr1_dr2_gap_rc(&o, lambda, draws, seed)?,
        })
    })??;
    let mut doc = ReportDocument::new(config);
    doc.bounds = Some(bounds);
    Ok(doc)
}

pub fn execute(cli: &Cli) -> Result<(RunConfig, ReportDocument)> {
    let (kind, flags) = match &cli.command {
        Command::Estimate(f) => (CommandKind::Estimate, f),
        Command::Simulate(f) => (CommandKind::Simulate, f),
        Command::Bounds(f) => (CommandKind::Bounds, f),
    };
    let config = RunConfig::from_flags(kind, flags)?;
    let doc = match kind {
        CommandKind::Estimate => run_estimate(&config)?,
        CommandKind::Simulate => run_simulate(&config)?,
        CommandKind::Bounds => run_bounds(&config)?,
    };
    Ok((config, doc))
}

/// Parses arguments, runs the command and writes the report; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = execute(&cli).and_then(|(config, doc)| {
        let text = doc.render(config.format)?;
        match &config.output {
            Some(p) => std::fs::write(p, text)?,
            None => std::io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
