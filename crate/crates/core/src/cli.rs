//! Command-line front end.
//!
//! Every command writes into `<out>/<command>-<seed>/` and leaves a
//! `manifest.json` there recording the fully resolved settings, so
//! `ordqr replay <manifest>` reproduces the other files byte for byte.
//!
//! Exit codes: 0 success, 2 user or configuration error, 3 numerical
//! failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, default_mpsrf_columns, regular_checkpoints, DiagError, SummaryTable};
use crate::gibbs::{run_chain, GibbsError, PosteriorDraws, SamplerConfig};
use crate::model::{ingest_csv, write_csv_to, ColumnSchema, DataError, ModelSpec, Priors};
use crate::sim::{self, ErrorLaw, GibbsEstimator, Scenario, ScenarioConfig, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const DEFAULT_THETA: f64 = 0.5;
const DEFAULT_LEVEL: f64 = 0.95;
const DEFAULT_MPSRF_EVERY: u64 = 500;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::User(_) => EXIT_USER,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::User(e.to_string())
    }
}

impl From<GibbsError> for CliError {
    fn from(e: GibbsError) -> Self {
        match e {
            GibbsError::Config(c) => Self::User(c.to_string()),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::Singular => Self::Numerical(e.to_string()),
            other => Self::User(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::AllFailed(_) => Self::Numerical(e.to_string()),
            other => Self::User(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::User(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ordqr", version, about = "Bayesian quantile regression for ordinal longitudinal data")]
pub struct Cli {
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV dataset at one or more quantile levels.
    Fit(Settings),
    /// Generate a simulated dataset.
    Simulate(Settings),
    /// Run a replication study on simulated data.
    Replicate(Settings),
    /// Summaries, MPSRF and DIC from stored draws.
    Diagnose(Settings),
    /// Re-run a command from its manifest.
    Replay {
        manifest: PathBuf,
        /// Output root for the replayed run.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Options shared by all commands. A `--config` TOML file may set any of
/// them under the same name in snake_case; flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Flat TOML file with default values for these options.
    #[arg(long)]
    #[serde(skip_serializing)]
    pub config: Option<PathBuf>,
    /// Output root directory [default: runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; generated and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Quantile level (repeatable) [default: 0.5].
    #[arg(long)]
    pub theta: Vec<f64>,
    /// Total sweeps per chain, burn-in included [default: 20000; 10000 for replicate]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Sweeps discarded at the start of each chain [default: 2000]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Keep every k-th sweep after burn-in [default: 1]
    #[arg(long)]
    pub thin: Option<usize>,
    /// Number of chains; with two or more, starts are over-dispersed.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Store random-intercept draws.
    #[arg(long)]
    pub retain_alpha: bool,
    /// Compute the deviance information criterion (implies --retain-alpha).
    #[arg(long)]
    pub dic: bool,
    /// Require and report MPSRF (needs two or more chains).
    #[arg(long)]
    pub mpsrf: bool,
    /// Spacing of MPSRF checkpoints in iterations [default: 500].
    #[arg(long)]
    pub mpsrf_every: Option<u64>,
    /// Include lambda_sq and phi in the MPSRF.
    #[arg(long)]
    pub mpsrf_include_scales: bool,
    /// Credible-interval level [default: 0.95].
    #[arg(long)]
    pub level: Option<f64>,

    /// Shape of the Gamma prior on lambda_sq [default: 0.1]
    #[arg(long)]
    pub a1: Option<f64>,
    /// Rate of the Gamma prior on lambda_sq [default: 0.1]
    #[arg(long)]
    pub a2: Option<f64>,
    /// Shape of the inverse-Gamma prior on phi [default: 0.1]
    #[arg(long)]
    pub b1: Option<f64>,
    /// Scale of the inverse-Gamma prior on phi [default: 0.1]
    #[arg(long)]
    pub b2: Option<f64>,
    /// Lower end of the cut-point prior range [default: -10; -3 for replicate]
    #[arg(long, allow_hyphen_values = true)]
    pub delta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_max: Option<f64>,

    /// Input dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Subject column [default: subject]
    #[arg(long)]
    pub subject_col: Option<String>,
    /// Category column [default: y]
    #[arg(long)]
    pub category_col: Option<String>,
    /// Time column; pass an empty string to use row order.
    #[arg(long)]
    pub time_col: Option<String>,
    /// Covariate columns (comma separated) [default: all other columns].
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Declared category labels in increasing order (comma separated).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub categories: Vec<i64>,

    /// Draws CSV files for `diagnose`; each file holds one or more chains.
    #[arg(long)]
    pub draws: Vec<PathBuf>,

    /// sim1 or sim2.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Number of simulated subjects [default: 40]
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Observations per simulated subject [default: 10]
    #[arg(long)]
    pub n_per_subject: Option<usize>,
    /// Replications for `replicate` [default: 20]
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub random_effect_sd: Option<f64>,
    /// logistic or normal.
    #[arg(long)]
    pub error: Option<String>,
    /// Full-scale replication study (200 replications, 20000 iterations).
    #[arg(long)]
    pub full_scale: bool,
}

macro_rules! prefer {
    ($flags:ident, $file:ident; $($opt:ident),*; $($flag:ident),*; $($list:ident),*) => {
        Settings {
            config: None,
            $($opt: $flags.$opt.or($file.$opt),)*
            $($flag: $flags.$flag || $file.$flag,)*
            $($list: if $flags.$list.is_empty() { $file.$list } else { $flags.$list },)*
        }
    };
}

impl Settings {
    /// Merge with the `--config` file, flags winning.
    pub fn resolve(self) -> Result<Settings, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(Settings { config: None, ..self });
        };
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let file: Settings =
            toml::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let flags = self;
        Ok(prefer!(flags, file;
            out, seed, iterations, burn_in, thin, chains, mpsrf_every, level,
            a1, a2, b1, b2, delta_min, delta_max,
            data, subject_col, category_col, time_col,
            scenario, subjects, n_per_subject, replications, random_effect_sd, error;
            retain_alpha, dic, mpsrf, mpsrf_include_scales, full_scale;
            theta, covariates, categories, draws))
    }

    fn thetas(&self) -> Result<Vec<f64>, CliError> {
        let t = if self.theta.is_empty() { vec![DEFAULT_THETA] } else { self.theta.clone() };
        if let Some(bad) = t.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(CliError::User(format!("quantile level must lie in (0, 1), got {bad}")));
        }
        Ok(t)
    }

    fn priors(&self, base: Priors) -> Result<Priors, CliError> {
        let p = Priors {
            a1: self.a1.unwrap_or(base.a1),
            a2: self.a2.unwrap_or(base.a2),
            b1: self.b1.unwrap_or(base.b1),
            b2: self.b2.unwrap_or(base.b2),
            delta_min: self.delta_min.unwrap_or(base.delta_min),
            delta_max: self.delta_max.unwrap_or(base.delta_max),
        };
        p.validate().map_err(|e| CliError::User(e.to_string()))?;
        Ok(p)
    }

    fn sampler(&self, seed: u64, base: SamplerConfig) -> Result<SamplerConfig, CliError> {
        let chains = self.chains.unwrap_or(base.num_chains);
        let cfg = SamplerConfig {
            iterations: self.iterations.unwrap_or(base.iterations),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            thin: self.thin.unwrap_or(base.thin),
            num_chains: chains,
            seed,
            overdispersed_starts: chains >= 2,
            retain_alpha: self.retain_alpha || self.dic,
        };
        cfg.validate().map_err(|e| CliError::User(e.to_string()))?;
        Ok(cfg)
    }

    fn schema(&self) -> ColumnSchema {
        let d = ColumnSchema::default();
        ColumnSchema {
            subject: self.subject_col.clone().unwrap_or(d.subject),
            category: self.category_col.clone().unwrap_or(d.category),
            time: match &self.time_col {
                Some(t) if t.is_empty() => None,
                Some(t) => Some(t.clone()),
                None => d.time,
            },
            covariates: self.covariates.clone(),
            categories: (!self.categories.is_empty()).then(|| self.categories.clone()),
        }
    }

    fn level(&self) -> Result<f64, CliError> {
        let l = self.level.unwrap_or(DEFAULT_LEVEL);
        if !(l > 0.0 && l < 1.0) {
            return Err(CliError::User(format!("--level must lie in (0, 1), got {l}")));
        }
        Ok(l)
    }

    fn scenario_config(&self, seed: u64) -> Result<ScenarioConfig, CliError> {
        let scenario: Scenario = self
            .scenario
            .as_deref()
            .ok_or_else(|| CliError::User("--scenario is required (sim1 or sim2)".into()))?
            .parse()
            .map_err(CliError::User)?;
        let mut c = ScenarioConfig::new(scenario);
        c.seed = seed;
        if let Some(v) = self.subjects {
            c.subjects = v;
        }
        if let Some(v) = self.n_per_subject {
            c.n_per_subject = v;
        }
        if self.full_scale {
            c.replications = sim::FULL_REPLICATIONS;
        }
        if let Some(v) = self.replications {
            c.replications = v;
        }
        if let Some(v) = self.random_effect_sd {
            c.random_effect_sd = v;
        }
        if let Some(e) = &self.error {
            c.error = match e.to_ascii_lowercase().as_str() {
                "logistic" => ErrorLaw::Logistic,
                "normal" => ErrorLaw::Normal,
                _ => return Err(CliError::User(format!("unknown error law `{e}` (expected logistic or normal)"))),
            };
        }
        c.validate()?;
        Ok(c)
    }

    /// Turn input paths absolute so a manifest can be replayed elsewhere.
    fn absolutize(&mut self) -> Result<(), CliError> {
        let abs = |p: &PathBuf| fs::canonicalize(p).map_err(|e| io_err(p, e));
        if let Some(d) = &self.data {
            self.data = Some(abs(d)?);
        }
        self.draws = self.draws.iter().map(abs).collect::<Result<_, _>>()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Resolved settings; `out` is omitted since it only locates the run.
    pub settings: Settings,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Files produced by a command, written only after all computation ends.
#[derive(Default)]
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn add(&mut self, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        self.0.push((name.into(), content.into()));
    }
}

fn theta_tag(theta: f64) -> String {
    format!("theta{theta}")
}

fn draws_bytes(draws: &PosteriorDraws) -> Vec<u8> {
    let mut buf = Vec::new();
    draws.write_csv(&mut buf).expect("writing to memory");
    buf
}

fn mpsrf_columns(draws: &PosteriorDraws, include_scales: bool) -> Vec<usize> {
    let mut cols = default_mpsrf_columns(draws);
    if include_scales {
        cols.extend(["lambda_sq", "phi"].iter().filter_map(|n| draws.column_index(n)));
    }
    cols
}

fn add_mpsrf(out: &mut Outputs, draws: &PosteriorDraws, s: &Settings, tag: &str) -> Result<(), CliError> {
    let cols = mpsrf_columns(draws, s.mpsrf_include_scales);
    let checkpoints = regular_checkpoints(draws, s.mpsrf_every.unwrap_or(DEFAULT_MPSRF_EVERY));
    let series = diagnostics::mpsrf(draws, &cols, &checkpoints)?;
    if series.regularized.iter().any(|&r| r) {
        log::warn!("MPSRF: within-chain covariance ridge-regularized at some checkpoints");
    }
    out.add(format!("mpsrf{tag}.csv"), series.to_csv());
    out.add(format!("mpsrf{tag}.dat"), series.to_plot_data());
    out.add(format!("mpsrf{tag}.txt"), series.to_text());
    Ok(())
}

/// Side-by-side mean and SD per quantile level.
fn combined_summary(tables: &[(f64, SummaryTable)]) -> (String, String) {
    let mut csv = String::from("theta,parameter,mean,sd,lower,upper\n");
    for (theta, t) in tables {
        for r in &t.rows {
            let _ = writeln!(csv, "{theta},{},{:?},{:?},{:?},{:?}", r.parameter, r.mean, r.sd, r.lower, r.upper);
        }
    }
    let mut txt = format!("{:<10}", "parameter");
    for (theta, _) in tables {
        let _ = write!(txt, "  {:>21}", format!("theta = {theta}"));
    }
    let _ = write!(txt, "\n{:<10}", "");
    for _ in tables {
        let _ = write!(txt, "  {:>10} {:>10}", "Mean", "SD");
    }
    txt.push('\n');
    for (i, r) in tables[0].1.rows.iter().enumerate() {
        let _ = write!(txt, "{:<10}", r.parameter);
        for (_, t) in tables {
            let _ = write!(txt, "  {:>10.4} {:>10.4}", t.rows[i].mean, t.rows[i].sd);
        }
        txt.push('\n');
    }
    (csv, txt)
}

#[derive(Serialize)]
struct DrawsMeta<'a> {
    theta: f64,
    sampler: &'a SamplerConfig,
    priors: &'a Priors,
    data: Option<&'a Path>,
    num_subjects: usize,
    num_observations: usize,
    num_categories: usize,
    covariates: &'a [String],
    category_labels: &'a [i64],
}

fn cmd_fit(s: &Settings, seed: u64) -> Result<Outputs, CliError> {
    let data = s.data.as_ref().ok_or_else(|| CliError::User("fit needs --data".into()))?;
    let ds = ingest_csv(data, &s.schema())?;
    let priors = s.priors(Priors::default())?;
    let sampler = s.sampler(seed, SamplerConfig::default())?;
    let level = s.level()?;
    if s.mpsrf && sampler.num_chains < 2 {
        return Err(CliError::User("--mpsrf needs at least 2 chains".into()));
    }
    let mut out = Outputs::default();
    let mut tables = Vec::new();
    for theta in s.thetas()? {
        let spec = ModelSpec::new(theta, priors, &ds).map_err(|e| CliError::User(e.to_string()))?;
        log::info!("fitting theta = {theta}");
        let draws = run_chain(&spec, &sampler)?;
        let tag = format!("-{}", theta_tag(theta));
        out.add(format!("draws{tag}.csv"), draws_bytes(&draws));
        let meta = DrawsMeta {
            theta,
            sampler: &sampler,
            priors: &priors,
            data: Some(data),
            num_subjects: ds.num_subjects(),
            num_observations: ds.num_observations(),
            num_categories: ds.num_categories(),
            covariates: ds.covariate_names(),
            category_labels: ds.category_labels(),
        };
        out.add(format!("draws{tag}.csv.meta.json"), serde_json::to_string_pretty(&meta).expect("serializable") + "\n");
        let table = diagnostics::summarize(&draws, level)?;
        out.add(format!("summary{tag}.csv"), table.to_csv());
        out.add(format!("summary{tag}.txt"), table.to_text());
        if sampler.num_chains >= 2 {
            add_mpsrf(&mut out, &draws, s, &tag)?;
        }
        if s.dic {
            let report = diagnostics::dic(&draws, &spec)?;
            out.add(format!("dic{tag}.csv"), report.to_csv());
            out.add(format!("dic{tag}.txt"), report.to_text());
        }
        tables.push((theta, table));
    }
    let (csv, txt) = combined_summary(&tables);
    out.add("summary.csv", csv);
    out.add("summary.txt", txt);
    Ok(out)
}

fn cmd_simulate(s: &Settings, seed: u64) -> Result<Outputs, CliError> {
    let config = s.scenario_config(seed)?;
    let ds = sim::replication_dataset(&config, 0)?;
    let mut csv = Vec::new();
    write_csv_to(&ds, &mut csv)?;
    let mut out = Outputs::default();
    out.add("data.csv", csv);
    out.add("data.csv.meta.json", sim::metadata_json(&config, 0, &ds));
    Ok(out)
}

fn cmd_replicate(s: &Settings, seed: u64) -> Result<Outputs, CliError> {
    let config = s.scenario_config(seed)?;
    let base = if s.full_scale { GibbsEstimator::full_scale() } else { GibbsEstimator::desk() };
    let estimator = GibbsEstimator { sampler: s.sampler(seed, base.sampler)?, priors: s.priors(base.priors)? };
    let thetas = s.thetas()?;
    let run = sim::run_replication_study(&config, &estimator, &thetas)?;
    let mut out = Outputs::default();
    out.add("report.csv", run.report.to_csv());
    let mut txt = run.report.to_text();
    let failures = run.failures_text();
    if !failures.is_empty() {
        txt.push_str("\nfailed replications:\n");
        txt.push_str(&failures);
    }
    out.add("report.txt", txt);
    out.add("replications.csv", run.records_csv());
    Ok(out)
}

fn load_draws(paths: &[PathBuf]) -> Result<PosteriorDraws, CliError> {
    let mut iter = paths.iter();
    let first = iter.next().ok_or_else(|| CliError::User("diagnose needs at least one --draws file".into()))?;
    let mut draws = PosteriorDraws::read_csv_file(first).map_err(|e| CliError::User(format!("{}: {e}", first.display())))?;
    for p in iter {
        let more = PosteriorDraws::read_csv_file(p).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
        draws = draws.merge(more).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
    }
    Ok(draws)
}

fn cmd_diagnose(s: &Settings, _seed: u64) -> Result<Outputs, CliError> {
    let draws = load_draws(&s.draws)?;
    let mut out = Outputs::default();
    let table = diagnostics::summarize(&draws, s.level()?)?;
    out.add("summary.csv", table.to_csv());
    out.add("summary.txt", table.to_text());
    if s.mpsrf && draws.num_chains() < 2 {
        return Err(CliError::User(format!("--mpsrf needs at least 2 chains, found {}", draws.num_chains())));
    }
    if draws.num_chains() >= 2 {
        add_mpsrf(&mut out, &draws, s, "")?;
    }
    if s.dic || s.data.is_some() {
        let data = s.data.as_ref().ok_or_else(|| CliError::User("--dic needs --data".into()))?;
        let ds = ingest_csv(data, &s.schema())?;
        let thetas = s.thetas()?;
        if thetas.len() != 1 {
            return Err(CliError::User("DIC from stored draws needs exactly one --theta".into()));
        }
        let spec = ModelSpec::new(thetas[0], s.priors(Priors::default())?, &ds).map_err(|e| CliError::User(e.to_string()))?;
        let report = diagnostics::dic(&draws, &spec)?;
        out.add("dic.csv", report.to_csv());
        out.add("dic.txt", report.to_text());
    }
    Ok(out)
}

/// Execute `command` with already-resolved settings and write its outputs
/// plus the manifest. Returns the run directory.
pub fn execute(command: &str, mut settings: Settings, out_root: Option<&Path>) -> Result<PathBuf, CliError> {
    let started = now();
    let seed = settings.seed.unwrap_or_else(|| rand::rng().random());
    settings.seed = Some(seed);
    settings.absolutize()?;
    let root = out_root.map(Path::to_path_buf).or_else(|| settings.out.clone()).unwrap_or_else(|| PathBuf::from("runs"));
    settings.out = None;
    let outputs = match command {
        "fit" => cmd_fit(&settings, seed)?,
        "simulate" => cmd_simulate(&settings, seed)?,
        "replicate" => cmd_replicate(&settings, seed)?,
        "diagnose" => cmd_diagnose(&settings, seed)?,
        other => return Err(CliError::User(format!("unknown command `{other}`"))),
    };
    let dir = root.join(format!("{command}-{seed}"));
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    for (name, bytes) in &outputs.0 {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        settings,
        outputs: outputs.0.iter().map(|(n, _)| n.clone()).collect(),
        started_unix: started,
        finished_unix: now(),
    };
    let p = dir.join("manifest.json");
    fs::write(&p, serde_json::to_string_pretty(&manifest).expect("serializable") + "\n").map_err(|e| io_err(&p, e))?;
    Ok(dir)
}

pub fn replay(manifest: &Path, out_root: &Path) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(manifest).map_err(|e| io_err(manifest, e))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", manifest.display())))?;
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!("manifest written by version {}, replaying with {}", m.version, env!("CARGO_PKG_VERSION"));
    }
    execute(&m.command, m.settings, Some(out_root))
}

/// Parse-free entry point used by `main` and the tests.
pub fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let (name, settings) = match cli.command {
        Command::Replay { manifest, out } => return replay(&manifest, &out),
        Command::Fit(s) => ("fit", s),
        Command::Simulate(s) => ("simulate", s),
        Command::Replicate(s) => ("replicate", s),
        Command::Diagnose(s) => ("diagnose", s),
    };
    let settings = settings.resolve()?;
    execute(name, settings, None)
}
