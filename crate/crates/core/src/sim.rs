//! Synthetic longitudinal ordinal data and replication studies.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{summarize, DiagError, ReplicationReport};
use crate::distributions::StandardDist;
use crate::gibbs::{run_chain, SamplerConfig};
use crate::model::{self, DataError, ModelSpec, Observation, OrdinalDataset, Priors, SubjectBlock};
use crate::rng::{derive_seed, substream, StreamRng, DATA, REPLICATION};

pub const TRUE_BETA: [f64; 3] = [-5.0, -10.0, 15.0];
pub const TRUE_DELTA: [f64; 4] = [-0.8416, -0.2533, 0.2533, 0.8416];
/// Covariates are drawn from `U[-COVARIATE_HALF_WIDTH, COVARIATE_HALF_WIDTH]`.
pub const COVARIATE_HALF_WIDTH: f64 = 0.1;

pub const DESK_REPLICATIONS: usize = 20;
pub const DESK_ITERATIONS: usize = 10_000;
pub const FULL_REPLICATIONS: usize = 200;
pub const FULL_ITERATIONS: usize = 20_000;
pub const BURN_IN: usize = 2_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diag(#[from] DiagError),
    #[error("all {0} replications failed")]
    AllFailed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Independent observations.
    Sim1,
    /// A normal random intercept per subject.
    Sim2,
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sim1" => Ok(Self::Sim1),
            "sim2" => Ok(Self::Sim2),
            _ => Err(format!("unknown scenario `{s}` (expected sim1 or sim2)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorLaw {
    Logistic,
    Normal,
}

impl ErrorLaw {
    fn dist(self) -> StandardDist {
        match self {
            Self::Logistic => StandardDist::Logistic { location: 0.0, scale: 1.0 },
            Self::Normal => StandardDist::Normal { mean: 0.0, variance: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub subjects: usize,
    pub n_per_subject: usize,
    pub true_beta: Vec<f64>,
    pub true_delta: Vec<f64>,
    pub error: ErrorLaw,
    pub random_effect_sd: f64,
    pub replications: usize,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            subjects: 40,
            n_per_subject: 10,
            true_beta: TRUE_BETA.to_vec(),
            true_delta: TRUE_DELTA.to_vec(),
            error: ErrorLaw::Logistic,
            random_effect_sd: match scenario {
                Scenario::Sim1 => 0.0,
                Scenario::Sim2 => 1.0,
            },
            replications: DESK_REPLICATIONS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.subjects == 0 {
            return bad("need at least one subject".into());
        }
        if self.n_per_subject == 0 {
            return bad("n_per_subject must be positive".into());
        }
        if self.replications == 0 {
            return bad("need at least one replication".into());
        }
        if self.true_beta.is_empty() || self.true_beta.iter().any(|b| !b.is_finite()) {
            return bad("true_beta must be non-empty and finite".into());
        }
        if self.true_delta.is_empty()
            || self.true_delta.iter().any(|d| !d.is_finite())
            || self.true_delta.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("true_delta must be finite and strictly increasing".into());
        }
        if !(self.random_effect_sd >= 0.0 && self.random_effect_sd.is_finite()) {
            return bad(format!("random_effect_sd must be non-negative, got {}", self.random_effect_sd));
        }
        if self.scenario == Scenario::Sim1 && self.random_effect_sd != 0.0 {
            return bad("sim1 has no random effect; random_effect_sd must be 0".into());
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        self.true_delta.len() + 1
    }

    /// `beta_1..beta_p, delta_1..delta_{C-1}`.
    pub fn parameter_names(&self) -> Vec<String> {
        (1..=self.true_beta.len())
            .map(|k| format!("beta_{k}"))
            .chain((1..=self.true_delta.len()).map(|k| format!("delta_{k}")))
            .collect()
    }

    pub fn truth(&self) -> Vec<f64> {
        self.true_beta.iter().chain(&self.true_delta).copied().collect()
    }
}

/// Category of liability `l`: the `c` with `cut[c-2] < l <= cut[c-1]`,
/// where `cut` holds the interior cut-points.
pub fn liability_to_category(l: f64, cut: &[f64]) -> usize {
    1 + cut.partition_point(|&d| d < l)
}

/// Prior support used when fitting simulated data.
pub fn simulation_priors() -> Priors {
    Priors { delta_min: -3.0, delta_max: 3.0, ..Priors::default() }
}

/// A simulated dataset with the latent quantities that produced it.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub dataset: OrdinalDataset,
    /// Liability of every observation, in dataset row order.
    pub liabilities: Vec<f64>,
    /// Random intercept of every subject.
    pub random_effects: Vec<f64>,
}

/// Simulate a dataset. The random intercepts come from their own stream,
/// keyed by the first value taken from `rng`, so covariates and errors do
/// not depend on whether intercepts are present.
pub fn generate_full<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<SimulatedData, SimError> {
    config.validate()?;
    let alpha_seed: u64 = rng.random();
    let mut alpha_rng = StreamRng::seed_from_u64(alpha_seed);
    let z = Normal::new(0.0, 1.0).expect("valid");
    let ux = Uniform::new_inclusive(-COVARIATE_HALF_WIDTH, COVARIATE_HALF_WIDTH).expect("valid");
    let err = config.error.dist();
    let p = config.true_beta.len();
    let mut liabilities = Vec::with_capacity(config.subjects * config.n_per_subject);
    let mut random_effects = Vec::with_capacity(config.subjects);
    let mut subjects = Vec::with_capacity(config.subjects);
    for i in 0..config.subjects {
        let alpha = config.random_effect_sd * z.sample(&mut alpha_rng);
        random_effects.push(alpha);
        let observations = (0..config.n_per_subject)
            .map(|j| {
                let x: Vec<f64> = (0..p).map(|_| ux.sample(rng)).collect();
                let eps = err.sample_unchecked(rng);
                let l = alpha + x.iter().zip(&config.true_beta).map(|(a, b)| a * b).sum::<f64>() + eps;
                liabilities.push(l);
                Observation { y: liability_to_category(l, &config.true_delta), x, time_index: j as i64 + 1 }
            })
            .collect();
        subjects.push(SubjectBlock { subject_id: (i + 1).to_string(), observations });
    }
    let dataset = OrdinalDataset::new(subjects, config.num_categories(), p)?;
    Ok(SimulatedData { dataset, liabilities, random_effects })
}

pub fn generate<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<OrdinalDataset, SimError> {
    generate_full(config, rng).map(|s| s.dataset)
}

pub fn generate_sim1<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<OrdinalDataset, SimError> {
    if config.scenario != Scenario::Sim1 {
        return Err(SimError::Config("expected a sim1 scenario".into()));
    }
    generate(config, rng)
}

pub fn generate_sim2<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<OrdinalDataset, SimError> {
    if config.scenario != Scenario::Sim2 {
        return Err(SimError::Config("expected a sim2 scenario".into()));
    }
    generate(config, rng)
}

/// Dataset of replication `r` (replication 0 is the one `simulate` writes).
pub fn replication_dataset(config: &ScenarioConfig, r: usize) -> Result<OrdinalDataset, SimError> {
    generate(config, &mut substream(config.seed, &[REPLICATION, r as u64, DATA]))
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetMetadata<'a> {
    pub scenario: &'a ScenarioConfig,
    pub replication: usize,
    pub num_rows: usize,
    pub covariate_law: String,
    pub error_law: ErrorLaw,
    pub category_counts: Vec<usize>,
}

/// JSON sidecar describing how a dataset was generated.
pub fn metadata_json(config: &ScenarioConfig, replication: usize, ds: &OrdinalDataset) -> String {
    let mut counts = vec![0; ds.num_categories()];
    for &y in &ds.design().y {
        counts[y - 1] += 1;
    }
    let meta = DatasetMetadata {
        scenario: config,
        replication,
        num_rows: ds.num_observations(),
        covariate_law: format!("x1..x{} independent U[-{w}, {w}]", config.true_beta.len(), w = COVARIATE_HALF_WIDTH),
        error_law: config.error,
        category_counts: counts,
    };
    serde_json::to_string_pretty(&meta).expect("serializable") + "\n"
}

/// Write the dataset CSV and a `<path>.meta.json` sidecar.
pub fn write_dataset(config: &ScenarioConfig, replication: usize, ds: &OrdinalDataset, path: &Path) -> Result<(), SimError> {
    model::write_csv(ds, path)?;
    std::fs::write(sidecar_path(path), metadata_json(config, replication, ds)).map_err(|e| SimError::Data(DataError::Io(e)))
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    s.into()
}

/// Point estimator used by the replication study. Returns estimates in
/// [`ScenarioConfig::parameter_names`] order.
pub trait Estimator: Sync {
    fn estimate(&self, dataset: &OrdinalDataset, theta: f64, seed: u64) -> Result<Vec<f64>, String>;
}

/// Posterior means from the Gibbs sampler.
#[derive(Debug, Clone, Copy)]
pub struct GibbsEstimator {
    pub sampler: SamplerConfig,
    pub priors: Priors,
}

impl GibbsEstimator {
    pub fn desk() -> Self {
        Self {
            sampler: SamplerConfig { iterations: DESK_ITERATIONS, burn_in: BURN_IN, ..SamplerConfig::default() },
            priors: simulation_priors(),
        }
    }

    pub fn full_scale() -> Self {
        Self {
            sampler: SamplerConfig { iterations: FULL_ITERATIONS, burn_in: BURN_IN, ..SamplerConfig::default() },
            priors: simulation_priors(),
        }
    }
}

impl Estimator for GibbsEstimator {
    fn estimate(&self, dataset: &OrdinalDataset, theta: f64, seed: u64) -> Result<Vec<f64>, String> {
        let spec = ModelSpec::new(theta, self.priors, dataset).map_err(|e| e.to_string())?;
        let cfg = SamplerConfig { seed, retain_alpha: false, ..self.sampler };
        let draws = run_chain(&spec, &cfg).map_err(|e| e.to_string())?;
        let table = summarize(&draws, 0.95).map_err(|e| e.to_string())?;
        Ok(table
            .rows
            .iter()
            .filter(|r| r.parameter.starts_with("beta_") || r.parameter.starts_with("delta_"))
            .map(|r| r.mean)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub replication: usize,
    /// Estimates per quantile level, or the failure message.
    pub outcome: Result<Vec<Vec<f64>>, String>,
}

#[derive(Debug, Clone)]
pub struct ReplicationRun {
    pub scenario: ScenarioConfig,
    pub thetas: Vec<f64>,
    pub records: Vec<ReplicationRecord>,
    pub report: ReplicationReport,
}

impl ReplicationRun {
    pub fn failures(&self) -> impl Iterator<Item = &ReplicationRecord> {
        self.records.iter().filter(|r| r.outcome.is_err())
    }

    /// One row per replication and quantile level.
    pub fn records_csv(&self) -> String {
        let mut s = format!("replication,theta,status,{}\n", self.scenario.parameter_names().join(","));
        let width = self.scenario.truth().len();
        for rec in &self.records {
            for (t, theta) in self.thetas.iter().enumerate() {
                match &rec.outcome {
                    Ok(est) => {
                        let vals: Vec<String> = est[t].iter().map(|v| format!("{v:?}")).collect();
                        let _ = writeln!(s, "{},{theta},ok,{}", rec.replication + 1, vals.join(","));
                    }
                    Err(_) => {
                        let _ = writeln!(s, "{},{theta},failed,{}", rec.replication + 1, vec!["NA"; width].join(","));
                    }
                }
            }
        }
        s
    }

    pub fn failures_text(&self) -> String {
        let mut s = String::new();
        for rec in self.failures() {
            if let Err(e) = &rec.outcome {
                let _ = writeln!(s, "replication {}: {e}", rec.replication + 1);
            }
        }
        s
    }
}

/// Generate `config.replications` datasets, fit each at every `theta`, and
/// aggregate relative bias and efficiency (relative to `thetas[0]`).
/// Replications run in parallel; failed ones are skipped and counted.
pub fn run_replication_study(config: &ScenarioConfig, estimator: &dyn Estimator, thetas: &[f64]) -> Result<ReplicationRun, SimError> {
    config.validate()?;
    if thetas.is_empty() {
        return Err(SimError::Config("need at least one quantile level".into()));
    }
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(SimError::Config(format!("quantile level must lie in (0, 1), got {t}")));
    }
    let width = config.truth().len();
    let records: Vec<ReplicationRecord> = (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let outcome = replication_dataset(config, r).map_err(|e| e.to_string()).and_then(|ds| {
                thetas
                    .iter()
                    .enumerate()
                    .map(|(t, &theta)| {
                        let seed = derive_seed(config.seed, &[REPLICATION, r as u64, t as u64]);
                        let est = estimator.estimate(&ds, theta, seed)?;
                        if est.len() != width {
                            return Err(format!("estimator returned {} values, expected {width}", est.len()));
                        }
                        Ok(est)
                    })
                    .collect::<Result<Vec<_>, String>>()
            });
            if let Err(e) = &outcome {
                log::warn!("replication {} failed: {e}", r + 1);
            }
            ReplicationRecord { replication: r, outcome }
        })
        .collect();
    let ok: Vec<&Vec<Vec<f64>>> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    if ok.is_empty() {
        return Err(SimError::AllFailed(config.replications));
    }
    let per_theta: Vec<Vec<Vec<f64>>> = (0..thetas.len()).map(|t| ok.iter().map(|e| e[t].clone()).collect()).collect();
    let report =
        ReplicationReport::from_estimates(thetas, &config.parameter_names(), &config.truth(), &per_theta, config.replications)?;
    Ok(ReplicationRun { scenario: config.clone(), thetas: thetas.to_vec(), records, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholding_examples() {
        assert_eq!(liability_to_category(-1.0, &TRUE_DELTA), 1);
        assert_eq!(liability_to_category(0.0, &TRUE_DELTA), 3);
        assert_eq!(liability_to_category(-0.8416, &TRUE_DELTA), 1);
        assert_eq!(liability_to_category(0.8417, &TRUE_DELTA), 5);
        assert_eq!(liability_to_category(0.8416, &TRUE_DELTA), 4);
    }

    #[test]
    fn sim1_rejects_random_effect() {
        let mut c = ScenarioConfig::new(Scenario::Sim1);
        c.random_effect_sd = 1.0;
        assert!(c.validate().is_err());
        c.random_effect_sd = 0.0;
        assert!(c.validate().is_ok());
        c.true_delta = vec![0.0, 0.0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn shapes() {
        let mut c = ScenarioConfig::new(Scenario::Sim1);
        c.n_per_subject = 5;
        let ds = replication_dataset(&c, 0).unwrap();
        assert_eq!(ds.num_observations(), 200);
        assert_eq!(ds.num_categories(), 5);
        assert_eq!(ds.num_covariates(), 3);
        assert!(generate_sim2(&c, &mut substream(0, &[])).is_err());
    }

    struct Truth(Vec<f64>);

    impl Estimator for Truth {
        fn estimate(&self, _: &OrdinalDataset, _: f64, _: u64) -> Result<Vec<f64>, String> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn stub_returning_truth() {
        let mut c = ScenarioConfig::new(Scenario::Sim1);
        c.replications = 2;
        c.subjects = 3;
        let run = run_replication_study(&c, &Truth(c.truth()), &[0.5]).unwrap();
        assert_eq!(run.report.rows.len(), 7);
        for row in &run.report.rows {
            assert_eq!(row.bias, 0.0);
            assert_eq!(row.efficiency, Some(1.0));
        }
    }
}
