//! Data model for the ordinal longitudinal quantile regression: datasets,
//! priors, the model specification and the sampler state.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{sample_trunc_normal_raw, std_normal_cdf, StandardDist};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: invalid category `{value}`: {reason}")]
    BadCategory { row: u64, value: String, reason: String },
    #[error("row {row}: column `{column}` has invalid value `{value}`")]
    BadValue { row: u64, column: String, value: String },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("quantile level must lie in (0, 1), got {0}")]
    Theta(f64),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("cannot place {interior} equally spaced cut-points in ({min}, {max})")]
    CutPointSpacing { interior: usize, min: f64, max: f64 },
    #[error("invalid sampler configuration: {0}")]
    Sampler(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Category in `1..=C`.
    pub y: usize,
    pub x: Vec<f64>,
    pub time_index: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectBlock {
    pub subject_id: String,
    pub observations: Vec<Observation>,
}

/// Flattened, row-major view of the observations used by the sampler.
/// Observations of one subject are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub y: Vec<usize>,
    pub x: Vec<f64>,
    pub subject: Vec<usize>,
    pub subject_start: Vec<usize>,
    pub p: usize,
}

impl Design {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_start.len() - 1
    }

    #[inline]
    pub fn row(&self, obs: usize) -> &[f64] {
        &self.x[obs * self.p..(obs + 1) * self.p]
    }

    pub fn subject_range(&self, i: usize) -> std::ops::Range<usize> {
        self.subject_start[i]..self.subject_start[i + 1]
    }
}

/// Subjects with repeated ordinal outcomes and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinalDataset {
    subjects: Vec<SubjectBlock>,
    num_categories: usize,
    num_covariates: usize,
    /// Original label of category `c` at position `c - 1`.
    category_labels: Vec<i64>,
    covariate_names: Vec<String>,
    design: Design,
}

impl OrdinalDataset {
    /// Build a dataset whose categories are labeled `1..=C`.
    pub fn new(subjects: Vec<SubjectBlock>, num_categories: usize, num_covariates: usize) -> Result<Self, DataError> {
        let labels = (1..=num_categories as i64).collect();
        let names = (1..=num_covariates).map(|k| format!("x{k}")).collect();
        Self::with_labels(subjects, num_categories, num_covariates, labels, names)
    }

    pub fn with_labels(
        subjects: Vec<SubjectBlock>,
        num_categories: usize,
        num_covariates: usize,
        category_labels: Vec<i64>,
        covariate_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if subjects.is_empty() {
            return Err(DataError::Empty);
        }
        if num_categories < 2 {
            return Err(DataError::Invalid(format!("need at least 2 categories, got {num_categories}")));
        }
        if num_covariates < 1 {
            return Err(DataError::Invalid("need at least one covariate".into()));
        }
        if category_labels.len() != num_categories {
            return Err(DataError::Invalid("category label count differs from C".into()));
        }
        if category_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid("category labels must be strictly increasing".into()));
        }
        if covariate_names.len() != num_covariates {
            return Err(DataError::Invalid("covariate name count differs from p".into()));
        }
        let mut design = Design {
            y: Vec::new(),
            x: Vec::new(),
            subject: Vec::new(),
            subject_start: vec![0],
            p: num_covariates,
        };
        for (i, s) in subjects.iter().enumerate() {
            if s.observations.is_empty() {
                return Err(DataError::Invalid(format!("subject `{}` has no observations", s.subject_id)));
            }
            for o in &s.observations {
                if o.y < 1 || o.y > num_categories {
                    return Err(DataError::Invalid(format!(
                        "subject `{}`: category {} outside 1..={num_categories}",
                        s.subject_id, o.y
                    )));
                }
                if o.x.len() != num_covariates {
                    return Err(DataError::Invalid(format!(
                        "subject `{}`: covariate vector of length {} (expected {num_covariates})",
                        s.subject_id,
                        o.x.len()
                    )));
                }
                if o.x.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::Invalid(format!("subject `{}`: non-finite covariate", s.subject_id)));
                }
                design.y.push(o.y);
                design.x.extend_from_slice(&o.x);
                design.subject.push(i);
            }
            design.subject_start.push(design.y.len());
        }
        let ds = Self {
            subjects,
            num_categories,
            num_covariates,
            category_labels,
            covariate_names,
            design,
        };
        let empty = ds.empty_categories();
        if !empty.is_empty() {
            log::warn!("categories without observations: {empty:?}");
        }
        Ok(ds)
    }

    pub fn subjects(&self) -> &[SubjectBlock] {
        &self.subjects
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn num_observations(&self) -> usize {
        self.design.n_obs()
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn category_labels(&self) -> &[i64] {
        &self.category_labels
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    /// Categories (1-based) with no observations.
    pub fn empty_categories(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_categories + 1];
        for &y in &self.design.y {
            seen[y] = true;
        }
        (1..=self.num_categories).filter(|&c| !seen[c]).collect()
    }

    /// Same data with every covariate multiplied by `factor`.
    pub fn scale_covariates(&self, factor: f64) -> Result<Self, DataError> {
        let subjects = self
            .subjects
            .iter()
            .map(|s| SubjectBlock {
                subject_id: s.subject_id.clone(),
                observations: s
                    .observations
                    .iter()
                    .map(|o| Observation { y: o.y, x: o.x.iter().map(|v| v * factor).collect(), time_index: o.time_index })
                    .collect(),
            })
            .collect();
        Self::with_labels(
            subjects,
            self.num_categories,
            self.num_covariates,
            self.category_labels.clone(),
            self.covariate_names.clone(),
        )
    }

    /// Same data with subjects reordered so that new subject `k` is old
    /// subject `order[k]`.
    pub fn permute_subjects(&self, order: &[usize]) -> Result<Self, DataError> {
        let subjects = order.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::with_labels(
            subjects,
            self.num_categories,
            self.num_covariates,
            self.category_labels.clone(),
            self.covariate_names.clone(),
        )
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub subject: String,
    pub category: String,
    /// Optional visit/time column; row order within subject is used otherwise.
    pub time: Option<String>,
    /// Covariate columns; empty means every column not named above.
    pub covariates: Vec<String>,
    /// Declared category labels in increasing order. Inferred from the data
    /// when absent.
    pub categories: Option<Vec<i64>>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            subject: "subject".into(),
            category: "y".into(),
            time: Some("time".into()),
            covariates: Vec::new(),
            categories: None,
        }
    }
}

struct RawRow {
    line: u64,
    subject: String,
    label: i64,
    time: Option<i64>,
    x: Vec<f64>,
}

/// Read a dataset from CSV. Rows are grouped by subject in order of first
/// appearance; within-subject order is preserved. Category labels are mapped
/// order-preservingly onto `1..=C`.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<OrdinalDataset, DataError> {
    let file = File::open(path.as_ref())?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &ColumnSchema) -> Result<OrdinalDataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::Empty);
    }
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let subject_col = find(&schema.subject)?;
    let category_col = find(&schema.category)?;
    // an explicitly configured but absent time column is only an error when
    // it is not the default name
    let time_col = match &schema.time {
        Some(t) => match find(t) {
            Ok(c) => Some(c),
            Err(e) if *t != "time" => return Err(e),
            Err(_) => None,
        },
        None => None,
    };
    let covariate_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != subject_col && *i != category_col && Some(*i) != time_col)
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    if covariate_names.is_empty() {
        return Err(DataError::MissingColumn("<covariates>".into()));
    }
    let cov_cols = covariate_names.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;
    if let Some(decl) = &schema.categories {
        if decl.len() < 2 || decl.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid("declared categories must be at least two increasing labels".into()));
        }
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let subject = field(subject_col).to_string();
        if subject.is_empty() {
            return Err(DataError::BadValue { row: line, column: schema.subject.clone(), value: String::new() });
        }
        let raw_label = field(category_col);
        let label: i64 = raw_label.parse().map_err(|_| DataError::BadCategory {
            row: line,
            value: raw_label.to_string(),
            reason: "not an integer".into(),
        })?;
        if let Some(decl) = &schema.categories {
            if !decl.contains(&label) {
                return Err(DataError::BadCategory {
                    row: line,
                    value: raw_label.to_string(),
                    reason: format!("not among declared categories {decl:?}"),
                });
            }
        }
        let time = match time_col {
            Some(c) => Some(field(c).parse::<i64>().map_err(|_| DataError::BadValue {
                row: line,
                column: headers[c].to_string(),
                value: field(c).to_string(),
            })?),
            None => None,
        };
        let mut x = Vec::with_capacity(cov_cols.len());
        for (k, &c) in cov_cols.iter().enumerate() {
            let v: f64 = field(c).parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| DataError::BadValue {
                row: line,
                column: covariate_names[k].clone(),
                value: field(c).to_string(),
            })?;
            x.push(v);
        }
        rows.push(RawRow { line, subject, label, time, x });
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }

    let labels: Vec<i64> = match &schema.categories {
        Some(decl) => decl.clone(),
        None => rows.iter().map(|r| r.label).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    if labels.len() < 2 {
        return Err(DataError::BadCategory {
            row: rows[0].line,
            value: rows[0].label.to_string(),
            reason: "only one category present; declare the category set".into(),
        });
    }
    let index: HashMap<i64, usize> = labels.iter().enumerate().map(|(k, &l)| (l, k + 1)).collect();

    let mut order: Vec<String> = Vec::new();
    let mut blocks: HashMap<String, Vec<Observation>> = HashMap::new();
    for r in rows {
        let counter = blocks.get(&r.subject).map_or(0, |v| v.len()) as i64;
        let obs = Observation { y: index[&r.label], x: r.x, time_index: r.time.unwrap_or(counter + 1) };
        blocks
            .entry(r.subject.clone())
            .or_insert_with(|| {
                order.push(r.subject.clone());
                Vec::new()
            })
            .push(obs);
    }
    let subjects = order
        .into_iter()
        .map(|id| {
            let observations = blocks.remove(&id).unwrap_or_default();
            SubjectBlock { subject_id: id, observations }
        })
        .collect();
    let p = covariate_names.len();
    OrdinalDataset::with_labels(subjects, labels.len(), p, labels, covariate_names)
}

/// Write a dataset in the ingestion schema: `subject,time,y,<covariates>`.
pub fn write_csv(dataset: &OrdinalDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut file = File::create(path.as_ref())?;
    write_csv_to(dataset, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(dataset: &OrdinalDataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject".to_string(), "time".to_string(), "y".to_string()];
    header.extend(dataset.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for s in dataset.subjects() {
        for o in &s.observations {
            let mut rec = vec![
                s.subject_id.clone(),
                o.time_index.to_string(),
                dataset.category_labels()[o.y - 1].to_string(),
            ];
            rec.extend(o.x.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Hyperparameters: gamma `(a1, a2)` on `lambda^2`, inverse gamma
/// `(b1, b2)` on `phi`, and the uniform support of the interior cut-points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { a1: 0.1, a2: 0.1, b1: 0.1, b2: 0.1, delta_min: -10.0, delta_max: 10.0 }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("a1", self.a1), ("a2", self.a2), ("b1", self.b1), ("b2", self.b2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Prior(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta_min.is_finite() && self.delta_max.is_finite() && self.delta_min < self.delta_max) {
            return Err(ConfigError::Prior(format!(
                "need finite delta_min < delta_max, got ({}, {})",
                self.delta_min, self.delta_max
            )));
        }
        Ok(())
    }
}

/// Quantile level, priors and data of one model fit.
#[derive(Debug, Clone, Copy)]
pub struct ModelSpec<'a> {
    theta: f64,
    xi: f64,
    zeta: f64,
    priors: Priors,
    dataset: &'a OrdinalDataset,
}

impl<'a> ModelSpec<'a> {
    pub fn new(theta: f64, priors: Priors, dataset: &'a OrdinalDataset) -> Result<Self, ConfigError> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(ConfigError::Theta(theta));
        }
        priors.validate()?;
        Ok(Self { theta, xi: 1.0 - 2.0 * theta, zeta: theta * (1.0 - theta), priors, dataset })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `1 - 2 theta`.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `theta (1 - theta)`.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn dataset(&self) -> &'a OrdinalDataset {
        self.dataset
    }

    pub fn design(&self) -> &'a Design {
        self.dataset.design()
    }
}

/// One complete draw of every parameter and latent variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub latent_l: Vec<f64>,
    pub latent_v: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda_sq: f64,
    pub phi: f64,
    /// `C + 1` cut-points with `delta[0] = -inf` and `delta[C] = +inf`.
    pub delta: Vec<f64>,
}

impl ChainState {
    /// `x' beta` for one observation.
    #[inline]
    pub fn linear_predictor(&self, design: &Design, obs: usize) -> f64 {
        design.row(obs).iter().zip(&self.beta).map(|(x, b)| x * b).sum()
    }

    /// Interior cut-points `delta_1..delta_{C-1}`.
    pub fn interior_delta(&self) -> &[f64] {
        &self.delta[1..self.delta.len() - 1]
    }

    /// Check ordering, positivity and thresholding consistency; the message
    /// names the first violated component.
    pub fn check_invariants(&self, spec: &ModelSpec<'_>) -> Result<(), String> {
        let d = spec.design();
        let c = spec.dataset().num_categories();
        if self.beta.len() != d.p || self.s.len() != d.p {
            return Err("beta/s length".into());
        }
        if self.alpha.len() != d.n_subjects() {
            return Err("alpha length".into());
        }
        if self.latent_l.len() != d.n_obs() || self.latent_v.len() != d.n_obs() {
            return Err("latent length".into());
        }
        if self.delta.len() != c + 1 || self.delta[0] != f64::NEG_INFINITY || self.delta[c] != f64::INFINITY {
            return Err("delta endpoints".into());
        }
        if self.delta.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("delta not strictly increasing".into());
        }
        let pr = spec.priors();
        if self.interior_delta().iter().any(|&x| !(x > pr.delta_min && x < pr.delta_max)) {
            return Err("delta outside (delta_min, delta_max)".into());
        }
        if self.latent_v.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err("latent_v not positive".into());
        }
        if self.s.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err("s not positive".into());
        }
        if !(self.lambda_sq > 0.0 && self.lambda_sq.is_finite()) {
            return Err("lambda_sq not positive".into());
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err("phi not positive".into());
        }
        for (k, (&l, &y)) in self.latent_l.iter().zip(&d.y).enumerate() {
            if !(self.delta[y - 1] < l && l <= self.delta[y]) {
                return Err(format!("observation {k}: l = {l} outside category {y} interval"));
            }
        }
        Ok(())
    }
}

/// Probabilities of the `C` categories for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryProbability(pub Vec<f64>);

/// Category probabilities given the mixing variable `v` of the observation:
/// `Phi((delta_c - alpha - x'b - xi v) / sqrt(2 v)) - Phi((delta_{c-1} - ...) / sqrt(2 v))`.
pub fn category_probability(state: &ChainState, spec: &ModelSpec<'_>, obs: usize) -> CategoryProbability {
    let d = spec.design();
    let v = state.latent_v[obs];
    let center = state.alpha[d.subject[obs]] + state.linear_predictor(d, obs) + spec.xi() * v;
    let sd = (2.0 * v).sqrt();
    let cdf = |cut: f64| {
        if cut == f64::INFINITY {
            1.0
        } else if cut == f64::NEG_INFINITY {
            0.0
        } else {
            std_normal_cdf((cut - center) / sd)
        }
    };
    let c = spec.dataset().num_categories();
    CategoryProbability((1..=c).map(|k| (cdf(state.delta[k]) - cdf(state.delta[k - 1])).max(0.0)).collect())
}

/// `C - 1` interior cut-points equally spaced strictly inside `(lo, hi)`.
pub fn equally_spaced_cut_points(c: usize, lo: f64, hi: f64) -> Result<Vec<f64>, ConfigError> {
    let step = (hi - lo) / c as f64;
    let pts: Vec<f64> = (1..c).map(|k| lo + step * k as f64).collect();
    let ok = pts.first().is_none_or(|&f| f > lo)
        && pts.last().is_none_or(|&l| l < hi)
        && pts.windows(2).all(|w| w[0] < w[1]);
    if !ok {
        return Err(ConfigError::CutPointSpacing { interior: c - 1, min: lo, max: hi });
    }
    Ok(pts)
}

/// Neutral deterministic start: `beta = 0`, `alpha = 0`, unit variances,
/// equally spaced cut-points, `v ~ Exp(theta (1 - theta))` and `l` drawn
/// from its truncated normal given the category.
pub fn initialize_state<R: Rng + ?Sized>(spec: &ModelSpec<'_>, rng: &mut R) -> Result<ChainState, ConfigError> {
    initialize_state_from(spec, vec![0.0; spec.design().p], rng)
}

/// Like [`initialize_state`] but with a given starting `beta`.
pub fn initialize_state_from<R: Rng + ?Sized>(
    spec: &ModelSpec<'_>,
    beta: Vec<f64>,
    rng: &mut R,
) -> Result<ChainState, ConfigError> {
    let d = spec.design();
    let c = spec.dataset().num_categories();
    let pr = spec.priors();
    if beta.len() != d.p {
        return Err(ConfigError::Sampler("starting beta has wrong length".into()));
    }
    let interior = equally_spaced_cut_points(c, pr.delta_min, pr.delta_max)?;
    let mut delta = Vec::with_capacity(c + 1);
    delta.push(f64::NEG_INFINITY);
    delta.extend(interior);
    delta.push(f64::INFINITY);

    let exp = StandardDist::Exponential { rate: spec.zeta() };
    let mut state = ChainState {
        beta,
        alpha: vec![0.0; d.n_subjects()],
        latent_l: vec![0.0; d.n_obs()],
        latent_v: vec![0.0; d.n_obs()],
        s: vec![1.0; d.p],
        lambda_sq: 1.0,
        phi: 1.0,
        delta,
    };
    for k in 0..d.n_obs() {
        let v = exp.sample_unchecked(rng).max(f64::MIN_POSITIVE);
        state.latent_v[k] = v;
        let mean = state.linear_predictor(d, k) + spec.xi() * v;
        let y = d.y[k];
        state.latent_l[k] = sample_trunc_normal_raw(mean, (2.0 * v).sqrt(), state.delta[y - 1], state.delta[y], rng);
    }
    Ok(state)
}
