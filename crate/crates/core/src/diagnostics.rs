//! Posterior summaries, the multivariate potential scale reduction factor,
//! the deviance information criterion and the replication-study metrics.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::distributions::{sld_cdf_unchecked, sld_sf_unchecked};
use crate::gibbs::PosteriorDraws;
use crate::model::ModelSpec;

#[derive(Debug, Error, PartialEq)]
pub enum DiagError {
    #[error("credible level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error("need at least {need} draws, got {got}")]
    TooFewDraws { need: usize, got: usize },
    #[error("need at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("within-chain covariance is degenerate")]
    Singular,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("true value is zero; relative bias is undefined")]
    ZeroTruth,
    #[error("need at least {need} replications, got {got}")]
    TooFewReplications { need: usize, got: usize },
    #[error("reference estimator has zero spread")]
    ZeroReferenceSpread,
}

/// Inverse of the empirical CDF, averaging at flat spots: the smallest `x`
/// with `F_n(x) >= p`, and the midpoint of the two order statistics when
/// `n p` is an integer. Duplicating every draw leaves it unchanged.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    let np = n as f64 * p;
    let k = np.floor() as usize;
    if np == k as f64 {
        if k == 0 {
            sorted[0]
        } else if k >= n {
            sorted[n - 1]
        } else {
            0.5 * (sorted[k - 1] + sorted[k])
        }
    } else {
        sorted[k.min(n - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub level: f64,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, parameter: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,mean,sd,lower,upper\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", r.parameter, r.mean, r.sd, r.lower, r.upper);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let pct = format!("{}% CI", (self.level * 100.0).round());
        let width = self.rows.iter().map(|r| r.parameter.len()).max().unwrap_or(9).max(9);
        let mut s = format!("{:<width$}  {:>10}  {:>9}  {:>24}\n", "parameter", "mean", "sd", pct);
        for r in &self.rows {
            let ci = format!("({:.4}, {:.4})", r.lower, r.upper);
            let _ = writeln!(s, "{:<width$}  {:>10.4}  {:>9.4}  {:>24}", r.parameter, r.mean, r.sd, ci);
        }
        s
    }
}

/// Mean, standard deviation and equal-tailed credible interval of every
/// column, pooling all chains. The standard deviation uses divisor `n`.
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<SummaryTable, DiagError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(DiagError::Level(level));
    }
    let n = draws.num_draws();
    if n < 2 {
        return Err(DiagError::TooFewDraws { need: 2, got: n });
    }
    let tail = 0.5 * (1.0 - level);
    let rows = (0..draws.num_params())
        .map(|c| {
            let mut col = draws.column(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            col.sort_by(f64::total_cmp);
            SummaryRow {
                parameter: draws.names()[c].clone(),
                mean,
                sd: var.sqrt(),
                lower: empirical_quantile(&col, tail),
                upper: empirical_quantile(&col, 1.0 - tail),
            }
        })
        .collect();
    Ok(SummaryTable { level, rows })
}

/// Brooks–Gelman statistic for `m` chains of `n` vector draws each:
/// `(n-1)/n + (m+1)/m * lambda_max(W^{-1} B/n)`. Returns the value and
/// whether `W` had to be ridge-regularized.
pub fn mpsrf_statistic(chains: &[Vec<Vec<f64>>]) -> Result<(f64, bool), DiagError> {
    let m = chains.len();
    if m < 2 {
        return Err(DiagError::TooFewChains(m));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 2 {
        return Err(DiagError::TooFewDraws { need: 2, got: n });
    }
    let dim = chains[0][0].len();
    let means: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            let mut mu = vec![0.0; dim];
            for row in &c[..n] {
                for (a, b) in mu.iter_mut().zip(row) {
                    *a += b;
                }
            }
            mu.iter_mut().for_each(|a| *a /= n as f64);
            mu
        })
        .collect();
    let mut w = DMatrix::<f64>::zeros(dim, dim);
    for (c, mu) in chains.iter().zip(&means) {
        for row in &c[..n] {
            for a in 0..dim {
                let da = row[a] - mu[a];
                for b in 0..=a {
                    w[(a, b)] += da * (row[b] - mu[b]);
                }
            }
        }
    }
    let grand: Vec<f64> = (0..dim).map(|a| means.iter().map(|mu| mu[a]).sum::<f64>() / m as f64).collect();
    let mut b_over_n = DMatrix::<f64>::zeros(dim, dim);
    for mu in &means {
        for a in 0..dim {
            let da = mu[a] - grand[a];
            for b in 0..=a {
                b_over_n[(a, b)] += da * (mu[b] - grand[b]);
            }
        }
    }
    let wd = (m * (n - 1)) as f64;
    for a in 0..dim {
        for b in 0..=a {
            w[(a, b)] /= wd;
            w[(b, a)] = w[(a, b)];
            b_over_n[(a, b)] /= (m - 1) as f64;
            b_over_n[(b, a)] = b_over_n[(a, b)];
        }
    }
    let mut regularized = false;
    let chol = match w.clone().cholesky() {
        Some(ch) => ch,
        None => {
            let ridge = 1e-10 * w.trace() / dim as f64;
            if !(ridge > 0.0) {
                return Err(DiagError::Singular);
            }
            regularized = true;
            let mut wr = w.clone();
            for a in 0..dim {
                wr[(a, a)] += ridge;
            }
            wr.cholesky().ok_or(DiagError::Singular)?
        }
    };
    // eigenvalues of W^{-1} B/n equal those of L^{-1} (B/n) L^{-T}
    let l = chol.l();
    let left = l.solve_lower_triangular(&b_over_n).ok_or(DiagError::Singular)?;
    let sym = l.solve_lower_triangular(&left.transpose()).ok_or(DiagError::Singular)?;
    let sym = (&sym + sym.transpose()) * 0.5;
    let lambda = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let nf = n as f64;
    let mf = m as f64;
    Ok(((nf - 1.0) / nf + (mf + 1.0) / mf * lambda, regularized))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsrfSeries {
    pub parameters: Vec<String>,
    pub checkpoints: Vec<u64>,
    pub values: Vec<f64>,
    pub regularized: Vec<bool>,
}

impl MpsrfSeries {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,mpsrf,regularized\n");
        for ((t, v), r) in self.checkpoints.iter().zip(&self.values).zip(&self.regularized) {
            let _ = writeln!(s, "{t},{v:?},{r}");
        }
        s
    }

    /// Two whitespace-separated columns, ready for plotting.
    pub fn to_plot_data(&self) -> String {
        let mut s = String::from("# iteration mpsrf\n");
        for (t, v) in self.checkpoints.iter().zip(&self.values) {
            let _ = writeln!(s, "{t} {v:.10}");
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("MPSRF over {}\n{:>10}  {:>10}\n", self.parameters.join(", "), "iteration", "mpsrf");
        for ((t, v), r) in self.checkpoints.iter().zip(&self.values).zip(&self.regularized) {
            let _ = writeln!(s, "{t:>10}  {v:>10.5}{}", if *r { "  (ridge)" } else { "" });
        }
        s
    }
}

/// Columns used for MPSRF by default: every `beta_*` and `delta_*`.
pub fn default_mpsrf_columns(draws: &PosteriorDraws) -> Vec<usize> {
    draws
        .names()
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("beta_") || n.starts_with("delta_"))
        .map(|(i, _)| i)
        .collect()
}

/// Checkpoints every `step` iterations up to the last retained iteration.
pub fn regular_checkpoints(draws: &PosteriorDraws, step: u64) -> Vec<u64> {
    let Some(last) = (0..draws.num_draws()).map(|r| draws.iteration(r)).max() else {
        return Vec::new();
    };
    let step = step.max(1);
    let mut cps: Vec<u64> = (1..).map(|k| k * step).take_while(|&t| t <= last).collect();
    if cps.last() != Some(&last) {
        cps.push(last);
    }
    cps
}

/// MPSRF at each checkpoint from every retained draw with iteration at or
/// below it. Checkpoints with fewer than two draws per chain are skipped.
pub fn mpsrf(draws: &PosteriorDraws, columns: &[usize], checkpoints: &[u64]) -> Result<MpsrfSeries, DiagError> {
    if draws.num_chains() < 2 {
        return Err(DiagError::TooFewChains(draws.num_chains()));
    }
    let mut out = MpsrfSeries {
        parameters: columns.iter().map(|&c| draws.names()[c].clone()).collect(),
        checkpoints: Vec::new(),
        values: Vec::new(),
        regularized: Vec::new(),
    };
    for &t in checkpoints {
        let chains: Vec<Vec<Vec<f64>>> = (0..draws.num_chains())
            .map(|c| {
                draws
                    .chain_rows(c)
                    .filter(|&r| draws.iteration(r) <= t)
                    .map(|r| columns.iter().map(|&k| draws.get(r, k)).collect())
                    .collect()
            })
            .collect();
        if chains.iter().any(|c: &Vec<Vec<f64>>| c.len() < 2) {
            continue;
        }
        let (v, reg) = mpsrf_statistic(&chains)?;
        out.checkpoints.push(t);
        out.values.push(v);
        out.regularized.push(reg);
    }
    if out.values.is_empty() {
        return Err(DiagError::TooFewDraws { need: 2, got: draws.chain_len() });
    }
    Ok(out)
}

/// Probability of category `y` when the liability is `eta` plus skewed
/// Laplace noise, computed on the side of the distribution that avoids
/// cancellation.
pub fn sld_cell_probability(lower: f64, upper: f64, eta: f64, theta: f64) -> f64 {
    let a = lower - eta;
    let b = upper - eta;
    if a > 0.0 {
        let sa = sld_sf_unchecked(a, theta);
        let sb = if b == f64::INFINITY { 0.0 } else { sld_sf_unchecked(b, theta) };
        sa - sb
    } else {
        let fb = if b == f64::INFINITY { 1.0 } else { sld_cdf_unchecked(b, theta) };
        let fa = if a == f64::NEG_INFINITY { 0.0 } else { sld_cdf_unchecked(a, theta) };
        fb - fa
    }
}

/// Smallest cell probability used in the deviance.
pub const CELL_FLOOR: f64 = 1e-300;

/// `-2 sum log P(y | beta, alpha, delta)` with the skewed Laplace marginal.
/// `delta` holds the interior cut-points. Returns the deviance and the
/// number of floored cells.
pub fn deviance(spec: &ModelSpec<'_>, beta: &[f64], alpha: &[f64], delta: &[f64]) -> (f64, usize) {
    let d = spec.design();
    let c = spec.dataset().num_categories();
    let cut = |k: usize| {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == c {
            f64::INFINITY
        } else {
            delta[k - 1]
        }
    };
    let mut dev = 0.0;
    let mut floored = 0;
    for o in 0..d.n_obs() {
        let eta = alpha[d.subject[o]] + d.row(o).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
        let y = d.y[o];
        let mut p = sld_cell_probability(cut(y - 1), cut(y), eta, spec.theta());
        if !(p >= CELL_FLOOR) {
            p = CELL_FLOOR;
            floored += 1;
        }
        dev -= 2.0 * p.ln();
    }
    (dev, floored)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DicReport {
    pub dic: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
    pub floored_cells: usize,
}

impl DicReport {
    pub fn to_csv(&self) -> String {
        format!(
            "dic,mean_deviance,deviance_at_mean,p_d,floored_cells\n{:?},{:?},{:?},{:?},{}\n",
            self.dic, self.mean_deviance, self.deviance_at_mean, self.p_d, self.floored_cells
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "DIC      {:.4}\nDbar     {:.4}\nD(mean)  {:.4}\npD       {:.4}\n",
            self.dic, self.mean_deviance, self.deviance_at_mean, self.p_d
        );
        if self.floored_cells > 0 {
            let _ = writeln!(s, "warning: {} cell probabilities floored at {CELL_FLOOR:e}", self.floored_cells);
        }
        s
    }
}

fn columns_with_prefix(draws: &PosteriorDraws, prefix: &str, count: usize) -> Result<Vec<usize>, DiagError> {
    (1..=count)
        .map(|k| {
            let name = format!("{prefix}{k}");
            draws.column_index(&name).ok_or(DiagError::MissingColumn(name))
        })
        .collect()
}

/// Conditional DIC: `Dbar + pD` with `pD = Dbar - D(posterior mean)`, where
/// the random effects are treated as parameters.
pub fn dic(draws: &PosteriorDraws, spec: &ModelSpec<'_>) -> Result<DicReport, DiagError> {
    let ds = spec.dataset();
    let n = draws.num_draws();
    if n < 1 {
        return Err(DiagError::TooFewDraws { need: 1, got: 0 });
    }
    let bcols = columns_with_prefix(draws, "beta_", ds.num_covariates())?;
    let dcols = columns_with_prefix(draws, "delta_", ds.num_categories() - 1)?;
    let acols = columns_with_prefix(draws, "alpha_", ds.num_subjects())?;
    let pick = |r: usize, cols: &[usize]| cols.iter().map(|&c| draws.get(r, c)).collect::<Vec<_>>();
    let mut total = 0.0;
    let mut floored = 0;
    for r in 0..n {
        let (dv, f) = deviance(spec, &pick(r, &bcols), &pick(r, &acols), &pick(r, &dcols));
        total += dv;
        floored += f;
    }
    let mean_dev = total / n as f64;
    let col_mean = |cols: &[usize]| -> Vec<f64> {
        cols.iter().map(|&c| (0..n).map(|r| draws.get(r, c)).sum::<f64>() / n as f64).collect()
    };
    let (at_mean, f) = deviance(spec, &col_mean(&bcols), &col_mean(&acols), &col_mean(&dcols));
    floored += f;
    let p_d = mean_dev - at_mean;
    Ok(DicReport { dic: mean_dev + p_d, mean_deviance: mean_dev, deviance_at_mean: at_mean, p_d, floored_cells: floored })
}

/// `(1/M) sum (estimate_r - truth) / |truth|`.
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64, DiagError> {
    if estimates.is_empty() {
        return Err(DiagError::TooFewReplications { need: 1, got: 0 });
    }
    if truth == 0.0 {
        return Err(DiagError::ZeroTruth);
    }
    let scale = truth.abs();
    Ok(estimates.iter().map(|e| (e - truth) / scale).sum::<f64>() / estimates.len() as f64)
}

/// Mean squared deviation from the replication mean (divisor `M`).
pub fn replication_spread(estimates: &[f64]) -> f64 {
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / m
}

/// `S^2(model) / S^2(reference)`.
pub fn relative_efficiency(model: &[f64], reference: &[f64]) -> Result<f64, DiagError> {
    for len in [model.len(), reference.len()] {
        if len < 2 {
            return Err(DiagError::TooFewReplications { need: 2, got: len });
        }
    }
    let denom = replication_spread(reference);
    if denom == 0.0 {
        return Err(DiagError::ZeroReferenceSpread);
    }
    Ok(replication_spread(model) / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub theta: f64,
    pub parameter: String,
    pub truth: f64,
    pub bias: f64,
    /// Relative to the reference configuration; absent with fewer than two
    /// replications or when the reference has zero spread. The reference
    /// itself always reports exactly 1.
    pub efficiency: Option<f64>,
}

/// Relative bias and efficiency per configuration and parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationReport {
    pub replications: usize,
    pub attempted: usize,
    pub reference_theta: f64,
    pub rows: Vec<ReportRow>,
}

impl ReplicationReport {
    /// Build from per-configuration estimate matrices `estimates[t][r][h]`
    /// (configuration `t`, replication `r`, parameter `h`); configuration 0
    /// is the efficiency reference.
    pub fn from_estimates(
        thetas: &[f64],
        names: &[String],
        truth: &[f64],
        estimates: &[Vec<Vec<f64>>],
        attempted: usize,
    ) -> Result<Self, DiagError> {
        let m = estimates.first().map_or(0, Vec::len);
        if m == 0 {
            return Err(DiagError::TooFewReplications { need: 1, got: 0 });
        }
        let column = |t: usize, h: usize| estimates[t].iter().map(|row| row[h]).collect::<Vec<f64>>();
        let mut rows = Vec::new();
        for (t, &theta) in thetas.iter().enumerate() {
            for (h, name) in names.iter().enumerate() {
                let est = column(t, h);
                let efficiency = if m >= 2 && t == 0 {
                    Some(1.0)
                } else if m >= 2 {
                    match relative_efficiency(&est, &column(0, h)) {
                        Ok(e) => Some(e),
                        Err(DiagError::ZeroReferenceSpread) => None,
                        Err(e) => return Err(e),
                    }
                } else {
                    None
                };
                rows.push(ReportRow {
                    theta,
                    parameter: name.clone(),
                    truth: truth[h],
                    bias: relative_bias(&est, truth[h])?,
                    efficiency,
                });
            }
        }
        Ok(Self { replications: m, attempted, reference_theta: thetas[0], rows })
    }

    pub fn get(&self, theta: f64, parameter: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.theta == theta && r.parameter == parameter)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,parameter,truth,bias,efficiency,replications\n");
        for r in &self.rows {
            let eff = r.efficiency.map_or(String::from("NA"), |e| format!("{e:?}"));
            let _ = writeln!(s, "{},{},{:?},{:?},{},{}", r.theta, r.parameter, r.truth, r.bias, eff, self.replications);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "replications used: {} of {} (attrition {})\nefficiency reference: theta = {}\n\n{:>6}  {:<10}  {:>9}  {:>8}  {:>7}\n",
            self.replications,
            self.attempted,
            self.attempted - self.replications,
            self.reference_theta,
            "theta",
            "parameter",
            "truth",
            "bias",
            "eff"
        );
        for r in &self.rows {
            let eff = r.efficiency.map_or(String::from("NA"), |e| format!("{e:.3}"));
            let _ = writeln!(s, "{:>6}  {:<10}  {:>9.4}  {:>8.3}  {:>7}", r.theta, r.parameter, r.truth, r.bias, eff);
        }
        s
    }
}
