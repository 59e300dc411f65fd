//! The data-augmented Gibbs sampler.
//!
//! One sweep visits, in order: the mixing scales `v`, the coefficients
//! `beta`, the shrinkage scales `s`, `lambda^2`, the random effects `alpha`,
//! their variance `phi`, the latent liabilities `l` and the interior
//! cut-points `delta`. Each step draws from its exact full conditional.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{sample_gig_half, sample_trunc_normal_raw, StandardDist};
use crate::model::{initialize_state_from, ChainState, ConfigError, ModelSpec};
use crate::rng::{substream, CHAIN};

/// Lower clamp on `rho1^2` in the GIG updates; `rho1 = 0` is a boundary case
/// of the family.
pub const RHO1_SQ_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("chain {chain}: non-finite value in `{parameter}` at sweep {sweep}")]
    Numerical { chain: usize, sweep: usize, parameter: String },
    #[error("chain {chain}: empty cut-point interval for delta_{cut} at sweep {sweep} (lower {lower}, upper {upper})")]
    CutPoint { chain: usize, sweep: usize, cut: usize, lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub num_chains: usize,
    pub seed: u64,
    pub overdispersed_starts: bool,
    pub retain_alpha: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 2_000,
            thin: 1,
            num_chains: 1,
            seed: 0,
            overdispersed_starts: false,
            retain_alpha: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 {
            return Err(ConfigError::Sampler("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(ConfigError::Sampler(format!(
                "burn-in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(ConfigError::Sampler("thin must be at least 1".into()));
        }
        if self.num_chains == 0 {
            return Err(ConfigError::Sampler("need at least one chain".into()));
        }
        if self.retained_per_chain() == 0 {
            return Err(ConfigError::Sampler("no draws retained after burn-in and thinning".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }

    /// Whether sweep `t` (1-based) is kept.
    pub fn retains(&self, t: usize) -> bool {
        t > self.burn_in && (t - self.burn_in) % self.thin == 0
    }
}

/// Retained draws of one or more chains, stored chain-major and row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    values: Vec<f64>,
    iteration: Vec<u64>,
    num_chains: usize,
    chain_len: usize,
    pub config: Option<SamplerConfig>,
}

impl PosteriorDraws {
    /// Assemble from per-chain `(iteration, row)` lists of equal length.
    pub fn from_chains(names: Vec<String>, chains: Vec<Vec<(u64, Vec<f64>)>>) -> Result<Self, String> {
        let num_chains = chains.len();
        if num_chains == 0 {
            return Err("no chains".into());
        }
        let chain_len = chains[0].len();
        if chains.iter().any(|c| c.len() != chain_len) {
            return Err("chains have different lengths".into());
        }
        let mut values = Vec::with_capacity(num_chains * chain_len * names.len());
        let mut iteration = Vec::with_capacity(num_chains * chain_len);
        for chain in chains {
            for (it, row) in chain {
                if row.len() != names.len() {
                    return Err(format!("row has {} values for {} columns", row.len(), names.len()));
                }
                iteration.push(it);
                values.extend(row);
            }
        }
        Ok(Self { names, values, iteration, num_chains, chain_len, config: None })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_params(&self) -> usize {
        self.names.len()
    }

    pub fn num_chains(&self) -> usize {
        self.num_chains
    }

    pub fn chain_len(&self) -> usize {
        self.chain_len
    }

    pub fn num_draws(&self) -> usize {
        self.num_chains * self.chain_len
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.names.len();
        &self.values[row * d..(row + 1) * d]
    }

    pub fn iteration(&self, row: usize) -> u64 {
        self.iteration[row]
    }

    /// Row index range of chain `c`.
    pub fn chain_rows(&self, c: usize) -> std::ops::Range<usize> {
        c * self.chain_len..(c + 1) * self.chain_len
    }

    /// Column `col` pooled over all chains.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.num_draws()).map(|r| self.get(r, col)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|c| self.column(c))
    }

    /// Append another set of chains with identical columns.
    pub fn merge(mut self, other: PosteriorDraws) -> Result<Self, String> {
        if self.names != other.names {
            return Err("parameter columns differ".into());
        }
        if self.chain_len != other.chain_len {
            return Err("chain lengths differ".into());
        }
        self.values.extend(other.values);
        self.iteration.extend(other.iteration);
        self.num_chains += other.num_chains;
        Ok(self)
    }

    /// Same draws plus one extra column holding `value` everywhere.
    pub fn with_constant_column(&self, name: &str, value: f64) -> Self {
        let mut names = self.names.clone();
        names.push(name.to_string());
        let d = self.names.len();
        let mut values = Vec::with_capacity(self.values.len() + self.num_draws());
        for r in 0..self.num_draws() {
            values.extend_from_slice(&self.values[r * d..(r + 1) * d]);
            values.push(value);
        }
        Self { names, values, iteration: self.iteration.clone(), num_chains: self.num_chains, chain_len: self.chain_len, config: self.config }
    }

    /// CSV with header `chain,iteration,<names>`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(out);
        write!(w, "chain,iteration")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for c in 0..self.num_chains {
            for r in self.chain_rows(c) {
                write!(w, "{},{}", c + 1, self.iteration[r])?;
                for v in self.row(r) {
                    write!(w, ",{v:?}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
        if headers.len() < 3 || &headers[0] != "chain" || &headers[1] != "iteration" {
            return Err("expected header `chain,iteration,...`".into());
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut chains: Vec<(String, Vec<(u64, Vec<f64>)>)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let line = rec.position().map_or(0, |p| p.line());
            let chain = rec[0].to_string();
            let it: u64 = rec[1].parse().map_err(|_| format!("line {line}: bad iteration"))?;
            let row = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>().map_err(|_| format!("line {line}: bad value `{s}`")))
                .collect::<Result<Vec<_>, _>>()?;
            match chains.iter_mut().find(|(c, _)| *c == chain) {
                Some((_, rows)) => rows.push((it, row)),
                None => chains.push((chain, vec![(it, row)])),
            }
        }
        PosteriorDraws::from_chains(names, chains.into_iter().map(|(_, r)| r).collect())
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self, String> {
        let f = File::open(path.as_ref()).map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
        Self::read_csv(f)
    }
}

/// Column names for a model with `p` covariates, `c` categories and
/// `n_subjects` random effects (listed only when `alpha` is retained).
pub fn parameter_names(p: usize, c: usize, n_subjects: Option<usize>) -> Vec<String> {
    let mut names: Vec<String> = (1..=p).map(|k| format!("beta_{k}")).collect();
    names.extend((1..c).map(|k| format!("delta_{k}")));
    names.push("lambda_sq".into());
    names.push("phi".into());
    if let Some(n) = n_subjects {
        names.extend((1..=n).map(|i| format!("alpha_{i}")));
    }
    names
}

fn snapshot(state: &ChainState, retain_alpha: bool) -> Vec<f64> {
    let mut row = state.beta.clone();
    row.extend_from_slice(state.interior_delta());
    row.push(state.lambda_sq);
    row.push(state.phi);
    if retain_alpha {
        row.extend_from_slice(&state.alpha);
    }
    row
}

/// Step 1: `v_ij ~ GIG(1/2, rho1, rho2)` with `rho1^2 = (l - x'b - alpha)^2 / 2`
/// and `rho2^2 = 1/2`.
pub fn update_v<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    let d = spec.design();
    let rho2 = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..d.n_obs() {
        let r = state.latent_l[k] - state.linear_predictor(d, k) - state.alpha[d.subject[k]];
        let rho1 = (0.5 * r * r).max(RHO1_SQ_FLOOR).sqrt();
        state.latent_v[k] = sample_gig_half(rho1, rho2, rng);
    }
}

/// Mean and variance of the normal full conditional of `beta_k`.
pub fn beta_conditional(state: &ChainState, spec: &ModelSpec<'_>, k: usize) -> (f64, f64) {
    let d = spec.design();
    let xi = spec.xi();
    let mut precision = 1.0 / state.s[k];
    let mut score = 0.0;
    for o in 0..d.n_obs() {
        let x = d.row(o);
        let w = 0.5 / state.latent_v[o];
        let partial: f64 = x.iter().zip(&state.beta).enumerate().filter(|(h, _)| *h != k).map(|(_, (a, b))| a * b).sum();
        let resid = state.latent_l[o] - partial - state.alpha[d.subject[o]] - xi * state.latent_v[o];
        precision += x[k] * x[k] * w;
        score += resid * x[k] * w;
    }
    let var = 1.0 / precision;
    (var * score, var)
}

/// Step 2: systematic scan over `beta_k`, each conditional using the
/// freshest values of the other coefficients.
pub fn update_beta<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    let d = spec.design();
    let xi = spec.xi();
    let n = d.n_obs();
    // working residual l - x'b - alpha - xi v, kept current as beta moves
    let mut resid: Vec<f64> = (0..n)
        .map(|o| state.latent_l[o] - state.linear_predictor(d, o) - state.alpha[d.subject[o]] - xi * state.latent_v[o])
        .collect();
    for k in 0..d.p {
        let bk = state.beta[k];
        let mut precision = 1.0 / state.s[k];
        let mut score = 0.0;
        for o in 0..n {
            let xk = d.x[o * d.p + k];
            let w = 0.5 / state.latent_v[o];
            precision += xk * xk * w;
            score += (resid[o] + xk * bk) * xk * w;
        }
        let var = 1.0 / precision;
        let z: f64 = rng.sample(StandardNormal);
        let new = var * score + var.sqrt() * z;
        let delta = new - bk;
        if delta != 0.0 {
            for (o, r) in resid.iter_mut().enumerate() {
                *r -= d.x[o * d.p + k] * delta;
            }
        }
        state.beta[k] = new;
    }
}

/// Step 3: `s_k ~ GIG(1/2, |beta_k|, lambda)`.
pub fn update_s<R: Rng + ?Sized>(state: &mut ChainState, _spec: &ModelSpec<'_>, rng: &mut R) {
    let rho2 = state.lambda_sq.sqrt();
    for k in 0..state.s.len() {
        let rho1 = (state.beta[k] * state.beta[k]).max(RHO1_SQ_FLOOR).sqrt();
        state.s[k] = sample_gig_half(rho1, rho2, rng);
    }
}

/// Step 4: `lambda^2 ~ Gamma(p + a1, rate = sum(s) / 2 + a2)`.
pub fn update_lambda_sq<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    let pr = spec.priors();
    let shape = state.s.len() as f64 + pr.a1;
    let rate = state.s.iter().sum::<f64>() / 2.0 + pr.a2;
    state.lambda_sq = StandardDist::Gamma { shape, rate }.sample_unchecked(rng);
}

/// Mean and variance of the normal full conditional of `alpha_i`.
pub fn alpha_conditional(state: &ChainState, spec: &ModelSpec<'_>, i: usize) -> (f64, f64) {
    let d = spec.design();
    let mut precision = 1.0 / state.phi;
    let mut score = 0.0;
    for o in d.subject_range(i) {
        let w = 0.5 / state.latent_v[o];
        let eta = state.latent_l[o] - state.linear_predictor(d, o) - spec.xi() * state.latent_v[o];
        precision += w;
        score += eta * w;
    }
    let var = 1.0 / precision;
    (var * score, var)
}

/// Step 5: `alpha_i ~ N(mu, sigma^2)` per subject.
pub fn update_alpha<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    for i in 0..state.alpha.len() {
        let (mean, var) = alpha_conditional(state, spec, i);
        let z: f64 = rng.sample(StandardNormal);
        state.alpha[i] = mean + var.sqrt() * z;
    }
}

/// Step 6: `phi ~ InvGamma(N/2 + b1, scale = sum(alpha^2) / 2 + b2)`.
pub fn update_phi<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    let pr = spec.priors();
    let shape = state.alpha.len() as f64 / 2.0 + pr.b1;
    let scale = state.alpha.iter().map(|a| a * a).sum::<f64>() / 2.0 + pr.b2;
    state.phi = StandardDist::InverseGamma { shape, scale }.sample_unchecked(rng);
}

/// Step 7: `l_ij ~ TN(alpha_i + x'b + xi v, 2 v)` on `(delta_{y-1}, delta_y]`.
pub fn update_l<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) {
    let d = spec.design();
    for o in 0..d.n_obs() {
        let v = state.latent_v[o];
        let mean = state.alpha[d.subject[o]] + state.linear_predictor(d, o) + spec.xi() * v;
        let y = d.y[o];
        state.latent_l[o] = sample_trunc_normal_raw(mean, (2.0 * v).sqrt(), state.delta[y - 1], state.delta[y], rng);
    }
}

/// Support `(L_c, U_c)` of the uniform full conditional of `delta_c` given the
/// current latent values and neighbouring cut-points. Empty categories
/// contribute `-inf` to the maximum and `+inf` to the minimum.
pub fn delta_bounds(state: &ChainState, spec: &ModelSpec<'_>, c: usize) -> (f64, f64) {
    let d = spec.design();
    let pr = spec.priors();
    let mut max_c = f64::NEG_INFINITY;
    let mut min_next = f64::INFINITY;
    for (o, &y) in d.y.iter().enumerate() {
        if y == c {
            max_c = max_c.max(state.latent_l[o]);
        } else if y == c + 1 {
            min_next = min_next.min(state.latent_l[o]);
        }
    }
    (max_c.max(state.delta[c - 1]).max(pr.delta_min), min_next.min(state.delta[c + 1]).min(pr.delta_max))
}

/// Step 8: `delta_c ~ U(L_c, U_c)` for `c = 1..C-1` in increasing order,
/// each using the freshly drawn lower neighbour.
pub fn update_delta<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R) -> Result<(), (usize, f64, f64)> {
    let d = spec.design();
    let pr = spec.priors();
    let ncat = spec.dataset().num_categories();
    let mut max_l = vec![f64::NEG_INFINITY; ncat + 2];
    let mut min_l = vec![f64::INFINITY; ncat + 2];
    for (o, &y) in d.y.iter().enumerate() {
        let l = state.latent_l[o];
        max_l[y] = max_l[y].max(l);
        min_l[y] = min_l[y].min(l);
    }
    for c in 1..ncat {
        let lower = max_l[c].max(state.delta[c - 1]).max(pr.delta_min);
        let upper = min_l[c + 1].min(state.delta[c + 1]).min(pr.delta_max);
        if !(lower < upper) {
            return Err((c, lower, upper));
        }
        state.delta[c] = loop {
            let x = lower + (upper - lower) * rng.random::<f64>();
            if x > lower && x < upper {
                break x;
            }
        };
    }
    Ok(())
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// One full sweep of the eight conditional updates.
pub fn sweep<R: Rng + ?Sized>(state: &mut ChainState, spec: &ModelSpec<'_>, rng: &mut R, chain: usize, t: usize) -> Result<(), GibbsError> {
    let fail = |parameter: &str| GibbsError::Numerical { chain, sweep: t, parameter: parameter.to_string() };
    update_v(state, spec, rng);
    if !state.latent_v.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(fail("v"));
    }
    update_beta(state, spec, rng);
    if !all_finite(&state.beta) {
        return Err(fail("beta"));
    }
    update_s(state, spec, rng);
    if !state.s.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(fail("s"));
    }
    update_lambda_sq(state, spec, rng);
    if !(state.lambda_sq.is_finite() && state.lambda_sq > 0.0) {
        return Err(fail("lambda_sq"));
    }
    update_alpha(state, spec, rng);
    if !all_finite(&state.alpha) {
        return Err(fail("alpha"));
    }
    update_phi(state, spec, rng);
    if !(state.phi.is_finite() && state.phi > 0.0) {
        return Err(fail("phi"));
    }
    update_l(state, spec, rng);
    if !all_finite(&state.latent_l) {
        return Err(fail("l"));
    }
    update_delta(state, spec, rng).map_err(|(cut, lower, upper)| GibbsError::CutPoint { chain, sweep: t, cut, lower, upper })?;
    Ok(())
}

/// Run chain `chain` of a configuration and return its retained rows.
pub fn run_single_chain(spec: &ModelSpec<'_>, config: &SamplerConfig, chain: usize) -> Result<Vec<(u64, Vec<f64>)>, GibbsError> {
    let mut rng = substream(config.seed, &[CHAIN, chain as u64]);
    let p = spec.design().p;
    let beta0 = if config.overdispersed_starts {
        let n = Normal::new(0.0, 2.0).expect("valid");
        (0..p).map(|_| n.sample(&mut rng)).collect()
    } else {
        vec![0.0; p]
    };
    let mut state = initialize_state_from(spec, beta0, &mut rng)?;
    let mut rows = Vec::with_capacity(config.retained_per_chain());
    for t in 1..=config.iterations {
        sweep(&mut state, spec, &mut rng, chain, t)?;
        if config.retains(t) {
            rows.push((t as u64, snapshot(&state, config.retain_alpha)));
        }
    }
    Ok(rows)
}

/// Run every chain of `config` (in parallel) and collect the retained draws.
pub fn run_chain(spec: &ModelSpec<'_>, config: &SamplerConfig) -> Result<PosteriorDraws, GibbsError> {
    config.validate()?;
    let chains = (0..config.num_chains)
        .into_par_iter()
        .map(|c| run_single_chain(spec, config, c))
        .collect::<Result<Vec<_>, _>>()?;
    let ds = spec.dataset();
    let names = parameter_names(ds.num_covariates(), ds.num_categories(), config.retain_alpha.then(|| ds.num_subjects()));
    let mut draws = PosteriorDraws::from_chains(names, chains).expect("chains share a layout");
    draws.config = Some(*config);
    Ok(draws)
}
