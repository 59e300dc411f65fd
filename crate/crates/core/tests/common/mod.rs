//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use ordqr::model::{ChainState, ModelSpec, Observation, OrdinalDataset, SubjectBlock};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

pub fn phi_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn phi_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Skewed Laplace CDF, written out from the density by direct integration.
pub fn sld_cdf(e: f64, theta: f64) -> f64 {
    if e <= 0.0 {
        theta * ((1.0 - theta) * e).exp()
    } else {
        1.0 - (1.0 - theta) * (-theta * e).exp()
    }
}

pub fn sld_logpdf(e: f64, theta: f64) -> f64 {
    let loss = if e < 0.0 { e * (theta - 1.0) } else { e * theta };
    (theta * (1.0 - theta)).ln() - loss
}

/// Log of the full joint density of parameters, latents and data.
pub fn log_joint(st: &ChainState, spec: &ModelSpec<'_>) -> f64 {
    let ds = spec.dataset();
    let theta = spec.theta();
    let xi = 1.0 - 2.0 * theta;
    let zeta = theta * (1.0 - theta);
    let pr = spec.priors();
    let c = ds.num_categories();
    if st.delta.windows(2).any(|w| !(w[0] < w[1])) {
        return f64::NEG_INFINITY;
    }
    let mut lp = 0.0;
    let mut obs = 0;
    for (i, subj) in ds.subjects().iter().enumerate() {
        for o in &subj.observations {
            let l = st.latent_l[obs];
            let v = st.latent_v[obs];
            if v <= 0.0 || !(st.delta[o.y - 1] < l && l <= st.delta[o.y]) {
                return f64::NEG_INFINITY;
            }
            let eta: f64 = st.alpha[i] + o.x.iter().zip(&st.beta).map(|(a, b)| a * b).sum::<f64>();
            lp += normal_logpdf(l, eta + xi * v, 2.0 * v);
            lp += zeta.ln() - zeta * v;
            obs += 1;
        }
    }
    if st.s.iter().any(|&s| s <= 0.0) || st.lambda_sq <= 0.0 || st.phi <= 0.0 {
        return f64::NEG_INFINITY;
    }
    for (b, s) in st.beta.iter().zip(&st.s) {
        lp += normal_logpdf(*b, 0.0, *s);
        lp += (0.5 * st.lambda_sq).ln() - 0.5 * st.lambda_sq * s;
    }
    lp += pr.a1 * pr.a2.ln() - ln_gamma(pr.a1) + (pr.a1 - 1.0) * st.lambda_sq.ln() - pr.a2 * st.lambda_sq;
    for a in &st.alpha {
        lp += normal_logpdf(*a, 0.0, st.phi);
    }
    lp += pr.b1 * pr.b2.ln() - ln_gamma(pr.b1) - (pr.b1 + 1.0) * st.phi.ln() - pr.b2 / st.phi;
    for k in 1..c {
        let d = st.delta[k];
        if !(d > pr.delta_min && d < pr.delta_max) {
            return f64::NEG_INFINITY;
        }
    }
    lp
}

/// Adaptive Simpson quadrature.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Kolmogorov–Smirnov distance between the sample and a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
pub enum Support {
    Real,
    Positive,
    Interval(f64, f64),
}

/// KS distance between the sample and the density proportional to
/// `exp(log_f)`, normalized by quadrature. Positive supports are integrated
/// on the log scale.
pub fn ks_against_log_density(samples: &[f64], log_f: impl Fn(f64) -> f64, support: Support) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let (to_u, from_u, jac): (fn(f64) -> f64, fn(f64) -> f64, fn(f64) -> f64) = match support {
        Support::Positive => (f64::ln, f64::exp, f64::exp),
        _ => (|x| x, |u| u, |_| 1.0),
    };
    let us: Vec<f64> = xs.iter().map(|&x| to_u(x)).collect();
    let step = (xs.len() / 1000).max(1);
    let offset = us.iter().step_by(step).map(|&u| log_f(from_u(u)) + jac(u).ln()).fold(f64::NEG_INFINITY, f64::max);
    let g = |u: f64| {
        let x = from_u(u);
        let v = log_f(x);
        if v == f64::NEG_INFINITY { 0.0 } else { (v + jac(u).ln() - offset).exp() }
    };
    let spread = (us[us.len() - 1] - us[0]).max(1e-12);
    let outward = |start: f64, dir: f64| {
        let mut w = spread;
        let mut u = start + dir * w;
        while g(u) > 1e-40 {
            w *= 2.0;
            u = start + dir * w;
        }
        u
    };
    let (lo, hi) = match support {
        Support::Interval(a, b) => (
            if a.is_finite() { a } else { outward(us[0], -1.0) },
            if b.is_finite() { b } else { outward(us[us.len() - 1], 1.0) },
        ),
        _ => (outward(us[0], -1.0), outward(us[us.len() - 1], 1.0)),
    };
    let tol = 1e-9 * spread;
    let below = simpson(&g, lo, us[0], tol);
    let mut cum = vec![below];
    for w in us.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + simpson(&g, w[0], w[1], tol / us.len() as f64 * 100.0));
    }
    let total = cum[cum.len() - 1] + simpson(&g, us[us.len() - 1], hi, tol);
    let n = xs.len() as f64;
    cum.iter()
        .enumerate()
        .map(|(i, &c)| {
            let f = c / total;
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

/// Edge of the set where `log_f` is finite, between a point inside
/// (`inside`) and one outside (`outside`).
pub fn support_edge(log_f: impl Fn(f64) -> f64, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if log_f(mid).is_finite() {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// Scalar potential scale reduction factor `(n-1)/n + (m+1)/m * (B/n)/W`.
pub fn scalar_psrf(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    (n - 1.0) / n + (m + 1.0) / m * b_over_n / w
}

/// `K_{nu+k}(z) / K_nu(z)` for half-integer orders starting at `nu = 1/2`,
/// via the upward recurrence `K_{v+1} = K_{v-1} + (2v/z) K_v`.
pub fn bessel_k_ratio_half(k: usize, z: f64) -> f64 {
    // normalized by K_{1/2}; K_{-1/2} = K_{1/2}
    let mut prev = 1.0;
    let mut cur = 1.0;
    let mut nu = 0.5;
    for _ in 0..k {
        let next = prev + 2.0 * nu / z * cur;
        prev = cur;
        cur = next;
        nu += 1.0;
    }
    cur
}

/// `E[X^k]` for `X ~ GIG(1/2, rho1, rho2)`.
pub fn gig_half_moment(k: usize, rho1: f64, rho2: f64) -> f64 {
    (rho1 / rho2).powi(k as i32) * bessel_k_ratio_half(k, rho1 * rho2)
}

pub fn dataset(rows: &[(usize, usize, &[f64])], c: usize) -> OrdinalDataset {
    let p = rows[0].2.len();
    let n_subj = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let subjects = (0..n_subj)
        .map(|i| SubjectBlock {
            subject_id: format!("s{}", i + 1),
            observations: rows
                .iter()
                .filter(|r| r.0 == i)
                .enumerate()
                .map(|(j, r)| Observation { y: r.1, x: r.2.to_vec(), time_index: j as i64 + 1 })
                .collect(),
        })
        .collect();
    OrdinalDataset::new(subjects, c, p).unwrap()
}

/// Batch-means standard error of a correlated sequence.
pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}
