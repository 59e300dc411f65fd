//! Random variates, densities and CDFs for every law the sampler touches.
//!
//! Parameterizations are fixed throughout the crate: gamma is
//! `(shape, rate)`, inverse gamma is `(shape, scale)`, exponential is
//! `(rate)`. The generalized inverse Gaussian uses the kernel
//! `x^(nu-1) exp{-(rho1^2 / x + rho2^2 x) / 2}`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};
use statrs::function::erf;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("quantile level must lie in (0, 1), got {0}")]
    QuantileLevel(f64),
    #[error("invalid parameter `{name}` = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("empty interval: lower {lower} is not below upper {upper}")]
    EmptyInterval { lower: f64, upper: f64 },
}

fn check_theta(theta: f64) -> Result<(), DistError> {
    if theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(DistError::QuantileLevel(theta))
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, DistError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DistError::Parameter { name, value })
    }
}

/// Check loss `rho_theta(t) = t * theta - t * I(t < 0)`.
pub fn check_loss(t: f64, theta: f64) -> Result<f64, DistError> {
    check_theta(theta)?;
    Ok(check_loss_unchecked(t, theta))
}

#[inline]
pub(crate) fn check_loss_unchecked(t: f64, theta: f64) -> f64 {
    if t < 0.0 {
        t * (theta - 1.0)
    } else {
        t * theta
    }
}

/// Skewed Laplace quantile-level parameters; the scale is fixed at one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SldParams {
    theta: f64,
    location: f64,
}

impl SldParams {
    pub fn new(theta: f64, location: f64) -> Result<Self, DistError> {
        check_theta(theta)?;
        if !location.is_finite() {
            return Err(DistError::Parameter { name: "location", value: location });
        }
        Ok(Self { theta, location })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    /// Mixture drift `1 - 2 theta`.
    pub fn xi(&self) -> f64 {
        1.0 - 2.0 * self.theta
    }

    /// Exponential mixing rate `theta (1 - theta)`.
    pub fn zeta(&self) -> f64 {
        self.theta * (1.0 - self.theta)
    }

    pub fn density(&self, x: f64) -> f64 {
        sld_density_unchecked(x - self.location, self.theta)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        sld_cdf_unchecked(x - self.location, self.theta)
    }
}

/// Skewed Laplace density `theta (1 - theta) exp{-rho_theta(eps)}`.
pub fn sld_density(eps: f64, theta: f64) -> Result<f64, DistError> {
    check_theta(theta)?;
    Ok(sld_density_unchecked(eps, theta))
}

#[inline]
fn sld_density_unchecked(eps: f64, theta: f64) -> f64 {
    theta * (1.0 - theta) * (-check_loss_unchecked(eps, theta)).exp()
}

/// Closed-form skewed Laplace CDF, `F(0) = theta`.
pub fn sld_cdf(eps: f64, theta: f64) -> Result<f64, DistError> {
    check_theta(theta)?;
    Ok(sld_cdf_unchecked(eps, theta))
}

#[inline]
pub(crate) fn sld_cdf_unchecked(eps: f64, theta: f64) -> f64 {
    if eps <= 0.0 {
        theta * ((1.0 - theta) * eps).exp()
    } else {
        1.0 - (1.0 - theta) * (-theta * eps).exp()
    }
}

/// `1 - F(eps)` without cancellation in the upper tail.
#[inline]
pub(crate) fn sld_sf_unchecked(eps: f64, theta: f64) -> f64 {
    if eps <= 0.0 {
        1.0 - theta * ((1.0 - theta) * eps).exp()
    } else {
        (1.0 - theta) * (-theta * eps).exp()
    }
}

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
#[inline]
pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Generalized inverse Gaussian parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GigParams {
    nu: f64,
    rho1: f64,
    rho2: f64,
}

impl GigParams {
    pub fn new(nu: f64, rho1: f64, rho2: f64) -> Result<Self, DistError> {
        if !nu.is_finite() {
            return Err(DistError::Parameter { name: "nu", value: nu });
        }
        positive("rho1", rho1)?;
        positive("rho2", rho2)?;
        Ok(Self { nu, rho1, rho2 })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    /// Log of the unnormalized kernel.
    pub fn log_kernel(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.nu - 1.0) * x.ln() - 0.5 * (self.rho1 * self.rho1 / x + self.rho2 * self.rho2 * x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.nu == 0.5 {
            sample_gig_half(self.rho1, self.rho2, rng)
        } else {
            sample_gig_rou(self.nu, self.rho1, self.rho2, rng)
        }
    }
}

/// Draw from `GIG(nu, rho1, rho2)`.
pub fn sample_gig<R: Rng + ?Sized>(params: &GigParams, rng: &mut R) -> f64 {
    params.sample(rng)
}

/// `GIG(1/2, rho1, rho2)` through its reciprocal, which is inverse Gaussian
/// with mean `rho2 / rho1` and shape `rho2^2` (Michael-Schucany-Haas).
pub(crate) fn sample_gig_half<R: Rng + ?Sized>(rho1: f64, rho2: f64, rng: &mut R) -> f64 {
    let mu = rho2 / rho1;
    let shape = rho2 * rho2;
    let z: f64 = rng.sample(StandardNormal);
    let y = z * z;
    let my = mu * y;
    // mu + mu^2 y / (2 shape) - mu/(2 shape) sqrt(4 mu shape y + mu^2 y^2), written
    // in the cancellation-free form mu - 2 mu^2 y / (...)
    let root = (my * (4.0 * shape + my)).sqrt();
    let x = mu * 2.0 * shape / (2.0 * shape + my + root);
    let u: f64 = rng.random();
    let ig = if u * (mu + x) <= mu { x } else { mu * mu / x };
    let out = 1.0 / ig;
    if out.is_finite() && out > 0.0 {
        out
    } else {
        f64::MIN_POSITIVE.max(out.min(f64::MAX))
    }
}

/// Ratio-of-uniforms with mode shift for arbitrary order. Negative orders go
/// through the reciprocal identity `1 / GIG(nu, a, b) ~ GIG(-nu, b, a)`.
fn sample_gig_rou<R: Rng + ?Sized>(nu: f64, rho1: f64, rho2: f64, rng: &mut R) -> f64 {
    if nu < 0.0 {
        return 1.0 / sample_gig_rou(-nu, rho2, rho1, rng);
    }
    // x = eta * y with y ~ kernel y^(nu-1) exp{-omega (y + 1/y) / 2}
    let omega = rho1 * rho2;
    let eta = rho1 / rho2;
    let lam = nu;
    let log_h = |y: f64| (lam - 1.0) * y.ln() - 0.5 * omega * (y + 1.0 / y);
    let mode = ((lam - 1.0) + ((lam - 1.0).powi(2) + omega * omega).sqrt()) / omega;
    let log_h_mode = log_h(mode);
    // extremes of (y - mode) sqrt(h(y)) on either side of the mode
    let dlog = |y: f64| 2.0 / (y - mode) + (lam - 1.0) / y - 0.5 * omega * (1.0 - 1.0 / (y * y));
    let left = bisect(|y| dlog(y), mode * 1e-300_f64.max(1e-12), mode, true);
    let mut hi = mode * 2.0 + 1.0;
    while dlog(hi) > 0.0 {
        hi *= 2.0;
    }
    let right = bisect(|y| dlog(y), mode, hi, true);
    let v_minus = (left - mode) * (0.5 * (log_h(left) - log_h_mode)).exp();
    let v_plus = (right - mode) * (0.5 * (log_h(right) - log_h_mode)).exp();
    loop {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        let v = v_minus + (v_plus - v_minus) * rng.random::<f64>();
        let y = v / u + mode;
        if y <= 0.0 {
            continue;
        }
        if 2.0 * u.ln() <= log_h(y) - log_h_mode {
            return eta * y;
        }
    }
}

/// Root of a function that is positive at `lo` and negative at `hi`.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, pos_at_lo: bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if (v > 0.0) == pos_at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Normal law restricted to `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalParams {
    mean: f64,
    variance: f64,
    lower: f64,
    upper: f64,
}

impl TruncNormalParams {
    pub fn new(mean: f64, variance: f64, lower: f64, upper: f64) -> Result<Self, DistError> {
        if !mean.is_finite() {
            return Err(DistError::Parameter { name: "mean", value: mean });
        }
        positive("variance", variance)?;
        if lower.is_nan() || upper.is_nan() || lower >= upper {
            return Err(DistError::EmptyInterval { lower, upper });
        }
        Ok(Self { mean, variance, lower, upper })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_trunc_normal_raw(self.mean, self.variance.sqrt(), self.lower, self.upper, rng)
    }
}

pub fn sample_trunc_normal<R: Rng + ?Sized>(params: &TruncNormalParams, rng: &mut R) -> f64 {
    params.sample(rng)
}

/// Threshold (in standard deviations) beyond which tail rejection replaces
/// inversion.
const TAIL_SWITCH: f64 = 4.0;

/// Truncated normal draw on `(lower, upper]`. The result is forced strictly
/// above `lower` and at most `upper` so that thresholding stays consistent.
pub(crate) fn sample_trunc_normal_raw<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> f64 {
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    let z = if a >= TAIL_SWITCH {
        tail_standard(a, b, rng)
    } else if b <= -TAIL_SWITCH {
        -tail_standard(-b, -a, rng)
    } else if a >= 0.0 {
        // upper half: invert the mirrored lower tail for precision
        -invert_standard(-b, -a, rng)
    } else {
        invert_standard(a, b, rng)
    };
    let x = mean + sd * z;
    clamp_open_closed(x, lower, upper)
}

fn clamp_open_closed(x: f64, lower: f64, upper: f64) -> f64 {
    let mut x = x;
    if x > upper {
        x = upper;
    }
    if x <= lower {
        x = lower.next_up();
        if x > upper {
            x = upper;
        }
    }
    x
}

/// Inverse-CDF draw on `(a, b)` with `a < 0`-ish body intervals.
fn invert_standard<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let pa = std_normal_cdf(a);
    let pb = std_normal_cdf(b);
    let u: f64 = rng.random();
    let p = pa + u * (pb - pa);
    if p <= 0.0 {
        return a;
    }
    let z = std_normal_quantile(p);
    z.clamp(a, b)
}

/// Draw on `(a, b)` with `a >= TAIL_SWITCH`: uniform proposal for narrow
/// intervals, otherwise a translated exponential proposal with the optimal
/// rate.
fn tail_standard<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    // uniform proposal is better once the interval is shorter than ~ the
    // exponential proposal's scale
    if (b - a) < 1.0 / rate {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            let u: f64 = rng.random();
            if u.ln() <= 0.5 * (a * a - z * z) {
                return z;
            }
        }
    }
    loop {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        let z = a + e / rate;
        if z > b {
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate).powi(2) {
            return z;
        }
    }
}

/// The elementary laws used by the sampler and the simulation designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StandardDist {
    Normal { mean: f64, variance: f64 },
    /// Gamma with `rate` (not scale).
    Gamma { shape: f64, rate: f64 },
    /// Inverse gamma with `scale`: density `∝ x^(-shape-1) exp(-scale / x)`.
    InverseGamma { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    Uniform { low: f64, high: f64 },
    Logistic { location: f64, scale: f64 },
}

impl StandardDist {
    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            StandardDist::Normal { mean, variance } => {
                if !mean.is_finite() {
                    return Err(DistError::Parameter { name: "mean", value: mean });
                }
                positive("variance", variance)?;
            }
            StandardDist::Gamma { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)?;
            }
            StandardDist::InverseGamma { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)?;
            }
            StandardDist::Exponential { rate } => {
                positive("rate", rate)?;
            }
            StandardDist::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(DistError::EmptyInterval { lower: low, upper: high });
                }
            }
            StandardDist::Logistic { location, scale } => {
                if !location.is_finite() {
                    return Err(DistError::Parameter { name: "location", value: location });
                }
                positive("scale", scale)?;
            }
        }
        Ok(())
    }

    /// Draw one variate after validating the parameters.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, DistError> {
        self.validate()?;
        Ok(self.sample_unchecked(rng))
    }

    pub(crate) fn sample_unchecked<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StandardDist::Normal { mean, variance } => {
                Normal::new(mean, variance.sqrt()).expect("validated").sample(rng)
            }
            StandardDist::Gamma { shape, rate } => {
                Gamma::new(shape, 1.0 / rate).expect("validated").sample(rng)
            }
            StandardDist::InverseGamma { shape, scale } => {
                1.0 / Gamma::new(shape, 1.0 / scale).expect("validated").sample(rng)
            }
            StandardDist::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            StandardDist::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            StandardDist::Logistic { location, scale } => {
                let u: f64 = loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                };
                location + scale * (u / (1.0 - u)).ln()
            }
        }
    }
}

pub fn sample_standard<R: Rng + ?Sized>(dist: &StandardDist, rng: &mut R) -> Result<f64, DistError> {
    dist.sample(rng)
}

/// Logistic CDF.
pub fn logistic_cdf(x: f64, location: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(x - location) / scale).exp())
}
