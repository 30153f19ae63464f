//! Closed-form densities, moments, entropies and regime thresholds.
//!
//! Every density here is symmetric about zero, so integrals are evaluated on
//! the half line `[0, cutoff]` and doubled. The cutoff is chosen so that the
//! neglected tail is below `e^{-60}` relative to the peak, even after
//! multiplication by the polynomial weight of the integrand.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::special::{gamma_p, gamma_q, ln_gamma};

/// An exponent in `[1, ∞]`, with `∞` kept as its own case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PExponent {
    Finite(f64),
    Infinity,
}

impl PExponent {
    pub fn finite(p: f64) -> Result<Self> {
        if p.is_finite() && p >= 1.0 {
            Ok(PExponent::Finite(p))
        } else if p == f64::INFINITY {
            Ok(PExponent::Infinity)
        } else {
            Err(invalid(format!("exponent must lie in [1, inf], got {p}")))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, PExponent::Infinity)
    }

    /// The finite value, or an error naming `what` for `∞`.
    pub fn value(self, what: &'static str) -> Result<f64> {
        match self {
            PExponent::Finite(p) => Ok(p),
            PExponent::Infinity => Err(Error::InfiniteExponent(what)),
        }
    }

    /// `1/p` with the convention `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        match self {
            PExponent::Finite(p) => 1.0 / p,
            PExponent::Infinity => 0.0,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            PExponent::Finite(p) => p,
            PExponent::Infinity => f64::INFINITY,
        }
    }
}

impl PartialOrd for PExponent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for PExponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PExponent::Finite(p) => write!(f, "{p}"),
            PExponent::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for PExponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(PExponent::Infinity);
        }
        let p: f64 = s
            .parse()
            .map_err(|_| invalid(format!("cannot parse exponent {s:?}")))?;
        PExponent::finite(p)
    }
}

impl Serialize for PExponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PExponent::Finite(p) => serializer.serialize_f64(*p),
            PExponent::Infinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PExponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(deserializer)? {
            Raw::Num(p) => PExponent::finite(p),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `μ_p`: density ∝ `exp(-|y|^p / p)`.
    GeneralizedGaussian { p: f64 },
    /// `μ_{q,β}`: density ∝ `exp(-|x|^q / (βq))`.
    ScaledGeneralizedGaussian { q: f64, beta: f64 },
    /// `exp(-1 - κ₀ - κ_p|x|^p - κ_q|x|^q)` with κ₀ fixed by normalization.
    ExpFamily {
        kappa_p: f64,
        kappa_q: f64,
        p: f64,
        q: f64,
    },
    UniformSymmetric { halfwidth: f64 },
}

/// A symmetric density on the line with its normalizing constant cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticDensity {
    family: Family,
    log_norm: f64,
}

fn tol() -> Tolerance {
    Tolerance::default()
}

impl AnalyticDensity {
    /// `μ_p`; for `p = ∞` this is the uniform law on `[-1, 1]`.
    pub fn generalized_gaussian(p: PExponent) -> Result<Self> {
        match p {
            PExponent::Infinity => Self::uniform(1.0),
            PExponent::Finite(p) => {
                if !(p >= 1.0 && p.is_finite()) {
                    return Err(invalid(format!("generalized Gaussian needs p >= 1, got {p}")));
                }
                Ok(AnalyticDensity {
                    family: Family::GeneralizedGaussian { p },
                    log_norm: -power_log_partition(p, p.powf(1.0 / p)),
                })
            }
        }
    }

    /// `μ_{q,β}`, the generalized Gaussian with `m_q = β`.
    pub fn scaled_generalized_gaussian(q: f64, beta: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("need q > 0 and beta > 0, got q={q}, beta={beta}")));
        }
        Ok(AnalyticDensity {
            family: Family::ScaledGeneralizedGaussian { q, beta },
            log_norm: -power_log_partition(q, (beta * q).powf(1.0 / q)),
        })
    }

    /// Two-power exponential family. The coefficient of the larger power must
    /// be positive; the other may have either sign.
    pub fn exp_family(kappa_p: f64, kappa_q: f64, p: f64, q: f64) -> Result<Self> {
        if !(p > 0.0 && q > 0.0 && p.is_finite() && q.is_finite()) {
            return Err(invalid(format!("exp family powers must be positive, got p={p}, q={q}")));
        }
        if !normalizable(&[(p, kappa_p), (q, kappa_q)]) {
            return Err(invalid(format!(
                "exp family with kappa_p={kappa_p}, kappa_q={kappa_q} is not normalizable"
            )));
        }
        let mut d = AnalyticDensity {
            family: Family::ExpFamily {
                kappa_p,
                kappa_q,
                p,
                q,
            },
            log_norm: 0.0,
        };
        let cutoff = d.integration_cutoff(0.0);
        let shift = d.potential_min(cutoff);
        let z = integrate(|x| (shift - d.potential(x)).exp(), 0.0, cutoff, tol());
        if !z.converged || !(z.value > 0.0) {
            return Err(Error::Numerical("exp family normalization did not converge".into()));
        }
        d.log_norm = shift - (2.0 * z.value).ln();
        Ok(d)
    }

    pub fn uniform(halfwidth: f64) -> Result<Self> {
        if !(halfwidth > 0.0 && halfwidth.is_finite()) {
            return Err(invalid(format!("uniform halfwidth must be positive, got {halfwidth}")));
        }
        Ok(AnalyticDensity {
            family: Family::UniformSymmetric { halfwidth },
            log_norm: -(2.0 * halfwidth).ln(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `log Z` offset: the density is `exp(log_norm - potential(x))`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// For the exponential family parameterization, `κ₀ = -1 - log_norm`.
    pub fn kappa0(&self) -> f64 {
        -1.0 - self.log_norm
    }

    /// Shape and scale `(r, s)` when the density is `∝ exp(-(|x|/s)^r)`.
    pub fn power_form(&self) -> Option<(f64, f64)> {
        match self.family {
            Family::GeneralizedGaussian { p } => Some((p, p.powf(1.0 / p))),
            Family::ScaledGeneralizedGaussian { q, beta } => Some((q, (beta * q).powf(1.0 / q))),
            Family::ExpFamily {
                kappa_p,
                kappa_q,
                p,
                q,
            } => {
                if kappa_q == 0.0 && kappa_p > 0.0 {
                    Some((p, kappa_p.powf(-1.0 / p)))
                } else if kappa_p == 0.0 && kappa_q > 0.0 {
                    Some((q, kappa_q.powf(-1.0 / q)))
                } else {
                    None
                }
            }
            Family::UniformSymmetric { .. } => None,
        }
    }

    pub fn support_halfwidth(&self) -> Option<f64> {
        match self.family {
            Family::UniformSymmetric { halfwidth } => Some(halfwidth),
            _ => None,
        }
    }

    /// Negative unnormalized log-density.
    pub fn potential(&self, x: f64) -> f64 {
        let a = x.abs();
        match self.family {
            Family::GeneralizedGaussian { p } => a.powf(p) / p,
            Family::ScaledGeneralizedGaussian { q, beta } => a.powf(q) / (beta * q),
            Family::ExpFamily {
                kappa_p,
                kappa_q,
                p,
                q,
            } => {
                let mut v = 0.0;
                if kappa_p != 0.0 {
                    v += kappa_p * a.powf(p);
                }
                if kappa_q != 0.0 {
                    v += kappa_q * a.powf(q);
                }
                v
            }
            Family::UniformSymmetric { halfwidth } => {
                if a <= halfwidth {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        self.log_norm - self.potential(x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    fn potential_min(&self, cutoff: f64) -> f64 {
        match self.family {
            Family::ExpFamily { kappa_q, kappa_p, .. } if kappa_q < 0.0 || kappa_p < 0.0 => {
                let grid = 2000;
                (0..=grid)
                    .map(|i| self.potential(cutoff * i as f64 / grid as f64))
                    .fold(f64::INFINITY, f64::min)
                    .min(0.0)
            }
            _ => 0.0,
        }
    }

    /// Half-line integration limit for integrands `|x|^extra_power · f(x)`.
    pub fn integration_cutoff(&self, extra_power: f64) -> f64 {
        if let Some(h) = self.support_halfwidth() {
            return h;
        }
        let margin = 60.0;
        let enough = |c: f64, floor: f64| {
            self.potential(c) - floor >= margin + extra_power * c.max(1.0).ln()
        };
        let mut hi = 1.0;
        let mut floor = self.potential_min(hi);
        while !enough(hi, floor) {
            hi *= 2.0;
            floor = self.potential_min(hi);
            if hi > 1e12 {
                break;
            }
        }
        let mut lo = hi / 2.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if enough(mid, floor) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// `∫ g(x) f(x) dx` for even `g`, by quadrature on the half line.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G, extra_power: f64) -> f64 {
        let cutoff = self.integration_cutoff(extra_power);
        let q = integrate(|x| g(x) * self.density(x), 0.0, cutoff, tol());
        2.0 * q.value
    }

    /// `m_r = ∫|x|^r dν` by quadrature, independent of the closed forms.
    pub fn moment_quadrature(&self, r: f64) -> f64 {
        self.expect(|x| x.powf(r), r)
    }

    /// `m_r(ν)`; `r = ∞` gives the support halfwidth (or `+∞`).
    pub fn moment(&self, r: PExponent) -> f64 {
        let r = match r {
            PExponent::Infinity => return self.support_halfwidth().unwrap_or(f64::INFINITY),
            PExponent::Finite(r) => r,
        };
        self.moment_finite(r)
    }

    /// `m_r(ν)` for any real `r ≥ 0` (closed form where available).
    pub fn moment_finite(&self, r: f64) -> f64 {
        if let Some(h) = self.support_halfwidth() {
            return h.powf(r) / (r + 1.0);
        }
        if let Some((shape, scale)) = self.power_form() {
            return power_moment(shape, scale, r);
        }
        self.moment_quadrature(r)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.5;
        }
        let tail = self.survival_half(x.abs());
        if x > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    /// CDF at ascending points; quadrature cases integrate only between
    /// neighbours.
    pub fn cdf_sorted(&self, xs: &[f64]) -> Vec<f64> {
        if self.power_form().is_some() || self.support_halfwidth().is_some() || xs.len() < 8 {
            return xs.iter().map(|x| self.cdf(*x)).collect();
        }
        let mut out = Vec::with_capacity(xs.len());
        let mut prev = match xs.first() {
            Some(x) => *x,
            None => return out,
        };
        let mut acc = self.cdf(prev);
        for &x in xs {
            if x > prev {
                acc += integrate(|t| self.density(t), prev, x, tol()).value;
                prev = x;
            }
            out.push(acc.clamp(0.0, 1.0));
        }
        out
    }

    /// `P(X > a)` for `a ≥ 0`.
    fn survival_half(&self, a: f64) -> f64 {
        if let Some(h) = self.support_halfwidth() {
            return ((h - a) / (2.0 * h)).clamp(0.0, 0.5);
        }
        if let Some((shape, scale)) = self.power_form() {
            return 0.5 * gamma_q(1.0 / shape, (a / scale).powf(shape));
        }
        let cutoff = self.integration_cutoff(0.0);
        if a >= cutoff {
            return 0.0;
        }
        if a < 0.5 * cutoff {
            let inner = integrate(|x| self.density(x), 0.0, a, tol()).value;
            (0.5 - inner).max(0.0)
        } else {
            integrate(|x| self.density(x), a, cutoff, tol()).value
        }
    }

    /// Quantile function on `(0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.support_halfwidth().map_or(f64::NEG_INFINITY, |h| -h);
        }
        if u >= 1.0 {
            return self.support_halfwidth().unwrap_or(f64::INFINITY);
        }
        if u == 0.5 {
            return 0.0;
        }
        if u < 0.5 {
            return -self.quantile(1.0 - u);
        }
        let tail = 1.0 - u;
        if let Some(h) = self.support_halfwidth() {
            return h * (2.0 * u - 1.0);
        }
        // Bracket then safeguarded Newton on the survival function.
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.survival_half(hi) > tail {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let s = self.survival_half(x) - tail;
            if s > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let step = s / self.density(x);
            let mut next = x + step;
            if !(next > lo && next < hi) || !step.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
                return next;
            }
            x = next;
        }
        x
    }
}

/// `log(2 s Γ(1 + 1/r))`, the log-partition of `exp(-(|x|/s)^r)`.
fn power_log_partition(r: f64, s: f64) -> f64 {
    (2.0 * s).ln() + ln_gamma(1.0 + 1.0 / r)
}

/// `∫|x|^m dν` for `ν ∝ exp(-(|x|/s)^r)`: `s^m Γ((m+1)/r) / Γ(1/r)`.
fn power_moment(r: f64, s: f64, m: f64) -> f64 {
    if m == 0.0 {
        return 1.0;
    }
    (m * s.ln() + ln_gamma((m + 1.0) / r) - ln_gamma(1.0 / r)).exp()
}

/// Whether `exp(-Σ c_k |x|^{r_k})` is integrable on the line.
pub(crate) fn normalizable(terms: &[(f64, f64)]) -> bool {
    terms
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .is_some_and(|(_, c)| *c > 0.0)
}

/// `m_q(μ_p) = p^{q/p} Γ((q+1)/p) / Γ(1/p)`.
pub fn moment_mu_p(p: PExponent, q: f64) -> Result<f64> {
    let p = p.value("moment_mu_p (use 1/(q+1) for the uniform case)")?;
    if !(q >= 1.0 && q.is_finite()) {
        return Err(invalid(format!("moment order must be finite and >= 1, got {q}")));
    }
    Ok(power_moment(p, p.powf(1.0 / p), q))
}

/// `m_p(μ_{q,β}) = β^{p/q} q^{p/q} Γ((p+1)/q) / Γ(1/q)`.
pub fn moment_scaled_gg(p: f64, q: f64, beta: f64) -> f64 {
    power_moment(q, (beta * q).powf(1.0 / q), p)
}

/// The two β thresholds separating the regimes of the constrained
/// maximum-entropy problem with `C = [0, β]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Largest β with `m_p(μ_{q,β}) ≤ 1`.
    pub beta_small: f64,
    /// `m_q(μ_p)`; above it the `q`-moment constraint does not bind.
    pub beta_large: f64,
}

pub fn thresholds(p: PExponent, q: f64) -> Result<RegimeThresholds> {
    let p = p.value("regime thresholds")?;
    if !(q >= 1.0 && q < p) {
        return Err(invalid(format!("thresholds need 1 <= q < p, got q={q}, p={p}")));
    }
    let beta_small = ((q / p) * (ln_gamma(1.0 / q) - ln_gamma((p + 1.0) / q))).exp() / q;
    let beta_large = moment_mu_p(PExponent::Finite(p), q)?;
    Ok(RegimeThresholds {
        beta_small,
        beta_large,
    })
}

/// Differential entropy for the families that have a closed form.
pub fn entropy_closed_form(d: &AnalyticDensity) -> Result<f64> {
    if let Some(h) = d.support_halfwidth() {
        return Ok((2.0 * h).ln());
    }
    match d.power_form() {
        // E[(|x|/s)^r] = 1/r under exp(-(|x|/s)^r).
        Some((r, _)) => Ok(-d.log_norm + 1.0 / r),
        None => Err(invalid(
            "no closed-form entropy for a two-parameter exp family; use quadrature_entropy",
        )),
    }
}

/// CDF of `μ_p`; the uniform CDF on `[-1, 1]` for `p = ∞`.
pub fn cdf_mu_p(p: PExponent, y: f64) -> f64 {
    match p {
        PExponent::Infinity => ((y + 1.0) / 2.0).clamp(0.0, 1.0),
        PExponent::Finite(p) => {
            let half = 0.5 * gamma_p(1.0 / p, y.abs().powf(p) / p);
            if y >= 0.0 {
                0.5 + half
            } else {
                0.5 - half
            }
        }
    }
}
