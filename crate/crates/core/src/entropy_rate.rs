//! The rate function `𝓗_p(ν) = H(ν‖μ_p) + (1/p)(1 - m_p(ν))` (infinite when
//! `m_p(ν) > 1`), the joint rate `J(ν, c)`, and differential-entropy
//! estimators for samples.
//!
//! `rate_hp` evaluates the rate twice: once by direct quadrature of the
//! relative-entropy integrand, and once through `-h(ν) + c_p`. The two
//! routes share no intermediate values and must agree to 1e-8.

use serde::{Deserialize, Serialize};

use crate::analytic::{entropy_closed_form, AnalyticDensity, PExponent};
use crate::error::{invalid, Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::special::{digamma, ln_gamma};

/// Agreement required between the two rate evaluations.
pub const RATE_ROUTE_TOLERANCE: f64 = 1e-8;
const MOMENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateValue {
    pub value: f64,
    pub relative_entropy: f64,
    pub moment_penalty: f64,
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// `c_p = log(2 p^{1/p} Γ(1 + 1/p)) + 1/p`, and `log 2` for `p = ∞`.
pub fn rate_constant(p: PExponent) -> f64 {
    match p {
        PExponent::Infinity => 2f64.ln(),
        PExponent::Finite(p) => (2.0 * p.powf(1.0 / p)).ln() + ln_gamma(1.0 + 1.0 / p) + 1.0 / p,
    }
}

/// `h(ν) = -∫ f log f` by quadrature.
pub fn quadrature_entropy(nu: &AnalyticDensity) -> f64 {
    let extra = match nu.family() {
        crate::analytic::Family::ExpFamily { p, q, .. } => p.max(q),
        crate::analytic::Family::GeneralizedGaussian { p } => p,
        crate::analytic::Family::ScaledGeneralizedGaussian { q, .. } => q,
        crate::analytic::Family::UniformSymmetric { .. } => 0.0,
    };
    -nu.expect(|x| nu.log_density(x), extra)
}

/// Entropy from the closed form when one exists, otherwise by quadrature.
pub fn entropy(nu: &AnalyticDensity) -> f64 {
    entropy_closed_form(nu).unwrap_or_else(|_| quadrature_entropy(nu))
}

/// `H(ν‖μ_p)` by quadrature of `f log(f / g_p)`.
pub fn relative_entropy(nu: &AnalyticDensity, p: PExponent) -> Result<f64> {
    let target = AnalyticDensity::generalized_gaussian(p)?;
    if let Some(h) = target.support_halfwidth() {
        // ν must be absolutely continuous with respect to the uniform law.
        if nu.support_halfwidth().is_none_or(|w| w > h) {
            return Ok(f64::INFINITY);
        }
    }
    let extra = match p {
        PExponent::Finite(p) => p,
        PExponent::Infinity => 0.0,
    };
    let extra = extra.max(match nu.family() {
        crate::analytic::Family::ExpFamily { p, q, .. } => p.max(q),
        crate::analytic::Family::ScaledGeneralizedGaussian { q, .. } => q,
        _ => 0.0,
    });
    Ok(nu.expect(|x| nu.log_density(x) - target.log_density(x), extra))
}

fn moment_penalty(m_p: f64, p: PExponent) -> f64 {
    p.recip() * (1.0 - m_p)
}

fn m_p_of(nu: &AnalyticDensity, p: PExponent) -> f64 {
    nu.moment(p)
}

/// `𝓗_p(ν)`, cross-checked through the entropy identity.
pub fn rate_hp(nu: &AnalyticDensity, p: PExponent) -> Result<RateValue> {
    rate_j(nu, 1.0, p)
}

/// `J(ν, c) = H(ν‖μ_p) + (1/p)(c - m_p(ν))` when `m_p(ν) ≤ c`, else `+∞`.
pub fn rate_j(nu: &AnalyticDensity, c: f64, p: PExponent) -> Result<RateValue> {
    if !(c >= 0.0) {
        return Err(invalid(format!("joint rate needs c >= 0, got {c}")));
    }
    let m_p = m_p_of(nu, p);
    let relative = relative_entropy(nu, p)?;
    let penalty = moment_penalty(m_p, p) + p.recip() * (c - 1.0);
    if m_p > c + MOMENT_SLACK * c.max(1.0) || !relative.is_finite() {
        return Ok(RateValue {
            value: f64::INFINITY,
            relative_entropy: relative,
            moment_penalty: penalty,
        });
    }
    let direct = relative + penalty;
    // Second route: H(ν‖μ_p) = -h(ν) + (1/p) m_p + log Z_p, so
    // J(ν, c) = -h(ν) + c_p + (c - 1)/p.
    let via_entropy = -entropy(nu) + rate_constant(p) + p.recip() * (c - 1.0);
    if (direct - via_entropy).abs() > RATE_ROUTE_TOLERANCE {
        return Err(Error::Numerical(format!(
            "rate routes disagree: direct {direct:.12e} vs entropy identity {via_entropy:.12e}"
        )));
    }
    Ok(RateValue {
        value: direct.max(0.0),
        relative_entropy: relative,
        moment_penalty: penalty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyMethod {
    Spacing,
    Histogram,
}

pub const MIN_SPACING_ATOMS: usize = 100;
pub const MIN_HISTOGRAM_ATOMS: usize = 10;

/// Differential entropy of the law that generated `sample`.
///
/// `Spacing` is the Vasicek m-spacing estimator with `m = ⌊√N⌋`; each
/// log-spacing is centred by its exact uniform-order-statistic mean
/// `ψ(k) - ψ(N+1)`, which removes the usual bias including at the edges.
/// `Histogram` is the plug-in estimator on a Freedman–Diaconis grid with
/// the Miller–Madow correction.
pub fn entropy_estimate(sample: &EmpiricalMeasure, method: EntropyMethod) -> Result<f64> {
    if !sample.is_uniform() {
        return Err(invalid("entropy estimators need equally weighted atoms; resample first"));
    }
    let xs = sample.atoms();
    let n = xs.len();
    match method {
        EntropyMethod::Spacing => {
            if n < MIN_SPACING_ATOMS {
                return Err(Error::TooFewAtoms {
                    needed: MIN_SPACING_ATOMS,
                    got: n,
                });
            }
            let m = (n as f64).sqrt().floor() as usize;
            let psi_n1 = digamma(n as f64 + 1.0);
            let mut acc = 0.0;
            for i in 0..n {
                let lo = i.saturating_sub(m);
                let hi = (i + m).min(n - 1);
                let span = hi - lo;
                let gap = xs[hi] - xs[lo];
                if gap <= 0.0 {
                    return Err(Error::Numerical("tied atoms in spacing estimator".into()));
                }
                acc += gap.ln() - (digamma(span as f64) - psi_n1);
            }
            Ok(acc / n as f64)
        }
        EntropyMethod::Histogram => {
            if n < MIN_HISTOGRAM_ATOMS {
                return Err(Error::TooFewAtoms {
                    needed: MIN_HISTOGRAM_ATOMS,
                    got: n,
                });
            }
            let q = |u: f64| xs[((u * (n - 1) as f64).round() as usize).min(n - 1)];
            let iqr = q(0.75) - q(0.25);
            let range = xs[n - 1] - xs[0];
            if range <= 0.0 {
                return Err(Error::Numerical("degenerate sample".into()));
            }
            let width = if iqr > 0.0 {
                2.0 * iqr / (n as f64).cbrt()
            } else {
                range / (n as f64).sqrt()
            };
            let bins = ((range / width).ceil() as usize).max(1);
            let width = range / bins as f64;
            let mut counts = vec![0usize; bins];
            for &x in xs {
                let k = (((x - xs[0]) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
            let occupied = counts.iter().filter(|&&c| c > 0).count();
            let nf = n as f64;
            let plug_in: f64 = counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let pk = c as f64 / nf;
                    -pk * (pk / width).ln()
                })
                .sum();
            Ok(plug_in + (occupied as f64 - 1.0) / (2.0 * nf))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::sampling::sample_gen_gaussian;
    use rand::Rng;

    fn fin(p: f64) -> PExponent {
        PExponent::Finite(p)
    }

    #[test]
    fn rate_at_mu_p_is_zero() {
        for p in [fin(1.0), fin(1.5), fin(2.0), fin(3.0), PExponent::Infinity] {
            let mu = AnalyticDensity::generalized_gaussian(p).unwrap();
            let r = rate_hp(&mu, p).unwrap();
            assert!(r.value.abs() < 1e-10, "p = {p}");
        }
    }

    #[test]
    fn rate_examples() {
        let nu = AnalyticDensity::scaled_generalized_gaussian(1.0, 0.5).unwrap();
        let r = rate_hp(&nu, fin(2.0)).unwrap();
        let expect = 0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln() - 1.0;
        assert!((r.value - expect).abs() < 1e-10);
        assert!((r.value - 0.418_938_5).abs() < 1e-7);

        let nu = AnalyticDensity::scaled_generalized_gaussian(1.0, 0.9).unwrap();
        assert!((nu.moment(fin(2.0)) - 1.62).abs() < 1e-12);
        assert_eq!(rate_hp(&nu, fin(2.0)).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn rate_constant_matches_gaussian() {
        let c2 = rate_constant(fin(2.0));
        assert!((c2 - (0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln())).abs() < 1e-14);
        assert_eq!(rate_constant(PExponent::Infinity), 2f64.ln());
    }

    #[test]
    fn uniform_rate_at_infinity() {
        // H_∞(U[-h, h]) = log(2) - log(2h) for h ≤ 1
        let u = AnalyticDensity::uniform(0.5).unwrap();
        let r = rate_hp(&u, PExponent::Infinity).unwrap();
        assert!((r.value - 2f64.ln()).abs() < 1e-12);
        let wide = AnalyticDensity::uniform(1.5).unwrap();
        assert_eq!(rate_hp(&wide, PExponent::Infinity).unwrap().value, f64::INFINITY);
        let g = AnalyticDensity::generalized_gaussian(fin(2.0)).unwrap();
        assert_eq!(rate_hp(&g, PExponent::Infinity).unwrap().value, f64::INFINITY);
    }

    #[test]
    fn joint_rate_examples() {
        let p = fin(2.0);
        let mu = AnalyticDensity::generalized_gaussian(p).unwrap();
        assert!(rate_j(&mu, 1.0, p).unwrap().value.abs() < 1e-10);
        let nu = AnalyticDensity::scaled_generalized_gaussian(1.0, 0.5).unwrap();
        assert_eq!(rate_j(&nu, 0.4, p).unwrap().value, f64::INFINITY);
        let j1 = rate_j(&nu, 1.0, p).unwrap().value;
        assert!((j1 - rate_hp(&nu, p).unwrap().value).abs() < 1e-14);
        // affine in c with slope 1/p above m_p(ν) = 0.5
        let a = rate_j(&nu, 0.7, p).unwrap().value;
        let b = rate_j(&nu, 1.9, p).unwrap().value;
        assert!(((b - a) / 1.2 - 0.5).abs() < 1e-10);
        assert!(rate_j(&nu, -1.0, p).is_err());
    }

    fn sample(seed: u64, f: impl Fn(&mut RngStream) -> f64) -> EmpiricalMeasure {
        let mut rng = RngStream::new(seed, 0);
        EmpiricalMeasure::uniform((0..100_000).map(|_| f(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn spacing_estimator_examples() {
        let g = EmpiricalMeasure::uniform(sample_gen_gaussian(fin(2.0), 100_000, &mut RngStream::new(1, 0))).unwrap();
        let h = entropy_estimate(&g, EntropyMethod::Spacing).unwrap();
        assert!((h - 1.418_938_5).abs() < 0.02, "h = {h}");

        let u = sample(2, |r| r.random_range(-1.0..1.0));
        let h = entropy_estimate(&u, EntropyMethod::Spacing).unwrap();
        assert!((h - 2f64.ln()).abs() < 0.02, "h = {h}");

        let l = sample(3, |r| {
            let e: f64 = -(1.0 - r.random::<f64>()).ln() * 0.5;
            if r.random::<bool>() { e } else { -e }
        });
        let h = entropy_estimate(&l, EntropyMethod::Spacing).unwrap();
        assert!((h - 1.0).abs() < 0.02, "h = {h}");
    }

    #[test]
    fn histogram_estimator_converges() {
        let g = EmpiricalMeasure::uniform(sample_gen_gaussian(fin(2.0), 100_000, &mut RngStream::new(4, 0))).unwrap();
        let h = entropy_estimate(&g, EntropyMethod::Histogram).unwrap();
        assert!((h - 1.418_938_5).abs() < 0.02, "h = {h}");
    }

    #[test]
    fn estimator_rejects_small_or_weighted_samples() {
        let small = EmpiricalMeasure::uniform((0..50).map(|i| i as f64).collect()).unwrap();
        assert!(matches!(
            entropy_estimate(&small, EntropyMethod::Spacing),
            Err(Error::TooFewAtoms { .. })
        ));
        let weighted = EmpiricalMeasure::weighted(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(entropy_estimate(&weighted, EntropyMethod::Histogram).is_err());
    }
}
