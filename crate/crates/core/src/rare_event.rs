//! Rare events `{m_q(L_{n,p}) ∈ C}` under the cone measure.
//!
//! Everything works in Y-space: with `Y ~ μ_p^{⊗n}` and `X = Y/‖Y‖_p`,
//!
//! ```text
//! m_q(L_{n,p}) = (Σ|Y_i|^q / n) / (Σ|Y_i|^p / n)^{q/p}
//! ```
//!
//! so the event is a function of `Y` and importance weights are ordinary
//! likelihood ratios of product-like densities.
//!
//! Below the typical value the optimal tilt `ν*` has `m_p(ν*) < 1` once `β`
//! is small, and the missing `p`-th moment sits in a single large
//! coordinate. The importance proposal therefore mixes an i.i.d. bulk drawn
//! from a scaled `ν*` with one "condensate" coordinate at a uniformly
//! random position; its density is evaluated exactly by summing over that
//! position.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{moment_mu_p, thresholds, AnalyticDensity, PExponent};
use crate::entropy_rate::entropy;
use crate::error::{invalid, Error, Result};
use crate::maxent::{solve_maxent, solve_nu_star, PowerConstraint};
use crate::measures::Interval;
use crate::rng::RngStream;
use crate::sampling::{surface_log_weight, systematic_resample, GenGaussian, SpherePoint};
use crate::special::ln_gamma;

pub const MIN_BUDGET: usize = 1000;
pub const MIN_RELIABLE_ESS: f64 = 30.0;
/// Attempts (sweeps) allowed for the chain to reach the event.
pub const MAX_INIT_ATTEMPTS: usize = 10_000;
const CHUNK: usize = 1024;
const TARGET_ACCEPTANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    TiltedIs,
}

/// `log_prob` estimates `log P(m_q(L_{n,p}) ∈ interval)`; `std_error` is
/// its standard error (equivalently the relative error of the probability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEventEstimate {
    pub n: usize,
    pub p: PExponent,
    pub q: f64,
    pub interval: Interval,
    pub log_prob: f64,
    pub std_error: f64,
    pub method: Method,
    pub n_samples: usize,
    pub hits: usize,
    pub ess: f64,
    pub reliable: bool,
}

#[inline]
fn pow_abs(a: f64, r: f64) -> f64 {
    if r == 1.0 {
        a
    } else if r == 2.0 {
        a * a
    } else {
        a.powf(r)
    }
}

/// `m_q` of the empirical measure of `n^{1/p} Y/‖Y‖_p`.
pub fn event_moment(y: &[f64], p: PExponent, q: f64) -> f64 {
    let n = y.len() as f64;
    let sq: f64 = y.iter().map(|v| pow_abs(v.abs(), q)).sum::<f64>() / n;
    match p {
        PExponent::Infinity => sq / pow_abs(y.iter().fold(0.0, |m, v| m.max(v.abs())), q),
        PExponent::Finite(p) => {
            let sp: f64 = y.iter().map(|v| pow_abs(v.abs(), p)).sum::<f64>() / n;
            sq / sp.powf(q / p)
        }
    }
}

fn log_norm_mu_p(p: f64) -> f64 {
    (2.0 * p.powf(1.0 / p)).ln() + ln_gamma(1.0 + 1.0 / p)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact sampler for symmetric densities `∝ exp(-V(|x|))` from the
/// exponential families used as tilts.
///
/// Power laws are drawn directly. Two-term potentials are unimodal in `|x|`,
/// so a piecewise-constant envelope over a grid of cells (each at the cell's
/// minimum of `V`) plus a tangent exponential tail beyond the last cell
/// dominates the density everywhere; draws are accepted against it.
#[derive(Debug, Clone)]
pub struct ExpFamilySampler {
    density: AnalyticDensity,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Power { base: GenGaussian, scale: f64 },
    Envelope(Box<Envelope>),
}

#[derive(Debug, Clone)]
struct Envelope {
    terms: [(f64, f64); 2],
    edges: Vec<f64>,
    floors: Vec<f64>,
    cumulative: Vec<f64>,
    tail_value: f64,
    tail_slope: f64,
}

const ENVELOPE_CELLS: usize = 512;

impl Envelope {
    fn potential(&self, a: f64) -> f64 {
        self.terms.iter().filter(|t| t.1 != 0.0).map(|(r, k)| k * a.powf(*r)).sum()
    }

    fn slope(&self, a: f64) -> f64 {
        self.terms.iter().filter(|t| t.1 != 0.0).map(|(r, k)| k * r * a.powf(r - 1.0)).sum()
    }

    fn curvature(&self, a: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.1 != 0.0)
            .map(|(r, k)| k * r * (r - 1.0) * a.powf(r - 2.0))
            .sum()
    }

    fn new(terms: [(f64, f64); 2], cutoff: f64) -> Result<Self> {
        let mut env = Envelope {
            terms,
            edges: Vec::new(),
            floors: Vec::new(),
            cumulative: Vec::new(),
            tail_value: 0.0,
            tail_slope: 0.0,
        };
        // the minimizer of V on [0, ∞)
        let [(r1, k1), (r2, k2)] = terms;
        let mode = if k1 < 0.0 && k2 > 0.0 && r2 > r1 {
            (r1 * -k1 / (r2 * k2)).powf(1.0 / (r2 - r1))
        } else if k2 < 0.0 && k1 > 0.0 && r1 > r2 {
            (r2 * -k2 / (r1 * k1)).powf(1.0 / (r1 - r2))
        } else if k1 >= 0.0 && k2 >= 0.0 {
            0.0
        } else {
            return Err(invalid("potential is not bounded below"));
        };
        let mut c = cutoff.max(2.0 * mode);
        let mut doublings = 0;
        while !(env.curvature(c) > 0.0 && env.slope(c) > 0.0) {
            c *= 2.0;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::Numerical("no convex tail found for envelope".into()));
            }
        }
        let shift = env.potential(mode);
        env.edges = (0..=ENVELOPE_CELLS).map(|i| c * i as f64 / ENVELOPE_CELLS as f64).collect();
        let mut total = 0.0;
        for w in env.edges.windows(2) {
            let (l, r) = (w[0], w[1]);
            let floor = if (l..=r).contains(&mode) {
                shift
            } else {
                env.potential(l).min(env.potential(r))
            };
            env.floors.push(floor);
            total += (r - l) * (shift - floor).exp();
            env.cumulative.push(total);
        }
        env.tail_value = env.potential(c);
        env.tail_slope = env.slope(c);
        total += (shift - env.tail_value).exp() / env.tail_slope;
        env.cumulative.push(total);
        for v in env.cumulative.iter_mut() {
            *v /= total;
        }
        Ok(env)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let c = *self.edges.last().expect("edges");
        loop {
            let u: f64 = rng.random();
            let cell = self.cumulative.partition_point(|v| *v < u);
            let (a, bound) = if cell < self.floors.len() {
                let (l, r) = (self.edges[cell], self.edges[cell + 1]);
                (l + (r - l) * rng.random::<f64>(), self.floors[cell])
            } else {
                let e: f64 = rand_distr::Distribution::sample(&rand_distr::Exp1, rng);
                let a = c + e / self.tail_slope;
                (a, self.tail_value + self.tail_slope * (a - c))
            };
            let log_accept = bound - self.potential(a);
            if log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept {
                return if rng.random::<bool>() { a } else { -a };
            }
        }
    }
}

impl ExpFamilySampler {
    pub fn new(density: AnalyticDensity) -> Result<Self> {
        use crate::analytic::Family;
        if let Some((r, sigma)) = density.power_form() {
            // (|x|/σ)^r = |Y|^r / r  ⇒  x = σ r^{-1/r} Y with Y ~ μ_r
            return Ok(ExpFamilySampler {
                density,
                kind: SamplerKind::Power {
                    base: GenGaussian::new(PExponent::Finite(r)),
                    scale: sigma * r.powf(-1.0 / r),
                },
            });
        }
        match density.family() {
            Family::ExpFamily {
                kappa_p,
                kappa_q,
                p,
                q,
            } => {
                let env = Envelope::new([(p, kappa_p), (q, kappa_q)], density.integration_cutoff(0.0))?;
                Ok(ExpFamilySampler {
                    density,
                    kind: SamplerKind::Envelope(Box::new(env)),
                })
            }
            _ => Err(invalid("sampler needs a power-law or two-term exponential-family density")),
        }
    }

    pub fn density(&self) -> &AnalyticDensity {
        &self.density
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SamplerKind::Power { base, scale } => scale * base.draw(rng),
            SamplerKind::Envelope(env) => env.draw(rng),
        }
    }
}

/// One large coordinate `±|M + τZ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condensate {
    pub location: f64,
    pub spread: f64,
}

impl Condensate {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        let a = (self.location + self.spread * z).abs();
        if rng.random::<bool>() {
            a
        } else {
            -a
        }
    }

    fn log_density(&self, y: f64) -> f64 {
        let a = y.abs();
        let lphi = |u: f64| -0.5 * (u / self.spread).powi(2) - (self.spread * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let (u, v) = (lphi(a - self.location), lphi(a + self.location));
        let m = u.max(v);
        m + ((u - m).exp() + (v - m).exp()).ln() - std::f64::consts::LN_2
    }
}

/// The Y-space importance proposal for one `(p, q, n, interval)`.
#[derive(Debug, Clone)]
pub struct ProposalDesign {
    pub p: f64,
    pub q: f64,
    pub n: usize,
    pub bulk_scale: f64,
    pub condensate: Option<Condensate>,
    bulk: Option<ExpFamilySampler>,
    mu_p: GenGaussian,
}

impl ProposalDesign {
    /// No tilt: `μ_p^{⊗n}` itself.
    pub fn untilted(p: f64, q: f64, n: usize) -> Self {
        ProposalDesign {
            p,
            q,
            n,
            bulk_scale: 1.0,
            condensate: None,
            bulk: None,
            mu_p: GenGaussian::new(PExponent::Finite(p)),
        }
    }

    /// Chooses the tilt for the event `m_q(L) ∈ interval`.
    pub fn for_event(p: f64, q: f64, n: usize, interval: Interval) -> Result<Self> {
        let t = thresholds(PExponent::Finite(p), q)?;
        let typical = t.beta_large;
        if interval.contains(typical) {
            return Ok(Self::untilted(p, q, n));
        }
        let mut design = Self::untilted(p, q, n);
        if interval.hi < typical {
            let sol = solve_nu_star(PExponent::Finite(p), q, interval.hi)?;
            let nu = sol.density()?;
            let (m_p, m_q) = (sol.m_p_value, sol.m_q_value);
            design.bulk = Some(ExpFamilySampler::new(nu)?);
            if m_p < 1.0 - 1e-9 {
                let (s, location) = condensate_design(p, q, n, interval.hi, &nu, m_p, m_q)?;
                design.bulk_scale = s;
                if location > 0.0 {
                    let spread = ((p - 1.0) * location.powf(p - 2.0)).powf(-0.5).max(1e-3);
                    design.condensate = Some(Condensate { location, spread });
                }
            }
        } else {
            let sol = solve_maxent(&[PowerConstraint::at_most(p, 1.0), PowerConstraint::at_least(q, interval.lo)])?;
            let params = sol.params(p, q)?;
            design.bulk = Some(ExpFamilySampler::new(params.density()?)?);
        }
        Ok(design)
    }

    pub fn is_tilted(&self) -> bool {
        self.bulk.is_some()
    }

    fn log_bulk(&self, y: f64) -> f64 {
        match &self.bulk {
            Some(b) => b.density().log_density(y / self.bulk_scale) - self.bulk_scale.ln(),
            None => -y.abs().powf(self.p) / self.p - log_norm_mu_p(self.p),
        }
    }

    /// Fills `y` with one proposal draw.
    pub fn draw<R: Rng + ?Sized>(&self, y: &mut [f64], rng: &mut R) {
        match &self.bulk {
            Some(b) => {
                for v in y.iter_mut() {
                    *v = self.bulk_scale * b.draw(rng);
                }
            }
            None => self.mu_p.fill(y, rng),
        }
        if let Some(c) = &self.condensate {
            let j = rng.random_range(0..y.len());
            y[j] = c.draw(rng);
        }
    }

    /// `log dμ_p^{⊗n}/dq (y)`; zero when untilted.
    pub fn log_weight(&self, y: &[f64], scratch: &mut Vec<f64>) -> f64 {
        if !self.is_tilted() {
            return 0.0;
        }
        let lnz = log_norm_mu_p(self.p);
        let log_target: f64 = y.iter().map(|v| -v.abs().powf(self.p) / self.p - lnz).sum();
        let log_bulk: Vec<f64> = y.iter().map(|v| self.log_bulk(*v)).collect();
        let mut log_q: f64 = log_bulk.iter().sum();
        if let Some(c) = &self.condensate {
            scratch.clear();
            scratch.extend(y.iter().zip(&log_bulk).map(|(v, lb)| c.log_density(*v) - lb));
            log_q += log_sum_exp(scratch) - (y.len() as f64).ln();
        }
        log_target - log_q
    }
}

/// Picks the bulk scale `s` and condensate location `M` minimizing the
/// typical log-weight `(n-1) H(ν*_s ‖ μ_p) + M^p/p` while keeping the
/// typical proposal point inside `m_q ≤ hi`.
fn condensate_design(
    p: f64,
    q: f64,
    n: usize,
    hi: f64,
    nu: &AnalyticDensity,
    m_p: f64,
    m_q: f64,
) -> Result<(f64, f64)> {
    let h = entropy(nu);
    let lnz = log_norm_mu_p(p);
    let bulk = (n - 1) as f64;
    let nf = n as f64;
    let ratio = |s: f64, m: f64| {
        let num = (bulk * s.powf(q) * m_q + m.powf(q)) / nf;
        let den = ((bulk * s.powf(p) * m_p + m.powf(p)) / nf).powf(q / p);
        num / den
    };
    let min_location = |s: f64| -> Option<f64> {
        if ratio(s, 0.0) <= hi {
            return Some(0.0);
        }
        let upper = 10.0 * nf.powf(1.0 / p) * s.max(1.0);
        let steps = 2000;
        let mut prev = 0.0;
        for k in 1..=steps {
            let m = upper * k as f64 / steps as f64;
            if ratio(s, m) <= hi {
                let (mut lo, mut up) = (prev, m);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + up);
                    if ratio(s, mid) <= hi {
                        up = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(up);
            }
            prev = m;
        }
        None
    };
    let cost = |log_s: f64| -> f64 {
        let s = log_s.exp();
        match min_location(s) {
            Some(m) => bulk * (-h - log_s + s.powf(p) * m_p / p + lnz) + m.powf(p) / p,
            None => f64::INFINITY,
        }
    };
    let (a, b) = (0.25f64.ln(), 2.0f64.ln());
    let grid = 48;
    let xs: Vec<f64> = (0..=grid).map(|i| a + (b - a) * i as f64 / grid as f64).collect();
    let costs: Vec<f64> = xs.iter().map(|x| cost(*x)).collect();
    let best = (0..=grid)
        .min_by(|&i, &j| costs[i].total_cmp(&costs[j]))
        .expect("nonempty grid");
    if !costs[best].is_finite() {
        return Err(Error::Numerical(format!(
            "no proposal scale places the typical point inside m_q <= {hi} at n = {n}"
        )));
    }
    let (mut lo, mut up) = (xs[best.saturating_sub(1)], xs[(best + 1).min(grid)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = up - g * (up - lo);
    let mut x2 = lo + g * (up - lo);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - g * (up - lo);
            f1 = cost(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (up - lo);
            f2 = cost(x2);
        }
    }
    let log_s = if f1 <= f2 { x1 } else { x2 };
    let log_s = if cost(log_s) <= costs[best] { log_s } else { xs[best] };
    let s = log_s.exp();
    Ok((s, min_location(s).expect("finite cost")))
}

fn validate_exponents(p: PExponent, q: f64) -> Result<()> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(invalid(format!("q must be finite and at least 1, got {q}")));
    }
    if let PExponent::Finite(pv) = p {
        if q >= pv {
            return Err(invalid(format!("q must be smaller than p, got q={q}, p={pv}")));
        }
    }
    Ok(())
}

/// Estimates `P(m_q(L_{n,p}) ∈ interval)` under the cone measure.
pub fn estimate_rare_prob(
    p: PExponent,
    q: f64,
    n: usize,
    interval: Interval,
    method: Method,
    budget: usize,
    rng: &RngStream,
) -> Result<RareEventEstimate> {
    validate_exponents(p, q)?;
    if budget < MIN_BUDGET {
        return Err(invalid(format!("budget must be at least {MIN_BUDGET}, got {budget}")));
    }
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    let mut estimate = RareEventEstimate {
        n,
        p,
        q,
        interval,
        log_prob: f64::NEG_INFINITY,
        std_error: f64::INFINITY,
        method,
        n_samples: budget,
        hits: 0,
        ess: 0.0,
        reliable: false,
    };
    // Jensen: n^{q/p - 1} <= m_q(L) <= 1.
    let floor = (n as f64).powf(q * p.recip() - 1.0);
    if interval.hi < floor || interval.lo > 1.0 {
        estimate.std_error = 0.0;
        estimate.reliable = true;
        return Ok(estimate);
    }
    let design = match method {
        Method::Direct => None,
        Method::TiltedIs => {
            let pv = p.value("tilted importance sampling")?;
            Some(ProposalDesign::for_event(pv, q, n, interval)?)
        }
    };
    let chunks = budget.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = rng.substream(c as u64);
            let size = CHUNK.min(budget - c * CHUNK);
            let mut y = vec![0.0; n];
            let mut scratch = Vec::with_capacity(n);
            let mu_p = GenGaussian::new(p);
            let mut hits = Vec::new();
            for _ in 0..size {
                match &design {
                    Some(d) => d.draw(&mut y, &mut stream),
                    None => mu_p.fill(&mut y, &mut stream),
                }
                if interval.contains(event_moment(&y, p, q)) {
                    hits.push(match &design {
                        Some(d) => d.log_weight(&y, &mut scratch),
                        None => 0.0,
                    });
                }
            }
            hits
        })
        .collect();
    let log_w: Vec<f64> = per_chunk.into_iter().flatten().collect();
    estimate.hits = log_w.len();
    if log_w.is_empty() {
        return Ok(estimate);
    }
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s1: f64 = log_w.iter().map(|l| (l - shift).exp()).sum();
    let s2: f64 = log_w.iter().map(|l| (2.0 * (l - shift)).exp()).sum();
    let nf = budget as f64;
    let mean = s1 / nf;
    let second = s2 / nf;
    estimate.log_prob = (shift + mean.ln()).min(0.0);
    estimate.std_error = ((second - mean * mean).max(0.0) / nf).sqrt() / mean;
    estimate.ess = s1 * s1 / s2;
    estimate.reliable = estimate.ess >= MIN_RELIABLE_ESS;
    Ok(estimate)
}

/// Weighted least-squares line through `(x_i, y_i)` with weights `1/var_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

pub fn wls_slope(xs: &[f64], ys: &[f64], variances: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() != variances.len() {
        return Err(invalid("xs, ys and variances must have equal length"));
    }
    if xs.len() < 2 {
        return Err(invalid("a slope needs at least two points"));
    }
    let w: Vec<f64> = variances.iter().map(|v| 1.0 / v.max(1e-12)).collect();
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(xs).map(|(w, x)| w * (x - xm) * (x - xm)).sum();
    if sxx <= 0.0 {
        return Err(invalid("a slope needs at least two distinct x values"));
    }
    let sxy: f64 = w.iter().zip(xs).zip(ys).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: ym - slope * xm,
        slope_se: (1.0 / sxx).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalChainConfig {
    pub n: usize,
    /// Sweeps discarded before the first kept point; the proposal scale
    /// adapts toward 30% acceptance during them when `adapt` is set.
    pub burn_in: usize,
    /// Sweeps between kept points.
    pub thin: usize,
    pub proposal_scale: f64,
    pub target_interval: Interval,
    pub adapt: bool,
    /// Shuffle coordinates after every sweep. The target is exchangeable,
    /// so this leaves it invariant; without it the single large coordinate
    /// of a lower-tail event never changes position.
    pub permute: bool,
}

impl ConditionalChainConfig {
    /// Defaults with the random-walk scale `2.4 n^{-1/2} sd(μ_p)`.
    pub fn new(p: PExponent, n: usize, target_interval: Interval) -> Self {
        let sd = match p {
            PExponent::Infinity => (1.0f64 / 3.0).sqrt(),
            PExponent::Finite(_) => moment_mu_p(p, 2.0).map(f64::sqrt).unwrap_or(1.0),
        };
        ConditionalChainConfig {
            n,
            burn_in: 2000,
            thin: 20,
            proposal_scale: 2.4 * sd / (n.max(1) as f64).sqrt(),
            target_interval,
            adapt: true,
            permute: true,
        }
    }
}

/// Running sums that give `m_q(L)` in O(1) per coordinate move.
#[derive(Debug, Clone)]
struct EventTracker {
    p: PExponent,
    q: f64,
    n: f64,
    sum_q: f64,
    sum_p: f64,
    argmax: usize,
}

impl EventTracker {
    fn new(y: &[f64], p: PExponent, q: f64) -> Self {
        let mut t = EventTracker {
            p,
            q,
            n: y.len() as f64,
            sum_q: 0.0,
            sum_p: 0.0,
            argmax: 0,
        };
        t.refresh(y);
        t
    }

    fn refresh(&mut self, y: &[f64]) {
        self.sum_q = y.iter().map(|v| pow_abs(v.abs(), self.q)).sum();
        match self.p {
            PExponent::Finite(p) => self.sum_p = y.iter().map(|v| pow_abs(v.abs(), p)).sum(),
            PExponent::Infinity => {
                self.argmax = (0..y.len())
                    .max_by(|&i, &j| y[i].abs().total_cmp(&y[j].abs()))
                    .unwrap_or(0);
                self.sum_p = y.get(self.argmax).map_or(0.0, |v| v.abs());
            }
        }
    }

    fn ratio_of(&self, sum_q: f64, sum_p: f64) -> f64 {
        match self.p {
            PExponent::Finite(p) => (sum_q / self.n) / (sum_p / self.n).powf(self.q / p),
            PExponent::Infinity => (sum_q / self.n) / pow_abs(sum_p, self.q),
        }
    }

    fn ratio(&self) -> f64 {
        self.ratio_of(self.sum_q, self.sum_p)
    }

    /// Sums after replacing `y[i]` by `new`; also the new argmax for `p = ∞`.
    fn propose(&self, y: &[f64], i: usize, new: f64) -> (f64, f64, usize) {
        let (old_a, new_a) = (y[i].abs(), new.abs());
        let sum_q = self.sum_q - pow_abs(old_a, self.q) + pow_abs(new_a, self.q);
        match self.p {
            PExponent::Finite(p) => (sum_q, self.sum_p - pow_abs(old_a, p) + pow_abs(new_a, p), self.argmax),
            PExponent::Infinity => {
                if new_a >= self.sum_p {
                    (sum_q, new_a, i)
                } else if i != self.argmax {
                    (sum_q, self.sum_p, self.argmax)
                } else {
                    let mut best = (new_a, i);
                    for (j, v) in y.iter().enumerate() {
                        if j != i && v.abs() > best.0 {
                            best = (v.abs(), j);
                        }
                    }
                    (sum_q, best.0, best.1)
                }
            }
        }
    }
}

/// Metropolis chain on `μ_p^{⊗n}` restricted to the event; each item is a
/// kept point normalized to the unit sphere.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    p: PExponent,
    y: Vec<f64>,
    tracker: EventTracker,
    lo: f64,
    hi: f64,
    scale: f64,
    thin: usize,
    permute: bool,
    rng: RngStream,
    proposed: u64,
    accepted: u64,
    init_sweeps: usize,
}

impl ConditionalSampler {
    pub fn proposal_scale(&self) -> f64 {
        self.scale
    }

    /// Acceptance rate since burn-in ended.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Sweeps the feasibility phase needed to enter the event.
    pub fn init_sweeps(&self) -> usize {
        self.init_sweeps
    }

    /// Current state in Y-space.
    pub fn state(&self) -> &[f64] {
        &self.y
    }

    fn log_target(&self, v: f64) -> f64 {
        match self.p {
            PExponent::Finite(p) => -pow_abs(v.abs(), p) / p,
            PExponent::Infinity => {
                if v.abs() <= 1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn violation(&self, r: f64) -> f64 {
        (self.lo - r).max(0.0) + (r - self.hi).max(0.0)
    }

    fn sweep(&mut self, mode: SweepMode) -> (u64, u64) {
        self.tracker.refresh(&self.y);
        let (mut tried, mut taken) = (0u64, 0u64);
        for i in 0..self.y.len() {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng);
            let new = self.y[i] + self.scale * z;
            let (sq, sp, am) = self.tracker.propose(&self.y, i, new);
            let r = self.tracker.ratio_of(sq, sp);
            let delta = self.log_target(new) - self.log_target(self.y[i]);
            let ok = match mode {
                SweepMode::Restricted => {
                    r >= self.lo && r <= self.hi && (delta >= 0.0 || self.rng.random::<f64>().ln() < delta)
                }
                SweepMode::Seek => {
                    delta.is_finite() && self.violation(r) < self.violation(self.tracker.ratio())
                }
            };
            tried += 1;
            if ok {
                self.y[i] = new;
                self.tracker.sum_q = sq;
                self.tracker.sum_p = sp;
                self.tracker.argmax = am;
                taken += 1;
            }
        }
        if self.permute {
            self.y.shuffle(&mut self.rng);
        }
        self.tracker.refresh(&self.y);
        (tried, taken)
    }

    fn in_event(&self) -> bool {
        let r = self.tracker.ratio();
        r >= self.lo && r <= self.hi
    }
}

#[derive(Clone, Copy)]
enum SweepMode {
    Restricted,
    Seek,
}

impl Iterator for ConditionalSampler {
    type Item = SpherePoint;

    fn next(&mut self) -> Option<SpherePoint> {
        for _ in 0..self.thin {
            let (t, a) = self.sweep(SweepMode::Restricted);
            self.proposed += t;
            self.accepted += a;
        }
        SpherePoint::from_unnormalized(&self.y, self.p)
    }
}

/// Starts a chain targeting `μ_p^{⊗n}` conditioned on `m_q(L) ∈ interval`.
pub fn sample_conditional(
    p: PExponent,
    q: f64,
    n: usize,
    interval: Interval,
    config: ConditionalChainConfig,
    rng: RngStream,
) -> Result<ConditionalSampler> {
    validate_exponents(p, q)?;
    if !interval.has_interior() {
        return Err(invalid("conditioning interval must have nonempty interior"));
    }
    if config.n != n || config.target_interval != interval {
        return Err(invalid("chain config does not match the requested n and interval"));
    }
    if config.thin == 0 || !(config.proposal_scale > 0.0 && config.proposal_scale.is_finite()) {
        return Err(invalid("chain config needs thin >= 1 and a positive proposal scale"));
    }
    if n < 2 {
        return Err(invalid("conditional chain needs n >= 2"));
    }
    let mut rng = rng;
    let mut y = vec![0.0; n];
    match p {
        PExponent::Finite(pv) => ProposalDesign::for_event(pv, q, n, interval)?.draw(&mut y, &mut rng),
        PExponent::Infinity => GenGaussian::new(p).fill(&mut y, &mut rng),
    }
    // The interval is shrunk by a hair so that the running sums, refreshed
    // every sweep, can never certify a point the exact formula rejects.
    let pad = 1e-12 * interval.hi.min(1.0).max(interval.lo);
    let tracker = EventTracker::new(&y, p, q);
    let mut chain = ConditionalSampler {
        p,
        y,
        tracker,
        lo: if interval.lo > 0.0 { interval.lo + pad } else { 0.0 },
        hi: interval.hi - pad,
        scale: config.proposal_scale,
        thin: config.thin,
        permute: config.permute,
        rng,
        proposed: 0,
        accepted: 0,
        init_sweeps: 0,
    };
    while !chain.in_event() {
        if chain.init_sweeps >= MAX_INIT_ATTEMPTS {
            return Err(Error::ChainInitialization {
                attempts: chain.init_sweeps,
            });
        }
        chain.sweep(SweepMode::Seek);
        chain.init_sweeps += 1;
    }
    let block = 20;
    let (mut tried, mut taken) = (0u64, 0u64);
    for sweep in 1..=config.burn_in {
        let (t, a) = chain.sweep(SweepMode::Restricted);
        tried += t;
        taken += a;
        if config.adapt && sweep % block == 0 {
            let rate = taken as f64 / tried as f64;
            chain.scale *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
            tried = 0;
            taken = 0;
        }
    }
    Ok(chain)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SphereMeasure {
    Cone,
    Surface,
}

/// `draws` rows of `n^{1/p}(X_1, …, X_k)`.
///
/// Draw `d` uses substream `d`, and `Y_1, …, Y_k` come first in it, so the
/// same seed couples the leading coordinates across different `n`.
pub fn pbm_marginals(
    p: PExponent,
    n: usize,
    k: usize,
    draws: usize,
    measure: SphereMeasure,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    if k > n {
        return Err(invalid(format!("k = {k} exceeds n = {n}")));
    }
    if k == 0 || draws == 0 {
        return Err(invalid("k and draws must be positive"));
    }
    if measure == SphereMeasure::Surface && p.is_infinite() {
        return Err(Error::InfiniteExponent("surface measure"));
    }
    let scale = (n as f64).powf(p.recip());
    let sampler = GenGaussian::new(p);
    let points: Vec<SpherePoint> = (0..draws)
        .into_par_iter()
        .map(|d| {
            let mut stream = rng.substream(d as u64);
            let mut y = vec![0.0; n];
            loop {
                sampler.fill(&mut y, &mut stream);
                if let Some(x) = SpherePoint::from_unnormalized(&y, p) {
                    return x;
                }
            }
        })
        .collect();
    let rows = |idx: &mut dyn Iterator<Item = usize>| -> Vec<Vec<f64>> {
        idx.map(|i| points[i].coords[..k].iter().map(|c| c * scale).collect())
            .collect()
    };
    match measure {
        SphereMeasure::Cone => Ok(rows(&mut (0..draws))),
        SphereMeasure::Surface => {
            let log_w = points.iter().map(surface_log_weight).collect::<Result<Vec<_>>>()?;
            let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
            let mut stream = rng.substream(u64::MAX);
            let idx = systematic_resample(&w, draws, &mut stream);
            Ok(rows(&mut idx.into_iter()))
        }
    }
}

/// `# key=value` lines preceding a CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvHeader {
    pub p: PExponent,
    pub q: f64,
    pub n: Option<usize>,
    pub interval: Interval,
    pub seed: u64,
    pub method: String,
}

impl CsvHeader {
    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "# p={}", self.p)?;
        writeln!(w, "# q={}", self.q)?;
        if let Some(n) = self.n {
            writeln!(w, "# n={n}")?;
        }
        writeln!(w, "# interval=[{},{}]", self.interval.lo, self.interval.hi)?;
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# method={}", self.method)
    }
}

pub fn write_estimates_csv<W: Write>(mut w: W, header: &CsvHeader, rows: &[RareEventEstimate]) -> io::Result<()> {
    header.write(&mut w)?;
    writeln!(w, "n,log_prob,std_error,n_samples,hits,ess,reliable")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.n, r.log_prob, r.std_error, r.n_samples, r.hits, r.ess, r.reliable
        )?;
    }
    Ok(())
}

/// Kept chain points, first `k` coordinates scaled by `n^{1/p}`.
pub fn write_chain_csv<W: Write>(mut w: W, header: &CsvHeader, points: &[SpherePoint], k: usize) -> io::Result<()> {
    header.write(&mut w)?;
    let cols: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    writeln!(w, "index,{}", cols.join(","))?;
    for (i, x) in points.iter().enumerate() {
        let scale = (x.dim() as f64).powf(x.p.recip());
        let vals: Vec<String> = x.coords.iter().take(k).map(|c| (c * scale).to_string()).collect();
        writeln!(w, "{i},{}", vals.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fin(p: f64) -> PExponent {
        PExponent::Finite(p)
    }

    #[test]
    fn event_moment_matches_sphere_point() {
        let y = [0.3, -1.2, 2.0, 0.1, -0.7];
        let x = SpherePoint::from_unnormalized(&y, fin(2.0)).unwrap();
        assert!((event_moment(&y, fin(2.0), 1.0) - x.scaled_moment(1.0)).abs() < 1e-14);
        let x = SpherePoint::from_unnormalized(&y, PExponent::Infinity).unwrap();
        assert!((event_moment(&y, PExponent::Infinity, 1.5) - x.scaled_moment(1.5)).abs() < 1e-14);
    }

    #[test]
    fn full_event_has_zero_log_prob() {
        let iv = Interval::new(0.0, f64::INFINITY).unwrap();
        for m in [Method::Direct, Method::TiltedIs] {
            let e = estimate_rare_prob(fin(2.0), 1.0, 10, iv, m, 2000, &RngStream::new(1, 0)).unwrap();
            assert_eq!(e.log_prob, 0.0);
            assert_eq!(e.hits, 2000);
        }
    }

    #[test]
    fn impossible_event_is_minus_infinity() {
        // m_1(L_{4,2}) >= 4^{-1/2}
        let e = estimate_rare_prob(fin(2.0), 1.0, 4, Interval::upto(0.49).unwrap(), Method::TiltedIs, 1000, &RngStream::new(1, 0))
            .unwrap();
        assert_eq!(e.log_prob, f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_arguments() {
        let iv = Interval::upto(0.5).unwrap();
        let rng = RngStream::new(1, 0);
        assert!(estimate_rare_prob(fin(2.0), 1.0, 5, iv, Method::Direct, 999, &rng).is_err());
        assert!(estimate_rare_prob(fin(2.0), 2.0, 5, iv, Method::Direct, 1000, &rng).is_err());
        assert!(matches!(
            estimate_rare_prob(PExponent::Infinity, 1.0, 5, iv, Method::TiltedIs, 1000, &rng),
            Err(Error::InfiniteExponent(_))
        ));
    }

    #[test]
    fn exp_family_sampler_matches_density() {
        use crate::measures::{ks_distance, EmpiricalMeasure};
        let cases = [
            AnalyticDensity::exp_family(0.3, 0.8, 2.0, 1.0).unwrap(),
            AnalyticDensity::exp_family(0.9, -0.4, 2.0, 1.0).unwrap(),
            AnalyticDensity::exp_family(40.0, -70.0, 2.0, 1.5).unwrap(),
            AnalyticDensity::exp_family(0.5, 0.0, 1.5, 1.0).unwrap(),
            AnalyticDensity::exp_family(0.0, 2.0, 3.0, 1.5).unwrap(),
            AnalyticDensity::scaled_generalized_gaussian(1.0, 0.5).unwrap(),
        ];
        let mut rng = RngStream::new(4, 0);
        for d in cases {
            let s = ExpFamilySampler::new(d).unwrap();
            let xs: Vec<f64> = (0..50_000).map(|_| s.draw(&mut rng)).collect();
            let ks = ks_distance(&EmpiricalMeasure::uniform(xs).unwrap(), &d);
            assert!(ks < 0.01, "{:?}: {ks}", d.family());
        }
    }

    #[test]
    fn proposal_log_weight_is_a_density_ratio() {
        // E_q[w] = 1 over the whole space
        let design = ProposalDesign::for_event(2.0, 1.0, 4, Interval::upto(0.6).unwrap()).unwrap();
        assert!(design.condensate.is_some());
        let mut rng = RngStream::new(8, 0);
        let mut y = vec![0.0; 4];
        let mut scratch = Vec::new();
        let n = 400_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            design.draw(&mut y, &mut rng);
            let w = design.log_weight(&y, &mut scratch).exp();
            s += w;
            s2 += w * w;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn wls_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x + 2.0).collect();
        let fit = wls_slope(&xs, &ys, &[1.0, 0.5, 2.0, 1.0]).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 2.0).abs() < 1e-12);
        assert!(wls_slope(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pbm_rejects_k_above_n() {
        let rng = RngStream::new(1, 0);
        assert!(pbm_marginals(fin(2.0), 3, 4, 10, SphereMeasure::Cone, &rng).is_err());
        let full = pbm_marginals(fin(2.0), 3, 3, 10, SphereMeasure::Cone, &rng).unwrap();
        for row in full {
            let s: f64 = row.iter().map(|v| v * v).sum();
            assert!((s - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_points_stay_in_event() {
        let iv = Interval::upto(0.6).unwrap();
        let cfg = ConditionalChainConfig::new(fin(2.0), 50, iv);
        let chain = sample_conditional(fin(2.0), 1.0, 50, iv, cfg, RngStream::new(2, 0)).unwrap();
        for x in chain.take(500) {
            assert!((x.norm() - 1.0).abs() < 1e-12);
            assert!(x.scaled_moment(1.0) <= 0.6);
        }
    }

    #[test]
    fn chain_seeks_event_from_untilted_start() {
        // a uniform cube point has m_1 ≈ 1/2, far above 0.3
        let iv = Interval::new(0.25, 0.3).unwrap();
        let cfg = ConditionalChainConfig::new(PExponent::Infinity, 40, iv);
        let chain = sample_conditional(PExponent::Infinity, 1.0, 40, iv, cfg, RngStream::new(5, 0)).unwrap();
        assert!(chain.init_sweeps() > 0);
        for x in chain.take(200) {
            let m = x.scaled_moment(1.0);
            assert!((0.25..=0.3).contains(&m), "{m}");
            assert!((x.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_config_is_checked() {
        let iv = Interval::upto(0.6).unwrap();
        let mut cfg = ConditionalChainConfig::new(fin(2.0), 50, iv);
        cfg.thin = 0;
        assert!(sample_conditional(fin(2.0), 1.0, 50, iv, cfg, RngStream::new(2, 0)).is_err());
        let cfg = ConditionalChainConfig::new(fin(2.0), 50, iv);
        assert!(sample_conditional(fin(2.0), 1.0, 60, iv, cfg, RngStream::new(2, 0)).is_err());
        let point = Interval::new(0.5, 0.5).unwrap();
        let cfg = ConditionalChainConfig::new(fin(2.0), 50, point);
        assert!(sample_conditional(fin(2.0), 1.0, 50, point, cfg, RngStream::new(2, 0)).is_err());
    }

    #[test]
    fn csv_has_header_block() {
        let iv = Interval::upto(0.5).unwrap();
        let e = estimate_rare_prob(fin(2.0), 1.0, 5, iv, Method::Direct, 1000, &RngStream::new(1, 0)).unwrap();
        let header = CsvHeader {
            p: fin(2.0),
            q: 1.0,
            n: None,
            interval: iv,
            seed: 1,
            method: "direct".into(),
        };
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, &header, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# p=2\n# q=1\n# interval=[0,0.5]\n# seed=1\n# method=direct\nn,log_prob"));
    }
}
