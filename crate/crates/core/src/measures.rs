//! Probability measures on the line: empirical measures, the moment map,
//! the rescaling map `G_p`, and one-dimensional distances.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{AnalyticDensity, PExponent};
use crate::error::{invalid, Error, Result};
use crate::sampling::{systematic_resample, SpherePoint};

/// Quantile grid size for transport against an analytic target.
pub const QUANTILE_GRID: usize = 1 << 14;

/// Weighted atoms, sorted ascending, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn uniform(mut atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(invalid("empirical measure needs at least one atom"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(invalid("atoms must be finite"));
        }
        atoms.sort_by(f64::total_cmp);
        let w = 1.0 / atoms.len() as f64;
        let weights = vec![w; atoms.len()];
        Ok(EmpiricalMeasure { atoms, weights })
    }

    pub fn weighted(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() || atoms.is_empty() {
            return Err(invalid("atoms and weights must be nonempty and of equal length"));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(invalid("atoms must be finite"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        let mut pairs: Vec<(f64, f64)> = atoms
            .into_iter()
            .zip(weights)
            .map(|(a, w)| (a, w / total))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (atoms, weights) = pairs.into_iter().unzip();
        Ok(EmpiricalMeasure { atoms, weights })
    }

    pub fn dirac(a: f64) -> Self {
        EmpiricalMeasure {
            atoms: vec![a],
            weights: vec![1.0],
        }
    }

    /// `L = (1/n) Σ δ_{n^{1/p} x_i}` for a point on the `ℓ^p` sphere.
    pub fn from_sphere(x: &SpherePoint) -> Self {
        let n = x.dim() as f64;
        let scale = n.powf(x.p.recip());
        let atoms = x.coords.iter().map(|v| scale * v).collect();
        EmpiricalMeasure::uniform(atoms).expect("sphere coordinates are finite and nonempty")
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|v| (v - w).abs() <= 1e-12 * w)
    }

    /// Convex combination `α·self + (1-α)·other`.
    pub fn mixture(&self, other: &EmpiricalMeasure, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("mixture weight must lie in [0, 1], got {alpha}")));
        }
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            if alpha > 0.0 {
                atoms.push(*a);
                weights.push(alpha * w);
            }
        }
        for (a, w) in other.atoms.iter().zip(&other.weights) {
            if alpha < 1.0 {
                atoms.push(*a);
                weights.push((1.0 - alpha) * w);
            }
        }
        EmpiricalMeasure::weighted(atoms, weights)
    }

    /// `G_p(ν, c) = ν(· × c^{1/p})`: atoms divided by `c^{1/p}`.
    pub fn scale_map(&self, c: f64, p: PExponent) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("scale map needs c > 0, got {c}")));
        }
        let factor = c.powf(p.recip());
        Ok(EmpiricalMeasure {
            atoms: self.atoms.iter().map(|a| a / factor).collect(),
            weights: self.weights.clone(),
        })
    }

    /// Systematic resampling to `count` equally weighted atoms.
    pub fn resample_uniform<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(invalid("resample count must be positive"));
        }
        let idx = systematic_resample(&self.weights, count, rng);
        EmpiricalMeasure::uniform(idx.into_iter().map(|i| self.atoms[i]).collect())
    }

    /// Right-continuous CDF.
    pub fn cdf(&self, x: f64) -> f64 {
        let k = self.atoms.partition_point(|a| *a <= x);
        self.weights[..k].iter().sum::<f64>().min(1.0)
    }

    /// Left-continuous quantile `inf{x : F(x) ≥ u}`.
    fn quantiles_sorted(&self, us: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(us.len());
        let mut i = 0;
        let mut cumulative = self.weights[0];
        for &u in us {
            while u > cumulative && i + 1 < self.len() {
                i += 1;
                cumulative += self.weights[i];
            }
            out.push(self.atoms[i]);
        }
        out
    }

    /// Writes `atom,weight` rows under a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "atom,weight")?;
        for (a, p) in self.atoms.iter().zip(&self.weights) {
            writeln!(w, "{a:e},{p:e}")?;
        }
        Ok(())
    }
}

/// Absolute moments `m_q(ν) = ∫|x|^q dν`, with `m_∞` the sup of `|x|` on the support.
pub trait MomentMap {
    fn moment(&self, q: PExponent) -> f64;
}

impl MomentMap for EmpiricalMeasure {
    fn moment(&self, q: PExponent) -> f64 {
        match q {
            PExponent::Infinity => self.atoms.iter().fold(0.0, |m, a| m.max(a.abs())),
            PExponent::Finite(q) => self
                .atoms
                .iter()
                .zip(&self.weights)
                .map(|(a, w)| w * a.abs().powf(q))
                .sum(),
        }
    }
}

impl MomentMap for AnalyticDensity {
    fn moment(&self, q: PExponent) -> f64 {
        AnalyticDensity::moment(self, q)
    }
}

pub fn moment<M: MomentMap + ?Sized>(nu: &M, q: PExponent) -> f64 {
    nu.moment(q)
}

fn check_order(q: f64) -> Result<()> {
    if q >= 1.0 && q.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("transport order must be finite and >= 1, got {q}")))
    }
}

/// Exact `W_q` between two empirical measures by monotone matching of
/// the quantile functions.
pub fn wasserstein_q(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, q: f64) -> Result<f64> {
    check_order(q)?;
    let (mut i, mut j) = (0, 0);
    let mut ra = mu.weights[0];
    let mut rb = nu.weights[0];
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        cost += m * (mu.atoms[i] - nu.atoms[j]).abs().powf(q);
        ra -= m;
        rb -= m;
        let advance_a = ra <= rb;
        if advance_a {
            i += 1;
            if i == mu.len() {
                break;
            }
            ra += mu.weights[i];
        } else {
            j += 1;
            if j == nu.len() {
                break;
            }
            rb += nu.weights[j];
        }
    }
    Ok(cost.max(0.0).powf(1.0 / q))
}

fn midpoint_transport_cost(mu: &EmpiricalMeasure, nu: &AnalyticDensity, q: f64, grid: usize) -> f64 {
    let us: Vec<f64> = (0..grid).map(|k| (k as f64 + 0.5) / grid as f64).collect();
    let qa = mu.quantiles_sorted(&us);
    us.iter()
        .zip(qa)
        .map(|(&u, a)| (a - nu.quantile(u)).abs().powf(q))
        .sum::<f64>()
        / grid as f64
}

/// `W_q` between an empirical measure and an analytic density by midpoint
/// quadrature of `|F_μ^{-1} - F_ν^{-1}|^q` on a `2^14` quantile grid,
/// cross-checked against the half-size grid.
pub fn wasserstein_q_analytic(mu: &EmpiricalMeasure, nu: &AnalyticDensity, q: f64) -> Result<f64> {
    check_order(q)?;
    if !nu.moment(PExponent::Finite(q)).is_finite() {
        return Err(Error::InfiniteMoment { order: q.to_string() });
    }
    let fine = midpoint_transport_cost(mu, nu, q, QUANTILE_GRID);
    let coarse = midpoint_transport_cost(mu, nu, q, QUANTILE_GRID / 2);
    if (fine - coarse).abs() > 1e-2 * fine.max(1e-8) {
        return Err(Error::Numerical(format!(
            "quantile grid not resolved: {fine:e} vs {coarse:e}"
        )));
    }
    Ok(fine.powf(1.0 / q))
}

/// Kolmogorov–Smirnov distance between an empirical CDF and a continuous one.
pub fn ks_distance(mu: &EmpiricalMeasure, nu: &AnalyticDensity) -> f64 {
    let cdf = nu.cdf_sorted(&mu.atoms);
    let mut before = 0.0;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < mu.len() {
        let (a, f) = (mu.atoms[i], cdf[i]);
        let mut after = before;
        while i < mu.len() && mu.atoms[i] == a {
            after += mu.weights[i];
            i += 1;
        }
        d = d.max((f - before).abs()).max((f - after.min(1.0)).abs());
        before = after;
    }
    d
}

pub fn ks_distance_with<F: Fn(f64) -> f64>(mu: &EmpiricalMeasure, cdf: F) -> f64 {
    let mut before = 0.0;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < mu.len() {
        let a = mu.atoms[i];
        let mut after = before;
        while i < mu.len() && mu.atoms[i] == a {
            after += mu.weights[i];
            i += 1;
        }
        let f = cdf(a);
        d = d.max((f - before).abs()).max((f - after.min(1.0)).abs());
        before = after;
    }
    d
}

/// Two-sample Kolmogorov–Smirnov distance.
pub fn ks_two_sample(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let mut d: f64 = 0.0;
    for &x in a.atoms.iter().chain(&b.atoms) {
        d = d.max((a.cdf(x) - b.cdf(x)).abs());
    }
    d
}

/// Closed interval `[lo, hi]` of moment values, `hi` possibly infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && hi >= lo) || lo.is_nan() || hi.is_nan() || lo.is_infinite() {
            return Err(invalid(format!("interval needs 0 <= lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn upto(hi: f64) -> Result<Self> {
        Interval::new(0.0, hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn has_interior(&self) -> bool {
        self.hi > self.lo
    }

    /// `[lo - ε, hi + ε]`, clipped at zero.
    pub fn widen(&self, eps: f64) -> Self {
        Interval {
            lo: (self.lo - eps).max(0.0),
            hi: self.hi + eps,
        }
    }
}
