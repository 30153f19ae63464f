//! Exact samplers for `μ_p^{⊗n}`, the cone measure and the surface measure.
//!
//! Cone samples use the representation `X = Y / ‖Y‖_p` with `Y ~ μ_p^{⊗n}`.
//! Surface samples reuse cone draws and attach the density ratio
//! `dσ/dγ(x) ∝ (Σ|x_i|^{2p-2})^{1/2}` as a self-normalized importance weight;
//! its normalizing constant is never needed.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::analytic::PExponent;
use crate::error::{invalid, Error, Result};
use crate::rng::RngStream;

/// Draws from `μ_p`: `ε (pG)^{1/p}` with `G ~ Gamma(1/p, 1)` and a random
/// sign, or uniform on `[-1, 1]` for `p = ∞`.
#[derive(Debug, Clone)]
pub struct GenGaussian {
    p: PExponent,
    gamma: Option<Gamma<f64>>,
}

impl GenGaussian {
    pub fn new(p: PExponent) -> Self {
        let gamma = match p {
            PExponent::Finite(p) => Some(Gamma::new(1.0 / p, 1.0).expect("shape 1/p is positive")),
            PExponent::Infinity => None,
        };
        GenGaussian { p, gamma }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match (self.p, &self.gamma) {
            (PExponent::Finite(p), Some(gamma)) => {
                let g = gamma.sample(rng);
                let magnitude = (p * g).powf(1.0 / p);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            _ => rng.random_range(-1.0..=1.0),
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, out: &mut [f64], rng: &mut R) {
        for y in out.iter_mut() {
            *y = self.draw(rng);
        }
    }
}

pub fn sample_gen_gaussian(p: PExponent, n: usize, rng: &mut RngStream) -> Vec<f64> {
    let sampler = GenGaussian::new(p);
    let mut out = vec![0.0; n];
    sampler.fill(&mut out, rng);
    out
}

/// `‖y‖_{n,p}`; the max norm for `p = ∞`.
pub fn lp_norm(y: &[f64], p: PExponent) -> f64 {
    match p {
        PExponent::Infinity => y.iter().fold(0.0, |m, v| m.max(v.abs())),
        PExponent::Finite(p) => y.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

/// A point on the unit `ℓ^p` sphere with an importance weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    pub coords: Vec<f64>,
    pub p: PExponent,
    pub weight: f64,
}

impl SpherePoint {
    /// Normalizes a nonzero vector onto the sphere with unit weight.
    pub fn from_unnormalized(y: &[f64], p: PExponent) -> Option<Self> {
        let norm = lp_norm(y, p);
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        Some(SpherePoint {
            coords: y.iter().map(|v| v / norm).collect(),
            p,
            weight: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        lp_norm(&self.coords, self.p)
    }

    /// `m_r` of the scaled empirical measure `(1/n) Σ δ_{n^{1/p} x_i}`.
    pub fn scaled_moment(&self, r: f64) -> f64 {
        let n = self.dim() as f64;
        let scale = n.powf(self.p.recip());
        self.coords.iter().map(|x| (scale * x.abs()).powf(r)).sum::<f64>() / n
    }
}

pub fn sample_cone(p: PExponent, n: usize, rng: &mut RngStream) -> Result<SpherePoint> {
    if n == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    let sampler = GenGaussian::new(p);
    let mut y = vec![0.0; n];
    loop {
        sampler.fill(&mut y, rng);
        // An all-zero draw has probability zero; redraw if it ever happens.
        if let Some(x) = SpherePoint::from_unnormalized(&y, p) {
            return Ok(x);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceWeightStats {
    pub log_weight_min: f64,
    pub log_weight_max: f64,
    pub n: usize,
    pub p: PExponent,
}

impl SurfaceWeightStats {
    /// Almost-sure bound `2 |1/2 - 1/p| log n` on the log-weight spread.
    pub fn spread_bound(&self) -> f64 {
        2.0 * (0.5 - self.p.recip()).abs() * (self.n as f64).ln()
    }

    pub fn spread(&self) -> f64 {
        self.log_weight_max - self.log_weight_min
    }

    pub fn within_bound(&self) -> bool {
        self.spread() <= self.spread_bound() + 1e-9
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceSample {
    /// Cone draws carrying unnormalized weights, or unit-weight draws after
    /// resampling.
    pub points: Vec<SpherePoint>,
    /// Log-weights of the underlying cone draws, in draw order.
    pub log_weights: Vec<f64>,
    pub stats: SurfaceWeightStats,
    pub resampled: bool,
}

impl SurfaceSample {
    pub fn normalized_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = self.points.iter().map(|x| x.weight).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Kish effective sample size of the importance weights.
    pub fn effective_sample_size(&self) -> f64 {
        let w = self.normalized_weights();
        1.0 / w.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `log (Σ|x_i|^{2p-2})^{1/2}`, the unnormalized log density ratio `dσ/dγ`.
pub fn surface_log_weight(x: &SpherePoint) -> Result<f64> {
    let p = x.p.value("surface density ratio")?;
    let s: f64 = x.coords.iter().map(|v| v.abs().powf(2.0 * p - 2.0)).sum();
    Ok(0.5 * s.ln())
}

pub fn sample_surface(
    p: PExponent,
    n: usize,
    batch: usize,
    resample: bool,
    rng: &mut RngStream,
) -> Result<SurfaceSample> {
    if p.is_infinite() {
        return Err(Error::InfiniteExponent("surface sampling (sigma = gamma at p = inf; use sample_cone)"));
    }
    if batch == 0 {
        return Err(invalid("surface batch must be nonempty"));
    }
    let mut points = Vec::with_capacity(batch);
    let mut log_weights = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x = sample_cone(p, n, rng)?;
        log_weights.push(surface_log_weight(&x)?);
        points.push(x);
    }
    let lw_max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lw_min = log_weights.iter().cloned().fold(f64::INFINITY, f64::min);
    for (x, lw) in points.iter_mut().zip(&log_weights) {
        x.weight = lw.exp();
    }
    let stats = SurfaceWeightStats {
        log_weight_min: lw_min,
        log_weight_max: lw_max,
        n,
        p,
    };
    let points = if resample {
        let weights: Vec<f64> = points.iter().map(|x| x.weight).collect();
        systematic_resample(&weights, batch, rng)
            .into_iter()
            .map(|i| SpherePoint {
                weight: 1.0,
                ..points[i].clone()
            })
            .collect()
    } else {
        points
    };
    Ok(SurfaceSample {
        points,
        log_weights,
        stats,
        resampled: resample,
    })
}

/// Systematic resampling: indices of `count` draws proportional to `weights`.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let step = 1.0 / count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(count);
    let mut cumulative = 0.0;
    let mut i = 0;
    for _ in 0..count {
        while i + 1 < weights.len() && cumulative + weights[i] / total <= u {
            cumulative += weights[i] / total;
            i += 1;
        }
        out.push(i);
        u += step;
    }
    out
}

/// Self-normalized importance estimate of `E[f]` and its delta-method
/// standard error.
pub fn snis_mean<F: Fn(&SpherePoint) -> f64>(points: &[SpherePoint], f: F) -> (f64, f64) {
    let total: f64 = points.iter().map(|x| x.weight).sum();
    let values: Vec<f64> = points.iter().map(&f).collect();
    let mean = points
        .iter()
        .zip(&values)
        .map(|(x, v)| x.weight * v)
        .sum::<f64>()
        / total;
    let var = points
        .iter()
        .zip(&values)
        .map(|(x, v)| {
            let w = x.weight / total;
            w * w * (v - mean) * (v - mean)
        })
        .sum::<f64>();
    (mean, var.sqrt())
}
