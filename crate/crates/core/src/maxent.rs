//! Maximum-entropy densities under power-moment constraints.
//!
//! The maximizer of `h(ν)` subject to `∫|x|^{r_k} dν (=, ≤, ≥) b_k` has the
//! form `exp(-1 - κ₀ - Σ λ_k |x|^{r_k})`. We find the multipliers by
//! minimizing the convex dual
//!
//! ```text
//! φ(λ) = log Z(λ) + Σ λ_k b_k,    ∇φ = b - E_λ|x|^r,    ∇²φ = Cov_λ(|x|^r)
//! ```
//!
//! with a projected, damped Newton method. Multipliers of `≤` constraints
//! stay nonnegative and those of `≥` constraints nonpositive at every
//! iterate. At the optimum, `h(ν*) = log Z + Σ λ_k m_k`.

use serde::{Deserialize, Serialize};

use crate::analytic::{moment_scaled_gg, normalizable, thresholds, AnalyticDensity, PExponent};
use crate::entropy_rate::{rate_constant, rate_hp};
use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::special::ln_gamma;

/// Target for the projected dual gradient (moment residual) norm.
pub const DUAL_GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 200;
const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Equal,
    AtMost,
    AtLeast,
}

/// `∫|x|^power dν  (relation)  bound`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConstraint {
    pub power: f64,
    pub relation: Relation,
    pub bound: f64,
}

impl PowerConstraint {
    pub fn equal(power: f64, bound: f64) -> Self {
        PowerConstraint {
            power,
            relation: Relation::Equal,
            bound,
        }
    }

    pub fn at_most(power: f64, bound: f64) -> Self {
        PowerConstraint {
            power,
            relation: Relation::AtMost,
            bound,
        }
    }

    pub fn at_least(power: f64, bound: f64) -> Self {
        PowerConstraint {
            power,
            relation: Relation::AtLeast,
            bound,
        }
    }
}

/// Parameters of `exp(-1 - κ₀ - κ_p|x|^p - κ_q|x|^q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFamilyParams {
    pub kappa0: f64,
    pub kappa_p: f64,
    pub kappa_q: f64,
    pub p: f64,
    pub q: f64,
}

impl ExpFamilyParams {
    pub fn density(&self) -> Result<AnalyticDensity> {
        AnalyticDensity::exp_family(self.kappa_p, self.kappa_q, self.p, self.q)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let a = x.abs();
        -1.0 - self.kappa0 - self.kappa_p * a.powf(self.p) - self.kappa_q * a.powf(self.q)
    }
}

/// Output of [`solve_maxent`]: one multiplier per input constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntDensity {
    pub constraints: Vec<PowerConstraint>,
    pub multipliers: Vec<f64>,
    pub moments: Vec<f64>,
    pub kappa0: f64,
    pub entropy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

impl MaxEntDensity {
    /// `λ_k (m_k - b_k)` for each constraint.
    pub fn slackness_residuals(&self) -> Vec<f64> {
        self.constraints
            .iter()
            .zip(&self.multipliers)
            .zip(&self.moments)
            .map(|((c, l), m)| l * (m - c.bound))
            .collect()
    }

    /// Largest constraint violation (zero when feasible).
    pub fn max_violation(&self) -> f64 {
        self.constraints
            .iter()
            .zip(&self.moments)
            .map(|(c, m)| match c.relation {
                Relation::Equal => (m - c.bound).abs(),
                Relation::AtMost => (m - c.bound).max(0.0),
                Relation::AtLeast => (c.bound - m).max(0.0),
            })
            .fold(0.0, f64::max)
    }

    /// Collapses the multipliers onto the two powers `(p, q)`.
    pub fn params(&self, p: f64, q: f64) -> Result<ExpFamilyParams> {
        let mut kappa_p = 0.0;
        let mut kappa_q = 0.0;
        for (c, l) in self.constraints.iter().zip(&self.multipliers) {
            if c.power == p {
                kappa_p += l;
            } else if c.power == q {
                kappa_q += l;
            } else if *l != 0.0 {
                return Err(invalid(format!("multiplier on power {} outside ({p}, {q})", c.power)));
            }
        }
        Ok(ExpFamilyParams {
            kappa0: self.kappa0,
            kappa_p,
            kappa_q,
            p,
            q,
        })
    }
}

/// The tilted potential `Σ c_k |x|^{r_k}` with cached integration range.
struct Potential {
    terms: Vec<(f64, f64)>,
    cutoff: f64,
    shift: f64,
}

impl Potential {
    fn new(terms: Vec<(f64, f64)>, max_extra_power: f64) -> Option<Self> {
        if !normalizable(&terms) {
            return None;
        }
        let mut pot = Potential {
            terms,
            cutoff: 1.0,
            shift: 0.0,
        };
        let margin = 60.0;
        let floor_on = |pot: &Potential, c: f64| {
            (0..=2000)
                .map(|i| pot.eval(c * i as f64 / 2000.0))
                .fold(0.0, f64::min)
        };
        let enough =
            |pot: &Potential, c: f64, floor: f64| pot.eval(c) - floor >= margin + max_extra_power * c.max(1.0).ln();
        let mut floor = floor_on(&pot, pot.cutoff);
        while !enough(&pot, pot.cutoff, floor) {
            pot.cutoff *= 2.0;
            floor = floor_on(&pot, pot.cutoff);
            if pot.cutoff > 1e12 {
                return None;
            }
        }
        let (mut lo, mut hi) = (pot.cutoff / 2.0, pot.cutoff);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if enough(&pot, mid, floor) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        pot.cutoff = hi;
        pot.shift = floor;
        Some(pot)
    }

    fn eval(&self, x: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(r, c)| c * x.powf(*r))
            .sum()
    }

    /// `∫_0^cutoff x^r exp(shift - V(x)) dx`.
    fn weighted_mass(&self, r: f64) -> f64 {
        let tol = Tolerance {
            abs: 1e-300,
            rel: 1e-13,
            max_subdivisions: 4000,
        };
        integrate(
            |x| {
                let w = if r == 0.0 { 1.0 } else { x.powf(r) };
                w * (self.shift - self.eval(x)).exp()
            },
            0.0,
            self.cutoff,
            tol,
        )
        .value
    }
}

struct DualState {
    objective: f64,
    log_z: f64,
    moments: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

fn evaluate_dual(constraints: &[PowerConstraint], lambda: &[f64], with_hessian: bool) -> Option<DualState> {
    let terms: Vec<(f64, f64)> = constraints
        .iter()
        .zip(lambda)
        .map(|(c, l)| (c.power, *l))
        .collect();
    let max_power = constraints.iter().map(|c| c.power).fold(0.0, f64::max);
    let pot = Potential::new(terms, 2.0 * max_power)?;
    let half_mass = pot.weighted_mass(0.0);
    if !(half_mass > 0.0 && half_mass.is_finite()) {
        return None;
    }
    let log_z = (2.0 * half_mass).ln() - pot.shift;
    let moments: Vec<f64> = constraints
        .iter()
        .map(|c| pot.weighted_mass(c.power) / half_mass)
        .collect();
    let objective = log_z
        + constraints
            .iter()
            .zip(lambda)
            .map(|(c, l)| l * c.bound)
            .sum::<f64>();
    let k = constraints.len();
    let mut covariance = vec![vec![0.0; k]; k];
    if with_hessian {
        for i in 0..k {
            for j in i..k {
                let m = pot.weighted_mass(constraints[i].power + constraints[j].power) / half_mass;
                let c = m - moments[i] * moments[j];
                covariance[i][j] = c;
                covariance[j][i] = c;
            }
        }
    }
    Some(DualState {
        objective,
        log_z,
        moments,
        covariance,
    })
}

fn project(relation: Relation, v: f64) -> f64 {
    match relation {
        Relation::Equal => v,
        Relation::AtMost => v.max(0.0),
        Relation::AtLeast => v.min(0.0),
    }
}

fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn validate(constraints: &[PowerConstraint]) -> Result<()> {
    for c in constraints {
        if !(c.power > 0.0 && c.power.is_finite()) {
            return Err(invalid(format!("constraint power must be positive and finite, got {}", c.power)));
        }
        if !c.bound.is_finite() {
            return Err(invalid("constraint bounds must be finite"));
        }
        if c.relation != Relation::AtLeast && c.bound <= 0.0 {
            return Err(Error::Infeasible(format!(
                "m_{} cannot be {} {} for a density",
                c.power,
                if c.relation == Relation::Equal { "equal to" } else { "at most" },
                c.bound
            )));
        }
    }
    // Lyapunov: r ↦ m_r^{1/r} is strictly increasing for any density.
    for lower in constraints.iter().filter(|c| c.relation != Relation::AtMost && c.bound > 0.0) {
        for upper in constraints
            .iter()
            .filter(|c| c.relation != Relation::AtLeast && c.power > lower.power)
        {
            if lower.bound.powf(1.0 / lower.power) >= upper.bound.powf(1.0 / upper.power) {
                return Err(Error::Infeasible(format!(
                    "m_{} >= {} contradicts m_{} <= {}",
                    lower.power, lower.bound, upper.power, upper.bound
                )));
            }
        }
    }
    if !constraints.iter().any(|c| c.relation != Relation::AtLeast) {
        return Err(Error::Unbounded(
            "without an upper or equality moment constraint the entropy is unbounded".into(),
        ));
    }
    Ok(())
}

fn default_start(constraints: &[PowerConstraint]) -> Vec<f64> {
    let lead = constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.relation != Relation::AtLeast)
        .max_by(|a, b| a.1.power.total_cmp(&b.1.power))
        .map(|(i, _)| i)
        .expect("validated");
    let mut lambda = vec![0.0; constraints.len()];
    lambda[lead] = 1.0 / (constraints[lead].power * constraints[lead].bound);
    lambda
}

/// Solves the moment-constrained maximum-entropy problem.
pub fn solve_maxent(constraints: &[PowerConstraint]) -> Result<MaxEntDensity> {
    validate(constraints)?;
    solve_maxent_from(constraints, default_start(constraints))
}

/// Same as [`solve_maxent`] but starting the dual iteration at `start`.
pub fn solve_maxent_from(constraints: &[PowerConstraint], start: Vec<f64>) -> Result<MaxEntDensity> {
    validate(constraints)?;
    if start.len() != constraints.len() {
        return Err(invalid("start must have one multiplier per constraint"));
    }
    let k = constraints.len();
    let mut lambda: Vec<f64> = start
        .iter()
        .zip(constraints)
        .map(|(l, c)| project(c.relation, *l))
        .collect();
    let mut state = match evaluate_dual(constraints, &lambda, true) {
        Some(s) => s,
        None => {
            lambda = default_start(constraints);
            evaluate_dual(constraints, &lambda, true)
                .ok_or_else(|| Error::Numerical("initial dual point is not normalizable".into()))?
        }
    };
    for iter in 0..MAX_NEWTON_ITERS {
        let grad: Vec<f64> = constraints
            .iter()
            .zip(&state.moments)
            .map(|(c, m)| c.bound - m)
            .collect();
        let free: Vec<usize> = (0..k)
            .filter(|&i| match constraints[i].relation {
                Relation::Equal => true,
                Relation::AtMost => !(lambda[i] <= 0.0 && grad[i] >= 0.0),
                Relation::AtLeast => !(lambda[i] >= 0.0 && grad[i] <= 0.0),
            })
            .collect();
        let gnorm = free.iter().map(|&i| grad[i] * grad[i]).sum::<f64>().sqrt();
        if gnorm < DUAL_GRADIENT_TOLERANCE {
            return Ok(finish(constraints, lambda, state, gnorm, iter));
        }
        if lambda.iter().any(|l| l.abs() > DIVERGENCE_LIMIT) {
            break;
        }
        let h: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| free.iter().map(|&j| state.covariance[i][j]).collect())
            .collect();
        let rhs: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
        let step = solve_linear(h, rhs.clone()).unwrap_or(rhs);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-14 {
            let mut trial = lambda.clone();
            for (s, &i) in step.iter().zip(&free) {
                trial[i] = project(constraints[i].relation, lambda[i] + t * s);
            }
            if let Some(next) = evaluate_dual(constraints, &trial, true) {
                let decrease: f64 = (0..k).map(|i| grad[i] * (trial[i] - lambda[i])).sum();
                let armijo = next.objective <= state.objective + 1e-4 * decrease;
                // Near the optimum φ changes below its quadrature noise; accept
                // a step that shrinks the residual instead.
                let flat = (next.objective - state.objective).abs() <= 1e-12 * state.objective.abs().max(1.0);
                let next_gnorm = residual_norm(constraints, &trial, &next.moments);
                if armijo || (flat && next_gnorm < gnorm) {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                lambda = trial;
                state = next;
            }
            None if lambda.iter().any(|l| l.abs() > 1e4) => break,
            None => {
                return Err(Error::Numerical(format!(
                    "dual line search stalled with residual {gnorm:e}"
                )))
            }
        }
    }
    Err(Error::Infeasible(
        "dual iteration diverged; the moment constraints admit no density".into(),
    ))
}

fn residual_norm(constraints: &[PowerConstraint], lambda: &[f64], moments: &[f64]) -> f64 {
    constraints
        .iter()
        .zip(lambda)
        .zip(moments)
        .filter_map(|((c, l), m)| {
            let g = c.bound - m;
            let blocked = match c.relation {
                Relation::Equal => false,
                Relation::AtMost => *l <= 0.0 && g >= 0.0,
                Relation::AtLeast => *l >= 0.0 && g <= 0.0,
            };
            (!blocked).then_some(g * g)
        })
        .sum::<f64>()
        .sqrt()
}

fn finish(
    constraints: &[PowerConstraint],
    multipliers: Vec<f64>,
    state: DualState,
    gradient_norm: f64,
    iterations: usize,
) -> MaxEntDensity {
    let entropy = state.log_z
        + multipliers
            .iter()
            .zip(&state.moments)
            .map(|(l, m)| l * m)
            .sum::<f64>();
    MaxEntDensity {
        constraints: constraints.to_vec(),
        multipliers,
        moments: state.moments,
        kappa0: state.log_z - 1.0,
        entropy,
        gradient_norm,
        iterations,
    }
}

/// Equalities `m_{r_i} = α_i` and upper bounds `m_{s_j} ≤ β_j`.
pub fn solve_maxent_general(equalities: &[(f64, f64)], inequalities: &[(f64, f64)]) -> Result<MaxEntDensity> {
    let constraints: Vec<PowerConstraint> = equalities
        .iter()
        .map(|&(r, a)| PowerConstraint::equal(r, a))
        .chain(inequalities.iter().map(|&(s, b)| PowerConstraint::at_most(s, b)))
        .collect();
    solve_maxent(&constraints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    SmallBeta,
    LargeBeta,
    Intermediate,
}

/// The maximizer `ν*` of `h` over `{m_p ≤ 1, m_q ≤ β}` with certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntSolution {
    pub p: f64,
    pub q: f64,
    pub beta: f64,
    pub params: ExpFamilyParams,
    pub regime: Regime,
    pub m_p_value: f64,
    pub m_q_value: f64,
    pub rate: f64,
    pub entropy: f64,
    pub dual_gradient_norm: f64,
}

/// JSON form of a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxEntRecord {
    pub p: f64,
    pub q: f64,
    pub beta: f64,
    pub regime: Regime,
    pub kappa0: f64,
    pub kappa_p: f64,
    pub kappa_q: f64,
    pub m_p: f64,
    pub m_q: f64,
    pub rate: f64,
}

impl MaxEntSolution {
    pub fn density(&self) -> Result<AnalyticDensity> {
        match self.regime {
            Regime::SmallBeta => AnalyticDensity::scaled_generalized_gaussian(self.q, self.beta),
            Regime::LargeBeta => AnalyticDensity::generalized_gaussian(PExponent::Finite(self.p)),
            Regime::Intermediate => self.params.density(),
        }
    }

    /// `(κ_p (m_p - 1), κ_q (m_q - β))`.
    pub fn slackness_residuals(&self) -> (f64, f64) {
        (
            self.params.kappa_p * (self.m_p_value - 1.0),
            self.params.kappa_q * (self.m_q_value - self.beta),
        )
    }

    pub fn record(&self) -> MaxEntRecord {
        MaxEntRecord {
            p: self.p,
            q: self.q,
            beta: self.beta,
            regime: self.regime,
            kappa0: self.params.kappa0,
            kappa_p: self.params.kappa_p,
            kappa_q: self.params.kappa_q,
            m_p: self.m_p_value,
            m_q: self.m_q_value,
            rate: self.rate,
        }
    }
}

fn power_kappa0(r: f64, scale: f64) -> f64 {
    // density exp(-(|x|/s)^r) / (2 s Γ(1+1/r)) = exp(-1 - κ₀ - ...)
    (2.0 * scale).ln() + ln_gamma(1.0 + 1.0 / r) - 1.0
}

/// Solves for `ν*` with `C = [0, β]`, classifying the β regime.
pub fn solve_nu_star(p: PExponent, q: f64, beta: f64) -> Result<MaxEntSolution> {
    let p_val = p.value("the constrained maximum-entropy problem (no finite beta threshold at p = inf)")?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("beta must be positive and finite, got {beta}")));
    }
    let t = thresholds(p, q)?;
    let c_p = rate_constant(p);
    if beta <= t.beta_small {
        let nu = AnalyticDensity::scaled_generalized_gaussian(q, beta)?;
        let rate = rate_hp(&nu, p)?.value;
        let scale = (beta * q).powf(1.0 / q);
        return Ok(MaxEntSolution {
            p: p_val,
            q,
            beta,
            params: ExpFamilyParams {
                kappa0: power_kappa0(q, scale),
                kappa_p: 0.0,
                kappa_q: 1.0 / (beta * q),
                p: p_val,
                q,
            },
            regime: Regime::SmallBeta,
            m_p_value: moment_scaled_gg(p_val, q, beta),
            m_q_value: beta,
            rate,
            entropy: c_p - rate,
            dual_gradient_norm: 0.0,
        });
    }
    if beta >= t.beta_large {
        let nu = AnalyticDensity::generalized_gaussian(p)?;
        let rate = rate_hp(&nu, p)?.value;
        return Ok(MaxEntSolution {
            p: p_val,
            q,
            beta,
            params: ExpFamilyParams {
                kappa0: power_kappa0(p_val, p_val.powf(1.0 / p_val)),
                kappa_p: 1.0 / p_val,
                kappa_q: 0.0,
                p: p_val,
                q,
            },
            regime: Regime::LargeBeta,
            m_p_value: 1.0,
            m_q_value: t.beta_large,
            rate,
            entropy: c_p - rate,
            dual_gradient_norm: 0.0,
        });
    }
    let constraints = [PowerConstraint::at_most(p_val, 1.0), PowerConstraint::at_most(q, beta)];
    let sol = solve_maxent_from(&constraints, vec![0.0, 1.0 / (beta * q)])?;
    let params = sol.params(p_val, q)?;
    if !(params.kappa_p > 0.0 && params.kappa_q > 0.0) {
        return Err(Error::Numerical(format!(
            "intermediate regime produced an inactive multiplier: kappa_p={}, kappa_q={}",
            params.kappa_p, params.kappa_q
        )));
    }
    let nu = params.density()?;
    let rate = rate_hp(&nu, p)?.value;
    let from_dual = c_p - sol.entropy;
    if (rate - from_dual).abs() > 1e-8 {
        return Err(Error::Numerical(format!(
            "rate from dual entropy {from_dual:e} disagrees with rate function {rate:e}"
        )));
    }
    Ok(MaxEntSolution {
        p: p_val,
        q,
        beta,
        params,
        regime: Regime::Intermediate,
        m_p_value: sol.moments[0],
        m_q_value: sol.moments[1],
        rate,
        entropy: sol.entropy,
        dual_gradient_norm: sol.gradient_norm,
    })
}
