use std::fmt::Write as _;

use lpsphere::analytic::{thresholds, AnalyticDensity};
use lpsphere::maxent::{solve_nu_star, Regime};
use lpsphere::measures::{ks_distance, ks_two_sample, EmpiricalMeasure};
use lpsphere::rare_event::{
    estimate_rare_prob, pbm_marginals, sample_conditional, wls_slope, write_chain_csv, write_estimates_csv,
    ConditionalChainConfig, CsvHeader, Method, SphereMeasure,
};
use lpsphere::sampling::{sample_cone, sample_surface, SpherePoint};
use lpsphere::{Interval, PExponent, RngStream};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Experiment, ExperimentConfig};
use crate::CliError;

/// A named CSV body destined for the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub metrics: Value,
    pub tables: Vec<Table>,
    /// Set when some estimate had too small an effective sample size.
    pub unreliable: Option<String>,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let root = RngStream::new(config.seed, 0);
    match config.experiment {
        Experiment::Sample => sample(config, &root),
        Experiment::Pbm => pbm(config, &root),
        Experiment::RateCurve => rate_curve(config, &root),
        Experiment::Gibbs => gibbs(config, &root),
        Experiment::Maxent => maxent(config),
        Experiment::SurfaceCheck => surface_check(config, &root),
    }
}

fn mu_p(p: PExponent) -> Result<AnalyticDensity, CliError> {
    Ok(AnalyticDensity::generalized_gaussian(p)?)
}

fn scale(n: usize, p: PExponent) -> f64 {
    (n as f64).powf(p.recip())
}

fn sample(config: &ExperimentConfig, root: &RngStream) -> Result<Outcome, CliError> {
    let p = config.p;
    let q = config.q_finite()?;
    let reference = mu_p(p)?;
    let per_n: Vec<(usize, Vec<SpherePoint>)> = config
        .n_list
        .par_iter()
        .map(|&n| {
            let mut rng = root.substream(n as u64);
            let points = match config.measure {
                SphereMeasure::Cone => (0..config.budget)
                    .map(|_| sample_cone(p, n, &mut rng))
                    .collect::<lpsphere::Result<Vec<_>>>()?,
                SphereMeasure::Surface => sample_surface(p, n, config.budget, true, &mut rng)?.points,
            };
            Ok((n, points))
        })
        .collect::<Result<_, CliError>>()?;
    let mut tables = Vec::new();
    let mut metrics = Vec::new();
    for (n, points) in per_n {
        let s = scale(n, p);
        let k = config.k.min(n);
        let mut body = String::new();
        let cols: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
        writeln!(body, "draw,{},m_q", cols.join(",")).unwrap();
        let mut firsts = Vec::with_capacity(points.len());
        let mut sphere_error: f64 = 0.0;
        let mut mean_mq = 0.0;
        for (i, x) in points.iter().enumerate() {
            let vals: Vec<String> = x.coords[..k].iter().map(|c| (c * s).to_string()).collect();
            let mq = x.scaled_moment(q);
            writeln!(body, "{i},{},{mq}", vals.join(",")).unwrap();
            firsts.push(x.coords[0] * s);
            sphere_error = sphere_error.max((x.norm() - 1.0).abs());
            mean_mq += mq / points.len() as f64;
        }
        let ks = ks_distance(&EmpiricalMeasure::uniform(firsts)?, &reference);
        metrics.push(json!({"n": n, "ks_first_coordinate": ks, "mean_m_q": mean_mq, "max_sphere_error": sphere_error}));
        tables.push(Table {
            name: format!("sample_n{n}.csv"),
            body,
        });
    }
    Ok(Outcome {
        metrics: json!({ "per_n": metrics }),
        tables,
        unreliable: None,
    })
}

fn pbm(config: &ExperimentConfig, root: &RngStream) -> Result<Outcome, CliError> {
    let p = config.p;
    let reference = mu_p(p)?;
    let mut body = String::from("n,draws,ks,corr_abs_p\n");
    let mut metrics = Vec::new();
    let mut ks_values = Vec::new();
    for &n in &config.n_list {
        let k = config.k.max(if n >= 2 { 2 } else { 1 });
        let rows = pbm_marginals(p, n, k, config.budget, config.measure, root)?;
        let first: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let ks = ks_distance(&EmpiricalMeasure::uniform(first)?, &reference);
        let corr = if k >= 2 {
            let r = match p {
                PExponent::Finite(p) => p,
                PExponent::Infinity => 1.0,
            };
            let a: Vec<f64> = rows.iter().map(|v| v[0].abs().powf(r)).collect();
            let b: Vec<f64> = rows.iter().map(|v| v[1].abs().powf(r)).collect();
            correlation(&a, &b)
        } else {
            f64::NAN
        };
        writeln!(body, "{n},{},{ks},{corr}", config.budget).unwrap();
        metrics.push(json!({"n": n, "ks": ks, "corr_abs_p": if corr.is_finite() { json!(corr) } else { Value::Null }}));
        ks_values.push(ks);
    }
    let decreasing = ks_values.windows(2).all(|w| w[1] < w[0]);
    Ok(Outcome {
        metrics: json!({ "per_n": metrics, "ks_strictly_decreasing": decreasing }),
        tables: vec![Table {
            name: "pbm.csv".into(),
            body,
        }],
        unreliable: None,
    })
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
    cov / (va * vb).sqrt()
}

fn event_interval(config: &ExperimentConfig) -> Result<Interval, CliError> {
    Ok(Interval::upto(config.beta + config.epsilon())?)
}

fn rate_curve(config: &ExperimentConfig, root: &RngStream) -> Result<Outcome, CliError> {
    let (p, q) = (config.p, config.q_finite()?);
    let interval = event_interval(config)?;
    let mut estimates = Vec::new();
    for &n in &config.n_list {
        estimates.push(estimate_rare_prob(
            p,
            q,
            n,
            interval,
            Method::TiltedIs,
            config.budget,
            &root.substream(n as u64),
        )?);
    }
    let header = CsvHeader {
        p,
        q,
        n: None,
        interval,
        seed: config.seed,
        method: "tilted_is".into(),
    };
    let mut buf = Vec::new();
    write_estimates_csv(&mut buf, &header, &estimates)?;
    let finite: Vec<_> = estimates.iter().filter(|e| e.log_prob.is_finite()).collect();
    let fit = if finite.len() >= 2 {
        let xs: Vec<f64> = finite.iter().map(|e| e.n as f64).collect();
        let ys: Vec<f64> = finite.iter().map(|e| -e.log_prob).collect();
        let vs: Vec<f64> = finite.iter().map(|e| e.std_error * e.std_error).collect();
        Some(wls_slope(&xs, &ys, &vs)?)
    } else {
        None
    };
    let at_beta = solve_nu_star(p, q, config.beta)?;
    let at_interval = solve_nu_star(p, q, interval.hi)?;
    let unreliable: Vec<usize> = estimates.iter().filter(|e| !e.reliable).map(|e| e.n).collect();
    let metrics = json!({
        "estimates": estimates.iter().map(|e| json!({
            "n": e.n,
            "log_prob": finite_or_null(e.log_prob),
            "std_error": finite_or_null(e.std_error),
            "ess": e.ess,
            "hits": e.hits,
            "reliable": e.reliable,
        })).collect::<Vec<_>>(),
        "interval": [interval.lo, interval.hi],
        "fit": fit.map(|f| json!({"slope": f.slope, "intercept": f.intercept, "slope_se": f.slope_se})),
        "analytic_rate_beta": at_beta.rate,
        "analytic_rate_interval": at_interval.rate,
        "thresholds": thresholds(p, q)?,
    });
    Ok(Outcome {
        metrics,
        tables: vec![Table {
            name: "rate_curve.csv".into(),
            body: String::from_utf8(buf).expect("utf-8"),
        }],
        unreliable: (!unreliable.is_empty())
            .then(|| format!("effective sample size below threshold at n = {unreliable:?}")),
    })
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn gibbs(config: &ExperimentConfig, root: &RngStream) -> Result<Outcome, CliError> {
    let (p, q) = (config.p, config.q_finite()?);
    let interval = event_interval(config)?;
    let limit = solve_nu_star(p, q, config.beta)?;
    let limit_density = limit.density()?;
    let reference = mu_p(p)?;
    let mut tables = Vec::new();
    let mut metrics = Vec::new();
    for &n in &config.n_list {
        let chain_config = ConditionalChainConfig::new(p, n, interval);
        let mut chain = sample_conditional(p, q, n, interval, chain_config, root.substream(n as u64))?;
        let points: Vec<SpherePoint> = (&mut chain).take(config.budget).collect();
        let s = scale(n, p);
        let mid = n / 2;
        let first: Vec<f64> = points.iter().map(|x| x.coords[0] * s).collect();
        let other: Vec<f64> = points.iter().map(|x| x.coords[mid] * s).collect();
        let half = first.len() / 2;
        let first_m = EmpiricalMeasure::uniform(first.clone())?;
        let split = ks_two_sample(
            &EmpiricalMeasure::uniform(first[..half].to_vec())?,
            &EmpiricalMeasure::uniform(first[half..].to_vec())?,
        );
        metrics.push(json!({
            "n": n,
            "kept": points.len(),
            "ks_limit": ks_distance(&first_m, &limit_density),
            "ks_mu_p": ks_distance(&first_m, &reference),
            "ks_exchange": ks_two_sample(&first_m, &EmpiricalMeasure::uniform(other)?),
            "exchange_coordinate": mid + 1,
            "ks_split_half": split,
            "acceptance_rate": chain.acceptance_rate(),
            "proposal_scale": chain.proposal_scale(),
            "init_sweeps": chain.init_sweeps(),
        }));
        let header = CsvHeader {
            p,
            q,
            n: Some(n),
            interval,
            seed: config.seed,
            method: "restricted_metropolis".into(),
        };
        let mut buf = Vec::new();
        write_chain_csv(&mut buf, &header, &points, config.k.min(n))?;
        tables.push(Table {
            name: format!("gibbs_n{n}.csv"),
            body: String::from_utf8(buf).expect("utf-8"),
        });
    }
    Ok(Outcome {
        metrics: json!({"per_n": metrics, "interval": [interval.lo, interval.hi], "limit": limit.record()}),
        tables,
        unreliable: None,
    })
}

fn maxent(config: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (p, q) = (config.p, config.q_finite()?);
    let solution = solve_nu_star(p, q, config.beta)?;
    let t = thresholds(p, q)?;
    let mut body = String::from("beta,regime,rate,kappa0,kappa_p,kappa_q,m_p,m_q\n");
    let top = 1.5 * t.beta_large.max(config.beta);
    for i in 1..=60 {
        let beta = top * i as f64 / 60.0;
        let s = solve_nu_star(p, q, beta)?;
        let r = s.record();
        writeln!(
            body,
            "{beta},{},{},{},{},{},{},{}",
            regime_name(r.regime),
            r.rate,
            r.kappa0,
            r.kappa_p,
            r.kappa_q,
            r.m_p,
            r.m_q
        )
        .unwrap();
    }
    Ok(Outcome {
        metrics: json!({"solution": solution.record(), "thresholds": t}),
        tables: vec![Table {
            name: "maxent_beta_grid.csv".into(),
            body,
        }],
        unreliable: None,
    })
}

fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::SmallBeta => "SmallBeta",
        Regime::LargeBeta => "LargeBeta",
        Regime::Intermediate => "Intermediate",
    }
}

fn surface_check(config: &ExperimentConfig, root: &RngStream) -> Result<Outcome, CliError> {
    let p = config.p;
    let pv = p.value("surface measure")?;
    let r = 2.0 * pv - 2.0;
    let mut body = String::from(
        "n,log_weight_min,log_weight_max,spread,spread_bound,within_bound,m_min,m_max,m_lower,m_upper,ess\n",
    );
    let mut metrics = Vec::new();
    for &n in &config.n_list {
        let sample = sample_surface(p, n, config.budget, false, &mut root.substream(n as u64))?;
        let ms: Vec<f64> = sample.points.iter().map(|x| x.scaled_moment(r)).collect();
        let m_min = ms.iter().copied().fold(f64::INFINITY, f64::min);
        let m_max = ms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let edge = (n as f64).powf(1.0 - 2.0 / pv);
        let (lower, upper) = (edge.min(1.0), edge.max(1.0));
        let st = &sample.stats;
        let ess = sample.effective_sample_size();
        writeln!(
            body,
            "{n},{},{},{},{},{},{m_min},{m_max},{lower},{upper},{ess}",
            st.log_weight_min,
            st.log_weight_max,
            st.spread(),
            st.spread_bound(),
            st.within_bound()
        )
        .unwrap();
        metrics.push(json!({
            "n": n,
            "spread": st.spread(),
            "spread_bound": st.spread_bound(),
            "within_bound": st.within_bound(),
            "moment_in_bounds": m_min >= lower * (1.0 - 1e-12) && m_max <= upper * (1.0 + 1e-12),
            "ess": ess,
        }));
    }
    Ok(Outcome {
        metrics: json!({ "per_n": metrics, "moment_order": r }),
        tables: vec![Table {
            name: "surface_check.csv".into(),
            body,
        }],
        unreliable: None,
    })
}
