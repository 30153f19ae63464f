use lpsphere::analytic::{cdf_mu_p, PExponent};
use lpsphere::measures::{ks_distance_with, EmpiricalMeasure};
use lpsphere::rare_event::{estimate_rare_prob, pbm_marginals, Method, SphereMeasure};
use lpsphere::{Interval, RngStream};

fn fin(p: f64) -> PExponent {
    PExponent::Finite(p)
}

#[test]
fn tilted_is_matches_direct_at_small_n() {
    let grid = [
        (2.0, 1.0, 5, Interval::upto(0.5).unwrap()),
        (2.0, 1.0, 6, Interval::upto(0.6).unwrap()),
        (3.0, 1.5, 4, Interval::upto(0.7).unwrap()),
        (2.0, 1.5, 6, Interval::new(0.96, 1.0).unwrap()),
        (3.0, 2.0, 5, Interval::new(0.6, 0.75).unwrap()),
    ];
    for (i, (p, q, n, iv)) in grid.into_iter().enumerate() {
        let rng = RngStream::new(40 + i as u64, 0);
        let direct = estimate_rare_prob(fin(p), q, n, iv, Method::Direct, 2_000_000, &rng).unwrap();
        let tilted = estimate_rare_prob(fin(p), q, n, iv, Method::TiltedIs, 100_000, &rng.substream(1)).unwrap();
        assert!(direct.reliable && tilted.reliable, "{p} {q} {n}");
        let se = (direct.std_error.powi(2) + tilted.std_error.powi(2)).sqrt();
        assert!(
            (direct.log_prob - tilted.log_prob).abs() < 3.0 * se,
            "p={p} q={q} n={n}: {} vs {} (se {se})",
            direct.log_prob,
            tilted.log_prob
        );
    }
}

#[test]
fn log_prob_grows_with_the_interval() {
    let rng = RngStream::new(5, 0);
    let mut prev: Option<(f64, f64)> = None;
    for hi in [0.45, 0.5, 0.55, 0.6, 0.7] {
        let e = estimate_rare_prob(fin(2.0), 1.0, 20, Interval::upto(hi).unwrap(), Method::TiltedIs, 20_000, &rng)
            .unwrap();
        assert!(e.log_prob <= 0.0 && e.std_error >= 0.0);
        if let Some((lp, se)) = prev {
            assert!(lp <= e.log_prob + 3.0 * (se * se + e.std_error * e.std_error).sqrt(), "hi={hi}");
        }
        prev = Some((e.log_prob, e.std_error));
    }
}

#[test]
fn estimates_are_deterministic() {
    let iv = Interval::upto(0.5).unwrap();
    let a = estimate_rare_prob(fin(2.0), 1.0, 20, iv, Method::TiltedIs, 5000, &RngStream::new(9, 3)).unwrap();
    let b = estimate_rare_prob(fin(2.0), 1.0, 20, iv, Method::TiltedIs, 5000, &RngStream::new(9, 3)).unwrap();
    assert_eq!(a, b);
}

fn ks_mu_p(p: PExponent, xs: Vec<f64>) -> f64 {
    ks_distance_with(&EmpiricalMeasure::uniform(xs).unwrap(), |y| cdf_mu_p(p, y))
}

#[test]
fn pbm_marginal_near_gaussian() {
    let rows = pbm_marginals(fin(2.0), 1000, 1, 10_000, SphereMeasure::Cone, &RngStream::new(1, 0)).unwrap();
    assert!(ks_mu_p(fin(2.0), rows.into_iter().map(|r| r[0]).collect()) < 0.02);
}

#[test]
fn pbm_pairs_decorrelate() {
    let rows = pbm_marginals(fin(3.0), 1000, 2, 10_000, SphereMeasure::Cone, &RngStream::new(2, 0)).unwrap();
    let a: Vec<f64> = rows.iter().map(|r| r[0].abs().powi(3)).collect();
    let b: Vec<f64> = rows.iter().map(|r| r[1].abs().powi(3)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&a), mean(&b));
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
    let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / b.len() as f64).sqrt();
    assert!((cov / (sa * sb)).abs() < 0.05);
}

#[test]
fn pbm_ks_shrinks_with_n() {
    let rng = RngStream::new(3, 0);
    let ks: Vec<f64> = [10, 100, 1000]
        .iter()
        .map(|&n| {
            let rows = pbm_marginals(fin(3.0), n, 1, 10_000, SphereMeasure::Cone, &rng).unwrap();
            ks_mu_p(fin(3.0), rows.into_iter().map(|r| r[0]).collect())
        })
        .collect();
    assert!(ks[0] > ks[1] && ks[1] > ks[2], "{ks:?}");
    assert!(ks[2] < 0.02);
}

#[test]
fn pbm_surface_marginal() {
    let rows = pbm_marginals(fin(3.0), 500, 1, 10_000, SphereMeasure::Surface, &RngStream::new(4, 0)).unwrap();
    assert!(ks_mu_p(fin(3.0), rows.into_iter().map(|r| r[0]).collect()) < 0.03);
    assert!(pbm_marginals(PExponent::Infinity, 5, 1, 10, SphereMeasure::Surface, &RngStream::new(4, 0)).is_err());
}
