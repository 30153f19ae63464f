use lpsphere::analytic::{moment_mu_p, thresholds, AnalyticDensity, PExponent};
use lpsphere::entropy_rate::entropy;
use lpsphere::maxent::{solve_maxent_general, solve_nu_star, MaxEntSolution, Regime};
use lpsphere::quadrature::{integrate, Tolerance};
use lpsphere::RngStream;
use proptest::prelude::*;
use rand::Rng;

fn fin(p: f64) -> PExponent {
    PExponent::Finite(p)
}

fn close(a: &MaxEntSolution, b: &MaxEntSolution, tol: f64) {
    assert!((a.params.kappa_p - b.params.kappa_p).abs() < tol, "kappa_p {} {}", a.params.kappa_p, b.params.kappa_p);
    assert!((a.params.kappa_q - b.params.kappa_q).abs() < tol, "kappa_q {} {}", a.params.kappa_q, b.params.kappa_q);
    assert!((a.rate - b.rate).abs() < tol, "rate {} {}", a.rate, b.rate);
}

#[test]
fn regimes_join_continuously() {
    for (p, q) in [(2.0, 1.0), (3.0, 1.5), (4.0, 2.0)] {
        let t = thresholds(fin(p), q).unwrap();
        let d = 1e-8;
        let below = solve_nu_star(fin(p), q, t.beta_small - d).unwrap();
        let above = solve_nu_star(fin(p), q, t.beta_small + d).unwrap();
        assert_eq!(below.regime, Regime::SmallBeta);
        assert_eq!(above.regime, Regime::Intermediate);
        close(&below, &above, 1e-6);
        let below = solve_nu_star(fin(p), q, t.beta_large - d).unwrap();
        let above = solve_nu_star(fin(p), q, t.beta_large + d).unwrap();
        assert_eq!(below.regime, Regime::Intermediate);
        assert_eq!(above.regime, Regime::LargeBeta);
        close(&below, &above, 1e-6);
    }
}

#[test]
fn rate_is_nonincreasing_in_beta() {
    for (p, q) in [(2.0, 1.0), (3.0, 2.0)] {
        let t = thresholds(fin(p), q).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..=40 {
            let beta = 1.2 * t.beta_large * i as f64 / 40.0;
            let s = solve_nu_star(fin(p), q, beta).unwrap();
            assert!(s.rate <= prev + 1e-10, "beta={beta}");
            assert!(s.rate >= -1e-12);
            prev = s.rate;
        }
        assert!(prev.abs() < 1e-10);
    }
}

#[test]
fn solution_density_is_normalized() {
    for beta in [0.5, 0.72, 0.75, 0.78, 0.9] {
        let s = solve_nu_star(fin(2.0), 1.0, beta).unwrap();
        let k = s.params;
        let tol = Tolerance::default();
        let mass = 2.0 * integrate(|x| k.log_density(x).exp(), 0.0, 60.0, tol).value;
        assert!((mass - 1.0).abs() < 1e-10, "beta={beta}: {mass}");
        let h = 1.0 + k.kappa0 + k.kappa_p * s.m_p_value + k.kappa_q * s.m_q_value;
        assert!((h - s.entropy).abs() < 1e-9);
    }
}

#[test]
fn general_solver_agrees_with_nu_star() {
    let s = solve_nu_star(fin(2.0), 1.0, 0.75).unwrap();
    let g = solve_maxent_general(&[], &[(2.0, 1.0), (1.0, 0.75)]).unwrap();
    assert!((g.multipliers[0] - s.params.kappa_p).abs() < 1e-8);
    assert!((g.multipliers[1] - s.params.kappa_q).abs() < 1e-8);
    assert!((g.entropy - s.entropy).abs() < 1e-10);
}

/// A random symmetric density rescaled so that `m_p ≤ 1` and `m_q ≤ β`.
fn feasible_entropy(rng: &mut RngStream, p: f64, q: f64, beta: f64) -> f64 {
    let d = match rng.random_range(0..4) {
        0 => AnalyticDensity::generalized_gaussian(fin(rng.random_range(1.0..6.0))).unwrap(),
        1 => AnalyticDensity::uniform(1.0).unwrap(),
        2 => AnalyticDensity::exp_family(rng.random_range(0.05..3.0), rng.random_range(0.05..3.0), p, q).unwrap(),
        _ => {
            let r = rng.random_range(1.0..4.0);
            AnalyticDensity::scaled_generalized_gaussian(r, rng.random_range(0.2..2.0)).unwrap()
        }
    };
    let m_p = d.moment_finite(p);
    let m_q = d.moment_finite(q);
    let c = (1.0 / m_p).powf(1.0 / p).min((beta / m_q).powf(1.0 / q)) * rng.random_range(0.8..1.0);
    entropy(&d) + c.ln()
}

#[test]
fn no_feasible_perturbation_beats_the_optimum() {
    let mut rng = RngStream::new(17, 0);
    for (p, q) in [(2.0, 1.0), (3.0, 1.5)] {
        let t = thresholds(fin(p), q).unwrap();
        for beta in [0.7 * t.beta_small, 0.5 * (t.beta_small + t.beta_large), 1.1 * t.beta_large] {
            let best = solve_nu_star(fin(p), q, beta).unwrap().entropy;
            for _ in 0..50 {
                let h = feasible_entropy(&mut rng, p, q, beta);
                assert!(h <= best + 1e-9, "p={p} beta={beta}: {h} > {best}");
            }
        }
    }
}

#[test]
fn large_beta_matches_mu_p_moment() {
    let s = solve_nu_star(fin(3.0), 2.0, 5.0).unwrap();
    assert_eq!(s.regime, Regime::LargeBeta);
    assert!((s.m_q_value - moment_mu_p(fin(3.0), 2.0).unwrap()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_are_feasible_and_complementary(p in 1.5f64..4.0, frac in 0.3f64..0.9, scale in 0.3f64..1.3) {
        let q = (frac * p).max(1.0);
        prop_assume!(q < p);
        let t = thresholds(fin(p), q).unwrap();
        let s = solve_nu_star(fin(p), q, scale * t.beta_large).unwrap();
        prop_assert!(s.m_p_value <= 1.0 + 1e-8);
        prop_assert!(s.m_q_value <= s.beta + 1e-8);
        prop_assert!(s.params.kappa_p >= 0.0 && s.params.kappa_q >= 0.0);
        let (a, b) = s.slackness_residuals();
        prop_assert!(a.abs() < 1e-8 && b.abs() < 1e-8);
    }
}
