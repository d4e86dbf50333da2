//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p mmh-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mmh_core::markov_chain::MarkovChainSpec;
use mmh_core::models::presets;
use mmh_core::regime_expectation::{separable_integrand, xi_mc, xi_ode_default};
use mmh_core::riccati::{
    b_separable, char_fn_coeffs, compose_piecewise, d_leverage, riccati_numeric, separable_coefficient,
    RiccatiSegment,
};
use mmh_core::simulate::{
    expected_utility_mc, martingale_diagnostic, simulate_paths, ConstantStrategy,
};
use mmh_core::value_strategy::{
    optimal_strategy, separable_value, value_smmh_rho, value_timedep_heston, OptimalStrategy,
};
use mmh_core::{HestonRegimeParams, RegimePath, RiskPremium, SimConfig, ValueQuery, Variant};
use rand::Rng;

const REFERENCE_SET1: f64 = 7.4261;
const REFERENCE_SET2: f64 = -0.0802;
const MC_PATHS: usize = 100_000;
const STEPS_PER_YEAR: usize = 250;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reference_formula() -> Outcome {
    let start = Instant::now();
    let p = presets::set1();
    let chain = presets::calm_turbulent_chain();
    let ups = separable_integrand(&p).map_err(|e| e.to_string())?;
    let xi = xi_ode_default(&chain, &ups).map_err(|e| e.to_string())?;
    let q = ValueQuery::new(0.0, presets::V0, presets::X0, 0).unwrap();
    let ode = value_smmh_rho(&p, &q, &xi).map_err(|e| e.to_string())?;

    let est = xi_mc(&chain, &ups, 0.0, 0, 10_000, 20_240_501).map_err(|e| e.to_string())?;
    let mc = separable_value(&p, &q, est.mean).map_err(|e| e.to_string())?;
    let scale = separable_value(&p, &q, 1.0).map_err(|e| e.to_string())?;
    let se = scale.abs() * est.std_err;
    let z = (mc - REFERENCE_SET1) / se;
    let elapsed = start.elapsed();
    check(
        (ode - REFERENCE_SET1).abs() <= 0.005 && z.abs() < 3.0 && elapsed < Duration::from_secs(10),
        format!(
            "ODE {ode:.6} (|diff| {:.2e} <= 5e-3); MC {mc:.6} se {se:.2e} z {z:+.2} (|z| < 3); {:.2}s (< 10s)",
            (ode - REFERENCE_SET1).abs(),
            elapsed.as_secs_f64()
        ),
    )
}

fn full_mc(p: &HestonRegimeParams, target: f64, seed: u64) -> Outcome {
    let start = Instant::now();
    let chain = presets::calm_turbulent_chain();
    let strategy = OptimalStrategy::new(p).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(MC_PATHS, STEPS_PER_YEAR, presets::HORIZON, seed);
    let bundle = simulate_paths(p, &chain, &strategy, &cfg).map_err(|e| e.to_string())?;
    let est = expected_utility_mc(&bundle, p.delta());
    let z = est.z_score(target);
    let elapsed = start.elapsed();
    check(
        z.abs() < 3.0 && elapsed < Duration::from_secs(15 * 60),
        format!(
            "mean {:.6} se {:.2e} vs {target} z {z:+.2} (|z| < 3); {} paths, {} steps/yr, {:.1}s (< 900s)",
            est.mean,
            est.std_err,
            MC_PATHS,
            STEPS_PER_YEAR,
            elapsed.as_secs_f64()
        ),
    )
}

fn xi_oracle() -> Outcome {
    let mut rng = common::rng(11);
    let mut worst: f64 = 0.0;
    for i in 0..25 {
        let n = rng.random_range(2..=4);
        let chain = common::random_chain(&mut rng, n);
        let p = common::random_separable(&mut rng, n, i % 2 == 1);
        let ups = separable_integrand(&p).map_err(|e| e.to_string())?;
        let table = xi_ode_default(&chain, &ups).map_err(|e| e.to_string())?;
        let t = rng.random_range(0.0..4.0);
        let e = rng.random_range(0..n);
        let est = xi_mc(&chain, &ups, t, e, 10_000, 1000 + i).map_err(|e| e.to_string())?;
        let z = est.z_score(table.value(t, e));
        worst = worst.max(z.abs());
    }
    check(worst < 3.0, format!("max |z| = {worst:.2} over 25 models (< 3)"))
}

fn separable_oracle() -> Outcome {
    let mut rng = common::rng(12);
    let mut worst: f64 = 0.0;
    for i in 0..25 {
        let n = rng.random_range(1..=3);
        let p = common::random_separable(&mut rng, n, i % 2 == 0);
        let tilt = p.tilted(0);
        let seg = RiccatiSegment {
            start: 0.0,
            end: p.horizon(),
            kappa: tilt.kappa,
            theta: tilt.theta,
            chi: tilt.chi,
            beta: tilt.beta,
        };
        let grid = riccati_numeric(&[seg], 0.0, 1e-4).map_err(|e| e.to_string())?;
        let vt = p.vartheta();
        for &(t, _, b) in &grid.points {
            let closed = separable_coefficient(&p, t).map_err(|e| e.to_string())?;
            worst = worst.max((closed - vt * b).abs());
        }
    }
    check(worst <= 1e-8, format!("sup |closed - numeric| = {worst:.2e} over 25 draws (<= 1e-8)"))
}

fn compose_oracle() -> Outcome {
    let mut rng = common::rng(13);
    let mut worst: f64 = 0.0;
    for i in 0..25 {
        let n = rng.random_range(2..=4);
        let p = common::random_mmh(&mut rng, n, None);
        let path = common::random_path(&mut rng, n, p.horizon(), i % 6);
        let pw = compose_piecewise(&path, &p).map_err(|e| e.to_string())?;
        let grid = riccati_numeric(&pw.riccati_segments(), 0.0, 1e-4).map_err(|e| e.to_string())?;
        for &(t, a, b) in &grid.points {
            let c = pw.eval(t).map_err(|e| e.to_string())?;
            worst = worst.max((c.a - a).abs()).max((c.b - b).abs());
        }
    }
    check(worst <= 1e-7, format!("sup |closed - numeric| (A and B) = {worst:.2e} on 25 paths with 0-5 jumps (<= 1e-7)"))
}

fn char_fn_properties() -> Outcome {
    let mut rng = common::rng(14);
    let horizon = 5.0;
    let mut failures = Vec::new();
    let mut nonneg = 0;
    for draw in 0..100 {
        let kappa: f64 = rng.random_range(0.5..6.0);
        let theta: f64 = rng.random_range(0.01..0.1);
        let chi: f64 = rng.random_range(0.1..1.0);
        let chi2 = chi * chi;
        let beta_max = kappa * kappa / (2.0 * chi2);
        let positive = draw % 2 == 0;
        // |α| <= 5 and |β| <= 50 keep |B'(0)| below 100, the scale the τ = 1e-8
        // limit tolerance of 1e-6 can resolve
        let beta_hi = (0.95 * beta_max).min(50.0);
        let beta = if positive {
            rng.random_range(0.0..beta_hi)
        } else {
            rng.random_range(-50.0..beta_hi)
        };
        let a = (kappa * kappa - 2.0 * beta * chi2).sqrt();
        let (lo_root, hi_root) = ((kappa - a) / chi2, (kappa + a) / chi2);
        let alpha_hi = (0.95 * hi_root).min(5.0);
        let alpha = if positive {
            rng.random_range(0.0..alpha_hi)
        } else {
            rng.random_range(-5.0..alpha_hi)
        };
        let coeffs = |alpha: f64, tau: f64| char_fn_coeffs(kappa, theta, chi, alpha, beta, tau).unwrap();
        let taus: Vec<f64> = (0..=5000).map(|k| k as f64 * 1e-3).collect();
        let path: Vec<_> = taus.iter().map(|&tau| coeffs(alpha, tau)).collect();
        let mut fail = |what: &str| failures.push(format!("draw {draw}: {what}"));

        // B monotone in τ, in the direction of B'(0)
        let slope0 = 0.5 * chi2 * alpha * alpha - kappa * alpha + beta;
        let tol = 1e-12 * (1.0 + alpha.abs() + hi_root);
        let monotone = path.windows(2).all(|w| {
            let step = w[1].b - w[0].b;
            if slope0 >= 0.0 {
                step >= -tol
            } else {
                step <= tol
            }
        });
        if !monotone {
            fail("B not monotone");
        }
        // τ ↓ 0
        if (coeffs(alpha, 1e-8).b - alpha).abs() >= 1e-6 {
            fail("B(1e-8) far from alpha");
        }
        // τ → ∞ limit and its sign
        let far = coeffs(alpha, 1e3).b;
        if (far - lo_root).abs() >= 1e-6 {
            fail("B(1e3) far from (kappa - a)/chi^2");
        }
        let limit_sign = if lo_root.abs() < 1e-12 { 0.0 } else { lo_root.signum() };
        let beta_sign = if beta == 0.0 { 0.0 } else { beta.signum() };
        if limit_sign != beta_sign {
            fail("sign of the long-horizon limit differs from sign(beta)");
        }
        // A nondecreasing and bounded for α, β ≥ 0
        if alpha >= 0.0 && beta >= 0.0 {
            nonneg += 1;
            if path.windows(2).any(|w| w[1].a < w[0].a - 1e-12 * (1.0 + w[0].a.abs())) {
                fail("A decreasing");
            }
            let lower = -2.0 * kappa * theta / chi2 * (1.0 + horizon * kappa).ln();
            let upper = 3.0 * kappa * kappa * theta * horizon / chi2;
            if path.iter().any(|c| c.a < lower || c.a > upper) {
                fail("A outside its bounds");
            }
        }
        // domination by any c2 between the roots
        let c2 = rng.random_range(lo_root..hi_root);
        let below = c2 - rng.random_range(0.01..3.0);
        if taus.iter().any(|&tau| coeffs(below, tau).b >= c2) {
            fail("B not dominated by c2");
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("6 properties on 100 draws ({nonneg} with alpha, beta >= 0)")
        } else {
            failures.join("; ")
        },
    )
}

fn martingale() -> Outcome {
    let start = Instant::now();
    let p = presets::set1();
    let chain = presets::calm_turbulent_chain();
    let ups = separable_integrand(&p).map_err(|e| e.to_string())?;
    let xi = xi_ode_default(&chain, &ups).map_err(|e| e.to_string())?;
    let cfg = SimConfig::new(MC_PATHS, STEPS_PER_YEAR, presets::HORIZON, 77);
    let checkpoints = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let opt = OptimalStrategy::new(&p).map_err(|e| e.to_string())?;
    let flat = martingale_diagnostic(&p, &chain, &opt, &xi, &cfg, &checkpoints).map_err(|e| e.to_string())?;
    let control = martingale_diagnostic(&p, &chain, &ConstantStrategy(1.0), &xi, &cfg, &checkpoints)
        .map_err(|e| e.to_string())?;
    let max_z = flat.iter().map(|m| m.z.abs()).fold(0.0, f64::max);
    // control: no significant increase between checkpoints and a significant final drop
    let no_rise = control.windows(2).all(|w| {
        let se = (w[0].std_err.powi(2) + w[1].std_err.powi(2)).sqrt();
        w[1].mean_phi - w[0].mean_phi < 3.0 * se
    });
    let last = control.last().unwrap();
    let dropped = last.z < -3.0;
    let z_list: Vec<String> = flat.iter().map(|m| format!("{:+.2}", m.z)).collect();
    check(
        max_z < 3.0 && no_rise && dropped,
        format!(
            "optimal z = [{}] (max |z| {max_z:.2} < 3); constant pi = 1: Phi {:.4} -> {:.4}, final z {:+.1} (< -3), nonincreasing within noise: {no_rise}; {:.1}s",
            z_list.join(", "),
            control[0].mean_phi,
            last.mean_phi,
            last.z,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn reductions() -> Outcome {
    let base = presets::set1();
    let s = *base.state(0);
    let single = MarkovChainSpec::single_state();
    let lev = HestonRegimeParams::new(
        Variant::SmmhRho,
        vec![s],
        RiskPremium::Global(1.7),
        base.rho(),
        base.delta(),
        base.horizon(),
    )
    .map_err(|e| e.to_string())?;
    let mmh = HestonRegimeParams::new(
        Variant::Mmh,
        vec![s],
        RiskPremium::PerState(vec![1.7 * s.nu]),
        base.rho(),
        base.delta(),
        base.horizon(),
    )
    .map_err(|e| e.to_string())?;
    let xi = xi_ode_default(&single, &separable_integrand(&lev).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let path = RegimePath::constant(0, 0.0, base.horizon());
    let mut worst_rel: f64 = 0.0;
    for &t in &[0.0, 1.3, 2.5, 4.9, 5.0] {
        for &x in &[0.0, 0.001, 0.02, 0.2] {
            let q = ValueQuery::new(t, 10.0, x, 0).unwrap();
            let a = value_timedep_heston(&mmh, &path, &q).map_err(|e| e.to_string())?;
            let b = value_smmh_rho(&lev, &q, &xi).map_err(|e| e.to_string())?;
            worst_rel = worst_rel.max(((a - b) / b).abs());
        }
    }

    // ρ = 0 forces the hedge to vanish
    let mut max_hedge: f64 = 0.0;
    let no_lev = base.with_rho(0.0).map_err(|e| e.to_string())?;
    let mut rng = common::rng(15);
    let general = common::random_mmh(&mut rng, 3, Some(0.0));
    for k in 0..=50 {
        let t = 5.0 * k as f64 / 50.0;
        for e in 0..2 {
            max_hedge = max_hedge.max(optimal_strategy(&no_lev, t, e).unwrap().pi_h.abs());
        }
        for e in 0..3 {
            max_hedge = max_hedge.max(optimal_strategy(&general, t, e).unwrap().pi_h.abs());
        }
    }

    // terminal conditions
    let chain = presets::calm_turbulent_chain();
    let xi2 = xi_ode_default(&chain, &separable_integrand(&base).unwrap()).unwrap();
    let xi_end = [xi2.value(5.0, 0), xi2.value(5.0, 1)];
    let b_end = b_separable(&no_lev, 5.0).unwrap();
    let d_end = d_leverage(&base, 5.0).unwrap();
    let pw = compose_piecewise(&RegimePath::new(0.0, 5.0, vec![1.0, 3.0], vec![0, 1, 0]).unwrap(), &general_two())
        .unwrap();
    let pw_end = pw.eval(5.0).unwrap();
    let exact = xi_end == [1.0, 1.0] && b_end == 0.0 && d_end == 0.0 && pw_end.b == 0.0 && pw_end.a == 0.0;

    check(
        worst_rel <= 1e-10 && max_hedge == 0.0 && exact,
        format!(
            "1-state value rel diff {worst_rel:.2e} (<= 1e-10); max |pi_h| at rho = 0: {max_hedge}; \
             xi(T) = {xi_end:?}, B(T) = {b_end}, D(T) = {d_end}, A^m(T) = {}, B^m(T) = {}",
            pw_end.a, pw_end.b
        ),
    )
}

fn general_two() -> HestonRegimeParams {
    HestonRegimeParams::new(
        Variant::Mmh,
        presets::calm_turbulent_states(),
        RiskPremium::PerState(vec![1.7, 1.7 * 1.3]),
        -0.8,
        0.3,
        5.0,
    )
    .unwrap()
}

fn argmax() -> Outcome {
    let mut rng = common::rng(16);
    let chain = presets::calm_turbulent_chain();
    let mut worst: f64 = 0.0;
    let step = 1e-4;
    for p in [presets::set1(), presets::set2()] {
        let xi = xi_ode_default(&chain, &separable_integrand(&p).unwrap()).unwrap();
        for _ in 0..25 {
            let t = rng.random_range(0.0..5.0);
            let x = rng.random_range(0.005..0.15);
            let e = rng.random_range(0..2);
            let v = rng.random_range(1.0..20.0);
            let xi_te = xi.value(t, e);
            let phi = |v: f64, x: f64| separable_value(&p, &ValueQuery::new(t, v, x, e).unwrap(), xi_te).unwrap();
            let s = p.state(e);
            let grid_pi = common::hamiltonian_argmax(
                phi,
                v,
                x,
                p.lambda_hat(e) * x,
                s.nu * x.sqrt(),
                s.chi * x.sqrt(),
                p.rho(),
                -20.0,
                20.0,
                step,
            );
            let pi = optimal_strategy(&p, t, e).unwrap().pi_total;
            worst = worst.max((grid_pi - pi).abs());
        }
    }
    check(
        worst <= step * (1.0 + 1e-9),
        format!("max |grid argmax - pi_total| = {worst:.2e} at 50 points (<= 1e-4)"),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("reference-value-formula", Box::new(reference_formula)),
        ("reference-value-simulation-set1", Box::new(|| full_mc(&presets::set1(), REFERENCE_SET1, 1))),
        ("reference-value-simulation-set2", Box::new(|| full_mc(&presets::set2(), REFERENCE_SET2, 2))),
        ("oracle-xi-mc-vs-ode", Box::new(xi_oracle)),
        ("oracle-separable-vs-numeric", Box::new(separable_oracle)),
        ("oracle-compose-vs-numeric", Box::new(compose_oracle)),
        ("char-fn-properties", Box::new(char_fn_properties)),
        ("martingale-flatness", Box::new(martingale)),
        ("reductions", Box::new(reductions)),
        ("argmax", Box::new(argmax)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        match run() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
