#![allow(dead_code)]

use mmh_core::models::validate_solution_assumptions;
use mmh_core::{HestonRegimeParams, MarkovChainSpec, RegimePath, RiskPremium, StateParams, Variant};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Intensity matrix with off-diagonal rates in `[0.1, 2.5]`.
pub fn random_chain(rng: &mut ChaCha8Rng, n: usize) -> MarkovChainSpec {
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            if i != j {
                rows[i][j] = rng.random_range(0.1..2.5);
                sum += rows[i][j];
            }
        }
        rows[i][i] = -sum;
    }
    MarkovChainSpec::new(&rows).unwrap()
}

fn random_delta(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let d: f64 = rng.random_range(-3.0..0.8);
        if d.abs() > 0.05 {
            return d;
        }
    }
}

/// A separable model that passes the solvability checks.
pub fn random_separable(rng: &mut ChaCha8Rng, n: usize, leverage: bool) -> HestonRegimeParams {
    loop {
        let kappa = rng.random_range(0.5..6.0);
        let chi = rng.random_range(0.1..0.8);
        let states = (0..n)
            .map(|_| StateParams {
                r: rng.random_range(0.0..0.06),
                nu: rng.random_range(0.5..1.8),
                kappa,
                theta: rng.random_range(0.01..0.08),
                chi,
            })
            .collect();
        let d = rng.random_range(0.1..3.0);
        let (variant, rho) = if leverage {
            (Variant::SmmhRho, rng.random_range(-0.95..0.95))
        } else {
            (Variant::Smmh, 0.0)
        };
        let p = HestonRegimeParams::new(variant, states, RiskPremium::Global(d), rho, random_delta(rng), 5.0)
            .unwrap();
        if validate_solution_assumptions(&p).is_ok() {
            return p;
        }
    }
}

/// A general model with per-state parameters that passes the solvability checks.
pub fn random_mmh(rng: &mut ChaCha8Rng, n: usize, rho: Option<f64>) -> HestonRegimeParams {
    loop {
        let states: Vec<StateParams> = (0..n)
            .map(|_| StateParams {
                r: rng.random_range(0.0..0.06),
                nu: rng.random_range(0.5..1.8),
                kappa: rng.random_range(1.0..6.0),
                theta: rng.random_range(0.01..0.08),
                chi: rng.random_range(0.1..0.6),
            })
            .collect();
        let lambda = states
            .iter()
            .map(|s| s.nu * rng.random_range(0.1..2.5))
            .collect();
        let rho = rho.unwrap_or_else(|| rng.random_range(-0.95..0.95));
        let p = HestonRegimeParams::new(
            Variant::Mmh,
            states,
            RiskPremium::PerState(lambda),
            rho,
            random_delta(rng),
            5.0,
        )
        .unwrap();
        if validate_solution_assumptions(&p).is_ok() {
            return p;
        }
    }
}

/// Path on `[0, horizon]` with `k` uniformly placed jumps.
pub fn random_path(rng: &mut ChaCha8Rng, n_states: usize, horizon: f64, k: usize) -> RegimePath {
    let mut times: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..horizon)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut states = vec![rng.random_range(0..n_states)];
    for _ in 0..times.len() {
        let prev = *states.last().unwrap();
        let next = (prev + rng.random_range(1..n_states)) % n_states;
        states.push(next);
    }
    RegimePath::new(0.0, horizon, times, states).unwrap()
}

/// Maximiser over a grid of `π ↦ πλΦ_v v + ½π²σ_P²v²Φ_vv + ρπσ_Pσ_X vΦ_vx`,
/// with the derivatives of `phi(v, x)` taken by central differences.
pub fn hamiltonian_argmax<F>(
    phi: F,
    v: f64,
    x: f64,
    excess: f64,
    sigma_p: f64,
    sigma_x: f64,
    rho: f64,
    lo: f64,
    hi: f64,
    step: f64,
) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let hv = 1e-3 * v;
    let hx = 1e-3 * x;
    let phi_v = (phi(v + hv, x) - phi(v - hv, x)) / (2.0 * hv);
    let phi_vv = (phi(v + hv, x) - 2.0 * phi(v, x) + phi(v - hv, x)) / (hv * hv);
    let phi_vx = (phi(v + hv, x + hx) - phi(v + hv, x - hx) - phi(v - hv, x + hx) + phi(v - hv, x - hx))
        / (4.0 * hv * hx);
    let lin = excess * v * phi_v + rho * sigma_p * sigma_x * v * phi_vx;
    let quad = 0.5 * sigma_p * sigma_p * v * v * phi_vv;
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, lo);
    for k in 0..=n {
        let pi = lo + k as f64 * step;
        let h = pi * lin + pi * pi * quad;
        if h > best.0 {
            best = (h, pi);
        }
    }
    best.1
}
