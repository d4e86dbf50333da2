//! Value functions and optimal portfolio weights.
//!
//! Every value function has the form `Φ(t, v, x, e) = U(v) f(t, x, e)` with
//! `U(v) = v^δ/δ`; only `f` differs between the solved cases.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov_chain::{occupation_integral, sample_path, MarkovChainSpec, RegimePath};
use crate::models::{HestonRegimeParams, Variant};
use crate::regime_expectation::{McEstimate, XiTable};
use crate::riccati::{compose_piecewise, PiecewiseAB, SeparableCurve};
use crate::rng::path_stream;
use crate::simulate::Strategy;

/// Evaluation point `(t, v, x, e)` of a value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueQuery {
    pub t: f64,
    pub v: f64,
    pub x: f64,
    pub state: usize,
}

impl ValueQuery {
    pub fn new(t: f64, v: f64, x: f64, state: usize) -> Result<Self> {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("wealth must be positive, got {v}")));
        }
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidParameter(format!("factor level must be >= 0, got {x}")));
        }
        if !t.is_finite() {
            return Err(Error::InvalidParameter("t is not finite".into()));
        }
        Ok(Self { t, v, x, state })
    }

    fn check(&self, p: &HestonRegimeParams) -> Result<()> {
        if self.state >= p.n_states() {
            return Err(Error::InvalidState {
                index: self.state,
                n_states: p.n_states(),
            });
        }
        if !(self.t >= 0.0 && self.t <= p.horizon()) {
            return Err(Error::DomainViolation(format!(
                "t = {} outside [0, {}]",
                self.t,
                p.horizon()
            )));
        }
        Ok(())
    }
}

/// Mean-variance and hedging parts of the optimal weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyPoint {
    pub pi_mv: f64,
    pub pi_h: f64,
    pub pi_total: f64,
}

impl StrategyPoint {
    fn new(pi_mv: f64, pi_h: f64) -> Self {
        Self {
            pi_mv,
            pi_h,
            pi_total: pi_mv + pi_h,
        }
    }
}

/// Value in the model with a deterministic regime path `m`:
/// `U(v) exp{∫_t^T δ r(m(s)) ds + ϑA^m(t) + ϑB^m(t) x}`.
pub fn value_timedep_heston(p: &HestonRegimeParams, path: &RegimePath, q: &ValueQuery) -> Result<f64> {
    let pw = compose_piecewise(path, p)?;
    value_on_piecewise(p, path, &pw, q)
}

/// As [`value_timedep_heston`] with the composition already built.
pub fn value_on_piecewise(
    p: &HestonRegimeParams,
    path: &RegimePath,
    pw: &PiecewiseAB,
    q: &ValueQuery,
) -> Result<f64> {
    if q.state != path.state_at(q.t) {
        return Err(Error::InvalidParameter(format!(
            "query state {} differs from the path state {} at t = {}",
            q.state,
            path.state_at(q.t),
            q.t
        )));
    }
    let ab = pw.eval(q.t)?;
    let delta = p.delta();
    let bond = occupation_integral(path, |_, e| delta * p.state(e).r, q.t, path.horizon());
    let vt = pw.vartheta();
    Ok(p.utility().utility(q.v) * (bond + vt * ab.a + vt * ab.b * q.x).exp())
}

/// General regime-switching Heston value with ρ = 0 by averaging the
/// deterministic-path value over `n_paths` simulated chain paths.
pub fn value_mmh_general(
    p: &HestonRegimeParams,
    chain: &MarkovChainSpec,
    q: &ValueQuery,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if p.rho() != 0.0 {
        return Err(Error::DomainViolation(
            "the path-averaged value is only valid for rho = 0".into(),
        ));
    }
    if chain.n_states() != p.n_states() {
        return Err(Error::InvalidParameter("chain and model state counts differ".into()));
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    q.check(p)?;
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(seed, i as u64);
            let path = sample_path(chain, q.t, p.horizon(), q.state, &mut rng)?;
            value_timedep_heston(p, &path, q)
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples))
}

/// `U(v) ξ exp{C(t) x}` for a separable model, where `C` is `B` (ρ = 0) or
/// `D` and `ξ` is supplied by the caller.
pub fn separable_value(p: &HestonRegimeParams, q: &ValueQuery, xi: f64) -> Result<f64> {
    q.check(p)?;
    let curve = SeparableCurve::for_model(p)?;
    Ok(p.utility().utility(q.v) * xi * (curve.eval(q.t) * q.x).exp())
}

fn check_xi(p: &HestonRegimeParams, xi: &XiTable) -> Result<()> {
    if xi.n_states() != p.n_states() {
        return Err(Error::InvalidParameter(format!(
            "xi table has {} states, model has {}",
            xi.n_states(),
            p.n_states()
        )));
    }
    Ok(())
}

/// Separable model without leverage: `U(v) ξ̄(t, e) exp{B(t) x}`.
pub fn value_smmh(p: &HestonRegimeParams, q: &ValueQuery, xi: &XiTable) -> Result<f64> {
    if p.rho() != 0.0 || !p.variant().is_separable() {
        return Err(Error::DomainViolation("value_smmh needs a separable model with rho = 0".into()));
    }
    check_xi(p, xi)?;
    q.check(p)?;
    let xi_value = xi.value(q.t, q.state);
    separable_value(p, q, xi_value)
}

/// Separable model with leverage: `U(v) ξ(t, e) exp{D(t) x}`.
pub fn value_smmh_rho(p: &HestonRegimeParams, q: &ValueQuery, xi: &XiTable) -> Result<f64> {
    if !p.variant().is_separable() {
        return Err(Error::DomainViolation("value_smmh_rho needs a separable model".into()));
    }
    check_xi(p, xi)?;
    q.check(p)?;
    let xi_value = xi.value(q.t, q.state);
    separable_value(p, q, xi_value)
}

/// Optimal weight in the regime-switching model at `(t, e)`.
///
/// Separable models: `π_MV = d/((1-δ)ν(e))`, `π_H = ρχD(t)/((1-δ)ν(e))`.
/// General model with ρ = 0: `π = λ̂(e)/((1-δ)ν(e)²)`. With ρ ≠ 0 the general
/// model's strategy depends on the whole future path and is not available
/// here; use [`optimal_strategy_on_path`].
pub fn optimal_strategy(p: &HestonRegimeParams, t: f64, state: usize) -> Result<StrategyPoint> {
    OptimalStrategy::new(p)?.point(t, state)
}

/// Optimal weight along a deterministic regime path.
pub fn optimal_strategy_on_path(
    p: &HestonRegimeParams,
    path: &RegimePath,
    pw: &PiecewiseAB,
    t: f64,
) -> Result<StrategyPoint> {
    let e = path.state_at(t);
    let s = p.state(e);
    let scale = 1.0 / (1.0 - p.delta());
    let pi_mv = scale * p.lambda_hat(e) / (s.nu * s.nu);
    let pi_h = if p.rho() == 0.0 {
        0.0
    } else {
        scale * p.rho() * s.chi / s.nu * pw.vartheta() * pw.b(t)?
    };
    Ok(StrategyPoint::new(pi_mv, pi_h))
}

/// The regime-switching optimal strategy as a reusable feedback rule.
#[derive(Debug, Clone)]
pub struct OptimalStrategy {
    params: HestonRegimeParams,
    curve: Option<SeparableCurve>,
}

impl OptimalStrategy {
    pub fn new(p: &HestonRegimeParams) -> Result<Self> {
        let curve = match p.variant() {
            Variant::Smmh | Variant::SmmhRho => Some(SeparableCurve::for_model(p)?),
            Variant::Mmh if p.rho() == 0.0 => None,
            Variant::Mmh => {
                return Err(Error::DomainViolation(
                    "the general model with rho != 0 has no regime-feedback optimal strategy".into(),
                ))
            }
        };
        Ok(Self {
            params: p.clone(),
            curve,
        })
    }

    pub fn point(&self, t: f64, state: usize) -> Result<StrategyPoint> {
        let p = &self.params;
        if state >= p.n_states() {
            return Err(Error::InvalidState {
                index: state,
                n_states: p.n_states(),
            });
        }
        if !(t >= 0.0 && t <= p.horizon()) {
            return Err(Error::DomainViolation(format!("t = {t} outside [0, {}]", p.horizon())));
        }
        let s = p.state(state);
        let scale = 1.0 / (1.0 - p.delta());
        Ok(match &self.curve {
            Some(curve) => {
                let d = p.d().unwrap_or(0.0);
                let pi_mv = scale * d / s.nu;
                let pi_h = if p.rho() == 0.0 {
                    0.0
                } else {
                    scale * p.rho() * s.chi / s.nu * curve.eval(t)
                };
                StrategyPoint::new(pi_mv, pi_h)
            }
            None => StrategyPoint::new(scale * p.lambda_hat(state) / (s.nu * s.nu), 0.0),
        })
    }

    /// `π ν(e)`: for separable models `(d + ρχD(t))/(1-δ)`, free of ν.
    fn volatility_exposure(&self, t: f64, state: usize) -> f64 {
        let p = &self.params;
        let scale = 1.0 / (1.0 - p.delta());
        match &self.curve {
            Some(curve) => {
                let d = p.d().unwrap_or(0.0);
                let hedge = if p.rho() == 0.0 {
                    0.0
                } else {
                    p.rho() * p.state(state).chi * curve.eval(t)
                };
                scale * (d + hedge)
            }
            None => scale * p.lambda_hat(state) / p.state(state).nu,
        }
    }
}

impl Strategy for OptimalStrategy {
    fn weight(&self, t: f64, state: usize) -> f64 {
        self.point(t.clamp(0.0, self.params.horizon()), state)
            .map(|s| s.pi_total)
            .unwrap_or(f64::NAN)
    }

    fn exposure(&self, t: f64, state: usize, _nu: f64) -> f64 {
        self.volatility_exposure(t.clamp(0.0, self.params.horizon()), state)
    }
}

/// Optimal strategy of the deterministic-path model, usable as a simulation
/// rule when the simulated chain is frozen to the same path.
#[derive(Debug, Clone)]
pub struct PathStrategy {
    params: HestonRegimeParams,
    path: RegimePath,
    pw: PiecewiseAB,
}

impl PathStrategy {
    pub fn new(p: &HestonRegimeParams, path: &RegimePath) -> Result<Self> {
        Ok(Self {
            params: p.clone(),
            path: path.clone(),
            pw: compose_piecewise(path, p)?,
        })
    }
}

impl Strategy for PathStrategy {
    fn weight(&self, t: f64, _state: usize) -> f64 {
        optimal_strategy_on_path(&self.params, &self.path, &self.pw, t)
            .map(|s| s.pi_total)
            .unwrap_or(f64::NAN)
    }
}

/// One row of the solve table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveRow {
    pub t: f64,
    pub state: usize,
    pub phi: f64,
    pub xi: f64,
    /// `D(t)` or `B(t)`; NaN when not defined (general model).
    pub coefficient: f64,
    pub strategy: StrategyPoint,
}

/// Tabulates value, ξ, exponent coefficient and strategy of a separable
/// model on `n_t + 1` equally spaced times (all states).
pub fn solve_table(
    p: &HestonRegimeParams,
    xi: &XiTable,
    v0: f64,
    x0: f64,
    n_t: usize,
) -> Result<Vec<SolveRow>> {
    let curve = SeparableCurve::for_model(p)?;
    let strategy = OptimalStrategy::new(p)?;
    let n_t = n_t.max(1);
    let mut rows = Vec::with_capacity((n_t + 1) * p.n_states());
    for k in 0..=n_t {
        let t = if k == n_t { p.horizon() } else { p.horizon() * k as f64 / n_t as f64 };
        for e in 0..p.n_states() {
            let q = ValueQuery::new(t, v0, x0, e)?;
            let xi_value = xi.value(t, e);
            rows.push(SolveRow {
                t,
                state: e,
                phi: value_smmh_rho(p, &q, xi)?,
                xi: xi_value,
                coefficient: curve.eval(t),
                strategy: strategy.point(t, e)?,
            });
        }
    }
    Ok(rows)
}

/// Writes `t,state,phi,xi,D_or_B,pi_mv,pi_h,pi_total` (1-based states).
pub fn write_solve_csv<W: Write>(mut out: W, rows: &[SolveRow], comments: &[String]) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "t,state,phi,xi,D_or_B,pi_mv,pi_h,pi_total")?;
    for r in rows {
        let coeff = if r.coefficient.is_nan() {
            String::new()
        } else {
            format!("{:.16e}", r.coefficient)
        };
        writeln!(
            out,
            "{:.16e},{},{:.16e},{:.16e},{coeff},{:.16e},{:.16e},{:.16e}",
            r.t,
            r.state + 1,
            r.phi,
            r.xi,
            r.strategy.pi_mv,
            r.strategy.pi_h,
            r.strategy.pi_total
        )?;
    }
    Ok(())
}

/// Writes `t,state,pi_mv,pi_h,pi_total` (1-based states).
pub fn write_strategy_csv<W: Write>(
    mut out: W,
    rows: &[(f64, usize, StrategyPoint)],
    comments: &[String],
) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "t,state,pi_mv,pi_h,pi_total")?;
    for (t, e, s) in rows {
        writeln!(
            out,
            "{t:.16e},{},{:.16e},{:.16e},{:.16e}",
            e + 1,
            s.pi_mv,
            s.pi_h,
            s.pi_total
        )?;
    }
    Ok(())
}
