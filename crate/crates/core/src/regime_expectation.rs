//! The regime expectation `ξ(t, e) = E[exp{∫_t^T υ(s, MC(s)) ds} | MC(t) = e]`.
//!
//! Two independent routes: averaging over simulated chain paths, and backward
//! integration of the coupled linear system
//! `∂ξ(t,e_i)/∂t = -υ(t,e_i) ξ(t,e_i) - Σ_j q_ij ξ(t,e_j)`, `ξ(T, ·) = 1`.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov_chain::{occupation_integral, sample_path, MarkovChainSpec};
use crate::models::HestonRegimeParams;
use crate::riccati::SeparableCurve;
use crate::rng::path_stream;

/// Default number of chain paths for the Monte Carlo route.
pub const DEFAULT_XI_PATHS: usize = 10_000;

/// Default number of ODE steps over the horizon.
pub const DEFAULT_XI_STEPS: usize = 5_000;

const MIN_SUBSTEP: f64 = 1e-10;

type IntegrandFn = dyn Fn(f64, usize) -> f64 + Send + Sync;

/// Per-regime integrand `υ(t, e)` on `[0, horizon]`.
#[derive(Clone)]
pub struct RegimeIntegrand {
    n_states: usize,
    horizon: f64,
    f: Arc<IntegrandFn>,
}

impl fmt::Debug for RegimeIntegrand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegimeIntegrand")
            .field("n_states", &self.n_states)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl RegimeIntegrand {
    pub fn new<F>(n_states: usize, horizon: f64, f: F) -> Self
    where
        F: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        Self {
            n_states,
            horizon,
            f: Arc::new(f),
        }
    }

    /// Time-constant integrand with one value per state.
    pub fn constant(values: Vec<f64>, horizon: f64) -> Self {
        let n = values.len();
        Self::new(n, horizon, move |_, e| values[e])
    }

    #[inline]
    pub fn eval(&self, t: f64, state: usize) -> f64 {
        (self.f)(t, state)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// `υ(t, e) = δ r(e) + coeff(t) κ(e) θ(e)`.
pub fn upsilon_heston<F>(p: &HestonRegimeParams, coeff: F) -> RegimeIntegrand
where
    F: Fn(f64) -> f64 + Send + Sync + 'static,
{
    let delta = p.delta();
    let rates: Vec<(f64, f64)> = p
        .states()
        .iter()
        .map(|s| (delta * s.r, s.kappa * s.theta))
        .collect();
    RegimeIntegrand::new(p.n_states(), p.horizon(), move |t, e| {
        let (dr, kt) = rates[e];
        dr + coeff(t) * kt
    })
}

/// The integrand of a separable model, with `D` (or `B` when ρ = 0) from the
/// closed form.
pub fn separable_integrand(p: &HestonRegimeParams) -> Result<RegimeIntegrand> {
    let curve = SeparableCurve::for_model(p)?;
    Ok(upsilon_heston(p, move |t| curve.eval(t)))
}

/// Monte Carlo mean with its standard error.
///
/// `std_err` is NaN for a single sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl McEstimate {
    /// Mean and standard error of `samples`, summed in order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        // shifted by the first sample so identical samples give their value exactly
        let shift = samples[0];
        let mean = shift + samples.iter().map(|x| x - shift).sum::<f64>() / n as f64;
        let std_err = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_err, n }
    }

    /// `|mean - target| / std_err`, or 0 when both the deviation and the
    /// standard error vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let dev = self.mean - target;
        if dev == 0.0 {
            0.0
        } else {
            dev / self.std_err
        }
    }
}

/// `ξ(t, state)` by simulating `n_paths` chain paths.
///
/// Path `i` uses stream `(seed, i)` and results are reduced in path order, so
/// the estimate does not depend on the number of worker threads.
pub fn xi_mc(
    spec: &MarkovChainSpec,
    integrand: &RegimeIntegrand,
    t: f64,
    state: usize,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    spec.check_state(state)?;
    let horizon = integrand.horizon();
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, {horizon}]")));
    }
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(seed, i as u64);
            let path = sample_path(spec, t, horizon, state, &mut rng)?;
            Ok(occupation_integral(&path, |s, e| integrand.eval(s, e), t, horizon).exp())
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiMethod {
    MonteCarlo,
    Ode,
}

impl XiMethod {
    pub fn label(self) -> &'static str {
        match self {
            XiMethod::MonteCarlo => "MC",
            XiMethod::Ode => "ODE",
        }
    }
}

/// `ξ` tabulated on an increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct XiTable {
    method: XiMethod,
    n_states: usize,
    times: Vec<f64>,
    // row-major: values[k * n_states + e]
    values: Vec<f64>,
    std_err: Option<Vec<f64>>,
}

impl XiTable {
    pub fn method(&self) -> XiMethod {
        self.method
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn at_index(&self, k: usize, state: usize) -> f64 {
        self.values[k * self.n_states + state]
    }

    pub fn std_err_at(&self, k: usize, state: usize) -> Option<f64> {
        self.std_err.as_ref().map(|s| s[k * self.n_states + state])
    }

    /// Linear interpolation in `t`; clamps outside the grid.
    pub fn value(&self, t: f64, state: usize) -> f64 {
        let times = &self.times;
        let last = times.len() - 1;
        if t <= times[0] {
            return self.at_index(0, state);
        }
        if t >= times[last] {
            return self.at_index(last, state);
        }
        let k = times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (times[k], times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        let (y0, y1) = (self.at_index(k, state), self.at_index(k + 1, state));
        if w == 0.0 {
            y0
        } else {
            y0 + w * (y1 - y0)
        }
    }

    /// Writes `t,state,xi,std_err,method` rows (1-based states) after the
    /// given `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "t,state,xi,std_err,method")?;
        for (k, &t) in self.times.iter().enumerate() {
            for e in 0..self.n_states {
                let se = self
                    .std_err_at(k, e)
                    .map(|s| format!("{s:.16e}"))
                    .unwrap_or_default();
                writeln!(
                    out,
                    "{t:.16e},{},{:.16e},{se},{}",
                    e + 1,
                    self.at_index(k, e),
                    self.method.label()
                )?;
            }
        }
        Ok(())
    }
}

/// Monte Carlo `ξ` on a grid of times, every state.
pub fn xi_mc_table(
    spec: &MarkovChainSpec,
    integrand: &RegimeIntegrand,
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<XiTable> {
    let n = spec.n_states();
    let mut values = Vec::with_capacity(times.len() * n);
    let mut errs = Vec::with_capacity(times.len() * n);
    for &t in times {
        for e in 0..n {
            let est = xi_mc(spec, integrand, t, e, n_paths, seed)?;
            values.push(est.mean);
            errs.push(est.std_err);
        }
    }
    Ok(XiTable {
        method: XiMethod::MonteCarlo,
        n_states: n,
        times: times.to_vec(),
        values,
        std_err: Some(errs),
    })
}

/// Backward RK4 for the coupled linear system on `[0, horizon]`.
///
/// A step that loses positivity or finiteness is retried with halved
/// substeps; below a substep of `1e-10` the integration fails.
pub fn xi_ode(spec: &MarkovChainSpec, integrand: &RegimeIntegrand, grid_step: f64) -> Result<XiTable> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid_step must be positive, got {grid_step}")));
    }
    let n = spec.n_states();
    if integrand.n_states() != n {
        return Err(Error::InvalidParameter(format!(
            "integrand has {} states, chain has {n}",
            integrand.n_states()
        )));
    }
    let horizon = integrand.horizon();
    let steps = (horizon / grid_step).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let q = spec.rows();

    // dξ/dτ in reversed time τ = T - t
    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let mut acc = integrand.eval(t, i) * y[i];
            for (j, yj) in y.iter().enumerate() {
                acc += q[i][j] * yj;
            }
            out[i] = acc;
        }
    };

    let mut y = vec![1.0; n];
    let mut values = vec![0.0; (steps + 1) * n];
    values[steps * n..].copy_from_slice(&y);
    let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * h).collect();
    times[steps] = horizon;

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for k in (0..steps).rev() {
        let t_right = times[k + 1];
        let t_left = times[k];
        let mut substeps = 1usize;
        loop {
            let hs = (t_right - t_left) / substeps as f64;
            if hs < MIN_SUBSTEP {
                return Err(Error::StepFailure(format!(
                    "positivity lost near t = {t_left} even with substep {hs:e}"
                )));
            }
            let mut z = y.clone();
            let mut ok = true;
            for s in 0..substeps {
                let t0 = t_right - s as f64 * hs;
                rhs(t0, &z, &mut k1);
                for i in 0..n {
                    tmp[i] = z[i] + 0.5 * hs * k1[i];
                }
                rhs(t0 - 0.5 * hs, &tmp, &mut k2);
                for i in 0..n {
                    tmp[i] = z[i] + 0.5 * hs * k2[i];
                }
                rhs(t0 - 0.5 * hs, &tmp, &mut k3);
                for i in 0..n {
                    tmp[i] = z[i] + hs * k3[i];
                }
                rhs(t0 - hs, &tmp, &mut k4);
                for i in 0..n {
                    z[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    ok = false;
                    break;
                }
            }
            if ok {
                y = z;
                break;
            }
            substeps *= 2;
        }
        values[k * n..(k + 1) * n].copy_from_slice(&y);
    }
    Ok(XiTable {
        method: XiMethod::Ode,
        n_states: n,
        times,
        values,
        std_err: None,
    })
}

/// `xi_ode` with the default grid of `horizon / 5000`.
pub fn xi_ode_default(spec: &MarkovChainSpec, integrand: &RegimeIntegrand) -> Result<XiTable> {
    xi_ode(spec, integrand, integrand.horizon() / DEFAULT_XI_STEPS as f64)
}
