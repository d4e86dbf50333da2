//! Full Monte Carlo simulation of the regime-switching Heston market and of
//! wealth under a feedback strategy.
//!
//! Per step of length Δ, with the regime `e` held at its value at the step
//! start:
//!
//! ```text
//! X⁺       = max(X, 0)
//! X       += κ(e)(θ(e) - X⁺)Δ + χ(e)√X⁺ √Δ Z_X
//! ln V    += [r(e) + π λ̂(e) X⁺ - ½π²ν(e)²X⁺]Δ + π ν(e)√X⁺ √Δ Z_P
//! ln P₁   += [r(e) + λ̂(e) X⁺ - ½ν(e)²X⁺]Δ + ν(e)√X⁺ √Δ Z_P
//! Z_P      = ρ Z_X + √(1-ρ²) Z_⊥
//! ```
//!
//! The chain itself is simulated exactly (exponential holding times) on
//! `[0, T]` before the diffusion steps.

use std::io::{self, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov_chain::{sample_path, MarkovChainSpec, RegimePath};
use crate::models::HestonRegimeParams;
use crate::regime_expectation::{McEstimate, XiTable};
use crate::rng::path_stream;
use crate::value_strategy::{separable_value, ValueQuery};

/// Portfolio rule `π(t, e)`: fraction of wealth held in the risky asset.
pub trait Strategy: Sync {
    fn weight(&self, t: f64, state: usize) -> f64;

    /// `π ν`, the loading of wealth volatility on `√X`.
    fn exposure(&self, t: f64, state: usize, nu: f64) -> f64 {
        self.weight(t, state) * nu
    }
}

impl<F> Strategy for F
where
    F: Fn(f64, usize) -> f64 + Sync,
{
    fn weight(&self, t: f64, state: usize) -> f64 {
        self(t, state)
    }
}

/// Constant weight in every state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantStrategy(pub f64);

impl Strategy for ConstantStrategy {
    fn weight(&self, _t: f64, _state: usize) -> f64 {
        self.0
    }
}

/// Which time points of each path are kept.
#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    /// Start and end only.
    Terminal,
    EveryStep,
    /// The given times, snapped to the nearest grid point (start and end are
    /// always included).
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub horizon: f64,
    pub seed: u64,
    pub v0: f64,
    pub x0: f64,
    pub state0: usize,
    pub p0: f64,
    /// Normal pairs summed per step. With `k` substeps a run at `s` steps
    /// per year uses the same Brownian increments as a run at `k s` steps
    /// per year with one substep.
    pub substeps: usize,
    pub recording: Recording,
    /// Use this regime path for every simulated path instead of sampling.
    pub frozen_path: Option<RegimePath>,
}

impl SimConfig {
    pub fn new(n_paths: usize, steps_per_year: usize, horizon: f64, seed: u64) -> Self {
        Self {
            n_paths,
            steps_per_year,
            horizon,
            seed,
            v0: 10.0,
            x0: 0.02,
            state0: 0,
            p0: 1.0,
            substeps: 1,
            recording: Recording::Terminal,
            frozen_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_paths < 1 {
            return bad("n_paths must be at least 1".into());
        }
        if self.steps_per_year < 1 {
            return bad("steps_per_year must be at least 1".into());
        }
        if self.substeps < 1 {
            return bad("substeps must be at least 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.v0 > 0.0 && self.v0.is_finite()) {
            return bad(format!("v0 must be positive, got {}", self.v0));
        }
        if !(self.x0 >= 0.0 && self.x0.is_finite()) {
            return bad(format!("x0 must be >= 0, got {}", self.x0));
        }
        if !(self.p0 > 0.0 && self.p0.is_finite()) {
            return bad(format!("p0 must be positive, got {}", self.p0));
        }
        if let Some(path) = &self.frozen_path {
            if path.start() != 0.0 || path.horizon() != self.horizon {
                return bad("frozen path must cover [0, horizon]".into());
            }
            if path.states()[0] != self.state0 {
                return bad("frozen path must start in state0".into());
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.steps_per_year as f64 * self.horizon).round() as usize).max(1)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    /// Step index nearest to `t`.
    pub fn step_of(&self, t: f64) -> usize {
        ((t / self.dt()).round().max(0.0) as usize).min(self.n_steps())
    }

    fn recorded_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut steps = match &self.recording {
            Recording::Terminal => vec![0, n],
            Recording::EveryStep => (0..=n).collect(),
            Recording::Times(ts) => {
                let mut v: Vec<usize> = ts.iter().map(|&t| self.step_of(t)).collect();
                v.push(0);
                v.push(n);
                v
            }
        };
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// Names of the recorded per-path fields, in storage order.
pub const FIELDS: [&str; 4] = ["state", "x", "asset", "wealth"];

/// Recorded trajectories, path-major. `x` holds the truncated factor `X⁺`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub n_paths: usize,
    /// Seed of the run; path `i` used stream `i`.
    pub seed: u64,
    pub states: Vec<usize>,
    pub x: Vec<f64>,
    pub asset: Vec<f64>,
    pub wealth: Vec<f64>,
}

impl PathBundle {
    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    #[inline]
    fn idx(&self, path: usize, point: usize) -> usize {
        path * self.times.len() + point
    }

    pub fn state(&self, path: usize, point: usize) -> usize {
        self.states[self.idx(path, point)]
    }

    pub fn x(&self, path: usize, point: usize) -> f64 {
        self.x[self.idx(path, point)]
    }

    pub fn asset(&self, path: usize, point: usize) -> f64 {
        self.asset[self.idx(path, point)]
    }

    pub fn wealth(&self, path: usize, point: usize) -> f64 {
        self.wealth[self.idx(path, point)]
    }

    pub fn terminal_wealth(&self) -> Vec<f64> {
        let last = self.n_points() - 1;
        (0..self.n_paths).map(|i| self.wealth(i, last)).collect()
    }

    /// Index of the recorded point closest to `t`.
    pub fn point_of(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }
}

struct PathRecord {
    states: Vec<usize>,
    x: Vec<f64>,
    asset: Vec<f64>,
    wealth: Vec<f64>,
}

#[derive(Clone, Copy)]
struct StateCoeffs {
    r: f64,
    nu: f64,
    kappa: f64,
    theta: f64,
    chi: f64,
    lambda_hat: f64,
    gamma: f64,
}

/// Simulates `cfg.n_paths` independent paths under `strategy`.
///
/// Path `i` draws from stream `(cfg.seed, i)`; results are assembled in path
/// order, so the bundle is identical for any number of worker threads.
pub fn simulate_paths(
    p: &HestonRegimeParams,
    chain: &MarkovChainSpec,
    strategy: &dyn Strategy,
    cfg: &SimConfig,
) -> Result<PathBundle> {
    cfg.validate()?;
    if chain.n_states() != p.n_states() {
        return Err(Error::Config(format!(
            "chain has {} states, model has {}",
            chain.n_states(),
            p.n_states()
        )));
    }
    chain.check_state(cfg.state0)?;

    let n_states = p.n_states();
    let n_steps = cfg.n_steps();
    let dt = cfg.dt();
    let coeffs: Vec<StateCoeffs> = (0..n_states)
        .map(|e| {
            let s = p.state(e);
            StateCoeffs {
                r: s.r,
                nu: s.nu,
                kappa: s.kappa,
                theta: s.theta,
                chi: s.chi,
                lambda_hat: p.lambda_hat(e),
                gamma: p.gamma_slope(e),
            }
        })
        .collect();
    // strategy tabulated on the step grid: exposure[k * n_states + e]
    let mut exposure = Vec::with_capacity(n_steps * n_states);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        for (e, c) in coeffs.iter().enumerate() {
            exposure.push(strategy.exposure(t, e, c.nu));
        }
    }
    if exposure.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("strategy returned a non-finite weight".into()));
    }

    let record_steps = cfg.recorded_steps();
    let times: Vec<f64> = record_steps
        .iter()
        .map(|&k| if k == n_steps { cfg.horizon } else { k as f64 * dt })
        .collect();
    let rho = p.rho();
    let rho_perp = (1.0 - rho * rho).max(0.0).sqrt();
    let sqrt_dt = dt.sqrt();
    let sub_scale = 1.0 / (cfg.substeps as f64).sqrt();

    let records: Vec<PathRecord> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_stream(cfg.seed, i as u64);
            let path = match &cfg.frozen_path {
                Some(path) => path.clone(),
                None => sample_path(chain, 0.0, cfg.horizon, cfg.state0, &mut rng)?,
            };
            let jumps = path.jump_times();
            let n_rec = record_steps.len();
            let mut rec = PathRecord {
                states: Vec::with_capacity(n_rec),
                x: Vec::with_capacity(n_rec),
                asset: Vec::with_capacity(n_rec),
                wealth: Vec::with_capacity(n_rec),
            };
            let mut x = cfg.x0;
            // log-returns since t = 0
            let mut ln_v = 0.0f64;
            let mut ln_p = 0.0f64;
            let mut seg = 0usize;
            let mut next_rec = 0usize;
            for k in 0..=n_steps {
                let t = if k == n_steps { cfg.horizon } else { k as f64 * dt };
                while seg < jumps.len() && jumps[seg] <= t {
                    seg += 1;
                }
                let e = path.states()[seg];
                if next_rec < n_rec && record_steps[next_rec] == k {
                    rec.states.push(e);
                    rec.x.push(x.max(0.0));
                    rec.asset.push(cfg.p0 * ln_p.exp());
                    rec.wealth.push(cfg.v0 * ln_v.exp());
                    next_rec += 1;
                }
                if k == n_steps {
                    break;
                }
                let (mut zx, mut zo) = (0.0f64, 0.0f64);
                for _ in 0..cfg.substeps {
                    zx += rng.sample::<f64, _>(StandardNormal);
                    zo += rng.sample::<f64, _>(StandardNormal);
                }
                if cfg.substeps > 1 {
                    zx *= sub_scale;
                    zo *= sub_scale;
                }
                let zp = rho * zx + rho_perp * zo;
                let c = coeffs[e];
                let xp = x.max(0.0);
                let sx = xp.sqrt();
                let ex = exposure[k * n_states + e];
                ln_v += (c.r + ex * c.gamma * xp - 0.5 * ex * ex * xp) * dt + ex * sx * sqrt_dt * zp;
                ln_p += (c.r + c.lambda_hat * xp - 0.5 * c.nu * c.nu * xp) * dt
                    + c.nu * sx * sqrt_dt * zp;
                x += c.kappa * (c.theta - xp) * dt + c.chi * sx * sqrt_dt * zx;
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let n_points = times.len();
    let total = cfg.n_paths * n_points;
    let mut bundle = PathBundle {
        times,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        states: Vec::with_capacity(total),
        x: Vec::with_capacity(total),
        asset: Vec::with_capacity(total),
        wealth: Vec::with_capacity(total),
    };
    for r in records {
        bundle.states.extend(r.states);
        bundle.x.extend(r.x);
        bundle.asset.extend(r.asset);
        bundle.wealth.extend(r.wealth);
    }
    Ok(bundle)
}

/// Sample mean and standard error of `V(T)^δ/δ`.
pub fn expected_utility_mc(bundle: &PathBundle, delta: f64) -> McEstimate {
    let u: Vec<f64> = bundle
        .terminal_wealth()
        .into_iter()
        .map(|v| v.powf(delta) / delta)
        .collect();
    McEstimate::from_samples(&u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    /// `counts[i]` covers `[edges[i], edges[i+1])`.
    pub counts: Vec<usize>,
    pub underflow: usize,
    /// Values at or above the last edge.
    pub overflow: usize,
    pub q05: f64,
    pub q95: f64,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Bins terminal wealth; values beyond the last edge go to the overflow bar.
pub fn terminal_wealth_histogram(bundle: &PathBundle, edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "histogram edges must be strictly increasing (at least two)".into(),
        ));
    }
    let mut wealth = bundle.terminal_wealth();
    let mut counts = vec![0usize; edges.len() - 1];
    let (mut underflow, mut overflow) = (0, 0);
    for &v in &wealth {
        if v < edges[0] {
            underflow += 1;
        } else if v >= edges[edges.len() - 1] {
            overflow += 1;
        } else {
            let i = edges.partition_point(|&e| e <= v) - 1;
            counts[i] += 1;
        }
    }
    wealth.sort_by(f64::total_cmp);
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        underflow,
        overflow,
        q05: quantile(&wealth, 0.05),
        q95: quantile(&wealth, 0.95),
    })
}

impl Histogram {
    /// `bin_left,bin_right,count` rows; the overflow row has an empty right edge.
    pub fn write_csv<W: Write>(&self, mut out: W, comments: &[String]) -> io::Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "# q05={:.16e} q95={:.16e}", self.q05, self.q95)?;
        writeln!(out, "bin_left,bin_right,count")?;
        if self.underflow > 0 {
            writeln!(out, ",{:.16e},{}", self.edges[0], self.underflow)?;
        }
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e},{c}", self.edges[i], self.edges[i + 1])?;
        }
        writeln!(out, "{:.16e},,{}", self.edges[self.edges.len() - 1], self.overflow)?;
        Ok(())
    }
}

/// Mean of the value function along simulated paths at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingalePoint {
    pub t: f64,
    pub mean_phi: f64,
    pub std_err: f64,
    /// `(mean_phi - Φ(0)) / std_err`, 0 when both vanish.
    pub z: f64,
}

/// Evaluates `Φ(t, V(t), X(t), MC(t))` of a separable model at each
/// checkpoint along paths simulated under `strategy`.
///
/// Under the optimal strategy the means stay at `Φ(0, v0, x0, e0)`; under
/// any other strategy they drift down.
pub fn martingale_diagnostic(
    p: &HestonRegimeParams,
    chain: &MarkovChainSpec,
    strategy: &dyn Strategy,
    xi: &XiTable,
    cfg: &SimConfig,
    checkpoints: &[f64],
) -> Result<Vec<MartingalePoint>> {
    let mut cfg = cfg.clone();
    cfg.recording = Recording::Times(checkpoints.to_vec());
    let bundle = simulate_paths(p, chain, strategy, &cfg)?;
    let q0 = ValueQuery::new(0.0, cfg.v0, cfg.x0, cfg.state0)?;
    let phi0 = separable_value(p, &q0, xi.value(0.0, cfg.state0))?;
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let k = bundle.point_of(t);
        let tk = bundle.times[k];
        let samples: Vec<f64> = (0..bundle.n_paths)
            .map(|i| {
                let e = bundle.state(i, k);
                let q = ValueQuery {
                    t: tk,
                    v: bundle.wealth(i, k),
                    x: bundle.x(i, k),
                    state: e,
                };
                separable_value(p, &q, xi.value(tk, e))
            })
            .collect::<Result<_>>()?;
        let est = McEstimate::from_samples(&samples);
        let std_err = if est.std_err.is_nan() { 0.0 } else { est.std_err };
        let dev = est.mean - phi0;
        let z = if dev == 0.0 { 0.0 } else { dev / std_err };
        out.push(MartingalePoint {
            t: tk,
            mean_phi: est.mean,
            std_err,
            z,
        });
    }
    Ok(out)
}

/// Writes `t,mean_phi,std_err,z_score`.
pub fn write_martingale_csv<W: Write>(
    mut out: W,
    points: &[MartingalePoint],
    comments: &[String],
) -> io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "t,mean_phi,std_err,z_score")?;
    for m in points {
        writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", m.t, m.mean_phi, m.std_err, m.z)?;
    }
    Ok(())
}

/// Instantaneous log-return variance `ν(MC(t))² X⁺(t)` per path and
/// recorded point (path-major).
pub fn variance_observable(p: &HestonRegimeParams, bundle: &PathBundle) -> Vec<Vec<f64>> {
    (0..bundle.n_paths)
        .map(|i| {
            (0..bundle.n_points())
                .map(|k| {
                    let nu = p.state(bundle.state(i, k)).nu;
                    nu * nu * bundle.x(i, k)
                })
                .collect()
        })
        .collect()
}

const MAGIC: &[u8; 5] = b"RAPB1";

/// Binary dump: magic `RAPB1`, `n_paths: u64`, `n_points: u64`,
/// `n_fields: u32`, each field name as `u8` length + ASCII, then `n_points`
/// times, then path-major records of `n_fields` values. All numbers are
/// little-endian; every value after the header is an `f64`.
pub fn write_path_dump<W: Write>(bundle: &PathBundle, mut out: W) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(bundle.n_paths as u64).to_le_bytes())?;
    out.write_all(&(bundle.n_points() as u64).to_le_bytes())?;
    out.write_all(&(FIELDS.len() as u32).to_le_bytes())?;
    for f in FIELDS {
        out.write_all(&[f.len() as u8])?;
        out.write_all(f.as_bytes())?;
    }
    for t in &bundle.times {
        out.write_all(&t.to_le_bytes())?;
    }
    for i in 0..bundle.n_paths {
        for k in 0..bundle.n_points() {
            for v in [
                bundle.state(i, k) as f64,
                bundle.x(i, k),
                bundle.asset(i, k),
                bundle.wealth(i, k),
            ] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a dump written by [`write_path_dump`]. The seed is not stored and
/// comes back as 0.
pub fn read_path_dump<R: Read>(mut r: R) -> io::Result<PathBundle> {
    let invalid = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid("bad magic"));
    }
    let n_paths = read_u64(&mut r)? as usize;
    let n_points = read_u64(&mut r)? as usize;
    let mut nf = [0u8; 4];
    r.read_exact(&mut nf)?;
    let n_fields = u32::from_le_bytes(nf) as usize;
    let mut names = Vec::with_capacity(n_fields);
    for _ in 0..n_fields {
        let mut len = [0u8; 1];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; len[0] as usize];
        r.read_exact(&mut name)?;
        names.push(String::from_utf8(name).map_err(|_| invalid("field name not UTF-8"))?);
    }
    if names != FIELDS {
        return Err(invalid("unexpected field list"));
    }
    let times = (0..n_points).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<_>>>()?;
    let total = n_paths * n_points;
    let mut bundle = PathBundle {
        times,
        n_paths,
        seed: 0,
        states: Vec::with_capacity(total),
        x: Vec::with_capacity(total),
        asset: Vec::with_capacity(total),
        wealth: Vec::with_capacity(total),
    };
    for _ in 0..total {
        bundle.states.push(read_f64(&mut r)? as usize);
        bundle.x.push(read_f64(&mut r)?);
        bundle.asset.push(read_f64(&mut r)?);
        bundle.wealth.push(read_f64(&mut r)?);
    }
    Ok(bundle)
}
