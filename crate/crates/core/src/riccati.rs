//! Riccati/linear ODE pairs of the CIR exponential-affine transform.
//!
//! For `dX = κ(θ - X)dt + χ√X dW` the pair `(A, B)` in
//! `E[exp{αX(T) + β∫X ds}] = exp{A(τ) + B(τ)x}` solves
//!
//! ```text
//! B'(τ) = ½χ²B² - κB + β,   B(0) = α
//! A'(τ) = κθB,              A(0) = 0
//! ```
//!
//! This module has the closed form, an RK4 integrator for the same system with
//! piecewise-constant coefficients, and the backward composition along a
//! regime path.

use crate::error::{Error, Result};
use crate::markov_chain::RegimePath;
use crate::models::{HestonRegimeParams, TiltedState};

/// Sup-norm bound on `|B|` before the numeric integrator reports a blow-up.
pub const BLOW_UP_BOUND: f64 = 1e8;

const BOUNDARY_RTOL: f64 = 1e-12;

/// Values `A(τ)` and `B(τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharFnCoeffs {
    pub a: f64,
    pub b: f64,
}

/// Closed-form `A(τ)`, `B(τ)`.
///
/// Requires `β ≤ κ²/(2χ²)` and `α ≤ (κ+a)/χ²` with `a = √(κ² - 2βχ²)`. At the
/// upper boundary `α = (κ+a)/χ²` the solution is the stationary point
/// `B ≡ α`, `A = κθατ`. A vanishing root `a = 0` (β at its upper limit) off
/// that boundary is rejected.
pub fn char_fn_coeffs(
    kappa: f64,
    theta: f64,
    chi: f64,
    alpha: f64,
    beta: f64,
    tau: f64,
) -> Result<CharFnCoeffs> {
    if !(kappa > 0.0 && theta > 0.0 && chi > 0.0) {
        return Err(Error::DomainViolation(format!(
            "kappa, theta, chi must be positive (got {kappa}, {theta}, {chi})"
        )));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::DomainViolation(format!("tau must be >= 0, got {tau}")));
    }
    let chi2 = chi * chi;
    let beta_max = kappa * kappa / (2.0 * chi2);
    if !(beta <= beta_max * (1.0 + BOUNDARY_RTOL)) {
        return Err(Error::DomainViolation(format!(
            "beta = {beta} exceeds kappa^2/(2 chi^2) = {beta_max}"
        )));
    }
    let root = (kappa * kappa - 2.0 * beta * chi2).max(0.0).sqrt();
    let alpha_max = (kappa + root) / chi2;
    let boundary_tol = BOUNDARY_RTOL * alpha_max.abs().max(1.0);
    if !(alpha <= alpha_max + boundary_tol) {
        return Err(Error::DomainViolation(format!(
            "alpha = {alpha} exceeds (kappa + a)/chi^2 = {alpha_max}"
        )));
    }
    if tau == 0.0 {
        return Ok(CharFnCoeffs { a: 0.0, b: alpha });
    }
    if (alpha - alpha_max).abs() <= boundary_tol {
        return Ok(CharFnCoeffs {
            a: kappa * theta * alpha_max * tau,
            b: alpha_max,
        });
    }
    if beta >= beta_max * (1.0 - BOUNDARY_RTOL) {
        return Err(Error::DomainViolation(
            "degenerate root a = 0 below the alpha boundary".into(),
        ));
    }
    // u = -αχ² + κ + a > 0; with c = (u - 2a)/u,
    // (1 - c e^{-aτ}) / (1 - c) = e^{-aτ} + u (1 - e^{-aτ}) / (2a) =: ratio
    // and B = (κ - a)/χ² - (u - 2a) e^{-aτ} / (χ² ratio), which stays finite as a → 0.
    let u = -alpha * chi2 + kappa + root;
    let decay = (-root * tau).exp();
    let half_expm1 = if root == 0.0 { -0.5 * tau } else { (-root * tau).exp_m1() / (2.0 * root) };
    let ratio = decay - u * half_expm1;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::DomainViolation(format!(
            "denominator 1 - c exp(-a tau) is not positive (ratio {ratio})"
        )));
    }
    let b = (kappa - root) / chi2 - (u - 2.0 * root) * decay / (chi2 * ratio);
    let a = kappa * theta / chi2 * ((kappa - root) * tau - 2.0 * ratio.ln());
    Ok(CharFnCoeffs { a, b })
}

/// A constant-coefficient piece `[start, end]` for [`riccati_numeric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiSegment {
    pub start: f64,
    pub end: f64,
    pub kappa: f64,
    pub theta: f64,
    pub chi: f64,
    pub beta: f64,
}

/// Samples `(t, A(t), B(t))` in increasing `t`, with `A(T) = 0`, `B(T) = α`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiGrid {
    pub points: Vec<(f64, f64, f64)>,
}

impl RiccatiGrid {
    pub fn at_start(&self) -> (f64, f64, f64) {
        self.points[0]
    }
}

/// Backward classic RK4 on piecewise-constant coefficients.
///
/// `segments` must be ordered in time and contiguous. Each segment is split
/// into equal steps of at most `grid_step`, so every boundary is a grid point.
pub fn riccati_numeric(
    segments: &[RiccatiSegment],
    terminal_alpha: f64,
    grid_step: f64,
) -> Result<RiccatiGrid> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid_step must be positive, got {grid_step}")));
    }
    if segments.is_empty() {
        return Err(Error::InvalidParameter("no Riccati segments".into()));
    }
    for w in segments.windows(2) {
        if w[0].end != w[1].start {
            return Err(Error::InvalidParameter("Riccati segments are not contiguous".into()));
        }
    }
    let mut a = 0.0;
    let mut b = terminal_alpha;
    let mut rev = vec![(segments[segments.len() - 1].end, a, b)];
    for seg in segments.iter().rev() {
        let len = seg.end - seg.start;
        if len < 0.0 {
            return Err(Error::InvalidParameter("segment with negative length".into()));
        }
        let n = (len / grid_step).ceil().max(if len > 0.0 { 1.0 } else { 0.0 }) as usize;
        if n == 0 {
            continue;
        }
        let h = len / n as f64;
        let kt = seg.kappa * seg.theta;
        let half_chi2 = 0.5 * seg.chi * seg.chi;
        let fb = |b: f64| half_chi2 * b * b - seg.kappa * b + seg.beta;
        for k in 0..n {
            let k1 = fb(b);
            let k2 = fb(b + 0.5 * h * k1);
            let k3 = fb(b + 0.5 * h * k2);
            let k4 = fb(b + h * k3);
            // A' = κθB, integrated with the same stages
            let b2 = b + 0.5 * h * k1;
            let b3 = b + 0.5 * h * k2;
            let b4 = b + h * k3;
            a += h / 6.0 * kt * (b + 2.0 * b2 + 2.0 * b3 + b4);
            b += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let t = if k + 1 == n { seg.start } else { seg.end - (k + 1) as f64 * h };
            if !b.is_finite() || b.abs() > BLOW_UP_BOUND {
                return Err(Error::BlowUp { t, value: b.abs() });
            }
            rev.push((t, a, b));
        }
    }
    rev.reverse();
    Ok(RiccatiGrid { points: rev })
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    start: f64,
    end: f64,
    state: usize,
    coeffs: TiltedState,
    /// B at the right end of the piece.
    alpha: f64,
    /// Sum of A over all later pieces.
    a_tail: f64,
}

/// Piecewise closed-form `A^m(t)`, `B^m(t)` along a regime path.
///
/// These are the exponent coefficients of the transformed function `h^m`; the
/// value function uses `ϑA^m` and `ϑB^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAB {
    pieces: Vec<Piece>,
    vartheta: f64,
    horizon: f64,
}

impl PiecewiseAB {
    pub fn vartheta(&self) -> f64 {
        self.vartheta
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> f64 {
        self.pieces[0].start
    }

    pub fn n_pieces(&self) -> usize {
        self.pieces.len()
    }

    /// `(start, end, state, B at end)` for each piece.
    pub fn boundaries(&self) -> Vec<(f64, f64, usize, f64)> {
        self.pieces
            .iter()
            .map(|p| (p.start, p.end, p.state, p.alpha))
            .collect()
    }

    fn piece_index(&self, t: f64) -> usize {
        // last piece whose start is <= t
        let idx = self.pieces.partition_point(|p| p.start <= t);
        idx.saturating_sub(1)
    }

    /// `(A^m(t), B^m(t))`.
    pub fn eval(&self, t: f64) -> Result<CharFnCoeffs> {
        if !(t >= self.start() && t <= self.horizon) {
            return Err(Error::DomainViolation(format!(
                "t = {t} outside [{}, {}]",
                self.start(),
                self.horizon
            )));
        }
        self.eval_piece(self.piece_index(t), t)
    }

    /// Evaluates piece `j` at `t` (used for one-sided limits at boundaries).
    pub fn eval_piece(&self, j: usize, t: f64) -> Result<CharFnCoeffs> {
        let p = &self.pieces[j];
        let c = char_fn_coeffs(
            p.coeffs.kappa,
            p.coeffs.theta,
            p.coeffs.chi,
            p.alpha,
            p.coeffs.beta,
            (p.end - t).max(0.0),
        )?;
        Ok(CharFnCoeffs {
            a: c.a + p.a_tail,
            b: c.b,
        })
    }

    pub fn a(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.a)
    }

    pub fn b(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.b)
    }

    /// Numeric counterpart of this composition, for cross-checks.
    pub fn riccati_segments(&self) -> Vec<RiccatiSegment> {
        self.pieces
            .iter()
            .map(|p| RiccatiSegment {
                start: p.start,
                end: p.end,
                kappa: p.coeffs.kappa,
                theta: p.coeffs.theta,
                chi: p.coeffs.chi,
                beta: p.coeffs.beta,
            })
            .collect()
    }
}

/// Applies the closed form piece by piece from the horizon backwards.
///
/// The last piece starts from `B = 0`; every earlier piece starts from the
/// `B` value the later piece reaches at their common boundary.
pub fn compose_piecewise(path: &RegimePath, p: &HestonRegimeParams) -> Result<PiecewiseAB> {
    let segs: Vec<(f64, f64, usize)> = path.segments().collect();
    let mut pieces = Vec::with_capacity(segs.len());
    let mut alpha = 0.0;
    let mut a_tail = 0.0;
    for &(start, end, state) in segs.iter().rev() {
        if state >= p.n_states() {
            return Err(Error::InvalidState {
                index: state,
                n_states: p.n_states(),
            });
        }
        let coeffs = p.tilted(state);
        let full = char_fn_coeffs(coeffs.kappa, coeffs.theta, coeffs.chi, alpha, coeffs.beta, end - start)?;
        pieces.push(Piece {
            start,
            end,
            state,
            coeffs,
            alpha,
            a_tail,
        });
        a_tail += full.a;
        alpha = full.b;
    }
    pieces.reverse();
    Ok(PiecewiseAB {
        pieces,
        vartheta: p.vartheta(),
        horizon: path.horizon(),
    })
}

fn check_time(horizon: f64, t: f64) -> Result<()> {
    if t >= 0.0 && t <= horizon {
        Ok(())
    } else {
        Err(Error::DomainViolation(format!("t = {t} outside [0, {horizon}]")))
    }
}

/// Closed-form exponent coefficient of the separable models, with all
/// constants precomputed so evaluation cannot fail.
///
/// Evaluates `ϑ(-c(k+a)e^{-a(T-t)} + k - a) / (χ²(1 - c e^{-a(T-t)}))`; without
/// leverage `ϑ = 1` and `k = κ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparableCurve {
    vartheta: f64,
    k: f64,
    root: f64,
    c: f64,
    chi2: f64,
    horizon: f64,
}

impl SeparableCurve {
    /// `B(t)` of the separable model without leverage.
    pub fn no_leverage(p: &HestonRegimeParams) -> Result<Self> {
        if !p.variant().is_separable() || p.rho() != 0.0 {
            return Err(Error::DomainViolation(
                "the no-leverage curve needs a separable model with rho = 0".into(),
            ));
        }
        let s = p.state(0);
        let d = p.d().unwrap_or(0.0);
        let q = p.utility().leverage_factor();
        let chi2 = s.chi * s.chi;
        let disc = s.kappa * s.kappa - q * d * d * chi2;
        if !(disc > 0.0) {
            return Err(Error::DomainViolation(format!(
                "delta/(1-delta) d^2 = {} must be below kappa^2/chi^2 = {}",
                q * d * d,
                s.kappa * s.kappa / chi2
            )));
        }
        Ok(Self::build(1.0, s.kappa, disc.sqrt(), chi2, p.horizon()))
    }

    /// `D(t)` of the separable model with leverage, as displayed in closed
    /// form (the drift adjustment uses `|d|`).
    pub fn leverage(p: &HestonRegimeParams) -> Result<Self> {
        if !p.variant().is_separable() {
            return Err(Error::DomainViolation("the leverage curve needs a separable model".into()));
        }
        let s = p.state(0);
        let d = p.d().unwrap_or(0.0);
        let q = p.utility().leverage_factor();
        let vartheta = p.vartheta();
        let chi2 = s.chi * s.chi;
        let k = s.kappa - q * p.rho() * s.chi * d.abs();
        if !(k > 0.0) {
            return Err(Error::DomainViolation(format!(
                "kappa - delta/(1-delta) rho chi |d| = {k} must be positive"
            )));
        }
        let disc = k * k - q * chi2 / vartheta * d * d;
        if !(disc > 0.0) {
            return Err(Error::DomainViolation(format!(
                "leverage bound violated: discriminant {disc} not positive"
            )));
        }
        Ok(Self::build(vartheta, k, disc.sqrt(), chi2, p.horizon()))
    }

    /// `B` when ρ = 0, `D` otherwise.
    pub fn for_model(p: &HestonRegimeParams) -> Result<Self> {
        if p.rho() == 0.0 {
            Self::no_leverage(p)
        } else {
            Self::leverage(p)
        }
    }

    fn build(vartheta: f64, k: f64, root: f64, chi2: f64, horizon: f64) -> Self {
        Self {
            vartheta,
            k,
            root,
            c: (k - root) / (k + root),
            chi2,
            horizon,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Evaluates at `t`; `t` beyond the horizon is clamped to it.
    pub fn eval(&self, t: f64) -> f64 {
        if t >= self.horizon {
            return 0.0;
        }
        let decay = (-self.root * (self.horizon - t).max(0.0)).exp();
        // 0 <= c < 1 so the denominator stays positive
        let denom = 1.0 - self.c * decay;
        self.vartheta * (-self.c * (self.k + self.root) * decay + self.k - self.root)
            / (self.chi2 * denom)
    }
}

/// `B(t)` of the separable model without leverage.
pub fn b_separable(p: &HestonRegimeParams, t: f64) -> Result<f64> {
    let curve = SeparableCurve::no_leverage(p)?;
    check_time(p.horizon(), t)?;
    Ok(curve.eval(t))
}

/// `D(t)` of the separable model with leverage.
pub fn d_leverage(p: &HestonRegimeParams, t: f64) -> Result<f64> {
    let curve = SeparableCurve::leverage(p)?;
    check_time(p.horizon(), t)?;
    Ok(curve.eval(t))
}

/// `D` for leverage models, `B` otherwise.
pub fn separable_coefficient(p: &HestonRegimeParams, t: f64) -> Result<f64> {
    let curve = SeparableCurve::for_model(p)?;
    check_time(p.horizon(), t)?;
    Ok(curve.eval(t))
}
