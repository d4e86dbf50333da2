//! Model parameters and the checks that make the closed-form solutions valid.

use crate::error::{Error, Result};

/// Power utility `U(v) = v^δ / δ` with `δ < 1`, `δ ≠ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilitySpec {
    delta: f64,
}

impl UtilitySpec {
    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta >= 1.0 || delta == 0.0 {
            return Err(Error::InvalidParameter(format!(
                "risk-aversion exponent must satisfy delta < 1 and delta != 0, got {delta}"
            )));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `δ / (1 - δ)`, the factor that recurs in every solvability condition.
    pub fn leverage_factor(&self) -> f64 {
        self.delta / (1.0 - self.delta)
    }

    pub fn utility(&self, wealth: f64) -> f64 {
        wealth.powf(self.delta) / self.delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// State-dependent everything, per-state excess-return slope λ̂(e).
    Mmh,
    /// Separable, uncorrelated: κ, χ, d global and ρ = 0.
    Smmh,
    /// Separable with leverage: κ, χ, d global, ρ arbitrary.
    SmmhRho,
}

impl Variant {
    pub fn is_separable(self) -> bool {
        !matches!(self, Variant::Mmh)
    }
}

/// Per-regime Heston coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateParams {
    pub r: f64,
    pub nu: f64,
    pub kappa: f64,
    pub theta: f64,
    pub chi: f64,
}

/// How the excess return `λ(x, e) = λ̂(e) x` is specified.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskPremium {
    /// λ̂(e) given per state.
    PerState(Vec<f64>),
    /// λ̂(e) = d ν(e) with a single market-price slope `d`.
    Global(f64),
}

/// Regime-switching Heston parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HestonRegimeParams {
    states: Vec<StateParams>,
    premium: RiskPremium,
    rho: f64,
    utility: UtilitySpec,
    horizon: f64,
    variant: Variant,
}

/// Factor dynamics after the change of drift that removes the nonlinear
/// term, together with the linear coefficient of the exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltedState {
    pub kappa: f64,
    /// Chosen so that `kappa * theta` equals the untilted `κ θ`.
    pub theta: f64,
    pub chi: f64,
    pub beta: f64,
}

impl HestonRegimeParams {
    pub fn new(
        variant: Variant,
        states: Vec<StateParams>,
        premium: RiskPremium,
        rho: f64,
        delta: f64,
        horizon: f64,
    ) -> Result<Self> {
        let utility = UtilitySpec::new(delta)?;
        if states.is_empty() {
            return Err(Error::InvalidParameter("at least one regime is required".into()));
        }
        if !(rho.is_finite() && (-1.0..=1.0).contains(&rho)) {
            return Err(Error::InvalidParameter(format!("rho must lie in [-1, 1], got {rho}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        for (e, s) in states.iter().enumerate() {
            if !s.r.is_finite() {
                return Err(Error::InvalidParameter(format!("r in state {} is not finite", e + 1)));
            }
            for (name, v) in [("nu", s.nu), ("kappa", s.kappa), ("theta", s.theta), ("chi", s.chi)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "{name} in state {} must be positive, got {v}",
                        e + 1
                    )));
                }
            }
        }
        match (&premium, variant) {
            (RiskPremium::PerState(l), Variant::Mmh) => {
                if l.len() != states.len() {
                    return Err(Error::InvalidParameter(format!(
                        "expected {} excess-return slopes, got {}",
                        states.len(),
                        l.len()
                    )));
                }
                if l.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("excess-return slope not finite".into()));
                }
            }
            (RiskPremium::Global(d), Variant::Smmh | Variant::SmmhRho) => {
                if !d.is_finite() {
                    return Err(Error::InvalidParameter("market-price slope d not finite".into()));
                }
                let first = states[0];
                if states.iter().any(|s| s.kappa != first.kappa || s.chi != first.chi) {
                    return Err(Error::InvalidParameter(
                        "separable variants need state-independent kappa and chi".into(),
                    ));
                }
                if variant == Variant::Smmh && rho != 0.0 {
                    return Err(Error::InvalidParameter(
                        "the SMMH variant requires rho = 0 (use SMMH_RHO for leverage)".into(),
                    ));
                }
            }
            (RiskPremium::PerState(_), _) => {
                return Err(Error::InvalidParameter(
                    "separable variants take a single slope d".into(),
                ))
            }
            (RiskPremium::Global(_), Variant::Mmh) => {
                return Err(Error::InvalidParameter(
                    "the MMH variant takes per-state slopes lambda_hat".into(),
                ))
            }
        }
        Ok(Self {
            states,
            premium,
            rho,
            utility,
            horizon,
            variant,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, e: usize) -> &StateParams {
        &self.states[e]
    }

    pub fn states(&self) -> &[StateParams] {
        &self.states
    }

    pub fn premium(&self) -> &RiskPremium {
        &self.premium
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta(&self) -> f64 {
        self.utility.delta()
    }

    pub fn utility(&self) -> UtilitySpec {
        self.utility
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Global slope `d` of the separable variants.
    pub fn d(&self) -> Option<f64> {
        match self.premium {
            RiskPremium::Global(d) => Some(d),
            RiskPremium::PerState(_) => None,
        }
    }

    /// Excess-return slope λ̂(e).
    pub fn lambda_hat(&self, e: usize) -> f64 {
        match &self.premium {
            RiskPremium::PerState(l) => l[e],
            RiskPremium::Global(d) => d * self.states[e].nu,
        }
    }

    /// Market price of risk per unit `√x`, i.e. `λ̂(e) / ν(e)`.
    ///
    /// Exactly `d` in the separable variants, with no round trip through ν.
    pub fn gamma_slope(&self, e: usize) -> f64 {
        match &self.premium {
            RiskPremium::PerState(l) => l[e] / self.states[e].nu,
            RiskPremium::Global(d) => *d,
        }
    }

    /// `ϑ = (1-δ) / (1-δ+δρ²)`; exactly 1 when ρ = 0.
    pub fn vartheta(&self) -> f64 {
        if self.rho == 0.0 {
            return 1.0;
        }
        let delta = self.delta();
        (1.0 - delta) / (1.0 - delta + delta * self.rho * self.rho)
    }

    /// Tilted CIR coefficients and exponent slope β for regime `e`.
    ///
    /// This is the only place the drift tilt and β are formed.
    pub fn tilted(&self, e: usize) -> TiltedState {
        let s = &self.states[e];
        let q = self.utility.leverage_factor();
        let g = self.gamma_slope(e);
        let kappa = s.kappa - q * self.rho * s.chi * g;
        TiltedState {
            kappa,
            theta: s.kappa * s.theta / kappa,
            chi: s.chi,
            beta: 0.5 / self.vartheta() * q * g * g,
        }
    }

    /// Same parameters with a different per-state ν, keeping d (separable) or
    /// λ̂ (MMH) fixed.
    pub fn with_nu(&self, nu: &[f64]) -> Result<Self> {
        if nu.len() != self.states.len() {
            return Err(Error::InvalidParameter("nu length mismatch".into()));
        }
        let states = self
            .states
            .iter()
            .zip(nu)
            .map(|(s, &nu)| StateParams { nu, ..*s })
            .collect();
        Self::new(self.variant, states, self.premium.clone(), self.rho, self.delta(), self.horizon)
    }

    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let variant = match (self.variant, rho == 0.0) {
            (Variant::Smmh, false) => Variant::SmmhRho,
            (v, _) => v,
        };
        Self::new(variant, self.states.clone(), self.premium.clone(), rho, self.delta(), self.horizon)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.variant, self.states.clone(), self.premium.clone(), self.rho, delta, self.horizon)
    }
}

/// Coefficients of the general Markov-modulated affine model.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoefficients {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub zeta1: Vec<f64>,
    pub zeta2: Vec<f64>,
    pub r: Vec<f64>,
    pub rho: f64,
    pub delta: f64,
}

/// Embeds the Heston parameters in the affine coefficient tables.
pub fn to_affine_coefficients(p: &HestonRegimeParams) -> AffineCoefficients {
    let n = p.n_states();
    let mut c = AffineCoefficients {
        gamma1: vec![0.0; n],
        gamma2: Vec::with_capacity(n),
        mu1: Vec::with_capacity(n),
        mu2: Vec::with_capacity(n),
        sigma1: vec![0.0; n],
        sigma2: Vec::with_capacity(n),
        zeta1: vec![0.0; n],
        zeta2: Vec::with_capacity(n),
        r: Vec::with_capacity(n),
        rho: p.rho(),
        delta: p.delta(),
    };
    for (e, s) in p.states().iter().enumerate() {
        let g = p.gamma_slope(e);
        c.gamma2.push(g * g);
        c.mu1.push(s.kappa * s.theta);
        c.mu2.push(-s.kappa);
        c.sigma2.push(s.chi * s.chi);
        c.zeta2.push(p.rho() * g * s.chi);
        c.r.push(s.r);
    }
    c
}

/// `2κθ ≥ χ²`, non-strict.
pub fn feller_holds(kappa: f64, theta: f64, chi: f64) -> bool {
    2.0 * kappa * theta >= chi * chi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerCheck {
    pub state: usize,
    pub two_kappa_theta: f64,
    pub chi_squared: f64,
    pub passed: bool,
}

pub fn feller_report(p: &HestonRegimeParams) -> Vec<FellerCheck> {
    p.states()
        .iter()
        .enumerate()
        .map(|(state, s)| FellerCheck {
            state,
            two_kappa_theta: 2.0 * s.kappa * s.theta,
            chi_squared: s.chi * s.chi,
            passed: feller_holds(s.kappa, s.theta, s.chi),
        })
        .collect()
}

/// Per-state Feller check; errors with the failing (0-based) states.
pub fn validate_feller(p: &HestonRegimeParams) -> Result<Vec<FellerCheck>> {
    let report = feller_report(p);
    let failing: Vec<usize> = report.iter().filter(|c| !c.passed).map(|c| c.state).collect();
    if failing.is_empty() {
        Ok(report)
    } else {
        Err(Error::FellerViolated { states: failing })
    }
}

/// One inequality `lhs < rhs` (or `<=`) of a solvability condition.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityReport {
    pub variant: Variant,
    pub vartheta: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl SolvabilityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

fn check(name: impl Into<String>, lhs: f64, rhs: f64, strict: bool) -> AssumptionCheck {
    let passed = if strict { lhs < rhs } else { lhs <= rhs };
    AssumptionCheck {
        name: name.into(),
        lhs,
        rhs,
        passed,
    }
}

/// Evaluates every solvability inequality for the variant without failing.
pub fn solvability_report(p: &HestonRegimeParams) -> SolvabilityReport {
    let q = p.utility().leverage_factor();
    let vartheta = p.vartheta();
    let mut checks = Vec::new();
    match p.variant() {
        Variant::Mmh => {
            let mut lower = f64::NEG_INFINITY;
            let mut upper = f64::INFINITY;
            let mut roots_ok = true;
            for e in 0..p.n_states() {
                let t = p.tilted(e);
                checks.push(check(
                    format!("tilted mean reversion positive (state {})", e + 1),
                    0.0,
                    t.kappa,
                    true,
                ));
                let bound = t.kappa * t.kappa / (2.0 * t.chi * t.chi);
                checks.push(check(
                    format!("beta bound (state {})", e + 1),
                    t.beta,
                    bound,
                    true,
                ));
                let disc = t.kappa * t.kappa - 2.0 * t.beta * t.chi * t.chi;
                if disc < 0.0 {
                    roots_ok = false;
                    continue;
                }
                let a = disc.sqrt();
                let chi2 = t.chi * t.chi;
                lower = lower.max((t.kappa - a) / chi2);
                upper = upper.min((t.kappa + a) / chi2);
            }
            let mut mm = check("max-min root ordering", lower, upper, false);
            mm.passed &= roots_ok;
            checks.push(mm);
        }
        Variant::Smmh => {
            let s = p.state(0);
            let d = p.d().unwrap_or(0.0);
            checks.push(check(
                "separable bound delta/(1-delta) d^2 < kappa^2/chi^2",
                q * d * d,
                s.kappa * s.kappa / (s.chi * s.chi),
                true,
            ));
        }
        Variant::SmmhRho => {
            let s = p.state(0);
            let d = p.d().unwrap_or(0.0);
            let k_lev = s.kappa - q * p.rho() * s.chi * d.abs();
            checks.push(check("leverage-adjusted mean reversion positive", 0.0, k_lev, true));
            checks.push(check(
                "leverage bound delta/(1-delta) d^2 < vartheta k^2/chi^2",
                q * d * d,
                vartheta * k_lev * k_lev / (s.chi * s.chi),
                true,
            ));
        }
    }
    SolvabilityReport {
        variant: p.variant(),
        vartheta,
        checks,
    }
}

/// Errors with the first failed inequality, otherwise returns the report.
pub fn validate_solution_assumptions(p: &HestonRegimeParams) -> Result<SolvabilityReport> {
    let report = solvability_report(p);
    match report.first_failure() {
        Some(c) => Err(Error::AssumptionViolated(format!(
            "{} ({} vs {})",
            c.name, c.lhs, c.rhs
        ))),
        None => Ok(report),
    }
}

/// The two-regime parameter sets used throughout the tests and shipped configs.
pub mod presets {
    use super::*;
    use crate::markov_chain::MarkovChainSpec;

    pub const HORIZON: f64 = 5.0;
    pub const V0: f64 = 10.0;
    pub const X0: f64 = 0.02;

    pub fn calm_turbulent_chain() -> MarkovChainSpec {
        MarkovChainSpec::new(&[vec![-1.0909, 1.0909], vec![3.4413, -3.4413]])
            .expect("valid intensity matrix")
    }

    pub fn calm_turbulent_states() -> Vec<StateParams> {
        vec![
            StateParams { r: 0.03, nu: 1.0, kappa: 4.0, theta: 0.02, chi: 0.35 },
            StateParams { r: 0.01, nu: 1.3, kappa: 4.0, theta: 0.04, chi: 0.35 },
        ]
    }

    /// Leverage model with risk-aversion exponent `delta`.
    pub fn smmh_rho(delta: f64) -> HestonRegimeParams {
        HestonRegimeParams::new(
            Variant::SmmhRho,
            calm_turbulent_states(),
            RiskPremium::Global(1.7),
            -0.8,
            delta,
            HORIZON,
        )
        .expect("valid preset")
    }

    /// δ = 0.3.
    pub fn set1() -> HestonRegimeParams {
        smmh_rho(0.3)
    }

    /// δ = -1.
    pub fn set2() -> HestonRegimeParams {
        smmh_rho(-1.0)
    }
}
