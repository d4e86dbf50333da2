//! Optimal dynamic investment in Markov-modulated affine stochastic-volatility
//! markets, with the regime-switching Heston family as the worked case.
//!
//! The crate is organised bottom-up:
//!
//! - [`markov_chain`]: intensity matrices, exact chain simulation, transition
//!   matrices and occupation integrals along regime paths.
//! - [`models`]: parameter catalog and well-posedness checks.
//! - [`riccati`]: closed-form and numeric Riccati solutions, including the
//!   backward piecewise composition along a regime path.
//! - [`regime_expectation`]: the regime expectation ξ by Monte Carlo and by the
//!   coupled linear ODE system.
//! - [`value_strategy`]: value functions and optimal strategies.
//! - [`simulate`]: full market simulation and verification diagnostics.

pub mod error;
pub mod markov_chain;
pub mod models;
pub mod quadrature;
pub mod regime_expectation;
pub mod riccati;
pub mod rng;
pub mod simulate;
pub mod value_strategy;

pub use error::{Error, Result};
pub use markov_chain::{MarkovChainSpec, RegimePath};
pub use models::{
    AffineCoefficients, HestonRegimeParams, RiskPremium, SolvabilityReport, StateParams,
    UtilitySpec, Variant,
};
pub use regime_expectation::{RegimeIntegrand, XiMethod, XiTable};
pub use riccati::{CharFnCoeffs, PiecewiseAB};
pub use simulate::{PathBundle, Recording, SimConfig};
pub use value_strategy::{StrategyPoint, ValueQuery};
