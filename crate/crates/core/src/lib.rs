//! Pricing and hedging of European calls in a Black-Scholes market whose
//! parameters follow a semi-Markov regime process.
//!
//! The price `φ(t, s, i, y)` (time, stock, regime, age of the regime) solves
//! a Volterra equation of the second kind. [`volterra::solve_surface`]
//! discretizes it with a step-by-step trapezium quadrature; hedge ratios
//! come from the same quadrature with differentiated kernels. Residual
//! risks of the resulting strategy are estimated by exact path simulation
//! in [`risk`].

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod kernels;
pub mod market;
pub mod mc;
pub mod risk;
pub mod simulate;
pub mod volterra;

pub use error::{Error, Result};
pub use kernels::{bs_call, lognormal_cell_weights, BsQuote, KernelCell, KernelRule, StockGrid};
pub use market::{hazard, validate, HoldingTimeDist, MarketSpec, RegimeParams, TransitionMatrix, ValidationReport, Violation};
pub use mc::Estimate;
pub use risk::{mc_price_oracle, pm_risks, prr, qrr, risk_report, RiskReport};
pub use simulate::{sample_market_path, sample_semi_markov, JumpSkeleton, MarketPath, Measure, SimConfig};
pub use volterra::{
    hedge_at, perturbation_experiment, pde_residual, price_at, solve_surface, stability_bound, HedgeQuote,
    Injection, PriceSurface, PropagationProfile, SolverGrid,
};
