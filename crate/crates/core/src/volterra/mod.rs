//! Backward quadrature solver for the price function and its hedge ratio.

pub mod diagnostics;
pub mod grid;
mod solver;
pub mod surface;

use log::{info, warn};

pub use diagnostics::{
    apply_operator, pde_residual, perturbation_experiment, perturbation_study, stability_bound, stability_constant,
    weighted_sup_distance, Injection, PropagationProfile, ResidualOptions, ResidualStats,
};
pub use grid::{SolverGrid, UpperTail, ZeroLagHedge};
pub use surface::{from_values, spec_fingerprint, HedgeQuote, PriceSurface, SurfaceMetadata};

use crate::error::{Error, Result};
use crate::market::MarketSpec;
use solver::{March, Mode};

/// Refuse time steps above `e^{-aT}/a` unless the grid allows it.
pub fn check_stability(spec: &MarketSpec, grid: &SolverGrid) -> Result<()> {
    let bound = stability_bound(spec);
    if grid.dt > bound {
        if grid.allow_unstable {
            warn!("time step {} exceeds the stability bound {bound}", grid.dt);
        } else {
            return Err(Error::StabilityViolation { dt: grid.dt, bound });
        }
    }
    Ok(())
}

/// Solve `φ^n_m(i)` for `n = 0..=N` by marching backward from maturity.
pub fn solve_surface(spec: &MarketSpec, grid: &SolverGrid) -> Result<PriceSurface> {
    spec.ensure_valid()?;
    check_stability(spec, grid)?;
    let march = March::new(spec, grid)?;
    let mut out = march.run(Mode::Solve { inject: &|_| 0.0 });
    let phi = std::mem::take(&mut out.values);
    let surface = PriceSurface::from_march(&march, out, phi);
    info!(
        "solved {} nodes x {} regimes; lost tail mass near strike {:.3e}",
        grid.nodes(),
        spec.k(),
        surface.lost_mass_at_strike()
    );
    Ok(surface)
}

/// `φ(t, s, i, y)`.
pub fn price_at(surface: &PriceSurface, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
    surface.price_at(t, s, i, y)
}

/// `(φ, ψ, ε)` at `(t, s, i, y)`.
pub fn hedge_at(surface: &PriceSurface, t: f64, s: f64, i: usize, y: f64) -> Result<HedgeQuote> {
    surface.hedge_at(t, s, i, y)
}
