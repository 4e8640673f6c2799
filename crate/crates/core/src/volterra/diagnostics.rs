//! Stability bound, perturbation propagation, the discrete fixed-point
//! operator and a finite-difference residual of the pricing PDE.

use serde::{Deserialize, Serialize};

use super::grid::SolverGrid;
use super::solver::{March, Mode};
use super::surface::PriceSurface;
use crate::error::Result;
use crate::market::{HoldingTimeDist, MarketSpec};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Maximum of `g` on `[lo, hi]`: coarse scan, then golden-section refinement
/// around the best sample.
fn maximize(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 64;
    let h = (hi - lo) / SCAN as f64;
    let (mut best_x, mut best) = (lo, g(lo));
    for j in 1..=SCAN {
        let x = lo + j as f64 * h;
        let v = g(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let mut a = (best_x - h).max(lo);
    let mut b = (best_x + h).min(hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    while b - a > 1e-12 * (1.0 + b.abs()) {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - GOLDEN * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + GOLDEN * (b - a);
            gd = g(d);
        }
    }
    best.max(gc).max(gd)
}

/// `a = max_i max_{v ∈ [0, T]} e^{-r(i) v} f(v | i)`.
pub fn stability_constant(spec: &MarketSpec) -> f64 {
    let t = spec.maturity;
    spec.regimes
        .iter()
        .zip(&spec.holding)
        .map(|(p, h): (_, &HoldingTimeDist)| maximize(|v| (-p.r * v).exp() * h.pdf(v), 0.0, t))
        .fold(0.0, f64::max)
}

/// Largest stable time step `e^{-aT}/a`.
pub fn stability_bound(spec: &MarketSpec) -> f64 {
    let a = stability_constant(spec);
    if a <= 0.0 {
        return f64::INFINITY;
    }
    (-a * spec.maturity).exp() / a
}

/// Where a perturbation enters the march.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Once, into every interior node of step `n`.
    AtStep(usize),
    /// Into every interior node of each step `0..N`, leaving the last step
    /// to show only propagated error.
    EveryStep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagationProfile {
    pub injection: Injection,
    pub delta: f64,
    /// `max_{m,i} |φ̃^n_m(i) - φ^n_m(i)|` for `n = 0..=N`.
    pub effects: Vec<f64>,
    /// Effect at the last step, `t = 0`.
    pub final_effect: f64,
    pub a: f64,
    /// `(e^{aT} - 1) δ`.
    pub accumulation_bound: f64,
}

/// Solve twice on one kernel bank, once with `delta` added per `injection`,
/// and record how far the perturbation travels.
pub fn perturbation_experiment(
    spec: &MarketSpec,
    grid: &SolverGrid,
    injection: Injection,
    delta: f64,
) -> Result<PropagationProfile> {
    Ok(perturbation_study(spec, grid, &[(injection, delta)])?.remove(0))
}

/// Several perturbation experiments sharing the kernel bank and the
/// unperturbed solve.
pub fn perturbation_study(
    spec: &MarketSpec,
    grid: &SolverGrid,
    cases: &[(Injection, f64)],
) -> Result<Vec<PropagationProfile>> {
    spec.ensure_valid()?;
    super::check_stability(spec, grid)?;
    let march = March::new(spec, grid)?;
    let base = march.run(Mode::Solve { inject: &|_| 0.0 }).values;
    let n_steps = grid.n_steps;
    let step_len = (grid.m_max + 1) * spec.k();
    let a = stability_constant(spec);
    cases
        .iter()
        .map(|&(injection, delta)| {
            let inject = move |n: usize| match injection {
                Injection::AtStep(at) if n == at => delta,
                Injection::EveryStep if n < n_steps => delta,
                _ => 0.0,
            };
            let bumped = march.run(Mode::Solve { inject: &inject }).values;
            let effects: Vec<f64> = base
                .chunks(step_len)
                .zip(bumped.chunks(step_len))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .collect();
            Ok(PropagationProfile {
                injection,
                delta,
                final_effect: effects[n_steps],
                effects,
                a,
                accumulation_bound: ((a * spec.maturity).exp() - 1.0) * delta,
            })
        })
        .collect()
}

/// One application of the discretized integral operator to a surface laid
/// out like [`PriceSurface::values`]; step 0 is reset to the payoff.
pub fn apply_operator(spec: &MarketSpec, grid: &SolverGrid, phi: &[f64]) -> Result<Vec<f64>> {
    spec.ensure_valid()?;
    let expected = (grid.n_steps + 1) * (grid.m_max + 1) * spec.k();
    if phi.len() != expected {
        return Err(crate::error::Error::InvalidConfig(format!(
            "surface has {} values, grid expects {expected}",
            phi.len()
        )));
    }
    let march = March::new(spec, grid)?;
    Ok(march.run(Mode::Given(phi)).values)
}

/// `sup |a - b| / (1 + s)` over all nodes.
pub fn weighted_sup_distance(grid: &SolverGrid, k: usize, a: &[f64], b: &[f64]) -> f64 {
    let mp1 = grid.m_max + 1;
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(idx, (x, y))| {
            let m = (idx / k) % mp1;
            (x - y).abs() / (1.0 + grid.stock(m))
        })
        .fold(0.0, f64::max)
}

/// Evaluation window and step sizes for [`pde_residual`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ResidualOptions {
    /// Elapsed time at which the residual is taken.
    pub y: f64,
    /// Forward-difference step in `y`.
    pub dy: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    /// Calendar-time window; nodes adjacent to the ends are skipped.
    pub t_lo: f64,
    pub t_hi: f64,
}

impl ResidualOptions {
    pub fn for_surface(surface: &PriceSurface) -> Self {
        let spec = surface.spec();
        Self {
            y: 0.0,
            dy: surface.grid().dt,
            s_lo: 0.5 * spec.strike,
            s_hi: 2.0 * spec.strike,
            t_lo: 0.0,
            t_hi: spec.maturity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub count: usize,
}

/// Residual of
/// `φ_t + φ_y + r s φ_s + ½σ²s² φ_ss + Σ_{j≠i} λ_ij(y)[φ(t,s,j,0) - φ(t,s,i,y)] - r φ`
/// at interior nodes, by central differences in `t` and `s` and a forward
/// difference in `y`.
pub fn pde_residual(surface: &PriceSurface, opts: &ResidualOptions) -> ResidualStats {
    let spec = surface.spec();
    let g = surface.grid();
    let k = spec.k();
    let (dt, ds) = (g.dt, g.ds);
    let y = opts.y;
    let mut max_abs: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in 1..g.n_steps {
        let t = g.time(n);
        if t < opts.t_lo || t > opts.t_hi {
            continue;
        }
        for m in 1..g.m_max {
            let s = g.stock(m);
            if s < opts.s_lo || s > opts.s_hi {
                continue;
            }
            for i in 0..k {
                let reg = &spec.regimes[i];
                let h = &spec.holding[i];
                let phi = |t: f64, s: f64, y: f64| surface.price_state(t, s, i, y);
                let c = phi(t, s, y);
                let phi_t = (phi(t + dt, s, y) - phi(t - dt, s, y)) / (2.0 * dt);
                let phi_y = (phi(t, s, y + opts.dy) - c) / opts.dy;
                let up = phi(t, s + ds, y);
                let dn = phi(t, s - ds, y);
                let phi_s = (up - dn) / (2.0 * ds);
                let phi_ss = (up - 2.0 * c + dn) / (ds * ds);
                let exit = h.exit_rate(y);
                let mut jump = 0.0;
                if exit > 0.0 {
                    for j in (0..k).filter(|&j| j != i) {
                        jump += spec.transitions.get(i, j)
                            * exit
                            * (surface.price_state(t, s, j, 0.0) - c);
                    }
                }
                let res = phi_t + phi_y + reg.r * s * phi_s + 0.5 * reg.sigma * reg.sigma * s * s * phi_ss
                    + jump
                    - reg.r * c;
                max_abs = max_abs.max(res.abs());
                sum += res.abs();
                count += 1;
            }
        }
    }
    ResidualStats { max_abs, mean_abs: if count > 0 { sum / count as f64 } else { 0.0 }, count }
}
