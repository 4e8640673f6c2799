//! Residual-risk measures of the locally risk-minimizing strategy and the
//! risk-neutral pricing oracle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::mc::{reduce_paths, Estimate};
use crate::simulate::{point, rebalance_times, sample_market_path, MarketPath, Measure, SimConfig};
use crate::volterra::PriceSurface;

/// `g(x) = x² 1{x ≥ 0}`.
#[inline]
pub fn positive_square(x: f64) -> f64 {
    if x >= 0.0 {
        x * x
    } else {
        0.0
    }
}

/// Discounted price changes at the jumps of one path and the discounted
/// cash flow `C*_T - C*_0` (jumps minus compensator).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostIncrement {
    pub jump_square_sum: f64,
    pub jump_sum: f64,
    pub compensator: f64,
}

impl CostIncrement {
    pub fn cashflow(&self) -> f64 {
        self.jump_sum - self.compensator
    }
}

/// `exit(Y) · B^{-1} · [Σ_j p_ij φ(t,S,j,0) - φ(t,S,i,Y)]` at a left state.
#[inline]
fn gap_rate(surface: &PriceSurface, t: f64, s: f64, discount: f64, i: usize, y: f64) -> f64 {
    let exit = surface.spec().holding[i].exit_rate(y);
    if exit == 0.0 {
        return 0.0;
    }
    let (mixed, price) = surface.jump_gap_state(t, s, i, y);
    exit * discount * (mixed - price)
}

/// Cost-process increments of the optimal strategy along one path.
pub fn cost_increment(surface: &PriceSurface, path: &MarketPath, with_compensator: bool) -> CostIncrement {
    let mut sq = 0.0;
    let mut sum = 0.0;
    let mut comp = 0.0;
    let pts = &path.points;
    let mut prev_rate = 0.0;
    for (idx, p) in pts.iter().enumerate() {
        if p.is(point::JUMP) {
            let (xl, yl) = path.left_state(p);
            let (xr, _) = path.state(p);
            let d = p.discount
                * (surface.price_state(p.t, p.stock, xr, 0.0) - surface.price_state(p.t, p.stock, xl, yl));
            sq += d * d;
            sum += d;
        }
        if with_compensator {
            // trapezium over [t_{idx-1}, t_idx] with the left state at t_idx
            let (xl, yl) = path.left_state(p);
            let rate_left = gap_rate(surface, p.t, p.stock, p.discount, xl, yl);
            if idx > 0 {
                comp += 0.5 * (p.t - pts[idx - 1].t) * (prev_rate + rate_left);
            }
            prev_rate = if p.is(point::JUMP) {
                let (xr, yr) = path.state(p);
                gap_rate(surface, p.t, p.stock, p.discount, xr, yr)
            } else {
                rate_left
            };
        }
    }
    CostIncrement { jump_square_sum: sq, jump_sum: sum, compensator: comp }
}

/// `V*_T - G*_T` for trading the stock at the observation times of the path.
pub fn discrete_hedge_error(surface: &PriceSurface, path: &MarketPath, v0: f64) -> f64 {
    let strike = surface.spec().strike;
    let mut gain = v0;
    let mut open: Option<(f64, f64)> = None;
    for p in &path.points {
        let s_star = p.discount * p.stock;
        let rebalance = p.is(point::OBSERVATION);
        if let Some((xi, s_prev)) = open {
            if rebalance || p.is(point::END) {
                gain += xi * (s_star - s_prev);
                open = None;
            }
        }
        if rebalance && !p.is(point::END) {
            let (x, y) = path.left_state(p);
            open = Some((surface.hedge_state(p.t, p.stock, x, y), s_star));
        }
    }
    let end = path.terminal();
    end.discount * (end.stock - strike).max(0.0) - gain
}

fn check_point(spec: &MarketSpec, s0: f64, x0: usize, y0: f64) -> Result<()> {
    if !(s0 >= 0.0 && s0.is_finite()) {
        return Err(Error::domain(format!("initial stock price {s0} must be finite and >= 0")));
    }
    spec.check_elapsed(x0, y0)?;
    Ok(())
}

fn check_surface(spec: &MarketSpec, surface: &PriceSurface) -> Result<()> {
    if surface.spec() != spec {
        return Err(Error::InvalidConfig("surface was solved for a different market".into()));
    }
    Ok(())
}

/// Quadratic residual risk by the jump-sum form.
pub fn qrr(spec: &MarketSpec, surface: &PriceSurface, s0: f64, x0: usize, y0: f64, config: &SimConfig) -> Result<Estimate> {
    check_surface(spec, surface)?;
    check_point(spec, s0, x0, y0)?;
    config.validate(spec.maturity)?;
    let cfg = SimConfig { compensator_substeps: 0, ..config.clone() };
    let m = reduce_paths(cfg.n_paths, 1, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, &cfg, idx)?;
        out[0] = cost_increment(surface, &path, false).jump_square_sum;
        Ok(())
    })?;
    Ok(m[0].estimate())
}

/// Positive residual risk `E[g(C*_T - C*_0)]`.
pub fn prr(spec: &MarketSpec, surface: &PriceSurface, s0: f64, x0: usize, y0: f64, config: &SimConfig) -> Result<Estimate> {
    check_surface(spec, surface)?;
    check_point(spec, s0, x0, y0)?;
    config.validate(spec.maturity)?;
    let m = reduce_paths(config.n_paths, 1, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, config, idx)?;
        out[0] = positive_square(cost_increment(surface, &path, true).cashflow());
        Ok(())
    })?;
    Ok(m[0].estimate())
}

/// `(PM(QRR), PM(PRR))` for trading at the configured observation times.
pub fn pm_risks(
    spec: &MarketSpec,
    surface: &PriceSurface,
    s0: f64,
    x0: usize,
    y0: f64,
    config: &SimConfig,
) -> Result<(Estimate, Estimate)> {
    check_surface(spec, surface)?;
    check_point(spec, s0, x0, y0)?;
    config.validate(spec.maturity)?;
    if config.observation_times.is_empty() {
        return Err(Error::InvalidConfig("practitioner's measures need at least one rebalance date".into()));
    }
    let cfg = SimConfig { compensator_substeps: 0, ..config.clone() };
    let v0 = surface.price_state(0.0, s0, x0, y0);
    let m = reduce_paths(cfg.n_paths, 2, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, &cfg, idx)?;
        let e = discrete_hedge_error(surface, &path, v0);
        out[0] = e * e;
        out[1] = positive_square(e);
        Ok(())
    })?;
    Ok((m[0].estimate(), m[1].estimate()))
}

/// All four measures at one conditioning point, from one set of paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub s0: f64,
    pub x0: usize,
    pub y0: f64,
    pub measure: Measure,
    pub qrr: Estimate,
    pub prr: Estimate,
    pub pm_qrr: Estimate,
    pub pm_prr: Estimate,
    /// QRR as the mean of the squared cash flow.
    pub qrr_cashflow: Estimate,
    /// Mean of `C*_T - C*_0`.
    pub cashflow_mean: Estimate,
    pub rebalance_times: Vec<f64>,
}

impl RiskReport {
    /// `(name, estimate)` in output order.
    pub fn measures(&self) -> [(&'static str, Estimate); 4] {
        [("qrr", self.qrr), ("prr", self.prr), ("pm_qrr", self.pm_qrr), ("pm_prr", self.pm_prr)]
    }
}

/// Risk report with `rebalances` equally spaced trading dates starting at 0.
/// Observation times already in `config` are replaced by the schedule.
pub fn risk_report(
    spec: &MarketSpec,
    surface: &PriceSurface,
    s0: f64,
    x0: usize,
    y0: f64,
    rebalances: usize,
    config: &SimConfig,
) -> Result<RiskReport> {
    check_surface(spec, surface)?;
    check_point(spec, s0, x0, y0)?;
    if rebalances == 0 {
        return Err(Error::InvalidConfig("practitioner's measures need at least one rebalance date".into()));
    }
    let schedule = rebalance_times(spec.maturity, rebalances);
    let cfg = config.clone().with_observations(schedule.clone());
    cfg.validate(spec.maturity)?;
    let v0 = surface.price_state(0.0, s0, x0, y0);
    let m = reduce_paths(cfg.n_paths, 6, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, &cfg, idx)?;
        let c = cost_increment(surface, &path, true);
        let cf = c.cashflow();
        let e = discrete_hedge_error(surface, &path, v0);
        out.copy_from_slice(&[c.jump_square_sum, positive_square(cf), e * e, positive_square(e), cf * cf, cf]);
        Ok(())
    })?;
    Ok(RiskReport {
        s0,
        x0,
        y0,
        measure: cfg.measure,
        qrr: m[0].estimate(),
        prr: m[1].estimate(),
        pm_qrr: m[2].estimate(),
        pm_prr: m[3].estimate(),
        qrr_cashflow: m[4].estimate(),
        cashflow_mean: m[5].estimate(),
        rebalance_times: schedule,
    })
}

/// Risk-neutral Monte Carlo price `E[B_T^{-1} (S_T - K)^+]`; the measure in
/// `config` is ignored.
pub fn mc_price_oracle(spec: &MarketSpec, s0: f64, x0: usize, y0: f64, config: &SimConfig) -> Result<Estimate> {
    spec.ensure_valid()?;
    check_point(spec, s0, x0, y0)?;
    let cfg = SimConfig {
        measure: Measure::RiskNeutral,
        observation_times: Vec::new(),
        compensator_substeps: 0,
        ..config.clone()
    };
    cfg.validate(spec.maturity)?;
    let strike = spec.strike;
    let m = reduce_paths(cfg.n_paths, 1, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, &cfg, idx)?;
        let end = path.terminal();
        out[0] = end.discount * (end.stock - strike).max(0.0);
        Ok(())
    })?;
    Ok(m[0].estimate())
}

/// Mean of `B_t^{-1} φ(t, S_t, X_t, Y_t)` under the risk-neutral measure.
pub fn discounted_price_mean(
    spec: &MarketSpec,
    surface: &PriceSurface,
    s0: f64,
    x0: usize,
    y0: f64,
    t: f64,
    config: &SimConfig,
) -> Result<Estimate> {
    check_surface(spec, surface)?;
    check_point(spec, s0, x0, y0)?;
    let cfg = SimConfig {
        measure: Measure::RiskNeutral,
        observation_times: vec![t],
        compensator_substeps: 0,
        ..config.clone()
    };
    cfg.validate(spec.maturity)?;
    let m = reduce_paths(cfg.n_paths, 1, |idx, out| {
        let path = sample_market_path(spec, s0, x0, y0, &cfg, idx)?;
        let p = path.at_time(t).expect("observation time is on the path");
        let (x, y) = path.state(p);
        out[0] = p.discount * surface.price_state(p.t, p.stock, x, y);
        Ok(())
    })?;
    Ok(m[0].estimate())
}

pub const RISK_CSV_HEADER: [&str; 6] = ["s0", "regime", "measure", "estimate", "stderr", "n_paths"];

/// One row per `(s0, regime, measure)`, regimes labelled from 1.
pub fn write_risk_csv<W: Write>(reports: &[RiskReport], selected: &[&str], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RISK_CSV_HEADER)?;
    for r in reports {
        for (name, e) in r.measures() {
            if !selected.is_empty() && !selected.contains(&name) {
                continue;
            }
            w.write_record([
                r.s0.to_string(),
                (r.x0 + 1).to_string(),
                name.to_string(),
                e.estimate.to_string(),
                e.stderr.to_string(),
                e.n_paths.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
