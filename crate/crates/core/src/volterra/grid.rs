use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelRule, StockGrid};
use crate::market::MarketSpec;

/// Treatment of the lognormal mass that leaves the stock grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperTail {
    /// Mass above `s_max` is dropped.
    Truncate,
    /// Values above `s_max` are extrapolated linearly from the last two nodes.
    #[default]
    LinearExtrapolation,
}

/// Zero-lag term of the hedge quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLagHedge {
    /// `Δt ω(0) λ(y) Σ_j p_ij φ(j) / s · (1/2 - r/σ²)`.
    #[default]
    PriceRatio,
    /// `Δt ω(0) λ(y) Σ_j p_ij ∂φ(j)/∂s`, the small-lag limit of the kernel
    /// derivative, with the stock derivative taken by central differences.
    StockDerivative,
}

/// Time × stock discretization for the backward march, with solver switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub maturity: f64,
    pub dt: f64,
    pub ds: f64,
    pub n_steps: usize,
    pub m_max: usize,
    #[serde(default)]
    pub kernel_rule: KernelRule,
    #[serde(default)]
    pub upper_tail: UpperTail,
    #[serde(default)]
    pub zero_lag_hedge: ZeroLagHedge,
    /// Accept time steps above the stability bound.
    #[serde(default)]
    pub allow_unstable: bool,
}

impl SolverGrid {
    /// `n_steps = ceil(T/dt)`; the step is then shrunk to `T/n_steps` so that
    /// the last node sits exactly at `t = 0`. `m_max = ceil(s_max/ds)`.
    pub fn new(maturity: f64, dt: f64, ds: f64, s_max: f64) -> Result<Self> {
        for (name, x) in [("maturity", maturity), ("dt", dt), ("ds", ds), ("s_max", s_max)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {x}")));
            }
        }
        let n_steps = ((maturity / dt) - 1e-9).ceil().max(1.0) as usize;
        let m_max = ((s_max / ds) - 1e-9).ceil().max(2.0) as usize;
        Ok(Self {
            maturity,
            dt: maturity / n_steps as f64,
            ds,
            n_steps,
            m_max,
            kernel_rule: KernelRule::default(),
            upper_tail: UpperTail::default(),
            zero_lag_hedge: ZeroLagHedge::default(),
            allow_unstable: false,
        })
    }

    /// `Δs = K/100` on `[0, 4K]`, `Δt = 1/200`.
    pub fn default_for(spec: &MarketSpec) -> Self {
        Self::new(spec.maturity, 1.0 / 200.0, spec.strike / 100.0, 4.0 * spec.strike)
            .expect("default grid parameters are positive")
    }

    pub fn with_kernel_rule(mut self, rule: KernelRule) -> Self {
        self.kernel_rule = rule;
        self
    }

    pub fn with_upper_tail(mut self, tail: UpperTail) -> Self {
        self.upper_tail = tail;
        self
    }

    pub fn with_zero_lag_hedge(mut self, z: ZeroLagHedge) -> Self {
        self.zero_lag_hedge = z;
        self
    }

    pub fn allow_unstable(mut self, yes: bool) -> Self {
        self.allow_unstable = yes;
        self
    }

    pub fn stock_grid(&self) -> StockGrid {
        StockGrid::new(self.ds, self.m_max)
    }

    #[inline]
    pub fn stock(&self, m: usize) -> f64 {
        m as f64 * self.ds
    }

    pub fn s_max(&self) -> f64 {
        self.stock(self.m_max)
    }

    /// Calendar time of step `n`, `T - nΔt`.
    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            0.0
        } else {
            self.maturity - n as f64 * self.dt
        }
    }

    /// Repeated trapezium weights `ω_n(l)` on `[0, nΔt]`.
    #[inline]
    pub fn weight(&self, n: usize, l: usize) -> f64 {
        if l == 0 || l == n {
            0.5
        } else {
            1.0
        }
    }

    pub fn nodes(&self) -> usize {
        (self.n_steps + 1) * (self.m_max + 1)
    }
}
