//! Closed-form Black-Scholes quantities and the lognormal one-regime
//! transition kernel on a uniform stock grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::RegimeParams;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Edges further than this many standard deviations from the lognormal
/// median carry less than 1e-17 of mass and are left out of kernel bands.
const BAND_Z: f64 = 8.5;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF through `erfc`, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsQuote {
    pub price: f64,
    pub delta: f64,
}

/// Black-Scholes European call with constant rate and volatility.
pub fn bs_call(t: f64, s: f64, r: f64, sigma: f64, strike: f64, maturity: f64) -> Result<BsQuote> {
    if !(t <= maturity) || t < 0.0 {
        return Err(Error::domain(format!("time {t} outside [0, {maturity}]")));
    }
    if !(s >= 0.0) {
        return Err(Error::domain(format!("stock price {s} must be >= 0")));
    }
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("volatility {sigma} must be > 0")));
    }
    Ok(bs_call_unchecked(maturity - t, s, r, sigma, strike))
}

/// Black-Scholes call as a function of time to expiry `tau`.
#[inline]
pub(crate) fn bs_call_unchecked(tau: f64, s: f64, r: f64, sigma: f64, strike: f64) -> BsQuote {
    if s <= 0.0 {
        return BsQuote { price: 0.0, delta: 0.0 };
    }
    if tau <= 0.0 {
        return BsQuote {
            price: (s - strike).max(0.0),
            delta: if s > strike { 1.0 } else { 0.0 },
        };
    }
    let sd = sigma * tau.sqrt();
    let d1 = ((s / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / sd;
    let d2 = d1 - sd;
    let nd1 = norm_cdf(d1);
    let price = s * nd1 - strike * (-r * tau).exp() * norm_cdf(d2);
    BsQuote { price: price.max(0.0), delta: nd1 }
}

/// Uniform stock axis `s_m = m·ds`, `m = 0..=m_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StockGrid {
    pub ds: f64,
    pub m_max: usize,
}

impl StockGrid {
    pub fn new(ds: f64, m_max: usize) -> Self {
        Self { ds, m_max }
    }

    #[inline]
    pub fn stock(&self, m: usize) -> f64 {
        m as f64 * self.ds
    }

    pub fn s_max(&self) -> f64 {
        self.stock(self.m_max)
    }
}

/// How the lognormal density is turned into per-cell weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRule {
    /// Exact lognormal probability of each cell `[(m'-½)Δs, (m'+½)Δs]`.
    #[default]
    CellIntegrated,
    /// Density sampled at the node times `Δs`.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelCell {
    pub weight: f64,
}

/// One-step lognormal law of `S_{t+v}` given `S_t = s` in a single regime.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Lognormal {
    s: f64,
    ln_s: f64,
    drift: f64,
    sd: f64,
    growth: f64,
}

impl Lognormal {
    pub(crate) fn new(s: f64, r: f64, sigma: f64, v: f64) -> Self {
        Self {
            s,
            ln_s: s.ln(),
            drift: (r - 0.5 * sigma * sigma) * v,
            sd: sigma * v.sqrt(),
            growth: (r * v).exp(),
        }
    }

    #[inline]
    fn z(&self, x: f64) -> f64 {
        if x <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (x.ln() - self.ln_s - self.drift) / self.sd
        }
    }

    /// Stock levels bounding `|z| ≤ BAND_Z`.
    fn band(&self) -> (f64, f64) {
        let lo = (self.ln_s + self.drift - BAND_Z * self.sd).exp();
        let hi = (self.ln_s + self.drift + BAND_Z * self.sd).exp();
        (lo, hi)
    }

    /// `(P(X > b), ∂/∂s P(X > b), E[X; X > b], ∂/∂s E[X; X > b])`.
    pub(crate) fn upper_tail(&self, b: f64) -> [f64; 4] {
        let zb = self.z(b);
        let q = norm_cdf(-zb);
        let dq = norm_pdf(zb) / (self.sd * self.s);
        let d = -zb + self.sd;
        let e = self.s * self.growth * norm_cdf(d);
        let de = self.growth * norm_cdf(d) + self.growth * norm_pdf(d) / self.sd;
        [q, dq, e, de]
    }
}

/// Mass (`Φ(z_hi) - Φ(z_lo)`) computed on the side of the median that keeps
/// relative precision.
#[inline]
fn cell_mass(z_lo: f64, z_hi: f64) -> f64 {
    if z_lo >= 0.0 {
        norm_cdf(-z_lo) - norm_cdf(-z_hi)
    } else {
        norm_cdf(z_hi) - norm_cdf(z_lo)
    }
}

/// Per-cell lognormal weights for `m' = 0..=m_max` (probability masses, not
/// densities; divide by `Δs` for a density-style weight).
pub fn lognormal_cell_weights(
    s: f64,
    params: &RegimeParams,
    v: f64,
    grid: &StockGrid,
    rule: KernelRule,
) -> Result<Vec<KernelCell>> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("elapsed time {v} must be > 0")));
    }
    if !(s > 0.0) {
        return Err(Error::domain(format!("stock price {s} must be > 0")));
    }
    let ln = Lognormal::new(s, params.r, params.sigma, v);
    let ds = grid.ds;
    let cells = (0..=grid.m_max)
        .map(|mp| {
            let weight = match rule {
                KernelRule::CellIntegrated => {
                    let lo = (mp as f64 - 0.5).max(0.0) * ds;
                    let hi = (mp as f64 + 0.5) * ds;
                    cell_mass(ln.z(lo), ln.z(hi))
                }
                KernelRule::Pointwise => pointwise_mass(&ln, mp, ds),
            };
            KernelCell { weight }
        })
        .collect();
    Ok(cells)
}

#[inline]
fn pointwise_mass(ln: &Lognormal, mp: usize, ds: f64) -> f64 {
    if mp == 0 {
        return 0.0;
    }
    let x = mp as f64 * ds;
    norm_pdf(ln.z(x)) / (x * ln.sd) * ds
}

/// Banded kernel for one `(lag, regime class)`: for each source node `m`
/// the contiguous destination cells with non-negligible mass, stored as
/// `(mass, ∂mass/∂s)` pairs.
pub(crate) struct BandedKernel {
    lo: Vec<u32>,
    start: Vec<u32>,
    data: Vec<[f64; 2]>,
    tail: Option<Vec<[f64; 4]>>,
}

impl BandedKernel {
    pub(crate) fn build(
        r: f64,
        sigma: f64,
        v: f64,
        grid: &StockGrid,
        rule: KernelRule,
        with_tail: bool,
    ) -> Self {
        let m_max = grid.m_max;
        let ds = grid.ds;
        let mut lo = vec![0u32; m_max + 1];
        let mut start = vec![0u32; m_max + 2];
        let mut data = Vec::new();
        let mut tail = with_tail.then(|| vec![[0.0; 4]; m_max + 1]);
        let b = (m_max as f64 + 0.5) * ds;
        let mut z_edges: Vec<f64> = Vec::with_capacity(m_max + 2);
        for m in 1..=m_max {
            start[m] = data.len() as u32;
            let s = grid.stock(m);
            let ln = Lognormal::new(s, r, sigma, v);
            let (x_lo, x_hi) = ln.band();
            let first = ((x_lo / ds - 0.5).floor().max(0.0) as usize).min(m_max);
            let last = ((x_hi / ds + 0.5).ceil().max(0.0) as usize).min(m_max);
            lo[m] = first as u32;
            let scale = 1.0 / (ln.sd * s);
            match rule {
                KernelRule::CellIntegrated => {
                    z_edges.clear();
                    for e in first..=last + 1 {
                        let x = (e as f64 - 0.5).max(0.0) * ds;
                        z_edges.push(ln.z(x));
                    }
                    for w in z_edges.windows(2) {
                        let (za, zb) = (w[0], w[1]);
                        let mass = cell_mass(za, zb);
                        let pa = if za.is_finite() { norm_pdf(za) } else { 0.0 };
                        let dmass = (pa - norm_pdf(zb)) * scale;
                        data.push([mass, dmass]);
                    }
                }
                KernelRule::Pointwise => {
                    for mp in first..=last {
                        let mass = pointwise_mass(&ln, mp, ds);
                        let z = if mp == 0 { 0.0 } else { ln.z(mp as f64 * ds) };
                        data.push([mass, mass * z * scale]);
                    }
                }
            }
            if let Some(t) = tail.as_mut() {
                t[m] = ln.upper_tail(b);
            }
        }
        start[m_max + 1] = data.len() as u32;
        Self { lo, start, data, tail }
    }

    /// `(Σ w·mass, Σ w·∂mass/∂s)` for source node `m`, plus the linearly
    /// extrapolated contribution of the region above the grid when a tail
    /// is stored.
    #[inline]
    pub(crate) fn apply(&self, m: usize, w: &[f64], ds: f64) -> (f64, f64) {
        let lo = self.lo[m] as usize;
        let rows = &self.data[self.start[m] as usize..self.start[m + 1] as usize];
        let ws = &w[lo..lo + rows.len()];
        let mut a = 0.0;
        let mut b = 0.0;
        for (x, k) in ws.iter().zip(rows) {
            a += x * k[0];
            b += x * k[1];
        }
        if let Some(tail) = &self.tail {
            let top = w.len() - 1;
            let s_top = top as f64 * ds;
            let slope = (w[top] - w[top - 1]) / ds;
            let [q, dq, e, de] = tail[m];
            a += w[top] * q + slope * (e - s_top * q);
            b += w[top] * dq + slope * (de - s_top * dq);
        }
        (a, b)
    }

    pub(crate) fn row_mass(&self, m: usize) -> f64 {
        let rows = &self.data[self.start[m] as usize..self.start[m + 1] as usize];
        rows.iter().map(|k| k[0]).sum()
    }

    pub(crate) fn len(&self) -> usize {
        self.data.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_payoff() {
        let q = bs_call(1.0, 1.5, 0.2, 0.2, 1.0, 1.0).unwrap();
        assert_eq!(q.price, 0.5);
        assert_eq!(q.delta, 1.0);
        let q = bs_call(1.0, 0.7, 0.2, 0.2, 1.0, 1.0).unwrap();
        assert_eq!((q.price, q.delta), (0.0, 0.0));
    }

    #[test]
    fn zero_stock_is_absorbing() {
        let q = bs_call(0.3, 0.0, 0.2, 0.2, 1.0, 1.0).unwrap();
        assert_eq!((q.price, q.delta), (0.0, 0.0));
    }

    #[test]
    fn domain_errors() {
        assert!(bs_call(1.1, 1.0, 0.2, 0.2, 1.0, 1.0).is_err());
        assert!(bs_call(0.5, -1.0, 0.2, 0.2, 1.0, 1.0).is_err());
        let g = StockGrid::new(0.01, 100);
        let p = RegimeParams::new(0.0, 0.2, 0.1);
        assert!(lognormal_cell_weights(0.5, &p, 0.0, &g, KernelRule::CellIntegrated).is_err());
    }

    #[test]
    fn norm_cdf_tails() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        // Φ(-8) = 6.22096057427178e-16
        assert!((norm_cdf(-8.0) / 6.220_960_574_271_78e-16 - 1.0).abs() < 1e-12);
        assert!((norm_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn cell_weights_concentrate_for_short_horizon() {
        let g = StockGrid::new(0.01, 200);
        let p = RegimeParams::new(0.0, 0.3, 0.05);
        let w = lognormal_cell_weights(0.73, &p, 1e-9, &g, KernelRule::CellIntegrated).unwrap();
        assert!((w[73].weight - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|c| (0.0..=1.0).contains(&c.weight)));
    }

    #[test]
    fn banded_kernel_matches_dense_weights() {
        let g = StockGrid::new(0.02, 150);
        let p = RegimeParams::new(0.0, 0.35, 0.4);
        for rule in [KernelRule::CellIntegrated, KernelRule::Pointwise] {
            let v = 0.3;
            let bank = BandedKernel::build(p.r, p.sigma, v, &g, rule, false);
            let w: Vec<f64> = (0..=g.m_max).map(|m| (g.stock(m) - 1.0).max(0.0)).collect();
            for m in [1, 17, 50, 149] {
                let dense = lognormal_cell_weights(g.stock(m), &p, v, &g, rule).unwrap();
                let expect: f64 = dense.iter().zip(&w).map(|(c, x)| c.weight * x).sum();
                let (got, _) = bank.apply(m, &w, g.ds);
                assert!((got - expect).abs() < 1e-14, "m={m} {got} {expect}");
            }
        }
    }
}
