use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{SolverGrid, ZeroLagHedge};
use super::solver::{March, MarchOutput, Mode};
use crate::error::{Error, Result};
use crate::market::MarketSpec;

pub const SURFACE_CSV_HEADER: [&str; 6] = ["n", "t", "m", "s", "regime", "phi"];

/// Short content hash of a market specification.
pub fn spec_fingerprint(spec: &MarketSpec) -> String {
    let text = serde_json::to_string(spec).expect("market spec serializes");
    hex::encode(&Sha256::digest(text.as_bytes())[..16])
}

/// Price, stock hedge ratio and money-market position at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HedgeQuote {
    pub price: f64,
    pub xi: f64,
    /// `φ - ξ s` in units of the money-market account at the quote time
    /// (discount factor 1); multiply by the path discount along a path.
    pub epsilon: f64,
}

impl HedgeQuote {
    pub fn discounted(price: f64, xi: f64, s: f64, discount: f64) -> Self {
        Self { price, xi, epsilon: discount * (price - xi * s) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceMetadata {
    pub format: String,
    pub fingerprint: String,
    pub grid: SolverGrid,
    pub spec: MarketSpec,
    /// Largest one-step lognormal mass leaving the grid from the node
    /// closest to the strike.
    pub lost_mass_at_strike: f64,
}

/// Discretized `φ(T - nΔt, mΔs, i, 0)` together with the age-expansion
/// coefficients that evaluate `φ(·, ·, i, y)` and its stock derivative for
/// any elapsed time `y` without revisiting the kernels.
#[derive(Debug, Clone)]
pub struct PriceSurface {
    spec: MarketSpec,
    grid: SolverGrid,
    fingerprint: String,
    lost_mass_at_strike: f64,
    k: usize,
    q_max: usize,
    phi: Vec<f64>,
    eta: Vec<f64>,
    eta_delta: Vec<f64>,
    pphi: Vec<f64>,
    kphi: Vec<f64>,
    kpsi: Vec<f64>,
    /// `β^α/(α-1)! · C(α-1, q)` per regime, laid out `[i][q]`.
    age_coef: Vec<f64>,
    /// `e^{-β nΔt}` per regime, laid out `[i][n]`.
    decay: Vec<f64>,
}

/// `y`-dependent factors of one regime, shared by the nodes of a query.
#[derive(Debug, Clone, Copy)]
pub(crate) struct AgeFactors {
    pub y: f64,
    /// Polynomial factor of `1 - F(y)`.
    pub poly: f64,
    /// `f(y)/(1 - F(y))`.
    pub exit_rate: f64,
    /// `a_q(y)/(1 - F(y))`.
    pub a: [f64; MAX_SHAPE],
}

pub(crate) const MAX_SHAPE: usize = 16;

impl PriceSurface {
    pub(crate) fn from_march(march: &March<'_>, out: MarchOutput, phi: Vec<f64>) -> Self {
        let spec = march.spec.clone();
        let grid = *march.grid;
        let q_max = out.q_max;
        let k = spec.k();
        let mut age_coef = vec![0.0; k * q_max];
        for (i, h) in spec.holding.iter().enumerate() {
            let alpha = h.shape() as usize;
            let beta = h.rate();
            let mut lead = beta.powi(alpha as i32);
            for q in 1..alpha {
                lead /= q as f64;
            }
            let mut binom = 1.0;
            for q in 0..alpha {
                age_coef[i * q_max + q] = lead * binom;
                binom = binom * (alpha - 1 - q) as f64 / (q + 1) as f64;
            }
        }
        let n1 = grid.n_steps + 1;
        let mut decay = vec![0.0; k * n1];
        for (i, h) in spec.holding.iter().enumerate() {
            for n in 0..n1 {
                decay[i * n1 + n] = (-h.rate() * n as f64 * grid.dt).exp();
            }
        }
        Self {
            fingerprint: spec_fingerprint(&spec),
            lost_mass_at_strike: march.lost_mass_near(spec.strike),
            spec,
            grid,
            k,
            q_max,
            phi,
            eta: out.eta,
            eta_delta: out.eta_delta,
            pphi: out.pphi,
            kphi: out.kphi,
            kpsi: out.kpsi,
            age_coef,
            decay,
        }
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.spec
    }

    pub fn grid(&self) -> &SolverGrid {
        &self.grid
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn lost_mass_at_strike(&self) -> f64 {
        self.lost_mass_at_strike
    }

    /// Flat `[n][m][i]` array of node values.
    pub fn values(&self) -> &[f64] {
        &self.phi
    }

    #[inline]
    fn idx(&self, n: usize, m: usize, i: usize) -> usize {
        (n * (self.grid.m_max + 1) + m) * self.k + i
    }

    /// Stored `φ^n_m(i)`.
    #[inline]
    pub fn node(&self, n: usize, m: usize, i: usize) -> f64 {
        self.phi[self.idx(n, m, i)]
    }

    pub(crate) fn age_factors(&self, i: usize, y: f64) -> AgeFactors {
        let h = &self.spec.holding[i];
        let alpha = h.shape() as usize;
        // 1 - F(y) = e^{-βy} poly(y); the exponential cancels against f
        let poly = h.survival_poly(y);
        let inv_poly = 1.0 / poly;
        let mut a = [0.0; MAX_SHAPE];
        let mut pow = 1.0;
        // a_q(y) carries y^{α-1-q}; fill from the top down
        for q in (0..alpha).rev() {
            a[q] = self.age_coef[i * self.q_max + q] * pow * inv_poly;
            pow *= y;
        }
        AgeFactors { y, poly, exit_rate: h.exit_rate(y), a }
    }

    /// `(1 - F(nΔt + y))/(1 - F(y))`.
    #[inline]
    fn survival_ratio(&self, n: usize, i: usize, af: &AgeFactors) -> f64 {
        let h = &self.spec.holding[i];
        self.decay[i * (self.grid.n_steps + 1) + n] * h.survival_poly(n as f64 * self.grid.dt + af.y) / af.poly
    }

    /// `φ(T - nΔt, mΔs, i, y)` at a grid node.
    pub(crate) fn node_price(&self, n: usize, m: usize, i: usize, af: &AgeFactors, sr: f64) -> f64 {
        let idx = self.idx(n, m, i);
        if af.y == 0.0 {
            return self.phi[idx];
        }
        if n == 0 {
            return self.phi[idx];
        }
        let alpha = self.spec.holding[i].shape() as usize;
        let kq = &self.kphi[idx * self.q_max..idx * self.q_max + alpha];
        let mut v = sr * self.eta[idx];
        for (a, c) in af.a[..alpha].iter().zip(kq) {
            v += a * c;
        }
        v + self.grid.dt * 0.5 * af.exit_rate * self.pphi[idx]
    }

    /// `ψ(T - nΔt, mΔs, i, y)` at a grid node.
    pub(crate) fn node_hedge(&self, n: usize, m: usize, i: usize, af: &AgeFactors, sr: f64) -> f64 {
        let idx = self.idx(n, m, i);
        if n == 0 || m == 0 {
            return self.eta_delta[idx];
        }
        let alpha = self.spec.holding[i].shape() as usize;
        let kq = &self.kpsi[idx * self.q_max..idx * self.q_max + alpha];
        let mut v = sr * self.eta_delta[idx];
        for (a, c) in af.a[..alpha].iter().zip(kq) {
            v += a * c;
        }
        let lag0 = self.grid.dt * 0.5 * af.exit_rate;
        if lag0 != 0.0 {
            let reg = &self.spec.regimes[i];
            let s = self.grid.stock(m);
            v += lag0
                * match self.grid.zero_lag_hedge {
                    ZeroLagHedge::PriceRatio => {
                        self.pphi[idx] / s * (0.5 - reg.r / (reg.sigma * reg.sigma))
                    }
                    ZeroLagHedge::StockDerivative => {
                        let up = m.min(self.grid.m_max - 1) + 1;
                        let dn = m - 1;
                        (self.pphi[self.idx(n, up, i)] - self.pphi[self.idx(n, dn, i)])
                            / ((up - dn) as f64 * self.grid.ds)
                    }
                };
        }
        v
    }

    fn check_query(&self, t: f64, s: f64, i: usize, y: f64) -> Result<()> {
        let k = self.k;
        if i >= k {
            return Err(Error::InvalidIndex { index: i, k });
        }
        if !(0.0..=self.grid.maturity).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.grid.maturity)));
        }
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("stock price {s} must be finite and >= 0")));
        }
        self.spec.check_elapsed(i, y)?;
        Ok(())
    }

    fn check_age_domain(&self, t: f64, y: f64) -> Result<()> {
        if y > t + 1e-12 {
            return Err(Error::domain(format!("elapsed time {y} exceeds calendar time {t}")));
        }
        Ok(())
    }

    /// Bracketing nodes and weights of `(t, s)`; stock queries beyond the
    /// grid extrapolate linearly from the last cell.
    #[inline]
    fn locate(&self, t: f64, s: f64) -> (usize, f64, usize, f64) {
        let g = &self.grid;
        let mut u = (g.maturity - t) / g.dt;
        if (u - u.round()).abs() < 1e-9 {
            u = u.round();
        }
        let n0 = (u.floor() as usize).min(g.n_steps - 1);
        let ft = (u - n0 as f64).clamp(0.0, 1.0);
        let mut x = s / g.ds;
        if (x - x.round()).abs() < 1e-9 {
            x = x.round();
        }
        let m0 = (x.floor() as usize).min(g.m_max - 1);
        let fs = x - m0 as f64;
        (n0, ft, m0, fs)
    }

    fn interpolate(
        &self,
        t: f64,
        s: f64,
        i: usize,
        y: f64,
        node: impl Fn(usize, usize, &AgeFactors, f64) -> f64,
    ) -> f64 {
        let (n0, ft, m0, fs) = self.locate(t, s);
        let af = self.age_factors(i, y);
        let mut out = 0.0;
        for (n, wt) in [(n0, 1.0 - ft), (n0 + 1, ft)] {
            if wt == 0.0 {
                continue;
            }
            let sr = self.survival_ratio(n, i, &af);
            let lo = node(n, m0, &af, sr);
            let hi = if fs == 0.0 { 0.0 } else { node(n, m0 + 1, &af, sr) };
            out += wt * ((1.0 - fs) * lo + fs * hi);
        }
        out
    }

    /// `φ(t, s, i, y)` for `0 ≤ y ≤ t`; bilinear in `(t, s)` between nodes.
    pub fn price_at(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        self.check_query(t, s, i, y)?;
        self.check_age_domain(t, y)?;
        Ok(self.price_state(t, s, i, y))
    }

    /// `ψ(t, s, i, y) = ∂φ/∂s` through the kernel-derivative quadrature.
    pub fn hedge_ratio_at(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        self.check_query(t, s, i, y)?;
        self.check_age_domain(t, y)?;
        if !(s > 0.0) {
            return Err(Error::domain("hedge ratio requires s > 0"));
        }
        Ok(self.hedge_state(t, s, i, y))
    }

    /// Price, hedge ratio and money-market position at `(t, s, i, y)`.
    pub fn hedge_at(&self, t: f64, s: f64, i: usize, y: f64) -> Result<HedgeQuote> {
        let xi = self.hedge_ratio_at(t, s, i, y)?;
        let price = self.price_state(t, s, i, y);
        Ok(HedgeQuote::discounted(price, xi, s, 1.0))
    }

    /// Unchecked evaluation used along simulated paths, where the elapsed
    /// time may exceed `t` when the path starts mid-sojourn.
    pub(crate) fn price_state(&self, t: f64, s: f64, i: usize, y: f64) -> f64 {
        if t >= self.grid.maturity {
            return (s - self.spec.strike).max(0.0);
        }
        if s <= 0.0 {
            return 0.0;
        }
        self.interpolate(t, s, i, y, |n, m, af, sr| self.node_price(n, m, i, af, sr))
    }

    pub(crate) fn hedge_state(&self, t: f64, s: f64, i: usize, y: f64) -> f64 {
        if t >= self.grid.maturity {
            return if s > self.spec.strike { 1.0 } else { 0.0 };
        }
        self.interpolate(t, s, i, y, |n, m, af, sr| self.node_hedge(n, m, i, af, sr))
    }

    /// `(Σ_j p_ij φ(t, s, j, 0), φ(t, s, i, y))` sharing one grid lookup.
    pub(crate) fn jump_gap_state(&self, t: f64, s: f64, i: usize, y: f64) -> (f64, f64) {
        if t >= self.grid.maturity {
            let payoff = (s - self.spec.strike).max(0.0);
            return (payoff, payoff);
        }
        if s <= 0.0 {
            return (0.0, 0.0);
        }
        let (n0, ft, m0, fs) = self.locate(t, s);
        let af = self.age_factors(i, y);
        let (mut mixed, mut price) = (0.0, 0.0);
        for (n, wt) in [(n0, 1.0 - ft), (n0 + 1, ft)] {
            if wt == 0.0 {
                continue;
            }
            let sr = self.survival_ratio(n, i, &af);
            let (lo, plo) = (self.pphi[self.idx(n, m0, i)], self.node_price(n, m0, i, &af, sr));
            let (hi, phi) = if fs == 0.0 {
                (0.0, 0.0)
            } else {
                (self.pphi[self.idx(n, m0 + 1, i)], self.node_price(n, m0 + 1, i, &af, sr))
            };
            mixed += wt * ((1.0 - fs) * lo + fs * hi);
            price += wt * ((1.0 - fs) * plo + fs * phi);
        }
        (mixed, price)
    }

    /// Checked variant of [`price_state`](Self::price_state) without the
    /// `y ≤ t` restriction.
    pub fn price_with_history(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        self.check_query(t, s, i, y)?;
        Ok(self.price_state(t, s, i, y))
    }

    pub fn hedge_with_history(&self, t: f64, s: f64, i: usize, y: f64) -> Result<f64> {
        self.check_query(t, s, i, y)?;
        Ok(self.hedge_state(t, s, i, y))
    }

    pub fn metadata(&self) -> SurfaceMetadata {
        SurfaceMetadata {
            format: SURFACE_CSV_HEADER.join(","),
            fingerprint: self.fingerprint.clone(),
            grid: self.grid,
            spec: self.spec.clone(),
            lost_mass_at_strike: self.lost_mass_at_strike,
        }
    }

    /// One row per node, regimes labelled from 1.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SURFACE_CSV_HEADER)?;
        let g = &self.grid;
        for n in 0..=g.n_steps {
            let t = g.time(n).to_string();
            for m in 0..=g.m_max {
                let s = g.stock(m).to_string();
                for i in 0..self.k {
                    w.write_record([
                        n.to_string(),
                        t.clone(),
                        m.to_string(),
                        s.clone(),
                        (i + 1).to_string(),
                        self.node(n, m, i).to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metadata<W: std::io::Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.metadata())?;
        Ok(())
    }

    /// Write `<path>` (CSV) and its `<path>.json` metadata sidecar.
    pub fn save(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        let meta = sidecar_path(csv_path);
        self.write_metadata(std::io::BufWriter::new(std::fs::File::create(meta)?))?;
        Ok(())
    }

    /// Read a surface written by [`save`](Self::save) and rebuild its
    /// evaluation coefficients with one kernel pass.
    pub fn load(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let meta: SurfaceMetadata = serde_json::from_reader(std::io::BufReader::new(
            std::fs::File::open(sidecar_path(csv_path))?,
        ))?;
        if spec_fingerprint(&meta.spec) != meta.fingerprint {
            return Err(Error::InvalidConfig("surface metadata fingerprint mismatch".into()));
        }
        let g = meta.grid;
        let k = meta.spec.k();
        let mut phi = vec![f64::NAN; (g.n_steps + 1) * (g.m_max + 1) * k];
        let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(std::fs::File::open(csv_path)?));
        if rdr.headers()?.iter().ne(SURFACE_CSV_HEADER) {
            return Err(Error::InvalidConfig("unexpected surface CSV header".into()));
        }
        for rec in rdr.records() {
            let rec = rec?;
            let parse_u = |j: usize| -> Result<usize> {
                rec[j].parse().map_err(|_| Error::InvalidConfig(format!("bad integer `{}`", &rec[j])))
            };
            let (n, m, regime) = (parse_u(0)?, parse_u(2)?, parse_u(4)?);
            if n > g.n_steps || m > g.m_max || regime == 0 || regime > k {
                return Err(Error::InvalidConfig(format!("node ({n}, {m}, {regime}) outside grid")));
            }
            let v: f64 = rec[5]
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value `{}`", &rec[5])))?;
            phi[(n * (g.m_max + 1) + m) * k + regime - 1] = v;
        }
        if phi.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidConfig("surface CSV is missing nodes".into()));
        }
        from_values(&meta.spec, &g, phi)
    }
}

pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    let mut os = csv_path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// Surface from given node values (evaluation coefficients recomputed).
pub fn from_values(spec: &MarketSpec, grid: &SolverGrid, phi: Vec<f64>) -> Result<PriceSurface> {
    spec.ensure_valid()?;
    let march = March::new(spec, grid)?;
    let out = march.run(Mode::Given(&phi));
    Ok(PriceSurface::from_march(&march, out, phi))
}
