//! Semi-Markov modulated market: regime parameters, embedded jump chain and
//! conditional holding-time laws.
//!
//! Regimes are indexed from 0 in the library API. The CLI and the CSV
//! artifacts use 1-based regime labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Holding-time CDF values at or above `1 - SATURATION` make the hazard
/// numerically undefined.
pub const SATURATION: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
}

impl RegimeParams {
    pub fn new(mu: f64, sigma: f64, r: f64) -> Self {
        Self { mu, sigma, r }
    }
}

/// Row-stochastic jump matrix of the embedded chain, stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows }
    }

    pub fn k(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Every state reaches every other state through positive entries.
    pub fn is_irreducible(&self) -> bool {
        let k = self.k();
        if k == 0 || self.rows.iter().any(|r| r.len() != k) {
            return false;
        }
        (0..k).all(|start| {
            let mut seen = vec![false; k];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                for (j, &p) in self.rows[i].iter().enumerate() {
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        })
    }
}

/// Conditional holding-time law of one regime.
///
/// `Gamma` is restricted to integer shapes (the Erlang family) so that both
/// the density and the CDF are closed-form; `Exponential(rate)` is
/// `Gamma(1, rate)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HoldingJson", into = "HoldingJson")]
pub enum HoldingTimeDist {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
}

#[derive(Serialize, Deserialize)]
struct HoldingJson {
    family: String,
    params: Vec<f64>,
}

impl TryFrom<HoldingJson> for HoldingTimeDist {
    type Error = String;

    fn try_from(raw: HoldingJson) -> std::result::Result<Self, String> {
        match (raw.family.to_ascii_lowercase().as_str(), raw.params.as_slice()) {
            ("exponential", [rate]) => Ok(HoldingTimeDist::Exponential { rate: *rate }),
            ("gamma", [shape, rate]) => Ok(HoldingTimeDist::Gamma { shape: *shape, rate: *rate }),
            ("exponential", p) => Err(format!("exponential takes 1 parameter, got {}", p.len())),
            ("gamma", p) => Err(format!("gamma takes 2 parameters (shape, rate), got {}", p.len())),
            (other, _) => Err(format!("unknown holding-time family `{other}`")),
        }
    }
}

impl From<HoldingTimeDist> for HoldingJson {
    fn from(d: HoldingTimeDist) -> Self {
        match d {
            HoldingTimeDist::Exponential { rate } => HoldingJson {
                family: "exponential".into(),
                params: vec![rate],
            },
            HoldingTimeDist::Gamma { shape, rate } => HoldingJson {
                family: "gamma".into(),
                params: vec![shape, rate],
            },
        }
    }
}

impl HoldingTimeDist {
    pub fn rate(&self) -> f64 {
        match *self {
            HoldingTimeDist::Exponential { rate } | HoldingTimeDist::Gamma { rate, .. } => rate,
        }
    }

    /// Integer shape of the Erlang law (1 for exponential).
    pub fn shape(&self) -> u32 {
        match *self {
            HoldingTimeDist::Exponential { .. } => 1,
            HoldingTimeDist::Gamma { shape, .. } => shape.round() as u32,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let rate = self.rate();
        if !(rate.is_finite() && rate > 0.0) {
            return Err(format!("rate must be positive and finite, got {rate}"));
        }
        if let HoldingTimeDist::Gamma { shape, .. } = *self {
            if !(shape.is_finite() && shape >= 1.0) {
                return Err(format!("gamma shape must be >= 1 for a bounded density, got {shape}"));
            }
            if shape.fract() != 0.0 {
                return Err(format!("gamma shape must be an integer for a closed-form CDF, got {shape}"));
            }
            if shape > 16.0 {
                return Err(format!("gamma shape {shape} is too large"));
            }
        }
        Ok(())
    }

    /// `Σ_{q<n} (βy)^q / q!`, the polynomial factor of the Erlang survival.
    pub(crate) fn survival_poly(&self, y: f64) -> f64 {
        let x = self.rate() * y;
        let mut term = 1.0;
        let mut sum = 1.0;
        for q in 1..self.shape() {
            term *= x / q as f64;
            sum += term;
        }
        sum
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            return 0.0;
        }
        let n = self.shape();
        let beta = self.rate();
        let mut coef = beta;
        for q in 1..n {
            coef *= beta * y / q as f64;
        }
        coef * (-beta * y).exp()
    }

    /// `1 - F(y)`.
    pub fn survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        (-self.rate() * y).exp() * self.survival_poly(y)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        1.0 - self.survival(y)
    }

    /// Total exit intensity `f(y)/(1 - F(y))`, evaluated without forming the
    /// ratio of two small numbers.
    pub fn exit_rate(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let n = self.shape();
        let beta = self.rate();
        let mut top = beta;
        for q in 1..n {
            top *= beta * y / q as f64;
        }
        top / self.survival_poly(y)
    }

    pub fn mean(&self) -> f64 {
        self.shape() as f64 / self.rate()
    }

    /// Smallest `τ ≥ from` with `1 - F(τ) = target`, for `0 < target ≤ 1 - F(from)`.
    ///
    /// Safeguarded Newton on `ln(1 - F)` inside a doubling bracket; absolute
    /// tolerance 1e-12 in `τ`.
    pub(crate) fn solve_survival(&self, from: f64, target: f64) -> f64 {
        let beta = self.rate();
        if self.shape() == 1 {
            return -target.ln() / beta;
        }
        let ln_target = target.ln();
        let g = |t: f64| -beta * t + self.survival_poly(t).ln() - ln_target;
        let mut lo = from.max(0.0);
        if g(lo) <= 0.0 {
            return lo;
        }
        let mut hi = lo.max(self.mean()) + 1.0 / beta;
        while g(hi) > 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gt = g(t);
            if gt > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if hi - lo < 1e-12 {
                break;
            }
            // g'(t) = -exit_rate(t)
            let step = gt / self.exit_rate(t).max(f64::MIN_POSITIVE);
            let next = t + step;
            if step.abs() < 1e-13 {
                t = next.clamp(lo, hi);
                break;
            }
            t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        t
    }

    /// `F^{-1}(p)`.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..1.0).contains(&p), "quantile level must lie in [0, 1)");
        self.solve_survival(0.0, 1.0 - p)
    }
}

/// Complete model input: one `RegimeParams` and one holding law per regime,
/// the embedded transition matrix and the European call contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub regimes: Vec<RegimeParams>,
    #[serde(rename = "transition")]
    pub transitions: TransitionMatrix,
    pub holding: Vec<HoldingTimeDist>,
    pub strike: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewRegimes { k: usize },
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    NonFiniteParameter { regime: usize },
    NonPositiveSigma { regime: usize, sigma: f64 },
    NegativeRate { regime: usize, r: f64 },
    NonSquare { row: usize, len: usize },
    EntryOutOfRange { i: usize, j: usize, value: f64 },
    NonZeroDiagonal { i: usize, value: f64 },
    RowStochastic { row: usize, sum: f64 },
    Reducible,
    InvalidHolding { regime: usize, reason: String },
    NonPositiveStrike { strike: f64 },
    NonPositiveMaturity { maturity: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewRegimes { k } => write!(f, "need at least 2 regimes, got {k}"),
            DimensionMismatch { what, expected, got } => {
                write!(f, "{what}: expected {expected} entries, got {got}")
            }
            NonFiniteParameter { regime } => write!(f, "regime {regime}: non-finite parameter"),
            NonPositiveSigma { regime, sigma } => write!(f, "regime {regime}: sigma {sigma} must be > 0"),
            NegativeRate { regime, r } => write!(f, "regime {regime}: rate {r} must be >= 0"),
            NonSquare { row, len } => write!(f, "transition row {row} has length {len}"),
            EntryOutOfRange { i, j, value } => write!(f, "p[{i}][{j}] = {value} outside [0, 1]"),
            NonZeroDiagonal { i, value } => write!(f, "p[{i}][{i}] = {value} must be 0"),
            RowStochastic { row, sum } => write!(f, "transition row {row} sums to {sum}"),
            Reducible => write!(f, "transition matrix is reducible"),
            InvalidHolding { regime, reason } => write!(f, "holding law of regime {regime}: {reason}"),
            NonPositiveStrike { strike } => write!(f, "strike {strike} must be > 0"),
            NonPositiveMaturity { maturity } => write!(f, "maturity {maturity} must be > 0"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", msgs.join("; "))
    }
}

impl MarketSpec {
    /// Three-regime market with Gamma(2, 1) holding times, K = 1, T = 1.
    pub fn three_regime_example() -> Self {
        MarketSpec {
            regimes: vec![
                RegimeParams::new(0.2, 0.2, 0.2),
                RegimeParams::new(0.6, 0.4, 0.5),
                RegimeParams::new(0.8, 0.3, 0.7),
            ],
            transitions: TransitionMatrix::new(vec![
                vec![0.0, 2.0 / 3.0, 1.0 / 3.0],
                vec![0.5, 0.0, 0.5],
                vec![1.0 / 3.0, 2.0 / 3.0, 0.0],
            ]),
            holding: vec![HoldingTimeDist::Gamma { shape: 2.0, rate: 1.0 }; 3],
            strike: 1.0,
            maturity: 1.0,
        }
    }

    /// Same jump structure as [`three_regime_example`](Self::three_regime_example)
    /// with every regime set to `params`; prices collapse to Black-Scholes.
    pub fn identical_regimes(params: RegimeParams) -> Self {
        let mut spec = Self::three_regime_example();
        spec.regimes = vec![params; 3];
        spec
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("market spec serializes")
    }

    pub fn k(&self) -> usize {
        self.regimes.len()
    }

    pub fn regime(&self, i: usize) -> Result<&RegimeParams> {
        self.regimes.get(i).ok_or(Error::InvalidIndex { index: i, k: self.k() })
    }

    pub fn holding_of(&self, i: usize) -> Result<&HoldingTimeDist> {
        self.holding.get(i).ok_or(Error::InvalidIndex { index: i, k: self.k() })
    }

    /// Reject elapsed times at which the holding law of `regime` is saturated.
    pub(crate) fn check_elapsed(&self, regime: usize, y: f64) -> Result<&HoldingTimeDist> {
        let h = self.holding_of(regime)?;
        if !(y >= 0.0) {
            return Err(Error::domain(format!("elapsed time {y} must be >= 0")));
        }
        if h.survival(y) <= SATURATION {
            return Err(Error::SaturatedHoldingTime { regime, elapsed: y });
        }
        Ok(h)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let k = self.regimes.len();
        if k < 2 {
            v.push(Violation::TooFewRegimes { k });
        }
        for (i, p) in self.regimes.iter().enumerate() {
            if !(p.mu.is_finite() && p.sigma.is_finite() && p.r.is_finite()) {
                v.push(Violation::NonFiniteParameter { regime: i });
                continue;
            }
            if p.sigma <= 0.0 {
                v.push(Violation::NonPositiveSigma { regime: i, sigma: p.sigma });
            }
            if p.r < 0.0 {
                v.push(Violation::NegativeRate { regime: i, r: p.r });
            }
        }
        if self.transitions.k() != k {
            v.push(Violation::DimensionMismatch {
                what: "transition matrix rows",
                expected: k,
                got: self.transitions.k(),
            });
        }
        let mut square = true;
        for (i, row) in self.transitions.rows().iter().enumerate() {
            if row.len() != self.transitions.k() {
                v.push(Violation::NonSquare { row: i, len: row.len() });
                square = false;
                continue;
            }
            for (j, &x) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&x) {
                    v.push(Violation::EntryOutOfRange { i, j, value: x });
                }
                if i == j && x != 0.0 {
                    v.push(Violation::NonZeroDiagonal { i, value: x });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                v.push(Violation::RowStochastic { row: i, sum });
            }
        }
        if square && self.transitions.k() > 0 && !self.transitions.is_irreducible() {
            v.push(Violation::Reducible);
        }
        if self.holding.len() != k {
            v.push(Violation::DimensionMismatch {
                what: "holding-time laws",
                expected: k,
                got: self.holding.len(),
            });
        }
        for (i, h) in self.holding.iter().enumerate() {
            if let Err(reason) = h.check() {
                v.push(Violation::InvalidHolding { regime: i, reason });
            }
        }
        if !(self.strike.is_finite() && self.strike > 0.0) {
            v.push(Violation::NonPositiveStrike { strike: self.strike });
        }
        if !(self.maturity.is_finite() && self.maturity > 0.0) {
            v.push(Violation::NonPositiveMaturity { maturity: self.maturity });
        }
        ValidationReport { violations: v }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(report))
        }
    }
}

/// Jump intensity `λ_ij(y) = p_ij f(y|i) / (1 - F(y|i))` for `i ≠ j`.
pub fn hazard(spec: &MarketSpec, i: usize, j: usize, y: f64) -> Result<f64> {
    let k = spec.k();
    if i >= k {
        return Err(Error::InvalidIndex { index: i, k });
    }
    if j >= k {
        return Err(Error::InvalidIndex { index: j, k });
    }
    if i == j {
        return Err(Error::domain("hazard is defined for i != j"));
    }
    let h = spec.check_elapsed(i, y)?;
    Ok(spec.transitions.get(i, j) * h.exit_rate(y))
}

pub fn validate(spec: &MarketSpec) -> ValidationReport {
    spec.validate()
}
