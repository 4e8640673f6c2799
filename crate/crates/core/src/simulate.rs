//! Exact sampling of the regime, age and stock processes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{HoldingTimeDist, MarketSpec, RegimeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Stock drift `μ(i)`.
    #[default]
    Physical,
    /// Stock drift `r(i)`.
    RiskNeutral,
}

impl Measure {
    #[inline]
    pub fn drift(self, p: &RegimeParams) -> f64 {
        match self {
            Measure::Physical => p.mu,
            Measure::RiskNeutral => p.r,
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "physical" | "p" => Ok(Measure::Physical),
            "riskneutral" | "q" => Ok(Measure::RiskNeutral),
            _ => Err(Error::InvalidConfig(format!("unknown measure `{s}`"))),
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::Physical => "physical",
            Measure::RiskNeutral => "riskneutral",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub measure: Measure,
    pub n_paths: usize,
    pub seed: u64,
    /// Extra evaluation times in `[0, T]`, strictly increasing.
    pub observation_times: Vec<f64>,
    /// Trapezium sub-steps per sojourn for path integrals; 0 disables the
    /// sub-grid.
    pub compensator_substeps: usize,
}

impl SimConfig {
    pub fn new(measure: Measure, n_paths: usize, seed: u64) -> Self {
        Self { measure, n_paths, seed, observation_times: Vec::new(), compensator_substeps: 50 }
    }

    pub fn with_observations(mut self, times: Vec<f64>) -> Self {
        self.observation_times = times;
        self
    }

    pub fn with_substeps(mut self, n: usize) -> Self {
        self.compensator_substeps = n;
        self
    }

    pub fn validate(&self, horizon: f64) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be >= 1".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for &t in &self.observation_times {
            if !(0.0..=horizon).contains(&t) || t <= prev {
                return Err(Error::InvalidConfig(format!(
                    "observation times must be strictly increasing in [0, {horizon}]"
                )));
            }
            prev = t;
        }
        Ok(())
    }
}

/// `t_i = (i - 1) T / N`, `i = 1..=N`.
pub fn rebalance_times(maturity: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * maturity / n as f64).collect()
}

/// Independent generator of path `path_index`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Remaining holding time of a sojourn that has already lasted `elapsed`,
/// by inverse transform of the conditional law on `(F(elapsed), 1)`.
pub fn sample_residual_holding<R: Rng + ?Sized>(h: &HoldingTimeDist, elapsed: f64, rng: &mut R) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    let target = h.survival(elapsed) * u;
    (h.solve_survival(elapsed, target) - elapsed).max(0.0)
}

fn sample_next<R: Rng + ?Sized>(row: &[f64], current: usize, rng: &mut R) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    let mut last = current;
    for (j, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = j;
        acc += p;
        if u < acc {
            return j;
        }
    }
    last
}

/// Regime sequence and jump epochs on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSkeleton {
    pub y0: f64,
    pub horizon: f64,
    /// `T_1 < T_2 < … ≤ horizon`.
    pub jump_times: Vec<f64>,
    /// `regimes[n]` holds on `[T_n, T_{n+1})` with `T_0 = 0`.
    pub regimes: Vec<usize>,
}

impl JumpSkeleton {
    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }

    /// `T_n`.
    #[inline]
    pub fn sojourn_start(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.jump_times[n - 1]
        }
    }

    /// Age at time `t` inside sojourn `n`.
    #[inline]
    pub fn elapsed(&self, n: usize, t: f64) -> f64 {
        let y = t - self.sojourn_start(n);
        if n == 0 {
            y + self.y0
        } else {
            y
        }
    }

    /// Sojourn index containing `t` (right-continuous).
    pub fn sojourn_at(&self, t: f64) -> usize {
        self.jump_times.partition_point(|&tj| tj <= t)
    }

    /// `(X_t, Y_t)`.
    pub fn state_at(&self, t: f64) -> (usize, f64) {
        let n = self.sojourn_at(t);
        (self.regimes[n], self.elapsed(n, t))
    }
}

/// Sample the semi-Markov skeleton started in `x0` with age `y0`.
pub fn sample_semi_markov<R: Rng + ?Sized>(
    spec: &MarketSpec,
    x0: usize,
    y0: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpSkeleton> {
    let h0 = spec.check_elapsed(x0, y0)?;
    let mut jump_times = Vec::new();
    let mut regimes = vec![x0];
    let mut t = sample_residual_holding(h0, y0, rng);
    let mut current = x0;
    while t <= horizon {
        jump_times.push(t);
        current = sample_next(spec.transitions.row(current), current, rng);
        regimes.push(current);
        t += sample_residual_holding(&spec.holding[current], 0.0, rng);
    }
    Ok(JumpSkeleton { y0, horizon, jump_times, regimes })
}

pub mod point {
    pub const START: u8 = 1;
    pub const JUMP: u8 = 2;
    pub const OBSERVATION: u8 = 4;
    pub const SUBSTEP: u8 = 8;
    pub const END: u8 = 16;
}

/// One evaluation time of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub stock: f64,
    /// `exp(-∫_0^t r(X_u) du)`.
    pub discount: f64,
    /// Sojourn in force from `t` on.
    pub sojourn: usize,
    /// Bit set of [`point`] kinds.
    pub kind: u8,
}

impl PathPoint {
    #[inline]
    pub fn is(&self, kind: u8) -> bool {
        self.kind & kind != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPath {
    pub path_index: u64,
    pub skeleton: JumpSkeleton,
    pub points: Vec<PathPoint>,
}

impl MarketPath {
    /// `(X_t, Y_t)` at a point.
    #[inline]
    pub fn state(&self, p: &PathPoint) -> (usize, f64) {
        (self.skeleton.regimes[p.sojourn], self.skeleton.elapsed(p.sojourn, p.t))
    }

    /// `(X_{t-}, Y_{t-})` at a point.
    #[inline]
    pub fn left_state(&self, p: &PathPoint) -> (usize, f64) {
        let n = if p.is(point::JUMP) { p.sojourn - 1 } else { p.sojourn };
        (self.skeleton.regimes[n], self.skeleton.elapsed(n, p.t))
    }

    pub fn terminal(&self) -> &PathPoint {
        self.points.last().expect("paths hold at least two points")
    }

    /// Point at observation time `t`, if `t` was requested.
    pub fn at_time(&self, t: f64) -> Option<&PathPoint> {
        self.points.iter().find(|p| p.t == t && p.is(point::OBSERVATION | point::START | point::END))
    }
}

/// Sample `(S, X, Y, B^{-1})` on the union of `{0, T}`, the jump epochs, the
/// observation times and, if enabled, the sojourn sub-grid.
pub fn sample_market_path(
    spec: &MarketSpec,
    s0: f64,
    x0: usize,
    y0: f64,
    config: &SimConfig,
    path_index: u64,
) -> Result<MarketPath> {
    if !(s0 >= 0.0 && s0.is_finite()) {
        return Err(Error::domain(format!("initial stock price {s0} must be finite and >= 0")));
    }
    let horizon = spec.maturity;
    let mut rng = path_rng(config.seed, path_index);
    let skeleton = sample_semi_markov(spec, x0, y0, horizon, &mut rng)?;

    let mut marks: Vec<(f64, u8)> = Vec::with_capacity(
        2 + skeleton.n_jumps() + config.observation_times.len()
            + (skeleton.n_jumps() + 1) * config.compensator_substeps,
    );
    marks.push((0.0, point::START));
    marks.push((horizon, point::END));
    marks.extend(skeleton.jump_times.iter().map(|&t| (t, point::JUMP)));
    marks.extend(config.observation_times.iter().map(|&t| (t, point::OBSERVATION)));
    let sub = config.compensator_substeps;
    if sub > 1 {
        for n in 0..=skeleton.n_jumps() {
            let a = skeleton.sojourn_start(n);
            let b = skeleton.jump_times.get(n).copied().unwrap_or(horizon);
            let h = (b - a) / sub as f64;
            marks.extend((1..sub).map(|q| (a + q as f64 * h, point::SUBSTEP)));
        }
    }
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, u8)> = Vec::with_capacity(marks.len());
    for (t, kind) in marks {
        match merged.last_mut() {
            Some(last) if last.0 == t => last.1 |= kind,
            _ => merged.push((t, kind)),
        }
    }

    let mut points = Vec::with_capacity(merged.len());
    let mut log_s = 0.0;
    let mut log_b = 0.0;
    // log-growth accumulated up to the start of the current sojourn, so
    // that the deterministic part is exact within each sojourn
    let mut sojourn = 0usize;
    let mut base_s = 0.0;
    let mut base_b = 0.0;
    let mut noise = 0.0;
    let mut prev_t = 0.0;
    for (t, kind) in merged {
        let next_sojourn = skeleton.sojourn_at(t);
        let n = sojourn;
        let p = &spec.regimes[skeleton.regimes[n]];
        let dt = t - prev_t;
        if dt > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            noise += p.sigma * dt.sqrt() * z;
        }
        let since = t - skeleton.sojourn_start(n);
        if t > 0.0 {
            log_s = base_s + (config.measure.drift(p) - 0.5 * p.sigma * p.sigma) * since + noise;
            log_b = base_b - p.r * since;
        }
        if next_sojourn != sojourn {
            base_s = log_s;
            base_b = log_b;
            noise = 0.0;
            sojourn = next_sojourn;
        }
        points.push(PathPoint { t, stock: s0 * log_s.exp(), discount: log_b.exp(), sojourn, kind });
        prev_t = t;
    }
    Ok(MarketPath { path_index, skeleton, points })
}

pub const PATH_CSV_HEADER: [&str; 6] = ["path_id", "t", "S", "X", "Y", "discount"];

/// Debug dump of sampled paths, regimes labelled from 1.
pub fn write_paths_csv<W: std::io::Write>(paths: &[MarketPath], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PATH_CSV_HEADER)?;
    for path in paths {
        for p in &path.points {
            let (x, y) = path.state(p);
            w.write_record([
                path.path_index.to_string(),
                p.t.to_string(),
                p.stock.to_string(),
                (x + 1).to_string(),
                y.to_string(),
                p.discount.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_parsing() {
        assert_eq!("riskneutral".parse::<Measure>().unwrap(), Measure::RiskNeutral);
        assert_eq!("risk-neutral".parse::<Measure>().unwrap(), Measure::RiskNeutral);
        assert_eq!("Physical".parse::<Measure>().unwrap(), Measure::Physical);
        assert!("other".parse::<Measure>().is_err());
    }

    #[test]
    fn rebalance_schedule_starts_at_zero() {
        let t = rebalance_times(1.0, 4);
        assert_eq!(t, vec![0.0, 0.25, 0.5, 0.75]);
    }

    #[test]
    fn skeleton_alternates_regimes() {
        let spec = MarketSpec::three_regime_example();
        let mut rng = path_rng(7, 0);
        let sk = sample_semi_markov(&spec, 0, 0.0, 50.0, &mut rng).unwrap();
        assert!(sk.n_jumps() > 5);
        assert!(sk.regimes.windows(2).all(|w| w[0] != w[1]));
        assert!(sk.jump_times.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sk.regimes.len(), sk.n_jumps() + 1);
    }

    #[test]
    fn age_is_recovered_from_skeleton() {
        let spec = MarketSpec::three_regime_example();
        let mut rng = path_rng(11, 3);
        let sk = sample_semi_markov(&spec, 1, 0.4, 20.0, &mut rng).unwrap();
        let (x, y) = sk.state_at(0.0);
        assert_eq!((x, y), (1, 0.4));
        if let Some(&t1) = sk.jump_times.first() {
            let (x1, y1) = sk.state_at(t1);
            assert_eq!(x1, sk.regimes[1]);
            assert_eq!(y1, 0.0);
        }
    }

    #[test]
    fn saturated_start_is_rejected() {
        let spec = MarketSpec::three_regime_example();
        let mut rng = path_rng(0, 0);
        assert!(matches!(
            sample_semi_markov(&spec, 0, 100.0, 1.0, &mut rng),
            Err(Error::SaturatedHoldingTime { .. })
        ));
    }

    #[test]
    fn path_points_are_ordered_and_positive() {
        let spec = MarketSpec::three_regime_example();
        let cfg = SimConfig::new(Measure::Physical, 1, 5).with_observations(vec![0.25, 0.5]);
        let path = sample_market_path(&spec, 1.0, 2, 0.0, &cfg, 9).unwrap();
        assert!(path.points.windows(2).all(|w| w[0].t < w[1].t));
        assert!(path.points.iter().all(|p| p.stock > 0.0));
        assert!(path.points.windows(2).all(|w| w[1].discount <= w[0].discount));
        assert_eq!(path.points[0].stock, 1.0);
        assert_eq!(path.terminal().t, 1.0);
        assert!(path.at_time(0.5).is_some());
    }

    #[test]
    fn same_index_same_path() {
        let spec = MarketSpec::three_regime_example();
        let cfg = SimConfig::new(Measure::RiskNeutral, 1, 123);
        let a = sample_market_path(&spec, 1.0, 0, 0.0, &cfg, 77).unwrap();
        let b = sample_market_path(&spec, 1.0, 0, 0.0, &cfg, 77).unwrap();
        let c = sample_market_path(&spec, 1.0, 0, 0.0, &cfg, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.points, c.points);
    }
}
