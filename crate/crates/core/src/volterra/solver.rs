//! Backward step-by-step quadrature march shared by the solver, the
//! fixed-point operator and the perturbation study.

use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::grid::{SolverGrid, UpperTail};
use crate::error::{Error, Result};
use crate::kernels::{bs_call_unchecked, BandedKernel};
use crate::market::{HoldingTimeDist, MarketSpec};

/// Per-regime constants of the march.
#[derive(Debug, Clone)]
pub(crate) struct RegimeData {
    pub r: f64,
    pub sigma: f64,
    pub holding: HoldingTimeDist,
    pub shape: usize,
    /// Index into the kernel bank; regimes with equal `(r, σ)` share kernels.
    pub class: usize,
    /// `e^{-r lΔt} f(lΔt)` for `l = 0..=N`.
    pub disc_density: Vec<f64>,
    /// `e^{-r lΔt} (lΔt)^q e^{-β lΔt}` laid out as `[l][q]`.
    pub disc_basis: Vec<f64>,
}

impl RegimeData {
    pub(crate) fn build(spec: &MarketSpec, grid: &SolverGrid, q_max: usize) -> Vec<RegimeData> {
        let mut classes: Vec<(f64, f64)> = Vec::new();
        spec.regimes
            .iter()
            .zip(&spec.holding)
            .map(|(p, h)| {
                let class = match classes.iter().position(|&(r, s)| r == p.r && s == p.sigma) {
                    Some(c) => c,
                    None => {
                        classes.push((p.r, p.sigma));
                        classes.len() - 1
                    }
                };
                let shape = h.shape() as usize;
                let beta = h.rate();
                let n = grid.n_steps;
                let mut disc_density = Vec::with_capacity(n + 1);
                let mut disc_basis = vec![0.0; (n + 1) * q_max];
                for l in 0..=n {
                    let v = l as f64 * grid.dt;
                    let disc = (-p.r * v).exp();
                    disc_density.push(disc * h.pdf(v));
                    let e = disc * (-beta * v).exp();
                    let mut pow = 1.0;
                    for q in 0..shape {
                        disc_basis[l * q_max + q] = e * pow;
                        pow *= v;
                    }
                }
                RegimeData {
                    r: p.r,
                    sigma: p.sigma,
                    holding: *h,
                    shape,
                    class,
                    disc_density,
                    disc_basis,
                }
            })
            .collect()
    }

    pub(crate) fn class_params(regimes: &[RegimeData]) -> Vec<(f64, f64)> {
        let n = regimes.iter().map(|r| r.class + 1).max().unwrap_or(0);
        let mut out = vec![(0.0, 0.0); n];
        for r in regimes {
            out[r.class] = (r.r, r.sigma);
        }
        out
    }
}

/// All lognormal kernels of one grid, indexed by `(class, lag)`.
pub(crate) struct KernelBank {
    n_steps: usize,
    kernels: Vec<BandedKernel>,
}

impl KernelBank {
    pub(crate) fn build(grid: &SolverGrid, classes: &[(f64, f64)]) -> Self {
        let n = grid.n_steps;
        let stock = grid.stock_grid();
        let with_tail = grid.upper_tail == UpperTail::LinearExtrapolation;
        let kernels: Vec<BandedKernel> = (0..classes.len() * n)
            .into_par_iter()
            .map(|idx| {
                let (r, sigma) = classes[idx / n];
                let l = idx % n + 1;
                BandedKernel::build(r, sigma, l as f64 * grid.dt, &stock, grid.kernel_rule, with_tail)
            })
            .collect();
        Self { n_steps: n, kernels }
    }

    #[inline]
    pub(crate) fn get(&self, class: usize, l: usize) -> &BandedKernel {
        &self.kernels[class * self.n_steps + l - 1]
    }

    pub(crate) fn entries(&self) -> usize {
        self.kernels.iter().map(|k| k.len()).sum()
    }

    /// Largest mass leaving the grid from node `m` over all lags and classes.
    pub(crate) fn max_lost_mass(&self, m: usize) -> f64 {
        self.kernels.iter().map(|k| (1.0 - k.row_mass(m)).max(0.0)).fold(0.0, f64::max)
    }
}

pub(crate) enum Mode<'a> {
    /// Solve the scheme, adding `inject(n)` to every interior node of step
    /// `n` after it is computed.
    Solve { inject: &'a (dyn Fn(usize) -> f64 + Sync) },
    /// Apply the discrete operator to a given surface.
    Given(&'a [f64]),
}

/// Output of a march. Arrays are laid out `[n][m][i]` (and `[..][q]` for the
/// age-expansion coefficients).
pub(crate) struct MarchOutput {
    /// Solved surface, or the operator image in [`Mode::Given`].
    pub values: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_delta: Vec<f64>,
    /// `Σ_j p_ij φ^n_m(j)` of the history surface.
    pub pphi: Vec<f64>,
    /// `Σ_l Δt ω_n(l) e^{-r lΔt} (lΔt)^q e^{-β lΔt} J_l` for price and hedge.
    pub kphi: Vec<f64>,
    pub kpsi: Vec<f64>,
    pub q_max: usize,
}

pub(crate) struct March<'a> {
    pub spec: &'a MarketSpec,
    pub grid: &'a SolverGrid,
    pub regimes: Vec<RegimeData>,
    pub bank: KernelBank,
    /// `(I - Δt ω(0) diag(f(0)) P)^{-1}`, row-major.
    implicit_inv: Vec<f64>,
    pub q_max: usize,
}

impl<'a> March<'a> {
    pub(crate) fn new(spec: &'a MarketSpec, grid: &'a SolverGrid) -> Result<Self> {
        let k = spec.k();
        let q_max = spec.holding.iter().map(|h| h.shape() as usize).max().unwrap_or(1);
        let regimes = RegimeData::build(spec, grid, q_max);
        let coupling = DMatrix::from_fn(k, k, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            d - grid.dt * 0.5 * regimes[i].disc_density[0] * spec.transitions.get(i, j)
        });
        let inv = coupling
            .try_inverse()
            .ok_or_else(|| Error::NonConvergence("zero-lag coupling matrix is singular".into()))?;
        let implicit_inv = (0..k * k).map(|idx| inv[(idx / k, idx % k)]).collect();
        let classes = RegimeData::class_params(&regimes);
        let bank = KernelBank::build(grid, &classes);
        info!(
            "kernel bank: {} classes x {} lags, {} entries",
            classes.len(),
            grid.n_steps,
            bank.entries()
        );
        Ok(Self { spec, grid, regimes, bank, implicit_inv, q_max })
    }

    pub(crate) fn lost_mass_near(&self, s: f64) -> f64 {
        let m = ((s / self.grid.ds).round() as usize).clamp(1, self.grid.m_max);
        self.bank.max_lost_mass(m)
    }

    pub(crate) fn run(&self, mode: Mode<'_>) -> MarchOutput {
        let spec = self.spec;
        let grid = self.grid;
        let k = spec.k();
        let q_max = self.q_max;
        let n_steps = grid.n_steps;
        let mp1 = grid.m_max + 1;
        let step_len = mp1 * k;
        let total = (n_steps + 1) * step_len;
        let strike = spec.strike;
        let p = &spec.transitions;

        let mut values = vec![0.0; total];
        let mut eta = vec![0.0; total];
        let mut eta_delta = vec![0.0; total];
        let mut pphi = vec![0.0; total];
        let mut kphi = vec![0.0; total * q_max];
        let mut kpsi = vec![0.0; total * q_max];
        // history surface, per step: w[n][i][m] = Σ_j p_ij φ^n_m(j)
        let mut history = vec![0.0; total];
        let mut w = vec![0.0; total];

        for (n, (eta_n, delta_n)) in eta.chunks_mut(step_len).zip(eta_delta.chunks_mut(step_len)).enumerate() {
            let tau = n as f64 * grid.dt;
            for m in 0..mp1 {
                let s = grid.stock(m);
                for (i, reg) in self.regimes.iter().enumerate() {
                    let q = bs_call_unchecked(tau, s, reg.r, reg.sigma, strike);
                    eta_n[m * k + i] = q.price;
                    delta_n[m * k + i] = q.delta;
                }
            }
        }

        for n in 0..=n_steps {
            let base = n * step_len;
            if n == 0 {
                for m in 0..mp1 {
                    let payoff = (grid.stock(m) - strike).max(0.0);
                    for i in 0..k {
                        values[base + m * k + i] = payoff;
                    }
                }
            } else {
                let eta_n = &eta[base..base + step_len];
                let out = &mut values[base..base + step_len];
                let kp = &mut kphi[base * q_max..(base + step_len) * q_max];
                let ks = &mut kpsi[base * q_max..(base + step_len) * q_max];
                let w_hist = &w[..base];
                out.par_chunks_mut(k)
                    .zip(kp.par_chunks_mut(k * q_max))
                    .zip(ks.par_chunks_mut(k * q_max))
                    .enumerate()
                    .skip(1)
                    .for_each(|(m, ((out_m, kp_m), ks_m))| {
                        for (i, reg) in self.regimes.iter().enumerate() {
                            let mut acc = 0.0;
                            let kp_i = &mut kp_m[i * q_max..(i + 1) * q_max];
                            let ks_i = &mut ks_m[i * q_max..(i + 1) * q_max];
                            for l in 1..=n {
                                let src = (n - l) * step_len + i * mp1;
                                let (jm, jd) = self
                                    .bank
                                    .get(reg.class, l)
                                    .apply(m, &w_hist[src..src + mp1], grid.ds);
                                let c = grid.dt * grid.weight(n, l);
                                acc += c * reg.disc_density[l] * jm;
                                let basis = &reg.disc_basis[l * q_max..l * q_max + reg.shape];
                                for (q, b) in basis.iter().enumerate() {
                                    kp_i[q] += c * b * jm;
                                    ks_i[q] += c * b * jd;
                                }
                            }
                            let surv = reg.holding.survival(n as f64 * grid.dt);
                            out_m[i] = surv * eta_n[m * k + i] + acc;
                        }
                    });
            }

            // Resolve the zero-lag coupling and fix the history of step n.
            let row = &mut values[base..base + step_len];
            match &mode {
                Mode::Solve { inject } => {
                    if n > 0 {
                        let mut tmp = vec![0.0; k];
                        for m in 1..mp1 {
                            let rhs = &mut row[m * k..(m + 1) * k];
                            for (i, t) in tmp.iter_mut().enumerate() {
                                *t = (0..k).map(|j| self.implicit_inv[i * k + j] * rhs[j]).sum();
                            }
                            rhs.copy_from_slice(&tmp);
                        }
                    }
                    let delta = inject(n);
                    if delta != 0.0 {
                        for x in row[k..].iter_mut() {
                            *x += delta;
                        }
                    }
                    history[base..base + step_len].copy_from_slice(row);
                }
                Mode::Given(given) => {
                    let g = &given[base..base + step_len];
                    if n > 0 {
                        for m in 1..mp1 {
                            for (i, reg) in self.regimes.iter().enumerate() {
                                let coupled: f64 = (0..k).map(|j| p.get(i, j) * g[m * k + j]).sum();
                                row[m * k + i] += grid.dt * 0.5 * reg.disc_density[0] * coupled;
                            }
                        }
                    }
                    history[base..base + step_len].copy_from_slice(g);
                }
            }

            let hist = &history[base..base + step_len];
            for i in 0..k {
                for m in 0..mp1 {
                    let mixed: f64 = (0..k).map(|j| p.get(i, j) * hist[m * k + j]).sum();
                    w[base + i * mp1 + m] = mixed;
                    pphi[base + m * k + i] = mixed;
                }
            }
        }

        MarchOutput { values, eta, eta_delta, pphi, kphi, kpsi, q_max }
    }
}
