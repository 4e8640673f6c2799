//! `smhedge` command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::error::{Error, Result};
use crate::kernels::KernelRule;
use crate::market::MarketSpec;
use crate::mc::with_workers;
use crate::risk::{mc_price_oracle, risk_report, write_risk_csv, RiskReport};
use crate::simulate::{Measure, SimConfig};
use crate::volterra::{
    perturbation_experiment, solve_surface, stability_bound, stability_constant, Injection, SolverGrid, UpperTail,
    ZeroLagHedge,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STABILITY: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "smhedge", version, about = "Regime-switching call pricing, hedging and residual risk")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the price surface and evaluate query points.
    Price(PriceArgs),
    /// Sweep QRR, PRR, PM(QRR) and PM(PRR) over initial stock prices.
    Risk(RiskArgs),
    /// Print the stability bound and propagate a perturbation.
    Stability(StabilityArgs),
    /// Risk-neutral Monte Carlo price.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Cell,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TailArg {
    Truncate,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZeroLagArg {
    PriceRatio,
    StockDerivative,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Market specification (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Time step (default 1/200).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Stock step (default K/100).
    #[arg(long)]
    pub ds: Option<f64>,
    /// Upper end of the stock grid (default 4K).
    #[arg(long)]
    pub smax: Option<f64>,
    /// Accept a time step above the stability bound.
    #[arg(long)]
    pub force: bool,
    #[arg(long, value_enum, default_value = "cell")]
    pub kernel: KernelArg,
    /// Treatment of mass leaving the top of the stock grid.
    #[arg(long, value_enum, default_value = "linear")]
    pub upper_tail: TailArg,
    #[arg(long, value_enum, default_value = "price-ratio")]
    pub zero_lag: ZeroLagArg,
}

impl GridArgs {
    pub fn load_spec(&self) -> Result<MarketSpec> {
        let spec = MarketSpec::from_json_file(&self.spec)?;
        spec.ensure_valid()?;
        Ok(spec)
    }

    pub fn grid(&self, spec: &MarketSpec) -> Result<SolverGrid> {
        let g = SolverGrid::new(
            spec.maturity,
            self.dt.unwrap_or(1.0 / 200.0),
            self.ds.unwrap_or(spec.strike / 100.0),
            self.smax.unwrap_or(4.0 * spec.strike),
        )?;
        Ok(g
            .with_kernel_rule(match self.kernel {
                KernelArg::Cell => KernelRule::CellIntegrated,
                KernelArg::Pointwise => KernelRule::Pointwise,
            })
            .with_upper_tail(match self.upper_tail {
                TailArg::Truncate => UpperTail::Truncate,
                TailArg::Linear => UpperTail::LinearExtrapolation,
            })
            .with_zero_lag_hedge(match self.zero_lag {
                ZeroLagArg::PriceRatio => ZeroLagHedge::PriceRatio,
                ZeroLagArg::StockDerivative => ZeroLagHedge::StockDerivative,
            })
            .allow_unstable(self.force))
    }
}

#[derive(Debug, Args)]
pub struct PriceArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Write the surface CSV here (metadata goes to `<out>.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Query point `t,s,regime,y` (regime from 1); repeatable.
    #[arg(long = "query", value_parser = parse_query)]
    pub queries: Vec<Query>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub t: f64,
    pub s: f64,
    pub regime: usize,
    pub y: f64,
}

fn parse_query(s: &str) -> std::result::Result<Query, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected t,s,regime,y, got `{s}`"));
    }
    let f = |x: &str| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    let regime: usize = parts[2].parse().map_err(|e| format!("`{}`: {e}", parts[2]))?;
    if regime == 0 {
        return Err("regimes are numbered from 1".into());
    }
    Ok(Query { t: f(parts[0])?, s: f(parts[1])?, regime, y: f(parts[3])? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Sweep {
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let h = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count).map(|j| if j + 1 == self.count { self.hi } else { self.lo + j as f64 * h }).collect()
    }
}

fn parse_sweep(s: &str) -> std::result::Result<Sweep, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected lo:hi:count, got `{s}`"));
    }
    let lo: f64 = parts[0].parse().map_err(|e| format!("`{}`: {e}", parts[0]))?;
    let hi: f64 = parts[1].parse().map_err(|e| format!("`{}`: {e}", parts[1]))?;
    let count: usize = parts[2].parse().map_err(|e| format!("`{}`: {e}", parts[2]))?;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
        return Err(format!("sweep needs 0 < lo <= hi and count >= 1, got `{s}`"));
    }
    if count > 1 && hi == lo {
        return Err("sweep with several points needs lo < hi".into());
    }
    Ok(Sweep { lo, hi, count })
}

fn parse_regime(s: &str) -> std::result::Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("bad regime `{s}` (regimes are numbered from 1)")),
        Ok(i) => Ok(i),
    }
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Trading dates for the practitioner's measures.
    #[arg(long, default_value_t = 12)]
    pub rebalances: usize,
    /// Initial stock prices `lo:hi:count`.
    #[arg(long, value_parser = parse_sweep, default_value = "0.3:1.3:101")]
    pub sweep: Sweep,
    /// Comma-separated regimes (from 1); default all.
    #[arg(long, value_delimiter = ',', value_parser = parse_regime)]
    pub regimes: Option<Vec<usize>>,
    /// Initial age of the regime.
    #[arg(long, default_value_t = 0.0)]
    pub y0: f64,
    #[arg(long, default_value = "physical")]
    pub measure: Measure,
    /// Trapezium sub-steps per sojourn for the compensator integral.
    #[arg(long, default_value_t = 50)]
    pub substeps: usize,
    /// Measures to emit, comma-separated from qrr,prr,pm_qrr,pm_prr.
    #[arg(long, value_delimiter = ',', default_value = "qrr,prr,pm_qrr,pm_prr")]
    pub risks: Vec<String>,
    /// Risk CSV path (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Full report with configuration as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Size of the injected perturbation.
    #[arg(long, default_value_t = 1e-3)]
    pub delta: f64,
    /// Step index to perturb, or `all` for every step before the last.
    #[arg(long, default_value = "1")]
    pub inject: String,
    /// Profile CSV path `n,t,effect` (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub s0: f64,
    /// Regime from 1.
    #[arg(long, default_value_t = 1)]
    pub regime: usize,
    #[arg(long, default_value_t = 0.0)]
    pub y0: f64,
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn regime_index(spec: &MarketSpec, one_based: usize) -> Result<usize> {
    if one_based == 0 || one_based > spec.k() {
        return Err(Error::InvalidIndex { index: one_based, k: spec.k() });
    }
    Ok(one_based - 1)
}

pub fn cmd_price(args: &PriceArgs) -> Result<()> {
    let spec = args.grid.load_spec()?;
    let grid = args.grid.grid(&spec)?;
    for q in &args.queries {
        regime_index(&spec, q.regime)?;
    }
    let surface = solve_surface(&spec, &grid)?;
    if let Some(out) = &args.out {
        surface.save(out)?;
        info!("surface written to {}", out.display());
    }
    let mut w = output(None)?;
    writeln!(w, "t,s,regime,y,price,xi,epsilon")?;
    for q in &args.queries {
        let i = q.regime - 1;
        let price = surface.price_at(q.t, q.s, i, q.y)?;
        let (xi, eps) = if q.s > 0.0 {
            let h = surface.hedge_at(q.t, q.s, i, q.y)?;
            (h.xi, h.epsilon)
        } else {
            (0.0, price)
        };
        writeln!(w, "{},{},{},{},{},{},{}", q.t, q.s, q.regime, q.y, price, xi, eps)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(serde::Serialize)]
struct RiskJson<'a> {
    spec: &'a MarketSpec,
    grid: &'a SolverGrid,
    sim: &'a SimConfig,
    rebalances: usize,
    sweep: [f64; 2],
    sweep_count: usize,
    reports: &'a [RiskReport],
}

pub fn cmd_risk(args: &RiskArgs) -> Result<()> {
    const NAMES: [&str; 4] = ["qrr", "prr", "pm_qrr", "pm_prr"];
    let selected: Vec<&str> = args.risks.iter().map(|s| s.trim()).collect();
    if let Some(bad) = selected.iter().find(|s| !NAMES.contains(s)) {
        return Err(Error::InvalidConfig(format!("unknown risk measure `{bad}`")));
    }
    let wants_pm = selected.iter().any(|s| s.starts_with("pm_"));
    if wants_pm && args.rebalances == 0 {
        return Err(Error::InvalidConfig("practitioner's measures need --rebalances >= 1".into()));
    }
    let rebalances = args.rebalances.max(1);
    if args.paths == 0 {
        return Err(Error::InvalidConfig("--paths must be >= 1".into()));
    }
    let spec = args.grid.load_spec()?;
    let grid = args.grid.grid(&spec)?;
    let regimes: Vec<usize> = match &args.regimes {
        Some(r) => r.iter().map(|&i| regime_index(&spec, i)).collect::<Result<_>>()?,
        None => (0..spec.k()).collect(),
    };
    let surface = solve_surface(&spec, &grid)?;
    let sim = SimConfig::new(args.measure, args.paths, args.seed).with_substeps(args.substeps);
    let mut reports = Vec::new();
    for s0 in args.sweep.points() {
        for &i in &regimes {
            reports.push(risk_report(&spec, &surface, s0, i, args.y0, rebalances, &sim)?);
        }
        info!("s0 = {s0} done");
    }
    let w = output(args.out.as_deref())?;
    write_risk_csv(&reports, &selected, w)?;
    if let Some(path) = &args.json {
        let doc = RiskJson {
            spec: &spec,
            grid: &grid,
            sim: &sim,
            rebalances,
            sweep: [args.sweep.lo, args.sweep.hi],
            sweep_count: args.sweep.count,
            reports: &reports,
        };
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &doc)?;
        f.flush()?;
    }
    Ok(())
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<()> {
    let spec = args.grid.load_spec()?;
    let grid = args.grid.grid(&spec)?;
    let injection = if args.inject.eq_ignore_ascii_case("all") {
        Injection::EveryStep
    } else {
        let n: usize = args
            .inject
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("--inject expects a step index or `all`, got `{}`", args.inject)))?;
        if n > grid.n_steps {
            return Err(Error::InvalidConfig(format!("--inject {n} exceeds the {} time steps", grid.n_steps)));
        }
        Injection::AtStep(n)
    };
    if !(args.delta.is_finite() && args.delta >= 0.0) {
        return Err(Error::InvalidConfig("--delta must be finite and >= 0".into()));
    }
    let a = stability_constant(&spec);
    let bound = stability_bound(&spec);
    eprintln!("a = {a}");
    eprintln!("stability bound e^(-aT)/a = {bound}");
    eprintln!("dt = {}", grid.dt);
    let profile = perturbation_experiment(&spec, &grid, injection, args.delta)?;
    eprintln!("final effect = {}", profile.final_effect);
    eprintln!("accumulation bound (e^(aT)-1)*delta = {}", profile.accumulation_bound);
    let mut w = output(args.out.as_deref())?;
    writeln!(w, "n,t,effect")?;
    for (n, e) in profile.effects.iter().enumerate() {
        writeln!(w, "{},{},{}", n, grid.time(n), e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let spec = MarketSpec::from_json_file(&args.spec)?;
    let i = regime_index(&spec, args.regime)?;
    let cfg = SimConfig::new(Measure::RiskNeutral, args.paths, args.seed);
    let e = mc_price_oracle(&spec, args.s0, i, args.y0, &cfg)?;
    let mut w = output(None)?;
    writeln!(w, "s0,regime,y0,estimate,stderr,n_paths")?;
    writeln!(w, "{},{},{},{},{},{}", args.s0, args.regime, args.y0, e.estimate, e.stderr, e.n_paths)?;
    w.flush()?;
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::StabilityViolation { .. } => EXIT_STABILITY,
        _ => EXIT_CONFIG,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    with_workers(cli.workers, || match &cli.command {
        Command::Price(a) => cmd_price(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Oracle(a) => cmd_oracle(a),
    })?
}

/// Parse, execute and map the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        let s = parse_sweep("0.3:1.3:101").unwrap();
        let p = s.points();
        assert_eq!(p.len(), 101);
        assert_eq!(p[0], 0.3);
        assert_eq!(p[100], 1.3);
        assert!((p[50] - 0.8).abs() < 1e-12);
        assert!(parse_sweep("1:0.5:3").is_err());
        assert!(parse_sweep("0.3:1.3").is_err());
        assert_eq!(parse_sweep("1:1:1").unwrap().points(), vec![1.0]);
    }

    #[test]
    fn query_parsing() {
        let q = parse_query("0, 1.0, 2, 0.1").unwrap();
        assert_eq!(q, Query { t: 0.0, s: 1.0, regime: 2, y: 0.1 });
        assert!(parse_query("0,1,0,0").is_err());
        assert!(parse_query("0,1,1").is_err());
    }

    #[test]
    fn regime_list_parsing() {
        assert_eq!(parse_regime(" 3").unwrap(), 3);
        assert!(parse_regime("0").is_err());
        let cli = Cli::try_parse_from(["smhedge", "risk", "--spec", "x.json", "--regimes", "1,3"]).unwrap();
        match cli.command {
            Command::Risk(a) => assert_eq!(a.regimes, Some(vec![1, 3])),
            _ => unreachable!(),
        }
    }

    #[test]
    fn stability_errors_map_to_three() {
        assert_eq!(exit_code(&Error::StabilityViolation { dt: 3.0, bound: 2.4 }), 3);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 2);
    }
}
