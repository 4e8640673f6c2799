use semimarkov_hedge::volterra::{
    apply_operator, check_stability, pde_residual, perturbation_experiment, stability_constant, weighted_sup_distance,
    Injection, ResidualOptions, UpperTail, ZeroLagHedge,
};
use semimarkov_hedge::{
    bs_call, solve_surface, stability_bound, Error, HoldingTimeDist, MarketSpec, PriceSurface, RegimeParams, SolverGrid,
};
use std::sync::OnceLock;

/// Coarse grid shared by most tests.
fn coarse() -> SolverGrid {
    SolverGrid::new(1.0, 0.02, 0.02, 4.0).unwrap()
}

fn example_surface() -> &'static PriceSurface {
    static S: OnceLock<PriceSurface> = OnceLock::new();
    S.get_or_init(|| solve_surface(&MarketSpec::three_regime_example(), &coarse()).unwrap())
}

fn identical() -> MarketSpec {
    MarketSpec::identical_regimes(RegimeParams::new(0.2, 0.2, 0.2))
}

#[test]
fn terminal_row_is_payoff_and_origin_is_zero() {
    let surf = example_surface();
    let g = surf.grid();
    for i in 0..3 {
        for m in 0..=g.m_max {
            let s = g.stock(m);
            assert_eq!(surf.node(0, m, i), (s - 1.0).max(0.0));
        }
        for n in 0..=g.n_steps {
            assert_eq!(surf.node(n, 0, i), 0.0);
        }
    }
}

#[test]
fn nodes_respect_no_arbitrage_bounds_and_monotonicity() {
    let surf = example_surface();
    let g = surf.grid();
    for n in 0..=g.n_steps {
        for i in 0..3 {
            let mut prev = -1.0;
            for m in 0..=g.m_max {
                let s = g.stock(m);
                let v = surf.node(n, m, i);
                assert!(v >= (s - 1.0).max(0.0) - 1e-9, "lower bound at n={n} m={m} i={i}: {v}");
                assert!(v <= s + 1e-9, "upper bound at n={n} m={m} i={i}: {v}");
                assert!(v >= prev - 1e-12, "not monotone at n={n} m={m} i={i}");
                prev = v;
            }
        }
    }
}

#[test]
fn evaluation_reproduces_nodes() {
    let surf = example_surface();
    let g = surf.grid();
    for n in [1, 7, g.n_steps] {
        for m in [10, 50, 73] {
            for i in 0..3 {
                let v = surf.price_at(g.time(n), g.stock(m), i, 0.0).unwrap();
                assert!((v - surf.node(n, m, i)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn maturity_query_returns_payoff() {
    let surf = example_surface();
    for s in [0.3, 1.0, 1.7] {
        assert_eq!(surf.price_at(1.0, s, 1, 0.4).unwrap(), (s - 1.0f64).max(0.0));
        let h = surf.hedge_at(1.0, s, 1, 0.4).unwrap();
        assert_eq!(h.xi, if s > 1.0 { 1.0 } else { 0.0 });
    }
}

#[test]
fn query_errors() {
    let surf = example_surface();
    assert!(matches!(surf.price_at(0.2, 1.0, 0, 0.5), Err(Error::Domain(_))));
    assert!(matches!(surf.price_at(0.2, 1.0, 3, 0.0), Err(Error::InvalidIndex { .. })));
    assert!(surf.price_at(1.2, 1.0, 0, 0.0).is_err());
    assert!(surf.price_at(0.5, -1.0, 0, 0.0).is_err());
    assert!(surf.hedge_at(0.5, 0.0, 0, 0.0).is_err());
    // Elapsed time may exceed calendar time when the history starts earlier.
    assert!(surf.price_with_history(0.2, 1.0, 0, 0.5).unwrap() > 0.0);
}

#[test]
fn identical_regimes_reduce_to_black_scholes() {
    let grid = SolverGrid::new(1.0, 0.02, 0.01, 4.0).unwrap();
    let surf = solve_surface(&identical(), &grid).unwrap();
    for &(t, y) in &[(0.0, 0.0), (0.5, 0.0), (0.5, 0.3), (0.8, 0.8)] {
        for s in [0.7, 1.0, 1.3, 2.0] {
            let bs = bs_call(t, s, 0.2, 0.2, 1.0, 1.0).unwrap();
            for i in 0..3 {
                let v = surf.price_at(t, s, i, y).unwrap();
                let rel = (v - bs.price).abs() / bs.price;
                assert!(rel < 1e-2, "t={t} y={y} s={s} i={i}: {v} vs {}", bs.price);
            }
        }
    }
}

#[test]
fn deep_in_the_money_hedge_tends_to_one() {
    let surf = example_surface();
    for i in 0..3 {
        let h = surf.hedge_at(0.0, 3.0, i, 0.0).unwrap();
        assert!((h.xi - 1.0).abs() < 2e-2, "regime {i}: xi {}", h.xi);
        let h = surf.hedge_at(0.0, 0.2, i, 0.0).unwrap();
        assert!(h.xi.abs() < 2e-2, "regime {i}: far out of the money xi {}", h.xi);
    }
}

#[test]
fn money_market_position_closes_the_portfolio() {
    let surf = example_surface();
    let h = surf.hedge_at(0.3, 1.1, 2, 0.1).unwrap();
    assert!((h.price - (h.xi * 1.1 + h.epsilon)).abs() < 1e-12);
}

#[test]
fn exponential_holding_with_zero_rate_has_constant_stability_constant() {
    let mut spec = MarketSpec::three_regime_example();
    for p in &mut spec.regimes {
        p.r = 0.0;
    }
    spec.holding = vec![HoldingTimeDist::Exponential { rate: 2.0 }; 3];
    assert!((stability_constant(&spec) - 2.0).abs() < 1e-12);
    assert!((stability_bound(&spec) - (-2.0f64).exp() / 2.0).abs() < 1e-12);
}

#[test]
fn gamma_example_stability_constant() {
    let a = stability_constant(&MarketSpec::three_regime_example());
    assert!((a - 0.3066).abs() < 1e-4, "a = {a}");
}

#[test]
fn stability_bound_grows_with_rates() {
    let mut spec = MarketSpec::three_regime_example();
    let mut last = 0.0;
    for r in [0.0, 0.1, 0.5, 1.0, 2.0] {
        for p in &mut spec.regimes {
            p.r = r;
        }
        let b = stability_bound(&spec);
        assert!(b > last, "bound {b} at r={r} not above {last}");
        last = b;
    }
}

#[test]
fn oversized_step_is_refused() {
    let mut spec = MarketSpec::three_regime_example();
    spec.holding = vec![HoldingTimeDist::Exponential { rate: 40.0 }; 3];
    let grid = coarse();
    assert!(matches!(check_stability(&spec, &grid), Err(Error::StabilityViolation { .. })));
    assert!(matches!(solve_surface(&spec, &grid), Err(Error::StabilityViolation { .. })));
    assert!(check_stability(&spec, &grid.allow_unstable(true)).is_ok());
}

#[test]
fn zero_perturbation_changes_nothing() {
    let spec = MarketSpec::three_regime_example();
    let grid = SolverGrid::new(1.0, 0.05, 0.04, 4.0).unwrap();
    let p = perturbation_experiment(&spec, &grid, Injection::EveryStep, 0.0).unwrap();
    assert!(p.effects.iter().all(|&e| e == 0.0));
    let p = perturbation_experiment(&spec, &grid, Injection::AtStep(1), 1e-3).unwrap();
    assert_eq!(p.effects[0], 0.0);
    assert!(p.effects[1] > 0.0 && p.effects[1] <= 1e-3 + 1e-15);
    assert!(p.final_effect < 1e-3);
}

#[test]
fn solution_is_a_fixed_point_and_the_operator_contracts() {
    let spec = MarketSpec::three_regime_example();
    let grid = SolverGrid::new(1.0, 0.05, 0.04, 4.0).unwrap();
    let surf = solve_surface(&spec, &grid).unwrap();
    let phi = surf.values().to_vec();
    let image = apply_operator(&spec, &grid, &phi).unwrap();
    assert!(weighted_sup_distance(&grid, 3, &phi, &image) < 1e-12);

    let step = (grid.m_max + 1) * 3;
    let mut other = phi.clone();
    for (idx, v) in other.iter_mut().enumerate().skip(step) {
        *v += 0.05 * (1.0 + grid.stock((idx / 3) % (grid.m_max + 1))) * ((idx % 7) as f64 / 7.0);
    }
    let before = weighted_sup_distance(&grid, 3, &phi, &other);
    let after = weighted_sup_distance(&grid, 3, &image, &apply_operator(&spec, &grid, &other).unwrap());
    assert!(after < 0.5 * before, "contraction {after} vs {before}");
    assert!(apply_operator(&spec, &grid, &phi[1..]).is_err());
}

#[test]
fn refinement_in_time_converges() {
    let spec = MarketSpec::three_regime_example();
    let at = |dt: f64| {
        let surf = solve_surface(&spec, &SolverGrid::new(1.0, dt, 0.02, 4.0).unwrap()).unwrap();
        [0.8, 1.0, 1.2].map(|s| surf.price_at(0.0, s, 1, 0.0).unwrap())
    };
    let (a, b, c) = (at(0.04), at(0.02), at(0.01));
    for k in 0..3 {
        let d1 = (a[k] - b[k]).abs();
        let d2 = (b[k] - c[k]).abs();
        assert!(d2 < d1, "point {k}: {d1} then {d2}");
    }
}

#[test]
fn pde_residual_is_small_away_from_the_strike() {
    let surf = example_surface();
    let mut opts = ResidualOptions::for_surface(surf);
    opts.t_hi = 0.7;
    let away = pde_residual(surf, &ResidualOptions { s_lo: 1.3, s_hi: 2.0, ..opts });
    assert!(away.count > 0);
    assert!(away.mean_abs < 5e-2, "{away:?}");
}

#[test]
fn save_and_load_round_trip() {
    let surf = example_surface();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("surface.csv");
    surf.save(&path).unwrap();
    let back = PriceSurface::load(&path).unwrap();
    assert_eq!(back.fingerprint(), surf.fingerprint());
    assert_eq!(back.values(), surf.values());
    for &(t, s, y) in &[(0.0, 1.0, 0.0), (0.4, 0.9, 0.2)] {
        assert_eq!(back.price_at(t, s, 2, y).unwrap(), surf.price_at(t, s, 2, y).unwrap());
        assert_eq!(back.hedge_at(t, s, 2, y).unwrap(), surf.hedge_at(t, s, 2, y).unwrap());
    }
}

#[test]
fn upper_tail_and_zero_lag_variants_stay_close() {
    let spec = MarketSpec::three_regime_example();
    let base = example_surface();
    let trunc = solve_surface(&spec, &coarse().with_upper_tail(UpperTail::Truncate)).unwrap();
    let deriv = solve_surface(&spec, &coarse().with_zero_lag_hedge(ZeroLagHedge::StockDerivative)).unwrap();
    for s in [0.8, 1.0, 1.2] {
        for i in 0..3 {
            let p = base.price_at(0.0, s, i, 0.0).unwrap();
            assert!((p - trunc.price_at(0.0, s, i, 0.0).unwrap()).abs() < 2e-2);
            assert_eq!(p, deriv.price_at(0.0, s, i, 0.0).unwrap());
            let x = base.hedge_at(0.0, s, i, 0.0).unwrap().xi;
            assert!((x - deriv.hedge_at(0.0, s, i, 0.0).unwrap().xi).abs() < 2e-2);
        }
    }
}
