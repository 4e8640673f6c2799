use semimarkov_hedge::simulate::{path_rng, point, rebalance_times, sample_residual_holding, write_paths_csv};
use semimarkov_hedge::{sample_market_path, sample_semi_markov, HoldingTimeDist, MarketSpec, Measure, SimConfig};

fn spec() -> MarketSpec {
    MarketSpec::three_regime_example()
}

/// `∫_0^T g(X_u) du` along the skeleton of a path.
fn integrate_regime(path: &semimarkov_hedge::MarketPath, g: impl Fn(usize) -> f64) -> f64 {
    let sk = &path.skeleton;
    (0..=sk.n_jumps())
        .map(|n| {
            let a = sk.sojourn_start(n).max(0.0);
            let b = sk.jump_times.get(n).copied().unwrap_or(sk.horizon);
            g(sk.regimes[n]) * (b - a)
        })
        .sum()
}

#[test]
fn zero_volatility_stock_and_discount_are_exact() {
    let mut spec = spec();
    for p in &mut spec.regimes {
        p.sigma = 0.0;
    }
    let config = SimConfig::new(Measure::Physical, 1, 5).with_observations(vec![0.25, 0.5, 0.75]);
    for idx in 0..50 {
        let path = sample_market_path(&spec, 1.3, idx as usize % 3, 0.0, &config, idx).unwrap();
        let term = path.terminal();
        let mu_int = integrate_regime(&path, |i| spec.regimes[i].mu);
        let r_int = integrate_regime(&path, |i| spec.regimes[i].r);
        assert!((term.stock - 1.3 * mu_int.exp()).abs() < 1e-12);
        assert!((term.discount - (-r_int).exp()).abs() < 1e-12);
    }
}

#[test]
fn discount_is_exact_with_volatility() {
    let spec = spec();
    let config = SimConfig::new(Measure::Physical, 1, 9);
    for idx in 0..50 {
        let path = sample_market_path(&spec, 1.0, 1, 0.2, &config, idx).unwrap();
        let r_int = integrate_regime(&path, |i| spec.regimes[i].r);
        assert!((path.terminal().discount - (-r_int).exp()).abs() < 1e-12);
    }
}

#[test]
fn discounted_stock_is_a_risk_neutral_martingale() {
    let spec = spec();
    let config = SimConfig::new(Measure::RiskNeutral, 1, 21).with_substeps(0);
    let n = 20_000;
    let xs: Vec<f64> = (0..n)
        .map(|idx| {
            let p = sample_market_path(&spec, 1.0, 0, 0.0, &config, idx).unwrap();
            let t = p.terminal();
            t.discount * t.stock
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn short_holding_times_are_rare() {
    let h = HoldingTimeDist::Gamma { shape: 2.0, rate: 1.0 };
    let q = h.quantile(1e-3);
    let mut rng = path_rng(3, 0);
    let n = 100_000;
    let below = (0..n).filter(|_| sample_residual_holding(&h, 0.0, &mut rng) < q).count();
    // Binomial(1e5, 1e-3): mean 100, sd ~10.
    assert!((60..=140).contains(&below), "{below} draws below the 0.1% quantile");
}

#[test]
fn residual_holding_respects_elapsed_time() {
    let h = HoldingTimeDist::Gamma { shape: 2.0, rate: 1.0 };
    let y0 = 1.5;
    let mut rng = path_rng(4, 0);
    let n = 50_000;
    let mean = (0..n).map(|_| sample_residual_holding(&h, y0, &mut rng)).sum::<f64>() / n as f64;
    // Gamma(2,1) mean residual life at y: (2 + y) / (1 + y).
    let expect = (2.0 + y0) / (1.0 + y0);
    assert!((mean - expect).abs() < 0.02, "{mean} vs {expect}");
}

#[test]
fn paths_are_reproducible_and_independent() {
    let spec = spec();
    let config = SimConfig::new(Measure::Physical, 1, 77).with_observations(vec![0.5]);
    let a = sample_market_path(&spec, 1.0, 2, 0.0, &config, 12).unwrap();
    let b = sample_market_path(&spec, 1.0, 2, 0.0, &config, 12).unwrap();
    let c = sample_market_path(&spec, 1.0, 2, 0.0, &config, 13).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.terminal().stock, c.terminal().stock);
}

#[test]
fn skeleton_structure() {
    let spec = spec();
    let mut rng = path_rng(8, 0);
    let sk = sample_semi_markov(&spec, 0, 0.3, 50.0, &mut rng).unwrap();
    assert_eq!(sk.regimes.len(), sk.n_jumps() + 1);
    assert!(sk.jump_times.windows(2).all(|w| w[0] < w[1]));
    assert!(sk.regimes.windows(2).all(|w| w[0] != w[1]));
    assert_eq!(sk.state_at(0.0), (0, 0.3));
    let t1 = sk.jump_times[0];
    assert_eq!(sk.state_at(t1), (sk.regimes[1], 0.0));
    assert!(sample_semi_markov(&spec, 5, 0.0, 1.0, &mut rng).is_err());
}

#[test]
fn path_points_cover_marks() {
    let spec = spec();
    let obs = rebalance_times(1.0, 4);
    assert_eq!(obs, vec![0.0, 0.25, 0.5, 0.75]);
    let config = SimConfig::new(Measure::Physical, 1, 1).with_observations(obs.clone()).with_substeps(10);
    let path = sample_market_path(&spec, 1.0, 0, 0.0, &config, 0).unwrap();
    assert!(path.points.windows(2).all(|w| w[0].t < w[1].t));
    assert!(path.points[0].is(point::START) && path.terminal().is(point::END));
    for t in obs {
        assert!(path.at_time(t).is_some());
    }
    let jumps = path.points.iter().filter(|p| p.is(point::JUMP)).count();
    assert_eq!(jumps, path.skeleton.n_jumps());
    let subs = path.points.iter().filter(|p| p.is(point::SUBSTEP)).count();
    assert!(subs >= 9 * (jumps + 1) - 4);

    let mut buf = Vec::new();
    write_paths_csv(&[path], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("path_id,t,S,X,Y,discount\n"));
}

#[test]
fn config_validation() {
    assert!(SimConfig::new(Measure::Physical, 0, 1).validate(1.0).is_err());
    assert!(SimConfig::new(Measure::Physical, 1, 1).with_observations(vec![0.5, 0.5]).validate(1.0).is_err());
    assert!(SimConfig::new(Measure::Physical, 1, 1).with_observations(vec![1.5]).validate(1.0).is_err());
    assert_eq!("risk-neutral".parse::<Measure>().unwrap(), Measure::RiskNeutral);
    assert!("martingale".parse::<Measure>().is_err());
}
