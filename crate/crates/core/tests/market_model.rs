use approx::assert_relative_eq;
use proptest::prelude::*;
use semimarkov_hedge::market::Violation;
use semimarkov_hedge::{hazard, validate, Error, HoldingTimeDist, MarketSpec, RegimeParams, TransitionMatrix};

fn example() -> MarketSpec {
    MarketSpec::three_regime_example()
}

#[test]
fn gamma21_hazard_at_one() {
    let spec = example();
    assert_relative_eq!(hazard(&spec, 0, 1, 1.0).unwrap(), 1.0 / 3.0, max_relative = 1e-14);
}

#[test]
fn gamma2_hazard_vanishes_at_zero() {
    let spec = example();
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        assert_eq!(hazard(&spec, i, j, 0.0).unwrap(), 0.0);
    }
}

#[test]
fn exponential_hazard_is_constant() {
    let mut spec = example();
    spec.holding = vec![HoldingTimeDist::Exponential { rate: 1.7 }; 3];
    for y in [0.0, 0.3, 2.0, 15.0] {
        assert_relative_eq!(hazard(&spec, 1, 2, y).unwrap(), 0.5 * 1.7, max_relative = 1e-14);
    }
}

#[test]
fn hazard_errors() {
    let spec = example();
    assert!(matches!(hazard(&spec, 3, 0, 0.1), Err(Error::InvalidIndex { index: 3, k: 3 })));
    assert!(matches!(hazard(&spec, 0, 5, 0.1), Err(Error::InvalidIndex { index: 5, k: 3 })));
    assert!(matches!(hazard(&spec, 0, 1, 45.0), Err(Error::SaturatedHoldingTime { regime: 0, .. })));
}

#[test]
fn example_spec_passes_validation() {
    let report = validate(&example());
    assert!(report.passed(), "{report}");
}

#[test]
fn short_row_fails_with_row_stochastic() {
    let mut spec = example();
    spec.transitions = TransitionMatrix::new(vec![vec![0.0, 0.6, 0.3], vec![0.5, 0.0, 0.5], vec![1.0 / 3.0, 2.0 / 3.0, 0.0]]);
    let report = validate(&spec);
    assert!(!report.passed());
    assert!(report.violations.iter().any(|v| matches!(v, Violation::RowStochastic { row: 0, .. })));
    assert!(matches!(spec.ensure_valid(), Err(Error::InvalidSpec(_))));
}

#[test]
fn two_state_permutation_is_irreducible() {
    let p = RegimeParams::new(0.1, 0.2, 0.05);
    let spec = MarketSpec {
        regimes: vec![p, p],
        transitions: TransitionMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        holding: vec![HoldingTimeDist::Exponential { rate: 1.0 }; 2],
        strike: 1.0,
        maturity: 1.0,
    };
    assert!(validate(&spec).passed());
}

#[test]
fn reducible_and_malformed_specs_are_reported() {
    let mut spec = example();
    spec.transitions = TransitionMatrix::new(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0]]);
    assert!(validate(&spec).violations.contains(&Violation::Reducible));

    let mut spec = example();
    spec.regimes[1].sigma = 0.0;
    spec.regimes[2].r = -0.1;
    spec.strike = 0.0;
    let v = validate(&spec).violations;
    assert!(v.iter().any(|x| matches!(x, Violation::NonPositiveSigma { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::NegativeRate { .. })));
    assert!(v.iter().any(|x| matches!(x, Violation::NonPositiveStrike { .. })));

    let mut spec = example();
    spec.transitions = TransitionMatrix::new(vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]);
    assert!(validate(&spec).violations.iter().any(|x| matches!(x, Violation::NonZeroDiagonal { .. })));

    let mut spec = example();
    spec.holding[0] = HoldingTimeDist::Gamma { shape: 2.5, rate: 1.0 };
    assert!(validate(&spec).violations.iter().any(|x| matches!(x, Violation::InvalidHolding { regime: 0, .. })));
}

#[test]
fn zero_rate_is_admitted() {
    let mut spec = example();
    spec.regimes[0].r = 0.0;
    assert!(validate(&spec).passed());
}

#[test]
fn json_keys_and_round_trip() {
    let text = r#"{
        "regimes": [{"mu": 0.2, "sigma": 0.2, "r": 0.2}, {"mu": 0.6, "sigma": 0.4, "r": 0.5}],
        "transition": [[0, 1], [1, 0]],
        "holding": [{"family": "gamma", "params": [2, 1]}, {"family": "exponential", "params": [0.5]}],
        "strike": 1.0,
        "maturity": 1.0
    }"#;
    let spec = MarketSpec::from_json_str(text).unwrap();
    assert_eq!(spec.holding[1], HoldingTimeDist::Exponential { rate: 0.5 });
    let back = MarketSpec::from_json_str(&spec.to_json_string()).unwrap();
    assert_eq!(spec, back);
    let value: serde_json::Value = serde_json::from_str(&spec.to_json_string()).unwrap();
    for key in ["regimes", "transition", "holding", "strike", "maturity"] {
        assert!(value.get(key).is_some(), "missing key {key}");
    }
    assert!(MarketSpec::from_json_str(&text.replace("gamma", "weibull")).is_err());
}

#[test]
fn bundled_spec_files_match_constructors() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let three = MarketSpec::from_json_file(dir.join("three_regime.json")).unwrap();
    assert_eq!(three, example());
    let ident = MarketSpec::from_json_file(dir.join("identical_regimes.json")).unwrap();
    assert_eq!(ident, MarketSpec::identical_regimes(RegimeParams::new(0.2, 0.2, 0.2)));
}

/// Composite Simpson rule.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for j in 1..n {
        s += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn integrated_hazard_equals_log_survival() {
    let mut spec = example();
    spec.holding[2] = HoldingTimeDist::Gamma { shape: 3.0, rate: 1.5 };
    for i in 0..3 {
        for y in [0.1, 0.7, 2.0, 5.0] {
            let total = |u: f64| (0..3).filter(|&j| j != i).map(|j| hazard(&spec, i, j, u).unwrap()).sum::<f64>();
            let lhs = simpson(total, 0.0, y, 20_000);
            let rhs = -spec.holding[i].survival(y).ln();
            assert!((lhs - rhs).abs() < 1e-8, "regime {i}, y {y}: {lhs} vs {rhs}");
        }
    }
}

proptest! {
    #[test]
    fn hazard_nonnegative_and_gamma21_closed_form(y in 0.0f64..20.0) {
        let spec = example();
        for (i, j) in [(0usize, 1usize), (0, 2), (1, 0), (2, 1)] {
            let h = hazard(&spec, i, j, y).unwrap();
            prop_assert!(h >= 0.0 && h.is_finite());
            let expect = spec.transitions.get(i, j) * y / (1.0 + y);
            prop_assert!((h - expect).abs() <= 1e-14 * (1.0 + expect));
        }
    }

    #[test]
    fn gamma21_hazard_increasing(y in 0.0f64..20.0, dy in 1e-6f64..1.0) {
        let spec = example();
        prop_assert!(hazard(&spec, 0, 1, y + dy).unwrap() > hazard(&spec, 0, 1, y).unwrap());
    }

    #[test]
    fn cdf_is_a_distribution(shape in 1u32..6, rate in 0.1f64..5.0, y in 0.0f64..30.0, dy in 0.0f64..3.0) {
        let h = HoldingTimeDist::Gamma { shape: shape as f64, rate };
        prop_assert_eq!(h.cdf(0.0), 0.0);
        prop_assert!(h.cdf(y + dy) >= h.cdf(y));
        prop_assert!((0.0..=1.0).contains(&h.cdf(y)));
        prop_assert!(h.pdf(y) >= 0.0);
        if y > 0.0 {
            prop_assert!(h.pdf(y) > 0.0 || h.survival(y) < 1e-300);
        }
    }

    #[test]
    fn quantile_inverts_cdf(shape in 1u32..6, rate in 0.1f64..5.0, p in 1e-6f64..0.999) {
        let h = HoldingTimeDist::Gamma { shape: shape as f64, rate };
        let q = h.quantile(p);
        prop_assert!((h.cdf(q) - p).abs() < 1e-10);
    }
}
