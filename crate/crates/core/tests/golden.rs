mod common;

use common::{flat, golden, max_abs_diff, nested};
use ldte::{analytic_band, analytic_variance, compute_stratum_stats, compute_xi_terms, estimate_ldte};

#[test]
fn xi_terms_match_hand_evaluation() {
    let g = golden();
    let stats = compute_stratum_stats(&g.sample);
    let xi = compute_xi_terms(&g.sample, &g.fit, &stats, &g.grid).unwrap();
    let want_y = g.expected["xi_y"].as_array().unwrap();
    let want_d = g.expected["xi_d"].as_array().unwrap();
    for z in 0..2 {
        let want = nested(&want_y[z]);
        for j in 0..g.grid.len() {
            assert!(max_abs_diff(&xi.xi_y[z][j], &want[j]) < 1e-12, "xi_y z={z} j={j}");
        }
        assert!(max_abs_diff(&xi.xi_d[z], &flat(&want_d[z])) < 1e-12, "xi_d z={z}");
    }
}

#[test]
fn estimate_variance_and_band_match_hand_evaluation() {
    let g = golden();
    let e = &g.expected;
    let stats = compute_stratum_stats(&g.sample);
    let result = estimate_ldte(&g.sample, &g.fit, &stats, &g.grid, &Default::default()).unwrap();
    assert!((result.first_stage - e["first_stage"].as_f64().unwrap()).abs() < 1e-10);
    assert!(max_abs_diff(&result.numerator, &flat(&e["numerator"])) < 1e-10);
    assert!(max_abs_diff(&result.beta, &flat(&e["beta"])) < 1e-10);

    let var = analytic_variance(&g.sample, &g.fit, &stats, &g.grid, &result).unwrap();
    assert!(max_abs_diff(&var.omega_hat, &flat(&e["omega_hat"])) < 1e-10);
    assert!(max_abs_diff(&var.components.treated, &flat(&e["components"]["treated"])) < 1e-10);
    assert!(max_abs_diff(&var.components.control, &flat(&e["components"]["control"])) < 1e-10);
    assert!(max_abs_diff(&var.components.strata, &flat(&e["components"]["strata"])) < 1e-10);
    assert!(max_abs_diff(&var.se, &flat(&e["se"])) < 1e-10);

    let band = analytic_band(&result, &var, g.level).unwrap();
    assert!(max_abs_diff(&band.lower, &flat(&e["lower"])) < 1e-10);
    assert!(max_abs_diff(&band.upper, &flat(&e["upper"])) < 1e-10);
}

#[test]
fn zero_learner_matches_hand_evaluation() {
    let g = golden();
    let text = std::fs::read_to_string(common::fixture_path("golden_six_rows_zero.json")).unwrap();
    let e: serde_json::Value = serde_json::from_str(&text).unwrap();
    let stats = compute_stratum_stats(&g.sample);
    let fit = ldte::fit_cross_fitted(&g.sample, &g.grid, &ldte::LearnerSpec::zero(), 2, 0).unwrap();
    let result = estimate_ldte(&g.sample, &fit, &stats, &g.grid, &Default::default()).unwrap();
    assert!(max_abs_diff(&result.beta, &flat(&e["beta"])) < 1e-10);
    let var = analytic_variance(&g.sample, &fit, &stats, &g.grid, &result).unwrap();
    assert!(max_abs_diff(&var.omega_hat, &flat(&e["omega_hat"])) < 1e-10);
    let band = analytic_band(&result, &var, g.level).unwrap();
    assert!(max_abs_diff(&band.lower, &flat(&e["lower"])) < 1e-10);
    assert!(max_abs_diff(&band.upper, &flat(&e["upper"])) < 1e-10);
}
