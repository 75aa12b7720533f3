mod common;

use common::{max_abs_diff, random_small_sample};
use ldte::nuisance::{fit_cell, Design};
use ldte::simulation::{run_replications, ReferenceDraw};
use ldte::{
    assign, compute_stratum_stats, default_threshold_grid, estimate_ldte, estimate_lpte, estimate_unadjusted,
    fit_cross_fitted, fit_with_folds, fold_assign, generate, CarScheme, DgpConfig, ExperimentSample, GbtParams,
    LearnerSpec, McConfig, McEstimator, NuisanceFit, SchemeKind, Targets, ThresholdGrid,
};

fn gbt() -> LearnerSpec {
    LearnerSpec::gbt(GbtParams::default())
}

#[test]
fn zero_learner_equals_direct_cell_means() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let s = random_small_sample(seed);
        let stats = compute_stratum_stats(&s);
        let grid = ThresholdGrid::new(vec![0.0, 1.0, 2.5, 4.0, 6.0]).unwrap();
        let fit = fit_cross_fitted(&s, &grid, &LearnerSpec::zero(), 2, seed).unwrap();
        let adjusted = estimate_ldte(&s, &fit, &stats, &grid, &Default::default()).unwrap();
        let direct = estimate_unadjusted(&s, &stats, &grid, &Default::default()).unwrap();
        worst = worst
            .max(max_abs_diff(&adjusted.beta, &direct.beta))
            .max((adjusted.first_stage - direct.first_stage).abs());
    }
    assert!(worst <= 1e-12, "max difference {worst:e}");
}

/// Rebuilds the training cell of unit `i` and refits by hand.
fn manual_prediction(
    sample: &ExperimentSample,
    fold_of: &[usize],
    arm: u8,
    i: usize,
    target: impl Fn(usize) -> f64,
    spec: &LearnerSpec,
) -> f64 {
    let train: Vec<usize> = (0..sample.len())
        .filter(|&k| {
            sample.assignment()[k] == arm && sample.strata()[k] == sample.strata()[i] && fold_of[k] != fold_of[i]
        })
        .collect();
    let dim = sample.covariate_dim();
    let x: Vec<f64> = train.iter().flat_map(|&k| sample.covariate_row(k).to_vec()).collect();
    let y: Vec<f64> = train.iter().map(|&k| target(k)).collect();
    let (model, _) = fit_cell(&spec.learner, &Design::new(x, dim), &y);
    model.predict(sample.covariate_row(i), spec.clip)
}

#[test]
fn cross_fitted_predictions_use_only_other_folds() {
    let g = generate(&DgpConfig::default(), 1200, 5).unwrap();
    let s = &g.sample;
    let grid = default_threshold_grid(s, 3).unwrap();
    let spec = gbt();
    let folds = fold_assign(s, 2, 9).unwrap();
    let fit = fit_with_folds(s, &grid, &spec, folds.clone(), 2).unwrap();
    assert!(fit.meta().training_cells.iter().all(|c| !c.pooled));
    let cut = grid.values()[0];
    for i in (0..s.len()).step_by(97) {
        for arm in 0..2u8 {
            let eta = manual_prediction(s, &folds, arm, i, |k| f64::from(s.treatment()[k]), &spec);
            assert_eq!(eta, fit.eta(arm as usize)[i], "eta unit {i} arm {arm}");
            let mu = manual_prediction(s, &folds, arm, i, |k| f64::from(u8::from(s.outcome()[k] <= cut)), &spec);
            assert_eq!(mu, fit.mu(arm as usize, 0)[i], "mu unit {i} arm {arm}");
        }
    }

    // scrambling the held-out fold leaves its own predictions untouched
    let mut y = s.outcome().to_vec();
    for (i, v) in y.iter_mut().enumerate() {
        if folds[i] == 0 {
            *v = -*v * 3.0 + 1.0;
        }
    }
    let scrambled = s.with_outcome(y).unwrap();
    let refit = fit_with_folds(&scrambled, &grid, &spec, folds.clone(), 2).unwrap();
    for i in (0..s.len()).filter(|&i| folds[i] == 0) {
        for arm in 0..2 {
            for j in 0..grid.len() {
                assert_eq!(refit.mu(arm, j)[i], fit.mu(arm, j)[i]);
            }
            assert_eq!(refit.eta(arm)[i], fit.eta(arm)[i]);
        }
    }
}

#[test]
fn small_cells_are_pooled_with_stratum_dummies() {
    let g = generate(&DgpConfig::default(), 400, 6).unwrap();
    let s = &g.sample;
    let grid = default_threshold_grid(s, 2).unwrap();
    let spec = LearnerSpec {
        pool_below: usize::MAX,
        ..gbt()
    };
    let folds = fold_assign(s, 2, 1).unwrap();
    let fit = fit_with_folds(s, &grid, &spec, folds.clone(), 2).unwrap();
    assert!(fit.meta().pooled && fit.meta().training_cells.iter().all(|c| c.pooled));
    let n_strata = s.n_strata();
    let row = |k: usize| {
        let mut r = s.covariate_row(k).to_vec();
        r.extend((1..n_strata).map(|st| f64::from(u8::from(s.strata()[k] == st))));
        r
    };
    for i in (0..s.len()).step_by(41) {
        let arm = 1u8;
        let train: Vec<usize> = (0..s.len())
            .filter(|&k| s.assignment()[k] == arm && folds[k] != folds[i])
            .collect();
        let x: Vec<f64> = train.iter().flat_map(|&k| row(k)).collect();
        let d: Vec<f64> = train.iter().map(|&k| f64::from(s.treatment()[k])).collect();
        let (model, _) = fit_cell(&spec.learner, &Design::new(x, s.covariate_dim() + n_strata - 1), &d);
        assert_eq!(model.predict(&row(i), spec.clip), fit.eta(1)[i]);
    }
}

#[test]
fn monotone_transform_of_outcome_changes_nothing() {
    let g = generate(&DgpConfig::default(), 800, 12).unwrap();
    let s = &g.sample;
    let grid = default_threshold_grid(s, 9).unwrap();
    let transform = |y: f64| (0.7 * y).exp() + y;
    let moved = s.with_outcome(s.outcome().iter().map(|&y| transform(y)).collect()).unwrap();
    let moved_grid = grid.map(transform).unwrap();
    let stats = compute_stratum_stats(s);
    for spec in [LearnerSpec::zero(), gbt()] {
        let a = fit_cross_fitted(s, &grid, &spec, 2, 4).unwrap();
        let b = fit_cross_fitted(&moved, &moved_grid, &spec, 2, 4).unwrap();
        let ra = estimate_ldte(s, &a, &stats, &grid, &Default::default()).unwrap();
        let rb = estimate_ldte(&moved, &b, &stats, &moved_grid, &Default::default()).unwrap();
        assert_eq!(ra.beta, rb.beta, "{}", spec.learner.name());
    }
}

#[test]
fn first_stage_ignores_grid_and_outcome() {
    let g = generate(&DgpConfig::default(), 800, 13).unwrap();
    let s = &g.sample;
    let stats = compute_stratum_stats(s);
    let spec = gbt();
    let coarse = default_threshold_grid(s, 1).unwrap();
    let fine = default_threshold_grid(s, 15).unwrap();
    let r1 = estimate_ldte(s, &fit_cross_fitted(s, &coarse, &spec, 2, 4).unwrap(), &stats, &coarse, &Default::default())
        .unwrap();
    let r2 =
        estimate_ldte(s, &fit_cross_fitted(s, &fine, &spec, 2, 4).unwrap(), &stats, &fine, &Default::default()).unwrap();
    assert_eq!(r1.first_stage, r2.first_stage);
    let other = s.with_outcome(s.outcome().iter().map(|y| -y).collect()).unwrap();
    let r3 = estimate_ldte(
        &other,
        &fit_cross_fitted(&other, &fine, &spec, 2, 4).unwrap(),
        &stats,
        &fine,
        &Default::default(),
    )
    .unwrap();
    assert_eq!(r1.first_stage, r3.first_stage);
}

#[test]
fn stratum_constant_shift_of_outcome_models_cancels() {
    let g = generate(&DgpConfig::default(), 800, 14).unwrap();
    let s = &g.sample;
    let stats = compute_stratum_stats(s);
    let grid = default_threshold_grid(s, 5).unwrap();
    let fit = fit_cross_fitted(s, &grid, &gbt(), 2, 4).unwrap();
    let base = estimate_ldte(s, &fit, &stats, &grid, &Default::default()).unwrap();
    let shift = |st: usize, j: usize| 0.3 * st as f64 - 0.17 * j as f64 + 0.05;
    let mu = [0, 1].map(|z| {
        (0..grid.len())
            .map(|j| (0..s.len()).map(|i| fit.mu(z, j)[i] + shift(s.strata()[i], j)).collect())
            .collect::<Vec<Vec<f64>>>()
    });
    let eta = [fit.eta(0).to_vec(), fit.eta(1).to_vec()];
    let shifted = NuisanceFit::from_predictions(mu, eta).unwrap();
    let moved = estimate_ldte(s, &shifted, &stats, &grid, &Default::default()).unwrap();
    assert!(max_abs_diff(&base.beta, &moved.beta) <= 1e-12);
}

#[test]
fn lpte_partial_sums_give_ldte() {
    let g = generate(&DgpConfig::default(), 1000, 15).unwrap();
    let s = &g.sample;
    let stats = compute_stratum_stats(s);
    let grid = default_threshold_grid(s, 9).unwrap();
    let fit = fit_cross_fitted(s, &grid, &gbt(), 2, 4).unwrap();
    let ldte = estimate_ldte(s, &fit, &stats, &grid, &Default::default()).unwrap();
    let lpte = estimate_lpte(s, &fit, &stats, &grid, &Default::default()).unwrap();
    assert_eq!(ldte.first_stage, lpte.first_stage);
    let mut acc = 0.0;
    for j in 0..grid.len() {
        acc += lpte.beta[j];
        assert!((acc - ldte.beta[j]).abs() <= 1e-12, "j={j}");
    }
}

#[test]
fn boosting_beats_cell_means_out_of_fold() {
    let g = generate(&DgpConfig::default(), 3000, 16).unwrap();
    let s = &g.sample;
    let grid = default_threshold_grid(s, 1).unwrap();
    let cut = grid.values()[0];
    let boosted = fit_cross_fitted(s, &grid, &gbt(), 2, 4).unwrap();
    // an overwhelming ridge penalty reduces the logistic model to the cell mean
    let constant = LearnerSpec::ridge(ldte::RidgeParams {
        penalty: 1e12,
        ..Default::default()
    });
    let flat = fit_cross_fitted(s, &grid, &constant, 2, 4).unwrap();
    let mse = |fit: &NuisanceFit| {
        (0..s.len())
            .map(|i| {
                let z = s.assignment()[i] as usize;
                let target = f64::from(u8::from(s.outcome()[i] <= cut));
                (fit.mu(z, 0)[i] - target).powi(2)
            })
            .sum::<f64>()
            / s.len() as f64
    };
    let (mb, mf) = (mse(&boosted), mse(&flat));
    assert!(mb < 0.9 * mf, "boosted {mb} vs cell mean {mf}");
}

#[test]
fn assignment_is_bitwise_reproducible() {
    let strata: Vec<usize> = (0..5000).map(|i| (i * 7) % 6).collect();
    let schemes = [
        SchemeKind::SimpleRandom,
        SchemeKind::StratifiedBlock { block_size: 4 },
        SchemeKind::EfronBiasedCoin { gamma: 2.0 / 3.0 },
        SchemeKind::WeiAdaptive { strength: 1.0 },
    ];
    for kind in schemes {
        let scheme = CarScheme::new(kind, Targets::All(0.5)).unwrap();
        let a = assign(&scheme, &strata, 77).unwrap();
        assert_eq!(a, assign(&scheme, &strata, 77).unwrap());
        assert_ne!(a, assign(&scheme, &strata, 78).unwrap());
    }
}

#[test]
fn generated_units_never_defy() {
    for seed in 0..5 {
        let g = generate(&DgpConfig::default(), 20_000, seed).unwrap();
        assert!(g.d1.iter().zip(&g.d0).all(|(d1, d0)| d1 >= d0));
    }
}

/// Complier share of the default design. The reference value comes from a
/// 2e7-draw numpy evaluation of `E[Phi((b1 + c)/c1) - Phi((b0 + c)/c0)]`
/// (see `tests/fixtures/complier_share.py`).
#[test]
fn complier_share_matches_reference() {
    let reference: f64 = std::fs::read_to_string(common::fixture_path("complier_share.txt"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    let g = generate(&DgpConfig::default(), 1_000_000, 2024).unwrap();
    let share = g.d1.iter().zip(&g.d0).filter(|(d1, d0)| d1 > d0).count() as f64 / 1e6;
    // four binomial standard errors at n = 1e6
    let tol = 4.0 * (reference * (1.0 - reference) / 1e6).sqrt();
    assert!((share - reference).abs() < tol, "share {share} vs {reference}");
}

/// Monte Carlo variance of the boosted estimator at the median threshold is
/// no larger than the unadjusted one (5% slack). Several minutes on one core.
#[test]
fn adjustment_reduces_monte_carlo_variance() {
    let mut config = McConfig::new(5000, 500, 31);
    config.levels = vec![0.5];
    config.estimators = vec![McEstimator::Unadjusted, McEstimator::MlAdjusted { learner: gbt() }];
    let reference = ReferenceDraw::new(&config.dgp, config.n_ref, 99).unwrap();
    let grid = reference.thresholds(&config.levels).unwrap();
    let outcomes = run_replications(&config, &grid).unwrap();
    let variance = |k: usize| {
        let b: Vec<f64> = outcomes[k].iter().map(|o| o.as_ref().unwrap().beta[0]).collect();
        let m = b.iter().sum::<f64>() / b.len() as f64;
        b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b.len() - 1) as f64
    };
    let (unadjusted, adjusted) = (variance(0), variance(1));
    eprintln!("unadjusted variance {unadjusted:e}, boosted {adjusted:e}");
    assert!(adjusted <= 1.05 * unadjusted);
}
