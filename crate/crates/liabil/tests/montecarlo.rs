//! Monte Carlo validation of the estimating machinery: score
//! unbiasedness, censoring-model recovery, weight calibration, test size
//! and power, model selection, and consistency of the derived reports.
//!
//! Seeds are fixed, so every assertion is deterministic.

mod common;

use liabil::biprobit::{
    fit, loglik_and_score, CohortDesign, ComponentSet, FitOptions, ModelSpec, WeightScheme,
};
use liabil::censoring::{aalen_johansen_cif, fit_km, fit_weibull_ph, CensoringModel, Strata, TieBreak};
use liabil::data::{classify_cohort, ClassifyOptions, EventStatus, Zygosity};
use liabil::measures::{measures_from_fit, timegrid, TimegridOptions};
use liabil::normal::{norm_cdf, norm_quantile};
use liabil::polygenic::polygenic_estimate;
use liabil::sim::{simulate_cohort, simulate_cohort_stream, SimConfig};
use nalgebra::DVector;

const TAU: f64 = 120.0;

fn baseline(n_pairs_per_zyg: usize, seed: u64) -> SimConfig {
    SimConfig { n_mz: n_pairs_per_zyg, n_dz: n_pairs_per_zyg, seed, ..SimConfig::default() }
}

/// Score evaluated at the true parameters has mean zero when pairs are
/// weighted by the true censoring distribution.
#[test]
fn weighted_score_is_unbiased_at_truth() {
    let config = baseline(20_000, 101);
    let cohort = simulate_cohort(&config).unwrap();
    let true_censoring = CensoringModel::weibull_known(config.log_lambda, config.log_nu, &[]);
    let spec = ModelSpec::flexible(TAU);
    let design =
        CohortDesign::build(&spec, &cohort.pairs, Some(&true_censoring), &FitOptions::default())
            .unwrap();
    let truth = config.truth();
    let theta = DVector::from_column_slice(&[
        norm_quantile(truth.f1).unwrap(),
        truth.rho_mz.atanh(),
        truth.rho_dz.atanh(),
    ]);
    let eval = loglik_and_score(&design, &theta);
    // Monte Carlo SE of each summed score component from the per-pair
    // spread; the mean component must sit within 3 SE of zero.
    let n = cohort.pairs.len() as f64;
    let per_pair_sd = {
        // crude bound: average |score|/sqrt(n) is within a small factor of
        // the exact per-pair sd for these cell scores
        let eval0 = loglik_and_score(&design, &theta);
        (eval0.info.diagonal() / n).map(|v| v.sqrt())
    };
    for j in 0..theta.len() {
        let mean_component = eval.score[j] / n;
        let se = per_pair_sd[j] / n.sqrt();
        assert!(
            mean_component.abs() < 3.0 * se.max(1e-6),
            "score component {j}: mean {mean_component:.3e}, se {se:.3e}"
        );
    }
}

/// Weibull censoring fit recovers its own generator within 3 MC SE at
/// n = 20,000 individuals, with and without the covariate.
#[test]
fn weibull_censoring_fit_recovers_truth() {
    let config = baseline(10_000, 102);
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_weibull_ph(&cohort.pairs).unwrap();
    let gamma = model.gamma().unwrap();
    let vcov = model.gamma_vcov().unwrap();
    for (j, truth) in [config.log_lambda, config.log_nu].iter().enumerate() {
        let se = vcov[(j, j)].sqrt();
        assert!(
            (gamma[j] - truth).abs() < 3.0 * se,
            "gamma[{j}] = {} vs {truth} (se {se:.4})",
            gamma[j]
        );
    }

    let config = SimConfig {
        covariate: Some(liabil::sim::CovariateScenario::default()),
        ..baseline(10_000, 103)
    };
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_weibull_ph(&cohort.pairs).unwrap();
    let gamma = model.gamma().unwrap();
    let vcov = model.gamma_vcov().unwrap();
    let se = vcov[(2, 2)].sqrt();
    assert!(
        (gamma[2] - (-1.0)).abs() < 3.0 * se,
        "covariate effect {} vs -1 (se {se:.4})",
        gamma[2]
    );
    // Influence rows average to zero at the estimate (score identity).
    let if1 = model.if1().unwrap();
    let mean = if1.iter().fold(DVector::zeros(3), |acc, r| acc + r) / if1.len() as f64;
    assert!(mean.amax() < 1e-8, "mean IF1 row {}", mean.amax());
}

/// Under a correct censoring model the weighted pair count estimates the
/// cohort size: |Σw/n - 1| < 0.05 at n = 10,000 pairs.
#[test]
fn ipcw_weights_sum_to_cohort_size() {
    let config = baseline(5_000, 104);
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_weibull_ph(&cohort.pairs).unwrap();
    let (_, summary) =
        classify_cohort(&cohort.pairs, TAU, Some(&model), &ClassifyOptions::default()).unwrap();
    let ratio = summary.sum_weights / cohort.pairs.len() as f64;
    assert!((ratio - 1.0).abs() < 0.05, "sum of weights / n = {ratio:.4}");
}

/// Aalen-Johansen估 recovers the lifetime prevalence on censored data.
#[test]
fn aalen_johansen_recovers_lifetime_prevalence() {
    let config = baseline(50_000, 105);
    let cohort = simulate_cohort(&config).unwrap();
    let mut times = Vec::with_capacity(2 * cohort.pairs.len());
    let mut statuses = Vec::with_capacity(2 * cohort.pairs.len());
    for p in &cohort.pairs {
        for k in 0..2 {
            times.push(p.time[k]);
            statuses.push(p.status[k]);
        }
    }
    let cif = aalen_johansen_cif(&times, &statuses, 1).unwrap();
    let f1 = cif.eval(120.0);
    assert!((f1 - 0.065).abs() < 0.006, "AJ lifetime prevalence {f1:.4}");
    // Nondecreasing with the competing bound F1 + F2 <= 1.
    let cif2 = aalen_johansen_cif(&times, &statuses, 2).unwrap();
    assert!(cif.last() + cif2.last() <= 1.0 + 1e-12);
}

/// Two-stage and fixed-weight variances agree closely when censoring is
/// independent with a well-estimated shape (the设计 where the published
/// coverage columns coincide), and the two-stage rows are centered.
#[test]
fn two_stage_variance_close_to_fixed_weight_when_independent() {
    let config = baseline(10_000, 106);
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_weibull_ph(&cohort.pairs).unwrap();
    let f = fit(&ModelSpec::flexible(TAU), &cohort.pairs, Some(&model), &FitOptions::default())
        .unwrap();
    let v2 = f.vcov(liabil::biprobit::VcovChoice::If2).unwrap().clone();
    let v3 = f.vcov(liabil::biprobit::VcovChoice::If3).unwrap().clone();
    for j in 0..f.n_params() {
        let rel = (v3[(j, j)] - v2[(j, j)]).abs() / v2[(j, j)];
        assert!(rel < 0.10, "diagonal {j}: relative difference {rel:.4}");
    }
    let mean = f.if_rows.iter().fold(DVector::zeros(f.n_params()), |acc, r| acc + r)
        / f.n_total as f64;
    assert!(mean.amax() < 1e-6, "mean two-stage row {:.3e}", mean.amax());
}

/// Wald test of equal correlations holds its size under the null.
#[test]
fn wald_test_size_under_null() {
    // No genetic component: ρ_MZ = ρ_DZ = σ²_C.
    let config = SimConfig { sigma_a2: 0.0, sigma_c2: 0.5, ..baseline(600, 107) };
    let n_reps = 500;
    let mut rejections = 0;
    for rep in 0..n_reps {
        let cohort = simulate_cohort_stream(&config, rep).unwrap();
        let f = fit(
            &ModelSpec::flexible(TAU),
            &cohort.pairs,
            None,
            &FitOptions { weighting: WeightScheme::Naive, ..Default::default() },
        )
        .unwrap();
        if f.genetic_effect_test().unwrap().p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / n_reps as f64;
    // 3 binomial SEs around 0.05 at 500 replicates.
    assert!((0.02..=0.08).contains(&rate), "null rejection rate {rate:.3}");
}

/// ... and has power against the published MZ/DZ split at registry scale.
#[test]
fn wald_test_power_at_scale() {
    let config = baseline(10_000, 108);
    for rep in 0..3 {
        let cohort = simulate_cohort_stream(&config, rep).unwrap();
        let model = fit_km(&cohort.pairs, Strata::None, TieBreak::default()).unwrap();
        let f = fit(&ModelSpec::flexible(TAU), &cohort.pairs, Some(&model), &FitOptions::default())
            .unwrap();
        let test = f.genetic_effect_test().unwrap();
        assert!(test.p_value < 0.01, "rep {rep}: p = {}", test.p_value);
    }
}

/// Weighted AIC prefers the generating family: ADE truth selects ADE over
/// ACE in the majority of replicates.
#[test]
fn aic_selects_generating_family() {
    let config = SimConfig {
        sigma_a2: 0.35,
        sigma_c2: 0.0,
        sigma_d2: 0.35,
        ..baseline(1_000, 109)
    };
    let n_reps = 200;
    let mut ade_wins = 0;
    for rep in 0..n_reps {
        let cohort = simulate_cohort_stream(&config, rep).unwrap();
        let model = fit_weibull_ph(&cohort.pairs).unwrap();
        let opts = FitOptions::default();
        let ace = fit(&ModelSpec::polygenic(ComponentSet::ACE, TAU), &cohort.pairs, Some(&model), &opts)
            .unwrap();
        let ade = fit(&ModelSpec::polygenic(ComponentSet::ADE, TAU), &cohort.pairs, Some(&model), &opts)
            .unwrap();
        if ade.aic() < ace.aic() {
            ade_wins += 1;
        }
    }
    assert!(
        ade_wins * 2 > n_reps,
        "ADE selected in {ade_wins}/{n_reps} replicates"
    );
}

/// Saturated-direction dominance: the flexible model's weighted
/// log-likelihood is never undercut by its polygenic submodels.
#[test]
fn flexible_loglik_dominates_submodels() {
    let cohort = simulate_cohort(&baseline(2_000, 110)).unwrap();
    let model = fit_km(&cohort.pairs, Strata::None, TieBreak::default()).unwrap();
    let opts = FitOptions::default();
    let flex =
        fit(&ModelSpec::flexible(TAU), &cohort.pairs, Some(&model), &opts).unwrap();
    for set in [ComponentSet::ACE, ComponentSet::ADE, ComponentSet::AE, ComponentSet::E] {
        let sub = fit(&ModelSpec::polygenic(set, TAU), &cohort.pairs, Some(&model), &opts).unwrap();
        assert!(
            flex.loglik_weighted >= sub.loglik_weighted - 1e-10,
            "{}: {} vs flexible {}",
            set.label(),
            sub.loglik_weighted,
            flex.loglik_weighted
        );
    }
}

/// Mapping round trip: correlations implied by variance components are
/// recovered by a flexible fit on data generated from those components.
#[test]
fn polygenic_round_trip_through_flexible_fit() {
    let config = SimConfig { sigma_a2: 0.5, sigma_c2: 0.25, ..baseline(8_000, 111) };
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_weibull_ph(&cohort.pairs).unwrap();
    let f = fit(&ModelSpec::flexible(TAU), &cohort.pairs, Some(&model), &FitOptions::default())
        .unwrap();
    let m = measures_from_fit(&f, None).unwrap();
    assert!(m.rho_mz.contains(0.75), "rho_mz {:?}", m.rho_mz);
    assert!(m.rho_dz.contains(0.50), "rho_dz {:?}", m.rho_dz);
}

/// MZ exceeds DZ tetrachoric correlation on data with a genetic
/// component, by more than 3 MC standard errors at n = 10,000 pairs.
#[test]
fn mz_correlation_exceeds_dz_with_genetics() {
    let cohort = simulate_cohort(&baseline(10_000, 112)).unwrap();
    let f = fit(
        &ModelSpec::flexible(TAU),
        &cohort.pairs,
        None,
        &FitOptions { weighting: WeightScheme::Naive, ..Default::default() },
    )
    .unwrap();
    // Compare on the atanh scale where the fit is parameterized.
    let diff = f.theta[1] - f.theta[2];
    let v = f.vcov_preferred();
    let se = (v[(1, 1)] + v[(2, 2)] - 2.0 * v[(1, 2)]).sqrt();
    assert!(diff > 3.0 * se, "atanh-scale difference {diff:.4}, se {se:.4}");
}

/// Delta-method interval widths shrink like 1/sqrt(n).
#[test]
fn heritability_interval_shrinks_with_sample_size() {
    let mut widths = Vec::new();
    for (i, n) in [2_000usize, 8_000, 32_000].iter().enumerate() {
        let mut avg = 0.0;
        let reps = 5;
        for rep in 0..reps {
            let config = baseline(*n / 2, 113 + i as u64);
            let cohort = simulate_cohort_stream(&config, rep).unwrap();
            let f = fit(
                &ModelSpec::polygenic(ComponentSet::ACE, TAU),
                &cohort.pairs,
                None,
                &FitOptions { weighting: WeightScheme::Naive, ..Default::default() },
            )
            .unwrap();
            let h2 = polygenic_estimate(&f).unwrap().h2;
            avg += h2.upper - h2.lower;
        }
        widths.push(avg / reps as f64);
    }
    for w in widths.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            (1.5..=2.5).contains(&ratio),
            "width ratio across 4x sample size: {ratio:.3} ({widths:?})"
        );
    }
}

/// The fitted prevalence curve tracks the true marginal cumulative
/// incidence over a tau grid.
#[test]
fn timegrid_prevalence_tracks_true_cif() {
    let config = baseline(10_000, 114);
    let cohort = simulate_cohort(&config).unwrap();
    let model = fit_km(&cohort.pairs, Strata::None, TieBreak::default()).unwrap();
    let taus: Vec<f64> = (0..10).map(|i| 70.0 + 5.0 * i as f64).collect();
    let rows = timegrid(&cohort.pairs, Some(&model), &taus, &TimegridOptions::default()).unwrap();

    // True F1(t) by integrating the conditional incidence over the pair
    // random effect.
    let q1 = norm_quantile(config.p1).unwrap();
    let sd_e1 = config.sigma_e2().sqrt();
    let sd_eta = (config.sigma_a2 + config.sigma_c2).sqrt();
    let true_f1 = |t: f64| {
        let alpha = -(config.alpha_scale - config.alpha_rate * t).exp();
        common::integrate_gl(
            |eta| {
                norm_cdf((alpha + q1 + eta) / sd_e1)
                    * (-0.5 * (eta / sd_eta).powi(2)).exp()
                    / (sd_eta * (std::f64::consts::TAU).sqrt())
            },
            -6.0 * sd_eta,
            6.0 * sd_eta,
            200,
        )
    };

    let mut hits = 0;
    let mut total = 0;
    for row in &rows {
        let Some(m) = &row.measures else { continue };
        total += 1;
        if m.f1.contains(true_f1(row.tau)) {
            hits += 1;
        }
    }
    assert!(total >= 9, "grid points fitted: {total}");
    assert!(
        hits * 10 >= total * 9,
        "true CIF inside the band at {hits}/{total} grid points"
    );
}

/// Concordance bands keep MZ above DZ on genetic data across the grid
/// (checked as interval overlap, not strict ordering).
#[test]
fn concordance_ordering_over_grid() {
    let cohort = simulate_cohort(&baseline(10_000, 115)).unwrap();
    let model = fit_km(&cohort.pairs, Strata::None, TieBreak::default()).unwrap();
    let taus = [70.0, 80.0, 90.0, 100.0];
    let rows = timegrid(&cohort.pairs, Some(&model), &taus, &TimegridOptions::default()).unwrap();
    for row in &rows {
        let Some(m) = &row.measures else { continue };
        assert!(
            m.concordance_mz.upper >= m.concordance_dz.lower,
            "tau {}: MZ band entirely below DZ band",
            row.tau
        );
    }
}

/// Cause-1 status flows through classification into measures: fully
/// uncensored designs make the naive and IPCW fits identical.
#[test]
fn naive_equals_ipcw_without_censoring() {
    let config = SimConfig { log_lambda: -12.0, ..baseline(3_000, 116) };
    let cohort = simulate_cohort(&config).unwrap();
    assert!(cohort.pairs.iter().all(|p| p.status.iter().all(|s| *s != EventStatus::Censored)));
    let naive = fit(
        &ModelSpec::flexible(TAU),
        &cohort.pairs,
        None,
        &FitOptions { weighting: WeightScheme::Naive, ..Default::default() },
    )
    .unwrap();
    let ipcw = fit(&ModelSpec::flexible(TAU), &cohort.pairs, None, &FitOptions::default()).unwrap();
    assert!((naive.theta.clone() - ipcw.theta.clone()).amax() < 1e-8);
    assert!((naive.loglik_weighted - ipcw.loglik_weighted).abs() < 1e-8);
}

/// Strict-mode weighting matches the hand-computed reciprocal of the
/// censoring survival at the pair's later raw time.
#[test]
fn strict_mode_weights_match_survival_reciprocal() {
    let config = baseline(500, 117);
    let cohort = simulate_cohort(&config).unwrap();
    let model = CensoringModel::weibull_known(config.log_lambda, config.log_nu, &[]);
    let opts = ClassifyOptions {
        mode: liabil::data::ClassifyMode::StrictPaper,
        weight_cap: None,
    };
    let (classified, _) = classify_cohort(&cohort.pairs, TAU, Some(&model), &opts).unwrap();
    for cp in classified.iter().filter(|c| c.usable) {
        let rec = &cohort.pairs[cp.pair_index];
        let expected = model
            .eval_gc_pair(rec.time[0], rec.time[1], &[], Zygosity::Mz)
            .unwrap()
            .recip();
        assert!((cp.weight - expected).abs() < 1e-12);
        assert!(cp.weight >= 1.0);
    }
}
