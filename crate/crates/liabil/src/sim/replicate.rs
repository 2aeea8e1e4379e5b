//! Replication studies: repeated simulate-fit cycles summarized as mean
//! estimate (Av.), empirical 95% coverage (Cv.), and MSE×100 per estimand
//! against the generator's closed-form truths.
//!
//! Estimator arms:
//!
//! * `naive`     — censoring ignored (weights 1, censored members count
//!                 as unaffected),
//! * `weibull1`  — Weibull IPCW, intervals from the fixed-weight sandwich,
//! * `weibull2`  — same fit, intervals from the two-stage covariance that
//!                 propagates censoring-model uncertainty,
//! * `km`        — Kaplan-Meier IPCW, fixed-weight sandwich intervals.
//!
//! Replicates run on separate RNG streams, so results are reproducible
//! for a given seed regardless of thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::biprobit::{
    fit, ComponentSet, FitOptions, ModelSpec, VcovChoice, WeightScheme,
};
use crate::censoring::{fit_km, fit_weibull_ph, CensoringModel, Strata, TieBreak};
use crate::data::PairRecord;
use crate::error::{Error, Result};
use crate::intervals::EstimateCi;
use crate::measures::measures_from_fit_with;
use crate::polygenic::polygenic_estimate_with;

use super::{simulate_cohort_stream, SimConfig, TrueValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArm {
    Naive,
    Weibull1,
    Weibull2,
    Km,
}

impl EstimatorArm {
    pub const ALL: [EstimatorArm; 4] =
        [EstimatorArm::Naive, EstimatorArm::Weibull1, EstimatorArm::Weibull2, EstimatorArm::Km];

    pub fn label(&self) -> &'static str {
        match self {
            EstimatorArm::Naive => "naive",
            EstimatorArm::Weibull1 => "weibull1",
            EstimatorArm::Weibull2 => "weibull2",
            EstimatorArm::Km => "km",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Some(EstimatorArm::Naive),
            "weibull1" => Some(EstimatorArm::Weibull1),
            "weibull2" => Some(EstimatorArm::Weibull2),
            "km" => Some(EstimatorArm::Km),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    F1,
    ConcordanceMz,
    ConcordanceDz,
    RhoMz,
    RhoDz,
    LambdaMz,
    LambdaDz,
    LogOrMz,
    LogOrDz,
    SigmaA2,
    SigmaC2,
    SigmaD2,
    SigmaE2,
}

impl Estimand {
    pub fn label(&self) -> &'static str {
        match self {
            Estimand::F1 => "f1",
            Estimand::ConcordanceMz => "concordance_mz",
            Estimand::ConcordanceDz => "concordance_dz",
            Estimand::RhoMz => "rho_mz",
            Estimand::RhoDz => "rho_dz",
            Estimand::LambdaMz => "lambda_r_mz",
            Estimand::LambdaDz => "lambda_r_dz",
            Estimand::LogOrMz => "log_or_mz",
            Estimand::LogOrDz => "log_or_dz",
            Estimand::SigmaA2 => "sigma_a2",
            Estimand::SigmaC2 => "sigma_c2",
            Estimand::SigmaD2 => "sigma_d2",
            Estimand::SigmaE2 => "sigma_e2",
        }
    }

    pub fn truth(&self, t: &TrueValues) -> f64 {
        match self {
            Estimand::F1 => t.f1,
            Estimand::ConcordanceMz => t.concordance_mz,
            Estimand::ConcordanceDz => t.concordance_dz,
            Estimand::RhoMz => t.rho_mz,
            Estimand::RhoDz => t.rho_dz,
            Estimand::LambdaMz => t.lambda_mz,
            Estimand::LambdaDz => t.lambda_dz,
            Estimand::LogOrMz => t.log_or_mz,
            Estimand::LogOrDz => t.log_or_dz,
            Estimand::SigmaA2 => t.sigma_a2,
            Estimand::SigmaC2 => t.sigma_c2,
            Estimand::SigmaD2 => t.sigma_d2,
            Estimand::SigmaE2 => t.sigma_e2,
        }
    }

    fn list_for(components: &ComponentSet) -> Vec<Estimand> {
        let mut v = vec![
            Estimand::F1,
            Estimand::ConcordanceMz,
            Estimand::ConcordanceDz,
            Estimand::RhoMz,
            Estimand::RhoDz,
            Estimand::LambdaMz,
            Estimand::LambdaDz,
            Estimand::LogOrMz,
            Estimand::LogOrDz,
        ];
        if components.additive {
            v.push(Estimand::SigmaA2);
        }
        if components.shared_env {
            v.push(Estimand::SigmaC2);
        }
        if components.dominance {
            v.push(Estimand::SigmaD2);
        }
        v.push(Estimand::SigmaE2);
        v
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationOptions {
    pub n_reps: usize,
    /// Horizon the binary outcome is classified at.
    pub tau: f64,
    pub estimators: Vec<EstimatorArm>,
    /// Polygenic decomposition fitted per replicate.
    pub components: ComponentSet,
    pub fit: FitOptions,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        Self {
            n_reps: 200,
            tau: 120.0,
            estimators: EstimatorArm::ALL.to_vec(),
            components: ComponentSet::ACE,
            fit: FitOptions::default(),
        }
    }
}

/// One summary line: average estimate, empirical coverage of the 95%
/// interval, and MSE×100 against the analytic truth.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub arm: EstimatorArm,
    pub estimand: Estimand,
    pub truth: f64,
    pub mean: f64,
    pub coverage: f64,
    pub mse_x100: f64,
    pub n_ok: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationSummary {
    pub n_reps: usize,
    pub tau: f64,
    pub truth: TrueValues,
    pub rows: Vec<SummaryRow>,
    /// Failed replicates per arm (excluded from the averages).
    pub failures: Vec<(EstimatorArm, usize)>,
}

impl ReplicationSummary {
    pub fn row(&self, arm: EstimatorArm, estimand: Estimand) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.arm == arm && r.estimand == estimand)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["arm", "estimand", "true", "av", "cv", "mse_x100", "n_ok"])?;
        let fmt = crate::fmt::sig6;
        for r in &self.rows {
            w.write_record([
                r.arm.label().to_string(),
                r.estimand.label().to_string(),
                fmt(r.truth),
                fmt(r.mean),
                fmt(r.coverage),
                fmt(r.mse_x100),
                r.n_ok.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Point estimate and interval for every estimand produced by one arm in
/// one replicate.
type ArmEstimates = Vec<(Estimand, EstimateCi)>;

fn arm_estimates(
    data: &[PairRecord],
    tau: f64,
    censoring: Option<&CensoringModel>,
    weighting: WeightScheme,
    vcov_choice: VcovChoice,
    components: &ComponentSet,
    base: &FitOptions,
) -> Result<ArmEstimates> {
    let opts = FitOptions { weighting, classify: base.classify.clone(), ..FitOptions::default() };

    let flex = fit(&ModelSpec::flexible(tau), data, censoring, &opts)?;
    let m = measures_from_fit_with(&flex, None, vcov_choice)?;

    let poly = fit(&ModelSpec::polygenic(*components, tau), data, censoring, &opts)?;
    let p = polygenic_estimate_with(&poly, vcov_choice)?;

    let mut out: ArmEstimates = vec![
        (Estimand::F1, m.f1),
        (Estimand::ConcordanceMz, m.concordance_mz),
        (Estimand::ConcordanceDz, m.concordance_dz),
        (Estimand::RhoMz, m.rho_mz),
        (Estimand::RhoDz, m.rho_dz),
        (Estimand::LambdaMz, m.lambda_mz),
        (Estimand::LambdaDz, m.lambda_dz),
        (Estimand::LogOrMz, m.log_or_mz),
        (Estimand::LogOrDz, m.log_or_dz),
    ];
    if components.additive {
        out.push((Estimand::SigmaA2, p.prop_a));
    }
    if components.shared_env {
        out.push((Estimand::SigmaC2, p.prop_c));
    }
    if components.dominance {
        out.push((Estimand::SigmaD2, p.prop_d));
    }
    out.push((Estimand::SigmaE2, p.prop_e));
    Ok(out)
}

/// Everything one replicate produced, per requested arm.
struct RepResult {
    by_arm: Vec<(EstimatorArm, Result<ArmEstimates>)>,
}

fn run_replicate(config: &SimConfig, rep: usize, opts: &ReplicationOptions) -> Result<RepResult> {
    let cohort = simulate_cohort_stream(config, rep as u64)?;
    let data = &cohort.pairs;
    let comps = &opts.components;

    let wants = |arm: EstimatorArm| opts.estimators.contains(&arm);
    let mut by_arm = Vec::new();

    if wants(EstimatorArm::Naive) {
        let r = arm_estimates(
            data,
            opts.tau,
            None,
            WeightScheme::Naive,
            VcovChoice::If2,
            comps,
            &opts.fit,
        );
        by_arm.push((EstimatorArm::Naive, r));
    }
    if wants(EstimatorArm::Weibull1) || wants(EstimatorArm::Weibull2) {
        let weibull = fit_weibull_ph(data);
        match weibull {
            Ok(model) => {
                if wants(EstimatorArm::Weibull1) {
                    let r = arm_estimates(
                        data,
                        opts.tau,
                        Some(&model),
                        WeightScheme::Ipcw,
                        VcovChoice::If2,
                        comps,
                        &opts.fit,
                    );
                    by_arm.push((EstimatorArm::Weibull1, r));
                }
                if wants(EstimatorArm::Weibull2) {
                    let r = arm_estimates(
                        data,
                        opts.tau,
                        Some(&model),
                        WeightScheme::Ipcw,
                        VcovChoice::If3,
                        comps,
                        &opts.fit,
                    );
                    by_arm.push((EstimatorArm::Weibull2, r));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                if wants(EstimatorArm::Weibull1) {
                    by_arm.push((EstimatorArm::Weibull1, Err(Error::Validation(msg.clone()))));
                }
                if wants(EstimatorArm::Weibull2) {
                    by_arm.push((EstimatorArm::Weibull2, Err(Error::Validation(msg))));
                }
            }
        }
    }
    if wants(EstimatorArm::Km) {
        let r = fit_km(data, Strata::None, TieBreak::default()).and_then(|model| {
            arm_estimates(
                data,
                opts.tau,
                Some(&model),
                WeightScheme::Ipcw,
                VcovChoice::If2,
                comps,
                &opts.fit,
            )
        });
        by_arm.push((EstimatorArm::Km, r));
    }
    Ok(RepResult { by_arm })
}

/// Run the full study. Replicates are independent and parallelize over
/// the global thread pool; aggregation order is fixed by replicate index.
pub fn run_replication_study(
    config: &SimConfig,
    opts: &ReplicationOptions,
) -> Result<ReplicationSummary> {
    if opts.n_reps < 2 {
        return Err(Error::Validation("replication study needs at least 2 replicates".into()));
    }
    config.validate()?;
    let truth = config.truth();

    let reps: Vec<RepResult> = (0..opts.n_reps)
        .into_par_iter()
        .map(|rep| run_replicate(config, rep, opts))
        .collect::<Result<_>>()?;

    let estimands = Estimand::list_for(&opts.components);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for arm in &opts.estimators {
        let mut n_failed = 0usize;
        let mut acc: Vec<(f64, f64, usize, usize)> =
            vec![(0.0, 0.0, 0, 0); estimands.len()]; // sum, sq err, covered, n
        for rep in &reps {
            let Some((_, result)) = rep.by_arm.iter().find(|(a, _)| a == arm) else {
                continue;
            };
            match result {
                Ok(ests) => {
                    for (i, target) in estimands.iter().enumerate() {
                        if let Some((_, ci)) = ests.iter().find(|(e, _)| e == target) {
                            let truth_v = target.truth(&truth);
                            acc[i].0 += ci.estimate;
                            acc[i].1 += (ci.estimate - truth_v).powi(2);
                            acc[i].2 += ci.contains(truth_v) as usize;
                            acc[i].3 += 1;
                        }
                    }
                }
                Err(_) => n_failed += 1,
            }
        }
        for (i, est) in estimands.iter().enumerate() {
            let (sum, sq, covered, n) = acc[i];
            if n == 0 {
                continue;
            }
            rows.push(SummaryRow {
                arm: *arm,
                estimand: *est,
                truth: est.truth(&truth),
                mean: sum / n as f64,
                coverage: covered as f64 / n as f64,
                mse_x100: 100.0 * sq / n as f64,
                n_ok: n,
            });
        }
        failures.push((*arm, n_failed));
    }
    Ok(ReplicationSummary { n_reps: opts.n_reps, tau: opts.tau, truth, rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_study_runs_and_summarizes() {
        let config = SimConfig { n_mz: 400, n_dz: 400, seed: 5, ..SimConfig::default() };
        let opts = ReplicationOptions {
            n_reps: 3,
            estimators: vec![EstimatorArm::Naive, EstimatorArm::Weibull1, EstimatorArm::Weibull2],
            ..Default::default()
        };
        let summary = run_replication_study(&config, &opts).unwrap();
        let f1 = summary.row(EstimatorArm::Weibull1, Estimand::F1).unwrap();
        assert!(f1.n_ok >= 2, "usable replicates {}", f1.n_ok);
        assert!(f1.mean > 0.0 && f1.mean < 1.0);
        // weibull1 and weibull2 share point estimates.
        let f1b = summary.row(EstimatorArm::Weibull2, Estimand::F1).unwrap();
        assert_eq!(f1.mean, f1b.mean);
        // naive biased downward on this heavily censored design
        let naive = summary.row(EstimatorArm::Naive, Estimand::F1).unwrap();
        assert!(naive.mean < f1.mean);
        let mut buf = Vec::new();
        summary.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("arm,estimand,true,av,cv,mse_x100,n_ok"));
    }

    #[test]
    fn rejects_degenerate_rep_count() {
        let config = SimConfig::default();
        let opts = ReplicationOptions { n_reps: 1, ..Default::default() };
        assert!(run_replication_study(&config, &opts).is_err());
    }
}
