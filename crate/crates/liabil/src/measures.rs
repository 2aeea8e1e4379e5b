//! Dependence measures at a horizon τ and over a τ-grid.
//!
//! From a fitted model, the prevalence `F₁ = Φ(μ)` at a reference
//! covariate vector and the zygosity concordances
//! `𝒞 = Φ_ρ(Φ⁻¹(F₁), Φ⁻¹(F₁); ρ)` yield
//!
//! * casewise concordance `𝒞/F₁` (co-twin risk given an affected twin),
//! * relative recurrence risk ratio `λ_R = 𝒞/F₁²`,
//! * log odds ratio of the implied 2×2 table.
//!
//! `F₁² ≤ 𝒞 ≤ F₁` brackets every set between the independence and
//! perfect-dependence benchmarks (for nonnegative ρ). Intervals are
//! delta-method on bounded-respecting scales: logit for probabilities,
//! log for λ_R, identity for the log odds ratio, atanh for correlations.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::biprobit::{
    fit, ComponentSet, FitOptions, FitResult, ModelKind, ModelSpec, VcovChoice,
};
use crate::censoring::CensoringModel;
use crate::data::{classify_cohort, PairRecord, Zygosity};
use crate::error::{Error, Result};
use crate::intervals::EstimateCi;
use crate::normal::{bvn_cdf, bvn_cdf_grad, norm_cdf, phi, BvnArgs};
use crate::polygenic::{polygenic_estimate, PolygenicEstimate};

/// Dependence measures at one horizon.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureSet {
    pub tau: f64,
    pub f1: EstimateCi,
    pub concordance_mz: EstimateCi,
    pub concordance_dz: EstimateCi,
    pub casewise_mz: EstimateCi,
    pub casewise_dz: EstimateCi,
    pub lambda_mz: EstimateCi,
    pub lambda_dz: EstimateCi,
    pub log_or_mz: EstimateCi,
    pub log_or_dz: EstimateCi,
    pub rho_mz: EstimateCi,
    pub rho_dz: EstimateCi,
}

impl MeasureSet {
    pub fn by_zygosity(&self, zygosity: Zygosity) -> [(&'static str, &EstimateCi); 5] {
        match zygosity {
            Zygosity::Mz => [
                ("concordance", &self.concordance_mz),
                ("casewise", &self.casewise_mz),
                ("lambda_r", &self.lambda_mz),
                ("log_or", &self.log_or_mz),
                ("rho", &self.rho_mz),
            ],
            Zygosity::Dz => [
                ("concordance", &self.concordance_dz),
                ("casewise", &self.casewise_dz),
                ("lambda_r", &self.lambda_dz),
                ("log_or", &self.log_or_dz),
                ("rho", &self.rho_dz),
            ],
        }
    }
}

/// Derived measures from a converged fit, evaluated at `x_ref`
/// (the fit's weighted covariate mean when `None`).
pub fn measures_from_fit(fit: &FitResult, x_ref: Option<&[f64]>) -> Result<MeasureSet> {
    measures_from_fit_with(fit, x_ref, VcovChoice::Preferred)
}

/// Same as [`measures_from_fit`] with an explicit covariance choice.
pub fn measures_from_fit_with(
    fit: &FitResult,
    x_ref: Option<&[f64]>,
    vcov_choice: VcovChoice,
) -> Result<MeasureSet> {
    if let ModelKind::FlexibleBiprobit { zygosity_beta: true } = fit.design.spec.kind {
        return Err(Error::Unsupported(
            "measures are reported from shared-marginal models; refit without \
             zygosity-specific coefficients"
                .into(),
        ));
    }
    let x_ref = match x_ref {
        Some(x) => x.to_vec(),
        None => fit.x_ref_default.clone(),
    };
    if x_ref.len() + 1 != fit.design.x_dim {
        return Err(Error::Validation(format!(
            "reference covariate vector has length {}, expected {}",
            x_ref.len(),
            fit.design.x_dim - 1
        )));
    }
    let x_aug: Vec<f64> = std::iter::once(1.0).chain(x_ref.iter().copied()).collect();

    // Shared marginal: geometry at (x_ref, x_ref) gives μ = μ₁ = μ₂ and ρ
    // per zygosity, with exact θ-Jacobians.
    let geo_mz = fit.design.geometry(&fit.theta, Zygosity::Mz, &x_aug, &x_aug);
    let geo_dz = fit.design.geometry(&fit.theta, Zygosity::Dz, &x_aug, &x_aug);
    let mu = geo_mz.mu1;
    let j_mu = geo_mz.j_mu1.clone();

    let f1 = norm_cdf(mu);
    if f1 <= 0.0 {
        return Err(Error::Domain(
            "prevalence estimate is zero; relative recurrence risk is undefined".into(),
        ));
    }
    let grad_f1 = phi(mu) * &j_mu;
    let v = fit.vcov(vcov_choice)?;
    let se = |g: &DVector<f64>| (g.dot(&(v * g))).max(0.0).sqrt();

    let per_zyg = |rho: f64, j_rho: &DVector<f64>| -> Result<ZygMeasures> {
        let args = BvnArgs::new(mu, mu, rho)?;
        let conc = bvn_cdf(args);
        let g = bvn_cdf_grad(args);
        // μ enters both limits.
        let grad_c = (g.d_da + g.d_db) * &j_mu + g.d_drho * j_rho;

        let casewise = conc / f1;
        let grad_casewise = &grad_c / f1 - (conc / (f1 * f1)) * &grad_f1;

        let lambda = conc / (f1 * f1);
        let grad_lambda = &grad_c / (f1 * f1) - (2.0 * conc / f1.powi(3)) * &grad_f1;

        // 2x2 table: P11 = 𝒞, P10 = P01 = F₁ - 𝒞, P00 = 1 - 2F₁ + 𝒞.
        let p10 = (f1 - conc).max(1e-300);
        let p00 = (1.0 - 2.0 * f1 + conc).max(1e-300);
        let log_or = (conc * p00).ln() - 2.0 * p10.ln();
        let dlor_dc = 1.0 / conc + 1.0 / p00 + 2.0 / p10;
        let dlor_df1 = -2.0 / p00 - 2.0 / p10;
        let grad_log_or = dlor_dc * &grad_c + dlor_df1 * &grad_f1;

        Ok(ZygMeasures {
            concordance: EstimateCi::logit(conc, se(&grad_c)),
            casewise: EstimateCi::logit(casewise, se(&grad_casewise)),
            lambda: EstimateCi::log_scale(lambda, se(&grad_lambda)),
            log_or: EstimateCi::identity(log_or, se(&grad_log_or)),
            rho: EstimateCi::atanh_scale(rho, se(j_rho)),
        })
    };

    let mz = per_zyg(geo_mz.rho, &geo_mz.j_rho)?;
    let dz = per_zyg(geo_dz.rho, &geo_dz.j_rho)?;
    Ok(MeasureSet {
        tau: fit.design.spec.tau,
        f1: EstimateCi::logit(f1, se(&grad_f1)),
        concordance_mz: mz.concordance,
        concordance_dz: dz.concordance,
        casewise_mz: mz.casewise,
        casewise_dz: dz.casewise,
        lambda_mz: mz.lambda,
        lambda_dz: dz.lambda,
        log_or_mz: mz.log_or,
        log_or_dz: dz.log_or,
        rho_mz: mz.rho,
        rho_dz: dz.rho,
    })
}

struct ZygMeasures {
    concordance: EstimateCi,
    casewise: EstimateCi,
    lambda: EstimateCi,
    log_or: EstimateCi,
    rho: EstimateCi,
}

/// One grid row: flexible-model measures plus ACE and ADE decompositions.
/// Fit failures are recorded per row, never fatal to the grid.
#[derive(Debug, Clone, Serialize)]
pub struct TimegridRow {
    pub tau: f64,
    pub measures: Option<MeasureSet>,
    pub ace: Option<PolygenicEstimate>,
    pub ade: Option<PolygenicEstimate>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TimegridOptions {
    /// Minimum usable concordant-affected pairs per zygosity a grid point
    /// needs before fitting is attempted.
    pub min_concordant: usize,
    pub x_ref: Option<Vec<f64>>,
    pub fit: FitOptions,
}

impl Default for TimegridOptions {
    fn default() -> Self {
        Self { min_concordant: 5, x_ref: None, fit: FitOptions::default() }
    }
}

/// Independent fits at each τ of a strictly increasing grid.
pub fn timegrid(
    data: &[PairRecord],
    censoring: Option<&CensoringModel>,
    taus: &[f64],
    opts: &TimegridOptions,
) -> Result<Vec<TimegridRow>> {
    if taus.is_empty() {
        return Err(Error::Validation("tau grid is empty".into()));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("tau grid must be strictly increasing".into()));
    }
    taus.par_iter()
        .map(|&tau| Ok(grid_point(data, censoring, tau, opts)))
        .collect()
}

fn grid_point(
    data: &[PairRecord],
    censoring: Option<&CensoringModel>,
    tau: f64,
    opts: &TimegridOptions,
) -> TimegridRow {
    let mut flags = Vec::new();

    // Concordant-pair floor per zygosity before any fitting.
    match classify_cohort(data, tau, censoring, &opts.fit.classify) {
        Ok((classified, _)) => {
            let mut concordant = [0usize; 2];
            for cp in &classified {
                if cp.usable && cp.y[0] && cp.y[1] {
                    concordant[(data[cp.pair_index].zygosity == Zygosity::Dz) as usize] += 1;
                }
            }
            if concordant[0] < opts.min_concordant || concordant[1] < opts.min_concordant {
                flags.push(format!(
                    "skipped: concordant pairs below floor (MZ {}, DZ {}, floor {})",
                    concordant[0], concordant[1], opts.min_concordant
                ));
                return TimegridRow { tau, measures: None, ace: None, ade: None, flags };
            }
        }
        Err(e) => {
            flags.push(format!("classification failed: {e}"));
            return TimegridRow { tau, measures: None, ace: None, ade: None, flags };
        }
    }

    let run_fit = |spec: ModelSpec| -> std::result::Result<FitResult, String> {
        fit(&spec, data, censoring, &opts.fit).map_err(|e| e.to_string())
    };

    let measures = match run_fit(ModelSpec::flexible(tau)) {
        Ok(f) => {
            if f.flags.boundary {
                flags.push("flexible: boundary".into());
            }
            match measures_from_fit(&f, opts.x_ref.as_deref()) {
                Ok(m) => Some(m),
                Err(e) => {
                    flags.push(format!("measures failed: {e}"));
                    None
                }
            }
        }
        Err(e) => {
            flags.push(format!("flexible fit failed: {e}"));
            None
        }
    };
    let mut poly = |set: ComponentSet, label: &str| -> Option<PolygenicEstimate> {
        match run_fit(ModelSpec::polygenic(set, tau)) {
            Ok(f) => {
                if f.flags.boundary {
                    flags.push(format!("{label}: boundary"));
                }
                match polygenic_estimate(&f) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        flags.push(format!("{label} decomposition failed: {e}"));
                        None
                    }
                }
            }
            Err(e) => {
                flags.push(format!("{label} fit failed: {e}"));
                None
            }
        }
    };
    let ace = poly(ComponentSet::ACE, "ACE");
    let ade = poly(ComponentSet::ADE, "ADE");
    TimegridRow { tau, measures, ace, ade, flags }
}

/// Plot-ready long-format curve table:
/// `tau, estimate, lower, upper, quantity, zygosity`.
pub fn write_curves_csv<W: std::io::Write>(rows: &[TimegridRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tau", "estimate", "lower", "upper", "quantity", "zygosity"])?;
    let fmt = crate::fmt::sig6;
    let mut emit = |tau: f64, est: &EstimateCi, quantity: &str, zyg: &str| -> Result<()> {
        w.write_record([
            fmt(tau),
            fmt(est.estimate),
            fmt(est.lower),
            fmt(est.upper),
            quantity.to_string(),
            zyg.to_string(),
        ])?;
        Ok(())
    };
    for row in rows {
        if let Some(m) = &row.measures {
            emit(row.tau, &m.f1, "f1", "all")?;
            for zyg in [Zygosity::Mz, Zygosity::Dz] {
                for (name, est) in m.by_zygosity(zyg) {
                    emit(row.tau, est, name, zyg.label())?;
                }
            }
        }
        if let Some(p) = &row.ace {
            emit(row.tau, &p.h2, "h2_ace", "all")?;
        }
        if let Some(p) = &row.ade {
            emit(row.tau, &p.h2, "h2_ade", "all")?;
        }
    }
    w.flush()?;
    Ok(())
}
