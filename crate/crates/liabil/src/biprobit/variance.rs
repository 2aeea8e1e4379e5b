//! Sandwich and two-stage variance estimation, and Wald tests of linear
//! restrictions.
//!
//! With known weights the estimator admits the iid decomposition
//! θ̂ - θ₀ ≈ Σᵢ H⁻¹Uᵢ with H the total expected information and Uᵢ the
//! weighted per-pair score. When the weights come from a fitted Weibull
//! censoring model with parameter estimator γ̂ ≈ γ₀ + Σᵢ IF₁ᵢ, the
//! two-stage rows add the propagation term
//!
//! ```text
//! rows₃ᵢ = H⁻¹Uᵢ + H⁻¹ D · IF₁ᵢ,   D = Σᵢ ∂Uᵢ/∂γ,
//! ```
//!
//! where ∂Uᵢ/∂γ has closed form because the weight is the reciprocal of a
//! Weibull survival: ∂wᵢ/∂γ = wᵢ Λᵢ (ν, ν·log(λ t*ᵢ), zᵢ).

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::censoring::CensoringModel;
use crate::error::{Error, Result};

use super::{per_pair_scores, CohortDesign, FitResult};

/// Two-stage covariance and per-pair rows; `None` when the censoring model
/// carries no influence rows (Kaplan-Meier, or known parameters).
pub(crate) fn two_stage(
    cohort: &CohortDesign,
    theta: &DVector<f64>,
    model: &CensoringModel,
    hinv: &DMatrix<f64>,
    rows2: &[DVector<f64>],
) -> Result<Option<(DMatrix<f64>, Vec<DVector<f64>>)>> {
    let (Some(gamma), Some(if1)) = (model.gamma(), model.if1()) else {
        return Ok(None);
    };
    if if1.len() != cohort.n_total {
        return Err(Error::Validation(format!(
            "censoring model influence rows cover {} pairs but the outcome fit has {}; \
             fit both models on the same dataset",
            if1.len(),
            cohort.n_total
        )));
    }
    let k = theta.len();
    let q = gamma.len();
    let nu = gamma[1].exp();

    // D = Σ_i U_i ⊗ Λ_i (ν, ν u_i, z_i): γ-derivative of the summed score.
    let score_rows = per_pair_scores(cohort, theta);
    let mut d = DMatrix::<f64>::zeros(k, q);
    for pair in &cohort.pairs {
        if pair.t_star <= 0.0 {
            continue; // zero cumulative hazard, weight insensitive to γ
        }
        let lambda_cum = -pair.gc.ln();
        if lambda_cum == 0.0 {
            continue;
        }
        let u = gamma[0] + pair.t_star.ln();
        let mut dw = DVector::zeros(q);
        dw[0] = nu;
        dw[1] = nu * u;
        for (j, zv) in pair.z.iter().enumerate() {
            dw[2 + j] = *zv;
        }
        dw *= lambda_cum;
        d.ger(1.0, &score_rows[pair.pair_index], &dw, 1.0);
    }

    let correction = hinv * d; // maps γ-increments into θ-increments
    let mut vcov = DMatrix::zeros(k, k);
    let mut rows = Vec::with_capacity(cohort.n_total);
    for (i, r2) in rows2.iter().enumerate() {
        let r3 = r2 + &correction * &if1[i];
        vcov.ger(1.0, &r3, &r3, 1.0);
        rows.push(r3);
    }
    Ok(Some((vcov, rows)))
}

/// Wald test of the linear restriction `R θ = 0`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Test `R θ̂ = 0` against a chi-square with rank(R) degrees of freedom,
/// using the fit's preferred covariance (two-stage when available).
pub fn wald_test(fit: &FitResult, r: &DMatrix<f64>) -> Result<WaldTest> {
    if r.nrows() == 0 {
        return Err(Error::Validation("restriction matrix has no rows".into()));
    }
    if r.ncols() != fit.n_params() {
        return Err(Error::Validation(format!(
            "restriction has {} columns but the model has {} parameters",
            r.ncols(),
            fit.n_params()
        )));
    }
    if r.rank(1e-10) < r.nrows() {
        return Err(Error::Validation("restriction matrix must have full row rank".into()));
    }
    let v = fit.vcov_preferred();
    let rv = r * v * r.transpose();
    let rtheta = r * &fit.theta;
    let sol = rv
        .lu()
        .solve(&rtheta)
        .ok_or_else(|| Error::Singular("restricted covariance R V Rᵀ".into()))?;
    let statistic = rtheta.dot(&sol);
    let df = r.nrows();
    let chi = ChiSquared::new(df as f64)
        .map_err(|e| Error::Domain(format!("chi-square reference: {e}")))?;
    let p_value = chi.sf(statistic.max(0.0));
    Ok(WaldTest { statistic, df, p_value })
}

impl FitResult {
    /// Restriction `ρ_MZ = ρ_DZ` (no genetic component) for flexible fits.
    pub fn genetic_effect_test(&self) -> Result<WaldTest> {
        let (Some(i_mz), Some(i_dz)) = (
            self.design.rho_index(crate::data::Zygosity::Mz),
            self.design.rho_index(crate::data::Zygosity::Dz),
        ) else {
            return Err(Error::Unsupported(
                "the correlation homogeneity test needs a flexible biprobit fit".into(),
            ));
        };
        let mut r = DMatrix::zeros(1, self.n_params());
        r[(0, i_mz)] = 1.0;
        r[(0, i_dz)] = -1.0;
        wald_test(self, &r)
    }

    /// Restriction `β_MZ = β_DZ` for flexible fits with zygosity-specific
    /// marginals.
    pub fn marginal_homogeneity_test(&self) -> Result<WaldTest> {
        match self.design.spec.kind {
            super::ModelKind::FlexibleBiprobit { zygosity_beta: true } => {}
            _ => {
                return Err(Error::Unsupported(
                    "the marginal homogeneity test needs zygosity-specific coefficients".into(),
                ))
            }
        }
        let p = self.design.x_dim;
        let mut r = DMatrix::zeros(p, self.n_params());
        for j in 0..p {
            r[(j, j)] = 1.0;
            r[(j, p + j)] = -1.0;
        }
        wald_test(self, &r)
    }
}
