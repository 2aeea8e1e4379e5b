//! Variance-component reporting: normalized proportions, tetrachoric
//! correlations, and heritability with delta-method confidence intervals.
//!
//! A polygenic fit estimates raw log-variances with the unique-environment
//! variance fixed at 1. Reported quantities are normalized by the total
//! latent variance `v = 1 + σ²_A + σ²_C + σ²_D`:
//!
//! * proportions `σ²_•/v` (and `1/v` for E), summing to 1,
//! * `ρ_MZ = (σ²_A + σ²_C + σ²_D)/v`, `ρ_DZ = (σ²_A/2 + σ²_C + σ²_D/4)/v`,
//! * broad-sense heritability `H² = (σ²_A + σ²_D)/v`.
//!
//! Intervals are computed on bounded-respecting scales (logit for
//! proportions and H², atanh for correlations) from the fit's preferred
//! covariance.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::biprobit::{Component, ComponentSet, FitResult, ModelKind, PolygenicMap, VcovChoice};
use crate::data::Zygosity;
use crate::error::{Error, Result};
use crate::intervals::EstimateCi;

/// Normalized variance decomposition of a polygenic fit.
#[derive(Debug, Clone, Serialize)]
pub struct PolygenicEstimate {
    pub model: String,
    /// Proportions of total liability variance; absent components are
    /// reported as exact zeros.
    pub prop_a: EstimateCi,
    pub prop_c: EstimateCi,
    pub prop_d: EstimateCi,
    pub prop_e: EstimateCi,
    pub h2: EstimateCi,
    pub rho_mz: EstimateCi,
    pub rho_dz: EstimateCi,
    /// Raw log-variance estimates in canonical (A, C, D) order.
    pub raw_log_vars: Vec<f64>,
}

/// Map raw log-variances to correlations and normalized proportions
/// `(A, C, D, E)`.
pub fn components_to_correlations(
    raw_log_vars: &[f64],
    components: &ComponentSet,
) -> Result<(f64, f64, [f64; 4])> {
    components.validate()?;
    if raw_log_vars.len() != components.members().len() {
        return Err(Error::Validation(format!(
            "expected {} raw log-variances for {}, got {}",
            components.members().len(),
            components.label(),
            raw_log_vars.len()
        )));
    }
    if raw_log_vars.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("raw log-variances must be finite".into()));
    }
    let map = PolygenicMap::new(raw_log_vars, components);
    let v = map.total_var;
    Ok((
        map.rho(Zygosity::Mz),
        map.rho(Zygosity::Dz),
        [map.var_a / v, map.var_c / v, map.var_d / v, 1.0 / v],
    ))
}

/// Gradient machinery shared by all derived quantities: for a quantity
/// with raw-scale gradient `g`, the variance is `gᵀ V_q g` over the
/// log-variance block of the fit covariance.
struct DeltaContext {
    comps: Vec<Component>,
    props: [f64; 4], // A, C, D, E proportions
    vq: DMatrix<f64>,
}

impl DeltaContext {
    fn prop(&self, comp: Component) -> f64 {
        match comp {
            Component::Additive => self.props[0],
            Component::SharedEnv => self.props[1],
            Component::Dominance => self.props[2],
        }
    }

    fn se(&self, grad: &DVector<f64>) -> f64 {
        (grad.dot(&(&self.vq * grad))).max(0.0).sqrt()
    }

    /// d p_target / d q_k = p_target (δ_{target,k} - p_k).
    fn se_proportion(&self, target: Option<Component>) -> f64 {
        let p_t = match target {
            Some(c) => self.prop(c),
            None => self.props[3],
        };
        let grad = DVector::from_iterator(
            self.comps.len(),
            self.comps.iter().map(|k| {
                let indicator = match target {
                    Some(t) => (*k == t) as usize as f64,
                    None => 0.0,
                };
                p_t * (indicator - self.prop(*k))
            }),
        );
        self.se(&grad)
    }

    /// H² = p_A + p_D.
    fn se_h2(&self) -> f64 {
        let grad = DVector::from_iterator(
            self.comps.len(),
            self.comps.iter().map(|k| {
                let mut g = 0.0;
                for t in [Component::Additive, Component::Dominance] {
                    let p_t = self.prop(t);
                    if p_t > 0.0 {
                        g += p_t * (((*k == t) as usize as f64) - self.prop(*k));
                    }
                }
                g
            }),
        );
        self.se(&grad)
    }

    /// d ρ / d q_k = p_k (κ_k - ρ).
    fn se_rho(&self, zygosity: Zygosity, rho: f64) -> f64 {
        let grad = DVector::from_iterator(
            self.comps.len(),
            self.comps
                .iter()
                .map(|k| self.prop(*k) * (k.kinship_weight(zygosity) - rho)),
        );
        self.se(&grad)
    }
}

/// Full normalized decomposition with intervals from a polygenic fit.
pub fn polygenic_estimate(fit: &FitResult) -> Result<PolygenicEstimate> {
    polygenic_estimate_with(fit, VcovChoice::Preferred)
}

/// Same as [`polygenic_estimate`] with an explicit covariance choice.
pub fn polygenic_estimate_with(
    fit: &FitResult,
    vcov_choice: VcovChoice,
) -> Result<PolygenicEstimate> {
    let ModelKind::Polygenic { components } = fit.design.spec.kind else {
        return Err(Error::Unsupported(
            "variance decomposition needs a polygenic fit".into(),
        ));
    };
    let comps = components.members();
    let q0 = fit.design.aux_offset();
    let raw: Vec<f64> = (0..comps.len()).map(|i| fit.theta[q0 + i]).collect();
    let (rho_mz, rho_dz, props) = components_to_correlations(&raw, &components)?;

    let v = fit.vcov(vcov_choice)?;
    let vq = DMatrix::from_fn(comps.len(), comps.len(), |i, j| v[(q0 + i, q0 + j)]);
    let ctx = DeltaContext { comps: comps.clone(), props, vq };

    let prop_ci = |target: Option<Component>, value: f64, present: bool| {
        if present {
            EstimateCi::logit(value, ctx.se_proportion(target))
        } else {
            EstimateCi::degenerate(0.0)
        }
    };
    let h2 = props[0] + props[2];
    let h2_ci = if comps.iter().any(|c| matches!(c, Component::Additive | Component::Dominance)) {
        EstimateCi::logit(h2, ctx.se_h2())
    } else {
        EstimateCi::degenerate(0.0)
    };

    Ok(PolygenicEstimate {
        model: components.label(),
        prop_a: prop_ci(Some(Component::Additive), props[0], components.additive),
        prop_c: prop_ci(Some(Component::SharedEnv), props[1], components.shared_env),
        prop_d: prop_ci(Some(Component::Dominance), props[2], components.dominance),
        prop_e: prop_ci(None, props[3], true),
        h2: h2_ci,
        rho_mz: EstimateCi::atanh_scale(rho_mz, ctx.se_rho(Zygosity::Mz, rho_mz)),
        rho_dz: EstimateCi::atanh_scale(rho_dz, ctx.se_rho(Zygosity::Dz, rho_dz)),
        raw_log_vars: raw,
    })
}

/// Broad-sense heritability with its interval.
pub fn heritability(fit: &FitResult) -> Result<EstimateCi> {
    Ok(polygenic_estimate(fit)?.h2)
}
