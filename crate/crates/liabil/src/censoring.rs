//! Censoring-distribution estimation for IPCW weighting.
//!
//! The censoring survival `G_c(t; z) = P(C > t | z)` is estimated with the
//! censoring indicator as the "event": rows with status 0 are events for
//! `G_c`, while causes 1 and 2 censor the censoring time. Two estimators
//! are provided:
//!
//! * a (optionally zygosity-stratified) Kaplan-Meier product-limit
//!   estimator, without influence functions (weight uncertainty is not
//!   propagated for this arm), and
//! * a parametric Weibull proportional-hazards model with cumulative
//!   hazard `Λ(t; z) = (λt)^ν exp(γᵀz)`, fitted by a pooled working-
//!   independence score with pair-clustered sandwich variance and
//!   per-pair influence-function rows used by the two-stage variance.
//!
//! Weight evaluation uses the left limit `G_c(t-)`: an individual failing
//! exactly at a censoring atom is weighted by the probability of remaining
//! uncensored just before it. Under administrative (same-time) censoring
//! the bivariate survival reduces to the marginal at the pair's later
//! time, `G_c(t₁ ∨ t₂ | z)`.
//!
//! A univariate Aalen-Johansen cumulative-incidence estimator is included
//! as a validation utility.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{EventStatus, PairRecord, Zygosity};
use crate::error::{Error, Result};

/// Stratification of the Kaplan-Meier censoring model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strata {
    #[default]
    None,
    ByZygosity,
}

/// Tie handling between event (cause 1/2) and censoring times recorded at
/// the same value. `CausesFirst` removes same-time failures from the risk
/// set before censoring events are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    CausesFirst,
    CensoringsFirst,
}

/// Right-continuous product-limit step function with knots at censoring
/// atoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KmCurve {
    /// Knot times, strictly increasing.
    pub times: Vec<f64>,
    /// Survival value at and after the matching knot.
    pub surv: Vec<f64>,
}

impl KmCurve {
    /// Survival at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u <= t);
        if k == 0 { 1.0 } else { self.surv[k - 1] }
    }

    /// Left limit `G(t-)`: survival just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u < t);
        if k == 0 { 1.0 } else { self.surv[k - 1] }
    }
}

/// Fitted marginal censoring survival model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensoringModel {
    KaplanMeier {
        strata: Strata,
        /// Stratum labels, parallel to `curves` ("all", or "MZ"/"DZ").
        labels: Vec<String>,
        curves: Vec<KmCurve>,
    },
    WeibullPh {
        /// Parameter vector: `[log λ, log ν, censoring coefficients…]`.
        gamma: Vec<f64>,
        /// Names of the censoring covariate columns (length of `gamma` - 2).
        z_names: Vec<String>,
        /// Per-pair influence rows on the estimator scale:
        /// γ̂ - γ₀ ≈ Σᵢ rows[i]; not serialized.
        #[serde(skip)]
        if1: Option<Vec<DVector<f64>>>,
        /// Pair-clustered sandwich covariance of γ̂; not serialized.
        #[serde(skip)]
        vcov: Option<DMatrix<f64>>,
    },
}

impl CensoringModel {
    /// Weibull model with known parameters (no influence rows), e.g. a
    /// true censoring distribution in simulation checks.
    pub fn weibull_known(log_lambda: f64, log_nu: f64, coefs: &[f64]) -> Self {
        let mut gamma = vec![log_lambda, log_nu];
        gamma.extend_from_slice(coefs);
        CensoringModel::WeibullPh {
            gamma,
            z_names: (0..coefs.len()).map(|i| format!("z{}", i + 1)).collect(),
            if1: None,
            vcov: None,
        }
    }

    /// Marginal censoring survival at `t` given covariates and stratum
    /// (right-continuous).
    pub fn survival(&self, t: f64, z: &[f64], zygosity: Zygosity) -> Result<f64> {
        match self {
            CensoringModel::KaplanMeier { strata, curves, .. } => {
                Ok(km_stratum_curve(curves, *strata, zygosity).eval(t))
            }
            CensoringModel::WeibullPh { gamma, .. } => weibull_survival(gamma, t, z),
        }
    }

    /// Censoring survival used for pair weighting: the left limit at the
    /// later of the two times, `G_c((t₁ ∨ t₂)-; z)`.
    pub fn eval_gc_pair(&self, t1: f64, t2: f64, z: &[f64], zygosity: Zygosity) -> Result<f64> {
        let t_star = t1.max(t2);
        match self {
            CensoringModel::KaplanMeier { strata, curves, .. } => {
                Ok(km_stratum_curve(curves, *strata, zygosity).eval_left(t_star))
            }
            CensoringModel::WeibullPh { gamma, .. } => weibull_survival(gamma, t_star, z),
        }
    }

    /// Per-pair influence rows of γ̂ (Weibull fits only).
    pub fn if1(&self) -> Option<&[DVector<f64>]> {
        match self {
            CensoringModel::WeibullPh { if1, .. } => if1.as_deref(),
            _ => None,
        }
    }

    pub fn gamma(&self) -> Option<&[f64]> {
        match self {
            CensoringModel::WeibullPh { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    /// Pair-clustered sandwich covariance of γ̂ (Weibull fits only).
    pub fn gamma_vcov(&self) -> Option<&DMatrix<f64>> {
        match self {
            CensoringModel::WeibullPh { vcov, .. } => vcov.as_ref(),
            _ => None,
        }
    }
}

fn km_stratum_curve(curves: &[KmCurve], strata: Strata, zygosity: Zygosity) -> &KmCurve {
    match strata {
        Strata::None => &curves[0],
        Strata::ByZygosity => match zygosity {
            Zygosity::Mz => &curves[0],
            Zygosity::Dz => &curves[1],
        },
    }
}

fn weibull_survival(gamma: &[f64], t: f64, z: &[f64]) -> Result<f64> {
    if z.len() + 2 != gamma.len() {
        return Err(Error::Validation(format!(
            "censoring covariate dimension {} does not match fitted model ({})",
            z.len(),
            gamma.len() - 2
        )));
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let (a, b) = (gamma[0], gamma[1]);
    let lin: f64 = gamma[2..].iter().zip(z).map(|(g, v)| g * v).sum();
    let cum_hazard = (b.exp() * (a + t.ln()) + lin).exp();
    Ok((-cum_hazard).exp())
}

/// Fit a (stratified) Kaplan-Meier estimator of the censoring survival.
pub fn fit_km(data: &[PairRecord], strata: Strata, ties: TieBreak) -> Result<CensoringModel> {
    let (labels, groups): (Vec<String>, Vec<Vec<(f64, bool)>>) = match strata {
        Strata::None => (
            vec!["all".into()],
            vec![individuals(data, |_| true)],
        ),
        Strata::ByZygosity => (
            vec!["MZ".into(), "DZ".into()],
            vec![
                individuals(data, |p| p.zygosity == Zygosity::Mz),
                individuals(data, |p| p.zygosity == Zygosity::Dz),
            ],
        ),
    };

    let mut curves = Vec::with_capacity(groups.len());
    for (label, mut obs) in labels.iter().zip(groups) {
        if obs.is_empty() {
            return Err(Error::Validation(format!("empty stratum '{label}' in censoring fit")));
        }
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        curves.push(product_limit(&obs, ties));
    }
    Ok(CensoringModel::KaplanMeier { strata, labels, curves })
}

fn individuals(data: &[PairRecord], keep: impl Fn(&PairRecord) -> bool) -> Vec<(f64, bool)> {
    let mut out = Vec::new();
    for pair in data.iter().filter(|p| keep(p)) {
        for k in 0..2 {
            out.push((pair.time[k], pair.status[k] == EventStatus::Censored));
        }
    }
    out
}

/// Product-limit estimate over observations sorted by time;
/// `(time, is_censoring_event)` with causes acting as censorings of C.
fn product_limit(sorted: &[(f64, bool)], ties: TieBreak) -> KmCurve {
    let n = sorted.len();
    let mut times = Vec::new();
    let mut surv = Vec::new();
    let mut s = 1.0;
    let mut at_risk = n as f64;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let mut cens = 0.0;
        let mut causes = 0.0;
        let mut j = i;
        while j < n && sorted[j].0 == t {
            if sorted[j].1 {
                cens += 1.0;
            } else {
                causes += 1.0;
            }
            j += 1;
        }
        if cens > 0.0 {
            let denom = match ties {
                TieBreak::CausesFirst => at_risk - causes,
                TieBreak::CensoringsFirst => at_risk,
            };
            s *= 1.0 - cens / denom;
            times.push(t);
            surv.push(s.max(0.0));
        }
        at_risk -= cens + causes;
        i = j;
    }
    KmCurve { times, surv }
}

/// Per-individual pieces of the Weibull working-independence score.
struct WeibullObs {
    /// log(t); observations at t = 0 are skipped.
    log_t: f64,
    delta: f64,
    z: Vec<f64>,
    pair_index: usize,
}

/// Fit the Weibull proportional-hazards censoring model by Newton-Raphson
/// on the pooled score, with pair-clustered sandwich variance and per-pair
/// influence rows.
pub fn fit_weibull_ph(data: &[PairRecord]) -> Result<CensoringModel> {
    fit_weibull_ph_named(data, &auto_z_names(data)?)
}

fn auto_z_names(data: &[PairRecord]) -> Result<Vec<String>> {
    let dim = data.first().map_or(0, |p| p.z[0].len());
    Ok((0..dim).map(|i| format!("z{}", i + 1)).collect())
}

pub fn fit_weibull_ph_named(data: &[PairRecord], z_names: &[String]) -> Result<CensoringModel> {
    if data.is_empty() {
        return Err(Error::Validation("censoring fit requires data".into()));
    }
    let z_dim = data[0].z[0].len();
    let q = 2 + z_dim;

    let mut obs = Vec::with_capacity(2 * data.len());
    let mut n_cens_events = 0usize;
    let mut sum_t = 0.0;
    for (i, pair) in data.iter().enumerate() {
        for k in 0..2 {
            if pair.z[k].len() != z_dim {
                return Err(Error::Validation(format!(
                    "pair '{}' has inconsistent censoring covariate dimension",
                    pair.pair_id
                )));
            }
            let delta = if pair.status[k] == EventStatus::Censored { 1.0 } else { 0.0 };
            if pair.time[k] <= 0.0 {
                if delta > 0.0 {
                    return Err(Error::Validation(format!(
                        "pair '{}' has a censoring event at time 0; Weibull model requires positive times",
                        pair.pair_id
                    )));
                }
                continue; // zero exposure, contributes nothing
            }
            if delta > 0.0 {
                n_cens_events += 1;
            }
            sum_t += pair.time[k];
            obs.push(WeibullObs { log_t: pair.time[k].ln(), delta, z: pair.z[k].clone(), pair_index: i });
        }
    }
    if n_cens_events == 0 {
        return Err(Error::Validation("no censored observations; cannot fit censoring model".into()));
    }

    // Exponential-model start: rate = events / exposure, shape 1.
    let mut gamma = DVector::zeros(q);
    gamma[0] = (n_cens_events as f64 / sum_t).ln();

    let max_iter = 60;
    let mut converged = false;
    let mut loglik = f64::NEG_INFINITY;
    for _iter in 0..max_iter {
        let (ll, score, hess) = weibull_loglik_score(&gamma, &obs, q);
        let max_score = score.amax();
        // Newton direction on the negative Hessian.
        let neg_h = -hess;
        let step = neg_h
            .clone()
            .lu()
            .solve(&score)
            .ok_or_else(|| Error::Singular("censoring model information".into()))?;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand = &gamma + scale * &step;
            let (ll_new, _, _) = weibull_loglik_score(&cand, &obs, q);
            if ll_new.is_finite() && ll_new >= ll - 1e-12 {
                gamma = cand;
                loglik = ll_new;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        let rel_step = (scale * step.amax()) / gamma.amax().max(1.0);
        if max_score < 1e-8 || rel_step < 1e-12 {
            converged = true;
            break;
        }
    }
    let _ = loglik;
    if !converged {
        let (_, score, _) = weibull_loglik_score(&gamma, &obs, q);
        return Err(Error::NonConvergence { iterations: max_iter, max_score: score.amax() });
    }

    // Pair-clustered score rows and sandwich.
    let (_, _, hess) = weibull_loglik_score(&gamma, &obs, q);
    let neg_h = -hess;
    let inv = neg_h
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("censoring model information".into()))?;
    let mut pair_scores = vec![DVector::<f64>::zeros(q); data.len()];
    for o in &obs {
        let s = weibull_obs_score(&gamma, o, q);
        pair_scores[o.pair_index] += s;
    }
    let mut meat = DMatrix::<f64>::zeros(q, q);
    for u in &pair_scores {
        meat += u * u.transpose();
    }
    let vcov = &inv * meat * &inv;
    let if1: Vec<DVector<f64>> = pair_scores.iter().map(|u| &inv * u).collect();

    Ok(CensoringModel::WeibullPh {
        gamma: gamma.iter().copied().collect(),
        z_names: z_names.to_vec(),
        if1: Some(if1),
        vcov: Some(vcov),
    })
}

fn weibull_obs_parts(gamma: &DVector<f64>, o: &WeibullObs) -> (f64, f64, f64) {
    let nu = gamma[1].exp();
    let u = gamma[0] + o.log_t;
    let lin: f64 = o.z.iter().enumerate().map(|(j, v)| gamma[2 + j] * v).sum();
    let cum = (nu * u + lin).exp();
    (nu, u, cum)
}

fn weibull_obs_score(gamma: &DVector<f64>, o: &WeibullObs, q: usize) -> DVector<f64> {
    let (nu, u, cum) = weibull_obs_parts(gamma, o);
    let resid = o.delta - cum;
    let mut s = DVector::zeros(q);
    s[0] = nu * resid;
    s[1] = o.delta + nu * u * resid;
    for (j, v) in o.z.iter().enumerate() {
        s[2 + j] = v * resid;
    }
    s
}

fn weibull_loglik_score(
    gamma: &DVector<f64>,
    obs: &[WeibullObs],
    q: usize,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let mut ll = 0.0;
    let mut score = DVector::<f64>::zeros(q);
    let mut hess = DMatrix::<f64>::zeros(q, q);
    for o in obs {
        let (nu, u, cum) = weibull_obs_parts(gamma, o);
        let lin: f64 = o.z.iter().enumerate().map(|(j, v)| gamma[2 + j] * v).sum();
        ll += o.delta * (gamma[1] + nu * u - o.log_t + lin) - cum;
        let resid = o.delta - cum;
        score[0] += nu * resid;
        score[1] += o.delta + nu * u * resid;
        for (j, v) in o.z.iter().enumerate() {
            score[2 + j] += v * resid;
        }
        // Second derivatives.
        hess[(0, 0)] += -nu * nu * cum;
        let hab = nu * resid - nu * nu * u * cum;
        hess[(0, 1)] += hab;
        hess[(1, 0)] += hab;
        hess[(1, 1)] += nu * u * resid - (nu * u) * (nu * u) * cum;
        for (j, v) in o.z.iter().enumerate() {
            hess[(0, 2 + j)] += -v * nu * cum;
            hess[(2 + j, 0)] += -v * nu * cum;
            hess[(1, 2 + j)] += -v * nu * u * cum;
            hess[(2 + j, 1)] += -v * nu * u * cum;
            for (l, w) in o.z.iter().enumerate() {
                hess[(2 + j, 2 + l)] += -v * w * cum;
            }
        }
    }
    (ll, score, hess)
}

/// Nondecreasing right-continuous step function (cumulative incidence).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u <= t);
        if k == 0 { 0.0 } else { self.values[k - 1] }
    }

    pub fn last(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Aalen-Johansen estimator of the cumulative incidence of `cause` (1 or 2)
/// from individual `(time, status)` observations.
pub fn aalen_johansen_cif(times: &[f64], statuses: &[EventStatus], cause: u8) -> Result<StepFunction> {
    if times.is_empty() || times.len() != statuses.len() {
        return Err(Error::Validation("cumulative incidence requires matching nonempty inputs".into()));
    }
    if cause != 1 && cause != 2 {
        return Err(Error::Validation(format!("cause must be 1 or 2, got {cause}")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut cif_times = Vec::new();
    let mut cif_values = Vec::new();
    let mut surv = 1.0; // overall event-free survival, left limit
    let mut cif = 0.0;
    let mut at_risk = times.len() as f64;
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d_target = 0.0;
        let mut d_any = 0.0;
        let mut removed = 0.0;
        let mut j = i;
        while j < order.len() && times[order[j]] == t {
            let st = statuses[order[j]];
            if st.is_event() {
                d_any += 1.0;
                if st.code() == cause {
                    d_target += 1.0;
                }
            }
            removed += 1.0;
            j += 1;
        }
        if d_target > 0.0 {
            cif += surv * d_target / at_risk;
            cif_times.push(t);
            cif_values.push(cif);
        }
        if d_any > 0.0 {
            surv *= 1.0 - d_any / at_risk;
        }
        at_risk -= removed;
        i = j;
    }
    Ok(StepFunction { times: cif_times, values: cif_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rec(id: &str, zyg: Zygosity, t: [f64; 2], st: [u8; 2]) -> PairRecord {
        PairRecord {
            pair_id: id.into(),
            zygosity: zyg,
            time: t,
            status: [
                EventStatus::from_code(st[0] as i64).unwrap(),
                EventStatus::from_code(st[1] as i64).unwrap(),
            ],
            x: [vec![], vec![]],
            z: [vec![], vec![]],
        }
    }

    /// Three individuals: censored at 1, cause 1 at 2, censored at 3.
    fn three_point_data() -> Vec<PairRecord> {
        vec![
            rec("a", Zygosity::Mz, [1.0, 2.0], [0, 1]),
            // second pair contributes only one relevant member; give the
            // other member a far time with an event so the risk set at 3 is
            // exactly the third individual
            rec("b", Zygosity::Mz, [3.0, 0.5], [0, 2]),
        ]
    }

    #[test]
    fn km_hand_product_limit() {
        // (1, censored), (2, cause1), (3, censored) plus (0.5, cause2):
        // at t=0.5 a cause leaves; at t=1 risk {1,2,3}: 1 - 1/3 = 2/3;
        // t=2 cause only reduces risk; t=3 risk {3}: survival drops to 0.
        let model = fit_km(&three_point_data(), Strata::None, TieBreak::default()).unwrap();
        let CensoringModel::KaplanMeier { curves, .. } = &model else { panic!() };
        let g = &curves[0];
        assert_abs_diff_eq!(g.eval(1.0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.eval(2.0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.eval(3.0), 0.0, epsilon = 1e-12);
        // Left limit at the final atom, as used for weighting.
        assert_abs_diff_eq!(g.eval_left(3.0), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.eval_left(1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn km_no_censored_observations_is_one() {
        let data = vec![rec("a", Zygosity::Mz, [1.0, 2.0], [1, 2])];
        let model = fit_km(&data, Strata::None, TieBreak::default()).unwrap();
        assert_eq!(model.survival(100.0, &[], Zygosity::Mz).unwrap(), 1.0);
    }

    #[test]
    fn km_all_censored_at_five() {
        let data = vec![
            rec("a", Zygosity::Mz, [5.0, 5.0], [0, 0]),
            rec("b", Zygosity::Mz, [5.0, 5.0], [0, 0]),
        ];
        let model = fit_km(&data, Strata::None, TieBreak::default()).unwrap();
        assert_eq!(model.survival(4.999, &[], Zygosity::Mz).unwrap(), 1.0);
        assert_eq!(model.survival(5.0, &[], Zygosity::Mz).unwrap(), 0.0);
    }

    #[test]
    fn km_stratified_keeps_groups_apart() {
        let data = vec![
            rec("a", Zygosity::Mz, [1.0, 4.0], [0, 1]),
            rec("b", Zygosity::Dz, [2.0, 4.0], [0, 1]),
        ];
        let model = fit_km(&data, Strata::ByZygosity, TieBreak::default()).unwrap();
        assert_abs_diff_eq!(model.survival(1.5, &[], Zygosity::Mz).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(model.survival(1.5, &[], Zygosity::Dz).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn km_empty_stratum_errors() {
        let data = vec![rec("a", Zygosity::Mz, [1.0, 2.0], [0, 1])];
        assert!(fit_km(&data, Strata::ByZygosity, TieBreak::default()).is_err());
    }

    #[test]
    fn km_tie_conventions_differ() {
        // cause and censoring both at t=2.
        let data = vec![
            rec("a", Zygosity::Mz, [2.0, 2.0], [1, 0]),
            rec("b", Zygosity::Mz, [4.0, 5.0], [0, 0]),
        ];
        let causes_first = fit_km(&data, Strata::None, TieBreak::CausesFirst).unwrap();
        let cens_first = fit_km(&data, Strata::None, TieBreak::CensoringsFirst).unwrap();
        // 4 at risk at t=2; causes-first removes the failure: 1 - 1/3.
        assert_abs_diff_eq!(
            causes_first.survival(2.0, &[], Zygosity::Mz).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cens_first.survival(2.0, &[], Zygosity::Mz).unwrap(),
            3.0 / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weibull_closed_form_survival() {
        // log λ = -4.5, log ν = 0.5, no covariates:
        // G(80) = exp(-(80 e^{-4.5})^{e^{0.5}}).
        let model = CensoringModel::weibull_known(-4.5, 0.5, &[]);
        let expected = (-(80.0_f64 * (-4.5_f64).exp()).powf(0.5_f64.exp())).exp();
        assert_abs_diff_eq!(model.survival(80.0, &[], Zygosity::Mz).unwrap(), expected, epsilon = 1e-14);
        assert_abs_diff_eq!(expected, 0.439, epsilon = 5e-4);
        assert_eq!(model.survival(0.0, &[], Zygosity::Mz).unwrap(), 1.0);
    }

    #[test]
    fn eval_pair_uses_max_time() {
        let model = CensoringModel::weibull_known(-4.5, 0.5, &[]);
        let g5 = model.survival(5.0, &[], Zygosity::Mz).unwrap();
        assert_abs_diff_eq!(
            model.eval_gc_pair(3.0, 5.0, &[], Zygosity::Mz).unwrap(),
            g5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            model.eval_gc_pair(5.0, 5.0, &[], Zygosity::Mz).unwrap(),
            g5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn aalen_johansen_single_event() {
        let f = aalen_johansen_cif(&[2.0], &[EventStatus::CauseOfInterest], 1).unwrap();
        assert_eq!(f.eval(1.9), 0.0);
        assert_eq!(f.eval(2.0), 1.0);
    }

    #[test]
    fn aalen_johansen_no_target_events() {
        let f = aalen_johansen_cif(
            &[1.0, 2.0],
            &[EventStatus::Competing, EventStatus::Censored],
            1,
        )
        .unwrap();
        assert_eq!(f.last(), 0.0);
    }

    #[test]
    fn aalen_johansen_respects_competing_risks() {
        // cause2 at 1 (2 at risk), cause1 at 2: F1(2) = S(1)·1/1 = 1/2.
        let f = aalen_johansen_cif(
            &[1.0, 2.0],
            &[EventStatus::Competing, EventStatus::CauseOfInterest],
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(f.last(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn censoring_model_json_round_trip() {
        let model = fit_km(&three_point_data(), Strata::None, TieBreak::default()).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: CensoringModel = serde_json::from_str(&json).unwrap();
        assert_abs_diff_eq!(
            back.survival(2.0, &[], Zygosity::Mz).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        let weib = CensoringModel::weibull_known(-4.5, 0.5, &[]);
        let json = serde_json::to_string(&weib).unwrap();
        assert!(json.contains("weibull_ph"));
        let back: CensoringModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.gamma().unwrap(), &[-4.5, 0.5]);
    }
}
