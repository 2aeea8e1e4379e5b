//! IPCW-weighted bivariate probit estimation.
//!
//! The weighted score equation is solved by Fisher scoring with
//! step-halving: per usable pair, the four cell probabilities of the
//! observed binary outcomes are
//!
//! ```text
//! P11 = Φ_ρ(μ1, μ2)          P10 = Φ(μ1) - P11
//! P01 = Φ(μ2) - P11          P00 = 1 - Φ(μ1) - Φ(μ2) + P11
//! ```
//!
//! and a pair contributes `w · log P_cell` with its IPCW weight `w`. The
//! score is the exact analytic gradient (chain rule through the bivariate
//! normal CDF gradient); the expected information serves as the Hessian
//! during optimization, which keeps every Newton step an ascent
//! direction. Sandwich variances use the observed score derivative at the
//! optimum as their bread.

mod design;
mod variance;

pub use design::{Component, ComponentSet, Geometry, ModelDesign, ModelKind, ModelSpec, PolygenicMap};
pub use variance::{wald_test, WaldTest};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::censoring::CensoringModel;
use crate::data::{
    classify_cohort, classify_ignoring_censoring, ClassifiedPair, ClassifyOptions,
    ClassifySummary, PairRecord, Zygosity,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normal::{bvn_cdf, bvn_cdf_grad, norm_cdf, norm_quantile, phi, BvnArgs};

/// Floor applied to cell probabilities inside logarithms.
const CELL_LOG_FLOOR: f64 = 1e-300;
/// Floor applied to cell probabilities in score/information denominators;
/// keeps ratios finite when the optimizer probes absurd regions.
const CELL_RATIO_FLOOR: f64 = 1e-12;
/// Hard floor on raw log-variances during optimization; a component
/// pinned here has a vanishing variance share (e^-15 ≈ 3e-7) and the fit
/// is reported as a boundary solution. The floor coincides with the
/// boundary diagnostic so a drifting component pins in one step instead
/// of crawling through an ill-conditioned band.
const MIN_LOG_VAR: f64 = -15.0;

/// Which covariance estimate downstream reporting should draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VcovChoice {
    /// Two-stage when available, otherwise the fixed-weight sandwich.
    #[default]
    Preferred,
    Model,
    If2,
    If3,
}

/// How pairs are weighted in the score equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// Inverse-probability-of-censoring weights from a fitted censoring
    /// model (Ĝ_c ≡ 1 when no model is supplied).
    #[default]
    Ipcw,
    /// Ignore censoring: all pairs usable with weight 1, members without
    /// an observed cause-of-interest event treated as unaffected.
    Naive,
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub classify: ClassifyOptions,
    pub weighting: WeightScheme,
    pub x_names: Option<Vec<String>>,
    pub max_iter: Option<usize>,
}

/// Diagnostic flags raised during a fit.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FitFlags {
    /// Some raw log-variance drifted below -15 (component ≈ 0).
    pub boundary: bool,
    /// A cell probability underflowed and was floored inside a log.
    pub cell_floor: bool,
}

/// Result of a converged (or abandoned) fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub design: ModelDesign,
    pub theta: DVector<f64>,
    /// Inverse of the weighted expected information.
    pub vcov_model: DMatrix<f64>,
    /// Sandwich covariance treating the weights as known.
    pub vcov_if2: DMatrix<f64>,
    /// Two-stage covariance propagating censoring-model uncertainty;
    /// available for Weibull-censored IPCW fits only.
    vcov_if3: Option<DMatrix<f64>>,
    pub loglik_weighted: f64,
    pub aic_ipcw: f64,
    pub n_total: usize,
    pub n_used: usize,
    pub iterations: usize,
    pub converged: bool,
    pub flags: FitFlags,
    /// Per-pair influence rows on the estimator scale: θ̂ - θ₀ ≈ Σᵢ rows[i]
    /// and Σᵢ rows[i]·rows[i]ᵀ is the reported sandwich. Rows include the
    /// censoring-stage correction when it is available.
    pub if_rows: Vec<DVector<f64>>,
    pub classify_summary: Option<ClassifySummary>,
    pub weighting: WeightScheme,
    /// Weighted sample mean of the covariates; default reference point for
    /// derived measures.
    pub x_ref_default: Vec<f64>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn param_names(&self) -> &[String] {
        &self.design.names
    }

    /// Two-stage covariance; explicit error when the censoring model does
    /// not carry influence rows (Kaplan-Meier weights or unweighted fits).
    pub fn vcov_if3(&self) -> Result<&DMatrix<f64>> {
        self.vcov_if3.as_ref().ok_or_else(|| {
            Error::Unsupported(
                "two-stage variance needs a Weibull censoring model with influence rows; \
                 Kaplan-Meier weighted and unweighted fits report the fixed-weight sandwich only"
                    .into(),
            )
        })
    }

    /// Covariance used for tests and intervals: two-stage when available,
    /// otherwise the fixed-weight sandwich.
    pub fn vcov_preferred(&self) -> &DMatrix<f64> {
        self.vcov_if3.as_ref().unwrap_or(&self.vcov_if2)
    }

    /// Select a specific covariance estimate.
    pub fn vcov(&self, choice: VcovChoice) -> Result<&DMatrix<f64>> {
        match choice {
            VcovChoice::Preferred => Ok(self.vcov_preferred()),
            VcovChoice::Model => Ok(&self.vcov_model),
            VcovChoice::If2 => Ok(&self.vcov_if2),
            VcovChoice::If3 => self.vcov_if3(),
        }
    }

    /// Standard errors from the preferred covariance.
    pub fn se(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_params(),
            self.vcov_preferred().diagonal().iter().map(|v| v.max(0.0).sqrt()),
        )
    }

    /// Weighted AIC on the conventional lower-is-better scale.
    pub fn aic(&self) -> f64 {
        self.aic_ipcw
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let mat = |m: &DMatrix<f64>| -> serde_json::Value {
            serde_json::json!((0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
                .collect::<Vec<_>>())
        };
        serde_json::json!({
            "model": model_label(&self.design.spec),
            "tau": self.design.spec.tau,
            "params": self
                .param_names()
                .iter()
                .zip(self.theta.iter())
                .zip(self.se().iter())
                .map(|((name, est), se)| serde_json::json!({
                    "name": name, "estimate": est, "se": se
                }))
                .collect::<Vec<_>>(),
            "vcov_model": mat(&self.vcov_model),
            "vcov_if2": mat(&self.vcov_if2),
            "vcov_if3": self.vcov_if3.as_ref().map(mat),
            "loglik_weighted": self.loglik_weighted,
            "aic_ipcw": self.aic_ipcw,
            "n_total": self.n_total,
            "n_used": self.n_used,
            "iterations": self.iterations,
            "converged": self.converged,
            "weighting": match self.weighting { WeightScheme::Ipcw => "ipcw", WeightScheme::Naive => "naive" },
            "flags": {"boundary": self.flags.boundary, "cell_floor": self.flags.cell_floor},
        })
    }
}

pub(crate) fn model_label(spec: &ModelSpec) -> String {
    match &spec.kind {
        ModelKind::FlexibleBiprobit { zygosity_beta: false } => "biprobit".into(),
        ModelKind::FlexibleBiprobit { zygosity_beta: true } => "biprobit_zyg".into(),
        ModelKind::Polygenic { components } => components.label().to_lowercase(),
    }
}

/// One pair prepared for likelihood evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPair {
    pub pair_index: usize,
    pub cell: usize,
    pub weight: f64,
    pub zygosity: Zygosity,
    /// Intercept-augmented member designs.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Pair-level censoring covariates.
    pub z: Vec<f64>,
    /// Censoring survival and evaluation time behind the weight.
    pub gc: f64,
    pub t_star: f64,
}

/// Cohort assembled for a given model spec: usable pairs with weights plus
/// bookkeeping for variance estimation.
#[derive(Debug, Clone)]
pub struct CohortDesign {
    pub(crate) design: ModelDesign,
    pub(crate) pairs: Vec<PreparedPair>,
    pub(crate) n_total: usize,
    /// All member designs identical per zygosity (intercept-only case):
    /// enables cell caching.
    pub(crate) uniform_design: bool,
    pub(crate) summary: Option<ClassifySummary>,
    /// Weighted mean of the member covariates over usable pairs; default
    /// reference point for reported measures.
    pub(crate) x_mean: Vec<f64>,
}

fn cell_index(y1: bool, y2: bool) -> usize {
    (y1 as usize) * 2 + y2 as usize
}

impl CohortDesign {
    /// Classify `data` at the spec's τ and assemble the design.
    pub fn build(
        spec: &ModelSpec,
        data: &[PairRecord],
        censoring: Option<&CensoringModel>,
        opts: &FitOptions,
    ) -> Result<Self> {
        spec.validate()?;
        if data.is_empty() {
            return Err(Error::Validation("no pairs in dataset".into()));
        }
        let x_dim = 1 + data[0].x[0].len();
        for p in data {
            if p.x[0].len() + 1 != x_dim || p.x[1].len() + 1 != x_dim {
                return Err(Error::Validation(format!(
                    "pair '{}' has inconsistent outcome covariate dimension",
                    p.pair_id
                )));
            }
        }
        let x_names: Vec<String> = match &opts.x_names {
            Some(names) => names.clone(),
            None => (1..x_dim).map(|i| format!("x{i}")).collect(),
        };
        let design = ModelDesign::new(*spec, x_dim, &x_names)?;

        let (classified, summary): (Vec<ClassifiedPair>, Option<ClassifySummary>) =
            match opts.weighting {
                WeightScheme::Ipcw => {
                    let (c, s) = classify_cohort(data, spec.tau, censoring, &opts.classify)?;
                    (c, Some(s))
                }
                WeightScheme::Naive => (classify_ignoring_censoring(data, spec.tau), None),
            };

        let mut pairs = Vec::new();
        let mut usable_by_zyg = [0usize; 2];
        for cp in &classified {
            if !cp.usable {
                continue;
            }
            let rec = &data[cp.pair_index];
            let augment = |x: &[f64]| -> Vec<f64> {
                std::iter::once(1.0).chain(x.iter().copied()).collect()
            };
            usable_by_zyg[(rec.zygosity == Zygosity::Dz) as usize] += 1;
            pairs.push(PreparedPair {
                pair_index: cp.pair_index,
                cell: cell_index(cp.y[0], cp.y[1]),
                weight: cp.weight,
                zygosity: rec.zygosity,
                x1: augment(&rec.x[0]),
                x2: augment(&rec.x[1]),
                z: rec.pair_z().to_vec(),
                gc: cp.gc,
                t_star: cp.t_star,
            });
        }
        if usable_by_zyg[0] == 0 || usable_by_zyg[1] == 0 {
            return Err(Error::Validation(format!(
                "need at least one usable pair per zygosity at tau = {}: MZ = {}, DZ = {}",
                spec.tau, usable_by_zyg[0], usable_by_zyg[1]
            )));
        }
        let mut x_mean = vec![0.0; x_dim - 1];
        let mut w_total = 0.0;
        for p in &pairs {
            for x in [&p.x1, &p.x2] {
                for (j, v) in x.iter().skip(1).enumerate() {
                    x_mean[j] += p.weight * v;
                }
                w_total += p.weight;
            }
        }
        for v in &mut x_mean {
            *v /= w_total.max(1.0);
        }
        Ok(Self {
            design,
            pairs,
            n_total: data.len(),
            uniform_design: x_dim == 1,
            summary,
            x_mean,
        })
    }

    pub fn n_used(&self) -> usize {
        self.pairs.len()
    }
}

/// Cell probabilities and their derivatives in (μ1, μ2, ρ) space.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CellTable {
    /// Probabilities indexed by 2·y1 + y2.
    pub p: [f64; 4],
    /// Gradient of each cell probability wrt (μ1, μ2, ρ).
    pub d: [[f64; 3]; 4],
    pub floored: bool,
}

pub(crate) fn cell_table(mu1: f64, mu2: f64, rho: f64) -> CellTable {
    let args = BvnArgs { a: mu1, b: mu2, rho: rho.clamp(-crate::normal::RHO_CLAMP, crate::normal::RHO_CLAMP) };
    let p11 = bvn_cdf(args);
    let g = bvn_cdf_grad(args);
    let cdf1 = norm_cdf(mu1);
    let cdf2 = norm_cdf(mu2);
    let pdf1 = phi(mu1);
    let pdf2 = phi(mu2);
    let raw = [
        1.0 - cdf1 - cdf2 + p11, // (0,0)
        cdf2 - p11,              // (0,1)
        cdf1 - p11,              // (1,0)
        p11,                     // (1,1)
    ];
    let d = [
        [-pdf1 + g.d_da, -pdf2 + g.d_db, g.d_drho],
        [-g.d_da, pdf2 - g.d_db, -g.d_drho],
        [pdf1 - g.d_da, -g.d_db, -g.d_drho],
        [g.d_da, g.d_db, g.d_drho],
    ];
    let mut floored = false;
    let mut p = [0.0; 4];
    for (i, &r) in raw.iter().enumerate() {
        if r < CELL_RATIO_FLOOR {
            floored = floored || r <= 0.0;
            p[i] = r.max(CELL_LOG_FLOOR);
        } else {
            p[i] = r;
        }
    }
    CellTable { p, d, floored }
}

/// Output of one weighted likelihood evaluation.
#[derive(Debug, Clone)]
pub struct ScoreEval {
    pub loglik: f64,
    pub score: DVector<f64>,
    /// Weighted expected information (positive semidefinite); serves as
    /// the negated Hessian in Fisher scoring and as the sandwich bread.
    pub info: DMatrix<f64>,
    pub cell_floor_hit: bool,
}

struct ZygCache {
    /// θ-space log-cell gradients, one per cell.
    score_by_cell: [DVector<f64>; 4],
    logp: [f64; 4],
    /// θ-space expected information of one pair.
    info: DMatrix<f64>,
    floored: bool,
}

fn zyg_cache(design: &ModelDesign, theta: &DVector<f64>, zygosity: Zygosity) -> ZygCache {
    let one = [1.0];
    let geo = design.geometry(theta, zygosity, &one, &one);
    let table = cell_table(geo.mu1, geo.mu2, geo.rho);
    build_cache(design.n_params(), &geo, &table)
}

fn build_cache(k: usize, geo: &Geometry, table: &CellTable) -> ZygCache {
    let mut info_v = [[0.0; 3]; 3];
    for c in 0..4 {
        let denom = table.p[c].max(CELL_RATIO_FLOOR);
        for i in 0..3 {
            for j in 0..3 {
                info_v[i][j] += table.d[c][i] * table.d[c][j] / denom;
            }
        }
    }
    let jrows = [&geo.j_mu1, &geo.j_mu2, &geo.j_rho];
    let mut info = DMatrix::zeros(k, k);
    for i in 0..3 {
        for j in 0..3 {
            if info_v[i][j] != 0.0 {
                // info += J_iᵀ M_ij J_j
                info.ger(info_v[i][j], jrows[i], jrows[j], 1.0);
            }
        }
    }
    let score_by_cell = std::array::from_fn(|c| {
        let denom = table.p[c].max(CELL_RATIO_FLOOR);
        let mut v = DVector::zeros(k);
        v.axpy(table.d[c][0] / denom, &geo.j_mu1, 1.0);
        v.axpy(table.d[c][1] / denom, &geo.j_mu2, 1.0);
        v.axpy(table.d[c][2] / denom, &geo.j_rho, 1.0);
        v
    });
    let logp = std::array::from_fn(|c| table.p[c].ln());
    ZygCache { score_by_cell, logp, info, floored: table.floored }
}

/// Weighted log-likelihood, analytic score, and expected information at
/// `theta` for a prepared cohort.
pub fn loglik_and_score(cohort: &CohortDesign, theta: &DVector<f64>) -> ScoreEval {
    let design = &cohort.design;
    let k = design.n_params();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    let mut floored = false;

    if cohort.uniform_design {
        let caches = [
            zyg_cache(design, theta, Zygosity::Mz),
            zyg_cache(design, theta, Zygosity::Dz),
        ];
        // Sufficient statistics: total weight per (zygosity, cell).
        let mut wsum = [[0.0; 4]; 2];
        for pair in &cohort.pairs {
            let zi = (pair.zygosity == Zygosity::Dz) as usize;
            wsum[zi][pair.cell] += pair.weight;
        }
        for (zi, cache) in caches.iter().enumerate() {
            floored |= cache.floored;
            let wtot: f64 = wsum[zi].iter().sum();
            for c in 0..4 {
                let w = wsum[zi][c];
                if w > 0.0 {
                    loglik += w * cache.logp[c];
                    score.axpy(w, &cache.score_by_cell[c], 1.0);
                }
            }
            info += wtot * &cache.info;
        }
    } else {
        for pair in &cohort.pairs {
            let geo = design.geometry(theta, pair.zygosity, &pair.x1, &pair.x2);
            let table = cell_table(geo.mu1, geo.mu2, geo.rho);
            let cache = build_cache(k, &geo, &table);
            floored |= cache.floored;
            loglik += pair.weight * cache.logp[pair.cell];
            score.axpy(pair.weight, &cache.score_by_cell[pair.cell], 1.0);
            info += pair.weight * &cache.info;
        }
    }
    ScoreEval { loglik, score, info, cell_floor_hit: floored }
}

/// Per-pair weighted score rows at `theta`, aligned with the full dataset
/// (zero rows for unusable pairs).
pub(crate) fn per_pair_scores(cohort: &CohortDesign, theta: &DVector<f64>) -> Vec<DVector<f64>> {
    let design = &cohort.design;
    let k = design.n_params();
    let mut rows = vec![DVector::zeros(k); cohort.n_total];
    if cohort.uniform_design {
        let caches = [
            zyg_cache(design, theta, Zygosity::Mz),
            zyg_cache(design, theta, Zygosity::Dz),
        ];
        for pair in &cohort.pairs {
            let zi = (pair.zygosity == Zygosity::Dz) as usize;
            rows[pair.pair_index] = pair.weight * &caches[zi].score_by_cell[pair.cell];
        }
    } else {
        for pair in &cohort.pairs {
            let geo = design.geometry(theta, pair.zygosity, &pair.x1, &pair.x2);
            let table = cell_table(geo.mu1, geo.mu2, geo.rho);
            let cache = build_cache(k, &geo, &table);
            rows[pair.pair_index] = pair.weight * &cache.score_by_cell[pair.cell];
        }
    }
    rows
}

/// Observed information by central differences of the analytic score;
/// fallback/diagnostic for the expected information.
pub fn observed_information(cohort: &CohortDesign, theta: &DVector<f64>) -> DMatrix<f64> {
    let k = theta.len();
    let mut out = DMatrix::zeros(k, k);
    for j in 0..k {
        let h = 1e-6 * theta[j].abs().max(1.0);
        let mut tp = theta.clone();
        tp[j] += h;
        let mut tm = theta.clone();
        tm[j] -= h;
        let sp = loglik_and_score(cohort, &tp).score;
        let sm = loglik_and_score(cohort, &tm).score;
        let col = (sp - sm) / (2.0 * h);
        for i in 0..k {
            out[(i, j)] = -col[i];
        }
    }
    // Symmetrize the finite-difference noise away.
    let t = out.transpose();
    0.5 * (out + t)
}

/// Starting values: β from a weighted univariate probit (members pooled,
/// working independence), atanh-correlations 0, log-variances log(0.5).
fn initial_theta(cohort: &CohortDesign) -> Result<DVector<f64>> {
    let design = &cohort.design;
    let x_dim = design.x_dim;
    let beta_marginal = univariate_probit(cohort, x_dim)?;
    let k = design.n_params();
    let mut theta = DVector::zeros(k);
    match &design.spec.kind {
        ModelKind::FlexibleBiprobit { zygosity_beta } => {
            for j in 0..x_dim {
                theta[j] = beta_marginal[j];
                if *zygosity_beta {
                    theta[x_dim + j] = beta_marginal[j];
                }
            }
            // correlations start at 0
        }
        ModelKind::Polygenic { components } => {
            let q0 = design.aux_offset();
            let n_comp = components.members().len();
            let total0 = 1.0 + 0.5 * n_comp as f64;
            for j in 0..x_dim {
                theta[j] = beta_marginal[j] * total0.sqrt();
            }
            for i in 0..n_comp {
                theta[q0 + i] = 0.5_f64.ln();
            }
        }
    }
    Ok(theta)
}

/// Weighted probit regression of the pooled member outcomes.
fn univariate_probit(cohort: &CohortDesign, x_dim: usize) -> Result<DVector<f64>> {
    let mut wsum = 0.0;
    let mut ysum = 0.0;
    for p in &cohort.pairs {
        wsum += 2.0 * p.weight;
        ysum += p.weight * ((p.cell >= 2) as usize as f64 + (p.cell % 2 == 1) as usize as f64);
    }
    let pbar = (ysum / wsum).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(x_dim);
    beta[0] = norm_quantile(pbar)?;
    if x_dim == 1 {
        // Intercept-only: the probit of the weighted mean is already the MLE.
        return Ok(beta);
    }
    for _ in 0..25 {
        let mut score = DVector::zeros(x_dim);
        let mut info = DMatrix::zeros(x_dim, x_dim);
        for p in &cohort.pairs {
            for (m, x) in [(&p.x1, p.cell >= 2), (&p.x2, p.cell % 2 == 1)] {
                let xv = DVector::from_column_slice(m);
                let mu: f64 = xv.dot(&beta);
                let mu = mu.clamp(-8.0, 8.0);
                let cdf = norm_cdf(mu).clamp(1e-12, 1.0 - 1e-12);
                let pdf = phi(mu);
                let y = x as usize as f64;
                let r = pdf / (cdf * (1.0 - cdf));
                score.axpy(p.weight * (y - cdf) * r, &xv, 1.0);
                info.ger(p.weight * pdf * r, &xv, &xv, 1.0);
            }
        }
        let step = linalg::solve(&info, &score)
            .ok_or_else(|| Error::Singular("probit initializer information".into()))?;
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    Ok(beta)
}

/// Fit the model by Fisher scoring with step-halving.
///
/// Convergence: max |score| < 1e-8 or relative step < 1e-10, at most 100
/// iterations with up to 20 halvings each. The weighted log-likelihood is
/// nondecreasing across accepted iterates.
pub fn fit(
    spec: &ModelSpec,
    data: &[PairRecord],
    censoring: Option<&CensoringModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let cohort = CohortDesign::build(spec, data, censoring, opts)?;
    fit_prepared(&cohort, censoring, opts)
}

pub(crate) fn fit_prepared(
    cohort: &CohortDesign,
    censoring: Option<&CensoringModel>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let design = &cohort.design;
    let k = design.n_params();
    let max_iter = opts.max_iter.unwrap_or(100);
    let score_tol = 1e-8;
    let step_tol = 1e-10;

    let mut theta = initial_theta(cohort)?;
    let mut eval = loglik_and_score(cohort, &theta);
    let mut flags = FitFlags { boundary: false, cell_floor: eval.cell_floor_hit };
    let mut converged = false;
    let mut iterations = 0;

    let clamp_vars = |t: &mut DVector<f64>| {
        if let ModelKind::Polygenic { components } = &design.spec.kind {
            let q0 = design.aux_offset();
            for i in 0..components.members().len() {
                if t[q0 + i] < MIN_LOG_VAR {
                    t[q0 + i] = MIN_LOG_VAR;
                }
            }
        }
    };

    // Log-variance coordinates pinned at the hard floor are eliminated
    // from the Newton system: their information rows scale like the
    // (vanishing) component variance and would otherwise poison the solve.
    let pinned = |theta: &DVector<f64>| -> Vec<bool> {
        let mut p = vec![false; k];
        if let ModelKind::Polygenic { components } = &design.spec.kind {
            let q0 = design.aux_offset();
            for i in 0..components.members().len() {
                p[q0 + i] = theta[q0 + i] <= MIN_LOG_VAR + 1e-9;
            }
        }
        p
    };
    let free_amax = |v: &DVector<f64>, pinned: &[bool]| -> f64 {
        v.iter()
            .zip(pinned)
            .filter(|(_, &p)| !p)
            .map(|(x, _)| x.abs())
            .fold(0.0, f64::max)
    };

    'newton: for iter in 1..=max_iter {
        iterations = iter;
        let pin = pinned(&theta);
        let free: Vec<usize> = (0..k).filter(|&j| !pin[j]).collect();
        let nf = free.len();
        if nf == 0 {
            converged = true;
            break;
        }
        let info_f = DMatrix::from_fn(nf, nf, |i, j| eval.info[(free[i], free[j])]);
        let score_f = DVector::from_iterator(nf, free.iter().map(|&j| eval.score[j]));
        let is_var_coord = |j: usize| -> bool {
            if let ModelKind::Polygenic { components } = &design.spec.kind {
                let q0 = design.aux_offset();
                (q0..q0 + components.members().len()).contains(&j)
            } else {
                false
            }
        };
        let damping_base = info_f.trace().max(1e-8) / nf as f64;
        // Candidates accepted only at microscopic line-search scales are
        // kept as a fallback while stronger damping is tried: committing
        // them directly stalls the iteration when a variance component
        // drifts toward zero.
        let mut fallback: Option<(DVector<f64>, ScoreEval, f64)> = None;
        'attempts: for attempt in 0..8 {
            let sys = if attempt == 0 {
                info_f.clone()
            } else {
                // Ridge-damped retry, escalating toward a gradient step.
                let lambda = damping_base * 10f64.powi(attempt - 5);
                &info_f + lambda * DMatrix::identity(nf, nf)
            };
            let Some(step_f) = linalg::solve(&sys, &score_f) else {
                continue;
            };
            // A variance coordinate demanding a dive of several log
            // units is heading for the boundary; its cross-curvature
            // terms poison the joint direction, so send it to the floor
            // alone and let the next iteration drop it from the system.
            if attempt == 0 {
                let mut plunge = theta.clone();
                let mut any = false;
                for (i, &j) in free.iter().enumerate() {
                    if is_var_coord(j) && step_f[i] < -4.0 {
                        plunge[j] = MIN_LOG_VAR;
                        any = true;
                    }
                }
                if any {
                    let plunge_eval = loglik_and_score(cohort, &plunge);
                    if plunge_eval.loglik.is_finite()
                        && plunge_eval.loglik >= eval.loglik - 1e-10
                    {
                        theta = plunge;
                        eval = plunge_eval;
                        flags.cell_floor |= eval.cell_floor_hit;
                        continue 'newton;
                    }
                }
            }
            let mut step = DVector::zeros(k);
            for (i, &j) in free.iter().enumerate() {
                // Variance coordinates may plunge freely (the hard floor
                // pins them) but may not explode upward; everything else
                // follows the solved direction.
                step[j] = if is_var_coord(j) { step_f[i].min(2.0) } else { step_f[i] };
            }
            let mut scale = 1.0;
            for _ in 0..30 {
                let mut cand = &theta + scale * &step;
                clamp_vars(&mut cand);
                if (&cand - &theta).amax() == 0.0 {
                    break; // no movement left at this damping level
                }
                let cand_eval = loglik_and_score(cohort, &cand);
                if cand_eval.loglik.is_finite() && cand_eval.loglik >= eval.loglik - 1e-10 {
                    let rel_step = (&cand - &theta).amax() / theta.amax().max(1.0);
                    if scale < 1e-3 && rel_step > step_tol {
                        // Crawl: remember the best fallback and escalate.
                        if fallback.as_ref().is_none_or(|f| cand_eval.loglik > f.1.loglik) {
                            fallback = Some((cand, cand_eval, rel_step));
                        }
                        continue 'attempts;
                    }
                    theta = cand;
                    eval = cand_eval;
                    flags.cell_floor |= eval.cell_floor_hit;
                    let score_max = free_amax(&eval.score, &pinned(&theta));
                    if score_max < score_tol || rel_step < step_tol {
                        converged = true;
                        break 'newton;
                    }
                    continue 'newton;
                }
                scale *= 0.5;
            }
        }
        {
            if let Some((cand, cand_eval, rel_step)) = fallback {
                theta = cand;
                eval = cand_eval;
                flags.cell_floor |= eval.cell_floor_hit;
                let score_max = free_amax(&eval.score, &pinned(&theta));
                if score_max < score_tol || rel_step < step_tol {
                    converged = true;
                    break;
                }
                continue;
            }
            // No ascent found at any damping level: stationary up to
            // line-search resolution.
            converged = free_amax(&eval.score, &pin) < 1e-4;
            break;
        }
    }

    if let ModelKind::Polygenic { components } = &design.spec.kind {
        let q0 = design.aux_offset();
        for i in 0..components.members().len() {
            if theta[q0 + i] <= MIN_LOG_VAR + 1e-9 {
                flags.boundary = true;
            }
        }
    }

    if !converged {
        return Err(Error::NonConvergence { iterations, max_score: eval.score.amax() });
    }

    let vcov_model = linalg::inverse(&eval.info)
        .ok_or_else(|| Error::Singular("expected information at the optimum".into()))?;

    // Sandwich bread: the observed derivative of the score at the
    // optimum (by exact-gradient differencing), falling back to the
    // expected information when it is not invertible, e.g. at a variance
    // boundary.
    let bread_inv = linalg::inverse(&observed_information(cohort, &theta))
        .filter(|inv| inv.diagonal().iter().all(|v| v.is_finite() && *v > 0.0))
        .unwrap_or_else(|| vcov_model.clone());

    // Fixed-weight sandwich from per-pair weighted scores.
    let score_rows = per_pair_scores(cohort, &theta);
    let rows2: Vec<DVector<f64>> = score_rows.iter().map(|u| &bread_inv * u).collect();
    let mut vcov_if2 = DMatrix::zeros(k, k);
    for r in &rows2 {
        vcov_if2.ger(1.0, r, r, 1.0);
    }

    // Two-stage correction when censoring-model influence rows exist.
    let if3 = match (opts.weighting, censoring) {
        (WeightScheme::Ipcw, Some(model)) => {
            variance::two_stage(cohort, &theta, model, &bread_inv, &rows2)?
        }
        _ => None,
    };
    let (vcov_if3, if_rows) = match if3 {
        Some((v, rows)) => (Some(v), rows),
        None => (None, rows2),
    };

    let p = k as f64;
    let aic = -2.0 * eval.loglik + 2.0 * p;
    Ok(FitResult {
        design: design.clone(),
        theta,
        vcov_model,
        vcov_if2,
        vcov_if3,
        loglik_weighted: eval.loglik,
        aic_ipcw: aic,
        n_total: cohort.n_total,
        n_used: cohort.n_used(),
        iterations,
        converged,
        flags,
        if_rows,
        classify_summary: cohort.summary.clone(),
        weighting: opts.weighting,
        x_ref_default: cohort.x_mean.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EventStatus;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use super::tests_helpers::latent_pairs;

    #[test]
    fn single_pair_loglik_is_log_quarter() {
        // μ = (0,0), ρ = 0, observed (0,0): contribution log 0.25.
        let data = vec![PairRecord {
            pair_id: "a".into(),
            zygosity: Zygosity::Mz,
            time: [10.0, 10.0],
            status: [EventStatus::Competing, EventStatus::Competing],
            x: [vec![], vec![]],
            z: [vec![], vec![]],
        },
        PairRecord {
            pair_id: "b".into(),
            zygosity: Zygosity::Dz,
            time: [10.0, 10.0],
            status: [EventStatus::Competing, EventStatus::Competing],
            x: [vec![], vec![]],
            z: [vec![], vec![]],
        }];
        let spec = ModelSpec::flexible(80.0);
        let cohort = CohortDesign::build(&spec, &data, None, &FitOptions::default()).unwrap();
        let theta = DVector::zeros(3);
        let eval = loglik_and_score(&cohort, &theta);
        assert_abs_diff_eq!(eval.loglik, 2.0 * 0.25_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let data = latent_pairs(120, -1.0, 0.6, 0.3, 11);
        for spec in [
            ModelSpec::flexible(80.0),
            ModelSpec::flexible_zygosity_beta(80.0),
            ModelSpec::polygenic(ComponentSet::ACE, 80.0),
            ModelSpec::polygenic(ComponentSet::ADE, 80.0),
        ] {
            let cohort = CohortDesign::build(&spec, &data, None, &FitOptions::default()).unwrap();
            let k = cohort.design.n_params();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            for _ in 0..8 {
                let theta = DVector::from_iterator(
                    k,
                    (0..k).map(|_| rng.random_range(-1.2..0.6)),
                );
                let eval = loglik_and_score(&cohort, &theta);
                for j in 0..k {
                    let h = 1e-6 * theta[j].abs().max(1.0);
                    let mut tp = theta.clone();
                    tp[j] += h;
                    let mut tm = theta.clone();
                    tm[j] -= h;
                    let fd = (loglik_and_score(&cohort, &tp).loglik
                        - loglik_and_score(&cohort, &tm).loglik)
                        / (2.0 * h);
                    let tol = 1e-6 * eval.score[j].abs().max(1.0);
                    assert!(
                        (eval.score[j] - fd).abs() < tol,
                        "component {j}: analytic {} vs fd {fd}",
                        eval.score[j]
                    );
                }
            }
        }
    }

    #[test]
    fn flexible_fit_recovers_truth_uncensored() {
        let data = latent_pairs(4000, -1.5, 2.0 / 3.0, 0.5, 21);
        let fit = fit(&ModelSpec::flexible(80.0), &data, None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let se = fit.se();
        assert!((fit.theta[0] - (-1.5)).abs() < 4.0 * se[0], "mu {}", fit.theta[0]);
        let rho_mz = fit.theta[1].tanh();
        let rho_dz = fit.theta[2].tanh();
        assert!((rho_mz - 2.0 / 3.0).abs() < 0.08, "rho_mz {rho_mz}");
        assert!((rho_dz - 0.5).abs() < 0.10, "rho_dz {rho_dz}");
        // Sandwich and model covariance agree in order of magnitude.
        for j in 0..fit.n_params() {
            let ratio = fit.vcov_if2[(j, j)] / fit.vcov_model[(j, j)];
            assert!(ratio > 0.5 && ratio < 2.0, "vcov ratio {ratio}");
        }
    }

    #[test]
    fn polygenic_ace_fit_matches_flexible_reparameterization() {
        // The intercept-only ACE model is a reparameterization of
        // (μ, ρ_MZ, ρ_DZ) on the cone ρ_MZ/2 ≤ ρ_DZ ≤ ρ_MZ, so both fits
        // must find the same optimum on the same data.
        let data = latent_pairs(4000, -1.5, 2.0 / 3.0, 0.5, 22);
        let flex = fit(&ModelSpec::flexible(80.0), &data, None, &FitOptions::default()).unwrap();
        let ace = fit(
            &ModelSpec::polygenic(ComponentSet::ACE, 80.0),
            &data,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(ace.converged);
        let q0 = ace.design.aux_offset();
        let map = PolygenicMap::new(&[ace.theta[q0], ace.theta[q0 + 1]], &ComponentSet::ACE);
        assert_abs_diff_eq!(ace.loglik_weighted, flex.loglik_weighted, epsilon = 1e-6);
        assert_abs_diff_eq!(map.rho(Zygosity::Mz), flex.theta[1].tanh(), epsilon = 1e-6);
        assert_abs_diff_eq!(map.rho(Zygosity::Dz), flex.theta[2].tanh(), epsilon = 1e-6);
        assert_abs_diff_eq!(
            ace.theta[0] / map.total_var.sqrt(),
            flex.theta[0],
            epsilon = 1e-6
        );
        // Proportions land near the generating (1/3, 1/3, 1/3) up to
        // Monte Carlo noise at this sample size.
        let prop_a = map.var_a / map.total_var;
        let prop_c = map.var_c / map.total_var;
        assert!((prop_a - 1.0 / 3.0).abs() < 0.15, "prop_a {prop_a}");
        assert!((prop_c - 1.0 / 3.0).abs() < 0.15, "prop_c {prop_c}");
    }

    #[test]
    fn expected_and_observed_information_agree_at_optimum() {
        let data = latent_pairs(2000, -1.2, 0.6, 0.3, 23);
        let spec = ModelSpec::flexible(80.0);
        let cohort = CohortDesign::build(&spec, &data, None, &FitOptions::default()).unwrap();
        let fit = fit_prepared(&cohort, None, &FitOptions::default()).unwrap();
        let expected = loglik_and_score(&cohort, &fit.theta).info;
        let observed = observed_information(&cohort, &fit.theta);
        for i in 0..expected.nrows() {
            for j in 0..expected.ncols() {
                let scale = expected[(i, i)].sqrt() * expected[(j, j)].sqrt();
                assert!(
                    (expected[(i, j)] - observed[(i, j)]).abs() < 0.08 * scale.max(1.0),
                    "info mismatch at ({i},{j}): {} vs {}",
                    expected[(i, j)],
                    observed[(i, j)]
                );
            }
        }
    }

    #[test]
    fn ae_fit_is_stationary_point_of_correlation_constrained_flexible() {
        // AE truth: ρ_DZ = ρ_MZ / 2.
        let data = latent_pairs(3000, -1.3, 0.6, 0.3, 24);
        let ae = fit(
            &ModelSpec::polygenic(ComponentSet::AE, 80.0),
            &data,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        let q0 = ae.design.aux_offset();
        let map = PolygenicMap::new(&[ae.theta[q0]], &ComponentSet::AE);
        let rho = map.rho(Zygosity::Mz);
        let mu = ae.theta[0] / map.total_var.sqrt();

        let spec = ModelSpec::flexible(80.0);
        let cohort = CohortDesign::build(&spec, &data, None, &FitOptions::default()).unwrap();
        let theta_flex =
            DVector::from_column_slice(&[mu, rho.atanh(), (rho / 2.0).atanh()]);
        let eval = loglik_and_score(&cohort, &theta_flex);
        // Identical weighted log-likelihood maxima under the two
        // parameterizations of the same constrained family.
        assert_abs_diff_eq!(eval.loglik, ae.loglik_weighted, epsilon = 1e-6);
        // Stationarity of the constrained problem (chain rule onto (μ, ρ)).
        let d_mu = eval.score[0];
        let d_rho = eval.score[1] / (1.0 - rho * rho)
            + eval.score[2] * 0.5 / (1.0 - 0.25 * rho * rho);
        let n = data.len() as f64;
        assert!(d_mu.abs() / n < 1e-6, "d_mu {d_mu}");
        assert!(d_rho.abs() / n < 1e-6, "d_rho {d_rho}");
    }

    #[test]
    fn wald_requires_rows_and_rank() {
        let data = latent_pairs(300, -1.2, 0.6, 0.3, 25);
        let fit = fit(&ModelSpec::flexible(80.0), &data, None, &FitOptions::default()).unwrap();
        let empty = DMatrix::<f64>::zeros(0, fit.n_params());
        assert!(wald_test(&fit, &empty).is_err());
        let mut rank_deficient = DMatrix::<f64>::zeros(2, fit.n_params());
        rank_deficient[(0, 1)] = 1.0;
        rank_deficient[(1, 1)] = 2.0;
        assert!(wald_test(&fit, &rank_deficient).is_err());
        let test = fit.genetic_effect_test().unwrap();
        assert!(test.p_value > 0.0 && test.p_value <= 1.0);
        assert_eq!(test.df, 1);
    }

    #[test]
    fn marginal_homogeneity_test_accepts_under_null() {
        let data = latent_pairs(2000, -1.2, 0.6, 0.3, 26);
        let fit = fit(
            &ModelSpec::flexible_zygosity_beta(80.0),
            &data,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        let test = fit.marginal_homogeneity_test().unwrap();
        // Same marginals by construction: should not reject wildly.
        assert!(test.p_value > 1e-4, "p = {}", test.p_value);
    }

    #[test]
    fn if3_unsupported_without_weibull_model() {
        let data = latent_pairs(300, -1.2, 0.6, 0.3, 27);
        let fit = fit(&ModelSpec::flexible(80.0), &data, None, &FitOptions::default()).unwrap();
        assert!(matches!(fit.vcov_if3(), Err(Error::Unsupported(_))));
        assert_eq!(fit.if_rows.len(), fit.n_total);
        // Influence rows average to zero at the optimum.
        let mean = fit.if_rows.iter().fold(DVector::zeros(fit.n_params()), |acc, r| acc + r)
            / fit.n_total as f64;
        assert!(mean.amax() < 1e-6, "mean IF row {}", mean.amax());
    }

    #[test]
    fn aic_is_minus_two_loglik_plus_two_p() {
        let data = latent_pairs(500, -1.2, 0.6, 0.3, 28);
        let fit = fit(&ModelSpec::flexible(80.0), &data, None, &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(
            fit.aic(),
            -2.0 * fit.loglik_weighted + 2.0 * fit.n_params() as f64,
            epsilon = 1e-12
        );
    }
}

/// Test-only generator: uncensored pairs from the latent threshold model,
/// y_j = I(W_j ≤ μ) with corr(W₁, W₂) = ρ per zygosity. Affected members
/// get cause 1, unaffected cause 2, all observed before τ.
#[cfg(test)]
pub(crate) mod tests_helpers {
    use super::*;
    use crate::data::EventStatus;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    pub(crate) fn latent_pairs(n_per_zyg: usize, mu: f64, rho_mz: f64, rho_dz: f64, seed: u64) -> Vec<PairRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (zyg, rho) in [(Zygosity::Mz, rho_mz), (Zygosity::Dz, rho_dz)] {
            for i in 0..n_per_zyg {
                let g0: f64 = rng.sample(StandardNormal);
                let (s, r) = (rho.max(0.0).sqrt(), (1.0 - rho.max(0.0)).sqrt());
                let w = [s * g0 + r * rng.sample::<f64, _>(StandardNormal), s * g0 + r * rng.sample::<f64, _>(StandardNormal)];
                let status = [
                    if w[0] <= mu { EventStatus::CauseOfInterest } else { EventStatus::Competing },
                    if w[1] <= mu { EventStatus::CauseOfInterest } else { EventStatus::Competing },
                ];
                out.push(PairRecord { pair_id: format!("{}{}", zyg.label(), i), zygosity: zyg, time: [40.0, 40.0], status, x: [vec![], vec![]], z: [vec![], vec![]] });
            }
        }
        out
    }
}

