//! Synthetic twin-cohort generator.
//!
//! Cohorts follow a competing-risks design with a liability-style
//! cause-of-interest incidence: conditional on the pair's random effect
//! η₁, the cause-1 cumulative incidence is
//!
//! ```text
//! F₁(t | η₁) = Φ((α(t) + Φ⁻¹(p₁) + η₁) / σ_E₁),   α(t) = -exp(s - r·t),
//! ```
//!
//! rising to a lifetime prevalence of `p₁` on average. The cause is drawn
//! Bernoulli(F₁(∞ | η₁)); cause-1 times invert F₁ analytically, and the
//! competing-death times invert `Φ((slope·(t - center) + η₂)/σ_E₂)`. The
//! random effects follow the twin structure: additive effects fully shared
//! in MZ pairs and correlated ½ in DZ pairs, dominance ¼ in DZ pairs, and
//! a shared environment common to both members and to both competing
//! risks (η₂ = η^C). Censoring is administrative — one Weibull censoring
//! time per pair with cumulative hazard `(λt)^ν`, scaled by `exp(-X)` in
//! the covariate scenario where X also loads on the shared environment
//! and on the death model.
//!
//! All draws run on per-replicate counter streams of a seeded ChaCha
//! generator, so cohorts are byte-identical across runs and across
//! parallel replication.

mod replicate;

pub use replicate::{
    run_replication_study, Estimand, EstimatorArm, ReplicationOptions, ReplicationSummary,
    SummaryRow,
};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EventStatus, PairRecord, Zygosity};
use crate::error::{Error, Result};
use crate::normal::{norm_cdf, norm_quantile, bvn_cdf, BvnArgs};

/// Covariate scenario: a shared N(0, var_x) covariate per pair loading on
/// the shared environment, the death model, and the censoring hazard.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateScenario {
    pub var_x: f64,
    /// η^C = c_loading·X + η^{C₀}.
    pub c_loading: f64,
    /// η₂ = η^C + death_loading·X.
    pub death_loading: f64,
    /// Λ(t) = (λt)^ν exp(censoring_loading·X).
    pub censoring_loading: f64,
}

impl Default for CovariateScenario {
    fn default() -> Self {
        Self { var_x: 0.25, c_loading: 0.5, death_loading: -0.25, censoring_loading: -1.0 }
    }
}

/// Generator constants. Defaults reproduce the baseline design:
/// `α(t) = -exp(10 - 0.15 t)`, lifetime prevalence 0.065, death model
/// `Φ(0.1(t - 85) + η₂)`, Weibull censoring with `log λ = -4.5` and
/// `log ν = 0.5` (≈59% censoring; `log ν = 2` gives ≈48%).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_mz: usize,
    pub n_dz: usize,
    /// Liability variance components (proportions of total, E implied as
    /// 1 - A - C - D).
    pub sigma_a2: f64,
    pub sigma_c2: f64,
    pub sigma_d2: f64,
    /// Lifetime prevalence of the cause of interest.
    pub p1: f64,
    /// α(t) = -exp(alpha_scale - alpha_rate·t).
    pub alpha_scale: f64,
    pub alpha_rate: f64,
    /// Death-time model Φ((death_slope·(t - death_center) + η₂)/σ_E₂).
    pub death_slope: f64,
    pub death_center: f64,
    /// Weibull censoring: cumulative hazard (λt)^ν.
    pub log_lambda: f64,
    pub log_nu: f64,
    pub covariate: Option<CovariateScenario>,
    /// Residual variance of the death model; `None` means 1 - var(η₂),
    /// mirroring the cause-1 convention.
    pub sigma_e2_death: Option<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_mz: 2000,
            n_dz: 2000,
            sigma_a2: 1.0 / 3.0,
            sigma_c2: 1.0 / 3.0,
            sigma_d2: 0.0,
            p1: 0.065,
            alpha_scale: 10.0,
            alpha_rate: 0.15,
            death_slope: 0.1,
            death_center: 85.0,
            log_lambda: -4.5,
            log_nu: 0.5,
            covariate: None,
            sigma_e2_death: None,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn sigma_e2(&self) -> f64 {
        1.0 - self.sigma_a2 - self.sigma_c2 - self.sigma_d2
    }

    /// var(η₂): shared environment plus the death loading of X.
    fn var_eta2(&self) -> f64 {
        match &self.covariate {
            None => self.sigma_c2,
            Some(cov) => {
                // η₂ = c_loading·X + η^{C₀} + death_loading·X
                let load = cov.c_loading + cov.death_loading;
                let var_c0 = self.sigma_c2 - cov.c_loading * cov.c_loading * cov.var_x;
                load * load * cov.var_x + var_c0
            }
        }
    }

    fn sigma_e2_death_resolved(&self) -> f64 {
        self.sigma_e2_death.unwrap_or(1.0 - self.var_eta2())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mz == 0 || self.n_dz == 0 {
            return Err(Error::Validation("need at least one pair per zygosity".into()));
        }
        for (name, v) in [
            ("sigma_a2", self.sigma_a2),
            ("sigma_c2", self.sigma_c2),
            ("sigma_d2", self.sigma_d2),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.sigma_e2() <= 0.0 {
            return Err(Error::Validation(
                "variance components must leave a positive unique-environment share".into(),
            ));
        }
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return Err(Error::Validation(format!("p1 must be in (0, 1), got {}", self.p1)));
        }
        if let Some(cov) = &self.covariate {
            if cov.var_x < 0.0 {
                return Err(Error::Validation("var_x must be nonnegative".into()));
            }
            if self.sigma_c2 - cov.c_loading * cov.c_loading * cov.var_x < 0.0 {
                return Err(Error::Validation(
                    "shared-environment variance is smaller than its covariate loading".into(),
                ));
            }
        }
        if self.sigma_e2_death_resolved() <= 0.0 {
            return Err(Error::Validation("death-model residual variance must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form population values of the reported estimands.
    pub fn truth(&self) -> TrueValues {
        let rho = |zyg: Zygosity| -> f64 {
            let (ka, kd) = match zyg {
                Zygosity::Mz => (1.0, 1.0),
                Zygosity::Dz => (0.5, 0.25),
            };
            ka * self.sigma_a2 + self.sigma_c2 + kd * self.sigma_d2
        };
        let q = norm_quantile(self.p1).expect("p1 validated in (0,1)");
        let conc = |rho: f64| bvn_cdf(BvnArgs { a: q, b: q, rho });
        let rho_mz = rho(Zygosity::Mz);
        let rho_dz = rho(Zygosity::Dz);
        let c_mz = conc(rho_mz);
        let c_dz = conc(rho_dz);
        let log_or = |c: f64| {
            let p10 = self.p1 - c;
            let p00 = 1.0 - 2.0 * self.p1 + c;
            (c * p00 / (p10 * p10)).ln()
        };
        TrueValues {
            f1: self.p1,
            rho_mz,
            rho_dz,
            concordance_mz: c_mz,
            concordance_dz: c_dz,
            lambda_mz: c_mz / (self.p1 * self.p1),
            lambda_dz: c_dz / (self.p1 * self.p1),
            log_or_mz: log_or(c_mz),
            log_or_dz: log_or(c_dz),
            sigma_a2: self.sigma_a2,
            sigma_c2: self.sigma_c2,
            sigma_d2: self.sigma_d2,
            sigma_e2: self.sigma_e2(),
            h2: self.sigma_a2 + self.sigma_d2,
        }
    }
}

/// Analytic population values implied by a generator configuration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TrueValues {
    pub f1: f64,
    pub rho_mz: f64,
    pub rho_dz: f64,
    pub concordance_mz: f64,
    pub concordance_dz: f64,
    pub lambda_mz: f64,
    pub lambda_dz: f64,
    pub log_or_mz: f64,
    pub log_or_dz: f64,
    pub sigma_a2: f64,
    pub sigma_c2: f64,
    pub sigma_d2: f64,
    pub sigma_e2: f64,
    pub h2: f64,
}

/// Counters for the inversion guards; expected to stay zero at the
/// default constants.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SimDiagnostics {
    pub clamped_cause1_times: usize,
    pub clamped_death_times: usize,
}

/// A generated cohort with its diagnostics.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub pairs: Vec<PairRecord>,
    pub diagnostics: SimDiagnostics,
}

/// Generate one cohort. Equal seeds produce byte-identical cohorts;
/// `stream` separates replicates.
pub fn simulate_cohort(config: &SimConfig) -> Result<Cohort> {
    simulate_cohort_stream(config, 0)
}

pub fn simulate_cohort_stream(config: &SimConfig, stream: u64) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut diagnostics = SimDiagnostics::default();
    let mut pairs = Vec::with_capacity(config.n_mz + config.n_dz);
    for zyg in [Zygosity::Mz, Zygosity::Dz] {
        let n = if zyg == Zygosity::Mz { config.n_mz } else { config.n_dz };
        for i in 0..n {
            let pair_id = format!("{}{:06}", zyg.label().to_lowercase(), i + 1);
            pairs.push(simulate_pair(config, zyg, pair_id, &mut rng, &mut diagnostics));
        }
    }
    Ok(Cohort { pairs, diagnostics })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform_open(rng: &mut ChaCha8Rng) -> f64 {
    Open01.sample(rng)
}

fn simulate_pair(
    config: &SimConfig,
    zygosity: Zygosity,
    pair_id: String,
    rng: &mut ChaCha8Rng,
    diagnostics: &mut SimDiagnostics,
) -> PairRecord {
    let sd_a = config.sigma_a2.sqrt();
    let sd_d = config.sigma_d2.sqrt();

    // Additive effects: fully shared (MZ) or correlation ½ (DZ).
    let g_a = normal(rng);
    let a = match zygosity {
        Zygosity::Mz => [sd_a * g_a, sd_a * g_a],
        Zygosity::Dz => {
            let half = (config.sigma_a2 / 2.0).sqrt();
            let g1 = normal(rng);
            let g2 = normal(rng);
            [half * (g_a + g1), half * (g_a + g2)]
        }
    };
    // Dominance: shared (MZ) or correlation ¼ (DZ).
    let d = if config.sigma_d2 > 0.0 {
        let g_d = normal(rng);
        match zygosity {
            Zygosity::Mz => [sd_d * g_d, sd_d * g_d],
            Zygosity::Dz => {
                let shared = (config.sigma_d2 / 4.0).sqrt();
                let own = (3.0 * config.sigma_d2 / 4.0).sqrt();
                [shared * g_d + own * normal(rng), shared * g_d + own * normal(rng)]
            }
        }
    } else {
        [0.0, 0.0]
    };

    // Shared environment and the pair covariate.
    let (x, eta_c) = match &config.covariate {
        None => (None, config.sigma_c2.sqrt() * normal(rng)),
        Some(cov) => {
            let x = cov.var_x.sqrt() * normal(rng);
            let var_c0 = config.sigma_c2 - cov.c_loading * cov.c_loading * cov.var_x;
            (Some(x), cov.c_loading * x + var_c0.sqrt() * normal(rng))
        }
    };
    // Death-model random effect: the shared environment plus the death
    // loading of X.
    let eta2 = eta_c
        + match (&config.covariate, x) {
            (Some(cov), Some(xv)) => cov.death_loading * xv,
            _ => 0.0,
        };

    let q1 = norm_quantile(config.p1).expect("validated");
    let sd_e1 = config.sigma_e2().sqrt();
    let sd_e2 = config.sigma_e2_death_resolved().sqrt();

    let mut time = [0.0; 2];
    let mut status = [EventStatus::Censored; 2];

    // One administrative censoring time per pair.
    let nu = config.log_nu.exp();
    let mut c_time = (-uniform_open(rng).ln()).powf(1.0 / nu) * (-config.log_lambda).exp();
    if let (Some(cov), Some(xv)) = (&config.covariate, x) {
        // Λ(t) = (λt)^ν exp(loading·X) ⇒ C scales by exp(-loading·X/ν).
        c_time *= (-cov.censoring_loading * xv / nu).exp();
    }

    for k in 0..2 {
        let eta1 = a[k] + d[k] + eta_c;
        let f1_inf = norm_cdf((eta1 + q1) / sd_e1);
        let is_cause1 = uniform_open(rng) < f1_inf;
        let t_event = if is_cause1 {
            sample_cause1_time(config, eta1, f1_inf, q1, sd_e1, uniform_open(rng), diagnostics)
        } else {
            sample_death_time(config, eta2, sd_e2, uniform_open(rng), diagnostics)
        };
        if c_time < t_event {
            time[k] = c_time;
            status[k] = EventStatus::Censored;
        } else {
            time[k] = t_event;
            status[k] = if is_cause1 { EventStatus::CauseOfInterest } else { EventStatus::Competing };
        }
    }

    let z: Vec<f64> = x.into_iter().collect();
    PairRecord {
        pair_id,
        zygosity,
        time,
        status,
        x: [vec![], vec![]],
        z: [z.clone(), z],
    }
}

/// Invert u·F₁(∞|η₁) = Φ((α(t) + q₁ + η₁)/σ_E₁) for t.
fn sample_cause1_time(
    config: &SimConfig,
    eta1: f64,
    f1_inf: f64,
    q1: f64,
    sd_e1: f64,
    u: f64,
    diagnostics: &mut SimDiagnostics,
) -> f64 {
    let target = (u * f1_inf).clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
    let s = sd_e1 * norm_quantile(target).expect("target in (0,1)") - q1 - eta1;
    // α ranges over (-exp(alpha_scale), 0); guard the floating-point edges.
    if s >= 0.0 {
        diagnostics.clamped_cause1_times += 1;
        return 120.0;
    }
    if -s >= config.alpha_scale.exp() {
        diagnostics.clamped_cause1_times += 1;
        return 0.0;
    }
    (config.alpha_scale - (-s).ln()) / config.alpha_rate
}

/// Invert u = Φ((slope·(t - center) + η₂)/σ_E₂) for t.
fn sample_death_time(
    config: &SimConfig,
    eta2: f64,
    sd_e2: f64,
    u: f64,
    diagnostics: &mut SimDiagnostics,
) -> f64 {
    let t = config.death_center
        + (sd_e2 * norm_quantile(u).expect("u in (0,1)") - eta2) / config.death_slope;
    if t < 0.0 {
        diagnostics.clamped_death_times += 1;
        return 0.0;
    }
    t
}
