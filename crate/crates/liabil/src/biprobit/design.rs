//! Model parameterizations: how θ maps to the per-pair bivariate probit
//! geometry (μ₁, μ₂, ρ) and the chain-rule Jacobians of that map.
//!
//! Two parameterizations share one fitting path:
//!
//! * flexible bivariate probit: probit-scale regression coefficients
//!   (shared or zygosity-specific) plus one tetrachoric correlation per
//!   zygosity on the atanh scale;
//! * polygenic variance components: raw log-variances of the selected
//!   components (unique environment fixed at variance 1), with the
//!   zygosity correlations induced by the kinship coefficients — additive
//!   effects weighted 1 (MZ) / ½ (DZ), dominance 1 (MZ) / ¼ (DZ), shared
//!   environment 1 in both.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Zygosity;
use crate::error::{Error, Result};

/// Variance components of a polygenic model. The unique-environment
/// component is always present with its variance fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub additive: bool,
    pub shared_env: bool,
    pub dominance: bool,
}

impl ComponentSet {
    pub const ACE: Self = Self { additive: true, shared_env: true, dominance: false };
    pub const ADE: Self = Self { additive: true, shared_env: false, dominance: true };
    pub const AE: Self = Self { additive: true, shared_env: false, dominance: false };
    pub const CE: Self = Self { additive: false, shared_env: true, dominance: false };
    pub const DE: Self = Self { additive: false, shared_env: false, dominance: true };
    pub const E: Self = Self { additive: false, shared_env: false, dominance: false };

    pub fn validate(&self) -> Result<()> {
        if self.additive && self.shared_env && self.dominance {
            return Err(Error::Identifiability(
                "A, C and D variance components cannot be estimated jointly from twin pairs; \
                 drop one component (ACE or ADE)"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ACE" => Some(Self::ACE),
            "ADE" => Some(Self::ADE),
            "AE" => Some(Self::AE),
            "CE" => Some(Self::CE),
            "DE" => Some(Self::DE),
            "E" => Some(Self::E),
            "ACDE" => Some(Self { additive: true, shared_env: true, dominance: true }),
            _ => None,
        }
    }

    /// Present components in canonical order (A, C, D).
    pub fn members(&self) -> Vec<Component> {
        let mut v = Vec::new();
        if self.additive {
            v.push(Component::Additive);
        }
        if self.shared_env {
            v.push(Component::SharedEnv);
        }
        if self.dominance {
            v.push(Component::Dominance);
        }
        v
    }

    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.additive {
            s.push('A');
        }
        if self.shared_env {
            s.push('C');
        }
        if self.dominance {
            s.push('D');
        }
        s.push('E');
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Additive,
    SharedEnv,
    Dominance,
}

impl Component {
    pub fn short(&self) -> &'static str {
        match self {
            Component::Additive => "A",
            Component::SharedEnv => "C",
            Component::Dominance => "D",
        }
    }

    /// Kinship weight of the component in the latent covariance.
    pub fn kinship_weight(&self, zygosity: Zygosity) -> f64 {
        match (self, zygosity) {
            (Component::Additive, Zygosity::Mz) => 1.0,
            (Component::Additive, Zygosity::Dz) => 0.5,
            (Component::SharedEnv, _) => 1.0,
            (Component::Dominance, Zygosity::Mz) => 1.0,
            (Component::Dominance, Zygosity::Dz) => 0.25,
        }
    }
}

/// Which model family is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelKind {
    /// Bivariate probit with free tetrachoric correlations per zygosity.
    FlexibleBiprobit {
        /// Separate marginal coefficients per zygosity (for the marginal
        /// homogeneity test) instead of a shared β.
        zygosity_beta: bool,
    },
    /// Polygenic variance-component model (shared marginals).
    Polygenic { components: ComponentSet },
}

/// Full model specification: family plus the horizon τ the binary outcome
/// is defined at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub tau: f64,
}

impl ModelSpec {
    pub fn flexible(tau: f64) -> Self {
        Self { kind: ModelKind::FlexibleBiprobit { zygosity_beta: false }, tau }
    }

    pub fn flexible_zygosity_beta(tau: f64) -> Self {
        Self { kind: ModelKind::FlexibleBiprobit { zygosity_beta: true }, tau }
    }

    pub fn polygenic(components: ComponentSet, tau: f64) -> Self {
        Self { kind: ModelKind::Polygenic { components }, tau }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Validation(format!("tau must be positive, got {}", self.tau)));
        }
        if let ModelKind::Polygenic { components } = &self.kind {
            components.validate()?;
        }
        Ok(())
    }
}

/// Per-pair geometry: bivariate probit arguments and their Jacobians with
/// respect to the full parameter vector.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub mu1: f64,
    pub mu2: f64,
    pub rho: f64,
    pub j_mu1: DVector<f64>,
    pub j_mu2: DVector<f64>,
    pub j_rho: DVector<f64>,
}

/// Resolved design: parameter layout for a spec and a covariate dimension.
#[derive(Debug, Clone)]
pub struct ModelDesign {
    pub spec: ModelSpec,
    /// Design dimension including the leading intercept.
    pub x_dim: usize,
    pub names: Vec<String>,
}

impl ModelDesign {
    pub fn new(spec: ModelSpec, x_dim: usize, x_names: &[String]) -> Result<Self> {
        spec.validate()?;
        if x_dim == 0 {
            return Err(Error::Validation("design must include an intercept".into()));
        }
        if x_names.len() + 1 != x_dim {
            return Err(Error::Validation("covariate name list does not match dimension".into()));
        }
        let beta_names = |prefix: &str| -> Vec<String> {
            std::iter::once(format!("{prefix}.intercept"))
                .chain(x_names.iter().map(|n| format!("{prefix}.{n}")))
                .collect()
        };
        let names = match &spec.kind {
            ModelKind::FlexibleBiprobit { zygosity_beta: false } => {
                let mut v = beta_names("beta");
                v.push("atanh_rho.MZ".into());
                v.push("atanh_rho.DZ".into());
                v
            }
            ModelKind::FlexibleBiprobit { zygosity_beta: true } => {
                let mut v = beta_names("beta_mz");
                v.extend(beta_names("beta_dz"));
                v.push("atanh_rho.MZ".into());
                v.push("atanh_rho.DZ".into());
                v
            }
            ModelKind::Polygenic { components } => {
                let mut v = beta_names("beta");
                for comp in components.members() {
                    v.push(format!("log_var.{}", comp.short()));
                }
                v
            }
        };
        Ok(Self { spec, x_dim, names })
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    /// Index of the atanh-correlation parameter (flexible models).
    pub fn rho_index(&self, zygosity: Zygosity) -> Option<usize> {
        match &self.spec.kind {
            ModelKind::FlexibleBiprobit { .. } => {
                let base = self.n_params() - 2;
                Some(base + if zygosity == Zygosity::Mz { 0 } else { 1 })
            }
            ModelKind::Polygenic { .. } => None,
        }
    }

    /// Slice of β for a zygosity (start index and length).
    pub fn beta_range(&self, zygosity: Zygosity) -> (usize, usize) {
        match &self.spec.kind {
            ModelKind::FlexibleBiprobit { zygosity_beta: true } => match zygosity {
                Zygosity::Mz => (0, self.x_dim),
                Zygosity::Dz => (self.x_dim, self.x_dim),
            },
            _ => (0, self.x_dim),
        }
    }

    /// Start of the variance-parameter block (polygenic) or correlation
    /// block (flexible).
    pub fn aux_offset(&self) -> usize {
        match &self.spec.kind {
            ModelKind::FlexibleBiprobit { zygosity_beta: true } => 2 * self.x_dim,
            _ => self.x_dim,
        }
    }

    /// Compute the pair geometry at `theta` for a pair with (intercept-
    /// augmented) member designs `x1`, `x2`.
    pub fn geometry(&self, theta: &DVector<f64>, zygosity: Zygosity, x1: &[f64], x2: &[f64]) -> Geometry {
        let k = self.n_params();
        let mut j_mu1 = DVector::zeros(k);
        let mut j_mu2 = DVector::zeros(k);
        let mut j_rho = DVector::zeros(k);
        match &self.spec.kind {
            ModelKind::FlexibleBiprobit { .. } => {
                let (b0, blen) = self.beta_range(zygosity);
                let beta = theta.as_slice();
                let mu1: f64 = x1.iter().enumerate().map(|(j, v)| beta[b0 + j] * v).sum();
                let mu2: f64 = x2.iter().enumerate().map(|(j, v)| beta[b0 + j] * v).sum();
                debug_assert_eq!(blen, x1.len());
                let r_idx = self.rho_index(zygosity).unwrap();
                let rho = theta[r_idx].tanh();
                for j in 0..x1.len() {
                    j_mu1[b0 + j] = x1[j];
                    j_mu2[b0 + j] = x2[j];
                }
                j_rho[r_idx] = 1.0 - rho * rho;
                Geometry { mu1, mu2, rho, j_mu1, j_mu2, j_rho }
            }
            ModelKind::Polygenic { components } => {
                let comps = components.members();
                let q0 = self.aux_offset();
                let raw: Vec<f64> = (0..comps.len()).map(|i| theta[q0 + i]).collect();
                let map = PolygenicMap::new(&raw, components);
                let beta = theta.as_slice();
                let eta1: f64 = x1.iter().enumerate().map(|(j, v)| beta[j] * v).sum();
                let eta2: f64 = x2.iter().enumerate().map(|(j, v)| beta[j] * v).sum();
                let inv_sd = 1.0 / map.total_var.sqrt();
                let mu1 = eta1 * inv_sd;
                let mu2 = eta2 * inv_sd;
                let rho = map.rho(zygosity);
                for j in 0..x1.len() {
                    j_mu1[j] = x1[j] * inv_sd;
                    j_mu2[j] = x2[j] * inv_sd;
                }
                for (i, comp) in comps.iter().enumerate() {
                    let s = map.variance(*comp);
                    // d mu / d log σ² = -μ σ² / (2 v)
                    j_mu1[q0 + i] = -mu1 * s / (2.0 * map.total_var);
                    j_mu2[q0 + i] = -mu2 * s / (2.0 * map.total_var);
                    // d ρ / d log σ² = σ² (k - ρ) / v
                    j_rho[q0 + i] = s * (comp.kinship_weight(zygosity) - rho) / map.total_var;
                }
                Geometry { mu1, mu2, rho, j_mu1, j_mu2, j_rho }
            }
        }
    }
}

/// Raw-scale polygenic quantities: component variances on the latent scale
/// (unique environment fixed at 1) and the induced correlations.
#[derive(Debug, Clone, Copy)]
pub struct PolygenicMap {
    pub components: ComponentSet,
    pub var_a: f64,
    pub var_c: f64,
    pub var_d: f64,
    /// 1 + σ²_A + σ²_C + σ²_D.
    pub total_var: f64,
}

impl PolygenicMap {
    /// Build from raw log-variances in canonical component order.
    pub fn new(raw_log_vars: &[f64], components: &ComponentSet) -> Self {
        let mut vars = [0.0; 3];
        for (i, comp) in components.members().iter().enumerate() {
            let idx = match comp {
                Component::Additive => 0,
                Component::SharedEnv => 1,
                Component::Dominance => 2,
            };
            vars[idx] = raw_log_vars[i].exp();
        }
        let total_var = 1.0 + vars[0] + vars[1] + vars[2];
        Self { components: *components, var_a: vars[0], var_c: vars[1], var_d: vars[2], total_var }
    }

    pub fn variance(&self, comp: Component) -> f64 {
        match comp {
            Component::Additive => self.var_a,
            Component::SharedEnv => self.var_c,
            Component::Dominance => self.var_d,
        }
    }

    /// Latent covariance between the twins' liabilities.
    pub fn covariance(&self, zygosity: Zygosity) -> f64 {
        Component::Additive.kinship_weight(zygosity) * self.var_a
            + self.var_c
            + Component::Dominance.kinship_weight(zygosity) * self.var_d
    }

    /// Tetrachoric correlation for a zygosity.
    pub fn rho(&self, zygosity: Zygosity) -> f64 {
        self.covariance(zygosity) / self.total_var
    }
}
