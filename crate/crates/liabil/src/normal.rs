//! Univariate and bivariate standard-normal kernels.
//!
//! Provides the density, CDF and quantile of the standard normal together
//! with the bivariate normal CDF `Φ_ρ(a, b)` and its partial derivatives.
//! These are the building blocks for assembling probit scores: the
//! derivative of a bivariate probit log-likelihood is a linear combination
//! of bivariate cumulative normals, so everything downstream reduces to the
//! functions in this module.
//!
//! The bivariate CDF follows the Drezner–Wesolowsky construction with the
//! double-precision modifications by Genz (the `bvnd` routine of the
//! `tvpack` library): Gauss–Legendre quadrature with |ρ|-dependent node
//! counts on a transformed integrand, switching to a tail-stable expansion
//! for |ρ| > 0.925. Absolute accuracy is ~1e-14, well inside the 1e-12
//! target used by the estimation code.
//!
//! All functions are pure; concurrent use is safe.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const TWO_PI: f64 = std::f64::consts::TAU;

/// Limits with |x| beyond this magnitude are treated as ±infinity: the
/// corresponding orthant mass is below 1e-17 and only produces noise in
/// the tail branches.
pub const LIMIT_INF: f64 = 8.5;

/// Correlations are clamped strictly inside (-1, 1) by this margin.
pub const RHO_CLAMP: f64 = 1.0 - 1e-12;

/// Standard normal density.
#[inline]
pub fn phi(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile for `p` in the open interval (0, 1).
///
/// Rational approximation (Acklam) polished with one Halley step on
/// [`norm_cdf`], giving |Φ(Φ⁻¹(p)) - p| at machine precision.
pub fn norm_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p > 1.0 - P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    // Halley refinement on the CDF residual.
    let e = norm_cdf(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    Ok(x)
}

/// Arguments of the bivariate normal CDF `P(X ≤ a, Y ≤ b)` for standard
/// margins with correlation `rho`.
///
/// `rho` is clamped to ±(1 - 1e-12) on construction; `a` and `b` may be
/// ±infinity (and magnitudes beyond [`LIMIT_INF`] behave as such).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvnArgs {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl BvnArgs {
    pub fn new(a: f64, b: f64, rho: f64) -> Result<Self> {
        if a.is_nan() || b.is_nan() {
            return Err(Error::Domain("bivariate normal limit is NaN".into()));
        }
        if rho.is_nan() {
            return Err(Error::Domain("bivariate normal correlation is NaN".into()));
        }
        Ok(Self {
            a,
            b,
            rho: rho.clamp(-RHO_CLAMP, RHO_CLAMP),
        })
    }
}

/// Gradient of the bivariate normal CDF with respect to its two limits and
/// the correlation coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvnGrad {
    pub d_da: f64,
    pub d_db: f64,
    pub d_drho: f64,
}

/// Bivariate normal CDF `P(X ≤ a, Y ≤ b)` with correlation `rho`.
pub fn bvn_cdf(args: BvnArgs) -> f64 {
    let BvnArgs { a, b, rho } = args;
    if a <= -LIMIT_INF || b <= -LIMIT_INF {
        return 0.0;
    }
    if a >= LIMIT_INF {
        return if b >= LIMIT_INF { 1.0 } else { norm_cdf(b) };
    }
    if b >= LIMIT_INF {
        return norm_cdf(a);
    }
    // bvnd computes the upper orthant P(X > h, Y > k).
    bvnd(-a, -b, rho).clamp(0.0, 1.0)
}

/// Bivariate normal density with standard margins.
pub fn bvn_pdf(a: f64, b: f64, rho: f64) -> f64 {
    let omr2 = (1.0 - rho) * (1.0 + rho);
    (-(a * a - 2.0 * rho * a * b + b * b) / (2.0 * omr2)).exp() / (TWO_PI * omr2.sqrt())
}

/// Partial derivatives of [`bvn_cdf`].
///
/// `∂/∂a = φ(a)·Φ((b - ρa)/√(1-ρ²))`, symmetrically for `b`, and
/// `∂/∂ρ` is the bivariate density at `(a, b)`.
pub fn bvn_cdf_grad(args: BvnArgs) -> BvnGrad {
    let rho = args.rho;
    // Derivatives vanish to below 1e-16 at the clamp boundary, so finite
    // clamped limits stand in for ±infinity.
    let a = args.a.clamp(-LIMIT_INF, LIMIT_INF);
    let b = args.b.clamp(-LIMIT_INF, LIMIT_INF);
    let s = ((1.0 - rho) * (1.0 + rho)).sqrt();
    BvnGrad {
        d_da: phi(a) * norm_cdf((b - rho * a) / s),
        d_db: phi(b) * norm_cdf((a - rho * b) / s),
        d_drho: bvn_pdf(a, b, rho),
    }
}

// Gauss-Legendre abscissae/weights (negative half; the loop evaluates the
// mirrored node as well), as used by the tvpack bvnd quadrature.
const GL_6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197_0),
];
const GL_12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];
const GL_20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

fn gl_nodes(rho_abs: f64) -> &'static [(f64, f64)] {
    if rho_abs < 0.3 {
        &GL_6
    } else if rho_abs < 0.75 {
        &GL_12
    } else {
        &GL_20
    }
}

/// Upper-orthant probability P(X > dh, Y > dk) for standard bivariate
/// normal with correlation `r` (tvpack `bvnd`).
fn bvnd(dh: f64, dk: f64, r: f64) -> f64 {
    let h = dh;
    let mut k = dk;
    let mut hk = h * k;
    let mut bvn = 0.0;
    let quad = gl_nodes(r.abs());

    if r.abs() < 0.925 {
        if r.abs() > 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = 0.5 * r.asin();
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let sn = (asr * (is * x + 1.0)).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / TWO_PI;
        }
        bvn += norm_cdf(-h) * norm_cdf(-k);
        bvn
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let a_s = (1.0 - r) * (1.0 + r);
            let mut a = a_s.sqrt();
            let b_s = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -(b_s / a_s + hk) / 2.0;
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0
                        + c * d * a_s * a_s / 5.0);
            }
            if -hk < 100.0 {
                let b = b_s.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * SQRT_2PI
                    * norm_cdf(-b / a)
                    * b
                    * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
            }
            a /= 2.0;
            for &(w, x) in quad {
                for is in [-1.0, 1.0] {
                    let xs = (a * (is * x + 1.0)).powi(2);
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(b_s / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + d * xs);
                        let ep = (-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs;
                        bvn += a * w * asr.exp() * (ep - sp);
                    }
                }
            }
            bvn = -bvn / TWO_PI;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn;
            if k > h {
                bvn += norm_cdf(k) - norm_cdf(h);
            }
        }
        bvn
    }
}
