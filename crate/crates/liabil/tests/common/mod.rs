//! Shared test oracles, independent of the library's evaluation paths.

#![allow(dead_code)]

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based starting guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and its derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn bvn_density(x: f64, y: f64, rho: f64) -> f64 {
    let omr2 = (1.0 - rho) * (1.0 + rho);
    (-(x * x - 2.0 * rho * x * y + y * y) / (2.0 * omr2)).exp()
        / (std::f64::consts::TAU * omr2.sqrt())
}

fn bvn_tensor(a: f64, b: f64, rho: f64, n: usize) -> f64 {
    let lo = -8.75;
    let (nodes, weights) = gauss_legendre(n);
    let map = |lo: f64, hi: f64, t: f64| 0.5 * (hi - lo) * t + 0.5 * (hi + lo);
    let sx = 0.5 * (a - lo);
    let sy = 0.5 * (b - lo);
    let xs: Vec<f64> = nodes.iter().map(|&t| map(lo, a, t)).collect();
    let ys: Vec<f64> = nodes.iter().map(|&t| map(lo, b, t)).collect();
    let mut total = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let mut row = 0.0;
        for (j, &y) in ys.iter().enumerate() {
            row += weights[j] * bvn_density(x, y, rho);
        }
        total += weights[i] * row;
    }
    total * sx * sy
}

/// Two-dimensional quadrature oracle for the bivariate normal CDF:
/// tensor-product Gauss-Legendre over the truncated lower rectangle with
/// node doubling until two refinement levels agree to 1e-12.
pub fn bvn_cdf_oracle(a: f64, b: f64, rho: f64) -> f64 {
    if a <= -8.5 || b <= -8.5 {
        return 0.0;
    }
    let a = a.min(8.5);
    let b = b.min(8.5);
    let mut prev = bvn_tensor(a, b, rho, 48);
    for n in [96, 192, 384] {
        let current = bvn_tensor(a, b, rho, n);
        if (current - prev).abs() < 1e-12 {
            return current;
        }
        prev = current;
    }
    prev
}

/// 1-D integral of `f` over [lo, hi] with fixed-order Gauss-Legendre.
pub fn integrate_gl(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&t, &w)| w * f(half * t + mid))
        .sum::<f64>()
        * half
}
