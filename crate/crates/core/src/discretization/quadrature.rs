//! Angular quadrature sets for the discrete-ordinates method.

use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Whether directions are slab cosines or points on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureMode {
    Slab,
    Sphere,
}

/// Directions and weights, normalized so the weights sum to one.
///
/// In slab mode only the first component of each direction is meaningful
/// (the cosine `xi` against the slab axis).
#[derive(Debug, Clone)]
pub struct AngularQuadrature {
    mode: QuadratureMode,
    directions: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl AngularQuadrature {
    pub fn mode(&self) -> QuadratureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.directions
    }

    pub fn direction(&self, j: usize) -> [f64; 3] {
        self.directions[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    /// Second angular moments `sum_j w_j v_j^2` per Cartesian axis.
    ///
    /// Slab mode returns the single `xi^2` moment in the first slot and zeros elsewhere.
    pub fn eddington_diagonal(&self) -> [f64; 3] {
        let mut d = [0.0; 3];
        for (v, w) in self.directions.iter().zip(&self.weights) {
            for k in 0..3 {
                d[k] += w * v[k] * v[k];
            }
        }
        d
    }
}

/// Gauss-Legendre nodes and (unnormalized, summing to 2) weights on `[-1, 1]`.
///
/// Nodes are returned in ascending order.
pub fn gauss_legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi-type initial guess for the i-th largest root.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint formula P_n'(+-1) = (+-1)^(n-1) n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, d)
}

/// `n`-point Gauss-Legendre rule in slab geometry, weights normalized to sum 1.
pub fn gauss_legendre(n: usize) -> Result<AngularQuadrature> {
    if n == 0 {
        return invalid("Gauss-Legendre order must be at least 1");
    }
    let (nodes, w) = gauss_legendre_rule(n);
    Ok(AngularQuadrature {
        mode: QuadratureMode::Slab,
        directions: nodes.iter().map(|&x| [x, 0.0, 0.0]).collect(),
        weights: normalize(w),
    })
}

/// Chebyshev-Legendre product rule CL(`n_alpha`, `n_z`) on the unit sphere.
///
/// Point `j = j2 * n_alpha + j1` (zero based) combines azimuth
/// `alpha = (2 j1 + 1) pi / n_alpha` with the `j2`-th Gauss-Legendre node in `z`.
pub fn chebyshev_legendre(n_alpha: usize, n_z: usize) -> Result<AngularQuadrature> {
    if n_alpha == 0 || n_z == 0 {
        return invalid("Chebyshev-Legendre orders must be positive");
    }
    let (zs, wz) = gauss_legendre_rule(n_z);
    let wz = normalize(wz);
    let mut directions = Vec::with_capacity(n_alpha * n_z);
    let mut weights = Vec::with_capacity(n_alpha * n_z);
    for (z, wzj) in zs.iter().zip(&wz) {
        let s = (1.0 - z * z).sqrt();
        for j1 in 0..n_alpha {
            let alpha = (2.0 * j1 as f64 + 1.0) * PI / n_alpha as f64;
            directions.push([alpha.cos() * s, alpha.sin() * s, *z]);
            weights.push(wzj / n_alpha as f64);
        }
    }
    Ok(AngularQuadrature {
        mode: QuadratureMode::Sphere,
        directions,
        weights,
    })
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}
