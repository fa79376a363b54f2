//! Discontinuous Galerkin space with an orthonormal tensor Legendre basis.

use super::mesh::{Cell, SpatialMesh};
use super::quadrature::{gauss_legendre_rule, legendre_with_derivative};
use crate::error::{invalid, Result};

/// Gauss points per direction used to project variable fields.
pub const FIELD_QUAD_POINTS: usize = 10;

/// Orthonormal Legendre polynomials `L_a = sqrt((2a+1)/2) P_a` on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    degree: usize,
    /// `stiffness[a][b] = int L_a' L_b`
    stiffness: Vec<Vec<f64>>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl ReferenceBasis {
    pub fn new(degree: usize) -> Self {
        let n = degree + 1;
        let (xs, ws) = gauss_legendre_rule(degree + 2);
        let mut stiffness = vec![vec![0.0; n]; n];
        for (x, w) in xs.iter().zip(&ws) {
            for a in 0..n {
                let (_, da) = eval_orthonormal(a, *x);
                for b in 0..n {
                    let (lb, _) = eval_orthonormal(b, *x);
                    stiffness[a][b] += w * da * lb;
                }
            }
        }
        Self {
            degree,
            stiffness,
            left: (0..n).map(|a| eval_orthonormal(a, -1.0).0).collect(),
            right: (0..n).map(|a| eval_orthonormal(a, 1.0).0).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn size(&self) -> usize {
        self.degree + 1
    }

    pub fn stiffness(&self, a: usize, b: usize) -> f64 {
        self.stiffness[a][b]
    }

    /// Basis values at `xi = -1` (`upper = false`) or `xi = +1`.
    pub fn end_values(&self, upper: bool) -> &[f64] {
        if upper {
            &self.right
        } else {
            &self.left
        }
    }

    pub fn values(&self, xi: f64) -> Vec<f64> {
        (0..self.size())
            .map(|a| eval_orthonormal(a, xi).0)
            .collect()
    }

    pub fn derivatives(&self, xi: f64) -> Vec<f64> {
        (0..self.size())
            .map(|a| eval_orthonormal(a, xi).1)
            .collect()
    }
}

/// Value and derivative of `L_a` at `x`.
pub fn eval_orthonormal(a: usize, x: f64) -> (f64, f64) {
    let s = ((2 * a + 1) as f64 / 2.0).sqrt();
    let (p, d) = legendre_with_derivative(a, x);
    (s * p, s * d)
}

/// Piecewise polynomial space of degree `K` on a structured mesh.
///
/// The local index of basis function `L_a(x) L_b(y)` is `a + (K+1) b`; in 1D `b = 0`.
#[derive(Debug, Clone)]
pub struct DGSpace {
    mesh: SpatialMesh,
    basis: ReferenceBasis,
    nloc: usize,
}

impl DGSpace {
    pub fn new(mesh: SpatialMesh, degree: usize) -> Result<Self> {
        if degree > 2 {
            return invalid(format!("polynomial degree {degree} not supported (0..=2)"));
        }
        let n1 = degree + 1;
        let nloc = if mesh.dim() == 1 { n1 } else { n1 * n1 };
        Ok(Self {
            mesh,
            basis: ReferenceBasis::new(degree),
            nloc,
        })
    }

    pub fn mesh(&self) -> &SpatialMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &ReferenceBasis {
        &self.basis
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn ndof(&self) -> usize {
        self.nloc * self.mesh.num_cells()
    }

    /// Per-axis degree pairs `(a, b)` for each local index.
    pub fn local_pairs(&self) -> Vec<(usize, usize)> {
        let n1 = self.basis.size();
        (0..self.nloc).map(|m| (m % n1, m / n1)).collect()
    }

    /// Evaluates the local basis at physical point `p` inside `cell`.
    pub fn eval_basis(&self, cell: &Cell, p: [f64; 2]) -> Vec<f64> {
        let (vx, vy) = self.axis_values(cell, p);
        self.local_pairs()
            .iter()
            .map(|&(a, b)| vx[a] * vy[b])
            .collect()
    }

    fn axis_values(&self, cell: &Cell, p: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let hx = cell.width(0);
        let xi = 2.0 * (p[0] - cell.lo[0]) / hx - 1.0;
        let sx = (2.0 / hx).sqrt();
        let vx: Vec<f64> = self.basis.values(xi).iter().map(|v| v * sx).collect();
        let vy = if self.dim() == 1 {
            vec![1.0]
        } else {
            let hy = cell.width(1);
            let eta = 2.0 * (p[1] - cell.lo[1]) / hy - 1.0;
            let sy = (2.0 / hy).sqrt();
            self.basis.values(eta).iter().map(|v| v * sy).collect()
        };
        (vx, vy)
    }

    /// Evaluates a DG coefficient vector at physical point `p` in cell `c`.
    pub fn eval(&self, coeffs: &[f64], c: usize, p: [f64; 2]) -> f64 {
        let phi = self.eval_basis(self.mesh.cell(c), p);
        let off = c * self.nloc;
        phi.iter()
            .zip(&coeffs[off..off + self.nloc])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Tensor Gauss points and weights on a cell (1D: `y` fixed at the cell middle, unit measure).
    pub fn cell_quadrature(&self, cell: &Cell, npts: usize) -> Vec<([f64; 2], f64)> {
        let (xs, ws) = gauss_legendre_rule(npts);
        let map = |lo: f64, hi: f64, t: f64| 0.5 * (lo + hi) + 0.5 * (hi - lo) * t;
        let hx = cell.width(0);
        let mut out = Vec::new();
        if self.dim() == 1 {
            let yc = 0.5 * (cell.lo[1] + cell.hi[1]);
            for (x, w) in xs.iter().zip(&ws) {
                out.push(([map(cell.lo[0], cell.hi[0], *x), yc], w * hx / 2.0));
            }
        } else {
            let hy = cell.width(1);
            for (y, wy) in xs.iter().zip(&ws) {
                for (x, wx) in xs.iter().zip(&ws) {
                    out.push((
                        [
                            map(cell.lo[0], cell.hi[0], *x),
                            map(cell.lo[1], cell.hi[1], *y),
                        ],
                        wx * wy * hx * hy / 4.0,
                    ));
                }
            }
        }
        out
    }

    /// L2 projection of a scalar function.
    pub fn project(&self, f: &dyn Fn([f64; 2]) -> f64) -> Vec<f64> {
        let npts = FIELD_QUAD_POINTS.max(self.degree() + 2);
        let mut out = vec![0.0; self.ndof()];
        for (c, cell) in self.mesh.cells().iter().enumerate() {
            for (p, w) in self.cell_quadrature(cell, npts) {
                let fv = f(p);
                if fv == 0.0 {
                    continue;
                }
                for (m, phi) in self.eval_basis(cell, p).iter().enumerate() {
                    out[c * self.nloc + m] += w * fv * phi;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::mesh::{build_mesh, MeshSpec};

    fn space(degree: usize) -> DGSpace {
        let mesh = build_mesh(&MeshSpec::Rectangle {
            nx: 3,
            ny: 2,
            x: [0.0, 1.5],
            y: [-1.0, 0.0],
        })
        .unwrap();
        DGSpace::new(mesh, degree).unwrap()
    }

    #[test]
    fn local_mass_is_identity() {
        for k in 0..=2 {
            let s = space(k);
            let cell = *s.mesh().cell(4);
            let mut mass = vec![0.0; s.nloc() * s.nloc()];
            for (p, w) in s.cell_quadrature(&cell, k + 2) {
                let phi = s.eval_basis(&cell, p);
                for m in 0..s.nloc() {
                    for n in 0..s.nloc() {
                        mass[m * s.nloc() + n] += w * phi[m] * phi[n];
                    }
                }
            }
            for m in 0..s.nloc() {
                for n in 0..s.nloc() {
                    let e = if m == n { 1.0 } else { 0.0 };
                    assert!((mass[m * s.nloc() + n] - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        assert_eq!(space(1).ndof(), 6 * 4);
        assert_eq!(space(2).ndof(), 6 * 9);
        let mesh = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![0.125],
        })
        .unwrap();
        assert_eq!(DGSpace::new(mesh, 1).unwrap().ndof(), 16);
        assert!(DGSpace::new(space(0).mesh().clone(), 3).is_err());
    }

    #[test]
    fn projection_reproduces_linears() {
        let s = space(1);
        let f = |p: [f64; 2]| 2.0 + 3.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
        let u = s.project(&f);
        for c in 0..s.mesh().num_cells() {
            let cell = s.mesh().cell(c);
            let p = [
                cell.lo[0] + 0.3 * cell.width(0),
                cell.lo[1] + 0.8 * cell.width(1),
            ];
            assert!((s.eval(&u, c, p) - f(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn stiffness_matches_integration_by_parts() {
        let b = ReferenceBasis::new(2);
        for i in 0..3 {
            for j in 0..3 {
                let lhs = b.stiffness(i, j) + b.stiffness(j, i);
                let rhs = b.end_values(true)[i] * b.end_values(true)[j]
                    - b.end_values(false)[i] * b.end_values(false)[j];
                assert!((lhs - rhs).abs() < 1e-13);
            }
        }
    }
}
