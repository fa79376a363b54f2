//! Assembly of the upwind streaming operator, weighted mass matrices and right-hand sides.

use std::sync::Arc;

use rayon::prelude::*;

use super::mesh::Side;
use super::quadrature::{gauss_legendre_rule, AngularQuadrature};
use super::space::{DGSpace, FIELD_QUAD_POINTS};
use crate::linalg::{block_matvec, block_matvec_add};

/// Block-diagonal operator with one dense `nloc x nloc` block per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    nloc: usize,
    blocks: Vec<f64>,
}

impl BlockDiagonal {
    pub fn zeros(ncells: usize, nloc: usize) -> Self {
        Self {
            nloc,
            blocks: vec![0.0; ncells * nloc * nloc],
        }
    }

    /// Blocks `values[c] * I`.
    pub fn scaled_identity(values: &[f64], nloc: usize) -> Self {
        let mut out = Self::zeros(values.len(), nloc);
        for (c, v) in values.iter().enumerate() {
            for m in 0..nloc {
                out.blocks[c * nloc * nloc + m * nloc + m] = *v;
            }
        }
        out
    }

    pub fn from_blocks(nloc: usize, blocks: Vec<f64>) -> Self {
        assert_eq!(blocks.len() % (nloc * nloc), 0);
        Self { nloc, blocks }
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len() / (self.nloc * self.nloc)
    }

    pub fn dim(&self) -> usize {
        self.num_blocks() * self.nloc
    }

    pub fn block(&self, c: usize) -> &[f64] {
        let s = self.nloc * self.nloc;
        &self.blocks[c * s..(c + 1) * s]
    }

    pub fn raw(&self) -> &[f64] {
        &self.blocks
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|v| *v == 0.0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nloc;
        for c in 0..self.num_blocks() {
            block_matvec(
                self.block(c),
                &x[c * n..(c + 1) * n],
                &mut y[c * n..(c + 1) * n],
            );
        }
    }

    pub fn apply_add(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nloc;
        for c in 0..self.num_blocks() {
            block_matvec_add(
                self.block(c),
                &x[c * n..(c + 1) * n],
                &mut y[c * n..(c + 1) * n],
            );
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &BlockDiagonal) {
        assert_eq!(self.blocks.len(), other.blocks.len());
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            *a += alpha * b;
        }
    }

    /// Cell averages of the weighting coefficient (the constant-mode entry of each block).
    pub fn cell_means(&self) -> Vec<f64> {
        (0..self.num_blocks()).map(|c| self.block(c)[0]).collect()
    }
}

/// Weighted mass matrix `int sigma phi_m phi_n` for a pointwise coefficient.
pub fn assemble_coefficient_mass(
    space: &DGSpace,
    sigma: &dyn Fn([f64; 2]) -> f64,
) -> BlockDiagonal {
    let nloc = space.nloc();
    let npts = FIELD_QUAD_POINTS.max(space.degree() + 2);
    let mut out = BlockDiagonal::zeros(space.mesh().num_cells(), nloc);
    for (c, cell) in space.mesh().cells().iter().enumerate() {
        let blk = &mut out.blocks[c * nloc * nloc..(c + 1) * nloc * nloc];
        for (p, w) in space.cell_quadrature(cell, npts) {
            let s = sigma(p);
            if s == 0.0 {
                continue;
            }
            let phi = space.eval_basis(cell, p);
            for m in 0..nloc {
                for n in 0..nloc {
                    blk[m * nloc + n] += w * s * phi[m] * phi[n];
                }
            }
        }
    }
    out
}

/// Mass matrix of a cellwise-constant coefficient, `values[c] * I` per cell.
pub fn cellwise_mass(space: &DGSpace, values: &[f64]) -> BlockDiagonal {
    assert_eq!(values.len(), space.mesh().num_cells());
    BlockDiagonal::scaled_identity(values, space.nloc())
}

/// Mass matrix of the indicator of the cells whose center satisfies `inside`.
pub fn indicator_mass(space: &DGSpace, inside: &dyn Fn([f64; 2]) -> bool) -> BlockDiagonal {
    let values: Vec<f64> = space
        .mesh()
        .cells()
        .iter()
        .map(|c| if inside(c.center()) { 1.0 } else { 0.0 })
        .collect();
    cellwise_mass(space, &values)
}

/// Upwind transport blocks of a single direction, `D_j` without the collision term.
///
/// Row `c` of the operator is `diag[c] x_c + sum_k coupling_k x_{nbr_k}` where the
/// neighbours are upwind of `c`.
#[derive(Debug, Clone)]
pub struct DirectionBlocks {
    pub direction: [f64; 2],
    pub order: Vec<usize>,
    pub diag: Vec<f64>,
    pub coupling_ptr: Vec<usize>,
    pub coupling_nbr: Vec<usize>,
    pub coupling_vals: Vec<f64>,
}

impl DirectionBlocks {
    pub fn couplings(&self, c: usize) -> impl Iterator<Item = (usize, &[f64])> {
        let s = self.diag.len() / (self.coupling_ptr.len() - 1);
        (self.coupling_ptr[c]..self.coupling_ptr[c + 1]).map(move |k| {
            (
                self.coupling_nbr[k],
                &self.coupling_vals[k * s..(k + 1) * s],
            )
        })
    }

    pub fn diag_block(&self, c: usize, nloc: usize) -> &[f64] {
        &self.diag[c * nloc * nloc..(c + 1) * nloc * nloc]
    }

    /// `y = D_j x`
    pub fn apply(&self, nloc: usize, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        let ncells = self.coupling_ptr.len() - 1;
        for c in 0..ncells {
            let yc = &mut y[c * nloc..(c + 1) * nloc];
            block_matvec_add(self.diag_block(c, nloc), &x[c * nloc..(c + 1) * nloc], yc);
            for (nb, blk) in self.couplings(c) {
                block_matvec_add(blk, &x[nb * nloc..(nb + 1) * nloc], yc);
            }
        }
        y
    }
}

/// Parameter-independent streaming operators for every direction of a quadrature.
#[derive(Debug, Clone)]
pub struct StreamingOperator {
    nloc: usize,
    directions: Vec<DirectionBlocks>,
}

impl StreamingOperator {
    pub fn assemble(space: &DGSpace, quadrature: &AngularQuadrature) -> Self {
        let directions = quadrature
            .directions()
            .par_iter()
            .map(|v| assemble_direction_blocks(space, [v[0], v[1]]))
            .collect();
        Self {
            nloc: space.nloc(),
            directions,
        }
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn direction(&self, j: usize) -> &DirectionBlocks {
        &self.directions[j]
    }

    /// `y_j = D_j x_j` for a full angular vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let ndof = x.len() / self.directions.len();
        let parts: Vec<Vec<f64>> = self
            .directions
            .par_iter()
            .enumerate()
            .map(|(j, d)| d.apply(self.nloc, &x[j * ndof..(j + 1) * ndof]))
            .collect();
        parts.concat()
    }
}

/// Cell visiting order along the upwind direction; zero components count as positive.
pub fn sweep_order(space: &DGSpace, direction: [f64; 2]) -> Vec<usize> {
    let mesh = space.mesh();
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let xs: Vec<usize> = if direction[0] >= 0.0 {
        (0..nx).collect()
    } else {
        (0..nx).rev().collect()
    };
    let ys: Vec<usize> = if mesh.dim() == 1 || direction[1] >= 0.0 {
        (0..ny).collect()
    } else {
        (0..ny).rev().collect()
    };
    let mut order = Vec::with_capacity(nx * ny);
    for &j in &ys {
        for &i in &xs {
            order.push(mesh.index(i, j));
        }
    }
    order
}

fn side_is_upper(side: Side) -> bool {
    matches!(side, Side::Right | Side::Top)
}

fn opposite(side: Side) -> Side {
    match side {
        Side::Left => Side::Right,
        Side::Right => Side::Left,
        Side::Bottom => Side::Top,
        Side::Top => Side::Bottom,
    }
}

/// Assembles `D_j` for one direction (the streaming part of the per-direction operator).
pub fn assemble_direction_blocks(space: &DGSpace, direction: [f64; 2]) -> DirectionBlocks {
    let mesh = space.mesh();
    let basis = space.basis();
    let nloc = space.nloc();
    let pairs = space.local_pairs();
    let ncells = mesh.num_cells();
    let mut diag = vec![0.0; ncells * nloc * nloc];
    let mut coupling_ptr = vec![0usize; ncells + 1];
    let mut coupling_nbr = Vec::new();
    let mut coupling_vals = Vec::new();
    let vel = if mesh.dim() == 1 {
        [direction[0], 0.0]
    } else {
        direction
    };

    for c in 0..ncells {
        let cell = mesh.cell(c);
        let blk = &mut diag[c * nloc * nloc..(c + 1) * nloc * nloc];
        // volume term -int f (v . grad phi_m)
        for (m, &(am, bm)) in pairs.iter().enumerate() {
            for (n, &(an, bn)) in pairs.iter().enumerate() {
                let mut v = 0.0;
                if bm == bn {
                    v -= vel[0] * (2.0 / cell.width(0)) * basis.stiffness(am, an);
                }
                if mesh.dim() == 2 && am == an {
                    v -= vel[1] * (2.0 / cell.width(1)) * basis.stiffness(bm, bn);
                }
                blk[m * nloc + n] += v;
            }
        }
        for &side in mesh.sides() {
            let axis = side.axis();
            let vn = vel[axis] * side.outward_normal()[axis];
            if vn == 0.0 {
                continue;
            }
            let h = cell.width(axis);
            let ends = basis.end_values(side_is_upper(side));
            if vn > 0.0 {
                for (m, &(am, bm)) in pairs.iter().enumerate() {
                    for (n, &(an, bn)) in pairs.iter().enumerate() {
                        let (pm, pn, tm, tn) = split(axis, am, bm, an, bn);
                        if tm == tn {
                            blk[m * nloc + n] += vn * (2.0 / h) * ends[pm] * ends[pn];
                        }
                    }
                }
            } else if let Some(nb) = mesh.neighbor(c, side) {
                let hn = mesh.cell(nb).width(axis);
                let nb_ends = basis.end_values(side_is_upper(opposite(side)));
                let mut vals = vec![0.0; nloc * nloc];
                for (m, &(am, bm)) in pairs.iter().enumerate() {
                    for (n, &(an, bn)) in pairs.iter().enumerate() {
                        let (pm, pn, tm, tn) = split(axis, am, bm, an, bn);
                        if tm == tn {
                            vals[m * nloc + n] =
                                vn * (2.0 / h).sqrt() * ends[pm] * (2.0 / hn).sqrt() * nb_ends[pn];
                        }
                    }
                }
                coupling_nbr.push(nb);
                coupling_vals.extend(vals);
            }
        }
        coupling_ptr[c + 1] = coupling_nbr.len();
    }
    DirectionBlocks {
        direction: vel,
        order: sweep_order(space, vel),
        diag,
        coupling_ptr,
        coupling_nbr,
        coupling_vals,
    }
}

/// Splits local degree pairs into (normal-axis, tangential) components for a face.
fn split(axis: usize, am: usize, bm: usize, an: usize, bn: usize) -> (usize, usize, usize, usize) {
    if axis == 0 {
        (am, an, bm, bn)
    } else {
        (bm, bn, am, an)
    }
}

/// Inflow boundary data `g(r, v)` for directions entering the domain.
#[derive(Clone, Default)]
pub enum Inflow {
    #[default]
    Zero,
    /// Constant values on the left, right, bottom and top boundaries.
    Sides([f64; 4]),
    Function(Arc<dyn Fn([f64; 2], [f64; 3]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Inflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Inflow::Zero => write!(f, "Zero"),
            Inflow::Sides(v) => write!(f, "Sides({v:?})"),
            Inflow::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Inflow {
    fn value(&self, side: Side, p: [f64; 2], v: [f64; 3]) -> f64 {
        match self {
            Inflow::Zero => 0.0,
            Inflow::Sides(s) => match side {
                Side::Left => s[0],
                Side::Right => s[1],
                Side::Bottom => s[2],
                Side::Top => s[3],
            },
            Inflow::Function(f) => f(p, v),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Inflow::Zero => true,
            Inflow::Sides(s) => s.iter().all(|v| *v == 0.0),
            Inflow::Function(_) => false,
        }
    }
}

/// Boundary contribution `g_j^bc` for direction `j`.
pub fn assemble_inflow(
    space: &DGSpace,
    quadrature: &AngularQuadrature,
    j: usize,
    inflow: &Inflow,
) -> Vec<f64> {
    let mesh = space.mesh();
    let nloc = space.nloc();
    let mut out = vec![0.0; space.ndof()];
    if inflow.is_zero() {
        return out;
    }
    let v = quadrature.direction(j);
    let vel = if mesh.dim() == 1 {
        [v[0], 0.0]
    } else {
        [v[0], v[1]]
    };
    let (xs, ws) = gauss_legendre_rule(FIELD_QUAD_POINTS.max(space.degree() + 2));
    for edge in mesh.edges().iter().filter(|e| e.neighbor.is_none()) {
        let axis = edge.side.axis();
        let vn = vel[axis] * edge.normal[axis];
        if vn >= 0.0 {
            continue;
        }
        let cell = mesh.cell(edge.owner);
        let coord = if side_is_upper(edge.side) {
            cell.hi[axis]
        } else {
            cell.lo[axis]
        };
        let off = edge.owner * nloc;
        if mesh.dim() == 1 {
            let p = [coord, 0.5 * (cell.lo[1] + cell.hi[1])];
            let g = inflow.value(edge.side, p, v);
            let phi = space.eval_basis(cell, p);
            for m in 0..nloc {
                out[off + m] -= vn * g * phi[m];
            }
            continue;
        }
        let t = 1 - axis;
        let (lo, hi) = (cell.lo[t], cell.hi[t]);
        for (x, w) in xs.iter().zip(&ws) {
            let mut p = [0.0; 2];
            p[axis] = coord;
            p[t] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
            let g = inflow.value(edge.side, p, v);
            if g == 0.0 {
                continue;
            }
            let phi = space.eval_basis(cell, p);
            let wt = w * (hi - lo) / 2.0;
            for m in 0..nloc {
                out[off + m] -= vn * g * wt * phi[m];
            }
        }
    }
    out
}

/// `Q_j + g_j^bc` for direction `j`, given projected source coefficients `q`.
pub fn assemble_rhs(
    space: &DGSpace,
    quadrature: &AngularQuadrature,
    j: usize,
    source: &[f64],
    inflow: &Inflow,
) -> Vec<f64> {
    let mut out = assemble_inflow(space, quadrature, j, inflow);
    for (o, s) in out.iter_mut().zip(source) {
        *o += s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::mesh::{build_mesh, MeshSpec};
    use crate::discretization::quadrature::{chebyshev_legendre, gauss_legendre};

    fn slab(n: usize, k: usize) -> DGSpace {
        let mesh = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![1.0 / n as f64],
        })
        .unwrap();
        DGSpace::new(mesh, k).unwrap()
    }

    #[test]
    fn zero_coefficient_gives_zero_mass() {
        let s = slab(4, 1);
        assert!(assemble_coefficient_mass(&s, &|_| 0.0).is_zero());
    }

    #[test]
    fn constant_coefficient_gives_scaled_identity() {
        let s = slab(4, 2);
        let m = assemble_coefficient_mass(&s, &|_| 3.0);
        for c in 0..4 {
            let b = m.block(c);
            for i in 0..3 {
                for j in 0..3 {
                    let e = if i == j { 3.0 } else { 0.0 };
                    assert!((b[i * 3 + j] - e).abs() < 1e-12);
                }
            }
        }
        assert_eq!(m.cell_means(), vec![m.block(0)[0]; 4]);
    }

    #[test]
    fn slab_sweep_order_follows_direction() {
        let s = slab(5, 1);
        assert_eq!(sweep_order(&s, [0.3, 0.0]), vec![0, 1, 2, 3, 4]);
        assert_eq!(sweep_order(&s, [-0.3, 0.0]), vec![4, 3, 2, 1, 0]);
    }

    #[test]
    fn rectangle_sweep_order() {
        let mesh = build_mesh(&MeshSpec::Rectangle {
            nx: 2,
            ny: 2,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        })
        .unwrap();
        let s = DGSpace::new(mesh, 1).unwrap();
        assert_eq!(sweep_order(&s, [0.5, -0.5]), vec![2, 3, 0, 1]);
    }

    #[test]
    fn couplings_point_upwind() {
        let mesh = build_mesh(&MeshSpec::Rectangle {
            nx: 3,
            ny: 3,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        })
        .unwrap();
        let s = DGSpace::new(mesh, 1).unwrap();
        let q = chebyshev_legendre(4, 2).unwrap();
        let op = StreamingOperator::assemble(&s, &q);
        for j in 0..q.len() {
            let d = op.direction(j);
            let pos: Vec<usize> = {
                let mut p = vec![0; 9];
                for (k, c) in d.order.iter().enumerate() {
                    p[*c] = k;
                }
                p
            };
            for c in 0..9 {
                for (nb, _) in d.couplings(c) {
                    assert!(pos[nb] < pos[c]);
                }
            }
        }
    }

    #[test]
    fn inflow_only_enters_on_upwind_boundary() {
        let s = slab(4, 1);
        let q = gauss_legendre(4).unwrap();
        let g = Inflow::Sides([5.0, 0.0, 0.0, 0.0]);
        for j in 0..4 {
            let b = assemble_inflow(&s, &q, j, &g);
            let nonzero: Vec<usize> = (0..b.len()).filter(|&i| b[i] != 0.0).collect();
            if q.direction(j)[0] > 0.0 {
                assert_eq!(nonzero, vec![0, 1]);
            } else {
                assert!(nonzero.is_empty());
            }
        }
    }

    #[test]
    fn streaming_annihilates_constants_in_the_interior() {
        // D_j applied to the constant function vanishes away from outflow boundaries,
        // i.e. the total upwind flux balance of a constant is zero on interior cells.
        let s = slab(6, 1);
        let q = gauss_legendre(2).unwrap();
        let op = StreamingOperator::assemble(&s, &q);
        let ones = s.project(&|_| 1.0);
        for j in 0..2 {
            let y = op.direction(j).apply(2, &ones);
            let inflow_cell = if q.direction(j)[0] > 0.0 { 0 } else { 5 };
            for c in 0..6 {
                if c != inflow_cell {
                    assert!(y[2 * c].abs() < 1e-12 && y[2 * c + 1].abs() < 1e-12);
                }
            }
        }
    }
}
