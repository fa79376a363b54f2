//! Proper orthogonal decomposition, affine operator projection, reduced solves,
//! ROM initial guesses and the ROM-based density correction.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::discretization::{BlockDiagonal, DiscreteProblem, ProblemFamily};
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm2};
use crate::transport::DensityField;

/// Columns below this fraction of the largest column norm are dropped before the SVD.
pub const COLUMN_DROP_TOL: f64 = 1e-14;

/// Reduced operators with an estimated condition number above this are rejected.
pub const MAX_REDUCED_CONDITION: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotLabel {
    pub mu: Vec<f64>,
    pub level: usize,
}

/// Full-order snapshot columns of a common length `N_h`.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    nh: usize,
    columns: Vec<Vec<f64>>,
    labels: Vec<SnapshotLabel>,
}

impl SnapshotMatrix {
    pub fn new(nh: usize) -> Self {
        Self {
            nh,
            columns: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, column: Vec<f64>, mu: &[f64], level: usize) -> Result<()> {
        if column.len() != self.nh {
            return invalid(format!(
                "snapshot of length {} in a matrix with N_h = {}",
                column.len(),
                self.nh
            ));
        }
        self.columns.push(column);
        self.labels.push(SnapshotLabel {
            mu: mu.to_vec(),
            level,
        });
        Ok(())
    }

    pub fn nh(&self) -> usize {
        self.nh
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn labels(&self) -> &[SnapshotLabel] {
        &self.labels
    }
}

/// Leading left singular vectors of a snapshot matrix.
#[derive(Debug, Clone)]
pub struct Pod {
    pub nh: usize,
    /// Column-major `N_h x r`.
    pub modes: Vec<f64>,
    pub rank: usize,
    /// All singular values in descending order.
    pub singular_values: Vec<f64>,
}

/// Smallest `r` with `sum_{i<r} s_i >= (1 - eps) sum_i s_i`, capped at the numerical rank.
pub fn energy_rank(singular_values: &[f64], eps: f64, cutoff: f64) -> usize {
    let total: f64 = singular_values.iter().sum();
    let numerical = singular_values.iter().filter(|s| **s > cutoff).count();
    if total <= 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        if acc >= (1.0 - eps) * total {
            return i.min(numerical);
        }
        acc += s;
    }
    singular_values.len().min(numerical)
}

/// Truncated SVD of the snapshot columns by the singular-value sum criterion.
pub fn pod(snapshots: &SnapshotMatrix, eps_svd: f64) -> Result<Pod> {
    if !(eps_svd > 0.0 && eps_svd <= 1.0) {
        return invalid(format!("eps_svd = {eps_svd} outside (0, 1]"));
    }
    let nh = snapshots.nh();
    let norms: Vec<f64> = snapshots.columns().iter().map(|c| norm2(c)).collect();
    let max_norm = norms.iter().fold(0.0_f64, |m, v| m.max(*v));
    let kept: Vec<&Vec<f64>> = snapshots
        .columns()
        .iter()
        .zip(&norms)
        .filter(|(_, n)| max_norm > 0.0 && **n >= COLUMN_DROP_TOL * max_norm)
        .map(|(c, _)| c)
        .collect();
    if kept.is_empty() {
        warn!("all snapshot columns are zero; returning an empty basis");
        return Ok(Pod {
            nh,
            modes: Vec::new(),
            rank: 0,
            singular_values: Vec::new(),
        });
    }
    let m = DMatrix::from_fn(nh, kept.len(), |i, k| kept[k][i]);
    let svd = m.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| Error::NumericalFailure("SVD did not return U".into()))?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let cutoff = sv[0] * nh.max(kept.len()) as f64 * f64::EPSILON;
    let rank = energy_rank(&sv, eps_svd, cutoff);
    let modes = u.columns(0, rank).iter().copied().collect();
    Ok(Pod {
        nh,
        modes,
        rank,
        singular_values: sv,
    })
}

/// Orthonormal basis with its density maps and projected affine blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub nh: usize,
    pub ndof: usize,
    pub rank: usize,
    /// Column-major `N_h x r`.
    pub modes: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// Column-major `N_DOF x r`, `sum_j w_j U_j`.
    pub u_rho: Vec<f64>,
    /// Column-major `N_DOF x r`, `sum_j U_j`.
    pub u_iso: Vec<f64>,
    /// Row-major `r x r` blocks `U^T A_q U`, one per operator term.
    pub op_blocks: Vec<Vec<f64>>,
    /// `U^T b_p`, one per right-hand-side term.
    pub rhs_blocks: Vec<Vec<f64>>,
}

/// Projected blocks of an affine decomposition.
#[derive(Debug, Clone)]
pub struct ProjectedBlocks {
    pub op_blocks: Vec<Vec<f64>>,
    pub rhs_blocks: Vec<Vec<f64>>,
}

/// `U^T A_q U` for every operator term and `U^T b_p` for every rhs term.
pub fn project_operators(
    modes: &[f64],
    rank: usize,
    family: &ProblemFamily,
) -> Result<ProjectedBlocks> {
    let nh = family.nh();
    if modes.len() != nh * rank {
        return invalid("basis dimension does not match the problem family");
    }
    let col = |k: usize| &modes[k * nh..(k + 1) * nh];
    let op_blocks = (0..family.num_operator_terms())
        .map(|q| {
            let images: Vec<Vec<f64>> = (0..rank)
                .into_par_iter()
                .map(|k| family.apply_operator_term(q, col(k)))
                .collect();
            let mut blk = vec![0.0; rank * rank];
            blk.par_chunks_mut(rank.max(1))
                .enumerate()
                .for_each(|(i, row)| {
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = dot(col(i), &images[k]);
                    }
                });
            blk
        })
        .collect();
    let rhs_blocks = family
        .affine()
        .rhs
        .iter()
        .map(|t| (0..rank).map(|i| dot(col(i), &t.vector)).collect())
        .collect();
    Ok(ProjectedBlocks {
        op_blocks,
        rhs_blocks,
    })
}

impl ReducedBasis {
    /// Completes a POD basis with density maps and projections onto `family`.
    pub fn from_pod(pod: Pod, family: &ProblemFamily) -> Result<Self> {
        if pod.nh != family.nh() {
            return invalid("POD basis length does not match the problem family");
        }
        let blocks = project_operators(&pod.modes, pod.rank, family)?;
        let (ndof, nd) = (family.ndof(), family.num_directions());
        let w = family.quadrature().weights();
        let mut u_rho = vec![0.0; ndof * pod.rank];
        let mut u_iso = vec![0.0; ndof * pod.rank];
        for k in 0..pod.rank {
            let m = &pod.modes[k * pod.nh..(k + 1) * pod.nh];
            for j in 0..nd {
                let mj = &m[j * ndof..(j + 1) * ndof];
                for i in 0..ndof {
                    u_rho[k * ndof + i] += w[j] * mj[i];
                    u_iso[k * ndof + i] += mj[i];
                }
            }
        }
        Ok(Self {
            nh: pod.nh,
            ndof,
            rank: pod.rank,
            modes: pod.modes,
            singular_values: pod.singular_values,
            u_rho,
            u_iso,
            op_blocks: blocks.op_blocks,
            rhs_blocks: blocks.rhs_blocks,
        })
    }

    /// POD of `snapshots` followed by projection.
    pub fn build(snapshots: &SnapshotMatrix, eps_svd: f64, family: &ProblemFamily) -> Result<Self> {
        Self::from_pod(pod(snapshots, eps_svd)?, family)
    }

    /// Checks that stored dimensions are mutually consistent and match `family`.
    pub fn validate(&self, family: &ProblemFamily) -> Result<()> {
        let r = self.rank;
        let ok = self.nh == family.nh()
            && self.ndof == family.ndof()
            && self.modes.len() == self.nh * r
            && self.u_rho.len() == self.ndof * r
            && self.u_iso.len() == self.ndof * r
            && self.op_blocks.len() == family.num_operator_terms()
            && self.op_blocks.iter().all(|b| b.len() == r * r)
            && self.rhs_blocks.len() == family.affine().rhs.len()
            && self.rhs_blocks.iter().all(|b| b.len() == r);
        if ok {
            Ok(())
        } else {
            Err(Error::Format(
                "reduced basis does not match the problem family".into(),
            ))
        }
    }

    pub fn mode(&self, k: usize) -> &[f64] {
        &self.modes[k * self.nh..(k + 1) * self.nh]
    }

    /// `sum_q theta_q(mu) U^T A_q U`, row-major.
    pub fn reduced_operator(&self, family: &ProblemFamily, mu: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.rank * self.rank];
        for (q, blk) in self.op_blocks.iter().enumerate() {
            let th = family.operator_theta(q, mu);
            for (x, b) in a.iter_mut().zip(blk) {
                *x += th * b;
            }
        }
        a
    }

    /// `sum_p theta_p(mu) U^T b_p`
    pub fn reduced_rhs(&self, family: &ProblemFamily, mu: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.rank];
        for (t, blk) in family.affine().rhs.iter().zip(&self.rhs_blocks) {
            let th = (t.theta)(mu);
            for (x, v) in b.iter_mut().zip(blk) {
                *x += th * v;
            }
        }
        b
    }

    pub fn reduced_system(&self, family: &ProblemFamily, mu: &[f64]) -> Result<ReducedSystem> {
        ReducedSystem::new(self.rank, &self.reduced_operator(family, mu))
    }

    /// `U c`
    pub fn lift(&self, c: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.nh];
        for (k, ck) in c.iter().enumerate() {
            for (xi, u) in x.iter_mut().zip(self.mode(k)) {
                *xi += ck * u;
            }
        }
        x
    }

    /// `U^T x`
    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rank).map(|k| dot(self.mode(k), x)).collect()
    }

    /// `U_rho c`
    pub fn density(&self, c: &[f64]) -> DensityField {
        let mut rho = vec![0.0; self.ndof];
        for (k, ck) in c.iter().enumerate() {
            for (r, u) in rho
                .iter_mut()
                .zip(&self.u_rho[k * self.ndof..(k + 1) * self.ndof])
            {
                *r += ck * u;
            }
        }
        rho
    }
}

/// Factorized reduced operator at one parameter.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    rank: usize,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    condition: f64,
}

impl ReducedSystem {
    /// Factorizes a row-major `r x r` matrix; rejects singular or ill-conditioned ones.
    pub fn new(rank: usize, a: &[f64]) -> Result<Self> {
        if a.len() != rank * rank {
            return invalid("reduced operator has the wrong size");
        }
        if rank == 0 {
            return Ok(Self {
                rank,
                lu: None,
                condition: 1.0,
            });
        }
        let m = DMatrix::from_row_slice(rank, rank, a);
        let norm1 = |m: &DMatrix<f64>| {
            m.column_iter()
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0_f64, f64::max)
        };
        let anorm = norm1(&m);
        let lu = m.lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("singular reduced operator".into()))?;
        let condition = anorm * norm1(&inv);
        if !condition.is_finite() || condition > MAX_REDUCED_CONDITION {
            return Err(Error::NumericalFailure(format!(
                "reduced operator condition number {condition:.3e} too large"
            )));
        }
        Ok(Self {
            rank,
            lu: Some(lu),
            condition,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// One-norm condition number.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.rank {
            return invalid("reduced right-hand side has the wrong size");
        }
        match &self.lu {
            None => Ok(Vec::new()),
            Some(lu) => lu
                .solve(&DVector::from_column_slice(rhs))
                .map(|x| x.iter().copied().collect())
                .ok_or_else(|| Error::NumericalFailure("singular reduced operator".into())),
        }
    }
}

/// Solves `A_{mu,r} c = rhs`.
pub fn reduced_solve(
    basis: &ReducedBasis,
    family: &ProblemFamily,
    mu: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    basis.reduced_system(family, mu)?.solve(rhs)
}

/// Density of the reduced solution `U_rho A_{mu,r}^{-1} b_{mu,r}`.
pub fn rom_initial_guess(basis: &ReducedBasis, problem: &DiscreteProblem) -> Result<DensityField> {
    let family = problem.family();
    let c = reduced_solve(
        basis,
        family,
        problem.mu(),
        &basis.reduced_rhs(family, problem.mu()),
    )?;
    Ok(basis.density(&c))
}

/// `U_rho (U^T A_mu U)^{-1} U_iso^T Sigma_s q`
pub fn apply_rom_correction(
    basis: &ReducedBasis,
    system: &ReducedSystem,
    sigma_s: &BlockDiagonal,
    q: &[f64],
) -> Result<DensityField> {
    apply_rom_correction_counted(basis, system, sigma_s, q).map(|(d, _)| d)
}

/// As [`apply_rom_correction`], also returning the number of multiply-adds performed.
pub fn apply_rom_correction_counted(
    basis: &ReducedBasis,
    system: &ReducedSystem,
    sigma_s: &BlockDiagonal,
    q: &[f64],
) -> Result<(DensityField, u64)> {
    let (n, r) = (basis.ndof, basis.rank);
    if q.len() != n || sigma_s.dim() != n || system.rank() != r {
        return invalid("ROM correction dimensions are inconsistent");
    }
    let nloc = sigma_s.nloc() as u64;
    let mut ops = n as u64 * nloc;
    let y = sigma_s.apply(q);
    let yr: Vec<f64> = (0..r)
        .map(|k| dot(&basis.u_iso[k * n..(k + 1) * n], &y))
        .collect();
    ops += (r * n) as u64;
    let c = system.solve(&yr)?;
    ops += (r * r) as u64;
    let d = basis.density(&c);
    ops += (r * n) as u64;
    Ok((d, ops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{build_mesh, gauss_legendre, DGSpace, Inflow, MeshSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snapshots(nh: usize, n: usize, seed: u64) -> SnapshotMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SnapshotMatrix::new(nh);
        for _ in 0..n {
            s.push(
                (0..nh).map(|_| rng.random_range(-1.0..1.0)).collect(),
                &[],
                0,
            )
            .unwrap();
        }
        s
    }

    fn slab_family(n: usize) -> std::sync::Arc<ProblemFamily> {
        let mesh = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![1.0 / n as f64],
        })
        .unwrap();
        ProblemFamily::from_fields(
            "slab",
            DGSpace::new(mesh, 1).unwrap(),
            gauss_legendre(4).unwrap(),
            &|x| 0.2 + x[0],
            &|_| 2.0,
            &|_| 1.0,
            &Inflow::Sides([1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn identical_columns_give_rank_one() {
        let mut s = SnapshotMatrix::new(5);
        let c = vec![1.0, 2.0, 0.0, -1.0, 3.0];
        s.push(c.clone(), &[0.0], 0).unwrap();
        s.push(c.clone(), &[1.0], 0).unwrap();
        let p = pod(&s, 1e-12).unwrap();
        assert_eq!(p.rank, 1);
        let u = &p.modes[..5];
        let proj = dot(u, &c);
        for i in 0..5 {
            assert!((proj * u[i] - c[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_snapshots_give_empty_basis() {
        let mut s = SnapshotMatrix::new(3);
        s.push(vec![0.0; 3], &[], 0).unwrap();
        assert_eq!(pod(&s, 1e-6).unwrap().rank, 0);
        assert!(s.push(vec![0.0; 2], &[], 0).is_err());
    }

    #[test]
    fn truncation_error_matches_discarded_values() {
        let s = random_snapshots(100, 20, 7);
        let p = pod(&s, 0.2).unwrap();
        assert!(p.rank > 0 && p.rank < 20);
        let mut err2 = 0.0;
        for c in s.columns() {
            let mut res = c.clone();
            for k in 0..p.rank {
                let u = &p.modes[k * 100..(k + 1) * 100];
                let a = dot(u, c);
                for (x, ui) in res.iter_mut().zip(u) {
                    *x -= a * ui;
                }
            }
            err2 += dot(&res, &res);
        }
        let tail: f64 = p.singular_values[p.rank..].iter().map(|s| s * s).sum();
        assert!((err2.sqrt() - tail.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn tiny_eps_gives_numerical_rank() {
        let mut s = random_snapshots(30, 4, 3);
        let extra: Vec<f64> = s.columns()[0]
            .iter()
            .zip(&s.columns()[1])
            .map(|(a, b)| a + 2.0 * b)
            .collect();
        s.push(extra, &[], 0).unwrap();
        assert_eq!(pod(&s, 1e-15).unwrap().rank, 4);
    }

    #[test]
    fn projected_blocks_match_dense_products() {
        let fam = slab_family(3);
        let s = random_snapshots(fam.nh(), 5, 11);
        let b = ReducedBasis::build(&s, 1e-14, &fam).unwrap();
        let r = b.rank;
        let mu: [f64; 0] = [];
        let p = fam.instantiate(&mu).unwrap();
        let a = b.reduced_operator(&fam, &mu);
        for k in 0..r {
            let ak = p.apply_full(b.mode(k));
            for i in 0..r {
                assert!((a[i * r + k] - dot(b.mode(i), &ak)).abs() < 1e-11);
            }
        }
        let rhs = b.reduced_rhs(&fam, &mu);
        for i in 0..r {
            assert!((rhs[i] - dot(b.mode(i), p.rhs())).abs() < 1e-12);
        }
        let w = fam.quadrature().weights();
        for k in 0..r {
            for i in 0..fam.ndof() {
                let want: f64 = (0..fam.num_directions())
                    .map(|j| w[j] * b.mode(k)[j * fam.ndof() + i])
                    .sum();
                assert!((b.u_rho[k * fam.ndof() + i] - want).abs() < 1e-14);
            }
        }
        let gram: f64 = (0..r)
            .flat_map(|i| (0..r).map(move |k| (i, k)))
            .map(|(i, k)| (dot(b.mode(i), b.mode(k)) - if i == k { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        assert!(gram < 1e-10);
    }

    #[test]
    fn scalar_reduced_system() {
        let s = ReducedSystem::new(1, &[4.0]).unwrap();
        assert_eq!(s.solve(&[2.0]).unwrap(), vec![0.5]);
        assert!(ReducedSystem::new(2, &[1.0, 1.0, 1.0, 1.0]).is_err());
        assert!(ReducedSystem::new(2, &[1.0, 0.0, 0.0, 1e-20]).is_err());
        assert!(ReducedSystem::new(0, &[])
            .unwrap()
            .solve(&[])
            .unwrap()
            .is_empty());
    }

    #[test]
    fn reduced_solve_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for r in [2, 5, 9] {
            let mut a: Vec<f64> = (0..r * r).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in 0..r {
                a[i * r + i] += r as f64;
            }
            let b: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = ReducedSystem::new(r, &a).unwrap().solve(&b).unwrap();
            let oracle = DMatrix::from_row_slice(r, r, &a)
                .pseudo_inverse(1e-15)
                .unwrap()
                * DVector::from_column_slice(&b);
            for i in 0..r {
                assert!((x[i] - oracle[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correction_cost_is_linear_in_dofs() {
        let mut counts = Vec::new();
        for n in [10, 40] {
            let fam = slab_family(n);
            let s = random_snapshots(fam.nh(), 6, 1);
            let b = ReducedBasis::build(&s, 1e-14, &fam).unwrap();
            let p = fam.instantiate(&[]).unwrap();
            let sys = b.reduced_system(&fam, &[]).unwrap();
            let q = vec![1.0; fam.ndof()];
            let (_, ops) = apply_rom_correction_counted(&b, &sys, &p.sigma_s, &q).unwrap();
            counts.push(ops as f64);
        }
        let ratio = counts[1] / counts[0];
        assert!(ratio > 3.5 && ratio < 4.0, "{ratio}");
    }

    #[test]
    fn galerkin_consistency() {
        let fam = slab_family(4);
        let s = random_snapshots(fam.nh(), 4, 2);
        let b = ReducedBasis::build(&s, 1e-14, &fam).unwrap();
        let w = b.lift(&[0.3, -1.0, 2.0, 0.5]);
        let back = b.lift(&b.restrict(&w));
        for (x, y) in w.iter().zip(&back) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
