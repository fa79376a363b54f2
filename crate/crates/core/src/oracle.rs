//! Dense reference operators for small problems, built directly from the assembled
//! blocks without the sweep machinery.

use nalgebra::{DMatrix, DVector};

use crate::discretization::DiscreteProblem;
use crate::error::{Error, Result};
use crate::transport::{CorrectionStrategy, DensityField};

/// Largest `N_h` for which dense operators are formed.
pub const MAX_DENSE_NH: usize = 4096;

fn check_size(problem: &DiscreteProblem) -> Result<()> {
    if problem.nh() > MAX_DENSE_NH {
        return Err(Error::SizeLimit(format!(
            "dense oracle needs N_h <= {MAX_DENSE_NH}, got {}",
            problem.nh()
        )));
    }
    Ok(())
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dense_block_diagonal(b: &crate::discretization::BlockDiagonal) -> DMatrix<f64> {
    let (n, nloc) = (b.dim(), b.nloc());
    let mut m = DMatrix::zeros(n, n);
    for c in 0..b.num_blocks() {
        let blk = b.block(c);
        for i in 0..nloc {
            for k in 0..nloc {
                m[(c * nloc + i, c * nloc + k)] = blk[i * nloc + k];
            }
        }
    }
    m
}

/// `D_j + Sigma_t` for direction `j`.
pub fn dense_direction_operator(problem: &DiscreteProblem, j: usize) -> DMatrix<f64> {
    let nloc = problem.space().nloc();
    let d = problem.family().streaming().direction(j);
    let mut m = dense_block_diagonal(&problem.sigma_t);
    for c in 0..problem.space().mesh().num_cells() {
        let blk = d.diag_block(c, nloc);
        for i in 0..nloc {
            for k in 0..nloc {
                m[(c * nloc + i, c * nloc + k)] += blk[i * nloc + k];
            }
        }
        for (nb, blk) in d.couplings(c) {
            for i in 0..nloc {
                for k in 0..nloc {
                    m[(c * nloc + i, nb * nloc + k)] += blk[i * nloc + k];
                }
            }
        }
    }
    m
}

/// Full discrete operator `A = blockdiag(D_j + Sigma_t) - Sigma_s (1 w^T)`.
pub fn dense_operator(problem: &DiscreteProblem) -> Result<DMatrix<f64>> {
    check_size(problem)?;
    let (n, nd) = (problem.ndof(), problem.num_directions());
    let ss = dense_block_diagonal(&problem.sigma_s);
    let mut a = DMatrix::zeros(n * nd, n * nd);
    for j in 0..nd {
        a.view_mut((j * n, j * n), (n, n))
            .copy_from(&dense_direction_operator(problem, j));
        for k in 0..nd {
            let mut v = a.view_mut((j * n, k * n), (n, n));
            v -= &ss * problem.quadrature().weight(k);
        }
    }
    Ok(a)
}

/// Dense solve of `A f = b`.
pub fn dense_solution(problem: &DiscreteProblem) -> Result<Vec<f64>> {
    let a = dense_operator(problem)?;
    let f = a
        .lu()
        .solve(&DVector::from_column_slice(problem.rhs()))
        .ok_or_else(|| Error::NumericalFailure("singular dense transport operator".into()))?;
    Ok(to_vec(&f))
}

/// `sum_j w_j (D_j + Sigma_t)^{-1}` as a dense matrix.
pub fn dense_k(problem: &DiscreteProblem) -> Result<DMatrix<f64>> {
    check_size(problem)?;
    let n = problem.ndof();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..problem.num_directions() {
        let inv = dense_direction_operator(problem, j)
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("singular direction operator".into()))?;
        k += inv * problem.quadrature().weight(j);
    }
    Ok(k)
}

/// `A~ = I - K Sigma_s` and `b~ = sum_j w_j (D_j + Sigma_t)^{-1} Q~_j`.
pub fn dense_density_system(problem: &DiscreteProblem) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = problem.ndof();
    let k = dense_k(problem)?;
    let a = DMatrix::identity(n, n) - &k * dense_block_diagonal(&problem.sigma_s);
    let mut b = DVector::zeros(n);
    for j in 0..problem.num_directions() {
        let x = dense_direction_operator(problem, j)
            .lu()
            .solve(&DVector::from_column_slice(problem.rhs_direction(j)))
            .ok_or_else(|| Error::NumericalFailure("singular direction operator".into()))?;
        b += x * problem.quadrature().weight(j);
    }
    Ok((a, to_vec(&b)))
}

/// Dense solve of `A~ rho = b~`.
pub fn dense_density_solution(problem: &DiscreteProblem) -> Result<DensityField> {
    let (a, b) = dense_density_system(problem)?;
    let x = a
        .lu()
        .solve(&DVector::from_vec(b))
        .ok_or_else(|| Error::NumericalFailure("singular density operator".into()))?;
    Ok(to_vec(&x))
}

/// Exact kinetic correction: solves `A df = 1 (x) Sigma_s r` densely.
pub struct IdealCorrection {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    ndof: usize,
    weights: Vec<f64>,
}

impl IdealCorrection {
    pub fn new(problem: &DiscreteProblem) -> Result<Self> {
        Ok(Self {
            lu: dense_operator(problem)?.lu(),
            ndof: problem.ndof(),
            weights: problem.quadrature().weights().to_vec(),
        })
    }

    /// Returns `(df, drho)` for the residual `r`.
    pub fn solve(&self, problem: &DiscreteProblem, r: &[f64]) -> Result<(Vec<f64>, DensityField)> {
        let y = problem.sigma_s.apply(r);
        let rhs: Vec<f64> = (0..self.weights.len())
            .flat_map(|_| y.iter().copied())
            .collect();
        let df = self
            .lu
            .solve(&DVector::from_vec(rhs))
            .ok_or_else(|| Error::NumericalFailure("singular dense transport operator".into()))?;
        let n = self.ndof;
        let mut rho = vec![0.0; n];
        for (j, w) in self.weights.iter().enumerate() {
            for i in 0..n {
                rho[i] += w * df[j * n + i];
            }
        }
        Ok((to_vec(&df), rho))
    }
}

impl CorrectionStrategy for IdealCorrection {
    fn name(&self) -> String {
        "ideal".into()
    }

    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        _iteration: usize,
        increment: &[f64],
    ) -> Result<DensityField> {
        self.solve(problem, increment).map(|(_, d)| d)
    }
}
