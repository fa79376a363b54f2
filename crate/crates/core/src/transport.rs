//! Matrix-free transport sweeps, the density-space operator and Source Iteration.

use rayon::prelude::*;

use crate::discretization::{AngularQuadrature, DiscreteProblem};
use crate::error::{invalid, Result};
use crate::linalg::{norm_inf, sub};

/// Density coefficients `rho = sum_j w_j f_j`, length `N_DOF`.
pub type DensityField = Vec<f64>;

/// Angular flux coefficients, direction-major (`N_v` blocks of `N_DOF`).
#[derive(Debug, Clone, PartialEq)]
pub struct AngularFlux {
    ndof: usize,
    values: Vec<f64>,
}

impl AngularFlux {
    pub fn new(ndof: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % ndof.max(1), 0);
        Self { ndof, values }
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn num_directions(&self) -> usize {
        self.values.len() / self.ndof
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        &self.values[j * self.ndof..(j + 1) * self.ndof]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Solves `(D_j + Sigma_t) x = rhs` for one direction.
pub fn transport_sweep(problem: &DiscreteProblem, j: usize, rhs: &[f64]) -> Result<Vec<f64>> {
    if j >= problem.num_directions() {
        return invalid(format!("direction {j} out of range"));
    }
    if rhs.len() != problem.ndof() {
        return invalid("sweep right-hand side has wrong length");
    }
    Ok(problem.sweep().solve(j, rhs))
}

pub fn compute_density(flux: &AngularFlux, quadrature: &AngularQuadrature) -> DensityField {
    crate::discretization::density_of(quadrature, flux.values(), flux.ndof())
}

/// One full sweep with right-hand side `iso + Q~_j` (if `with_source`) for all directions.
fn sweep_all(problem: &DiscreteProblem, iso: &[f64], with_source: bool) -> AngularFlux {
    let parts: Vec<Vec<f64>> = (0..problem.num_directions())
        .into_par_iter()
        .map(|j| {
            let rhs: Vec<f64> = if with_source {
                iso.iter()
                    .zip(problem.rhs_direction(j))
                    .map(|(a, b)| a + b)
                    .collect()
            } else {
                iso.to_vec()
            };
            problem.sweep().solve(j, &rhs)
        })
        .collect();
    AngularFlux::new(problem.ndof(), parts.concat())
}

/// Solves `(D_j + Sigma_t) f_j = Sigma_s rho_prev + Q~_j` for every `j`; one sweep.
pub fn si_step(problem: &DiscreteProblem, rho_prev: &[f64]) -> (AngularFlux, DensityField) {
    let src = problem.sigma_s.apply(rho_prev);
    let flux = sweep_all(problem, &src, true);
    let rho = compute_density(&flux, problem.quadrature());
    (flux, rho)
}

/// Sweeps the isotropic source `s` with zero inflow: returns `delta f` with
/// `(D_j + Sigma_t) delta f_j = s`. One sweep.
pub fn sweep_isotropic(problem: &DiscreteProblem, s: &[f64]) -> AngularFlux {
    sweep_all(problem, s, false)
}

/// `K v = sum_j w_j (D_j + Sigma_t)^{-1} v`; one sweep.
pub fn apply_k(problem: &DiscreteProblem, v: &[f64]) -> DensityField {
    compute_density(&sweep_isotropic(problem, v), problem.quadrature())
}

/// `(I - K Sigma_s) rho`; one sweep.
pub fn apply_lhs_tilde(problem: &DiscreteProblem, rho: &[f64]) -> DensityField {
    let k = apply_k(problem, &problem.sigma_s.apply(rho));
    rho.iter().zip(&k).map(|(a, b)| a - b).collect()
}

/// `b~ = sum_j w_j (D_j + Sigma_t)^{-1} Q~_j`; one sweep.
pub fn rhs_tilde(problem: &DiscreteProblem) -> DensityField {
    let zero = vec![0.0; problem.ndof()];
    compute_density(&sweep_all(problem, &zero, true), problem.quadrature())
}

/// `||(I - K Sigma_s) rho - b~||_inf`; two sweeps.
pub fn operator_residual_inf(problem: &DiscreteProblem, rho: &[f64]) -> f64 {
    norm_inf(&sub(&apply_lhs_tilde(problem, rho), &rhs_tilde(problem)))
}

/// Density correction applied after each unconverged Source Iteration step.
pub trait CorrectionStrategy {
    fn name(&self) -> String;

    /// Returns `delta rho^(l)` given iteration `l >= 1` and `increment = rho^(l,*) - rho^(l-1)`.
    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        iteration: usize,
        increment: &[f64],
    ) -> Result<DensityField>;
}

/// Plain Source Iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoCorrection;

impl CorrectionStrategy for NoCorrection {
    fn name(&self) -> String {
        "none".into()
    }

    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        _: usize,
        _: &[f64],
    ) -> Result<DensityField> {
        Ok(vec![0.0; problem.ndof()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub cumulative_sweeps: usize,
    /// `||rho^(l,*) - rho^(l-1)||_inf` for Source Iteration runs.
    pub increment_inf: Option<f64>,
    /// Least-squares residual for Krylov runs.
    pub lsq_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub sweep_count: usize,
    pub history: Vec<IterationRecord>,
    pub final_density: DensityField,
    pub final_flux: Option<AngularFlux>,
    /// Increments `rho^(l,*) - rho^(l-1)` per iteration, when requested.
    pub increments: Vec<DensityField>,
    /// Corrected iterates `rho^(l)` (or the returned solution at the last step), when requested.
    pub iterates: Vec<DensityField>,
}

impl SolveReport {
    pub fn residual_history(&self) -> Vec<f64> {
        self.history
            .iter()
            .map(|r| r.increment_inf.or(r.lsq_residual).unwrap_or(f64::NAN))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub record_trajectory: bool,
    pub keep_flux: bool,
}

impl Default for SiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            record_trajectory: false,
            keep_flux: false,
        }
    }
}

/// Source Iteration with a pluggable synthetic-acceleration step.
pub fn source_iteration(
    problem: &DiscreteProblem,
    strategy: &mut dyn CorrectionStrategy,
    rho0: Option<&[f64]>,
    opts: &SiOptions,
) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut rho = match rho0 {
        Some(r) if r.len() != problem.ndof() => return invalid("initial guess has wrong length"),
        Some(r) => r.to_vec(),
        None => vec![0.0; problem.ndof()],
    };
    let mut report = SolveReport::default();
    for l in 1..=opts.max_iter {
        let (flux, rho_star) = si_step(problem, &rho);
        let inc = sub(&rho_star, &rho);
        let inc_norm = norm_inf(&inc);
        report.iterations = l;
        report.sweep_count = l;
        report.history.push(IterationRecord {
            iter: l,
            cumulative_sweeps: l,
            increment_inf: Some(inc_norm),
            lsq_residual: None,
        });
        if opts.record_trajectory {
            report.increments.push(inc.clone());
        }
        if inc_norm < opts.tol || l == opts.max_iter {
            report.converged = inc_norm < opts.tol;
            if opts.record_trajectory {
                report.iterates.push(rho_star.clone());
            }
            report.final_density = rho_star;
            if opts.keep_flux {
                report.final_flux = Some(flux);
            }
            return Ok(report);
        }
        let delta = strategy.correction(problem, l, &inc)?;
        rho = rho_star.iter().zip(&delta).map(|(a, b)| a + b).collect();
        if opts.record_trajectory {
            report.iterates.push(rho.clone());
        }
    }
    // max_iter == 0
    report.final_density = rho;
    Ok(report)
}
