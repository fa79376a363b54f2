mod common;

use common::*;
use nalgebra::DVector;
use tarom::dsa::DsaCorrection;
use tarom::krylov::{fgmres, DsaPreconditioner, GmresOptions, IdentityPreconditioner};
use tarom::oracle::{dense_density_system, dense_operator, dense_solution, IdealCorrection};
use tarom::transport::{apply_lhs_tilde, rhs_tilde, source_iteration, NoCorrection, SiOptions};
use tarom::workbench::ProblemId;

fn dense_density(p: &tarom::discretization::DiscreteProblem) -> Vec<f64> {
    density(p, &dense_solution(p).unwrap())
}

#[test]
fn si_fixed_point_matches_dense_solve() {
    let p = tiny_slab();
    assert_eq!(p.nh(), 64);
    let exact = dense_density(&p);
    let opts = SiOptions {
        tol: 1e-14,
        max_iter: 2000,
        ..Default::default()
    };
    let plain = source_iteration(&p, &mut NoCorrection, None, &opts).unwrap();
    assert!(plain.converged);
    assert!(max_diff(&plain.final_density, &exact) < 1e-10);
    let dsa = source_iteration(&p, &mut DsaCorrection::new(&p).unwrap(), None, &opts).unwrap();
    assert!(dsa.converged && dsa.iterations < plain.iterations);
    assert!(max_diff(&dsa.final_density, &exact) < 1e-10);
}

#[test]
fn density_operator_matches_dense_matrix() {
    let p = tiny_slab();
    let (a, b) = dense_density_system(&p).unwrap();
    for seed in 0..3 {
        let x: Vec<f64> = (0..p.ndof())
            .map(|i| ((i + 7 * seed) as f64 * 0.91).cos())
            .collect();
        let ax: Vec<f64> = (&a * DVector::from_column_slice(&x))
            .iter()
            .copied()
            .collect();
        assert!(max_diff(&apply_lhs_tilde(&p, &x), &ax) < 1e-10);
    }
    assert!(max_diff(&rhs_tilde(&p), &b) < 1e-10);
}

#[test]
fn gmres_solutions_match_dense_solve() {
    let p = tiny_slab();
    let exact = dense_density(&p);
    let opts = GmresOptions {
        tol: 1e-13,
        max_iter: 64,
        ..Default::default()
    };
    let plain = fgmres(&p, &mut IdentityPreconditioner, None, &opts).unwrap();
    assert!(plain.converged);
    assert!(max_diff(&plain.final_density, &exact) < 1e-10);
    let pre = fgmres(&p, &mut DsaPreconditioner::new(&p).unwrap(), None, &opts).unwrap();
    assert!(pre.converged && pre.iterations <= plain.iterations);
    assert!(max_diff(&pre.final_density, &exact) < 1e-10);
}

#[test]
fn ideal_correction_converges_in_two_steps_on_every_benchmark() {
    for id in ALL {
        for mu in probe_parameters(id) {
            let p = small_problem(id, &mu);
            let r = source_iteration(
                &p,
                &mut IdealCorrection::new(&p).unwrap(),
                None,
                &SiOptions::default(),
            )
            .unwrap();
            assert!(
                r.converged && r.iterations <= 2,
                "{id} at {mu:?}: {} iterations",
                r.iterations
            );
        }
    }
}

#[test]
fn si_dsa_is_preconditioned_richardson() {
    for id in [ProblemId::TwoMaterial, ProblemId::Lattice] {
        let mu = &probe_parameters(id)[0];
        let p = small_problem(id, mu);
        let (a, b) = dense_density_system(&p).unwrap();
        let dsa = DsaCorrection::new(&p).unwrap();
        let opts = SiOptions {
            tol: 1e-300,
            max_iter: 11,
            record_trajectory: true,
            ..Default::default()
        };
        let si = source_iteration(&p, &mut DsaCorrection::new(&p).unwrap(), None, &opts).unwrap();
        let b = DVector::from_vec(b);
        let mut rho = DVector::zeros(p.ndof());
        for k in 0..10 {
            let r: Vec<f64> = (&b - &a * &rho).iter().copied().collect();
            let c = dsa.apply(&p, &r).unwrap();
            rho += DVector::from_iterator(p.ndof(), r.iter().zip(&c).map(|(x, y)| x + y));
            let d = max_diff(&si.iterates[k], rho.as_slice());
            assert!(d < 1e-11, "{id} iteration {}: {d:e}", k + 1);
        }
    }
}

#[test]
fn dense_operator_of_benchmarks_matches_matrix_free_apply() {
    for id in ALL {
        let mu = &probe_parameters(id)[1];
        let p = small_problem(id, mu);
        let a = dense_operator(&p).unwrap();
        let x: Vec<f64> = (0..p.nh()).map(|i| (0.13 * i as f64).sin()).collect();
        let ax: Vec<f64> = (&a * DVector::from_column_slice(&x))
            .iter()
            .copied()
            .collect();
        assert!(rel_diff(&p.apply_full(&x), &ax) < 1e-12, "{id}");
    }
}
