mod common;

use common::*;
use nalgebra::DVector;
use tarom::krylov::{
    arnoldi_defect, fgmres_with_state, DsaPreconditioner, GmresOptions, IdentityPreconditioner,
};
use tarom::oracle::{dense_density_solution, dense_density_system, IdealCorrection};
use tarom::tar::{
    compute_etas, romsad_offline, romsad_online, tar_offline_fgmres, tar_offline_si,
    tar_online_fgmres, tar_online_si, RomsadConfig, TrainingSet,
};
use tarom::transport::{sweep_isotropic, SiOptions};
use tarom::workbench::{load_artifact, save_artifact, ProblemId};

fn training_mus() -> Vec<Vec<f64>> {
    vec![
        vec![0.6, 14.0],
        vec![0.8, 22.0],
        vec![1.0, 31.0],
        vec![1.2, 40.0],
        vec![1.45, 48.0],
    ]
}

fn check_etas(id: ProblemId, dsa: bool, swept_tol: Option<f64>) {
    let p = small_problem(id, &probe_parameters(id)[0]);
    let rho = dense_density_solution(&p).unwrap();
    let (a, _) = dense_density_system(&p).unwrap();
    let opts = GmresOptions {
        tol: 1e-300,
        max_iter: 3,
        ..Default::default()
    };
    let (_, st) = if dsa {
        fgmres_with_state(&p, &mut DsaPreconditioner::new(&p).unwrap(), None, &opts).unwrap()
    } else {
        fgmres_with_state(&p, &mut IdentityPreconditioner, None, &opts).unwrap()
    };
    let (etas, stop) = compute_etas(&rho, &st, 3);
    assert!(stop.is_none() && etas.len() == 3, "{id}");
    let ideal = IdealCorrection::new(&p).unwrap();
    for (l, eta) in etas.iter().enumerate() {
        let ae: Vec<f64> = (&a * DVector::from_column_slice(eta))
            .iter()
            .copied()
            .collect();
        let d = max_diff(&ae, &st.q[l]);
        assert!(d <= 1e-10, "{id} level {}: {d:e}", l + 1);
        if let Some(tol) = swept_tol {
            let swept = sweep_isotropic(&p, &p.sigma_s.apply(eta));
            let (df, _) = ideal.solve(&p, &st.q[l]).unwrap();
            let d = max_diff(swept.values(), &df);
            assert!(d <= tol, "{id} level {}: {d:e}", l + 1);
        }
    }
}

#[test]
fn eta_vectors_reproduce_krylov_vectors_and_ideal_corrections() {
    for id in [ProblemId::TwoMaterial, ProblemId::PinCell] {
        check_etas(id, false, Some(1e-9));
    }
}

#[test]
fn eta_identity_holds_for_dsa_preconditioned_vectors() {
    for id in [ProblemId::TwoMaterial, ProblemId::PinCell] {
        check_etas(id, true, None);
    }
}

#[test]
fn online_trajectory_replays_offline_trajectory() {
    let fam = small_family(ProblemId::TwoMaterial);
    let training = TrainingSet::compute(&fam, &training_mus(), 1e-13, 500).unwrap();
    let (art, trace) = tar_offline_si(&training, None, 2, 1e-13).unwrap();
    let opts = SiOptions {
        record_trajectory: true,
        ..Default::default()
    };
    for (k, t) in training.solutions.iter().enumerate() {
        let p = fam.instantiate(&t.mu).unwrap();
        let r = tar_online_si(&art, &p, &opts).unwrap();
        for l in 0..2.min(r.increments.len()) {
            let d = max_diff(&r.increments[l], &trace.increments[k][l]);
            assert!(d <= 1e-10, "{:?} iteration {}: {d:e}", t.mu, l + 1);
        }
        assert!(
            r.converged && r.iterations <= 3,
            "{:?}: {}",
            t.mu,
            r.iterations
        );
    }
}

#[test]
fn loaded_artifacts_replay_identical_solves() {
    let fam = small_family(ProblemId::TwoMaterial);
    let training = TrainingSet::compute(&fam, &training_mus(), 1e-13, 500).unwrap();
    let ig = training.ig_basis(1e-9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = fam.instantiate(&[0.9, 27.5]).unwrap();
    let si = SiOptions::default();

    let (tar, _) = tar_offline_si(&training, Some(&ig), 2, 1e-9).unwrap();
    let path = dir.path().join("tar.tarrom");
    save_artifact(&tar, &path).unwrap();
    let back = load_artifact(&path).unwrap();
    assert_eq!(back, tar);
    assert_eq!(
        tar_online_si(&back, &p, &si).unwrap(),
        tar_online_si(&tar, &p, &si).unwrap()
    );

    let fg = tar_offline_fgmres(&training, Some(&ig), 1, 1e-9).unwrap();
    save_artifact(&fg, &path).unwrap();
    let back = load_artifact(&path).unwrap();
    let gm = GmresOptions::default();
    assert_eq!(
        tar_online_fgmres(&back, &p, &gm).unwrap(),
        tar_online_fgmres(&fg, &p, &gm).unwrap()
    );

    let rs = romsad_offline(&training, 3, 1e-9).unwrap();
    save_artifact(&rs, &path).unwrap();
    let back = load_artifact(&path).unwrap();
    let cfg = RomsadConfig::new(3, 3);
    assert_eq!(
        romsad_online(&back, cfg, &p, &si).unwrap(),
        romsad_online(&rs, cfg, &p, &si).unwrap()
    );
}

#[test]
fn mismatched_artifacts_are_rejected() {
    let fam = small_family(ProblemId::TwoMaterial);
    let training = TrainingSet::compute(&fam, &training_mus(), 1e-12, 500).unwrap();
    let (tar, _) = tar_offline_si(&training, None, 1, 1e-9).unwrap();
    let other = small_problem(ProblemId::PinCell, &[0.1, 0.1]);
    assert!(tar_online_si(&tar, &other, &SiOptions::default()).is_err());
    let p = fam.instantiate(&[1.0, 20.0]).unwrap();
    assert!(tar_online_fgmres(&tar, &p, &GmresOptions::default()).is_err());
}

#[test]
fn flexible_arnoldi_relation_holds_with_trajectory_preconditioners() {
    let fam = small_family(ProblemId::TwoMaterial);
    let training = TrainingSet::compute(&fam, &training_mus(), 1e-13, 500).unwrap();
    let art = tar_offline_fgmres(&training, None, 2, 1e-7).unwrap();
    let p = fam.instantiate(&[0.7, 33.0]).unwrap();
    let mut sched = tarom::tar::build_preconditioner_schedule(&art);
    let opts = GmresOptions {
        tol: 1e-300,
        max_iter: 8,
        ..Default::default()
    };
    let (_, st) = fgmres_with_state(&p, &mut sched, None, &opts).unwrap();
    assert!(arnoldi_defect(&p, &st) <= 1e-9);
}
