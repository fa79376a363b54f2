#![allow(dead_code)]

use std::sync::Arc;

use tarom::discretization::{
    build_mesh, gauss_legendre, DGSpace, DiscreteProblem, Inflow, MeshSpec, ProblemFamily,
};
use tarom::linalg::norm_inf;
use tarom::workbench::{make_family, make_problem, Discretization, ProblemId, QuadratureSpec};

pub const ALL: [ProblemId; 4] = [
    ProblemId::TwoMaterial,
    ProblemId::VariableScattering,
    ProblemId::PinCell,
    ProblemId::Lattice,
];

/// Coarse version of a benchmark, small enough for dense solves.
pub fn small_discretization(id: ProblemId) -> Discretization {
    let base = Discretization::reference(id);
    match id {
        ProblemId::TwoMaterial => Discretization {
            slab_dx: [0.25, 1.0],
            quadrature: QuadratureSpec::GaussLegendre(8),
            ..base
        },
        _ => Discretization {
            nx: 6,
            quadrature: QuadratureSpec::ChebyshevLegendre(4, 2),
            ..base
        },
    }
}

pub fn small_family(id: ProblemId) -> Arc<ProblemFamily> {
    make_family(id, &small_discretization(id)).expect("small family")
}

/// Box center and two opposite corners.
pub fn probe_parameters(id: ProblemId) -> Vec<Vec<f64>> {
    let b = id.parameter_box();
    let mid = b
        .lower
        .iter()
        .zip(&b.upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    vec![mid, b.lower.clone(), b.upper.clone()]
}

pub fn small_problem(id: ProblemId, mu: &[f64]) -> DiscreteProblem {
    make_problem(&small_family(id), mu).expect("small instance")
}

/// Eight-cell linear-DG slab with four directions: `N_h = 64`.
pub fn tiny_slab() -> DiscreteProblem {
    let mesh = build_mesh(&MeshSpec::Segments {
        breakpoints: vec![0.0, 2.0],
        cell_sizes: vec![0.25],
    })
    .expect("mesh");
    ProblemFamily::from_fields(
        "tiny",
        DGSpace::new(mesh, 1).expect("space"),
        gauss_legendre(4).expect("rule"),
        &|x| 0.2 + 0.3 * x[0],
        &|x| 2.0 + (3.0 * x[0]).sin(),
        &|x| 1.0 + x[0] * x[0],
        &Inflow::Sides([1.5, 0.5, 0.0, 0.0]),
    )
    .expect("family")
    .instantiate(&[])
    .expect("instance")
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    max_diff(a, b) / norm_inf(b).max(f64::MIN_POSITIVE)
}

/// Density of a stacked angular flux.
pub fn density(p: &DiscreteProblem, f: &[f64]) -> Vec<f64> {
    let n = p.ndof();
    let mut rho = vec![0.0; n];
    for (j, w) in p.quadrature().weights().iter().enumerate() {
        for i in 0..n {
            rho[i] += w * f[j * n + i];
        }
    }
    rho
}
