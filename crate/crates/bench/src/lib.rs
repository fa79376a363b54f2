//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use tarom::discretization::{DiscreteProblem, ProblemFamily};
use tarom::workbench::{make_family, make_problem, Discretization, ProblemId, QuadratureSpec};

/// Reference slab and a 2D square at moderate resolution.
pub fn slab() -> (Arc<ProblemFamily>, DiscreteProblem) {
    let fam = make_family(
        ProblemId::TwoMaterial,
        &Discretization::reference(ProblemId::TwoMaterial),
    )
    .expect("slab family");
    let p = make_problem(&fam, &[1.0, 30.0]).expect("slab instance");
    (fam, p)
}

pub fn square(nx: usize) -> (Arc<ProblemFamily>, DiscreteProblem) {
    let disc = Discretization {
        nx,
        quadrature: QuadratureSpec::ChebyshevLegendre(8, 4),
        ..Discretization::reference(ProblemId::VariableScattering)
    };
    let fam = make_family(ProblemId::VariableScattering, &disc).expect("square family");
    let p = make_problem(&fam, &[75.0]).expect("square instance");
    (fam, p)
}
