//! Parametric benchmark problems.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::discretization::{
    assemble_coefficient_mass, build_mesh, chebyshev_legendre, component_theta, constant_theta,
    gauss_legendre, indicator_mass, stacked_rhs, AffineDecomposition, AngularQuadrature,
    CoefficientTerm, DGSpace, DiscreteProblem, Inflow, MeshSpec, ParameterBox, ProblemFamily,
    RhsTerm, TermKind,
};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    TwoMaterial,
    VariableScattering,
    PinCell,
    Lattice,
}

impl ProblemId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemId::TwoMaterial => "two_material",
            ProblemId::VariableScattering => "variable_scattering",
            ProblemId::PinCell => "pin_cell",
            ProblemId::Lattice => "lattice",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemId::TwoMaterial => 1,
            _ => 2,
        }
    }

    /// Parameter box `(lower, upper)`.
    pub fn parameter_box(&self) -> ParameterBox {
        let (lo, hi) = match self {
            ProblemId::TwoMaterial => (vec![0.5, 10.0], vec![1.5, 50.0]),
            ProblemId::VariableScattering => (vec![49.9], vec![99.9]),
            ProblemId::PinCell => (vec![0.05, 0.05], vec![0.5, 0.5]),
            ProblemId::Lattice => (vec![95.0, 0.5], vec![105.0, 1.5]),
        };
        ParameterBox::new(lo, hi).expect("static box")
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_material" => Ok(ProblemId::TwoMaterial),
            "variable_scattering" => Ok(ProblemId::VariableScattering),
            "pin_cell" => Ok(ProblemId::PinCell),
            "lattice" => Ok(ProblemId::Lattice),
            _ => Err(Error::Config(format!("unknown problem '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureSpec {
    GaussLegendre(usize),
    ChebyshevLegendre(usize, usize),
}

impl QuadratureSpec {
    pub fn build(&self) -> Result<AngularQuadrature> {
        match *self {
            QuadratureSpec::GaussLegendre(n) => gauss_legendre(n),
            QuadratureSpec::ChebyshevLegendre(a, z) => chebyshev_legendre(a, z),
        }
    }
}

/// How training parameters are laid out.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingGrid {
    /// The grid formula of the reference setup.
    Reference,
    /// Tensor grid with the given number of points per axis, endpoints included.
    Uniform(Vec<usize>),
}

/// Spatial and angular resolution of a benchmark instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    /// Cells per axis in 2D.
    pub nx: usize,
    /// Cell sizes in the absorbing and scattering zones of the slab.
    pub slab_dx: [f64; 2],
    pub quadrature: QuadratureSpec,
    pub degree: usize,
}

impl Discretization {
    /// Reference resolution of each benchmark.
    pub fn reference(id: ProblemId) -> Self {
        let (nx, quadrature) = match id {
            ProblemId::TwoMaterial => (0, QuadratureSpec::GaussLegendre(16)),
            ProblemId::VariableScattering | ProblemId::PinCell => {
                (80, QuadratureSpec::ChebyshevLegendre(30, 6))
            }
            ProblemId::Lattice => (50, QuadratureSpec::ChebyshevLegendre(40, 6)),
        };
        Self {
            nx,
            slab_dx: [0.01, 0.1],
            quadrature,
            degree: 1,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn tensor(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    out
}

/// Training parameters for `id` laid out by `grid`.
pub fn training_parameters(id: ProblemId, grid: &TrainingGrid) -> Result<Vec<Vec<f64>>> {
    let b = id.parameter_box();
    match grid {
        TrainingGrid::Uniform(counts) => {
            if counts.len() != b.dim() || counts.iter().any(|c| *c == 0) {
                return Err(Error::Config(format!(
                    "training grid needs {} positive counts for {id}",
                    b.dim()
                )));
            }
            let axes: Vec<Vec<f64>> = (0..b.dim())
                .map(|k| linspace(b.lower[k], b.upper[k], counts[k]))
                .collect();
            Ok(tensor(&axes))
        }
        TrainingGrid::Reference => Ok(match id {
            ProblemId::TwoMaterial => tensor(&[
                (0..=10).map(|m| 0.5 + 0.1 * m as f64).collect(),
                (0..=40).map(|n| 10.0 + n as f64).collect(),
            ]),
            ProblemId::VariableScattering => tensor(&[linspace(49.9, 99.9, 50)]),
            ProblemId::PinCell => tensor(&[
                (1..=5).map(|i| 0.05 * i as f64).collect(),
                (1..=5).map(|j| 0.05 * j as f64).collect(),
            ]),
            ProblemId::Lattice => tensor(&[
                (0..=10).map(|i| 95.0 + i as f64).collect(),
                (0..=10).map(|j| 0.5 + 0.1 * j as f64).collect(),
            ]),
        }),
    }
}

/// Smooth radial profile `r^4 (2 - r^4)^2` inside the unit disc, 1 outside.
pub fn scattering_profile(p: [f64; 2]) -> f64 {
    let r2 = p[0] * p[0] + p[1] * p[1];
    if r2 <= 1.0 {
        let r4 = r2 * r2;
        r4 * (2.0 - r4) * (2.0 - r4)
    } else {
        1.0
    }
}

/// Absorbing unit squares of the lattice.
pub const LATTICE_ABSORBERS: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, 3.0], [3.0, 1.0], [3.0, 3.0]];

pub fn in_lattice_absorber(p: [f64; 2]) -> bool {
    LATTICE_ABSORBERS
        .iter()
        .any(|c| p[0] > c[0] && p[0] < c[0] + 1.0 && p[1] > c[1] && p[1] < c[1] + 1.0)
}

pub fn in_lattice_source(p: [f64; 2]) -> bool {
    (p[0] - 2.5).abs() < 0.5 && (p[1] - 2.5).abs() < 0.5
}

fn term(
    label: &str,
    kind: TermKind,
    theta: crate::discretization::ParamFn,
    mass: crate::discretization::BlockDiagonal,
) -> CoefficientTerm {
    CoefficientTerm {
        label: label.into(),
        kind,
        theta,
        mass,
    }
}

/// Builds the affine problem family of a benchmark.
pub fn make_family(id: ProblemId, disc: &Discretization) -> Result<Arc<ProblemFamily>> {
    let quad = disc.quadrature.build()?;
    if (id.dim() == 1) != matches!(disc.quadrature, QuadratureSpec::GaussLegendre(_)) {
        return invalid(format!(
            "{id} needs a {} quadrature",
            if id.dim() == 1 { "slab" } else { "sphere" }
        ));
    }
    let mesh_spec = match id {
        ProblemId::TwoMaterial => MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0, 11.0],
            cell_sizes: disc.slab_dx.to_vec(),
        },
        ProblemId::VariableScattering | ProblemId::PinCell => MeshSpec::Rectangle {
            nx: disc.nx,
            ny: disc.nx,
            x: [-1.0, 1.0],
            y: [-1.0, 1.0],
        },
        ProblemId::Lattice => MeshSpec::Rectangle {
            nx: disc.nx,
            ny: disc.nx,
            x: [0.0, 5.0],
            y: [0.0, 5.0],
        },
    };
    let space = DGSpace::new(build_mesh(&mesh_spec)?, disc.degree)?;
    let (coefficients, source, inflow): (
        Vec<CoefficientTerm>,
        Box<dyn Fn([f64; 2]) -> f64>,
        Inflow,
    ) = match id {
        ProblemId::TwoMaterial => (
            vec![
                term(
                    "absorber",
                    TermKind::Absorption,
                    component_theta(0),
                    indicator_mass(&space, &|p| p[0] < 1.0),
                ),
                term(
                    "scatterer",
                    TermKind::Scattering,
                    component_theta(1),
                    indicator_mass(&space, &|p| p[0] > 1.0),
                ),
            ],
            Box::new(|_| 0.0),
            Inflow::Sides([5.0, 0.0, 0.0, 0.0]),
        ),
        ProblemId::VariableScattering => (
            vec![
                term(
                    "profile",
                    TermKind::Scattering,
                    component_theta(0),
                    assemble_coefficient_mass(&space, &scattering_profile),
                ),
                term(
                    "background",
                    TermKind::Scattering,
                    constant_theta(1.0),
                    assemble_coefficient_mass(&space, &|_| 0.1),
                ),
            ],
            Box::new(|p| 10.0 / PI * (-100.0 * (p[0] * p[0] + p[1] * p[1])).exp()),
            Inflow::Zero,
        ),
        ProblemId::PinCell => {
            let inner = |p: [f64; 2]| p[0].abs() <= 0.5 && p[1].abs() <= 0.5;
            (
                vec![
                    term(
                        "pin absorption",
                        TermKind::Absorption,
                        component_theta(0),
                        indicator_mass(&space, &inner),
                    ),
                    term(
                        "pin scattering",
                        TermKind::Scattering,
                        component_theta(1),
                        indicator_mass(&space, &inner),
                    ),
                    term(
                        "moderator",
                        TermKind::Scattering,
                        constant_theta(100.0),
                        indicator_mass(&space, &|p| !inner(p)),
                    ),
                ],
                Box::new(|p| (-100.0 * (p[0] * p[0] + p[1] * p[1])).exp()),
                Inflow::Zero,
            )
        }
        ProblemId::Lattice => (
            vec![
                term(
                    "absorbers",
                    TermKind::Absorption,
                    component_theta(0),
                    indicator_mass(&space, &in_lattice_absorber),
                ),
                term(
                    "scatterers",
                    TermKind::Scattering,
                    component_theta(1),
                    indicator_mass(&space, &|p| !in_lattice_absorber(p)),
                ),
            ],
            Box::new(|p| if in_lattice_source(p) { 1.0 } else { 0.0 }),
            Inflow::Zero,
        ),
    };
    let q = space.project(&*source);
    let rhs = stacked_rhs(&space, &quad, &q, &inflow);
    let affine = AffineDecomposition {
        params: id.parameter_box(),
        coefficients,
        rhs: vec![RhsTerm {
            label: "source".into(),
            theta: constant_theta(1.0),
            vector: rhs,
        }],
    };
    ProblemFamily::new(id.as_str(), space, quad, affine)
}

/// Instantiates a benchmark at `mu`.
pub fn make_problem(family: &Arc<ProblemFamily>, mu: &[f64]) -> Result<DiscreteProblem> {
    if mu.len() != family.affine().params.dim() {
        return invalid(format!(
            "{} expects {} parameters, got {}",
            family.name,
            family.affine().params.dim(),
            mu.len()
        ));
    }
    family.instantiate(mu)
}
