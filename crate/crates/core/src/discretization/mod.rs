//! Angular and spatial discretization and operator assembly.

pub mod assembly;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod space;

pub use assembly::{
    assemble_coefficient_mass, assemble_direction_blocks, assemble_inflow, assemble_rhs,
    cellwise_mass, indicator_mass, sweep_order, BlockDiagonal, DirectionBlocks, Inflow,
    StreamingOperator,
};
pub use mesh::{build_mesh, Cell, Edge, MeshSpec, Side, SpatialMesh};
pub use problem::{
    component_theta, constant_theta, density_of, stacked_rhs, AffineDecomposition, CoefficientTerm,
    DiscreteProblem, ParamFn, ParameterBox, ProblemFamily, RhsTerm, SweepOperator, TermKind,
};
pub use quadrature::{chebyshev_legendre, gauss_legendre, AngularQuadrature, QuadratureMode};
pub use space::{DGSpace, ReferenceBasis};
