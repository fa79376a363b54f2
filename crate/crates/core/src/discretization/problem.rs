//! Parametric problem families, their affine decomposition, and instantiated problems.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::assembly::{
    assemble_coefficient_mass, assemble_rhs, BlockDiagonal, Inflow, StreamingOperator,
};
use super::quadrature::AngularQuadrature;
use super::space::DGSpace;
use crate::error::{invalid, Error, Result};
use crate::linalg::{block_matvec, block_matvec_sub, small_inverse};

/// Scalar coefficient function of the parameter vector.
pub type ParamFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn constant_theta(c: f64) -> ParamFn {
    Arc::new(move |_| c)
}

pub fn component_theta(i: usize) -> ParamFn {
    Arc::new(move |mu| mu[i])
}

/// Whether a coefficient enters only the total cross section or both total and scattering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Absorption,
    Scattering,
}

#[derive(Clone)]
pub struct CoefficientTerm {
    pub label: String,
    pub kind: TermKind,
    pub theta: ParamFn,
    pub mass: BlockDiagonal,
}

#[derive(Clone)]
pub struct RhsTerm {
    pub label: String,
    pub theta: ParamFn,
    /// Full angular vector of length `N_h`.
    pub vector: Vec<f64>,
}

/// Axis-aligned parameter box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a <= b)) {
            return invalid("parameter box bounds are inconsistent");
        }
        Ok(Self { lower, upper })
    }

    pub fn empty() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        let tol = 1e-12;
        mu.len() == self.dim()
            && mu
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(m, (lo, hi))| {
                    *m >= lo - tol * lo.abs().max(1.0) && *m <= hi + tol * hi.abs().max(1.0)
                })
    }
}

/// Parameter-separable representation of the full system.
///
/// The operator is `A(mu) = D + sum_q theta_q(mu) A_q`, where an absorption term
/// acts as `I (x) M_q` and a scattering term as `x_j -> M_q (x_j - rho(x))`.
/// The right-hand side is `sum_p theta_p(mu) b_p`.
#[derive(Clone)]
pub struct AffineDecomposition {
    pub params: ParameterBox,
    pub coefficients: Vec<CoefficientTerm>,
    pub rhs: Vec<RhsTerm>,
}

impl fmt::Debug for AffineDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<_> = self
            .coefficients
            .iter()
            .map(|t| (&t.label, t.kind))
            .collect();
        f.debug_struct("AffineDecomposition")
            .field("params", &self.params)
            .field("coefficients", &labels)
            .field("rhs_terms", &self.rhs.len())
            .finish()
    }
}

/// Everything about a problem that does not depend on the parameter.
pub struct ProblemFamily {
    pub name: String,
    space: Arc<DGSpace>,
    quadrature: Arc<AngularQuadrature>,
    streaming: Arc<StreamingOperator>,
    affine: AffineDecomposition,
}

impl fmt::Debug for ProblemFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemFamily")
            .field("name", &self.name)
            .field("ndof", &self.space.ndof())
            .field("directions", &self.quadrature.len())
            .field("affine", &self.affine)
            .finish()
    }
}

impl ProblemFamily {
    pub fn new(
        name: impl Into<String>,
        space: DGSpace,
        quadrature: AngularQuadrature,
        affine: AffineDecomposition,
    ) -> Result<Arc<Self>> {
        let ndof = space.ndof();
        for t in &affine.coefficients {
            if t.mass.dim() != ndof || t.mass.nloc() != space.nloc() {
                return invalid(format!("coefficient term '{}' has wrong size", t.label));
            }
        }
        for t in &affine.rhs {
            if t.vector.len() != ndof * quadrature.len() {
                return invalid(format!("rhs term '{}' has wrong size", t.label));
            }
        }
        let streaming = StreamingOperator::assemble(&space, &quadrature);
        Ok(Arc::new(Self {
            name: name.into(),
            space: Arc::new(space),
            quadrature: Arc::new(quadrature),
            streaming: Arc::new(streaming),
            affine,
        }))
    }

    /// Single-instance family from pointwise cross sections, source and inflow data.
    pub fn from_fields(
        name: impl Into<String>,
        space: DGSpace,
        quadrature: AngularQuadrature,
        sigma_a: &dyn Fn([f64; 2]) -> f64,
        sigma_s: &dyn Fn([f64; 2]) -> f64,
        source: &dyn Fn([f64; 2]) -> f64,
        inflow: &Inflow,
    ) -> Result<Arc<Self>> {
        let q = space.project(source);
        let rhs = stacked_rhs(&space, &quadrature, &q, inflow);
        let affine = AffineDecomposition {
            params: ParameterBox::empty(),
            coefficients: vec![
                CoefficientTerm {
                    label: "absorption".into(),
                    kind: TermKind::Absorption,
                    theta: constant_theta(1.0),
                    mass: assemble_coefficient_mass(&space, sigma_a),
                },
                CoefficientTerm {
                    label: "scattering".into(),
                    kind: TermKind::Scattering,
                    theta: constant_theta(1.0),
                    mass: assemble_coefficient_mass(&space, sigma_s),
                },
            ],
            rhs: vec![RhsTerm {
                label: "source+inflow".into(),
                theta: constant_theta(1.0),
                vector: rhs,
            }],
        };
        Self::new(name, space, quadrature, affine)
    }

    pub fn space(&self) -> &DGSpace {
        &self.space
    }

    pub fn quadrature(&self) -> &AngularQuadrature {
        &self.quadrature
    }

    pub fn streaming(&self) -> &Arc<StreamingOperator> {
        &self.streaming
    }

    pub fn affine(&self) -> &AffineDecomposition {
        &self.affine
    }

    pub fn ndof(&self) -> usize {
        self.space.ndof()
    }

    pub fn num_directions(&self) -> usize {
        self.quadrature.len()
    }

    pub fn nh(&self) -> usize {
        self.ndof() * self.num_directions()
    }

    /// Number of affine operator terms, counting the streaming operator as term 0.
    pub fn num_operator_terms(&self) -> usize {
        1 + self.affine.coefficients.len()
    }

    pub fn operator_theta(&self, q: usize, mu: &[f64]) -> f64 {
        if q == 0 {
            1.0
        } else {
            (self.affine.coefficients[q - 1].theta)(mu)
        }
    }

    /// Applies the parameter-independent operator term `A_q` to a full angular vector.
    pub fn apply_operator_term(&self, q: usize, x: &[f64]) -> Vec<f64> {
        if q == 0 {
            return self.streaming.apply(x);
        }
        let term = &self.affine.coefficients[q - 1];
        let ndof = self.ndof();
        let nd = self.num_directions();
        match term.kind {
            TermKind::Absorption => {
                let mut y = vec![0.0; x.len()];
                for j in 0..nd {
                    term.mass.apply_into(
                        &x[j * ndof..(j + 1) * ndof],
                        &mut y[j * ndof..(j + 1) * ndof],
                    );
                }
                y
            }
            TermKind::Scattering => {
                let rho = density_of(&self.quadrature, x, ndof);
                let mut y = vec![0.0; x.len()];
                for j in 0..nd {
                    let d: Vec<f64> = x[j * ndof..(j + 1) * ndof]
                        .iter()
                        .zip(&rho)
                        .map(|(a, b)| a - b)
                        .collect();
                    term.mass.apply_into(&d, &mut y[j * ndof..(j + 1) * ndof]);
                }
                y
            }
        }
    }

    /// `sum_q theta_q(mu) A_q x`
    pub fn apply_affine(&self, mu: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for q in 0..self.num_operator_terms() {
            let th = self.operator_theta(q, mu);
            if th == 0.0 {
                continue;
            }
            let t = self.apply_operator_term(q, x);
            for (a, b) in y.iter_mut().zip(&t) {
                *a += th * b;
            }
        }
        y
    }

    pub fn rhs(&self, mu: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.nh()];
        for t in &self.affine.rhs {
            let th = (t.theta)(mu);
            for (a, v) in b.iter_mut().zip(&t.vector) {
                *a += th * v;
            }
        }
        b
    }

    /// Cross sections `(sigma_t, sigma_s, sigma_a)` at `mu`.
    pub fn cross_sections(&self, mu: &[f64]) -> (BlockDiagonal, BlockDiagonal, BlockDiagonal) {
        let (nc, nloc) = (self.space.mesh().num_cells(), self.space.nloc());
        let mut sa = BlockDiagonal::zeros(nc, nloc);
        let mut ss = BlockDiagonal::zeros(nc, nloc);
        for t in &self.affine.coefficients {
            let th = (t.theta)(mu);
            match t.kind {
                TermKind::Absorption => sa.add_scaled(th, &t.mass),
                TermKind::Scattering => ss.add_scaled(th, &t.mass),
            }
        }
        let mut st = sa.clone();
        st.add_scaled(1.0, &ss);
        (st, ss, sa)
    }

    /// Builds the problem at parameter `mu`, factorizing all local sweep blocks.
    pub fn instantiate(self: &Arc<Self>, mu: &[f64]) -> Result<DiscreteProblem> {
        if !self.affine.params.contains(mu) {
            return invalid(format!(
                "parameter {mu:?} outside [{:?}, {:?}]",
                self.affine.params.lower, self.affine.params.upper
            ));
        }
        let (sigma_t, sigma_s, sigma_a) = self.cross_sections(mu);
        for (name, s) in [("absorption", &sigma_a), ("scattering", &sigma_s)] {
            if s.cell_means().iter().any(|v| *v < -1e-14) {
                return invalid(format!("negative {name} cross section at {mu:?}"));
            }
        }
        let sweep = SweepOperator::new(self.streaming.clone(), &sigma_t)?;
        Ok(DiscreteProblem {
            family: self.clone(),
            mu: mu.to_vec(),
            rhs: self.rhs(mu),
            sigma_t,
            sigma_s,
            sigma_a,
            sweep,
        })
    }
}

/// Projected source repeated per direction plus each direction's inflow term.
pub fn stacked_rhs(
    space: &DGSpace,
    quadrature: &AngularQuadrature,
    source: &[f64],
    inflow: &Inflow,
) -> Vec<f64> {
    (0..quadrature.len())
        .flat_map(|j| assemble_rhs(space, quadrature, j, source, inflow))
        .collect()
}

/// `rho = sum_j w_j x_j`
pub fn density_of(quadrature: &AngularQuadrature, x: &[f64], ndof: usize) -> Vec<f64> {
    let mut rho = vec![0.0; ndof];
    for (j, w) in quadrature.weights().iter().enumerate() {
        for (r, v) in rho.iter_mut().zip(&x[j * ndof..(j + 1) * ndof]) {
            *r += w * v;
        }
    }
    rho
}

/// Cached per-cell inverses of `D_j + Sigma_t` for every direction.
#[derive(Debug, Clone)]
pub struct SweepOperator {
    streaming: Arc<StreamingOperator>,
    inverses: Vec<Vec<f64>>,
}

impl SweepOperator {
    pub fn new(streaming: Arc<StreamingOperator>, sigma_t: &BlockDiagonal) -> Result<Self> {
        let nloc = streaming.nloc();
        let inverses = (0..streaming.num_directions())
            .into_par_iter()
            .map(|j| {
                let d = streaming.direction(j);
                let nc = sigma_t.num_blocks();
                let mut inv = Vec::with_capacity(nc * nloc * nloc);
                let mut blk = vec![0.0; nloc * nloc];
                for c in 0..nc {
                    for ((b, s), t) in blk
                        .iter_mut()
                        .zip(d.diag_block(c, nloc))
                        .zip(sigma_t.block(c))
                    {
                        *b = s + t;
                    }
                    let local = small_inverse(&blk, nloc).map_err(|_| {
                        Error::NumericalFailure(format!(
                            "singular sweep block in cell {c}, direction {j}"
                        ))
                    })?;
                    inv.extend(local);
                }
                Ok(inv)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            streaming,
            inverses,
        })
    }

    pub fn num_directions(&self) -> usize {
        self.inverses.len()
    }

    /// Solves `(D_j + Sigma_t) x = rhs` by block forward substitution in upwind order.
    pub fn solve(&self, j: usize, rhs: &[f64]) -> Vec<f64> {
        let nloc = self.streaming.nloc();
        let d = self.streaming.direction(j);
        let inv = &self.inverses[j];
        let mut x = vec![0.0; rhs.len()];
        let mut tmp = vec![0.0; nloc];
        for &c in &d.order {
            tmp.copy_from_slice(&rhs[c * nloc..(c + 1) * nloc]);
            for (nb, blk) in d.couplings(c) {
                block_matvec_sub(blk, &x[nb * nloc..(nb + 1) * nloc], &mut tmp);
            }
            block_matvec(
                &inv[c * nloc * nloc..(c + 1) * nloc * nloc],
                &tmp,
                &mut x[c * nloc..(c + 1) * nloc],
            );
        }
        x
    }
}

/// A problem instance at a fixed parameter.
#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    family: Arc<ProblemFamily>,
    mu: Vec<f64>,
    pub sigma_t: BlockDiagonal,
    pub sigma_s: BlockDiagonal,
    pub sigma_a: BlockDiagonal,
    rhs: Vec<f64>,
    sweep: SweepOperator,
}

impl DiscreteProblem {
    pub fn family(&self) -> &Arc<ProblemFamily> {
        &self.family
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn space(&self) -> &DGSpace {
        self.family.space()
    }

    pub fn quadrature(&self) -> &AngularQuadrature {
        self.family.quadrature()
    }

    pub fn ndof(&self) -> usize {
        self.family.ndof()
    }

    pub fn num_directions(&self) -> usize {
        self.family.num_directions()
    }

    pub fn nh(&self) -> usize {
        self.family.nh()
    }

    /// `Q~_j` for direction `j`.
    pub fn rhs_direction(&self, j: usize) -> &[f64] {
        let n = self.ndof();
        &self.rhs[j * n..(j + 1) * n]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn sweep(&self) -> &SweepOperator {
        &self.sweep
    }

    /// Applies the full operator `A` directly from the instantiated cross sections.
    pub fn apply_full(&self, x: &[f64]) -> Vec<f64> {
        let ndof = self.ndof();
        let streaming = self.family.streaming();
        let rho = density_of(self.quadrature(), x, ndof);
        let srho = self.sigma_s.apply(&rho);
        let mut y = Vec::with_capacity(x.len());
        for j in 0..self.num_directions() {
            let xj = &x[j * ndof..(j + 1) * ndof];
            let mut yj = streaming.direction(j).apply(streaming.nloc(), xj);
            self.sigma_t.apply_add(xj, &mut yj);
            for (a, b) in yj.iter_mut().zip(&srho) {
                *a -= b;
            }
            y.extend(yj);
        }
        y
    }
}
