//! Diffusion synthetic acceleration: a low-order solve for the density correction,
//! either interior-penalty DG diffusion or the consistent P1 moment system.

use std::collections::BTreeMap;

use crate::discretization::space::eval_orthonormal;
use crate::discretization::{DiscreteProblem, Side};

use crate::error::{invalid, Error, Result};
use crate::linalg::{BandedCholesky, BandedLu};
use crate::transport::{CorrectionStrategy, DensityField};

/// Lower bound on the total cross section in the diffusion coefficient.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Penalty constant `c` in `eta = c (K+1)^2 D / h`.
pub const PENALTY_CONSTANT: f64 = 4.0;

/// Boundary treatment of the diffusion correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsaBoundary {
    /// Penalty-enforced `u = 0`.
    Dirichlet,
    /// Vacuum (Marshak) condition `D du/dn + u/2 = 0`.
    Vacuum,
    /// Halved boundary flux terms with penalty at least `1/4`.
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsaOptions {
    pub penalty: f64,
    /// Raise the interior penalty to at least `1/4` (modified interior penalty).
    pub penalty_floor: bool,
    pub boundary: DsaBoundary,
}

impl Default for DsaOptions {
    fn default() -> Self {
        Self {
            penalty: PENALTY_CONSTANT,
            penalty_floor: false,
            boundary: DsaBoundary::Dirichlet,
        }
    }
}

/// Discretization used for the low-order correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DsaScheme {
    /// Interior-penalty DG diffusion for the density alone.
    InteriorPenalty(DsaOptions),
    /// First angular moments of the upwind transport discretization itself
    /// (density and current unknowns), consistent with the sweep operator.
    ConsistentP1,
}

impl DsaScheme {
    /// Consistent P1 in slab geometry, interior penalty with vacuum boundaries otherwise.
    pub fn default_for(problem: &DiscreteProblem) -> Self {
        if problem.space().dim() == 1 {
            DsaScheme::ConsistentP1
        } else {
            DsaScheme::InteriorPenalty(DsaOptions {
                penalty: PENALTY_CONSTANT,
                penalty_floor: true,
                boundary: DsaBoundary::Vacuum,
            })
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(BandedCholesky),
    /// LU of the moment system with `ncomp` unknown blocks per cell.
    Lu {
        lu: BandedLu,
        ncomp: usize,
        nloc: usize,
    },
}

/// Symmetric interior-penalty discretization of
/// `-div(D_v / sigma_d grad u) + sigma_a u` with homogeneous Dirichlet data.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    n: usize,
    eddington: [f64; 3],
    coefficients: Vec<[f64; 2]>,
    triplets: Vec<(usize, usize, f64)>,
    factor: Factor,
}

impl DiffusionOperator {
    /// Length of the density vectors it acts on.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Size of the assembled system (larger than `dim` for the moment system).
    pub fn system_dim(&self) -> usize {
        match &self.factor {
            Factor::Cholesky(f) => f.dim(),
            Factor::Lu { lu, .. } => lu.dim(),
        }
    }

    pub fn eddington(&self) -> [f64; 3] {
        self.eddington
    }

    /// Per-cell diffusion coefficients along x and y.
    pub fn coefficients(&self) -> &[[f64; 2]] {
        &self.coefficients
    }

    /// Assembled entries; duplicates are to be summed.
    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.triplets
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.system_dim();
        let mut a = vec![vec![0.0; n]; n];
        for &(i, j, v) in &self.triplets {
            a[i][j] += v;
        }
        a
    }

    /// Solves for the density correction given the density-space source.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.factor {
            Factor::Cholesky(f) => f.solve(rhs),
            Factor::Lu { lu, ncomp, nloc } => {
                let (ncomp, nloc) = (*ncomp, *nloc);
                let mut full = vec![0.0; lu.dim()];
                for (c, chunk) in rhs.chunks(nloc).enumerate() {
                    full[c * ncomp * nloc..c * ncomp * nloc + nloc].copy_from_slice(chunk);
                }
                let x = lu.solve(&full);
                let mut out = Vec::with_capacity(self.n);
                for c in 0..self.n / nloc {
                    out.extend_from_slice(&x[c * ncomp * nloc..c * ncomp * nloc + nloc]);
                }
                out
            }
        }
    }
}

struct Trace {
    cell: usize,
    /// basis values on the face, per normal-axis degree
    val: Vec<f64>,
    /// normal derivative (along the face normal of the minus side) per normal-axis degree
    dn: Vec<f64>,
    coef: f64,
    h: f64,
}

/// Assembles the default correction operator for `problem`.
pub fn assemble_dsa(problem: &DiscreteProblem) -> Result<DiffusionOperator> {
    assemble_dsa_scheme(problem, DsaScheme::default_for(problem))
}

pub fn assemble_dsa_scheme(
    problem: &DiscreteProblem,
    scheme: DsaScheme,
) -> Result<DiffusionOperator> {
    match scheme {
        DsaScheme::InteriorPenalty(opts) => assemble_dsa_with(problem, &opts),
        DsaScheme::ConsistentP1 => assemble_consistent_p1(problem),
    }
}

fn diffusion_coefficients(problem: &DiscreteProblem) -> Vec<[f64; 2]> {
    let eddington = problem.quadrature().eddington_diagonal();
    problem
        .sigma_t
        .cell_means()
        .iter()
        .map(|s| {
            let d = s.max(SIGMA_FLOOR);
            [eddington[0] / d, eddington[1] / d]
        })
        .collect()
}

/// Moment system from the ansatz `df_j = rho + sum_a v_{j,a} J_a / D_a` inserted in the
/// discrete correction equation and tested with `w_j` and `w_j v_{j,a}`.
fn assemble_consistent_p1(problem: &DiscreteProblem) -> Result<DiffusionOperator> {
    let space = problem.space();
    let dim = space.dim();
    let nloc = space.nloc();
    let ncomp = dim + 1;
    let bs = ncomp * nloc;
    let ncells = space.mesh().num_cells();
    let quad = problem.quadrature();
    let eddington = quad.eddington_diagonal();
    if eddington[..dim].iter().any(|d| *d <= 0.0) {
        return Err(Error::NumericalFailure(
            "degenerate angular second moments".into(),
        ));
    }
    let streaming = problem.family().streaming();
    let mut blocks: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for j in 0..quad.len() {
        let w = quad.weight(j);
        let v = quad.direction(j);
        // g[0] = 1, g[a] = v_a ; test weights t[k], trial weights s[l]
        let mut g = vec![1.0];
        g.extend_from_slice(&v[..dim]);
        let trial: Vec<f64> = (0..ncomp)
            .map(|l| if l == 0 { 1.0 } else { g[l] / eddington[l - 1] })
            .collect();
        let d = streaming.direction(j);
        let mut add = |rc: usize, cc: usize, blk: &[f64]| {
            let e = blocks.entry((rc, cc)).or_insert_with(|| vec![0.0; bs * bs]);
            for k in 0..ncomp {
                for l in 0..ncomp {
                    let f = w * g[k] * trial[l];
                    if f == 0.0 {
                        continue;
                    }
                    for m in 0..nloc {
                        for n in 0..nloc {
                            e[(k * nloc + m) * bs + l * nloc + n] += f * blk[m * nloc + n];
                        }
                    }
                }
            }
        };
        for c in 0..ncells {
            add(c, c, d.diag_block(c, nloc));
            for (nb, blk) in d.couplings(c) {
                add(c, nb, blk);
            }
        }
    }
    for c in 0..ncells {
        let e = blocks.entry((c, c)).or_insert_with(|| vec![0.0; bs * bs]);
        let (sa, st) = (problem.sigma_a.block(c), problem.sigma_t.block(c));
        for k in 0..ncomp {
            let src = if k == 0 { sa } else { st };
            for m in 0..nloc {
                for n in 0..nloc {
                    e[(k * nloc + m) * bs + k * nloc + n] += src[m * nloc + n];
                }
            }
        }
    }
    let mut trip = Vec::new();
    for ((rc, cc), blk) in &blocks {
        for r in 0..bs {
            for q in 0..bs {
                let v = blk[r * bs + q];
                if v != 0.0 {
                    trip.push((rc * bs + r, cc * bs + q, v));
                }
            }
        }
    }
    let n = ncells * bs;
    let kl = trip
        .iter()
        .map(|&(i, j, _)| i.saturating_sub(j))
        .max()
        .unwrap_or(0);
    let ku = trip
        .iter()
        .map(|&(i, j, _)| j.saturating_sub(i))
        .max()
        .unwrap_or(0);
    let lu = BandedLu::factor(n, kl, ku, &trip)?;
    Ok(DiffusionOperator {
        n: space.ndof(),
        eddington,
        coefficients: diffusion_coefficients(problem),
        triplets: trip,
        factor: Factor::Lu { lu, ncomp, nloc },
    })
}

pub fn assemble_dsa_with(
    problem: &DiscreteProblem,
    opts: &DsaOptions,
) -> Result<DiffusionOperator> {
    let space = problem.space();
    let mesh = space.mesh();
    let nloc = space.nloc();
    let k = space.degree();
    let n1 = k + 1;
    let pairs = space.local_pairs();
    let eddington = problem.quadrature().eddington_diagonal();
    let coefficients = diffusion_coefficients(problem);

    // reference matrices
    let (gx, gw) = crate::discretization::quadrature::gauss_legendre_rule(k + 2);
    let mut grad = vec![vec![0.0; n1]; n1];
    for (x, w) in gx.iter().zip(&gw) {
        for a in 0..n1 {
            for b in 0..n1 {
                grad[a][b] += w * eval_orthonormal(a, *x).1 * eval_orthonormal(b, *x).1;
            }
        }
    }
    let end_val = |upper: bool| -> Vec<f64> {
        let x = if upper { 1.0 } else { -1.0 };
        (0..n1).map(|a| eval_orthonormal(a, x).0).collect()
    };
    let end_der = |upper: bool| -> Vec<f64> {
        let x = if upper { 1.0 } else { -1.0 };
        (0..n1).map(|a| eval_orthonormal(a, x).1).collect()
    };

    let mut trip = Vec::new();
    let dim = mesh.dim();
    for (c, cell) in mesh.cells().iter().enumerate() {
        let hx = cell.width(0);
        let hy = cell.width(1);
        let [dx, dy] = coefficients[c];
        let sa = problem.sigma_a.block(c);
        for (m, &(am, bm)) in pairs.iter().enumerate() {
            for (n, &(an, bn)) in pairs.iter().enumerate() {
                let mut v = sa[m * nloc + n];
                if bm == bn {
                    v += dx * (2.0 / hx).powi(2) * grad[am][an];
                }
                if dim == 2 && am == an {
                    v += dy * (2.0 / hy).powi(2) * grad[bm][bn];
                }
                if v != 0.0 {
                    trip.push((c * nloc + m, c * nloc + n, v));
                }
            }
        }
    }

    let penalty = opts.penalty * (n1 * n1) as f64;
    let floor = if opts.penalty_floor { 0.25 } else { 0.0 };
    let trace = |c: usize, side: Side, normal_sign: f64| -> Trace {
        let cell = mesh.cell(c);
        let axis = side.axis();
        let h = cell.width(axis);
        let upper = matches!(side, Side::Right | Side::Top);
        let s = (2.0 / h).sqrt();
        Trace {
            cell: c,
            val: end_val(upper).iter().map(|v| s * v).collect(),
            dn: end_der(upper)
                .iter()
                .map(|v| normal_sign * s * (2.0 / h) * v)
                .collect(),
            coef: coefficients[c][axis],
            h,
        }
    };

    for edge in mesh.edges() {
        let axis = edge.side.axis();
        // tangential degrees pair with equal index; normal degree is the face-axis index
        let split = |m: usize| -> (usize, usize) {
            let (a, b) = pairs[m];
            if axis == 0 {
                (a, b)
            } else {
                (b, a)
            }
        };
        let sign = edge.normal[axis];
        match edge.neighbor {
            Some(nb) => {
                let minus = trace(edge.owner, edge.side, sign);
                let opp = match edge.side {
                    Side::Right => Side::Left,
                    Side::Top => Side::Bottom,
                    Side::Left => Side::Right,
                    Side::Bottom => Side::Top,
                };
                let plus = trace(nb, opp, sign);
                let eta = (penalty * 0.5 * (minus.coef / minus.h + plus.coef / plus.h)).max(floor);
                let sides = [(&minus, 1.0), (&plus, -1.0)];
                for &(ts, js) in &sides {
                    for &(tr, jr) in &sides {
                        for m in 0..nloc {
                            let (pm, qm) = split(m);
                            for n in 0..nloc {
                                let (pn, qn) = split(n);
                                if qm != qn {
                                    continue;
                                }
                                let v = -0.5 * tr.coef * tr.dn[pn] * js * ts.val[pm]
                                    - 0.5 * ts.coef * ts.dn[pm] * jr * tr.val[pn]
                                    + eta * js * jr * ts.val[pm] * tr.val[pn];
                                if v != 0.0 {
                                    trip.push((ts.cell * nloc + m, tr.cell * nloc + n, v));
                                }
                            }
                        }
                    }
                }
            }
            None => {
                let t = trace(edge.owner, edge.side, sign);
                if opts.boundary == DsaBoundary::Vacuum {
                    for m in 0..nloc {
                        let (pm, qm) = split(m);
                        for n in 0..nloc {
                            let (pn, qn) = split(n);
                            if qm == qn {
                                let v = 0.5 * t.val[pm] * t.val[pn];
                                trip.push((t.cell * nloc + m, t.cell * nloc + n, v));
                            }
                        }
                    }
                    continue;
                }
                let (eta, half) = if opts.boundary == DsaBoundary::Modified {
                    ((penalty * t.coef / t.h).max(0.25), 0.5)
                } else {
                    ((penalty * t.coef / t.h).max(floor), 1.0)
                };
                for m in 0..nloc {
                    let (pm, qm) = split(m);
                    for n in 0..nloc {
                        let (pn, qn) = split(n);
                        if qm != qn {
                            continue;
                        }
                        let v = -half * t.coef * (t.dn[pn] * t.val[pm] + t.dn[pm] * t.val[pn])
                            + eta * t.val[pm] * t.val[pn];
                        if v != 0.0 {
                            trip.push((t.cell * nloc + m, t.cell * nloc + n, v));
                        }
                    }
                }
            }
        }
    }
    let n = space.ndof();
    let bw = trip
        .iter()
        .map(|&(i, j, _)| i.abs_diff(j))
        .max()
        .unwrap_or(0);
    let factor = BandedCholesky::factor(n, bw, &trip)?;
    Ok(DiffusionOperator {
        n,
        eddington,
        coefficients,
        triplets: trip,
        factor: Factor::Cholesky(factor),
    })
}

/// `delta rho = C^{-1} Sigma_s r` for a density increment `r`.
pub fn dsa_correct(
    dsa: &DiffusionOperator,
    residual: &[f64],
    problem: &DiscreteProblem,
) -> Result<DensityField> {
    if residual.len() != dsa.dim() {
        return invalid("residual has wrong length");
    }
    Ok(dsa.solve(&problem.sigma_s.apply(residual)))
}

/// DSA correction strategy bound to one problem instance.
#[derive(Debug, Clone)]
pub struct DsaCorrection {
    op: DiffusionOperator,
}

impl DsaCorrection {
    pub fn new(problem: &DiscreteProblem) -> Result<Self> {
        Ok(Self {
            op: assemble_dsa(problem)?,
        })
    }

    pub fn with_scheme(problem: &DiscreteProblem, scheme: DsaScheme) -> Result<Self> {
        Ok(Self {
            op: assemble_dsa_scheme(problem, scheme)?,
        })
    }

    pub fn operator(&self) -> &DiffusionOperator {
        &self.op
    }

    /// Applies `C^{-1} Sigma_s q`.
    pub fn apply(&self, problem: &DiscreteProblem, q: &[f64]) -> Result<DensityField> {
        dsa_correct(&self.op, q, problem)
    }
}

impl CorrectionStrategy for DsaCorrection {
    fn name(&self) -> String {
        "dsa".into()
    }

    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        _: usize,
        increment: &[f64],
    ) -> Result<DensityField> {
        dsa_correct(&self.op, increment, problem)
    }
}
