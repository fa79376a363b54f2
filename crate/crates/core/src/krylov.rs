//! Flexible GMRES on the density system `(I - K Sigma_s) rho = b~` with a
//! per-iteration right preconditioner.

use crate::discretization::DiscreteProblem;
use crate::dsa::DsaCorrection;
use crate::error::{invalid, Result};
use crate::linalg::{axpy, dot, norm2, norm_inf, sub};
use crate::transport::{apply_lhs_tilde, rhs_tilde, DensityField, IterationRecord, SolveReport};

/// `H_{l+1,l} <= BREAKDOWN_TOL ||b~||` is treated as lucky breakdown.
pub const BREAKDOWN_TOL: f64 = 1e-14;

/// Right preconditioner `M_l^{-1}` used at Arnoldi step `l >= 1`.
pub trait PreconditionerSchedule {
    fn name(&self) -> String;

    fn apply(&mut self, problem: &DiscreteProblem, step: usize, q: &[f64]) -> Result<DensityField>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl PreconditionerSchedule for IdentityPreconditioner {
    fn name(&self) -> String {
        "identity".into()
    }

    fn apply(&mut self, _: &DiscreteProblem, _: usize, q: &[f64]) -> Result<DensityField> {
        Ok(q.to_vec())
    }
}

/// Constant `M_DSA^{-1} = I + C_DSA^{-1} Sigma_s`.
pub struct DsaPreconditioner {
    pub dsa: DsaCorrection,
}

impl DsaPreconditioner {
    pub fn new(problem: &DiscreteProblem) -> Result<Self> {
        Ok(Self {
            dsa: DsaCorrection::new(problem)?,
        })
    }
}

impl PreconditionerSchedule for DsaPreconditioner {
    fn name(&self) -> String {
        "dsa".into()
    }

    fn apply(&mut self, problem: &DiscreteProblem, _: usize, q: &[f64]) -> Result<DensityField> {
        let d = self.dsa.apply(problem, q)?;
        Ok(q.iter().zip(&d).map(|(a, b)| a + b).collect())
    }
}

/// Applies the stored rotations to a new Hessenberg column and appends one more.
/// Returns the updated least-squares residual `|g_{m+1}|`.
fn givens_update(col: &mut [f64], rot: &mut Vec<(f64, f64)>, g: &mut Vec<f64>) -> f64 {
    let m = rot.len();
    for (i, &(c, s)) in rot.iter().enumerate() {
        let (a, b) = (col[i], col[i + 1]);
        col[i] = c * a + s * b;
        col[i + 1] = -s * a + c * b;
    }
    let (a, b) = (col[m], col[m + 1]);
    let r = a.hypot(b);
    let (c, s) = if r == 0.0 { (1.0, 0.0) } else { (a / r, b / r) };
    col[m] = r;
    col[m + 1] = 0.0;
    rot.push((c, s));
    let gm = g[m];
    g[m] = c * gm;
    g.push(-s * gm);
    g[m + 1].abs()
}

fn back_substitute(r: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let m = r.len();
    let mut y = vec![0.0; m];
    for i in (0..m).rev() {
        let mut s = g[i];
        for k in i + 1..m {
            s -= r[k][i] * y[k];
        }
        y[i] = s / r[i][i];
    }
    y
}

/// Least-squares solution of `min ||beta e_1 - H y||` for a row-major `(m+1) x m`
/// Hessenberg matrix, with the residual norm.
pub fn hessenberg_lsq(h: &[Vec<f64>], beta: f64) -> Result<(Vec<f64>, f64)> {
    let m = h.first().map_or(0, |r| r.len());
    if m == 0 || h.len() != m + 1 || h.iter().any(|r| r.len() != m) {
        return invalid("Hessenberg matrix must be (m+1) x m with m >= 1");
    }
    let mut rot = Vec::new();
    let mut g = vec![beta];
    let mut cols = Vec::with_capacity(m);
    let mut res = beta.abs();
    for l in 0..m {
        let mut col: Vec<f64> = (0..l + 2).map(|i| h[i][l]).collect();
        res = givens_update(&mut col, &mut rot, &mut g);
        cols.push(col);
    }
    Ok((back_substitute(&cols, &g), res))
}

/// Flexible Arnoldi process state.
#[derive(Debug, Clone)]
pub struct KrylovState {
    pub rho0: DensityField,
    pub b_norm: f64,
    pub beta: f64,
    /// Orthonormal vectors `q_1 ..= q_{m+1}`.
    pub q: Vec<DensityField>,
    /// Preconditioned vectors `z_1 ..= z_m`.
    pub z: Vec<DensityField>,
    /// Column `l` holds `H_{1..=l+2, l+1}` (zero based `l`).
    pub h: Vec<Vec<f64>>,
    rot: Vec<(f64, f64)>,
    g: Vec<f64>,
    rfac: Vec<Vec<f64>>,
    pub breakdown: bool,
    pub sweeps: usize,
}

impl KrylovState {
    /// Forms `b~` and `r_0 = b~ - A~ rho0`; one sweep, plus one for a nonzero guess.
    pub fn start(problem: &DiscreteProblem, rho0: Option<&[f64]>) -> Result<Self> {
        let n = problem.ndof();
        let b = rhs_tilde(problem);
        let mut sweeps = 1;
        let (rho0, r0) = match rho0 {
            Some(r) if r.len() != n => return invalid("initial guess has wrong length"),
            Some(r) => {
                sweeps += 1;
                (r.to_vec(), sub(&b, &apply_lhs_tilde(problem, r)))
            }
            None => (vec![0.0; n], b.clone()),
        };
        let beta = norm2(&r0);
        let q1 = if beta > 0.0 {
            r0.iter().map(|v| v / beta).collect()
        } else {
            vec![0.0; n]
        };
        Ok(Self {
            rho0,
            b_norm: norm2(&b),
            beta,
            q: vec![q1],
            z: Vec::new(),
            h: Vec::new(),
            rot: Vec::new(),
            g: vec![beta],
            rfac: Vec::new(),
            breakdown: false,
            sweeps,
        })
    }

    pub fn steps(&self) -> usize {
        self.z.len()
    }

    /// The vector to precondition next.
    pub fn current_q(&self) -> &[f64] {
        &self.q[self.z.len()]
    }

    /// Current least-squares residual.
    pub fn residual(&self) -> f64 {
        self.g.last().map_or(0.0, |g| g.abs())
    }

    /// `H_{i,l}` with one-based indices.
    pub fn h_entry(&self, i: usize, l: usize) -> f64 {
        self.h[l - 1].get(i - 1).copied().unwrap_or(0.0)
    }

    /// One flexible Arnoldi step with `z = M^{-1} q_current`; one sweep.
    pub fn step(&mut self, problem: &DiscreteProblem, z: DensityField) -> Result<f64> {
        if self.breakdown {
            return invalid("Arnoldi process already broke down");
        }
        if z.len() != problem.ndof() {
            return invalid("preconditioned vector has wrong length");
        }
        let mut w = apply_lhs_tilde(problem, &z);
        self.sweeps += 1;
        let m = self.q.len();
        let mut col = vec![0.0; m + 1];
        // modified Gram-Schmidt, always applied twice
        for _pass in 0..2 {
            for (i, qi) in self.q.iter().enumerate() {
                let hij = dot(&w, qi);
                col[i] += hij;
                axpy(-hij, qi, &mut w);
            }
        }
        let hn = norm2(&w);
        col[m] = hn;
        self.h.push(col.clone());
        self.z.push(z);
        if hn <= BREAKDOWN_TOL * self.b_norm.max(f64::MIN_POSITIVE) {
            self.breakdown = true;
            self.q.push(vec![0.0; w.len()]);
        } else {
            self.q.push(w.iter().map(|v| v / hn).collect());
        }
        let res = givens_update(&mut col, &mut self.rot, &mut self.g);
        self.rfac.push(col);
        Ok(res)
    }

    /// `rho0 + Z y*`
    pub fn solution(&self) -> DensityField {
        let mut rho = self.rho0.clone();
        if self.z.is_empty() {
            return rho;
        }
        let y = back_substitute(&self.rfac, &self.g);
        for (zk, yk) in self.z.iter().zip(&y) {
            axpy(*yk, zk, &mut rho);
        }
        rho
    }

    /// Dense `(m+1) x m` Hessenberg matrix, row-major.
    pub fn hessenberg(&self) -> Vec<Vec<f64>> {
        let m = self.h.len();
        (0..=m)
            .map(|i| {
                (0..m)
                    .map(|l| self.h[l].get(i).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Compare the least-squares residual against `tol * ||r_0||` instead of `tol`.
    pub relative: bool,
    pub record_trajectory: bool,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 50,
            relative: false,
            record_trajectory: false,
        }
    }
}

/// Flexible GMRES; returns the report and the final Arnoldi state.
pub fn fgmres_with_state(
    problem: &DiscreteProblem,
    schedule: &mut dyn PreconditionerSchedule,
    rho0: Option<&[f64]>,
    opts: &GmresOptions,
) -> Result<(SolveReport, KrylovState)> {
    if !(opts.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut st = KrylovState::start(problem, rho0)?;
    let target = if opts.relative {
        opts.tol * st.beta
    } else {
        opts.tol
    };
    let mut report = SolveReport::default();
    let mut converged = st.beta < target;
    while !converged && !st.breakdown && st.steps() < opts.max_iter {
        let l = st.steps() + 1;
        let q = st.current_q().to_vec();
        let z = schedule.apply(problem, l, &q)?;
        let res = st.step(problem, z)?;
        report.history.push(IterationRecord {
            iter: l,
            cumulative_sweeps: st.sweeps,
            increment_inf: None,
            lsq_residual: Some(res),
        });
        if opts.record_trajectory {
            report.iterates.push(st.solution());
        }
        converged = res < target;
    }
    report.converged = converged || st.breakdown;
    report.iterations = st.steps();
    report.sweep_count = st.sweeps;
    report.final_density = st.solution();
    Ok((report, st))
}

pub fn fgmres(
    problem: &DiscreteProblem,
    schedule: &mut dyn PreconditionerSchedule,
    rho0: Option<&[f64]>,
    opts: &GmresOptions,
) -> Result<SolveReport> {
    fgmres_with_state(problem, schedule, rho0, opts).map(|(r, _)| r)
}

/// `max_ij |(A~ Z - Q H)_ij|`, the flexible Arnoldi relation defect; `m` sweeps.
pub fn arnoldi_defect(problem: &DiscreteProblem, st: &KrylovState) -> f64 {
    let mut worst = 0.0_f64;
    for (l, z) in st.z.iter().enumerate() {
        let mut r = apply_lhs_tilde(problem, z);
        for (i, hil) in st.h[l].iter().enumerate() {
            axpy(-hil, &st.q[i], &mut r);
        }
        worst = worst.max(norm_inf(&r));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{
        build_mesh, gauss_legendre, DGSpace, Inflow, MeshSpec, ProblemFamily,
    };
    use crate::oracle::dense_density_solution;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn slab(ss: f64) -> DiscreteProblem {
        let mesh = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0],
            cell_sizes: vec![0.125],
        })
        .unwrap();
        ProblemFamily::from_fields(
            "slab",
            DGSpace::new(mesh, 1).unwrap(),
            gauss_legendre(4).unwrap(),
            &|x| 0.2 + x[0],
            &|_| ss,
            &|_| 1.0,
            &Inflow::Sides([1.0, 0.0, 0.0, 0.0]),
        )
        .unwrap()
        .instantiate(&[])
        .unwrap()
    }

    #[test]
    fn two_by_one_least_squares() {
        let (y, res) = hessenberg_lsq(&[vec![3.0], vec![4.0]], 2.0).unwrap();
        assert!((y[0] - 6.0 / 25.0).abs() < 1e-15);
        assert!((res - 8.0 / 5.0).abs() < 1e-15);
        assert!(hessenberg_lsq(&[], 1.0).is_err());
    }

    #[test]
    fn lsq_matches_dense_qr_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = 20;
        let h: Vec<Vec<f64>> = (0..=m)
            .map(|i| {
                (0..m)
                    .map(|l| {
                        if i <= l + 1 {
                            rng.random_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let mut prev = f64::INFINITY;
        for k in 1..=m {
            let sub: Vec<Vec<f64>> = h[..=k].iter().map(|r| r[..k].to_vec()).collect();
            let (y, res) = hessenberg_lsq(&sub, 1.5).unwrap();
            let a = DMatrix::from_fn(k + 1, k, |i, l| sub[i][l]);
            let mut e = DVector::zeros(k + 1);
            e[0] = 1.5;
            let qr = a.clone().qr();
            let yq = qr
                .r()
                .solve_upper_triangular(&(qr.q().transpose() * &e))
                .unwrap();
            for i in 0..k {
                assert!((y[i] - yq[i]).abs() < 1e-12 * (1.0 + yq[i].abs()));
            }
            assert!(res <= prev + 1e-15);
            prev = res;
        }
    }

    #[test]
    fn no_scattering_converges_in_one_step() {
        let p = slab(0.0);
        for pre in [&mut IdentityPreconditioner as &mut dyn PreconditionerSchedule] {
            let r = fgmres(&p, pre, None, &GmresOptions::default()).unwrap();
            assert!(r.converged && r.iterations == 1);
            assert_eq!(r.sweep_count, 2);
        }
    }

    #[test]
    fn identity_preconditioner_matches_dense_solve() {
        let p = slab(4.0);
        let (r, st) = fgmres_with_state(
            &p,
            &mut IdentityPreconditioner,
            None,
            &GmresOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        let rho = dense_density_solution(&p).unwrap();
        assert!(norm_inf(&sub(&r.final_density, &rho)) < 1e-10);
        assert!(arnoldi_defect(&p, &st) < 1e-9);
        assert_eq!(r.sweep_count, r.iterations + 1);
        let qs = &st.q[..st.q.len() - 1];
        for i in 0..qs.len() {
            for k in 0..qs.len() {
                let e = dot(&qs[i], &qs[k]) - if i == k { 1.0 } else { 0.0 };
                assert!(e.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nonzero_guess_costs_one_more_sweep() {
        let p = slab(4.0);
        let guess = vec![0.5; p.ndof()];
        let mut pre = DsaPreconditioner::new(&p).unwrap();
        let r = fgmres(&p, &mut pre, Some(&guess), &GmresOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.sweep_count, r.iterations + 2);
        let hist: Vec<f64> = r.residual_history();
        assert!(hist.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        let rho = dense_density_solution(&p).unwrap();
        assert!(norm_inf(&sub(&r.final_density, &rho)) < 1e-10);
    }

    #[test]
    fn constant_preconditioner_matches_right_preconditioned_gmres() {
        // right-preconditioned GMRES with M^{-1}: the iterates minimize ||b~ - A~ M^{-1} u|| over
        // the Krylov space of A~ M^{-1}; FGMRES with a constant schedule must agree
        let p = slab(4.0);
        let mut pre = DsaPreconditioner::new(&p).unwrap();
        let opts = GmresOptions {
            tol: 1e-13,
            record_trajectory: true,
            ..Default::default()
        };
        let (r, _) = fgmres_with_state(&p, &mut pre, None, &opts).unwrap();
        let (a, b) = crate::oracle::dense_density_system(&p).unwrap();
        let n = p.ndof();
        let mut minv = DMatrix::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = pre.apply(&p, 1, &e).unwrap();
            for i in 0..n {
                minv[(i, c)] = col[i];
            }
        }
        let am = &a * &minv;
        let b = DVector::from_vec(b);
        let mut basis: Vec<DVector<f64>> = vec![b.clone()];
        for (k, it) in r.iterates.iter().enumerate() {
            let kdim = k + 1;
            let kmat = DMatrix::from_columns(&basis[..kdim]);
            let lhs = &am * &kmat;
            let coef = lhs.svd(true, true).solve(&b, 1e-14).unwrap();
            let u = &kmat * coef;
            let rho = &minv * u;
            for i in 0..n {
                assert!(
                    (rho[i] - it[i]).abs() < 1e-10 * (1.0 + rho[i].abs()),
                    "iter {kdim}"
                );
            }
            let next = &am * &basis[kdim - 1];
            basis.push(next);
        }
    }
}
