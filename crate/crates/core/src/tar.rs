//! Trajectory-aware reduced-order corrections: offline level construction for
//! Source Iteration and flexible GMRES, the online schedules, and the ROMSAD baseline.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use crate::discretization::{DiscreteProblem, ProblemFamily};
use crate::dsa::DsaCorrection;
use crate::error::{invalid, Error, Result};
use crate::krylov::{fgmres, GmresOptions, KrylovState, PreconditionerSchedule};
use crate::linalg::{axpy, norm_inf, sub};
use crate::rom::{
    apply_rom_correction, rom_initial_guess, ReducedBasis, ReducedSystem, SnapshotMatrix,
};
use crate::transport::{
    si_step, source_iteration, sweep_isotropic, CorrectionStrategy, DensityField, SiOptions,
    SolveReport,
};

/// Converged full-order solution at one training parameter.
#[derive(Debug, Clone)]
pub struct TrainingSolution {
    pub mu: Vec<f64>,
    pub flux: Vec<f64>,
    pub density: DensityField,
    pub converged: bool,
    pub iterations: usize,
}

/// Training parameters with their converged solutions.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub family: Arc<ProblemFamily>,
    pub solutions: Vec<TrainingSolution>,
}

impl TrainingSet {
    /// Solves every training parameter with SI-DSA.
    pub fn compute(
        family: &Arc<ProblemFamily>,
        params: &[Vec<f64>],
        tol: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let opts = SiOptions {
            tol,
            max_iter,
            keep_flux: true,
            ..Default::default()
        };
        let solutions = params
            .par_iter()
            .map(|mu| {
                let p = family.instantiate(mu)?;
                let mut dsa = DsaCorrection::new(&p)?;
                let r = source_iteration(&p, &mut dsa, None, &opts)?;
                if !r.converged {
                    warn!("training solve at {mu:?} did not converge in {max_iter} iterations");
                }
                Ok(TrainingSolution {
                    mu: mu.clone(),
                    flux: r.final_flux.map(|f| f.into_values()).unwrap_or_default(),
                    density: r.final_density,
                    converged: r.converged,
                    iterations: r.iterations,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            family: family.clone(),
            solutions,
        })
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }

    /// Solution snapshot matrix `[f_mu1, f_mu2, ...]`.
    pub fn snapshots(&self) -> Result<SnapshotMatrix> {
        let mut s = SnapshotMatrix::new(self.family.nh());
        for t in &self.solutions {
            s.push(t.flux.clone(), &t.mu, 0)?;
        }
        Ok(s)
    }

    /// ROM for initial guesses built from the solution snapshots.
    pub fn ig_basis(&self, eps_pod: f64) -> Result<ReducedBasis> {
        ReducedBasis::build(&self.snapshots()?, eps_pod, &self.family)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TarMode {
    Si,
    Fgmres,
    /// Single basis from a fixed-preconditioner window (ROMSAD baseline).
    Romsad,
}

impl TarMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TarMode::Si => "si",
            TarMode::Fgmres => "fgmres",
            TarMode::Romsad => "romsad",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "si" => Ok(TarMode::Si),
            "fgmres" => Ok(TarMode::Fgmres),
            "romsad" => Ok(TarMode::Romsad),
            _ => Err(Error::Format(format!("unknown artifact mode '{s}'"))),
        }
    }
}

/// Offline ROMs: optional initial-guess basis plus one basis per aware level.
#[derive(Debug, Clone, PartialEq)]
pub struct TarArtifact {
    pub mode: TarMode,
    pub ig_basis: Option<ReducedBasis>,
    pub levels: Vec<ReducedBasis>,
    pub metadata: BTreeMap<String, String>,
}

impl TarArtifact {
    pub fn n_w(&self) -> usize {
        self.levels.len()
    }

    pub fn level_ranks(&self) -> Vec<usize> {
        self.levels.iter().map(|b| b.rank).collect()
    }

    /// Initial guess dictated by the artifact: the ROM guess if an IG basis is present.
    pub fn initial_guess(&self, problem: &DiscreteProblem) -> Result<Option<DensityField>> {
        match &self.ig_basis {
            Some(b) => rom_initial_guess(b, problem).map(Some),
            None => Ok(None),
        }
    }

    pub fn validate(&self, family: &ProblemFamily) -> Result<()> {
        if let Some(b) = &self.ig_basis {
            b.validate(family)?;
        }
        self.levels.iter().try_for_each(|b| b.validate(family))
    }
}

fn base_metadata(
    training: &TrainingSet,
    eps_pod: f64,
    n_w: usize,
    ig: bool,
) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("family".into(), training.family.name.clone());
    m.insert("eps_pod".into(), format!("{eps_pod:e}"));
    m.insert("n_w".into(), n_w.to_string());
    m.insert("training_size".into(), training.len().to_string());
    m.insert(
        "initial_guess".into(),
        if ig { "rom" } else { "zero" }.into(),
    );
    m
}

/// Density of the level correction `U_rho A_r^{-1} U_iso^T Sigma_s q`.
fn level_correction(
    basis: &ReducedBasis,
    problem: &DiscreteProblem,
    q: &[f64],
) -> Result<DensityField> {
    let sys = basis.reduced_system(problem.family(), problem.mu())?;
    apply_rom_correction(basis, &sys, &problem.sigma_s, q)
}

/// Per-parameter record of an offline trajectory.
#[derive(Debug, Clone, Default)]
pub struct OfflineTrace {
    /// `rho^(l,*) - rho^(l-1)` for `l = 1..=N_w`, per training parameter.
    pub increments: Vec<Vec<DensityField>>,
}

/// Trajectory-aware offline construction for Source Iteration.
pub fn tar_offline_si(
    training: &TrainingSet,
    ig_basis: Option<&ReducedBasis>,
    n_w: usize,
    eps_pod: f64,
) -> Result<(TarArtifact, OfflineTrace)> {
    let family = &training.family;
    let mut rho: Vec<DensityField> = training
        .solutions
        .par_iter()
        .map(|t| {
            let p = family.instantiate(&t.mu)?;
            match ig_basis {
                Some(b) => rom_initial_guess(b, &p),
                None => Ok(vec![0.0; family.ndof()]),
            }
        })
        .collect::<Result<_>>()
        .map_err(|e| Error::Offline(format!("initial guess: {e}")))?;
    let mut trace = OfflineTrace {
        increments: vec![Vec::new(); training.len()],
    };
    let mut levels = Vec::with_capacity(n_w);
    let mut meta = base_metadata(training, eps_pod, n_w, ig_basis.is_some());
    for l in 1..=n_w {
        let steps: Vec<(Vec<f64>, DensityField, DensityField)> = training
            .solutions
            .par_iter()
            .zip(&rho)
            .map(|(t, r)| {
                let p = family.instantiate(&t.mu)?;
                let (flux, star) = si_step(&p, r);
                Ok((sub(&t.flux, flux.values()), sub(&star, r), star))
            })
            .collect::<Result<_>>()?;
        let mut snaps = SnapshotMatrix::new(family.nh());
        for (t, (df, _, _)) in training.solutions.iter().zip(&steps) {
            snaps.push(df.clone(), &t.mu, l)?;
        }
        let basis = ReducedBasis::build(&snaps, eps_pod, family)?;
        info!("TAR-SI level {l}: rank {}", basis.rank);
        rho = training
            .solutions
            .par_iter()
            .zip(&steps)
            .map(|(t, (_, inc, star))| {
                let p = family.instantiate(&t.mu)?;
                let d = level_correction(&basis, &p, inc).map_err(|e| {
                    Error::Offline(format!("level {l} correction at {:?}: {e}", t.mu))
                })?;
                Ok(star.iter().zip(&d).map(|(a, b)| a + b).collect())
            })
            .collect::<Result<_>>()?;
        for (tr, (_, inc, _)) in trace.increments.iter_mut().zip(&steps) {
            tr.push(inc.clone());
        }
        meta.insert(format!("level{l}.rank"), basis.rank.to_string());
        meta.insert(
            format!("level{l}.provenance"),
            format!("SI trajectories corrected by levels 1..{}", l - 1),
        );
        levels.push(basis);
    }
    Ok((
        TarArtifact {
            mode: TarMode::Si,
            ig_basis: ig_basis.cloned(),
            levels,
            metadata: meta,
        },
        trace,
    ))
}

/// Correction schedule: level-`l` ROM for `l <= N_w`, DSA afterwards or after any ROM failure.
pub struct TarSiCorrection<'a> {
    levels: &'a [ReducedBasis],
    dsa: Option<DsaCorrection>,
    failed: bool,
}

impl<'a> TarSiCorrection<'a> {
    pub fn new(artifact: &'a TarArtifact) -> Self {
        Self {
            levels: &artifact.levels,
            dsa: None,
            failed: false,
        }
    }

    pub fn fell_back(&self) -> bool {
        self.failed
    }

    fn dsa(&mut self, problem: &DiscreteProblem, q: &[f64]) -> Result<DensityField> {
        if self.dsa.is_none() {
            self.dsa = Some(DsaCorrection::new(problem)?);
        }
        self.dsa
            .as_ref()
            .expect("assembled above")
            .apply(problem, q)
    }
}

impl CorrectionStrategy for TarSiCorrection<'_> {
    fn name(&self) -> String {
        format!("tar-{}", self.levels.len())
    }

    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        iteration: usize,
        increment: &[f64],
    ) -> Result<DensityField> {
        if !self.failed && iteration <= self.levels.len() {
            match level_correction(&self.levels[iteration - 1], problem, increment) {
                Ok(d) => return Ok(d),
                Err(e) => {
                    warn!("level {iteration} ROM correction failed ({e}); switching to DSA");
                    self.failed = true;
                }
            }
        }
        self.dsa(problem, increment)
    }
}

/// Online TAR Source Iteration.
pub fn tar_online_si(
    artifact: &TarArtifact,
    problem: &DiscreteProblem,
    opts: &SiOptions,
) -> Result<SolveReport> {
    if artifact.mode != TarMode::Si {
        return invalid("artifact was not built for Source Iteration");
    }
    artifact.validate(problem.family())?;
    let guess = artifact.initial_guess(problem)?;
    let mut c = TarSiCorrection::new(artifact);
    source_iteration(problem, &mut c, guess.as_deref(), opts)
}

/// Why no further `eta` vector can be formed.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaOutcome {
    Eta(DensityField),
    /// `||r_0|| = 0`.
    Converged,
    /// `H_{l,l-1} = 0`.
    Breakdown,
}

/// `eta^(l)` given the previous ones: `eta^(1) = (rho - rho0)/beta`,
/// `eta^(l) = (z^(l-1) - sum_{k<l} H_{k,l-1} eta^(k)) / H_{l,l-1}`.
pub fn next_eta(rho: &[f64], st: &KrylovState, previous: &[DensityField]) -> EtaOutcome {
    let l = previous.len() + 1;
    if l == 1 {
        if st.beta == 0.0 {
            return EtaOutcome::Converged;
        }
        return EtaOutcome::Eta(sub(rho, &st.rho0).iter().map(|v| v / st.beta).collect());
    }
    if st.z.len() < l - 1 {
        return EtaOutcome::Breakdown;
    }
    let hl = st.h_entry(l, l - 1);
    if hl == 0.0 || (st.breakdown && st.z.len() == l - 1) {
        return EtaOutcome::Breakdown;
    }
    let mut e = st.z[l - 2].clone();
    for (k, ek) in previous.iter().enumerate() {
        axpy(-st.h_entry(k + 1, l - 1), ek, &mut e);
    }
    EtaOutcome::Eta(e.iter().map(|v| v / hl).collect())
}

/// `eta^(1..=l)`, stopping early on convergence or breakdown.
pub fn compute_etas(
    rho: &[f64],
    st: &KrylovState,
    l: usize,
) -> (Vec<DensityField>, Option<EtaOutcome>) {
    let mut etas = Vec::with_capacity(l);
    while etas.len() < l {
        match next_eta(rho, st, &etas) {
            EtaOutcome::Eta(e) => etas.push(e),
            other => return (etas, Some(other)),
        }
    }
    (etas, None)
}

/// `q + C_ROM^{-1} Sigma_s q`
fn rom_preconditioned(
    basis: &ReducedBasis,
    problem: &DiscreteProblem,
    q: &[f64],
) -> Result<DensityField> {
    let d = level_correction(basis, problem, q)?;
    Ok(q.iter().zip(&d).map(|(a, b)| a + b).collect())
}

/// Trajectory-aware offline construction for flexible GMRES.
pub fn tar_offline_fgmres(
    training: &TrainingSet,
    ig_basis: Option<&ReducedBasis>,
    n_w: usize,
    eps_pod: f64,
) -> Result<TarArtifact> {
    let family = &training.family;
    struct Run {
        st: KrylovState,
        etas: Vec<DensityField>,
        active: bool,
    }
    let mut runs: Vec<Run> = training
        .solutions
        .par_iter()
        .map(|t| {
            let p = family.instantiate(&t.mu)?;
            let guess = match ig_basis {
                Some(b) => Some(rom_initial_guess(b, &p)?),
                None => None,
            };
            let st = KrylovState::start(&p, guess.as_deref())?;
            Ok(Run {
                active: st.beta > 0.0,
                st,
                etas: Vec::new(),
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| Error::Offline(format!("Krylov start: {e}")))?;
    let mut levels = Vec::new();
    let mut meta = base_metadata(training, eps_pod, n_w, ig_basis.is_some());
    meta.insert(
        "snapshot_source".into(),
        "eta vectors of the flexible Arnoldi process".into(),
    );
    for l in 1..=n_w {
        let cols: Vec<Option<Vec<f64>>> = runs
            .par_iter_mut()
            .zip(&training.solutions)
            .map(|(run, t)| {
                if !run.active {
                    return Ok(None);
                }
                match next_eta(&t.density, &run.st, &run.etas) {
                    EtaOutcome::Eta(e) => {
                        let p = family.instantiate(&t.mu)?;
                        let df = sweep_isotropic(&p, &p.sigma_s.apply(&e)).into_values();
                        run.etas.push(e);
                        Ok(Some(df))
                    }
                    _ => {
                        run.active = false;
                        Ok(None)
                    }
                }
            })
            .collect::<Result<_>>()?;
        let mut snaps = SnapshotMatrix::new(family.nh());
        for (t, c) in training.solutions.iter().zip(cols) {
            if let Some(c) = c {
                snaps.push(c, &t.mu, l)?;
            }
        }
        if snaps.is_empty() {
            warn!("all training Arnoldi processes ended before level {l}; truncating");
            break;
        }
        let basis = ReducedBasis::build(&snaps, eps_pod, family)?;
        info!(
            "FGMRES-TAR level {l}: rank {} from {} columns",
            basis.rank,
            snaps.len()
        );
        runs.par_iter_mut()
            .zip(&training.solutions)
            .filter(|(run, _)| run.active)
            .try_for_each(|(run, t)| -> Result<()> {
                let p = family.instantiate(&t.mu)?;
                let q = run.st.current_q().to_vec();
                let z = rom_preconditioned(&basis, &p, &q).map_err(|e| {
                    Error::Offline(format!("level {l} preconditioner at {:?}: {e}", t.mu))
                })?;
                run.st.step(&p, z)?;
                if run.st.breakdown {
                    run.active = false;
                }
                Ok(())
            })?;
        meta.insert(format!("level{l}.rank"), basis.rank.to_string());
        meta.insert(format!("level{l}.columns"), snaps.len().to_string());
        meta.insert(
            format!("level{l}.provenance"),
            format!("Arnoldi processes preconditioned by levels 1..{}", l - 1),
        );
        levels.push(basis);
    }
    meta.insert("n_w".into(), levels.len().to_string());
    Ok(TarArtifact {
        mode: TarMode::Fgmres,
        ig_basis: ig_basis.cloned(),
        levels,
        metadata: meta,
    })
}

/// `M_l^{-1} = I + C_ROM,l^{-1} Sigma_s` for `l <= N_w`, then `M_DSA^{-1}`.
pub struct PreconditionerSequence<'a> {
    levels: &'a [ReducedBasis],
    dsa: Option<DsaCorrection>,
    failed: bool,
}

pub fn build_preconditioner_schedule(artifact: &TarArtifact) -> PreconditionerSequence<'_> {
    PreconditionerSequence {
        levels: &artifact.levels,
        dsa: None,
        failed: false,
    }
}

impl PreconditionerSequence<'_> {
    pub fn fell_back(&self) -> bool {
        self.failed
    }
}

impl PreconditionerSchedule for PreconditionerSequence<'_> {
    fn name(&self) -> String {
        format!("fgmres-tar-{}", self.levels.len())
    }

    fn apply(&mut self, problem: &DiscreteProblem, step: usize, q: &[f64]) -> Result<DensityField> {
        if !self.failed && step <= self.levels.len() {
            match rom_preconditioned(&self.levels[step - 1], problem, q) {
                Ok(z) => return Ok(z),
                Err(e) => {
                    warn!("level {step} ROM preconditioner failed ({e}); switching to DSA");
                    self.failed = true;
                }
            }
        }
        if self.dsa.is_none() {
            self.dsa = Some(DsaCorrection::new(problem)?);
        }
        let d = self
            .dsa
            .as_ref()
            .expect("assembled above")
            .apply(problem, q)?;
        Ok(q.iter().zip(&d).map(|(a, b)| a + b).collect())
    }
}

/// Online FGMRES with the trajectory-aware preconditioner sequence.
pub fn tar_online_fgmres(
    artifact: &TarArtifact,
    problem: &DiscreteProblem,
    opts: &GmresOptions,
) -> Result<SolveReport> {
    if artifact.mode != TarMode::Fgmres {
        return invalid("artifact was not built for flexible GMRES");
    }
    artifact.validate(problem.family())?;
    let guess = artifact.initial_guess(problem)?;
    let mut sched = build_preconditioner_schedule(artifact);
    fgmres(problem, &mut sched, guess.as_deref(), opts)
}

/// Threshold below which ROMSAD stops using the ROM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RomsadTolerance {
    Absolute(f64),
    /// Multiple of the first increment norm.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomsadConfig {
    pub window: usize,
    pub switch_iter: usize,
    pub tolerance: RomsadTolerance,
}

impl RomsadConfig {
    pub fn new(window: usize, switch_iter: usize) -> Self {
        Self {
            window,
            switch_iter,
            tolerance: RomsadTolerance::Relative(1e-3),
        }
    }
}

/// Single ROM from the first `window` SI-DSA corrections `f_mu - f_mu^(l)` of every training parameter.
pub fn romsad_offline(training: &TrainingSet, window: usize, eps_pod: f64) -> Result<TarArtifact> {
    if window == 0 {
        return invalid("ROMSAD window must be at least 1");
    }
    let family = &training.family;
    let cols: Vec<Vec<Vec<f64>>> = training
        .solutions
        .par_iter()
        .map(|t| {
            let p = family.instantiate(&t.mu)?;
            let dsa = DsaCorrection::new(&p)?;
            let mut rho = vec![0.0; p.ndof()];
            let mut out = Vec::with_capacity(window);
            for _ in 0..window {
                let (flux, star) = si_step(&p, &rho);
                out.push(sub(&t.flux, flux.values()));
                let inc = sub(&star, &rho);
                let d = dsa.apply(&p, &inc)?;
                rho = star.iter().zip(&d).map(|(a, b)| a + b).collect();
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut snaps = SnapshotMatrix::new(family.nh());
    for (t, c) in training.solutions.iter().zip(cols) {
        for (l, col) in c.into_iter().enumerate() {
            snaps.push(col, &t.mu, l + 1)?;
        }
    }
    let basis = ReducedBasis::build(&snaps, eps_pod, family)?;
    info!(
        "ROMSAD basis rank {} from {} columns",
        basis.rank,
        snaps.len()
    );
    let mut meta = base_metadata(training, eps_pod, 1, false);
    meta.insert("window".into(), window.to_string());
    meta.insert("level1.rank".into(), basis.rank.to_string());
    Ok(TarArtifact {
        mode: TarMode::Romsad,
        ig_basis: None,
        levels: vec![basis],
        metadata: meta,
    })
}

/// ROM correction while `l <= L` and the increment is large enough, DSA otherwise.
pub struct RomsadCorrection<'a> {
    config: RomsadConfig,
    basis: &'a ReducedBasis,
    system: Option<ReducedSystem>,
    dsa: Option<DsaCorrection>,
    threshold: Option<f64>,
    failed: bool,
}

pub fn romsad_schedule(config: RomsadConfig, basis: &ReducedBasis) -> RomsadCorrection<'_> {
    RomsadCorrection {
        config,
        basis,
        system: None,
        dsa: None,
        threshold: match config.tolerance {
            RomsadTolerance::Absolute(e) => Some(e),
            RomsadTolerance::Relative(_) => None,
        },
        failed: false,
    }
}

impl RomsadCorrection<'_> {
    fn rom(&mut self, problem: &DiscreteProblem, q: &[f64]) -> Result<DensityField> {
        if self.system.is_none() {
            self.system = Some(self.basis.reduced_system(problem.family(), problem.mu())?);
        }
        apply_rom_correction(
            self.basis,
            self.system.as_ref().expect("assembled above"),
            &problem.sigma_s,
            q,
        )
    }
}

impl CorrectionStrategy for RomsadCorrection<'_> {
    fn name(&self) -> String {
        format!("romsad-{},{}", self.config.window, self.config.switch_iter)
    }

    fn correction(
        &mut self,
        problem: &DiscreteProblem,
        iteration: usize,
        increment: &[f64],
    ) -> Result<DensityField> {
        let inc = norm_inf(increment);
        let threshold = *self.threshold.get_or_insert(match self.config.tolerance {
            RomsadTolerance::Absolute(e) => e,
            RomsadTolerance::Relative(f) => f * inc,
        });
        if !self.failed && (1..=self.config.switch_iter).contains(&iteration) && inc >= threshold {
            match self.rom(problem, increment) {
                Ok(d) => return Ok(d),
                Err(e) => {
                    warn!("ROMSAD correction failed ({e}); switching to DSA");
                    self.failed = true;
                }
            }
        }
        if self.dsa.is_none() {
            self.dsa = Some(DsaCorrection::new(problem)?);
        }
        self.dsa
            .as_ref()
            .expect("assembled above")
            .apply(problem, increment)
    }
}

/// Online ROMSAD Source Iteration from a zero initial guess.
pub fn romsad_online(
    artifact: &TarArtifact,
    config: RomsadConfig,
    problem: &DiscreteProblem,
    opts: &SiOptions,
) -> Result<SolveReport> {
    if artifact.mode != TarMode::Romsad || artifact.levels.len() != 1 {
        return invalid("artifact was not built for ROMSAD");
    }
    artifact.validate(problem.family())?;
    let mut c = romsad_schedule(config, &artifact.levels[0]);
    source_iteration(problem, &mut c, None, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{
        assemble_coefficient_mass, build_mesh, component_theta, gauss_legendre, stacked_rhs,
        AffineDecomposition, CoefficientTerm, DGSpace, Inflow, MeshSpec, ParameterBox, RhsTerm,
        TermKind,
    };
    use crate::krylov::IdentityPreconditioner;
    use crate::linalg::norm_inf;
    use crate::oracle::{dense_density_system, IdealCorrection};
    use crate::transport::apply_lhs_tilde;

    /// Small two-region slab with parameters (absorption, scattering).
    fn family() -> Arc<ProblemFamily> {
        let mesh = build_mesh(&MeshSpec::Segments {
            breakpoints: vec![0.0, 1.0, 3.0],
            cell_sizes: vec![0.25, 0.5],
        })
        .unwrap();
        let space = DGSpace::new(mesh, 1).unwrap();
        let quad = gauss_legendre(4).unwrap();
        let q = space.project(&|_| 0.0);
        let rhs = stacked_rhs(&space, &quad, &q, &Inflow::Sides([5.0, 0.0, 0.0, 0.0]));
        let affine = AffineDecomposition {
            params: ParameterBox::new(vec![0.5, 1.0], vec![1.5, 5.0]).unwrap(),
            coefficients: vec![
                CoefficientTerm {
                    label: "abs".into(),
                    kind: TermKind::Absorption,
                    theta: component_theta(0),
                    mass: assemble_coefficient_mass(&space, &|x| {
                        if x[0] < 1.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }),
                },
                CoefficientTerm {
                    label: "scat".into(),
                    kind: TermKind::Scattering,
                    theta: component_theta(1),
                    mass: assemble_coefficient_mass(&space, &|x| {
                        if x[0] < 1.0 {
                            0.0
                        } else {
                            1.0
                        }
                    }),
                },
            ],
            rhs: vec![RhsTerm {
                label: "inflow".into(),
                theta: Arc::new(|_| 1.0),
                vector: rhs,
            }],
        };
        ProblemFamily::new("mini", space, quad, affine).unwrap()
    }

    fn training() -> TrainingSet {
        let params = vec![
            vec![0.5, 1.0],
            vec![1.0, 2.0],
            vec![1.5, 3.0],
            vec![0.7, 4.0],
            vec![1.2, 5.0],
        ];
        TrainingSet::compute(&family(), &params, 1e-13, 500).unwrap()
    }

    #[test]
    fn eta_vectors_satisfy_krylov_identity() {
        let t = training();
        let fam = &t.family;
        let sol = &t.solutions[2];
        let p = fam.instantiate(&sol.mu).unwrap();
        let opts = GmresOptions {
            max_iter: 3,
            tol: 1e-30,
            ..Default::default()
        };
        let (_, st) =
            crate::krylov::fgmres_with_state(&p, &mut IdentityPreconditioner, None, &opts).unwrap();
        let (a, b) = dense_density_system(&p).unwrap();
        let rho = a.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        let rho: Vec<f64> = rho.iter().copied().collect();
        let (etas, stop) = compute_etas(&rho, &st, 3);
        assert!(stop.is_none());
        let ideal = IdealCorrection::new(&p).unwrap();
        for (l, e) in etas.iter().enumerate() {
            let ae = apply_lhs_tilde(&p, e);
            assert!(norm_inf(&sub(&ae, &st.q[l])) < 1e-10, "level {}", l + 1);
            let df = sweep_isotropic(&p, &p.sigma_s.apply(e)).into_values();
            let (df_ideal, _) = ideal.solve(&p, &st.q[l]).unwrap();
            assert!(norm_inf(&sub(&df, &df_ideal)) < 1e-9);
        }
    }

    #[test]
    fn zero_guess_eta_is_scaled_solution() {
        let t = training();
        let p = t.family.instantiate(&t.solutions[0].mu).unwrap();
        let st = KrylovState::start(&p, None).unwrap();
        match next_eta(&t.solutions[0].density, &st, &[]) {
            EtaOutcome::Eta(e) => {
                for (a, b) in e.iter().zip(&t.solutions[0].density) {
                    assert!((a - b / st.beta).abs() < 1e-15);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn offline_and_online_si_trajectories_agree() {
        let t = training();
        let (art, trace) = tar_offline_si(&t, None, 2, 1e-13).unwrap();
        let opts = SiOptions {
            tol: 1e-11,
            max_iter: 50,
            record_trajectory: true,
            ..Default::default()
        };
        for (sol, tr) in t.solutions.iter().zip(&trace.increments) {
            let p = t.family.instantiate(&sol.mu).unwrap();
            let r = tar_online_si(&art, &p, &opts).unwrap();
            for l in 0..2 {
                if l < r.increments.len() {
                    assert!(norm_inf(&sub(&r.increments[l], &tr[l])) <= 1e-10);
                }
            }
            assert!(r.converged && r.iterations <= 3, "{}", r.iterations);
        }
    }

    #[test]
    fn empty_schedule_is_si_dsa() {
        let t = training();
        let (art, _) = tar_offline_si(&t, None, 0, 1e-7).unwrap();
        let p = t.family.instantiate(&[0.9, 2.5]).unwrap();
        let opts = SiOptions::default();
        let a = tar_online_si(&art, &p, &opts).unwrap();
        let b = source_iteration(&p, &mut DsaCorrection::new(&p).unwrap(), None, &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.final_density, b.final_density);
    }

    #[test]
    fn rom_preconditioner_is_identity_plus_correction() {
        let t = training();
        let art = tar_offline_fgmres(&t, None, 2, 1e-10).unwrap();
        let p = t.family.instantiate(&[0.9, 2.5]).unwrap();
        let q: Vec<f64> = (0..p.ndof()).map(|i| (i as f64).sin()).collect();
        let mut sched = build_preconditioner_schedule(&art);
        for l in 1..=art.n_w() {
            let z = sched.apply(&p, l, &q).unwrap();
            let d = level_correction(&art.levels[l - 1], &p, &q).unwrap();
            for i in 0..q.len() {
                assert!((z[i] - (q[i] + d[i])).abs() <= 1e-14 * (1.0 + z[i].abs()));
            }
        }
    }

    #[test]
    fn single_parameter_fgmres_replay() {
        let t = training();
        let one = TrainingSet {
            family: t.family.clone(),
            solutions: vec![t.solutions[3].clone()],
        };
        let art = tar_offline_fgmres(&one, None, 2, 1e-14).unwrap();
        let p = t.family.instantiate(&one.solutions[0].mu).unwrap();
        let r = tar_online_fgmres(&art, &p, &GmresOptions::default()).unwrap();
        assert!(r.converged && r.iterations <= 2, "{}", r.iterations);
    }

    #[test]
    fn romsad_without_rom_iterations_is_dsa() {
        let t = training();
        let art = romsad_offline(&t, 2, 1e-7).unwrap();
        let p = t.family.instantiate(&[0.9, 2.5]).unwrap();
        let opts = SiOptions::default();
        let a = romsad_online(&art, RomsadConfig::new(2, 0), &p, &opts).unwrap();
        let b = source_iteration(&p, &mut DsaCorrection::new(&p).unwrap(), None, &opts).unwrap();
        assert_eq!(a.final_density, b.final_density);
        let c = romsad_online(&art, RomsadConfig::new(2, 2), &p, &opts).unwrap();
        assert!(c.converged);
    }
}
