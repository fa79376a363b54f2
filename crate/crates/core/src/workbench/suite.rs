//! Offline builds, online test suites, metrics and CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::artifact::{load_artifact, save_artifact};
use super::benchmarks::{make_family, make_problem};
use super::config::{BenchmarkSpec, Method};
use crate::discretization::{DiscreteProblem, ProblemFamily};
use crate::dsa::DsaCorrection;
use crate::error::{Error, Result};
use crate::krylov::{fgmres, DsaPreconditioner, GmresOptions, IdentityPreconditioner};
use crate::linalg::{norm_inf, sub};
use crate::oracle::{dense_density_solution, dense_density_system, IdealCorrection};
use crate::rom::ReducedBasis;
use crate::tar::{
    romsad_offline, romsad_online, tar_offline_fgmres, tar_offline_si, tar_online_fgmres,
    tar_online_si, RomsadConfig, RomsadTolerance, TarArtifact, TarMode, TrainingSet,
};
use crate::transport::{
    apply_lhs_tilde, operator_residual_inf, source_iteration, NoCorrection, SiOptions, SolveReport,
};

/// Wall-clock cost of one offline stage.
#[derive(Debug, Clone, Serialize)]
pub struct TimingEntry {
    pub stage: String,
    pub seconds: f64,
    /// Seconds divided by the training-solve seconds.
    pub relative_to_training: f64,
    pub ranks: String,
}

#[derive(Debug, Clone)]
pub struct OfflineOutput {
    pub artifacts: BTreeMap<String, TarArtifact>,
    pub timings: Vec<TimingEntry>,
    /// Training parameters whose SI-DSA solve missed the training tolerance.
    pub unconverged_training: Vec<Vec<f64>>,
}

fn artifact_path(dir: &Path, key: &str) -> PathBuf {
    dir.join("artifacts").join(format!("{key}.tarrom"))
}

fn parse_key(key: &str) -> Result<(TarMode, bool, usize)> {
    let bad = || Error::Config(format!("unknown artifact key '{key}'"));
    if key == "ig" {
        return Ok((TarMode::Si, true, 0));
    }
    if let Some(w) = key.strip_prefix("romsad-") {
        return Ok((TarMode::Romsad, false, w.parse().map_err(|_| bad())?));
    }
    let (mode, rest) = if let Some(r) = key.strip_prefix("tar-si-") {
        (TarMode::Si, r)
    } else if let Some(r) = key.strip_prefix("tar-fgmres-") {
        (TarMode::Fgmres, r)
    } else {
        return Err(bad());
    };
    let (ig, n) = match rest.strip_prefix("ig-") {
        Some(n) => (true, n),
        None => (false, rest),
    };
    Ok((mode, ig, n.parse().map_err(|_| bad())?))
}

fn seconds(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Training solves plus every artifact the configured methods need; persisted under `out` if given.
pub fn run_offline(spec: &BenchmarkSpec, out: Option<&Path>) -> Result<OfflineOutput> {
    let family = make_family(spec.problem, &spec.discretization)?;
    let keys = spec.artifact_keys();
    let mut timings = Vec::new();
    let mut artifacts = BTreeMap::new();
    if keys.is_empty() {
        return Ok(OfflineOutput {
            artifacts,
            timings,
            unconverged_training: Vec::new(),
        });
    }
    let params = spec.training_parameters()?;
    info!(
        "{}: {} training solves, N_h = {}",
        spec.problem,
        params.len(),
        family.nh()
    );
    let t = Instant::now();
    let training =
        TrainingSet::compute(&family, &params, spec.training_tol, spec.training_max_iter)?;
    let t_train = seconds(t).max(1e-9);
    let unconverged: Vec<Vec<f64>> = training
        .solutions
        .iter()
        .filter(|s| !s.converged)
        .map(|s| s.mu.clone())
        .collect();
    if !unconverged.is_empty() {
        warn!(
            "{} training solves missed the training tolerance",
            unconverged.len()
        );
    }
    let mut entry = |stage: &str, secs: f64, ranks: Vec<usize>| {
        timings.push(TimingEntry {
            stage: stage.into(),
            seconds: secs,
            relative_to_training: secs / t_train,
            ranks: ranks
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        })
    };
    entry("training", t_train, Vec::new());
    let parsed: Vec<(String, (TarMode, bool, usize))> = keys
        .iter()
        .map(|k| Ok((k.clone(), parse_key(k)?)))
        .collect::<Result<_>>()?;
    let ig_basis: Option<ReducedBasis> = if parsed.iter().any(|(_, (_, ig, _))| *ig) {
        let t = Instant::now();
        let b = training.ig_basis(spec.eps_pod)?;
        entry("ig", seconds(t), vec![b.rank]);
        Some(b)
    } else {
        None
    };
    for (key, (mode, ig, n)) in parsed {
        let t = Instant::now();
        let ig_ref = if ig { ig_basis.as_ref() } else { None };
        let mut art = match mode {
            TarMode::Si if key == "ig" => TarArtifact {
                mode: TarMode::Si,
                ig_basis: ig_basis.clone(),
                levels: Vec::new(),
                metadata: BTreeMap::new(),
            },
            TarMode::Si => tar_offline_si(&training, ig_ref, n, spec.eps_pod)?.0,
            TarMode::Fgmres => tar_offline_fgmres(&training, ig_ref, n, spec.eps_pod)?,
            TarMode::Romsad => romsad_offline(&training, n, spec.eps_pod)?,
        };
        let secs = seconds(t);
        art.metadata
            .insert("problem".into(), spec.problem.to_string());
        art.metadata.insert("key".into(), key.clone());
        art.metadata
            .insert("eps_pod".into(), format!("{:e}", spec.eps_pod));
        entry(&key, secs, art.level_ranks());
        info!(
            "artifact {key}: ranks {:?} in {secs:.2}s",
            art.level_ranks()
        );
        artifacts.insert(key, art);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir.join("artifacts"))?;
        for (key, art) in &artifacts {
            save_artifact(art, &artifact_path(dir, key))?;
        }
        let mut w = csv::Writer::from_path(dir.join("offline_timings.csv"))?;
        for e in &timings {
            w.serialize(e)?;
        }
        w.flush()?;
    }
    Ok(OfflineOutput {
        artifacts,
        timings,
        unconverged_training: unconverged,
    })
}

/// Loads the artifacts `spec` needs from `dir`.
pub fn load_artifacts(spec: &BenchmarkSpec, dir: &Path) -> Result<BTreeMap<String, TarArtifact>> {
    spec.artifact_keys()
        .into_iter()
        .map(|k| {
            let p = artifact_path(dir, &k);
            if !p.exists() {
                return Err(Error::Config(format!(
                    "missing artifact '{k}' at {}; run the offline stage first",
                    p.display()
                )));
            }
            Ok((k, load_artifact(&p)?))
        })
        .collect()
}

/// Runs one method on one problem.
pub fn solve_method(
    spec: &BenchmarkSpec,
    method: Method,
    problem: &DiscreteProblem,
    artifacts: &BTreeMap<String, TarArtifact>,
) -> Result<SolveReport> {
    let art = || -> Result<&TarArtifact> {
        let key = method.artifact_key().expect("ROM methods have artifacts");
        let a = artifacts.get(&key).ok_or_else(|| {
            Error::Config(format!("missing artifact '{key}' for method {method}"))
        })?;
        a.validate(problem.family())?;
        Ok(a)
    };
    let si = SiOptions {
        tol: spec.tol,
        max_iter: spec.max_iter,
        ..Default::default()
    };
    let gm = GmresOptions {
        tol: spec.tol,
        max_iter: spec.max_iter,
        ..Default::default()
    };
    match method {
        Method::Si => source_iteration(problem, &mut NoCorrection, None, &si),
        Method::SiDsa => source_iteration(problem, &mut DsaCorrection::new(problem)?, None, &si),
        Method::Romsad { window, switch } => {
            let cfg = RomsadConfig {
                window,
                switch_iter: switch,
                tolerance: RomsadTolerance::Relative(spec.romsad_tol_factor),
            };
            romsad_online(art()?, cfg, problem, &si)
        }
        Method::TarSi { .. } => tar_online_si(art()?, problem, &si),
        Method::Pgmres { ig } => {
            let guess = if ig {
                art()?.initial_guess(problem)?
            } else {
                None
            };
            fgmres(
                problem,
                &mut DsaPreconditioner::new(problem)?,
                guess.as_deref(),
                &gm,
            )
        }
        Method::FgmresTar { .. } => tar_online_fgmres(art()?, problem, &gm),
    }
}

/// Digest of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDigest {
    pub method: Method,
    pub mu: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub sweeps: usize,
    /// `||A~ rho - b~||_inf` of the final density.
    pub residual_inf: f64,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: Vec<RunDigest>,
    pub mean_sweeps: f64,
    pub mean_iterations: f64,
    pub mean_residual_inf: f64,
    pub all_converged: bool,
}

impl MethodSummary {
    fn new(method: Method, runs: Vec<RunDigest>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RunDigest) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Self {
            method,
            mean_sweeps: mean(&|r| r.sweeps as f64),
            mean_iterations: mean(&|r| r.iterations as f64),
            mean_residual_inf: mean(&|r| r.residual_inf),
            all_converged: runs.iter().all(|r| r.converged),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub problem: String,
    pub test_parameters: Vec<Vec<f64>>,
    pub methods: Vec<MethodSummary>,
}

impl RunSummary {
    pub fn all_converged(&self) -> bool {
        self.methods.iter().all(|m| m.all_converged)
    }

    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

fn mu_string(mu: &[f64]) -> String {
    mu.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Serialize)]
struct HistoryRow {
    method: String,
    mu_components: String,
    iter: usize,
    cumulative_sweeps: usize,
    increment_inf: Option<f64>,
    lsq_residual: Option<f64>,
}

#[derive(Serialize)]
struct RunRow {
    method: String,
    mu_components: String,
    converged: bool,
    iterations: usize,
    sweeps: usize,
    residual_inf: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    method: String,
    tests: usize,
    converged: usize,
    mean_iterations: f64,
    mean_sweeps: f64,
    mean_residual_inf: f64,
}

/// Writes `history.csv`, `runs.csv` and `summary.csv` into `dir`.
pub fn write_csv(summary: &RunSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut hist = csv::Writer::from_path(dir.join("history.csv"))?;
    let mut runs = csv::Writer::from_path(dir.join("runs.csv"))?;
    let mut sum = csv::Writer::from_path(dir.join("summary.csv"))?;
    for m in &summary.methods {
        for r in &m.runs {
            for h in &r.report.history {
                hist.serialize(HistoryRow {
                    method: m.method.to_string(),
                    mu_components: mu_string(&r.mu),
                    iter: h.iter,
                    cumulative_sweeps: h.cumulative_sweeps,
                    increment_inf: h.increment_inf,
                    lsq_residual: h.lsq_residual,
                })?;
            }
            runs.serialize(RunRow {
                method: m.method.to_string(),
                mu_components: mu_string(&r.mu),
                converged: r.converged,
                iterations: r.iterations,
                sweeps: r.sweeps,
                residual_inf: r.residual_inf,
            })?;
        }
        sum.serialize(SummaryRow {
            method: m.method.to_string(),
            tests: m.runs.len(),
            converged: m.runs.iter().filter(|r| r.converged).count(),
            mean_iterations: m.mean_iterations,
            mean_sweeps: m.mean_sweeps,
            mean_residual_inf: m.mean_residual_inf,
        })?;
    }
    hist.flush()?;
    runs.flush()?;
    sum.flush()?;
    Ok(())
}

/// Runs every configured method on `mus`.
pub fn run_methods(
    spec: &BenchmarkSpec,
    family: &Arc<ProblemFamily>,
    mus: &[Vec<f64>],
    artifacts: &BTreeMap<String, TarArtifact>,
) -> Result<RunSummary> {
    let per_mu: Vec<Vec<RunDigest>> = mus
        .par_iter()
        .map(|mu| {
            let p = make_problem(family, mu)?;
            spec.methods
                .iter()
                .map(|&m| {
                    let report = solve_method(spec, m, &p, artifacts)?;
                    if !report.converged {
                        warn!("{m} did not converge at {mu:?}");
                    }
                    Ok(RunDigest {
                        method: m,
                        mu: mu.clone(),
                        converged: report.converged,
                        iterations: report.iterations,
                        sweeps: report.sweep_count,
                        residual_inf: operator_residual_inf(&p, &report.final_density),
                        report,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let methods = spec
        .methods
        .iter()
        .enumerate()
        .map(|(k, &m)| MethodSummary::new(m, per_mu.iter().map(|runs| runs[k].clone()).collect()))
        .collect();
    Ok(RunSummary {
        problem: spec.problem.to_string(),
        test_parameters: mus.to_vec(),
        methods,
    })
}

/// Samples test parameters and runs every configured method; CSVs go to `out` if given.
pub fn run_suite(
    spec: &BenchmarkSpec,
    artifacts: &BTreeMap<String, TarArtifact>,
    out: Option<&Path>,
) -> Result<RunSummary> {
    for k in spec.artifact_keys() {
        if !artifacts.contains_key(&k) {
            return Err(Error::Config(format!(
                "missing artifact '{k}'; run the offline stage first"
            )));
        }
    }
    let family = make_family(spec.problem, &spec.discretization)?;
    let summary = run_methods(spec, &family, &spec.test_parameters()?, artifacts)?;
    if let Some(dir) = out {
        write_csv(&summary, dir)?;
    }
    Ok(summary)
}

/// One dense-oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.value <= self.threshold
    }
}

/// Matrix-free solvers against dense solves at `mu`; errors if the problem is too large to densify.
pub fn oracle_suite(spec: &BenchmarkSpec, mu: &[f64]) -> Result<Vec<OracleCheck>> {
    let family = make_family(spec.problem, &spec.discretization)?;
    let p = make_problem(&family, mu)?;
    let exact = dense_density_solution(&p)?;
    let scale = norm_inf(&exact).max(1.0);
    let mut checks = Vec::new();
    let mut check = |name: &str, value: f64, threshold: f64| {
        checks.push(OracleCheck {
            name: name.into(),
            value,
            threshold,
        })
    };
    let (a, _) = dense_density_system(&p)?;
    let probe: Vec<f64> = (0..p.ndof()).map(|i| (0.37 * i as f64).sin()).collect();
    let dense_apply: Vec<f64> = (&a * nalgebra::DVector::from_column_slice(&probe))
        .iter()
        .copied()
        .collect();
    check(
        "lhs_apply",
        norm_inf(&sub(&dense_apply, &apply_lhs_tilde(&p, &probe))),
        1e-10,
    );
    let si = SiOptions {
        tol: spec.tol,
        max_iter: spec.max_iter,
        ..Default::default()
    };
    let dsa = source_iteration(&p, &mut DsaCorrection::new(&p)?, None, &si)?;
    check(
        "si_dsa_solution",
        norm_inf(&sub(&dsa.final_density, &exact)) / scale,
        1e-9,
    );
    let gm = GmresOptions {
        tol: spec.tol,
        max_iter: p.ndof().min(spec.max_iter),
        ..Default::default()
    };
    let g = fgmres(&p, &mut IdentityPreconditioner, None, &gm)?;
    check(
        "gmres_solution",
        norm_inf(&sub(&g.final_density, &exact)) / scale,
        1e-9,
    );
    let ideal = source_iteration(&p, &mut IdealCorrection::new(&p)?, None, &si)?;
    check("ideal_correction_iterations", ideal.iterations as f64, 2.0);
    Ok(checks)
}
