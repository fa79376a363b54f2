//! Benchmark specifications and their TOML configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::benchmarks::{
    training_parameters, Discretization, ProblemId, QuadratureSpec, TrainingGrid,
};
use crate::error::{Error, Result};

/// Solver configuration run on each test parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Unaccelerated Source Iteration.
    Si,
    SiDsa,
    /// ROM built from the first `window` SI-DSA iterations, used up to iteration `switch`.
    Romsad {
        window: usize,
        switch: usize,
    },
    /// Trajectory-aware Source Iteration.
    TarSi {
        n_w: usize,
        ig: bool,
    },
    /// GMRES with the DSA preconditioner.
    Pgmres {
        ig: bool,
    },
    /// Flexible GMRES with trajectory-aware preconditioners.
    FgmresTar {
        n_w: usize,
        ig: bool,
    },
}

impl Method {
    /// Name of the offline artifact this method reads, if any.
    pub fn artifact_key(&self) -> Option<String> {
        let ig = |b: bool| if b { "-ig" } else { "" };
        match *self {
            Method::Si | Method::SiDsa | Method::Pgmres { ig: false } => None,
            Method::Pgmres { ig: true } => Some("ig".into()),
            Method::Romsad { window, .. } => Some(format!("romsad-{window}")),
            Method::TarSi { n_w, ig: i } => Some(format!("tar-si{}-{n_w}", ig(i))),
            Method::FgmresTar { n_w, ig: i } => Some(format!("tar-fgmres{}-{n_w}", ig(i))),
        }
    }

    pub fn uses_initial_guess(&self) -> bool {
        matches!(
            self,
            Method::Pgmres { ig: true }
                | Method::TarSi { ig: true, .. }
                | Method::FgmresTar { ig: true, .. }
        )
    }

    pub fn is_krylov(&self) -> bool {
        matches!(self, Method::Pgmres { .. } | Method::FgmresTar { .. })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ig = |b: bool| if b { "-ig" } else { "" };
        match *self {
            Method::Si => write!(f, "si"),
            Method::SiDsa => write!(f, "si-dsa"),
            Method::Romsad { window, switch } => write!(f, "romsad-{window},{switch}"),
            Method::TarSi { n_w, ig: i } => write!(f, "tar{}-{n_w}", ig(i)),
            Method::Pgmres { ig: i } => write!(f, "pgmres{}", ig(i)),
            Method::FgmresTar { n_w, ig: i } => write!(f, "fgmres-tar{}-{n_w}", ig(i)),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Accepts `si`, `si-dsa`, `romsad-W,L`, `tar[-ig]-N`, `pgmres[-ig]`, `fgmres-tar[-ig]-N`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method '{s}'"));
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let lower = s.trim().to_ascii_lowercase();
        let m = match lower.as_str() {
            "si" => Method::Si,
            "si-dsa" => Method::SiDsa,
            "pgmres" => Method::Pgmres { ig: false },
            "pgmres-ig" => Method::Pgmres { ig: true },
            _ => {
                if let Some(rest) = lower.strip_prefix("romsad-") {
                    let (w, l) = rest.split_once(',').ok_or_else(bad)?;
                    let window = num(w)?;
                    if window == 0 {
                        return Err(bad());
                    }
                    Method::Romsad {
                        window,
                        switch: num(l)?,
                    }
                } else if let Some(rest) = lower.strip_prefix("fgmres-tar-") {
                    match rest.strip_prefix("ig-") {
                        Some(n) => Method::FgmresTar {
                            n_w: num(n)?,
                            ig: true,
                        },
                        None => Method::FgmresTar {
                            n_w: num(rest)?,
                            ig: false,
                        },
                    }
                } else if let Some(rest) = lower.strip_prefix("tar-") {
                    match rest.strip_prefix("ig-") {
                        Some(n) => Method::TarSi {
                            n_w: num(n)?,
                            ig: true,
                        },
                        None => Method::TarSi {
                            n_w: num(rest)?,
                            ig: false,
                        },
                    }
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(m)
    }
}

/// Everything needed to reproduce one benchmark study.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub problem: ProblemId,
    pub discretization: Discretization,
    pub training_grid: TrainingGrid,
    pub training_tol: f64,
    pub training_max_iter: usize,
    pub test_count: usize,
    /// Explicit test parameters; replaces random sampling when present.
    pub test_mu: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub eps_pod: f64,
    /// ROMSAD stops using the ROM once the increment drops below this multiple of the first one.
    pub romsad_tol_factor: f64,
    pub methods: Vec<Method>,
    pub out_dir: Option<PathBuf>,
}

impl BenchmarkSpec {
    /// Reference setup of each benchmark.
    pub fn reference(problem: ProblemId) -> Self {
        let (tol, eps_pod, tests) = match problem {
            ProblemId::TwoMaterial => (1e-12, 1e-7, 20),
            ProblemId::VariableScattering => (1e-11, 1e-7, 10),
            ProblemId::PinCell => (1e-12, 1e-6, 10),
            ProblemId::Lattice => (1e-12, 1e-7, 10),
        };
        Self {
            problem,
            discretization: Discretization::reference(problem),
            training_grid: TrainingGrid::Reference,
            training_tol: tol * 0.1,
            training_max_iter: 1000,
            test_count: tests,
            test_mu: None,
            seed: 2024,
            tol,
            max_iter: 1000,
            eps_pod,
            romsad_tol_factor: 1e-3,
            methods: vec![
                Method::SiDsa,
                Method::Romsad {
                    window: 3,
                    switch: 3,
                },
                Method::TarSi { n_w: 2, ig: true },
                Method::FgmresTar { n_w: 1, ig: true },
            ],
            out_dir: None,
        }
    }

    pub fn training_parameters(&self) -> Result<Vec<Vec<f64>>> {
        training_parameters(self.problem, &self.training_grid)
    }

    /// Seeded uniform samples of the parameter box that avoid training points.
    pub fn test_parameters(&self) -> Result<Vec<Vec<f64>>> {
        let b = self.problem.parameter_box();
        if let Some(mu) = &self.test_mu {
            for m in mu {
                if !b.contains(m) {
                    return Err(Error::Config(format!(
                        "test parameter {m:?} is outside the parameter box"
                    )));
                }
            }
            return Ok(mu.clone());
        }
        let train = self.training_parameters()?;
        let close = |a: &[f64], t: &[f64]| {
            a.iter()
                .zip(t)
                .zip(b.lower.iter().zip(&b.upper))
                .all(|((x, y), (lo, hi))| (x - y).abs() <= 1e-12 * (hi - lo))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.test_count);
        while out.len() < self.test_count {
            let mu: Vec<f64> = (0..b.dim())
                .map(|k| b.lower[k] + (b.upper[k] - b.lower[k]) * rng.random::<f64>())
                .collect();
            if !train.iter().any(|t| close(&mu, t)) {
                out.push(mu);
            }
        }
        Ok(out)
    }

    /// Artifact keys needed by the configured methods, without duplicates.
    pub fn artifact_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .methods
            .iter()
            .filter_map(Method::artifact_key)
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let problem: ProblemId = cfg.problem.parse()?;
        let mut spec = Self::reference(problem);
        let disc = &mut spec.discretization;
        if let Some(nx) = cfg.mesh.nx {
            if problem.dim() == 1 {
                return Err(Error::Config(
                    "mesh.nx applies to 2D problems; use mesh.slab_dx".into(),
                ));
            }
            disc.nx = nx;
        }
        if let Some(dx) = cfg.mesh.slab_dx {
            if problem.dim() != 1 {
                return Err(Error::Config(
                    "mesh.slab_dx applies to the slab problem".into(),
                ));
            }
            disc.slab_dx = dx;
        }
        if let Some(d) = cfg.mesh.degree {
            disc.degree = d;
        }
        disc.quadrature = match (problem.dim(), &cfg.quad) {
            (
                1,
                QuadConfig {
                    n_alpha: None,
                    n_z: None,
                    n,
                },
            ) => QuadratureSpec::GaussLegendre(n.unwrap_or(16)),
            (
                2,
                QuadConfig {
                    n: None,
                    n_alpha,
                    n_z,
                },
            ) => {
                let QuadratureSpec::ChebyshevLegendre(a, z) = disc.quadrature else {
                    unreachable!("2D problems default to a sphere rule")
                };
                QuadratureSpec::ChebyshevLegendre(n_alpha.unwrap_or(a), n_z.unwrap_or(z))
            }
            _ => {
                return Err(Error::Config(
                    "quad.n is for slab problems, quad.n_alpha and quad.n_z for 2D problems".into(),
                ))
            }
        };
        if let Some(g) = &cfg.training.grid {
            spec.training_grid = TrainingGrid::Uniform(g.clone());
        }
        spec.training_tol = cfg.training.tol.unwrap_or(spec.training_tol);
        spec.training_max_iter = cfg.training.max_iter.unwrap_or(spec.training_max_iter);
        spec.test_count = cfg.tests.count.unwrap_or(spec.test_count);
        spec.test_mu = cfg.tests.mu.clone();
        spec.seed = cfg.seed.unwrap_or(spec.seed);
        spec.tol = cfg.solver.tol.unwrap_or(spec.tol);
        spec.max_iter = cfg.solver.max_iter.unwrap_or(spec.max_iter);
        spec.eps_pod = cfg.rom.eps_pod.unwrap_or(spec.eps_pod);
        spec.romsad_tol_factor = cfg.romsad.tol_factor.unwrap_or(spec.romsad_tol_factor);
        let n_w = cfg.tar.n_w;
        let (window, switch) = (
            cfg.romsad.window.unwrap_or(3),
            cfg.romsad.switch.unwrap_or(3),
        );
        let methods = match (&cfg.solver.methods, &cfg.solver.method) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give solver.method or solver.methods, not both".into(),
                ))
            }
            (Some(m), None) => Some(m.clone()),
            (None, Some(m)) => Some(vec![m.clone()]),
            (None, None) => None,
        };
        if let Some(list) = methods {
            spec.methods = list
                .iter()
                .map(|s| expand_method(s, n_w, window, switch))
                .collect::<Result<_>>()?;
        } else if let Some(n) = n_w {
            for m in &mut spec.methods {
                if let Method::TarSi { n_w, .. } | Method::FgmresTar { n_w, .. } = m {
                    *n_w = n;
                }
            }
        }
        spec.out_dir = cfg.paths.out.clone();
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("solver.tol", self.tol),
            ("training.tol", self.training_tol),
            ("rom.eps_pod", self.eps_pod),
            ("romsad.tol_factor", self.romsad_tol_factor),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.eps_pod >= 1.0 {
            return Err(Error::Config("rom.eps_pod must be below 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no solver methods configured".into()));
        }
        if self.problem.dim() == 2 && self.discretization.nx == 0 {
            return Err(Error::Config("mesh.nx must be positive".into()));
        }
        Ok(())
    }
}

/// Bare `tar`, `tar-ig`, `fgmres-tar[-ig]` and `romsad` take their sizes from the config sections.
fn expand_method(s: &str, n_w: Option<usize>, window: usize, switch: usize) -> Result<Method> {
    let t = s.trim().to_ascii_lowercase();
    let needs_nw = matches!(
        t.as_str(),
        "tar" | "tar-ig" | "fgmres-tar" | "fgmres-tar-ig"
    );
    if needs_nw {
        let n = n_w.ok_or_else(|| Error::Config(format!("method '{s}' needs tar.n_w")))?;
        return format!("{t}-{n}").parse();
    }
    if t == "romsad" {
        return format!("romsad-{window},{switch}").parse();
    }
    t.parse()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: Option<usize>,
    pub slab_dx: Option<[f64; 2]>,
    pub degree: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub n: Option<usize>,
    pub n_alpha: Option<usize>,
    pub n_z: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Points per parameter axis; the reference grid when absent.
    pub grid: Option<Vec<usize>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestsConfig {
    pub count: Option<usize>,
    pub mu: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomConfig {
    pub eps_pod: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TarConfig {
    pub n_w: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomsadConfigSection {
    pub window: Option<usize>,
    pub switch: Option<usize>,
    pub tol_factor: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Option<String>,
    pub methods: Option<Vec<String>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub out: Option<PathBuf>,
}

/// On-disk configuration; every key except `problem` is optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub tests: TestsConfig,
    #[serde(default)]
    pub rom: RomConfig,
    #[serde(default)]
    pub tar: TarConfig,
    #[serde(default)]
    pub romsad: RomsadConfigSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl FromStr for Config {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

/// Reads a config file into a spec.
pub fn load_spec(path: &Path) -> Result<BenchmarkSpec> {
    BenchmarkSpec::from_config(&Config::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_strings_round_trip() {
        for s in [
            "si",
            "si-dsa",
            "romsad-3,3",
            "tar-2",
            "tar-ig-2",
            "pgmres",
            "pgmres-ig",
            "fgmres-tar-1",
            "fgmres-tar-ig-1",
        ] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        for s in ["", "tar", "tar-x", "romsad-3", "romsad-0,2", "gmres"] {
            assert!(s.parse::<Method>().is_err(), "{s}");
        }
        assert_eq!(
            "TAR-IG-2".parse::<Method>().unwrap(),
            Method::TarSi { n_w: 2, ig: true }
        );
    }

    #[test]
    fn config_overrides_reference() {
        let cfg: Config = r#"
            problem = "variable_scattering"
            seed = 7
            [mesh]
            nx = 40
            [quad]
            n_alpha = 8
            n_z = 4
            [training]
            grid = [20]
            [tar]
            n_w = 1
            [solver]
            methods = ["si-dsa", "romsad", "tar-ig"]
            tol = 1e-9
        "#
        .parse()
        .unwrap();
        let spec = BenchmarkSpec::from_config(&cfg).unwrap();
        assert_eq!(spec.discretization.nx, 40);
        assert_eq!(
            spec.discretization.quadrature,
            QuadratureSpec::ChebyshevLegendre(8, 4)
        );
        assert_eq!(spec.training_parameters().unwrap().len(), 20);
        assert_eq!(
            spec.methods,
            vec![
                Method::SiDsa,
                Method::Romsad {
                    window: 3,
                    switch: 3
                },
                Method::TarSi { n_w: 1, ig: true }
            ]
        );
        assert_eq!(
            spec.artifact_keys(),
            vec!["romsad-3".to_string(), "tar-si-ig-1".to_string()]
        );
        assert_eq!(spec.tol, 1e-9);
        assert_eq!(spec.seed, 7);
    }

    #[test]
    fn unknown_and_misplaced_keys_are_rejected() {
        assert!("problem = \"lattice\"\ncolour = 1"
            .parse::<Config>()
            .is_err());
        assert!("problem = \"lattice\"\n[mesh]\nny = 3"
            .parse::<Config>()
            .is_err());
        let slab_nx: Config = "problem = \"two_material\"\n[mesh]\nnx = 3"
            .parse()
            .unwrap();
        assert!(BenchmarkSpec::from_config(&slab_nx).is_err());
        let mixed: Config = "problem = \"lattice\"\n[quad]\nn = 4".parse().unwrap();
        assert!(BenchmarkSpec::from_config(&mixed).is_err());
        let unknown: Config = "problem = \"moon\"".parse().unwrap();
        assert!(BenchmarkSpec::from_config(&unknown).is_err());
        let bad_tol: Config = "problem = \"lattice\"\n[solver]\ntol = -1.0"
            .parse()
            .unwrap();
        assert!(BenchmarkSpec::from_config(&bad_tol).is_err());
    }

    #[test]
    fn test_sampling_is_seeded_and_disjoint() {
        let mut spec = BenchmarkSpec::reference(ProblemId::TwoMaterial);
        let a = spec.test_parameters().unwrap();
        assert_eq!(a, spec.test_parameters().unwrap());
        assert_eq!(a.len(), 20);
        let b = spec.problem.parameter_box();
        let train = spec.training_parameters().unwrap();
        for mu in &a {
            assert!(b.contains(mu));
            assert!(!train.contains(mu));
        }
        spec.seed += 1;
        assert_ne!(a, spec.test_parameters().unwrap());
        spec.test_mu = Some(vec![vec![2.0, 20.0]]);
        assert!(spec.test_parameters().is_err());
    }
}
