//! Run configuration: a flat key-value text format with dotted section
//! names, one assignment per line, plus derived-default resolution and a
//! reproducibility manifest.
//!
//! Unknown keys are rejected so typos surface as errors naming the exact
//! field. Every value the pipeline fills in on its own (time steps,
//! quadrature orders, the penalty schedule, ...) is recorded as a derived
//! default and lands in the manifest next to the config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Which reproduction pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    DoubleWell,
    GinzburgLandau,
}

impl Experiment {
    pub fn tag(&self) -> &'static str {
        match self {
            Experiment::DoubleWell => "double_well",
            Experiment::GinzburgLandau => "ginzburg_landau",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub dimension: usize,
    pub temperature: f64,
    pub seed: u64,
    pub output_dir: PathBuf,

    /// Basis functions per dimension for the committor expansion.
    pub basis_size: usize,
    /// Half width of the truncated computational domain per dimension.
    pub gamma: f64,
    /// Gauss-Legendre order for all univariate tables.
    pub quad_order: usize,

    // Double-well boundary geometry (hyperplanes on the first coordinate).
    pub boundary_sigma: f64,
    pub boundary_offset_a: f64,
    pub boundary_offset_b: f64,

    // Ginzburg-Landau parameters.
    pub gl_lambda: f64,
    pub gl_coupling_h: f64,
    pub gl_truncation: usize,
    pub gl_n_cheb: usize,
    /// Radius of the metastable balls (penalty measures and hitting regions).
    pub ball_radius: f64,

    pub solver: SolverConfig,

    // Validation toggles and parameters.
    pub validate_relative_error: bool,
    pub mc_samples: usize,
    pub validate_isosurface: bool,
    pub iso_eps: f64,
    pub iso_n_s: usize,
    pub iso_n_t: usize,
    pub dt: f64,
    pub max_steps: usize,
    pub iso_burn_in: usize,
    pub iso_thinning: usize,
    pub iso_step_budget: usize,

    /// Keys the config did not set, with the values that were derived.
    pub derived: Vec<(String, String)>,
    canonical: String,
}

/// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Config(format!(
                "line {}: empty key or value",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

struct Fields {
    map: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
    derived: Vec<(String, String)>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.used.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| {
                Error::Config(format!("field '{key}': cannot parse '{s}'"))
            }),
        }
    }

    fn required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.parse(key)?
            .ok_or_else(|| Error::Config(format!("missing required field '{key}'")))
    }

    fn or_derived<T: std::str::FromStr + std::fmt::Display + Copy>(
        &mut self,
        key: &str,
        default: T,
    ) -> Result<T> {
        match self.parse(key)? {
            Some(v) => Ok(v),
            None => {
                self.derived.push((key.to_string(), default.to_string()));
                Ok(default)
            }
        }
    }

    fn or_default<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_kv(text)?;
        let mut f = Fields {
            map,
            used: Default::default(),
            derived: Vec::new(),
        };

        let experiment = match f.take("experiment").as_deref() {
            Some("double_well") => Experiment::DoubleWell,
            Some("ginzburg_landau") => Experiment::GinzburgLandau,
            Some(other) => {
                return Err(Error::Config(format!(
                    "field 'experiment': unknown experiment '{other}' \
                     (expected double_well or ginzburg_landau)"
                )))
            }
            None => return Err(Error::Config("missing required field 'experiment'".into())),
        };
        let dw = experiment == Experiment::DoubleWell;

        let dimension: usize = f.required("dimension")?;
        if dimension == 0 {
            return Err(Error::Config("field 'dimension': must be >= 1".into()));
        }
        let temperature: f64 = f.required("temperature")?;
        if !(temperature > 0.0) {
            return Err(Error::Config("field 'temperature': must be > 0".into()));
        }
        let beta = 1.0 / temperature;
        let seed = f.or_default("seed", 0u64)?;
        let output_dir = PathBuf::from(f.take("output.dir").unwrap_or_else(|| "out".into()));

        let basis_size = f.or_derived("basis.size", if dw { 30 } else { 10 })?;
        if basis_size == 0 {
            return Err(Error::Config("field 'basis.size': must be >= 1".into()));
        }
        // Degree of the Chebyshev interpolation of the per-site kernel
        // factors. Too low a degree lets the interpolated density dip
        // negative in the tails, which makes the energy form indefinite.
        let gl_n_cheb = f.or_derived("gl.n_cheb", 30usize)?;
        let gamma = f.or_derived("domain.gamma", if dw { 2.0 } else { 2.6 })?;
        if !(gamma > 0.0) {
            return Err(Error::Config("field 'domain.gamma': must be > 0".into()));
        }
        let default_order = if dw {
            (8 * basis_size).max(256)
        } else {
            (4 * basis_size.max(gl_n_cheb + 1)).max(240)
        };
        let quad_order = f.or_derived("quadrature.order", default_order)?;

        let boundary_sigma = f.or_derived("boundary.sigma", 0.05)?;
        let boundary_offset_a = f.or_default("boundary.offset_a", -1.0)?;
        let boundary_offset_b = f.or_default("boundary.offset_b", 1.0)?;

        let gl_lambda = f.or_default("gl.lambda", 0.1)?;
        let gl_coupling_h = f.or_derived("gl.coupling_h", 1.0 / (dimension as f64 + 1.0))?;
        let gl_truncation = f.or_derived("gl.truncation", 30usize)?;
        let ball_radius = f.or_derived("boundary.radius", 2.5)?;

        let rank = f.or_derived("solver.rank", 6usize)?;
        let sweeps = f.or_derived("solver.sweeps", 4usize)?;
        let tol = f.or_derived("solver.tol", 1e-10)?;
        let regularization = f.or_derived("solver.regularization", 1e-12)?;
        let rho_schedule = match f.take("solver.rho_schedule") {
            Some(s) => s
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!(
                            "field 'solver.rho_schedule': cannot parse '{t}'"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
            None => {
                let v = vec![1e1, 1e2, 1e3, 1e4];
                f.derived.push((
                    "solver.rho_schedule".into(),
                    "10,100,1000,10000".into(),
                ));
                v
            }
        };
        let solver = SolverConfig {
            rank,
            sweeps_per_rho: sweeps,
            rho_schedule,
            convergence_tol: tol,
            regularization,
            seed,
        };
        solver
            .validate()
            .map_err(|e| Error::Config(format!("solver configuration: {e}")))?;

        let validate_relative_error = f.or_default("validation.relative_error", dw)?;
        let mc_samples = f.or_derived("validation.mc_samples", 1_000_000usize)?;
        let validate_isosurface = f.or_default("validation.isosurface", !dw)?;
        let iso_eps = f.or_derived("validation.eps", 5e-3)?;
        let iso_n_s = f.or_derived("validation.n_s", 200usize)?;
        let iso_n_t = f.or_derived("validation.n_t", 100usize)?;
        let dt = f.or_derived("validation.dt", if dw { 1e-4 * beta } else { 1e-5 })?;
        let max_steps = f.or_derived("validation.max_steps", 10_000_000usize)?;
        let iso_burn_in = f.or_default("validation.burn_in", 10_000)?;
        let iso_thinning = f.or_default("validation.thinning", 50)?;
        let iso_step_budget = f.or_default("validation.step_budget", 200_000_000)?;

        // Reject unknown keys with the offending field name.
        for key in f.map.keys() {
            if !f.used.contains(key) {
                return Err(Error::Config(format!("unknown field '{key}'")));
            }
        }

        // Canonical text: sorted key = value lines of the *explicit* fields.
        let mut canonical = String::new();
        for (k, v) in &f.map {
            let _ = writeln!(canonical, "{k} = {v}");
        }

        Ok(RunConfig {
            experiment,
            dimension,
            temperature,
            seed,
            output_dir,
            basis_size,
            gamma,
            quad_order,
            boundary_sigma,
            boundary_offset_a,
            boundary_offset_b,
            gl_lambda,
            gl_coupling_h,
            gl_truncation,
            gl_n_cheb,
            ball_radius,
            solver,
            validate_relative_error,
            mc_samples,
            validate_isosurface,
            iso_eps,
            iso_n_s,
            iso_n_t,
            dt,
            max_steps,
            iso_burn_in,
            iso_thinning,
            iso_step_budget,
            derived: f.derived,
            canonical,
        })
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read '{}': {e}", path.as_ref().display()))
        })?;
        Self::from_text(&text)
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }

    /// SHA-256 of the canonicalized (sorted, normalized) explicit settings.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Reproducibility manifest: config hash, code version, and every
    /// derived default.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "config_hash = {}", self.config_hash());
        let _ = writeln!(out, "code_version = {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "experiment = {}", self.experiment.tag());
        let _ = writeln!(out, "seed = {}", self.seed);
        for (k, v) in &self.derived {
            let _ = writeln!(out, "derived.{k} = {v}");
        }
        out
    }
}
