//! JSON run configuration, schema version 1.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use cri_core::functionals::{FunctionalError, PotentialTuple, VolumeConvention};
use cri_core::grid::{read_field_file, PeriodicGrid, ScalarField, SymMat};
use cri_core::iteration::{IterationConfig, SweepMode};
use cri_core::monge_ampere::{BackgroundGeometry, InnerOptions, NormMode, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::expr::Expr;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum RawField {
    Expression(String),
    File { file: String },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum RawInit {
    Named(String),
    Files { files: Vec<String> },
    Random { random: RawRandom },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRandom {
    amplitude: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cri_config: Option<u32>,
    name: Option<String>,
    description: Option<String>,
    lambda: f64,
    n: usize,
    #[serde(rename = "N")]
    points: usize,
    k: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    f: RawField,
    init: Option<RawInit>,
    mode: Option<String>,
    norm_mode: Option<String>,
    tol_fixed_point: Option<f64>,
    max_outer: Option<usize>,
    tol_inner: Option<f64>,
    max_newton: Option<usize>,
    dt0: Option<f64>,
    dt_min: Option<f64>,
    record_every: Option<usize>,
    reverse_order: Option<bool>,
    output_dir: Option<String>,
    seed: Option<u64>,
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub max_outer: Option<usize>,
    pub mode: Option<String>,
    pub tol: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum FieldSpec {
    Expression { source: String, expr: Expr },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    Zero,
    Files(Vec<PathBuf>),
    /// Random trigonometric potentials with the given sup-norm, drawn from `seed`.
    Random { amplitude: f64 },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub name: String,
    pub description: Option<String>,
    pub lambda: Sign,
    pub n: usize,
    pub points: usize,
    pub k: usize,
    pub backgrounds: Vec<SymMat>,
    pub f: FieldSpec,
    pub init: InitSpec,
    pub iteration: IterationConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    geom: BackgroundGeometry,
    init_fields: Vec<ScalarField>,
}

impl RunConfig {
    pub fn geometry(&self) -> &BackgroundGeometry {
        &self.geom
    }

    pub fn initial_tuple(&self) -> PotentialTuple {
        PotentialTuple::new(&self.geom, self.init_fields.clone()).expect("checked during validation")
    }

    /// The same geometry on a grid with `points` per axis. Expressions are
    /// re-evaluated; field files are subsampled when `points` divides `N`.
    pub fn geometry_at(&self, points: usize) -> Result<BackgroundGeometry, String> {
        let grid = PeriodicGrid::new(self.n, points).map_err(|e| e.to_string())?;
        let f = match &self.f {
            FieldSpec::Expression { expr, .. } => ScalarField::from_fn(grid, |x| expr.eval(x)).map_err(|e| e.to_string())?,
            FieldSpec::File(_) => {
                if points > self.points || self.points % points != 0 {
                    return Err(format!("cannot subsample a field on N={} to N={points}", self.points));
                }
                let stride = self.points / points;
                let fine = self.geom.grid();
                let values = (0..grid.len())
                    .map(|p| {
                        let mut q = 0;
                        for axis in 0..self.n {
                            q = q * self.points + grid.coordinate_index(p, axis) * stride;
                        }
                        debug_assert!(q < fine.len());
                        self.geom.f().values()[q]
                    })
                    .collect();
                ScalarField::new(grid, values).map_err(|e| e.to_string())?
            }
        };
        BackgroundGeometry::new(self.lambda, self.backgrounds.clone(), f).map_err(|e| e.to_string())
    }
}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    parse_config_str(&text, base, stem, overrides)
}

/// Parses config text; relative file paths resolve against `base`, and `default_name`
/// names the run when the config has no `name`.
pub fn parse_config_str(text: &str, base: &Path, default_name: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate(raw, base, default_name, overrides)
}

fn parse_mode(s: &str) -> Option<SweepMode> {
    match s {
        "gauss_seidel" | "gauss-seidel" | "gs" => Some(SweepMode::GaussSeidel),
        "jacobi" => Some(SweepMode::Jacobi),
        _ => None,
    }
}

fn validate(raw: RawConfig, base: &Path, default_name: &str, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let mut errs: Vec<String> = Vec::new();
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };

    // a missing version is read as version 1
    if let Some(v) = raw.cri_config {
        if v != SCHEMA_VERSION {
            errs.push(format!("unsupported cri_config version {v} (expected {SCHEMA_VERSION})"));
        }
    }
    let lambda = Sign::from_value(raw.lambda);
    if lambda.is_none() {
        errs.push(format!("lambda must be -1 or 1, got {}", raw.lambda));
    }
    let grid = match PeriodicGrid::new(raw.n, raw.points) {
        Ok(g) => Some(g),
        Err(e) => {
            errs.push(format!("grid: {e}"));
            None
        }
    };
    if raw.k == 0 {
        errs.push("k must be at least 1".into());
    }
    if raw.a.len() != raw.k {
        errs.push(format!("A lists {} matrices but k = {}", raw.a.len(), raw.k));
    }
    let mut backgrounds = Vec::new();
    for (i, entries) in raw.a.iter().enumerate() {
        if !(1..=3).contains(&raw.n) {
            break;
        }
        match SymMat::from_row_major(raw.n, entries) {
            Ok(m) => backgrounds.push(m),
            Err(e) => errs.push(format!("A_{}: {e}", i + 1)),
        }
    }

    let f_spec = match &raw.f {
        RawField::Expression(src) => match Expr::parse(src) {
            Ok(expr) => {
                if let Some(axis) = expr.max_axis() {
                    if axis >= raw.n {
                        errs.push(format!("f uses x_{} but n = {}", axis + 1, raw.n));
                    }
                }
                Some(FieldSpec::Expression { source: src.clone(), expr })
            }
            Err(e) => {
                errs.push(format!("f: {e}"));
                None
            }
        },
        RawField::File { file } => Some(FieldSpec::File(resolve(file))),
    };
    let f_field = match (&f_spec, grid) {
        (Some(FieldSpec::Expression { expr, .. }), Some(g)) if expr.max_axis().map_or(true, |a| a < raw.n) => {
            match ScalarField::from_fn(g, |x| expr.eval(x)) {
                Ok(f) => Some(f),
                Err(e) => {
                    errs.push(format!("f: {e}"));
                    None
                }
            }
        }
        (Some(FieldSpec::File(path)), Some(g)) => match read_field_file(path) {
            Ok(f) if f.grid() == g => Some(f),
            Ok(f) => {
                errs.push(format!(
                    "f file {} has n={} N={}, config has n={} N={}",
                    path.display(),
                    f.grid().dim(),
                    f.grid().points_per_axis(),
                    g.dim(),
                    g.points_per_axis()
                ));
                None
            }
            Err(e) => {
                errs.push(format!("f file {}: {e}", path.display()));
                None
            }
        },
        _ => None,
    };

    let geom = match (lambda, f_field) {
        (Some(l), Some(f)) if backgrounds.len() == raw.k && raw.k > 0 => match BackgroundGeometry::new(l, backgrounds.clone(), f) {
            Ok(g) => Some(g),
            Err(e) => {
                errs.extend(e.violations.iter().cloned());
                None
            }
        },
        _ => None,
    };

    let seed = raw.seed.unwrap_or(0);
    let init = match &raw.init {
        None => InitSpec::Zero,
        Some(RawInit::Named(s)) if s == "zero" => InitSpec::Zero,
        Some(RawInit::Named(s)) => {
            errs.push(format!("init must be \"zero\", {{\"files\": [...]}} or {{\"random\": {{...}}}}, got {s:?}"));
            InitSpec::Zero
        }
        Some(RawInit::Files { files }) => {
            if files.len() != raw.k {
                errs.push(format!("init lists {} files but k = {}", files.len(), raw.k));
            }
            InitSpec::Files(files.iter().map(|f| resolve(f)).collect())
        }
        Some(RawInit::Random { random }) => {
            if !(random.amplitude.is_finite() && random.amplitude > 0.0) {
                errs.push(format!("init random amplitude must be positive, got {}", random.amplitude));
            }
            InitSpec::Random { amplitude: random.amplitude }
        }
    };
    let init_fields = geom.as_ref().and_then(|geom| match initial_fields(geom, &init, seed) {
        Ok(fields) => Some(fields),
        Err(e) => {
            errs.extend(e);
            None
        }
    });

    let mode_src = ov.mode.clone().or(raw.mode.clone());
    let mode = match mode_src.as_deref().map(|s| (s, parse_mode(s))) {
        None => SweepMode::GaussSeidel,
        Some((_, Some(m))) => m,
        Some((s, None)) => {
            errs.push(format!("mode must be gauss_seidel (gs) or jacobi, got {s:?}"));
            SweepMode::GaussSeidel
        }
    };
    let norm_mode = match raw.norm_mode.as_deref() {
        None | Some("sup") => NormMode::Sup,
        Some("mean") => NormMode::Mean,
        Some(s) => {
            errs.push(format!("norm_mode must be sup or mean, got {s:?}"));
            NormMode::Sup
        }
    };
    let defaults = IterationConfig::default();
    let inner_defaults = InnerOptions::default();
    let iteration = IterationConfig {
        mode,
        norm_mode,
        tol_fixed_point: ov.tol.or(raw.tol_fixed_point).unwrap_or(defaults.tol_fixed_point),
        max_outer: ov.max_outer.or(raw.max_outer).unwrap_or(defaults.max_outer),
        inner: InnerOptions {
            tol: raw.tol_inner.unwrap_or(inner_defaults.tol),
            max_newton: raw.max_newton.unwrap_or(inner_defaults.max_newton),
            dt0: raw.dt0.unwrap_or(inner_defaults.dt0),
            dt_min: raw.dt_min.unwrap_or(inner_defaults.dt_min),
            ..inner_defaults
        },
        record_every: raw.record_every.unwrap_or(defaults.record_every),
        reverse_order: raw.reverse_order.unwrap_or(false),
        convention: VolumeConvention::DiscreteMass,
    };
    if let Err(e) = iteration.validate() {
        errs.extend(e.0);
    }

    if !errs.is_empty() {
        return Err(ConfigError::Validation(errs));
    }
    let name = raw.name.unwrap_or_else(|| default_name.to_string());
    let output_dir = ov
        .out
        .clone()
        .or_else(|| raw.output_dir.as_deref().map(resolve))
        .unwrap_or_else(|| PathBuf::from("runs").join(&name));
    Ok(RunConfig {
        name,
        description: raw.description,
        lambda: lambda.expect("checked"),
        n: raw.n,
        points: raw.points,
        k: raw.k,
        backgrounds,
        f: f_spec.expect("checked"),
        init,
        iteration,
        output_dir,
        seed,
        geom: geom.expect("checked"),
        init_fields: init_fields.expect("checked"),
    })
}

fn initial_fields(geom: &BackgroundGeometry, init: &InitSpec, seed: u64) -> Result<Vec<ScalarField>, Vec<String>> {
    let grid = geom.grid();
    let fields = match init {
        InitSpec::Zero => vec![ScalarField::zeros(grid); geom.k()],
        InitSpec::Files(paths) => {
            let mut errs = Vec::new();
            let mut fields = Vec::new();
            for (i, p) in paths.iter().enumerate() {
                match read_field_file(p) {
                    Ok(f) if f.grid() == grid => fields.push(f),
                    Ok(_) => errs.push(format!("init file {} for class {} is on a different grid", p.display(), i + 1)),
                    Err(e) => errs.push(format!("init file {}: {e}", p.display())),
                }
            }
            if !errs.is_empty() {
                return Err(errs);
            }
            fields
        }
        InitSpec::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..geom.k()).map(|_| random_field(&mut rng, grid, *amplitude)).collect()
        }
    };
    PotentialTuple::new(geom, fields.clone()).map_err(|e| match e {
        FunctionalError::NotAdmissible(na) => vec![format!(
            "initial potential {} is not admissible: det(A + D^2 psi) = {:e} at x = {:?}",
            na.index + 1,
            na.det,
            &grid.position(na.point)[..grid.dim()]
        )],
        other => vec![format!("initial potentials: {other}")],
    })?;
    Ok(fields)
}

/// Sum of a few low trigonometric modes, rescaled to sup-norm `amplitude`.
fn random_field(rng: &mut ChaCha8Rng, grid: PeriodicGrid, amplitude: f64) -> ScalarField {
    let n = grid.dim();
    let modes: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let mut m = [0.0; 3];
            for v in m.iter_mut().take(n) {
                *v = rng.gen_range(-2i32..=2) as f64;
            }
            (m, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0))
        })
        .collect();
    let raw = ScalarField::from_fn(grid, |x| {
        modes.iter().map(|(m, c, ph)| c * (2.0 * PI * (m.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + ph)).sin()).sum()
    })
    .expect("finite");
    let s = raw.sup_norm();
    if s == 0.0 {
        return raw;
    }
    ScalarField::new(grid, raw.values().iter().map(|v| v * amplitude / s).collect()).expect("finite")
}
