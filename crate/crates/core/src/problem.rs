//! Problem files and the built-in corpus.
//!
//! A problem file is TOML with the sections `[system]`, `[params]`,
//! `[extrinsic]`, `[curve]`, `[solve]` and `[numerics]`. Only `[system]`
//! is required.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::curve::{
    integrate_admissible, sample_analytic, ArcControl, ControlPath, PiecewiseCurve, DEFAULT_DENSITY,
};
use crate::error::{Error, Result};
use crate::expr::{parse_with_params, Expr};
use crate::extremal::ShootOptions;
use crate::system::{ControlSystem, ExtrinsicProblem};

const BUILTINS: &[(&str, &str)] = &[
    ("appb1", include_str!("../corpus/appb1.toml")),
    ("appb1-arc1", include_str!("../corpus/appb1-arc1.toml")),
    ("appb1-arc2", include_str!("../corpus/appb1-arc2.toml")),
    (
        "appb1-perturbed",
        include_str!("../corpus/appb1-perturbed.toml"),
    ),
    ("appb2", include_str!("../corpus/appb2.toml")),
    ("appb2-arc1", include_str!("../corpus/appb2-arc1.toml")),
    ("appb2-arc2", include_str!("../corpus/appb2-arc2.toml")),
    ("appb3", include_str!("../corpus/appb3.toml")),
    ("double-well", include_str!("../corpus/double-well.toml")),
    (
        "free-particle",
        include_str!("../corpus/free-particle.toml"),
    ),
    ("holonomic", include_str!("../corpus/holonomic.toml")),
    ("pendulum", include_str!("../corpus/pendulum.toml")),
    ("unit-speed", include_str!("../corpus/unit-speed.toml")),
    ("unreachable", include_str!("../corpus/unreachable.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    system: RawSystem,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    extrinsic: Option<RawExtrinsic>,
    curve: Option<RawCurve>,
    solve: Option<RawSolve>,
    #[serde(default)]
    numerics: Numerics,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: Option<usize>,
    r: Option<usize>,
    states: Vec<String>,
    controls: Vec<String>,
    psi: Vec<String>,
    #[serde(default = "zero")]
    lagrangian: String,
}

fn zero() -> String {
    "0".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExtrinsic {
    free_lagrangian: String,
    #[serde(default)]
    constraints: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCurve {
    #[serde(default = "integrate_mode")]
    mode: String,
    breaks: Option<Vec<f64>>,
    q0: Option<Vec<f64>>,
    controls: Option<Vec<Vec<String>>>,
    q: Option<Vec<Vec<String>>>,
    z: Option<Vec<Vec<String>>>,
    file: Option<String>,
    density: Option<f64>,
}

fn integrate_mode() -> String {
    "integrate".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolve {
    t0: f64,
    t1: f64,
    q_start: Vec<f64>,
    q_end: Vec<f64>,
    corners: Option<usize>,
    corner_times: Option<Vec<f64>>,
    z_seeds: Vec<Vec<f64>>,
    p_guess: Option<Vec<f64>>,
}

/// Tolerances and grid settings.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Relative SVD tolerance for rank decisions.
    pub svd_tol: f64,
    pub admissibility_tol: f64,
    /// Residual acceptance threshold.
    pub acceptance_tol: f64,
    pub newton_tol: f64,
    /// Grid steps per unit time.
    pub density: f64,
    pub max_iter: usize,
    /// Corner weights for the Gram matrix.
    pub alphas: Option<Vec<f64>>,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            svd_tol: crate::abnormality::DEFAULT_TOL,
            admissibility_tol: crate::abnormality::DEFAULT_ADMISSIBILITY_TOL,
            acceptance_tol: crate::extremal::ACCEPTANCE_TOL,
            newton_tol: 1e-8,
            density: DEFAULT_DENSITY,
            max_iter: 100,
            alphas: None,
        }
    }
}

/// How the `[curve]` section describes the curve.
#[derive(Clone, Debug)]
pub enum CurveSpec {
    Integrate {
        breaks: Vec<f64>,
        q0: DVector<f64>,
        controls: ControlPath,
        density: f64,
    },
    Analytic {
        breaks: Vec<f64>,
        q: Vec<Vec<Expr>>,
        z: Vec<Vec<Expr>>,
        density: f64,
    },
    Csv(PathBuf),
}

/// A loaded problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub system: ControlSystem,
    pub extrinsic: Option<ExtrinsicProblem>,
    pub curve: Option<CurveSpec>,
    pub solve: Option<ShootOptions>,
    pub numerics: Numerics,
}

fn exprs(src: &[String], params: &[&String], what: &str) -> Result<Vec<Expr>> {
    src.iter()
        .enumerate()
        .map(|(i, s)| {
            parse_with_params(s, params)
                .map_err(|e| Error::Problem(format!("{what}[{}]: {e}", i + 1)))
        })
        .collect()
}

fn vector(v: &[f64], n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::Problem(format!(
            "{what} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl Problem {
    pub fn builtin(name: &str) -> Result<Problem> {
        let src = builtin_source(name).ok_or_else(|| {
            Error::Problem(format!(
                "unknown builtin `{name}` (available: {})",
                builtin_names().join(", ")
            ))
        })?;
        Problem::from_toml_str(src, None)
    }

    pub fn from_file(path: &Path) -> Result<Problem> {
        let text = std::fs::read_to_string(path)?;
        Problem::from_toml_str(&text, path.parent())
    }

    /// Parses problem text; relative CSV paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Problem> {
        let raw: RawProblem = toml::from_str(text).map_err(|e| Error::Problem(e.to_string()))?;
        let sys_raw = &raw.system;
        let n = sys_raw.n.unwrap_or(sys_raw.states.len());
        let r = sys_raw.r.unwrap_or(sys_raw.controls.len());
        if sys_raw.states.len() != n {
            return Err(Error::Problem(format!(
                "state count {} ≠ n {n}",
                sys_raw.states.len()
            )));
        }
        if sys_raw.controls.len() != r {
            return Err(Error::Problem(format!(
                "control count {} ≠ r {r}",
                sys_raw.controls.len()
            )));
        }
        if sys_raw.psi.len() != n {
            return Err(Error::Problem(format!(
                "psi count {} ≠ n {n}",
                sys_raw.psi.len()
            )));
        }
        let names: Vec<&String> = raw.params.keys().collect();
        let psi = exprs(&sys_raw.psi, &names, "psi")?;
        let lagrangian = parse_with_params(&sys_raw.lagrangian, &names)
            .map_err(|e| Error::Problem(format!("lagrangian: {e}")))?;
        let system = ControlSystem::new(
            sys_raw.states.clone(),
            sys_raw.controls.clone(),
            psi,
            lagrangian,
            raw.params.clone(),
        )?;

        let extrinsic = match &raw.extrinsic {
            None => None,
            Some(e) => {
                let free = parse_with_params(&e.free_lagrangian, &names)
                    .map_err(|err| Error::Problem(format!("free_lagrangian: {err}")))?;
                let g = exprs(&e.constraints, &names, "constraints")?;
                Some(ExtrinsicProblem::new(
                    sys_raw.states.clone(),
                    free,
                    g,
                    raw.params.clone(),
                )?)
            }
        };

        let numerics = raw.numerics;
        let curve = match &raw.curve {
            None => None,
            Some(c) => Some(curve_spec(c, &system, &names, base_dir, numerics.density)?),
        };

        let solve = match &raw.solve {
            None => None,
            Some(s) => Some(solve_options(s, &system, &numerics)?),
        };

        Ok(Problem {
            system,
            extrinsic,
            curve,
            solve,
            numerics,
        })
    }

    /// Builds the curve of the `[curve]` section.
    pub fn build_curve(&self) -> Result<PiecewiseCurve> {
        let spec = self
            .curve
            .as_ref()
            .ok_or_else(|| Error::Problem("problem has no [curve] section".into()))?;
        let sys = &self.system;
        match spec {
            CurveSpec::Integrate {
                breaks,
                q0,
                controls,
                density,
            } => Ok(integrate_admissible(sys, controls, q0, breaks, *density)?.curve),
            CurveSpec::Analytic {
                breaks,
                q,
                z,
                density,
            } => {
                let params: HashMap<String, f64> =
                    sys.params().iter().map(|(k, v)| (k.clone(), *v)).collect();
                sample_analytic(&params, breaks, q, z, *density)
            }
            CurveSpec::Csv(path) => {
                PiecewiseCurve::from_csv(&std::fs::read_to_string(path)?, sys.n(), sys.r())
            }
        }
    }
}

fn curve_spec(
    c: &RawCurve,
    sys: &ControlSystem,
    names: &[&String],
    base_dir: Option<&Path>,
    density: f64,
) -> Result<CurveSpec> {
    let density = c.density.unwrap_or(density);
    let need = |v: &Option<Vec<f64>>, what: &str| {
        v.clone()
            .ok_or_else(|| Error::Problem(format!("[curve] needs `{what}`")))
    };
    let per_arc =
        |rows: &Option<Vec<Vec<String>>>, width: usize, what: &str| -> Result<Vec<Vec<Expr>>> {
            let rows = rows
                .as_ref()
                .ok_or_else(|| Error::Problem(format!("[curve] needs `{what}`")))?;
            rows.iter()
                .enumerate()
                .map(|(s, row)| {
                    if row.len() != width {
                        return Err(Error::Problem(format!(
                            "[curve] {what} for arc {} has {} entries, expected {width}",
                            s + 1,
                            row.len()
                        )));
                    }
                    exprs(row, names, what)
                })
                .collect()
        };
    match c.mode.as_str() {
        "integrate" => {
            let breaks = need(&c.breaks, "breaks")?;
            let controls = per_arc(&c.controls, sys.r(), "controls")?;
            Ok(CurveSpec::Integrate {
                q0: vector(&need(&c.q0, "q0")?, sys.n(), "q0")?,
                controls: ControlPath {
                    arcs: controls.into_iter().map(ArcControl::Expressions).collect(),
                },
                breaks,
                density,
            })
        }
        "analytic" => Ok(CurveSpec::Analytic {
            breaks: need(&c.breaks, "breaks")?,
            q: per_arc(&c.q, sys.n(), "q")?,
            z: per_arc(&c.z, sys.r(), "z")?,
            density,
        }),
        "csv" => {
            let file = c
                .file
                .as_ref()
                .ok_or_else(|| Error::Problem("[curve] needs `file`".into()))?;
            let path = match base_dir {
                Some(dir) => dir.join(file),
                None => PathBuf::from(file),
            };
            Ok(CurveSpec::Csv(path))
        }
        other => Err(Error::Problem(format!("unknown curve mode `{other}`"))),
    }
}

fn solve_options(s: &RawSolve, sys: &ControlSystem, numerics: &Numerics) -> Result<ShootOptions> {
    let (n, r) = (sys.n(), sys.r());
    let corners = match (&s.corner_times, s.corners) {
        (Some(times), Some(k)) if times.len() != k => {
            return Err(Error::Problem(format!(
                "{} corner times for {k} corners",
                times.len()
            )));
        }
        (Some(times), _) => times.clone(),
        (None, Some(k)) => (1..=k)
            .map(|i| s.t0 + (s.t1 - s.t0) * i as f64 / (k + 1) as f64)
            .collect(),
        (None, None) => Vec::new(),
    };
    if s.z_seeds.len() != corners.len() + 1 {
        return Err(Error::Problem(format!(
            "{} z seeds for {} arcs",
            s.z_seeds.len(),
            corners.len() + 1
        )));
    }
    let seeds = s
        .z_seeds
        .iter()
        .map(|z| vector(z, r, "z seed"))
        .collect::<Result<Vec<_>>>()?;
    let mut o = ShootOptions::new(
        s.t0,
        s.t1,
        vector(&s.q_start, n, "q_start")?,
        vector(&s.q_end, n, "q_end")?,
        seeds[0].clone(),
    );
    o.corners = corners;
    o.z_seeds = seeds;
    if let Some(p) = &s.p_guess {
        o.p_guess = vector(p, n, "p_guess")?;
    }
    o.density = numerics.density;
    o.max_iter = numerics.max_iter;
    o.tol = numerics.newton_tol;
    Ok(o)
}
