//! Control systems `q' = psi(t, q, z)` with a Lagrangian `L(t, q, z)`, and
//! the extrinsic form `g(t, q, q') = 0` with a free Lagrangian.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{parse_with_params, CompiledExpr, Expr};
use crate::numeric;

/// Default relative tolerance for [`ControlSystem::check_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// All first derivatives of `psi` and `L` at one point.
#[derive(Clone, Debug)]
pub struct JacobianBundle {
    pub psi: DVector<f64>,
    /// `psi_q[(i, k)] = d psi^i / d q^k`
    pub psi_q: DMatrix<f64>,
    /// `psi_z[(i, a)] = d psi^i / d z^a`
    pub psi_z: DMatrix<f64>,
    pub psi_t: DVector<f64>,
    pub lagrangian: f64,
    pub lagrangian_q: DVector<f64>,
    pub lagrangian_z: DVector<f64>,
    pub lagrangian_t: f64,
}

#[derive(Clone, Debug)]
pub struct RankCheck {
    pub full_rank: bool,
    /// Singular values of `d psi / d z`, decreasing.
    pub singular_values: Vec<f64>,
}

#[derive(Debug)]
struct Compiled {
    psi: Vec<CompiledExpr>,
    psi_q: Vec<Vec<CompiledExpr>>,
    psi_z: Vec<Vec<CompiledExpr>>,
    psi_t: Vec<CompiledExpr>,
    // psi_zz[i][a][b], b >= a
    psi_zz: Vec<Vec<Vec<CompiledExpr>>>,
    lag: CompiledExpr,
    lag_q: Vec<CompiledExpr>,
    lag_z: Vec<CompiledExpr>,
    lag_t: CompiledExpr,
    lag_zz: Vec<Vec<CompiledExpr>>,
}

/// Control system with its Lagrangian. Immutable; cheap to clone.
#[derive(Clone, Debug)]
pub struct ControlSystem {
    states: Vec<String>,
    controls: Vec<String>,
    psi: Vec<Expr>,
    lagrangian: Expr,
    params: BTreeMap<String, f64>,
    compiled: Arc<Compiled>,
}

fn compile(e: &Expr, slots: &[String], params: &HashMap<String, f64>) -> Result<CompiledExpr> {
    if e.is_zero() {
        return Ok(CompiledExpr::constant(0.0));
    }
    Ok(CompiledExpr::compile(e, slots, params)?)
}

fn check_names(names: &[String], kind: &str) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        let valid = n
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(Error::Problem(format!("invalid {kind} name `{n}`")));
        }
        if n == "t" {
            return Err(Error::Problem(format!(
                "{kind} name `t` is reserved for time"
            )));
        }
        if names[..i].contains(n) {
            return Err(Error::Problem(format!("duplicate {kind} name `{n}`")));
        }
    }
    Ok(())
}

fn check_free_variables(e: &Expr, allowed: &[String], what: &str) -> Result<()> {
    for v in e.variables() {
        if !allowed.contains(&v) {
            return Err(Error::Problem(format!("{what}: unknown symbol `{v}`")));
        }
    }
    Ok(())
}

impl ControlSystem {
    /// Builds a system from source strings. Identifiers in `params` are
    /// parameters; everything else must be `t`, a state or a control.
    pub fn parse(
        states: &[&str],
        controls: &[&str],
        psi: &[&str],
        lagrangian: &str,
        params: &[(&str, f64)],
    ) -> Result<Self> {
        let names: Vec<&str> = params.iter().map(|(k, _)| *k).collect();
        let psi = psi
            .iter()
            .map(|s| parse_with_params(s, &names))
            .collect::<Result<Vec<_>, _>>()?;
        let lagrangian = parse_with_params(lagrangian, &names)?;
        Self::new(
            states.iter().map(|s| s.to_string()).collect(),
            controls.iter().map(|s| s.to_string()).collect(),
            psi,
            lagrangian,
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
    }

    pub fn new(
        states: Vec<String>,
        controls: Vec<String>,
        psi: Vec<Expr>,
        lagrangian: Expr,
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        let n = states.len();
        let r = controls.len();
        if n == 0 {
            return Err(Error::Problem("system needs at least one state".into()));
        }
        if r > n {
            return Err(Error::Problem(format!("control count {r} exceeds n {n}")));
        }
        if psi.len() != n {
            return Err(Error::Problem(format!("psi count {} ≠ n {n}", psi.len())));
        }
        check_names(&states, "state")?;
        check_names(&controls, "control")?;
        for c in &controls {
            if states.contains(c) {
                return Err(Error::Problem(format!(
                    "`{c}` is both a state and a control"
                )));
            }
        }
        let slots: Vec<String> = std::iter::once("t".to_string())
            .chain(states.iter().cloned())
            .chain(controls.iter().cloned())
            .collect();
        for (i, e) in psi.iter().enumerate() {
            check_free_variables(e, &slots, &format!("psi[{}]", i + 1))?;
        }
        check_free_variables(&lagrangian, &slots, "lagrangian")?;
        let hp: HashMap<String, f64> = params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let c = |e: &Expr| compile(e, &slots, &hp);
        let d = |e: &Expr, v: &str| compile(&e.differentiate(v), &slots, &hp);

        let mut psi_zz = Vec::with_capacity(n);
        for e in &psi {
            let mut rows = Vec::with_capacity(r);
            for a in 0..r {
                let da = e.differentiate(&controls[a]);
                let row = (a..r)
                    .map(|b| compile(&da.differentiate(&controls[b]), &slots, &hp))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
            psi_zz.push(rows);
        }
        let mut lag_zz = Vec::with_capacity(r);
        for a in 0..r {
            let da = lagrangian.differentiate(&controls[a]);
            lag_zz.push(
                (a..r)
                    .map(|b| compile(&da.differentiate(&controls[b]), &slots, &hp))
                    .collect::<Result<Vec<_>>>()?,
            );
        }

        let compiled = Compiled {
            psi: psi.iter().map(c).collect::<Result<_>>()?,
            psi_q: psi
                .iter()
                .map(|e| states.iter().map(|s| d(e, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
            psi_z: psi
                .iter()
                .map(|e| controls.iter().map(|s| d(e, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
            psi_t: psi.iter().map(|e| d(e, "t")).collect::<Result<_>>()?,
            psi_zz,
            lag: c(&lagrangian)?,
            lag_q: states
                .iter()
                .map(|s| d(&lagrangian, s))
                .collect::<Result<_>>()?,
            lag_z: controls
                .iter()
                .map(|s| d(&lagrangian, s))
                .collect::<Result<_>>()?,
            lag_t: d(&lagrangian, "t")?,
            lag_zz,
        };
        Ok(ControlSystem {
            states,
            controls,
            psi,
            lagrangian,
            params,
            compiled: Arc::new(compiled),
        })
    }

    /// Same constraint map, different Lagrangian.
    pub fn with_lagrangian(&self, lagrangian: Expr) -> Result<Self> {
        Self::new(
            self.states.clone(),
            self.controls.clone(),
            self.psi.clone(),
            lagrangian,
            self.params.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn r(&self) -> usize {
        self.controls.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn controls(&self) -> &[String] {
        &self.controls
    }

    pub fn psi_exprs(&self) -> &[Expr] {
        &self.psi
    }

    pub fn lagrangian_expr(&self) -> &Expr {
        &self.lagrangian
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    fn slots(&self, t: f64, q: &DVector<f64>, z: &DVector<f64>) -> Result<Vec<f64>> {
        if q.len() != self.n() || z.len() != self.r() {
            return Err(Error::Dimension(format!(
                "expected |q| = {}, |z| = {}, got {} and {}",
                self.n(),
                self.r(),
                q.len(),
                z.len()
            )));
        }
        let mut s = Vec::with_capacity(1 + q.len() + z.len());
        s.push(t);
        s.extend(q.iter());
        s.extend(z.iter());
        Ok(s)
    }

    /// `psi(t, q, z)` only.
    pub fn psi(&self, t: f64, q: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.slots(t, q, z)?;
        let v = DVector::from_iterator(self.n(), self.compiled.psi.iter().map(|e| e.eval(&s)));
        finite_vec(&v, "psi", t)?;
        Ok(v)
    }

    /// `L(t, q, z)` only.
    pub fn lagrangian(&self, t: f64, q: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
        let s = self.slots(t, q, z)?;
        let v = self.compiled.lag.eval(&s);
        finite(v, "lagrangian", t)?;
        Ok(v)
    }

    /// Values and first derivatives of `psi` and `L` at a point.
    pub fn evaluate_point(
        &self,
        t: f64,
        q: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<JacobianBundle> {
        let (n, r) = (self.n(), self.r());
        let s = self.slots(t, q, z)?;
        let c = &self.compiled;
        let b = JacobianBundle {
            psi: DVector::from_iterator(n, c.psi.iter().map(|e| e.eval(&s))),
            psi_q: DMatrix::from_fn(n, n, |i, k| c.psi_q[i][k].eval(&s)),
            psi_z: DMatrix::from_fn(n, r, |i, a| c.psi_z[i][a].eval(&s)),
            psi_t: DVector::from_iterator(n, c.psi_t.iter().map(|e| e.eval(&s))),
            lagrangian: c.lag.eval(&s),
            lagrangian_q: DVector::from_iterator(n, c.lag_q.iter().map(|e| e.eval(&s))),
            lagrangian_z: DVector::from_iterator(r, c.lag_z.iter().map(|e| e.eval(&s))),
            lagrangian_t: c.lag_t.eval(&s),
        };
        finite_vec(&b.psi, "psi", t)?;
        finite_mat(&b.psi_q, "d psi/dq", t)?;
        finite_mat(&b.psi_z, "d psi/dz", t)?;
        finite_vec(&b.psi_t, "d psi/dt", t)?;
        finite(b.lagrangian, "lagrangian", t)?;
        finite_vec(&b.lagrangian_q, "dL/dq", t)?;
        finite_vec(&b.lagrangian_z, "dL/dz", t)?;
        finite(b.lagrangian_t, "dL/dt", t)?;
        Ok(b)
    }

    /// Rank test of `d psi / d z`: the r-th singular value must exceed
    /// `tol` times the largest (or `tol` when the matrix vanishes).
    pub fn check_rank(
        &self,
        t: f64,
        q: &DVector<f64>,
        z: &DVector<f64>,
        tol: f64,
    ) -> Result<RankCheck> {
        let b = self.evaluate_point(t, q, z)?;
        let sv = numeric::singular_values(&b.psi_z);
        let r = self.r();
        if r == 0 {
            return Ok(RankCheck {
                full_rank: true,
                singular_values: sv,
            });
        }
        let scale = sv.first().copied().filter(|&s| s > 0.0).unwrap_or(1.0);
        let full_rank = sv.len() >= r && sv[r - 1] > tol * scale;
        Ok(RankCheck {
            full_rank,
            singular_values: sv,
        })
    }

    /// `d^2 H / dz dz` for `H = p . psi - L`, assembled from its upper
    /// triangle so the result is exactly symmetric.
    pub fn pontryagin_hessian(
        &self,
        t: f64,
        q: &DVector<f64>,
        z: &DVector<f64>,
        p: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let (n, r) = (self.n(), self.r());
        if p.len() != n {
            return Err(Error::Dimension(format!(
                "expected |p| = {n}, got {}",
                p.len()
            )));
        }
        let s = self.slots(t, q, z)?;
        let c = &self.compiled;
        let mut h = DMatrix::zeros(r, r);
        for a in 0..r {
            for b in a..r {
                let mut v = -c.lag_zz[a][b - a].eval(&s);
                for i in 0..n {
                    let e = &c.psi_zz[i][a][b - a];
                    if !e.is_constant_zero() {
                        v += p[i] * e.eval(&s);
                    }
                }
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        finite_mat(&h, "pontryagin hessian", t)?;
        Ok(h)
    }
}

fn finite(v: f64, what: &str, t: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            t,
        })
    }
}

fn finite_vec(v: &DVector<f64>, what: &str, t: f64) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            what: format!("{what}[{}]", i + 1),
            t,
        }),
    }
}

fn finite_mat(m: &DMatrix<f64>, what: &str, t: f64) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    what: format!("{what}[{},{}]", i + 1, j + 1),
                    t,
                });
            }
        }
    }
    Ok(())
}

/// Values and derivatives of the extrinsic data at `(t, q, q')`.
#[derive(Clone, Debug)]
pub struct ExtrinsicBundle {
    pub lagrangian: f64,
    pub lagrangian_q: DVector<f64>,
    pub lagrangian_qdot: DVector<f64>,
    /// `g[s]`
    pub g: DVector<f64>,
    /// `g_q[(s, k)] = d g_s / d q^k`
    pub g_q: DMatrix<f64>,
    /// `g_qdot[(s, k)] = d g_s / d q'^k`
    pub g_qdot: DMatrix<f64>,
}

#[derive(Debug)]
struct ExtrinsicCompiled {
    lag: CompiledExpr,
    lag_q: Vec<CompiledExpr>,
    lag_qdot: Vec<CompiledExpr>,
    g: Vec<CompiledExpr>,
    g_q: Vec<Vec<CompiledExpr>>,
    g_qdot: Vec<Vec<CompiledExpr>>,
}

/// Free Lagrangian `L(t, q, q')` with constraints `g_s(t, q, q') = 0`.
/// Velocity variables are named `<state>_dot`.
#[derive(Clone, Debug)]
pub struct ExtrinsicProblem {
    states: Vec<String>,
    free_lagrangian: Expr,
    constraints: Vec<Expr>,
    params: BTreeMap<String, f64>,
    compiled: Arc<ExtrinsicCompiled>,
}

/// Name of the velocity variable belonging to `state`.
pub fn velocity_name(state: &str) -> String {
    format!("{state}_dot")
}

impl ExtrinsicProblem {
    pub fn parse(
        states: &[&str],
        free_lagrangian: &str,
        constraints: &[&str],
        params: &[(&str, f64)],
    ) -> Result<Self> {
        let names: Vec<&str> = params.iter().map(|(k, _)| *k).collect();
        let g = constraints
            .iter()
            .map(|s| parse_with_params(s, &names))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            states.iter().map(|s| s.to_string()).collect(),
            parse_with_params(free_lagrangian, &names)?,
            g,
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        )
    }

    pub fn new(
        states: Vec<String>,
        free_lagrangian: Expr,
        constraints: Vec<Expr>,
        params: BTreeMap<String, f64>,
    ) -> Result<Self> {
        check_names(&states, "state")?;
        let n = states.len();
        if constraints.len() > n {
            return Err(Error::Problem(format!(
                "constraint count {} exceeds n {n}",
                constraints.len()
            )));
        }
        let dots: Vec<String> = states.iter().map(|s| velocity_name(s)).collect();
        let slots: Vec<String> = std::iter::once("t".to_string())
            .chain(states.iter().cloned())
            .chain(dots.iter().cloned())
            .collect();
        check_free_variables(&free_lagrangian, &slots, "free lagrangian")?;
        for (i, g) in constraints.iter().enumerate() {
            check_free_variables(g, &slots, &format!("constraint[{}]", i + 1))?;
        }
        let hp: HashMap<String, f64> = params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let d = |e: &Expr, v: &str| compile(&e.differentiate(v), &slots, &hp);
        let compiled = ExtrinsicCompiled {
            lag: compile(&free_lagrangian, &slots, &hp)?,
            lag_q: states
                .iter()
                .map(|s| d(&free_lagrangian, s))
                .collect::<Result<_>>()?,
            lag_qdot: dots
                .iter()
                .map(|s| d(&free_lagrangian, s))
                .collect::<Result<_>>()?,
            g: constraints
                .iter()
                .map(|g| compile(g, &slots, &hp))
                .collect::<Result<_>>()?,
            g_q: constraints
                .iter()
                .map(|g| states.iter().map(|s| d(g, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
            g_qdot: constraints
                .iter()
                .map(|g| dots.iter().map(|s| d(g, s)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?,
        };
        Ok(ExtrinsicProblem {
            states,
            free_lagrangian,
            constraints,
            params,
            compiled: Arc::new(compiled),
        })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    /// Number of constraints `n - r`.
    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn free_lagrangian(&self) -> &Expr {
        &self.free_lagrangian
    }

    pub fn constraints(&self) -> &[Expr] {
        &self.constraints
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn evaluate(
        &self,
        t: f64,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<ExtrinsicBundle> {
        let n = self.n();
        let m = self.constraint_count();
        if q.len() != n || qdot.len() != n {
            return Err(Error::Dimension(format!(
                "expected |q| = |q'| = {n}, got {} and {}",
                q.len(),
                qdot.len()
            )));
        }
        let mut s = Vec::with_capacity(1 + 2 * n);
        s.push(t);
        s.extend(q.iter());
        s.extend(qdot.iter());
        let c = &self.compiled;
        let b = ExtrinsicBundle {
            lagrangian: c.lag.eval(&s),
            lagrangian_q: DVector::from_iterator(n, c.lag_q.iter().map(|e| e.eval(&s))),
            lagrangian_qdot: DVector::from_iterator(n, c.lag_qdot.iter().map(|e| e.eval(&s))),
            g: DVector::from_iterator(m, c.g.iter().map(|e| e.eval(&s))),
            g_q: DMatrix::from_fn(m, n, |a, k| c.g_q[a][k].eval(&s)),
            g_qdot: DMatrix::from_fn(m, n, |a, k| c.g_qdot[a][k].eval(&s)),
        };
        finite(b.lagrangian, "free lagrangian", t)?;
        finite_vec(&b.lagrangian_q, "dL/dq", t)?;
        finite_vec(&b.lagrangian_qdot, "dL/dq'", t)?;
        finite_vec(&b.g, "g", t)?;
        finite_mat(&b.g_q, "dg/dq", t)?;
        finite_mat(&b.g_qdot, "dg/dq'", t)?;
        Ok(b)
    }
}
