//! Piecewise-differentiable admissible curves: sampled arcs joined at corners.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::expr::{CompiledExpr, Expr};
use crate::numeric::{self, derivative4, grid_steps, rk4_step};
use crate::system::ControlSystem;

/// Default integration density, steps per unit time.
pub const DEFAULT_DENSITY: f64 = 400.0;
/// Allowed mismatch of `q` at a corner for externally supplied curves.
pub const CONTINUITY_TOL: f64 = 1e-8;
/// Arcs shorter than this are rejected.
pub const MIN_ARC_LENGTH: f64 = 1e-12;

/// One closed arc sampled on a uniform grid with an even number of steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Arc {
    t_start: f64,
    t_end: f64,
    q: Vec<DVector<f64>>,
    z: Vec<DVector<f64>>,
}

impl Arc {
    pub fn new(
        t_start: f64,
        t_end: f64,
        q: Vec<DVector<f64>>,
        z: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if !(t_end - t_start >= MIN_ARC_LENGTH) {
            return Err(Error::InvalidCurve(format!(
                "degenerate arc [{t_start}, {t_end}]"
            )));
        }
        if q.len() != z.len() {
            return Err(Error::InvalidCurve("q and z sample counts differ".into()));
        }
        let m = q.len().saturating_sub(1);
        if m < 4 || !m.is_multiple_of(2) {
            return Err(Error::InvalidCurve(format!(
                "arc [{t_start}, {t_end}] needs an even step count of at least 4, got {m}"
            )));
        }
        let (n, r) = (q[0].len(), z[0].len());
        for (i, (qi, zi)) in q.iter().zip(&z).enumerate() {
            if qi.len() != n || zi.len() != r {
                return Err(Error::InvalidCurve("inconsistent sample dimensions".into()));
            }
            if qi.iter().chain(zi.iter()).any(|v| !v.is_finite()) {
                let t = t_start + (t_end - t_start) * i as f64 / m as f64;
                return Err(Error::NonFinite {
                    what: "curve sample".into(),
                    t,
                });
            }
        }
        Ok(Arc {
            t_start,
            t_end,
            q,
            z,
        })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    /// Number of grid steps `M` (there are `M + 1` samples).
    pub fn steps(&self) -> usize {
        self.q.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps() as f64
    }

    /// Grid time of sample `i`; the last one is exactly `t_end`.
    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps() {
            self.t_end
        } else {
            self.t_start + i as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|i| self.time(i)).collect()
    }

    pub fn q(&self) -> &[DVector<f64>] {
        &self.q
    }

    pub fn z(&self) -> &[DVector<f64>] {
        &self.z
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let m = self.steps();
        let s = ((t - self.t_start) / self.step()).clamp(0.0, m as f64);
        let i = (s.floor() as usize).min(m - 1);
        (i, s - i as f64)
    }

    /// Control at an off-grid time by cubic Lagrange interpolation.
    pub fn z_at(&self, t: f64) -> DVector<f64> {
        let m = self.steps();
        let (i, _) = self.locate(t);
        let j0 = i.saturating_sub(1).min(m - 3);
        let s = (t - self.t_start) / self.step();
        let mut out = DVector::zeros(self.z[0].len());
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (s - (j0 + b) as f64) / (a as f64 - b as f64);
                }
            }
            out += w * &self.z[j0 + a];
        }
        out
    }

    /// State at an off-grid time by cubic Hermite interpolation, slopes from `psi`.
    pub fn q_at(&self, sys: &ControlSystem, t: f64) -> Result<DVector<f64>> {
        let (i, s) = self.locate(t);
        let h = self.step();
        let (t0, t1) = (self.time(i), self.time(i + 1));
        let d0 = sys.psi(t0, &self.q[i], &self.z[i])?;
        let d1 = sys.psi(t1, &self.q[i + 1], &self.z[i + 1])?;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(h00 * &self.q[i] + (h10 * h) * d0 + h01 * &self.q[i + 1] + (h11 * h) * d1)
    }
}

/// Ordered arcs abutting at corner times.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseCurve {
    arcs: Vec<Arc>,
}

/// Jump of the velocity `[psi]` at corner `corner` (0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct JumpVector {
    pub corner: usize,
    pub time: f64,
    pub jump: DVector<f64>,
}

impl PiecewiseCurve {
    /// Validates abutment and corner continuity within [`CONTINUITY_TOL`].
    pub fn new(arcs: Vec<Arc>) -> Result<Self> {
        Self::with_tolerance(arcs, CONTINUITY_TOL)
    }

    pub fn with_tolerance(arcs: Vec<Arc>, tol: f64) -> Result<Self> {
        if arcs.is_empty() {
            return Err(Error::InvalidCurve("curve has no arcs".into()));
        }
        let (n, r) = (arcs[0].q[0].len(), arcs[0].z[0].len());
        for w in arcs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if a.t_end != b.t_start {
                return Err(Error::InvalidCurve(format!(
                    "arcs do not abut: {} vs {}",
                    a.t_end, b.t_start
                )));
            }
            if b.q[0].len() != n || b.z[0].len() != r {
                return Err(Error::InvalidCurve("arcs have different dimensions".into()));
            }
            let gap = (a.q.last().unwrap() - &b.q[0]).amax();
            if gap > tol {
                return Err(Error::InvalidCurve(format!(
                    "q is discontinuous at corner t = {} (gap {gap:.3e})",
                    a.t_end
                )));
            }
        }
        Ok(PiecewiseCurve { arcs })
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn into_arcs(self) -> Vec<Arc> {
        self.arcs
    }

    pub fn n(&self) -> usize {
        self.arcs[0].q[0].len()
    }

    pub fn r(&self) -> usize {
        self.arcs[0].z[0].len()
    }

    pub fn t0(&self) -> f64 {
        self.arcs[0].t_start
    }

    pub fn t1(&self) -> f64 {
        self.arcs.last().unwrap().t_end
    }

    pub fn corner_times(&self) -> Vec<f64> {
        self.arcs[..self.arcs.len() - 1]
            .iter()
            .map(|a| a.t_end)
            .collect()
    }

    pub fn q_start(&self) -> &DVector<f64> {
        &self.arcs[0].q[0]
    }

    pub fn q_end(&self) -> &DVector<f64> {
        self.arcs.last().unwrap().q.last().unwrap()
    }

    /// Index of the arc containing `t`; at a corner the later arc.
    pub fn arc_index(&self, t: f64) -> usize {
        self.arcs
            .iter()
            .position(|a| t < a.t_end)
            .unwrap_or(self.arcs.len() - 1)
    }

    /// Lift `(q, z)` at any time in `[t0, t1]`; at corners the later branch.
    pub fn lift_at(&self, sys: &ControlSystem, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let arc = &self.arcs[self.arc_index(t)];
        Ok((arc.q_at(sys, t)?, arc.z_at(t)))
    }

    /// Restriction to `[ta, tb]`, resampled at `density` steps per unit time.
    /// Corners strictly inside the window are kept.
    pub fn restrict(&self, sys: &ControlSystem, ta: f64, tb: f64, density: f64) -> Result<Self> {
        if !(ta >= self.t0() && tb <= self.t1() && tb - ta >= MIN_ARC_LENGTH) {
            return Err(Error::InvalidCurve(format!(
                "window [{ta}, {tb}] not inside [{}, {}]",
                self.t0(),
                self.t1()
            )));
        }
        let mut out = Vec::new();
        for arc in &self.arcs {
            let a = arc.t_start.max(ta);
            let b = arc.t_end.min(tb);
            if b - a < MIN_ARC_LENGTH {
                continue;
            }
            let m = grid_steps(b - a, density);
            let mut q = Vec::with_capacity(m + 1);
            let mut z = Vec::with_capacity(m + 1);
            for i in 0..=m {
                let t = if i == m {
                    b
                } else {
                    a + (b - a) * i as f64 / m as f64
                };
                q.push(arc.q_at(sys, t)?);
                z.push(arc.z_at(t));
            }
            out.push(Arc::new(a, b, q, z)?);
        }
        // Interpolation at shared corner times uses each arc's own samples,
        // which agree to the continuity tolerance; pin them exactly.
        for s in 1..out.len() {
            let end = out[s - 1].q.last().unwrap().clone();
            out[s].q[0] = end;
        }
        PiecewiseCurve::new(out)
    }

    /// Corner jumps `psi(after) - psi(before)` at every corner.
    pub fn corner_jumps(&self, sys: &ControlSystem) -> Result<Vec<JumpVector>> {
        let mut out = Vec::with_capacity(self.arcs.len().saturating_sub(1));
        for (s, w) in self.arcs.windows(2).enumerate() {
            let t = w[0].t_end;
            let q = w[0].q.last().unwrap();
            let before = sys.psi(t, q, w[0].z.last().unwrap())?;
            let after = sys.psi(t, q, &w[1].z[0])?;
            out.push(JumpVector {
                corner: s,
                time: t,
                jump: after - before,
            });
        }
        Ok(out)
    }

    /// Max over all samples of `|dq/dt - psi|_inf`, with `dq/dt` from
    /// fourth-order differencing of the samples.
    pub fn admissibility_residual(&self, sys: &ControlSystem) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for arc in &self.arcs {
            let dq = derivative4(&arc.q, arc.step());
            for (i, d) in dq.iter().enumerate() {
                let psi = sys.psi(arc.time(i), &arc.q[i], &arc.z[i])?;
                worst = worst.max((d - psi).amax());
            }
        }
        Ok(worst)
    }

    /// CSV text with header `t,arc,q1..qn,z1..zr`; arcs are numbered from 1
    /// and corner rows appear once per adjoining arc.
    pub fn to_csv(&self) -> String {
        let header = csv_header(self.n(), self.r(), &[]);
        let mut out = header;
        out.push('\n');
        for (s, arc) in self.arcs.iter().enumerate() {
            for i in 0..=arc.steps() {
                write_row(
                    &mut out,
                    arc.time(i),
                    s + 1,
                    [arc.q[i].as_slice(), arc.z[i].as_slice()],
                );
            }
        }
        out
    }

    /// Parses the format written by [`PiecewiseCurve::to_csv`]. Extra trailing
    /// columns are ignored.
    pub fn from_csv(text: &str, n: usize, r: usize) -> Result<Self> {
        let table = CsvTable::parse(text, 2 + n + r)?;
        table.to_curve(n, r)
    }
}

pub(crate) fn csv_header(n: usize, r: usize, extra: &[String]) -> String {
    let mut cols = vec!["t".to_string(), "arc".to_string()];
    cols.extend((1..=n).map(|i| format!("q{i}")));
    cols.extend((1..=r).map(|a| format!("z{a}")));
    cols.extend(extra.iter().cloned());
    cols.join(",")
}

pub(crate) fn write_row<'a>(
    out: &mut String,
    t: f64,
    arc: usize,
    groups: impl IntoIterator<Item = &'a [f64]>,
) {
    write!(out, "{t:.16e},{arc}").unwrap();
    for g in groups {
        for v in g {
            write!(out, ",{v:.16e}").unwrap();
        }
    }
    out.push('\n');
}

/// Parsed numeric CSV rows, grouped by arc.
pub(crate) struct CsvTable {
    pub columns: Vec<String>,
    /// Per arc: (times, rows without the t and arc columns).
    pub arcs: Vec<(Vec<f64>, Vec<Vec<f64>>)>,
}

impl CsvTable {
    pub fn parse(text: &str, min_cols: usize) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        if columns.len() < min_cols || columns[0] != "t" || columns[1] != "arc" {
            return Err(Error::Csv {
                line: 1,
                message: format!(
                    "expected header starting `t,arc` with at least {min_cols} columns"
                ),
            });
        }
        let mut arcs: Vec<(Vec<f64>, Vec<Vec<f64>>)> = Vec::new();
        for (ln, line) in lines {
            let line_no = ln + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(Error::Csv {
                    line: line_no,
                    message: format!("expected {} fields, got {}", columns.len(), fields.len()),
                });
            }
            let t: f64 = fields[0].parse().map_err(|_| Error::Csv {
                line: line_no,
                message: format!("bad time `{}`", fields[0]),
            })?;
            let arc: usize = fields[1].parse().map_err(|_| Error::Csv {
                line: line_no,
                message: format!("bad arc index `{}`", fields[1]),
            })?;
            let values = fields[2..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Csv {
                        line: line_no,
                        message: format!("bad number `{f}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if arc == arcs.len() + 1 {
                arcs.push((Vec::new(), Vec::new()));
            } else if arc != arcs.len() || arc == 0 {
                return Err(Error::Csv {
                    line: line_no,
                    message: format!("arc index {arc} out of sequence"),
                });
            }
            let slot = arcs.last_mut().unwrap();
            slot.0.push(t);
            slot.1.push(values);
        }
        if arcs.is_empty() {
            return Err(Error::Csv {
                line: 2,
                message: "no data rows".into(),
            });
        }
        Ok(CsvTable { columns, arcs })
    }

    pub fn to_curve(&self, n: usize, r: usize) -> Result<PiecewiseCurve> {
        let mut arcs = Vec::with_capacity(self.arcs.len());
        for (times, rows) in &self.arcs {
            let m = times.len() - 1;
            let (a, b) = (times[0], times[m]);
            for (i, &t) in times.iter().enumerate() {
                let expect = a + (b - a) * i as f64 / m.max(1) as f64;
                if (t - expect).abs() > 1e-9 * (1.0 + (b - a).abs()) {
                    return Err(Error::InvalidCurve(format!(
                        "non-uniform grid near t = {t}"
                    )));
                }
            }
            let q = rows
                .iter()
                .map(|row| DVector::from_column_slice(&row[..n]))
                .collect();
            let z = rows
                .iter()
                .map(|row| DVector::from_column_slice(&row[n..n + r]))
                .collect();
            arcs.push(Arc::new(a, b, q, z)?);
        }
        PiecewiseCurve::new(arcs)
    }
}

/// Per-arc control law.
#[derive(Clone, Debug)]
pub enum ArcControl {
    /// One expression per control in `t` (and parameters).
    Expressions(Vec<Expr>),
    /// Sampled control on a uniform grid spanning the arc.
    Table(Vec<DVector<f64>>),
}

/// Controls for every arc of a curve.
#[derive(Clone, Debug)]
pub struct ControlPath {
    pub arcs: Vec<ArcControl>,
}

enum CompiledControl {
    Exprs(Vec<CompiledExpr>),
    Table(Vec<DVector<f64>>),
}

impl CompiledControl {
    fn eval(&self, t: f64, a: f64, b: f64) -> DVector<f64> {
        match self {
            CompiledControl::Exprs(es) => {
                DVector::from_iterator(es.len(), es.iter().map(|e| e.eval(&[t])))
            }
            CompiledControl::Table(rows) => {
                let m = rows.len() - 1;
                if m == 0 {
                    return rows[0].clone();
                }
                let s = ((t - a) / (b - a) * m as f64).clamp(0.0, m as f64);
                let i = (s.floor() as usize).min(m - 1);
                let w = s - i as f64;
                (1.0 - w) * &rows[i] + w * &rows[i + 1]
            }
        }
    }
}

/// Result of [`integrate_admissible`].
#[derive(Clone, Debug)]
pub struct Integrated {
    pub curve: PiecewiseCurve,
    /// Richardson estimate `|q_h - q_{h/2}| / 15` at each arc end, maximized.
    pub error_estimate: f64,
}

fn integrate_arc(
    sys: &ControlSystem,
    ctrl: &CompiledControl,
    q0: &DVector<f64>,
    a: f64,
    b: f64,
    m: usize,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let h = (b - a) / m as f64;
    let err: RefCell<Option<Error>> = RefCell::new(None);
    let mut rhs = |t: f64, q: &DVector<f64>| match sys.psi(t, q, &ctrl.eval(t, a, b)) {
        Ok(v) => v,
        Err(e) => {
            err.borrow_mut().get_or_insert(e);
            DVector::from_element(q.len(), f64::NAN)
        }
    };
    let mut qs = Vec::with_capacity(m + 1);
    let mut zs = Vec::with_capacity(m + 1);
    let mut q = q0.clone();
    for i in 0..=m {
        let t = if i == m { b } else { a + i as f64 * h };
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure {
                t,
                reason: "non-finite state".into(),
            });
        }
        qs.push(q.clone());
        zs.push(ctrl.eval(t, a, b));
        if i < m {
            q = rk4_step(&mut rhs, t, &q, h);
            if let Some(e) = err.borrow_mut().take() {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((qs, zs))
}

/// Integrates `q' = psi(t, q, z(t))` arc by arc with RK4 on a fixed grid.
///
/// `breaks` lists `t0, a_1, .., a_{N-1}, t1`; each arc carries
/// `grid_steps(len, density)` steps and starts from the previous arc's end.
pub fn integrate_admissible(
    sys: &ControlSystem,
    controls: &ControlPath,
    q0: &DVector<f64>,
    breaks: &[f64],
    density: f64,
) -> Result<Integrated> {
    if breaks.len() < 2 || breaks.len() - 1 != controls.arcs.len() {
        return Err(Error::Dimension(format!(
            "{} breakpoints for {} control arcs",
            breaks.len(),
            controls.arcs.len()
        )));
    }
    if q0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "|q0| = {} ≠ n {}",
            q0.len(),
            sys.n()
        )));
    }
    let params: HashMap<String, f64> = sys.params().iter().map(|(k, v)| (k.clone(), *v)).collect();
    let mut q = q0.clone();
    let mut arcs = Vec::with_capacity(controls.arcs.len());
    let mut error_estimate: f64 = 0.0;
    for (s, ctrl) in controls.arcs.iter().enumerate() {
        let (a, b) = (breaks[s], breaks[s + 1]);
        let compiled = match ctrl {
            ArcControl::Expressions(es) => {
                if es.len() != sys.r() {
                    return Err(Error::Dimension(format!(
                        "arc {} has {} control expressions, expected {}",
                        s + 1,
                        es.len(),
                        sys.r()
                    )));
                }
                CompiledControl::Exprs(
                    es.iter()
                        .map(|e| CompiledExpr::compile(e, &["t"], &params))
                        .collect::<Result<_, _>>()?,
                )
            }
            ArcControl::Table(rows) => {
                if rows.is_empty() || rows.iter().any(|r| r.len() != sys.r()) {
                    return Err(Error::Dimension(format!(
                        "arc {} control table malformed",
                        s + 1
                    )));
                }
                CompiledControl::Table(rows.clone())
            }
        };
        if !(b - a >= MIN_ARC_LENGTH) {
            return Err(Error::InvalidCurve(format!("degenerate arc [{a}, {b}]")));
        }
        let m = grid_steps(b - a, density);
        let (qs, zs) = integrate_arc(sys, &compiled, &q, a, b, m)?;
        let (fine, _) = integrate_arc(sys, &compiled, &q, a, b, 2 * m)?;
        let coarse_end = qs.last().unwrap();
        error_estimate = error_estimate.max((coarse_end - fine.last().unwrap()).amax() / 15.0);
        q = coarse_end.clone();
        arcs.push(Arc::new(a, b, qs, zs)?);
    }
    Ok(Integrated {
        curve: PiecewiseCurve::new(arcs)?,
        error_estimate,
    })
}

/// Samples closed-form `q(t)`, `z(t)` expressions on every arc.
pub fn sample_analytic(
    params: &HashMap<String, f64>,
    breaks: &[f64],
    q_exprs: &[Vec<Expr>],
    z_exprs: &[Vec<Expr>],
    density: f64,
) -> Result<PiecewiseCurve> {
    if breaks.len() < 2 || q_exprs.len() != breaks.len() - 1 || z_exprs.len() != q_exprs.len() {
        return Err(Error::Dimension(
            "arc count mismatch in analytic curve".into(),
        ));
    }
    let mut arcs = Vec::with_capacity(q_exprs.len());
    for s in 0..q_exprs.len() {
        let (a, b) = (breaks[s], breaks[s + 1]);
        let qc = q_exprs[s]
            .iter()
            .map(|e| CompiledExpr::compile(e, &["t"], params))
            .collect::<Result<Vec<_>, _>>()?;
        let zc = z_exprs[s]
            .iter()
            .map(|e| CompiledExpr::compile(e, &["t"], params))
            .collect::<Result<Vec<_>, _>>()?;
        let m = grid_steps(b - a, density);
        let times: Vec<f64> = (0..=m)
            .map(|i| {
                if i == m {
                    b
                } else {
                    a + (b - a) * i as f64 / m as f64
                }
            })
            .collect();
        let q = times
            .iter()
            .map(|&t| DVector::from_iterator(qc.len(), qc.iter().map(|e| e.eval(&[t]))))
            .collect();
        let z = times
            .iter()
            .map(|&t| DVector::from_iterator(zc.len(), zc.iter().map(|e| e.eval(&[t]))))
            .collect();
        arcs.push(Arc::new(a, b, q, z)?);
    }
    PiecewiseCurve::new(arcs)
}

/// Uniform time grid helper used by tests and benches.
pub fn uniform_breaks(t0: f64, t1: f64, arcs: usize) -> Vec<f64> {
    (0..=arcs)
        .map(|i| {
            if i == arcs {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / arcs as f64
            }
        })
        .collect()
}

/// Simpson weights for an arc's grid.
pub fn arc_weights(arc: &Arc) -> Vec<f64> {
    numeric::simpson_weights(arc.steps(), arc.step())
}
