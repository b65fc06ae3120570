//! Extremals of the action `I = int L(t, q, z) dt` over admissible curves.
//!
//! A candidate pairs a curve with momenta `p`. It is an extremal when
//! `q' = psi`, `p' + p d psi/dq = dL/dq`, `p d psi/dz = dL/dz`, and `p` and
//! `H = p . psi - L` are continuous at corners.

mod gauge;
mod i0;
mod reduce;
mod shoot;
pub mod stationarity;

use nalgebra::DVector;
use serde::Serialize;

use crate::curve::{csv_header, write_row, CsvTable, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::numeric::{cumulative_simpson, derivative4};
use crate::system::ControlSystem;
use crate::transport::Sampled;

pub use gauge::{gauge_transform, gauge_transform_expr};
pub use i0::{i0_extremals, I0Extremals};
pub use reduce::{
    integrate_hamilton, HamiltonArc, ReducedHamiltonian, ReducedPoint, NEWTON_TOL, REGULARITY_TOL,
};
pub use shoot::{shoot_extremal, ShootOptions, ShootOutcome, NO_CERTIFICATE_NOTE};

/// Default acceptance threshold for residual reports.
pub const ACCEPTANCE_TOL: f64 = 1e-6;

/// Value and partial derivatives of `H = p . psi - L`.
#[derive(Clone, Debug)]
pub struct PontryaginValue {
    pub h: f64,
    pub dh_dq: DVector<f64>,
    /// Equals `psi`.
    pub dh_dp: DVector<f64>,
    pub dh_dz: DVector<f64>,
}

pub fn pontryagin_h(
    sys: &ControlSystem,
    t: f64,
    q: &DVector<f64>,
    z: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<PontryaginValue> {
    if p.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "|p| = {} ≠ n {}",
            p.len(),
            sys.n()
        )));
    }
    let b = sys.evaluate_point(t, q, z)?;
    Ok(PontryaginValue {
        h: p.dot(&b.psi) - b.lagrangian,
        dh_dq: b.psi_q.transpose() * p - &b.lagrangian_q,
        dh_dz: b.psi_z.transpose() * p - &b.lagrangian_z,
        dh_dp: b.psi,
    })
}

/// Momenta along a curve; `p0 = L - p . psi`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovectorPath {
    pub p: Sampled<DVector<f64>>,
    pub p0: Sampled<f64>,
}

impl CovectorPath {
    /// Fills `p0 = L - p . psi` from the curve.
    pub fn from_momenta(
        sys: &ControlSystem,
        curve: &PiecewiseCurve,
        p: Sampled<DVector<f64>>,
    ) -> Result<Self> {
        check_sampled(curve, &p, sys.n())?;
        let mut p0 = Vec::with_capacity(p.len());
        for (s, arc) in curve.arcs().iter().enumerate() {
            let mut row = Vec::with_capacity(arc.steps() + 1);
            for i in 0..=arc.steps() {
                let (t, q, z) = (arc.time(i), &arc.q()[i], &arc.z()[i]);
                row.push(sys.lagrangian(t, q, z)? - p[s][i].dot(&sys.psi(t, q, z)?));
            }
            p0.push(row);
        }
        Ok(CovectorPath { p, p0 })
    }
}

fn check_sampled(curve: &PiecewiseCurve, p: &Sampled<DVector<f64>>, n: usize) -> Result<()> {
    let ok = p.len() == curve.arcs().len()
        && p.iter()
            .zip(curve.arcs())
            .all(|(s, a)| s.len() == a.steps() + 1 && s.iter().all(|v| v.len() == n));
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(
            "momenta do not match the curve grid".into(),
        ))
    }
}

/// Residuals of the extremal equations (sup norms).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    pub ode_q: f64,
    pub ode_p: f64,
    pub stationarity: f64,
    pub corner_p: f64,
    pub corner_h: f64,
    /// Minimum over the grid of `|det d^2H/dz dz|`.
    pub hamiltonian_regularity: f64,
    /// Max gap between `p0` integrated from its evolution law and `L - p . psi`.
    pub p0_defect: f64,
}

impl ResidualReport {
    /// Largest of the equation residuals (regularity excluded).
    pub fn max_residual(&self) -> f64 {
        [
            self.ode_q,
            self.ode_p,
            self.stationarity,
            self.corner_p,
            self.corner_h,
            self.p0_defect,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Curve plus momenta with the residuals of exactly this data.
#[derive(Clone, Debug)]
pub struct ExtremalCandidate {
    pub curve: PiecewiseCurve,
    pub momenta: CovectorPath,
    pub residuals: ResidualReport,
}

impl ExtremalCandidate {
    pub fn new(
        sys: &ControlSystem,
        curve: PiecewiseCurve,
        p: Sampled<DVector<f64>>,
    ) -> Result<Self> {
        let momenta = CovectorPath::from_momenta(sys, &curve, p)?;
        let residuals = extremal_residuals_of(sys, &curve, &momenta)?;
        Ok(ExtremalCandidate {
            curve,
            momenta,
            residuals,
        })
    }

    pub fn corner_times(&self) -> Vec<f64> {
        self.curve.corner_times()
    }

    /// `H` at every grid sample.
    pub fn hamiltonian(&self, sys: &ControlSystem) -> Result<Sampled<f64>> {
        self.curve
            .arcs()
            .iter()
            .enumerate()
            .map(|(s, arc)| {
                (0..=arc.steps())
                    .map(|i| {
                        Ok(pontryagin_h(
                            sys,
                            arc.time(i),
                            &arc.q()[i],
                            &arc.z()[i],
                            &self.momenta.p[s][i],
                        )?
                        .h)
                    })
                    .collect()
            })
            .collect()
    }

    /// CSV `t,arc,q..,z..,p0,p1..pn` with optional extra columns per sample.
    pub fn to_csv(&self, extra: Option<(&[String], &Sampled<DVector<f64>>)>) -> String {
        let (n, r) = (self.curve.n(), self.curve.r());
        let mut cols = vec!["p0".to_string()];
        cols.extend((1..=n).map(|i| format!("p{i}")));
        if let Some((names, _)) = extra {
            cols.extend(names.iter().cloned());
        }
        let mut out = csv_header(n, r, &cols);
        out.push('\n');
        for (s, arc) in self.curve.arcs().iter().enumerate() {
            for i in 0..=arc.steps() {
                let p0 = [self.momenta.p0[s][i]];
                let mut groups: Vec<&[f64]> = vec![
                    arc.q()[i].as_slice(),
                    arc.z()[i].as_slice(),
                    &p0,
                    self.momenta.p[s][i].as_slice(),
                ];
                if let Some((_, cols)) = extra {
                    groups.push(cols[s][i].as_slice());
                }
                write_row(&mut out, arc.time(i), s + 1, groups);
            }
        }
        out
    }

    /// Reads the format of [`ExtremalCandidate::to_csv`]; `p0` is recomputed.
    pub fn from_csv(sys: &ControlSystem, text: &str) -> Result<Self> {
        let (n, r) = (sys.n(), sys.r());
        let table = CsvTable::parse(text, 2 + n + r + 1 + n)?;
        if table.columns[2 + n + r] != "p0" {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected column {} to be `p0`", 3 + n + r),
            });
        }
        let curve = table.to_curve(n, r)?;
        let p = table
            .arcs
            .iter()
            .map(|(_, rows)| {
                rows.iter()
                    .map(|row| DVector::from_column_slice(&row[n + r + 1..n + r + 1 + n]))
                    .collect()
            })
            .collect();
        ExtremalCandidate::new(sys, curve, p)
    }
}

/// Residual report of a candidate against `sys`.
pub fn extremal_residuals(sys: &ControlSystem, cand: &ExtremalCandidate) -> Result<ResidualReport> {
    extremal_residuals_of(sys, &cand.curve, &cand.momenta)
}

fn extremal_residuals_of(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    momenta: &CovectorPath,
) -> Result<ResidualReport> {
    check_sampled(curve, &momenta.p, sys.n())?;
    let mut rep = ResidualReport {
        hamiltonian_regularity: f64::INFINITY,
        ..Default::default()
    };
    let mut p0_start = momenta.p0[0][0];
    let mut h_ends: Vec<(f64, f64)> = Vec::new();
    for (s, arc) in curve.arcs().iter().enumerate() {
        let step = arc.step();
        let p = &momenta.p[s];
        let dq = derivative4(arc.q(), step);
        let dp = derivative4(p, step);
        let mut p0_rate = Vec::with_capacity(arc.steps() + 1);
        let mut h_first = 0.0;
        let mut h_last = 0.0;
        for i in 0..=arc.steps() {
            let t = arc.time(i);
            let (q, z) = (&arc.q()[i], &arc.z()[i]);
            let b = sys.evaluate_point(t, q, z)?;
            rep.ode_q = rep.ode_q.max((&dq[i] - &b.psi).amax());
            let rhs = &b.lagrangian_q - b.psi_q.transpose() * &p[i];
            rep.ode_p = rep.ode_p.max((&dp[i] - rhs).amax());
            if sys.r() > 0 {
                rep.stationarity = rep
                    .stationarity
                    .max((b.psi_z.transpose() * &p[i] - &b.lagrangian_z).amax());
                let det = sys.pontryagin_hessian(t, q, z, &p[i])?.determinant().abs();
                rep.hamiltonian_regularity = rep.hamiltonian_regularity.min(det);
            }
            p0_rate.push(DVector::from_element(
                1,
                b.lagrangian_t - p[i].dot(&b.psi_t),
            ));
            let h = p[i].dot(&b.psi) - b.lagrangian;
            if i == 0 {
                h_first = h;
            }
            h_last = h;
        }
        h_ends.push((h_first, h_last));
        let integrated = cumulative_simpson(&p0_rate, step);
        for (i, v) in integrated.iter().enumerate() {
            rep.p0_defect = rep
                .p0_defect
                .max((p0_start + v[0] - momenta.p0[s][i]).abs());
        }
        p0_start += integrated.last().unwrap()[0];
    }
    for s in 1..curve.arcs().len() {
        let before = momenta.p[s - 1].last().unwrap();
        rep.corner_p = rep.corner_p.max((&momenta.p[s][0] - before).amax());
        rep.corner_h = rep.corner_h.max((h_ends[s].0 - h_ends[s - 1].1).abs());
    }
    if !rep.hamiltonian_regularity.is_finite() {
        rep.hamiltonian_regularity = 1.0;
    }
    Ok(rep)
}
