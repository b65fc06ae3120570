use nalgebra::DVector;

use super::{pontryagin_h, ExtremalCandidate, ResidualReport};
use crate::curve::{Arc, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::numeric::rk4_step;
use crate::system::ControlSystem;

/// Newton tolerance on `|dH/dz|` in the sup norm.
pub const NEWTON_TOL: f64 = 1e-12;
/// Smallest accepted `|det d^2H/dz dz|`.
pub const REGULARITY_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 50;

/// Solution of `dH/dz = 0` at one point.
#[derive(Clone, Debug)]
pub struct ReducedPoint {
    pub z: DVector<f64>,
    /// Reduced Hamiltonian value.
    pub h: f64,
    /// `dH/dp = psi(t, q, z*)`.
    pub dh_dp: DVector<f64>,
    /// `dH/dq = (d psi/dq)^T p - dL/dq` at `z*`.
    pub dh_dq: DVector<f64>,
    pub hessian_det: f64,
}

/// Reduced Hamiltonian `H(t, q, p) = H(t, q, z*(t, q, p), p)` of a regular system.
///
/// Newton on `dH/dz = 0`, warm-started from the last solution. The seed
/// selects which branch of `z*` is followed.
#[derive(Clone, Debug)]
pub struct ReducedHamiltonian<'a> {
    sys: &'a ControlSystem,
    z: DVector<f64>,
}

impl<'a> ReducedHamiltonian<'a> {
    pub fn new(sys: &'a ControlSystem, z_seed: DVector<f64>) -> Result<Self> {
        if z_seed.len() != sys.r() {
            return Err(Error::Dimension(format!(
                "|z seed| = {} ≠ r {}",
                z_seed.len(),
                sys.r()
            )));
        }
        Ok(ReducedHamiltonian { sys, z: z_seed })
    }

    pub fn system(&self) -> &'a ControlSystem {
        self.sys
    }

    /// Resets the warm start.
    pub fn reseed(&mut self, z: DVector<f64>) {
        self.z = z;
    }

    pub fn solve(&mut self, t: f64, q: &DVector<f64>, p: &DVector<f64>) -> Result<ReducedPoint> {
        let sys = self.sys;
        let mut z = self.z.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..=NEWTON_MAX_ITER {
            let v = pontryagin_h(sys, t, q, &z, p)?;
            residual = v.dh_dz.amax();
            let hess = sys.pontryagin_hessian(t, q, &z, p)?;
            let det = if sys.r() == 0 {
                1.0
            } else {
                hess.determinant()
            };
            if residual <= NEWTON_TOL {
                if det.abs() < REGULARITY_TOL {
                    return Err(Error::RegularityFailure { t, det });
                }
                self.z = z.clone();
                return Ok(ReducedPoint {
                    z,
                    h: v.h,
                    dh_dp: v.dh_dp,
                    dh_dq: v.dh_dq,
                    hessian_det: det,
                });
            }
            if !residual.is_finite() {
                break;
            }
            let step = hess
                .lu()
                .solve(&v.dh_dz)
                .ok_or(Error::RegularityFailure { t, det })?;
            z -= step;
        }
        Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITER,
            residual,
            best: None,
        })
    }
}

/// Samples of one Hamiltonian flow segment.
#[derive(Clone, Debug)]
pub struct HamiltonArc {
    pub times: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub h: Vec<f64>,
}

impl HamiltonArc {
    pub fn q_end(&self) -> &DVector<f64> {
        self.q.last().unwrap()
    }

    pub fn p_end(&self) -> &DVector<f64> {
        self.p.last().unwrap()
    }

    pub fn h_start(&self) -> f64 {
        self.h[0]
    }

    pub fn h_end(&self) -> f64 {
        *self.h.last().unwrap()
    }

    /// Spread of the sampled Hamiltonian values.
    pub fn hamiltonian_drift(&self) -> f64 {
        let (lo, hi) = self
            .h
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            });
        hi - lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.times.len() < 2
    }

    /// Single-arc candidate. Fails on a zero-length span.
    pub fn candidate(&self, sys: &ControlSystem) -> Result<ExtremalCandidate> {
        if self.is_degenerate() {
            return Err(Error::InvalidCurve("zero-length Hamiltonian arc".into()));
        }
        let arc = Arc::new(
            self.times[0],
            *self.times.last().unwrap(),
            self.q.clone(),
            self.z.clone(),
        )?;
        ExtremalCandidate::new(sys, PiecewiseCurve::new(vec![arc])?, vec![self.p.clone()])
    }

    /// Residuals of [`HamiltonArc::candidate`]; all zero on a zero-length span.
    pub fn residuals(&self, sys: &ControlSystem) -> Result<ResidualReport> {
        if self.is_degenerate() {
            return Ok(ResidualReport {
                hamiltonian_regularity: self.regularity(sys)?,
                ..Default::default()
            });
        }
        Ok(self.candidate(sys)?.residuals)
    }

    fn regularity(&self, sys: &ControlSystem) -> Result<f64> {
        if sys.r() == 0 {
            return Ok(1.0);
        }
        Ok(sys
            .pontryagin_hessian(self.times[0], &self.q[0], &self.z[0], &self.p[0])?
            .determinant()
            .abs())
    }
}

/// Integrates `q' = dH/dp`, `p' = -dH/dq` with RK4 over `steps` uniform
/// steps of `[ta, tb]`. `steps` is rounded up to an even count of at least 4;
/// `ta == tb` returns the initial point alone.
pub fn integrate_hamilton(
    red: &mut ReducedHamiltonian<'_>,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    ta: f64,
    tb: f64,
    steps: usize,
) -> Result<HamiltonArc> {
    let n = red.system().n();
    if q0.len() != n || p0.len() != n {
        return Err(Error::Dimension(format!(
            "initial data must have length n = {n}"
        )));
    }
    let first = red.solve(ta, q0, p0)?;
    let mut out = HamiltonArc {
        times: vec![ta],
        q: vec![q0.clone()],
        p: vec![p0.clone()],
        z: vec![first.z],
        h: vec![first.h],
    };
    if ta == tb {
        return Ok(out);
    }
    if !(tb > ta) {
        return Err(Error::InvalidCurve(format!("bad time span [{ta}, {tb}]")));
    }
    let m = steps.max(4);
    let m = m + m % 2;
    let dt = (tb - ta) / m as f64;
    let mut failure: Option<Error> = None;
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(q0);
    y.rows_mut(n, n).copy_from(p0);
    for i in 0..m {
        let t = ta + i as f64 * dt;
        let mut rhs = |tt: f64, yy: &DVector<f64>| {
            let q = yy.rows(0, n).into_owned();
            let p = yy.rows(n, n).into_owned();
            match red.solve(tt, &q, &p) {
                Ok(pt) => {
                    let mut d = DVector::zeros(2 * n);
                    d.rows_mut(0, n).copy_from(&pt.dh_dp);
                    d.rows_mut(n, n).copy_from(&(-pt.dh_dq));
                    d
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    DVector::from_element(2 * n, f64::NAN)
                }
            }
        };
        y = rk4_step(&mut rhs, t, &y, dt);
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let tn = if i + 1 == m {
            tb
        } else {
            ta + (i + 1) as f64 * dt
        };
        let q = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "Hamiltonian flow".into(),
                t: tn,
            });
        }
        let pt = red.solve(tn, &q, &p)?;
        out.times.push(tn);
        out.q.push(q);
        out.p.push(p);
        out.z.push(pt.z);
        out.h.push(pt.h);
    }
    Ok(out)
}
