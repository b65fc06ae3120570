//! Lagrange multipliers of the extrinsic formulation.
//!
//! An extrinsic problem has a free Lagrangian `L(t, q, q')` and constraints
//! `g(t, q, q') = 0`. Along an intrinsic extremal the momenta split as
//! `p = dL/dq' + (dg/dq')^T lambda`; the multipliers `lambda` are recovered
//! pointwise and the Euler-Lagrange equations of `L + lambda . g` checked.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extremal::ExtremalCandidate;
use crate::numeric::{derivative4, singular_values};
use crate::system::{ControlSystem, ExtrinsicBundle, ExtrinsicProblem};
use crate::transport::Sampled;

/// Default consistency tolerance.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Relative threshold on the smallest singular value of `dg/dq'`.
pub const RANK_TOL: f64 = 1e-9;

/// Recovered multipliers on the candidate grid.
#[derive(Clone, Debug)]
pub struct MultiplierPath {
    pub lambda: Sampled<DVector<f64>>,
    /// Max of `|p - dL/dq' - (dg/dq')^T lambda|` over the grid.
    pub residual: f64,
    /// Max of `|g|` along the curve.
    pub constraint_residual: f64,
    /// Largest multiplier jump across a corner.
    pub corner_jump: f64,
}

impl MultiplierPath {
    /// `p = dL/dq' + (dg/dq')^T lambda` along the curve.
    pub fn momenta(
        &self,
        ext: &ExtrinsicProblem,
        sys: &ControlSystem,
        cand: &ExtremalCandidate,
    ) -> Result<Sampled<DVector<f64>>> {
        let mut out = Vec::with_capacity(self.lambda.len());
        for (s, arc) in cand.curve.arcs().iter().enumerate() {
            let mut row = Vec::with_capacity(arc.steps() + 1);
            for i in 0..=arc.steps() {
                let b = lift(ext, sys, cand, s, i)?;
                row.push(&b.lagrangian_qdot + b.g_qdot.transpose() * &self.lambda[s][i]);
            }
            out.push(row);
        }
        Ok(out)
    }

    pub fn column_names(&self) -> Vec<String> {
        let k = self
            .lambda
            .first()
            .and_then(|a| a.first())
            .map_or(0, |l| l.len());
        (1..=k).map(|j| format!("lambda{j}")).collect()
    }
}

fn lift(
    ext: &ExtrinsicProblem,
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    s: usize,
    i: usize,
) -> Result<ExtrinsicBundle> {
    let arc = &cand.curve.arcs()[s];
    let (t, q) = (arc.time(i), &arc.q()[i]);
    let qdot = sys.psi(t, q, &arc.z()[i])?;
    ext.evaluate(t, q, &qdot)
}

fn check_dims(ext: &ExtrinsicProblem, sys: &ControlSystem) -> Result<()> {
    if ext.n() != sys.n() {
        return Err(Error::Dimension(format!(
            "extrinsic n {} ≠ intrinsic n {}",
            ext.n(),
            sys.n()
        )));
    }
    Ok(())
}

/// Solves `p - dL/dq' = (dg/dq')^T lambda` by least squares at every sample.
pub fn recover_multipliers(
    ext: &ExtrinsicProblem,
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    tol: f64,
) -> Result<MultiplierPath> {
    check_dims(ext, sys)?;
    let k = ext.constraint_count();
    let mut lambda = Vec::with_capacity(cand.curve.arcs().len());
    let mut residual: f64 = 0.0;
    let mut constraint_residual: f64 = 0.0;
    for (s, arc) in cand.curve.arcs().iter().enumerate() {
        let mut row = Vec::with_capacity(arc.steps() + 1);
        for i in 0..=arc.steps() {
            let t = arc.time(i);
            let b = lift(ext, sys, cand, s, i)?;
            let g = b.g.amax();
            constraint_residual = constraint_residual.max(g);
            if g > tol {
                return Err(Error::NotAdmissible {
                    residual: g,
                    threshold: tol,
                });
            }
            let rhs = &cand.momenta.p[s][i] - &b.lagrangian_qdot;
            let lam = if k == 0 {
                DVector::zeros(0)
            } else {
                let sv = singular_values(&b.g_qdot);
                if sv.len() < k || sv[k - 1] <= RANK_TOL * sv[0].max(1.0) {
                    return Err(Error::RankDeficient { t });
                }
                let a = b.g_qdot.transpose();
                a.clone()
                    .svd(true, true)
                    .solve(&rhs, 0.0)
                    .map_err(|e| Error::Dimension(e.to_string()))?
            };
            let res = (b.g_qdot.transpose() * &lam - &rhs).amax();
            if res > tol {
                return Err(Error::Inconsistent { t, residual: res });
            }
            residual = residual.max(res);
            row.push(lam);
        }
        lambda.push(row);
    }
    let corner_jump = lambda
        .windows(2)
        .map(|w| (&w[1][0] - w[0].last().unwrap()).amax())
        .fold(0.0, f64::max);
    Ok(MultiplierPath {
        lambda,
        residual,
        constraint_residual,
        corner_jump,
    })
}

/// Residuals of the extrinsic Euler-Lagrange system for `L + lambda . g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CorrespondenceReport {
    pub euler_lagrange: f64,
    pub constraint: f64,
    /// Jump of `dL^/dq'` across corners.
    pub corner_momentum: f64,
    /// Jump of `q' . dL^/dq' - L^` across corners.
    pub corner_energy: f64,
    pub multiplier_jump: f64,
}

impl CorrespondenceReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.euler_lagrange,
            self.constraint,
            self.corner_momentum,
            self.corner_energy,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

pub fn verify_correspondence(
    ext: &ExtrinsicProblem,
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    lambda: &MultiplierPath,
) -> Result<CorrespondenceReport> {
    check_dims(ext, sys)?;
    let mut rep = CorrespondenceReport {
        multiplier_jump: lambda.corner_jump,
        ..Default::default()
    };
    let mut ends: Vec<((DVector<f64>, f64), (DVector<f64>, f64))> = Vec::new();
    for (s, arc) in cand.curve.arcs().iter().enumerate() {
        let mut momentum = Vec::with_capacity(arc.steps() + 1);
        let mut force = Vec::with_capacity(arc.steps() + 1);
        let mut energy = Vec::with_capacity(arc.steps() + 1);
        for i in 0..=arc.steps() {
            let b = lift(ext, sys, cand, s, i)?;
            let lam = &lambda.lambda[s][i];
            let qdot = sys.psi(arc.time(i), &arc.q()[i], &arc.z()[i])?;
            let pm = &b.lagrangian_qdot + b.g_qdot.transpose() * lam;
            let lhat = b.lagrangian + b.g.dot(lam);
            rep.constraint = rep.constraint.max(b.g.amax());
            energy.push(qdot.dot(&pm) - lhat);
            force.push(&b.lagrangian_q + b.g_q.transpose() * lam);
            momentum.push(pm);
        }
        let d = derivative4(&momentum, arc.step());
        for (dp, f) in d.iter().zip(&force) {
            rep.euler_lagrange = rep.euler_lagrange.max((dp - f).amax());
        }
        ends.push((
            (momentum[0].clone(), energy[0]),
            (momentum.last().unwrap().clone(), *energy.last().unwrap()),
        ));
    }
    for w in ends.windows(2) {
        rep.corner_momentum = rep.corner_momentum.max((&w[1].0 .0 - &w[0].1 .0).amax());
        rep.corner_energy = rep.corner_energy.max((w[1].0 .1 - w[0].1 .1).abs());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::{shoot_extremal, ShootOptions};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn straight_line() -> (ControlSystem, ExtrinsicProblem, ExtremalCandidate) {
        let s = ControlSystem::parse(
            &["x", "y"],
            &["z"],
            &["v*cos(z)", "v*sin(z)"],
            "1",
            &[("v", 1.0)],
        )
        .unwrap();
        let e = ExtrinsicProblem::parse(
            &["x", "y"],
            "1",
            &["x_dot^2 + y_dot^2 - v^2"],
            &[("v", 1.0)],
        )
        .unwrap();
        let mut o = ShootOptions::new(0.0, 1.0, v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.1]));
        o.p_guess = v(&[1.0, 0.3]);
        o.density = 100.0;
        (s.clone(), e, shoot_extremal(&s, &o).unwrap().candidate)
    }

    #[test]
    fn straight_line_multiplier() {
        let (s, e, cand) = straight_line();
        let c = cand.momenta.p[0][0][0];
        let lam = recover_multipliers(&e, &s, &cand, 1e-6).unwrap();
        for l in &lam.lambda[0] {
            assert!((l[0] - c / 2.0).abs() < 1e-8);
        }
        let rep = verify_correspondence(&e, &s, &cand, &lam).unwrap();
        assert!(rep.passes(1e-6), "{rep:?}");
        let p = lam.momenta(&e, &s, &cand).unwrap();
        for (a, b) in p[0].iter().zip(&cand.momenta.p[0]) {
            assert!((a - b).amax() < 1e-8);
        }
    }

    #[test]
    fn inconsistent_momenta() {
        let (s, e, cand) = straight_line();
        let p = cand
            .curve
            .arcs()
            .iter()
            .map(|a| vec![v(&[0.0, 1.0]); a.steps() + 1])
            .collect();
        let bad = ExtremalCandidate::new(&s, cand.curve.clone(), p).unwrap();
        assert!(matches!(
            recover_multipliers(&e, &s, &bad, 1e-6),
            Err(Error::Inconsistent { .. })
        ));
    }

    #[test]
    fn vacuous_constraints() {
        let s = ControlSystem::parse(&["q"], &["z"], &["z"], "z^2/2", &[]).unwrap();
        let e = ExtrinsicProblem::parse(&["q"], "q_dot^2/2", &[], &[]).unwrap();
        let mut o = ShootOptions::new(0.0, 1.0, v(&[0.0]), v(&[1.0]), v(&[0.0]));
        o.density = 50.0;
        let cand = shoot_extremal(&s, &o).unwrap().candidate;
        let lam = recover_multipliers(&e, &s, &cand, 1e-6).unwrap();
        assert_eq!(lam.lambda[0][0].len(), 0);
        assert!(lam.residual < 1e-8);
        assert!(verify_correspondence(&e, &s, &cand, &lam)
            .unwrap()
            .passes(1e-6));
    }

    #[test]
    fn holonomic_round_trip() {
        let s = ControlSystem::parse(&["x", "y"], &["z"], &["z", "z"], "z^2", &[]).unwrap();
        let e = ExtrinsicProblem::parse(
            &["x", "y"],
            "(x_dot^2 + y_dot^2)/2",
            &["y_dot - x_dot"],
            &[],
        )
        .unwrap();
        let mut o = ShootOptions::new(0.0, 1.0, v(&[0.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0]));
        o.density = 50.0;
        o.analyze = false;
        let line = shoot_extremal(&s, &o).unwrap().candidate;
        // p = dL/dq' + lambda dg/dq' with lambda = 0.3 and q' = (1, 1).
        let p = line
            .curve
            .arcs()
            .iter()
            .map(|a| vec![v(&[0.7, 1.3]); a.steps() + 1])
            .collect();
        let cand = ExtremalCandidate::new(&s, line.curve.clone(), p).unwrap();
        assert!(cand.residuals.passes(1e-8));
        let lam = recover_multipliers(&e, &s, &cand, 1e-6).unwrap();
        assert!(lam.lambda[0].iter().all(|l| (l[0] - 0.3).abs() < 1e-8));
        assert!(verify_correspondence(&e, &s, &cand, &lam)
            .unwrap()
            .passes(1e-8));
    }

    #[test]
    fn shifted_multiplier_breaks_euler_lagrange() {
        let s = ControlSystem::parse(
            &["x", "y"],
            &["z"],
            &["cos(z)", "sin(z)"],
            "z^2/2 + x^2/2",
            &[],
        )
        .unwrap();
        let e = ExtrinsicProblem::parse(
            &["x", "y"],
            "atan(y_dot/x_dot)^2/2 + x^2/2",
            &["x_dot^2 + y_dot^2 - 1"],
            &[],
        )
        .unwrap();
        let mut red = crate::extremal::ReducedHamiltonian::new(&s, v(&[0.0])).unwrap();
        let arc = crate::extremal::integrate_hamilton(
            &mut red,
            &v(&[0.0, 0.0]),
            &v(&[1.0, 0.4]),
            0.0,
            1.0,
            200,
        )
        .unwrap();
        let cand = arc.candidate(&s).unwrap();
        let lam = recover_multipliers(&e, &s, &cand, 1e-6).unwrap();
        assert!(verify_correspondence(&e, &s, &cand, &lam)
            .unwrap()
            .passes(1e-6));
        let mut shifted = lam.clone();
        for l in shifted.lambda.iter_mut().flatten() {
            l[0] += 0.1;
        }
        let rep = verify_correspondence(&e, &s, &cand, &shifted).unwrap();
        assert!(rep.euler_lagrange > 1e-3, "{rep:?}");
    }
}
