use nalgebra::DVector;

use super::CovectorPath;
use crate::abnormality::annihilator;
use crate::curve::PiecewiseCurve;
use crate::error::Result;
use crate::system::ControlSystem;

/// Extremals of the zero Lagrangian along a fixed curve.
///
/// These are the trivial path followed by the annihilator basis paths,
/// with `p0 = -p . psi`. Extremal momenta of any Lagrangian over the same
/// curve form an affine space over their span.
#[derive(Clone, Debug)]
pub struct I0Extremals {
    pub momenta: Vec<CovectorPath>,
    pub singular_values: Vec<f64>,
}

impl I0Extremals {
    /// Number of independent nontrivial generators.
    pub fn generators(&self) -> usize {
        self.momenta.len() - 1
    }
}

pub fn i0_extremals(sys: &ControlSystem, curve: &PiecewiseCurve, tol: f64) -> Result<I0Extremals> {
    let ann = annihilator(sys, curve, tol)?;
    let mut momenta = Vec::with_capacity(ann.basis.len() + 1);
    momenta.push(CovectorPath {
        p: curve
            .arcs()
            .iter()
            .map(|a| vec![DVector::zeros(curve.n()); a.steps() + 1])
            .collect(),
        p0: curve
            .arcs()
            .iter()
            .map(|a| vec![0.0; a.steps() + 1])
            .collect(),
    });
    for path in ann.basis.paths {
        let mut p0 = Vec::with_capacity(path.len());
        for (s, arc) in curve.arcs().iter().enumerate() {
            let mut row = Vec::with_capacity(arc.steps() + 1);
            for i in 0..=arc.steps() {
                row.push(-path[s][i].dot(&sys.psi(arc.time(i), &arc.q()[i], &arc.z()[i])?));
            }
            p0.push(row);
        }
        momenta.push(CovectorPath { p: path, p0 });
    }
    Ok(I0Extremals {
        momenta,
        singular_values: ann.singular_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{integrate_admissible, ArcControl, ControlPath};
    use crate::expr::Expr;
    use crate::extremal::ExtremalCandidate;

    #[test]
    fn straight_unit_speed_line() {
        let s = ControlSystem::parse(&["x", "y"], &["z"], &["cos(z)", "sin(z)"], "0", &[]).unwrap();
        let path = ControlPath {
            arcs: vec![ArcControl::Expressions(vec![Expr::num(0.0)])],
        };
        let c = integrate_admissible(&s, &path, &DVector::zeros(2), &[0.0, 1.0], 100.0)
            .unwrap()
            .curve;
        let ex = i0_extremals(&s, &c, 1e-8).unwrap();
        assert_eq!(ex.generators(), 1);
        assert!(ex.momenta[0].p[0].iter().all(|p| p.amax() == 0.0));
        let p0 = ex.momenta[1].p[0][0].clone();
        assert!((p0[0] - 1.0).abs() < 1e-12 && p0[1].abs() < 1e-12);
        assert!((ex.momenta[1].p0[0][0] + 1.0).abs() < 1e-12);
        let cand = ExtremalCandidate::new(&s, c, ex.momenta[1].p.clone()).unwrap();
        assert!(cand.residuals.passes(1e-10));
    }
}
