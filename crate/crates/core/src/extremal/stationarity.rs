//! First variation of the action along fixed-endpoint deformations.
//!
//! A deformation moves corner `a_s` to `a_s + xi alpha_s`, reparametrizes
//! each arc affinely and perturbs the control by `xi U + W nu`. The
//! correction `nu` restores the final state; `W = (d psi/dz)^T phi` with
//! `phi` the adjoint fundamental matrix, so the correction is solvable
//! whenever the curve is normal.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ExtremalCandidate;
use crate::abnormality::AdjointData;
use crate::curve::PiecewiseCurve;
use crate::error::{Error, Result};
use crate::numeric::{rk4_step, simpson_weights};
use crate::system::ControlSystem;

/// Closure defects above this mark a sample as not closed.
pub const CLOSURE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct StationarityOptions {
    pub samples: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Cosine modes per control component in `U`.
    pub modes: usize,
    /// Corner shifts are drawn from `[-alpha_scale, alpha_scale]`.
    pub alpha_scale: f64,
}

impl Default for StationarityOptions {
    fn default() -> Self {
        StationarityOptions {
            samples: 20,
            epsilon: 1e-4,
            seed: 7,
            modes: 4,
            alpha_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StationaritySample {
    pub derivative: f64,
    pub closure_defect: f64,
    pub closed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    pub samples: Vec<StationaritySample>,
    /// Largest `|dI/dxi|` over closed samples.
    pub max_derivative: f64,
    pub closed: usize,
    /// Samples whose endpoint could not be restored (abnormal directions).
    pub not_closed: usize,
}

/// Control values at grid points (even index) and midpoints (odd index).
struct ArcSamples {
    z: Vec<DVector<f64>>,
    w: Vec<DMatrix<f64>>,
    tau: Vec<f64>,
}

/// Fixed-endpoint deformation family of one curve.
pub struct DeformationFamily<'a> {
    sys: &'a ControlSystem,
    curve: &'a PiecewiseCurve,
    arcs: Vec<ArcSamples>,
}

/// Smooth control perturbation `U(tau)` and corner shifts.
#[derive(Clone, Debug)]
pub struct Perturbation {
    /// `coeffs[a][j]` multiplies `cos(j pi (tau - t0) / (t1 - t0))` in component `a`.
    pub coeffs: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

impl Perturbation {
    pub fn random(
        rng: &mut impl Rng,
        r: usize,
        corners: usize,
        modes: usize,
        alpha_scale: f64,
    ) -> Self {
        Perturbation {
            coeffs: (0..r)
                .map(|_| (0..modes).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            alphas: (0..corners)
                .map(|_| alpha_scale * rng.random_range(-1.0..1.0))
                .collect(),
        }
    }

    fn u(&self, tau: f64, t0: f64, t1: f64) -> DVector<f64> {
        let x = std::f64::consts::PI * (tau - t0) / (t1 - t0);
        DVector::from_iterator(
            self.coeffs.len(),
            self.coeffs.iter().map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(j, a)| a * (j as f64 * x).cos())
                    .sum()
            }),
        )
    }
}

impl<'a> DeformationFamily<'a> {
    pub fn new(sys: &'a ControlSystem, curve: &'a PiecewiseCurve) -> Result<Self> {
        let adj = AdjointData::new(sys, curve)?;
        let mut arcs = Vec::with_capacity(curve.arcs().len());
        for (s, arc) in curve.arcs().iter().enumerate() {
            let m = arc.steps();
            let w_at = |i: usize| -> Result<DMatrix<f64>> {
                let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
                Ok(b.psi_z.transpose() * &adj.phi[s][i])
            };
            let grid_w = (0..=m).map(w_at).collect::<Result<Vec<_>>>()?;
            let mut samples = ArcSamples {
                z: Vec::with_capacity(2 * m + 1),
                w: Vec::with_capacity(2 * m + 1),
                tau: Vec::with_capacity(2 * m + 1),
            };
            for i in 0..=m {
                samples.z.push(arc.z()[i].clone());
                samples.w.push(grid_w[i].clone());
                samples.tau.push(arc.time(i));
                if i < m {
                    let tm = arc.time(i) + 0.5 * arc.step();
                    samples.z.push(arc.z_at(tm));
                    samples.w.push((&grid_w[i] + &grid_w[i + 1]) * 0.5);
                    samples.tau.push(tm);
                }
            }
            arcs.push(samples);
        }
        Ok(DeformationFamily { sys, curve, arcs })
    }

    /// Number of closure parameters.
    pub fn closure_dim(&self) -> usize {
        self.curve.n()
    }

    /// Final state and action of the deformed curve.
    pub fn evaluate(
        &self,
        pert: &Perturbation,
        xi: f64,
        nu: &DVector<f64>,
    ) -> Result<(DVector<f64>, f64)> {
        let c = self.curve;
        let (t0, t1) = (c.t0(), c.t1());
        let mut breaks = vec![t0];
        breaks.extend(
            c.corner_times()
                .iter()
                .zip(&pert.alphas)
                .map(|(a, al)| a + xi * al),
        );
        breaks.push(t1);
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidCurve("deformation reorders corners".into()));
        }
        let sys = self.sys;
        let mut q = c.q_start().clone();
        let mut action = 0.0;
        for (s, arc) in c.arcs().iter().enumerate() {
            let m = arc.steps();
            let samples = &self.arcs[s];
            let h = (breaks[s + 1] - breaks[s]) / m as f64;
            let control = |k: usize| -> DVector<f64> {
                &samples.z[k] + pert.u(samples.tau[k], t0, t1) * xi + &samples.w[k] * nu
            };
            let weights = simpson_weights(m, h);
            let mut err = None;
            for i in 0..=m {
                let t = breaks[s] + i as f64 * h;
                let z0 = control(2 * i);
                action += weights[i] * sys.lagrangian(t, &q, &z0)?;
                if i == m {
                    break;
                }
                let zm = control(2 * i + 1);
                let z1 = control(2 * i + 2);
                let mut rhs = |tt: f64, y: &DVector<f64>| {
                    let z = if tt == t {
                        &z0
                    } else if tt == t + h {
                        &z1
                    } else {
                        &zm
                    };
                    sys.psi(tt, y, z).unwrap_or_else(|e| {
                        err.get_or_insert(e);
                        DVector::from_element(y.len(), f64::NAN)
                    })
                };
                q = rk4_step(&mut rhs, t, &q, h);
                if let Some(e) = err.take() {
                    return Err(e);
                }
            }
        }
        Ok((q, action))
    }

    /// Action at `xi` with `nu` chosen to restore the final state.
    /// Returns the action and the remaining closure defect.
    pub fn closed_action(&self, pert: &Perturbation, xi: f64) -> Result<(f64, f64)> {
        let n = self.closure_dim();
        let target = self.curve.q_end();
        let mut nu = DVector::zeros(n);
        let (mut end, mut action) = self.evaluate(pert, xi, &nu)?;
        let mut defect = (&end - target).amax();
        let mut jac = DMatrix::zeros(n, n);
        let h = 1e-6;
        for k in 0..n {
            let mut e = nu.clone();
            e[k] += h;
            jac.set_column(k, &((self.evaluate(pert, xi, &e)?.0 - &end) / h));
        }
        let svd = jac.svd(true, true);
        for _ in 0..30 {
            if defect <= 1e-14 {
                break;
            }
            let step = svd
                .solve(&(&end - target), 1e-10 * svd.singular_values.max())
                .map_err(|e| Error::Dimension(e.to_string()))?;
            let trial = &nu - step;
            let (e2, a2) = self.evaluate(pert, xi, &trial)?;
            let d2 = (&e2 - target).amax();
            if !(d2 < defect) {
                break;
            }
            nu = trial;
            end = e2;
            action = a2;
            defect = d2;
        }
        Ok((action, defect))
    }
}

/// Central-difference `dI/dxi` at `xi = 0` over random deformations.
pub fn action_stationarity(
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    opts: &StationarityOptions,
) -> Result<StationarityReport> {
    let family = DeformationFamily::new(sys, &cand.curve)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let corners = cand.curve.arcs().len() - 1;
    let mut samples = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let pert = Perturbation::random(&mut rng, sys.r(), corners, opts.modes, opts.alpha_scale);
        let (ip, dp) = family.closed_action(&pert, opts.epsilon)?;
        let (im, dm) = family.closed_action(&pert, -opts.epsilon)?;
        let defect = dp.max(dm);
        samples.push(StationaritySample {
            derivative: (ip - im) / (2.0 * opts.epsilon),
            closure_defect: defect,
            closed: defect <= CLOSURE_TOL,
        });
    }
    let closed = samples.iter().filter(|s| s.closed).count();
    Ok(StationarityReport {
        max_derivative: samples
            .iter()
            .filter(|s| s.closed)
            .map(|s| s.derivative.abs())
            .fold(0.0, f64::max),
        not_closed: samples.len() - closed,
        closed,
        samples,
    })
}
