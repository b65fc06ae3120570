use nalgebra::{DMatrix, DVector};

use super::reduce::{integrate_hamilton, HamiltonArc, ReducedHamiltonian};
use super::ExtremalCandidate;
use crate::abnormality::{abnormality_index, AbnormalityOptions, AbnormalityReport};
use crate::curve::{Arc, PiecewiseCurve, DEFAULT_DENSITY, MIN_ARC_LENGTH};
use crate::error::{Error, Result};
use crate::numeric::grid_steps;
use crate::system::ControlSystem;

/// Attached to shooting failures.
pub const NO_CERTIFICATE_NOTE: &str =
    "no extremal certificate was found; this does not show that the curve is not an extremal";

/// Boundary data and starting guesses for [`shoot_extremal`].
#[derive(Clone, Debug)]
pub struct ShootOptions {
    pub t0: f64,
    pub t1: f64,
    pub q_start: DVector<f64>,
    pub q_end: DVector<f64>,
    /// Initial corner-time guesses, strictly inside `(t0, t1)`.
    pub corners: Vec<f64>,
    /// One control seed per arc; each selects a branch of `z*(t, q, p)`.
    pub z_seeds: Vec<DVector<f64>>,
    /// Momentum guess at `t0`, reused for every arc start.
    pub p_guess: DVector<f64>,
    pub density: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Compute the abnormality report of the converged curve.
    pub analyze: bool,
}

impl ShootOptions {
    pub fn new(
        t0: f64,
        t1: f64,
        q_start: DVector<f64>,
        q_end: DVector<f64>,
        z_seed: DVector<f64>,
    ) -> Self {
        let n = q_start.len();
        ShootOptions {
            t0,
            t1,
            q_start,
            q_end,
            corners: Vec::new(),
            z_seeds: vec![z_seed],
            p_guess: DVector::zeros(n),
            density: DEFAULT_DENSITY,
            max_iter: 100,
            tol: 1e-8,
            analyze: true,
        }
    }
}

/// A converged shooting run.
#[derive(Clone, Debug)]
pub struct ShootOutcome {
    pub candidate: ExtremalCandidate,
    pub iterations: usize,
    /// Sup norm of the boundary and corner mismatch at convergence.
    pub mismatch: f64,
    /// Mismatch sup norm before each Newton step and at the end.
    pub trace: Vec<f64>,
    pub abnormality: Option<AbnormalityReport>,
    /// `Some(false)` when the curve is abnormal, so the momenta are one
    /// representative of an affine family.
    pub momenta_unique: Option<bool>,
}

struct Layout {
    n: usize,
    arcs: usize,
    steps: Vec<usize>,
}

impl Layout {
    fn p(&self, x: &DVector<f64>, s: usize) -> DVector<f64> {
        x.rows(s * self.n, self.n).into_owned()
    }

    fn q(&self, x: &DVector<f64>, s: usize) -> DVector<f64> {
        x.rows((self.arcs + s - 1) * self.n, self.n).into_owned()
    }

    fn corner(&self, x: &DVector<f64>, s: usize) -> f64 {
        x[(2 * self.arcs - 1) * self.n + s - 1]
    }

    fn len(&self) -> usize {
        (2 * self.arcs - 1) * self.n + self.arcs - 1
    }
}

fn run(
    sys: &ControlSystem,
    opts: &ShootOptions,
    lay: &Layout,
    x: &DVector<f64>,
) -> Result<Vec<HamiltonArc>> {
    let mut out = Vec::with_capacity(lay.arcs);
    let mut ta = opts.t0;
    for s in 0..lay.arcs {
        let tb = if s + 1 == lay.arcs {
            opts.t1
        } else {
            lay.corner(x, s + 1)
        };
        if !(tb - ta >= MIN_ARC_LENGTH) {
            return Err(Error::InvalidCurve(format!(
                "corner times out of order near {ta}"
            )));
        }
        let q0 = if s == 0 {
            opts.q_start.clone()
        } else {
            lay.q(x, s)
        };
        let mut red = ReducedHamiltonian::new(sys, opts.z_seeds[s].clone())?;
        out.push(integrate_hamilton(
            &mut red,
            &q0,
            &lay.p(x, s),
            ta,
            tb,
            lay.steps[s],
        )?);
        ta = tb;
    }
    Ok(out)
}

fn mismatch(
    sys: &ControlSystem,
    opts: &ShootOptions,
    lay: &Layout,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let arcs = run(sys, opts, lay, x)?;
    let n = lay.n;
    let mut f = DVector::zeros(lay.len());
    let mut k = 0;
    for s in 1..lay.arcs {
        f.rows_mut(k, n)
            .copy_from(&(arcs[s - 1].q_end() - lay.q(x, s)));
        k += n;
        f.rows_mut(k, n)
            .copy_from(&(arcs[s - 1].p_end() - lay.p(x, s)));
        k += n;
        f[k] = arcs[s - 1].h_end() - arcs[s].h_start();
        k += 1;
    }
    f.rows_mut(k, n)
        .copy_from(&(arcs[lay.arcs - 1].q_end() - &opts.q_end));
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "shooting mismatch".into(),
            t: opts.t1,
        });
    }
    Ok(f)
}

fn assemble(
    sys: &ControlSystem,
    opts: &ShootOptions,
    lay: &Layout,
    x: &DVector<f64>,
) -> Result<ExtremalCandidate> {
    let mut arcs = Vec::with_capacity(lay.arcs);
    let mut p = Vec::with_capacity(lay.arcs);
    let mut q0 = opts.q_start.clone();
    let mut ta = opts.t0;
    for s in 0..lay.arcs {
        let tb = if s + 1 == lay.arcs {
            opts.t1
        } else {
            lay.corner(x, s + 1)
        };
        let mut red = ReducedHamiltonian::new(sys, opts.z_seeds[s].clone())?;
        let seg = integrate_hamilton(&mut red, &q0, &lay.p(x, s), ta, tb, lay.steps[s])?;
        q0 = seg.q_end().clone();
        ta = tb;
        arcs.push(Arc::new(seg.times[0], tb, seg.q, seg.z)?);
        p.push(seg.p);
    }
    ExtremalCandidate::new(sys, PiecewiseCurve::new(arcs)?, p)
}

fn pseudo_solve(j: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = 1e-7 * smax;
    let u = svd.u.as_ref().unwrap();
    let v_t = svd.v_t.as_ref().unwrap();
    let mut dx = DVector::zeros(j.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let c = u.column(i).dot(f) / s;
            dx += v_t.row(i).transpose() * c;
        }
    }
    dx
}

/// Multiple shooting for a piecewise extremal with fixed endpoints.
///
/// Unknowns are the momenta at every arc start, the states at arc starts
/// after the first, and the corner times. The mismatch collects the state,
/// momentum and Hamiltonian jumps at corners and the final state error.
/// Damped Newton with a finite-difference Jacobian and SVD pseudo-inverse.
pub fn shoot_extremal(sys: &ControlSystem, opts: &ShootOptions) -> Result<ShootOutcome> {
    let n = sys.n();
    let arcs = opts.corners.len() + 1;
    if opts.q_start.len() != n || opts.q_end.len() != n || opts.p_guess.len() != n {
        return Err(Error::Dimension(format!(
            "boundary data must have length n = {n}"
        )));
    }
    if opts.z_seeds.len() != arcs {
        return Err(Error::Dimension(format!(
            "{} control seeds for {arcs} arcs",
            opts.z_seeds.len()
        )));
    }
    let mut breaks = vec![opts.t0];
    breaks.extend(&opts.corners);
    breaks.push(opts.t1);
    if breaks.windows(2).any(|w| !(w[1] - w[0] >= MIN_ARC_LENGTH)) {
        return Err(Error::InvalidCurve(
            "corner guesses must increase strictly inside (t0, t1)".into(),
        ));
    }
    let lay = Layout {
        n,
        arcs,
        steps: breaks
            .windows(2)
            .map(|w| grid_steps(w[1] - w[0], opts.density))
            .collect(),
    };

    // Initial guess: states along the straight chord.
    let mut x = DVector::zeros(lay.len());
    for s in 0..arcs {
        x.rows_mut(s * n, n).copy_from(&opts.p_guess);
    }
    for s in 1..arcs {
        let w = (breaks[s] - opts.t0) / (opts.t1 - opts.t0);
        let q = &opts.q_start * (1.0 - w) + &opts.q_end * w;
        x.rows_mut((arcs + s - 1) * n, n).copy_from(&q);
        x[(2 * arcs - 1) * n + s - 1] = breaks[s];
    }

    let mut f = mismatch(sys, opts, &lay, &x)?;
    let mut iterations = 0;
    let mut trace = Vec::new();
    loop {
        let norm = f.amax();
        trace.push(norm);
        if norm <= opts.tol {
            let candidate = assemble(sys, opts, &lay, &x)?;
            let abnormality = if opts.analyze {
                Some(abnormality_index(
                    sys,
                    &candidate.curve,
                    &AbnormalityOptions::default(),
                )?)
            } else {
                None
            };
            let momenta_unique = abnormality.as_ref().map(|a| a.normal);
            return Ok(ShootOutcome {
                candidate,
                iterations,
                mismatch: norm,
                trace,
                abnormality,
                momenta_unique,
            });
        }
        if iterations >= opts.max_iter {
            return Err(give_up(sys, opts, &lay, &x, iterations, norm));
        }
        iterations += 1;

        let mut jac = DMatrix::zeros(f.len(), x.len());
        for j in 0..x.len() {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let col = match mismatch(sys, opts, &lay, &xp) {
                Ok(fp) => (fp - &f) / h,
                Err(_) => {
                    xp[j] = x[j] - h;
                    match mismatch(sys, opts, &lay, &xp) {
                        Ok(fm) => (&f - fm) / h,
                        Err(_) => DVector::zeros(f.len()),
                    }
                }
            };
            jac.set_column(j, &col);
        }
        let dx = pseudo_solve(&jac, &f);
        let base = f.norm();
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = &x - &dx * lambda;
            if let Ok(ft) = mismatch(sys, opts, &lay, &trial) {
                if ft.norm() < base {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, fnew)) => {
                x = xn;
                f = fnew;
            }
            None => return Err(give_up(sys, opts, &lay, &x, iterations, norm)),
        }
    }
}

fn give_up(
    sys: &ControlSystem,
    opts: &ShootOptions,
    lay: &Layout,
    x: &DVector<f64>,
    iterations: usize,
    residual: f64,
) -> Error {
    Error::NoConvergence {
        iterations,
        residual,
        best: assemble(sys, opts, lay, x).ok().map(Box::new),
    }
}
