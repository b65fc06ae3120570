//! Transport of vertical vectors and covectors along a curve under an
//! infinitesimal control `h`, and integration of the variational equation.
//!
//! With `A = d psi/dq + (d psi/dz) h` the frame matrix `F` (columns `e_a`)
//! solves `F' = A F` from the identity at `t0`, and the coframe is `F^-1`.

use nalgebra::{DMatrix, DVector};

use crate::curve::{Arc, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::numeric::{cumulative_simpson, derivative4, rk4_step_matrix};
use crate::system::ControlSystem;

/// Per-arc, per-grid-sample values.
pub type Sampled<T> = Vec<Vec<T>>;

/// Frames whose condition number exceeds this are rejected.
pub const MAX_FRAME_CONDITION: f64 = 1e12;

/// Matrices `h[(A, k)] = h_k^A` (r x n) sampled on the curve grid.
#[derive(Clone, Debug)]
pub struct InfinitesimalControl {
    samples: Sampled<DMatrix<f64>>,
}

impl InfinitesimalControl {
    /// The default gauge `h = 0`.
    pub fn zero(curve: &PiecewiseCurve) -> Self {
        let (n, r) = (curve.n(), curve.r());
        Self {
            samples: curve
                .arcs()
                .iter()
                .map(|a| vec![DMatrix::zeros(r, n); a.steps() + 1])
                .collect(),
        }
    }

    /// Samples `f(t)` on every arc grid.
    pub fn from_fn(curve: &PiecewiseCurve, mut f: impl FnMut(f64) -> DMatrix<f64>) -> Result<Self> {
        let (n, r) = (curve.n(), curve.r());
        let mut samples = Vec::with_capacity(curve.arcs().len());
        for arc in curve.arcs() {
            let mut row = Vec::with_capacity(arc.steps() + 1);
            for t in arc.times() {
                let m = f(t);
                if m.shape() != (r, n) {
                    return Err(Error::Dimension(format!(
                        "infinitesimal control must be {r}x{n}, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "infinitesimal control".into(),
                        t,
                    });
                }
                row.push(m);
            }
            samples.push(row);
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &Sampled<DMatrix<f64>> {
        &self.samples
    }

    fn check(&self, curve: &PiecewiseCurve) -> Result<()> {
        let ok = self.samples.len() == curve.arcs().len()
            && self
                .samples
                .iter()
                .zip(curve.arcs())
                .all(|(s, a)| s.len() == a.steps() + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(
                "infinitesimal control does not match the curve grid".into(),
            ))
        }
    }

    fn at(&self, arc_index: usize, arc: &Arc, t: f64) -> DMatrix<f64> {
        let rows = &self.samples[arc_index];
        let m = arc.steps();
        let s = ((t - arc.t_start()) / arc.step()).clamp(0.0, m as f64);
        let j0 = (s.floor() as usize).saturating_sub(1).min(m - 3);
        let mut out = DMatrix::zeros(rows[0].nrows(), rows[0].ncols());
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (s - (j0 + b) as f64) / (a as f64 - b as f64);
                }
            }
            out += w * &rows[j0 + a];
        }
        out
    }
}

/// Generator `A = d psi/dq + (d psi/dz) h` at a point of the lift.
fn generator(
    sys: &ControlSystem,
    t: f64,
    q: &DVector<f64>,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let b = sys.evaluate_point(t, q, z)?;
    Ok(&b.psi_q + &b.psi_z * h)
}

/// Frame and coframe components along the curve.
#[derive(Clone, Debug)]
pub struct TransportedFrame {
    /// `frame[s][i][(k, a)] = e_a^k`
    pub frame: Sampled<DMatrix<f64>>,
    /// `coframe[s][i][(a, k)] = e^a_k`
    pub coframe: Sampled<DMatrix<f64>>,
}

impl TransportedFrame {
    /// Max over the grid of `|C F - I|`.
    pub fn duality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (fa, ca) in self.frame.iter().zip(&self.coframe) {
            for (f, c) in fa.iter().zip(ca) {
                let n = f.nrows();
                worst = worst.max((c * f - DMatrix::<f64>::identity(n, n)).amax());
            }
        }
        worst
    }
}

/// Propagates the frame from the identity at `t0` by RK4 on each arc grid,
/// copying components across corners; coframes by inversion.
pub fn transport_frame(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    h: &InfinitesimalControl,
) -> Result<TransportedFrame> {
    h.check(curve)?;
    let n = curve.n();
    let mut f = DMatrix::<f64>::identity(n, n);
    let mut frame = Vec::with_capacity(curve.arcs().len());
    let mut coframe = Vec::with_capacity(curve.arcs().len());
    for (s, arc) in curve.arcs().iter().enumerate() {
        let m = arc.steps();
        let dt = arc.step();
        let mut fs = Vec::with_capacity(m + 1);
        let mut cs = Vec::with_capacity(m + 1);
        let mut grid_a = Vec::with_capacity(m + 1);
        for i in 0..=m {
            grid_a.push(generator(
                sys,
                arc.time(i),
                &arc.q()[i],
                &arc.z()[i],
                &h.samples[s][i],
            )?);
        }
        for i in 0..=m {
            let t = arc.time(i);
            let (inv, cond) = invert_checked(&f);
            if cond > MAX_FRAME_CONDITION {
                return Err(Error::SingularFrame { t, condition: cond });
            }
            fs.push(f.clone());
            cs.push(inv);
            if i == m {
                break;
            }
            let tm = t + 0.5 * dt;
            let a_mid = generator(
                sys,
                tm,
                &arc.q_at(sys, tm)?,
                &arc.z_at(tm),
                &h.at(s, arc, tm),
            )?;
            let (a0, a1) = (&grid_a[i], &grid_a[i + 1]);
            let mut rhs = |tt: f64, y: &DMatrix<f64>| {
                let a = if tt == t {
                    a0
                } else if tt == tm {
                    &a_mid
                } else {
                    a1
                };
                a * y
            };
            f = rk4_step_matrix(&mut rhs, t, &f, dt);
        }
        frame.push(fs);
        coframe.push(cs);
    }
    Ok(TransportedFrame { frame, coframe })
}

fn invert_checked(f: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sv = f.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    match f.clone().try_inverse() {
        Some(inv) => (inv, cond),
        None => (DMatrix::zeros(f.nrows(), f.ncols()), f64::INFINITY),
    }
}

/// Max over the grid of `|dC/dt + C A|` with `dC/dt` by fourth-order differencing.
pub fn coframe_residual(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    h: &InfinitesimalControl,
    frame: &TransportedFrame,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (s, arc) in curve.arcs().iter().enumerate() {
        let n = curve.n();
        let flat: Vec<DVector<f64>> = frame.coframe[s]
            .iter()
            .map(|c| DVector::from_column_slice(c.as_slice()))
            .collect();
        let d = derivative4(&flat, arc.step());
        for i in 0..=arc.steps() {
            let a = generator(sys, arc.time(i), &arc.q()[i], &arc.z()[i], &h.samples[s][i])?;
            let dc = DMatrix::from_column_slice(n, n, d[i].as_slice());
            worst = worst.max((dc + &frame.coframe[s][i] * a).amax());
        }
    }
    Ok(worst)
}

/// `tau[(i, j)] = -d psi^j/dq^i - h_i^A d psi^j/dz^A`, sampled on the grid.
#[derive(Clone, Debug)]
pub struct TemporalConnection {
    pub tau: Sampled<DMatrix<f64>>,
}

pub fn connection_coefficients(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    h: &InfinitesimalControl,
) -> Result<TemporalConnection> {
    h.check(curve)?;
    let mut tau = Vec::with_capacity(curve.arcs().len());
    for (s, arc) in curve.arcs().iter().enumerate() {
        let mut row = Vec::with_capacity(arc.steps() + 1);
        for i in 0..=arc.steps() {
            let a = generator(sys, arc.time(i), &arc.q()[i], &arc.z()[i], &h.samples[s][i])?;
            row.push(-a.transpose());
        }
        tau.push(row);
    }
    Ok(TemporalConnection { tau })
}

fn check_field(curve: &PiecewiseCurve, x: &Sampled<DVector<f64>>) -> Result<()> {
    let ok = x.len() == curve.arcs().len()
        && x.iter()
            .zip(curve.arcs())
            .all(|(s, a)| s.len() == a.steps() + 1);
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension(
            "sampled field does not match the curve grid".into(),
        ))
    }
}

/// Absolute derivative of a vertical vector field: `dX^j/dt + X^i tau_i^j`.
pub fn absolute_derivative_vector(
    curve: &PiecewiseCurve,
    conn: &TemporalConnection,
    x: &Sampled<DVector<f64>>,
) -> Result<Sampled<DVector<f64>>> {
    check_field(curve, x)?;
    Ok(curve
        .arcs()
        .iter()
        .enumerate()
        .map(|(s, arc)| {
            derivative4(&x[s], arc.step())
                .into_iter()
                .zip(&x[s])
                .zip(&conn.tau[s])
                .map(|((d, xi), tau)| d + tau.transpose() * xi)
                .collect()
        })
        .collect())
}

/// Absolute derivative of a virtual covector: `d l_i/dt - tau_i^j l_j`.
pub fn absolute_derivative_covector(
    curve: &PiecewiseCurve,
    conn: &TemporalConnection,
    lambda: &Sampled<DVector<f64>>,
) -> Result<Sampled<DVector<f64>>> {
    check_field(curve, lambda)?;
    Ok(curve
        .arcs()
        .iter()
        .enumerate()
        .map(|(s, arc)| {
            derivative4(&lambda[s], arc.step())
                .into_iter()
                .zip(&lambda[s])
                .zip(&conn.tau[s])
                .map(|((d, l), tau)| d - tau * l)
                .collect()
        })
        .collect())
}

/// Data `(U, alpha, X0)` of an infinitesimal deformation.
#[derive(Clone, Debug)]
pub struct DeformationDatum {
    /// Vertical field `U^A` (r-vectors) on the curve grid.
    pub u: Sampled<DVector<f64>>,
    /// One weight per corner.
    pub alphas: Vec<f64>,
    /// Coordinate value `X(t0)`.
    pub x0: DVector<f64>,
}

impl DeformationDatum {
    pub fn zero(curve: &PiecewiseCurve) -> Self {
        Self {
            u: curve
                .arcs()
                .iter()
                .map(|a| vec![DVector::zeros(curve.r()); a.steps() + 1])
                .collect(),
            alphas: vec![0.0; curve.arcs().len() - 1],
            x0: DVector::zeros(curve.n()),
        }
    }

    /// Samples `u(t)` on every arc; `u` receives the arc index and time.
    pub fn from_fn(
        curve: &PiecewiseCurve,
        alphas: Vec<f64>,
        x0: DVector<f64>,
        mut u: impl FnMut(usize, f64) -> DVector<f64>,
    ) -> Self {
        Self {
            u: curve
                .arcs()
                .iter()
                .enumerate()
                .map(|(s, a)| a.times().into_iter().map(|t| u(s, t)).collect())
                .collect(),
            alphas,
            x0,
        }
    }
}

/// Solution of the variational equation in both component systems.
#[derive(Clone, Debug)]
pub struct Deformation {
    /// Components `X^a` on the transported frame.
    pub frame_components: Sampled<DVector<f64>>,
    /// Coordinate components `X^i = X^a e_a^i`.
    pub coordinates: Sampled<DVector<f64>>,
}

impl Deformation {
    pub fn end(&self) -> &DVector<f64> {
        self.coordinates.last().unwrap().last().unwrap()
    }
}

/// Integrates `dX^a/dt = U^A e^a_i d psi^i/dz^A` with corner jumps
/// `[X^a] = -alpha_s e^a_i [psi^i]`, by cumulative Simpson quadrature.
pub fn variational_integrate(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    h: &InfinitesimalControl,
    datum: &DeformationDatum,
) -> Result<Deformation> {
    let frame = transport_frame(sys, curve, h)?;
    variational_integrate_with(sys, curve, &frame, datum)
}

/// As [`variational_integrate`] with a precomputed frame.
pub fn variational_integrate_with(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    frame: &TransportedFrame,
    datum: &DeformationDatum,
) -> Result<Deformation> {
    check_field(curve, &datum.u)?;
    let n_arcs = curve.arcs().len();
    if datum.alphas.len() != n_arcs - 1 || datum.x0.len() != curve.n() {
        return Err(Error::Dimension(
            "deformation datum does not match the curve".into(),
        ));
    }
    let jumps = curve.corner_jumps(sys)?;
    let mut xa = datum.x0.clone();
    let mut frame_components = Vec::with_capacity(n_arcs);
    let mut coordinates = Vec::with_capacity(n_arcs);
    for (s, arc) in curve.arcs().iter().enumerate() {
        if s > 0 {
            let c = &frame.coframe[s][0];
            xa -= datum.alphas[s - 1] * (c * &jumps[s - 1].jump);
        }
        let mut integrand = Vec::with_capacity(arc.steps() + 1);
        for i in 0..=arc.steps() {
            let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
            integrand.push(&frame.coframe[s][i] * (&b.psi_z * &datum.u[s][i]));
        }
        let running = cumulative_simpson(&integrand, arc.step());
        let comps: Vec<DVector<f64>> = running.iter().map(|v| &xa + v).collect();
        xa = comps.last().unwrap().clone();
        coordinates.push(
            comps
                .iter()
                .zip(&frame.frame[s])
                .map(|(x, f)| f * x)
                .collect(),
        );
        frame_components.push(comps);
    }
    Ok(Deformation {
        frame_components,
        coordinates,
    })
}

/// Max residual of the coordinate variational equation
/// `dX/dt = dpsi/dq X + dpsi/dz (h X + U)` under fourth-order differencing.
pub fn variational_residual(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    h: &InfinitesimalControl,
    datum: &DeformationDatum,
    deformation: &Deformation,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (s, arc) in curve.arcs().iter().enumerate() {
        let x = &deformation.coordinates[s];
        let dx = derivative4(x, arc.step());
        for i in 0..=arc.steps() {
            let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
            let lift = &h.samples[s][i] * &x[i] + &datum.u[s][i];
            let rhs = &b.psi_q * &x[i] + &b.psi_z * lift;
            worst = worst.max((&dx[i] - rhs).amax());
        }
    }
    Ok(worst)
}
