//! Abnormality of admissible curves.
//!
//! Candidates for the annihilator are covectors `rho(t) = Phi(t) rho0`
//! transported by the adjoint system `rho' = -(d psi/dq)^T rho`. The
//! annihilator is the set of `rho0` for which `rho . d psi/dz` vanishes at
//! every grid point and `rho . [psi]` vanishes at every corner; its dimension
//! is the abnormality index.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::{arc_weights, PiecewiseCurve};
use crate::error::{Error, Result};
use crate::numeric::{derivative4, null_space, rk4_step_matrix, singular_values};
use crate::system::ControlSystem;
use crate::transport::Sampled;

/// Default relative tolerance of the null-space SVD.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default admissibility threshold checked before any analysis.
pub const DEFAULT_ADMISSIBILITY_TOL: f64 = 1e-6;
/// Points of the uniform part of the default window grid.
pub const DEFAULT_WINDOW_POINTS: usize = 16;

/// Adjoint fundamental matrices and the stacked constraint rows.
#[derive(Clone, Debug)]
pub struct AdjointData {
    /// `phi[s][i]` with `rho(t) = phi rho0`, continuous across corners.
    pub phi: Sampled<DMatrix<f64>>,
    rows: DMatrix<f64>,
    meta: Vec<RowMeta>,
}

#[derive(Clone, Copy, Debug)]
struct RowMeta {
    arc: usize,
    t: f64,
    corner: bool,
}

impl AdjointData {
    pub fn new(sys: &ControlSystem, curve: &PiecewiseCurve) -> Result<Self> {
        let (n, r) = (curve.n(), curve.r());
        let mut phi_all = Vec::with_capacity(curve.arcs().len());
        let mut phi = DMatrix::<f64>::identity(n, n);
        for arc in curve.arcs() {
            let m = arc.steps();
            let dt = arc.step();
            let mut grid = Vec::with_capacity(m + 1);
            for i in 0..=m {
                let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
                grid.push(-b.psi_q.transpose());
            }
            let mut out = Vec::with_capacity(m + 1);
            for i in 0..=m {
                out.push(phi.clone());
                if i == m {
                    break;
                }
                let t = arc.time(i);
                let tm = t + 0.5 * dt;
                let mid = if grid[i].amax() == 0.0 && grid[i + 1].amax() == 0.0 {
                    DMatrix::zeros(n, n)
                } else {
                    -sys.evaluate_point(tm, &arc.q_at(sys, tm)?, &arc.z_at(tm))?
                        .psi_q
                        .transpose()
                };
                let (g0, g1) = (&grid[i], &grid[i + 1]);
                let mut rhs = |tt: f64, y: &DMatrix<f64>| {
                    let g = if tt == t {
                        g0
                    } else if tt == tm {
                        &mid
                    } else {
                        g1
                    };
                    g * y
                };
                phi = rk4_step_matrix(&mut rhs, t, &phi, dt);
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::IntegrationFailure {
                        t,
                        reason: "adjoint fundamental matrix overflowed".into(),
                    });
                }
            }
            phi_all.push(out);
        }

        let grid_rows: usize = curve.arcs().iter().map(|a| (a.steps() + 1) * r).sum();
        let corners = curve.arcs().len() - 1;
        let mut rows = DMatrix::zeros(grid_rows + corners, n);
        let mut meta = Vec::with_capacity(grid_rows + corners);
        let mut k = 0;
        for (s, arc) in curve.arcs().iter().enumerate() {
            for i in 0..=arc.steps() {
                let t = arc.time(i);
                let b = sys.evaluate_point(t, &arc.q()[i], &arc.z()[i])?;
                let block = b.psi_z.transpose() * &phi_all[s][i];
                for a in 0..r {
                    rows.row_mut(k).copy_from(&block.row(a));
                    meta.push(RowMeta {
                        arc: s,
                        t,
                        corner: false,
                    });
                    k += 1;
                }
            }
        }
        for j in curve.corner_jumps(sys)? {
            let row = j.jump.transpose() * &phi_all[j.corner + 1][0];
            rows.row_mut(k).copy_from(&row);
            meta.push(RowMeta {
                arc: j.corner,
                t: j.time,
                corner: true,
            });
            k += 1;
        }
        Ok(AdjointData {
            phi: phi_all,
            rows,
            meta,
        })
    }

    /// Rows belonging to the restriction of the curve to `[ta, tb]`.
    fn window_rows(&self, curve: &PiecewiseCurve, ta: f64, tb: f64) -> DMatrix<f64> {
        let arcs = curve.arcs();
        let keep: Vec<usize> = self
            .meta
            .iter()
            .enumerate()
            .filter(|(_, m)| {
                if m.corner {
                    ta < m.t && m.t < tb
                } else {
                    let a = &arcs[m.arc];
                    let overlap = a.t_end().min(tb) - a.t_start().max(ta);
                    overlap > 0.0 && m.t >= ta && m.t <= tb
                }
            })
            .map(|(i, _)| i)
            .collect();
        DMatrix::from_fn(keep.len(), self.rows.ncols(), |i, j| {
            self.rows[(keep[i], j)]
        })
    }

    fn basis_paths(&self, basis: &[DVector<f64>]) -> Vec<Sampled<DVector<f64>>> {
        basis
            .iter()
            .map(|rho0| {
                self.phi
                    .iter()
                    .map(|arc| arc.iter().map(|p| p * rho0).collect())
                    .collect()
            })
            .collect()
    }
}

/// Annihilator elements with their initial values (orthonormal).
#[derive(Clone, Debug)]
pub struct AnnihilatorBasis {
    pub initial: Vec<DVector<f64>>,
    pub paths: Vec<Sampled<DVector<f64>>>,
}

/// Residuals of one basis element against its defining conditions.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BasisResiduals {
    /// `|rho' + (d psi/dq)^T rho|` by fourth-order differencing.
    pub transport: f64,
    /// `|rho . d psi/dz|` over the grid.
    pub control: f64,
    /// `|rho . [psi]|` over the corners.
    pub corner: f64,
}

impl AnnihilatorBasis {
    pub fn len(&self) -> usize {
        self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial.is_empty()
    }

    pub fn residuals(
        &self,
        sys: &ControlSystem,
        curve: &PiecewiseCurve,
    ) -> Result<Vec<BasisResiduals>> {
        let jumps = curve.corner_jumps(sys)?;
        self.paths
            .iter()
            .map(|path| {
                let mut out = BasisResiduals {
                    transport: 0.0,
                    control: 0.0,
                    corner: 0.0,
                };
                for (s, arc) in curve.arcs().iter().enumerate() {
                    let d = derivative4(&path[s], arc.step());
                    for i in 0..=arc.steps() {
                        let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
                        let rho = &path[s][i];
                        out.transport = out
                            .transport
                            .max((&d[i] + b.psi_q.transpose() * rho).amax());
                        out.control = out.control.max((b.psi_z.transpose() * rho).amax());
                    }
                }
                for j in &jumps {
                    out.corner = out.corner.max(path[j.corner + 1][0].dot(&j.jump).abs());
                }
                Ok(out)
            })
            .collect()
    }
}

/// Annihilator with the singular spectrum of the constraint stack.
#[derive(Clone, Debug)]
pub struct Annihilator {
    pub basis: AnnihilatorBasis,
    pub singular_values: Vec<f64>,
}

fn check_admissible(sys: &ControlSystem, curve: &PiecewiseCurve, threshold: f64) -> Result<()> {
    let residual = curve.admissibility_residual(sys)?;
    if residual > threshold {
        return Err(Error::NotAdmissible {
            residual,
            threshold,
        });
    }
    Ok(())
}

/// Annihilator of the curve at relative SVD tolerance `tol`.
pub fn annihilator(sys: &ControlSystem, curve: &PiecewiseCurve, tol: f64) -> Result<Annihilator> {
    check_admissible(sys, curve, DEFAULT_ADMISSIBILITY_TOL)?;
    let data = AdjointData::new(sys, curve)?;
    Ok(annihilator_from(&data, tol))
}

fn annihilator_from(data: &AdjointData, tol: f64) -> Annihilator {
    let ns = null_space(&data.rows, tol);
    let paths = data.basis_paths(&ns.basis);
    Annihilator {
        basis: AnnihilatorBasis {
            initial: ns.basis,
            paths,
        },
        singular_values: ns.singular_values,
    }
}

/// Gram matrix and its rank.
#[derive(Clone, Debug, Serialize)]
pub struct GramMatrix {
    /// Row-major `n x n` entries.
    pub s: Vec<Vec<f64>>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Set when any corner weight is zero; the rank statement is only
    /// established for nonzero weights.
    pub outside_verified_regime: bool,
}

impl GramMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.s.len();
        DMatrix::from_fn(n, n, |i, j| self.s[i][j])
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix().symmetric_eigenvalues().min()
    }
}

/// `S = int (Phi^T B) G (Phi^T B)^T dt + sum alpha_s^2 (Phi^T [psi])(Phi^T [psi])^T`
/// by composite Simpson, with `B = d psi/dz`.
///
/// The rank counts singular values with `sqrt(sigma / sigma_max) > tol`,
/// i.e. on the amplitude scale of the constraint stack.
pub fn gram_matrix(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    metric: Option<&DMatrix<f64>>,
    alphas: Option<&[f64]>,
    tol: f64,
) -> Result<GramMatrix> {
    let data = AdjointData::new(sys, curve)?;
    gram_from(sys, curve, &data, metric, alphas, tol)
}

fn gram_from(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    data: &AdjointData,
    metric: Option<&DMatrix<f64>>,
    alphas: Option<&[f64]>,
    tol: f64,
) -> Result<GramMatrix> {
    let (n, r) = (curve.n(), curve.r());
    let g = match metric {
        Some(g) => {
            if g.shape() != (r, r) {
                return Err(Error::Dimension(format!("metric must be {r}x{r}")));
            }
            if g.clone().cholesky().is_none() || (g - g.transpose()).amax() > 1e-12 * g.amax() {
                return Err(Error::BadMetric);
            }
            g.clone()
        }
        None => DMatrix::identity(r, r),
    };
    let corners = curve.arcs().len() - 1;
    let alphas: Vec<f64> = match alphas {
        Some(a) if a.len() != corners => {
            return Err(Error::Dimension(format!(
                "{} alphas for {corners} corners",
                a.len()
            )))
        }
        Some(a) => a.to_vec(),
        None => vec![1.0; corners],
    };
    let mut s = DMatrix::<f64>::zeros(n, n);
    for (k, arc) in curve.arcs().iter().enumerate() {
        let w = arc_weights(arc);
        for i in 0..=arc.steps() {
            let b = sys.evaluate_point(arc.time(i), &arc.q()[i], &arc.z()[i])?;
            let m = data.phi[k][i].transpose() * &b.psi_z;
            s += w[i] * (&m * &g * m.transpose());
        }
    }
    for j in curve.corner_jumps(sys)? {
        let v = data.phi[j.corner + 1][0].transpose() * &j.jump;
        s += alphas[j.corner].powi(2) * (&v * v.transpose());
    }
    let s = 0.5 * (&s + s.transpose());
    let sv = singular_values(&s);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter()
            .filter(|&&x| (x / smax).max(0.0).sqrt() > tol)
            .count()
    };
    Ok(GramMatrix {
        s: (0..n)
            .map(|i| (0..n).map(|j| s[(i, j)]).collect())
            .collect(),
        rank,
        singular_values: sv,
        outside_verified_regime: alphas.contains(&0.0),
        alphas,
    })
}

/// Index on one subinterval of the local scan.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WindowIndex {
    pub t_start: f64,
    pub t_end: f64,
    pub index: usize,
    /// `sigma_min / sigma_max` of the window's constraint stack.
    #[serde(skip)]
    pub sigma_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalScan {
    pub locally_normal: bool,
    /// A failing window: the most clearly degenerate one, preferring longer
    /// and then earlier windows.
    pub witness: Option<WindowIndex>,
    pub windows: Vec<WindowIndex>,
}

/// Default endpoints: corners, a uniform grid and `0` when inside the span.
pub fn default_window_grid(curve: &PiecewiseCurve) -> Vec<f64> {
    let (t0, t1) = (curve.t0(), curve.t1());
    let k = DEFAULT_WINDOW_POINTS;
    let mut g: Vec<f64> = (0..k)
        .map(|i| {
            if i == k - 1 {
                t1
            } else {
                t0 + (t1 - t0) * i as f64 / (k - 1) as f64
            }
        })
        .collect();
    g.extend(curve.corner_times());
    if t0 < 0.0 && 0.0 < t1 {
        g.push(0.0);
    }
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    g
}

fn thread_pool() -> Option<rayon::ThreadPool> {
    let n: usize = std::env::var("VARCALC_THREADS").ok()?.trim().parse().ok()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .ok()
}

/// Index on every window `[a, b]` with `a < b` drawn from `grid`.
pub fn local_normality_scan(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    grid: Option<&[f64]>,
    tol: f64,
) -> Result<LocalScan> {
    let data = AdjointData::new(sys, curve)?;
    Ok(scan_from(curve, &data, grid, tol))
}

fn scan_from(
    curve: &PiecewiseCurve,
    data: &AdjointData,
    grid: Option<&[f64]>,
    tol: f64,
) -> LocalScan {
    let mut points: Vec<f64> = match grid {
        Some(g) => g
            .iter()
            .copied()
            .filter(|t| *t >= curve.t0() && *t <= curve.t1())
            .collect(),
        None => default_window_grid(curve),
    };
    points.sort_by(f64::total_cmp);
    points.dedup();
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| points[i + 1..].iter().map(move |&b| (a, b)))
        .collect();
    let run = || -> Vec<WindowIndex> {
        pairs
            .par_iter()
            .map(|&(a, b)| {
                let rows = data.window_rows(curve, a, b);
                let ns = null_space(&rows, tol);
                let smax = ns.singular_values.first().copied().unwrap_or(0.0);
                let smin = ns.singular_values.last().copied().unwrap_or(0.0);
                WindowIndex {
                    t_start: a,
                    t_end: b,
                    index: ns.basis.len(),
                    sigma_ratio: if smax > 0.0 { smin / smax } else { 0.0 },
                }
            })
            .collect()
    };
    let windows = match thread_pool() {
        Some(pool) => pool.install(run),
        None => run(),
    };
    let witness = windows
        .iter()
        .filter(|w| w.index > 0)
        .min_by(|x, y| {
            x.sigma_ratio
                .total_cmp(&y.sigma_ratio)
                .then((y.t_end - y.t_start).total_cmp(&(x.t_end - x.t_start)))
                .then(x.t_start.total_cmp(&y.t_start))
        })
        .cloned();
    LocalScan {
        locally_normal: witness.is_none(),
        witness,
        windows,
    }
}

/// Settings for [`abnormality_index`].
#[derive(Clone, Debug)]
pub struct AbnormalityOptions {
    pub tol: f64,
    pub admissibility_tol: f64,
    pub gram: bool,
    pub metric: Option<DMatrix<f64>>,
    pub alphas: Option<Vec<f64>>,
    pub scan_local: bool,
    pub window_grid: Option<Vec<f64>>,
}

impl Default for AbnormalityOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            admissibility_tol: DEFAULT_ADMISSIBILITY_TOL,
            gram: true,
            metric: None,
            alphas: None,
            scan_local: false,
            window_grid: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AbnormalityReport {
    pub index: usize,
    pub normal: bool,
    /// Normal curves are ordinary; nothing is claimed otherwise.
    pub ordinary_implied: bool,
    pub tol: f64,
    pub singular_values: Vec<f64>,
    /// Initial covectors of the annihilator basis.
    pub basis_initial: Vec<Vec<f64>>,
    pub gram: Option<GramMatrix>,
    pub gram_agrees: Option<bool>,
    pub local: Option<LocalScan>,
    #[serde(skip)]
    pub basis: AnnihilatorBasis,
}

impl AbnormalityReport {
    /// `None` when no scan was run.
    pub fn locally_normal(&self) -> Option<bool> {
        self.local.as_ref().map(|l| l.locally_normal)
    }
}

pub fn abnormality_index(
    sys: &ControlSystem,
    curve: &PiecewiseCurve,
    opts: &AbnormalityOptions,
) -> Result<AbnormalityReport> {
    check_admissible(sys, curve, opts.admissibility_tol)?;
    let data = AdjointData::new(sys, curve)?;
    let ann = annihilator_from(&data, opts.tol);
    let index = ann.basis.len();
    let gram = if opts.gram {
        Some(gram_from(
            sys,
            curve,
            &data,
            opts.metric.as_ref(),
            opts.alphas.as_deref(),
            opts.tol,
        )?)
    } else {
        None
    };
    let local = opts
        .scan_local
        .then(|| scan_from(curve, &data, opts.window_grid.as_deref(), opts.tol));
    Ok(AbnormalityReport {
        index,
        normal: index == 0,
        ordinary_implied: index == 0,
        tol: opts.tol,
        singular_values: ann.singular_values,
        basis_initial: ann
            .basis
            .initial
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect(),
        gram_agrees: gram.as_ref().map(|g| g.rank + index == curve.n()),
        gram,
        local,
        basis: ann.basis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{integrate_admissible, ArcControl, ControlPath};
    use crate::expr::Expr;
    use std::f64::consts::FRAC_PI_2;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn consts(values: &[f64]) -> ArcControl {
        ArcControl::Expressions(values.iter().map(|&c| Expr::num(c)).collect())
    }

    fn ex1() -> (ControlSystem, PiecewiseCurve) {
        let s = ControlSystem::parse(
            &["x", "y"],
            &["z"],
            &["v*cos(z)", "v*sin(z)"],
            "0",
            &[("v", 1.0)],
        )
        .unwrap();
        let path = ControlPath {
            arcs: vec![consts(&[FRAC_PI_2]), consts(&[0.0])],
        };
        let c = integrate_admissible(&s, &path, &v(&[0.0, -1.0]), &[-1.0, 0.0, 1.0], 200.0)
            .unwrap()
            .curve;
        (s, c)
    }

    #[test]
    fn unit_speed_arcs_and_full_curve() {
        let (s, c) = ex1();
        let full = annihilator(&s, &c, DEFAULT_TOL).unwrap();
        assert!(full.basis.is_empty());
        let arc1 = c.restrict(&s, -1.0, 0.0, 200.0).unwrap();
        let b1 = annihilator(&s, &arc1, DEFAULT_TOL).unwrap().basis;
        assert_eq!(b1.len(), 1);
        // Arc along the y axis: the annihilator is dy.
        assert!((&b1.initial[0] - v(&[0.0, 1.0])).amax() < 1e-12);
        let arc2 = c.restrict(&s, 0.0, 1.0, 200.0).unwrap();
        let b2 = annihilator(&s, &arc2, DEFAULT_TOL).unwrap().basis;
        assert!((&b2.initial[0] - v(&[1.0, 0.0])).amax() < 1e-12);
        for r in b2.residuals(&s, &arc2).unwrap() {
            assert!(r.transport < 1e-6 && r.control < 1e-12 && r.corner == 0.0);
        }
    }

    #[test]
    fn gram_rank_matches() {
        let (s, c) = ex1();
        let g = gram_matrix(&s, &c, None, None, DEFAULT_TOL).unwrap();
        assert_eq!(g.rank, 2);
        assert!(g.min_eigenvalue() >= -1e-9 * g.matrix().trace());
        let arc1 = c.restrict(&s, -1.0, 0.0, 200.0).unwrap();
        assert_eq!(
            gram_matrix(&s, &arc1, None, None, DEFAULT_TOL)
                .unwrap()
                .rank,
            1
        );
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(matches!(
            gram_matrix(&s, &c, Some(&bad), None, DEFAULT_TOL),
            Err(Error::BadMetric)
        ));
        let zero_alpha = gram_matrix(&s, &c, None, Some(&[0.0]), DEFAULT_TOL).unwrap();
        assert!(zero_alpha.outside_verified_regime);
    }

    #[test]
    fn holonomic_is_normal_everywhere() {
        let s =
            ControlSystem::parse(&["q1", "q2"], &["z1", "z2"], &["z1", "z2"], "0", &[]).unwrap();
        let path = ControlPath {
            arcs: vec![consts(&[1.0, -0.5])],
        };
        let c = integrate_admissible(&s, &path, &v(&[0.0, 0.0]), &[0.0, 1.0], 100.0)
            .unwrap()
            .curve;
        let opts = AbnormalityOptions {
            scan_local: true,
            ..Default::default()
        };
        let rep = abnormality_index(&s, &c, &opts).unwrap();
        assert_eq!(rep.index, 0);
        assert_eq!(rep.locally_normal(), Some(true));
        assert!(rep.local.unwrap().windows.iter().all(|w| w.index == 0));
        assert_eq!(rep.gram_agrees, Some(true));
    }

    #[test]
    fn inadmissible_curve_is_rejected() {
        let (s, c) = ex1();
        let other =
            ControlSystem::parse(&["x", "y"], &["z"], &["2*cos(z)", "sin(z)"], "0", &[]).unwrap();
        assert!(matches!(
            annihilator(&other, &c, DEFAULT_TOL),
            Err(Error::NotAdmissible { .. })
        ));
        assert!(annihilator(&s, &c, DEFAULT_TOL).is_ok());
    }

    #[test]
    fn window_grid_contains_corners_and_zero() {
        let (_, c) = ex1();
        let g = default_window_grid(&c);
        assert!(g.contains(&0.0));
        assert_eq!(g[0], -1.0);
        assert_eq!(*g.last().unwrap(), 1.0);
    }
}
