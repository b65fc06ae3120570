use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use varcalc_core::transport::{transport_frame, InfinitesimalControl};
use varcalc_core::{
    abnormality_index, builtin_names, integrate_hamilton, shoot_extremal, AbnormalityOptions,
    ControlSystem, Problem, ReducedHamiltonian,
};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn fd_check(sys: &ControlSystem, rng: &mut ChaCha8Rng) -> f64 {
    let (n, r) = (sys.n(), sys.r());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 50 {
        let t = rng.random_range(-1.0..2.0);
        let q = random_vec(rng, n);
        let z = random_vec(rng, r);
        let Ok(b) = sys.evaluate_point(t, &q, &z) else {
            continue;
        };
        let eval = |t: f64, q: &DVector<f64>, z: &DVector<f64>| {
            (sys.psi(t, q, z).unwrap(), sys.lagrangian(t, q, z).unwrap())
        };
        let err = |fd: f64, exact: f64| (fd - exact).abs() / (1.0 + exact.abs());
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let ((pp, lp), (pm, lm)) = (eval(t, &qp, &z), eval(t, &qm, &z));
            for i in 0..n {
                worst = worst.max(err((pp[i] - pm[i]) / (2.0 * h), b.psi_q[(i, k)]));
            }
            worst = worst.max(err((lp - lm) / (2.0 * h), b.lagrangian_q[k]));
        }
        for a in 0..r {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[a] += h;
            zm[a] -= h;
            let ((pp, lp), (pm, lm)) = (eval(t, &q, &zp), eval(t, &q, &zm));
            for i in 0..n {
                worst = worst.max(err((pp[i] - pm[i]) / (2.0 * h), b.psi_z[(i, a)]));
            }
            worst = worst.max(err((lp - lm) / (2.0 * h), b.lagrangian_z[a]));
        }
        let ((pp, lp), (pm, lm)) = (eval(t + h, &q, &z), eval(t - h, &q, &z));
        for i in 0..n {
            worst = worst.max(err((pp[i] - pm[i]) / (2.0 * h), b.psi_t[i]));
        }
        worst = worst.max(err((lp - lm) / (2.0 * h), b.lagrangian_t));
        done += 1;
    }
    worst
}

#[test]
fn jacobians_match_finite_differences_on_every_builtin() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for name in builtin_names() {
        let p = Problem::builtin(name).unwrap();
        let worst = fd_check(&p.system, &mut rng);
        assert!(worst < 1e-6, "{name}: {worst:e}");
    }
}

#[test]
fn pontryagin_hessian_is_symmetric() {
    let p = Problem::builtin("holonomic").unwrap();
    let sys = &p.system;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let q = random_vec(&mut rng, sys.n());
        let z = random_vec(&mut rng, sys.r());
        let pm = random_vec(&mut rng, sys.n());
        let hs = sys.pontryagin_hessian(0.3, &q, &z, &pm).unwrap();
        assert_eq!(hs, hs.transpose());
    }
}

#[test]
fn frames_are_dual_on_corpus_curves() {
    for name in builtin_names() {
        let p = Problem::builtin(name).unwrap();
        let Ok(curve) = p.build_curve() else { continue };
        if curve.admissibility_residual(&p.system).unwrap() > 1e-6 {
            continue;
        }
        let frame =
            transport_frame(&p.system, &curve, &InfinitesimalControl::zero(&curve)).unwrap();
        assert!(frame.duality_defect() <= 1e-9, "{name}");
    }
}

#[test]
fn full_index_never_exceeds_arc_index() {
    for name in ["appb1", "appb2", "appb3", "double-well"] {
        let p = Problem::builtin(name).unwrap();
        let curve = p.build_curve().unwrap();
        let opts = AbnormalityOptions {
            gram: false,
            ..Default::default()
        };
        let full = abnormality_index(&p.system, &curve, &opts).unwrap().index;
        for arc in curve.arcs() {
            let piece = curve
                .restrict(&p.system, arc.t_start(), arc.t_end(), 400.0)
                .unwrap();
            let k = abnormality_index(&p.system, &piece, &opts).unwrap().index;
            assert!(full <= k, "{name}: full {full} arc {k}");
        }
    }
}

#[test]
fn index_is_invariant_under_scaling_psi() {
    for name in ["appb1-arc1", "appb1", "holonomic", "unit-speed"] {
        let p = Problem::builtin(name).unwrap();
        let curve = p.build_curve().unwrap();
        let sys = &p.system;
        let opts = AbnormalityOptions {
            gram: false,
            ..Default::default()
        };
        let base = abnormality_index(sys, &curve, &opts).unwrap().index;
        let psi: Vec<String> = sys.psi_exprs().iter().map(|e| format!("3*({e})")).collect();
        let states: Vec<&str> = sys.states().iter().map(String::as_str).collect();
        let controls: Vec<&str> = sys.controls().iter().map(String::as_str).collect();
        let psi_ref: Vec<&str> = psi.iter().map(String::as_str).collect();
        let params: Vec<(&str, f64)> = sys.params().iter().map(|(k, v)| (k.as_str(), *v)).collect();
        let lag = sys.lagrangian_expr().to_string();
        let scaled = ControlSystem::parse(&states, &controls, &psi_ref, &lag, &params).unwrap();
        let arcs = curve
            .arcs()
            .iter()
            .map(|a| {
                let q = a.q().to_vec();
                let z = a.z().to_vec();
                let t0 = curve.t0();
                let times: Vec<f64> = a.times().iter().map(|t| t0 + (t - t0) / 3.0).collect();
                varcalc_core::Arc::new(times[0], *times.last().unwrap(), q, z).unwrap()
            })
            .collect();
        let slow = varcalc_core::PiecewiseCurve::new(arcs).unwrap();
        let k = abnormality_index(&scaled, &slow, &opts).unwrap().index;
        assert_eq!(k, base, "{name}");
    }
}

#[test]
fn converged_extremals_conserve_energy_and_p0() {
    for name in ["free-particle", "double-well", "pendulum", "unit-speed"] {
        let p = Problem::builtin(name).unwrap();
        let out = shoot_extremal(&p.system, p.solve.as_ref().unwrap()).unwrap();
        let cand = &out.candidate;
        assert!(cand.residuals.p0_defect <= 1e-7, "{name}");
        assert!(cand.residuals.corner_h <= 1e-7, "{name}");
        let h = cand.hamiltonian(&p.system).unwrap();
        for arc in &h {
            let (lo, hi) = arc
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(*v), b.max(*v))
                });
            assert!(hi - lo <= 1e-7, "{name}: drift {}", hi - lo);
        }
    }
}

#[test]
fn hamilton_flow_passes_extremal_residuals() {
    let p = Problem::builtin("pendulum").unwrap();
    let mut red = ReducedHamiltonian::new(&p.system, DVector::from_element(1, 0.5)).unwrap();
    let arc = integrate_hamilton(
        &mut red,
        &DVector::from_element(1, 0.0),
        &DVector::from_element(1, 0.8),
        0.0,
        1.5,
        600,
    )
    .unwrap();
    let res = arc.residuals(&p.system).unwrap();
    assert!(res.passes(1e-7), "{res:?}");
}

#[test]
fn deformation_depends_on_the_control_variation_not_on_h() {
    use nalgebra::DMatrix;
    use varcalc_core::transport::{variational_integrate, DeformationDatum};
    let cases: [(&str, fn(f64) -> DMatrix<f64>); 2] = [
        ("holonomic", |t| DMatrix::from_row_slice(2, 2, &[0.3, t, -0.2, 0.5])),
        ("appb3", |t| DMatrix::from_row_slice(2, 3, &[0.3, t, -0.2, 0.5, 0.0, t * t])),
    ];
    for (name, hf) in cases {
        let p = Problem::builtin(name).unwrap();
        let curve = p.build_curve().unwrap();
        let n = curve.n();
        let alphas = vec![0.4; curve.arcs().len() - 1];
        let x0 = DVector::from_fn(n, |i, _| 0.1 * (i + 1) as f64);
        let d = DeformationDatum::from_fn(&curve, alphas.clone(), x0.clone(), |_, t| {
            DVector::from_vec(vec![t.cos(), 1.0 - t])
        });
        let h = InfinitesimalControl::from_fn(&curve, hf).unwrap();
        let h2 = InfinitesimalControl::zero(&curve);
        let x = variational_integrate(&p.system, &curve, &h, &d).unwrap();
        let u2 = d
            .u
            .iter()
            .zip(&x.coordinates)
            .zip(h.samples())
            .map(|((us, xs), hs)| {
                us.iter()
                    .zip(xs)
                    .zip(hs)
                    .map(|((u, xi), hm)| u + hm * xi)
                    .collect()
            })
            .collect();
        let d2 = DeformationDatum { u: u2, alphas, x0 };
        let y = variational_integrate(&p.system, &curve, &h2, &d2).unwrap();
        let mut worst: f64 = 0.0;
        for (xa, ya) in x.coordinates.iter().zip(&y.coordinates) {
            for (xi, yi) in xa.iter().zip(ya) {
                worst = worst.max((xi - yi).amax());
            }
        }
        assert!(worst <= 1e-6, "{name}: {worst:e}");
    }
}
