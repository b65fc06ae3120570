use std::process::ExitCode;

use serde_json::{json, Value};
use varcalc_core::abnormality::{abnormality_index, AbnormalityOptions};
use varcalc_core::extremal::{gauge_transform, shoot_extremal, NO_CERTIFICATE_NOTE};
use varcalc_core::multipliers::{recover_multipliers, verify_correspondence};
use varcalc_core::system::DEFAULT_RANK_TOL;
use varcalc_core::{Error, ExtremalCandidate, Problem};

use crate::report::{
    input, negative, print_residuals, residual_json, vector, write_json, write_text, Failure,
};
use crate::Common;

type Outcome = Result<ExitCode, Failure>;

fn exit(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load(c: &Common) -> Result<Problem, Failure> {
    match (&c.builtin, &c.file) {
        (Some(name), _) => Problem::builtin(name).map_err(input),
        (None, Some(path)) => {
            Problem::from_file(path).map_err(|e| input(format!("{}: {e}", path.display())))
        }
        (None, None) => Err(input("give a problem file or --builtin NAME")),
    }
}

fn candidate(c: &Common, p: &Problem) -> Result<ExtremalCandidate, Failure> {
    if let Some(path) = &c.candidate {
        let text =
            std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        return ExtremalCandidate::from_csv(&p.system, &text)
            .map_err(|e| input(format!("{}: {e}", path.display())));
    }
    let mut o = p
        .solve
        .clone()
        .ok_or_else(|| input("no --candidate given and the problem has no [solve] section"))?;
    o.analyze = false;
    shoot_extremal(&p.system, &o)
        .map(|out| out.candidate)
        .map_err(|e| negative(format!("{e}\n{NO_CERTIFICATE_NOTE}")))
}

pub fn check(c: &Common) -> Outcome {
    let p = load(c)?;
    let sys = &p.system;
    let curve = p.build_curve().map_err(input)?;
    let tol = c.tol.unwrap_or(p.numerics.admissibility_tol);
    let residual = curve.admissibility_residual(sys).map_err(negative)?;
    let mut full_rank = true;
    let mut min_ratio = f64::INFINITY;
    for arc in curve.arcs() {
        for i in 0..=arc.steps() {
            let rc = sys
                .check_rank(arc.time(i), &arc.q()[i], &arc.z()[i], DEFAULT_RANK_TOL)
                .map_err(negative)?;
            full_rank &= rc.full_rank;
            if let (Some(first), Some(last)) =
                (rc.singular_values.first(), rc.singular_values.last())
            {
                min_ratio = min_ratio.min(if *first > 0.0 { last / first } else { 0.0 });
            }
        }
    }
    if !min_ratio.is_finite() {
        min_ratio = 1.0;
    }
    let jumps = curve.corner_jumps(sys).map_err(negative)?;
    let admissible = residual <= tol;

    println!(
        "admissibility residual {residual:.6e} (tol {tol:.1e}): {}",
        if admissible {
            "admissible"
        } else {
            "NOT admissible"
        }
    );
    println!(
        "control rank: {} (min singular ratio {min_ratio:.6e})",
        if full_rank { "full" } else { "deficient" }
    );
    if !jumps.is_empty() {
        println!("corner  t             jump");
        for j in &jumps {
            let cells: Vec<String> = j.jump.iter().map(|v| format!("{v:.6}")).collect();
            println!(
                "{:<7} {:<13.6} [{}]",
                j.corner + 1,
                j.time,
                cells.join(", ")
            );
        }
    }
    let report = json!({
        "command": "check",
        "admissibility_residual": residual,
        "tol": tol,
        "admissible": admissible,
        "full_rank": full_rank,
        "min_singular_ratio": min_ratio,
        "corners": jumps.iter().map(|j| json!({
            "corner": j.corner + 1,
            "t": j.time,
            "jump": vector(&j.jump),
        })).collect::<Vec<_>>(),
    });
    write_json(c.json.as_deref(), &report)?;
    Ok(exit(admissible))
}

pub fn abnormality(c: &Common) -> Outcome {
    let p = load(c)?;
    let curve = p.build_curve().map_err(input)?;
    let opts = AbnormalityOptions {
        tol: c.tol.unwrap_or(p.numerics.svd_tol),
        admissibility_tol: p.numerics.admissibility_tol,
        alphas: p.numerics.alphas.clone(),
        scan_local: c.scan_local,
        ..Default::default()
    };
    let rep = abnormality_index(&p.system, &curve, &opts).map_err(negative)?;
    let mut line = format!(
        "index {} ({})",
        rep.index,
        if rep.normal { "normal" } else { "abnormal" }
    );
    if let Some(local) = &rep.local {
        match &local.witness {
            None => line.push_str("; locally normal"),
            Some(w) => line.push_str(&format!(
                "; NOT locally normal: [{:.6}, {:.6}] has index {}",
                w.t_start, w.t_end, w.index
            )),
        }
    }
    println!("{line}");
    if let Some(g) = &rep.gram {
        println!(
            "Gram rank {} ({}){}",
            g.rank,
            if rep.gram_agrees == Some(true) {
                "agrees with n - index"
            } else {
                "DISAGREES with n - index"
            },
            if g.outside_verified_regime {
                "; zero corner weight"
            } else {
                ""
            }
        );
    }
    let sv: Vec<String> = rep
        .singular_values
        .iter()
        .map(|s| format!("{s:.6e}"))
        .collect();
    println!("singular values [{}]", sv.join(", "));
    for (k, rho) in rep.basis_initial.iter().enumerate() {
        let cells: Vec<String> = rho.iter().map(|v| format!("{v:.6}")).collect();
        println!("annihilator {} at t0: [{}]", k + 1, cells.join(", "));
    }
    let mut report = serde_json::to_value(&rep).map_err(input)?;
    report["command"] = json!("abnormality");
    write_json(c.json.as_deref(), &report)?;
    Ok(exit(rep.normal && rep.locally_normal() != Some(false)))
}

pub fn solve(c: &Common) -> Outcome {
    let p = load(c)?;
    let o = p
        .solve
        .clone()
        .ok_or_else(|| input("problem has no [solve] section"))?;
    let tol = c.tol.unwrap_or(p.numerics.acceptance_tol);
    match shoot_extremal(&p.system, &o) {
        Ok(out) => {
            for (k, m) in out.trace.iter().enumerate() {
                println!("iteration {k:>3}  mismatch {m:.6e}");
            }
            let cand = &out.candidate;
            let pass = cand.residuals.passes(tol);
            println!("converged after {} iterations; residuals:", out.iterations);
            print_residuals(&cand.residuals);
            if out.momenta_unique == Some(false) {
                println!("curve is abnormal: momenta are not unique");
            }
            write_text(c.csv.as_deref(), &cand.to_csv(None))?;
            let report = json!({
                "command": "solve",
                "converged": true,
                "iterations": out.iterations,
                "mismatch": out.mismatch,
                "trace": out.trace,
                "corner_times": cand.corner_times(),
                "residuals": residual_json(&cand.residuals),
                "acceptance_tol": tol,
                "pass": pass,
                "momenta_unique": out.momenta_unique,
                "abnormality": out.abnormality,
            });
            write_json(c.json.as_deref(), &report)?;
            Ok(exit(pass))
        }
        Err(Error::NoConvergence {
            iterations,
            residual,
            best,
        }) => {
            println!("no convergence after {iterations} iterations (mismatch {residual:.6e})");
            println!("{NO_CERTIFICATE_NOTE}");
            if let Some(best) = &best {
                write_text(c.csv.as_deref(), &best.to_csv(None))?;
            }
            let report = json!({
                "command": "solve",
                "converged": false,
                "iterations": iterations,
                "mismatch": residual,
                "residuals": best.as_ref().map(|b| residual_json(&b.residuals)),
                "note": NO_CERTIFICATE_NOTE,
            });
            write_json(c.json.as_deref(), &report)?;
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(negative(format!("{e}\n{NO_CERTIFICATE_NOTE}"))),
    }
}

pub fn verify(c: &Common) -> Outcome {
    let p = load(c)?;
    if c.candidate.is_none() {
        return Err(input("verify needs --candidate PATH"));
    }
    let cand = candidate(c, &p)?;
    let tol = c.tol.unwrap_or(p.numerics.acceptance_tol);
    let pass = cand.residuals.passes(tol);
    println!(
        "residuals (tol {tol:.1e}): {}",
        if pass { "pass" } else { "FAIL" }
    );
    print_residuals(&cand.residuals);
    let report = json!({
        "command": "verify",
        "residuals": residual_json(&cand.residuals),
        "acceptance_tol": tol,
        "pass": pass,
    });
    write_json(c.json.as_deref(), &report)?;
    Ok(exit(pass))
}

pub fn multipliers(c: &Common) -> Outcome {
    let p = load(c)?;
    let ext = p
        .extrinsic
        .as_ref()
        .ok_or_else(|| input("problem has no [extrinsic] section"))?;
    let cand = candidate(c, &p)?;
    let tol = c.tol.unwrap_or(p.numerics.acceptance_tol);
    let lam = recover_multipliers(ext, &p.system, &cand, tol).map_err(negative)?;
    let rep = verify_correspondence(ext, &p.system, &cand, &lam).map_err(negative)?;
    let pass = rep.passes(tol);
    let names = lam.column_names();
    let mut ranges = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let values = lam.lambda.iter().flatten().map(|l| l[k]);
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        println!("{name}: min {lo:.6} max {hi:.6}");
        ranges.push(json!({ "name": name, "min": lo, "max": hi }));
    }
    println!("pointwise residual {:.6e}", lam.residual);
    println!(
        "Euler-Lagrange {:.6e}, constraint {:.6e}, corner momentum {:.6e}, corner energy {:.6e}: {}",
        rep.euler_lagrange,
        rep.constraint,
        rep.corner_momentum,
        rep.corner_energy,
        if pass { "pass" } else { "FAIL" }
    );
    write_text(c.csv.as_deref(), &cand.to_csv(Some((&names, &lam.lambda))))?;
    let report = json!({
        "command": "multipliers",
        "multipliers": ranges,
        "pointwise_residual": lam.residual,
        "constraint_residual": lam.constraint_residual,
        "corner_jump": lam.corner_jump,
        "correspondence": rep,
        "acceptance_tol": tol,
        "pass": pass,
    });
    write_json(c.json.as_deref(), &report)?;
    Ok(exit(pass))
}

pub fn gauge_test(c: &Common, f: &str) -> Outcome {
    let p = load(c)?;
    let cand = candidate(c, &p)?;
    let tol = c.tol.unwrap_or(p.numerics.acceptance_tol);
    let (sys2, moved) = gauge_transform(&p.system, &cand, f).map_err(input)?;
    let identical = moved.curve == cand.curve;
    let before = cand.residuals.max_residual();
    let after = moved.residuals.max_residual();
    let pass = identical && after <= tol && after <= before + 1e-8;
    println!("L' = {}", sys2.lagrangian_expr());
    println!("max residual before {before:.6e}, after {after:.6e}; curve identical: {identical}");
    println!("{}", if pass { "pass" } else { "FAIL" });
    write_text(c.csv.as_deref(), &moved.to_csv(None))?;
    let report: Value = json!({
        "command": "gauge-test",
        "f": f,
        "lagrangian": sys2.lagrangian_expr().to_string(),
        "before": residual_json(&cand.residuals),
        "after": residual_json(&moved.residuals),
        "curve_identical": identical,
        "acceptance_tol": tol,
        "pass": pass,
    });
    write_json(c.json.as_deref(), &report)?;
    Ok(exit(pass))
}
