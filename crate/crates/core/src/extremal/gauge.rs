use std::collections::HashMap;

use super::ExtremalCandidate;
use crate::error::{Error, Result};
use crate::expr::{add, mul, parse_with_params, CompiledExpr, Expr};
use crate::system::ControlSystem;

/// Adds the total derivative of `f(t, q)` to the Lagrangian:
/// `L' = L + df/dt + (df/dq) . psi`, `p' = p + df/dq`.
///
/// The curve is carried over unchanged and the residuals are recomputed
/// against the new system.
pub fn gauge_transform(
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    f: &str,
) -> Result<(ControlSystem, ExtremalCandidate)> {
    let names: Vec<&String> = sys.params().keys().collect();
    gauge_transform_expr(sys, cand, &parse_with_params(f, &names)?)
}

pub fn gauge_transform_expr(
    sys: &ControlSystem,
    cand: &ExtremalCandidate,
    f: &Expr,
) -> Result<(ControlSystem, ExtremalCandidate)> {
    let mut slots = vec!["t".to_string()];
    slots.extend(sys.states().iter().cloned());
    for v in f.variables() {
        if !slots.contains(&v) {
            return Err(Error::Problem(format!(
                "gauge function may depend on t and states only, found `{v}`"
            )));
        }
    }
    let grad: Vec<Expr> = sys.states().iter().map(|s| f.differentiate(s)).collect();
    let mut lagrangian = add(sys.lagrangian_expr().clone(), f.differentiate("t"));
    for (g, psi) in grad.iter().zip(sys.psi_exprs()) {
        lagrangian = add(lagrangian, mul(g.clone(), psi.clone()));
    }
    let gauged = sys.with_lagrangian(lagrangian)?;

    let params: HashMap<String, f64> = sys.params().iter().map(|(k, v)| (k.clone(), *v)).collect();
    let compiled = grad
        .iter()
        .map(|g| CompiledExpr::compile(g, &slots, &params))
        .collect::<Result<Vec<_>, _>>()?;
    let mut args = vec![0.0; slots.len()];
    let mut p = cand.momenta.p.clone();
    for (s, arc) in cand.curve.arcs().iter().enumerate() {
        for i in 0..=arc.steps() {
            args[0] = arc.time(i);
            args[1..].copy_from_slice(arc.q()[i].as_slice());
            for (k, c) in compiled.iter().enumerate() {
                p[s][i][k] += c.eval(&args);
            }
        }
    }
    let moved = ExtremalCandidate::new(&gauged, cand.curve.clone(), p)?;
    Ok((gauged, moved))
}
