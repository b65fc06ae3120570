use std::fmt::Display;
use std::path::Path;

use serde_json::{json, Value};
use varcalc_core::nalgebra::DVector;
use varcalc_core::ResidualReport;

/// Error carrying the process exit code.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub fn input(e: impl Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

pub fn negative(e: impl Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

pub fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

pub fn write_json(path: Option<&Path>, value: &Value) -> Result<(), Failure> {
    if let Some(path) = path {
        let mut text = serde_json::to_string_pretty(value).map_err(input)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    if let Some(path) = path {
        std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn residual_json(r: &ResidualReport) -> Value {
    json!(r)
}

pub fn print_residuals(r: &ResidualReport) {
    println!("  ode_q                  {:.6e}", r.ode_q);
    println!("  ode_p                  {:.6e}", r.ode_p);
    println!("  stationarity           {:.6e}", r.stationarity);
    println!("  corner_p               {:.6e}", r.corner_p);
    println!("  corner_H               {:.6e}", r.corner_h);
    println!("  p0_defect              {:.6e}", r.p0_defect);
    println!("  hamiltonian_regularity {:.6e}", r.hamiltonian_regularity);
}
