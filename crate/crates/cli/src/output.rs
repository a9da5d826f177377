//! CSV writers. Floats use Rust's shortest round-trip scientific form, so
//! identical runs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use stokes_core::{PressureField, StepReport, VelocityField};

pub const STEP_HEADER: &str =
    "step,t,norm_state,norm_quarter,norm_half,norm_end,div_residual,cg_iters_total,bound_margin";

pub fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn f(v: f64) -> String {
    format!("{v:e}")
}

pub fn steps_csv(reports: &[StepReport]) -> String {
    let mut out = String::from(STEP_HEADER);
    out.push('\n');
    for r in reports {
        let quarter = r.norm_quarter.map(f).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step,
            f(r.t),
            f(r.norm_state),
            quarter,
            f(r.norm_half),
            f(r.norm_end),
            f(r.div_residual),
            r.cg_iterations,
            f(r.bound_margin)
        );
    }
    out
}

/// All nodes, boundary included.
pub fn velocity_csv(u: &VelocityField) -> String {
    let g = u.grid();
    let mut out = String::from("i1,i2,x1,x2,u1,u2\n");
    for (i1, i2) in g.all_nodes() {
        let (a, b) = u.get(i1, i2);
        let _ = writeln!(out, "{i1},{i2},{},{},{},{}", f(g.x1(i1)), f(g.x2(i2)), f(a), f(b));
    }
    out
}

/// Nodes of `ω_p` only.
pub fn pressure_csv(p: &PressureField) -> String {
    let g = p.grid();
    let mut out = String::from("i1,i2,x1,x2,p\n");
    for (i1, i2) in g.pressure_nodes() {
        let _ = writeln!(out, "{i1},{i2},{},{},{}", f(g.x1(i1)), f(g.x2(i2)), f(p.get(i1, i2)));
    }
    out
}
