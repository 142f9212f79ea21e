//! Backward transport of the checkerboard densities `rho^B` and `rho^W`,
//! exported per dyadic time, with the exact property checks and an optional
//! Monte Carlo weak-form residual.

use depauw_core::density::{
    check_properties, check_refining, evolve_rho_b, residual_moments, test_bank, DensityTrajectory, GridDensity,
    Moments, ResidualEstimate,
};
use depauw_core::geometry::Cell;
use depauw_core::{DepauwField, Dyadic};
use serde::Serialize;

use super::{num, Check, Context};
use crate::config::DensityParams;
use crate::error::Result;
use crate::io::CsvSink;

/// Samples per work unit of the residual estimate.
const RESIDUAL_CHUNK: u64 = 1 << 14;

#[derive(Debug, Serialize)]
struct Heatmap {
    time: Dyadic,
    level: u32,
    /// `rho^B` with `rows[iy][ix]` the cell `(ix, iy)`, `iy` increasing upwards.
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Residual {
    function: usize,
    estimate: ResidualEstimate,
    z_score: f64,
}

#[derive(Debug, Serialize)]
struct DensityReport {
    depth: u32,
    times: Vec<Dyadic>,
    stored_levels: Vec<u32>,
    refining: Option<String>,
    violations: Vec<depauw_core::density::PropertyViolation>,
    residuals: Vec<Residual>,
    checks: Vec<Check>,
}

fn at_level(d: &GridDensity, level: u32) -> Result<GridDensity> {
    Ok(if d.level > level { d.coarsen(level)? } else { d.refine(level - d.level) })
}

/// Weak residual of `rho` against every bank function, `samples` each.
pub fn residuals(traj: &DensityTrajectory, samples: u64, seed: u64, runner: &crate::Runner) -> Result<Vec<ResidualEstimate>> {
    let field = DepauwField::new(traj.depth());
    let mut out = Vec::new();
    for (i, phi) in test_bank(seed).iter().enumerate() {
        let s = seed.wrapping_add(1 + i as u64);
        let m = runner.fold_chunks(
            samples,
            RESIDUAL_CHUNK,
            Moments::default(),
            |r| residual_moments(traj, &field, phi, s, r),
            |a, p| a.merge(&p),
        )?;
        out.push(ResidualEstimate { estimate: m.mean(), stderr: m.stderr(), samples });
    }
    Ok(out)
}

pub fn run(ctx: &mut Context<'_>, p: &DensityParams) -> Result<Vec<Check>> {
    let traj_b = evolve_rho_b(p.depth)?;
    let traj_w = traj_b.complement();

    let mut heatmaps = Vec::new();
    for (j, ((t, b), (_, w))) in traj_b.entries.iter().zip(&traj_w.entries).enumerate() {
        let level = b.level.min(p.export_level);
        let (b, w) = (at_level(b, level)?, at_level(w, level)?);
        let name = format!("density_t{j:02}.csv");
        let mut csv = CsvSink::create(&ctx.file(&name), "density", &ctx.stamp, &["time", "level", "ix", "iy", "rho_b", "rho_w"])?;
        let ts = t.to_string();
        for (i, (vb, vw)) in b.values.iter().zip(&w.values).enumerate() {
            let c = Cell::from_index(level, i);
            csv.row([ts.clone(), level.to_string(), c.ix.to_string(), c.iy.to_string(), num(*vb), num(*vw)])?;
        }
        csv.finish()?;
        let hl = b.level.min(p.heatmap_level);
        let hb = at_level(&b, hl)?;
        let side = hb.side();
        heatmaps.push(Heatmap { time: t.clone(), level: hl, rows: hb.values.chunks(side).map(<[f64]>::to_vec).collect() });
    }
    ctx.write_report("density_heatmaps.json", &heatmaps)?;

    let mut checks = Vec::new();
    let mut refining = None;
    let mut violations = Vec::new();
    if p.check {
        match check_refining(&traj_b) {
            Ok(()) => checks.push(Check::new("refining", true, format!("checkerboard with parity flip at all {} times", p.depth + 1))),
            Err(v) => {
                let msg = format!("first mismatch at t = {} cell {:?}", v.time, v.cell);
                refining = Some(msg.clone());
                checks.push(Check::new("refining", false, msg));
            }
        }
        let props = check_properties(&traj_b, &traj_w);
        for (name, key) in [("complement", "sum"), ("cover", "cover"), ("disjoint", "disjoint"), ("unit_cells_half_black", "half")] {
            let bad: Vec<_> = props.violations.iter().filter(|v| v.property == key).collect();
            let detail = match bad.first() {
                None => format!("holds at all {} times", props.times_checked),
                Some(v) => format!("{} violations, first at t = {} cell {:?}", bad.len(), v.time, v.cell),
            };
            checks.push(Check::new(name, bad.is_empty(), detail));
        }
        violations = props.violations;
    }
    let mut res = Vec::new();
    if p.residual_samples > 0 {
        for (i, r) in residuals(&traj_b, p.residual_samples, ctx.config.seed, ctx.runner)?.into_iter().enumerate() {
            let z = if r.stderr > 0.0 { r.estimate.abs() / r.stderr } else { 0.0 };
            checks.push(Check::new(
                "weak_residual",
                r.within(3.0),
                format!("function {i}: {:e} +- {:e} ({z:.2} standard errors)", r.estimate, r.stderr),
            ));
            res.push(Residual { function: i, estimate: r, z_score: z });
        }
    }
    let report = DensityReport {
        depth: p.depth,
        times: traj_b.entries.iter().map(|(t, _)| t.clone()).collect(),
        stored_levels: traj_b.entries.iter().map(|(_, d)| d.level).collect(),
        refining,
        violations,
        residuals: res,
        checks: checks.clone(),
    };
    ctx.write_report("density.json", &report)?;
    Ok(checks)
}
