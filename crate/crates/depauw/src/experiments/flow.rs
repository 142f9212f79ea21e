//! Exact trajectories of the composite flow from given start points.

use depauw_core::exact_flow::{flow_sampled, FlowQuery};
use depauw_core::{DepauwField, Dyadic, TorusPoint, SUP_NORM};
use serde::Serialize;

use super::{num, Check, Context};
use crate::config::FlowParams;
use crate::error::Result;
use crate::io::CsvSink;

#[derive(Debug, Serialize)]
struct Endpoint {
    start: TorusPoint,
    end: TorusPoint,
    samples: usize,
    max_speed_ratio: f64,
}

#[derive(Debug, Serialize)]
struct FlowReport {
    t_start: Dyadic,
    t_end: Dyadic,
    endpoints: Vec<Endpoint>,
    checks: Vec<Check>,
}

pub fn run(ctx: &mut Context<'_>, p: &FlowParams) -> Result<Vec<Check>> {
    let field = DepauwField::new(p.depth);
    let q = FlowQuery::new(p.t_start.clone(), p.t_end.clone());
    let header = ["point", "sample", "t", "x1", "x2", "t_f64", "x1_f64", "x2_f64"];
    let mut csv = CsvSink::create(&ctx.file("flow.csv"), "flow", &ctx.stamp, &header)?;
    let mut endpoints = Vec::new();
    for (i, [a, b]) in p.points.iter().enumerate() {
        let start = TorusPoint::try_from((a.clone(), b.clone()))?;
        let (end, path) = flow_sampled(&field, &start, &q, p.substeps)?;
        for (s, (t, x)) in path.times.iter().zip(&path.points).enumerate() {
            csv.row([
                i.to_string(),
                s.to_string(),
                t.to_string(),
                x.x1().to_string(),
                x.x2().to_string(),
                num(t.to_f64()),
                num(x.x1().to_f64()),
                num(x.x2().to_f64()),
            ])?;
        }
        let ratio = if path.times.len() > 1 { path.to_path(1.0).max_speed_ratio() } else { 0.0 };
        endpoints.push(Endpoint { start, end, samples: path.times.len(), max_speed_ratio: ratio });
    }
    csv.finish()?;
    let worst = endpoints.iter().map(|e| e.max_speed_ratio).fold(0.0, f64::max);
    let checks =
        vec![Check::new("lipschitz", worst <= SUP_NORM + 1e-12, format!("max speed ratio {worst} against {SUP_NORM}"))];
    ctx.write_report(
        "flow.json",
        &FlowReport { t_start: p.t_start.clone(), t_end: p.t_end.clone(), endpoints, checks: checks.clone() },
    )?;
    Ok(checks)
}
