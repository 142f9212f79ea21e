//! Endpoint statistics of the exact backward flow: conditional laws of the
//! time-1 cell given the cell reached at `2^-K`, for the whole ensemble and
//! for the branches starting in black (`rho^B`) and white unit cells.

use std::collections::BTreeSet;

use depauw_core::density::GridDensity;
use depauw_core::exact_flow::backward_checkpoints;
use depauw_core::geometry::{wrap_point, Cell};
use depauw_core::measures::{
    black_cells, disintegrate, stochasticity_report, white_cells, ConditionalHistogram, EndpointJointHistogram,
    StochasticityReport,
};
use depauw_core::{Dyadic, TorusPoint};
use serde::{Deserialize, Serialize};

use super::{num, Check, Context};
use crate::config::StochasticityParams;
use crate::error::Result;
use crate::io::CsvSink;
use crate::runner::Runner;

/// Required fractions of start rows.
pub const ROW_FRACTION: f64 = 0.9;
const CHUNK: u64 = 1 << 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub full: EndpointJointHistogram,
    pub black: EndpointJointHistogram,
    pub white: EndpointJointHistogram,
}

impl Joint {
    fn new(p: &StochasticityParams) -> Self {
        let t = Dyadic::pow2(-(p.depth as i32)).to_f64();
        let h = EndpointJointHistogram::new(p.levels.start, p.levels.target, t);
        Joint { full: h.clone(), black: h.clone(), white: h }
    }

    fn merge(&mut self, o: &Joint) {
        self.full.merge(&o.full);
        self.black.merge(&o.black);
        self.white.merge(&o.white);
    }
}

/// Streams `n` exact backward trajectories into the three joint histograms.
pub fn joint_histograms(p: &StochasticityParams, seed: u64, runner: &Runner) -> Result<Joint> {
    let w = 1.0 / p.n as f64;
    let rho_b = GridDensity::checkerboard(0, false);
    let init = Joint::new(p);
    runner.fold_chunks(
        p.n,
        CHUNK,
        init.clone(),
        |range| {
            let mut part = init.clone();
            for i in range {
                let y = wrap_point(p.start.sample(seed, i));
                let yt = TorusPoint::from_f64(y)?;
                let x0 = backward_checkpoints(&yt, p.depth).pop().expect("start is kept").to_f64();
                part.full.add(x0, y, w);
                if rho_b.value_at(&yt) > 0.0 {
                    part.black.add(x0, y, w);
                } else {
                    part.white.add(x0, y, w);
                }
            }
            Ok::<_, crate::Error>(part)
        },
        |a, b| a.merge(&b),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub conditional: ConditionalHistogram,
    pub black: ConditionalHistogram,
    pub white: ConditionalHistogram,
    pub report: StochasticityReport,
}

pub fn analyse(j: &Joint) -> Analysis {
    let conditional = disintegrate(&j.full);
    let black = disintegrate(&j.black);
    let white = disintegrate(&j.white);
    let lvl = j.full.target_level;
    let report = stochasticity_report(&conditional, &black_cells(lvl), &white_cells(lvl), Some((&black, &white)));
    Analysis { conditional, black, white, report }
}

pub fn checks(a: &Analysis) -> Vec<Check> {
    let r = &a.report;
    let singular = r.frac_singular.unwrap_or(0.0);
    vec![
        Check::new(
            "non_dirac",
            r.frac_non_dirac >= ROW_FRACTION,
            format!("{:.4} of {} rows have max atom <= 0.6; need {ROW_FRACTION}", r.frac_non_dirac, r.rows.len()),
        ),
        Check::new(
            "black_mass_half",
            r.frac_balanced >= ROW_FRACTION,
            format!("{:.4} of rows have black mass within 0.05 of 1/2; need {ROW_FRACTION}", r.frac_balanced),
        ),
        Check::new(
            "mutual_singularity",
            singular >= ROW_FRACTION,
            format!("{singular:.4} of rows have branch TV >= 0.9; need {ROW_FRACTION}"),
        ),
    ]
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    depth: u32,
    start_level: u32,
    target_level: u32,
    /// Distance bound between positions at `2^-K` and the time-0 limit.
    time0_error_bound: f64,
    samples: u64,
    omitted_rows: usize,
    report: &'a StochasticityReport,
    checks: &'a [Check],
}

fn write_matrix(csv: &mut CsvSink, branch: &str, c: &ConditionalHistogram, cols: &BTreeSet<usize>) -> Result<()> {
    for (start, row) in &c.rows {
        let cell = Cell::from_index(c.start_level, *start);
        let mut cells = vec![branch.to_string(), start.to_string(), cell.ix.to_string(), cell.iy.to_string(), num(row.mass)];
        cells.extend(cols.iter().map(|b| num(row.probs.get(b).copied().unwrap_or(0.0))));
        csv.row(cells)?;
    }
    Ok(())
}

pub fn run(ctx: &mut Context<'_>, p: &StochasticityParams) -> Result<Vec<Check>> {
    let joint = joint_histograms(p, ctx.config.seed, ctx.runner)?;
    let a = analyse(&joint);
    let checks = checks(&a);
    let cols: BTreeSet<usize> = (0..depauw_core::exact_flow::grid_len(p.levels.target)).collect();
    let mut header: Vec<String> = ["branch", "start", "ix", "iy", "mass"].iter().map(|s| s.to_string()).collect();
    header.extend(cols.iter().map(|b| format!("p{b}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvSink::create(&ctx.file("conditional.csv"), "stochasticity", &ctx.stamp, &header)?;
    write_matrix(&mut csv, "all", &a.conditional, &cols)?;
    write_matrix(&mut csv, "black", &a.black, &cols)?;
    write_matrix(&mut csv, "white", &a.white, &cols)?;
    csv.finish()?;
    let report = Report {
        depth: p.depth,
        start_level: p.levels.start,
        target_level: p.levels.target,
        time0_error_bound: joint.full.time0_error_bound,
        samples: p.n,
        omitted_rows: a.conditional.omitted_rows,
        report: &a.report,
        checks: &checks,
    };
    ctx.write_report("stochasticity.json", &report)?;
    Ok(checks)
}
