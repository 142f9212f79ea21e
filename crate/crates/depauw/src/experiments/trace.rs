//! Backward path ensembles from `t = 1`, exact or RK4 on a mollified field.
//!
//! Paths are generated in fixed-size chunks and streamed to disk, so memory
//! stays bounded by one wave of chunks. While streaming, every path goes
//! through the Lipschitz audit and into the occupancy histograms.

use depauw_core::exact_flow::stage_flow_exact;
use depauw_core::field::stage_of;
use depauw_core::geometry::torus_distance;
use depauw_core::measures::CellHistogram;
use depauw_core::rng::StartDistribution;
use depauw_core::tracer::{audit_tolerance, integrate_endpoint, BackwardEnsemble, Path, Source};
use depauw_core::{DepauwField, Dyadic, StageIndex, TorusPoint};
use serde::{Deserialize, Serialize};

use super::{num, Check, Context};
use crate::config::TraceParams;
use crate::error::Result;
use crate::io::{self, CsvSink, EnsembleWriter};
use crate::runner::Runner;

/// Paths per work unit.
pub const PATH_CHUNK: u64 = 1024;
/// Chunks generated between two sequential flushes.
const WAVE: u64 = 16;
/// Checkpoint times and cell levels of the occupancy test.
pub const OCCUPANCY_TIMES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];
pub const OCCUPANCY_LEVELS: [u32; 2] = [2, 3];
/// Multinomial bound of the occupancy test, in standard deviations.
pub const OCCUPANCY_Z: f64 = 4.0;
/// RK4 step of the exact-field oracle and the stages it covers.
pub const ORACLE_STEP: f64 = 1e-5;
pub const ORACLE_STAGES: u32 = 4;
pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub time: f64,
    pub level: u32,
    /// Largest cell deviation in multinomial standard deviations.
    pub max_z: f64,
    pub outliers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub paths: u64,
    pub lipschitz_constant: f64,
    pub lipschitz_tolerance: f64,
    pub max_speed_ratio: f64,
    pub worst_path: Option<u64>,
    pub occupancy: Vec<Occupancy>,
}

impl EnsembleStats {
    pub fn lipschitz_pass(&self) -> bool {
        self.max_speed_ratio <= self.lipschitz_constant + self.lipschitz_tolerance
    }

    pub fn occupancy_pass(&self) -> bool {
        self.occupancy.iter().all(|o| o.outliers == 0)
    }
}

/// Generates all paths of `gen` in order, handing each to `sink`, and
/// collects the audit and occupancy statistics.
pub fn stream_ensemble<F>(gen: &BackwardEnsemble<'_>, runner: &Runner, mut sink: F) -> Result<EnsembleStats>
where
    F: FnMut(u64, &Path) -> Result<()>,
{
    let meta = gen.meta();
    let t_min = match &gen.source {
        Source::Exact { field, .. } => field.min_time().to_f64(),
        Source::Mollified { t_end, .. } => *t_end,
    };
    let slots: Vec<(f64, u32)> = OCCUPANCY_TIMES
        .iter()
        .filter(|t| **t >= t_min)
        .flat_map(|t| OCCUPANCY_LEVELS.iter().map(move |l| (*t, *l)))
        .collect();
    let mut hists: Vec<CellHistogram> = slots.iter().map(|(_, l)| CellHistogram::zeros(*l)).collect();
    let mut stats = EnsembleStats {
        paths: gen.count,
        lipschitz_constant: depauw_core::SUP_NORM,
        lipschitz_tolerance: audit_tolerance(&meta),
        max_speed_ratio: 0.0,
        worst_path: None,
        occupancy: Vec::new(),
    };
    let chunks = gen.count.div_ceil(PATH_CHUNK);
    let mut first = 0;
    while first < chunks {
        let last = (first + WAVE).min(chunks);
        let batch = runner.try_map((last - first) as usize, |c| {
            let lo = (first + c as u64) * PATH_CHUNK;
            (lo..(lo + PATH_CHUNK).min(gen.count)).map(|i| gen.path(i)).collect::<depauw_core::Result<Vec<_>>>()
        })?;
        for (index, path) in (first * PATH_CHUNK..).zip(batch.iter().flatten()) {
            let r = path.max_speed_ratio();
            if r > stats.max_speed_ratio {
                stats.max_speed_ratio = r;
                stats.worst_path = Some(index);
            }
            for ((t, _), h) in slots.iter().zip(&mut hists) {
                h.add(path.position_at(*t)?, path.weight);
            }
            sink(index, path)?;
        }
        first = last;
    }
    stats.occupancy = slots
        .iter()
        .zip(&hists)
        .map(|((t, l), h)| Occupancy {
            time: *t,
            level: *l,
            max_z: h.max_uniformity_deviation(gen.count),
            outliers: h.uniformity_outliers(gen.count, OCCUPANCY_Z).len(),
        })
        .collect();
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub stage: u32,
    pub points: u64,
    pub max_error: f64,
    pub mean_error: f64,
}

/// RK4 (step [`ORACLE_STEP`]) against the exact flow over one full stage,
/// point `i` on stage `i mod (ORACLE_STAGES + 1)`.
pub fn oracle_table(points: u64, seed: u64, runner: &Runner) -> Result<Vec<OracleRow>> {
    let stages = ORACLE_STAGES as u64 + 1;
    let field = DepauwField::new(ORACLE_STAGES);
    let errors = runner.fold_chunks(
        points,
        256,
        Vec::<(u32, f64)>::new(),
        |r| {
            r.map(|i| {
                let k = StageIndex((i % stages) as u32);
                let x = StartDistribution::Uniform.sample(seed ^ 0x6f72_6163_6c65, i);
                let (a, b) = k.interval();
                let rk = integrate_endpoint(&field, x, a, b, ORACLE_STEP)?;
                let exact = stage_flow_exact(&TorusPoint::from_f64(x)?, k, &k.duration_exact())?;
                Ok((k.0, torus_distance(rk, exact.to_f64())))
            })
            .collect::<depauw_core::Result<Vec<_>>>()
        },
        |a, p| a.extend(p),
    )?;
    Ok((0..=ORACLE_STAGES)
        .map(|k| {
            let e: Vec<f64> = errors.iter().filter(|(s, _)| *s == k).map(|(_, e)| *e).collect();
            OracleRow {
                stage: k,
                points: e.len() as u64,
                max_error: e.iter().copied().fold(0.0, f64::max),
                mean_error: if e.is_empty() { 0.0 } else { e.iter().sum::<f64>() / e.len() as f64 },
            }
        })
        .collect())
}

#[derive(Debug, Serialize)]
struct TraceReport {
    meta: depauw_core::tracer::EnsembleMeta,
    stats: EnsembleStats,
    oracle: Option<Vec<OracleRow>>,
    checks: Vec<Check>,
}

/// Deepest stage a backward run down to `t_end` touches.
fn deepest_stage(t_end: f64) -> Result<u32> {
    let d = Dyadic::from_f64(t_end)?;
    Ok(if d.mantissa() == 1.into() { d.exponent().saturating_sub(1) } else { stage_of(t_end)?.0 })
}

pub fn run(ctx: &mut Context<'_>, p: &TraceParams) -> Result<Vec<Check>> {
    let mollified = match p.eps {
        Some(eps) => Some(io::mollified_field(eps, eps / 8.0, deepest_stage(p.t_end)?, ctx.cache.as_ref(), ctx.runner)?),
        None => None,
    };
    let source = match &mollified {
        Some(f) => Source::Mollified { field: f, step: p.step, t_end: p.t_end, every: p.record_every },
        None => Source::Exact { field: DepauwField::new(p.depth), substeps: p.substeps },
    };
    let gen = BackwardEnsemble { count: p.n, seed: ctx.config.seed, start: p.start.clone(), source };
    let meta = gen.meta();
    let mut bin = EnsembleWriter::create(&ctx.file("ensemble.dpen"), &ctx.stamp, &meta, p.n)?;
    let mut csv = CsvSink::create(&ctx.file("ensemble.csv"), "trace", &ctx.stamp, &["path", "t", "x1", "x2"])?;
    let stats = stream_ensemble(&gen, ctx.runner, |i, path| {
        bin.push(path)?;
        let id = i.to_string();
        for (t, x) in path.times.iter().zip(&path.points) {
            csv.row([id.clone(), num(*t), num(x[0]), num(x[1])])?;
        }
        Ok(())
    })?;
    bin.finish()?;
    csv.finish()?;

    let mut checks = vec![Check::new(
        "lipschitz",
        stats.lipschitz_pass(),
        format!(
            "max speed ratio {} against {} + {:e} (worst path {:?})",
            stats.max_speed_ratio, stats.lipschitz_constant, stats.lipschitz_tolerance, stats.worst_path
        ),
    )];
    for o in &stats.occupancy {
        checks.push(Check::new(
            "incompressibility",
            o.outliers == 0,
            format!("t = {}, level {}: max deviation {:.3} sd, {} cells beyond {OCCUPANCY_Z}", o.time, o.level, o.max_z, o.outliers),
        ));
    }
    let oracle = if p.oracle {
        let rows = oracle_table(p.oracle_points, ctx.config.seed, ctx.runner)?;
        let mut csv = CsvSink::create(&ctx.file("oracle.csv"), "trace", &ctx.stamp, &["stage", "points", "max_error", "mean_error"])?;
        for r in &rows {
            csv.row([r.stage.to_string(), r.points.to_string(), num(r.max_error), num(r.mean_error)])?;
            checks.push(Check::new(
                "rk4_oracle",
                r.max_error <= ORACLE_TOLERANCE,
                format!("stage {}: max error {:e} over {} points", r.stage, r.max_error, r.points),
            ));
        }
        csv.finish()?;
        Some(rows)
    } else {
        None
    };
    ctx.write_report("trace.json", &TraceReport { meta, stats, oracle, checks: checks.clone() })?;
    Ok(checks)
}
