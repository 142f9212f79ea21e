//! Pointwise samples of the exact and mollified fields with sanity checks:
//! the sup bound, stream-function consistency, stage periodicity, and for
//! each mollified field its divergence, speed bound and `L^1` distance.

use depauw_core::field::{eval_stage, eval_stream, piece_of};
use depauw_core::mollify::max_admissible_stage;
use depauw_core::rng::StartDistribution;
use depauw_core::{MollifiedField, Point, StageIndex, SUP_NORM};
use serde::Serialize;

use super::{num, Check, Context};
use crate::config::FieldParams;
use crate::error::Result;
use crate::io::{self, CsvSink};

#[derive(Debug, Serialize)]
struct ExactStage {
    stage: u32,
    max_speed: f64,
    stream_max_error: f64,
    stream_points: u64,
    stream_skipped: u64,
    period_max_error: f64,
}

#[derive(Debug, Serialize)]
struct MollifiedStage {
    stage: u32,
    max_speed: f64,
    max_divergence: f64,
    l1_distance: f64,
}

#[derive(Debug, Serialize)]
struct MollifiedReport {
    eps: f64,
    h: f64,
    stages: Vec<MollifiedStage>,
}

#[derive(Debug, Serialize)]
struct FieldReport {
    exact: Vec<ExactStage>,
    mollified: Vec<MollifiedReport>,
    checks: Vec<Check>,
}

const HEADER: [&str; 7] = ["stage", "t", "x1", "x2", "b1", "b2", "stream"];

fn mid_time(k: u32) -> f64 {
    0.75 * StageIndex(k).scale()
}

fn grid(resolution: u32) -> impl Iterator<Item = Point> {
    let d = 2.0 / resolution as f64;
    (0..resolution).flat_map(move |j| (0..resolution).map(move |i| [(i as f64 + 0.5) * d, (j as f64 + 0.5) * d]))
}

pub fn run(ctx: &mut Context<'_>, p: &FieldParams) -> Result<Vec<Check>> {
    let seed = ctx.config.seed;
    let mut csv = CsvSink::create(&ctx.file("field.csv"), "field", &ctx.stamp, &HEADER)?;
    let mut exact = Vec::new();
    for k in 0..=p.depth {
        let st = StageIndex(k);
        let t = mid_time(k);
        for x in grid(p.resolution) {
            let b = eval_stage(st, x);
            csv.row([k.to_string(), num(t), num(x[0]), num(x[1]), num(b[0]), num(b[1]), num(eval_stream(st, x))])?;
        }
        exact.push(exact_checks(st, p.check_points, seed));
    }
    csv.finish()?;

    let mut mollified = Vec::new();
    for (i, &eps) in p.eps.iter().enumerate() {
        let top = max_admissible_stage(eps).unwrap_or(0).min(p.depth);
        let h = eps / 8.0;
        let f = io::mollified_field(eps, h, top, ctx.cache.as_ref(), ctx.runner)?;
        let name = format!("field_eps{i}.csv");
        let mut csv = CsvSink::create(&ctx.file(&name), "field", &ctx.stamp, &HEADER)?;
        let mut stages = Vec::new();
        for k in 0..=top {
            let st = StageIndex(k);
            for x in grid(p.resolution) {
                let b = f.eval_stage(st, x);
                let s = f.stream(st, x)?;
                csv.row([k.to_string(), num(mid_time(k)), num(x[0]), num(x[1]), num(b[0]), num(b[1]), num(s)])?;
            }
            stages.push(mollified_checks(ctx, &f, st, p, seed));
        }
        csv.finish()?;
        mollified.push(MollifiedReport { eps, h: f.h, stages });
    }

    let mut checks = Vec::new();
    let worst = |f: &dyn Fn(&ExactStage) -> f64| exact.iter().map(f).fold(0.0, f64::max);
    let speed = worst(&|s| s.max_speed);
    checks.push(Check::new("sup_norm", speed <= SUP_NORM, format!("max |b| = {speed} (bound 2)")));
    let stream = worst(&|s| s.stream_max_error);
    checks.push(Check::new("stream_function", stream <= 1e-6, format!("max |FD grad_perp H - b| = {stream:e}")));
    let period = worst(&|s| s.period_max_error);
    checks.push(Check::new("stage_periodicity", period <= 1e-12, format!("max deviation {period:e}")));
    for m in &mollified {
        let div = m.stages.iter().map(|s| s.max_divergence).fold(0.0, f64::max);
        let sp = m.stages.iter().map(|s| s.max_speed).fold(0.0, f64::max);
        checks.push(Check::new(
            "mollified_divergence",
            div <= 1e-6 / m.h,
            format!("eps {}: max |FD div| = {div:e}", m.eps),
        ));
        checks.push(Check::new("mollified_sup_norm", sp <= SUP_NORM + 1e-3, format!("eps {}: max |b| = {sp}", m.eps)));
    }
    // L1 distances shrink with the radius, stage by stage
    for w in mollified.windows(2) {
        for (a, b) in w[0].stages.iter().zip(&w[1].stages) {
            checks.push(Check::new(
                "l1_decreasing",
                b.l1_distance < a.l1_distance,
                format!("stage {}: eps {} -> {}: {} -> {}", a.stage, w[0].eps, w[1].eps, a.l1_distance, b.l1_distance),
            ));
        }
    }
    ctx.write_report("field.json", &FieldReport { exact, mollified, checks: checks.clone() })?;
    Ok(checks)
}

fn exact_checks(st: StageIndex, count: u64, seed: u64) -> ExactStage {
    let scale = st.scale();
    let h = 1e-5 * scale;
    let period = 2.0 * scale;
    let mut out =
        ExactStage { stage: st.0, max_speed: 0.0, stream_max_error: 0.0, stream_points: 0, stream_skipped: 0, period_max_error: 0.0 };
    for i in 0..count {
        let x = StartDistribution::Uniform.sample(seed, i);
        let b = eval_stage(st, x);
        out.max_speed = out.max_speed.max(b[0].hypot(b[1]));
        for shift in [[period, 0.0], [0.0, period], [2.0, -2.0]] {
            let c = eval_stage(st, [x[0] + shift[0], x[1] + shift[1]]);
            out.period_max_error = out.period_max_error.max((c[0] - b[0]).abs().max((c[1] - b[1]).abs()));
        }
        let stencil = [[x[0] + h, x[1]], [x[0] - h, x[1]], [x[0], x[1] + h], [x[0], x[1] - h]];
        let piece = piece_of(st, x);
        if stencil.iter().any(|q| piece_of(st, *q) != piece) {
            out.stream_skipped += 1;
            continue;
        }
        let hs: Vec<f64> = stencil.iter().map(|q| eval_stream(st, *q)).collect();
        let g = [(hs[0] - hs[1]) / (2.0 * h), (hs[2] - hs[3]) / (2.0 * h)];
        let err = (-g[1] - b[0]).abs().max((g[0] - b[1]).abs());
        out.stream_max_error = out.stream_max_error.max(err);
        out.stream_points += 1;
    }
    out
}

fn mollified_checks(ctx: &Context<'_>, f: &MollifiedField, st: StageIndex, p: &FieldParams, seed: u64) -> MollifiedStage {
    let delta = 1e-6 * st.scale();
    let mut max_speed: f64 = 0.0;
    let mut max_divergence: f64 = 0.0;
    for i in 0..p.check_points {
        let x = StartDistribution::Uniform.sample(seed ^ 0x6d6f6c6c, i);
        let v = |q: Point| f.eval_stage(st, q);
        let div = (v([x[0] + delta, x[1]])[0] - v([x[0] - delta, x[1]])[0]) / (2.0 * delta)
            + (v([x[0], x[1] + delta])[1] - v([x[0], x[1] - delta])[1]) / (2.0 * delta);
        max_divergence = max_divergence.max(div.abs());
        let b = v(x);
        max_speed = max_speed.max(b[0].hypot(b[1]));
    }
    max_speed = max_speed.max(f.tables()[st.0 as usize].max_node_speed());
    let n = p.l1_resolution as usize;
    let d = 2.0 / n as f64;
    let rows = ctx.runner.map(n, |j| {
        (0..n)
            .map(|i| {
                let x = [(i as f64 + 0.5) * d, (j as f64 + 0.5) * d];
                let a = f.eval_stage(st, x);
                let b = eval_stage(st, x);
                (a[0] - b[0]).hypot(a[1] - b[1])
            })
            .sum::<f64>()
    });
    let l1_distance = rows.iter().sum::<f64>() * d * d;
    MollifiedStage { stage: st.0, max_speed, max_divergence, l1_distance }
}
