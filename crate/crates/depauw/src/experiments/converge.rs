//! Selection by vanishing mollification: ensembles traced on `b^eps` for a
//! decreasing list of radii, from shared starts, compared with each other
//! and with the exact flow.
//!
//! The sup distance between two numeric paths is taken over their common
//! RK4 grid; against the exact flow it is taken at 64 equally spaced times
//! per stage.

use depauw_core::geometry::torus_distance;
use depauw_core::measures::{bl_distance_from, BlAccumulator, BlBank, BlDistanceEstimate};
use depauw_core::tracer::{BackwardEnsemble, Path, Source};
use depauw_core::{DepauwField, MollifiedField, SUP_NORM};
use serde::{Deserialize, Serialize};

use super::{num, Check, Context};
use crate::config::ConvergeParams;
use crate::error::Result;
use crate::io::{self, CsvSink, TableCache};
use crate::runner::Runner;

/// Exact-flow samples per stage for the distance-to-exact column.
pub const EXACT_SUBSTEPS: u32 = 64;
/// Required fraction of paths whose consecutive sup distances strictly decrease.
pub const SUP_FRACTION: f64 = 0.95;
const CHUNK: u64 = 256;

/// Sup distances of one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupRow {
    pub path: u64,
    /// `sup |gamma_{eps_j} - gamma_{eps_{j+1}}|`, `j = 0..m-1`.
    pub consecutive: Vec<f64>,
    /// `sup |gamma_{eps_j} - gamma|` on the exact-flow sample times.
    pub to_exact: Vec<f64>,
}

impl SupRow {
    pub fn decreasing(&self) -> bool {
        self.consecutive.windows(2).all(|w| w[1] < w[0])
    }

    pub fn exact_decreasing(&self) -> bool {
        self.to_exact.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Partial {
    accs: Vec<BlAccumulator>,
    exact: BlAccumulator,
    rows: Vec<SupRow>,
    max_ratio: Vec<f64>,
    exact_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeReport {
    pub eps: Vec<f64>,
    pub bank_id: String,
    pub bl_consecutive: Vec<BlDistanceEstimate>,
    pub bl_to_exact: Vec<BlDistanceEstimate>,
    pub bl_monotone: bool,
    pub sup_paths: u64,
    pub sup_decreasing: u64,
    pub sup_fraction: f64,
    pub sup_exact_decreasing: u64,
    /// Median over paths of each consecutive sup distance.
    pub sup_median: Vec<f64>,
    pub max_speed_ratio: Vec<f64>,
    pub lipschitz_tolerance: f64,
    /// Largest speed ratio over the exact reference paths.
    pub exact_max_speed_ratio: f64,
    #[serde(skip)]
    pub rows: Vec<SupRow>,
}

impl ConvergeReport {
    pub fn lipschitz_pass(&self) -> bool {
        self.max_speed_ratio.iter().all(|r| *r <= SUP_NORM + self.lipschitz_tolerance)
            && self.exact_max_speed_ratio <= SUP_NORM + 1e-12
    }

    pub fn sup_pass(&self) -> bool {
        self.sup_fraction >= SUP_FRACTION
    }
}

fn sup_distance(a: &Path, b: &Path) -> f64 {
    debug_assert_eq!(a.times, b.times);
    a.points.iter().zip(&b.points).map(|(p, q)| torus_distance(*p, *q)).fold(0.0, f64::max)
}

fn sup_to_exact(a: &Path, exact: &Path) -> Result<f64> {
    let mut d: f64 = 0.0;
    for (t, q) in exact.times.iter().zip(&exact.points) {
        d = d.max(torus_distance(a.position_at(*t)?, *q));
    }
    Ok(d)
}

/// The mollified fields of `p`, stages down to `t_end`.
pub fn fields(p: &ConvergeParams, cache: Option<&TableCache>, runner: &Runner) -> Result<Vec<MollifiedField>> {
    p.eps.iter().map(|&e| io::mollified_field(e, e / 8.0, p.depth - 1, cache, runner)).collect()
}

pub fn converge(p: &ConvergeParams, seed: u64, fields: &[MollifiedField], runner: &Runner) -> Result<ConvergeReport> {
    let bank = BlBank::standard(p.depth);
    let gens: Vec<BackwardEnsemble<'_>> = fields
        .iter()
        .map(|f| BackwardEnsemble {
            count: p.n,
            seed,
            start: p.start.clone(),
            source: Source::Mollified { field: f, step: p.step, t_end: p.t_end, every: 1 },
        })
        .collect();
    let exact = BackwardEnsemble {
        count: p.n,
        seed,
        start: p.start.clone(),
        source: Source::Exact { field: DepauwField::new(p.depth), substeps: EXACT_SUBSTEPS },
    };
    let m = fields.len();
    let init = Partial {
        accs: vec![BlAccumulator::new(&bank); m],
        exact: BlAccumulator::new(&bank),
        rows: Vec::new(),
        max_ratio: vec![0.0; m],
        exact_ratio: 0.0,
    };
    let total = runner.fold_chunks(
        p.n,
        CHUNK,
        init.clone(),
        |range| {
            let mut part = init.clone();
            for i in range {
                let paths = gens.iter().map(|g| g.path(i)).collect::<depauw_core::Result<Vec<_>>>()?;
                let reference = exact.path(i)?;
                part.exact.push(&bank, &reference)?;
                part.exact_ratio = part.exact_ratio.max(reference.max_speed_ratio());
                for (j, path) in paths.iter().enumerate() {
                    part.accs[j].push(&bank, path)?;
                    part.max_ratio[j] = part.max_ratio[j].max(path.max_speed_ratio());
                }
                if i < p.sup_paths {
                    part.rows.push(SupRow {
                        path: i,
                        consecutive: paths.windows(2).map(|w| sup_distance(&w[0], &w[1])).collect(),
                        to_exact: paths.iter().map(|a| sup_to_exact(a, &reference)).collect::<Result<_>>()?,
                    });
                }
            }
            Ok::<_, crate::Error>(part)
        },
        |a, b| {
            for (x, y) in a.accs.iter_mut().zip(&b.accs) {
                x.merge(y);
            }
            a.exact.merge(&b.exact);
            a.rows.extend(b.rows);
            a.exact_ratio = a.exact_ratio.max(b.exact_ratio);
            for (x, y) in a.max_ratio.iter_mut().zip(&b.max_ratio) {
                *x = x.max(*y);
            }
        },
    )?;
    let bl_consecutive: Vec<_> = total.accs.windows(2).map(|w| bl_distance_from(&w[0], &w[1], &bank)).collect();
    let bl_to_exact: Vec<_> = total.accs.iter().map(|a| bl_distance_from(a, &total.exact, &bank)).collect();
    let bl_monotone = bl_consecutive.windows(2).all(|w| w[1].value < w[0].value);
    let sup_decreasing = total.rows.iter().filter(|r| r.decreasing()).count() as u64;
    let sup_exact_decreasing = total.rows.iter().filter(|r| r.exact_decreasing()).count() as u64;
    let sup_median = (0..m.saturating_sub(1))
        .map(|j| {
            let v: Vec<f64> = total.rows.iter().map(|r| r.consecutive[j]).collect();
            depauw_core::measures::Quantiles::of(&v).map_or(0.0, |q| q.median)
        })
        .collect();
    Ok(ConvergeReport {
        eps: p.eps.clone(),
        bank_id: bank.id.clone(),
        bl_consecutive,
        bl_to_exact,
        bl_monotone,
        sup_paths: p.sup_paths,
        sup_decreasing,
        sup_fraction: if p.sup_paths == 0 { 1.0 } else { sup_decreasing as f64 / p.sup_paths as f64 },
        sup_exact_decreasing,
        sup_median,
        max_speed_ratio: total.max_ratio,
        lipschitz_tolerance: 10.0 * p.step,
        exact_max_speed_ratio: total.exact_ratio,
        rows: total.rows,
    })
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    #[serde(flatten)]
    summary: &'a ConvergeReport,
    checks: &'a [Check],
}

pub fn run(ctx: &mut Context<'_>, p: &ConvergeParams) -> Result<Vec<Check>> {
    let fields = fields(p, ctx.cache.as_ref(), ctx.runner)?;
    let r = converge(p, ctx.config.seed, &fields, ctx.runner)?;
    let values: Vec<String> = r.bl_consecutive.iter().map(|b| format!("{:e}", b.value)).collect();
    let checks = vec![
        Check::new("bl_monotone", r.bl_monotone, format!("consecutive BL distances [{}]", values.join(", "))),
        Check::new(
            "sup_decreasing",
            r.sup_pass(),
            format!("{} of {} paths ({:.4}) have strictly decreasing sup distances; need {SUP_FRACTION}", r.sup_decreasing, r.sup_paths, r.sup_fraction),
        ),
        Check::new(
            "lipschitz",
            r.lipschitz_pass(),
            format!(
                "max speed ratios {:?} against 2 + {:e}; exact reference {}",
                r.max_speed_ratio, r.lipschitz_tolerance, r.exact_max_speed_ratio
            ),
        ),
    ];
    let m = p.eps.len();
    let mut header: Vec<String> = vec!["path".into()];
    header.extend((0..m - 1).map(|j| format!("sup_eps{j}_eps{}", j + 1)));
    header.extend((0..m).map(|j| format!("sup_eps{j}_exact")));
    header.push("decreasing".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut csv = CsvSink::create(&ctx.file("converge_paths.csv"), "converge", &ctx.stamp, &header)?;
    for row in &r.rows {
        let mut cells = vec![row.path.to_string()];
        cells.extend(row.consecutive.iter().chain(&row.to_exact).map(|v| num(*v)));
        cells.push(row.decreasing().to_string());
        csv.row(cells)?;
    }
    csv.finish()?;
    ctx.write_report("converge.json", &Report { summary: &r, checks: &checks })?;
    Ok(checks)
}
