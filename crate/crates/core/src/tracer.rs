//! Fixed-step RK4 integration, paths and path ensembles.
//!
//! Steps are aligned with the field's time breaks (stage boundaries and
//! truncation times) and each segment between breaks is integrated as an
//! autonomous ODE. For the exact field, which is linear on each triangle of
//! each filled square, steps that leave the current triangle are split at the
//! crossing (found by bisection on the step fraction), so corners cost no
//! accuracy.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::exact_flow::{flow_sampled, FlowQuery};
use crate::field::{eval_in_piece, eval_stage, piece_of, stage_of, DepauwField, Piece, StageIndex};
use crate::geometry::{torus_distance, wrap_point, Point, TorusPoint};
use crate::math;
use crate::mollify::MollifiedField;
use crate::rng::StartDistribution;

/// A time-dependent field that is autonomous between its time breaks.
pub trait VelocityField: Sync {
    /// Times in the open interval `(lo, hi)` where the formula changes, increasing.
    fn time_breaks(&self, lo: f64, hi: f64) -> Vec<f64>;

    /// Validates a segment between consecutive breaks, identified by an interior time.
    fn check_segment(&self, t: f64) -> Result<()>;

    fn velocity(&self, t: f64, p: Point) -> Point;

    /// Piece id for fields that are smooth on pieces; `None` for smooth fields.
    fn piece(&self, _t: f64, _p: Point) -> Option<u64> {
        None
    }

    /// The formula of piece `id`, extended past the piece.
    fn velocity_in_piece(&self, t: f64, _id: u64, p: Point) -> Point {
        self.velocity(t, p)
    }

    fn sup_norm(&self) -> f64;

    /// Largest admissible step, if the field imposes one.
    fn max_step(&self) -> Option<f64> {
        None
    }
}

fn stage_breaks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut b = 1.0;
    while b > lo && b > 0.0 {
        if b < hi {
            out.push(b);
        }
        b *= 0.5;
    }
    out.reverse();
    out
}

impl VelocityField for DepauwField {
    fn time_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        stage_breaks(lo, hi)
    }

    fn check_segment(&self, t: f64) -> Result<()> {
        stage_of(t).map(|_| ())
    }

    #[inline]
    fn velocity(&self, t: f64, p: Point) -> Point {
        stage_of(t).map_or([0.0, 0.0], |k| eval_stage(k, p))
    }

    #[inline]
    fn piece(&self, t: f64, p: Point) -> Option<u64> {
        stage_of(t).ok().map(|k| piece_of(k, p).id())
    }

    #[inline]
    fn velocity_in_piece(&self, _t: f64, id: u64, p: Point) -> Point {
        eval_in_piece(Piece::from_id(id), p)
    }

    fn sup_norm(&self) -> f64 {
        crate::SUP_NORM
    }
}

impl VelocityField for MollifiedField {
    fn time_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        stage_breaks(lo, hi)
    }

    fn check_segment(&self, t: f64) -> Result<()> {
        self.check_stage(stage_of(t)?)
    }

    #[inline]
    fn velocity(&self, t: f64, p: Point) -> Point {
        match stage_of(t) {
            Ok(k) if k.0 <= self.max_stage() => self.eval_stage(k, p),
            _ => [0.0, 0.0],
        }
    }

    fn sup_norm(&self) -> f64 {
        self.max_node_speed().max(crate::SUP_NORM)
    }

    fn max_step(&self) -> Option<f64> {
        Some(self.eps / 4.0)
    }
}

/// The zero field.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn time_breaks(&self, _lo: f64, _hi: f64) -> Vec<f64> {
        Vec::new()
    }

    fn check_segment(&self, _t: f64) -> Result<()> {
        Ok(())
    }

    fn velocity(&self, _t: f64, _p: Point) -> Point {
        [0.0, 0.0]
    }

    fn sup_norm(&self) -> f64 {
        0.0
    }
}

/// `inner` for `t >= tau`, zero before.
#[derive(Clone, Debug)]
pub struct Truncated<F> {
    pub inner: F,
    pub tau: f64,
}

impl<F: VelocityField> VelocityField for Truncated<F> {
    fn time_breaks(&self, lo: f64, hi: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.inner.time_breaks(lo.max(self.tau), hi);
        if self.tau > lo && self.tau < hi && !out.contains(&self.tau) {
            out.push(self.tau);
        }
        out.sort_by(f64::total_cmp);
        out
    }

    fn check_segment(&self, t: f64) -> Result<()> {
        if t < self.tau {
            Ok(())
        } else {
            self.inner.check_segment(t)
        }
    }

    fn velocity(&self, t: f64, p: Point) -> Point {
        if t < self.tau {
            [0.0, 0.0]
        } else {
            self.inner.velocity(t, p)
        }
    }

    fn piece(&self, t: f64, p: Point) -> Option<u64> {
        if t < self.tau {
            None
        } else {
            self.inner.piece(t, p)
        }
    }

    fn velocity_in_piece(&self, t: f64, id: u64, p: Point) -> Point {
        if t < self.tau {
            [0.0, 0.0]
        } else {
            self.inner.velocity_in_piece(t, id, p)
        }
    }

    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }

    fn max_step(&self) -> Option<f64> {
        self.inner.max_step()
    }
}

/// A sampled curve with increasing times and unwrapped positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub weight: f64,
}

impl Path {
    pub fn new(times: Vec<f64>, points: Vec<Point>, weight: f64) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::Shape(alloc::format!("{} times for {} points", times.len(), points.len())));
        }
        if times.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(core::cmp::Ordering::Less)) {
            return Err(Error::Invalid("path times must increase".into()));
        }
        Ok(Path { times, points, weight })
    }

    /// Builds from torus-reduced samples by choosing, at each step, the image
    /// nearest to the previous point.
    pub fn from_wrapped(times: Vec<f64>, wrapped: Vec<Point>, weight: f64) -> Self {
        let mut points = Vec::with_capacity(wrapped.len());
        for p in wrapped {
            let q = match points.last() {
                None => p,
                Some(prev) => {
                    let prev: &Point = prev;
                    let lift = |x: f64, r: f64| x + 2.0 * math::round((r - x) / 2.0);
                    [lift(p[0], prev[0]), lift(p[1], prev[1])]
                }
            };
            points.push(q);
        }
        Path { times, points, weight }
    }

    pub fn constant(times: Vec<f64>, p: Point, weight: f64) -> Self {
        let points = alloc::vec![p; times.len()];
        Path { times, points, weight }
    }

    pub fn t_min(&self) -> f64 {
        self.times[0]
    }

    pub fn t_max(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Linear interpolation between samples (unwrapped).
    pub fn position_at(&self, t: f64) -> Result<Point> {
        let (lo, hi) = (self.t_min(), self.t_max());
        if !(t >= lo && t <= hi) {
            return Err(Error::TimeOutOfRange { t, t_min: lo, t_max: hi });
        }
        let i = self.times.partition_point(|s| *s <= t);
        if i == 0 {
            return Ok(self.points[0]);
        }
        let i = i - 1;
        if self.times[i] == t || i + 1 == self.times.len() {
            return Ok(self.points[i]);
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.points[i], self.points[i + 1]);
        Ok([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
    }

    /// `gamma(tau v .)`. A sample is inserted at `tau` if needed; samples before
    /// it take the value at `tau`.
    pub fn stop_backward(&self, tau: f64) -> Path {
        if tau <= self.t_min() {
            return self.clone();
        }
        let tau = tau.min(self.t_max());
        let anchor = self.position_at(tau).expect("tau clamped into range");
        let mut times = Vec::with_capacity(self.times.len() + 1);
        let mut points = Vec::with_capacity(self.times.len() + 1);
        let mut inserted = false;
        for (t, p) in self.times.iter().zip(&self.points) {
            if *t < tau {
                times.push(*t);
                points.push(anchor);
            } else {
                if !inserted && *t > tau {
                    times.push(tau);
                    points.push(anchor);
                }
                inserted = true;
                times.push(*t);
                points.push(*p);
            }
        }
        Path { times, points, weight: self.weight }
    }

    /// Largest `d(gamma(t_i), gamma(t_{i+1})) / (t_{i+1} - t_i)`; by the triangle
    /// inequality this bounds the ratio over all sample pairs.
    pub fn max_speed_ratio(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 1..self.times.len() {
            let d = torus_distance(self.points[i - 1], self.points[i]);
            worst = worst.max(d / (self.times[i] - self.times[i - 1]));
        }
        worst
    }
}

/// Stops `path` at `tau`.
pub fn stop_backward(path: &Path, tau: f64) -> Path {
    path.stop_backward(tau)
}

/// Result of [`integrate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Integration {
    pub path: Path,
    /// `sum |dx - h (v(x_i) + v(x_{i+1})) / 2|` over steps.
    pub residual: f64,
    /// Piece crossings resolved by bisection.
    pub crossings: usize,
}

/// Which samples to keep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Record {
    EveryStep,
    /// Every `n` steps plus every segment end.
    Every(usize),
    /// Only the segment ends.
    Breaks,
}

const ALIGN_TOL: f64 = 1e-9;
const MAX_EVENTS: usize = 64;

#[inline]
fn axpy(x: Point, h: f64, v: Point) -> Point {
    [x[0] + h * v[0], x[1] + h * v[1]]
}

#[inline]
fn rk4<V: Fn(Point) -> Point>(v: &V, x: Point, h: f64) -> Point {
    let k1 = v(x);
    let k2 = v(axpy(x, 0.5 * h, k1));
    let k3 = v(axpy(x, 0.5 * h, k2));
    let k4 = v(axpy(x, h, k3));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// One step of size `h` with piece locking; returns the new point and the
/// number of crossings.
fn step_pieces<F: VelocityField + ?Sized>(f: &F, t: f64, x: Point, h: f64) -> (Point, usize) {
    let mut x = x;
    let mut rem = h;
    let mut events = 0;
    let Some(mut id) = f.piece(t, x) else {
        return (rk4(&|p| f.velocity(t, p), x, h), 0);
    };
    loop {
        let v = |p: Point| f.velocity_in_piece(t, id, p);
        let y = rk4(&v, x, rem);
        let next = f.piece(t, y).unwrap_or(id);
        if next == id || events >= MAX_EVENTS {
            return (y, events);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut at_hi = y;
        while (hi - lo) * rem.abs() > 1e-15 && hi - lo > 1e-17 {
            let mid = 0.5 * (lo + hi);
            let z = rk4(&v, x, mid * rem);
            if f.piece(t, z) == Some(id) {
                lo = mid;
            } else {
                hi = mid;
                at_hi = z;
            }
        }
        events += 1;
        x = at_hi;
        rem *= 1.0 - hi;
        id = f.piece(t, x).unwrap_or(id);
        if rem.abs() <= 1e-300 || 1.0 - hi <= 0.0 {
            return (x, events);
        }
    }
}

/// RK4 from `(t0, start)` to `t1` (either direction) with steps of `step`,
/// which must divide every segment between time breaks.
pub fn integrate_with<F: VelocityField + ?Sized>(
    field: &F,
    start: Point,
    t0: f64,
    t1: f64,
    step: f64,
    record: Record,
) -> Result<Integration> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Invalid(alloc::format!("step {step} must be positive")));
    }
    if let Some(max) = field.max_step() {
        if step > max * (1.0 + 1e-12) {
            return Err(Error::Invalid(alloc::format!("step {step} exceeds the admissible {max}")));
        }
    }
    let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
    let mut knots = alloc::vec![lo];
    knots.extend(field.time_breaks(lo, hi));
    knots.push(hi);
    if t0 > t1 {
        knots.reverse();
    }
    let mut times = alloc::vec![t0];
    let mut points = alloc::vec![start];
    let mut x = start;
    let mut residual = 0.0;
    let mut crossings = 0;
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).abs();
        if len == 0.0 {
            continue;
        }
        let steps = math::round(len / step);
        if steps < 1.0 || (steps * step - len).abs() > ALIGN_TOL * len {
            return Err(Error::MisalignedStep { step, a, b });
        }
        let steps = steps as usize;
        let tm = 0.5 * (a + b);
        field.check_segment(tm)?;
        let h = (b - a) / steps as f64;
        let mut vx = field.velocity(tm, x);
        for i in 0..steps {
            let (y, ev) = step_pieces(field, tm, x, h);
            crossings += ev;
            let vy = field.velocity(tm, y);
            let r0 = y[0] - x[0] - 0.5 * h * (vx[0] + vy[0]);
            let r1 = y[1] - x[1] - 0.5 * h * (vx[1] + vy[1]);
            residual += math::sqrt(r0 * r0 + r1 * r1);
            x = y;
            vx = vy;
            let last = i + 1 == steps;
            let keep = match record {
                Record::EveryStep => true,
                Record::Every(n) => last || (i + 1) % n.max(1) == 0,
                Record::Breaks => last,
            };
            if keep {
                times.push(if last { b } else { a + (i + 1) as f64 * h });
                points.push(x);
            }
        }
    }
    if t0 > t1 {
        times.reverse();
        points.reverse();
    }
    Ok(Integration { path: Path { times, points, weight: 1.0 }, residual, crossings })
}

/// [`integrate_with`] recording every step.
pub fn integrate<F: VelocityField + ?Sized>(field: &F, start: Point, t0: f64, t1: f64, step: f64) -> Result<Integration> {
    integrate_with(field, start, t0, t1, step, Record::EveryStep)
}

/// Endpoint only.
pub fn integrate_endpoint<F: VelocityField + ?Sized>(field: &F, start: Point, t0: f64, t1: f64, step: f64) -> Result<Point> {
    let out = integrate_with(field, start, t0, t1, step, Record::Breaks)?;
    let p = &out.path;
    Ok(if t0 <= t1 { p.points[p.points.len() - 1] } else { p.points[0] })
}

/// How ensemble paths are generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tracing {
    /// Exact flow sampled at stage boundaries, `substeps` samples per stage.
    Exact { depth: u32, substeps: u32 },
    /// RK4 on a mollified field down to `t_end`.
    Mollified { eps: f64, step: f64, t_end: f64, every: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub field: String,
    pub tracing: Tracing,
    pub seed: u64,
    pub start_time: f64,
    pub start: StartDistribution,
    pub count: u64,
}

/// Weighted paths with their provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub meta: EnsembleMeta,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.paths.iter().map(|p| p.weight).sum()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Latest common start time of all paths.
    pub fn t_min(&self) -> f64 {
        self.paths.iter().map(Path::t_min).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Generator for backward ensembles from `t = 1`: path `i` depends only on
/// `(seed, i)`, so any partition of the index range gives the same paths.
#[derive(Clone, Debug)]
pub struct BackwardEnsemble<'a> {
    pub count: u64,
    pub seed: u64,
    pub start: StartDistribution,
    pub source: Source<'a>,
}

#[derive(Clone, Debug)]
pub enum Source<'a> {
    Exact { field: DepauwField, substeps: u32 },
    Mollified { field: &'a MollifiedField, step: f64, t_end: f64, every: usize },
}

impl BackwardEnsemble<'_> {
    pub fn weight(&self) -> f64 {
        1.0 / self.count as f64
    }

    pub fn start_point(&self, index: u64) -> Point {
        wrap_point(self.start.sample(self.seed, index))
    }

    pub fn path(&self, index: u64) -> Result<Path> {
        let p = self.start_point(index);
        match &self.source {
            Source::Exact { field, substeps } => {
                let t_end = Dyadic::pow2(-(field.max_stage_depth as i32));
                let q = FlowQuery::new(Dyadic::ONE, t_end);
                let (_, path) = flow_sampled(field, &TorusPoint::from_f64(p)?, &q, *substeps)?;
                Ok(path.to_path(self.weight()))
            }
            Source::Mollified { field, step, t_end, every } => {
                let out = integrate_with(*field, p, 1.0, *t_end, *step, Record::Every(*every))?;
                let mut path = out.path;
                path.weight = self.weight();
                Ok(path)
            }
        }
    }

    pub fn meta(&self) -> EnsembleMeta {
        let (field, tracing) = match &self.source {
            Source::Exact { field, substeps } => (
                alloc::format!("depauw(depth={})", field.max_stage_depth),
                Tracing::Exact { depth: field.max_stage_depth, substeps: *substeps },
            ),
            Source::Mollified { field, step, t_end, every } => (
                alloc::format!("mollified(eps={}, h={}, stages=0..={})", field.eps, field.h, field.max_stage()),
                Tracing::Mollified { eps: field.eps, step: *step, t_end: *t_end, every: *every },
            ),
        };
        EnsembleMeta { field, tracing, seed: self.seed, start_time: 1.0, start: self.start.clone(), count: self.count }
    }

    /// Serial generation of all paths.
    pub fn run(&self) -> Result<PathEnsemble> {
        let paths = (0..self.count).map(|i| self.path(i)).collect::<Result<Vec<_>>>()?;
        Ok(PathEnsemble { meta: self.meta(), paths })
    }
}

/// Uniform starts at `t = 1`, exact backward flow to `2^{-depth}`, weights `1/n`.
pub fn backward_ensemble(n: u64, depth: u32, seed: u64) -> Result<PathEnsemble> {
    BackwardEnsemble {
        count: n,
        seed,
        start: StartDistribution::Uniform,
        source: Source::Exact { field: DepauwField::new(depth), substeps: 1 },
    }
    .run()
}

/// Uniform starts at `t = 1`, RK4 on `field` back to `t_end`.
pub fn backward_ensemble_mollified(field: &MollifiedField, n: u64, t_end: f64, step: f64, seed: u64) -> Result<PathEnsemble> {
    BackwardEnsemble {
        count: n,
        seed,
        start: StartDistribution::Uniform,
        source: Source::Mollified { field, step, t_end, every: 1 },
    }
    .run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub constant: f64,
    pub tolerance: f64,
    pub max_ratio: f64,
    pub worst_path: Option<usize>,
    pub paths: usize,
    pub pass: bool,
}

/// Checks `d(gamma(s), gamma(t)) <= (constant + tolerance) |t - s|` on every path.
pub fn lipschitz_audit(e: &PathEnsemble, constant: f64, tolerance: f64) -> LipschitzReport {
    let mut max_ratio = 0.0;
    let mut worst_path = None;
    for (i, p) in e.paths.iter().enumerate() {
        let r = p.max_speed_ratio();
        if r > max_ratio {
            max_ratio = r;
            worst_path = Some(i);
        }
    }
    LipschitzReport {
        constant,
        tolerance,
        max_ratio,
        worst_path,
        paths: e.paths.len(),
        pass: max_ratio <= constant + tolerance,
    }
}

/// The tolerance used for an ensemble: `1e-12` for exact paths, `10 step` for RK4.
pub fn audit_tolerance(meta: &EnsembleMeta) -> f64 {
    match meta.tracing {
        Tracing::Exact { .. } => 1e-12,
        Tracing::Mollified { step, .. } => 10.0 * step,
    }
}

/// Stage index used for a segment (helper for callers building custom fields).
pub fn segment_stage(a: f64, b: f64) -> Result<StageIndex> {
    stage_of(0.5 * (a + b))
}
