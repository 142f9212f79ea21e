//! Closed-form flow maps of the Depauw field in exact dyadic arithmetic.
//!
//! Within stage `k`, rescale `z = 2^k x` and `s = 2^k t`; then `dz/ds = u(z)`.
//! A point of a filled square at sup-radius `r` from the centre moves
//! counterclockwise along the square ring with speed `4 r`, so after `s` it has
//! advanced an arc length `4 r s` on a perimeter of length `8 r`. A full stage
//! (`s = 1/2`) is the rigid quarter turn `(a, b) -> (-b, a)` of every open
//! filled square. Points on square edges (`r = 1/2`), at centres, or in empty
//! squares are fixed, which makes every stage map a bijection of the torus.
//!
//! The field formula drives right-edge points upward, which is a
//! counterclockwise rotation; nothing downstream depends on the orientation.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::field::{stage_of_dyadic, DepauwField, StageIndex};
use crate::geometry::{cells_per_side, Cell, TorusPoint};
use crate::tracer::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

/// Advances `p` by `dt in [0, 2^{-k-1}]` forward in time within stage `k`.
pub fn stage_flow_exact(p: &TorusPoint, stage: StageIndex, dt: &Dyadic) -> Result<TorusPoint> {
    stage_flow(p, stage, dt, Direction::Forward)
}

/// Like [`stage_flow_exact`]; `Backward` applies the inverse map.
pub fn stage_flow(p: &TorusPoint, stage: StageIndex, dt: &Dyadic, dir: Direction) -> Result<TorusPoint> {
    let max = stage.duration_exact();
    if dt.signum() < 0 || *dt > max {
        return Err(Error::StepOutOfRange { stage: stage.0, dt: dt.to_f64(), max: max.to_f64() });
    }
    let s = dt.mul_pow2(stage.0 as i32);
    let s = match dir {
        Direction::Forward => s,
        Direction::Backward => -s,
    };
    Ok(advance(p, stage.0, &s))
}

/// Moves `p` by rescaled time `s` (signed, `|s| <= 1/2`) along its stage-`k` ring.
fn advance(p: &TorusPoint, k: u32, s: &Dyadic) -> TorusPoint {
    if s.is_zero() {
        return p.clone();
    }
    let ki = k as i32;
    let half = Dyadic::new(1, 1);
    let z1 = p.x1().mul_pow2(ki);
    let z2 = p.x2().mul_pow2(ki);
    let c1 = (&z1 + &half).floor();
    let c2 = (&z2 + &half).floor();
    let parity = (&c1 + &c2).rem_euclid_int(2);
    if !parity.is_zero() {
        return p.clone();
    }
    let a = &z1 - &c1;
    let b = &z2 - &c2;
    let r = a.abs().max(b.abs());
    if r.is_zero() || r == half {
        return p.clone();
    }
    let sigma = perimeter_coordinate(&a, &b, &r);
    let len = r.mul_pow2(3);
    let mut next = &sigma + &(&r * s).mul_pow2(2);
    if next.signum() < 0 {
        next = &next + &len;
    } else if next >= len {
        next = &next - &len;
    }
    let (a2, b2) = perimeter_point(&next, &r);
    TorusPoint::new((&c1 + &a2).mul_pow2(-ki), (&c2 + &b2).mul_pow2(-ki))
}

/// Arc-length coordinate on the ring of radius `r`, starting at the corner
/// `(r, -r)` and running counterclockwise. Each edge owns its starting corner.
fn perimeter_coordinate(a: &Dyadic, b: &Dyadic, r: &Dyadic) -> Dyadic {
    let neg_r = -r;
    if a == r && b < r {
        b + r
    } else if b == r && *a > neg_r {
        &r.mul_pow2(1) + &(r - a)
    } else if a == &neg_r && *b > neg_r {
        &r.mul_pow2(2) + &(r - b)
    } else {
        &(&r.mul_pow2(2) + &r.mul_pow2(1)) + &(a + r)
    }
}

fn perimeter_point(sigma: &Dyadic, r: &Dyadic) -> (Dyadic, Dyadic) {
    let two_r = r.mul_pow2(1);
    let four_r = r.mul_pow2(2);
    let six_r = &four_r + &two_r;
    if *sigma < two_r {
        (r.clone(), sigma - r)
    } else if *sigma < four_r {
        (&(&two_r + r) - sigma, r.clone())
    } else if *sigma < six_r {
        (-r, &(&four_r + r) - sigma)
    } else {
        (sigma - &(&six_r + r), -r)
    }
}

/// Image of a cell under the full stage-`stage` map, by integer arithmetic.
///
/// The cell must be at least one level finer than the stage scale so that it
/// sits inside a single quadrant of a stage square. Filled squares cycle
/// their sub-cells in a 4-cycle; empty squares keep them fixed.
pub fn quarter_turn_cells(c: Cell, stage: StageIndex, dir: Direction) -> Result<Cell> {
    if c.level < stage.0 + 1 {
        return Err(Error::LevelTooCoarse { level: c.level, stage: stage.0, required: stage.0 + 1 });
    }
    let n = 1i64 << (c.level - stage.0);
    let (ix, iy) = (c.ix as i64, c.iy as i64);
    let c1 = (ix + n / 2).div_euclid(n);
    let c2 = (iy + n / 2).div_euclid(n);
    if (c1 + c2).rem_euclid(2) != 0 {
        return Ok(c);
    }
    let (nx, ny) = match dir {
        Direction::Forward => ((c1 + c2) * n - iy - 1, (c2 - c1) * n + ix),
        Direction::Backward => ((c1 - c2) * n + iy, (c1 + c2) * n - ix - 1),
    };
    Ok(Cell::wrapped(c.level, nx, ny))
}

/// A request for `X(t_end, t_start, .)`; the direction follows the ordering.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowQuery {
    pub t_start: Dyadic,
    pub t_end: Dyadic,
}

impl FlowQuery {
    pub fn new(t_start: Dyadic, t_end: Dyadic) -> Self {
        FlowQuery { t_start, t_end }
    }

    pub fn direction(&self) -> Direction {
        if self.t_end >= self.t_start {
            Direction::Forward
        } else {
            Direction::Backward
        }
    }
}

/// A trajectory of the exact flow, sampled at its start, end and every stage
/// boundary crossed (plus optional interior checkpoints), in query order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactPath {
    pub times: Vec<Dyadic>,
    pub points: Vec<TorusPoint>,
}

impl ExactPath {
    pub fn end(&self) -> &TorusPoint {
        self.points.last().expect("paths are never empty")
    }

    /// Floating-point copy with increasing times and an unwrapped lift.
    pub fn to_path(&self, weight: f64) -> Path {
        let mut pairs: Vec<(f64, [f64; 2])> =
            self.times.iter().zip(&self.points).map(|(t, p)| (t.to_f64(), p.to_f64())).collect();
        if pairs.len() > 1 && pairs[0].0 > pairs[pairs.len() - 1].0 {
            pairs.reverse();
        }
        let (times, points): (Vec<f64>, Vec<[f64; 2]>) = pairs.into_iter().unzip();
        Path::from_wrapped(times, points, weight)
    }

    /// `gamma(tau v .)`: values before `tau` are replaced by the value at `tau`,
    /// which must be a sample time unless it precedes every sample.
    pub fn stop_backward(&self, tau: &Dyadic) -> Result<ExactPath> {
        if self.times.iter().all(|t| t >= tau) {
            return Ok(self.clone());
        }
        let at = self
            .times
            .iter()
            .position(|t| t == tau)
            .ok_or_else(|| Error::Invalid(alloc::format!("{tau} is not a sample time")))?;
        let anchor = self.points[at].clone();
        let points = self
            .times
            .iter()
            .zip(&self.points)
            .map(|(t, p)| if t < tau { anchor.clone() } else { p.clone() })
            .collect();
        Ok(ExactPath { times: self.times.clone(), points })
    }
}

/// The stage traversed immediately after `t` when moving forward.
fn stage_above(t: &Dyadic) -> Result<StageIndex> {
    // for t = 2^{-j} the next stage up is j - 1
    if t.mantissa() == 1.into() && t.exponent() > 0 {
        return Ok(StageIndex(t.exponent() - 1));
    }
    stage_of_dyadic(t)
}

/// Composite flow `X(t_end, t_start, p)` with its sampled trajectory.
///
/// `substeps` (a power of two) adds equally spaced checkpoints inside every
/// stage segment; 1 samples only boundaries.
pub fn flow_sampled(
    field: &DepauwField,
    p: &TorusPoint,
    q: &FlowQuery,
    substeps: u32,
) -> Result<(TorusPoint, ExactPath)> {
    if !substeps.is_power_of_two() {
        return Err(Error::Invalid(alloc::format!("substeps {substeps} must be a power of two")));
    }
    for t in [&q.t_start, &q.t_end] {
        if t.signum() <= 0 || *t > Dyadic::ONE {
            return Err(Error::TimeDomain { t: t.to_f64() });
        }
    }
    let lo = q.t_start.clone().min(q.t_end.clone());
    if lo < field.min_time() {
        let needed = stage_of_dyadic(&lo)?.0.saturating_sub(if lo.mantissa() == 1.into() { 1 } else { 0 });
        return Err(Error::DepthExceeded { needed, max_depth: field.max_stage_depth });
    }
    let split = substeps.trailing_zeros() as i32;
    let mut times = alloc::vec![q.t_start.clone()];
    let mut points = alloc::vec![p.clone()];
    let mut t = q.t_start.clone();
    let mut x = p.clone();
    let dir = q.direction();
    while t != q.t_end {
        let (stage, seg_end) = match dir {
            Direction::Forward => {
                let k = stage_above(&t)?;
                (k, Dyadic::pow2(-(k.0 as i32)).min(q.t_end.clone()))
            }
            Direction::Backward => {
                let k = stage_of_dyadic(&t)?;
                (k, k.duration_exact().max(q.t_end.clone()))
            }
        };
        let piece = (&seg_end - &t).abs().mul_pow2(-split);
        for _ in 0..substeps {
            x = stage_flow(&x, stage, &piece, dir)?;
            t = match dir {
                Direction::Forward => &t + &piece,
                Direction::Backward => &t - &piece,
            };
            times.push(t.clone());
            points.push(x.clone());
        }
    }
    Ok((x, ExactPath { times, points }))
}

/// Composite flow sampled at stage boundaries.
pub fn flow(field: &DepauwField, p: &TorusPoint, q: &FlowQuery) -> Result<(TorusPoint, ExactPath)> {
    flow_sampled(field, p, q, 1)
}

/// Position of the backward trajectory from `(1, y)` at `2^{-K}`, standing in
/// for its time-0 limit. The tail of the stage displacements bounds the gap
/// to the limit by `2 * 2^{-K}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeZeroEstimate {
    pub point: TorusPoint,
    pub time: Dyadic,
    pub error_bound: f64,
}

pub fn backward_to_time_zero(field: &DepauwField, y: &TorusPoint, depth: u32) -> Result<TimeZeroEstimate> {
    let time = Dyadic::pow2(-(depth as i32));
    let (point, _) = flow(field, y, &FlowQuery::new(Dyadic::ONE, time.clone()))?;
    Ok(TimeZeroEstimate { point, time, error_bound: 2.0 * crate::math::ldexp(1.0, -(depth as i32)) })
}

/// Backward endpoints at every `2^{-j}`, `j = 0..=depth`, without storing a path.
pub fn backward_checkpoints(y: &TorusPoint, depth: u32) -> Vec<TorusPoint> {
    let mut out = Vec::with_capacity(depth as usize + 1);
    let mut x = y.clone();
    out.push(x.clone());
    let minus_half = Dyadic::new(-1, 1);
    for k in 0..depth {
        x = advance(&x, k, &minus_half);
        out.push(x.clone());
    }
    out
}

/// Number of level-`level` cells, for iterating over whole grids.
pub fn grid_len(level: u32) -> usize {
    let n = cells_per_side(level) as usize;
    n * n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::cell_of;

    fn tp(a: f64, b: f64) -> TorusPoint {
        TorusPoint::from_f64([a, b]).unwrap()
    }

    fn d(s: &str) -> Dyadic {
        s.parse().unwrap()
    }

    #[test]
    fn quarter_turn_of_right_edge_point() {
        let out = stage_flow_exact(&tp(0.25, 0.0), StageIndex(0), &d("1/2^1")).unwrap();
        assert_eq!(out, tp(0.0, 0.25));
    }

    #[test]
    fn fixed_points() {
        let half = d("1/2^1");
        for p in [tp(1.3, 0.1), tp(0.0, 0.0), tp(1.0, 1.0), tp(0.5, 0.2)] {
            assert_eq!(stage_flow_exact(&p, StageIndex(0), &half).unwrap(), p);
        }
    }

    #[test]
    fn step_range_is_checked() {
        let e = stage_flow_exact(&tp(0.1, 0.1), StageIndex(1), &d("1/2^1"));
        assert!(matches!(e, Err(Error::StepOutOfRange { .. })));
        assert!(stage_flow_exact(&tp(0.1, 0.1), StageIndex(1), &d("-1/2^3")).is_err());
    }

    #[test]
    fn full_stage_is_rigid_rotation() {
        // (a, b) -> (-b, a) about the centre (1, 1) at stage 0
        let p = tp(1.25, 0.875);
        let q = stage_flow_exact(&p, StageIndex(0), &d("1/2^1")).unwrap();
        assert_eq!(q, TorusPoint::new(d("1.125"), d("1.25")));
    }

    #[test]
    fn partial_steps_compose() {
        let p = tp(0.2, -0.05 + 2.0);
        let k = StageIndex(0);
        let a = stage_flow_exact(&p, k, &d("3/2^4")).unwrap();
        let b = stage_flow_exact(&a, k, &d("5/2^4")).unwrap();
        assert_eq!(b, stage_flow_exact(&p, k, &d("1/2^1")).unwrap());
        let back = stage_flow(&b, k, &d("1/2^1"), Direction::Backward).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn cells_cycle_with_order_four() {
        let stage = StageIndex(0);
        let start = Cell { level: 1, ix: 0, iy: 0 };
        let mut c = start;
        let mut orbit = alloc::vec![c];
        for _ in 0..4 {
            c = quarter_turn_cells(c, stage, Direction::Forward).unwrap();
            orbit.push(c);
        }
        assert_eq!(c, start);
        orbit.pop();
        orbit.sort();
        orbit.dedup();
        assert_eq!(orbit.len(), 4);
        // empty square at (1, 0): sub-cells fixed
        let e = Cell { level: 1, ix: 2, iy: 0 };
        assert_eq!(quarter_turn_cells(e, stage, Direction::Forward).unwrap(), e);
        let too_coarse = quarter_turn_cells(Cell { level: 0, ix: 0, iy: 0 }, stage, Direction::Forward);
        assert!(too_coarse.is_err());
    }

    #[test]
    fn cell_map_matches_point_map_on_centres() {
        for level in 1..=5u32 {
            for k in 0..level {
                let stage = StageIndex(k);
                for idx in 0..grid_len(level) {
                    let c = Cell::from_index(level, idx);
                    for dir in [Direction::Forward, Direction::Backward] {
                        let img = stage_flow(&c.center(), stage, &stage.duration_exact(), dir).unwrap();
                        let via_cells = quarter_turn_cells(c, stage, dir).unwrap();
                        assert_eq!(via_cells.center(), img, "level {level} stage {k} {c:?} {dir:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn flow_identity_and_inverse() {
        let f = DepauwField::new(10);
        let p = tp(0.3141, 1.2718);
        let q = FlowQuery::new(d("3/2^3"), d("3/2^3"));
        let (x, path) = flow(&f, &p, &q).unwrap();
        assert_eq!(x, p);
        assert_eq!(path.times.len(), 1);
        let (y, fwd) = flow(&f, &p, &FlowQuery::new(d("1/2^2"), Dyadic::ONE)).unwrap();
        assert_eq!(fwd.times, alloc::vec![d("1/2^2"), d("1/2^1"), Dyadic::ONE]);
        let (z, _) = flow(&f, &y, &FlowQuery::new(Dyadic::ONE, d("1/2^2"))).unwrap();
        assert_eq!(z, p);
    }

    #[test]
    fn flow_with_interior_endpoints() {
        let f = DepauwField::new(10);
        let p = tp(0.71, 0.33);
        let (a, path) = flow(&f, &p, &FlowQuery::new(d("0.875"), d("0.1875"))).unwrap();
        assert_eq!(path.times, alloc::vec![d("0.875"), d("1/2^1"), d("1/2^2"), d("0.1875")]);
        let (b, _) = flow(&f, &a, &FlowQuery::new(d("0.1875"), d("0.875"))).unwrap();
        assert_eq!(b, p);
    }

    #[test]
    fn depth_limit() {
        let f = DepauwField::new(3);
        let p = tp(0.1, 0.2);
        assert!(flow(&f, &p, &FlowQuery::new(Dyadic::ONE, d("1/2^4"))).is_ok());
        let e = flow(&f, &p, &FlowQuery::new(Dyadic::ONE, d("1/2^5")));
        assert!(matches!(e, Err(Error::DepthExceeded { max_depth: 3, .. })), "{e:?}");
    }

    #[test]
    fn stopping_exact_paths() {
        let f = DepauwField::new(10);
        let (_, path) = flow(&f, &tp(0.37, 1.61), &FlowQuery::new(Dyadic::ONE, d("1/2^6"))).unwrap();
        assert_eq!(path.stop_backward(&d("1/2^6")).unwrap(), path);
        let at_one = path.stop_backward(&Dyadic::ONE).unwrap();
        assert!(at_one.points.iter().all(|p| p == &path.points[0]));
        let tau = d("1/2^2");
        let stopped = path.stop_backward(&tau).unwrap();
        let worst = path
            .points
            .iter()
            .zip(&stopped.points)
            .map(|(a, b)| crate::geometry::torus_distance_exact(a, b))
            .fold(0.0, f64::max);
        assert!(worst <= 2.0 * 0.25);
    }

    #[test]
    fn checkpoints_agree_with_flow() {
        let f = DepauwField::new(8);
        let y = tp(1.234, 0.567);
        let cps = backward_checkpoints(&y, 8);
        let (_, path) = flow(&f, &y, &FlowQuery::new(Dyadic::ONE, d("1/2^8"))).unwrap();
        assert_eq!(cps, path.points);
        let est = backward_to_time_zero(&f, &y, 8).unwrap();
        assert_eq!(&est.point, path.end());
        assert_eq!(cell_of(&est.point, 3), cell_of(path.end(), 3));
    }
}
