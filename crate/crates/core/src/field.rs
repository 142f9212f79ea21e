//! Pointwise evaluation of the rotor `w`, its periodisation `u`, the staged
//! field `b` and the stage stream functions.
//!
//! `w` is supported on the square `max(|x1|, |x2|) < 1/2`: on the left/right
//! triangles (`|x1| > |x2|`) it is `(0, 4 x1)`, on the top/bottom triangles
//! `(-4 x2, 0)`. Particles therefore run counterclockwise around the square
//! level sets `max(|x1|, |x2|) = r` at speed `4 r`, and every ring closes in
//! time 2. On the diagonals `|x1| = |x2|` (a null set) `w` is taken to be 0.
//!
//! Stage `k` covers `t in (2^{-k-1}, 2^{-k}]` and uses `u(2^k x)`, without
//! amplitude rescaling: a stage lasts `2^{-k-1}`, which in the rescaled time
//! `2^k t` is exactly a quarter period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::math;
use crate::Dyadic;

/// Index `k` of the time stage `(2^{-k-1}, 2^{-k}]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StageIndex(pub u32);

impl StageIndex {
    /// Spatial scale `2^{-k}` of the stage squares.
    pub fn scale(self) -> f64 {
        math::ldexp(1.0, -(self.0 as i32))
    }

    /// Duration `2^{-k-1}`.
    pub fn duration(self) -> f64 {
        math::ldexp(1.0, -(self.0 as i32) - 1)
    }

    pub fn duration_exact(self) -> Dyadic {
        Dyadic::pow2(-(self.0 as i32) - 1)
    }

    /// `(start, end)` of the stage interval; the start is excluded.
    pub fn interval(self) -> (f64, f64) {
        (self.duration(), self.scale())
    }

    pub fn interval_exact(self) -> (Dyadic, Dyadic) {
        (self.duration_exact(), Dyadic::pow2(-(self.0 as i32)))
    }
}

/// The stage containing time `t in (0, 1]`.
pub fn stage_of(t: f64) -> Result<StageIndex> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::TimeDomain { t });
    }
    let (m, e) = libm::frexp(t);
    // t = m 2^e with m in [1/2, 1)
    let k = if m == 0.5 { 1 - e } else { -e };
    Ok(StageIndex(k as u32))
}

/// Exact variant of [`stage_of`].
pub fn stage_of_dyadic(t: &Dyadic) -> Result<StageIndex> {
    if t.signum() <= 0 || *t > Dyadic::ONE {
        return Err(Error::TimeDomain { t: t.to_f64() });
    }
    let mut k = 0u32;
    let mut lo = Dyadic::new(1, 1);
    while *t <= lo {
        k += 1;
        lo = lo.halve();
    }
    Ok(StageIndex(k))
}

/// The rotor `w`, relative to the centre of a filled unit square.
pub fn eval_w(p: Point) -> Point {
    let (a, b) = (p[0], p[1]);
    let (aa, ab) = (a.abs(), b.abs());
    if 0.5 > aa && aa > ab {
        [0.0, 4.0 * a]
    } else if 0.5 > ab && ab > aa {
        [-4.0 * b, 0.0]
    } else {
        [0.0, 0.0]
    }
}

/// Integer centre of the unit square containing `z` (half-open) and whether it is filled.
#[inline]
fn unit_square(z: Point) -> ([f64; 2], bool) {
    let c1 = math::floor(z[0] + 0.5);
    let c2 = math::floor(z[1] + 0.5);
    let filled = math::wrap(c1 + c2, 2.0) == 0.0;
    ([c1, c2], filled)
}

/// The periodisation `u(x) = sum_{y in Lambda} w(x - y)`; at most one term is nonzero.
pub fn eval_u(p: Point) -> Point {
    let (c, filled) = unit_square(p);
    if !filled {
        return [0.0, 0.0];
    }
    eval_w([p[0] - c[0], p[1] - c[1]])
}

/// Stream function of `u` in unit coordinates, with its gradient.
///
/// `H = 2 min(r, 1/2)^2` on filled squares (`r` the sup-distance to the
/// centre) and `1/2` on empty ones. `u = grad_perp H = (-d2 H, d1 H)` away
/// from the diagonals and square edges.
pub fn unit_stream(z: Point) -> (f64, Point) {
    let (c, filled) = unit_square(z);
    if !filled {
        return (0.5, [0.0, 0.0]);
    }
    let (a, b) = (z[0] - c[0], z[1] - c[1]);
    let (aa, ab) = (a.abs(), b.abs());
    if aa >= 0.5 || ab >= 0.5 {
        (0.5, [0.0, 0.0])
    } else if aa >= ab {
        (2.0 * a * a, [4.0 * a, 0.0])
    } else {
        (2.0 * b * b, [0.0, 4.0 * b])
    }
}

/// The staged Depauw field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepauwField {
    /// Deepest stage that exact flows may enter: exact queries are refused
    /// below time `2^{-K-1}`. Pointwise evaluation works for every `t > 0`.
    pub max_stage_depth: u32,
}

impl DepauwField {
    pub fn new(max_stage_depth: u32) -> Self {
        DepauwField { max_stage_depth }
    }

    pub fn sup_norm(&self) -> f64 {
        crate::SUP_NORM
    }

    /// Earliest time reachable by exact flows, `2^{-K-1}`.
    pub fn min_time(&self) -> Dyadic {
        Dyadic::pow2(-(self.max_stage_depth as i32) - 1)
    }

    pub fn eval_b(&self, t: f64, p: Point) -> Result<Point> {
        let k = stage_of(t)?;
        Ok(eval_stage(k, p))
    }

    /// `b(t, p)` for `t >= tau`, zero before.
    pub fn eval_b_truncated(&self, tau: f64, t: f64, p: Point) -> Result<Point> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::Invalid(alloc::format!("truncation time {tau} must be positive")));
        }
        if t < tau {
            return Ok([0.0, 0.0]);
        }
        self.eval_b(t, p)
    }
}

/// `u(2^k p)`.
#[inline]
pub fn eval_stage(stage: StageIndex, p: Point) -> Point {
    let s = math::ldexp(1.0, stage.0 as i32);
    eval_u([p[0] * s, p[1] * s])
}

/// `H_k(p) = 2^{-k} H(2^k p)`; continuous and piecewise quadratic.
pub fn eval_stream(stage: StageIndex, p: Point) -> f64 {
    let k = stage.0 as i32;
    let s = math::ldexp(1.0, k);
    math::ldexp(unit_stream([p[0] * s, p[1] * s]).0, -k)
}

/// A region on which the field is given by a single linear formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Piece {
    /// Empty squares, square edges and filled centres.
    Zero,
    /// A triangle of the filled square whose centre has parities `(cx, cy)`.
    Triangle { stage: u32, cx: u8, cy: u8, side: Side },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Right,
    Top,
    Left,
    Bottom,
}

impl Piece {
    /// Compact id used by the integrator to detect crossings.
    pub fn id(&self) -> u64 {
        match *self {
            Piece::Zero => 0,
            Piece::Triangle { stage, cx, cy, side } => {
                1 + (side as u64) + 4 * (cx as u64) + 8 * (cy as u64) + 16 * stage as u64
            }
        }
    }

    pub fn from_id(id: u64) -> Piece {
        if id == 0 {
            return Piece::Zero;
        }
        let v = id - 1;
        let side = match v % 4 {
            0 => Side::Right,
            1 => Side::Top,
            2 => Side::Left,
            _ => Side::Bottom,
        };
        Piece::Triangle { stage: (v / 16) as u32, cx: ((v / 4) % 2) as u8, cy: ((v / 8) % 2) as u8, side }
    }
}

/// Classifies `p` at stage `k`. Diagonal points go to the triangle that a
/// counterclockwise particle enters next, matching the exact flow's
/// perimeter parametrisation.
pub fn piece_of(stage: StageIndex, p: Point) -> Piece {
    let s = math::ldexp(1.0, stage.0 as i32);
    let z = [p[0] * s, p[1] * s];
    let (c, filled) = unit_square(z);
    if !filled {
        return Piece::Zero;
    }
    let (a, b) = (z[0] - c[0], z[1] - c[1]);
    let r = a.abs().max(b.abs());
    if r >= 0.5 || r == 0.0 {
        return Piece::Zero;
    }
    let side = if a == r && b < r {
        Side::Right
    } else if b == r && a > -r {
        Side::Top
    } else if a == -r && b > -r {
        Side::Left
    } else {
        Side::Bottom
    };
    Piece::Triangle {
        stage: stage.0,
        cx: math::wrap(c[0], 2.0) as u8,
        cy: math::wrap(c[1], 2.0) as u8,
        side,
    }
}

/// The linear formula of `piece`, extended to all of the plane.
pub fn eval_in_piece(piece: Piece, p: Point) -> Point {
    match piece {
        Piece::Zero => [0.0, 0.0],
        Piece::Triangle { stage, cx, cy, side } => {
            let s = math::ldexp(1.0, stage as i32);
            // nearest periodic image of the centre
            let a = math::wrap(p[0] * s - cx as f64 + 1.0, 2.0) - 1.0;
            let b = math::wrap(p[1] * s - cy as f64 + 1.0, 2.0) - 1.0;
            match side {
                Side::Right | Side::Left => [0.0, 4.0 * a],
                Side::Top | Side::Bottom => [-4.0 * b, 0.0],
            }
        }
    }
}
