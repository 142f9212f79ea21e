//! The period-2 torus, dyadic cells and lattices.
//!
//! The field is periodic under the even lattice `{y in Z^2 : y1 + y2 even}`,
//! which contains `(2, 0)` and `(0, 2)` but not `(1, 0)`. The torus is
//! therefore `[0, 2)^2`, and a level-`k` cell grid has `2^{k+1}` cells per side.

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::math;
use crate::PERIOD;

/// Floating-point position. Paths store these unwrapped; reduce with [`wrap_point`].
pub type Point = [f64; 2];

/// Reduces a point into `[0, 2)^2`.
#[inline]
pub fn wrap_point(p: Point) -> Point {
    [math::wrap(p[0], PERIOD), math::wrap(p[1], PERIOD)]
}

/// An exact point of the torus with both coordinates in `[0, 2)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(Dyadic, Dyadic)", into = "(Dyadic, Dyadic)")]
pub struct TorusPoint {
    x1: Dyadic,
    x2: Dyadic,
}

impl TorusPoint {
    pub fn new(x1: Dyadic, x2: Dyadic) -> Self {
        TorusPoint { x1: x1.rem_euclid_int(2), x2: x2.rem_euclid_int(2) }
    }

    pub fn from_f64(p: Point) -> Result<Self> {
        Ok(TorusPoint::new(Dyadic::from_f64(p[0])?, Dyadic::from_f64(p[1])?))
    }

    pub fn x1(&self) -> &Dyadic {
        &self.x1
    }

    pub fn x2(&self) -> &Dyadic {
        &self.x2
    }

    pub fn to_f64(&self) -> Point {
        [self.x1.to_f64(), self.x2.to_f64()]
    }

    /// Translation, reduced back onto the torus.
    pub fn translate(&self, d1: &Dyadic, d2: &Dyadic) -> Self {
        TorusPoint::new(&self.x1 + d1, &self.x2 + d2)
    }
}

impl From<TorusPoint> for (Dyadic, Dyadic) {
    fn from(p: TorusPoint) -> Self {
        (p.x1, p.x2)
    }
}

impl TryFrom<(Dyadic, Dyadic)> for TorusPoint {
    type Error = Error;
    fn try_from((a, b): (Dyadic, Dyadic)) -> Result<Self> {
        Ok(TorusPoint::new(a, b))
    }
}

/// Square `[ix, ix+1) x [iy, iy+1)` scaled by `2^{-level}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub level: u32,
    pub ix: u64,
    pub iy: u64,
}

/// Number of level-`level` cells along one side of the torus.
#[inline]
pub fn cells_per_side(level: u32) -> u64 {
    1u64 << (level + 1)
}

impl Cell {
    pub fn new(level: u32, ix: u64, iy: u64) -> Result<Self> {
        let n = cells_per_side(level);
        if ix >= n || iy >= n {
            return Err(Error::Invalid(alloc::format!(
                "cell index ({ix}, {iy}) out of range for level {level}"
            )));
        }
        Ok(Cell { level, ix, iy })
    }

    /// Constructs a cell from possibly out-of-range indices by periodic reduction.
    pub fn wrapped(level: u32, ix: i64, iy: i64) -> Self {
        let n = cells_per_side(level) as i64;
        Cell { level, ix: ix.rem_euclid(n) as u64, iy: iy.rem_euclid(n) as u64 }
    }

    /// Row-major index within the level grid.
    #[inline]
    pub fn index(&self) -> usize {
        (self.iy * cells_per_side(self.level) + self.ix) as usize
    }

    pub fn from_index(level: u32, idx: usize) -> Self {
        let n = cells_per_side(level) as usize;
        Cell { level, ix: (idx % n) as u64, iy: (idx / n) as u64 }
    }

    pub fn side(&self) -> f64 {
        math::ldexp(1.0, -(self.level as i32))
    }

    /// Exact centre of the cell.
    pub fn center(&self) -> TorusPoint {
        let e = self.level + 1;
        TorusPoint::new(
            Dyadic::new(2 * self.ix as i128 + 1, e),
            Dyadic::new(2 * self.iy as i128 + 1, e),
        )
    }

    pub fn lower_corner(&self) -> Point {
        let s = self.side();
        [self.ix as f64 * s, self.iy as f64 * s]
    }

    pub fn parent(&self) -> Option<Cell> {
        (self.level > 0).then(|| Cell { level: self.level - 1, ix: self.ix / 2, iy: self.iy / 2 })
    }

    pub fn children(&self) -> [Cell; 4] {
        let l = self.level + 1;
        let (x, y) = (2 * self.ix, 2 * self.iy);
        [
            Cell { level: l, ix: x, iy: y },
            Cell { level: l, ix: x + 1, iy: y },
            Cell { level: l, ix: x, iy: y + 1 },
            Cell { level: l, ix: x + 1, iy: y + 1 },
        ]
    }

    /// The ancestor (or self) at a coarser level.
    pub fn ancestor(&self, level: u32) -> Cell {
        debug_assert!(level <= self.level);
        let s = self.level - level;
        Cell { level, ix: self.ix >> s, iy: self.iy >> s }
    }

    pub fn contains(&self, p: &TorusPoint) -> bool {
        cell_of(p, self.level) == *self
    }
}

/// The level-`level` cell containing `p`, with half-open sides `[., .)`.
pub fn cell_of(p: &TorusPoint, level: u32) -> Cell {
    let k = level as i32;
    let ix = p.x1.mul_pow2(k).floor_i64().expect("cell index fits in i64");
    let iy = p.x2.mul_pow2(k).floor_i64().expect("cell index fits in i64");
    Cell::wrapped(level, ix, iy)
}

/// Floating-point variant of [`cell_of`]; `p` may be unwrapped.
pub fn cell_of_f64(p: Point, level: u32) -> Cell {
    let s = math::ldexp(1.0, level as i32);
    let q = wrap_point(p);
    let ix = math::floor(q[0] * s) as i64;
    let iy = math::floor(q[1] * s) as i64;
    Cell::wrapped(level, ix, iy)
}

/// The level-`k` checkerboard indicator `(ix + iy) mod 2`.
#[inline]
pub fn checkerboard_value(c: &Cell) -> u8 {
    ((c.ix + c.iy) & 1) as u8
}

/// Euclidean geodesic distance on the period-2 torus.
pub fn torus_distance(p: Point, q: Point) -> f64 {
    let d1 = periodic_gap(p[0] - q[0]);
    let d2 = periodic_gap(p[1] - q[1]);
    math::sqrt(d1 * d1 + d2 * d2)
}

/// Same as [`torus_distance`] for exact points (the result is rounded).
pub fn torus_distance_exact(p: &TorusPoint, q: &TorusPoint) -> f64 {
    let gap = |a: &Dyadic, b: &Dyadic| {
        let d = (a - b).rem_euclid_int(2);
        let alt = &Dyadic::from_int(2) - &d;
        d.min(alt).to_f64()
    };
    let d1 = gap(&p.x1, &q.x1);
    let d2 = gap(&p.x2, &q.x2);
    math::sqrt(d1 * d1 + d2 * d2)
}

#[inline]
fn periodic_gap(d: f64) -> f64 {
    let r = math::wrap(d, PERIOD);
    if r > 1.0 {
        PERIOD - r
    } else {
        r
    }
}

/// Which of the two rescaled lattices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeKind {
    /// `2^{-k} Z^2`
    L1,
    /// `(2^{-k-1}, 2^{-k-1}) + 2^{-k} Z^2`
    L2,
}

/// A rescaled lattice at level `k`, reduced onto the torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub kind: LatticeKind,
    pub level: u32,
}

impl Lattice {
    pub fn new(kind: LatticeKind, level: u32) -> Self {
        Lattice { kind, level }
    }

    fn offset(&self) -> Dyadic {
        match self.kind {
            LatticeKind::L1 => Dyadic::ZERO,
            LatticeKind::L2 => Dyadic::pow2(-(self.level as i32) - 1),
        }
    }

    /// The lattice point with integer coordinates `(i, j)`.
    pub fn point(&self, i: i64, j: i64) -> TorusPoint {
        let step = Dyadic::pow2(-(self.level as i32));
        let o = self.offset();
        TorusPoint::new(&(&Dyadic::from_int(i) * &step) + &o, &(&Dyadic::from_int(j) * &step) + &o)
    }

    pub fn contains(&self, p: &TorusPoint) -> bool {
        let k = self.level as i32;
        let o = self.offset();
        (p.x1() - &o).mul_pow2(k).is_integer() && (p.x2() - &o).mul_pow2(k).is_integer()
    }

    /// Number of lattice points on the torus.
    pub fn len(&self) -> u64 {
        let n = cells_per_side(self.level);
        n * n
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A square of the shifted grid at stage scale `2^{-k}`: centred at
/// `2^{-k} (cx, cy)`, half-width `2^{-k-1}`, vertices on the `L2` lattice.
/// It carries the rotor ("filled") iff `cx + cy` is even.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSquare {
    pub stage: u32,
    pub cx: i64,
    pub cy: i64,
}

impl StageSquare {
    pub fn is_filled(&self) -> bool {
        (self.cx + self.cy).rem_euclid(2) == 0
    }
}

/// The stage-`k` square containing `p` (half-open, so each point has exactly one).
pub fn square_of(p: &TorusPoint, stage: u32) -> StageSquare {
    let half = Dyadic::new(1, 1);
    let k = stage as i32;
    let cx = (&p.x1().mul_pow2(k) + &half).floor_i64().expect("fits");
    let cy = (&p.x2().mul_pow2(k) + &half).floor_i64().expect("fits");
    let n = 1i64 << (stage + 1);
    StageSquare { stage, cx: cx.rem_euclid(n), cy: cy.rem_euclid(n) }
}
