//! Exact transport of piecewise-constant densities on dyadic grids.
//!
//! A full stage `k` permutes level-`L` cells (`L >= k + 1`) rigidly, so
//! densities that are constant on such cells are transported by index
//! permutation with no interpolation. Going backward in time from the unit
//! checkerboard at `t = 1`, the density at `2^{-k}` is the level-`k`
//! checkerboard for even `k` and its complement for odd `k`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::exact_flow::{quarter_turn_cells, stage_flow_exact, Direction};
use crate::field::{stage_of_dyadic, DepauwField, StageIndex};
use crate::geometry::{cell_of, cells_per_side, Cell, Point, TorusPoint};
use crate::math;
use crate::rng::{path_rng, unit_f64};

/// Cell values on the level-`level` grid, row-major (`iy * n + ix`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub level: u32,
    pub values: Vec<f64>,
    /// Upper bound fixed at construction.
    pub bound: f64,
}

impl GridDensity {
    pub fn new(level: u32, values: Vec<f64>, bound: f64) -> Result<Self> {
        let n = cells_per_side(level) as usize;
        if values.len() != n * n {
            return Err(Error::Shape(alloc::format!(
                "level {level} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= bound)) {
            return Err(Error::Invalid(alloc::format!("value {v} outside [0, {bound}]")));
        }
        Ok(GridDensity { level, values, bound })
    }

    pub fn constant(level: u32, value: f64) -> Self {
        let n = cells_per_side(level) as usize;
        GridDensity { level, values: alloc::vec![value; n * n], bound: value }
    }

    /// The level-`level` checkerboard `(ix + iy) mod 2`, or its complement.
    pub fn checkerboard(level: u32, complement: bool) -> Self {
        let n = cells_per_side(level) as usize;
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                let v = ((ix + iy) & 1) as u8 ^ complement as u8;
                values.push(v as f64);
            }
        }
        GridDensity { level, values, bound: 1.0 }
    }

    pub fn side(&self) -> usize {
        cells_per_side(self.level) as usize
    }

    pub fn get(&self, c: &Cell) -> f64 {
        debug_assert_eq!(c.level, self.level);
        self.values[c.index()]
    }

    /// Value at a point (half-open cells).
    pub fn value_at(&self, p: &TorusPoint) -> f64 {
        self.values[cell_of(p, self.level).index()]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Splits every cell into its 4 children `by` times.
    pub fn refine(&self, by: u32) -> Self {
        if by == 0 {
            return self.clone();
        }
        let level = self.level + by;
        let n = cells_per_side(level) as usize;
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            let row = (iy >> by) * self.side();
            for ix in 0..n {
                values.push(self.values[row + (ix >> by)]);
            }
        }
        GridDensity { level, values, bound: self.bound }
    }

    /// Exact averages over the level-`level` ancestors.
    pub fn coarsen(&self, level: u32) -> Result<Self> {
        if level > self.level {
            return Err(Error::Invalid(alloc::format!("cannot coarsen level {} to {level}", self.level)));
        }
        let by = self.level - level;
        let n = cells_per_side(level) as usize;
        let mut values = alloc::vec![0.0; n * n];
        let fine = self.side();
        for iy in 0..fine {
            for ix in 0..fine {
                values[(iy >> by) * n + (ix >> by)] += self.values[iy * fine + ix];
            }
        }
        let scale = math::ldexp(1.0, -2 * by as i32);
        for v in &mut values {
            *v *= scale;
        }
        Ok(GridDensity { level, values, bound: self.bound })
    }

    /// Cells with positive value.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, _)| i)
    }
}

/// Transport of `d` through the full stage `stage`.
///
/// `Forward` pushes the density from `2^{-k-1}` to `2^{-k}`; `Backward` pulls
/// it from `2^{-k}` back to `2^{-k-1}`.
pub fn pushforward_stage(d: &GridDensity, stage: StageIndex, direction: Direction) -> Result<GridDensity> {
    if d.level < stage.0 + 1 {
        return Err(Error::LevelTooCoarse { level: d.level, stage: stage.0, required: stage.0 + 1 });
    }
    // new[c] = old[pre-image of c]; the pre-image under a map is the image under its inverse
    let inverse = direction.reverse();
    let mut values = alloc::vec![0.0; d.values.len()];
    for (i, v) in values.iter_mut().enumerate() {
        let c = Cell::from_index(d.level, i);
        let src = quarter_turn_cells(c, stage, inverse)?;
        *v = d.values[src.index()];
    }
    Ok(GridDensity { level: d.level, values, bound: d.bound })
}

/// Densities at the dyadic times `2^{-j}`, `j = 0..=depth`, in decreasing time.
///
/// Entry `j` is stored at level `max(j, base level)`: the density at `2^{-j}`
/// is constant on level-`j` cells, and transport through stage `j` needs
/// level `j + 1`, which is produced by refining on the fly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTrajectory {
    pub entries: Vec<(Dyadic, GridDensity)>,
}

impl DensityTrajectory {
    /// Backward evolution of the final datum `rho1` (density at `t = 1`).
    pub fn evolve(rho1: GridDensity, depth: u32) -> Result<Self> {
        let mut entries = Vec::with_capacity(depth as usize + 1);
        let mut cur = rho1;
        entries.push((Dyadic::ONE, cur.clone()));
        for k in 0..depth {
            let stage = StageIndex(k);
            let fine = if cur.level < k + 1 { cur.refine(k + 1 - cur.level) } else { cur };
            cur = pushforward_stage(&fine, stage, Direction::Backward)?;
            entries.push((Dyadic::pow2(-(k as i32) - 1), cur.clone()));
        }
        Ok(DensityTrajectory { entries })
    }

    /// The trajectory of a constant density.
    pub fn constant(value: f64, depth: u32) -> Self {
        let entries = (0..=depth)
            .map(|j| (Dyadic::pow2(-(j as i32)), GridDensity::constant(0, value)))
            .collect();
        DensityTrajectory { entries }
    }

    pub fn depth(&self) -> u32 {
        (self.entries.len() - 1) as u32
    }

    pub fn at_dyadic(&self, j: u32) -> Option<&GridDensity> {
        self.entries.get(j as usize).map(|(_, d)| d)
    }

    /// `rho(t, x) = rho(2^{-k}, X(2^{-k}, t, x))` for `t` in stage `k`.
    pub fn value_at(&self, t: &Dyadic, x: &TorusPoint) -> Result<f64> {
        let k = stage_of_dyadic(t)?;
        let (_, hi) = k.interval_exact();
        let d = self.at_dyadic(k.0).ok_or(Error::DepthExceeded { needed: k.0, max_depth: self.depth() })?;
        let y = stage_flow_exact(x, k, &(&hi - t))?;
        Ok(d.value_at(&y))
    }

    /// `1 - rho` at every time.
    pub fn complement(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(t, d)| {
                let values = d.values.iter().map(|v| d.bound - v).collect();
                (t.clone(), GridDensity { level: d.level, values, bound: d.bound })
            })
            .collect();
        DensityTrajectory { entries }
    }
}

/// `rho^B`: backward evolution of the unit checkerboard.
pub fn evolve_rho_b(depth: u32) -> Result<DensityTrajectory> {
    DensityTrajectory::evolve(GridDensity::checkerboard(0, false), depth)
}

/// `rho^W = 1 - rho^B`.
pub fn evolve_rho_w(depth: u32) -> Result<DensityTrajectory> {
    Ok(evolve_rho_b(depth)?.complement())
}

/// The closed form of `rho^B(2^{-k})`: level-`k` checkerboard, complemented for odd `k`.
pub fn expected_rho_b(k: u32) -> GridDensity {
    GridDensity::checkerboard(k, k % 2 == 1)
}

/// First mismatch against [`expected_rho_b`], if any.
pub fn check_refining(traj: &DensityTrajectory) -> Result<(), PropertyViolation> {
    for (j, (t, d)) in traj.entries.iter().enumerate() {
        let want = expected_rho_b(j as u32);
        let got = if d.level > want.level { d.coarsen(want.level).ok() } else { Some(d.clone()) };
        let ok = got.as_ref().is_some_and(|g| g.level == want.level && g.values == want.values);
        if !ok {
            let cell = got.and_then(|g| {
                g.values.iter().zip(&want.values).position(|(a, b)| a != b).map(|i| Cell::from_index(want.level, i))
            });
            return Err(PropertyViolation { property: String::from("refining"), time: t.clone(), cell });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyViolation {
    pub property: String,
    pub time: Dyadic,
    pub cell: Option<Cell>,
}

/// Outcome of [`check_properties`]: `violations` is empty iff everything holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub depth: u32,
    pub times_checked: usize,
    pub violations: Vec<PropertyViolation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks, at every dyadic time: `rho^B + rho^W = 1` cellwise, the supports
/// cover the torus and are disjoint, and for `t < 1` each unit cell carries
/// black mass exactly `1/2`.
pub fn check_properties(traj_b: &DensityTrajectory, traj_w: &DensityTrajectory) -> PropertyReport {
    let mut violations = Vec::new();
    let mut push = |property: &str, time: &Dyadic, cell: Option<Cell>| {
        violations.push(PropertyViolation { property: String::from(property), time: time.clone(), cell });
    };
    let n = traj_b.entries.len().min(traj_w.entries.len());
    for j in 0..n {
        let (t, b) = &traj_b.entries[j];
        let (tw, w) = &traj_w.entries[j];
        if t != tw || b.level != w.level {
            push("shape", t, None);
            continue;
        }
        let level = b.level;
        let cell = |i| Some(Cell::from_index(level, i));
        if let Some(i) = b.values.iter().zip(&w.values).position(|(x, y)| x + y != 1.0) {
            push("sum", t, cell(i));
        }
        if let Some(i) = b.values.iter().zip(&w.values).position(|(x, y)| *x <= 0.0 && *y <= 0.0) {
            push("cover", t, cell(i));
        }
        if let Some(i) = b.values.iter().zip(&w.values).position(|(x, y)| *x > 0.0 && *y > 0.0) {
            push("disjoint", t, cell(i));
        }
        if j >= 1 {
            match b.coarsen(0) {
                Ok(avg) => {
                    if let Some(i) = avg.values.iter().position(|v| *v != 0.5) {
                        push("half", t, Some(Cell::from_index(0, i)));
                    }
                }
                Err(_) => push("half", t, None),
            }
        }
    }
    PropertyReport { depth: n.saturating_sub(1) as u32, times_checked: n, violations }
}

/// A smooth bump `exp(-1 / (1 - s^2))`, `s = (x - center) / half_width`, on a
/// line of period `period` (0 for the real line). The support must fit in one period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump1D {
    pub center: f64,
    pub half_width: f64,
    pub period: f64,
}

impl Bump1D {
    fn offset(&self, x: f64) -> f64 {
        if self.period > 0.0 {
            let p = self.period;
            math::wrap(x - self.center + 0.5 * p, p) - 0.5 * p
        } else {
            x - self.center
        }
    }

    /// Value and derivative.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let s = self.offset(x) / self.half_width;
        if s.abs() >= 1.0 {
            return (0.0, 0.0);
        }
        let q = 1.0 / (1.0 - s * s);
        let v = math::exp(-q);
        (v, -2.0 * s * q * q * v / self.half_width)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}

/// Test functions for the weak form of the continuity equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    /// `T(t) X1(x1) X2(x2)`.
    Separable { time: Bump1D, x1: Bump1D, x2: Bump1D },
}

impl TestFunction {
    /// `(phi, d_t phi, grad_x phi)`.
    pub fn eval(&self, t: f64, x: Point) -> (f64, f64, Point) {
        match self {
            TestFunction::Constant { value } => (*value, 0.0, [0.0, 0.0]),
            TestFunction::Separable { time, x1, x2 } => {
                let (a, da) = time.eval(t);
                let (b, db) = x1.eval(x[0]);
                let (c, dc) = x2.eval(x[1]);
                (a * b * c, da * b * c, [a * db * c, a * b * dc])
            }
        }
    }

    /// `(t_lo, t_hi, x1_lo, x1_hi, x2_lo, x2_hi)` containing the support; the
    /// spatial box may leave `[0, 2)` and is read periodically.
    pub fn support_box(&self) -> [f64; 6] {
        match self {
            TestFunction::Constant { .. } => [0.0, 1.0, 0.0, 2.0, 0.0, 2.0],
            TestFunction::Separable { time, x1, x2 } => {
                let (t0, t1) = time.support();
                let (a0, a1) = x1.support();
                let (b0, b1) = x2.support();
                [t0.max(0.0), t1.min(1.0), a0, a1, b0, b1]
            }
        }
    }
}

/// Ten test functions: 3 spatial scales x 3 temporal windows, plus one
/// window straddling `t = 1/2`. Spatial centres are drawn from `seed`.
pub fn test_bank(seed: u64) -> Vec<TestFunction> {
    let windows = [(0.75, 0.2), (0.375, 0.1), (0.1875, 0.05)];
    let scales = [0.5, 0.25, 0.125];
    let mut out = Vec::with_capacity(10);
    let mut idx = 0u64;
    let mut centre = || {
        let mut rng = path_rng(seed, idx);
        idx += 1;
        [2.0 * unit_f64(&mut rng), 2.0 * unit_f64(&mut rng)]
    };
    for (tc, tw) in windows {
        for s in scales {
            let c = centre();
            out.push(TestFunction::Separable {
                time: Bump1D { center: tc, half_width: tw, period: 0.0 },
                x1: Bump1D { center: c[0], half_width: s, period: 2.0 },
                x2: Bump1D { center: c[1], half_width: s, period: 2.0 },
            });
        }
    }
    let c = centre();
    out.push(TestFunction::Separable {
        time: Bump1D { center: 0.5, half_width: 0.25, period: 0.0 },
        x1: Bump1D { center: c[0], half_width: 0.25, period: 2.0 },
        x2: Bump1D { center: c[1], half_width: 0.25, period: 2.0 },
    });
    out
}

/// Mergeable running sums for a Monte Carlo mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return f64::INFINITY;
        }
        let var = ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        math::sqrt(var / n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl ResidualEstimate {
    /// `|estimate| <= z * stderr`; exact zeros always pass.
    pub fn within(&self, z: f64) -> bool {
        self.estimate == 0.0 || self.estimate.abs() <= z * self.stderr
    }
}

/// Sample `index` of the residual integrand for `phi` (already scaled by the box volume).
pub fn residual_sample(
    traj: &DensityTrajectory,
    field: &DepauwField,
    phi: &TestFunction,
    seed: u64,
    index: u64,
) -> Result<f64> {
    let [t0, t1, a0, a1, b0, b1] = phi.support_box();
    let volume = (t1 - t0) * (a1 - a0) * (b1 - b0);
    let mut rng = path_rng(seed, index);
    let t = t0 + (t1 - t0) * unit_f64(&mut rng);
    let x = [a0 + (a1 - a0) * unit_f64(&mut rng), b0 + (b1 - b0) * unit_f64(&mut rng)];
    if t <= 0.0 {
        return Ok(0.0);
    }
    let (_, dt, grad) = phi.eval(t, x);
    if dt == 0.0 && grad == [0.0, 0.0] {
        return Ok(0.0);
    }
    let b = field.eval_b(t, x)?;
    let rho = traj.value_at(&Dyadic::from_f64(t)?, &TorusPoint::from_f64(x)?)?;
    Ok(volume * rho * (dt + b[0] * grad[0] + b[1] * grad[1]))
}

/// Accumulates samples `range` of the residual integrand.
pub fn residual_moments(
    traj: &DensityTrajectory,
    field: &DepauwField,
    phi: &TestFunction,
    seed: u64,
    range: core::ops::Range<u64>,
) -> Result<Moments> {
    let mut m = Moments::default();
    for i in range {
        m.push(residual_sample(traj, field, phi, seed, i)?);
    }
    Ok(m)
}

/// Monte Carlo estimate of `int int rho (d_t phi + b . grad phi) dx dt`.
pub fn weak_divergence_residual(
    traj: &DensityTrajectory,
    phi: &TestFunction,
    samples: u64,
    seed: u64,
) -> Result<ResidualEstimate> {
    let field = DepauwField::new(traj.depth());
    let m = residual_moments(traj, &field, phi, seed, 0..samples)?;
    Ok(ResidualEstimate { estimate: m.mean(), stderr: m.stderr(), samples })
}
