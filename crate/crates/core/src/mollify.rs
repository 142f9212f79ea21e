//! Smooth divergence-free approximations of the stage fields.
//!
//! The stage-`k` stream function `H_k(x) = 2^{-k} H(2^k x)` is convolved in
//! space with a radial `C^inf` bump of radius `eps`, sampled on a grid
//! together with its first derivatives and the mixed derivative, and
//! interpolated by bicubic Hermite patches. The velocity is the perpendicular
//! gradient of that single `C^1` interpolant, so it is divergence-free
//! exactly (up to rounding), whatever the quadrature or interpolation error.
//!
//! Everything is computed in unit coordinates `z = 2^k x`, where the radius
//! becomes `eps' = 2^k eps`. `H` is even in each coordinate, has period 2 and
//! is symmetric under `z1 <-> z2`, so tables only cover `[0, 1]^2`.
//!
//! Node values come from one of two routes:
//! - nodes at distance `>= eps'` from every kink line of `H` see a single
//!   quadratic (or constant) piece, for which the convolution is closed form;
//! - other nodes use polar quadrature around the node: angular Gauss-Legendre
//!   split at vertex directions and tangency angles, and exact radial
//!   integration through tabulated radial moments of the bump.
//!
//! Kink lines (unit coordinates): square edges `z_i = m + 1/2` and the
//! diagonals `z1 - z2 = 2m`, `z1 + z2 = 2m` of filled squares.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{stage_of, StageIndex};
use crate::geometry::Point;
use crate::math;
use crate::quadrature::GaussLegendre;

const RADIAL_INTERVALS: usize = 4096;
const ANGULAR_ORDER: usize = 24;
const MAX_ANGULAR_SPAN: f64 = PI / 4.0;
const GRADING_LEVELS: usize = 6;

/// Unnormalised profile `exp(-1 / (1 - rho^2))` and its first two derivatives.
fn bump(rho: f64) -> (f64, f64, f64) {
    if rho.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 / (1.0 - rho * rho);
    let v = math::exp(-q);
    let d1 = -2.0 * rho * q * q * v;
    let d2 = (-2.0 * q * q - 8.0 * rho * rho * q * q * q + 4.0 * rho * rho * q * q * q * q) * v;
    (v, d1, d2)
}

/// Cumulative radial integrals of the normalised unit profile `psi`:
/// `C_j(rho) = int_0^rho s^{1+j} psi(s) ds` (`j = 0, 1, 2`) and
/// `D_j(rho) = int_0^rho s^{1+j} psi'(s) ds` (`j = 0, 1`), tabulated and
/// evaluated by cubic Hermite interpolation with exact slopes.
#[derive(Clone, Debug)]
struct RadialMoments {
    norm: f64,
    cum: [Vec<f64>; 5],
}

impl RadialMoments {
    fn new() -> Self {
        let gl = GaussLegendre::new(8);
        let h = 1.0 / RADIAL_INTERVALS as f64;
        let mut raw: [Vec<f64>; 5] = Default::default();
        for c in raw.iter_mut() {
            c.reserve(RADIAL_INTERVALS + 1);
            c.push(0.0);
        }
        for i in 0..RADIAL_INTERVALS {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            let mut acc = [0.0; 5];
            for (x, w) in gl.mapped(a, b) {
                let f = integrands(x, 1.0);
                for j in 0..5 {
                    acc[j] += w * f[j];
                }
            }
            for j in 0..5 {
                let last = raw[j][i];
                raw[j].push(last + acc[j]);
            }
        }
        let norm = 2.0 * PI * raw[0][RADIAL_INTERVALS];
        RadialMoments { norm, cum: raw.map(|v| v.into_iter().map(|x| x / norm).collect()) }
    }

    /// All five cumulative integrals at `rho` (clamped to `[0, 1]`).
    fn eval(&self, rho: f64) -> [f64; 5] {
        if rho <= 0.0 {
            return [0.0; 5];
        }
        if rho >= 1.0 {
            return core::array::from_fn(|j| self.cum[j][RADIAL_INTERVALS]);
        }
        let h = 1.0 / RADIAL_INTERVALS as f64;
        let u = rho * RADIAL_INTERVALS as f64;
        let i = (u as usize).min(RADIAL_INTERVALS - 1);
        let t = u - i as f64;
        let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
        let f0 = integrands(x0, self.norm);
        let f1 = integrands(x1, self.norm);
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        core::array::from_fn(|j| {
            h00 * self.cum[j][i] + h10 * h * f0[j] + h01 * self.cum[j][i + 1] + h11 * h * f1[j]
        })
    }
}

/// `[s psi, s^2 psi, s^3 psi, s psi', s^2 psi']` with `psi = bump / norm`.
fn integrands(s: f64, norm: f64) -> [f64; 5] {
    let (v, d, _) = bump(s);
    let (v, d) = (v / norm, d / norm);
    [s * v, s * s * v, s * s * s * v, s * d, s * s * d]
}

/// The radial bump `phi_eps(y) = psi(|y| / eps) / eps^2`, `int phi = 1`.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub eps: f64,
    moments: RadialMoments,
}

impl Mollifier {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidRadius { eps });
        }
        Ok(Mollifier { eps, moments: RadialMoments::new() })
    }

    /// `phi_eps` at distance `r` from the centre.
    pub fn profile(&self, r: f64) -> f64 {
        bump(r / self.eps).0 / (self.moments.norm * self.eps * self.eps)
    }

    /// `2 pi int_0^eps r phi(r) dr` from the radial table (1 up to rounding).
    pub fn mass(&self) -> f64 {
        2.0 * PI * self.moments.eval(1.0)[0]
    }

    /// `pi int r^3 phi(r) dr`: the shift `(H * phi) - H = 2 s^2` on quadratic pieces, radius `eps`.
    pub fn quadratic_shift(&self, eps: f64) -> f64 {
        2.0 * PI * eps * eps * self.moments.eval(1.0)[2]
    }
}

/// A kink line `nu . z = c` with unit normal `nu`.
#[derive(Clone, Copy, Debug)]
struct Line {
    nu: [f64; 2],
    c: f64,
}

impl Line {
    fn signed_gap(&self, p: Point) -> f64 {
        self.c - (self.nu[0] * p[0] + self.nu[1] * p[1])
    }
}

/// Kink lines at distance `< eps` from `p`.
fn nearby_lines(p: Point, eps: f64, out: &mut Vec<Line>) {
    out.clear();
    for (axis, nu) in [(0usize, [1.0, 0.0]), (1, [0.0, 1.0])] {
        let x = p[axis];
        let lo = math::floor(x - eps - 0.5) as i64;
        let hi = math::floor(x + eps - 0.5) as i64 + 1;
        for m in lo..=hi {
            let c = m as f64 + 0.5;
            if (x - c).abs() < eps {
                out.push(Line { nu, c });
            }
        }
    }
    for (s, nu) in [(p[0] - p[1], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]), (p[0] + p[1], [FRAC_1_SQRT_2, FRAC_1_SQRT_2])] {
        let reach = eps * core::f64::consts::SQRT_2;
        let lo = math::floor((s - reach) / 2.0) as i64;
        let hi = math::floor((s + reach) / 2.0) as i64 + 1;
        for m in lo..=hi {
            let c2 = 2.0 * m as f64;
            if (s - c2).abs() * FRAC_1_SQRT_2 < eps {
                out.push(Line { nu, c: c2 * FRAC_1_SQRT_2 });
            }
        }
    }
}

/// Quadratic piece of `H` at `z` as `(a, axis)` where `H = 2 a^2` with
/// `a = z_axis - centre_axis`, or `None` on the plateau `H = 1/2`.
#[inline]
fn piece_at(z: Point) -> Option<([f64; 2], usize)> {
    let c1 = math::floor(z[0] + 0.5);
    let c2 = math::floor(z[1] + 0.5);
    if math::wrap(c1 + c2, 2.0) != 0.0 {
        return None;
    }
    let (a, b) = (z[0] - c1, z[1] - c2);
    if a.abs().max(b.abs()) >= 0.5 {
        return None;
    }
    let axis = if a.abs() >= b.abs() { 0 } else { 1 };
    Some(([c1, c2], axis))
}

/// Computes `(P, d1 P, d2 P, d12 P)` for `P = H * phi_{eps}` in unit coordinates.
#[derive(Clone, Debug)]
pub struct NodeIntegrator {
    mollifier: Mollifier,
    eps: f64,
    shift: f64,
    rule: GaussLegendre,
}

impl NodeIntegrator {
    /// `eps` is the radius in unit coordinates.
    pub fn new(eps: f64) -> Result<Self> {
        let mollifier = Mollifier::new(eps)?;
        let shift = mollifier.quadratic_shift(eps);
        Ok(NodeIntegrator { mollifier, eps, shift, rule: GaussLegendre::new(ANGULAR_ORDER) })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn node(&self, p: Point) -> [f64; 4] {
        let mut lines = Vec::new();
        nearby_lines(p, self.eps, &mut lines);
        if lines.is_empty() {
            self.closed_form(p)
        } else {
            self.polar(p, &lines)
        }
    }

    /// Single-piece disk: quadratic pieces shift by a constant, gradients are exact.
    fn closed_form(&self, p: Point) -> [f64; 4] {
        match piece_at(p) {
            None => [0.5, 0.0, 0.0, 0.0],
            Some((c, axis)) => {
                let a = p[axis] - c[axis];
                let mut out = [2.0 * a * a + self.shift, 0.0, 0.0, 0.0];
                out[1 + axis] = 4.0 * a;
                out
            }
        }
    }

    fn polar(&self, p: Point, lines: &[Line]) -> [f64; 4] {
        let eps = self.eps;
        let mut cuts: Vec<f64> = Vec::with_capacity(4 * lines.len() + lines.len() * lines.len());
        for l in lines {
            let g = l.signed_gap(p);
            let dir = math::atan2(l.nu[1], l.nu[0]);
            if g == 0.0 {
                cuts.push(dir + 0.5 * PI);
                cuts.push(dir - 0.5 * PI);
            } else {
                let foot = if g > 0.0 { dir } else { dir + PI };
                let spread = math::acos((g.abs() / eps).min(1.0));
                cuts.push(foot + spread);
                cuts.push(foot - spread);
            }
        }
        for (i, l) in lines.iter().enumerate() {
            for m in &lines[i + 1..] {
                let det = l.nu[0] * m.nu[1] - l.nu[1] * m.nu[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let v = [(l.c * m.nu[1] - m.c * l.nu[1]) / det, (l.nu[0] * m.c - m.nu[0] * l.c) / det];
                let d = [v[0] - p[0], v[1] - p[1]];
                let dist = math::sqrt(d[0] * d[0] + d[1] * d[1]);
                if dist < eps && dist > 1e-14 {
                    cuts.push(math::atan2(d[1], d[0]));
                }
            }
        }
        for c in cuts.iter_mut() {
            *c = math::wrap(*c, 2.0 * PI);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
        if cuts.is_empty() {
            cuts.push(0.0);
        }
        let first = cuts[0];
        cuts.push(first + 2.0 * PI);

        let mut acc = [0.0; 4];
        let mut crossings: Vec<f64> = Vec::with_capacity(8);
        let mut nodes: Vec<f64> = Vec::with_capacity(2 * GRADING_LEVELS + 8);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let pieces = math::floor((b - a) / MAX_ANGULAR_SPAN) as usize + 1;
            let span = (b - a) / pieces as f64;
            // geometric grading towards both cuts, where the bump's essential
            // singularity at the disk edge meets the crossing distance
            nodes.clear();
            nodes.push(a);
            for j in (1..=GRADING_LEVELS).rev() {
                nodes.push(a + math::ldexp(span, -(j as i32)));
            }
            for q in 1..pieces {
                nodes.push(a + q as f64 * span);
            }
            for j in 1..=GRADING_LEVELS {
                nodes.push(b - math::ldexp(span, -(j as i32)));
            }
            nodes.push(b);
            for seg in nodes.windows(2) {
                let (lo, hi) = (seg[0], seg[1]);
                for (theta, wt) in self.rule.mapped(lo, hi) {
                    let ray = self.ray(p, theta, lines, &mut crossings);
                    let s = math::sin(theta);
                    acc[0] += wt * ray[0];
                    acc[1] += wt * ray[1];
                    acc[2] += wt * ray[2];
                    acc[3] -= wt * s * ray[3];
                }
            }
        }
        acc
    }

    /// Radial integrals along direction `theta`: value, gradient and the
    /// `d1 H` moment against `phi'` (to be weighted by `-sin theta`).
    fn ray(&self, p: Point, theta: f64, lines: &[Line], crossings: &mut Vec<f64>) -> [f64; 4] {
        let eps = self.eps;
        let e = [math::cos(theta), math::sin(theta)];
        crossings.clear();
        crossings.push(0.0);
        for l in lines {
            let denom = l.nu[0] * e[0] + l.nu[1] * e[1];
            if denom.abs() < 1e-300 {
                continue;
            }
            let r = l.signed_gap(p) / denom;
            if r > 0.0 && r < eps {
                crossings.push(r);
            }
        }
        crossings.push(eps);
        crossings.sort_by(f64::total_cmp);
        let m = &self.mollifier.moments;
        let mut out = [0.0; 4];
        let mut prev = m.eval(0.0);
        for w in crossings.windows(2) {
            let (ra, rb) = (w[0], w[1]);
            let next = m.eval(rb / eps);
            if rb > ra {
                let mid = 0.5 * (ra + rb);
                let d: [f64; 5] = core::array::from_fn(|j| next[j] - prev[j]);
                match piece_at([p[0] + mid * e[0], p[1] + mid * e[1]]) {
                    None => out[0] += 0.5 * d[0],
                    Some((c, axis)) => {
                        let a0 = p[axis] - c[axis];
                        let ea = e[axis];
                        // H = 2 (a0 + r ea)^2, d_axis H = 4 (a0 + r ea)
                        out[0] += 2.0 * a0 * a0 * d[0] + 4.0 * a0 * ea * eps * d[1] + 2.0 * ea * ea * eps * eps * d[2];
                        out[1 + axis] += 4.0 * a0 * d[0] + 4.0 * ea * eps * d[1];
                        if axis == 0 {
                            out[3] += 4.0 * a0 * d[3] / eps + 4.0 * ea * d[4];
                        }
                    }
                }
            }
            prev = next;
        }
        out
    }
}

/// Whether stage `k` may be mollified at radius `eps`: `2^{-k} >= 4 eps`.
pub fn stage_admissible(stage: u32, eps: f64) -> bool {
    math::ldexp(1.0, -(stage as i32)) >= 4.0 * eps
}

/// Deepest admissible stage, if any.
pub fn max_admissible_stage(eps: f64) -> Option<u32> {
    if !stage_admissible(0, eps) {
        return None;
    }
    let mut k = 0;
    while stage_admissible(k + 1, eps) && k < 60 {
        k += 1;
    }
    Some(k)
}

fn check_inputs(eps: f64, stage: u32, h: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidRadius { eps });
    }
    if !(h > 0.0 && h <= eps / 8.0) {
        return Err(Error::GridTooCoarse { h, eps });
    }
    if !stage_admissible(stage, eps) {
        let max_stage = max_admissible_stage(eps).map_or(-1, |k| k as i64);
        return Err(Error::StageNotAdmissible { stage, eps, max_stage });
    }
    Ok(())
}

/// Sampled `(P, d1 P, d2 P, d12 P)` of one mollified stage on the unit-coordinate
/// grid `{0, 1/n, .., 1}^2`, row-major (`j * (n + 1) + i` is the node `(i/n, j/n)`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamTable {
    pub eps: f64,
    pub stage: u32,
    /// Physical node spacing.
    pub h: f64,
    pub n: usize,
    data: Vec<[f64; 4]>,
}

/// Computes a [`StreamTable`] row by row; rows are independent, so callers may
/// fan them out and hand the results back to [`TableBuilder::assemble`] in order.
#[derive(Clone, Debug)]
pub struct TableBuilder {
    pub eps: f64,
    pub stage: u32,
    pub h: f64,
    pub n: usize,
    integrator: NodeIntegrator,
}

impl TableBuilder {
    pub fn new(eps: f64, stage: StageIndex, h: f64) -> Result<Self> {
        check_inputs(eps, stage.0, h)?;
        let scale = math::ldexp(1.0, stage.0 as i32);
        let n = libm::ceil(1.0 / (h * scale) - 1e-9) as usize;
        let integrator = NodeIntegrator::new(eps * scale)?;
        Ok(TableBuilder { eps, stage: stage.0, h: 1.0 / (n as f64 * scale), n, integrator })
    }

    /// Number of rows, `n + 1`.
    pub fn rows(&self) -> usize {
        self.n + 1
    }

    /// Nodes `(i, j)` for `i <= j`; the rest follows from the `z1 <-> z2` symmetry.
    pub fn row(&self, j: usize) -> Vec<[f64; 4]> {
        let n = self.n;
        let y = j as f64 / n as f64;
        (0..=j)
            .map(|i| {
                let mut v = self.integrator.node([i as f64 / n as f64, y]);
                // even reflections about z = 0 and z = 1
                if i == 0 || i == n {
                    v[1] = 0.0;
                    v[3] = 0.0;
                }
                if j == 0 || j == n {
                    v[2] = 0.0;
                    v[3] = 0.0;
                }
                v
            })
            .collect()
    }

    pub fn assemble(&self, rows: Vec<Vec<[f64; 4]>>) -> Result<StreamTable> {
        let m = self.n + 1;
        if rows.len() != m || rows.iter().enumerate().any(|(j, r)| r.len() != j + 1) {
            return Err(Error::Shape(alloc::format!("expected {m} triangular rows")));
        }
        let mut data = alloc::vec![[0.0; 4]; m * m];
        for (j, row) in rows.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                data[j * m + i] = *v;
                data[i * m + j] = [v[0], v[2], v[1], v[3]];
            }
        }
        Ok(StreamTable { eps: self.eps, stage: self.stage, h: self.h, n: self.n, data })
    }

    pub fn build(&self) -> StreamTable {
        let rows = (0..self.rows()).map(|j| self.row(j)).collect();
        self.assemble(rows).expect("rows built in order")
    }
}

/// One mollified stage with radius `eps` and node spacing at most `h`.
pub fn build_mollified(eps: f64, stage: StageIndex, h: f64) -> Result<StreamTable> {
    Ok(TableBuilder::new(eps, stage, h)?.build())
}

impl StreamTable {
    pub fn from_raw(eps: f64, stage: u32, h: f64, n: usize, values: &[f64]) -> Result<Self> {
        let m = n + 1;
        if values.len() != 4 * m * m {
            return Err(Error::Shape(alloc::format!("expected {} values, got {}", 4 * m * m, values.len())));
        }
        let data = values.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
        Ok(StreamTable { eps, stage, h, n, data })
    }

    /// Interleaved `(P, d1 P, d2 P, d12 P)` per node, row-major.
    pub fn raw_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().flat_map(|v| v.iter().copied())
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 4] {
        self.data[j * (self.n + 1) + i]
    }

    /// `P` and its gradient at `z` (unit coordinates, any real point).
    pub fn eval_unit(&self, z: Point) -> (f64, Point) {
        let (u, s1) = fold(z[0]);
        let (v, s2) = fold(z[1]);
        let n = self.n;
        let nf = n as f64;
        let (i, tu) = split(u * nf, n);
        let (j, tv) = split(v * nf, n);
        let m = n + 1;
        let c = [
            self.data[j * m + i],
            self.data[j * m + i + 1],
            self.data[(j + 1) * m + i],
            self.data[(j + 1) * m + i + 1],
        ];
        let hh = 1.0 / nf;
        let (vu, su, dvu, dsu) = hermite(tu);
        let (vv, sv, dvv, dsv) = hermite(tv);
        let mut p = 0.0;
        let mut gu = 0.0;
        let mut gv = 0.0;
        for b in 0..2 {
            for a in 0..2 {
                let f = c[2 * b + a];
                p += f[0] * vu[a] * vv[b] + hh * (f[1] * su[a] * vv[b] + f[2] * vu[a] * sv[b]) + hh * hh * f[3] * su[a] * sv[b];
                gu += f[0] * dvu[a] * vv[b] + hh * (f[1] * dsu[a] * vv[b] + f[2] * dvu[a] * sv[b]) + hh * hh * f[3] * dsu[a] * sv[b];
                gv += f[0] * vu[a] * dvv[b] + hh * (f[1] * su[a] * dvv[b] + f[2] * vu[a] * dsv[b]) + hh * hh * f[3] * su[a] * dsv[b];
            }
        }
        (p, [s1 * gu * nf, s2 * gv * nf])
    }

    /// Velocity `grad_perp P` in unit coordinates.
    #[inline]
    pub fn velocity_unit(&self, z: Point) -> Point {
        let (_, g) = self.eval_unit(z);
        [-g[1], g[0]]
    }

    /// Largest node speed `|grad P|`.
    pub fn max_node_speed(&self) -> f64 {
        self.data.iter().map(|v| math::sqrt(v[1] * v[1] + v[2] * v[2])).fold(0.0, f64::max)
    }
}

/// Reduces a coordinate to `[0, 1]` by period 2 and evenness; returns the
/// sign picked up by the derivative.
#[inline]
fn fold(x: f64) -> (f64, f64) {
    let w = math::wrap(x, 2.0);
    if w > 1.0 {
        (2.0 - w, -1.0)
    } else {
        (w, 1.0)
    }
}

#[inline]
fn split(u: f64, n: usize) -> (usize, f64) {
    let i = (u as usize).min(n - 1);
    (i, u - i as f64)
}

/// Cubic Hermite basis at `t`: values of the value/slope bases at both ends and their derivatives.
#[inline]
fn hermite(t: f64) -> ([f64; 2], [f64; 2], [f64; 2], [f64; 2]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let v = [2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2];
    let s = [t3 - 2.0 * t2 + t, t3 - t2];
    let dv = [6.0 * t2 - 6.0 * t, -6.0 * t2 + 6.0 * t];
    let ds = [3.0 * t2 - 4.0 * t + 1.0, 3.0 * t2 - 2.0 * t];
    (v, s, dv, ds)
}

/// Mollified field on stages `0..=max_stage`, constant in time within each stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifiedField {
    pub eps: f64,
    pub h: f64,
    tables: Vec<StreamTable>,
}

impl MollifiedField {
    pub fn build(eps: f64, h: f64, max_stage: u32) -> Result<Self> {
        let tables = (0..=max_stage).map(|k| build_mollified(eps, StageIndex(k), h)).collect::<Result<Vec<_>>>()?;
        Self::from_tables(tables)
    }

    /// Assembles precomputed tables; they must be stages `0, 1, ..` with one radius.
    pub fn from_tables(tables: Vec<StreamTable>) -> Result<Self> {
        let first = tables.first().ok_or_else(|| Error::Shape("no stage tables".into()))?;
        let (eps, h) = (first.eps, math::ldexp(first.h, first.stage as i32));
        for (k, t) in tables.iter().enumerate() {
            if t.stage != k as u32 || t.eps != eps {
                return Err(Error::Shape(alloc::format!("table {k} has stage {} and radius {}", t.stage, t.eps)));
            }
        }
        Ok(MollifiedField { eps, h, tables })
    }

    pub fn max_stage(&self) -> u32 {
        (self.tables.len() - 1) as u32
    }

    pub fn tables(&self) -> &[StreamTable] {
        &self.tables
    }

    pub fn into_tables(self) -> Vec<StreamTable> {
        self.tables
    }

    /// Error for stages beyond the built range, naming the deepest admissible one.
    pub fn check_stage(&self, stage: StageIndex) -> Result<()> {
        if stage.0 > self.max_stage() {
            let max_stage = max_admissible_stage(self.eps).map_or(-1, |k| k as i64).min(self.max_stage() as i64);
            return Err(Error::StageNotAdmissible { stage: stage.0, eps: self.eps, max_stage });
        }
        Ok(())
    }

    /// Velocity of stage `k` at `p`; the stage must be in range.
    #[inline]
    pub fn eval_stage(&self, stage: StageIndex, p: Point) -> Point {
        let s = math::ldexp(1.0, stage.0 as i32);
        self.tables[stage.0 as usize].velocity_unit([p[0] * s, p[1] * s])
    }

    /// Mollified stream function `(H_k * phi)(p)` of stage `k`.
    pub fn stream(&self, stage: StageIndex, p: Point) -> Result<f64> {
        self.check_stage(stage)?;
        let k = stage.0 as i32;
        let s = math::ldexp(1.0, k);
        Ok(math::ldexp(self.tables[stage.0 as usize].eval_unit([p[0] * s, p[1] * s]).0, -k))
    }

    pub fn eval(&self, t: f64, p: Point) -> Result<Point> {
        let k = stage_of(t)?;
        self.check_stage(k)?;
        Ok(self.eval_stage(k, p))
    }

    /// Largest sampled node speed over all stages; bounds `|b^eps|` up to interpolation error.
    pub fn max_node_speed(&self) -> f64 {
        self.tables.iter().map(StreamTable::max_node_speed).fold(0.0, f64::max)
    }
}

pub fn eval_mollified(f: &MollifiedField, t: f64, p: Point) -> Result<Point> {
    f.eval(t, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{eval_stage, unit_stream};

    #[test]
    fn mollifier_has_unit_mass() {
        let m = Mollifier::new(0.1).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-12);
        // independent Cartesian check
        let gl = GaussLegendre::new(64);
        let mut total = 0.0;
        let cells = 8;
        let w = 0.2 / cells as f64;
        for a in 0..cells {
            for b in 0..cells {
                let (x0, y0) = (-0.1 + a as f64 * w, -0.1 + b as f64 * w);
                total += gl.integrate(x0, x0 + w, |x| gl.integrate(y0, y0 + w, |y| m.profile(x.hypot(y))));
            }
        }
        assert!((total - 1.0).abs() < 1e-8, "{total}");
    }

    #[test]
    fn radial_table_matches_direct_quadrature() {
        let m = RadialMoments::new();
        let gl = GaussLegendre::new(40);
        for rho in [0.1, 0.37, 0.5, 0.8123, 0.95, 0.999] {
            let got = m.eval(rho);
            for (j, g) in got.iter().enumerate() {
                let want: f64 = (0..16)
                    .map(|q| {
                        let (a, b) = (rho * q as f64 / 16.0, rho * (q + 1) as f64 / 16.0);
                        gl.integrate(a, b, |s| integrands(s, m.norm)[j])
                    })
                    .sum();
                assert!((g - want).abs() < 1e-12, "rho={rho} j={j}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn closed_form_away_from_kinks() {
        let ni = NodeIntegrator::new(0.05).unwrap();
        let p = [0.3, 0.1];
        let v = ni.node(p);
        let (h, g) = unit_stream(p);
        assert!((v[0] - h - ni.shift).abs() < 1e-15);
        assert_eq!([v[1], v[2], v[3]], [g[0], g[1], 0.0]);
        // the polar route agrees where both apply
        let lines = vec![Line { nu: [1.0, 0.0], c: 10.0 }];
        let q = ni.polar(p, &lines);
        for c in 0..4 {
            assert!((q[c] - v[c]).abs() < 1e-11, "{c}: {} vs {}", q[c], v[c]);
        }
        assert_eq!(ni.node([1.0, 0.0]), [0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn centre_velocity_vanishes() {
        let f = MollifiedField::build(1.0 / 32.0, 1.0 / 256.0, 1).unwrap();
        assert_eq!(f.eval(0.75, [0.0, 0.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(f.eval(0.75, [1.0, 1.0]).unwrap(), [0.0, 0.0]);
        assert_eq!(f.eval(0.375, [0.5, 0.5]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn matches_field_away_from_kinks() {
        let eps = 1.0 / 32.0;
        let f = MollifiedField::build(eps, eps / 8.0, 0).unwrap();
        for p in [[0.3, 0.1], [0.25, -0.08], [1.2, 0.95], [0.1, 0.3]] {
            let got = f.eval(0.75, p).unwrap();
            let want = eval_stage(StageIndex(0), p);
            assert!((got[0] - want[0]).abs() < 1e-9 && (got[1] - want[1]).abs() < 1e-9, "{p:?}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn admissibility() {
        assert_eq!(max_admissible_stage(1.0 / 16.0), Some(2));
        assert_eq!(max_admissible_stage(1.0 / 128.0), Some(5));
        assert_eq!(max_admissible_stage(0.3), None);
        let e = build_mollified(1.0 / 16.0, StageIndex(3), 1.0 / 128.0);
        assert!(matches!(e, Err(Error::StageNotAdmissible { max_stage: 2, .. })), "{e:?}");
        assert!(matches!(build_mollified(1.0 / 16.0, StageIndex(0), 0.01), Err(Error::GridTooCoarse { .. })));
        assert!(matches!(build_mollified(0.25, StageIndex(0), 0.01), Err(Error::InvalidRadius { .. })));
        let f = MollifiedField::build(1.0 / 16.0, 1.0 / 128.0, 1).unwrap();
        assert!(matches!(f.eval(0.2, [0.1, 0.1]), Err(Error::StageNotAdmissible { stage: 2, .. })));
    }

    #[test]
    fn raw_roundtrip() {
        let t = build_mollified(1.0 / 16.0, StageIndex(1), 1.0 / 128.0).unwrap();
        let raw: Vec<f64> = t.raw_values().collect();
        let back = StreamTable::from_raw(t.eps, t.stage, t.h, t.n, &raw).unwrap();
        assert_eq!(back, t);
    }
}
