//! Empirical path-space measures: marginals, stopping, bounded-Lipschitz
//! distances, endpoint joints and their disintegrations.
//!
//! Histograms hold `f64` weights. With power-of-two ensemble sizes and equal
//! weights every partial sum is exact, so merging partial histograms is
//! order-independent bit for bit.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_of_f64, cells_per_side, checkerboard_value, Cell, Point};
use crate::math;
use crate::tracer::{Path, PathEnsemble};

/// Weights of level-`level` cells, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellHistogram {
    pub level: u32,
    pub weights: Vec<f64>,
}

impl CellHistogram {
    pub fn zeros(level: u32) -> Self {
        let n = cells_per_side(level) as usize;
        CellHistogram { level, weights: alloc::vec![0.0; n * n] }
    }

    pub fn add(&mut self, p: Point, w: f64) {
        self.weights[cell_of_f64(p, self.level).index()] += w;
    }

    pub fn merge(&mut self, other: &CellHistogram) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Cells whose count deviates from the uniform expectation by more than
    /// `z` multinomial standard deviations, for an ensemble of `n` equal-weight paths.
    pub fn uniformity_outliers(&self, n: u64, z: f64) -> Vec<(usize, f64)> {
        let cells = self.weights.len() as f64;
        let p = 1.0 / cells;
        let nf = n as f64;
        let sd = math::sqrt(nf * p * (1.0 - p));
        self.weights
            .iter()
            .enumerate()
            .filter_map(|(i, w)| {
                let dev = (w * nf - nf * p) / sd;
                (dev.abs() > z).then_some((i, dev))
            })
            .collect()
    }

    /// Largest deviation in standard deviations (see [`Self::uniformity_outliers`]).
    pub fn max_uniformity_deviation(&self, n: u64) -> f64 {
        let p = 1.0 / self.weights.len() as f64;
        let nf = n as f64;
        let sd = math::sqrt(nf * p * (1.0 - p));
        self.weights.iter().map(|w| ((w * nf - nf * p) / sd).abs()).fold(0.0, f64::max)
    }
}

/// `(e_t)_# eta` on level-`level` cells.
pub fn marginal(e: &PathEnsemble, t: f64, level: u32) -> Result<CellHistogram> {
    let mut h = CellHistogram::zeros(level);
    for p in &e.paths {
        h.add(p.position_at(t)?, p.weight);
    }
    Ok(h)
}

/// `(S^tau)_# eta`: every path stopped backward at `tau`.
pub fn apply_stop(e: &PathEnsemble, tau: f64) -> PathEnsemble {
    PathEnsemble { meta: e.meta.clone(), paths: e.paths.iter().map(|p| p.stop_backward(tau)).collect() }
}

/// The coordinate functions `sin(pi (a x1 + b x2) + phase) / (pi |(a, b)|)`:
/// period 2, 1-Lipschitz and bounded by `1/pi`.
pub const BL_FREQUENCIES: [(i32, i32); 6] = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2)];
pub const BL_PHASES: [f64; 2] = [0.0, PI / 2.0];

fn coordinate(k: usize, p: Point) -> f64 {
    let (a, b) = BL_FREQUENCIES[k / 2];
    let phase = BL_PHASES[k % 2];
    let (a, b) = (a as f64, b as f64);
    math::sin(PI * (a * p[0] + b * p[1]) + phase) / (PI * math::sqrt(a * a + b * b))
}

const COORDS: usize = 12;

/// A bounded, 1-Lipschitz functional of a path (w.r.t. the sup distance).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    /// `f_c(gamma(t_i))`.
    Single { time: usize, coord: usize },
    /// `(pi / 2) f_c(gamma(t_i)) f_d(gamma(t_j))`, `i < j`.
    Pair { ti: usize, ci: usize, tj: usize, cj: usize },
}

/// A fixed, versioned bank of cylinder functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlBank {
    pub id: String,
    pub times: Vec<f64>,
    pub functionals: Vec<Functional>,
}

impl BlBank {
    /// `bl-bank-v1`: times `{2^{-depth}, 1/8, 1/2, 1}` (deduplicated), the 12
    /// coordinate functions at each time, and all pair products across distinct times.
    pub fn standard(depth: u32) -> Self {
        let mut times = alloc::vec![math::ldexp(1.0, -(depth as i32)), 0.125, 0.5, 1.0];
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut functionals = Vec::new();
        for t in 0..times.len() {
            for c in 0..COORDS {
                functionals.push(Functional::Single { time: t, coord: c });
            }
        }
        for ti in 0..times.len() {
            for tj in ti + 1..times.len() {
                for ci in 0..COORDS {
                    for cj in 0..COORDS {
                        functionals.push(Functional::Pair { ti, ci, tj, cj });
                    }
                }
            }
        }
        BlBank { id: String::from("bl-bank-v1"), times, functionals }
    }

    fn features(&self, p: &Path) -> Result<Vec<[f64; COORDS]>> {
        self.times
            .iter()
            .map(|t| {
                let x = p.position_at(*t)?;
                Ok(core::array::from_fn(|c| coordinate(c, x)))
            })
            .collect()
    }

    /// Weighted means of every functional.
    pub fn means(&self, e: &PathEnsemble) -> Result<Vec<f64>> {
        let mut acc = BlAccumulator::new(self);
        for p in &e.paths {
            acc.push(self, p)?;
        }
        Ok(acc.means())
    }
}

/// Weighted sums of the bank functionals; merging partial sums is exact
/// bookkeeping, so ensembles can be streamed instead of stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlAccumulator {
    pub sums: Vec<f64>,
    pub weight: f64,
    pub count: usize,
}

impl BlAccumulator {
    pub fn new(bank: &BlBank) -> Self {
        BlAccumulator { sums: alloc::vec![0.0; bank.functionals.len()], weight: 0.0, count: 0 }
    }

    pub fn push(&mut self, bank: &BlBank, p: &Path) -> Result<()> {
        let f = bank.features(p)?;
        for (a, fun) in self.sums.iter_mut().zip(&bank.functionals) {
            let v = match *fun {
                Functional::Single { time, coord } => f[time][coord],
                Functional::Pair { ti, ci, tj, cj } => 0.5 * PI * f[ti][ci] * f[tj][cj],
            };
            *a += p.weight * v;
        }
        self.weight += p.weight;
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &BlAccumulator) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        self.weight += other.weight;
        self.count += other.count;
    }

    pub fn means(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.weight).collect()
    }
}

/// [`bl_distance`] from precomputed accumulators.
pub fn bl_distance_from(a: &BlAccumulator, b: &BlAccumulator, bank: &BlBank) -> BlDistanceEstimate {
    let (m1, m2) = (a.means(), b.means());
    let mut value = 0.0;
    let mut argmax = None;
    for (i, (x, y)) in m1.iter().zip(&m2).enumerate() {
        let d = (x - y).abs();
        if d > value {
            value = d;
            argmax = Some(bank.functionals[i]);
        }
    }
    BlDistanceEstimate { value, bank_id: bank.id.clone(), argmax, n1: a.count, n2: b.count }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlDistanceEstimate {
    pub value: f64,
    pub bank_id: String,
    pub argmax: Option<Functional>,
    pub n1: usize,
    pub n2: usize,
}

/// `max_f |E_1 f - E_2 f|` over the bank: a lower estimate of the BL distance.
pub fn bl_distance(e1: &PathEnsemble, e2: &PathEnsemble, bank: &BlBank) -> Result<BlDistanceEstimate> {
    let mut a = BlAccumulator::new(bank);
    let mut b = BlAccumulator::new(bank);
    for p in &e1.paths {
        a.push(bank, p)?;
    }
    for p in &e2.paths {
        b.push(bank, p)?;
    }
    Ok(bl_distance_from(&a, &b, bank))
}

/// Weights of `(start cell, target cell)` pairs: start at the earliest time
/// (level `start_level`), target at `t = 1` (level `target_level`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointJointHistogram {
    pub start_level: u32,
    pub target_level: u32,
    pub t_min: f64,
    /// Distance bound between positions at `t_min` and the time-0 limit: `2 t_min`.
    pub time0_error_bound: f64,
    pub counts: BTreeMap<(usize, usize), f64>,
}

impl EndpointJointHistogram {
    pub fn new(start_level: u32, target_level: u32, t_min: f64) -> Self {
        EndpointJointHistogram { start_level, target_level, t_min, time0_error_bound: 2.0 * t_min, counts: BTreeMap::new() }
    }

    pub fn add(&mut self, start: Point, target: Point, w: f64) {
        let a = cell_of_f64(start, self.start_level).index();
        let b = cell_of_f64(target, self.target_level).index();
        *self.counts.entry((a, b)).or_insert(0.0) += w;
    }

    pub fn merge(&mut self, other: &EndpointJointHistogram) {
        for (k, v) in &other.counts {
            *self.counts.entry(*k).or_insert(0.0) += v;
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }

    pub fn row_marginal(&self) -> CellHistogram {
        let mut h = CellHistogram::zeros(self.start_level);
        for ((a, _), w) in &self.counts {
            h.weights[*a] += w;
        }
        h
    }

    pub fn column_marginal(&self) -> CellHistogram {
        let mut h = CellHistogram::zeros(self.target_level);
        for ((_, b), w) in &self.counts {
            h.weights[*b] += w;
        }
        h
    }

    /// Entrywise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &EndpointJointHistogram, b: f64) -> Result<Self> {
        if self.start_level != other.start_level || self.target_level != other.target_level {
            return Err(Error::Shape("joint histograms on different grids".into()));
        }
        let mut out = EndpointJointHistogram::new(self.start_level, self.target_level, self.t_min.max(other.t_min));
        for (k, v) in &self.counts {
            *out.counts.entry(*k).or_insert(0.0) += a * v;
        }
        for (k, v) in &other.counts {
            *out.counts.entry(*k).or_insert(0.0) += b * v;
        }
        Ok(out)
    }
}

/// `(e_{t_min}, e_1)_# eta` on cells.
pub fn endpoint_joint(e: &PathEnsemble, start_level: u32, target_level: u32) -> Result<EndpointJointHistogram> {
    joint_at(e, e.t_min(), start_level, 1.0, target_level)
}

/// `(e_s, e_t)_# eta` on cells; rows indexed by the position at `s`.
pub fn joint_at(e: &PathEnsemble, s: f64, row_level: u32, t: f64, col_level: u32) -> Result<EndpointJointHistogram> {
    let mut j = EndpointJointHistogram::new(row_level, col_level, s);
    for p in &e.paths {
        j.add(p.position_at(s)?, p.position_at(t)?, p.weight);
    }
    Ok(j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub mass: f64,
    pub probs: BTreeMap<usize, f64>,
}

/// Conditional target distributions per start cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalHistogram {
    pub start_level: u32,
    pub target_level: u32,
    pub rows: BTreeMap<usize, ConditionalRow>,
    /// Start cells whose entries were all zero.
    pub omitted_rows: usize,
}

impl ConditionalHistogram {
    /// `sum_x mass(x) row_x`.
    pub fn reconstruct_columns(&self) -> CellHistogram {
        let mut h = CellHistogram::zeros(self.target_level);
        for row in self.rows.values() {
            for (b, p) in &row.probs {
                h.weights[*b] += row.mass * p;
            }
        }
        h
    }
}

/// Normalises the rows of `j`.
pub fn disintegrate(j: &EndpointJointHistogram) -> ConditionalHistogram {
    let mut raw: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for ((a, b), w) in &j.counts {
        raw.entry(*a).or_default().insert(*b, *w);
    }
    let mut rows = BTreeMap::new();
    let mut omitted_rows = 0;
    for (a, entries) in raw {
        let mass: f64 = entries.values().sum();
        if mass.is_nan() || mass <= 0.0 {
            omitted_rows += 1;
            continue;
        }
        let probs = entries.into_iter().filter(|(_, w)| *w > 0.0).map(|(b, w)| (b, w / mass)).collect();
        rows.insert(a, ConditionalRow { mass, probs });
    }
    ConditionalHistogram { start_level: j.start_level, target_level: j.target_level, rows, omitted_rows }
}

/// Target cells with checkerboard value 1 (black) at `level`.
pub fn black_cells(level: u32) -> BTreeSet<usize> {
    let n = cells_per_side(level) as usize;
    (0..n * n).filter(|i| checkerboard_value(&Cell::from_index(level, *i)) == 1).collect()
}

pub fn white_cells(level: u32) -> BTreeSet<usize> {
    let n = cells_per_side(level) as usize;
    (0..n * n).filter(|i| checkerboard_value(&Cell::from_index(level, *i)) == 0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowStats {
    pub start: usize,
    pub mass: f64,
    pub max_atom: f64,
    pub deterministic: bool,
    pub black_mass: f64,
    pub white_mass: f64,
    /// Total variation between the B- and W-branch rows, when both exist.
    pub branch_tv: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; `None` for empty input.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64) + 0.5) as usize];
        Some(Quantiles { min: v[0], q10: q(0.1), median: q(0.5), q90: q(0.9), max: v[v.len() - 1] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticityReport {
    pub rows: Vec<RowStats>,
    pub max_atom: Option<Quantiles>,
    pub black_mass: Option<Quantiles>,
    pub branch_tv: Option<Quantiles>,
    /// Fraction of rows with `max_atom <= 0.6`.
    pub frac_non_dirac: f64,
    /// Fraction of rows with `|black_mass - 1/2| <= 0.05`.
    pub frac_balanced: f64,
    /// Fraction of rows with both branches present and `TV >= 0.9`, among
    /// all rows of the combined histogram.
    pub frac_singular: Option<f64>,
    pub deterministic_rows: usize,
}

/// Total variation `1/2 sum |p - q|`.
pub fn total_variation(p: &BTreeMap<usize, f64>, q: &BTreeMap<usize, f64>) -> f64 {
    let keys: BTreeSet<usize> = p.keys().chain(q.keys()).copied().collect();
    0.5 * keys.iter().map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

/// Per-row atom sizes, black/white masses and (optionally) branch TV.
pub fn stochasticity_report(
    c: &ConditionalHistogram,
    black: &BTreeSet<usize>,
    white: &BTreeSet<usize>,
    branches: Option<(&ConditionalHistogram, &ConditionalHistogram)>,
) -> StochasticityReport {
    let mut rows = Vec::with_capacity(c.rows.len());
    for (start, row) in &c.rows {
        let max_atom = row.probs.values().copied().fold(0.0, f64::max);
        let black_mass = row.probs.iter().filter(|(b, _)| black.contains(b)).map(|(_, p)| p).sum();
        let white_mass = row.probs.iter().filter(|(b, _)| white.contains(b)).map(|(_, p)| p).sum();
        let branch_tv = branches.and_then(|(cb, cw)| match (cb.rows.get(start), cw.rows.get(start)) {
            (Some(rb), Some(rw)) => Some(total_variation(&rb.probs, &rw.probs)),
            _ => None,
        });
        rows.push(RowStats {
            start: *start,
            mass: row.mass,
            max_atom,
            deterministic: max_atom >= 1.0,
            black_mass,
            white_mass,
            branch_tv,
        });
    }
    let n = rows.len().max(1) as f64;
    let atoms: Vec<f64> = rows.iter().map(|r| r.max_atom).collect();
    let blacks: Vec<f64> = rows.iter().map(|r| r.black_mass).collect();
    let tvs: Vec<f64> = rows.iter().filter_map(|r| r.branch_tv).collect();
    StochasticityReport {
        max_atom: Quantiles::of(&atoms),
        black_mass: Quantiles::of(&blacks),
        branch_tv: Quantiles::of(&tvs),
        frac_non_dirac: atoms.iter().filter(|a| **a <= 0.6).count() as f64 / n,
        frac_balanced: blacks.iter().filter(|b| (**b - 0.5).abs() <= 0.05).count() as f64 / n,
        frac_singular: branches.map(|_| tvs.iter().filter(|t| **t >= 0.9).count() as f64 / n),
        deterministic_rows: rows.iter().filter(|r| r.deterministic).count(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StartDistribution;
    use crate::tracer::{backward_ensemble, EnsembleMeta, Tracing};

    fn meta() -> EnsembleMeta {
        EnsembleMeta {
            field: String::from("test"),
            tracing: Tracing::Exact { depth: 1, substeps: 1 },
            seed: 0,
            start_time: 1.0,
            start: StartDistribution::Uniform,
            count: 1,
        }
    }

    #[test]
    fn single_path_marginal_is_dirac() {
        let e = PathEnsemble {
            meta: meta(),
            paths: alloc::vec![Path::constant(alloc::vec![0.0, 1.0], [0.3, 1.7], 1.0)],
        };
        let h = marginal(&e, 0.5, 2).unwrap();
        assert_eq!(h.total(), 1.0);
        assert_eq!(h.weights[Cell { level: 2, ix: 1, iy: 6 }.index()], 1.0);
        assert!(marginal(&e, 1.5, 2).is_err());
    }

    #[test]
    fn bank_functionals_are_bounded_and_lipschitz() {
        let bank = BlBank::standard(10);
        assert_eq!(bank.times, alloc::vec![1.0 / 1024.0, 0.125, 0.5, 1.0]);
        assert_eq!(bank.functionals.len(), 4 * 12 + 6 * 144);
        let bank3 = BlBank::standard(3);
        assert_eq!(bank3.times.len(), 3);
        for c in 0..COORDS {
            let (p, q) = ([0.3, 0.7], [0.3 + 1e-6, 0.7 - 1e-6]);
            let d = math::sqrt(2.0) * 1e-6;
            assert!((coordinate(c, p) - coordinate(c, q)).abs() <= d * (1.0 + 1e-6));
            assert!(coordinate(c, p).abs() <= 1.0 / PI + 1e-15);
            assert!((coordinate(c, [2.3, -1.3]) - coordinate(c, [0.3, 0.7])).abs() < 1e-12);
        }
    }

    #[test]
    fn bl_identity_and_stopping_bound() {
        let e = backward_ensemble(256, 8, 3).unwrap();
        let bank = BlBank::standard(8);
        assert_eq!(bl_distance(&e, &e, &bank).unwrap().value, 0.0);
        let s = apply_stop(&e, 0.25);
        let d = bl_distance(&s, &e, &bank).unwrap();
        assert!(d.value <= 0.5, "{d:?}");
        assert_eq!(apply_stop(&e, 0.0), e);
    }

    #[test]
    fn joint_projections_and_reconstruction() {
        let e = backward_ensemble(512, 6, 9).unwrap();
        let j = endpoint_joint(&e, 3, 0).unwrap();
        assert_eq!(j.row_marginal(), marginal(&e, e.t_min(), 3).unwrap());
        assert_eq!(j.column_marginal(), marginal(&e, 1.0, 0).unwrap());
        let c = disintegrate(&j);
        for row in c.rows.values() {
            assert!((row.probs.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let rec = c.reconstruct_columns();
        let col = j.column_marginal();
        for (a, b) in rec.weights.iter().zip(&col.weights) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stopping_preserves_time_one_fibers() {
        let e = backward_ensemble(512, 6, 4).unwrap();
        let tau = 0.25;
        let s = apply_stop(&e, tau);
        for t in [0.25, 0.5, 1.0] {
            let a = disintegrate(&joint_at(&e, 1.0, 1, t, 3).unwrap());
            let b = disintegrate(&joint_at(&s, 1.0, 1, t, 3).unwrap());
            assert_eq!(a, b);
        }
        let moved = disintegrate(&joint_at(&s, 1.0, 1, s.t_min(), 3).unwrap());
        assert_eq!(moved, disintegrate(&joint_at(&e, 1.0, 1, tau, 3).unwrap()));
    }

    #[test]
    fn product_joint_has_identical_rows() {
        let mut j = EndpointJointHistogram::new(1, 0, 0.001);
        for a in 0..16 {
            for b in 0..4 {
                j.counts.insert((a, b), [0.1, 0.2, 0.3, 0.4][b] / 16.0);
            }
        }
        let c = disintegrate(&j);
        let first = &c.rows[&0].probs;
        assert!(c.rows.values().all(|r| r.probs.iter().zip(first).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() < 1e-15)));
    }

    #[test]
    fn mixture_rows_average_branch_rows() {
        let mut jb = EndpointJointHistogram::new(0, 0, 0.001);
        let mut jw = EndpointJointHistogram::new(0, 0, 0.001);
        for a in 0..4 {
            jb.counts.insert((a, 1), 0.125);
            jb.counts.insert((a, 2), 0.125);
            jw.counts.insert((a, 0), 0.2);
            jw.counts.insert((a, 3), 0.05);
        }
        let mix = disintegrate(&jb.combine(0.5, &jw, 0.5).unwrap());
        let (cb, cw) = (disintegrate(&jb), disintegrate(&jw));
        for (a, row) in &mix.rows {
            for b in 0..4 {
                let want = 0.5 * cb.rows[a].probs.get(&b).unwrap_or(&0.0) + 0.5 * cw.rows[a].probs.get(&b).unwrap_or(&0.0);
                assert!((row.probs.get(&b).unwrap_or(&0.0) - want).abs() < 1e-15);
            }
        }
        let rep = stochasticity_report(&mix, &black_cells(0), &white_cells(0), Some((&cb, &cw)));
        assert_eq!(rep.frac_singular, Some(1.0));
        assert!(rep.rows.iter().all(|r| r.branch_tv == Some(1.0)));
    }

    #[test]
    fn dirac_row_is_flagged() {
        let mut j = EndpointJointHistogram::new(0, 0, 0.001);
        j.counts.insert((0, 2), 1.0);
        j.counts.insert((1, 3), 0.0);
        let c = disintegrate(&j);
        assert_eq!(c.omitted_rows, 1);
        let rep = stochasticity_report(&c, &black_cells(0), &white_cells(0), None);
        assert_eq!(rep.deterministic_rows, 1);
        assert_eq!(rep.rows[0].max_atom, 1.0);
        assert_eq!(rep.frac_non_dirac, 0.0);
    }
}
