//! Seeded per-path random streams and start distributions.
//!
//! Every path draws from its own ChaCha8 stream selected by `(seed, index)`,
//! so results never depend on how paths are scheduled across workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{cells_per_side, Cell, Point};
use crate::math;

/// The random stream of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform `f64` in `[0, 1)` on the `2^-53` grid, so that every sample is an exact dyadic.
pub fn unit_f64<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.random::<u64>() >> 11) as f64 * math::ldexp(1.0, -53)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartDistribution {
    /// Uniform on the torus `[0, 2)^2`.
    Uniform,
    /// Uniform on one dyadic cell.
    UniformCell { cell: Cell },
    /// A point plus uniform jitter in the disk of radius `jitter`.
    Dirac { point: Point, jitter: f64 },
    /// One uniform point in each level-`level` cell, cell `index mod 4^{level+1}`
    /// in row-major order.
    Stratified { level: u32 },
}

impl StartDistribution {
    /// The start of path `index`; `[0, 2)^2`-reduced except for `Dirac`.
    pub fn sample(&self, seed: u64, index: u64) -> Point {
        let mut rng = path_rng(seed, index);
        match self {
            StartDistribution::Uniform => [2.0 * unit_f64(&mut rng), 2.0 * unit_f64(&mut rng)],
            StartDistribution::UniformCell { cell } => in_cell(cell, &mut rng),
            StartDistribution::Dirac { point, jitter } => {
                if *jitter <= 0.0 {
                    return *point;
                }
                loop {
                    let a = 2.0 * unit_f64(&mut rng) - 1.0;
                    let b = 2.0 * unit_f64(&mut rng) - 1.0;
                    if a * a + b * b <= 1.0 {
                        return [point[0] + jitter * a, point[1] + jitter * b];
                    }
                }
            }
            StartDistribution::Stratified { level } => {
                let n = cells_per_side(*level);
                let idx = (index % (n * n)) as usize;
                in_cell(&Cell::from_index(*level, idx), &mut rng)
            }
        }
    }

    /// Number of cells a `Stratified` descriptor cycles through.
    pub fn strata(&self) -> Option<u64> {
        match self {
            StartDistribution::Stratified { level } => Some(cells_per_side(*level).pow(2)),
            _ => None,
        }
    }
}

fn in_cell<R: Rng + ?Sized>(cell: &Cell, rng: &mut R) -> Point {
    let s = cell.side();
    let c = cell.lower_corner();
    [c[0] + s * unit_f64(rng), c[1] + s * unit_f64(rng)]
}
