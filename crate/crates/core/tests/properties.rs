//! Invariants as property tests and exhaustive sweeps.

use depauw_core::density::{pushforward_stage, GridDensity};
use depauw_core::exact_flow::{backward_checkpoints, flow, flow_sampled, quarter_turn_cells, stage_flow, Direction, FlowQuery};
use depauw_core::field::{eval_stage, eval_stream, eval_u};
use depauw_core::geometry::{cell_of, cell_of_f64, checkerboard_value, torus_distance, torus_distance_exact, Cell};
use depauw_core::measures::*;
use depauw_core::rng::StartDistribution;
use depauw_core::tracer::{backward_ensemble, lipschitz_audit, BackwardEnsemble, Source};
use depauw_core::*;
use proptest::prelude::*;

fn dyadic() -> impl Strategy<Value = Dyadic> {
    (any::<i64>(), 0u32..80).prop_map(|(m, e)| Dyadic::new(m as i128, e))
}

/// Exact points on the `2^-20` grid of `[0, 2)^2`.
fn grid_point() -> impl Strategy<Value = TorusPoint> {
    (0i128..(2 << 20), 0i128..(2 << 20)).prop_map(|(a, b)| TorusPoint::new(Dyadic::new(a, 20), Dyadic::new(b, 20)))
}

/// Coordinates in `[0, 2)` on the `2^-40` grid, so integer shifts are exact.
fn unit() -> impl Strategy<Value = f64> {
    (0u64..(1 << 41)).prop_map(|m| m as f64 / (1u64 << 40) as f64)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, .. ProptestConfig::default() })]

    #[test]
    fn dyadic_arithmetic_is_exact(a in dyadic(), b in dyadic()) {
        prop_assert_eq!(&(&a + &b) - &b, a.clone());
        prop_assert_eq!(&a * &b, &b * &a);
        prop_assert_eq!(a.halve().double(), a.clone());
        prop_assert_eq!(a.to_string().parse::<Dyadic>().unwrap(), a.clone());
        let json = serde_json::to_string(&a).unwrap();
        prop_assert_eq!(serde_json::from_str::<Dyadic>(&json).unwrap(), a);
    }

    #[test]
    fn torus_points_stay_reduced(p in grid_point(), a in dyadic(), b in dyadic()) {
        let q = p.translate(&a, &b);
        for x in [q.x1(), q.x2()] {
            prop_assert!(*x >= Dyadic::ZERO && *x < Dyadic::from_int(2));
        }
    }

    #[test]
    fn child_cells_nest(p in grid_point(), k in 0u32..18) {
        let c = cell_of(&p, k);
        let f = cell_of(&p, k + 1);
        prop_assert!(c.children().contains(&f));
        prop_assert_eq!(f.parent(), Some(c));
        prop_assert!(f.contains(&p));
    }

    #[test]
    fn checkerboard_flips_under_unit_shift(p in grid_point()) {
        let v = checkerboard_value(&cell_of(&p, 0));
        let one = Dyadic::ONE;
        let zero = Dyadic::ZERO;
        prop_assert_eq!(checkerboard_value(&cell_of(&p.translate(&one, &zero), 0)), 1 - v);
        prop_assert_eq!(checkerboard_value(&cell_of(&p.translate(&zero, &one), 0)), 1 - v);
    }

    #[test]
    fn torus_distance_is_a_metric(x in (unit(), unit()), y in (unit(), unit()), z in (unit(), unit())) {
        let (x, y, z) = ([x.0, x.1], [y.0, y.1], [z.0, z.1]);
        prop_assert_eq!(torus_distance(x, y), torus_distance(y, x));
        prop_assert!(torus_distance(x, y) <= 2f64.sqrt() + 1e-15);
        prop_assert!(torus_distance(x, z) <= torus_distance(x, y) + torus_distance(y, z) + 1e-15);
        prop_assert_eq!(torus_distance([x[0] + 2.0, x[1] - 2.0], y), torus_distance(x, y));
    }

    #[test]
    fn field_is_lattice_periodic(x in (unit(), unit())) {
        let p = [x.0, x.1];
        prop_assert_eq!(eval_u(p), eval_u([p[0] + 1.0, p[1] + 1.0]));
        prop_assert_eq!(eval_u(p), eval_u([p[0] + 2.0, p[1]]));
        prop_assert_eq!(eval_u(p), eval_u([p[0] - 1.0, p[1] + 1.0]));
    }

    #[test]
    fn stages_are_rescalings(x in (unit(), unit()), k in 0u32..12, frac in 0.0f64..1.0) {
        let f = DepauwField::new(12);
        let (lo, hi) = StageIndex(k).interval();
        let t = hi - frac * (hi - lo) * 0.999;
        let s = 2f64.powi(k as i32);
        let p = [x.0, x.1];
        prop_assert_eq!(f.eval_b(t, p).unwrap(), eval_u([p[0] * s, p[1] * s]));
    }

    #[test]
    fn stage_flow_composes_and_inverts(p in grid_point(), k in 0u32..6, a in 0i128..=64, b in 0i128..=64) {
        let stage = StageIndex(k);
        let unit = Dyadic::pow2(-(k as i32) - 7);
        let (da, db) = (&unit * &Dyadic::from_int(a as i64), &unit * &Dyadic::from_int(b as i64));
        let sum = &da + &db;
        prop_assume!(sum <= stage.duration_exact());
        let two = stage_flow(&stage_flow(&p, stage, &da, Direction::Forward).unwrap(), stage, &db, Direction::Forward).unwrap();
        prop_assert_eq!(&two, &stage_flow(&p, stage, &sum, Direction::Forward).unwrap());
        prop_assert_eq!(stage_flow(&two, stage, &sum, Direction::Backward).unwrap(), p.clone());
        // speed bound 2
        let moved = torus_distance_exact(&p, &stage_flow(&p, stage, &da, Direction::Forward).unwrap());
        prop_assert!(moved <= 2.0 * da.to_f64() + 1e-12);
    }

    #[test]
    fn full_stage_matches_cell_permutation(k in 0u32..8, extra in 1u32..4, idx in any::<usize>()) {
        let level = k + extra;
        let count = (1usize << (level + 1)).pow(2);
        let c = Cell::from_index(level, idx % count);
        let img = quarter_turn_cells(c, StageIndex(k), Direction::Forward).unwrap();
        let moved = stage_flow(&c.center(), StageIndex(k), &StageIndex(k).duration_exact(), Direction::Forward).unwrap();
        prop_assert_eq!(moved, img.center());
    }

    #[test]
    fn exact_paths_are_2_lipschitz(p in grid_point(), depth in 1u32..10, sub in 0u32..4) {
        let f = DepauwField::new(depth);
        let q = FlowQuery::new(Dyadic::ONE, Dyadic::pow2(-(depth as i32)));
        let (_, path) = flow_sampled(&f, &p, &q, 1 << sub).unwrap();
        let path = path.to_path(1.0);
        for i in 0..path.times.len() {
            for j in i + 1..path.times.len() {
                let d = torus_distance(path.points[i], path.points[j]);
                prop_assert!(d <= 2.0 * (path.times[j] - path.times[i]) + 1e-12);
            }
        }
    }

    #[test]
    fn pushforward_conserves_mass_and_has_order_four(vals in proptest::collection::vec(0u8..5, 256), k in 0u32..3) {
        let d = GridDensity::new(3, vals.iter().map(|v| *v as f64 / 4.0).collect(), 1.0).unwrap();
        let mut cur = d.clone();
        for _ in 0..4 {
            cur = pushforward_stage(&cur, StageIndex(k), Direction::Forward).unwrap();
            prop_assert_eq!(cur.mean(), d.mean());
        }
        prop_assert_eq!(cur, d);
    }

    #[test]
    fn joint_merges_commute(seed in any::<u64>(), split in 1usize..255) {
        let e = backward_ensemble(256, 5, seed).unwrap();
        let all = endpoint_joint(&e, 3, 0).unwrap();
        let (a, b) = e.paths.split_at(split);
        let part = |ps: &[Path]| endpoint_joint(&PathEnsemble { meta: e.meta.clone(), paths: ps.to_vec() }, 3, 0).unwrap();
        let (mut x, y) = (part(a), part(b));
        let mut z = y.clone();
        z.merge(&x);
        x.merge(&y);
        prop_assert_eq!(&x, &z);
        prop_assert_eq!(&x, &all);
    }
}

#[test]
fn stream_differences_reproduce_field() {
    let h = 1e-4;
    let mut checked = 0;
    for i in 0..20_000u64 {
        if checked == 10_000 {
            break;
        }
        let p = StartDistribution::Uniform.sample(5, i);
        let k = (i % 6) as u32;
        let s = 2f64.powi(k as i32);
        let z = [p[0] * s, p[1] * s];
        // skip points within a few steps of a kink line
        let fr = |x: f64| (x - x.floor() - 0.5).abs();
        let margin = 4.0 * h * s;
        if fr(z[0]) < margin || fr(z[1]) < margin || (z[0] - z[1]).rem_euclid(2.0).min(2.0 - (z[0] - z[1]).rem_euclid(2.0)) < 2.0 * margin
            || (z[0] + z[1]).rem_euclid(2.0).min(2.0 - (z[0] + z[1]).rem_euclid(2.0)) < 2.0 * margin
        {
            continue;
        }
        let st = StageIndex(k);
        let d1 = (eval_stream(st, [p[0] + h, p[1]]) - eval_stream(st, [p[0] - h, p[1]])) / (2.0 * h);
        let d2 = (eval_stream(st, [p[0], p[1] + h]) - eval_stream(st, [p[0], p[1] - h])) / (2.0 * h);
        let v = eval_stage(st, p);
        assert!((-d2 - v[0]).abs() <= 10.0 * h * h && (d1 - v[1]).abs() <= 10.0 * h * h, "{p:?} stage {k}");
        checked += 1;
    }
    assert_eq!(checked, 10_000);
}

#[test]
fn field_sup_norm_is_two() {
    let f = DepauwField::new(12);
    let mut sup: f64 = 0.0;
    for i in 0..1_000_000u64 {
        let p = StartDistribution::Uniform.sample(9, i);
        let k = (i % 13) as i32;
        let v = f.eval_b(0.75 * 2f64.powi(-k), p).unwrap();
        sup = sup.max(v[0].abs().max(v[1].abs()));
        assert!(v[0] * v[1] == 0.0);
    }
    assert!(sup <= SUP_NORM && sup > 1.99, "{sup}");
    // the bound is attained in the limit r -> 1/2
    assert_eq!(eval_u([0.5 - 1.0 / 1024.0, 0.0])[1], 2.0 - 4.0 / 1024.0);
}

/// Points at the centres of the level-`fine` cells, flowed over `(2^-j, 1]`,
/// repopulate every level-`m` cell with the same count.
fn check_measure_preservation(m: u32, fine: u32, j: u32) {
    let f = DepauwField::new(j);
    let per = 1usize << (2 * (fine - m));
    let mut counts = vec![0usize; (1usize << (m + 1)).pow(2)];
    let q = FlowQuery::new(Dyadic::pow2(-(j as i32)), Dyadic::ONE);
    for idx in 0..(1usize << (fine + 1)).pow(2) {
        let c = Cell::from_index(fine, idx);
        let (out, _) = flow(&f, &c.center(), &q).unwrap();
        counts[cell_of(&out, m).index()] += 1;
    }
    assert!(counts.iter().all(|c| *c == per), "m={m} fine={fine} j={j}");
}

#[test]
fn flows_preserve_cell_counts() {
    for j in 1..=6 {
        for m in 0..=6 {
            // 4^m points per cell where affordable, never coarser than the stages crossed
            let fine = (2 * m).min(m + 3).max(j);
            check_measure_preservation(m, fine, j);
        }
    }
}

#[test]
fn backward_endpoints_are_cauchy() {
    for i in 0..200u64 {
        let p = StartDistribution::Uniform.sample(13, i);
        let pts = backward_checkpoints(&TorusPoint::from_f64(p).unwrap(), 20);
        assert_eq!(pts.len(), 21);
        for k in 0..20 {
            let step = torus_distance_exact(&pts[k], &pts[k + 1]);
            assert!(step <= 2.0 * 2f64.powi(-(k as i32) - 1) + 1e-15, "path {i} stage {k}: {step}");
        }
        // tail bound: every later checkpoint lies within 2 * 2^-K of checkpoint K
        for k in 0..20 {
            for l in k + 1..=20 {
                assert!(torus_distance_exact(&pts[k], &pts[l]) <= 2.0 * 2f64.powi(-(k as i32)) + 1e-15);
            }
        }
    }
}

#[test]
fn marginals_stay_uniform_under_incompressible_flow() {
    let gen = BackwardEnsemble {
        count: 20_000,
        seed: 2,
        start: StartDistribution::Uniform,
        source: Source::Exact { field: DepauwField::new(6), substeps: 1 },
    };
    let e = gen.run().unwrap();
    for t in [1.0, 0.5, 0.25, 0.125, 1.0 / 64.0] {
        for level in [1, 2] {
            let h = marginal(&e, t, level).unwrap();
            assert!(h.max_uniformity_deviation(e.len() as u64) <= 4.0, "t={t} level={level}");
        }
    }
    assert!(lipschitz_audit(&e, 2.0, 1e-12).pass);
}

#[test]
fn histogram_analytics_are_consistent() {
    let e = backward_ensemble(4096, 8, 31).unwrap();
    let j = endpoint_joint(&e, 4, 1).unwrap();
    assert_eq!(j.row_marginal(), marginal(&e, e.t_min(), 4).unwrap());
    assert_eq!(j.column_marginal(), marginal(&e, 1.0, 1).unwrap());
    let c = disintegrate(&j);
    let rec = c.reconstruct_columns();
    for (a, b) in rec.weights.iter().zip(&j.column_marginal().weights) {
        assert!((a - b).abs() <= 1e-12);
    }
    // stopping keeps the time-1 fibres
    for tau in [0.5, 0.25, 0.125] {
        let s = apply_stop(&e, tau);
        for t in [tau, 0.5f64.max(tau), 1.0] {
            assert_eq!(disintegrate(&joint_at(&s, 1.0, 2, t, 4).unwrap()), disintegrate(&joint_at(&e, 1.0, 2, t, 4).unwrap()));
        }
    }
    // stopping distance bound, decreasing in tau
    let bank = BlBank::standard(8);
    let mut last = f64::INFINITY;
    for tau in [0.5, 0.25, 0.125, 0.0625] {
        let d = bl_distance(&apply_stop(&e, tau), &e, &bank).unwrap().value;
        assert!(d <= 2.0 * tau && d <= last, "tau {tau}: {d}");
        last = d;
    }
}

#[test]
fn cell_lookup_agrees_between_exact_and_float() {
    for i in 0..10_000u64 {
        let p = StartDistribution::Uniform.sample(3, i);
        let tp = TorusPoint::from_f64(p).unwrap();
        for level in [0, 3, 9] {
            assert_eq!(cell_of(&tp, level), cell_of_f64(p, level));
        }
    }
}
