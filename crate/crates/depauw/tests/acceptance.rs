//! Acceptance criteria, one test per criterion. Each prints a single
//! `acceptance PASS|FAIL <criterion>: <measurement>` line on stderr.
//!
//! Tests take a global lock so that wall-clock budgets are measured without
//! competing work; the expensive ensembles are built once and shared.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use depauw::config::{ConvergeParams, Levels, StochasticityParams};
use depauw::experiments::converge::{self, ConvergeReport, SUP_FRACTION};
use depauw::experiments::stochasticity::{self, Analysis, ROW_FRACTION};
use depauw::experiments::trace::{self, EnsembleStats, ORACLE_TOLERANCE};
use depauw::experiments::density::residuals;
use depauw::Runner;
use depauw_core::density::{check_refining, evolve_rho_b};
use depauw_core::exact_flow::{quarter_turn_cells, stage_flow_exact, Direction};
use depauw_core::geometry::Cell;
use depauw_core::measures::{apply_stop, bl_distance, BlBank};
use depauw_core::rng::StartDistribution;
use depauw_core::tracer::{audit_tolerance, backward_ensemble, lipschitz_audit, BackwardEnsemble, Source};
use depauw_core::{DepauwField, StageIndex};

const SEED: u64 = 20_240_601;

static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn runner() -> Runner {
    Runner::new(None).expect("thread pool")
}

fn report(criterion: &str, pass: bool, detail: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Exact backward ensemble, `N = 10^5`, down to `2^-10`, streamed.
fn exact_stats() -> &'static EnsembleStats {
    static CELL: OnceLock<EnsembleStats> = OnceLock::new();
    CELL.get_or_init(|| {
        let gen = BackwardEnsemble {
            count: 100_000,
            seed: SEED,
            start: StartDistribution::Uniform,
            source: Source::Exact { field: DepauwField::new(10), substeps: 1 },
        };
        trace::stream_ensemble(&gen, &runner(), |_, _| Ok(())).expect("exact ensemble")
    })
}

/// Mollified ensembles for `eps = 2^-4 .. 2^-7`, `N = 10^4`, sup distances on the first `10^3`.
fn converge_report() -> &'static ConvergeReport {
    static CELL: OnceLock<ConvergeReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = ConvergeParams {
            eps: vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0],
            n: 10_000,
            sup_paths: 1000,
            step: 1.0 / 1024.0,
            t_end: 0.125,
            depth: 3,
            start: StartDistribution::Uniform,
        };
        let r = runner();
        let fields = converge::fields(&p, None, &r).expect("mollified fields");
        converge::converge(&p, SEED, &fields, &r).expect("selection run")
    })
}

/// Stochasticity statistics with the time taken to compute them.
fn stochasticity_analysis() -> &'static (Analysis, Duration) {
    static CELL: OnceLock<(Analysis, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let p = StochasticityParams {
            depth: 10,
            n: 1 << 20,
            levels: Levels { start: 6, target: 0 },
            start: StartDistribution::Stratified { level: 9 },
        };
        let joint = stochasticity::joint_histograms(&p, SEED, &runner()).expect("joint histograms");
        let a = stochasticity::analyse(&joint);
        (a, t.elapsed())
    })
}

#[test]
fn refining_recursion() {
    let _g = gate();
    let t = Instant::now();
    let traj = evolve_rho_b(10).unwrap();
    let ok = check_refining(&traj);
    let el = t.elapsed();
    let pass = ok.is_ok() && el < Duration::from_secs(5);
    report("refining_recursion", pass, &format!("K <= 10 exact: {:?}, {:.2} s (budget 5 s)", ok.is_ok(), secs(el)));
    assert!(pass, "{ok:?} in {el:?}");
}

#[test]
fn quarter_turn_property() {
    let _g = gate();
    let t = Instant::now();
    let mut checked = 0u64;
    let mut mismatches = 0u64;
    let mut non_bijective = 0u64;
    for level in 1..=10u32 {
        let n = depauw_core::exact_flow::grid_len(level);
        for k in 0..level {
            let st = StageIndex(k);
            let d = st.duration_exact();
            let mut seen = vec![false; n];
            for i in 0..n {
                let c = Cell::from_index(level, i);
                let img = quarter_turn_cells(c, st, Direction::Forward).unwrap();
                if seen[img.index()] {
                    non_bijective += 1;
                }
                seen[img.index()] = true;
                if stage_flow_exact(&c.center(), st, &d).unwrap() != img.center() {
                    mismatches += 1;
                }
                checked += 1;
            }
        }
    }
    let rows = trace::oracle_table(10_000, SEED, &runner()).unwrap();
    let worst = rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let el = t.elapsed();
    let pass = mismatches == 0 && non_bijective == 0 && worst <= ORACLE_TOLERANCE && el < Duration::from_secs(120);
    report(
        "quarter_turn",
        pass,
        &format!(
            "{checked} cell images at levels <= 10: {mismatches} mismatches, {non_bijective} collisions; \
             RK4 (step 1e-5) max error {worst:e} at 10^4 points (tolerance 1e-6); {:.1} s (budget 120 s)",
            secs(el)
        ),
    );
    assert!(pass);
}

#[test]
fn lipschitz_concentration() {
    let _g = gate();
    let exact = exact_stats();
    let conv = converge_report();
    let stopped = {
        let e = backward_ensemble(10_000, 10, SEED).unwrap();
        let tol = audit_tolerance(&e.meta);
        [0.5, 0.25, 0.125, 0.0625].iter().map(|t| lipschitz_audit(&apply_stop(&e, *t), 2.0, tol)).collect::<Vec<_>>()
    };
    let stopped_ok = stopped.iter().all(|r| r.pass);
    let pass = exact.lipschitz_pass() && conv.lipschitz_pass() && stopped_ok;
    report(
        "lipschitz",
        pass,
        &format!(
            "exact N=1e5: {:.15} (tol {:e}); mollified {:?} (tol {:e}); exact references {}; stopped ensembles max {:.15}",
            exact.max_speed_ratio,
            exact.lipschitz_tolerance,
            conv.max_speed_ratio,
            conv.lipschitz_tolerance,
            conv.exact_max_speed_ratio,
            stopped.iter().map(|r| r.max_ratio).fold(0.0, f64::max)
        ),
    );
    assert!(pass);
}

#[test]
fn incompressibility() {
    let _g = gate();
    let s = exact_stats();
    let worst = s.occupancy.iter().map(|o| o.max_z).fold(0.0, f64::max);
    let slots = s.occupancy.len();
    let pass = s.occupancy_pass() && slots == 8;
    report(
        "incompressibility",
        pass,
        &format!("N=1e5, levels 2 and 3 at t in {{1, 1/2, 1/4, 1/8}}: {slots} histograms, max deviation {worst:.3} sd (bound 4)"),
    );
    assert!(pass, "{:?}", s.occupancy);
}

#[test]
fn selection_bl_monotone() {
    let _g = gate();
    let r = converge_report();
    let v: Vec<String> = r.bl_consecutive.iter().map(|b| format!("{:.3e}", b.value)).collect();
    let e: Vec<String> = r.bl_to_exact.iter().map(|b| format!("{:.3e}", b.value)).collect();
    report(
        "selection_bl",
        r.bl_monotone,
        &format!("consecutive-eps BL [{}] (N=1e4, bank {}); to exact [{}]", v.join(", "), r.bank_id, e.join(", ")),
    );
    assert!(r.bl_monotone);
}

#[test]
fn selection_sup_distance() {
    let _g = gate();
    let r = converge_report();
    let pass = r.sup_pass();
    report(
        "selection_sup",
        pass,
        &format!(
            "{} of {} paths ({:.3}) have strictly decreasing consecutive sup distances on [1/8, 1] (need {SUP_FRACTION}); \
             medians {:?}; {} decrease toward the exact flow",
            r.sup_decreasing, r.sup_paths, r.sup_fraction, r.sup_median, r.sup_exact_decreasing
        ),
    );
    assert!(pass, "sup-distance fraction {} < {SUP_FRACTION}", r.sup_fraction);
}

#[test]
fn stochasticity() {
    let _g = gate();
    let (a, el) = stochasticity_analysis();
    let r = &a.report;
    let pass = r.frac_non_dirac >= ROW_FRACTION && r.frac_balanced >= ROW_FRACTION && *el < Duration::from_secs(600);
    report(
        "stochasticity",
        pass,
        &format!(
            "K=10, m=6, n=0, N=2^20: max atom <= 0.6 in {:.4} of {} rows, black mass 1/2 +- 0.05 in {:.4} (need {ROW_FRACTION}); \
             median atom {:.3}; {:.1} s (budget 600 s)",
            r.frac_non_dirac,
            r.rows.len(),
            r.frac_balanced,
            r.max_atom.map_or(f64::NAN, |q| q.median),
            secs(*el)
        ),
    );
    assert!(pass);
}

#[test]
fn mutual_singularity() {
    let _g = gate();
    let (a, _) = stochasticity_analysis();
    let f = a.report.frac_singular.unwrap_or(0.0);
    let pass = f >= ROW_FRACTION;
    report(
        "mutual_singularity",
        pass,
        &format!(
            "B/W branch TV >= 0.9 in {f:.4} of rows (need {ROW_FRACTION}); median TV {:.3}",
            a.report.branch_tv.map_or(f64::NAN, |q| q.median)
        ),
    );
    assert!(pass);
}

#[test]
fn stopping_maps() {
    let _g = gate();
    let e = backward_ensemble(10_000, 10, SEED).unwrap();
    let bank = BlBank::standard(10);
    let taus = [0.5, 0.25, 0.125, 0.0625];
    let d: Vec<f64> = taus.iter().map(|t| bl_distance(&apply_stop(&e, *t), &e, &bank).unwrap().value).collect();
    let bounded = d.iter().zip(&taus).all(|(d, t)| *d <= 2.0 * t);
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let pass = bounded && decreasing;
    report("stopping", pass, &format!("BL(S^tau eta, eta) for tau = 1/2..1/16: {d:?} (bound 2 tau, decreasing)"));
    assert!(pass);
}

#[test]
fn weak_residual() {
    let _g = gate();
    let traj = evolve_rho_b(10).unwrap();
    let res = residuals(&traj, 1_000_000, SEED, &runner()).unwrap();
    let z: Vec<f64> = res.iter().map(|r| if r.stderr > 0.0 { r.estimate.abs() / r.stderr } else { 0.0 }).collect();
    let pass = res.len() == 10 && res.iter().all(|r| r.within(3.0));
    report(
        "weak_residual",
        pass,
        &format!("10 bank functions at N=1e6: |estimate| / stderr = {:?} (bound 3)", z.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()),
    );
    assert!(pass);
}
