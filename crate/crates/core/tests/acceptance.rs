//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::time::{Duration, Instant};

use homog_core::effective::{build_effective_model, cell_problem_oracle, EffectiveOptions};
use homog_core::harness::{run_property_suite, run_rate_sweep};
use homog_core::solver::{line_targets, solve_fd_oracle, solve_oscillatory, FdGrid, InitialData};
use homog_core::{
    build_lagrangian, compute_metric_table, Cone, Config, Discretization, HamiltonianSpec,
};

const RATE_1D: &str = include_str!("../../../configs/rate_1d.conf");
const RATE_2D: &str = include_str!("../../../configs/rate_2d.conf");
const EFFECTIVE_1D: &str = include_str!("../../../configs/effective_1d.conf");
const PROPERTIES_2D: &str = include_str!("../../../configs/properties_2d.conf");

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// `|p| = ∫ sqrt(h + V(x)) dx` solved for `h` by bisection; `-min V` on the
/// flat piece. `V` is sampled at `n` midpoints of the unit interval.
fn quadrature_hbar(v: impl Fn(f64) -> f64, p: f64, n: usize) -> f64 {
    let xs: Vec<f64> = (0..n)
        .map(|i| (i as f64 + 0.5) / n as f64)
        .map(&v)
        .collect();
    let vmin = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let integral = |h: f64| xs.iter().map(|vx| (h + vx).max(0.0).sqrt()).sum::<f64>() / n as f64;
    if p.abs() <= integral(-vmin) {
        return -vmin;
    }
    let (mut lo, mut hi) = (-vmin, -vmin + 1.0);
    while integral(hi) < p.abs() {
        hi += 2.0 * (hi - lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if integral(mid) < p.abs() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn free_case() -> Outcome {
    let spec = HamiltonianSpec::constant(1, 1.0).unwrap();
    let l = build_lagrangian(&spec).unwrap();
    let disc = Discretization::new(1, 16, 8, 4.0).unwrap();
    let table = compute_metric_table(&l, 8.0, Cone::new(4.0).unwrap(), &disc).unwrap();
    let mut worst: f64 = 0.0;
    for t in [1usize, 2, 4, 8] {
        let k = t * disc.steps;
        let reach = (2 * t * disc.cells) as i64;
        for z in -reach..=reach {
            let x = z as f64 * disc.dx();
            let m = table.value(k, &[z]);
            let exact = x * x / (4.0 * t as f64) + t as f64;
            worst = worst.max((m - exact).abs() / (1.0 + m.abs()));
        }
    }
    outcome(
        worst <= 0.02,
        format!("max relative deviation {worst:.2e} (limit 0.02)"),
    )
}

fn effective_1d() -> Outcome {
    let cfg = Config::parse(EFFECTIVE_1D).unwrap();
    let l = build_lagrangian(&cfg.spec).unwrap();
    let opts = EffectiveOptions::new(cfg.disc, cfg.n_max, cfg.velocity_box, cfg.momentum_box);
    let model = build_effective_model(&l, &opts).unwrap();
    let v = |x: f64| 2.0 + (2.0 * std::f64::consts::PI * x).cos();
    let mut worst: f64 = 0.0;
    for p in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let h = model.hbar_at(&[p]).unwrap();
        worst = worst.max((h - quadrature_hbar(v, p, 200_000)).abs());
    }
    let flat = model.flat_piece_radius(1e-3);
    let exact = 2.0 * 2f64.sqrt() / std::f64::consts::PI;
    let rel = (flat - exact).abs() / exact;
    outcome(
        worst <= 0.05 && rel <= 0.05,
        format!("max |H̄ - oracle| {worst:.4} (limit 0.05), flat piece {flat:.4} vs {exact:.4} ({:.2}%, limit 5%)", 100.0 * rel),
    )
}

fn oracle_2d() -> Outcome {
    let cfg = Config::parse(RATE_2D).unwrap();
    let l = build_lagrangian(&cfg.spec).unwrap();
    let opts = EffectiveOptions::new(cfg.disc, cfg.n_max, cfg.velocity_box, cfg.momentum_box);
    let model = build_effective_model(&l, &opts).unwrap();
    let mut worst: f64 = 0.0;
    for p in [0.0, 0.5, 1.0, 1.5, 2.0] {
        let c = cell_problem_oracle(&l, &cfg.disc, &[p, 0.0], 64).unwrap();
        worst = worst.max((model.hbar_at(&[p, 0.0]).unwrap() - c.value).abs());
    }
    outcome(
        worst <= 0.05,
        format!("max |H̄ - cell oracle| {worst:.2e} (limit 0.05)"),
    )
}

fn rate(text: &str, beta_min: f64) -> Outcome {
    let cfg = Config::parse(text).unwrap();
    match run_rate_sweep(&cfg) {
        Ok((r, _)) => {
            let smallest = r.errors.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            let probe_ok = r.probe.is_some_and(|p| p < 0.5 * smallest);
            outcome(
                r.beta >= beta_min && probe_ok,
                format!(
                    "beta {:.4} (limit {beta_min}), probe {:.2e} vs half smallest error {:.2e}",
                    r.beta,
                    r.probe.unwrap_or(f64::NAN),
                    0.5 * smallest
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn properties() -> (Outcome, Outcome) {
    let cfg = Config::parse(PROPERTIES_2D).unwrap();
    let (r, _) = run_property_suite(&cfg).unwrap();
    let pick = |names: &[&str]| {
        let checks: Vec<_> = names.iter().map(|n| r.get(n).unwrap()).collect();
        let detail = checks
            .iter()
            .map(|c| format!("{} {:.3e}", c.name, c.value))
            .collect::<Vec<_>>()
            .join(", ");
        outcome(checks.iter().all(|c| c.passed), detail)
    };
    (
        pick(&[
            "subadditivity",
            "periodicity",
            "linear_growth_k",
            "linear_growth_mesh_drift",
            "geodesic_defect_growth",
        ]),
        pick(&[
            "lemma_gap_lower",
            "lemma_gap_non_growing",
            "surgery_success_rate",
        ]),
    )
}

fn solver_cross_check() -> Outcome {
    let spec = HamiltonianSpec::cosine(1, 2.0, &[(1.0, &[1])]).unwrap();
    let l = build_lagrangian(&spec).unwrap();
    let disc = Discretization::new(1, 32, 16, 4.0).unwrap();
    let eps = 0.125;
    let u0 = InitialData::cone(1.0);
    let targets = line_targets(1, 5, 1.0);
    let dp = solve_oscillatory(&u0, &l, &disc, eps, 1.0, &targets).unwrap();
    let fd = solve_fd_oracle(&u0, &spec, eps, 1.0, &targets, &FdGrid::new(eps / 64.0)).unwrap();
    let d = dp.sup_distance(&fd);
    outcome(d <= 0.05, format!("sup |DP - FD| {d:.2e} (limit 0.05)"))
}

fn determinism() -> Outcome {
    let cfg = Config::parse(RATE_1D).unwrap();
    let a = run_rate_sweep(&cfg).map(|r| r.1);
    let b = run_rate_sweep(&cfg).map(|r| r.1);
    match (a, b) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!("{} artifacts compared byte for byte", a.len()),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn report(n: usize, what: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = f();
    let elapsed = start.elapsed();
    let passed = o.passed && limit.map_or(true, |l| elapsed <= l);
    let limit = limit.map_or(String::new(), |l| format!(", limit {}s", l.as_secs()));
    println!(
        "{} criterion {n} {what}: {} [{:.1}s{limit}]",
        if passed { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    passed
}

fn main() {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut ok = true;
    ok &= report(1, "free-case metric", min(1), free_case);
    ok &= report(2, "effective Hamiltonian d=1", min(5), effective_1d);
    ok &= report(3, "cell oracle d=2", min(15), oracle_2d);
    ok &= report(4, "rate d=1", min(10), || rate(RATE_1D, 0.85));
    ok &= report(5, "rate d=2", min(30), || rate(RATE_2D, 0.75));
    let (six, seven) = properties();
    ok &= report(6, "metric properties", None, || six);
    ok &= report(7, "lemma gap d=2", None, || seven);
    ok &= report(
        8,
        "solver vs finite differences",
        min(10),
        solver_cross_check,
    );
    ok &= report(9, "determinism", min(10), determinism);
    if !ok {
        std::process::exit(1);
    }
}
