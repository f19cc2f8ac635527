//! Acceptance suite: runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use cgedg::harness::{
    aldous_diagnostic, run_convergence, run_oracle_suite, OracleRecord, StudyConfig,
};
use cgedg::init::{
    discretize_density, entropy_bound, fiber_density_scale, initial_entropy, sample_fiber, Density,
    ReferenceMeasure,
};
use cgedg::kernels::{check_admissible, check_k1, check_k2, AdmissibleMoment, SampleGrid};
use cgedg::mean_field::{
    gronwall_diagnostic, solve_state, step_with, weak_form, MeanFieldOperator, MeanFieldState,
    SolverOptions,
};
use cgedg::particle_sim::Simulator;
use cgedg::rng::replica_rng;
use cgedg::{builtin_kernel, GridMeasure, Kernel, MeasureKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn expdiff() -> Kernel {
    builtin_kernel("expdiff", &Default::default()).unwrap()
}

fn config(extra: &str) -> StudyConfig {
    let text = format!(
        r#"
rho = 1.0
seed = 20240917
replicas = 64
checkpoints = [0.0, 0.5, 1.0]

[kernel]
name = "expdiff"

[initial]
kind = "exponential"
rate = 1.0

[solver]
h = 0.025
m = 1600
dt_max = 0.01
{extra}
"#
    );
    StudyConfig::from_toml_str(&text).unwrap()
}

fn c1_conservation() -> Outcome {
    let kernel = expdiff();
    let (n, l, eps) = (10_000usize, 1_000usize, 0.1);
    let density = Density::exponential(1.0).unwrap();
    let c0 = discretize_density(&density, n, l, eps).unwrap();
    let mut rng = replica_rng(1, 0);
    let start = sample_fiber(&c0, &mut rng).unwrap();
    let mut sim = Simulator::new(start, &kernel).unwrap();
    let mut broken = 0usize;
    for _ in 0..1_000_000 {
        sim.step(&mut rng).unwrap();
        if sim.config().sizes().iter().sum::<usize>() != n {
            broken += 1;
        }
    }
    let s0 = MeanFieldState::from_density(&density, 0.05, 800).unwrap();
    let op = MeanFieldOperator::new(&kernel, 0.05, 800);
    let (m0, m1) = (s0.mass(), s0.first_moment());
    let mut s = s0;
    let (mut dm0, mut dm1) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        s = step_with(&op, &s, 0.01).unwrap().state;
        dm0 = dm0.max((s.mass() - 1.0).abs()).max((s.mass() - m0).abs());
        dm1 = dm1.max((s.first_moment() - m1).abs());
    }
    Outcome {
        pass: broken == 0 && dm0 <= 1e-10 && dm1 <= 1e-10,
        detail: format!(
            "{} jumps, {broken} mass violations; solver max |M0-1| = {dm0:.2e}, |dM1| = {dm1:.2e}",
            sim.events()
        ),
    }
}

fn c2_two_state() -> Outcome {
    let cfg = config(
        r#"
[oracle]
replicas = 100000
times = [1.0]
observables = ["condensed"]

[[oracle.instances]]
n = 2
l = 2
eps = 1.0
start = { sizes = [1, 1] }
kernel = { name = "flat" }
"#,
    );
    let rec = run_oracle_suite(&cfg, None).unwrap().remove(0);
    let exact = 2.0 / 3.0 * (1.0 - (-3.0f64).exp());
    let oracle_ok = (rec.oracle - exact).abs() < 1e-9;
    let mc_ok = (rec.mc_mean - exact).abs() <= 3.0 * rec.mc_se;
    Outcome {
        pass: oracle_ok && mc_ok,
        detail: format!(
            "P(condensed, t=1): exact {exact:.5}, master equation {:.5}, MC {:.5} ± {:.5}",
            rec.oracle, rec.mc_mean, rec.mc_se
        ),
    }
}

fn c3_master_suite() -> Outcome {
    let cfg = config(
        r#"
[oracle]
replicas = 100000
times = [0.5, 2.0]
observables = ["M2", "condensed"]

[[oracle.instances]]
n = 3
l = 2
start = "condensed"

[[oracle.instances]]
n = 4
l = 3
start = "condensed"

[[oracle.instances]]
n = 6
l = 3
start = "condensed"
"#,
    );
    let recs: Vec<OracleRecord> = run_oracle_suite(&cfg, None).unwrap();
    let worst = recs.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
    Outcome {
        pass: recs.len() == 12 && worst <= 3.0,
        detail: format!("{} comparisons, max |z| = {worst:.2}", recs.len()),
    }
}

fn lln_config() -> StudyConfig {
    config(
        r#"
[[schedule]]
l = 50
eps = 0.1

[[schedule]]
l = 200
eps = 0.05

[[schedule]]
l = 800
eps = 0.025
"#,
    )
}

fn c4_c5_lln_and_moments() -> (Outcome, Outcome) {
    let mut cfg = lln_config();
    cfg.moments = vec!["x^2".into(), "(1+x)log(1+x)".into()];
    let report = run_convergence(&cfg, None).unwrap();
    let at1: Vec<f64> = report.at_time(1.0).iter().map(|r| r.mean_w1).collect();
    let decreasing = at1.windows(2).all(|w| w[1] < w[0]);
    let ratio = at1[2] / at1[0];
    let lln = Outcome {
        pass: at1.len() == 3 && decreasing && ratio <= 0.5,
        detail: format!("mean W1 at t=1 for L=50,200,800: {at1:.4?}; final/first = {ratio:.3}"),
    };
    let checked = report.rows.iter().map(|r| r.moments.len()).sum::<usize>();
    let violations = report.moment_violations();
    let tightest = report
        .rows
        .iter()
        .flat_map(|r| &r.moments)
        .map(|m| m.mean / m.bound)
        .fold(0.0, f64::max);
    let moments = Outcome {
        pass: checked == 18 && violations == 0,
        detail: format!("{checked} bound checks, {violations} violations, max mean/bound = {tightest:.3}"),
    };
    (lln, moments)
}

fn perturbed(base: &MeanFieldState, kind: usize, amount: f64) -> GridMeasure {
    let h = base.h();
    let idx = |x: f64| (x / h).round() as usize;
    let mut q = vec![0.0; base.top() + 1];
    match kind {
        0 => q[idx(1.0)] = 1.0,
        1 => {
            q[idx(0.5)] = 0.5;
            q[idx(1.5)] = 0.5;
        }
        2 => {
            q[0] = 0.5;
            q[idx(2.0)] = 0.5;
        }
        3 => {
            // Uniform on [0, 2] at grid points, symmetric about 1.
            let top = idx(2.0);
            for v in q.iter_mut().take(top + 1) {
                *v = 1.0 / (top + 1) as f64;
            }
        }
        _ => {
            q[idx(0.25)] = 0.75;
            q[idx(3.25)] = 0.25;
        }
    }
    let w: Vec<f64> = base
        .weights()
        .iter()
        .zip(&q)
        .map(|(c, p)| (1.0 - amount) * c + amount * p)
        .collect();
    GridMeasure::new(h, w, MeasureKind::Density).unwrap()
}

fn c6_gronwall() -> Outcome {
    let kernel = expdiff();
    let opts = SolverOptions {
        h: 0.05,
        m: 800,
        dt_max: 0.01,
        leak_tolerance: 1e-8,
    };
    let base = MeanFieldState::from_density(&Density::exponential(1.0).unwrap(), opts.h, opts.m).unwrap();
    let c0 = base.to_measure().unwrap();
    let cps: Vec<f64> = (0..=8).map(|i| i as f64 * 0.25).collect();
    let mut passed = 0;
    let mut worst = 0.0f64;
    for (kind, amount) in [(0, 0.05), (1, 0.1), (2, 0.02), (3, 0.2), (4, 0.1)] {
        let d0 = perturbed(&base, kind, amount);
        let table = gronwall_diagnostic(&c0, &d0, &kernel, 1.0, &opts, 2.0, &cps).unwrap();
        if table.passed() && table.rows.len() == cps.len() {
            passed += 1;
        }
        for r in &table.rows {
            if r.bound > 0.0 {
                worst = worst.max(r.w1 / r.bound);
            }
        }
    }
    Outcome {
        pass: passed == 5,
        detail: format!("{passed}/5 pairs within e^(Ct) W1(c0,d0), C = 24; max W1/bound = {worst:.3e}"),
    }
}

fn c7_weak_residual() -> Outcome {
    let kernel = expdiff();
    let opts = SolverOptions {
        h: 0.05,
        m: 800,
        dt_max: 0.005,
        leak_tolerance: 1e-8,
    };
    let start = MeanFieldState::from_density(&Density::exponential(1.0).unwrap(), opts.h, opts.m).unwrap();
    let cps: Vec<f64> = (0..=32).map(|i| i as f64 / 32.0).collect();
    let (traj, _) = solve_state(start, &kernel, &opts, 1.0, &cps).unwrap();
    let exact: [&dyn Fn(f64) -> f64; 2] = [&|_| 1.0, &|x| x];
    let exact_res = exact
        .iter()
        .map(|f| weak_form(&traj, &kernel, *f, 0.0, 1.0).unwrap().residual())
        .fold(0.0, f64::max);
    let lipschitz: [(&str, &dyn Fn(f64) -> f64); 5] = [
        ("min(x,1)", &|x: f64| x.min(1.0)),
        ("min(x,2.5)", &|x: f64| x.min(2.5)),
        ("1-exp(-x)", &|x: f64| -(-x).exp_m1()),
        ("sin(x)", &|x: f64| x.sin()),
        ("x/(1+x)", &|x: f64| x / (1.0 + x)),
    ];
    let mut ok = exact_res <= 1e-12;
    let mut parts = Vec::new();
    for (name, f) in lipschitz {
        let wf = weak_form(&traj, &kernel, f, 0.0, 1.0).unwrap();
        let q = wf.quadrature_error().unwrap();
        ok &= wf.residual() <= 10.0 * q;
        parts.push(format!("{name}: {:.1e}/{q:.1e}", wf.residual()));
    }
    Outcome {
        pass: ok,
        detail: format!("f in {{1,x}}: {exact_res:.1e}; residual/quadrature error {}", parts.join(", ")),
    }
}

fn c8_entropy() -> Outcome {
    let density = Density::exponential(1.0).unwrap();
    let kappa_hat = 1.0 / density.sup_norm();
    let b: f64 = 1.0;
    let limit = -kappa_hat.ln() - b.ln() + 1.0 + 0.1;
    let reference = |eps: f64| ReferenceMeasure::new(eps, b).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut finest_scale = 0.0;
    for (l, inv_eps) in [(100usize, 10usize), (400, 20), (1600, 40)] {
        let eps = 1.0 / inv_eps as f64;
        let n = l * inv_eps;
        let c = discretize_density(&density, n, l, eps).unwrap();
        let h = initial_entropy(&c, &reference(eps)).unwrap();
        let scale = fiber_density_scale(&c).unwrap();
        let display = entropy_bound(&c, b).unwrap();
        // 1 - e^{-b eps} >= b eps e^{-b eps / 2}, so the display bound holds up to b eps / 2.
        ok &= h <= limit && h <= display + b * eps / 2.0 + 1e-12;
        finest_scale = scale;
        parts.push(format!("L={l}: H/L={h:.4}, eps|F|^(1/L)={scale:.4}"));
    }
    ok &= finest_scale >= kappa_hat - 0.05;
    Outcome {
        pass: ok,
        detail: format!("limit {limit:.2}; {}", parts.join("; ")),
    }
}

fn c9_aldous() -> Outcome {
    let cfg = config(
        r#"
[aldous]
tau = 1.0
deltas = [0.4, 0.2, 0.1, 0.05]
l = 200
eps = 0.05
replicas = 128
"#,
    );
    let deltas = cfg.aldous.as_ref().unwrap().deltas.clone();
    let table = aldous_diagnostic(&cfg, &deltas, None).unwrap();
    let ratios: Vec<f64> = table.rows.iter().map(|r| r.ratio).collect();
    Outcome {
        pass: table.passed(),
        detail: format!("ratios W1/sqrt(delta) = {ratios:.4?}; max/min = {:.3}", table.spread()),
    }
}

fn c10_checkers() -> Outcome {
    let grid = SampleGrid::default();
    let kernel = expdiff();
    let k1 = check_k1(&kernel, &grid);
    let k2 = check_k2(&kernel, &grid);
    let k1_all = k1.records.iter().all(|r| r.pass);
    let k2_all = k2.records.iter().all(|r| r.pass);
    let p15 = AdmissibleMoment::power(0.5).unwrap();
    let ent = AdmissibleMoment::entropy();
    let unit_constants = ent.c1 == 1.0 && ent.c2 == 1.0;
    let a = check_admissible(&p15, &grid);
    let e = check_admissible(&ent, &grid);
    Outcome {
        pass: k1.passed && k2.passed && k1_all && k2_all && a.passed && e.passed && unit_constants,
        detail: format!(
            "K1 {} ({} pts), K2 {} ({} pts), x^1.5 {}, (1+x)log(1+x) {} with C1=C2=1",
            k1.passed,
            k1.records.len(),
            k2.passed,
            k2.records.len(),
            a.passed,
            e.passed
        ),
    }
}

fn report(id: usize, title: &str, limit: Option<Duration>, elapsed: Duration, o: &Outcome) -> bool {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = o.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    println!(
        "criterion {id:>2} {title:<22} {} [{:.1}s{budget}] {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        o.detail
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut all = true;
    let (o, d) = timed(c1_conservation);
    all &= report(1, "conservation", Some(Duration::from_secs(30)), d, &o);
    let (o, d) = timed(c2_two_state);
    all &= report(2, "two-state oracle", Some(Duration::from_secs(60)), d, &o);
    let (o, d) = timed(c3_master_suite);
    all &= report(3, "master-equation suite", Some(Duration::from_secs(300)), d, &o);
    let ((lln, moments), d) = timed(c4_c5_lln_and_moments);
    all &= report(4, "law of large numbers", Some(Duration::from_secs(600)), d, &lln);
    all &= report(5, "moment propagation", None, d, &moments);
    let (o, d) = timed(c6_gronwall);
    all &= report(6, "gronwall uniqueness", None, d, &o);
    let (o, d) = timed(c7_weak_residual);
    all &= report(7, "weak-form residual", None, d, &o);
    let (o, d) = timed(c8_entropy);
    all &= report(8, "entropy and density", None, d, &o);
    let (o, d) = timed(c9_aldous);
    all &= report(9, "aldous modulus", None, d, &o);
    let (o, d) = timed(c10_checkers);
    all &= report(10, "kernel/moment checks", None, d, &o);
    if !all {
        std::process::exit(1);
    }
}
