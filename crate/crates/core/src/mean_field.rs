//! Deterministic mean-field solver on the grid `h · {0, …, M}`.
//!
//! The weight vector evolves by
//! `dw/dt = Σ_{k≥1} Σ_l Σ_{d=1..k} w_k w_l h K(kh, lh, dh) γ^{k,l,d}`, where
//! `γ` removes one unit of weight from bins `k` and `l` and adds one to bins
//! `k - d` and `l + d`. Jumps with `l + d > M` get zero rate; their would-be
//! rate is reported as boundary leak. Every retained jump conserves total
//! weight and first moment, so both are invariants of the discrete system.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::init::Density;
use crate::kernels::{check_k2, Kernel, SampleGrid};
use crate::measures::{w1, GridMeasure, MeasureKind, Trajectory};
use crate::numeric::{integrate, simpson_samples};

/// Largest admissible step relative to the fastest exit rate.
pub const THETA: f64 = 0.5;
/// Steps producing weights below this are rejected.
pub const REJECT_BELOW: f64 = -1e-12;
/// Weights in `(CLIP_ABOVE, 0)` are set to zero.
pub const CLIP_ABOVE: f64 = -1e-14;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanFieldState {
    h: f64,
    weights: Vec<f64>,
    t: f64,
}

impl MeanFieldState {
    pub fn new(h: f64, weights: Vec<f64>, t: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidMeasure(format!("grid spacing {h}")));
        }
        if weights.len() < 2 {
            return Err(Error::GridTooShort("solver grid needs M >= 1".into()));
        }
        Ok(MeanFieldState { h, weights, t })
    }

    /// Place `c` on the grid `h · {0..=m}`. Atoms between grid points are
    /// split between the two neighbours so that total weight and first
    /// moment are unchanged.
    pub fn from_measure(c: &GridMeasure, h: f64, m: usize) -> Result<Self> {
        let mut weights = vec![0.0; m + 1];
        for (x, w) in c.atoms() {
            let pos = x / h;
            let near = pos.round();
            if (pos - near).abs() <= 1e-9 * (1.0 + pos) {
                let j = near as usize;
                if j > m {
                    return Err(Error::GridTooShort(format!("atom at {x} beyond {}", m as f64 * h)));
                }
                weights[j] += w;
            } else {
                let j = pos.floor() as usize;
                if j + 1 > m {
                    return Err(Error::GridTooShort(format!("atom at {x} beyond {}", m as f64 * h)));
                }
                let theta = pos - j as f64;
                weights[j] += w * (1.0 - theta);
                weights[j + 1] += w * theta;
            }
        }
        MeanFieldState::new(h, weights, 0.0)
    }

    /// Cell-wise projection of a density: the mass of `[jh, (j+1)h)` is split
    /// between `j` and `j + 1` to match the cell's first moment.
    pub fn from_density(density: &Density, h: f64, m: usize) -> Result<Self> {
        let top = m as f64 * h;
        let beyond = 1.0 - density.cdf(top);
        if beyond > 1e-12 {
            return Err(Error::GridTooShort(format!(
                "density has mass {beyond:e} beyond {top}"
            )));
        }
        let mut weights = vec![0.0; m + 1];
        for j in 0..m {
            let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
            let mass = density.cell_mass(a, b);
            if mass <= 0.0 {
                continue;
            }
            let first = integrate(|x| x * density.pdf(x), a, b, 1e-15 * (1.0 + b));
            let theta = ((first / mass - a) / h).clamp(0.0, 1.0);
            weights[j] += mass * (1.0 - theta);
            weights[j + 1] += mass * theta;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        MeanFieldState::new(h, weights, 0.0)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Index of the last grid point, `M`.
    pub fn top(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn first_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| k as f64 * self.h * w)
            .sum()
    }

    pub fn to_measure(&self) -> Result<GridMeasure> {
        GridMeasure::new(self.h, self.weights.clone(), MeasureKind::Density)
    }
}

/// Rate tables of the discrete generator for one kernel and grid.
#[derive(Debug)]
pub struct MeanFieldOperator {
    h: f64,
    m: usize,
    kernel: Kernel,
    tables: Option<SeparableTables>,
}

#[derive(Debug)]
struct SeparableTables {
    target: Vec<f64>,
    // `h source(kh, dh)` for `1 <= d <= k`, row `k` starting at `k(k-1)/2`.
    source: Vec<f64>,
    source_sum: Vec<f64>,
}

fn row_start(k: usize) -> usize {
    k * (k - 1) / 2
}

/// Output of one generator evaluation.
#[derive(Clone, Debug, Default)]
pub struct RhsEval {
    pub rhs: Vec<f64>,
    /// Total rate of jumps dropped at the grid edge.
    pub leak_rate: f64,
    /// Largest total exit rate per unit weight over occupied bins.
    pub max_exit_rate: f64,
}

impl MeanFieldOperator {
    pub fn new(kernel: &Kernel, h: f64, m: usize) -> Self {
        let tables = kernel.factors().map(|f| {
            let target = (0..=m).map(|l| (f.target)(l as f64 * h)).collect();
            let mut source = Vec::with_capacity(row_start(m + 1));
            let mut source_sum = vec![0.0; m + 1];
            for (k, sum) in source_sum.iter_mut().enumerate().skip(1) {
                let x = k as f64 * h;
                for d in 1..=k {
                    let v = h * (f.source)(x, d as f64 * h);
                    source.push(v);
                    *sum += v;
                }
            }
            SeparableTables {
                target,
                source,
                source_sum,
            }
        });
        MeanFieldOperator {
            h,
            m,
            kernel: kernel.clone(),
            tables,
        }
    }

    /// Operator on the general `O(M³)` path, ignoring any factorization.
    pub fn general(kernel: &Kernel, h: f64, m: usize) -> Self {
        MeanFieldOperator::new(&kernel.without_factors(), h, m)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn top(&self) -> usize {
        self.m
    }

    pub fn eval(&self, w: &[f64]) -> RhsEval {
        assert_eq!(w.len(), self.m + 1, "weights must match the operator grid");
        match &self.tables {
            Some(t) => self.eval_separable(t, w),
            None => self.eval_general(w),
        }
    }

    fn eval_separable(&self, t: &SeparableTables, w: &[f64]) -> RhsEval {
        let m = self.m;
        let v: Vec<f64> = w.iter().zip(&t.target).map(|(w, a)| w * a).collect();
        let mut p = vec![0.0; m + 1];
        let mut acc = 0.0;
        for (pj, vj) in p.iter_mut().zip(&v) {
            acc += vj;
            *pj = acc;
        }
        let mut u = vec![0.0; m + 1];
        let mut rhs = vec![0.0; m + 1];
        let mut exit = vec![0.0; m + 1];
        let mut leak = 0.0;
        for k in 1..=m {
            let wk = w[k];
            if wk == 0.0 {
                continue;
            }
            let row = &t.source[row_start(k)..row_start(k) + k];
            let mut out = 0.0;
            for (i, &hb) in row.iter().enumerate() {
                let d = i + 1;
                let s = hb * p[m - d];
                out += s;
                rhs[k - d] += wk * s;
                u[d] += wk * hb;
            }
            exit[k] = out;
            leak += wk * (p[m] * t.source_sum[k] - out);
        }
        // V(j) = Σ_{d ≤ j} U(d): target-side exit per unit of v.
        let mut vcum = vec![0.0; m + 1];
        let mut acc = 0.0;
        for j in 1..=m {
            acc += u[j];
            vcum[j] = acc;
        }
        for a in 0..=m {
            let mut inflow = 0.0;
            for d in 1..=a {
                inflow += u[d] * v[a - d];
            }
            rhs[a] += inflow;
            exit[a] += t.target[a] * vcum[m - a];
            rhs[a] -= w[a] * exit[a];
        }
        let max_exit_rate = (0..=m)
            .filter(|&a| w[a] > 0.0)
            .map(|a| exit[a])
            .fold(0.0, f64::max);
        RhsEval {
            rhs,
            leak_rate: leak.max(0.0),
            max_exit_rate,
        }
    }

    fn eval_general(&self, w: &[f64]) -> RhsEval {
        let m = self.m;
        let h = self.h;
        let mut rhs = vec![0.0; m + 1];
        let mut exit = vec![0.0; m + 1];
        let mut leak = 0.0;
        for k in 1..=m {
            if w[k] == 0.0 {
                continue;
            }
            let x = k as f64 * h;
            for l in 0..=m {
                if w[l] == 0.0 {
                    continue;
                }
                let y = l as f64 * h;
                for d in 1..=k {
                    let hk = h * self.kernel.eval(x, y, d as f64 * h);
                    let r = w[k] * w[l] * hk;
                    if l + d > m {
                        leak += r;
                        continue;
                    }
                    rhs[k] -= r;
                    rhs[l] -= r;
                    rhs[k - d] += r;
                    rhs[l + d] += r;
                    exit[k] += w[l] * hk;
                    exit[l] += w[k] * hk;
                }
            }
        }
        let max_exit_rate = (0..=m)
            .filter(|&a| w[a] > 0.0)
            .map(|a| exit[a])
            .fold(0.0, f64::max);
        RhsEval {
            rhs,
            leak_rate: leak,
            max_exit_rate,
        }
    }
}

/// Weight derivative of `state` under `kernel`.
pub fn rhs(state: &MeanFieldState, kernel: &Kernel) -> Vec<f64> {
    MeanFieldOperator::new(kernel, state.h, state.top())
        .eval(&state.weights)
        .rhs
}

/// Result of one accepted RK4 step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: MeanFieldState,
    pub dt: f64,
    pub leak: f64,
    pub rejected: usize,
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// One classical RK4 step of size `min(dt_max, THETA / Λ)`, halved until no
/// weight falls below `REJECT_BELOW`.
pub fn step_with(op: &MeanFieldOperator, state: &MeanFieldState, dt_max: f64) -> Result<StepOutcome> {
    if !(dt_max > 0.0) {
        return Err(Error::StepControl {
            t: state.t,
            reason: format!("dt_max = {dt_max}"),
        });
    }
    let w = &state.weights;
    let k1 = op.eval(w);
    let mut dt = if k1.max_exit_rate > 0.0 {
        dt_max.min(THETA / k1.max_exit_rate)
    } else {
        dt_max
    };
    let mut rejected = 0;
    loop {
        if dt < 1e-12 * dt_max {
            return Err(Error::StepControl {
                t: state.t,
                reason: format!("step {dt:e} underflowed; problem too stiff"),
            });
        }
        let k2 = op.eval(&axpy(w, 0.5 * dt, &k1.rhs));
        let k3 = op.eval(&axpy(w, 0.5 * dt, &k2.rhs));
        let k4 = op.eval(&axpy(w, dt, &k3.rhs));
        let mut next: Vec<f64> = (0..w.len())
            .map(|i| w[i] + dt / 6.0 * (k1.rhs[i] + 2.0 * k2.rhs[i] + 2.0 * k3.rhs[i] + k4.rhs[i]))
            .collect();
        if next.iter().any(|&x| x < REJECT_BELOW) {
            dt *= 0.5;
            rejected += 1;
            continue;
        }
        for x in next.iter_mut() {
            if *x < 0.0 && *x > CLIP_ABOVE {
                *x = 0.0;
            }
        }
        let leak = dt / 6.0
            * (k1.leak_rate + 2.0 * k2.leak_rate + 2.0 * k3.leak_rate + k4.leak_rate);
        return Ok(StepOutcome {
            state: MeanFieldState {
                h: state.h,
                weights: next,
                t: state.t + dt,
            },
            dt,
            leak: leak.max(0.0),
            rejected,
        });
    }
}

/// One RK4 step with a freshly assembled operator.
pub fn step(state: &MeanFieldState, kernel: &Kernel, dt_max: f64) -> Result<MeanFieldState> {
    let op = MeanFieldOperator::new(kernel, state.h, state.top());
    Ok(step_with(&op, state, dt_max)?.state)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    pub h: f64,
    pub m: usize,
    pub dt_max: f64,
    /// Solves whose accumulated boundary leak exceeds this fail.
    pub leak_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            h: 0.025,
            m: 1600,
            dt_max: 0.01,
            leak_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverReport {
    pub boundary_leak: f64,
    /// Largest weak-form residual over `f ∈ {1, x, min(x, 1)}` across the
    /// checkpoint window; `None` when checkpoints do not support Simpson.
    pub max_residual: Option<f64>,
    pub steps: usize,
    pub rejected_steps: usize,
    pub dt_min: f64,
    pub dt_max: f64,
    pub dt_mean: f64,
    pub max_mass_drift: f64,
    pub max_moment_drift: f64,
}

/// Solve from `c0` and record the solution at each checkpoint.
pub fn solve(
    c0: &GridMeasure,
    kernel: &Kernel,
    opts: &SolverOptions,
    t_end: f64,
    checkpoints: &[f64],
) -> Result<(Trajectory, SolverReport)> {
    let start = MeanFieldState::from_measure(c0, opts.h, opts.m)?;
    solve_state(start, kernel, opts, t_end, checkpoints)
}

/// Solve from an already gridded state.
pub fn solve_state(
    start: MeanFieldState,
    kernel: &Kernel,
    opts: &SolverOptions,
    t_end: f64,
    checkpoints: &[f64],
) -> Result<(Trajectory, SolverReport)> {
    if checkpoints.windows(2).any(|w| w[1] < w[0])
        || checkpoints.iter().any(|&t| t < start.t || t > t_end)
    {
        return Err(Error::Checkpoints(format!(
            "checkpoints must be sorted and within [{}, {t_end}]",
            start.t
        )));
    }
    let op = MeanFieldOperator::new(kernel, start.h, start.top());
    let mass0 = start.mass();
    let moment0 = start.first_moment();
    let mut state = start;
    let mut traj = Trajectory::default();
    let mut report = SolverReport {
        dt_min: f64::INFINITY,
        ..SolverReport::default()
    };
    let mut dt_total = 0.0;
    let record = |state: &MeanFieldState, traj: &mut Trajectory, report: &mut SolverReport| -> Result<()> {
        report.max_mass_drift = report.max_mass_drift.max((state.mass() - mass0).abs());
        report.max_moment_drift = report
            .max_moment_drift
            .max((state.first_moment() - moment0).abs());
        traj.push(state.t, state.to_measure()?);
        Ok(())
    };
    let targets = checkpoints.iter().copied().chain(std::iter::once(t_end));
    let n_cp = checkpoints.len();
    for (i, target) in targets.enumerate() {
        while state.t < target {
            let remaining = target - state.t;
            let out = step_with(&op, &state, opts.dt_max.min(remaining))?;
            state = out.state;
            // Land exactly on the target despite rounding in `t + dt`.
            if (target - state.t).abs() <= 1e-12 * (1.0 + target) {
                state.t = target;
            }
            report.boundary_leak += out.leak;
            report.steps += 1;
            report.rejected_steps += out.rejected;
            report.dt_min = report.dt_min.min(out.dt);
            report.dt_max = report.dt_max.max(out.dt);
            dt_total += out.dt;
        }
        if i < n_cp {
            record(&state, &mut traj, &mut report)?;
        }
    }
    if report.steps > 0 {
        report.dt_mean = dt_total / report.steps as f64;
    } else {
        report.dt_min = 0.0;
    }
    if report.boundary_leak > opts.leak_tolerance {
        return Err(Error::BoundaryLeak {
            leak: report.boundary_leak,
            tolerance: opts.leak_tolerance,
        });
    }
    if traj.len() >= 3 {
        let (s, t) = (traj.times[0], traj.times[traj.len() - 1]);
        let tests: [&dyn Fn(f64) -> f64; 3] = [&|_| 1.0, &|x| x, &|x: f64| x.min(1.0)];
        let mut worst: Option<f64> = None;
        for f in tests {
            match weak_residual(&traj, kernel, f, s, t) {
                Ok(r) => worst = Some(worst.map_or(r, |w: f64| w.max(r))),
                Err(Error::Checkpoints(_)) => {
                    worst = None;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        report.max_residual = worst;
    }
    Ok((traj, report))
}

/// `⟨f, rhs(c)⟩ = Q(c)·f` on the solver grid.
pub fn generator_action<F: Fn(f64) -> f64 + ?Sized>(op: &MeanFieldOperator, c: &GridMeasure, f: &F) -> f64 {
    let ev = op.eval(c.weights());
    ev.rhs
        .iter()
        .enumerate()
        .map(|(a, r)| r * f(a as f64 * op.h))
        .sum()
}

/// Both sides of the weak formulation between checkpoints `s` and `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakForm {
    /// `⟨f, c_t - c_s⟩`.
    pub increment: f64,
    /// Simpson rule over all checkpoints in `[s, t]`.
    pub integral: f64,
    /// Simpson rule over every other checkpoint, when available.
    pub coarse_integral: Option<f64>,
}

impl WeakForm {
    pub fn residual(&self) -> f64 {
        (self.increment - self.integral).abs()
    }

    /// `|S_Δ - S_2Δ|`, the refinement estimate of the time-quadrature error.
    pub fn quadrature_error(&self) -> Option<f64> {
        self.coarse_integral.map(|c| (c - self.integral).abs())
    }
}

/// Evaluate both sides of `⟨f, c_t - c_s⟩ = ∫_s^t Q(c_r)·f dr`.
pub fn weak_form<F: Fn(f64) -> f64 + ?Sized>(
    traj: &Trajectory,
    kernel: &Kernel,
    f: &F,
    s: f64,
    t: f64,
) -> Result<WeakForm> {
    let tol = |x: f64| 1e-12 * (1.0 + x.abs());
    let idx: Vec<usize> = (0..traj.len())
        .filter(|&i| traj.times[i] >= s - tol(s) && traj.times[i] <= t + tol(t))
        .collect();
    if !(s < t) || idx.len() < 3 || idx.len().is_multiple_of(2) {
        return Err(Error::Checkpoints(format!(
            "need an odd number (>= 3) of checkpoints in [{s}, {t}], found {}",
            idx.len()
        )));
    }
    let first = idx[0];
    let last = *idx.last().expect("nonempty");
    if (traj.times[first] - s).abs() > tol(s) || (traj.times[last] - t).abs() > tol(t) {
        return Err(Error::Checkpoints("s and t must be checkpoints".into()));
    }
    let spacing = (t - s) / (idx.len() - 1) as f64;
    for (j, &i) in idx.iter().enumerate() {
        if (traj.times[i] - (s + j as f64 * spacing)).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Checkpoints("checkpoints must be uniformly spaced".into()));
        }
    }
    let c0 = &traj.measures[first];
    let op = MeanFieldOperator::new(kernel, c0.eps(), c0.top_class());
    let values: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let c = &traj.measures[i];
            if c.top_class() != op.m || (c.eps() - op.h).abs() > 1e-15 * op.h {
                return Err(Error::Checkpoints("snapshots on different grids".into()));
            }
            Ok(generator_action(&op, c, f))
        })
        .collect::<Result<_>>()?;
    let integral = simpson_samples(&values, spacing).expect("odd count checked");
    let coarse_integral = if (values.len() - 1).is_multiple_of(4) {
        let coarse: Vec<f64> = values.iter().step_by(2).copied().collect();
        simpson_samples(&coarse, 2.0 * spacing)
    } else {
        None
    };
    let dot = |c: &GridMeasure| -> f64 {
        c.weights()
            .iter()
            .enumerate()
            .map(|(a, w)| w * f(a as f64 * c.eps()))
            .sum()
    };
    let increment = dot(&traj.measures[last]) - dot(&traj.measures[first]);
    Ok(WeakForm {
        increment,
        integral,
        coarse_integral,
    })
}

/// `|⟨f, c_t - c_s⟩ - ∫_s^t Q(c_r)·f dr|` with Simpson's rule in time.
pub fn weak_residual<F: Fn(f64) -> f64 + ?Sized>(
    traj: &Trajectory,
    kernel: &Kernel,
    f: &F,
    s: f64,
    t: f64,
) -> Result<f64> {
    Ok(weak_form(traj, kernel, f, s, t)?.residual())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallRow {
    pub t: f64,
    pub w1: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GronwallTable {
    pub constant: f64,
    pub rows: Vec<GronwallRow>,
}

impl GronwallTable {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// `C = 4 ‖φ‖_{1,1} (1 + 2ρ)`.
pub fn gronwall_constant(kernel: &Kernel, rho: f64) -> f64 {
    4.0 * kernel.phi_norm_11() * (1.0 + 2.0 * rho)
}

/// Solve from `c0` and `d0` on one grid and compare `W1(c_t, d_t)` with
/// `e^{Ct} W1(c_0, d_0)`.
pub fn gronwall_diagnostic(
    c0: &GridMeasure,
    d0: &GridMeasure,
    kernel: &Kernel,
    rho: f64,
    opts: &SolverOptions,
    t_end: f64,
    checkpoints: &[f64],
) -> Result<GronwallTable> {
    if !check_k2(kernel, &SampleGrid::default()).passed {
        return Err(Error::KernelNotCompliant(kernel.name().to_string()));
    }
    let (mc, md) = (c0.first_moment(), d0.first_moment());
    if (mc - md).abs() > 1e-9 * (1.0 + mc.abs()) {
        return Err(Error::InvalidMeasure(format!(
            "initial data have different first moments {mc} and {md}"
        )));
    }
    let sc = MeanFieldState::from_measure(c0, opts.h, opts.m)?;
    let sd = MeanFieldState::from_measure(d0, opts.h, opts.m)?;
    let initial = w1(&sc.to_measure()?, &sd.to_measure()?);
    let (tc, _) = solve_state(sc, kernel, opts, t_end, checkpoints)?;
    let (td, _) = solve_state(sd, kernel, opts, t_end, checkpoints)?;
    let constant = gronwall_constant(kernel, rho);
    let rows = tc
        .times
        .iter()
        .zip(tc.measures.iter().zip(&td.measures))
        .map(|(&t, (a, b))| {
            let dist = w1(a, b);
            let bound = (constant * t).exp() * initial;
            GronwallRow {
                t,
                w1: dist,
                bound,
                pass: dist <= bound * (1.0 + 1e-12) + 1e-15,
            }
        })
        .collect();
    Ok(GronwallTable { constant, rows })
}
