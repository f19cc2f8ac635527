//! Study orchestration: configuration, convergence and moment studies, the
//! Aldous modulus statistic, oracle comparisons and kernel certification,
//! with CSV and JSON-lines reporting.
//!
//! Replica `r` of schedule entry `e` draws from stream `(e << 32) | r` of the
//! study seed, and all reductions run in replica order, so outputs are
//! bit-identical for a given configuration regardless of thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{sample_fiber, Density, DensitySpec, Discretization};
use crate::io::{format_f64, write_json_line, write_measure_csv, CheckpointWriter};
use crate::kernels::{
    check_admissible, check_k1, check_k2, estimate_modulus, exchange_gradient_constant,
    AdmissibleMoment, AdmissibleReport, K1Report, K2Report, Kernel, KernelSpec, SampleGrid,
};
use crate::master_oracle::{build_generator, enumerate_states, evolve_law, expected_observable};
use crate::mean_field::{solve_state, MeanFieldState, SolverOptions, SolverReport};
use crate::measures::{moment, w1, GridMeasure, MeasureKind, Trajectory};
use crate::particle_sim::{simulate, Configuration};
use crate::rng::replica_rng;

pub const SCHEMA_CONVERGE: &str = "cgedg.converge.v1";
pub const SCHEMA_ALDOUS: &str = "cgedg.aldous.v1";
pub const SCHEMA_ORACLE: &str = "cgedg.oracle.v1";
pub const SCHEMA_REPLICA: &str = "cgedg.replica.v1";
pub const SCHEMA_SOLUTION: &str = "cgedg.solution.v1";

/// Relative slack allowed between `N eps / L` and `rho`.
pub const RHO_SLACK: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub l: usize,
    pub eps: f64,
    /// Mass units; defaults to `round(rho L / eps)`.
    #[serde(default)]
    pub n: Option<usize>,
}

/// Fully resolved system size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SystemSize {
    pub n: usize,
    pub l: usize,
    pub eps: f64,
}

impl SystemSize {
    pub fn rho(&self) -> f64 {
        self.n as f64 * self.eps / self.l as f64
    }
}

impl ScheduleEntry {
    pub fn resolve(&self, rho: f64) -> SystemSize {
        SystemSize {
            n: self
                .n
                .unwrap_or_else(|| (rho * self.l as f64 / self.eps).round() as usize),
            l: self.l,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub h: f64,
    pub m: usize,
    #[serde(default = "default_dt_max")]
    pub dt_max: f64,
    #[serde(default = "default_leak_tolerance")]
    pub leak_tolerance: f64,
}

fn default_dt_max() -> f64 {
    0.01
}

fn default_leak_tolerance() -> f64 {
    1e-8
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            h: self.h,
            m: self.m,
            dt_max: self.dt_max,
            leak_tolerance: self.leak_tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AldousSection {
    /// Base time `τ` of the increments `c_{τ+δ} - c_τ`.
    pub tau: f64,
    pub deltas: Vec<f64>,
    pub l: usize,
    pub eps: f64,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub replicas: Option<usize>,
}

/// Initial configuration of an oracle instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleStart {
    /// All mass in one cluster.
    Condensed,
    /// Explicit cluster sizes in grid units.
    Sizes(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleInstance {
    pub n: usize,
    pub l: usize,
    #[serde(default = "default_one")]
    pub eps: f64,
    pub start: OracleStart,
    /// Overrides the study kernel for this instance.
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
}

fn default_one() -> f64 {
    1.0
}

/// Observables compared between Monte Carlo and the master equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    /// `⟨1, c⟩`.
    #[serde(rename = "M0", alias = "m0")]
    M0,
    /// `⟨x, c⟩`.
    #[serde(rename = "M1", alias = "m1")]
    M1,
    /// `⟨x², c⟩`.
    #[serde(rename = "M2", alias = "m2")]
    M2,
    /// Indicator that one cluster holds all the mass.
    #[serde(rename = "condensed")]
    Condensed,
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::M0 => "M0",
            Observable::M1 => "M1",
            Observable::M2 => "M2",
            Observable::Condensed => "condensed",
        }
    }

    /// Value on a configuration.
    pub fn on_sizes(&self, eps: f64, sizes: &[usize], n_total: usize) -> f64 {
        let l = sizes.len() as f64;
        match self {
            Observable::M0 => 1.0,
            Observable::M1 => sizes.iter().map(|&s| s as f64 * eps).sum::<f64>() / l,
            Observable::M2 => sizes.iter().map(|&s| (s as f64 * eps).powi(2)).sum::<f64>() / l,
            Observable::Condensed => {
                let top = sizes.iter().copied().max().unwrap_or(0);
                f64::from(top == n_total)
            }
        }
    }
}

fn default_observables() -> Vec<Observable> {
    vec![Observable::M2, Observable::Condensed]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub replicas: usize,
    pub times: Vec<f64>,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    pub instances: Vec<OracleInstance>,
}

fn default_replicas() -> usize {
    64
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_moment_names() -> Vec<String> {
    vec!["x^2".into(), "x^1.5".into(), "(1+x)log(1+x)".into()]
}

/// A study configuration, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kernel: KernelSpec,
    pub rho: f64,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    /// Defaults to the last checkpoint.
    #[serde(default)]
    pub t_end: Option<f64>,
    pub initial: DensitySpec,
    /// Projection of the initial density onto particle configurations.
    #[serde(default)]
    pub discretization: Discretization,
    pub solver: SolverSection,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub aldous: Option<AldousSection>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    /// Moments checked by `check-kernel` and tracked by convergence studies.
    #[serde(default = "default_moment_names")]
    pub moments: Vec<String>,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Parse a moment name: `x^2`, `x^p` for `p ∈ (1, 2]`, `(1+x)log(1+x)` or `x`.
pub fn parse_moment(name: &str) -> Result<AdmissibleMoment> {
    let compact: String = name.chars().filter(|c| !c.is_whitespace()).collect();
    match compact.as_str() {
        "x^2" => return Ok(AdmissibleMoment::square()),
        "(1+x)log(1+x)" | "entropy" => return Ok(AdmissibleMoment::entropy()),
        "x" => return Ok(AdmissibleMoment::linear()),
        _ => {}
    }
    if let Some(p) = compact.strip_prefix("x^") {
        let p: f64 = p
            .parse()
            .map_err(|_| Error::Config(format!("bad moment exponent in `{name}`")))?;
        return AdmissibleMoment::power(p - 1.0);
    }
    Err(Error::Config(format!("unknown moment `{name}`")))
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = StudyConfig::from_toml_str(&text)?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(cfg)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
            .unwrap_or_else(|| self.checkpoints.last().copied().unwrap_or(0.0))
    }

    pub fn sizes(&self) -> Vec<SystemSize> {
        self.schedule.iter().map(|e| e.resolve(self.rho)).collect()
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel.build()
    }

    pub fn density(&self) -> Result<Density> {
        self.initial.build(&self.base_dir)
    }

    pub fn moment_list(&self) -> Result<Vec<AdmissibleMoment>> {
        self.moments.iter().map(|m| parse_moment(m)).collect()
    }

    /// Check the configuration. Returns warnings for conditions that do not
    /// prevent a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        let kernel = self.kernel()?;
        self.density()?;
        self.moment_list()?;
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho = {} must be positive", self.rho));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0])
            || self.checkpoints.iter().any(|&t| !(t >= 0.0 && t <= self.t_end()))
        {
            return bad("checkpoints must be strictly increasing within [0, t_end]".into());
        }
        let s = &self.solver;
        if !(s.h > 0.0 && s.m >= 2 && s.dt_max > 0.0 && s.leak_tolerance >= 0.0) {
            return bad("solver needs h > 0, m >= 2, dt_max > 0, leak_tolerance >= 0".into());
        }
        if self.rho > s.m as f64 * s.h / 4.0 {
            return bad(format!(
                "solver grid top {} leaves too little headroom for rho = {}",
                s.m as f64 * s.h,
                self.rho
            ));
        }
        let sizes = self.sizes();
        for sz in &sizes {
            if sz.l < 2 || !(sz.eps > 0.0) {
                return bad(format!("schedule entry {sz:?} needs L >= 2 and eps > 0"));
            }
            if (sz.rho() - self.rho).abs() > RHO_SLACK * self.rho {
                return bad(format!(
                    "schedule entry (N={}, L={}, eps={}) has N eps / L = {} not within {}% of rho",
                    sz.n,
                    sz.l,
                    sz.eps,
                    sz.rho(),
                    RHO_SLACK * 100.0
                ));
            }
        }
        if sizes.windows(2).any(|w| w[1].eps >= w[0].eps) {
            return bad("eps must decrease along the schedule".into());
        }
        let mut warnings = Vec::new();
        let scaled: Vec<f64> = sizes
            .iter()
            .map(|sz| sz.l as f64 * kernel_modulus(&kernel, sz.eps))
            .collect();
        if scaled.windows(2).any(|w| w[1] >= w[0]) {
            warnings.push(format!(
                "L·ω(eps) does not decrease along the schedule ({scaled:?}); eps may not shrink fast enough"
            ));
        }
        if let Some(a) = &self.aldous {
            if a.deltas.is_empty() || a.deltas.iter().any(|&d| !(d > 0.0)) || a.tau < 0.0 {
                return bad("aldous needs tau >= 0 and positive deltas".into());
            }
        }
        if let Some(o) = &self.oracle {
            if o.replicas < 2 || o.times.iter().any(|&t| t < 0.0) {
                return bad("oracle needs replicas >= 2 and nonnegative times".into());
            }
            for inst in &o.instances {
                if let OracleStart::Sizes(s) = &inst.start {
                    if s.len() != inst.l || s.iter().sum::<usize>() != inst.n {
                        return bad(format!("oracle start {s:?} does not match N={}, L={}", inst.n, inst.l));
                    }
                }
            }
        }
        Ok(warnings)
    }
}

/// Numerical modulus of continuity at scale `eps` of the envelope and of the
/// kernel along each argument, sampled on `[0, 20]`.
pub fn kernel_modulus(kernel: &Kernel, eps: f64) -> f64 {
    let upper = 20.0;
    let mut w = estimate_modulus(|z| kernel.phi(z), eps, upper);
    for &a in &[0.0, 1.0, 4.0] {
        for &b in &[0.5, 2.0] {
            w = w.max(estimate_modulus(|x| kernel.eval(x, a, b), eps, upper));
            w = w.max(estimate_modulus(|y| kernel.eval(b + 4.0, y, b), eps, upper));
            w = w.max(estimate_modulus(|z| kernel.eval(a + 8.0, b, z), eps, a + 8.0));
        }
    }
    w
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Constant `C` of `E M_f(c_t) <= e^{Ct} (E M_f(c_0) + Ct)`:
/// `C = A (1 + rho)²` with `A = 2 (L/(L-1)) C_K Γ eps Σ_{d≥1} φ(d eps) w(d eps)`,
/// where `Γ` is the measured exchange-gradient constant of `f` for weight `w`.
pub fn moment_bound_constant(
    kernel: &Kernel,
    f: &AdmissibleMoment,
    size: SystemSize,
    rho_bar: f64,
) -> f64 {
    let fv = |x: f64| f.value(x);
    let w = |z: f64| {
        if f.name == "x^2" {
            z
        } else {
            1.0 + z + f.value(z)
        }
    };
    let gamma = exchange_gradient_constant(fv, w, &SampleGrid::default());
    let eps = size.eps;
    let mut phi_w = 0.0;
    let mut d = 1usize;
    loop {
        let z = d as f64 * eps;
        let term = kernel.phi(z) * w(z);
        phi_w += eps * term;
        if (z > 50.0 && term < 1e-16 * phi_w.max(1e-300)) || d > 100_000_000 {
            break;
        }
        d += 1;
    }
    let l = size.l as f64;
    let a = 2.0 * l / (l - 1.0) * kernel.c_k() * gamma * phi_w;
    a * (1.0 + rho_bar).powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentColumn {
    pub moment: String,
    pub mean: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub l: usize,
    pub n: usize,
    pub eps: f64,
    pub t: f64,
    pub mean_w1: f64,
    pub se_w1: f64,
    /// W1 between the bin-wise replica average and the solver solution.
    pub w1_of_mean: f64,
    pub mean_m2: f64,
    pub moments: Vec<MomentColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaRecord {
    pub schema: &'static str,
    pub l: usize,
    pub eps: f64,
    pub replica: usize,
    pub t: f64,
    pub w1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub replicas: Vec<ReplicaRecord>,
    pub solver: SolverReport,
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn moment_violations(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| &r.moments)
            .filter(|m| !m.pass)
            .count()
    }

    /// Rows at time `t`, in schedule order.
    pub fn at_time(&self, t: f64) -> Vec<&ConvergenceRow> {
        self.rows.iter().filter(|r| (r.t - t).abs() < 1e-12).collect()
    }
}

/// Mean-field reference solution of a study.
pub fn reference_solution(config: &StudyConfig) -> Result<(Trajectory, SolverReport)> {
    let kernel = config.kernel()?;
    let density = config.density()?;
    let opts = config.solver.options();
    let start = MeanFieldState::from_density(&density, opts.h, opts.m)?;
    solve_state(start, &kernel, &opts, config.t_end(), &config.checkpoints)
}

/// Bin-wise mean of empirical measures on a shared grid.
fn average_measures(measures: &[&GridMeasure]) -> Result<GridMeasure> {
    let eps = measures[0].eps();
    let len = measures.iter().map(|m| m.weights().len()).max().unwrap_or(1);
    let mut acc = vec![0.0; len];
    for m in measures {
        for (a, w) in acc.iter_mut().zip(m.weights()) {
            *a += w;
        }
    }
    let r = measures.len() as f64;
    acc.iter_mut().for_each(|a| *a /= r);
    GridMeasure::new(eps, acc, MeasureKind::Density)
}

struct CsvSink {
    out: BufWriter<File>,
}

impl CsvSink {
    fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "schema,{}", header.join(","))?;
        Ok(CsvSink { out })
    }

    fn row(&mut self, schema: &str, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{schema},{}", fields.join(","))?;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Law-of-large-numbers study: per schedule entry and checkpoint, the
/// replica mean of `W1(empirical, solver)` and ensemble moments against
/// their propagation bounds. With `out`, rows are flushed after each entry
/// to `converge.csv` and per-replica distances to `converge_replicas.jsonl`.
pub fn run_convergence(config: &StudyConfig, out: Option<&Path>) -> Result<ConvergenceReport> {
    let warnings = config.validate()?;
    for w in &warnings {
        warn!("{w}");
    }
    let kernel = config.kernel()?;
    let density = config.density()?;
    let moments = config.moment_list()?;
    let sizes = config.sizes();
    let rho_bar = sizes.iter().map(|s| s.rho()).fold(config.rho, f64::max);
    let (reference, solver) = reference_solution(config)?;
    let t_end = config.t_end();

    let mut csv = match out {
        Some(dir) => {
            let mut header = vec!["L", "N", "eps", "t", "mean_W1", "se_W1", "W1_of_mean", "mean_M2"];
            let names: Vec<String> = moments
                .iter()
                .flat_map(|m| {
                    [
                        format!("mean[{}]", m.name),
                        format!("bound[{}]", m.name),
                        format!("pass[{}]", m.name),
                    ]
                })
                .collect();
            header.extend(names.iter().map(String::as_str));
            Some(CsvSink::create(&dir.join("converge.csv"), &header)?)
        }
        None => None,
    };
    let mut jsonl = match out {
        Some(dir) => Some(BufWriter::new(File::create(dir.join("converge_replicas.jsonl"))?)),
        None => None,
    };

    let mut report = ConvergenceReport {
        rows: Vec::new(),
        replicas: Vec::new(),
        solver,
        warnings,
    };
    for (entry, size) in sizes.iter().enumerate() {
        info!("convergence entry N={} L={} eps={}", size.n, size.l, size.eps);
        let c0 = config.discretization.apply(&density, size.n, size.l, size.eps)?;
        let trajectories: Vec<Trajectory> = (0..config.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(config.seed, ((entry as u64) << 32) | r as u64);
                let start = sample_fiber(&c0, &mut rng)?;
                simulate(start, &kernel, t_end, &config.checkpoints, &mut rng)
            })
            .collect::<Result<_>>()?;
        let constants: Vec<f64> = moments
            .iter()
            .map(|m| moment_bound_constant(&kernel, m, *size, rho_bar))
            .collect();
        let initial_moments: Vec<f64> = moments.iter().map(|m| moment(&c0, |x| m.value(x))).collect();
        let mut entry_rows = Vec::new();
        let mut entry_records = Vec::new();
        for (ci, &t) in config.checkpoints.iter().enumerate() {
            let solution = &reference.measures[ci];
            let snaps: Vec<&GridMeasure> = trajectories.iter().map(|tr| &tr.measures[ci]).collect();
            let dists: Vec<f64> = snaps.iter().map(|s| w1(s, solution)).collect();
            for (r, &d) in dists.iter().enumerate() {
                entry_records.push(ReplicaRecord {
                    schema: SCHEMA_REPLICA,
                    l: size.l,
                    eps: size.eps,
                    replica: r,
                    t,
                    w1: d,
                });
            }
            let (mean_w1, se_w1) = mean_se(&dists);
            let avg = average_measures(&snaps)?;
            let m2: Vec<f64> = snaps.iter().map(|s| moment(s, |x| x * x)).collect();
            let cols = moments
                .iter()
                .zip(constants.iter().zip(&initial_moments))
                .map(|(m, (&c, &m0))| {
                    let vals: Vec<f64> = snaps.iter().map(|s| moment(s, |x| m.value(x))).collect();
                    let (mean, _) = mean_se(&vals);
                    let bound = (c * t).exp() * (m0 + c * t);
                    MomentColumn {
                        moment: m.name.clone(),
                        mean,
                        bound,
                        pass: mean <= bound * (1.0 + 1e-12),
                    }
                })
                .collect();
            entry_rows.push(ConvergenceRow {
                l: size.l,
                n: size.n,
                eps: size.eps,
                t,
                mean_w1,
                se_w1,
                w1_of_mean: w1(&avg, solution),
                mean_m2: mean_se(&m2).0,
                moments: cols,
            });
        }
        if let Some(sink) = csv.as_mut() {
            for row in &entry_rows {
                let mut fields = vec![
                    row.l.to_string(),
                    row.n.to_string(),
                    format_f64(row.eps),
                    format_f64(row.t),
                    format_f64(row.mean_w1),
                    format_f64(row.se_w1),
                    format_f64(row.w1_of_mean),
                    format_f64(row.mean_m2),
                ];
                for c in &row.moments {
                    fields.push(format_f64(c.mean));
                    fields.push(format_f64(c.bound));
                    fields.push(c.pass.to_string());
                }
                sink.row(SCHEMA_CONVERGE, &fields)?;
            }
            sink.flush()?;
        }
        if let Some(j) = jsonl.as_mut() {
            for rec in &entry_records {
                write_json_line(j, rec)?;
            }
            j.flush()?;
        }
        report.rows.extend(entry_rows);
        report.replicas.extend(entry_records);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AldousRow {
    pub delta: f64,
    pub mean_w1: f64,
    pub se_w1: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AldousTable {
    pub tau: f64,
    pub rows: Vec<AldousRow>,
}

impl AldousTable {
    /// Largest ratio over smallest ratio.
    pub fn spread(&self) -> f64 {
        let max = self.rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
        let min = self.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            1.0
        } else {
            max / min
        }
    }

    pub fn passed(&self) -> bool {
        self.spread() <= 2.0
    }
}

/// Mean of `W1(c_{τ+δ}, c_τ)` over replicas for each `δ`, and its ratio to `√δ`.
///
/// Replicas are simulated once with checkpoints at `τ` and every `τ + δ`.
/// For `δ` well below the mean gap between jumps a single replica often
/// shows no change, so the ratio is only meaningful for ensembles.
pub fn aldous_diagnostic(config: &StudyConfig, deltas: &[f64], out: Option<&Path>) -> Result<AldousTable> {
    let section = config
        .aldous
        .as_ref()
        .ok_or_else(|| Error::Config("missing [aldous] section".into()))?;
    if deltas.is_empty() || deltas.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Config("deltas must be positive".into()));
    }
    let kernel = config.kernel()?;
    let density = config.density()?;
    let size = ScheduleEntry {
        l: section.l,
        eps: section.eps,
        n: section.n,
    }
    .resolve(config.rho);
    let replicas = section.replicas.unwrap_or(config.replicas);
    let tau = section.tau;
    let mut times: Vec<f64> = std::iter::once(tau)
        .chain(deltas.iter().map(|d| tau + d))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_end = *times.last().expect("nonempty");
    let c0 = config.discretization.apply(&density, size.n, size.l, size.eps)?;
    let trajectories: Vec<Trajectory> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(config.seed, (u64::from(u32::MAX) << 32) | r as u64);
            let start = sample_fiber(&c0, &mut rng)?;
            simulate(start, &kernel, t_end, &times, &mut rng)
        })
        .collect::<Result<_>>()?;
    let rows = deltas
        .iter()
        .map(|&delta| {
            let dists: Vec<f64> = trajectories
                .iter()
                .map(|tr| {
                    let a = tr.at(tau).expect("tau recorded");
                    let b = tr.at(tau + delta).expect("tau + delta recorded");
                    w1(a, b)
                })
                .collect();
            let (mean_w1, se_w1) = mean_se(&dists);
            AldousRow {
                delta,
                mean_w1,
                se_w1,
                ratio: mean_w1 / delta.sqrt(),
            }
        })
        .collect();
    let table = AldousTable { tau, rows };
    if let Some(dir) = out {
        let mut sink = CsvSink::create(&dir.join("aldous.csv"), &["delta", "mean_W1", "se_W1", "ratio"])?;
        for r in &table.rows {
            sink.row(
                SCHEMA_ALDOUS,
                &[
                    format_f64(r.delta),
                    format_f64(r.mean_w1),
                    format_f64(r.se_w1),
                    format_f64(r.ratio),
                ],
            )?;
        }
        sink.flush()?;
    }
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRecord {
    pub schema: &'static str,
    pub instance: String,
    pub observable: String,
    pub t: f64,
    pub oracle: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z_score: f64,
}

fn z_score(mc: f64, se: f64, oracle: f64) -> f64 {
    let diff = mc - oracle;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * (1.0 + oracle.abs()) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Compare Monte Carlo means with the master-equation law for each tiny
/// instance, observable and time.
pub fn run_oracle_suite(config: &StudyConfig, out: Option<&Path>) -> Result<Vec<OracleRecord>> {
    let section = config
        .oracle
        .as_ref()
        .ok_or_else(|| Error::Config("missing [oracle] section".into()))?;
    let mut times = section.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut records = Vec::new();
    for (idx, inst) in section.instances.iter().enumerate() {
        let kernel = match &inst.kernel {
            Some(spec) => spec.build()?,
            None => config.kernel()?,
        };
        let sizes = match &inst.start {
            OracleStart::Condensed => {
                let mut s = vec![0; inst.l];
                s[0] = inst.n;
                s
            }
            OracleStart::Sizes(s) => s.clone(),
        };
        let name = format!("N={},L={},eps={},kernel={}", inst.n, inst.l, inst.eps, kernel.name());
        info!("oracle instance {name}");
        let space = enumerate_states(inst.n, inst.l, inst.eps)?;
        let gen = build_generator(&space, &kernel);
        let start = space
            .index_of_sizes(&sizes)
            .ok_or_else(|| Error::Config(format!("start {sizes:?} is not a state of {name}")))?;
        let mut p0 = vec![0.0; space.len()];
        p0[start] = 1.0;
        let laws: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| evolve_law(&gen, &p0, t))
            .collect::<Result<_>>()?;

        let config0 = Configuration::new(inst.eps, sizes)?;
        // values[replica][time][observable]
        let values: Vec<Vec<Vec<f64>>> = (0..section.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = replica_rng(config.seed, ((idx as u64 + 1) << 40) | r as u64);
                let mut sim = crate::particle_sim::Simulator::new(config0.clone(), &kernel)?;
                let mut per_time = Vec::with_capacity(times.len());
                for &t in &times {
                    sim.advance_to(t, &mut rng)?;
                    let sz = sim.config().sizes();
                    per_time.push(
                        section
                            .observables
                            .iter()
                            .map(|o| o.on_sizes(inst.eps, sz, inst.n))
                            .collect(),
                    );
                }
                Ok(per_time)
            })
            .collect::<Result<_>>()?;
        for (ti, &t) in times.iter().enumerate() {
            for (oi, obs) in section.observables.iter().enumerate() {
                let oracle = match obs {
                    Observable::M0 => expected_observable(&space, &laws[ti], |_| 1.0),
                    Observable::M1 => expected_observable(&space, &laws[ti], |x| x),
                    Observable::M2 => expected_observable(&space, &laws[ti], |x| x * x),
                    Observable::Condensed => (0..space.len())
                        .filter(|&s| space.largest(s) == inst.n)
                        .map(|s| laws[ti][s])
                        .sum(),
                };
                let samples: Vec<f64> = values.iter().map(|v| v[ti][oi]).collect();
                let (mc_mean, mc_se) = mean_se(&samples);
                records.push(OracleRecord {
                    schema: SCHEMA_ORACLE,
                    instance: name.clone(),
                    observable: obs.name().to_string(),
                    t,
                    oracle,
                    mc_mean,
                    mc_se,
                    z_score: z_score(mc_mean, mc_se, oracle),
                });
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("oracle.jsonl"))?);
        for r in &records {
            write_json_line(&mut f, r)?;
        }
        f.flush()?;
    }
    Ok(records)
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelCertificate {
    pub k1: K1Report,
    pub k2: K2Report,
    pub moments: Vec<AdmissibleReport>,
    pub phi_norm_11: f64,
}

impl KernelCertificate {
    pub fn passed(&self) -> bool {
        self.k1.passed && self.k2.passed && self.moments.iter().all(|m| m.passed)
    }
}

/// Run the kernel and moment checkers for a study.
pub fn check_kernel(config: &StudyConfig, out: Option<&Path>) -> Result<KernelCertificate> {
    let kernel = config.kernel()?;
    let grid = SampleGrid::default();
    let cert = KernelCertificate {
        k1: check_k1(&kernel, &grid),
        k2: check_k2(&kernel, &grid),
        moments: config
            .moment_list()?
            .iter()
            .map(|m| check_admissible(m, &grid))
            .collect(),
        phi_norm_11: kernel.phi_norm_11(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("check_kernel.json"))?);
        serde_json::to_writer_pretty(&mut f, &cert)?;
        f.write_all(b"\n")?;
        f.flush()?;
    }
    Ok(cert)
}

/// Solve the mean-field equation for a study and write the solution at every
/// checkpoint (CSV and binary checkpoints) plus the solver report.
pub fn run_solve(config: &StudyConfig, out: Option<&Path>) -> Result<(Trajectory, SolverReport)> {
    let (traj, report) = reference_solution(config)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut sink = CsvSink::create(&dir.join("solution.csv"), &["t", "mass", "weight"])?;
        let mut ckpt = CheckpointWriter::create(dir, "solution")?;
        for (&t, mu) in traj.times.iter().zip(&traj.measures) {
            for (k, w) in mu.weights().iter().enumerate() {
                sink.row(SCHEMA_SOLUTION, &[format_f64(t), format_f64(mu.mass(k)), format_f64(*w)])?;
            }
            ckpt.append(0, t, mu)?;
        }
        sink.flush()?;
        ckpt.finish()?;
        let mut f = BufWriter::new(File::create(dir.join("solver_report.json"))?);
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
        f.flush()?;
        if let Some(last) = traj.measures.last() {
            write_measure_csv(File::create(dir.join("final_measure.csv"))?, last)?;
        }
    }
    Ok((traj, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
rho = 1.0
replicas = 4
seed = 7
checkpoints = [0.0, 0.5, 1.0]

[kernel]
name = "expdiff"

[initial]
kind = "exponential"
rate = 1.0

[solver]
h = 0.1
m = 400

[[schedule]]
l = 20
eps = 0.5

[[schedule]]
l = 40
eps = 0.25
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = StudyConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(cfg.sizes()[1], SystemSize { n: 160, l: 40, eps: 0.25 });
        assert_eq!(cfg.t_end(), 1.0);
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.schedule[0].n = Some(60);
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.schedule.swap(0, 1);
        assert!(bad.validate().is_err());
        assert!(StudyConfig::from_toml_str("rho = 1").is_err());
        assert!(StudyConfig::from_toml_str(&format!("{SAMPLE}\nbogus = 1")).is_err());
    }

    #[test]
    fn moment_names() {
        assert_eq!(parse_moment("x^1.5").unwrap().name, "x^1.5");
        assert_eq!(parse_moment("(1+x) log(1+x)").unwrap().name, "(1+x)log(1+x)");
        assert!(parse_moment("x^3").is_err());
        assert!(parse_moment("sin").is_err());
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(1.0, 0.0, 1.0), 0.0);
        assert_eq!(z_score(1.0, 0.5, 0.0), 2.0);
        assert!(z_score(1.0, 0.0, 0.0).is_infinite());
    }

    #[test]
    fn convergence_is_reproducible() {
        let cfg = StudyConfig::from_toml_str(SAMPLE).unwrap();
        let a = run_convergence(&cfg, None).unwrap();
        let b = run_convergence(&cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 6);
        assert_eq!(a.moment_violations(), 0);
    }
}
