//! Exchange kernels `K(x, y, z)`: the rate density for a cluster of mass `x`
//! to hand mass `z` to a cluster of mass `y`.
//!
//! Every kernel carries an envelope `phi` and constant `c_k` with
//! `K(x, y, z) <= c_k (1 + x)(1 + y) phi(z)`. By convention `K(x, y, z) = 0`
//! whenever `z > x`, so the microscopic sum over exchange amounts and the
//! class-aggregated sum over `d = 1..k` coincide.
//!
//! The module also houses the admissible moment functions used for moment
//! propagation and the diagnostics that check both against their defining
//! inequalities on sample grids.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::measures::exchange_gradient;
use crate::numeric::{integrate, integrate_half_line, logspace};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Factorisation `K(x, y, z) = target(y) * source(x, z)`.
///
/// All built-in kernels have this form; solvers use it to avoid the cubic
/// cost of a general three-argument kernel.
#[derive(Clone)]
pub struct Separable {
    pub target: ScalarFn,
    pub source: PairFn,
}

#[derive(Clone)]
pub struct Kernel {
    name: String,
    eval: KernelFn,
    phi: ScalarFn,
    c_k: f64,
    separable: Option<Separable>,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("c_k", &self.c_k)
            .field("separable", &self.separable.is_some())
            .finish()
    }
}

impl Kernel {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        c_k: f64,
    ) -> Self {
        Kernel {
            name: name.into(),
            eval: Arc::new(eval),
            phi: Arc::new(phi),
            c_k,
            separable: None,
        }
    }

    /// Build a kernel from its factorisation `target(y) * source(x, z)`.
    /// `source` must already vanish for `z > x`.
    pub fn separable(
        name: impl Into<String>,
        target: impl Fn(f64) -> f64 + Send + Sync + 'static,
        source: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        c_k: f64,
    ) -> Self {
        let target: ScalarFn = Arc::new(target);
        let source: PairFn = Arc::new(source);
        let (t, s) = (target.clone(), source.clone());
        Kernel {
            name: name.into(),
            eval: Arc::new(move |x, y, z| t(y) * s(x, z)),
            phi: Arc::new(phi),
            c_k,
            separable: Some(Separable { target, source }),
        }
    }

    pub fn zero() -> Self {
        Kernel::separable("zero", |_| 0.0, |_, _| 0.0, |_| 0.0, 1.0)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
        (self.eval)(x, y, z)
    }

    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        (self.phi)(z)
    }

    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn factors(&self) -> Option<&Separable> {
        self.separable.as_ref()
    }

    /// Drops the factorisation so callers take their general code path.
    pub fn without_factors(&self) -> Kernel {
        Kernel {
            separable: None,
            ..self.clone()
        }
    }

    /// `∫₀^∞ (1 + z) phi(z) dz`, the weighted envelope norm entering the
    /// uniqueness constant.
    pub fn phi_norm_11(&self) -> f64 {
        integrate_half_line(|z| (1.0 + z) * self.phi(z), 1e-8)
    }

    /// Spot check of the `K(x, y, z) = 0 for z > x` convention on the lattice
    /// `eps * {0..=max_class}`.
    pub fn check_support(&self, eps: f64, max_class: usize) -> Result<()> {
        let top = max_class.min(24);
        let targets = [0, 1, top.max(1)];
        for k in 0..=top {
            for &l in &targets {
                for d in (k + 1)..=(k + 3) {
                    let v = self.eval(k as f64 * eps, l as f64 * eps, d as f64 * eps);
                    if v != 0.0 {
                        return Err(Error::KernelSupport(self.name.clone()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Kernel declaration as it appears in study configs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        builtin_kernel(&self.name, &self.params)
    }
}

fn take_param(
    params: &BTreeMap<String, f64>,
    allowed: &[&str],
    key: &str,
    default: f64,
) -> Result<f64> {
    if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(param_err(bad, params[bad], "not a parameter of this kernel"));
    }
    Ok(params.get(key).copied().unwrap_or(default))
}

/// Instantiate a built-in kernel.
///
/// * `constant`: `κ₀ e^{-z}`
/// * `product`: `κ₀ (1+x)^a (1+y)^b e^{-z}`, `a, b ∈ [0, 1]`
/// * `expdiff`: `κ₀ (1+y) e^{-z} (1 - e^{-(x-z)})`, vanishing at `z = x`
/// * `flat`: `κ₀` on `z <= x` (finite-size checks only; its envelope is not integrable)
/// * `zero`
///
/// All of them return 0 for `z > x`. Envelope is `κ₀ e^{-z}` with `c_k = 1`.
pub fn builtin_kernel(name: &str, params: &BTreeMap<String, f64>) -> Result<Kernel> {
    let kappa = |allowed: &[&str]| -> Result<f64> {
        let k0 = take_param(params, allowed, "kappa0", 1.0)?;
        if !(k0.is_finite() && k0 >= 0.0) {
            return Err(param_err("kappa0", k0, "must be finite and >= 0"));
        }
        Ok(k0)
    };
    let env = move |k0: f64| move |z: f64| k0 * (-z).exp();
    match name {
        "constant" => {
            let k0 = kappa(&["kappa0"])?;
            Ok(Kernel::separable(
                "constant",
                |_| 1.0,
                move |x, z| if z > x { 0.0 } else { k0 * (-z).exp() },
                env(k0),
                1.0,
            ))
        }
        "product" => {
            let allowed = ["kappa0", "a", "b"];
            let k0 = kappa(&allowed)?;
            let a = take_param(params, &allowed, "a", 1.0)?;
            let b = take_param(params, &allowed, "b", 1.0)?;
            for (n, v) in [("a", a), ("b", b)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(param_err(n, v, "exponent must lie in [0, 1]"));
                }
            }
            Ok(Kernel::separable(
                "product",
                move |y| (1.0 + y).powf(b),
                move |x, z| {
                    if z > x {
                        0.0
                    } else {
                        k0 * (1.0 + x).powf(a) * (-z).exp()
                    }
                },
                env(k0),
                1.0,
            ))
        }
        "expdiff" => {
            let k0 = kappa(&["kappa0"])?;
            Ok(Kernel::separable(
                "expdiff",
                |y| 1.0 + y,
                move |x, z| {
                    if z > x {
                        0.0
                    } else {
                        // 1 - e^{-(x-z)} via expm1 keeps the boundary value exactly 0.
                        k0 * (-z).exp() * -(-(x - z)).exp_m1()
                    }
                },
                env(k0),
                1.0,
            ))
        }
        "flat" => {
            let k0 = kappa(&["kappa0"])?;
            Ok(Kernel::separable(
                "flat",
                |_| 1.0,
                move |x, z| if z > x { 0.0 } else { k0 },
                move |_| k0,
                1.0,
            ))
        }
        "zero" => {
            take_param(params, &[], "", 0.0)?;
            Ok(Kernel::zero())
        }
        other => Err(Error::UnknownKernel(other.to_string())),
    }
}

/// One line of a checker report, serialised as JSON-lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub point: Vec<f64>,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Sample points per axis for the kernel and moment checkers.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    /// Relative margin for the extra `z = x - margin (1 + x)` samples next to the diagonal.
    pub diagonal_margin: f64,
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid::log_spaced(1e-3, 1e3, 17)
    }
}

impl SampleGrid {
    pub fn log_spaced(lo: f64, hi: f64, per_axis: usize) -> Self {
        let pts = logspace(lo, hi, per_axis);
        SampleGrid {
            x: pts.clone(),
            y: pts.clone(),
            z: pts,
            diagonal_margin: 3e-4,
        }
    }

    /// All `z` samples for a given `x`: the axis plus the near-diagonal point.
    fn z_for(&self, x: f64) -> impl Iterator<Item = f64> + '_ {
        let diag = x - self.diagonal_margin * (1.0 + x);
        self.z.iter().copied().chain((diag > 0.0).then_some(diag))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct K1Report {
    pub kernel: String,
    pub max_ratio: f64,
    pub worst_point: [f64; 3],
    pub support_violations: usize,
    pub c_k: f64,
    pub passed: bool,
    #[serde(skip)]
    pub records: Vec<CheckRecord>,
}

/// Growth bound check: `K(x,y,z) <= c_k (1+x)(1+y) phi(z)` on the grid, and
/// `K = 0` on the sampled `z > x` points.
pub fn check_k1(kernel: &Kernel, grid: &SampleGrid) -> K1Report {
    let mut max_ratio = 0.0f64;
    let mut worst = [f64::NAN; 3];
    let mut support_violations = 0;
    let mut records = Vec::new();
    let limit = kernel.c_k() * (1.0 + 1e-12);
    for &x in &grid.x {
        for &y in &grid.y {
            for z in grid.z_for(x) {
                let k = kernel.eval(x, y, z);
                if z > x {
                    let pass = k == 0.0;
                    if !pass {
                        support_violations += 1;
                    }
                    records.push(CheckRecord {
                        check: "K1.support".into(),
                        point: vec![x, y, z],
                        value: k,
                        bound: 0.0,
                        pass,
                    });
                    continue;
                }
                let envelope = (1.0 + x) * (1.0 + y) * kernel.phi(z);
                let ratio = if k == 0.0 {
                    0.0
                } else if envelope > 0.0 {
                    k / envelope
                } else {
                    f64::INFINITY
                };
                if worst[0].is_nan() || ratio > max_ratio {
                    max_ratio = ratio;
                    worst = [x, y, z];
                }
                records.push(CheckRecord {
                    check: "K1.growth".into(),
                    point: vec![x, y, z],
                    value: ratio,
                    bound: kernel.c_k(),
                    pass: ratio <= limit,
                });
            }
        }
    }
    K1Report {
        kernel: kernel.name().to_string(),
        max_ratio,
        worst_point: worst,
        support_violations,
        c_k: kernel.c_k(),
        passed: max_ratio <= limit && support_violations == 0,
        records,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct K2Report {
    pub kernel: String,
    pub checked_points: usize,
    pub skipped_points: usize,
    pub d1_violations: usize,
    pub d2_violations: usize,
    pub d12_violations: usize,
    /// Largest measured `|∂K| / bound` over the three derivative checks.
    pub max_d1_ratio: f64,
    pub max_d2_ratio: f64,
    pub max_d12_ratio: f64,
    pub max_boundary: f64,
    pub passed: bool,
    #[serde(skip)]
    pub records: Vec<CheckRecord>,
}

/// Default finite-difference step at `x`.
pub fn fd_step(x: f64) -> f64 {
    1e-4 * (1.0 + x)
}

/// Regularity check by central finite differences:
/// `|∂₁K| <= (1+y) phi(z)`, `|∂₂K| <= (1+x) phi(z)`, `|∂₁∂₂K| <= phi(z)`,
/// plus the boundary values `K(x, y, x)` which must vanish.
///
/// Points closer than two steps to the `z = x` kink are skipped. Each
/// comparison allows for `O(h²)` truncation and the roundoff of the stencil.
pub fn check_k2(kernel: &Kernel, grid: &SampleGrid) -> K2Report {
    let mut rep = K2Report {
        kernel: kernel.name().to_string(),
        checked_points: 0,
        skipped_points: 0,
        d1_violations: 0,
        d2_violations: 0,
        d12_violations: 0,
        max_d1_ratio: 0.0,
        max_d2_ratio: 0.0,
        max_d12_ratio: 0.0,
        max_boundary: 0.0,
        passed: false,
        records: Vec::new(),
    };
    let k = |x: f64, y: f64, z: f64| kernel.eval(x, y, z);
    for &x in &grid.x {
        for &y in &grid.y {
            let boundary = k(x, y, x).abs();
            rep.max_boundary = rep.max_boundary.max(boundary);
            rep.records.push(CheckRecord {
                check: "K2.boundary".into(),
                point: vec![x, y, x],
                value: boundary,
                bound: 0.0,
                pass: boundary == 0.0,
            });
            let hx = fd_step(x);
            let hy = fd_step(y);
            for z in grid.z_for(x) {
                if z > x - 2.0 * hx {
                    rep.skipped_points += 1;
                    continue;
                }
                rep.checked_points += 1;
                let phi = kernel.phi(z);
                // y-stencil: central when possible, forward at the origin.
                let (ylo, yhi) = if y >= hy { (y - hy, y + hy) } else { (y, y + hy) };
                let dy = yhi - ylo;
                let (xlo, xhi) = (x - hx, x + hx);
                let k_xlo = k(xlo, y, z);
                let k_xhi = k(xhi, y, z);
                let k_ylo = k(x, ylo, z);
                let k_yhi = k(x, yhi, z);
                let c_ll = k(xlo, ylo, z);
                let c_lh = k(xlo, yhi, z);
                let c_hl = k(xhi, ylo, z);
                let c_hh = k(xhi, yhi, z);
                let kmax = [k_xlo, k_xhi, k_ylo, k_yhi, c_ll, c_lh, c_hl, c_hh]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                let round = 8.0 * f64::EPSILON * kmax;
                let trunc = hx * hx + dy * dy + if y >= hy { 0.0 } else { dy };

                let d1 = (k_xhi - k_xlo) / (2.0 * hx);
                let d2 = (k_yhi - k_ylo) / dy;
                let d12 = (c_hh - c_hl - c_lh + c_ll) / (2.0 * hx * dy);

                let checks = [
                    ("K2.d1", d1, (1.0 + y) * phi, round / hx),
                    ("K2.d2", d2, (1.0 + x) * phi, round / dy),
                    ("K2.d12", d12, phi, 2.0 * round / (hx * dy)),
                ];
                for (i, (name, value, bound, slack)) in checks.into_iter().enumerate() {
                    let allowed = bound * (1.0 + trunc) + slack;
                    let pass = value.abs() <= allowed;
                    let ratio = if bound > 0.0 {
                        value.abs() / bound
                    } else if value == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    match i {
                        0 => {
                            rep.max_d1_ratio = rep.max_d1_ratio.max(ratio);
                            rep.d1_violations += usize::from(!pass);
                        }
                        1 => {
                            rep.max_d2_ratio = rep.max_d2_ratio.max(ratio);
                            rep.d2_violations += usize::from(!pass);
                        }
                        _ => {
                            rep.max_d12_ratio = rep.max_d12_ratio.max(ratio);
                            rep.d12_violations += usize::from(!pass);
                        }
                    }
                    rep.records.push(CheckRecord {
                        check: name.into(),
                        point: vec![x, y, z],
                        value: value.abs(),
                        bound: allowed,
                        pass,
                    });
                }
            }
        }
    }
    rep.passed = rep.d1_violations == 0
        && rep.d2_violations == 0
        && rep.d12_violations == 0
        && rep.max_boundary == 0.0;
    rep
}

/// A convex moment weight `f` with derivative `df` and the two constants of
/// the admissibility inequalities
/// `df(x+z) <= c1 (df(x) + df(z))` and `df(x) <= c2 (1 + f(x)/(1+x))`.
#[derive(Clone)]
pub struct AdmissibleMoment {
    pub name: String,
    pub f: ScalarFn,
    pub df: ScalarFn,
    pub c1: f64,
    pub c2: f64,
    /// Claimed membership of the strictly superlinear class (`df → ∞`).
    pub superlinear: bool,
}

impl fmt::Debug for AdmissibleMoment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdmissibleMoment")
            .field("name", &self.name)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .field("superlinear", &self.superlinear)
            .finish()
    }
}

impl AdmissibleMoment {
    /// `x^{1+α}` for `α ∈ (0, 1]`, with `c1 = 1`, `c2 = 1 + α`.
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(param_err("alpha", alpha, "must lie in (0, 1]"));
        }
        let p = 1.0 + alpha;
        Ok(AdmissibleMoment {
            name: format!("x^{p}"),
            f: Arc::new(move |x: f64| x.powf(p)),
            df: Arc::new(move |x: f64| p * x.powf(alpha)),
            c1: 1.0,
            c2: p,
            superlinear: true,
        })
    }

    /// `x²`.
    pub fn square() -> Self {
        AdmissibleMoment {
            name: "x^2".into(),
            f: Arc::new(|x: f64| x * x),
            df: Arc::new(|x: f64| 2.0 * x),
            c1: 1.0,
            c2: 2.0,
            superlinear: true,
        }
    }

    /// `(1+x) log(1+x)` with `c1 = c2 = 1`.
    pub fn entropy() -> Self {
        AdmissibleMoment {
            name: "(1+x)log(1+x)".into(),
            f: Arc::new(|x: f64| (1.0 + x) * x.ln_1p()),
            df: Arc::new(|x: f64| 1.0 + x.ln_1p()),
            c1: 1.0,
            c2: 1.0,
            superlinear: true,
        }
    }

    /// `x`: admissible but not superlinear.
    pub fn linear() -> Self {
        AdmissibleMoment {
            name: "x".into(),
            f: Arc::new(|x: f64| x),
            df: Arc::new(|_| 1.0),
            c1: 1.0,
            c2: 1.0,
            superlinear: false,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.df)(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdmissibleReport {
    pub moment: String,
    pub c1: f64,
    pub c2: f64,
    /// Smallest constants that would make the sampled inequalities hold.
    pub measured_c1: f64,
    pub measured_c2: f64,
    pub nonnegative: bool,
    pub convex: bool,
    pub in_a0: bool,
    /// Whether the sampled derivative keeps growing over the top decades.
    pub derivative_unbounded: bool,
    pub in_a: bool,
    /// `in_a0`, and `in_a` as well when the moment claims superlinearity.
    pub passed: bool,
    #[serde(skip)]
    pub records: Vec<CheckRecord>,
}

pub fn check_admissible(m: &AdmissibleMoment, grid: &SampleGrid) -> AdmissibleReport {
    const REL: f64 = 1e-12;
    let mut xs = grid.x.clone();
    xs.push(0.0);
    xs.sort_by(f64::total_cmp);
    let mut records = Vec::new();

    let nonnegative = xs.iter().all(|&x| m.value(x) >= 0.0 && m.derivative(x) >= 0.0);
    let convex = xs
        .windows(2)
        .all(|w| m.derivative(w[1]) >= m.derivative(w[0]) * (1.0 - REL));

    let mut measured_c1 = 0.0f64;
    let mut c1_ok = true;
    for &x in &xs {
        for &z in &grid.z {
            let lhs = m.derivative(x + z);
            let rhs = m.derivative(x) + m.derivative(z);
            let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
            measured_c1 = measured_c1.max(ratio);
            let pass = lhs <= m.c1 * rhs * (1.0 + REL);
            c1_ok &= pass;
            records.push(CheckRecord {
                check: "A0.c1".into(),
                point: vec![x, z],
                value: lhs,
                bound: m.c1 * rhs,
                pass,
            });
        }
    }
    let mut measured_c2 = 0.0f64;
    let mut c2_ok = true;
    for &x in &xs {
        let lhs = m.derivative(x);
        let base = 1.0 + m.value(x) / (1.0 + x);
        measured_c2 = measured_c2.max(lhs / base);
        let pass = lhs <= m.c2 * base * (1.0 + REL);
        c2_ok &= pass;
        records.push(CheckRecord {
            check: "A0.c2".into(),
            point: vec![x],
            value: lhs,
            bound: m.c2 * base,
            pass,
        });
    }

    // Unbounded derivative proxy: growth over the last decade must not
    // collapse relative to the decade before.
    let top = xs.last().copied().unwrap_or(0.0);
    let derivative_unbounded = if top > 0.0 {
        let g1 = m.derivative(top) - m.derivative(top / 10.0);
        let g0 = m.derivative(top / 10.0) - m.derivative(top / 100.0);
        g1 > 0.0 && g0 > 0.0 && g1 >= 0.5 * g0
    } else {
        false
    };
    let in_a0 = nonnegative && convex && c1_ok && c2_ok;
    let in_a = in_a0 && derivative_unbounded;
    AdmissibleReport {
        moment: m.name.clone(),
        c1: m.c1,
        c2: m.c2,
        measured_c1,
        measured_c2,
        nonnegative,
        convex,
        in_a0,
        derivative_unbounded,
        in_a,
        passed: in_a0 && (!m.superlinear || in_a),
        records,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiemannCheck {
    pub sum: f64,
    pub integral: f64,
    /// `(n eps) · ω(eps)`, the a-priori bound on `|sum - integral|`.
    pub bound: f64,
    pub modulus: f64,
}

impl RiemannCheck {
    pub fn gap(&self) -> f64 {
        (self.sum - self.integral).abs()
    }

    pub fn holds(&self) -> bool {
        self.gap() <= self.bound * (1.0 + 1e-9) + 1e-14
    }
}

/// Numerical modulus of continuity `sup_{|s-t| <= eps, s,t ∈ [0, upper]} |f(s) - f(t)|`,
/// sampled on a grid of spacing `eps / 4`.
pub fn estimate_modulus<F: Fn(f64) -> f64>(f: F, eps: f64, upper: f64) -> f64 {
    let sub = 4usize;
    let step = eps / sub as f64;
    let count = (upper / step).ceil() as usize;
    let vals: Vec<f64> = (0..=count + sub).map(|i| f(i as f64 * step)).collect();
    let mut w = 0.0f64;
    for i in 0..=count {
        for j in 1..=sub {
            w = w.max((vals[i + j] - vals[i]).abs());
        }
    }
    w
}

/// Compare the right Riemann sum `eps Σ_{d=1..n} f(d eps)` with
/// `∫₀^{n eps} f`. The bound uses `modulus` when given, otherwise a
/// numerical estimate of the modulus of continuity at scale `eps`.
pub fn riemann_check<F: Fn(f64) -> f64>(
    f: F,
    eps: f64,
    n: usize,
    modulus: Option<&dyn Fn(f64) -> f64>,
) -> RiemannCheck {
    let upper = eps * n as f64;
    let sum = eps * (1..=n).map(|d| f(d as f64 * eps)).sum::<f64>();
    // Panel-wise quadrature keeps the tolerance meaningful for large n.
    let panels = n.clamp(1, 4096);
    let width = upper / panels as f64;
    let integral: f64 = (0..panels)
        .map(|i| {
            let a = width * i as f64;
            integrate(&f, a, a + width, 1e-13 / panels as f64)
        })
        .sum();
    let omega = match modulus {
        Some(w) => w(eps),
        None => estimate_modulus(&f, eps, upper),
    };
    RiemannCheck {
        sum,
        integral,
        bound: upper * omega,
        modulus: omega,
    }
}

/// Measured exchange-gradient constant: the smallest `G` with
/// `|γ^{x,y,z}·f| <= G w(z) ((1 + f(x)/(1+x)) + (1 + f(y)/(1+y)))` on the grid.
pub fn exchange_gradient_constant<F, W>(f: F, w: W, grid: &SampleGrid) -> f64
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
{
    let h = |x: f64| 1.0 + f(x) / (1.0 + x);
    let mut xs = grid.x.clone();
    let mut ys = grid.y.clone();
    ys.push(0.0);
    xs.sort_by(f64::total_cmp);
    let mut sup = 0.0f64;
    for &x in &xs {
        for &y in &ys {
            for z in grid.z_for(x).chain(std::iter::once(x)) {
                if z > x || z <= 0.0 {
                    continue;
                }
                let g = exchange_gradient(&f, x, y, z).expect("z <= x").abs();
                let denom = w(z) * (h(x) + h(y));
                if denom > 0.0 {
                    sup = sup.max(g / denom);
                }
            }
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str, params: &[(&str, f64)]) -> Result<Kernel> {
        let p = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        builtin_kernel(name, &p)
    }

    #[test]
    fn builtin_values() {
        let c = spec("constant", &[("kappa0", 1.0)]).unwrap();
        assert!((c.eval(2.0, 3.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let e = spec("expdiff", &[]).unwrap();
        for &(x, y) in &[(0.5, 0.0), (3.0, 7.0), (1e3, 2.0)] {
            assert_eq!(e.eval(x, y, x), 0.0);
        }
        let p = spec("product", &[("a", 1.0), ("b", 1.0)]).unwrap();
        assert!((p.eval(1.0, 1.0, 0.0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(spec("nope", &[]), Err(Error::UnknownKernel(_))));
        assert!(matches!(
            spec("product", &[("a", 1.5)]),
            Err(Error::Parameter { .. })
        ));
        assert!(matches!(
            spec("constant", &[("kappa0", -1.0)]),
            Err(Error::Parameter { .. })
        ));
        assert!(spec("expdiff", &[("a", 0.5)]).is_err());
    }

    #[test]
    fn support_convention_on_builtins() {
        for name in ["constant", "product", "expdiff", "flat", "zero"] {
            let k = spec(name, &[]).unwrap();
            for &x in &[0.0, 0.3, 2.0, 50.0] {
                for &dz in &[1e-9, 0.1, 10.0] {
                    assert_eq!(k.eval(x, 1.0, x + dz), 0.0, "{name}");
                }
            }
            assert!(k.check_support(0.1, 40).is_ok());
        }
        let bad = Kernel::new("bad", |_, _, _| 1.0, |_| 1.0, 1.0);
        assert!(matches!(bad.check_support(1.0, 4), Err(Error::KernelSupport(_))));
    }

    #[test]
    fn k1_reports() {
        let grid = SampleGrid::default();
        let e = spec("expdiff", &[]).unwrap();
        let r = check_k1(&e, &grid);
        assert!(r.passed && r.max_ratio <= 1.0);

        let steep = Kernel::new(
            "steep",
            |x: f64, y: f64, z: f64| {
                if z > x {
                    0.0
                } else {
                    (1.0 + x).powi(2) * (1.0 + y) * (-z).exp()
                }
            },
            |z: f64| (-z).exp(),
            1.0,
        );
        let r = check_k1(&steep, &grid);
        assert!(!r.passed);
        assert!(r.worst_point[0] >= 100.0, "{:?}", r.worst_point);

        let r = check_k1(&Kernel::zero(), &grid);
        assert!(r.passed && r.max_ratio == 0.0);
    }

    #[test]
    fn k2_reports() {
        let grid = SampleGrid::default();
        let r = check_k2(&spec("expdiff", &[]).unwrap(), &grid);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.max_boundary, 0.0);
        assert!(r.max_d12_ratio <= 1.0 + 1e-6);

        let r = check_k2(&spec("constant", &[]).unwrap(), &grid);
        assert!(!r.passed && r.max_boundary > 0.0);
        assert_eq!(r.d1_violations + r.d2_violations + r.d12_violations, 0);

        assert!(check_k2(&Kernel::zero(), &grid).passed);
    }

    #[test]
    fn admissible_examples() {
        let grid = SampleGrid::default();
        let r = check_admissible(&AdmissibleMoment::power(0.5).unwrap(), &grid);
        assert!(r.passed && r.in_a, "{r:?}");
        let r = check_admissible(&AdmissibleMoment::entropy(), &grid);
        assert!(r.passed && r.in_a, "{r:?}");
        assert!(r.measured_c2 <= 1.0 + 1e-12);
        let r = check_admissible(&AdmissibleMoment::linear(), &grid);
        assert!(r.in_a0 && !r.in_a && r.passed);
        let r = check_admissible(&AdmissibleMoment::square(), &grid);
        assert!(r.passed);
        // Too small a constant must be caught.
        let mut tight = AdmissibleMoment::power(0.5).unwrap();
        tight.c2 = 1.2;
        assert!(!check_admissible(&tight, &grid).passed);
    }

    #[test]
    fn riemann_examples() {
        let r = riemann_check(|z| (-z).exp(), 1e-3, 10_000, None);
        let exact = 1.0 - (-10.0f64).exp();
        assert!((r.sum - exact).abs() < 1e-2);
        assert!((r.integral - exact).abs() < 1e-10);
        assert!(r.holds());

        let r = riemann_check(|_| 0.0, 1e-2, 100, None);
        assert_eq!((r.sum, r.integral, r.bound), (0.0, 0.0, 0.0));

        let mut last = f64::INFINITY;
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            let n = (40.0 / eps) as usize;
            let r = riemann_check(|z| z * (-z).exp(), eps, n, None);
            assert!(r.holds());
            let gap = (r.sum - 1.0).abs();
            assert!(gap < last);
            last = gap;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn phi_norm_of_builtins() {
        let e = spec("expdiff", &[("kappa0", 1.5)]).unwrap();
        assert!((e.phi_norm_11() - 3.0).abs() < 1e-7);
    }

    #[test]
    fn exchange_gradient_constant_of_square() {
        let grid = SampleGrid::default();
        // |γ·x²| = 2z|y + z - x| <= 2z max(x, y): with weight z the constant is ~2.
        let g = exchange_gradient_constant(|x| x * x, |z| z, &grid);
        assert!(g > 1.5 && g <= 2.0 + 1e-12, "{g}");
    }
}
