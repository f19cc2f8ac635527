//! Small numerical helpers shared across modules: adaptive quadrature,
//! log-factorials and sample grids.

use statrs::function::gamma::ln_gamma;

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Split into a few panels first so narrow features are not skipped.
    let panels = 16;
    let width = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == panels { b } else { lo + width };
            let flo = f(lo);
            let fhi = f(hi);
            let mid = 0.5 * (lo + hi);
            let fmid = f(mid);
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            simpson_rec(&f, lo, hi, flo, fmid, fhi, whole, tol / panels as f64, MAX_DEPTH)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || (b - a) < 1e-300 {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral of `f` over `[0, ∞)` for integrable, eventually decaying `f`.
///
/// Integrates on doubling windows until a window contributes less than `tol`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    let mut total = integrate(&f, 0.0, 1.0, tol * 0.5);
    let mut lo = 1.0;
    let mut window_tol = tol * 0.25;
    while lo < 1e12 {
        let hi = 2.0 * lo;
        let part = integrate(&f, lo, hi, window_tol);
        total += part;
        if part.abs() < window_tol && lo >= 8.0 {
            break;
        }
        lo = hi;
        window_tol = (window_tol * 0.5).max(tol * 1e-6);
    }
    total
}

/// `ln(n!)`: exact accumulation for `n <= 20`, log-gamma above.
pub fn ln_factorial(n: u64) -> f64 {
    if n <= 20 {
        let mut p: u64 = 1;
        for i in 2..=n {
            p *= i;
        }
        (p as f64).ln()
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `count` log-spaced points covering `[lo, hi]`.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && count >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Composite Simpson rule on equally spaced samples. Needs an odd number
/// (at least three) of samples.
pub fn simpson_samples(values: &[f64], spacing: f64) -> Option<f64> {
    let n = values.len();
    if n < 3 || n.is_multiple_of(2) {
        return None;
    }
    let mut acc = values[0] + values[n - 1];
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Some(acc * spacing / 3.0)
}
