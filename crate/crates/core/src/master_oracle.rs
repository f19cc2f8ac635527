//! Exact law of the empirical-measure chain for tiny systems.
//!
//! States are partitions of `N` into at most `L` parts, stored as per-class
//! cluster counts. Rates depend on sizes only, so the lumped chain is Markov
//! and its generator can be assembled as a dense matrix.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{moment, GridMeasure};

/// Default cap on the number of enumerated states.
pub const STATE_GUARD: usize = 1_000_000;

#[derive(Clone, Debug)]
pub struct StateSpace {
    n: usize,
    l: usize,
    eps: f64,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_total(&self) -> usize {
        self.n
    }

    pub fn clusters(&self) -> usize {
        self.l
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Per-class counts `n_0..=n_N` of state `i`.
    pub fn counts(&self, i: usize) -> &[u32] {
        &self.states[i]
    }

    pub fn index_of(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    /// Index of the state whose cluster sizes are `sizes` (in any order).
    pub fn index_of_sizes(&self, sizes: &[usize]) -> Option<usize> {
        if sizes.len() != self.l {
            return None;
        }
        let mut counts = vec![0u32; self.n + 1];
        for &s in sizes {
            *counts.get_mut(s)? += 1;
        }
        self.index_of(&counts)
    }

    /// Empirical measure of state `i`.
    pub fn measure(&self, i: usize) -> GridMeasure {
        let counts: Vec<u64> = self.states[i].iter().map(|&c| c as u64).collect();
        GridMeasure::from_counts(self.eps, &counts).expect("state has L clusters")
    }

    /// Size of the largest cluster in state `i`.
    pub fn largest(&self, i: usize) -> usize {
        self.states[i].iter().rposition(|&c| c > 0).unwrap_or(0)
    }
}

/// Enumerate partitions of `n` into at most `l` positive parts.
pub fn enumerate_states(n: usize, l: usize, eps: f64) -> Result<StateSpace> {
    enumerate_states_with_guard(n, l, eps, STATE_GUARD)
}

pub fn enumerate_states_with_guard(n: usize, l: usize, eps: f64, guard: usize) -> Result<StateSpace> {
    if l == 0 {
        return Err(Error::InvalidConfiguration("no clusters".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidConfiguration(format!("grid spacing {eps}")));
    }
    let mut states = Vec::new();
    let mut parts = Vec::with_capacity(l);
    let mut overflow = false;
    partitions(n, n, l, &mut parts, &mut |p: &[usize]| {
        if states.len() >= guard {
            overflow = true;
            return false;
        }
        let mut counts = vec![0u32; n + 1];
        for &s in p {
            counts[s] += 1;
        }
        counts[0] += (l - p.len()) as u32;
        states.push(counts);
        true
    });
    if overflow {
        return Err(Error::StateSpaceTooLarge {
            count: guard + 1,
            limit: guard,
        });
    }
    let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    Ok(StateSpace {
        n,
        l,
        eps,
        states,
        index,
    })
}

/// Visit partitions of `rest` into non-increasing parts `≤ max_part`, at most
/// `slots` more parts. Returns `false` once the visitor asks to stop.
fn partitions(
    rest: usize,
    max_part: usize,
    slots: usize,
    parts: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if rest == 0 {
        return visit(parts);
    }
    if slots == 0 {
        return true;
    }
    for p in (1..=max_part.min(rest)).rev() {
        parts.push(p);
        let go_on = partitions(rest - p, p, slots - 1, parts, visit);
        parts.pop();
        if !go_on {
            return false;
        }
    }
    true
}

/// Dense row-major generator `Q[s][s']`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.size + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.size..(from + 1) * self.size]
    }

    /// `p Q` for a row vector `p`.
    pub fn left_apply(&self, p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (o, q) in out.iter_mut().zip(self.row(i)) {
                *o += pi * q;
            }
        }
    }
}

/// Assemble `Q^{N,L,eps}`: from state `n`, the class triple `(k, l, d)` leads
/// to `n - e_k + e_{k-d} - e_l + e_{l+d}` at rate
/// `eps K(k eps, l eps, d eps) n_k (n_l - δ_kl) / (L - 1)`.
/// Triples that map a state to itself only affect bookkeeping and are skipped.
pub fn build_generator(space: &StateSpace, kernel: &Kernel) -> GeneratorMatrix {
    let size = space.len();
    let mut entries = vec![0.0; size * size];
    if space.l < 2 {
        return GeneratorMatrix { size, entries };
    }
    let eps = space.eps;
    let scale = 1.0 / (space.l as f64 - 1.0);
    let mut target = Vec::with_capacity(space.n + 1);
    for (s, counts) in space.states.iter().enumerate() {
        for k in 1..counts.len() {
            let nk = counts[k] as f64;
            if nk == 0.0 {
                continue;
            }
            for l in 0..counts.len() {
                let nl = counts[l] as f64 - if k == l { 1.0 } else { 0.0 };
                if nl <= 0.0 {
                    continue;
                }
                for d in 1..=k {
                    if l + d == k {
                        // Swap of sizes between the two clusters.
                        continue;
                    }
                    let kv = kernel.eval(k as f64 * eps, l as f64 * eps, d as f64 * eps);
                    if kv == 0.0 {
                        continue;
                    }
                    target.clear();
                    target.extend_from_slice(counts);
                    target[k] -= 1;
                    target[k - d] += 1;
                    target[l] -= 1;
                    target[l + d] += 1;
                    let t = space.index[&target];
                    let rate = scale * eps * kv * nk * nl;
                    entries[s * size + t] += rate;
                }
            }
        }
        let off: f64 = (0..size).filter(|&t| t != s).map(|t| entries[s * size + t]).sum();
        entries[s * size + s] = -off;
    }
    GeneratorMatrix { size, entries }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const RTOL: f64 = 1e-11;
const ATOL: f64 = 1e-13;

/// Integrate the forward equation `dp/dt = p Q` from `p0` to time `t` with
/// adaptive Dormand–Prince 5(4).
pub fn evolve_law(gen: &GeneratorMatrix, p0: &[f64], t: f64) -> Result<Vec<f64>> {
    let s = gen.size();
    if p0.len() != s {
        return Err(Error::InvalidMeasure(format!(
            "distribution has {} entries for {s} states",
            p0.len()
        )));
    }
    let total: f64 = p0.iter().sum();
    if p0.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidMeasure("initial law is not a probability vector".into()));
    }
    let mut p = p0.to_vec();
    if t <= 0.0 {
        return Ok(p);
    }
    let rate = (0..s).map(|i| -gen.get(i, i)).fold(0.0, f64::max);
    if rate == 0.0 {
        return Ok(p);
    }
    let mut h = (0.1 / rate).min(t);
    let h_min = 1e-14 * t;
    let mut now = 0.0;
    let mut k = vec![vec![0.0; s]; 7];
    let mut stage = vec![0.0; s];
    let mut y5 = vec![0.0; s];
    while now < t {
        h = h.min(t - now);
        if h < h_min {
            return Err(Error::StepControl {
                t: now,
                reason: format!("step {h:e} below minimum"),
            });
        }
        for i in 0..7 {
            stage.copy_from_slice(&p);
            for j in 0..i {
                if A[i][j] != 0.0 {
                    for (x, kj) in stage.iter_mut().zip(&k[j]) {
                        *x += h * A[i][j] * kj;
                    }
                }
            }
            gen.left_apply(&stage, &mut k[i]);
        }
        let mut err: f64 = 0.0;
        for x in 0..s {
            let mut hi = p[x];
            let mut lo = p[x];
            for i in 0..7 {
                hi += h * B5[i] * k[i][x];
                lo += h * B4[i] * k[i][x];
            }
            y5[x] = hi;
            let sc = ATOL + RTOL * p[x].abs().max(hi.abs());
            err = err.max(((hi - lo) / sc).abs());
        }
        if err <= 1.0 {
            now += h;
            std::mem::swap(&mut p, &mut y5);
            // Entries are probabilities; dust below zero comes from roundoff.
            for v in p.iter_mut() {
                if *v < 0.0 && *v > -1e-13 {
                    *v = 0.0;
                }
            }
        }
        let factor = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
        h *= factor.clamp(0.2, 5.0);
    }
    Ok(p)
}

/// `Σ_s p(s) ⟨f, c_s⟩`.
pub fn expected_observable<F: Fn(f64) -> f64>(space: &StateSpace, p: &[f64], f: F) -> f64 {
    (0..space.len())
        .map(|i| p[i] * moment(&space.measure(i), &f))
        .sum()
}

/// `Σ_s p(s) g(s)` for an arbitrary state functional.
pub fn expected_functional<G: Fn(usize) -> f64>(space: &StateSpace, p: &[f64], g: G) -> f64 {
    (0..space.len()).map(|i| p[i] * g(i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;
    use std::collections::BTreeMap;

    fn flat() -> Kernel {
        builtin_kernel("flat", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn enumeration_examples() {
        let s = enumerate_states(2, 2, 1.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.index_of_sizes(&[1, 1]).is_some());
        assert!(s.index_of_sizes(&[2, 0]).is_some());
        assert_eq!(enumerate_states(3, 2, 1.0).unwrap().len(), 2);
        assert_eq!(enumerate_states(0, 5, 1.0).unwrap().len(), 1);
        assert!(matches!(
            enumerate_states_with_guard(30, 30, 1.0, 100),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn two_state_generator() {
        let s = enumerate_states(2, 2, 1.0).unwrap();
        let g = build_generator(&s, &flat());
        let a = s.index_of_sizes(&[1, 1]).unwrap();
        let b = s.index_of_sizes(&[2, 0]).unwrap();
        assert_eq!(g.get(a, b), 2.0);
        assert_eq!(g.get(b, a), 1.0);
        assert_eq!(g.get(a, a), -2.0);
        assert_eq!(g.get(b, b), -1.0);
        assert!(build_generator(&s, &Kernel::zero()).entries.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn two_state_law() {
        let s = enumerate_states(2, 2, 1.0).unwrap();
        let g = build_generator(&s, &flat());
        let a = s.index_of_sizes(&[1, 1]).unwrap();
        let b = s.index_of_sizes(&[2, 0]).unwrap();
        let mut p0 = vec![0.0; 2];
        p0[a] = 1.0;
        assert_eq!(evolve_law(&g, &p0, 0.0).unwrap(), p0);
        for t in [0.1, 0.5, 1.0, 3.0] {
            let p = evolve_law(&g, &p0, t).unwrap();
            let exact = 2.0 / 3.0 * (1.0 - (-3.0 * t).exp());
            assert!((p[b] - exact).abs() < 1e-10, "{t}: {} vs {exact}", p[b]);
        }
        let p = evolve_law(&g, &p0, 40.0).unwrap();
        assert!((expected_observable(&s, &p, |x| x * x) - 5.0 / 3.0).abs() < 1e-9);
        assert!((expected_observable(&s, &p, |_| 1.0) - 1.0).abs() < 1e-12);
        assert!((expected_observable(&s, &p, |x| x) - 1.0).abs() < 1e-12);
        let z = build_generator(&s, &Kernel::zero());
        assert_eq!(evolve_law(&z, &p0, 2.0).unwrap(), p0);
    }
}
