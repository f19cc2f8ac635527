//! Probability measures on a mass grid `eps · {0, …, N}`, their tail
//! functions, the exact 1-Wasserstein distance and generalised moments.

use serde::Serialize;

use crate::error::{Error, Result};

/// Whether weights come from counting clusters (`weights · L ∈ ℕ₀`) or are
/// arbitrary nonnegative reals (deterministic solver states).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MeasureKind {
    Empirical { clusters: usize },
    Density,
}

const MASS_TOL_EMPIRICAL: f64 = 1e-12;
const MASS_TOL_DENSITY: f64 = 1e-10;
const INTEGRAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridMeasure {
    eps: f64,
    weights: Vec<f64>,
    kind: MeasureKind,
}

impl GridMeasure {
    /// Validated constructor. Empirical weights must be multiples of `1/L`.
    pub fn new(eps: f64, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidMeasure(format!("grid spacing {eps}")));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("no grid points".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < -1e-12) {
            return Err(Error::InvalidMeasure(format!("weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        let tol = match kind {
            MeasureKind::Empirical { .. } => MASS_TOL_EMPIRICAL,
            MeasureKind::Density => MASS_TOL_DENSITY,
        };
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidMeasure(format!("total mass {total}")));
        }
        if let MeasureKind::Empirical { clusters } = kind {
            if clusters == 0 {
                return Err(Error::InvalidMeasure("empirical measure with L = 0".into()));
            }
            let l = clusters as f64;
            for w in &weights {
                let scaled = w * l;
                if (scaled - scaled.round()).abs() > INTEGRAL_TOL {
                    return Err(Error::InvalidMeasure(format!(
                        "weight {w} is not a multiple of 1/{clusters}"
                    )));
                }
            }
        }
        Ok(GridMeasure { eps, weights, kind })
    }

    /// Empirical measure from per-class cluster counts.
    pub fn from_counts(eps: f64, counts: &[u64]) -> Result<Self> {
        let l: u64 = counts.iter().sum();
        if l == 0 {
            return Err(Error::InvalidMeasure("no clusters".into()));
        }
        let weights = counts.iter().map(|&c| c as f64 / l as f64).collect();
        GridMeasure::new(
            eps,
            weights,
            MeasureKind::Empirical {
                clusters: l as usize,
            },
        )
    }

    pub fn dirac(eps: f64, class: usize) -> Self {
        let mut weights = vec![0.0; class + 1];
        weights[class] = 1.0;
        GridMeasure {
            eps,
            weights,
            kind: MeasureKind::Density,
        }
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    /// Largest grid index `N` (the grid is `eps · {0..=N}`).
    pub fn top_class(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn mass(&self, class: usize) -> f64 {
        class as f64 * self.eps
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights.get(class).copied().unwrap_or(0.0)
    }

    pub fn clusters(&self) -> Option<usize> {
        match self.kind {
            MeasureKind::Empirical { clusters } => Some(clusters),
            MeasureKind::Density => None,
        }
    }

    /// Integer cluster counts `weights · L` of an empirical measure.
    pub fn counts(&self) -> Result<Vec<u64>> {
        let l = self
            .clusters()
            .ok_or_else(|| Error::InvalidMeasure("not an empirical measure".into()))?;
        self.weights
            .iter()
            .map(|w| {
                let s = w * l as f64;
                let r = s.round();
                if (s - r).abs() > INTEGRAL_TOL || r < 0.0 {
                    Err(Error::InvalidMeasure(format!("weight {w} not in (1/{l})ℕ₀")))
                } else {
                    Ok(r as u64)
                }
            })
            .collect()
    }

    /// Reinterpret as an empirical measure with `clusters` clusters.
    pub fn into_empirical(self, clusters: usize) -> Result<Self> {
        GridMeasure::new(self.eps, self.weights, MeasureKind::Empirical { clusters })
    }

    pub fn first_moment(&self) -> f64 {
        moment(self, |x| x)
    }

    /// Support points with positive weight, as `(mass, weight)`.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| (k as f64 * self.eps, *w))
    }
}

/// Tail function `T(x) = μ([x, ∞))` of an atomic measure.
///
/// `values[i]` is the tail on `(breakpoints[i-1], breakpoints[i]]`, with
/// `values[0] = 1` on `[0, breakpoints[0]]`; the tail is 0 beyond the last
/// breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFunction {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl TailFunction {
    pub fn eval(&self, x: f64) -> f64 {
        // First breakpoint >= x.
        let i = self.breakpoints.partition_point(|&b| b < x);
        self.values.get(i).copied().unwrap_or(0.0)
    }
}

pub fn tail(mu: &GridMeasure) -> TailFunction {
    let atoms: Vec<(f64, f64)> = mu.atoms().collect();
    let mut values = vec![0.0; atoms.len()];
    // Suffix sums from the right avoid `1 - cumsum` cancellation.
    let mut acc = 0.0;
    for (i, (_, w)) in atoms.iter().enumerate().rev() {
        acc += w;
        values[i] = acc;
    }
    if let Some(first) = values.first_mut() {
        // Normalised measures have tail exactly 1 up to the first atom.
        if (*first - 1.0).abs() < 1e-9 {
            *first = 1.0;
        }
    }
    TailFunction {
        breakpoints: atoms.iter().map(|a| a.0).collect(),
        values,
    }
}

/// `∫₀^∞ |T_a - T_b| dx` for two tail functions, merging breakpoints.
pub fn tail_l1(a: &TailFunction, b: &TailFunction) -> f64 {
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0.0f64;
    let mut acc = 0.0;
    let (na, nb) = (a.breakpoints.len(), b.breakpoints.len());
    while i < na || j < nb {
        let xa = a.breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
        let xb = b.breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
        let next = xa.min(xb);
        // On (prev, next] both tails are constant.
        let ta = a.values.get(i).copied().unwrap_or(0.0);
        let tb = b.values.get(j).copied().unwrap_or(0.0);
        if next > prev {
            acc += (ta - tb).abs() * (next - prev);
        }
        prev = prev.max(next);
        if xa <= next {
            i += 1;
        }
        if xb <= next {
            j += 1;
        }
    }
    acc
}

/// Exact 1-Wasserstein distance between two grid measures (grids may differ).
pub fn w1(mu: &GridMeasure, nu: &GridMeasure) -> f64 {
    tail_l1(&tail(mu), &tail(nu))
}

/// `Σ_k f(k eps) weights[k]`.
pub fn moment<F: Fn(f64) -> f64>(mu: &GridMeasure, f: F) -> f64 {
    mu.weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(k, w)| f(k as f64 * mu.eps) * w)
        .sum()
}

/// `γ^{x,y,z}·f = -f(x) - f(y) + f(x - z) + f(y + z)`.
pub fn exchange_gradient<F: Fn(f64) -> f64>(f: F, x: f64, y: f64, z: f64) -> Result<f64> {
    if z > x {
        return Err(Error::ExchangeExceedsSource { x, z });
    }
    Ok(-f(x) - f(y) + f(x - z) + f(y + z))
}

/// Time-stamped sequence of measures.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub measures: Vec<GridMeasure>,
}

impl Trajectory {
    pub fn push(&mut self, t: f64, mu: GridMeasure) {
        self.times.push(t);
        self.measures.push(mu);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Snapshot recorded at time `t` (exact match up to 1e-12).
    pub fn at(&self, t: f64) -> Option<&GridMeasure> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .map(|i| &self.measures[i])
    }
}
