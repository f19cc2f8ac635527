//! Initial data: named and tabulated densities, their discretization to
//! empirical measures, uniform sampling on a fiber, and the initial relative
//! entropy against the discretized exponential reference measure.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{param_err, Error, Result};
use crate::measures::{tail, GridMeasure};
use crate::numeric::{integrate, ln_factorial};
use crate::particle_sim::Configuration;

/// Density description as written in study configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySpec {
    Exponential { rate: f64 },
    Uniform { a: f64, b: f64 },
    TruncatedGaussian { mu: f64, sigma: f64 },
    /// CSV with header `mass,density`, interpolated linearly and zero outside.
    Tabulated { path: String },
}

impl DensitySpec {
    /// Resolve into a usable density; relative table paths start at `base`.
    pub fn build(&self, base: &Path) -> Result<Density> {
        match *self {
            DensitySpec::Exponential { rate } => Density::exponential(rate),
            DensitySpec::Uniform { a, b } => Density::uniform(a, b),
            DensitySpec::TruncatedGaussian { mu, sigma } => Density::truncated_gaussian(mu, sigma),
            DensitySpec::Tabulated { ref path } => {
                let file = std::fs::File::open(base.join(path))?;
                Density::tabulated_csv(file)
            }
        }
    }
}

/// A probability density on `[0, ∞)` with a closed-form or exact cumulative
/// distribution function.
#[derive(Clone, Debug, PartialEq)]
pub enum Density {
    Exponential {
        rate: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    TruncatedGaussian {
        mu: f64,
        sigma: f64,
        norm: f64,
    },
    Tabulated {
        masses: Vec<f64>,
        values: Vec<f64>,
        cumulative: Vec<f64>,
    },
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl Density {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(param_err("rate", rate, "must be positive"));
        }
        Ok(Density::Exponential { rate })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return Err(param_err("b", b, "need 0 <= a < b"));
        }
        Ok(Density::Uniform { a, b })
    }

    /// Gaussian `N(mu, sigma²)` conditioned on `[0, ∞)`.
    pub fn truncated_gaussian(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(param_err("sigma", sigma, "must be positive"));
        }
        if !mu.is_finite() {
            return Err(param_err("mu", mu, "must be finite"));
        }
        let norm = 1.0 - std_normal_cdf(-mu / sigma);
        if norm < 1e-12 {
            return Err(param_err("mu", mu, "almost no mass on the half line"));
        }
        Ok(Density::TruncatedGaussian { mu, sigma, norm })
    }

    /// Piecewise-linear density through `(masses[i], values[i])`, normalised
    /// to unit mass.
    pub fn tabulated(masses: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 || masses.len() != values.len() {
            return Err(Error::Format("tabulated density needs two or more rows".into()));
        }
        if masses[0] < 0.0 || masses.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("masses must be increasing and nonnegative".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format("density values must be finite and nonnegative".into()));
        }
        let mut cumulative = vec![0.0; masses.len()];
        for i in 1..masses.len() {
            cumulative[i] =
                cumulative[i - 1] + 0.5 * (values[i] + values[i - 1]) * (masses[i] - masses[i - 1]);
        }
        let total = *cumulative.last().expect("two rows");
        if total <= 0.0 {
            return Err(Error::Format("tabulated density has zero mass".into()));
        }
        Ok(Density::Tabulated {
            masses,
            values: values.iter().map(|v| v / total).collect(),
            cumulative: cumulative.iter().map(|c| c / total).collect(),
        })
    }

    pub fn tabulated_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut masses = Vec::new();
        let mut values = Vec::new();
        for row in r.records() {
            let row = row?;
            let get = |i: usize| -> Result<f64> {
                row.get(i)
                    .ok_or_else(|| Error::Format("short CSV row".into()))?
                    .trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::Format(e.to_string()))
            };
            masses.push(get(0)?);
            values.push(get(1)?);
        }
        Density::tabulated(masses, values)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match self {
            Density::Exponential { rate } => rate * (-rate * x).exp(),
            Density::Uniform { a, b } => {
                if x >= *a && x < *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Density::TruncatedGaussian { mu, sigma, norm } => {
                std_normal_pdf((x - mu) / sigma) / (sigma * norm)
            }
            Density::Tabulated { masses, values, .. } => {
                let i = masses.partition_point(|&m| m <= x);
                if i == 0 || i == masses.len() {
                    return 0.0;
                }
                let t = (x - masses[i - 1]) / (masses[i] - masses[i - 1]);
                values[i - 1] + t * (values[i] - values[i - 1])
            }
        }
    }

    /// `P([0, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Density::Exponential { rate } => -(-rate * x).exp_m1(),
            Density::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Density::TruncatedGaussian { mu, sigma, norm } => {
                let lo = std_normal_cdf(-mu / sigma);
                ((std_normal_cdf((x - mu) / sigma) - lo) / norm).clamp(0.0, 1.0)
            }
            Density::Tabulated {
                masses,
                values,
                cumulative,
            } => {
                let i = masses.partition_point(|&m| m <= x);
                if i == 0 {
                    return 0.0;
                }
                if i == masses.len() {
                    return 1.0;
                }
                let dx = x - masses[i - 1];
                let slope = (values[i] - values[i - 1]) / (masses[i] - masses[i - 1]);
                cumulative[i - 1] + values[i - 1] * dx + 0.5 * slope * dx * dx
            }
        }
    }

    /// Mass of `[a, b)`.
    pub fn cell_mass(&self, a: f64, b: f64) -> f64 {
        match self {
            // Difference of survival functions keeps precision in the tail.
            Density::Exponential { rate } => (-rate * a).exp() - (-rate * b).exp(),
            _ => self.cdf(b) - self.cdf(a),
        }
    }

    /// `‖c‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Density::Exponential { rate } => *rate,
            Density::Uniform { a, b } => 1.0 / (b - a),
            Density::TruncatedGaussian { mu, .. } => self.pdf(mu.max(0.0)),
            Density::Tabulated { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn first_moment(&self) -> f64 {
        match self {
            Density::Exponential { rate } => 1.0 / rate,
            Density::Uniform { a, b } => 0.5 * (a + b),
            Density::TruncatedGaussian { mu, sigma, norm } => {
                mu + sigma * std_normal_pdf(-mu / sigma) / norm
            }
            Density::Tabulated { masses, values, .. } => masses
                .windows(2)
                .zip(values.windows(2))
                .map(|(m, v)| {
                    // Exact integral of x·(linear) over one segment.
                    let (x0, x1) = (m[0], m[1]);
                    let h = x1 - x0;
                    h / 6.0 * (v[0] * (2.0 * x0 + x1) + v[1] * (x0 + 2.0 * x1))
                })
                .sum(),
        }
    }

    /// Smallest `x` with `P([x, ∞)) ≤ tol`.
    pub fn upper_cutoff(&self, tol: f64) -> f64 {
        match self {
            Density::Exponential { rate } => -tol.ln() / rate,
            Density::Uniform { b, .. } => *b,
            Density::TruncatedGaussian { mu, sigma, .. } => mu.max(0.0) + 9.0 * sigma,
            Density::Tabulated { masses, .. } => *masses.last().expect("two rows"),
        }
    }
}

/// Anything that assigns mass to grid cells `[k eps, (k+1) eps)`.
pub trait CellMass {
    fn cell_mass(&self, a: f64, b: f64) -> f64;
}

impl CellMass for Density {
    fn cell_mass(&self, a: f64, b: f64) -> f64 {
        Density::cell_mass(self, a, b)
    }
}

/// An atomic grid measure, with each atom counted in the cell it opens.
impl CellMass for GridMeasure {
    fn cell_mass(&self, a: f64, b: f64) -> f64 {
        let eps = self.eps();
        let lo = (a / eps - 1e-9).ceil().max(0.0) as usize;
        let hi = (b / eps - 1e-9).ceil().max(0.0) as usize;
        (lo..hi.min(self.weights().len())).map(|k| self.weight(k)).sum()
    }
}

/// Empirical measure with `L` clusters and `N` mass units approximating `c`:
/// `n_k = ⌊L ∫_{k eps}^{(k+1) eps} c⌋`, with the missing clusters and mass
/// units restored as follows. If clusters are missing, one cluster carries
/// all missing units and the rest sit at zero. Otherwise the smallest
/// occupied class sends one cluster up by the missing units.
pub fn discretize_density<C: CellMass + ?Sized>(
    density: &C,
    n: usize,
    l: usize,
    eps: f64,
) -> Result<GridMeasure> {
    if l == 0 {
        return Err(Error::InvalidConfiguration("no clusters".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(param_err("eps", eps, "must be positive"));
    }
    let lf = l as f64;
    let mut counts = vec![0u64; n + 1];
    let mut placed: u64 = 0;
    let mut units: u64 = 0;
    for (k, c) in counts.iter_mut().enumerate() {
        let mass = density.cell_mass(k as f64 * eps, (k + 1) as f64 * eps);
        // Guard against products like 0.3 * 10 = 2.9999999999999996.
        let v = (lf * mass + 1e-9).floor().max(0.0) as u64;
        *c = v;
        placed += v;
        units += v * k as u64;
    }
    if placed > l as u64 {
        return Err(Error::InvalidMeasure(format!(
            "cell masses sum above one ({placed} of {l} clusters)"
        )));
    }
    if units > n as u64 {
        return Err(Error::InvalidConfiguration(format!(
            "discretized first moment {} exceeds N eps / L = {}",
            units as f64 * eps / lf,
            n as f64 * eps / lf
        )));
    }
    let missing_clusters = l as u64 - placed;
    let missing_units = (n as u64 - units) as usize;
    if missing_clusters >= 1 {
        if missing_units > n {
            return Err(Error::GridTooShort(format!("correction class {missing_units}")));
        }
        counts[missing_units] += 1;
        counts[0] += missing_clusters - 1;
    } else if missing_units > 0 {
        let smallest = counts
            .iter()
            .position(|&c| c > 0)
            .expect("L clusters are placed");
        let to = smallest + missing_units;
        if to > n {
            return Err(Error::GridTooShort(format!("correction class {to}")));
        }
        counts[smallest] -= 1;
        counts[to] += 1;
    }
    let top = counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    counts.truncate(top + 1);
    GridMeasure::from_counts(eps, &counts)
}

/// How initial data is projected onto `L` clusters with `N` mass units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Discretization {
    /// Cumulative rounding of the distribution function, then unit shifts.
    #[default]
    Rounded,
    /// Floored cell masses with a single correcting cluster.
    Floor,
}

impl Discretization {
    pub fn apply<C: CellMass + ?Sized>(
        self,
        density: &C,
        n: usize,
        l: usize,
        eps: f64,
    ) -> Result<GridMeasure> {
        match self {
            Discretization::Rounded => discretize_density_rounded(density, n, l, eps),
            Discretization::Floor => discretize_density(density, n, l, eps),
        }
    }
}

/// Empirical measure with `L` clusters and `N` mass units whose cumulative
/// counts are `round(L F((k+1) eps))`. Every cluster lies within one quantile
/// cell of `c`, so no cluster carries a macroscopic share of the mass. The
/// first moment is then matched by moving clusters one class at a time,
/// spread evenly over the sorted clusters.
pub fn discretize_density_rounded<C: CellMass + ?Sized>(
    density: &C,
    n: usize,
    l: usize,
    eps: f64,
) -> Result<GridMeasure> {
    if l == 0 {
        return Err(Error::InvalidConfiguration("no clusters".into()));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(param_err("eps", eps, "must be positive"));
    }
    let lf = l as f64;
    // Sorted class of every cluster.
    let mut classes: Vec<usize> = Vec::with_capacity(l);
    let mut cumulative = 0.0;
    for k in 0..=n {
        if classes.len() == l {
            break;
        }
        cumulative += density.cell_mass(k as f64 * eps, (k + 1) as f64 * eps);
        let target = ((lf * cumulative).round() as usize).min(l);
        while classes.len() < target {
            classes.push(k);
        }
    }
    if classes.len() < l {
        return Err(Error::GridTooShort(format!(
            "{} of {l} clusters placed below class {n}",
            classes.len()
        )));
    }
    let mut delta = n as i64 - classes.iter().map(|&k| k as i64).sum::<i64>();
    while delta != 0 {
        let up = delta > 0;
        let eligible: Vec<usize> = (0..l)
            .filter(|&i| if up { classes[i] < n } else { classes[i] > 0 })
            .collect();
        if eligible.is_empty() {
            return Err(Error::GridTooShort(format!("cannot place {n} units on {l} clusters")));
        }
        let r = (delta.unsigned_abs() as usize).min(eligible.len());
        let e = eligible.len();
        for (j, &i) in eligible.iter().enumerate() {
            if (j + 1) * r / e > j * r / e {
                if up {
                    classes[i] += 1;
                } else {
                    classes[i] -= 1;
                }
            }
        }
        delta += if up { -(r as i64) } else { r as i64 };
    }
    let top = classes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0u64; top + 1];
    for k in classes {
        counts[k] += 1;
    }
    GridMeasure::from_counts(eps, &counts)
}

/// `∫ |T_μ(x) - T_c(x)| dx` between a grid measure and a density.
pub fn w1_to_density(mu: &GridMeasure, density: &Density) -> f64 {
    let t = tail(mu);
    let eps = mu.eps();
    let upper = density.upper_cutoff(1e-16).max(mu.top_class() as f64 * eps);
    let cells = (upper / eps).ceil() as usize;
    let mut acc = 0.0;
    for k in 0..cells {
        let (a, b) = (k as f64 * eps, (k + 1) as f64 * eps);
        // The grid tail is constant on (a, b].
        let v = t.eval(0.5 * (a + b));
        acc += integrate(|x| (v - (1.0 - density.cdf(x))).abs(), a, b, 1e-13);
    }
    acc
}

/// `g_{eps,b}(m eps) = e^{-b m eps} (1 - e^{-b eps})`.
pub fn g_eps_b(eps: f64, b: f64, m: u64) -> f64 {
    (-b * m as f64 * eps).exp() * -(-b * eps).exp_m1()
}

/// Discretized exponential reference distribution on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceMeasure {
    eps: f64,
    b: f64,
}

impl ReferenceMeasure {
    pub fn new(eps: f64, b: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(param_err("eps", eps, "must be positive"));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(param_err("b", b, "must be positive"));
        }
        Ok(ReferenceMeasure { eps, b })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn g(&self, m: u64) -> f64 {
        g_eps_b(self.eps, self.b, m)
    }

    pub fn log_g(&self, m: u64) -> f64 {
        -self.b * m as f64 * self.eps + (-(-self.b * self.eps).exp_m1()).ln()
    }
}

/// Uniform sample from the configurations whose empirical measure is `c`.
pub fn sample_fiber<R: Rng + ?Sized>(c: &GridMeasure, rng: &mut R) -> Result<Configuration> {
    let counts = c.counts()?;
    let mut sizes = Vec::with_capacity(counts.iter().sum::<u64>() as usize);
    for (k, &n) in counts.iter().enumerate() {
        sizes.extend(std::iter::repeat_n(k, n as usize));
    }
    sizes.shuffle(rng);
    Configuration::new(c.eps(), sizes)
}

/// `log(L! / Π_k n_k!)`.
pub fn fiber_log_size(c: &GridMeasure) -> Result<f64> {
    let counts = c.counts()?;
    let l: u64 = counts.iter().sum();
    Ok(ln_factorial(l) - counts.iter().map(|&n| ln_factorial(n)).sum::<f64>())
}

/// `(1/L) H(uniform on the fiber of c | ν)`, where `ν` is the `L`-fold
/// product of the reference measure:
/// `-(1/L) log |fiber| - Σ_k c(k eps) log g(k eps)`.
pub fn initial_entropy(c: &GridMeasure, reference: &ReferenceMeasure) -> Result<f64> {
    let l = c
        .clusters()
        .ok_or_else(|| Error::InvalidMeasure("entropy needs an empirical measure".into()))?;
    let log_fiber = fiber_log_size(c)?;
    let cross: f64 = c
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(k, w)| w * reference.log_g(k as u64))
        .sum();
    Ok(-log_fiber / l as f64 - cross)
}

/// Right-hand side `-log(eps |fiber|^{1/L}) - log b + N eps / L` of the
/// finite-resolution entropy bound.
pub fn entropy_bound(c: &GridMeasure, b: f64) -> Result<f64> {
    let l = c
        .clusters()
        .ok_or_else(|| Error::InvalidMeasure("entropy needs an empirical measure".into()))?;
    let log_fiber = fiber_log_size(c)?;
    Ok(-(c.eps().ln() + log_fiber / l as f64) - b.ln() + c.first_moment())
}

/// `eps |fiber|^{1/L}`.
pub fn fiber_density_scale(c: &GridMeasure) -> Result<f64> {
    let l = c
        .clusters()
        .ok_or_else(|| Error::InvalidMeasure("needs an empirical measure".into()))?;
    Ok(c.eps() * (fiber_log_size(c)? / l as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle_sim::empirical_measure;
    use crate::rng::replica_rng;
    use std::f64::consts::LN_2;

    #[test]
    fn reference_measure_examples() {
        assert!((g_eps_b(1.0, LN_2, 0) - 0.5).abs() < 1e-15);
        assert!((g_eps_b(1.0, LN_2, 1) - 0.25).abs() < 1e-15);
        let r = ReferenceMeasure::new(0.3, 0.7).unwrap();
        let total: f64 = (0..2000).map(|m| r.g(m)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((0..50).all(|m| r.g(m + 1) < r.g(m)));
        assert!((r.log_g(5) - r.g(5).ln()).abs() < 1e-13);
    }

    #[test]
    fn fiber_size_examples() {
        assert_eq!(fiber_log_size(&GridMeasure::from_counts(1.0, &[0, 0, 5]).unwrap()).unwrap(), 0.0);
        let c = GridMeasure::from_counts(1.0, &[2, 1]).unwrap();
        assert!((fiber_log_size(&c).unwrap() - 3f64.ln()).abs() < 1e-14);
        let c = GridMeasure::from_counts(1.0, &[1, 1, 1, 1]).unwrap();
        assert!((fiber_log_size(&c).unwrap() - 24f64.ln()).abs() < 1e-14);
        assert!(fiber_log_size(&GridMeasure::dirac(1.0, 2)).is_err());
    }

    #[test]
    fn entropy_examples() {
        let c = GridMeasure::from_counts(1.0, &[1, 0, 1]).unwrap();
        let r = ReferenceMeasure::new(1.0, 1.0).unwrap();
        let g0 = 1.0 - (-1f64).exp();
        let expected = -0.5 * LN_2 - (0.5 * g0.ln() + 0.5 * ((-2f64).exp() * g0).ln());
        let h = initial_entropy(&c, &r).unwrap();
        assert!((h - expected).abs() < 1e-14);
        assert!((h - 1.112).abs() < 1e-3);
        let delta0 = GridMeasure::from_counts(0.5, &[7]).unwrap();
        let r = ReferenceMeasure::new(0.5, 2.0).unwrap();
        assert!((initial_entropy(&delta0, &r).unwrap() + r.log_g(0)).abs() < 1e-15);
    }

    #[test]
    fn sample_fiber_examples() {
        let mut rng = replica_rng(1, 0);
        let c = GridMeasure::from_counts(0.5, &[0, 0, 0, 4]).unwrap();
        assert_eq!(sample_fiber(&c, &mut rng).unwrap().sizes(), &[3, 3, 3, 3]);
        let c = GridMeasure::from_counts(1.0, &[2, 1]).unwrap();
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            let cfg = sample_fiber(&c, &mut rng).unwrap();
            assert_eq!(empirical_measure(&cfg), c);
            seen[cfg.sizes().iter().position(|&s| s == 1).unwrap()] += 1;
        }
        assert!(seen.iter().all(|&n| (850..1150).contains(&n)), "{seen:?}");
    }

    #[test]
    fn discretization_is_exact_in_mass_and_moment() {
        let d = Density::exponential(1.0).unwrap();
        let c = discretize_density(&d, 4000, 200, 0.05).unwrap();
        assert_eq!(c.clusters(), Some(200));
        let counts = c.counts().unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 200);
        let units: u64 = counts.iter().enumerate().map(|(k, n)| k as u64 * n).sum();
        assert_eq!(units, 4000);
        assert!((c.first_moment() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atomic_input_is_unchanged() {
        let c = GridMeasure::from_counts(0.5, &[2, 0, 1, 1]).unwrap();
        let out = discretize_density(&c, 5, 4, 0.5).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn densities_are_normalised() {
        let ds = [
            Density::exponential(2.0).unwrap(),
            Density::uniform(0.5, 2.0).unwrap(),
            Density::truncated_gaussian(1.0, 0.7).unwrap(),
            Density::tabulated(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap(),
        ];
        for d in &ds {
            let upper = d.upper_cutoff(1e-14);
            let total = integrate(|x| d.pdf(x), 0.0, upper, 1e-12);
            assert!((total - 1.0).abs() < 1e-8, "{d:?}: {total}");
            assert!((d.cdf(upper) - 1.0).abs() < 1e-9);
            let m1 = integrate(|x| x * d.pdf(x), 0.0, upper, 1e-12);
            assert!((m1 - d.first_moment()).abs() < 1e-7, "{d:?}: {m1}");
        }
    }

    #[test]
    fn tabulated_csv_parses() {
        let text = "mass,density\n0,1\n1,1\n";
        let d = Density::tabulated_csv(text.as_bytes()).unwrap();
        assert!((d.cdf(0.5) - 0.5).abs() < 1e-15);
        assert!(Density::tabulated_csv("mass,density\n1,1\n0,1\n".as_bytes()).is_err());
    }
}
