//! Exact stochastic simulation of the microscopic exchange process.
//!
//! `L` clusters carry masses `eps · sizes[i]`. For every ordered pair of
//! distinct clusters `(x, y)` and amount `d`, mass `d eps` moves from `x` to
//! `y` at rate `eps K(η_x, η_y, d eps) / (L - 1)`. Self-pairs are dropped:
//! their jump is the identity.
//!
//! Rates are aggregated by size class. With `n_k` clusters of size `k` and
//! `S(k, l) = eps Σ_{d=1..k} K(k eps, l eps, d eps)`, the class pair `(k, l)`
//! fires at rate `S(k, l) (n_k n_l - 1{k=l} n_k) / (L - 1)`. The table keeps
//! `A_k = Σ_l S(k, l) n_l` for every occupied class so that a jump, which
//! changes at most four occupancies, costs `O(m)` for `m` occupied classes.

use std::collections::HashMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{GridMeasure, Trajectory};
use crate::rng::exponential;

/// Events between full recomputations of the cached row sums.
pub const REFRESH_INTERVAL: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Configuration {
    eps_bits: u64,
    sizes: Vec<usize>,
    n_total: usize,
}

impl Configuration {
    pub fn new(eps: f64, sizes: Vec<usize>) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::InvalidConfiguration(format!("grid spacing {eps}")));
        }
        if sizes.len() < 2 {
            return Err(Error::InvalidConfiguration(format!(
                "need at least two clusters, got {}",
                sizes.len()
            )));
        }
        let n_total = sizes.iter().sum();
        Ok(Configuration {
            eps_bits: eps.to_bits(),
            sizes,
            n_total,
        })
    }

    pub fn eps(&self) -> f64 {
        f64::from_bits(self.eps_bits)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of mass units `N`.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Per-class cluster counts, trimmed after the largest occupied class.
    pub fn class_counts(&self) -> Vec<u64> {
        let top = self.sizes.iter().copied().max().unwrap_or(0);
        let mut counts = vec![0u64; top + 1];
        for &s in &self.sizes {
            counts[s] += 1;
        }
        counts
    }
}

/// Empirical cluster distribution `(1/L) Σ_i δ_{η_i}`.
///
/// Weights stop at the largest occupied class; the omitted tail is zero.
pub fn empirical_measure(config: &Configuration) -> GridMeasure {
    GridMeasure::from_counts(config.eps(), &config.class_counts())
        .expect("configuration has at least two clusters")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub t: f64,
    pub source_class: usize,
    pub target_class: usize,
    pub amount: usize,
    pub source_cluster: usize,
    pub target_cluster: usize,
}

/// Mesoscopic rate `(L/(L-1)) K(x, y, z) eps c(x) (c(y) - δ_{x,y}/L)` at
/// `x = k eps`, `y = l eps`, `z = d eps`.
pub fn kappa(c: &GridMeasure, kernel: &Kernel, k: usize, l: usize, d: usize) -> Result<f64> {
    let clusters = c
        .clusters()
        .ok_or_else(|| Error::InvalidMeasure("rate needs an empirical measure".into()))?;
    if d == 0 || d > k {
        return Err(Error::ExchangeExceedsSource {
            x: c.mass(k),
            z: c.mass(d),
        });
    }
    let lf = clusters as f64;
    let eps = c.eps();
    let ck = c.weight(k);
    let cl = c.weight(l) - if k == l { 1.0 / lf } else { 0.0 };
    if ck < 0.0 || cl < -1e-12 {
        return Err(Error::InvalidMeasure(format!(
            "negative weight at class {k} or {l}"
        )));
    }
    let kv = kernel.eval(k as f64 * eps, l as f64 * eps, d as f64 * eps);
    Ok(lf / (lf - 1.0) * kv * eps * ck * cl.max(0.0))
}

/// `S(k, l)` values and per-pair amount distributions, computed on demand.
///
/// Separable kernels `target(y) source(x, z)` need one sum and one CDF per
/// source class; general kernels one per class pair.
#[derive(Debug)]
struct ExchangeCache {
    kernel: Kernel,
    eps: f64,
    target: Vec<f64>,
    source_sum: Vec<f64>,
    source_cdf: HashMap<usize, Vec<f64>>,
    pair_sum: HashMap<(usize, usize), f64>,
    pair_cdf: HashMap<(usize, usize), Vec<f64>>,
}

impl ExchangeCache {
    fn new(kernel: Kernel, eps: f64, top: usize) -> Self {
        let separable = kernel.factors().is_some();
        let len = if separable { top + 1 } else { 0 };
        ExchangeCache {
            kernel,
            eps,
            target: vec![f64::NAN; len],
            source_sum: vec![f64::NAN; len],
            source_cdf: HashMap::new(),
            pair_sum: HashMap::new(),
            pair_cdf: HashMap::new(),
        }
    }

    fn pair_sum(&mut self, k: usize, l: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let eps = self.eps;
        match self.kernel.factors() {
            Some(f) => {
                if self.target[l].is_nan() {
                    self.target[l] = (f.target)(l as f64 * eps);
                }
                if self.source_sum[k].is_nan() {
                    let x = k as f64 * eps;
                    self.source_sum[k] =
                        eps * (1..=k).map(|d| (f.source)(x, d as f64 * eps)).sum::<f64>();
                }
                self.target[l] * self.source_sum[k]
            }
            None => {
                let kernel = &self.kernel;
                *self.pair_sum.entry((k, l)).or_insert_with(|| {
                    let (x, y) = (k as f64 * eps, l as f64 * eps);
                    eps * (1..=k).map(|d| kernel.eval(x, y, d as f64 * eps)).sum::<f64>()
                })
            }
        }
    }

    /// Sample `d ∈ 1..=k` with probability proportional to `K(k eps, l eps, d eps)`.
    fn sample_amount<R: Rng + ?Sized>(&mut self, k: usize, l: usize, rng: &mut R) -> usize {
        let eps = self.eps;
        let kernel = &self.kernel;
        let build = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            let mut acc = 0.0;
            (1..=k)
                .map(|d| {
                    acc += f(d as f64 * eps);
                    acc
                })
                .collect()
        };
        let cdf = match kernel.factors() {
            Some(fac) => {
                let x = k as f64 * eps;
                self.source_cdf
                    .entry(k)
                    .or_insert_with(|| build(&|z| (fac.source)(x, z)))
            }
            None => {
                let (x, y) = (k as f64 * eps, l as f64 * eps);
                self.pair_cdf
                    .entry((k, l))
                    .or_insert_with(|| build(&|z| kernel.eval(x, y, z)))
            }
        };
        let total = *cdf.last().expect("k >= 1");
        let u = rng.random::<f64>() * total;
        let i = cdf.partition_point(|&c| c <= u);
        // Never return an amount with zero weight.
        let mut d = i.min(k - 1);
        while d > 0 && cdf[d] == cdf[d - 1] {
            d -= 1;
        }
        if d == 0 && cdf[0] == 0.0 {
            d = cdf.iter().position(|&c| c > 0.0).unwrap_or(0);
        }
        d + 1
    }
}

const NO_SLOT: usize = usize::MAX;

/// Size-class aggregated jump rates.
#[derive(Debug)]
pub struct RateTable {
    clusters: usize,
    occupancy: Vec<usize>,
    members: Vec<Vec<usize>>,
    position: Vec<usize>,
    cache: ExchangeCache,
    // Stable slots for occupied classes; `smat` is `cap × cap`.
    slot_of: Vec<usize>,
    class_of: Vec<usize>,
    free_slots: Vec<usize>,
    active: Vec<usize>,
    cap: usize,
    smat: Vec<f64>,
    row_acc: Vec<f64>,
    rows: Vec<f64>,
    events_since_refresh: u64,
}

impl RateTable {
    pub fn new(config: &Configuration, kernel: &Kernel) -> Result<Self> {
        let top = config.n_total();
        kernel.check_support(config.eps(), top)?;
        let mut occupancy = vec![0usize; top + 1];
        let mut members = vec![Vec::new(); top + 1];
        let mut position = vec![0usize; config.clusters()];
        for (i, &s) in config.sizes().iter().enumerate() {
            occupancy[s] += 1;
            position[i] = members[s].len();
            members[s].push(i);
        }
        let mut table = RateTable {
            clusters: config.clusters(),
            occupancy: vec![0; top + 1],
            members,
            position,
            cache: ExchangeCache::new(kernel.clone(), config.eps(), top),
            slot_of: vec![NO_SLOT; top + 1],
            class_of: Vec::new(),
            free_slots: Vec::new(),
            active: Vec::new(),
            cap: 0,
            smat: Vec::new(),
            row_acc: Vec::new(),
            rows: Vec::new(),
            events_since_refresh: 0,
        };
        for (class, &n) in occupancy.iter().enumerate() {
            if n > 0 {
                table.occupancy[class] = n;
                table.open_slot(class);
            }
        }
        table.refresh();
        Ok(table)
    }

    pub fn occupancy(&self, class: usize) -> usize {
        self.occupancy.get(class).copied().unwrap_or(0)
    }

    pub fn occupied_classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.active.iter().map(|&s| self.class_of[s]).collect();
        v.sort_unstable();
        v
    }

    /// `S(k, l) = eps Σ_{d=1..k} K(k eps, l eps, d eps)`.
    pub fn pair_sum(&mut self, k: usize, l: usize) -> f64 {
        self.cache.pair_sum(k, l)
    }

    /// Aggregated rate of the class pair `(k, l)`.
    pub fn pair_rate(&mut self, k: usize, l: usize) -> f64 {
        let nk = self.occupancy(k) as f64;
        let nl = self.occupancy(l) as f64;
        let pairs = nk * nl - if k == l { nk } else { 0.0 };
        self.pair_sum(k, l) * pairs / (self.clusters as f64 - 1.0)
    }

    /// Total jump rate from the cached row sums.
    pub fn total_rate(&self) -> f64 {
        self.active
            .iter()
            .map(|&a| self.row_rate(a))
            .sum::<f64>()
            / (self.clusters as f64 - 1.0)
    }

    /// Total jump rate recomputed from scratch over all occupied class pairs.
    pub fn exact_total_rate(&mut self) -> f64 {
        let classes = self.occupied_classes();
        let mut acc = 0.0;
        for &k in &classes {
            for &l in &classes {
                acc += self.pair_rate(k, l);
            }
        }
        acc
    }

    fn row_rate(&self, slot: usize) -> f64 {
        let k = self.class_of[slot];
        if k == 0 {
            return 0.0;
        }
        let nk = self.occupancy[k] as f64;
        let own = self.smat[slot * self.cap + slot];
        (nk * (self.row_acc[slot] - own)).max(0.0)
    }

    fn grow(&mut self) {
        let new_cap = (self.cap * 2).max(16);
        let mut smat = vec![0.0; new_cap * new_cap];
        for a in 0..self.cap {
            smat[a * new_cap..a * new_cap + self.cap]
                .copy_from_slice(&self.smat[a * self.cap..(a + 1) * self.cap]);
        }
        self.smat = smat;
        self.row_acc.resize(new_cap, 0.0);
        self.class_of.resize(new_cap, NO_SLOT);
        self.free_slots.extend((self.cap..new_cap).rev());
        self.cap = new_cap;
    }

    /// Give `class` a slot and fill its row and column of `S`; does not
    /// touch `row_acc` or `active`.
    fn open_slot(&mut self, class: usize) -> usize {
        if self.free_slots.is_empty() {
            self.grow();
        }
        let s = self.free_slots.pop().expect("grown");
        self.slot_of[class] = s;
        self.class_of[s] = class;
        let cap = self.cap;
        for i in 0..self.active.len() {
            let b = self.active[i];
            let other = self.class_of[b];
            let sab = self.cache.pair_sum(class, other);
            let sba = self.cache.pair_sum(other, class);
            self.smat[s * cap + b] = sab;
            self.smat[b * cap + s] = sba;
        }
        self.smat[s * cap + s] = self.cache.pair_sum(class, class);
        self.active.push(s);
        s
    }

    fn close_slot(&mut self, class: usize) {
        let s = self.slot_of[class];
        self.slot_of[class] = NO_SLOT;
        self.class_of[s] = NO_SLOT;
        let i = self.active.iter().position(|&a| a == s).expect("active slot");
        self.active.swap_remove(i);
        self.free_slots.push(s);
    }

    /// Recompute every `A_k` from scratch.
    pub fn refresh(&mut self) {
        let cap = self.cap;
        for &a in &self.active {
            let acc: f64 = self
                .active
                .iter()
                .map(|&b| self.smat[a * cap + b] * self.occupancy[self.class_of[b]] as f64)
                .sum();
            self.row_acc[a] = acc;
        }
        self.events_since_refresh = 0;
    }

    /// Apply `n_class += delta`, keeping slots and row sums consistent.
    fn shift(&mut self, class: usize, delta: isize) {
        if delta == 0 {
            return;
        }
        let entering = self.occupancy[class] == 0;
        let s = if entering {
            self.open_slot(class)
        } else {
            self.slot_of[class]
        };
        let cap = self.cap;
        let df = delta as f64;
        if !entering {
            for &a in &self.active {
                self.row_acc[a] += self.smat[a * cap + s] * df;
            }
        } else {
            for &a in &self.active {
                if a != s {
                    self.row_acc[a] += self.smat[a * cap + s] * df;
                }
            }
        }
        self.occupancy[class] = (self.occupancy[class] as isize + delta) as usize;
        if entering {
            self.row_acc[s] = self
                .active
                .iter()
                .map(|&b| self.smat[s * cap + b] * self.occupancy[self.class_of[b]] as f64)
                .sum();
        }
        if self.occupancy[class] == 0 {
            self.close_slot(class);
        }
    }

    fn move_cluster(&mut self, cluster: usize, from: usize, to: usize) {
        let pos = self.position[cluster];
        let list = &mut self.members[from];
        list.swap_remove(pos);
        if let Some(&moved) = list.get(pos) {
            self.position[moved] = pos;
        }
        self.position[cluster] = self.members[to].len();
        self.members[to].push(cluster);
    }

    /// Pick `(k, l)` with probability proportional to the class-pair rate.
    /// Returns `None` when the cached rows disagree with the exact row
    /// weights (drift), after which the caller refreshes and retries.
    fn sample_pair<R: Rng + ?Sized>(&mut self, total_rows: f64, rng: &mut R) -> Option<(usize, usize)> {
        let u = rng.random::<f64>() * total_rows;
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last_positive = None;
        for (i, &r) in self.rows.iter().enumerate() {
            if r > 0.0 {
                last_positive = Some(i);
            }
            acc += r;
            if u < acc && r > 0.0 {
                chosen = Some(i);
                break;
            }
        }
        let a = self.active[chosen.or(last_positive)?];
        let k = self.class_of[a];
        let cap = self.cap;
        let nk = self.occupancy[k];
        // Exact in-row weights S(k, l) (n_l - δ_kl).
        let mut row_total = 0.0;
        for &b in &self.active {
            let l = self.class_of[b];
            let nl = self.occupancy[l] - usize::from(l == k);
            row_total += self.smat[a * cap + b] * nl as f64;
        }
        let expected = self.rows[chosen.or(last_positive)?] / nk as f64;
        if row_total <= 0.0 || (row_total - expected).abs() > 1e-9 * expected.max(row_total) {
            return None;
        }
        let v = rng.random::<f64>() * row_total;
        let mut acc = 0.0;
        let mut pick = None;
        for &b in &self.active {
            let l = self.class_of[b];
            let nl = self.occupancy[l] - usize::from(l == k);
            let w = self.smat[a * cap + b] * nl as f64;
            if w > 0.0 {
                pick = Some(l);
                acc += w;
                if v < acc {
                    break;
                }
            }
        }
        pick.map(|l| (k, l))
    }
}

/// Single-trajectory simulator: configuration, rate table and clock.
#[derive(Debug)]
pub struct Simulator {
    config: Configuration,
    table: RateTable,
    t: f64,
    events: u64,
    pending: Option<f64>,
}

impl Simulator {
    pub fn new(config: Configuration, kernel: &Kernel) -> Result<Self> {
        let table = RateTable::new(&config, kernel)?;
        Ok(Simulator {
            config,
            table,
            t: 0.0,
            events: 0,
            pending: None,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn table(&self) -> &RateTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut RateTable {
        &mut self.table
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    fn row_snapshot(&mut self) -> f64 {
        let mut rows = std::mem::take(&mut self.table.rows);
        rows.clear();
        rows.extend(self.table.active.iter().map(|&a| self.table.row_rate(a)));
        let total = rows.iter().sum::<f64>();
        self.table.rows = rows;
        total
    }

    /// Draw the next event time, or `None` in an absorbing state.
    fn draw_next<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<f64> {
        if let Some(t) = self.pending {
            return Some(t);
        }
        let rate = self.table.total_rate();
        if rate <= 0.0 {
            return None;
        }
        let t = self.t + exponential(rng, rate);
        self.pending = Some(t);
        Some(t)
    }

    /// Apply the event scheduled at `self.pending`.
    fn fire<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<JumpEvent> {
        let t = self.pending.take().expect("event scheduled");
        let (k, l) = loop {
            let total_rows = self.row_snapshot();
            if total_rows <= 0.0 {
                return Err(Error::Absorbing);
            }
            match self.table.sample_pair(total_rows, rng) {
                Some(pair) => break pair,
                None => self.table.refresh(),
            }
        };
        let d = self.table.cache.sample_amount(k, l, rng);
        let src_list = &self.table.members[k];
        let source = src_list[rng.random_range(0..src_list.len())];
        let target = if k == l {
            let list = &self.table.members[l];
            let mut j = rng.random_range(0..list.len() - 1);
            if list[j] == source {
                j = list.len() - 1;
            }
            list[j]
        } else {
            let list = &self.table.members[l];
            list[rng.random_range(0..list.len())]
        };

        self.table.move_cluster(source, k, k - d);
        self.table.move_cluster(target, l, l + d);
        self.config.sizes[source] = k - d;
        self.config.sizes[target] = l + d;

        let mut deltas: [(usize, isize); 4] = [(k, -1), (k - d, 1), (l, -1), (l + d, 1)];
        for i in 0..4 {
            for j in 0..i {
                if deltas[j].0 == deltas[i].0 && deltas[j].1 != 0 {
                    deltas[j].1 += deltas[i].1;
                    deltas[i].1 = 0;
                    break;
                }
            }
        }
        // Leaving classes first keeps the slot count bounded.
        deltas.sort_by_key(|&(_, dl)| dl);
        for (class, dl) in deltas {
            self.table.shift(class, dl);
        }

        self.t = t;
        self.events += 1;
        self.table.events_since_refresh += 1;
        if self.table.events_since_refresh >= REFRESH_INTERVAL {
            self.table.refresh();
        }
        Ok(JumpEvent {
            t,
            source_class: k,
            target_class: l,
            amount: d,
            source_cluster: source,
            target_cluster: target,
        })
    }

    /// One exact SSA step: exponential waiting time, then class pair, amount
    /// and concrete clusters.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<JumpEvent> {
        if self.draw_next(rng).is_none() {
            return Err(Error::Absorbing);
        }
        self.fire(rng)
    }

    /// Fire every event scheduled at or before `t_target`, then set the clock
    /// to `t_target`. An absorbing state freezes the configuration.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, t_target: f64, rng: &mut R) -> Result<()> {
        while let Some(next) = self.draw_next(rng) {
            if next > t_target {
                break;
            }
            self.fire(rng)?;
        }
        self.t = self.t.max(t_target);
        Ok(())
    }
}

fn validate_checkpoints(t_end: f64, checkpoints: &[f64]) -> Result<()> {
    let sorted = checkpoints.windows(2).all(|w| w[0] <= w[1]);
    let inside = checkpoints.iter().all(|&t| (0.0..=t_end).contains(&t));
    if !sorted || !inside {
        return Err(Error::Checkpoints(format!(
            "checkpoints must be sorted and within [0, {t_end}]"
        )));
    }
    Ok(())
}

/// Simulate one trajectory and record the empirical measure at every checkpoint.
pub fn simulate<R: Rng + ?Sized>(
    config: Configuration,
    kernel: &Kernel,
    t_end: f64,
    checkpoints: &[f64],
    rng: &mut R,
) -> Result<Trajectory> {
    validate_checkpoints(t_end, checkpoints)?;
    let mut sim = Simulator::new(config, kernel)?;
    let mut traj = Trajectory::default();
    for &cp in checkpoints {
        sim.advance_to(cp, rng)?;
        traj.push(cp, empirical_measure(sim.config()));
    }
    sim.advance_to(t_end, rng)?;
    Ok(traj)
}

/// Total jump rate `(1/(L-1)) Σ_{x≠y} Σ_{d=1..η_x/eps} eps K(η_x, η_y, d eps)`,
/// evaluated by class aggregation.
pub fn total_rate(config: &Configuration, kernel: &Kernel) -> f64 {
    let counts = config.class_counts();
    let eps = config.eps();
    let classes: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    let mut acc = 0.0;
    for &k in classes.iter().filter(|&&k| k > 0) {
        let x = k as f64 * eps;
        for &l in &classes {
            let y = l as f64 * eps;
            let s: f64 = eps * (1..=k).map(|d| kernel.eval(x, y, d as f64 * eps)).sum::<f64>();
            let nk = counts[k] as f64;
            let pairs = nk * counts[l] as f64 - if k == l { nk } else { 0.0 };
            acc += s * pairs;
        }
    }
    acc / (config.clusters() as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::builtin_kernel;
    use crate::rng::replica_rng;
    use std::collections::BTreeMap;

    fn unit_kernel() -> Kernel {
        builtin_kernel("flat", &BTreeMap::new()).unwrap()
    }

    fn expdiff() -> Kernel {
        builtin_kernel("expdiff", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn empirical_measure_examples() {
        let c = Configuration::new(1.0, vec![0, 0, 3]).unwrap();
        let m = empirical_measure(&c);
        assert_eq!(m.weight(0), 2.0 / 3.0);
        assert_eq!(m.weight(3), 1.0 / 3.0);

        let c = Configuration::new(0.5, vec![1, 1, 2, 0]).unwrap();
        let m = empirical_measure(&c);
        assert_eq!(m.weights(), &[0.25, 0.5, 0.25]);

        let c = Configuration::new(0.5, vec![4, 4, 4]).unwrap();
        assert_eq!(empirical_measure(&c).atoms().collect::<Vec<_>>(), vec![(2.0, 1.0)]);
    }

    #[test]
    fn kappa_examples() {
        let c = GridMeasure::from_counts(0.5, &[0, 1, 1]).unwrap();
        let k = unit_kernel();
        assert!((kappa(&c, &k, 1, 2, 1).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(kappa(&c, &k, 1, 1, 1).unwrap(), 0.0);
        assert_eq!(kappa(&c, &Kernel::zero(), 2, 1, 2).unwrap(), 0.0);
        let density = GridMeasure::dirac(0.5, 2);
        assert!(kappa(&density, &k, 2, 0, 1).is_err());
    }

    #[test]
    fn total_rate_examples() {
        let k = unit_kernel();
        let c = Configuration::new(1.0, vec![1, 1]).unwrap();
        assert!((total_rate(&c, &k) - 2.0).abs() < 1e-15);
        let c = Configuration::new(1.0, vec![2, 0]).unwrap();
        assert!((total_rate(&c, &k) - 2.0).abs() < 1e-15);
        assert_eq!(total_rate(&c, &Kernel::zero()), 0.0);

        let mut table = RateTable::new(&c, &k).unwrap();
        assert!((table.total_rate() - 2.0).abs() < 1e-15);
        assert!((table.exact_total_rate() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_kernel_is_absorbing() {
        let c = Configuration::new(1.0, vec![1, 3, 2]).unwrap();
        let mut sim = Simulator::new(c, &Kernel::zero()).unwrap();
        let mut rng = replica_rng(1, 0);
        assert!(matches!(sim.step(&mut rng), Err(Error::Absorbing)));
        sim.advance_to(5.0, &mut rng).unwrap();
        assert_eq!(sim.config().sizes(), &[1, 3, 2]);
    }

    #[test]
    fn two_cluster_step() {
        let mut rng = replica_rng(3, 0);
        for _ in 0..50 {
            let c = Configuration::new(1.0, vec![1, 1]).unwrap();
            let mut sim = Simulator::new(c, &unit_kernel()).unwrap();
            let ev = sim.step(&mut rng).unwrap();
            assert_eq!(ev.amount, 1);
            assert_ne!(ev.source_cluster, ev.target_cluster);
            let mut s = sim.config().sizes().to_vec();
            s.sort_unstable();
            assert_eq!(s, vec![0, 2]);
        }
    }

    #[test]
    fn rejects_kernel_breaking_support_convention() {
        let bad = Kernel::new("bad", |_, _, _| 1.0, |_| 1.0, 1.0);
        let c = Configuration::new(1.0, vec![1, 1]).unwrap();
        assert!(matches!(Simulator::new(c, &bad), Err(Error::KernelSupport(_))));
    }

    #[test]
    fn table_tracks_exact_rate_over_many_steps() {
        let sizes: Vec<usize> = (0..60).map(|i| (i * 7) % 11).collect();
        let c = Configuration::new(0.1, sizes).unwrap();
        for kernel in [expdiff(), expdiff().without_factors()] {
            let mut sim = Simulator::new(c.clone(), &kernel).unwrap();
            let mut rng = replica_rng(11, 2);
            for i in 0..3000 {
                sim.step(&mut rng).unwrap();
                if i % 97 == 0 {
                    let cached = sim.table().total_rate();
                    let exact = sim.table_mut().exact_total_rate();
                    assert!((cached - exact).abs() <= 1e-9 * exact, "{cached} {exact}");
                    let brute = total_rate(sim.config(), &kernel);
                    assert!((brute - exact).abs() <= 1e-12 * exact);
                }
            }
        }
    }

    #[test]
    fn separable_and_general_paths_agree() {
        let c = Configuration::new(0.25, vec![3, 0, 5, 5, 1, 8]).unwrap();
        let k = builtin_kernel(
            "product",
            &[("a".to_string(), 0.5), ("b".to_string(), 0.3)].into_iter().collect(),
        )
        .unwrap();
        let mut fast = RateTable::new(&c, &k).unwrap();
        let mut slow = RateTable::new(&c, &k.without_factors()).unwrap();
        for kk in 0..=8 {
            for l in 0..=8 {
                let a = fast.pair_sum(kk, l);
                let b = slow.pair_sum(kk, l);
                assert!((a - b).abs() <= 1e-13 * a.abs().max(1e-300));
            }
        }
        assert!((fast.total_rate() - slow.total_rate()).abs() < 1e-13 * fast.total_rate());
    }

    #[test]
    fn simulate_is_deterministic_and_conservative() {
        let c = Configuration::new(0.5, vec![4, 0, 2, 6, 1, 3, 0, 8]).unwrap();
        let cps = [0.0, 0.5, 1.0, 2.0];
        let a = simulate(c.clone(), &expdiff(), 2.0, &cps, &mut replica_rng(5, 9)).unwrap();
        let b = simulate(c.clone(), &expdiff(), 2.0, &cps, &mut replica_rng(5, 9)).unwrap();
        assert_eq!(a, b);
        let rho = 24.0 * 0.5 / 8.0;
        for m in &a.measures {
            assert!((m.first_moment() - rho).abs() < 1e-14);
        }
        let z = simulate(c.clone(), &Kernel::zero(), 2.0, &cps, &mut replica_rng(5, 9)).unwrap();
        let m0 = empirical_measure(&c);
        assert!(z.measures.iter().all(|m| *m == m0));
        assert!(simulate(c, &expdiff(), 1.0, &[0.5, 0.2], &mut replica_rng(1, 1)).is_err());
    }
}
