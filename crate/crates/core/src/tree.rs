//! Growth of preferential-attachment trees.
//!
//! The tree starts from a single root of degree 1 (a loose edge). At step
//! `t = 2..=n` a newcomer attaches to an existing node of degree `k` with
//! probability `f(k) N_k(t-1) / S_f(t-1)`. Only degree classes are tracked;
//! the likelihood depends on the data through the attachment degrees alone.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{PaError, Result};
use crate::fenwick::Fenwick;
use crate::model::{DerivOrder, PaFamily};
use crate::rng::{rng_from_seed, PaRng};

/// Attachment degrees `D_2..D_n` of one tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrowthHistory {
    n: usize,
    degrees: Vec<u32>,
}

impl GrowthHistory {
    /// Checks the cheap structural constraints; full consistency is
    /// checked by [`snapshot_of`].
    pub fn new(n: usize, degrees: Vec<u32>) -> Result<Self> {
        if n == 0 {
            return Err(PaError::domain("a tree has at least one node"));
        }
        if degrees.len() != n - 1 {
            return Err(PaError::Integrity(format!(
                "history of a {n}-node tree must hold {} degrees, got {}",
                n - 1,
                degrees.len()
            )));
        }
        for (i, &d) in degrees.iter().enumerate() {
            let t = i + 2;
            if d == 0 || d as usize > t - 1 {
                return Err(PaError::Integrity(format!("D_{t} = {d} is impossible")));
            }
        }
        Ok(Self { n, degrees })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `D_t` for `t = 2..=n`, starting at index 0.
    pub fn degrees(&self) -> &[u32] {
        &self.degrees
    }

    /// `D_t`, for `2 <= t <= n`.
    pub fn at(&self, t: usize) -> usize {
        self.degrees[t - 2] as usize
    }
}

/// Final degree counts `N_k(n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DegreeSnapshot {
    n: usize,
    /// `counts[k-1] = N_k`, trailing zeros removed.
    counts: Vec<u64>,
    /// `tails[k-1] = N_{>k}`.
    tails: Vec<u64>,
}

impl DegreeSnapshot {
    /// Builds a snapshot from dense counts indexed by `k - 1`.
    pub fn from_dense(mut counts: Vec<u64>) -> Result<Self> {
        while counts.last() == Some(&0) {
            counts.pop();
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(PaError::domain("snapshot has no nodes"));
        }
        let mut tails = vec![0u64; counts.len()];
        let mut acc = 0;
        for k in (0..counts.len()).rev() {
            tails[k] = acc;
            acc += counts[k];
        }
        Ok(Self {
            n: n as usize,
            counts,
            tails,
        })
    }

    pub fn from_counts(map: &BTreeMap<usize, u64>) -> Result<Self> {
        let kmax = map.keys().next_back().copied().unwrap_or(0);
        if map.contains_key(&0) {
            return Err(PaError::domain("degree 0 is not allowed"));
        }
        let mut dense = vec![0u64; kmax];
        for (&k, &c) in map {
            dense[k - 1] = c;
        }
        Self::from_dense(dense)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> usize {
        self.counts.len()
    }

    /// `N_k`.
    pub fn count(&self, k: usize) -> u64 {
        if k == 0 {
            return 0;
        }
        self.counts.get(k - 1).copied().unwrap_or(0)
    }

    /// `N_{>k}`.
    pub fn tail_count(&self, k: usize) -> u64 {
        if k == 0 {
            return self.n as u64;
        }
        self.tails.get(k - 1).copied().unwrap_or(0)
    }

    /// `P_k(n)`.
    pub fn p(&self, k: usize) -> f64 {
        self.count(k) as f64 / self.n as f64
    }

    /// `P_{>k}(n)`.
    pub fn p_tail(&self, k: usize) -> f64 {
        self.tail_count(k) as f64 / self.n as f64
    }

    /// Non-zero `(k, N_k)` pairs in increasing `k`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c > 0)
            .map(|(i, c)| (i + 1, *c))
    }

    pub fn to_map(&self) -> BTreeMap<usize, u64> {
        self.iter().collect()
    }

    pub fn degree_sum(&self) -> u64 {
        self.iter().map(|(k, c)| k as u64 * c).sum()
    }

    /// `f(k) N_k` summed over present degrees.
    pub fn total_preference(&self, family: &PaFamily, theta: &[f64]) -> Result<f64> {
        family.check_theta(theta)?;
        Ok(self.iter().map(|(k, c)| family.value(theta, k) * c as f64).sum())
    }

    /// Writes `k,count` rows preceded by a `# n=` line and a column header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={}", self.n)?;
        writeln!(w, "k,count")?;
        for (k, c) in self.iter() {
            writeln!(w, "{k},{c}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut declared_n = None;
        let mut map = BTreeMap::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "k,count" {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(v) = meta.trim().strip_prefix("n=") {
                    declared_n = Some(v.trim().parse::<usize>().map_err(|_| PaError::parse(line))?);
                }
                continue;
            }
            let (k, c) = line
                .split_once(',')
                .ok_or_else(|| PaError::parse(format!("bad snapshot row '{line}'")))?;
            let k: usize = k.trim().parse().map_err(|_| PaError::parse(line))?;
            let c: u64 = c.trim().parse().map_err(|_| PaError::parse(line))?;
            if map.insert(k, c).is_some() {
                return Err(PaError::parse(format!("degree {k} listed twice")));
            }
        }
        let snap = Self::from_counts(&map)?;
        if let Some(n) = declared_n {
            if n != snap.n {
                return Err(PaError::Integrity(format!("header n={n} but counts sum to {}", snap.n)));
            }
        }
        Ok(snap)
    }
}

/// Metadata stored in a history file header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistoryMeta {
    pub family: Option<String>,
    pub theta: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

/// Writes a history: `#` header lines, then one `D_t` per line.
pub fn write_history<W: Write>(history: &GrowthHistory, meta: &HistoryMeta, mut w: W) -> Result<()> {
    writeln!(w, "# n={}", history.n)?;
    if let Some(f) = &meta.family {
        writeln!(w, "# family={f}")?;
    }
    if let Some(theta) = &meta.theta {
        let parts: Vec<String> = theta.iter().map(|t| format!("{t:?}")).collect();
        writeln!(w, "# theta={}", parts.join(","))?;
    }
    if let Some(seed) = meta.seed {
        writeln!(w, "# seed={seed}")?;
    }
    for d in &history.degrees {
        writeln!(w, "{d}")?;
    }
    Ok(())
}

pub fn read_history<R: BufRead>(r: R) -> Result<(GrowthHistory, HistoryMeta)> {
    let mut n = None;
    let mut meta = HistoryMeta::default();
    let mut degrees = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            let Some((key, value)) = h.trim().split_once('=') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "n" => n = Some(value.parse::<usize>().map_err(|_| PaError::parse(line))?),
                "family" => meta.family = Some(value.to_string()),
                "theta" => meta.theta = Some(crate::model::parse_theta(value)?),
                "seed" => meta.seed = Some(value.parse().map_err(|_| PaError::parse(line))?),
                _ => {}
            }
            continue;
        }
        degrees.push(
            line.parse::<u32>()
                .map_err(|_| PaError::parse(format!("bad degree '{line}'")))?,
        );
    }
    let n = n.unwrap_or(degrees.len() + 1);
    Ok((GrowthHistory::new(n, degrees)?, meta))
}

/// Replays the degree update from a single degree-1 root.
pub fn snapshot_of(history: &GrowthHistory) -> Result<DegreeSnapshot> {
    let mut counts = vec![0u64; 2];
    counts[0] = 1;
    for (i, &d) in history.degrees.iter().enumerate() {
        let d = d as usize;
        if counts.get(d - 1).copied().unwrap_or(0) == 0 {
            return Err(PaError::Integrity(format!("no node of degree {d} at step {}", i + 2)));
        }
        if counts.len() <= d {
            counts.resize(d + 1, 0);
        }
        counts[d - 1] -= 1;
        counts[d] += 1;
        counts[0] += 1;
    }
    DegreeSnapshot::from_dense(counts)
}

/// `S_f(1..=n)`: total preference after each step, by the recursion
/// `S(t) = S(t-1) + f(D_t + 1) - f(D_t) + f(1)`.
pub fn total_preference_trace(family: &PaFamily, theta: &[f64], history: &GrowthHistory) -> Result<Vec<f64>> {
    family.check_theta(theta)?;
    let kmax = history.degrees.iter().copied().max().unwrap_or(1) as usize + 1;
    let table = family.table_unchecked(theta, kmax, DerivOrder::Value);
    let f1 = table.f(1);
    let mut out = Vec::with_capacity(history.n);
    let mut s = f1;
    out.push(s);
    for &d in &history.degrees {
        let d = d as usize;
        s += table.f(d + 1) - table.f(d) + f1;
        out.push(s);
    }
    Ok(out)
}

/// Options for [`grow_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GrowOptions {
    /// Record `parent[t]` for every node (debugging aid).
    pub record_parents: bool,
}

/// Output of [`grow_with`].
#[derive(Debug, Clone)]
pub struct GrownTree {
    pub history: GrowthHistory,
    pub snapshot: DegreeSnapshot,
    /// `parents[t-2]` is the 0-based id of the node newcomer `t` joined.
    pub parents: Option<Vec<u32>>,
}

/// Grows an `n`-node tree with a seeded generator.
pub fn grow(family: &PaFamily, theta: &[f64], n: usize, seed: u64) -> Result<(GrowthHistory, DegreeSnapshot)> {
    let mut rng = rng_from_seed(seed);
    let t = grow_with(family, theta, n, &mut rng, GrowOptions::default())?;
    Ok((t.history, t.snapshot))
}

pub fn grow_with(family: &PaFamily, theta: &[f64], n: usize, rng: &mut PaRng, opts: GrowOptions) -> Result<GrownTree> {
    if n == 0 {
        return Err(PaError::domain("n must be at least 1"));
    }
    family.check_theta(theta)?;
    let mut sampler = DegreeSampler::new(family, theta);
    let mut members = opts.record_parents.then(ClassMembers::default);
    // Node picks use their own stream so recording parents leaves the
    // degree sequence unchanged.
    let mut picker = rng.clone();
    picker.set_stream(!rng.get_stream());
    if let Some(m) = members.as_mut() {
        m.insert(0, 1);
    }
    let mut degrees = Vec::with_capacity(n - 1);
    let mut parents = opts.record_parents.then(|| Vec::with_capacity(n - 1));
    for t in 2..=n {
        let k = sampler.sample(rng);
        degrees.push(k as u32);
        if let (Some(m), Some(p)) = (members.as_mut(), parents.as_mut()) {
            let v = m.take_random(k, &mut picker);
            m.insert(v, k + 1);
            m.insert((t - 1) as u32, 1);
            p.push(v);
        }
        sampler.attach(k);
    }
    let snapshot = DegreeSnapshot::from_dense(sampler.counts.clone())?;
    Ok(GrownTree {
        history: GrowthHistory { n, degrees },
        snapshot,
        parents,
    })
}

/// Degree-class sampler: class `k` has weight `f(k) N_k`.
#[derive(Debug, Clone)]
pub struct DegreeSampler<'a> {
    family: &'a PaFamily,
    theta: Vec<f64>,
    f: Vec<f64>,
    counts: Vec<u64>,
    weights: Fenwick,
    updates: u64,
}

const REBUILD_EVERY: u64 = 1 << 16;

impl<'a> DegreeSampler<'a> {
    /// Sampler for the one-node initial tree.
    pub fn new(family: &'a PaFamily, theta: &[f64]) -> Self {
        let mut s = Self {
            family,
            theta: theta.to_vec(),
            f: Vec::new(),
            counts: Vec::new(),
            weights: Fenwick::with_capacity(64),
            updates: 0,
        };
        s.set_count(1, 1);
        s
    }

    /// Sampler positioned at an arbitrary snapshot.
    pub fn from_snapshot(family: &'a PaFamily, theta: &[f64], snapshot: &DegreeSnapshot) -> Result<Self> {
        family.check_theta(theta)?;
        let mut s = Self {
            family,
            theta: theta.to_vec(),
            f: Vec::new(),
            counts: Vec::new(),
            weights: Fenwick::with_capacity(snapshot.max_degree() + 1),
            updates: 0,
        };
        for (k, c) in snapshot.iter() {
            s.set_count(k, c);
        }
        Ok(s)
    }

    fn f(&mut self, k: usize) -> f64 {
        while self.f.len() < k {
            let j = self.f.len() + 1;
            self.f.push(self.family.value(&self.theta, j));
        }
        self.f[k - 1]
    }

    fn set_count(&mut self, k: usize, c: u64) {
        if self.counts.len() < k {
            self.counts.resize(k, 0);
        }
        self.counts[k - 1] = c;
        let w = self.f(k) * c as f64;
        self.weights.set(k - 1, w);
    }

    /// Draws the degree of the node the next newcomer joins.
    pub fn sample(&self, rng: &mut PaRng) -> usize {
        loop {
            let u = rng.random::<f64>() * self.weights.total();
            let k = self.weights.search(u) + 1;
            if self.counts.get(k - 1).copied().unwrap_or(0) > 0 {
                return k;
            }
        }
    }

    /// Applies the degree update for an attachment to a degree-`k` node.
    pub fn attach(&mut self, k: usize) {
        let ck = self.counts[k - 1];
        self.set_count(k, ck - 1);
        let ck1 = self.counts.get(k).copied().unwrap_or(0);
        self.set_count(k + 1, ck1 + 1);
        let c1 = self.counts[0];
        self.set_count(1, c1 + 1);
        self.updates += 1;
        if self.updates % REBUILD_EVERY == 0 {
            self.weights.rebuild();
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.total()
    }
}

/// Per-class node lists with swap-remove, used when parents are recorded.
#[derive(Debug, Default)]
struct ClassMembers {
    lists: Vec<Vec<u32>>,
    /// `slot[v] = (degree, index in its list)`.
    slot: Vec<(usize, usize)>,
}

impl ClassMembers {
    fn insert(&mut self, v: u32, k: usize) {
        if self.lists.len() < k {
            self.lists.resize_with(k, Vec::new);
        }
        let list = &mut self.lists[k - 1];
        list.push(v);
        let pos = (k, list.len() - 1);
        let v = v as usize;
        if self.slot.len() <= v {
            self.slot.resize(v + 1, (0, 0));
        }
        self.slot[v] = pos;
    }

    fn take_random(&mut self, k: usize, rng: &mut PaRng) -> u32 {
        let list = &mut self.lists[k - 1];
        let i = rng.random_range(0..list.len());
        let v = list.swap_remove(i);
        if i < list.len() {
            let moved = list[i] as usize;
            self.slot[moved] = (k, i);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> (PaFamily, Vec<f64>) {
        (PaFamily::affine(), vec![0.0])
    }

    #[test]
    fn trivial_trees() {
        let (fam, th) = linear();
        let (h, s) = grow(&fam, &th, 1, 3).unwrap();
        assert!(h.degrees().is_empty());
        assert_eq!(s.to_map(), BTreeMap::from([(1, 1)]));
        let (h, s) = grow(&PaFamily::power_offset(), &[1.0, 0.5], 2, 3).unwrap();
        assert_eq!(h.degrees(), &[1]);
        assert_eq!(s.to_map(), BTreeMap::from([(1, 1), (2, 1)]));
        assert!(matches!(grow(&fam, &th, 0, 1), Err(PaError::Domain(_))));
    }

    #[test]
    fn snapshot_replay() {
        let s = snapshot_of(&GrowthHistory::new(1, vec![]).unwrap()).unwrap();
        assert_eq!(s.to_map(), BTreeMap::from([(1, 1)]));
        let s = snapshot_of(&GrowthHistory::new(2, vec![1]).unwrap()).unwrap();
        assert_eq!(s.to_map(), BTreeMap::from([(1, 1), (2, 1)]));
        let s = snapshot_of(&GrowthHistory::new(3, vec![1, 2]).unwrap()).unwrap();
        assert_eq!(s.to_map(), BTreeMap::from([(1, 2), (3, 1)]));
        // After (1, 2) there is no degree-2 node left.
        let bad = GrowthHistory::new(4, vec![1, 2, 2]).unwrap();
        assert!(matches!(snapshot_of(&bad), Err(PaError::Integrity(_))));
        assert!(GrowthHistory::new(3, vec![1, 3]).is_err());
    }

    #[test]
    fn preference_trace_by_hand() {
        let h = GrowthHistory::new(2, vec![1]).unwrap();
        let s = total_preference_trace(&PaFamily::affine(), &[0.0], &h).unwrap();
        assert_eq!(s, vec![1.0, 3.0]);
        let s = total_preference_trace(&PaFamily::affine(), &[2.0], &h).unwrap();
        assert_eq!(s, vec![3.0, 7.0]);
    }

    #[test]
    fn parents_are_consistent_with_degrees() {
        let fam = PaFamily::power_offset();
        let mut rng = rng_from_seed(11);
        let t = grow_with(&fam, &[0.5, 0.8], 2000, &mut rng, GrowOptions { record_parents: true }).unwrap();
        let parents = t.parents.unwrap();
        let mut deg = vec![1u32; 2000];
        for (i, &p) in parents.iter().enumerate() {
            let tt = i + 2;
            assert!((p as usize) < tt - 1);
            assert_eq!(deg[p as usize], t.history.at(tt) as u32);
            deg[p as usize] += 1;
        }
        let mut counts = BTreeMap::new();
        for d in deg {
            *counts.entry(d as usize).or_insert(0u64) += 1;
        }
        assert_eq!(counts, t.snapshot.to_map());
    }

    #[test]
    fn io_round_trip() {
        let fam = PaFamily::power_offset();
        let theta = [0.0, 2.0 / 3.0];
        let (h, s) = grow(&fam, &theta, 500, 99).unwrap();
        let meta = HistoryMeta {
            family: Some("power-offset".into()),
            theta: Some(theta.to_vec()),
            seed: Some(99),
        };
        let mut buf = Vec::new();
        write_history(&h, &meta, &mut buf).unwrap();
        let (h2, m2) = read_history(&buf[..]).unwrap();
        assert_eq!(h2, h);
        assert_eq!(m2, meta);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(DegreeSnapshot::read_csv(&buf[..]).unwrap(), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn mass_and_degree_identities(seed in any::<u64>(), n in 1usize..3000, alpha in -0.9f64..5.0, beta in 0.0f64..=1.0) {
                let fam = PaFamily::power_offset();
                let (h, s) = grow(&fam, &[alpha, beta], n, seed).unwrap();
                prop_assert_eq!(s.n(), n);
                prop_assert_eq!(s.degree_sum(), 2 * n as u64 - 1);
                prop_assert_eq!(snapshot_of(&h).unwrap(), s.clone());
                let mut chosen = vec![0u64; s.max_degree() + 1];
                for &d in h.degrees() {
                    chosen[d as usize - 1] += 1;
                }
                for k in 1..=s.max_degree() {
                    prop_assert_eq!(chosen[k - 1], s.tail_count(k));
                }
            }
        }
    }
}
