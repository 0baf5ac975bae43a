//! Trajectory storage for reward-model training.
//!
//! * **Online** — FIFO queue of the `K` most recent trajectories.
//! * **Historical + online** — the FIFO queue plus the `K` highest-return
//!   trajectories ever inserted (ties go to the more recent one).
//! * **Stratified** — a random-eviction store of `L` trajectories; each sample
//!   draws `K` of them spread as evenly as possible across five equal-width
//!   return bins.

use std::collections::VecDeque;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl, TrajectoryRecord};
use crate::trajectory::Trajectory;

pub const RETURN_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BufferScheme {
    #[serde(rename = "O", alias = "online")]
    Online,
    #[serde(rename = "HO", alias = "historical_online")]
    HistoricalOnline,
    #[serde(rename = "S", alias = "stratified")]
    Stratified,
}

impl BufferScheme {
    pub const ALL: [BufferScheme; 3] = [Self::Online, Self::HistoricalOnline, Self::Stratified];

    pub fn label(self) -> &'static str {
        match self {
            Self::Online => "O",
            Self::HistoricalOnline => "HO",
            Self::Stratified => "S",
        }
    }
}

impl FromStr for BufferScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "O" | "online" => Ok(Self::Online),
            "HO" | "historical_online" => Ok(Self::HistoricalOnline),
            "S" | "stratified" => Ok(Self::Stratified),
            other => Err(Error::Config(format!("unknown buffer scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferConfig {
    pub scheme: BufferScheme,
    /// `K`: online queue length, historical archive size and stratified sample size.
    pub capacity: usize,
    /// `L`: size of the stratified store.
    pub reservoir: usize,
}

impl BufferConfig {
    pub fn new(scheme: BufferScheme) -> Self {
        Self {
            scheme,
            capacity: 50,
            reservoir: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.reservoir == 0 {
            return Err(Error::Config("buffer capacities must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Ranked {
    ret: f64,
    seq: u64,
    traj: Arc<Trajectory>,
}

/// What an insertion displaced from the stratified store.
#[derive(Debug, Clone)]
pub struct Eviction {
    pub slot: usize,
    pub trajectory: Arc<Trajectory>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    config: BufferConfig,
    online: VecDeque<Arc<Trajectory>>,
    /// Sorted by descending (return, insertion sequence).
    historical: Vec<Ranked>,
    store: Vec<Arc<Trajectory>>,
    inserted: u64,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(config: BufferConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            online: VecDeque::with_capacity(config.capacity),
            historical: Vec::with_capacity(config.capacity + 1),
            store: Vec::new(),
            inserted: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> BufferConfig {
        self.config
    }

    pub fn scheme(&self) -> BufferScheme {
        self.config.scheme
    }

    /// Number of distinct stored trajectories.
    pub fn len(&self) -> usize {
        match self.config.scheme {
            BufferScheme::Online => self.online.len(),
            BufferScheme::HistoricalOnline => {
                let archived_only = self
                    .historical
                    .iter()
                    .filter(|h| !self.online.iter().any(|o| Arc::ptr_eq(o, &h.traj)))
                    .count();
                self.online.len() + archived_only
            }
            BufferScheme::Stratified => self.store.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_inserted(&self) -> u64 {
        self.inserted
    }

    pub fn online(&self) -> impl Iterator<Item = &Arc<Trajectory>> {
        self.online.iter()
    }

    /// Archived trajectories, best first.
    pub fn historical(&self) -> impl Iterator<Item = &Arc<Trajectory>> {
        self.historical.iter().map(|h| &h.traj)
    }

    pub fn stored(&self) -> &[Arc<Trajectory>] {
        &self.store
    }

    pub fn insert(&mut self, trajectories: impl IntoIterator<Item = Trajectory>) {
        for t in trajectories {
            self.insert_one(Arc::new(t));
        }
    }

    pub fn insert_one(&mut self, traj: Arc<Trajectory>) -> Option<Eviction> {
        let seq = self.inserted;
        self.inserted += 1;
        match self.config.scheme {
            BufferScheme::Online => {
                self.push_online(traj);
                None
            }
            BufferScheme::HistoricalOnline => {
                self.push_online(Arc::clone(&traj));
                let ret = traj.episodic_return;
                // first position whose entry ranks strictly below (ret, seq)
                let pos = self
                    .historical
                    .partition_point(|h| h.ret > ret || (h.ret == ret && h.seq > seq));
                if pos < self.config.capacity {
                    self.historical.insert(pos, Ranked { ret, seq, traj });
                    self.historical.truncate(self.config.capacity);
                }
                None
            }
            BufferScheme::Stratified => {
                if self.store.len() < self.config.reservoir {
                    self.store.push(traj);
                    None
                } else {
                    let slot = self.rng.random_range(0..self.store.len());
                    let old = std::mem::replace(&mut self.store[slot], traj);
                    Some(Eviction { slot, trajectory: old })
                }
            }
        }
    }

    fn push_online(&mut self, traj: Arc<Trajectory>) {
        if self.online.len() == self.config.capacity {
            self.online.pop_front();
        }
        self.online.push_back(traj);
    }

    /// Training batch for the reward model (shared handles, never copies).
    pub fn sample(&mut self) -> Result<Vec<Arc<Trajectory>>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok(match self.config.scheme {
            BufferScheme::Online => self.online.iter().cloned().collect(),
            BufferScheme::HistoricalOnline => {
                let mut out: Vec<Arc<Trajectory>> = self.online.iter().cloned().collect();
                for h in &self.historical {
                    if !out.iter().any(|o| Arc::ptr_eq(o, &h.traj)) {
                        out.push(Arc::clone(&h.traj));
                    }
                }
                out
            }
            BufferScheme::Stratified => {
                let k = self.config.capacity;
                let picks = stratified_indices(&self.store, k, &mut self.rng);
                picks.into_iter().map(|i| Arc::clone(&self.store[i])).collect()
            }
        })
    }

    /// Writes every stored trajectory once, ordered so that re-inserting the
    /// file into an empty buffer of the same scheme restores its contents:
    /// archive-only entries first, then the online queue oldest to newest.
    pub fn save_jsonl(&self, path: &Path, seed: u64, iteration: u64) -> Result<()> {
        let record = |t: &Arc<Trajectory>| TrajectoryRecord::new(t, seed, iteration);
        let records: Vec<TrajectoryRecord> = match self.config.scheme {
            BufferScheme::Online => self.online.iter().map(record).collect(),
            BufferScheme::HistoricalOnline => self
                .historical
                .iter()
                .rev()
                .map(|h| &h.traj)
                .filter(|h| !self.online.iter().any(|o| Arc::ptr_eq(o, h)))
                .chain(self.online.iter())
                .map(record)
                .collect(),
            BufferScheme::Stratified => self.store.iter().map(record).collect(),
        };
        write_jsonl(path, &records)
    }

    /// Re-inserts the trajectories of a dump in file order.
    pub fn load_jsonl(&mut self, path: &Path) -> Result<usize> {
        let records = read_jsonl(path)?;
        let n = records.len();
        for r in records {
            self.insert_one(Arc::new(r.to_trajectory()?));
        }
        Ok(n)
    }
}

/// Bin of `ret` among `bins` equal-width bins over `[lo, hi]`.
pub fn return_bin(ret: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    let b = ((ret - lo) / (hi - lo) * bins as f64).floor() as usize;
    b.min(bins - 1)
}

/// Indices of a stratified draw of `k` items. Bins holding no more than their
/// share contribute everything; the deficit is split evenly over the rest.
pub fn stratified_indices(items: &[Arc<Trajectory>], k: usize, rng: &mut impl Rng) -> Vec<usize> {
    if items.len() <= k {
        return (0..items.len()).collect();
    }
    let (lo, hi) = items
        .iter()
        .map(|t| t.episodic_return)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r), b.max(r)));
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); RETURN_BINS];
    for (i, t) in items.iter().enumerate() {
        bins[return_bin(t.episodic_return, lo, hi, RETURN_BINS)].push(i);
    }
    let mut quota = [0usize; RETURN_BINS];
    let mut open: Vec<usize> = (0..RETURN_BINS).filter(|&b| !bins[b].is_empty()).collect();
    let mut remaining = k;
    loop {
        let share = remaining / open.len();
        let (small, large): (Vec<usize>, Vec<usize>) = open.iter().partition(|&&b| bins[b].len() <= share);
        if small.is_empty() {
            let extra = remaining - share * large.len();
            for &b in &large {
                quota[b] = share;
            }
            for j in sample_indices(rng, large.len(), extra) {
                quota[large[j]] += 1;
            }
            break;
        }
        for &b in &small {
            quota[b] = bins[b].len();
            remaining -= bins[b].len();
        }
        open = large;
        if open.is_empty() {
            break;
        }
    }
    let mut out = Vec::with_capacity(k);
    for (b, members) in bins.iter().enumerate() {
        if quota[b] == members.len() {
            out.extend_from_slice(members);
        } else {
            out.extend(sample_indices(rng, members.len(), quota[b]).into_iter().map(|j| members[j]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(ret: f64) -> Trajectory {
        Trajectory::new(vec![vec![ret]], vec![vec![1.0]], ret).unwrap()
    }

    fn returns(v: &[Arc<Trajectory>]) -> Vec<f64> {
        v.iter().map(|t| t.episodic_return).collect()
    }

    fn buffer(scheme: BufferScheme, k: usize, l: usize) -> ReplayBuffer {
        ReplayBuffer::new(
            BufferConfig {
                scheme,
                capacity: k,
                reservoir: l,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn online_is_fifo() {
        let mut b = buffer(BufferScheme::Online, 2, 10);
        b.insert([t(1.0), t(2.0), t(3.0)]);
        assert_eq!(returns(&b.sample().unwrap()), vec![2.0, 3.0]);
    }

    #[test]
    fn historical_keeps_top_k() {
        let mut b = buffer(BufferScheme::HistoricalOnline, 2, 10);
        b.insert([t(1.0), t(5.0), t(3.0), t(9.0)]);
        let hist: Vec<f64> = b.historical().map(|t| t.episodic_return).collect();
        assert_eq!(hist, vec![9.0, 5.0]);
        // online {3, 9} plus archived {5}; 9 is shared, not duplicated
        assert_eq!(returns(&b.sample().unwrap()), vec![3.0, 9.0, 5.0]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn historical_ties_prefer_recent() {
        let mut b = buffer(BufferScheme::HistoricalOnline, 1, 10);
        let first = Arc::new(t(4.0));
        let second = Arc::new(t(4.0));
        b.insert_one(Arc::clone(&first));
        b.insert_one(Arc::clone(&second));
        assert!(Arc::ptr_eq(b.historical().next().unwrap(), &second));
    }

    #[test]
    fn stratified_small_bins_are_always_included() {
        let mut b = buffer(BufferScheme::Stratified, 4, 100);
        b.insert([t(0.0), t(0.0), t(0.0), t(10.0), t(10.0)]);
        for _ in 0..200 {
            let s = returns(&b.sample().unwrap());
            assert_eq!(s.len(), 4);
            assert_eq!(s.iter().filter(|&&r| r == 10.0).count(), 2);
        }
    }

    #[test]
    fn stratified_store_is_capped() {
        let mut b = buffer(BufferScheme::Stratified, 10, 100);
        let evictions: Vec<_> = (0..150).filter_map(|i| b.insert_one(Arc::new(t(i as f64)))).collect();
        assert_eq!(b.len(), 100);
        assert_eq!(evictions.len(), 50);
    }

    #[test]
    fn sampling_returns_shared_handles() {
        let mut b = buffer(BufferScheme::Online, 3, 10);
        b.insert([t(1.0)]);
        let s = b.sample().unwrap();
        assert!(Arc::ptr_eq(&s[0], b.online().next().unwrap()));
    }

    #[test]
    fn empty_buffer_rejects_sampling() {
        for scheme in BufferScheme::ALL {
            assert!(matches!(buffer(scheme, 2, 2).sample(), Err(Error::EmptyBuffer)));
        }
    }

    #[test]
    fn scheme_names_parse() {
        assert_eq!("HO".parse::<BufferScheme>().unwrap(), BufferScheme::HistoricalOnline);
        assert_eq!(serde_json::to_string(&BufferScheme::Stratified).unwrap(), "\"S\"");
        assert!("X".parse::<BufferScheme>().is_err());
    }

    #[test]
    fn bins_cover_the_range() {
        assert_eq!(return_bin(0.0, 0.0, 10.0, 5), 0);
        assert_eq!(return_bin(10.0, 0.0, 10.0, 5), 4);
        assert_eq!(return_bin(3.99, 0.0, 10.0, 5), 1);
        assert_eq!(return_bin(7.0, 7.0, 7.0, 5), 0);
    }

    #[test]
    fn historical_dump_restores_both_queues() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ho.jsonl");
        let mut b = buffer(BufferScheme::HistoricalOnline, 2, 10);
        b.insert([t(8.0), t(1.0), t(9.0), t(2.0), t(3.0)]);
        b.save_jsonl(&path, 0, 1).unwrap();
        let mut c = buffer(BufferScheme::HistoricalOnline, 2, 10);
        c.load_jsonl(&path).unwrap();
        assert_eq!(returns(&c.sample().unwrap()), returns(&b.sample().unwrap()));
    }

    #[test]
    fn dump_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.jsonl");
        let mut b = buffer(BufferScheme::Online, 3, 10);
        b.insert([t(1.0), t(2.5)]);
        b.save_jsonl(&path, 0, 4).unwrap();
        let mut c = buffer(BufferScheme::Online, 3, 10);
        assert_eq!(c.load_jsonl(&path).unwrap(), 2);
        assert_eq!(returns(&c.sample().unwrap()), vec![1.0, 2.5]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn online_keeps_the_last_k_in_order(rets in proptest::collection::vec(-5.0f64..5.0, 0..40), k in 1usize..10) {
                let mut b = buffer(BufferScheme::Online, k, 10);
                b.insert(rets.iter().map(|&r| t(r)));
                let kept: Vec<f64> = b.online().map(|t| t.episodic_return).collect();
                let expected = rets[rets.len().saturating_sub(k)..].to_vec();
                prop_assert_eq!(kept, expected);
            }

            #[test]
            fn archive_matches_naive_sort(rets in proptest::collection::vec(0i32..6, 1..60), k in 1usize..12) {
                // small integer returns force plenty of ties
                let items: Vec<Arc<Trajectory>> = rets.iter().map(|&r| Arc::new(t(r as f64))).collect();
                let mut b = buffer(BufferScheme::HistoricalOnline, k, 10);
                for item in &items {
                    b.insert_one(Arc::clone(item));
                }
                let mut order: Vec<usize> = (0..items.len()).collect();
                order.sort_by(|&i, &j| rets[j].cmp(&rets[i]).then(j.cmp(&i)));
                order.truncate(k);
                let archived: Vec<&Arc<Trajectory>> = b.historical().collect();
                prop_assert_eq!(archived.len(), order.len());
                for (a, &i) in archived.iter().zip(&order) {
                    prop_assert!(Arc::ptr_eq(a, &items[i]));
                }
            }

            #[test]
            fn stratified_draws_are_even_across_bins(
                counts in proptest::collection::vec(4usize..60, 5),
                seed in 0u64..1000,
            ) {
                // bin b holds returns in [b + 0.05, b + 0.95]; the anchors fix the range to [0, 5]
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut items = vec![Arc::new(t(0.0)), Arc::new(t(5.0))];
                for (b, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        items.push(Arc::new(t(b as f64 + rng.random_range(0.05..0.95))));
                    }
                }
                let k = 20;
                let mut hist = [0usize; RETURN_BINS];
                let draws = 200;
                for _ in 0..draws {
                    let picks = stratified_indices(&items, k, &mut rng);
                    prop_assert_eq!(picks.len(), k);
                    for i in picks {
                        hist[return_bin(items[i].episodic_return, 0.0, 5.0, RETURN_BINS)] += 1;
                    }
                }
                let uniform = (draws * k) as f64 / RETURN_BINS as f64;
                for h in hist {
                    prop_assert!((h as f64 - uniform).abs() <= 0.1 * uniform, "{:?}", hist);
                }
            }
        }
    }
}
