//! Replay memory with FIFO eviction, uniform sampling and rank-based
//! prioritized sampling.
//!
//! Storage order doubles as rank order: [`ReplayMemory::sort_by_td`]
//! reorders entries by descending priority and
//! [`ReplayMemory::sample_rank_prioritized`] treats position `i` as rank `i + 1`.
//! Indices handed out by the samplers stay valid until the next `push` or sort.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::worldsim::ActionId;

pub const DEFAULT_CAPACITY: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Tensor,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Tensor,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedEntry {
    pub transition: Transition,
    /// Magnitude of the latest TD error seen for this transition.
    pub priority: f64,
    pub insertion_index: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    entries: Vec<PrioritizedEntry>,
    next_insertion: u64,
    max_priority: f64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self { capacity, entries: Vec::with_capacity(capacity.min(1 << 16)), next_insertion: 0, max_priority: 1.0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PrioritizedEntry] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Option<&PrioritizedEntry> {
        self.entries.get(index)
    }

    pub fn transitions(&self, indices: &[usize]) -> Vec<&Transition> {
        indices.iter().map(|&i| &self.entries[i].transition).collect()
    }

    /// Inserts with the largest priority seen so far, evicting the oldest
    /// entry when full.
    pub fn push(&mut self, transition: Transition) {
        if self.entries.len() == self.capacity {
            let oldest = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.insertion_index)
                .map(|(i, _)| i)
                .expect("full memory is non-empty");
            self.entries.remove(oldest);
        }
        self.entries.push(PrioritizedEntry {
            transition,
            priority: self.max_priority,
            insertion_index: self.next_insertion,
        });
        self.next_insertion += 1;
    }

    fn check_request(&self, b: usize) -> Result<()> {
        if b == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if b > self.entries.len() {
            return Err(Error::InsufficientData { requested: b, available: self.entries.len() });
        }
        Ok(())
    }

    /// `b` distinct indices drawn uniformly.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, b: usize, rng: &mut R) -> Result<Vec<usize>> {
        self.check_request(b)?;
        Ok(rand::seq::index::sample(rng, self.entries.len(), b).into_vec())
    }

    /// Orders entries by descending priority, ties by insertion order.
    pub fn sort_by_td(&mut self) {
        self.entries.sort_by(|a, b| {
            b.priority.total_cmp(&a.priority).then(a.insertion_index.cmp(&b.insertion_index))
        });
    }

    /// `b` distinct indices with `P(rank k) ∝ k^-alpha` over the current order.
    pub fn sample_rank_prioritized<R: Rng + ?Sized>(&self, b: usize, alpha: f64, rng: &mut R) -> Result<Vec<usize>> {
        self.check_request(b)?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Argument(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let n = self.entries.len();
        let weights = rank_weights(n, alpha);
        if 2 * b <= n {
            // Sequential draws without replacement equal draws from the full
            // distribution with repeats rejected.
            let mut cumulative = Vec::with_capacity(n);
            let mut acc = 0.0;
            for w in &weights {
                acc += w;
                cumulative.push(acc);
            }
            let mut chosen = Vec::with_capacity(b);
            let mut taken = vec![false; n];
            while chosen.len() < b {
                let u = rng.gen::<f64>() * acc;
                let i = cumulative.partition_point(|&c| c <= u).min(n - 1);
                if !taken[i] {
                    taken[i] = true;
                    chosen.push(i);
                }
            }
            Ok(chosen)
        } else {
            let mut remaining = weights;
            let mut total: f64 = remaining.iter().sum();
            let mut chosen = Vec::with_capacity(b);
            for _ in 0..b {
                let u = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = None;
                for (i, w) in remaining.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    acc += w;
                    pick = Some(i);
                    if u < acc {
                        break;
                    }
                }
                let i = pick.expect("remaining weight is positive");
                total -= remaining[i];
                remaining[i] = 0.0;
                chosen.push(i);
            }
            Ok(chosen)
        }
    }

    /// Sets `priority_i = |td_error_i|`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        if indices.len() != td_errors.len() {
            return Err(Error::Argument(format!("{} indices but {} TD errors", indices.len(), td_errors.len())));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.entries.len()) {
            return Err(Error::Argument(format!("index {bad} out of range for memory of size {}", self.entries.len())));
        }
        if let Some(bad) = td_errors.iter().find(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!("non-finite TD error {bad}")));
        }
        for (&i, &e) in indices.iter().zip(td_errors) {
            let p = e.abs();
            self.entries[i].priority = p;
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }
}

/// Unnormalized rank weights `k^-alpha` for ranks `1..=n`.
pub fn rank_weights(n: usize, alpha: f64) -> Vec<f64> {
    (1..=n).map(|k| (k as f64).powf(-alpha)).collect()
}

/// Normalized rank-sampling distribution for a single draw.
pub fn rank_probabilities(n: usize, alpha: f64) -> Vec<f64> {
    let w = rank_weights(n, alpha);
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Importance-sampling corrections `(n P(rank))^-beta` for sampled ranks,
/// scaled so the least likely rank gets weight 1.
pub fn importance_weights(n: usize, ranks: &[usize], alpha: f64, beta: f64) -> Vec<f64> {
    let p = rank_probabilities(n, alpha);
    let raw = |k: usize| (n as f64 * p[k]).powf(-beta);
    let max = raw(n - 1);
    ranks.iter().map(|&k| raw(k) / max).collect()
}

const DUMP_MAGIC: &[u8; 8] = b"UAVXRPL1";

/// Debug dump of the memory contents.
///
/// ```text
/// magic      8 bytes "UAVXRPL1"
/// count      u64 LE
/// state_len  u32 LE
/// per transition, in storage order:
///   action u8, terminal u8, reward f64, priority f64, insertion_index u64,
///   state state_len * f64, next_state state_len * f64
/// ```
/// All numbers little-endian.
pub fn write_replay_dump(mem: &ReplayMemory, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let state_len = mem.entries.first().map(|e| e.transition.state.len()).unwrap_or(0);
    let mut buf = Vec::new();
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&(mem.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(state_len as u32).to_le_bytes());
    w.write_all(&buf).map_err(io)?;
    for e in &mem.entries {
        let t = &e.transition;
        if t.state.len() != state_len || t.next_state.len() != state_len {
            return Err(Error::shape(state_len, t.state.len()));
        }
        buf.clear();
        buf.push(t.action.index() as u8);
        buf.push(t.terminal as u8);
        buf.extend_from_slice(&t.reward.to_le_bytes());
        buf.extend_from_slice(&e.priority.to_le_bytes());
        buf.extend_from_slice(&e.insertion_index.to_le_bytes());
        for v in t.state.values().iter().chain(t.next_state.values()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_replay_dump(path: &Path, capacity: usize) -> Result<ReplayMemory> {
    let fmt = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(fmt("truncated".into()));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != DUMP_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let state_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let f64_at = |b: &[u8], i: usize| f64::from_le_bytes(b[i * 8..i * 8 + 8].try_into().unwrap());
    let mut mem = ReplayMemory::new(capacity.max(count).max(1))?;
    for _ in 0..count {
        let head = take(2 + 8 + 8 + 8)?;
        let action = ActionId::new(head[0] as usize).map_err(|e| fmt(e.to_string()))?;
        let terminal = head[1] != 0;
        let reward = f64::from_le_bytes(head[2..10].try_into().unwrap());
        let priority = f64::from_le_bytes(head[10..18].try_into().unwrap());
        let insertion_index = u64::from_le_bytes(head[18..26].try_into().unwrap());
        let body = take(16 * state_len)?;
        let state: Vec<f64> = (0..state_len).map(|i| f64_at(body, i)).collect();
        let next: Vec<f64> = (0..state_len).map(|i| f64_at(body, state_len + i)).collect();
        let transition = Transition {
            state: Tensor::vector(state).map_err(|e| fmt(e.to_string()))?,
            action,
            reward,
            next_state: Tensor::vector(next).map_err(|e| fmt(e.to_string()))?,
            terminal,
        };
        mem.entries.push(PrioritizedEntry { transition, priority, insertion_index });
        mem.next_insertion = mem.next_insertion.max(insertion_index + 1);
        mem.max_priority = mem.max_priority.max(priority);
    }
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn transition(tag: f64) -> Transition {
        Transition {
            state: Tensor::vector(vec![tag, 0.0]).unwrap(),
            action: ActionId::FORWARD,
            reward: tag,
            next_state: Tensor::vector(vec![tag, 1.0]).unwrap(),
            terminal: false,
        }
    }

    fn filled(n: usize) -> ReplayMemory {
        let mut m = ReplayMemory::new(n.max(1)).unwrap();
        for i in 0..n {
            m.push(transition(i as f64));
        }
        m
    }

    #[test]
    fn capacity_and_fifo_eviction() {
        let mut m = ReplayMemory::new(DEFAULT_CAPACITY).unwrap();
        for i in 0..5001 {
            m.push(transition(i as f64));
        }
        assert_eq!(m.len(), 5000);
        assert!(m.entries().iter().all(|e| e.transition.reward != 0.0));
        assert_eq!(m.entries().iter().map(|e| e.insertion_index).min(), Some(1));
    }

    #[test]
    fn eviction_ignores_sort_order() {
        let mut m = filled(3);
        m.update_priorities(&[0, 1, 2], &[0.1, 0.2, 5.0]).unwrap();
        m.sort_by_td();
        m.push(transition(9.0));
        let mut kept: Vec<u64> = m.entries().iter().map(|e| e.insertion_index).collect();
        kept.sort();
        assert_eq!(kept, vec![1, 2, 3]);
    }

    #[test]
    fn fresh_entries_get_max_priority() {
        let mut m = filled(2);
        m.update_priorities(&[1], &[-7.0]).unwrap();
        m.push(transition(5.0));
        let fresh = m.entries().iter().find(|e| e.insertion_index == 2).unwrap();
        assert_eq!(fresh.priority, 7.0);
    }

    #[test]
    fn full_uniform_draw_covers_everything() {
        let m = filled(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = m.sample_uniform(10, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_errors() {
        let m = filled(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.sample_uniform(0, &mut rng), Err(Error::Argument(_))));
        assert!(matches!(m.sample_uniform(4, &mut rng), Err(Error::InsufficientData { .. })));
        assert!(matches!(m.sample_rank_prioritized(4, 0.7, &mut rng), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn sort_orders_descending_and_is_stable() {
        let mut m = filled(3);
        m.update_priorities(&[0, 1, 2], &[1.0, 5.0, 3.0]).unwrap();
        m.sort_by_td();
        let p: Vec<f64> = m.entries().iter().map(|e| e.priority).collect();
        assert_eq!(p, vec![5.0, 3.0, 1.0]);
        let snapshot = m.entries().to_vec();
        m.sort_by_td();
        assert_eq!(m.entries(), &snapshot[..]);

        let mut eq = filled(4);
        eq.sort_by_td();
        let order: Vec<u64> = eq.entries().iter().map(|e| e.insertion_index).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn update_priorities_behaviour() {
        let mut m = filled(3);
        m.update_priorities(&[1], &[-3.0]).unwrap();
        assert_eq!(m.entries()[1].priority, 3.0);
        m.update_priorities(&[0, 1, 2], &[2.0, 0.0, 4.0]).unwrap();
        m.sort_by_td();
        assert_eq!(m.entries()[2].transition.reward, 1.0);
        assert!(matches!(m.update_priorities(&[3], &[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn rank_probabilities_closed_form() {
        let p = rank_probabilities(3, 1.0);
        for (a, b) in p.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(rank_probabilities(5, 0.0).iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn rank_sampling_without_replacement_both_paths() {
        let m = filled(20);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in [3, 15, 20] {
            let mut idx = m.sample_rank_prioritized(b, 1.0, &mut rng).unwrap();
            idx.sort();
            idx.dedup();
            assert_eq!(idx.len(), b);
        }
    }

    #[test]
    fn dump_round_trip() {
        let mut m = filled(4);
        m.update_priorities(&[2], &[3.5]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.bin");
        write_replay_dump(&m, &path).unwrap();
        let back = read_replay_dump(&path, 10).unwrap();
        assert_eq!(back.entries(), m.entries());
    }
}
