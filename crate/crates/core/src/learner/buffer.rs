use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One buffered step. There is deliberately no environment reward or cost
/// field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a_n: [f64; 2],
    /// Present iff `intervened`.
    pub a_h: Option<[f64; 2]>,
    pub intervened: bool,
    pub rising_cost: f64,
    pub s_next: Vec<f64>,
    /// The bootstrap is cut (success or off-road); horizon truncation is not.
    pub terminal: bool,
}

impl Transition {
    /// The action actually applied to the environment.
    pub fn executed(&self) -> [f64; 2] {
        match self.a_h {
            Some(a) if self.intervened => a,
            _ => self.a_n,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.intervened != self.a_h.is_some() {
            return Err("a_h must be present iff intervened".into());
        }
        if !(0.0..=2.0).contains(&self.rising_cost) || (!self.intervened && self.rising_cost > 0.0) {
            return Err(format!("rising cost {} invalid", self.rising_cost));
        }
        Ok(())
    }

    /// Stable byte encoding, used to compare buffers.
    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        let mut f = |v: f64| out.extend_from_slice(&v.to_bits().to_le_bytes());
        for &v in &self.s {
            f(v);
        }
        f(self.a_n[0]);
        f(self.a_n[1]);
        let a_h = self.a_h.unwrap_or([f64::NAN; 2]);
        f(a_h[0]);
        f(a_h[1]);
        f(self.rising_cost);
        for &v in &self.s_next {
            f(v);
        }
        out.push(self.intervened as u8);
        out.push(self.terminal as u8);
    }
}

/// Bounded FIFO replay buffer.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

/// Column-stacked batch, ready for the losses.
#[derive(Clone, Debug)]
pub struct Batch {
    pub s: Array2<f64>,
    pub executed: Array2<f64>,
    pub a_n: Array2<f64>,
    /// Expert action, zero rows where not intervened.
    pub a_h: Array2<f64>,
    pub intervened: Vec<bool>,
    pub cost: Array1<f64>,
    pub s_next: Array2<f64>,
    /// 1.0 where the bootstrap is cut.
    pub done: Array1<f64>,
    /// Only filled for the reward-shaped baseline.
    pub reward: Option<Array1<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let b = items.len();
        let d = items.first().map_or(0, |t| t.s.len());
        let mut s = Array2::zeros((b, d));
        let mut s_next = Array2::zeros((b, d));
        let mut executed = Array2::zeros((b, 2));
        let mut a_n = Array2::zeros((b, 2));
        let mut a_h = Array2::zeros((b, 2));
        let mut cost = Array1::zeros(b);
        let mut done = Array1::zeros(b);
        let mut intervened = Vec::with_capacity(b);
        for (i, t) in items.iter().enumerate() {
            for j in 0..d {
                s[[i, j]] = t.s[j];
                s_next[[i, j]] = t.s_next[j];
            }
            let e = t.executed();
            for j in 0..2 {
                executed[[i, j]] = e[j];
                a_n[[i, j]] = t.a_n[j];
                a_h[[i, j]] = t.a_h.map_or(0.0, |a| a[j]);
            }
            cost[i] = t.rising_cost;
            done[i] = if t.terminal { 1.0 } else { 0.0 };
            intervened.push(t.intervened);
        }
        Batch {
            s,
            executed,
            a_n,
            a_h,
            intervened,
            cost,
            s_next,
            done,
            reward: None,
        }
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry when full. Returns the evicted one.
    pub fn push(&mut self, t: Transition) -> Option<Transition> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(t);
        evicted
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.items.iter()
    }

    /// Uniform sample with replacement, returning the indices used.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let items: Vec<&Transition> = indices.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&items)
    }

    /// Byte encoding of the whole buffer in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in &self.items {
            t.to_bytes(&mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: usize, intervened: bool) -> Transition {
        Transition {
            s: vec![i as f64, 0.5],
            a_n: [0.1, 0.2],
            a_h: intervened.then_some([0.3, -0.4]),
            intervened,
            rising_cost: if intervened { 0.5 } else { 0.0 },
            s_next: vec![i as f64 + 1.0, 0.5],
            terminal: i % 3 == 0,
        }
    }

    #[test]
    fn fifo_eviction_is_oldest_first() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..3 {
            assert!(b.push(t(i, false)).is_none());
        }
        let ev = b.push(t(3, false)).unwrap();
        assert_eq!(ev.s[0], 0.0);
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().s[0], 1.0);
    }

    #[test]
    fn batch_columns() {
        let mut b = ReplayBuffer::new(10);
        b.push(t(0, true));
        b.push(t(1, false));
        let batch = b.batch(&[0, 1]);
        assert_eq!(batch.executed.row(0).to_vec(), vec![0.3, -0.4]);
        assert_eq!(batch.executed.row(1).to_vec(), vec![0.1, 0.2]);
        assert_eq!(batch.a_h.row(1).to_vec(), vec![0.0, 0.0]);
        assert_eq!(batch.done.to_vec(), vec![1.0, 0.0]);
        assert_eq!(batch.intervened, vec![true, false]);
    }

    #[test]
    fn invariant_check() {
        assert!(t(0, true).check().is_ok());
        let mut bad = t(0, false);
        bad.rising_cost = 0.3;
        assert!(bad.check().is_err());
        bad.rising_cost = 0.0;
        bad.a_h = Some([0.0, 0.0]);
        assert!(bad.check().is_err());
    }
}
