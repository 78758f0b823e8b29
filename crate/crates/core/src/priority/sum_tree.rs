use rand::Rng as _;

use crate::error::{Error, Result};
use crate::Rng;

/// Complete binary tree of partial sums over slot priorities.
///
/// Stored as a 1-indexed heap: `nodes[1]` is the root and leaf `i` lives at
/// `nodes[width + i]`, with `width` the capacity rounded up to a power of two.
/// Padding leaves stay at 0 and are never sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    capacity: usize,
    width: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let width = capacity.max(1).next_power_of_two();
        Self {
            capacity,
            width,
            nodes: vec![0.0; 2 * width],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Sum of all leaves.
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, slot: usize) -> Result<f64> {
        self.check(slot)?;
        Ok(self.nodes[self.width + slot])
    }

    pub fn leaves(&self) -> &[f64] {
        &self.nodes[self.width..self.width + self.capacity]
    }

    fn check(&self, slot: usize) -> Result<()> {
        if slot >= self.capacity {
            return Err(Error::Index {
                index: slot,
                len: self.capacity,
            });
        }
        Ok(())
    }

    /// Sets a leaf and refreshes its ancestors in `O(log m)`.
    ///
    /// Parents are recomputed from their children rather than adjusted by a
    /// delta, so sums never drift over long update sequences.
    pub fn update(&mut self, slot: usize, priority: f64) -> Result<()> {
        self.check(slot)?;
        if !(priority.is_finite() && priority >= 0.0) {
            return Err(Error::domain(format!(
                "leaf priority must be finite and >= 0, got {priority}"
            )));
        }
        let mut i = self.width + slot;
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
        Ok(())
    }

    /// Recomputes every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for i in (1..self.width).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative-sum interval contains `mass`, for `mass` in `[0, total)`.
    ///
    /// Never returns a zero leaf: rounding that would walk into an empty
    /// subtree is redirected to its non-empty sibling.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.width {
            let left = 2 * i;
            if mass < self.nodes[left] || self.nodes[left + 1] <= 0.0 {
                i = left;
            } else {
                mass -= self.nodes[left];
                i = left + 1;
            }
        }
        i - self.width
    }

    /// Draws one slot with probability `leaf / total`.
    pub fn sample_one(&self, rng: &mut Rng) -> Result<usize> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(self.find(rng.random::<f64>() * total))
    }

    /// Draws `count` slots independently, with replacement.
    pub fn sample(&self, count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn root_tracks_leaves() {
        let mut t = SumTree::new(8);
        for i in 0..8 {
            t.update(i, i as f64).unwrap();
        }
        assert_eq!(t.total(), 28.0);
        assert_eq!(t.find(4.0), 3);
        assert_eq!(t.find(18.0), 6);
    }

    #[test]
    fn eviction_to_zero_drops_root() {
        let mut t = SumTree::new(5);
        for i in 0..5 {
            t.update(i, 0.5 + i as f64).unwrap();
        }
        let before = t.total();
        t.update(3, 0.0).unwrap();
        assert!((before - t.total() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_slot() {
        let mut t = SumTree::new(3);
        assert!(matches!(t.update(3, 1.0), Err(Error::Index { index: 3, len: 3 })));
        assert!(t.update(0, -1.0).is_err());
        assert!(t.update(0, f64::NAN).is_err());
    }

    #[test]
    fn empty_tree_refuses_to_sample() {
        let t = SumTree::new(4);
        assert!(matches!(t.sample_one(&mut seeded_rng(0)), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn single_occupied_slot_always_drawn() {
        let mut t = SumTree::new(7);
        t.update(5, 0.3).unwrap();
        let mut rng = seeded_rng(11);
        assert!(t.sample(10_000, &mut rng).unwrap().iter().all(|&s| s == 5));
    }

    #[test]
    fn zero_leaves_never_drawn() {
        let mut t = SumTree::new(6);
        t.update(0, 1e-300).unwrap();
        t.update(4, 1.0).unwrap();
        let mut rng = seeded_rng(3);
        for s in t.sample(100_000, &mut rng).unwrap() {
            assert!(s == 0 || s == 4);
        }
        // masses at the very top of the range stay inside occupied leaves
        assert_eq!(t.find(t.total()), 4);
        assert_eq!(t.find(f64::MAX), 4);
    }

    #[test]
    fn capacity_one() {
        let mut t = SumTree::new(1);
        t.update(0, 0.7).unwrap();
        assert_eq!(t.total(), 0.7);
        assert_eq!(t.sample_one(&mut seeded_rng(1)).unwrap(), 0);
    }
}
