use rand::Rng;

use super::Transition;

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    min_fill: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, min_fill: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            min_fill,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ready(&self) -> bool {
        self.items.len() >= self.min_fill.max(1)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `None` until the minimum fill is reached.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Option<Vec<&Transition>> {
        if !self.ready() {
            return None;
        }
        Some((0..batch).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn tr(r: f64) -> Transition {
        let o: Arc<[f64]> = Arc::from(vec![0.0]);
        Transition {
            obs: o.clone(),
            action: 0,
            reward: r,
            next_obs: o,
            terminal: false,
        }
    }

    #[test]
    fn waits_for_min_fill_and_overwrites_oldest() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(3, 2);
        buf.push(tr(0.0));
        assert!(buf.sample(4, &mut rng).is_none());
        for r in 1..5 {
            buf.push(tr(r as f64));
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.sample(200, &mut rng).unwrap().iter().map(|t| t.reward).collect();
        assert!(rewards.iter().all(|&r| r >= 2.0));
        for want in [2.0, 3.0, 4.0] {
            assert!(rewards.contains(&want));
        }
    }
}
