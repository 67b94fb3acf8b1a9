use rand::Rng;

use crate::{Error, Result};

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
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

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn sample_indices<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::NotEnoughSamples {
                len: self.items.len(),
                batch,
            });
        }
        Ok((0..batch).map(|_| rng.gen_range(0..self.items.len())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for k in 0..5 {
            b.push(k);
        }
        assert_eq!(b.len(), 3);
        let mut v: Vec<i32> = (0..3).map(|i| *b.get(i)).collect();
        v.sort();
        assert_eq!(v, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_needs_a_full_batch() {
        let mut b = ReplayBuffer::new(10);
        let mut r = seeded(0);
        assert!(b.sample_indices(2, &mut r).is_err());
        b.push(1);
        b.push(2);
        let idx = b.sample_indices(2, &mut r).unwrap();
        assert!(idx.iter().all(|&i| i < 2));
    }
}
