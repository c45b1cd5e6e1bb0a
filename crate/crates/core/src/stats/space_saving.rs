//! SpaceSaving frequent-item summary (Metwally et al.).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub item: u32,
    pub count: u64,
    /// Upper bound on how much `count` overestimates the true frequency.
    pub overestimation: u64,
}

/// Fixed-capacity counter set. For every tracked item
/// `count - overestimation <= true <= count`, and the error of any estimate
/// is at most `total_seen / capacity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSaving {
    capacity: usize,
    counters: Vec<Counter>,
    #[serde(skip)]
    index: HashMap<u32, usize>,
    total_seen: u64,
    evictions: u64,
}

impl SpaceSaving {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "SpaceSaving capacity must be positive");
        SpaceSaving {
            capacity,
            counters: Vec::with_capacity(capacity),
            index: HashMap::with_capacity(capacity),
            total_seen: 0,
            evictions: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn counters(&self) -> &[Counter] {
        &self.counters
    }

    pub fn get(&self, item: u32) -> Option<&Counter> {
        self.index_of(item).map(|i| &self.counters[i])
    }

    fn index_of(&self, item: u32) -> Option<usize> {
        if self.index.len() == self.counters.len() {
            self.index.get(&item).copied()
        } else {
            // index is not serialized; fall back to a scan until rebuilt
            self.counters.iter().position(|c| c.item == item)
        }
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self
            .counters
            .iter()
            .enumerate()
            .map(|(i, c)| (c.item, i))
            .collect();
    }

    pub fn insert(&mut self, item: u32) {
        if self.index.len() != self.counters.len() {
            self.rebuild_index();
        }
        self.total_seen += 1;
        if let Some(&i) = self.index.get(&item) {
            self.counters[i].count += 1;
            return;
        }
        if self.counters.len() < self.capacity {
            self.index.insert(item, self.counters.len());
            self.counters.push(Counter {
                item,
                count: 1,
                overestimation: 0,
            });
            return;
        }
        // Replace the minimum counter; ties go to the smallest item id.
        let (victim, _) = self
            .counters
            .iter()
            .enumerate()
            .min_by_key(|(_, c)| (c.count, c.item))
            .expect("capacity > 0");
        let min = self.counters[victim].count;
        self.index.remove(&self.counters[victim].item);
        self.index.insert(item, victim);
        self.counters[victim] = Counter {
            item,
            count: min + 1,
            overestimation: min,
        };
        self.evictions += 1;
    }

    /// Guaranteed bound on the estimation error of any item.
    pub fn error_bound(&self) -> f64 {
        if self.evictions == 0 {
            0.0
        } else {
            self.total_seen as f64 / self.capacity as f64
        }
    }

    /// Counters sorted by descending count, then ascending item id.
    pub fn ranked(&self) -> Vec<Counter> {
        let mut v = self.counters.clone();
        v.sort_by(|a, b| b.count.cmp(&a.count).then(a.item.cmp(&b.item)));
        v
    }
}
