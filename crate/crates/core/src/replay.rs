//! Fixed-capacity reservoir buffer for rehearsal.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;

use crate::data_io::LabeledExample;
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 500;

/// Uniform sample of everything streamed through it (Algorithm R).
#[derive(Debug, Clone)]
pub struct ReservoirBuffer {
    capacity: usize,
    items: Vec<LabeledExample>,
    seen: u64,
    rng: Rng,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("reservoir capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
            rng: seeded(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[LabeledExample] {
        &self.items
    }

    pub fn insert(&mut self, item: LabeledExample) {
        let draw = if self.items.len() < self.capacity {
            0
        } else {
            self.rng.random_range(0..=self.seen)
        };
        self.insert_with_draw(item, draw);
    }

    /// Insert with an explicit draw `j` from `0..=seen` (ignored while filling):
    /// the item replaces slot `j` when `j < capacity` and is dropped otherwise.
    pub fn insert_with_draw(&mut self, item: LabeledExample, draw: u64) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else if (draw as usize) < self.capacity {
            self.items[draw as usize] = item;
        }
        self.seen += 1;
    }

    /// `n` items drawn uniformly with replacement; independent of the
    /// buffer's own generator.
    pub fn batch(&self, n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if self.items.is_empty() {
            return Err(Error::State("cannot sample from an empty reservoir".into()));
        }
        let mut rng = seeded(seed);
        Ok((0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }

    /// One line per stored item: `slot,label,origin` (origin empty for synthetic items).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("slot,label,origin\n");
        for (i, it) in self.items.iter().enumerate() {
            let origin = it.origin.map(|o| o.to_string()).unwrap_or_default();
            out.push_str(&format!("{i},{},{origin}\n", it.y));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn reservoir_insert(buffer: &mut ReservoirBuffer, item: LabeledExample) {
    buffer.insert(item);
}

pub fn reservoir_batch(buffer: &ReservoirBuffer, n: usize, seed: u64) -> Result<Vec<LabeledExample>> {
    buffer.batch(n, seed)
}
