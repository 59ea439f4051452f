//! Keyed segmentation cache with request coalescing: one in-flight fit per
//! key, concurrent callers waiting on the same cell, and least-recently
//! used eviction once the capacity is reached.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use tokio::sync::{Mutex, OnceCell};

use crate::handlers::{Analysis, ApiError};

pub(crate) type Key = (u64, u64, i64, i64);
type Cell = Arc<OnceCell<Arc<Analysis>>>;

pub(crate) struct AnalysisCache {
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    cells: HashMap<Key, Cell>,
    order: VecDeque<Key>,
    capacity: usize,
}

impl AnalysisCache {
    pub(crate) fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(CacheInner {
                cells: HashMap::new(),
                order: VecDeque::new(),
                capacity: capacity.max(1),
            }),
        }
    }

    /// The analysis for `key`, computing it through `init` at most once per
    /// residency. A failed computation leaves the cell reusable.
    pub(crate) async fn get_or_compute<F, Fut>(&self, key: Key, init: F) -> Result<Arc<Analysis>, ApiError>
    where
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = Result<Arc<Analysis>, ApiError>>,
    {
        let cell = {
            let mut inner = self.inner.lock().await;
            if let Some(cell) = inner.cells.get(&key) {
                let cell = cell.clone();
                // Refresh recency.
                if let Some(pos) = inner.order.iter().position(|k| *k == key) {
                    inner.order.remove(pos);
                }
                inner.order.push_back(key);
                cell
            } else {
                let cell: Cell = Arc::new(OnceCell::new());
                inner.cells.insert(key, cell.clone());
                inner.order.push_back(key);
                while inner.order.len() > inner.capacity {
                    if let Some(old) = inner.order.pop_front() {
                        inner.cells.remove(&old);
                    }
                }
                cell
            }
        };
        cell.get_or_try_init(init).await.cloned()
    }
}
