use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

#[derive(Debug, Default)]
struct Inner {
    heap: BinaryHeap<Reverse<(Instant, u64, String)>>,
    seq: u64,
    closed: bool,
}

/// Delay queue of job ids. Items become visible to [`JobQueue::pop`] once
/// their due time passes; ties pop in insertion order.
#[derive(Debug)]
pub struct JobQueue {
    inner: Mutex<Inner>,
    ready: Condvar,
    capacity: usize,
}

impl JobQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(Inner::default()),
            ready: Condvar::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether `n` more fresh items fit under the configured depth.
    pub fn has_room(&self, n: usize) -> bool {
        self.len() + n <= self.capacity
    }

    pub fn push(&self, id: String, delay: Duration) {
        let mut inner = self.inner.lock();
        inner.seq += 1;
        let seq = inner.seq;
        inner.heap.push(Reverse((Instant::now() + delay, seq, id)));
        self.ready.notify_one();
    }

    /// Blocks until an item is due or the queue is closed.
    pub fn pop(&self) -> Option<String> {
        let mut inner = self.inner.lock();
        loop {
            if inner.closed {
                return None;
            }
            let now = Instant::now();
            match inner.heap.peek() {
                Some(Reverse((due, _, _))) if *due <= now => {
                    return inner.heap.pop().map(|Reverse((_, _, id))| id);
                }
                Some(Reverse((due, _, _))) => {
                    let wait = *due - now;
                    self.ready.wait_for(&mut inner, wait);
                }
                None => self.ready.wait(&mut inner),
            }
        }
    }

    /// Takes the earliest item regardless of its due time.
    pub fn pop_now(&self) -> Option<String> {
        self.inner.lock().heap.pop().map(|Reverse((_, _, id))| id)
    }

    pub fn close(&self) {
        self.inner.lock().closed = true;
        self.ready.notify_all();
    }
}
