//! Time source abstraction so workflow timestamps, job timeouts and expiry
//! can be driven deterministically in tests.

use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to. Each read may optionally tick
/// forward by a fixed step so successive events get strictly increasing
/// timestamps.
#[derive(Debug)]
pub struct ManualClock {
    inner: Mutex<(DateTime<Utc>, Duration)>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self {
            inner: Mutex::new((start, Duration::zero())),
        }
    }

    pub fn ticking(start: DateTime<Utc>, step: Duration) -> Self {
        Self {
            inner: Mutex::new((start, step)),
        }
    }

    pub fn advance(&self, by: Duration) {
        self.inner.lock().0 += by;
    }

    pub fn set(&self, to: DateTime<Utc>) {
        self.inner.lock().0 = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        let mut guard = self.inner.lock();
        let current = guard.0;
        guard.0 = current + guard.1;
        current
    }
}

pub type SharedClock = Arc<dyn Clock>;

pub fn system() -> SharedClock {
    Arc::new(SystemClock)
}
