use std::time::Duration;

use rand::Rng;

/// Exponential backoff with jitter for transient network failures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            factor: 1.0,
        }
    }

    /// Delay to wait after the `failed_attempt`-th failure (1-based). The
    /// nominal delay doubles each time; jitter draws uniformly from its
    /// upper half.
    pub fn delay_after(&self, failed_attempt: u32) -> Duration {
        let exp = failed_attempt.saturating_sub(1) as i32;
        let nominal = self.base_delay.as_secs_f64() * self.factor.powi(exp);
        if nominal <= 0.0 {
            return Duration::ZERO;
        }
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_secs_f64(nominal * jitter)
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// attempt budget is spent. `retry_hint` classifies an error: `None` means
    /// give up, `Some(d)` means retry after at least `d` (zero to use the
    /// backoff schedule).
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, E>,
        retry_hint: impl Fn(&E) -> Option<Duration>,
    ) -> Result<T, E> {
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    let Some(hint) = retry_hint(&e) else {
                        return Err(e);
                    };
                    if attempt >= self.max_attempts {
                        return Err(e);
                    }
                    let wait = self.delay_after(attempt).max(hint);
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                    attempt += 1;
                }
            }
        }
    }
}
