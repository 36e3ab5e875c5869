//! Retry policy for device connections and the clock it sleeps on.

use std::future::Future;
use std::pin::Pin;
use std::sync::Mutex;
use std::time::Duration;

pub const BACKOFF_BASE: Duration = Duration::from_millis(500);
pub const BACKOFF_FACTOR: u32 = 2;
pub const BACKOFF_CAP: Duration = Duration::from_secs(30);
/// Consecutive failures before a device-lost event.
pub const LOST_AFTER_FAILURES: u32 = 3;

/// Delay before the retry that follows the `n`-th consecutive failure.
pub fn backoff_delay(n: u32) -> Duration {
    let exp = n.saturating_sub(1).min(16);
    BACKOFF_BASE
        .saturating_mul(BACKOFF_FACTOR.saturating_pow(exp))
        .min(BACKOFF_CAP)
}

#[derive(Debug, Clone, Default)]
pub struct Backoff {
    failures: u32,
}

impl Backoff {
    /// Records a failure and returns how long to wait before retrying.
    pub fn failure(&mut self) -> Duration {
        self.failures = self.failures.saturating_add(1);
        backoff_delay(self.failures)
    }

    pub fn success(&mut self) {
        self.failures = 0;
    }

    pub fn failures(&self) -> u32 {
        self.failures
    }
}

pub type Sleep<'a> = Pin<Box<dyn Future<Output = ()> + Send + 'a>>;

pub trait Clock: Send + Sync {
    fn sleep(&self, d: Duration) -> Sleep<'_>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokioClock;

impl Clock for TokioClock {
    fn sleep(&self, d: Duration) -> Sleep<'_> {
        Box::pin(tokio::time::sleep(d))
    }
}

/// Returns immediately and records every requested delay.
#[derive(Debug, Default)]
pub struct FakeClock {
    slept: Mutex<Vec<Duration>>,
}

impl FakeClock {
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().expect("fake clock poisoned").clone()
    }
}

impl Clock for FakeClock {
    fn sleep(&self, d: Duration) -> Sleep<'_> {
        self.slept.lock().expect("fake clock poisoned").push(d);
        Box::pin(async { tokio::task::yield_now().await })
    }
}
