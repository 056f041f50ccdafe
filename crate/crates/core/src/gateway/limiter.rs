//! Clocks, the sliding-window rate limiter and the in-flight ceiling.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock whose `sleep` returns at once and moves time forward. Used with the
/// mock backend and in tests so backoff and rate limits cost no wall time.
#[derive(Debug, Default)]
pub struct VirtualClock {
    nanos: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        self.nanos.fetch_add(d.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }

    fn sleep(&self, d: Duration) {
        let target = self.now() + d;
        self.nanos.fetch_max(target.as_nanos() as u64, Ordering::SeqCst);
    }
}

/// At most `limit` acquisitions in any window of length `interval`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    interval: Duration,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    /// `limit == 0` disables limiting.
    pub fn new(limit: usize, interval: Duration) -> Self {
        Self {
            limit,
            interval,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(0, Duration::ZERO)
    }

    /// Block until a slot is free, then claim it. Returns the issue time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = clock.now();
                if self.limit == 0 {
                    return now;
                }
                while issued.front().is_some_and(|t| *t + self.interval <= now) {
                    issued.pop_front();
                }
                if issued.len() < self.limit {
                    issued.push_back(now);
                    return now;
                }
                *issued.front().unwrap() + self.interval - now
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore for the global in-flight ceiling.
#[derive(Debug)]
pub struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit { sem: self }
    }

    pub fn available(&self) -> usize {
        *self.free.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.free.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}
