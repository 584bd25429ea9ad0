//! Blocking concurrency and rate limits shared by the remote providers.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding the number of requests in flight.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut current = self.current.lock().unwrap();
        while *current >= self.max {
            current = self.freed.wait(current).unwrap();
        }
        *current += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut current = self.limiter.current.lock().unwrap();
        *current -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Sliding one-minute token budget. `reserve` blocks until the request fits.
#[derive(Debug)]
pub struct TokenBudget {
    per_minute: u64,
    window: Mutex<Vec<(Instant, u64)>>,
}

impl TokenBudget {
    pub fn new(per_minute: u64) -> Self {
        Self {
            per_minute,
            window: Mutex::new(Vec::new()),
        }
    }

    pub fn reserve(&self, tokens: u64) {
        // A single request larger than the budget is let through alone.
        let tokens = tokens.min(self.per_minute);
        loop {
            let wait = {
                let mut window = self.window.lock().unwrap();
                let now = Instant::now();
                window.retain(|(t, _)| now.duration_since(*t) < Duration::from_secs(60));
                let used: u64 = window.iter().map(|(_, n)| n).sum();
                if used + tokens <= self.per_minute {
                    window.push((now, tokens));
                    return;
                }
                let oldest = window[0].0;
                Duration::from_secs(60).saturating_sub(now.duration_since(oldest))
            };
            std::thread::sleep(wait.max(Duration::from_millis(10)));
        }
    }
}
