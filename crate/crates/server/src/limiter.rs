//! Rate limiting for anonymous warnings.
//!
//! Sessions are keyed by a salted hash that lives only in memory; the salt
//! is random per process, so keys cannot be correlated across restarts
//! and nothing here is ever written out.

use std::collections::hash_map::RandomState;
use std::collections::HashMap;
use std::hash::BuildHasher;
use std::time::{Duration, Instant};

const WINDOW: Duration = Duration::from_secs(60);

pub struct WarnLimiter {
    salt: RandomState,
    per_window: u32,
    windows: HashMap<u64, (Instant, u32)>,
}

impl WarnLimiter {
    pub fn new(per_window: u32) -> Self {
        Self { salt: RandomState::new(), per_window, windows: HashMap::new() }
    }

    /// Counts one warning for `session`; false when over the limit.
    pub fn allow(&mut self, session: &str, now: Instant) -> bool {
        let key = self.salt.hash_one(session);
        self.windows.retain(|_, (start, _)| now.duration_since(*start) < WINDOW);
        let slot = self.windows.entry(key).or_insert((now, 0));
        if slot.1 >= self.per_window {
            return false;
        }
        slot.1 += 1;
        true
    }
}
