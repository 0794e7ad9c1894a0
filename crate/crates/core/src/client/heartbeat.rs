use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeartbeatConfig {
    pub interval: Duration,
    pub miss_threshold: u32,
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self {
            interval: Duration::from_millis(100),
            miss_threshold: 3,
        }
    }
}

impl HeartbeatConfig {
    /// Nominal time from the first missed PONG to a declared disconnect.
    pub fn nominal_detection(&self) -> Duration {
        self.interval * self.miss_threshold
    }
}

/// Counts consecutive missed heartbeats.
#[derive(Debug, Clone)]
pub struct MissDetector {
    threshold: u32,
    misses: u32,
    last_ok: Instant,
}

impl MissDetector {
    pub fn new(threshold: u32, now: Instant) -> Self {
        Self {
            threshold: threshold.max(1),
            misses: 0,
            last_ok: now,
        }
    }

    pub fn ok(&mut self, now: Instant) {
        self.misses = 0;
        self.last_ok = now;
    }

    /// Records a miss. Returns the time since the last answered heartbeat
    /// once the threshold is reached.
    pub fn miss(&mut self, now: Instant) -> Option<Duration> {
        self.misses += 1;
        (self.misses >= self.threshold).then(|| now.saturating_duration_since(self.last_ok))
    }

    pub fn misses(&self) -> u32 {
        self.misses
    }

    pub fn reset(&mut self, now: Instant) {
        self.ok(now);
    }
}
