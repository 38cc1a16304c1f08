use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateLimits {
    pub per_ip: u32,
    pub per_user: u32,
    pub window_secs: i64,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            per_ip: 1000,
            per_user: 100,
            window_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateWindow {
    pub key: String,
    pub window_start: i64,
    pub count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Limited {
    Ip,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateDecision {
    Allow,
    Deny { limited: Limited, retry_after: u64 },
}

impl RateDecision {
    pub fn is_allowed(self) -> bool {
        self == RateDecision::Allow
    }
}

/// Fixed-window counters keyed by `floor(now / window)`. Both the IP and
/// the principal limit apply to authenticated traffic; a request is counted
/// against either only when both allow it.
pub struct RateLimiter {
    limits: RateLimits,
    windows: Mutex<HashMap<String, RateWindow>>,
}

impl RateLimiter {
    pub fn new(limits: RateLimits) -> Self {
        Self {
            limits,
            windows: Mutex::default(),
        }
    }

    pub fn limits(&self) -> RateLimits {
        self.limits
    }

    pub fn check_rate(&self, ip: &str, principal: Option<&str>, now: i64) -> RateDecision {
        let w = self.limits.window_secs.max(1);
        let start = now.div_euclid(w) * w;
        let retry_after = (start + w - now).max(1) as u64;

        let mut map = self.windows.lock().unwrap();
        if map.len() > 50_000 {
            map.retain(|_, win| win.window_start == start);
        }
        let ip_key = format!("ip:{ip}");
        let user_key = principal.map(|p| format!("user:{p}"));

        let current = |map: &HashMap<String, RateWindow>, key: &str| {
            map.get(key)
                .filter(|win| win.window_start == start)
                .map_or(0, |win| win.count)
        };
        if current(&map, &ip_key) >= self.limits.per_ip {
            return RateDecision::Deny {
                limited: Limited::Ip,
                retry_after,
            };
        }
        if let Some(k) = &user_key {
            if current(&map, k) >= self.limits.per_user {
                return RateDecision::Deny {
                    limited: Limited::User,
                    retry_after,
                };
            }
        }
        for key in std::iter::once(ip_key).chain(user_key) {
            let win = map.entry(key.clone()).or_insert(RateWindow {
                key,
                window_start: start,
                count: 0,
            });
            if win.window_start != start {
                win.window_start = start;
                win.count = 0;
            }
            win.count += 1;
        }
        RateDecision::Allow
    }

    /// Current window for a key such as `ip:1.2.3.4` or `user:doc-000001`.
    pub fn window(&self, key: &str) -> Option<RateWindow> {
        self.windows.lock().unwrap().get(key).cloned()
    }
}
