//! Gateway logic independent of any HTTP stack: rate limiting, the TTL
//! cache, and the path-prefix routing table.

mod cache;
mod rate_limit;
mod routing;

pub use cache::{summary_key, CacheEntry, CacheTtls, Namespace, TtlCache};
pub use rate_limit::{Limited, RateDecision, RateLimiter, RateLimits, RateWindow};
pub use routing::{route, Upstream, ROUTES};
