//! Bounded retries with exponential backoff for the HTTP clients.

use std::future::Future;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 200,
        }
    }
}

/// Outcome of a single failed attempt.
pub(crate) enum AttemptError<E> {
    /// Worth retrying (transport failure, 5xx, 429).
    Transient(String),
    /// Retrying will not help.
    Fatal(E),
}

pub(crate) enum RetryError<E> {
    Exhausted { attempts: u32, last: String },
    Fatal(E),
}

/// Runs `op` until it succeeds, fails fatally, or the policy runs out.
/// Returns the value together with the number of attempts made.
pub(crate) async fn with_retries<T, E, F, Fut>(
    policy: RetryPolicy,
    mut op: F,
) -> Result<(T, u32), RetryError<E>>
where
    F: FnMut(u32) -> Fut,
    Fut: Future<Output = Result<T, AttemptError<E>>>,
{
    let attempts = policy.attempts.max(1);
    let mut delay = Duration::from_millis(policy.base_delay_ms);
    let mut last = String::new();
    for attempt in 1..=attempts {
        match op(attempt).await {
            Ok(v) => return Ok((v, attempt)),
            Err(AttemptError::Fatal(e)) => return Err(RetryError::Fatal(e)),
            Err(AttemptError::Transient(reason)) => {
                tracing::warn!(attempt, %reason, "transient backend failure");
                last = reason;
                if attempt < attempts {
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
            }
        }
    }
    Err(RetryError::Exhausted { attempts, last })
}

/// Whether an HTTP status should be retried.
pub(crate) fn is_transient_status(status: reqwest::StatusCode) -> bool {
    status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS
}

/// Appends `path` to `base` unless `base` already ends with it.
pub(crate) fn endpoint(base: &str, path: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(path) {
        base.to_string()
    } else {
        format!("{base}{path}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[tokio::test]
    async fn retries_until_success() {
        let calls = AtomicU32::new(0);
        let policy = RetryPolicy { attempts: 3, base_delay_ms: 1 };
        let out: Result<(u32, u32), RetryError<()>> = with_retries(policy, |n| {
            calls.fetch_add(1, Ordering::SeqCst);
            async move {
                if n < 2 {
                    Err(AttemptError::Transient("boom".into()))
                } else {
                    Ok(n * 10)
                }
            }
        })
        .await;
        assert!(matches!(out, Ok((20, 2))));
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[tokio::test]
    async fn fatal_stops_immediately_and_exhaustion_reports_attempts() {
        let policy = RetryPolicy { attempts: 3, base_delay_ms: 1 };
        let fatal: Result<((), u32), _> =
            with_retries(policy, |_| async { Err(AttemptError::Fatal("nope")) }).await;
        assert!(matches!(fatal, Err(RetryError::Fatal("nope"))));

        let exhausted: Result<((), u32), RetryError<()>> =
            with_retries(policy, |_| async { Err(AttemptError::Transient("down".into())) }).await;
        match exhausted {
            Err(RetryError::Exhausted { attempts, last }) => {
                assert_eq!(attempts, 3);
                assert_eq!(last, "down");
            }
            _ => panic!("expected exhaustion"),
        }
    }

    #[test]
    fn endpoint_joining() {
        assert_eq!(endpoint("http://h:1", "/v1/embeddings"), "http://h:1/v1/embeddings");
        assert_eq!(endpoint("http://h:1/", "/v1/embeddings"), "http://h:1/v1/embeddings");
        assert_eq!(endpoint("http://h:1/v1/embeddings", "/v1/embeddings"), "http://h:1/v1/embeddings");
    }
}
