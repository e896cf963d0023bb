//! Retry policy for external calls: transient failures are retried with
//! exponential backoff up to a budget; permanent failures and exhausted
//! budgets surface as a failure carrying the attempt count, which the
//! orchestrator turns into a logged skip.

use std::fmt::Display;
use std::time::Duration;

use crate::index::{IndexError, MetadataFilter, RankedList, Retriever};
use crate::rank::{RankError, Reranker};
use crate::rewrite::RewriteError;

/// Errors that can classify themselves as worth retrying.
pub trait Retryable {
    fn is_transient(&self) -> bool;
}

impl Retryable for IndexError {
    fn is_transient(&self) -> bool {
        IndexError::is_transient(self)
    }
}

impl Retryable for RankError {
    fn is_transient(&self) -> bool {
        RankError::is_transient(self)
    }
}

impl Retryable for RewriteError {
    fn is_transient(&self) -> bool {
        RewriteError::is_transient(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Number of retries after the first attempt.
    pub budget: u32,
    pub base_delay: Duration,
}

impl RetryPolicy {
    pub fn new(budget: u32, base_delay: Duration) -> Self {
        Self { budget, base_delay }
    }

    /// Maximum attempts this policy makes for a transient failure.
    pub fn max_attempts(&self) -> u32 {
        self.budget + 1
    }
}

/// A failed operation plus how many attempts it consumed (1 for a
/// permanent error, `budget + 1` for an exhausted transient one).
#[derive(Debug)]
pub struct RetryFailure<E> {
    pub error: E,
    pub attempts: u32,
}

/// Run `op`, retrying transient failures with exponential backoff
/// (`base_delay · 2^retry`). A permanent error fails immediately.
pub fn with_retries<T, E: Retryable + Display>(
    policy: RetryPolicy,
    mut op: impl FnMut() -> Result<T, E>,
) -> Result<T, RetryFailure<E>> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match op() {
            Ok(value) => return Ok(value),
            Err(error) if error.is_transient() && attempts <= policy.budget => {
                let delay = policy.base_delay * 2u32.saturating_pow(attempts - 1);
                log::warn!("transient failure (attempt {attempts}): {error}; retrying in {delay:?}");
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            Err(error) => return Err(RetryFailure { error, attempts }),
        }
    }
}

/// Retriever wrapper applying the policy to every retrieval call.
pub struct RetryingRetriever<'a> {
    inner: &'a dyn Retriever,
    policy: RetryPolicy,
}

impl<'a> RetryingRetriever<'a> {
    pub fn new(inner: &'a dyn Retriever, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl Retriever for RetryingRetriever<'_> {
    fn retrieve(
        &self,
        query: &str,
        depth: usize,
        filter: &MetadataFilter,
    ) -> Result<RankedList, IndexError> {
        with_retries(self.policy, || self.inner.retrieve(query, depth, filter)).map_err(
            |failure| {
                log::warn!("retrieval gave up after {} attempt(s)", failure.attempts);
                failure.error
            },
        )
    }
}

/// Reranker wrapper applying the policy to every scoring call.
pub struct RetryingReranker<'a> {
    inner: &'a dyn Reranker,
    policy: RetryPolicy,
}

impl<'a> RetryingReranker<'a> {
    pub fn new(inner: &'a dyn Reranker, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

impl Reranker for RetryingReranker<'_> {
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    fn score(
        &self,
        query: &str,
        passages: &[(&crate::corpus::ChunkId, &str)],
    ) -> Result<Vec<f64>, RankError> {
        with_retries(self.policy, || self.inner.score(query, passages)).map_err(|failure| {
            log::warn!("reranking gave up after {} attempt(s)", failure.attempts);
            failure.error
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::service::TransportError;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn policy(budget: u32) -> RetryPolicy {
        RetryPolicy::new(budget, Duration::ZERO)
    }

    fn transient() -> RankError {
        RankError::Transport(TransportError::Status {
            url: "stub".to_string(),
            status: 503,
        })
    }

    fn permanent() -> RankError {
        RankError::Transport(TransportError::Status {
            url: "stub".to_string(),
            status: 400,
        })
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let calls = AtomicU32::new(0);
        let result = with_retries(policy(3), || {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(transient())
            } else {
                Ok(42)
            }
        });
        assert_eq!(result.unwrap(), 42);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausts_budget_then_fails() {
        let calls = AtomicU32::new(0);
        let failure = with_retries(policy(3), || -> Result<(), RankError> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(transient())
        })
        .unwrap_err();
        assert_eq!(failure.attempts, 4);
        assert_eq!(calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn permanent_error_fails_without_retry() {
        let calls = AtomicU32::new(0);
        let failure = with_retries(policy(3), || -> Result<(), RankError> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(permanent())
        })
        .unwrap_err();
        assert_eq!(failure.attempts, 1);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn zero_budget_means_single_attempt() {
        let calls = AtomicU32::new(0);
        let failure = with_retries(policy(0), || -> Result<(), RankError> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(transient())
        })
        .unwrap_err();
        assert_eq!(failure.attempts, 1);
    }
}
