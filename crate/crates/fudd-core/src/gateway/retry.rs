//! Retry with exponential backoff for transient backend failures.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, ChatBackend, GenerationParams, TokenUsage};
use crate::prompt::PromptMessages;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl RetryPolicy {
    pub fn new(max_attempts: u32, base_delay: Duration, factor: f64) -> Self {
        Self { max_attempts: max_attempts.max(1), base_delay, factor }
    }

    /// Single attempt, no delays.
    pub fn none() -> Self {
        Self { max_attempts: 1, base_delay: Duration::ZERO, factor: 1.0 }
    }

    /// Delay before attempt `n` (2-based; the first attempt never waits).
    fn delay_before(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(2);
        self.base_delay.mul_f64(self.factor.powi(exp as i32))
    }
}

#[derive(Debug, Clone)]
pub struct ChatOutcome {
    pub text: String,
    pub usage: TokenUsage,
    pub attempts: u32,
    /// Backoff waits taken before attempts 2..=n.
    pub delays: Vec<Duration>,
}

#[derive(Debug, Error)]
pub enum RetryError {
    #[error("gave up after {attempts} attempts; log: {log:?}")]
    Exhausted { attempts: u32, log: Vec<String> },
    #[error("permanent backend failure: {0}")]
    Permanent(#[from] BackendError),
}

/// Calls the backend until it succeeds, retrying only transport and
/// rate-limit failures under the policy's backoff schedule.
pub fn chat_with_retry(
    backend: &dyn ChatBackend,
    messages: &PromptMessages,
    params: &GenerationParams,
    policy: &RetryPolicy,
) -> Result<ChatOutcome, RetryError> {
    let mut log = Vec::new();
    let mut delays = Vec::new();
    for attempt in 1..=policy.max_attempts {
        if attempt > 1 {
            let delay = policy.delay_before(attempt);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            delays.push(delay);
        }
        match backend.complete(messages, params) {
            Ok((text, usage)) => {
                return Ok(ChatOutcome { text, usage, attempts: attempt, delays })
            }
            Err(e) if e.is_retryable() => log.push(format!("attempt {attempt}: {e}")),
            Err(e) => return Err(RetryError::Permanent(e)),
        }
    }
    Err(RetryError::Exhausted { attempts: policy.max_attempts, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::test_backends::FlakyBackend;
    use std::sync::atomic::AtomicU32;

    fn run(policy: &RetryPolicy, failures: u32) -> Result<ChatOutcome, RetryError> {
        let backend = FlakyBackend {
            failures_remaining: AtomicU32::new(failures),
            response: "ok".into(),
        };
        let messages = PromptMessages::with_examples(&[], "q");
        let params = GenerationParams::deterministic("m");
        chat_with_retry(&backend, &messages, &params, policy)
    }

    #[test]
    fn succeeds_on_third_attempt() {
        let policy = RetryPolicy::new(3, Duration::from_millis(1), 2.0);
        let outcome = run(&policy, 2).unwrap();
        assert_eq!(outcome.attempts, 3);
        assert_eq!(outcome.text, "ok");
    }

    #[test]
    fn permanent_failure_exhausts() {
        let policy = RetryPolicy::new(3, Duration::from_millis(1), 2.0);
        let err = run(&policy, 99).unwrap_err();
        match err {
            RetryError::Exhausted { attempts, log } => {
                assert_eq!(attempts, 3);
                assert_eq!(log.len(), 3);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn backoff_schedule_doubles() {
        let policy = RetryPolicy::new(3, Duration::from_secs(1), 2.0);
        assert_eq!(policy.delay_before(2), Duration::from_secs(1));
        assert_eq!(policy.delay_before(3), Duration::from_secs(2));
        // recorded delays for a run that needed all three attempts
        let fast = RetryPolicy::new(3, Duration::from_millis(1), 2.0);
        let outcome = run(&fast, 2).unwrap();
        assert_eq!(outcome.delays, vec![Duration::from_millis(1), Duration::from_millis(2)]);
    }

    #[test]
    fn non_retryable_errors_surface_immediately() {
        struct ApiFail;
        impl ChatBackend for ApiFail {
            fn complete(
                &self,
                _m: &PromptMessages,
                _p: &GenerationParams,
            ) -> Result<(String, TokenUsage), BackendError> {
                Err(BackendError::Api("bad request".into()))
            }
        }
        let messages = PromptMessages::with_examples(&[], "q");
        let params = GenerationParams::deterministic("m");
        let err = chat_with_retry(&ApiFail, &messages, &params, &RetryPolicy::new(5, Duration::ZERO, 1.0));
        assert!(matches!(err, Err(RetryError::Permanent(BackendError::Api(_)))));
    }
}
