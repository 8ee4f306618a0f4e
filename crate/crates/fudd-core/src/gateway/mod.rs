//! Chat-completion backend abstraction, the pairwise-description cache, and
//! cost estimation.

mod cache;
#[cfg(feature = "http")]
mod http;
mod retry;

pub use cache::{CacheError, CacheMode, CachedPair, PairCache, PAIR_KEY_SEPARATOR};
#[cfg(feature = "http")]
pub use http::HttpChatBackend;
pub use retry::{chat_with_retry, ChatOutcome, RetryError, RetryPolicy};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{single_template, CatalogError, ClassEntry, DatasetManifest};
use crate::classifier::{ambiguous_set, ClassEmbeddingTable, ClassifierError};
use crate::diffgen::{
    build_pair_prompt, parse_differential_response, DiffgenError, PairwiseDescriptions,
};
use crate::prompt::{ChatExchange, PromptMessages};
use crate::vector::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("backend rejected the request: {0}")]
    Api(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl GenerationParams {
    pub fn new(model_name: impl Into<String>, temperature: f64, max_output_tokens: u32) -> Result<Self, GatewayError> {
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(GatewayError::InvalidTemperature(temperature));
        }
        if max_output_tokens == 0 {
            return Err(GatewayError::ZeroMaxTokens);
        }
        Ok(Self { model_name: model_name.into(), temperature, max_output_tokens })
    }

    /// Temperature 0 and a bounded output budget: deterministic by default.
    pub fn deterministic(model_name: impl Into<String>) -> Self {
        Self { model_name: model_name.into(), temperature: 0.0, max_output_tokens: 1024 }
    }
}

pub trait ChatBackend: Sync {
    fn complete(
        &self,
        messages: &PromptMessages,
        params: &GenerationParams,
    ) -> Result<(String, TokenUsage), BackendError>;
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("temperature must be a finite nonnegative number, got {0}")]
    InvalidTemperature(f64),
    #[error("max_output_tokens must be positive")]
    ZeroMaxTokens,
    #[error("cost arguments must be nonnegative")]
    NegativeCostInput,
    #[error("backend failed for pair {pair_key:?}: {source}")]
    PairGeneration {
        pair_key: String,
        #[source]
        source: RetryError,
    },
    #[error(transparent)]
    Retry(#[from] RetryError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Diffgen(#[from] DiffgenError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("no embedding row for labeled image {0:?}")]
    MissingImage(String),
}

/// Query cost in the configured currency:
/// `n * (avg_in * price_in + avg_out * price_out) / 1000`.
pub fn estimate_cost(
    n_queries: u64,
    avg_input_tokens: f64,
    avg_output_tokens: f64,
    price_per_1k_input: f64,
    price_per_1k_output: f64,
) -> Result<f64, GatewayError> {
    if avg_input_tokens < 0.0
        || avg_output_tokens < 0.0
        || price_per_1k_input < 0.0
        || price_per_1k_output < 0.0
    {
        return Err(GatewayError::NegativeCostInput);
    }
    Ok(n_queries as f64
        * (avg_input_tokens * price_per_1k_input + avg_output_tokens * price_per_1k_output)
        / 1000.0)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecomputeSummary {
    pub images_processed: usize,
    pub unique_pairs_generated: usize,
    pub backend_calls: u64,
    pub failures: Vec<(String, String)>,
}

/// Resolves pairwise description sets through the cache, calling the backend
/// at most once per unordered class pair.
pub struct DescriptionGateway<B: ChatBackend> {
    backend: B,
    cache: Mutex<PairCache>,
    params: GenerationParams,
    examples: Vec<ChatExchange>,
    retry: RetryPolicy,
    backend_calls: AtomicU64,
    skipped_blocks: AtomicU64,
    empty_parses: AtomicU64,
}

impl<B: ChatBackend> DescriptionGateway<B> {
    pub fn new(
        backend: B,
        cache: PairCache,
        params: GenerationParams,
        examples: Vec<ChatExchange>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            backend,
            cache: Mutex::new(cache),
            params,
            examples,
            retry,
            backend_calls: AtomicU64::new(0),
            skipped_blocks: AtomicU64::new(0),
            empty_parses: AtomicU64::new(0),
        }
    }

    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn skipped_blocks(&self) -> u64 {
        self.skipped_blocks.load(Ordering::SeqCst)
    }

    /// Parses yielding zero records (cached as empty, counted as warnings).
    pub fn empty_parses(&self) -> u64 {
        self.empty_parses.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> MutexGuard<'_, PairCache> {
        self.cache.lock().expect("cache lock poisoned")
    }

    /// One retried call to the backend, bypassing the pair cache. Used by the
    /// naive per-class description baseline.
    pub fn complete_raw(&self, messages: &PromptMessages) -> Result<ChatOutcome, GatewayError> {
        let outcome = chat_with_retry(&self.backend, messages, &self.params, &self.retry)?;
        self.backend_calls.fetch_add(u64::from(outcome.attempts), Ordering::SeqCst);
        Ok(outcome)
    }

    /// Cache hit: stored records, reoriented on demand. Miss in open mode:
    /// generate, parse, store. Miss in restricted mode: no backend call, the
    /// single-template fallback descriptions for both classes.
    pub fn get_or_generate_pair(
        &self,
        c1: &ClassEntry,
        c2: &ClassEntry,
    ) -> Result<PairwiseDescriptions, GatewayError> {
        // the cache lock is held across the backend call so each pair is
        // generated at most once under concurrency
        let mut cache = self.cache();
        let key = PairCache::canonical_key(&c1.class_id, &c2.class_id)?;
        if let Some(cached) = cache.get(&key) {
            return Ok(PairwiseDescriptions::generated(
                &cached.class_1,
                &cached.class_2,
                cached.records.clone(),
                true,
            )?);
        }
        if cache.mode() == CacheMode::Restricted {
            return Ok(PairwiseDescriptions::fallback(
                &c1.class_id,
                single_template(&c1.display_name)?,
                &c2.class_id,
                single_template(&c2.display_name)?,
            )?);
        }
        let prompt = build_pair_prompt(&c1.display_name, &c2.display_name, &self.examples)?;
        let outcome = chat_with_retry(&self.backend, &prompt, &self.params, &self.retry)
            .map_err(|source| GatewayError::PairGeneration { pair_key: key.clone(), source })?;
        self.backend_calls.fetch_add(u64::from(outcome.attempts), Ordering::SeqCst);
        let (records, skipped) = parse_differential_response(&outcome.text);
        self.skipped_blocks.fetch_add(skipped as u64, Ordering::SeqCst);
        if records.is_empty() {
            self.empty_parses.fetch_add(1, Ordering::SeqCst);
        }
        let pair =
            PairwiseDescriptions::generated(&c1.class_id, &c2.class_id, records, true)?;
        let (class_1, class_2) = pair.classes();
        cache.insert(CachedPair {
            key,
            class_1: class_1.to_string(),
            class_2: class_2.to_string(),
            records: pair.records().unwrap_or_default().to_vec(),
        })?;
        Ok(pair)
    }

    /// Generates pairwise descriptions for every unordered pair inside every
    /// observed ambiguous set, then freezes the cache. Per-pair backend
    /// failures are recorded and do not stop the run.
    pub fn precompute_restricted(
        &self,
        manifest: &DatasetManifest,
        images: &EmbeddingMatrix,
        table: &ClassEmbeddingTable,
        k: usize,
    ) -> Result<PrecomputeSummary, GatewayError> {
        let catalog = manifest.catalog()?;
        let calls_before = self.backend_calls();
        let mut wanted: BTreeSet<(String, String)> = BTreeSet::new();
        let mut images_processed = 0usize;
        for image_id in manifest.labels.keys() {
            let image = images
                .get(image_id)
                .ok_or_else(|| GatewayError::MissingImage(image_id.clone()))?;
            let set = ambiguous_set(image_id, image, table, k)?;
            for (i, a) in set.members.iter().enumerate() {
                for b in &set.members[i + 1..] {
                    let (x, y) = if a <= b { (a, b) } else { (b, a) };
                    wanted.insert((x.clone(), y.clone()));
                }
            }
            images_processed += 1;
        }
        let mut unique_pairs_generated = 0usize;
        let mut failures = Vec::new();
        for (a, b) in &wanted {
            let key = PairCache::canonical_key(a, b)?;
            if self.cache().get(&key).is_some() {
                continue;
            }
            let (ea, eb) = (
                catalog.get(a).ok_or_else(|| CatalogError::UnknownClassId(a.clone()))?,
                catalog.get(b).ok_or_else(|| CatalogError::UnknownClassId(b.clone()))?,
            );
            match self.get_or_generate_pair(ea, eb) {
                Ok(_) => unique_pairs_generated += 1,
                Err(e) => failures.push((key, e.to_string())),
            }
        }
        self.cache().freeze()?;
        Ok(PrecomputeSummary {
            images_processed,
            unique_pairs_generated,
            backend_calls: self.backend_calls() - calls_before,
            failures,
        })
    }
}
