//! Query expansion: prompt construction, response parsing, a cached and
//! deduplicated expansion service, and the noisy-query ablation.

mod cache;
mod client;

pub use cache::{cache_key, CacheEntry, ExpansionCache};
pub use client::{
    ChatClient, ChatRequest, ClientError, HttpChatClient, ENV_API_KEY, ENV_BASE_URL,
};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bumping this invalidates cached expansions produced by older prompts.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExpandError {
    #[error("action text is empty")]
    EmptyAction,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("response not parseable after {attempts} attempt(s): '{sample}'")]
    Unparseable { attempts: u32, sample: String },
    #[error("network failure after {attempts} attempt(s): {last}")]
    Network { attempts: u32, last: String },
    #[error("offline mode and no cached expansion for query '{query}'")]
    OfflineMiss { query: String },
    #[error("no client configured and no cached expansion for query '{query}'")]
    NotConfigured { query: String },
    #[error("cache i/o failure: {0}")]
    Cache(String),
}

/// Original query plus the LLM-generated boundary descriptions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedQuery {
    pub original: String,
    pub start_desc: String,
    pub end_desc: String,
    pub source_model: String,
    /// Noise-injection marker: set when the descriptions were exchanged.
    #[serde(default)]
    pub swapped: bool,
}

/// Parameters of one expansion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRequest {
    pub action_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl ExpansionRequest {
    pub fn validate(&self) -> Result<(), ExpandError> {
        if self.action_text.trim().is_empty() {
            return Err(ExpandError::EmptyAction);
        }
        if !(0.0..=2.0).contains(&self.temperature) || !self.temperature.is_finite() {
            return Err(ExpandError::InvalidRequest(format!(
                "temperature must lie in [0, 2] (got {})",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ExpandError::InvalidRequest(
                "max_tokens must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Builds the expansion prompt for one action. The instruction and the
/// object constraint are fixed; a format directive pins the two labeled
/// output lines so parsing stays deterministic.
pub fn build_prompt(action_text: &str) -> Result<String, ExpandError> {
    let action = action_text.trim();
    if action.is_empty() {
        return Err(ExpandError::EmptyAction);
    }
    Ok(format!(
        "Please describe the beginning and ending process in one sentence of the following \
         action {action}. The description you generate cannot contain any objects that are \
         not presented in the action. Answer with exactly two lines: the first line starting \
         with \"START:\" describing how the action begins, and the second line starting with \
         \"END:\" describing how the action ends."
    ))
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let trimmed = line.trim_start_matches(['-', '*', '#', ' ', '\t']);
    if trimmed.len() < label.len() || !trimmed[..label.len()].eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = trimmed[label.len()..].trim_start();
    rest.strip_prefix(':').map(|s| s.trim())
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let trimmed = current.trim();
            if trimmed.chars().any(|c| c.is_alphanumeric()) {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if tail.chars().any(|c| c.is_alphanumeric()) {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Extracts the start/end descriptions from a raw model response. Prefers
/// the labeled `START:` / `END:` lines (case-insensitive); falls back to the
/// first two sentences in order.
pub fn parse_expansion(raw: &str) -> Result<(String, String), ExpandError> {
    let mut start = None;
    let mut end = None;
    for line in raw.lines() {
        if start.is_none() {
            if let Some(rest) = strip_label(line, "start") {
                if !rest.is_empty() {
                    start = Some(rest.to_string());
                    continue;
                }
            }
        }
        if end.is_none() {
            if let Some(rest) = strip_label(line, "end") {
                if !rest.is_empty() {
                    end = Some(rest.to_string());
                }
            }
        }
    }
    if let (Some(start), Some(end)) = (start, end) {
        return Ok((start, end));
    }
    let sentences = split_sentences(raw);
    if sentences.len() >= 2 {
        return Ok((sentences[0].clone(), sentences[1].clone()));
    }
    Err(ExpandError::Unparseable {
        attempts: 1,
        sample: raw.chars().take(120).collect(),
    })
}

/// Swaps the start/end descriptions of exactly `round(fraction * n)` entries
/// chosen by the seeded generator. Order is preserved and the same seed
/// always picks the same entries.
pub fn inject_query_noise(
    records: &[ExpandedQuery],
    fraction: f64,
    seed: u64,
) -> Vec<ExpandedQuery> {
    assert!(
        (0.0..=1.0).contains(&fraction),
        "fraction must lie in [0, 1]"
    );
    let count = (fraction * records.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: std::collections::HashSet<usize> =
        rand::seq::index::sample(&mut rng, records.len(), count)
            .into_iter()
            .collect();
    records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            if chosen.contains(&i) {
                ExpandedQuery {
                    original: record.original.clone(),
                    start_desc: record.end_desc.clone(),
                    end_desc: record.start_desc.clone(),
                    source_model: record.source_model.clone(),
                    swapped: true,
                }
            } else {
                record.clone()
            }
        })
        .collect()
}

/// Retry policy and identity settings of the expansion service.
#[derive(Debug, Clone)]
pub struct ExpanderConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub offline: bool,
    /// Total network attempts for transient failures.
    pub max_network_attempts: u32,
    /// Additional prompts issued when a response cannot be parsed.
    pub parse_reprompts: u32,
    pub backoff_ms: u64,
}

impl Default for ExpanderConfig {
    fn default() -> Self {
        Self {
            model_id: "llama3-8b".to_string(),
            temperature: 0.0,
            max_tokens: 128,
            offline: false,
            max_network_attempts: 3,
            parse_reprompts: 2,
            backoff_ms: 500,
        }
    }
}

type InflightSlot = Arc<(Mutex<Option<Result<(String, String), ExpandError>>>, Condvar)>;

/// Cache-first expansion service with in-flight deduplication: concurrent
/// requests for the same key issue at most one network call.
pub struct QueryExpander<C> {
    client: Option<C>,
    config: ExpanderConfig,
    cache: Mutex<ExpansionCache>,
    inflight: Mutex<HashMap<String, InflightSlot>>,
    network_calls: AtomicU64,
}

impl<C: ChatClient> QueryExpander<C> {
    pub fn new(client: Option<C>, cache: ExpansionCache, config: ExpanderConfig) -> Self {
        Self {
            client,
            config,
            cache: Mutex::new(cache),
            inflight: Mutex::new(HashMap::new()),
            network_calls: AtomicU64::new(0),
        }
    }

    /// Number of network calls issued so far (includes retries).
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn config(&self) -> &ExpanderConfig {
        &self.config
    }

    /// Rewrites the cache file keeping the newest entry per key.
    pub fn compact_cache(&self) -> Result<(), ExpandError> {
        self.cache
            .lock()
            .expect("cache lock")
            .compact()
            .map_err(|e| ExpandError::Cache(e.to_string()))
    }

    /// Expands one action query. Returns the expansion and whether it was
    /// served from the cache.
    pub fn expand_detailed(&self, action_text: &str) -> Result<(ExpandedQuery, bool), ExpandError> {
        let action = action_text.trim();
        if action.is_empty() {
            return Err(ExpandError::EmptyAction);
        }
        let key = cache_key(action, &self.config.model_id, PROMPT_VERSION);
        if let Some(entry) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok((self.materialize(action, entry), true));
        }
        if self.config.offline {
            return Err(ExpandError::OfflineMiss {
                query: action.to_string(),
            });
        }
        let Some(client) = &self.client else {
            return Err(ExpandError::NotConfigured {
                query: action.to_string(),
            });
        };

        let claimed = {
            let mut inflight = self.inflight.lock().expect("inflight lock");
            match inflight.get(&key) {
                Some(slot) => Some(slot.clone()),
                None => {
                    inflight.insert(key.clone(), Arc::new((Mutex::new(None), Condvar::new())));
                    None
                }
            }
        };

        let fetched = match claimed {
            Some(slot) => {
                // Another thread owns the fetch; wait for its verdict and
                // share it, never issuing a duplicate call for this key.
                let (lock, cv) = &*slot;
                let mut state = lock.lock().expect("inflight slot lock");
                while state.is_none() {
                    state = cv.wait(state).expect("inflight slot wait");
                }
                state.clone().expect("state is set")
            }
            None => {
                let result = self.fetch(client, action);
                let stored = match &result {
                    Ok((start_desc, end_desc)) => {
                        let entry = CacheEntry {
                            key: key.clone(),
                            start_desc: start_desc.clone(),
                            end_desc: end_desc.clone(),
                            created_at: SystemTime::now()
                                .duration_since(UNIX_EPOCH)
                                .map(|d| d.as_secs())
                                .unwrap_or(0),
                        };
                        self.cache
                            .lock()
                            .expect("cache lock")
                            .put(entry)
                            .map_err(|err| ExpandError::Cache(err.to_string()))
                            .and(result.clone())
                    }
                    Err(_) => result,
                };
                self.finish_inflight(&key, stored.clone());
                stored
            }
        };

        fetched.map(|(start_desc, end_desc)| {
            (
                ExpandedQuery {
                    original: action.to_string(),
                    start_desc,
                    end_desc,
                    source_model: self.config.model_id.clone(),
                    swapped: false,
                },
                false,
            )
        })
    }

    /// Expands one action query, ignoring cache provenance.
    pub fn expand(&self, action_text: &str) -> Result<ExpandedQuery, ExpandError> {
        self.expand_detailed(action_text).map(|(q, _)| q)
    }

    fn materialize(&self, action: &str, entry: &CacheEntry) -> ExpandedQuery {
        ExpandedQuery {
            original: action.to_string(),
            start_desc: entry.start_desc.clone(),
            end_desc: entry.end_desc.clone(),
            source_model: self.config.model_id.clone(),
            swapped: false,
        }
    }

    fn finish_inflight(&self, key: &str, result: Result<(String, String), ExpandError>) {
        let slot = self
            .inflight
            .lock()
            .expect("inflight lock")
            .remove(key)
            .expect("leader owns an inflight slot");
        let (lock, cv) = &*slot;
        *lock.lock().expect("inflight slot lock") = Some(result);
        cv.notify_all();
    }

    fn fetch(&self, client: &C, action: &str) -> Result<(String, String), ExpandError> {
        let expansion = ExpansionRequest {
            action_text: action.to_string(),
            model_id: self.config.model_id.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        expansion.validate()?;
        let prompt = build_prompt(&expansion.action_text)?;
        let request = ChatRequest {
            model: &expansion.model_id,
            prompt: &prompt,
            temperature: expansion.temperature,
            max_tokens: expansion.max_tokens,
        };
        let mut network_attempts = 0u32;
        let mut parse_attempts = 0u32;
        loop {
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            network_attempts += 1;
            match client.complete(&request) {
                Ok(text) => match parse_expansion(&text) {
                    Ok(pair) => return Ok(pair),
                    Err(_) if parse_attempts < self.config.parse_reprompts => {
                        parse_attempts += 1;
                    }
                    Err(ExpandError::Unparseable { sample, .. }) => {
                        return Err(ExpandError::Unparseable {
                            attempts: parse_attempts + 1,
                            sample,
                        })
                    }
                    Err(other) => return Err(other),
                },
                Err(err) if err.retryable() && network_attempts < self.config.max_network_attempts => {
                    let delay = self.config.backoff_ms << (network_attempts - 1);
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(err) => {
                    return Err(ExpandError::Network {
                        attempts: network_attempts,
                        last: err.to_string(),
                    })
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct ScriptedClient {
        responses: Vec<Result<String, ClientError>>,
        cursor: AtomicUsize,
    }

    impl ScriptedClient {
        fn new(responses: Vec<Result<String, ClientError>>) -> Self {
            Self {
                responses,
                cursor: AtomicUsize::new(0),
            }
        }
    }

    impl ChatClient for ScriptedClient {
        fn complete(&self, _request: &ChatRequest) -> Result<String, ClientError> {
            let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
            self.responses
                .get(idx)
                .cloned()
                .unwrap_or_else(|| Err(ClientError::Transport("script exhausted".into())))
        }
    }

    fn quick_config() -> ExpanderConfig {
        ExpanderConfig {
            backoff_ms: 0,
            ..Default::default()
        }
    }

    const GOOD: &str = "START: The person reaches toward the door.\nEND: The door rests fully shut.";

    #[test]
    fn prompt_contains_both_instruction_sentences() {
        let prompt = build_prompt("person eats sandwich").unwrap();
        assert!(prompt.contains(
            "Please describe the beginning and ending process in one sentence of the \
             following action person eats sandwich"
        ));
        assert!(prompt.contains(
            "The description you generate cannot contain any objects that are not \
             presented in the action"
        ));
        assert!(prompt.contains("START:"));
        assert!(prompt.contains("END:"));
    }

    #[test]
    fn prompt_trims_and_rejects_empty_actions() {
        let prompt = build_prompt(" close the door ").unwrap();
        assert!(prompt.contains("following action close the door."));
        assert_eq!(build_prompt("   "), Err(ExpandError::EmptyAction));
    }

    #[test]
    fn parses_labeled_lines() {
        let (start, end) = parse_expansion(GOOD).unwrap();
        assert_eq!(start, "The person reaches toward the door.");
        assert_eq!(end, "The door rests fully shut.");

        let mixed = "start : begins here.\nEND: ends here.";
        let (s, e) = parse_expansion(mixed).unwrap();
        assert_eq!(s, "begins here.");
        assert_eq!(e, "ends here.");
    }

    #[test]
    fn falls_back_to_the_first_two_sentences() {
        let raw = "The hand moves to the plate. The food enters the mouth.";
        let (start, end) = parse_expansion(raw).unwrap();
        assert_eq!(start, "The hand moves to the plate.");
        assert_eq!(end, "The food enters the mouth.");
    }

    #[test]
    fn rejects_unparseable_responses() {
        assert!(matches!(
            parse_expansion("ok"),
            Err(ExpandError::Unparseable { .. })
        ));
    }

    #[test]
    fn cache_hit_issues_no_network_call() {
        let mut cache = ExpansionCache::in_memory();
        let key = cache_key("person eats sandwich", "llama3-8b", PROMPT_VERSION);
        cache
            .put(CacheEntry {
                key,
                start_desc: "a".into(),
                end_desc: "b".into(),
                created_at: 0,
            })
            .unwrap();
        let expander = QueryExpander::new(
            Some(ScriptedClient::new(vec![Ok(GOOD.into())])),
            cache,
            quick_config(),
        );
        let (expanded, from_cache) = expander.expand_detailed("person eats sandwich").unwrap();
        assert!(from_cache);
        assert_eq!(expanded.start_desc, "a");
        assert_eq!(expander.network_calls(), 0);
    }

    #[test]
    fn second_identical_request_is_a_cache_hit() {
        let expander = QueryExpander::new(
            Some(ScriptedClient::new(vec![Ok(GOOD.into())])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        let (first, from_cache_first) = expander.expand_detailed("close the door").unwrap();
        assert!(!from_cache_first);
        let (second, from_cache_second) = expander.expand_detailed("close the door").unwrap();
        assert!(from_cache_second);
        assert_eq!(first, second);
        assert_eq!(expander.network_calls(), 1);
    }

    #[test]
    fn offline_miss_names_the_query() {
        let expander = QueryExpander::<ScriptedClient>::new(
            None,
            ExpansionCache::in_memory(),
            ExpanderConfig {
                offline: true,
                ..quick_config()
            },
        );
        assert_eq!(
            expander.expand("open the fridge"),
            Err(ExpandError::OfflineMiss {
                query: "open the fridge".into()
            })
        );
    }

    #[test]
    fn transient_failures_are_retried_with_bounded_attempts() {
        let expander = QueryExpander::new(
            Some(ScriptedClient::new(vec![
                Err(ClientError::Transport("boom".into())),
                Err(ClientError::Status {
                    code: 503,
                    body: String::new(),
                }),
                Ok(GOOD.into()),
            ])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        assert!(expander.expand("close the door").is_ok());
        assert_eq!(expander.network_calls(), 3);

        let exhausted = QueryExpander::new(
            Some(ScriptedClient::new(vec![
                Err(ClientError::Transport("a".into())),
                Err(ClientError::Transport("b".into())),
                Err(ClientError::Transport("c".into())),
            ])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        assert!(matches!(
            exhausted.expand("close the door"),
            Err(ExpandError::Network { attempts: 3, .. })
        ));
    }

    #[test]
    fn unparseable_output_triggers_reprompts() {
        let expander = QueryExpander::new(
            Some(ScriptedClient::new(vec![
                Ok("ok".into()),
                Ok("nope".into()),
                Ok(GOOD.into()),
            ])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        assert!(expander.expand("close the door").is_ok());
        assert_eq!(expander.network_calls(), 3);

        let hopeless = QueryExpander::new(
            Some(ScriptedClient::new(vec![
                Ok("ok".into()),
                Ok("ok".into()),
                Ok("ok".into()),
            ])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        assert!(matches!(
            hopeless.expand("close the door"),
            Err(ExpandError::Unparseable { attempts: 3, .. })
        ));
    }

    #[test]
    fn non_retryable_errors_fail_fast() {
        let expander = QueryExpander::new(
            Some(ScriptedClient::new(vec![Err(ClientError::Status {
                code: 401,
                body: "no".into(),
            })])),
            ExpansionCache::in_memory(),
            quick_config(),
        );
        assert!(matches!(
            expander.expand("close the door"),
            Err(ExpandError::Network { attempts: 1, .. })
        ));
    }

    struct SlowClient {
        calls: AtomicUsize,
    }

    impl ChatClient for SlowClient {
        fn complete(&self, _request: &ChatRequest) -> Result<String, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(30));
            Ok(GOOD.into())
        }
    }

    #[test]
    fn concurrent_requests_for_one_key_share_a_single_call() {
        let expander = std::sync::Arc::new(QueryExpander::new(
            Some(SlowClient {
                calls: AtomicUsize::new(0),
            }),
            ExpansionCache::in_memory(),
            quick_config(),
        ));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let expander = expander.clone();
                std::thread::spawn(move || expander.expand("close the door").unwrap())
            })
            .collect();
        let results: Vec<ExpandedQuery> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert_eq!(expander.network_calls(), 1);
        for r in &results {
            assert_eq!(r, &results[0]);
        }
    }

    fn sample_queries(n: usize) -> Vec<ExpandedQuery> {
        (0..n)
            .map(|i| ExpandedQuery {
                original: format!("query {i}"),
                start_desc: format!("start {i}"),
                end_desc: format!("end {i}"),
                source_model: "llama3-8b".into(),
                swapped: false,
            })
            .collect()
    }

    #[test]
    fn zero_fraction_is_identity() {
        let records = sample_queries(4);
        assert_eq!(inject_query_noise(&records, 0.0, 7), records);
    }

    #[test]
    fn full_fraction_swap_is_an_involution_on_descriptions() {
        let records = sample_queries(4);
        let once = inject_query_noise(&records, 1.0, 7);
        for (orig, swapped) in records.iter().zip(once.iter()) {
            assert_eq!(swapped.start_desc, orig.end_desc);
            assert_eq!(swapped.end_desc, orig.start_desc);
            assert!(swapped.swapped);
        }
        let twice = inject_query_noise(&once, 1.0, 13);
        for (orig, restored) in records.iter().zip(twice.iter()) {
            assert_eq!(restored.start_desc, orig.start_desc);
            assert_eq!(restored.end_desc, orig.end_desc);
        }
    }

    #[test]
    fn half_fraction_swaps_exactly_half_deterministically() {
        let records = sample_queries(10);
        let a = inject_query_noise(&records, 0.5, 99);
        let b = inject_query_noise(&records, 0.5, 99);
        assert_eq!(a, b);
        let swapped: Vec<usize> = a
            .iter()
            .enumerate()
            .filter(|(_, q)| q.swapped)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(swapped.len(), 5);
        let other_seed = inject_query_noise(&records, 0.5, 100);
        let swapped_other: Vec<usize> = other_seed
            .iter()
            .enumerate()
            .filter(|(_, q)| q.swapped)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(swapped_other.len(), 5);
        assert_ne!(swapped, swapped_other);
    }
}
