//! Listwise reranker backends behind one trait: a deterministic oracle, a
//! Plackett–Luce noisy simulator, and an HTTP client speaking the
//! RankLLM-style numbered-identifier prompt protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::hash;

/// Default passage-text truncation before prompting: roughly 300 words.
pub const DEFAULT_CHAR_BUDGET: usize = 1800;
/// Default cap on passages per HTTP request.
pub const DEFAULT_MAX_BATCH: usize = 20;
/// Default bound on concurrent outbound HTTP requests.
pub const DEFAULT_CONCURRENCY: usize = 4;

/// One candidate document as the reranker sees it. `true_relevance` exists
/// only for simulation backends and never reaches a real model.
#[derive(Clone, Debug)]
pub struct Passage {
    pub doc_id: String,
    pub title: Option<String>,
    pub text: String,
    pub true_relevance: Option<u32>,
}

impl Passage {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
            true_relevance: None,
        }
    }

    pub fn with_grade(mut self, grade: u32) -> Self {
        self.true_relevance = Some(grade);
        self
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }
}

/// A batch to rerank. Construction enforces at least two unique, non-empty
/// passage ids; upper size limits belong to the backends.
#[derive(Clone, Debug)]
pub struct RerankRequest {
    pub query: String,
    pub passages: Vec<Passage>,
    /// Advisory generation budget forwarded to model backends (0 = unset).
    pub max_tokens_hint: usize,
}

impl RerankRequest {
    pub fn new(query: impl Into<String>, passages: Vec<Passage>) -> Result<Self> {
        if passages.len() < 2 {
            return Err(Error::Config(format!(
                "a rerank request needs at least 2 passages, got {}",
                passages.len()
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(passages.len());
        for p in &passages {
            if p.doc_id.is_empty() {
                return Err(Error::Config("passage with empty doc id".into()));
            }
            if !seen.insert(p.doc_id.as_str()) {
                return Err(Error::Config(format!("duplicate doc id {:?}", p.doc_id)));
            }
        }
        Ok(RerankRequest {
            query: query.into(),
            passages,
            max_tokens_hint: 0,
        })
    }
}

/// A reranker's answer: the request's doc ids, most relevant first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RerankResult {
    pub ordering: Vec<String>,
    /// True when the raw model output needed any normalization.
    pub repaired: bool,
    pub raw_response: Option<String>,
}

/// A listwise reranker. Implementations must tolerate concurrent calls.
pub trait Reranker: Send + Sync {
    fn rerank(&self, req: &RerankRequest) -> Result<RerankResult>;
}

/// Closures act as rerankers, which keeps test doubles terse.
impl<F> Reranker for F
where
    F: Fn(&RerankRequest) -> Result<RerankResult> + Send + Sync,
{
    fn rerank(&self, req: &RerankRequest) -> Result<RerankResult> {
        self(req)
    }
}

/// Perfect reranker: sorts by hidden grade, descending, stable on ties.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleReranker;

impl Reranker for OracleReranker {
    fn rerank(&self, req: &RerankRequest) -> Result<RerankResult> {
        let grades = hidden_grades(req)?;
        let mut idx: Vec<usize> = (0..req.passages.len()).collect();
        idx.sort_by(|&a, &b| grades[b].cmp(&grades[a]));
        Ok(RerankResult {
            ordering: idx
                .into_iter()
                .map(|i| req.passages[i].doc_id.clone())
                .collect(),
            repaired: false,
            raw_response: None,
        })
    }
}

fn hidden_grades(req: &RerankRequest) -> Result<Vec<u32>> {
    req.passages
        .iter()
        .map(|p| {
            p.true_relevance.ok_or_else(|| {
                Error::Config(format!(
                    "simulated backend needs true_relevance on every passage; {:?} has none",
                    p.doc_id
                ))
            })
        })
        .collect()
}

/// Imperfect reranker: samples the ordering from a Plackett–Luce model
/// with weights exp(grade / temperature).
///
/// Sampling uses Gumbel-perturbed keys — sorting grade/T + Gumbel(0,1)
/// noise descending draws from exactly the same distribution as
/// sequential softmax sampling without replacement. Each call derives its
/// seed from (base seed, query, doc ids), so repeating a request
/// reproduces its ordering bit for bit while distinct requests get
/// independent noise.
#[derive(Clone, Debug)]
pub struct NoisyReranker {
    temperature: f64,
    seed: u64,
}

impl NoisyReranker {
    pub fn new(temperature: f64, seed: u64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(NoisyReranker { temperature, seed })
    }

    fn call_seed(&self, req: &RerankRequest) -> u64 {
        let mut parts: Vec<&[u8]> = Vec::with_capacity(req.passages.len() + 2);
        let seed_bytes = self.seed.to_le_bytes();
        parts.push(&seed_bytes);
        parts.push(req.query.as_bytes());
        for p in &req.passages {
            parts.push(p.doc_id.as_bytes());
        }
        hash::mix(&parts)
    }
}

impl Reranker for NoisyReranker {
    fn rerank(&self, req: &RerankRequest) -> Result<RerankResult> {
        let grades = hidden_grades(req)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.call_seed(req));
        let gumbel =
            rand_distr::Gumbel::new(0.0, 1.0).map_err(|e| Error::Config(format!("gumbel: {e}")))?;
        let keys: Vec<f64> = grades
            .iter()
            .map(|&g| f64::from(g) / self.temperature + gumbel.sample(&mut rng))
            .collect();
        let mut idx: Vec<usize> = (0..req.passages.len()).collect();
        idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
        Ok(RerankResult {
            ordering: idx
                .into_iter()
                .map(|i| req.passages[i].doc_id.clone())
                .collect(),
            repaired: false,
            raw_response: None,
        })
    }
}

/// Builds the (system, user) prompt pair for a request, truncating each
/// passage's text to `char_budget` characters.
pub fn build_prompt(req: &RerankRequest, char_budget: usize) -> (String, String) {
    let m = req.passages.len();
    let system = "You are RankLLM, an intelligent assistant that can rank passages \
                  based on their relevancy to the query."
        .to_string();
    let mut user = format!(
        "I will provide you with {m} passages, each indicated by a numerical \
         identifier []. Rank the passages based on their relevance to the search \
         query: {}.\n\n",
        req.query
    );
    for (i, p) in req.passages.iter().enumerate() {
        let text = truncate_chars(&p.text, char_budget);
        match &p.title {
            Some(t) => {
                user.push_str(&format!("[{}] Title: {}\nContent: {}\n", i + 1, t, text));
            }
            None => {
                user.push_str(&format!("[{}] Content: {}\n", i + 1, text));
            }
        }
    }
    user.push_str(&format!(
        "\nSearch Query: {}.\nRank the {m} passages above based on their relevance \
         to the search query. All the passages should be included and listed using \
         identifiers, in descending order of relevance. The output format should be \
         [] > [], e.g., [2] > [1]. Only respond with the ranking results; do not say \
         any word or explain.",
        req.query
    ));
    (system, user)
}

fn truncate_chars(s: &str, budget: usize) -> &str {
    match s.char_indices().nth(budget) {
        Some((byte, _)) => &s[..byte],
        None => s,
    }
}

/// Extracts every bracketed integer from model output, in order.
fn extract_indices(raw: &str) -> Vec<usize> {
    let bytes = raw.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            let mut j = i + 1;
            let mut value: usize = 0;
            let mut digits = 0;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                value = value.saturating_mul(10) + usize::from(bytes[j] - b'0');
                digits += 1;
                j += 1;
            }
            if digits > 0 && j < bytes.len() && bytes[j] == b']' {
                out.push(value);
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// True when the trimmed response is exactly `[i] > [j] > ...` with no
/// surrounding prose.
fn is_strict_format(raw: &str) -> bool {
    let s = raw.trim();
    if s.is_empty() {
        return false;
    }
    let mut rest = s;
    loop {
        let Some(close) = rest.find(']') else {
            return false;
        };
        let token = &rest[..=close];
        if !token.starts_with('[')
            || token.len() < 3
            || !token[1..close].bytes().all(|b| b.is_ascii_digit())
        {
            return false;
        }
        rest = &rest[close + 1..];
        if rest.is_empty() {
            return true;
        }
        let Some(stripped) = rest.trim_start().strip_prefix('>').map(|r| r.trim_start()) else {
            return false;
        };
        rest = stripped;
    }
}

/// Normalizes any index list into a permutation of 1..=n: first occurrence
/// of each in-range index wins, out-of-range indices drop, and missing
/// indices append in ascending order.
pub fn repair_permutation(parsed: &[usize], n: usize) -> Vec<usize> {
    let mut seen = vec![false; n + 1];
    let mut out = Vec::with_capacity(n);
    for &p in parsed {
        if (1..=n).contains(&p) && !seen[p] {
            seen[p] = true;
            out.push(p);
        }
    }
    for p in 1..=n {
        if !seen[p] {
            out.push(p);
        }
    }
    out
}

/// Parses model output into a permutation of 1..=n plus a repair flag.
/// Output with no bracketed identifiers at all is rejected as unusable.
pub fn parse_ranking(raw: &str, n: usize) -> Result<(Vec<usize>, bool)> {
    let parsed = extract_indices(raw);
    if parsed.is_empty() {
        return Err(Error::RerankerOutput {
            message: "no bracketed identifiers in response".into(),
            raw: Some(raw.to_string()),
        });
    }
    let permutation = repair_permutation(&parsed, n);
    let clean = is_strict_format(raw) && parsed == permutation;
    Ok((permutation, !clean))
}

/// Counting semaphore bounding concurrent outbound requests.
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(count: usize) -> Self {
        Permits {
            available: Mutex::new(count.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a Permits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.permits.available.lock().unwrap();
        *available += 1;
        self.permits.freed.notify_one();
    }
}

/// HTTP reranker speaking a minimal chat-completions protocol: the prompt
/// pair goes out as system/user messages at temperature 0, and the first
/// choice's text comes back through the ranking parser.
pub struct HttpReranker {
    endpoint: String,
    model: String,
    timeout: Duration,
    /// Name of the environment variable holding the API key, if any.
    api_key_env: Option<String>,
    char_budget: usize,
    max_batch: usize,
    retries: u32,
    backoff: Duration,
    permits: Permits,
    client: reqwest::blocking::Client,
}

impl HttpReranker {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Result<Self> {
        let timeout = Duration::from_secs(60);
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(format!("http client: {e}")))?;
        Ok(HttpReranker {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout,
            api_key_env: None,
            char_budget: DEFAULT_CHAR_BUDGET,
            max_batch: DEFAULT_MAX_BATCH,
            retries: 2,
            backoff: Duration::from_millis(250),
            permits: Permits::new(DEFAULT_CONCURRENCY),
            client,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self> {
        self.timeout = timeout;
        self.client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(format!("http client: {e}")))?;
        Ok(self)
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = Some(var.into());
        self
    }

    pub fn with_char_budget(mut self, budget: usize) -> Self {
        self.char_budget = budget;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }

    pub fn with_concurrency(mut self, limit: usize) -> Self {
        self.permits = Permits::new(limit);
        self
    }

    /// Retry knobs, exposed so tests do not sleep for real.
    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    fn api_key(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(key) => Ok(Some(key)),
                Err(_) => Err(Error::Config(format!(
                    "api key environment variable {var} is not set"
                ))),
            },
        }
    }

    fn send_once(&self, body: &serde_json::Value, key: Option<&str>) -> Result<String> {
        let mut call = self.client.post(&self.endpoint).json(body);
        if let Some(key) = key {
            call = call.bearer_auth(key);
        }
        let response = call
            .send()
            .map_err(|e| Error::Transport(format!("request to {}: {e}", self.endpoint)))?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Transport(format!(
                "{} returned status {status}",
                self.endpoint
            )));
        }
        let payload: serde_json::Value = response
            .json()
            .map_err(|e| Error::Transport(format!("malformed response body: {e}")))?;
        let choice = &payload["choices"][0];
        let text = choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .ok_or_else(|| Error::Transport("response carries no generated text".into()))?;
        Ok(text.to_string())
    }
}

impl Reranker for HttpReranker {
    fn rerank(&self, req: &RerankRequest) -> Result<RerankResult> {
        let n = req.passages.len();
        if n > self.max_batch {
            return Err(Error::Config(format!(
                "batch of {n} exceeds the configured limit of {}",
                self.max_batch
            )));
        }
        let key = self.api_key()?;
        let (system, user) = build_prompt(req, self.char_budget);
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": 0.0,
        });
        if req.max_tokens_hint > 0 {
            body["max_tokens"] = serde_json::json!(req.max_tokens_hint);
        }

        let _permit = self.permits.acquire();
        let mut attempt = 0;
        let raw = loop {
            match self.send_once(&body, key.as_deref()) {
                Ok(raw) => break raw,
                Err(e) if attempt < self.retries => {
                    std::thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                    let _ = e;
                }
                Err(e) => return Err(e),
            }
        };

        let (permutation, repaired) = parse_ranking(&raw, n)?;
        Ok(RerankResult {
            ordering: permutation
                .into_iter()
                .map(|i| req.passages[i - 1].doc_id.clone())
                .collect(),
            repaired,
            raw_response: Some(raw),
        })
    }
}
