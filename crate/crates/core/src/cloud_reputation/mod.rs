//! Budgeted lookups against cloud IP-reputation services.
//!
//! Providers are described declaratively by [`CloudProviderConfig`]: a URL
//! template, where the API key comes from, a request budget and a rule that
//! turns the provider's response into a `(listed, consensus)` verdict.
//!
//! Every request that gets an HTTP response back is charged to a ledger on
//! disk, keyed by the start of the budget window, before the response is
//! interpreted. Verdicts go to an append-only cache and are served from it
//! without touching the budget. Failed connections are not charged.

mod transport;

#[cfg(feature = "mock")]
pub mod mock;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prefix_index::IpAddress;

pub use transport::{HttpMethod, HttpRequest, HttpResponse, Transport, UreqTransport};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("provider config: {0}")]
    Config(String),
    #[error("{provider}: budget of {limit} requests for the window starting {window_start} is used up and {ip} is not cached")]
    BudgetExhausted {
        provider: String,
        ip: IpAddress,
        limit: u32,
        window_start: NaiveDate,
    },
    #[error("{provider}: environment variable `{var}` with the API key is not set")]
    MissingKey { provider: String, var: String },
    #[error("{provider}: request for {ip} failed: {reason}")]
    Transport {
        provider: String,
        ip: IpAddress,
        reason: String,
    },
    #[error("{provider}: HTTP {status} for {ip}")]
    HttpStatus {
        provider: String,
        ip: IpAddress,
        status: u16,
    },
    #[error("{provider}: cannot interpret response for {ip}: {reason}")]
    Response {
        provider: String,
        ip: IpAddress,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    State {
        path: String,
        line: usize,
        reason: String,
    },
}

impl CloudError {
    /// True when the request was never answered, so retrying costs nothing
    /// that was not already spent.
    pub fn is_retry_safe(&self) -> bool {
        matches!(self, CloudError::Transport { .. })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CloudError + '_ {
    move |source| CloudError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetWindow {
    Day,
    /// ISO week, starting Monday.
    Week,
}

impl BudgetWindow {
    pub fn start(self, at: DateTime<Utc>) -> NaiveDate {
        let day = at.date_naive();
        match self {
            BudgetWindow::Day => day,
            BudgetWindow::Week => {
                day - Days::new(u64::from(day.weekday().num_days_from_monday()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub limit: u32,
    pub window: BudgetWindow,
}

/// How a response signal maps to a consensus verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusRule {
    /// Numeric signal at least N (e.g. number of engines flagging the IP).
    MinMatches(i64),
    /// Numeric signal exactly V (e.g. a confidence score of 100).
    AccuracyEquals(i64),
    /// Text signal equal to the given label, ignoring ASCII case.
    ClassificationEquals(String),
}

/// The value a provider reported for an address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawSignal {
    Integer(i64),
    Text(String),
}

impl std::fmt::Display for RawSignal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RawSignal::Integer(n) => write!(f, "{n}"),
            RawSignal::Text(s) => f.write_str(s),
        }
    }
}

fn default_auth_header() -> String {
    "key".to_string()
}

fn default_body_template() -> String {
    r#"{"ip":"{ip}"}"#.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudProviderConfig {
    pub provider_name: String,
    /// Request URL; `{ip}` is replaced by the queried address.
    pub base_url: String,
    #[serde(default)]
    pub method: HttpMethod,
    /// POST body; `{ip}` is replaced by the queried address.
    #[serde(default = "default_body_template")]
    pub body_template: String,
    /// Name of the environment variable holding the API key. Keys are never
    /// read from the config file itself.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    pub budget: Budget,
    /// JSON pointer to the signal the consensus rule is applied to.
    pub signal_field: String,
    /// JSON pointer to a separate "is listed" field. Without it, a positive
    /// number or any label other than `unknown` counts as listed.
    #[serde(default)]
    pub listed_field: Option<String>,
    pub consensus_rule: ConsensusRule,
}

impl CloudProviderConfig {
    pub fn from_toml(text: &str) -> Result<Self, CloudError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CloudError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CloudError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        let bad = |m: String| Err(CloudError::Config(m));
        let name_ok = !self.provider_name.is_empty()
            && self
                .provider_name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
            && !self.provider_name.starts_with('.');
        if !name_ok {
            return bad(format!("invalid provider_name `{}`", self.provider_name));
        }
        if self.budget.limit == 0 {
            return bad(format!("{}: budget limit must be > 0", self.provider_name));
        }
        if !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return bad(format!("{}: base_url must be http(s)", self.provider_name));
        }
        for p in std::iter::once(&self.signal_field).chain(self.listed_field.as_ref()) {
            if !p.is_empty() && !p.starts_with('/') {
                return bad(format!("{}: `{p}` is not a JSON pointer", self.provider_name));
            }
        }
        Ok(())
    }

    fn request(&self, ip: IpAddress, key: Option<String>) -> HttpRequest {
        let ip_text = ip.to_string();
        let mut headers = vec![("accept".to_string(), "application/json".to_string())];
        if let Some(k) = key {
            headers.push((self.auth_header.clone(), k));
        }
        let body = match self.method {
            HttpMethod::Get => None,
            HttpMethod::Post => {
                headers.push(("content-type".to_string(), "application/json".to_string()));
                Some(self.body_template.replace("{ip}", &ip_text))
            }
        };
        HttpRequest {
            method: self.method,
            url: self.base_url.replace("{ip}", &ip_text),
            headers,
            body,
        }
    }

    /// Maps a response body to `(listed, consensus, signal)`.
    pub fn interpret(&self, body: &str) -> Result<(bool, bool, RawSignal), String> {
        let doc: serde_json::Value =
            serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
        let value = doc
            .pointer(&self.signal_field)
            .ok_or_else(|| format!("no field at `{}`", self.signal_field))?;
        let signal = to_signal(value)?;
        let consensus = match (&self.consensus_rule, &signal) {
            (ConsensusRule::MinMatches(n), RawSignal::Integer(v)) => v >= n,
            (ConsensusRule::AccuracyEquals(n), RawSignal::Integer(v)) => v == n,
            (ConsensusRule::ClassificationEquals(label), RawSignal::Text(v)) => {
                v.eq_ignore_ascii_case(label)
            }
            (rule, s) => return Err(format!("signal `{s}` does not fit rule {rule:?}")),
        };
        let listed = match &self.listed_field {
            Some(ptr) => {
                let v = doc.pointer(ptr).ok_or_else(|| format!("no field at `{ptr}`"))?;
                truthy(v)
            }
            None => match &signal {
                RawSignal::Integer(v) => *v > 0,
                RawSignal::Text(s) => !s.is_empty() && !s.eq_ignore_ascii_case("unknown"),
            },
        };
        Ok((listed || consensus, consensus, signal))
    }
}

fn to_signal(v: &serde_json::Value) -> Result<RawSignal, String> {
    use serde_json::Value;
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64))
            .map(RawSignal::Integer)
            .ok_or_else(|| format!("non-integer signal {n}")),
        Value::Bool(b) => Ok(RawSignal::Integer(i64::from(*b))),
        Value::String(s) => Ok(RawSignal::Text(s.clone())),
        other => Err(format!("unsupported signal {other}")),
    }
}

fn truthy(v: &serde_json::Value) -> bool {
    use serde_json::Value;
    match v {
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64().is_some_and(|f| f > 0.0),
        Value::String(s) => !s.is_empty() && !s.eq_ignore_ascii_case("false"),
        Value::Array(a) => !a.is_empty(),
        Value::Object(o) => !o.is_empty(),
        Value::Null => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudVerdict {
    pub ip: IpAddress,
    pub provider_name: String,
    pub listed: bool,
    /// Always implies `listed`.
    pub consensus: bool,
    /// `None` when the provider had no record of the address (HTTP 404).
    pub raw_signal: Option<RawSignal>,
    pub queried_at: DateTime<Utc>,
    #[serde(skip)]
    pub from_cache: bool,
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().expect("clock lock") = at;
    }

    pub fn advance(&self, by: chrono::Duration) {
        let mut t = self.0.lock().expect("clock lock");
        *t += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock lock")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LedgerEntry {
    window_start: NaiveDate,
    ip: IpAddress,
    at: DateTime<Utc>,
    status: u16,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CloudError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CloudError::State {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_jsonl<T: Serialize>(path: &Path, item: &T) -> Result<(), CloudError> {
    let mut line = serde_json::to_string(item).expect("ledger and cache entries serialize");
    line.push('\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    f.write_all(line.as_bytes()).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

/// Client for one provider. Lookups take `&mut self`, so requests to a
/// provider are serialized; run separate clients for parallel providers.
pub struct CloudClient {
    config: CloudProviderConfig,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    cache_path: PathBuf,
    ledger_path: PathBuf,
    cache: HashMap<IpAddress, CloudVerdict>,
    spent: HashMap<NaiveDate, u32>,
    max_age: Option<chrono::Duration>,
}

impl std::fmt::Debug for CloudClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CloudClient")
            .field("provider", &self.config.provider_name)
            .field("cache_entries", &self.cache.len())
            .field("spent", &self.spent)
            .finish_non_exhaustive()
    }
}

impl CloudClient {
    /// Opens the cache and ledger under `state_dir/cache` and
    /// `state_dir/ledger`.
    pub fn open(
        config: CloudProviderConfig,
        state_dir: &Path,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, CloudError> {
        config.validate()?;
        let cache_dir = state_dir.join("cache");
        let ledger_dir = state_dir.join("ledger");
        fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
        fs::create_dir_all(&ledger_dir).map_err(io_err(&ledger_dir))?;
        let cache_path = cache_dir.join(format!("{}.jsonl", config.provider_name));
        let ledger_path = ledger_dir.join(format!("{}.jsonl", config.provider_name));

        let mut cache = HashMap::new();
        for v in read_jsonl::<CloudVerdict>(&cache_path)? {
            cache.insert(v.ip, v);
        }
        let mut spent: HashMap<NaiveDate, u32> = HashMap::new();
        for e in read_jsonl::<LedgerEntry>(&ledger_path)? {
            *spent.entry(e.window_start).or_insert(0) += 1;
        }
        Ok(Self {
            config,
            transport,
            clock,
            cache_path,
            ledger_path,
            cache,
            spent,
            max_age: None,
        })
    }

    /// Cached verdicts older than `max_age` are ignored (and re-queried).
    pub fn with_max_age(mut self, max_age: Option<chrono::Duration>) -> Self {
        self.max_age = max_age;
        self
    }

    pub fn config(&self) -> &CloudProviderConfig {
        &self.config
    }

    pub fn window_start(&self) -> NaiveDate {
        self.config.budget.window.start(self.clock.now())
    }

    /// Requests charged in the current window.
    pub fn spent_in_window(&self) -> u32 {
        self.spent.get(&self.window_start()).copied().unwrap_or(0)
    }

    pub fn remaining_budget(&self) -> u32 {
        self.config.budget.limit.saturating_sub(self.spent_in_window())
    }

    pub fn cached(&self, ip: IpAddress) -> Option<CloudVerdict> {
        let now = self.clock.now();
        self.cache
            .get(&ip)
            .filter(|v| self.max_age.is_none_or(|age| now - v.queried_at <= age))
            .map(|v| CloudVerdict {
                from_cache: true,
                ..v.clone()
            })
    }

    pub fn lookup(&mut self, ip: IpAddress) -> Result<CloudVerdict, CloudError> {
        if let Some(v) = self.cached(ip) {
            return Ok(v);
        }
        let provider = self.config.provider_name.clone();
        let now = self.clock.now();
        let window_start = self.config.budget.window.start(now);
        if self.spent.get(&window_start).copied().unwrap_or(0) >= self.config.budget.limit {
            return Err(CloudError::BudgetExhausted {
                provider,
                ip,
                limit: self.config.budget.limit,
                window_start,
            });
        }
        let key = match &self.config.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| CloudError::MissingKey {
                provider: provider.clone(),
                var: var.clone(),
            })?),
            None => None,
        };

        let req = self.config.request(ip, key);
        let resp = self.transport.send(&req).map_err(|reason| CloudError::Transport {
            provider: provider.clone(),
            ip,
            reason,
        })?;
        // a response arrived: the provider counted it, so we do too
        append_jsonl(
            &self.ledger_path,
            &LedgerEntry {
                window_start,
                ip,
                at: now,
                status: resp.status,
            },
        )?;
        *self.spent.entry(window_start).or_insert(0) += 1;

        let (listed, consensus, raw_signal) = match resp.status {
            200..=299 => {
                let (l, c, s) =
                    self.config
                        .interpret(&resp.body)
                        .map_err(|reason| CloudError::Response {
                            provider: provider.clone(),
                            ip,
                            reason,
                        })?;
                (l, c, Some(s))
            }
            404 => (false, false, None),
            status => return Err(CloudError::HttpStatus { provider, ip, status }),
        };
        let verdict = CloudVerdict {
            ip,
            provider_name: provider,
            listed,
            consensus,
            raw_signal,
            queried_at: now,
            from_cache: false,
        };
        debug_assert!(!verdict.consensus || verdict.listed);
        append_jsonl(&self.cache_path, &verdict)?;
        self.cache.insert(ip, verdict.clone());
        Ok(verdict)
    }

    /// Looks up `ips` in order. Once the budget runs out, only cached
    /// addresses are still answered; the rest are reported as unserved.
    pub fn batch_lookup(&mut self, ips: &[IpAddress]) -> BatchOutcome {
        let mut out = BatchOutcome {
            provider_name: self.config.provider_name.clone(),
            ..BatchOutcome::default()
        };
        for &ip in ips {
            if let Some(v) = self.cached(ip) {
                out.cached += 1;
                out.verdicts.push(v);
                continue;
            }
            if out.budget_exhausted {
                out.unserved += 1;
                continue;
            }
            match self.lookup(ip) {
                Ok(v) => {
                    out.spent += 1;
                    out.verdicts.push(v);
                }
                Err(e) => {
                    match &e {
                        CloudError::BudgetExhausted { .. } => {
                            out.budget_exhausted = true;
                            out.unserved += 1;
                        }
                        // answered but unusable: charged, no verdict
                        CloudError::HttpStatus { .. } | CloudError::Response { .. } => {
                            out.spent += 1;
                        }
                        _ => out.unserved += 1,
                    }
                    out.errors.push((ip, e.to_string()));
                }
            }
        }
        out
    }
}

/// Result of [`CloudClient::batch_lookup`]. Every input address is counted
/// exactly once in `spent`, `cached` or `unserved`.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub provider_name: String,
    pub verdicts: Vec<CloudVerdict>,
    /// Requests charged to the budget.
    pub spent: usize,
    pub cached: usize,
    pub unserved: usize,
    pub budget_exhausted: bool,
    pub errors: Vec<(IpAddress, String)>,
}

/// Runs one batch per provider, providers in parallel.
pub fn batch_lookup_all(clients: &mut [CloudClient], ips: &[IpAddress]) -> Vec<BatchOutcome> {
    std::thread::scope(|s| {
        let handles: Vec<_> = clients
            .iter_mut()
            .map(|c| s.spawn(move || c.batch_lookup(ips)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("provider batch thread panicked"))
            .collect()
    })
}
