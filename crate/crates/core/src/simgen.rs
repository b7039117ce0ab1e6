//! Synthetic fixture generator.
//!
//! A [`Scenario`] plants scanners, log attackers, closed-port probers and
//! high-score hosts into a set of monitored networks over a run of days,
//! surrounds them with benign traffic and writes:
//!
//! ```text
//! networks/<network>.toml
//! flows/<network>/<date>.csv
//! logs/<network>/<date>.log
//! ports/<network>/<date>.csv
//! feeds/<feed>/<date>.txt
//! manifest.json
//! ```
//!
//! The manifest holds the expected ground-truth sets and every expected
//! metric as integer ratios. It is computed from the generator's own record
//! of what it planted, never by running the analysis code, so it can serve
//! as the oracle for the whole pipeline. Output is a pure function of the
//! scenario: the same seed gives byte-identical files.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blacklist_store::validate_feed_name;
use crate::evaluator::{GroundTruthKind, DEFAULT_BENIGN_SCORE_MAX, DEFAULT_HIGH_SCORE_MIN};
use crate::flow_pipeline::{day_window, write_flows, FlowRecord, NetworkConfig, Proto};
use crate::log_sentinel::{
    write_port_events, PortContactEvent, PortProto, PortState, DEFAULT_FAILURE_THRESHOLD,
};
use crate::prefix_index::{IpAddress, IpPrefix};
use crate::ratio::Ratio;

const SCANNER_SCORE: u64 = 150;
const ATTACKER_SCORE: u64 = 120;
const SERVICES: [(&str, u16); 4] = [("ssh", 22), ("imap", 143), ("smtp", 587), ("web-admin", 443)];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Invalid(msg.into()))
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, 13).expect("valid date")
}

fn default_noise_prefix() -> IpPrefix {
    "100.64.0.0/10".parse().expect("valid prefix")
}

fn default_benign_prefix() -> IpPrefix {
    "198.18.0.0/15".parse().expect("valid prefix")
}

fn default_ssh_ports() -> Vec<u16> {
    vec![22]
}

fn default_probe_ports() -> Vec<u16> {
    vec![3389]
}

fn default_tcp() -> Proto {
    Proto::Tcp
}

fn default_port_tcp() -> PortProto {
    PortProto::Tcp
}

fn default_ssh() -> String {
    "ssh".into()
}

fn default_scanner_kind() -> GroundTruthKind {
    GroundTruthKind::Scanner
}

fn one() -> u32 {
    1
}

fn d16() -> u32 {
    16
}

fn d512() -> u32 {
    512
}

fn d40() -> u32 {
    40
}

fn d20() -> u32 {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub days: u32,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    /// Range feed noise entries are drawn from.
    #[serde(default = "default_noise_prefix")]
    pub noise_prefix: IpPrefix,
    #[serde(rename = "network")]
    pub networks: Vec<NetworkSpec>,
    #[serde(default, rename = "scanner")]
    pub scanners: Vec<ScannerSpec>,
    #[serde(default, rename = "log_attacker")]
    pub log_attackers: Vec<LogAttackerSpec>,
    #[serde(default, rename = "port_prober")]
    pub port_probers: Vec<PortProberSpec>,
    #[serde(default, rename = "high_score")]
    pub high_score: Vec<HighScoreSpec>,
    #[serde(default, rename = "feed")]
    pub feeds: Vec<FeedSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    pub local_prefix: IpPrefix,
    /// Hosts that answer traffic, numbered from the first address after the
    /// network address. The first one is the monitored server.
    #[serde(default = "d16")]
    pub active_hosts: u32,
    /// Unused addresses following the active hosts; scanners probe these.
    #[serde(default = "d512")]
    pub silent_hosts: u32,
    /// Benign remote clients per day.
    #[serde(default = "d40")]
    pub benign_clients: u32,
    #[serde(default = "default_benign_prefix")]
    pub benign_prefix: IpPrefix,
    #[serde(default)]
    pub scanner_threshold: Option<usize>,
    #[serde(default)]
    pub excluded_ports: Option<Vec<u16>>,
    #[serde(default)]
    pub admin_whitelist: Vec<IpPrefix>,
    #[serde(default = "d20")]
    pub log_noise_lines: u32,
}

/// Either a single `ip` or `count` addresses drawn from `prefix`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScannerSpec {
    #[serde(default)]
    pub ip: Option<IpAddress>,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub prefix: Option<IpPrefix>,
    pub fan_out: u32,
    #[serde(default = "default_ssh_ports")]
    pub ports: Vec<u16>,
    #[serde(default = "default_tcp")]
    pub proto: Proto,
    /// Networks scanned; empty means all.
    #[serde(default)]
    pub networks: Vec<String>,
    /// Day offsets active; empty means all.
    #[serde(default)]
    pub days: Vec<u32>,
    #[serde(default)]
    pub propagation: Option<PropagationSpec>,
}

/// The first `count` members of a scanner group also scan `network`,
/// `delay` days after each of their active days.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSpec {
    pub network: String,
    pub count: u32,
    #[serde(default = "one")]
    pub delay: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogAttackerSpec {
    #[serde(default)]
    pub ip: Option<IpAddress>,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub prefix: Option<IpPrefix>,
    /// Failed attempts per active day.
    pub failures: u32,
    #[serde(default = "default_ssh")]
    pub service: String,
    pub network: String,
    #[serde(default)]
    pub days: Vec<u32>,
    /// Other networks these addresses also send (answered) traffic to.
    #[serde(default)]
    pub also_visits: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortProberSpec {
    #[serde(default)]
    pub ip: Option<IpAddress>,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub prefix: Option<IpPrefix>,
    pub network: String,
    #[serde(default = "default_probe_ports")]
    pub ports: Vec<u16>,
    #[serde(default = "default_port_tcp")]
    pub proto: PortProto,
    /// Contacts per port per active day.
    #[serde(default = "one")]
    pub contacts: u32,
    #[serde(default)]
    pub days: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighScoreSpec {
    #[serde(default)]
    pub ip: Option<IpAddress>,
    #[serde(default)]
    pub count: Option<u32>,
    #[serde(default)]
    pub prefix: Option<IpPrefix>,
    pub network: String,
    /// Flows per active day, each carrying `score`.
    pub flows: u32,
    pub score: u64,
    #[serde(default)]
    pub days: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSpec {
    pub name: String,
    /// Network whose ground truth the feed samples; default the first.
    #[serde(default)]
    pub network: Option<String>,
    #[serde(default = "default_scanner_kind")]
    pub kind: GroundTruthKind,
    /// Share of each day's ground truth listed, rounded to the nearest
    /// address count.
    pub fraction: f64,
    /// Random host entries from the noise range.
    #[serde(default)]
    pub noise_entries: u32,
    /// Random /24 entries from the noise range.
    #[serde(default)]
    pub noise_prefixes: u32,
    /// Benign clients of the sampled network listed per day.
    #[serde(default)]
    pub benign_planted: u32,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn network_index(&self, name: &str) -> Result<usize, SimError> {
        self.networks
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| SimError::Invalid(format!("unknown network `{name}`")))
    }

    fn date(&self, day: u32) -> NaiveDate {
        self.start_date + Days::new(u64::from(day))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.days == 0 || self.days > 366 {
            return invalid("days must be between 1 and 366");
        }
        if self.networks.is_empty() {
            return invalid("at least one [[network]] is required");
        }
        if !self.noise_prefix.is_v4() {
            return invalid("noise_prefix must be IPv4");
        }
        let mut names = HashSet::new();
        let mut reserved: Vec<(IpPrefix, String)> = vec![(self.noise_prefix, "noise_prefix".into())];
        for n in &self.networks {
            validate_feed_name(&n.name).map_err(|e| SimError::Invalid(e.to_string()))?;
            if !names.insert(n.name.as_str()) {
                return invalid(format!("duplicate network `{}`", n.name));
            }
            if !n.local_prefix.is_v4() || !n.benign_prefix.is_v4() {
                return invalid(format!("network `{}`: only IPv4 prefixes are generated", n.name));
            }
            if n.active_hosts == 0 {
                return invalid(format!("network `{}`: active_hosts must be >= 1", n.name));
            }
            let room = (1u64 << n.local_prefix.host_bits()).saturating_sub(2);
            if u64::from(n.active_hosts) + u64::from(n.silent_hosts) > room {
                return invalid(format!(
                    "network `{}`: {} active + {} silent hosts do not fit in {}",
                    n.name, n.active_hosts, n.silent_hosts, n.local_prefix
                ));
            }
            if u64::from(n.benign_clients) > 1u64 << n.benign_prefix.host_bits() {
                return invalid(format!("network `{}`: benign_prefix too small", n.name));
            }
            if n.scanner_threshold == Some(0) {
                return invalid(format!("network `{}`: scanner_threshold must be >= 1", n.name));
            }
            reserved.push((n.local_prefix, format!("local prefix of `{}`", n.name)));
            reserved.push((n.benign_prefix, format!("benign prefix of `{}`", n.name)));
        }
        // benign ranges may be shared between networks; nothing else may overlap
        for (i, (a, an)) in reserved.iter().enumerate() {
            for (b, bn) in &reserved[i + 1..] {
                let shared_benign = a == b && an.starts_with("benign") && bn.starts_with("benign");
                if !shared_benign && (a.covers(*b) || b.covers(*a)) {
                    return invalid(format!("{an} ({a}) overlaps {bn} ({b})"));
                }
            }
        }

        let check_days = |what: &str, days: &[u32]| -> Result<(), SimError> {
            match days.iter().find(|&&d| d >= self.days) {
                Some(d) => invalid(format!("{what}: day {d} is outside 0..{}", self.days)),
                None => Ok(()),
            }
        };
        let check_source = |what: &str,
                            ip: Option<IpAddress>,
                            count: Option<u32>,
                            prefix: Option<IpPrefix>|
         -> Result<(), SimError> {
            let planted: IpPrefix = match (ip, count, prefix) {
                (Some(ip), None, None) => IpPrefix::host(ip),
                (None, Some(c), Some(p)) => {
                    if c == 0 {
                        return invalid(format!("{what}: count must be >= 1"));
                    }
                    if p.host_bits() < 64 && u64::from(c) > 1u64 << p.host_bits() {
                        return invalid(format!("{what}: {p} has fewer than {c} addresses"));
                    }
                    p
                }
                _ => return invalid(format!("{what}: give either `ip` or both `count` and `prefix`")),
            };
            if !planted.is_v4() {
                return invalid(format!("{what}: only IPv4 addresses are generated"));
            }
            for (r, rn) in &reserved {
                if r.covers(planted) || planted.covers(*r) {
                    return invalid(format!("{what}: {planted} overlaps {rn} ({r})"));
                }
            }
            Ok(())
        };

        for (i, s) in self.scanners.iter().enumerate() {
            let what = format!("scanner #{}", i + 1);
            check_source(&what, s.ip, s.count, s.prefix)?;
            check_days(&what, &s.days)?;
            if s.fan_out == 0 {
                return invalid(format!("{what}: fan_out must be >= 1"));
            }
            if s.ports.is_empty() || s.ports.contains(&0) {
                return invalid(format!("{what}: ports must be non-empty and non-zero"));
            }
            let mut targets: Vec<&str> = s.networks.iter().map(String::as_str).collect();
            if targets.is_empty() {
                targets = self.networks.iter().map(|n| n.name.as_str()).collect();
            }
            if let Some(p) = &s.propagation {
                targets.push(&p.network);
                let size = s.count.unwrap_or(1);
                if p.count > size {
                    return invalid(format!("{what}: propagation count {} exceeds group size {size}", p.count));
                }
            }
            for t in targets {
                let n = &self.networks[self.network_index(t)?];
                if s.fan_out > n.silent_hosts {
                    return invalid(format!(
                        "{what}: fan_out {} exceeds the silent pool of {} hosts in network `{}`",
                        s.fan_out, n.silent_hosts, n.name
                    ));
                }
            }
        }
        for (i, a) in self.log_attackers.iter().enumerate() {
            let what = format!("log_attacker #{}", i + 1);
            check_source(&what, a.ip, a.count, a.prefix)?;
            check_days(&what, &a.days)?;
            self.network_index(&a.network)?;
            for v in &a.also_visits {
                self.network_index(v)?;
            }
            if !SERVICES.iter().any(|(s, _)| *s == a.service) {
                return invalid(format!("{what}: unknown service `{}`", a.service));
            }
        }
        for (i, p) in self.port_probers.iter().enumerate() {
            let what = format!("port_prober #{}", i + 1);
            check_source(&what, p.ip, p.count, p.prefix)?;
            check_days(&what, &p.days)?;
            self.network_index(&p.network)?;
            if p.ports.is_empty() || p.ports.contains(&0) || p.contacts == 0 {
                return invalid(format!("{what}: ports and contacts must be non-empty and non-zero"));
            }
        }
        for (i, h) in self.high_score.iter().enumerate() {
            let what = format!("high_score #{}", i + 1);
            check_source(&what, h.ip, h.count, h.prefix)?;
            check_days(&what, &h.days)?;
            self.network_index(&h.network)?;
        }
        let mut feed_names = HashSet::new();
        for f in &self.feeds {
            validate_feed_name(&f.name).map_err(|e| SimError::Invalid(e.to_string()))?;
            if !feed_names.insert(f.name.as_str()) {
                return invalid(format!("duplicate feed `{}`", f.name));
            }
            if !(0.0..=1.0).contains(&f.fraction) {
                return invalid(format!("feed `{}`: fraction must be within [0, 1]", f.name));
            }
            if f.noise_entries + f.noise_prefixes == 0 {
                return invalid(format!(
                    "feed `{}`: needs at least one noise entry so no snapshot is empty",
                    f.name
                ));
            }
            if f.noise_prefixes > 0 && self.noise_prefix.len() > 24 {
                return invalid("noise_prefixes need a noise_prefix of /24 or shorter");
            }
            let net = match &f.network {
                Some(n) => &self.networks[self.network_index(n)?],
                None => &self.networks[0],
            };
            if f.benign_planted > net.benign_clients {
                return invalid(format!(
                    "feed `{}`: benign_planted {} exceeds {} benign clients",
                    f.name, f.benign_planted, net.benign_clients
                ));
            }
        }
        Ok(())
    }
}

/// Expected per-day sets for one network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayTruth {
    pub date: NaiveDate,
    pub scanners: BTreeSet<IpAddress>,
    /// Planted scanners that must not be flagged (below threshold, UDP,
    /// excluded ports or whitelisted).
    pub unflagged_scanners: BTreeSet<IpAddress>,
    pub auth_attackers: BTreeSet<IpAddress>,
    pub port_probers: BTreeSet<IpAddress>,
    /// `auth_attackers` and `port_probers` together.
    pub log_attackers: BTreeSet<IpAddress>,
    pub alerted_high_score: BTreeSet<IpAddress>,
    pub benign_remotes: BTreeSet<IpAddress>,
    pub remote_clients: usize,
    pub flows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTruth {
    pub name: String,
    pub scanner_threshold: usize,
    pub days: Vec<DayTruth>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedDay {
    pub date: NaiveDate,
    pub entries: usize,
    pub planted: BTreeSet<IpAddress>,
    pub benign_planted: BTreeSet<IpAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedTruth {
    pub name: String,
    pub network: String,
    pub kind: GroundTruthKind,
    pub days: Vec<FeedDay>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedMatch {
    pub network: String,
    pub date: NaiveDate,
    pub kind: GroundTruthKind,
    pub feed: String,
    pub rate: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDecayRow {
    pub offset: u32,
    pub date: NaiveDate,
    pub daily: Ratio,
    pub stale: Ratio,
    /// `stale - daily` in matched addresses.
    pub delta_matched: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDecay {
    pub network: String,
    pub kind: GroundTruthKind,
    pub feed: String,
    pub base_date: NaiveDate,
    pub rows: Vec<ExpectedDecayRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedPropagation {
    pub source: String,
    pub target: String,
    pub start: NaiveDate,
    pub points: Vec<Ratio>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOverlap {
    pub network: String,
    pub date: NaiveDate,
    pub feed: String,
    pub listed: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCrossVisit {
    pub network: String,
    pub date: NaiveDate,
    pub other: String,
    pub visited: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    pub failure_threshold: u64,
    pub benign_score_max: u64,
    pub high_score_min: u64,
    pub networks: Vec<NetworkTruth>,
    pub feeds: Vec<FeedTruth>,
    pub expected_match: Vec<ExpectedMatch>,
    pub expected_decay: Vec<ExpectedDecay>,
    pub expected_propagation: Vec<ExpectedPropagation>,
    pub expected_false_positives: Vec<ExpectedOverlap>,
    pub expected_cross_visit: Vec<ExpectedCrossVisit>,
}

impl Manifest {
    pub fn network(&self, name: &str) -> Option<&NetworkTruth> {
        self.networks.iter().find(|n| n.name == name)
    }

    pub fn expected_rate(
        &self,
        network: &str,
        date: NaiveDate,
        kind: GroundTruthKind,
        feed: &str,
    ) -> Option<Ratio> {
        self.expected_match
            .iter()
            .find(|m| m.network == network && m.date == date && m.kind == kind && m.feed == feed)
            .map(|m| m.rate)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| SimError::Invalid(format!("{}: {e}", path.display())))
    }
}

/// Hands out distinct planted addresses.
struct Allocator {
    used: HashSet<IpAddress>,
}

impl Allocator {
    fn take(
        &mut self,
        rng: &mut ChaCha8Rng,
        ip: Option<IpAddress>,
        count: Option<u32>,
        prefix: Option<IpPrefix>,
        what: &str,
    ) -> Result<Vec<IpAddress>, SimError> {
        if let Some(ip) = ip {
            self.used.insert(ip);
            return Ok(vec![ip]);
        }
        let (count, prefix) = (count.unwrap_or(0) as usize, prefix.expect("validated source"));
        let size = 1u64 << prefix.host_bits();
        let base = prefix.network().bits() as u32;
        let mut out = Vec::with_capacity(count);
        if size <= 1 << 16 {
            let mut free: Vec<u32> = (0..size as u32)
                .map(|o| base + o)
                .filter(|a| !self.used.contains(&IpAddress::v4(*a)))
                .collect();
            if free.len() < count {
                return invalid(format!("{what}: {prefix} has only {} unused addresses", free.len()));
            }
            free.shuffle(rng);
            out.extend(free[..count].iter().map(|a| IpAddress::v4(*a)));
        } else {
            while out.len() < count {
                let a = IpAddress::v4(base + rng.random_range(0..size) as u32);
                if !self.used.contains(&a) && !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out.sort();
        self.used.extend(out.iter().copied());
        Ok(out)
    }
}

#[derive(Default)]
struct NetDay {
    flows: Vec<FlowRecord>,
    log: Vec<(i64, String)>,
    ports: Vec<PortContactEvent>,
    /// Distinct silent hosts per remote, qualifying contacts only.
    scan_hosts: BTreeMap<IpAddress, BTreeSet<IpAddress>>,
    planted_scanners: BTreeSet<IpAddress>,
    /// Per remote client: summed and highest flow score.
    scores: BTreeMap<IpAddress, (u64, u64)>,
    failures: BTreeMap<IpAddress, u64>,
    probers: BTreeSet<IpAddress>,
}

impl NetDay {
    fn push_flow(&mut self, f: FlowRecord) {
        let e = self.scores.entry(f.client_ip).or_insert((0, 0));
        e.0 += f.cyberscore;
        e.1 = e.1.max(f.cyberscore);
        self.flows.push(f);
    }
}

struct Net<'a> {
    spec: &'a NetworkSpec,
    threshold: usize,
    excluded: BTreeSet<u16>,
}

impl Net<'_> {
    fn host(&self, offset: u32) -> IpAddress {
        IpAddress::v4(self.spec.local_prefix.network().bits() as u32 + offset)
    }

    fn active(&self, i: u32) -> IpAddress {
        self.host(1 + i)
    }

    fn server(&self) -> IpAddress {
        self.active(0)
    }

    fn silent(&self, i: u32) -> IpAddress {
        self.host(1 + self.spec.active_hosts + i)
    }

    fn whitelisted(&self, ip: IpAddress) -> bool {
        self.spec.admin_whitelist.iter().any(|p| p.contains(ip))
    }

    fn config(&self) -> NetworkConfig {
        NetworkConfig::new(&self.spec.name, vec![self.spec.local_prefix])
            .and_then(|c| c.with_threshold(self.threshold))
            .expect("validated network")
            .with_excluded_ports(self.excluded.iter().copied())
            .with_admin_whitelist(self.spec.admin_whitelist.clone())
    }
}

fn active_days(days: &[u32], total: u32) -> Vec<u32> {
    if days.is_empty() {
        (0..total).collect()
    } else {
        let set: BTreeSet<u32> = days.iter().copied().collect();
        set.into_iter().collect()
    }
}

fn timestamp(rng: &mut ChaCha8Rng, date: NaiveDate) -> i64 {
    let (start, end) = day_window(date);
    rng.random_range(start..end)
}

fn ephemeral(rng: &mut ChaCha8Rng) -> u16 {
    rng.random_range(1024..=65535)
}

fn log_time(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .expect("timestamp in range")
        .format("%b %e %H:%M:%S")
        .to_string()
}

fn failure_line(rng: &mut ChaCha8Rng, service: &str, ts: i64, ip: IpAddress, server: IpAddress) -> String {
    let t = log_time(ts);
    let pid = rng.random_range(1000..60000);
    let users = ["root", "admin", "test", "oracle", "ubuntu", "postgres"];
    let user = users[rng.random_range(0..users.len())];
    match service {
        "ssh" => {
            let invalid = if rng.random_bool(0.5) { "invalid user " } else { "" };
            format!(
                "{t} srv sshd[{pid}]: Failed password for {invalid}{user} from {ip} port {} ssh2",
                ephemeral(rng)
            )
        }
        "imap" => format!(
            "{t} srv dovecot: imap-login: Disconnected (auth failed, 1 attempts in 2 secs): user=<{user}>, method=PLAIN, rip={ip}, lip={server}, session=<{pid:x}>"
        ),
        "smtp" => format!(
            "{t} srv postfix/smtpd[{pid}]: warning: unknown[{ip}]: SASL LOGIN authentication failed: UGFzc3dvcmQ6"
        ),
        _ => {
            let stamp = chrono::DateTime::from_timestamp(ts, 0)
                .expect("timestamp in range")
                .format("%d/%b/%Y:%H:%M:%S +0000");
            format!("{ip} - {user} [{stamp}] \"POST /admin/login HTTP/1.1\" 401 {}", rng.random_range(200..900))
        }
    }
}

fn noise_line(rng: &mut ChaCha8Rng, ts: i64, net: &Net<'_>) -> String {
    let t = log_time(ts);
    let pid = rng.random_range(1000..60000);
    match rng.random_range(0..3) {
        0 => format!(
            "{t} srv sshd[{pid}]: Accepted publickey for admin from {} port {} ssh2",
            net.active(rng.random_range(0..net.spec.active_hosts)),
            ephemeral(rng)
        ),
        1 => format!("{t} srv CRON[{pid}]: pam_unix(cron:session): session opened for user root(uid=0) by (uid=0)"),
        _ => format!("{t} srv sshd[{pid}]: Received disconnect from {} port {}:11: disconnected by user", net.server(), ephemeral(rng)),
    }
}

fn contains(entries: &[IpPrefix], ip: IpAddress) -> bool {
    entries.iter().any(|p| p.contains(ip))
}

fn overlap(truth: &BTreeSet<IpAddress>, entries: &[IpPrefix]) -> Ratio {
    let n = truth.iter().filter(|ip| contains(entries, **ip)).count();
    Ratio::new(n as u64, truth.len() as u64)
}

/// A generated fixture held in memory.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: Manifest,
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Fixture {
    /// Relative paths and contents, sorted by path.
    pub fn files(&self) -> &BTreeMap<PathBuf, Vec<u8>> {
        &self.files
    }

    pub fn write_to(&self, out: &Path) -> Result<(), SimError> {
        for (rel, bytes) in &self.files {
            let path = out.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| SimError::Io {
                    path: parent.display().to_string(),
                    source,
                })?;
            }
            fs::write(&path, bytes).map_err(|source| SimError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }
}

pub fn generate(scenario: &Scenario) -> Result<Fixture, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let days = scenario.days;
    let nets: Vec<Net<'_>> = scenario
        .networks
        .iter()
        .map(|spec| Net {
            spec,
            threshold: spec.scanner_threshold.unwrap_or(128),
            excluded: spec
                .excluded_ports
                .clone()
                .map(|p| p.into_iter().collect())
                .unwrap_or_else(|| [80, 443].into_iter().collect()),
        })
        .collect();
    let mut grid: Vec<Vec<NetDay>> = (0..days)
        .map(|_| (0..nets.len()).map(|_| NetDay::default()).collect())
        .collect();

    let mut alloc = Allocator { used: HashSet::new() };
    let scanner_ips = scenario
        .scanners
        .iter()
        .enumerate()
        .map(|(i, s)| alloc.take(&mut rng, s.ip, s.count, s.prefix, &format!("scanner #{}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let attacker_ips = scenario
        .log_attackers
        .iter()
        .enumerate()
        .map(|(i, s)| alloc.take(&mut rng, s.ip, s.count, s.prefix, &format!("log_attacker #{}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let prober_ips = scenario
        .port_probers
        .iter()
        .enumerate()
        .map(|(i, s)| alloc.take(&mut rng, s.ip, s.count, s.prefix, &format!("port_prober #{}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;
    let high_ips = scenario
        .high_score
        .iter()
        .enumerate()
        .map(|(i, s)| alloc.take(&mut rng, s.ip, s.count, s.prefix, &format!("high_score #{}", i + 1)))
        .collect::<Result<Vec<_>, _>>()?;

    // benign background
    for d in 0..days {
        let date = scenario.date(d);
        for (ni, net) in nets.iter().enumerate() {
            let size = 1usize << net.spec.benign_prefix.host_bits().min(24);
            let base = net.spec.benign_prefix.network().bits() as u32;
            let picks = index::sample(&mut rng, size, net.spec.benign_clients as usize);
            let mut clients: Vec<IpAddress> = picks.into_iter().map(|o| IpAddress::v4(base + o as u32)).collect();
            clients.sort();
            let cell = &mut grid[d as usize][ni];
            for c in clients {
                for _ in 0..rng.random_range(1..=3) {
                    let (up, down) = (rng.random_range(3..40), rng.random_range(3..40));
                    let ts = timestamp(&mut rng, date);
                    cell.push_flow(FlowRecord {
                        timestamp: ts,
                        proto: Proto::Tcp,
                        client_ip: c,
                        server_ip: net.active(rng.random_range(0..net.spec.active_hosts)),
                        client_port: ephemeral(&mut rng),
                        server_port: if rng.random_bool(0.8) { 443 } else { 80 },
                        c2s_pkts: up,
                        s2c_pkts: down,
                        c2s_bytes: up * 400,
                        s2c_bytes: down * 1200,
                        cyberscore: rng.random_range(0..=DEFAULT_BENIGN_SCORE_MAX),
                    });
                }
                cell.ports.push(PortContactEvent {
                    timestamp: timestamp(&mut rng, date),
                    remote_ip: c,
                    local_port: 443,
                    proto: PortProto::Tcp,
                    port_state: PortState::Open,
                });
            }
            for _ in 0..net.spec.log_noise_lines {
                let ts = timestamp(&mut rng, date);
                let line = noise_line(&mut rng, ts, net);
                grid[d as usize][ni].log.push((ts, line));
            }
        }
    }

    // scanners, with propagation
    for (spec, ips) in scenario.scanners.iter().zip(&scanner_ips) {
        let targets: Vec<usize> = if spec.networks.is_empty() {
            (0..nets.len()).collect()
        } else {
            spec.networks
                .iter()
                .map(|n| scenario.network_index(n))
                .collect::<Result<_, _>>()?
        };
        let mut jobs: Vec<(u32, usize, IpAddress)> = Vec::new();
        for d in active_days(&spec.days, days) {
            for &ni in &targets {
                jobs.extend(ips.iter().map(|ip| (d, ni, *ip)));
            }
            if let Some(p) = &spec.propagation {
                let later = d + p.delay;
                if later < days {
                    let ni = scenario.network_index(&p.network)?;
                    jobs.extend(ips.iter().take(p.count as usize).map(|ip| (later, ni, *ip)));
                }
            }
        }
        for (d, ni, ip) in jobs {
            let net = &nets[ni];
            let date = scenario.date(d);
            let cell = &mut grid[d as usize][ni];
            let hosts = index::sample(&mut rng, net.spec.silent_hosts as usize, spec.fan_out as usize);
            for (k, h) in hosts.into_iter().enumerate() {
                let host = net.silent(h as u32);
                let port = spec.ports[k % spec.ports.len()];
                let pkts = rng.random_range(1..=2);
                let ts = timestamp(&mut rng, date);
                cell.push_flow(FlowRecord {
                    timestamp: ts,
                    proto: spec.proto,
                    client_ip: ip,
                    server_ip: host,
                    client_port: ephemeral(&mut rng),
                    server_port: port,
                    c2s_pkts: pkts,
                    s2c_pkts: 0,
                    c2s_bytes: pkts * 60,
                    s2c_bytes: 0,
                    cyberscore: SCANNER_SCORE,
                });
                if spec.proto == Proto::Tcp && !net.excluded.contains(&port) {
                    cell.scan_hosts.entry(ip).or_default().insert(host);
                }
            }
            cell.planted_scanners.insert(ip);
        }
    }

    // log attackers: failure lines on the server plus the matching sessions
    for (spec, ips) in scenario.log_attackers.iter().zip(&attacker_ips) {
        let ni = scenario.network_index(&spec.network)?;
        let port = SERVICES.iter().find(|(s, _)| *s == spec.service).expect("validated service").1;
        let visits: Vec<usize> = spec
            .also_visits
            .iter()
            .map(|n| scenario.network_index(n))
            .collect::<Result<_, _>>()?;
        for d in active_days(&spec.days, days) {
            let date = scenario.date(d);
            for &ip in ips {
                let server = nets[ni].server();
                for _ in 0..spec.failures {
                    let ts = timestamp(&mut rng, date);
                    let line = failure_line(&mut rng, &spec.service, ts, ip, server);
                    let cell = &mut grid[d as usize][ni];
                    cell.log.push((ts, line));
                    cell.push_flow(FlowRecord {
                        timestamp: ts,
                        proto: Proto::Tcp,
                        client_ip: ip,
                        server_ip: server,
                        client_port: ephemeral(&mut rng),
                        server_port: port,
                        c2s_pkts: 12,
                        s2c_pkts: 10,
                        c2s_bytes: 2400,
                        s2c_bytes: 3100,
                        cyberscore: ATTACKER_SCORE,
                    });
                }
                *grid[d as usize][ni].failures.entry(ip).or_insert(0) += u64::from(spec.failures);
                for &vi in &visits {
                    let net = &nets[vi];
                    let ts = timestamp(&mut rng, date);
                    let flow = FlowRecord {
                        timestamp: ts,
                        proto: Proto::Tcp,
                        client_ip: ip,
                        server_ip: net.active(rng.random_range(0..net.spec.active_hosts)),
                        client_port: ephemeral(&mut rng),
                        server_port: 22,
                        c2s_pkts: 8,
                        s2c_pkts: 6,
                        c2s_bytes: 1500,
                        s2c_bytes: 1800,
                        cyberscore: ATTACKER_SCORE,
                    };
                    grid[d as usize][vi].push_flow(flow);
                }
            }
        }
    }

    for (spec, ips) in scenario.port_probers.iter().zip(&prober_ips) {
        let ni = scenario.network_index(&spec.network)?;
        let proto = match spec.proto {
            PortProto::Tcp => Proto::Tcp,
            PortProto::Udp => Proto::Udp,
        };
        for d in active_days(&spec.days, days) {
            let date = scenario.date(d);
            for &ip in ips {
                for &port in &spec.ports {
                    for _ in 0..spec.contacts {
                        let ts = timestamp(&mut rng, date);
                        let server = nets[ni].server();
                        let cell = &mut grid[d as usize][ni];
                        cell.ports.push(PortContactEvent {
                            timestamp: ts,
                            remote_ip: ip,
                            local_port: port,
                            proto: spec.proto,
                            port_state: PortState::Closed,
                        });
                        cell.push_flow(FlowRecord {
                            timestamp: ts,
                            proto,
                            client_ip: ip,
                            server_ip: server,
                            client_port: ephemeral(&mut rng),
                            server_port: port,
                            c2s_pkts: 1,
                            s2c_pkts: 1,
                            c2s_bytes: 60,
                            s2c_bytes: 40,
                            cyberscore: ATTACKER_SCORE,
                        });
                    }
                }
                grid[d as usize][ni].probers.insert(ip);
            }
        }
    }

    for (spec, ips) in scenario.high_score.iter().zip(&high_ips) {
        let ni = scenario.network_index(&spec.network)?;
        let net = &nets[ni];
        for d in active_days(&spec.days, days) {
            let date = scenario.date(d);
            for &ip in ips {
                for _ in 0..spec.flows {
                    let ts = timestamp(&mut rng, date);
                    let flow = FlowRecord {
                        timestamp: ts,
                        proto: Proto::Tcp,
                        client_ip: ip,
                        server_ip: net.active(rng.random_range(0..net.spec.active_hosts)),
                        client_port: ephemeral(&mut rng),
                        server_port: 443,
                        c2s_pkts: 30,
                        s2c_pkts: 20,
                        c2s_bytes: 30_000,
                        s2c_bytes: 9_000,
                        cyberscore: spec.score,
                    };
                    grid[d as usize][ni].push_flow(flow);
                }
            }
        }
    }

    // expected sets, from the bookkeeping above
    let mut truths: Vec<NetworkTruth> = nets
        .iter()
        .map(|n| NetworkTruth {
            name: n.spec.name.clone(),
            scanner_threshold: n.threshold,
            days: Vec::new(),
        })
        .collect();
    for (d, row) in grid.iter().enumerate() {
        for (ni, cell) in row.iter().enumerate() {
            let net = &nets[ni];
            let scanners: BTreeSet<IpAddress> = cell
                .scan_hosts
                .iter()
                .filter(|(ip, hosts)| hosts.len() >= net.threshold && !net.whitelisted(**ip))
                .map(|(ip, _)| *ip)
                .collect();
            let auth_attackers: BTreeSet<IpAddress> = cell
                .failures
                .iter()
                .filter(|(ip, n)| **n >= DEFAULT_FAILURE_THRESHOLD && !net.whitelisted(**ip))
                .map(|(ip, _)| *ip)
                .collect();
            let port_probers: BTreeSet<IpAddress> =
                cell.probers.iter().copied().filter(|ip| !net.whitelisted(*ip)).collect();
            truths[ni].days.push(DayTruth {
                date: scenario.date(d as u32),
                unflagged_scanners: cell.planted_scanners.difference(&scanners).copied().collect(),
                log_attackers: auth_attackers.union(&port_probers).copied().collect(),
                auth_attackers,
                port_probers,
                alerted_high_score: cell
                    .scores
                    .iter()
                    .filter(|(_, (sum, _))| *sum > DEFAULT_HIGH_SCORE_MIN)
                    .map(|(ip, _)| *ip)
                    .collect(),
                benign_remotes: cell
                    .scores
                    .iter()
                    .filter(|(_, (_, max))| *max <= DEFAULT_BENIGN_SCORE_MAX)
                    .map(|(ip, _)| *ip)
                    .collect(),
                remote_clients: cell.scores.len(),
                flows: cell.flows.len(),
                scanners,
            });
        }
    }
    let truth_set = |ni: usize, d: usize, kind: GroundTruthKind| -> &BTreeSet<IpAddress> {
        let t = &truths[ni].days[d];
        match kind {
            GroundTruthKind::Scanner => &t.scanners,
            GroundTruthKind::LogAttacker => &t.log_attackers,
            GroundTruthKind::AlertedHighScore => &t.alerted_high_score,
        }
    };

    // feeds
    let mut feed_entries: Vec<Vec<Vec<IpPrefix>>> = Vec::new();
    let mut feed_truths = Vec::new();
    for f in &scenario.feeds {
        let ni = match &f.network {
            Some(n) => scenario.network_index(n)?,
            None => 0,
        };
        let mut per_day = Vec::new();
        let mut days_out = Vec::new();
        for d in 0..days as usize {
            let mut pool: Vec<IpAddress> = truth_set(ni, d, f.kind).iter().copied().collect();
            pool.shuffle(&mut rng);
            let k = (f.fraction * pool.len() as f64).round() as usize;
            let planted: BTreeSet<IpAddress> = pool[..k].iter().copied().collect();

            let mut benign: Vec<IpAddress> = truths[ni].days[d].benign_remotes.iter().copied().collect();
            benign.shuffle(&mut rng);
            let benign_planted: BTreeSet<IpAddress> =
                benign.into_iter().take(f.benign_planted as usize).collect();

            let mut entries: BTreeSet<IpPrefix> = planted
                .iter()
                .chain(&benign_planted)
                .map(|ip| IpPrefix::host(*ip))
                .collect();
            let np = scenario.noise_prefix;
            let nbase = np.network().bits() as u32;
            let nsize = 1u64 << np.host_bits();
            let mut hosts = 0;
            while hosts < f.noise_entries as usize && (hosts as u64) < nsize {
                let ip = IpAddress::v4(nbase + rng.random_range(0..nsize) as u32);
                if entries.insert(IpPrefix::host(ip)) {
                    hosts += 1;
                }
            }
            let blocks = 1u64 << (24 - np.len().min(24));
            let mut nets24 = 0;
            while nets24 < f.noise_prefixes as usize && (nets24 as u64) < blocks {
                let b = rng.random_range(0..blocks) as u32;
                let p = IpPrefix::new(IpAddress::v4(nbase + (b << 8)), 24).expect("aligned /24");
                if entries.insert(p) {
                    nets24 += 1;
                }
            }
            let entries: Vec<IpPrefix> = entries.into_iter().collect();
            days_out.push(FeedDay {
                date: scenario.date(d as u32),
                entries: entries.len(),
                planted,
                benign_planted,
            });
            per_day.push(entries);
        }
        feed_entries.push(per_day);
        feed_truths.push(FeedTruth {
            name: f.name.clone(),
            network: nets[ni].spec.name.clone(),
            kind: f.kind,
            days: days_out,
        });
    }

    // expected metrics
    let kinds = [
        GroundTruthKind::Scanner,
        GroundTruthKind::LogAttacker,
        GroundTruthKind::AlertedHighScore,
    ];
    let mut expected_match = Vec::new();
    let mut expected_fp = Vec::new();
    for (ni, net) in nets.iter().enumerate() {
        for d in 0..days as usize {
            let date = scenario.date(d as u32);
            for kind in kinds {
                for (fi, f) in scenario.feeds.iter().enumerate() {
                    expected_match.push(ExpectedMatch {
                        network: net.spec.name.clone(),
                        date,
                        kind,
                        feed: f.name.clone(),
                        rate: overlap(truth_set(ni, d, kind), &feed_entries[fi][d]),
                    });
                }
            }
            for (fi, f) in scenario.feeds.iter().enumerate() {
                expected_fp.push(ExpectedOverlap {
                    network: net.spec.name.clone(),
                    date,
                    feed: f.name.clone(),
                    listed: overlap(&truths[ni].days[d].benign_remotes, &feed_entries[fi][d]),
                });
            }
        }
    }

    let mut expected_decay = Vec::new();
    for (ni, net) in nets.iter().enumerate() {
        for (fi, f) in scenario.feeds.iter().enumerate() {
            let rows = (0..days as usize)
                .map(|d| {
                    let truth = truth_set(ni, d, f.kind);
                    let daily = overlap(truth, &feed_entries[fi][d]);
                    let stale = overlap(truth, &feed_entries[fi][0]);
                    ExpectedDecayRow {
                        offset: d as u32,
                        date: scenario.date(d as u32),
                        daily,
                        stale,
                        delta_matched: stale.numerator as i64 - daily.numerator as i64,
                    }
                })
                .collect();
            expected_decay.push(ExpectedDecay {
                network: net.spec.name.clone(),
                kind: f.kind,
                feed: f.name.clone(),
                base_date: scenario.start_date,
                rows,
            });
        }
    }

    let mut expected_propagation = Vec::new();
    for (si, src) in truths.iter().enumerate() {
        for (ti, tgt) in truths.iter().enumerate() {
            if si == ti {
                continue;
            }
            let seeds = &src.days[0].scanners;
            let mut seen = BTreeSet::new();
            let points = tgt
                .days
                .iter()
                .map(|day| {
                    seen.extend(seeds.intersection(&day.scanners).copied());
                    Ratio::new(seen.len() as u64, seeds.len() as u64)
                })
                .collect();
            expected_propagation.push(ExpectedPropagation {
                source: src.name.clone(),
                target: tgt.name.clone(),
                start: scenario.start_date,
                points,
            });
        }
    }

    let mut expected_cross_visit = Vec::new();
    for (ni, net) in nets.iter().enumerate() {
        for d in 0..days as usize {
            let attackers = &truths[ni].days[d].log_attackers;
            for (oi, other) in nets.iter().enumerate() {
                if oi == ni {
                    continue;
                }
                let remotes = &grid[d][oi].scores;
                let n = attackers.iter().filter(|ip| remotes.contains_key(ip)).count();
                expected_cross_visit.push(ExpectedCrossVisit {
                    network: net.spec.name.clone(),
                    date: scenario.date(d as u32),
                    other: other.spec.name.clone(),
                    visited: Ratio::new(n as u64, attackers.len() as u64),
                });
            }
        }
    }

    // files
    let mut files: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    for net in &nets {
        files.insert(
            PathBuf::from("networks").join(format!("{}.toml", net.spec.name)),
            net.config().to_toml().into_bytes(),
        );
    }
    for (d, row) in grid.iter_mut().enumerate() {
        let date = scenario.date(d as u32);
        for (ni, cell) in row.iter_mut().enumerate() {
            let name = &nets[ni].spec.name;
            cell.flows.sort_by(|a, b| {
                (a.timestamp, a.client_ip, a.server_ip, a.server_port)
                    .cmp(&(b.timestamp, b.client_ip, b.server_ip, b.server_port))
            });
            let mut buf = Vec::new();
            write_flows(&mut buf, &cell.flows).expect("in-memory write");
            files.insert(PathBuf::from("flows").join(name).join(format!("{date}.csv")), buf);

            cell.log.sort();
            let mut log = String::new();
            for (_, line) in &cell.log {
                log.push_str(line);
                log.push('\n');
            }
            files.insert(PathBuf::from("logs").join(name).join(format!("{date}.log")), log.into_bytes());

            cell.ports.sort_by_key(|e| (e.timestamp, e.remote_ip, e.local_port));
            let mut buf = Vec::new();
            write_port_events(&mut buf, &cell.ports).expect("in-memory write");
            files.insert(PathBuf::from("ports").join(name).join(format!("{date}.csv")), buf);
        }
    }
    for (fi, f) in scenario.feeds.iter().enumerate() {
        for (d, entries) in feed_entries[fi].iter().enumerate() {
            let date = scenario.date(d as u32);
            let mut text = format!("# synthetic feed {}\n# generated for {date}\n", f.name);
            for p in entries {
                if p.is_host() {
                    text.push_str(&p.network().to_string());
                } else {
                    text.push_str(&p.to_string());
                }
                text.push('\n');
            }
            files.insert(PathBuf::from("feeds").join(&f.name).join(format!("{date}.txt")), text.into_bytes());
        }
    }

    let manifest = Manifest {
        seed: scenario.seed,
        start_date: scenario.start_date,
        days,
        failure_threshold: DEFAULT_FAILURE_THRESHOLD,
        benign_score_max: DEFAULT_BENIGN_SCORE_MAX,
        high_score_min: DEFAULT_HIGH_SCORE_MIN,
        networks: truths,
        feeds: feed_truths,
        expected_match,
        expected_decay,
        expected_propagation,
        expected_false_positives: expected_fp,
        expected_cross_visit,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    files.insert(PathBuf::from("manifest.json"), json.into_bytes());
    Ok(Fixture { manifest, files })
}
