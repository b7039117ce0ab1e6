//! Attack events from server-side evidence: authentication failures found in
//! service logs, and contacts to closed ports.
//!
//! Counting is per (address, day) over the whole day; thresholds apply only
//! after aggregation, so splitting a day's log into chunks and merging the
//! tallies gives the same events as processing it in one go.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow_pipeline::day_window;
use crate::prefix_index::{IpAddress, PrefixIndex};

pub const DEFAULT_PATTERN_PACK: &str = include_str!("../data/default_patterns.toml");
pub const DEFAULT_FAILURE_THRESHOLD: u64 = 3;
pub const PORT_EVENT_HEADER: &str = "ts,remote_ip,port,proto,state";
pub const EVENT_HEADER: &str = "date,remote_ip,kind,evidence,services";

#[derive(Debug, Error)]
pub enum SentinelError {
    #[error("pattern `{name}`: {reason}")]
    Pattern { name: String, reason: String },
    #[error("pattern pack: {0}")]
    Pack(String),
    #[error("failure threshold must be >= 1")]
    Threshold,
}

#[derive(Debug, Clone)]
pub struct LogPattern {
    pub name: String,
    pub service: String,
    matcher: Regex,
}

impl LogPattern {
    /// The regex must have exactly one capture named `ip`.
    pub fn new(name: &str, service: &str, regex: &str) -> Result<Self, SentinelError> {
        let err = |reason: String| SentinelError::Pattern {
            name: name.to_string(),
            reason,
        };
        let matcher = Regex::new(regex).map_err(|e| err(e.to_string()))?;
        let ip_groups = matcher.capture_names().flatten().filter(|n| *n == "ip").count();
        if ip_groups != 1 {
            return Err(err("regex needs exactly one named capture `ip`".into()));
        }
        Ok(Self {
            name: name.to_string(),
            service: service.to_string(),
            matcher,
        })
    }

    pub fn regex(&self) -> &str {
        self.matcher.as_str()
    }

    fn source_ip(&self, line: &str) -> Option<IpAddress> {
        self.matcher.captures(line)?.name("ip")?.as_str().parse().ok()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PackFile {
    pattern: Vec<PackEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PackEntry {
    name: String,
    service: String,
    regex: String,
}

pub fn parse_pattern_pack(text: &str) -> Result<Vec<LogPattern>, SentinelError> {
    let pack: PackFile = toml::from_str(text).map_err(|e| SentinelError::Pack(e.to_string()))?;
    pack.pattern
        .iter()
        .map(|p| LogPattern::new(&p.name, &p.service, &p.regex))
        .collect()
}

pub fn default_patterns() -> Vec<LogPattern> {
    parse_pattern_pack(DEFAULT_PATTERN_PACK).expect("bundled pattern pack is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    AuthBruteforce,
    ClosedPortProbe,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::AuthBruteforce => "auth_bruteforce",
            AttackKind::ClosedPortProbe => "closed_port_probe",
        })
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auth_bruteforce" => Ok(AttackKind::AuthBruteforce),
            "closed_port_probe" => Ok(AttackKind::ClosedPortProbe),
            _ => Err(format!("unknown attack kind `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub remote_ip: IpAddress,
    pub date: NaiveDate,
    pub kind: AttackKind,
    pub evidence_count: u64,
    pub services: BTreeSet<String>,
}

/// Per-address evidence accumulated over part or all of a day.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    counts: BTreeMap<IpAddress, (u64, BTreeSet<String>)>,
}

impl Tally {
    fn add(&mut self, ip: IpAddress, service: &str) {
        let e = self.counts.entry(ip).or_default();
        e.0 += 1;
        if !e.1.contains(service) {
            e.1.insert(service.to_string());
        }
    }

    /// Associative merge of two partial tallies.
    pub fn merge(mut self, other: Tally) -> Tally {
        for (ip, (n, services)) in other.counts {
            let e = self.counts.entry(ip).or_default();
            e.0 += n;
            e.1.extend(services);
        }
        self
    }

    fn into_events(self, date: NaiveDate, kind: AttackKind, min_evidence: u64) -> Vec<AttackEvent> {
        self.counts
            .into_iter()
            .filter(|(_, (n, _))| *n >= min_evidence)
            .map(|(remote_ip, (evidence_count, services))| AttackEvent {
                remote_ip,
                date,
                kind,
                evidence_count,
                services,
            })
            .collect()
    }
}

/// Log scanner with a pattern set, a failure threshold and an admin
/// whitelist.
#[derive(Debug, Clone)]
pub struct LogSentinel {
    patterns: Vec<LogPattern>,
    failure_threshold: u64,
    whitelist: PrefixIndex,
}

impl LogSentinel {
    pub fn new(
        patterns: Vec<LogPattern>,
        failure_threshold: u64,
        whitelist: PrefixIndex,
    ) -> Result<Self, SentinelError> {
        if failure_threshold == 0 {
            return Err(SentinelError::Threshold);
        }
        Ok(Self {
            patterns,
            failure_threshold,
            whitelist,
        })
    }

    pub fn with_defaults(whitelist: PrefixIndex) -> Self {
        Self::new(default_patterns(), DEFAULT_FAILURE_THRESHOLD, whitelist)
            .expect("default threshold is positive")
    }

    /// Counts failure lines per source address. A line counts at most once,
    /// for the first pattern that matches it; lines without a parseable
    /// address are skipped.
    pub fn tally<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Tally {
        let mut tally = Tally::default();
        for line in lines {
            self.count_line(&mut tally, line);
        }
        tally
    }

    fn count_line(&self, tally: &mut Tally, line: &str) {
        let hit = self
            .patterns
            .iter()
            .find_map(|p| p.source_ip(line).map(|ip| (ip, p.service.as_str())));
        if let Some((ip, service)) = hit {
            if !self.whitelist.contains(ip) {
                tally.add(ip, service);
            }
        }
    }

    pub fn events(&self, tally: Tally, date: NaiveDate) -> Vec<AttackEvent> {
        tally.into_events(date, AttackKind::AuthBruteforce, self.failure_threshold)
    }

    pub fn scan_logs<'a>(
        &self,
        lines: impl IntoIterator<Item = &'a str>,
        date: NaiveDate,
    ) -> Vec<AttackEvent> {
        self.events(self.tally(lines), date)
    }

    pub fn scan_reader<R: BufRead>(&self, reader: R, date: NaiveDate) -> std::io::Result<Vec<AttackEvent>> {
        let mut tally = Tally::default();
        let mut buf = Vec::new();
        let mut reader = reader;
        loop {
            buf.clear();
            if reader.read_until(b'\n', &mut buf)? == 0 {
                break;
            }
            // logs are noisy; undecodable bytes are replaced, not fatal
            let line = String::from_utf8_lossy(&buf);
            self.count_line(&mut tally, line.trim_end());
        }
        Ok(self.events(tally, date))
    }
}

/// One-shot form of [`LogSentinel::scan_logs`].
pub fn scan_logs<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    patterns: &[LogPattern],
    date: NaiveDate,
    failure_threshold: u64,
    whitelist: &PrefixIndex,
) -> Result<Vec<AttackEvent>, SentinelError> {
    let sentinel = LogSentinel::new(patterns.to_vec(), failure_threshold, whitelist.clone())?;
    Ok(sentinel.scan_logs(lines, date))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortProto {
    Tcp,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PortContactEvent {
    pub timestamp: i64,
    pub remote_ip: IpAddress,
    pub local_port: u16,
    pub proto: PortProto,
    pub port_state: PortState,
}

impl PortContactEvent {
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(format!("expected 5 fields, got {}", f.len()));
        }
        let local_port: u16 = f[2].parse().map_err(|_| format!("bad port `{}`", f[2]))?;
        if local_port == 0 {
            return Err("port 0".into());
        }
        Ok(Self {
            timestamp: f[0].parse().map_err(|_| format!("bad ts `{}`", f[0]))?,
            remote_ip: f[1].parse().map_err(|_| format!("bad remote_ip `{}`", f[1]))?,
            local_port,
            proto: match f[3] {
                "tcp" => PortProto::Tcp,
                "udp" => PortProto::Udp,
                other => return Err(format!("bad proto `{other}`")),
            },
            port_state: match f[4] {
                "open" => PortState::Open,
                "closed" => PortState::Closed,
                other => return Err(format!("bad state `{other}`")),
            },
        })
    }

    pub fn to_line(&self) -> String {
        let proto = match self.proto {
            PortProto::Tcp => "tcp",
            PortProto::Udp => "udp",
        };
        let state = match self.port_state {
            PortState::Open => "open",
            PortState::Closed => "closed",
        };
        format!("{},{},{},{proto},{state}", self.timestamp, self.remote_ip, self.local_port)
    }
}

/// Reads a port event stream; the header line is optional. Returns parsed
/// events and `(line, reason)` for lines that failed to parse.
pub fn read_port_events<R: BufRead>(
    input: R,
) -> std::io::Result<(Vec<PortContactEvent>, Vec<(usize, String)>)> {
    let mut events = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == PORT_EVENT_HEADER) {
            continue;
        }
        match PortContactEvent::parse_line(line) {
            Ok(e) => events.push(e),
            Err(reason) => bad.push((i + 1, reason)),
        }
    }
    Ok((events, bad))
}

pub fn write_port_events<W: Write>(mut out: W, events: &[PortContactEvent]) -> std::io::Result<()> {
    writeln!(out, "{PORT_EVENT_HEADER}")?;
    for e in events {
        writeln!(out, "{}", e.to_line())?;
    }
    Ok(())
}

/// One closed-port probe event per remote address with at least one
/// closed-port contact during `date`. Events outside the day and whitelisted
/// sources are ignored.
pub fn scan_port_events(
    events: &[PortContactEvent],
    date: NaiveDate,
    whitelist: &PrefixIndex,
) -> Vec<AttackEvent> {
    let (start, end) = day_window(date);
    let mut tally = Tally::default();
    for e in events {
        if e.port_state != PortState::Closed || e.timestamp < start || e.timestamp >= end {
            continue;
        }
        if whitelist.contains(e.remote_ip) {
            continue;
        }
        let proto = match e.proto {
            PortProto::Tcp => "tcp",
            PortProto::Udp => "udp",
        };
        tally.add(e.remote_ip, &format!("{proto}/{}", e.local_port));
    }
    tally.into_events(date, AttackKind::ClosedPortProbe, 1)
}

pub fn write_events<W: Write>(mut out: W, events: &[AttackEvent]) -> std::io::Result<()> {
    writeln!(out, "{EVENT_HEADER}")?;
    for e in events {
        let services: Vec<&str> = e.services.iter().map(String::as_str).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            e.date,
            e.remote_ip,
            e.kind,
            e.evidence_count,
            services.join(";")
        )?;
    }
    Ok(())
}

pub fn read_events<R: BufRead>(input: R) -> Result<Vec<AttackEvent>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if i == 0 {
            if line.trim() != EVENT_HEADER {
                return Err(format!("bad event header `{line}`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(format!("line {}: expected 5 fields", i + 1));
        }
        let bad = |what: &str| format!("line {}: bad {what}", i + 1);
        out.push(AttackEvent {
            date: f[0].parse().map_err(|_| bad("date"))?,
            remote_ip: f[1].parse().map_err(|_| bad("remote_ip"))?,
            kind: f[2].parse().map_err(|_| bad("kind"))?,
            evidence_count: f[3].parse().map_err(|_| bad("evidence"))?,
            services: f[4]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}
