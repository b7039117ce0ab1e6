//! Per-day flow datasets for a monitored network.
//!
//! Flow files are comma-separated text with a mandatory header
//! ([`FLOW_HEADER`]), one record per line. Loading a day validates every
//! record, drops records outside the UTC day window, and builds a per-local-host
//! activity summary (packets received and transmitted) in a single pass.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::prefix_index::{IpAddress, IpPrefix, PrefixIndex};

pub const FLOW_HEADER: &str =
    "ts,proto,client_ip,server_ip,client_port,server_port,c2s_pkts,s2c_pkts,c2s_bytes,s2c_bytes,cyberscore";

const FIELD_COUNT: usize = 11;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad header `{found}` (expected `{FLOW_HEADER}`)")]
    BadHeader { path: String, found: String },
    #[error("{path}: {malformed} of {total} records malformed (more than 1%); first: line {first_line}: {first_reason}")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
        first_line: usize,
        first_reason: String,
    },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
    Other,
}

impl FromStr for Proto {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tcp" | "6" => Ok(Proto::Tcp),
            "udp" | "17" => Ok(Proto::Udp),
            "other" => Ok(Proto::Other),
            _ => Err(format!("unknown protocol `{s}`")),
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Proto::Tcp => "tcp",
            Proto::Udp => "udp",
            Proto::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRecord {
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub proto: Proto,
    pub client_ip: IpAddress,
    pub server_ip: IpAddress,
    pub client_port: u16,
    pub server_port: u16,
    pub c2s_pkts: u64,
    pub s2c_pkts: u64,
    pub c2s_bytes: u64,
    pub s2c_bytes: u64,
    pub cyberscore: u64,
}

impl FlowRecord {
    pub fn parse_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != FIELD_COUNT {
            return Err(format!("expected {FIELD_COUNT} fields, got {}", fields.len()));
        }
        fn num<T: FromStr>(name: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad {name} `{v}`"))
        }
        let ip = |name: &str, v: &str| -> Result<IpAddress, String> {
            v.parse().map_err(|_| format!("bad {name} `{v}`"))
        };
        let rec = FlowRecord {
            timestamp: num("ts", fields[0])?,
            proto: fields[1].parse()?,
            client_ip: ip("client_ip", fields[2])?,
            server_ip: ip("server_ip", fields[3])?,
            client_port: num("client_port", fields[4])?,
            server_port: num("server_port", fields[5])?,
            c2s_pkts: num("c2s_pkts", fields[6])?,
            s2c_pkts: num("s2c_pkts", fields[7])?,
            c2s_bytes: num("c2s_bytes", fields[8])?,
            s2c_bytes: num("s2c_bytes", fields[9])?,
            cyberscore: num("cyberscore", fields[10])?,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<(), String> {
        if self.proto != Proto::Other && (self.client_port == 0 || self.server_port == 0) {
            return Err(format!("port 0 on a {} flow", self.proto));
        }
        Ok(())
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.timestamp,
            self.proto,
            self.client_ip,
            self.server_ip,
            self.client_port,
            self.server_port,
            self.c2s_pkts,
            self.s2c_pkts,
            self.c2s_bytes,
            self.s2c_bytes,
            self.cyberscore
        )
    }
}

/// Writes a flow file, header included.
pub fn write_flows<W: Write>(mut out: W, records: &[FlowRecord]) -> std::io::Result<()> {
    writeln!(out, "{FLOW_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkConfigFile {
    network_name: String,
    local_prefixes: Vec<IpPrefix>,
    #[serde(default = "default_excluded_ports")]
    excluded_ports: BTreeSet<u16>,
    #[serde(default = "default_threshold")]
    scanner_threshold: usize,
    #[serde(default)]
    admin_whitelist: Vec<IpPrefix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    silent_hosts: Option<Vec<IpPrefix>>,
}

fn default_excluded_ports() -> BTreeSet<u16> {
    [80, 443].into_iter().collect()
}

fn default_threshold() -> usize {
    128
}

/// Monitored network: which addresses are local, scanner heuristic knobs,
/// and administrator addresses whose activity is never reported.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NetworkConfigFile", into = "NetworkConfigFile")]
pub struct NetworkConfig {
    network_name: String,
    local_prefixes: Vec<IpPrefix>,
    excluded_ports: BTreeSet<u16>,
    scanner_threshold: usize,
    admin_whitelist: Vec<IpPrefix>,
    silent_hosts: Option<Vec<IpPrefix>>,
    local_index: PrefixIndex,
    whitelist_index: PrefixIndex,
    silent_index: Option<PrefixIndex>,
}

impl TryFrom<NetworkConfigFile> for NetworkConfig {
    type Error = FlowError;

    fn try_from(f: NetworkConfigFile) -> Result<Self, FlowError> {
        if f.network_name.trim().is_empty() {
            return Err(FlowError::InvalidConfig("network_name is empty".into()));
        }
        if f.local_prefixes.is_empty() {
            return Err(FlowError::InvalidConfig(format!(
                "network `{}` has no local_prefixes",
                f.network_name
            )));
        }
        if f.scanner_threshold == 0 {
            return Err(FlowError::InvalidConfig("scanner_threshold must be >= 1".into()));
        }
        Ok(Self {
            local_index: f.local_prefixes.iter().copied().collect(),
            whitelist_index: f.admin_whitelist.iter().copied().collect(),
            silent_index: f.silent_hosts.as_ref().map(|s| s.iter().copied().collect()),
            network_name: f.network_name,
            local_prefixes: f.local_prefixes,
            excluded_ports: f.excluded_ports,
            scanner_threshold: f.scanner_threshold,
            admin_whitelist: f.admin_whitelist,
            silent_hosts: f.silent_hosts,
        })
    }
}

impl From<NetworkConfig> for NetworkConfigFile {
    fn from(c: NetworkConfig) -> Self {
        Self {
            network_name: c.network_name,
            local_prefixes: c.local_prefixes,
            excluded_ports: c.excluded_ports,
            scanner_threshold: c.scanner_threshold,
            admin_whitelist: c.admin_whitelist,
            silent_hosts: c.silent_hosts,
        }
    }
}

impl NetworkConfig {
    /// A config with the default heuristic knobs: threshold 128 and
    /// destination ports 80 and 443 excluded.
    pub fn new(name: &str, local_prefixes: Vec<IpPrefix>) -> Result<Self, FlowError> {
        NetworkConfigFile {
            network_name: name.to_string(),
            local_prefixes,
            excluded_ports: default_excluded_ports(),
            scanner_threshold: default_threshold(),
            admin_whitelist: Vec::new(),
            silent_hosts: None,
        }
        .try_into()
    }

    pub fn with_threshold(self, threshold: usize) -> Result<Self, FlowError> {
        let mut f = NetworkConfigFile::from(self);
        f.scanner_threshold = threshold;
        f.try_into()
    }

    pub fn with_excluded_ports(self, ports: impl IntoIterator<Item = u16>) -> Self {
        Self {
            excluded_ports: ports.into_iter().collect(),
            ..self
        }
    }

    pub fn with_admin_whitelist(self, whitelist: Vec<IpPrefix>) -> Self {
        Self {
            whitelist_index: whitelist.iter().copied().collect(),
            admin_whitelist: whitelist,
            ..self
        }
    }

    /// Restricts receive-only hosts to a static inventory of unused ranges.
    pub fn with_silent_hosts(self, silent: Vec<IpPrefix>) -> Self {
        Self {
            silent_index: Some(silent.iter().copied().collect()),
            silent_hosts: Some(silent),
            ..self
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, FlowError> {
        toml::from_str(text).map_err(|e| FlowError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("network config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, FlowError> {
        let text = std::fs::read_to_string(path).map_err(|source| FlowError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn network_name(&self) -> &str {
        &self.network_name
    }

    pub fn local_prefixes(&self) -> &[IpPrefix] {
        &self.local_prefixes
    }

    pub fn excluded_ports(&self) -> &BTreeSet<u16> {
        &self.excluded_ports
    }

    pub fn scanner_threshold(&self) -> usize {
        self.scanner_threshold
    }

    pub fn admin_whitelist(&self) -> &[IpPrefix] {
        &self.admin_whitelist
    }

    pub fn whitelist_index(&self) -> &PrefixIndex {
        &self.whitelist_index
    }

    pub fn is_whitelisted(&self, addr: IpAddress) -> bool {
        self.whitelist_index.contains(addr)
    }

    pub fn silent_hosts(&self) -> Option<&[IpPrefix]> {
        self.silent_hosts.as_deref()
    }

    pub fn classify(&self, addr: IpAddress) -> Endpoint {
        classify_endpoint(addr, self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Local,
    Remote,
}

pub fn classify_endpoint(addr: IpAddress, config: &NetworkConfig) -> Endpoint {
    if config.local_index.contains(addr) {
        Endpoint::Local
    } else {
        Endpoint::Remote
    }
}

/// Packets a local host received and transmitted over one day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HostActivity {
    pub rx_pkts: u64,
    pub tx_pkts: u64,
    pub flows: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowDiagnostic {
    pub line: usize,
    pub reason: String,
}

/// One network's flows for one UTC day.
#[derive(Debug, Clone)]
pub struct DailyFlowSet {
    config: Arc<NetworkConfig>,
    date: NaiveDate,
    flows: Vec<FlowRecord>,
    activity: BTreeMap<IpAddress, HostActivity>,
    receive_only: BTreeSet<IpAddress>,
    diagnostics: Vec<FlowDiagnostic>,
    out_of_window: usize,
}

/// `[start, end)` of a UTC day in epoch seconds.
pub fn day_window(date: NaiveDate) -> (i64, i64) {
    let start = date.and_time(NaiveTime::MIN).and_utc().timestamp();
    (start, start + 86_400)
}

impl DailyFlowSet {
    /// Builds a day from records; records outside the day are dropped.
    pub fn from_records(
        records: impl IntoIterator<Item = FlowRecord>,
        config: Arc<NetworkConfig>,
        date: NaiveDate,
    ) -> Self {
        let (start, end) = day_window(date);
        let mut set = DailyFlowSet {
            config,
            date,
            flows: Vec::new(),
            activity: BTreeMap::new(),
            receive_only: BTreeSet::new(),
            diagnostics: Vec::new(),
            out_of_window: 0,
        };
        for (i, r) in records.into_iter().enumerate() {
            if r.timestamp < start || r.timestamp >= end {
                set.out_of_window += 1;
                set.diagnostics.push(FlowDiagnostic {
                    line: i + 1,
                    reason: format!("timestamp {} outside {date}", r.timestamp),
                });
                continue;
            }
            set.account(&r);
            set.flows.push(r);
        }
        set.finish();
        set
    }

    fn account(&mut self, r: &FlowRecord) {
        if self.config.classify(r.client_ip) == Endpoint::Local {
            let a = self.activity.entry(r.client_ip).or_default();
            a.tx_pkts += r.c2s_pkts;
            a.rx_pkts += r.s2c_pkts;
            a.flows += 1;
        }
        if self.config.classify(r.server_ip) == Endpoint::Local {
            let a = self.activity.entry(r.server_ip).or_default();
            a.tx_pkts += r.s2c_pkts;
            a.rx_pkts += r.c2s_pkts;
            a.flows += 1;
        }
    }

    fn finish(&mut self) {
        let silent = self.config.silent_index.as_ref();
        self.receive_only = self
            .activity
            .iter()
            .filter(|(_, a)| a.rx_pkts > 0 && a.tx_pkts == 0)
            .map(|(ip, _)| *ip)
            .filter(|ip| silent.is_none_or(|s| s.contains(*ip)))
            .collect();
    }

    pub fn from_reader<R: Read>(
        reader: R,
        config: Arc<NetworkConfig>,
        date: NaiveDate,
        source: &str,
    ) -> Result<Self, FlowError> {
        let io = |source_err| FlowError::Io {
            path: source.to_string(),
            source: source_err,
        };
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            None => return Ok(Self::from_records(Vec::new(), config, date)),
            Some(h) => h.map_err(io)?,
        };
        let header = header.trim_start_matches('\u{feff}').trim();
        if header != FLOW_HEADER {
            return Err(FlowError::BadHeader {
                path: source.to_string(),
                found: header.to_string(),
            });
        }

        let mut records = Vec::new();
        let mut line_numbers = Vec::new();
        let mut malformed = Vec::new();
        let mut total = 0usize;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io)?;
            let line_no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            total += 1;
            match FlowRecord::parse_line(&line) {
                Ok(r) => {
                    records.push(r);
                    line_numbers.push(line_no);
                }
                Err(reason) => malformed.push(FlowDiagnostic {
                    line: line_no,
                    reason,
                }),
            }
        }
        if malformed.len() * 100 > total {
            let first = &malformed[0];
            return Err(FlowError::TooManyMalformed {
                path: source.to_string(),
                malformed: malformed.len(),
                total,
                first_line: first.line,
                first_reason: first.reason.clone(),
            });
        }
        let mut set = Self::from_records(records, config, date);
        // window diagnostics were numbered by record; map back to file lines
        for d in &mut set.diagnostics {
            d.line = line_numbers[d.line - 1];
        }
        set.diagnostics.extend(malformed);
        set.diagnostics.sort_by_key(|d| d.line);
        if !set.diagnostics.is_empty() {
            log::warn!(
                "{source}: {} record(s) skipped ({} outside {date})",
                set.diagnostics.len(),
                set.out_of_window
            );
        }
        Ok(set)
    }

    pub fn network_name(&self) -> &str {
        self.config.network_name()
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    /// Activity per local address seen this day.
    pub fn activity(&self) -> &BTreeMap<IpAddress, HostActivity> {
        &self.activity
    }

    pub fn diagnostics(&self) -> &[FlowDiagnostic] {
        &self.diagnostics
    }

    pub fn out_of_window(&self) -> usize {
        self.out_of_window
    }

    /// Local addresses that received traffic and transmitted none.
    pub fn receive_only_hosts(&self) -> &BTreeSet<IpAddress> {
        &self.receive_only
    }

    /// Distinct remote addresses appearing on either side of a flow.
    pub fn remote_ips(&self) -> BTreeSet<IpAddress> {
        let mut out = BTreeSet::new();
        for f in &self.flows {
            for ip in [f.client_ip, f.server_ip] {
                if self.config.classify(ip) == Endpoint::Remote {
                    out.insert(ip);
                }
            }
        }
        out
    }
}

pub fn load_day(
    path: &Path,
    config: Arc<NetworkConfig>,
    date: NaiveDate,
) -> Result<DailyFlowSet, FlowError> {
    let file = File::open(path).map_err(|source| FlowError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DailyFlowSet::from_reader(file, config, date, &path.display().to_string())
}

/// Loads several days, in parallel where enabled. Results keep input order.
pub fn load_days(
    jobs: Vec<(PathBuf, Arc<NetworkConfig>, NaiveDate)>,
) -> Vec<Result<DailyFlowSet, FlowError>> {
    par::map_vec(jobs, |(path, config, date)| load_day(&path, config, date))
}
