//! Per-day scanner detection over receive-only hosts.
//!
//! A remote address is a scanner when, counting only TCP flows whose server
//! side is a receive-only local host and whose server port is not excluded,
//! it contacted at least `scanner_threshold` distinct such hosts that day.
//! Repeat contacts to the same host count once.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::flow_pipeline::{DailyFlowSet, Endpoint, FlowRecord, NetworkConfig, Proto};
use crate::par;
use crate::prefix_index::IpAddress;

pub const VERDICT_HEADER: &str = "date,network,remote_ip,distinct_hosts,flows";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScannerVerdict {
    pub remote_ip: IpAddress,
    pub date: NaiveDate,
    pub distinct_receive_only_contacted: usize,
    pub evidence_flow_count: usize,
    pub network_name: String,
}

type Contacts = HashMap<IpAddress, (HashSet<IpAddress>, usize)>;

/// Remote scanner address of a qualifying flow, if any.
fn qualifying_remote(
    flow: &FlowRecord,
    day: &DailyFlowSet,
    config: &NetworkConfig,
) -> Option<IpAddress> {
    if flow.proto != Proto::Tcp || config.excluded_ports().contains(&flow.server_port) {
        return None;
    }
    if !day.receive_only_hosts().contains(&flow.server_ip) {
        return None;
    }
    if config.classify(flow.client_ip) != Endpoint::Remote || config.is_whitelisted(flow.client_ip) {
        return None;
    }
    Some(flow.client_ip)
}

/// Flags remote scanners for one day. `config` supplies the threshold,
/// excluded ports and whitelist; it may differ from the config the day was
/// loaded with (for threshold sweeps).
pub fn detect_scanners(day: &DailyFlowSet, config: &NetworkConfig) -> Vec<ScannerVerdict> {
    let contacts: Contacts = par::fold_slice(
        day.flows(),
        Contacts::new,
        |mut acc, flow| {
            if let Some(remote) = qualifying_remote(flow, day, config) {
                let e = acc.entry(remote).or_default();
                e.0.insert(flow.server_ip);
                e.1 += 1;
            }
            acc
        },
        |mut a, b| {
            for (ip, (hosts, n)) in b {
                let e = a.entry(ip).or_default();
                e.0.extend(hosts);
                e.1 += n;
            }
            a
        },
    );

    let threshold = config.scanner_threshold();
    let mut verdicts: Vec<ScannerVerdict> = contacts
        .into_iter()
        .filter(|(_, (hosts, _))| hosts.len() >= threshold)
        .map(|(ip, (hosts, flows))| ScannerVerdict {
            remote_ip: ip,
            date: day.date(),
            distinct_receive_only_contacted: hosts.len(),
            evidence_flow_count: flows,
            network_name: day.network_name().to_string(),
        })
        .collect();
    verdicts.sort_by(|a, b| {
        b.distinct_receive_only_contacted
            .cmp(&a.distinct_receive_only_contacted)
            .then(a.remote_ip.cmp(&b.remote_ip))
    });
    verdicts
}

/// Detection over several days, each with the config it was loaded with.
pub fn detect_many(days: &[DailyFlowSet]) -> Vec<Vec<ScannerVerdict>> {
    par::map_slice(days, |d| detect_scanners(d, d.config()))
}

pub fn write_verdicts<W: Write>(mut out: W, verdicts: &[ScannerVerdict]) -> std::io::Result<()> {
    writeln!(out, "{VERDICT_HEADER}")?;
    for v in verdicts {
        writeln!(
            out,
            "{},{},{},{},{}",
            v.date, v.network_name, v.remote_ip, v.distinct_receive_only_contacted, v.evidence_flow_count
        )?;
    }
    Ok(())
}

pub fn read_verdicts<R: BufRead>(input: R) -> Result<Vec<ScannerVerdict>, String> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if i == 0 {
            if line.trim() != VERDICT_HEADER {
                return Err(format!("bad verdict header `{line}`"));
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
        out.push(ScannerVerdict {
            date: f[0].parse().map_err(|_| bad("date"))?,
            network_name: f[1].to_string(),
            remote_ip: f[2].parse().map_err(|_| bad("remote_ip"))?,
            distinct_receive_only_contacted: f[3].parse().map_err(|_| bad("distinct_hosts"))?,
            evidence_flow_count: f[4].parse().map_err(|_| bad("flows"))?,
        });
    }
    Ok(out)
}
