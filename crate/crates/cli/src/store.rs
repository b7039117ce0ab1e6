//! Store directory layout.
//!
//! ```text
//! <store>/networks/<network>.toml
//! <store>/flows/<network>/<date>.csv
//! <store>/logs/<network>/<date>.log
//! <store>/ports/<network>/<date>.csv
//! <store>/feeds/<feed>/<date>.txt   (+ .meta)
//! <store>/cloud/{cache,ledger}/<provider>.jsonl
//! <store>/reports/<command>/
//! ```

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use blacklist_eval::blacklist_store::{BlacklistSnapshot, FeedStore};
use blacklist_eval::evaluator::{high_score_hosts, GroundTruth, GroundTruthKind, DEFAULT_HIGH_SCORE_MIN};
use blacklist_eval::flow_pipeline::{load_day, DailyFlowSet, NetworkConfig};
use blacklist_eval::log_sentinel::{read_port_events, scan_port_events, AttackEvent, LogSentinel};
use blacklist_eval::prefix_index::IpAddress;
use blacklist_eval::scan_detect::detect_scanners;
use chrono::NaiveDate;

/// Per-invocation overrides of the stored network settings.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub threshold: Option<usize>,
    pub exclude_ports: Option<Vec<u16>>,
}

pub struct Store {
    root: PathBuf,
    feeds: FeedStore,
}

impl Store {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            feeds: FeedStore::new(root),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn feed_store(&self) -> &FeedStore {
        &self.feeds
    }

    pub fn network_path(&self, name: &str) -> PathBuf {
        self.root.join("networks").join(format!("{name}.toml"))
    }

    pub fn flows_path(&self, network: &str, date: NaiveDate) -> PathBuf {
        self.root.join("flows").join(network).join(format!("{date}.csv"))
    }

    pub fn logs_path(&self, network: &str, date: NaiveDate) -> PathBuf {
        self.root.join("logs").join(network).join(format!("{date}.log"))
    }

    pub fn ports_path(&self, network: &str, date: NaiveDate) -> PathBuf {
        self.root.join("ports").join(network).join(format!("{date}.csv"))
    }

    pub fn cloud_dir(&self) -> PathBuf {
        self.root.join("cloud")
    }

    pub fn reports_dir(&self, command: &str) -> PathBuf {
        self.root.join("reports").join(command)
    }

    /// Ingested network names, sorted.
    pub fn networks(&self) -> Result<Vec<String>> {
        let dir = self.root.join("networks");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "toml") {
                if let Some(stem) = path.file_stem() {
                    names.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        names.sort();
        Ok(names)
    }

    pub fn network(&self, name: &str, overrides: &Overrides) -> Result<Arc<NetworkConfig>> {
        let path = self.network_path(name);
        if !path.is_file() {
            bail!(
                "network `{name}` has not been ingested: {} does not exist (run `bleval ingest network <file>`)",
                path.display()
            );
        }
        let mut cfg = NetworkConfig::load(&path)?;
        if let Some(t) = overrides.threshold {
            cfg = cfg.with_threshold(t)?;
        }
        if let Some(p) = &overrides.exclude_ports {
            cfg = cfg.with_excluded_ports(p.iter().copied());
        }
        Ok(Arc::new(cfg))
    }

    pub fn day(&self, cfg: &Arc<NetworkConfig>, date: NaiveDate) -> Result<DailyFlowSet> {
        let path = self.flows_path(cfg.network_name(), date);
        if !path.is_file() {
            bail!(
                "no flows for network `{}` on {date}: {} does not exist",
                cfg.network_name(),
                path.display()
            );
        }
        Ok(load_day(&path, cfg.clone(), date)?)
    }

    /// Authentication failures and closed-port probes for one day. The log
    /// file is required; the port-event file is optional.
    pub fn attack_events(&self, cfg: &NetworkConfig, date: NaiveDate) -> Result<Vec<AttackEvent>> {
        let name = cfg.network_name();
        let logs = self.logs_path(name, date);
        if !logs.is_file() {
            bail!("no server log for network `{name}` on {date}: {} does not exist", logs.display());
        }
        let sentinel = LogSentinel::with_defaults(cfg.whitelist_index().clone());
        let file = File::open(&logs).with_context(|| format!("opening {}", logs.display()))?;
        let mut events = sentinel
            .scan_reader(BufReader::new(file), date)
            .with_context(|| format!("reading {}", logs.display()))?;

        let ports = self.ports_path(name, date);
        if ports.is_file() {
            let file = File::open(&ports).with_context(|| format!("opening {}", ports.display()))?;
            let (contacts, bad) = read_port_events(BufReader::new(file))
                .with_context(|| format!("reading {}", ports.display()))?;
            if let Some((line, reason)) = bad.first() {
                bail!("{}:{line}: {reason}", ports.display());
            }
            events.extend(scan_port_events(&contacts, date, cfg.whitelist_index()));
        } else {
            log::info!("{} absent; no closed-port probes for {name} on {date}", ports.display());
        }
        events.sort_by_key(|a| (a.remote_ip, a.kind));
        Ok(events)
    }

    pub fn truth(&self, cfg: &Arc<NetworkConfig>, date: NaiveDate, kind: GroundTruthKind) -> Result<GroundTruth> {
        let ips: BTreeSet<IpAddress> = match kind {
            GroundTruthKind::Scanner => {
                let day = self.day(cfg, date)?;
                detect_scanners(&day, cfg).into_iter().map(|v| v.remote_ip).collect()
            }
            GroundTruthKind::AlertedHighScore => high_score_hosts(&self.day(cfg, date)?, DEFAULT_HIGH_SCORE_MIN),
            GroundTruthKind::LogAttacker => self
                .attack_events(cfg, date)?
                .into_iter()
                .map(|e| e.remote_ip)
                .collect(),
        };
        Ok(GroundTruth {
            date,
            network_name: cfg.network_name().to_string(),
            kind,
            ips,
        })
    }

    /// Snapshots of `selection` (or every stored feed) for `date`. A named
    /// feed without a snapshot is an error; unnamed feeds lacking the date
    /// are skipped.
    pub fn feeds_on(&self, date: NaiveDate, selection: &[String]) -> Result<Vec<BlacklistSnapshot>> {
        let mut out = Vec::new();
        if selection.is_empty() {
            for name in self.feeds.feeds()? {
                if self.feeds.exists(&name, date) {
                    out.push(self.feeds.load(&name, date)?);
                }
            }
        } else {
            for name in selection {
                if !self.feeds.exists(name, date) {
                    bail!(
                        "feed `{name}` has no snapshot for {date}: {} does not exist",
                        self.feeds.snapshot_path(name, date).display()
                    );
                }
                out.push(self.feeds.load(name, date)?);
            }
        }
        Ok(out)
    }
}
