use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;

use blacklist_eval::blacklist_store::{intersection_matrix, parse_blacklist, BlacklistSnapshot, FeedStats};
use blacklist_eval::cloud_reputation::{
    batch_lookup_all, CloudClient, CloudProviderConfig, SystemClock, UreqTransport,
};
use blacklist_eval::evaluator::{
    aggregate_slash24, decay, false_positive_overlap, match_rate, propagation, server_summary,
    summarize_match_rates, GroundTruth, GroundTruthKind, MatchRateReport, UnionSpec,
    DEFAULT_AGGREGATION_BOUNDS, DEFAULT_BENIGN_SCORE_MAX,
};
use blacklist_eval::flow_pipeline::{load_day, DailyFlowSet, NetworkConfig};
use blacklist_eval::log_sentinel::{read_port_events, AttackEvent, LogSentinel};
use blacklist_eval::prefix_index::IpAddress;
use blacklist_eval::ratio::Ratio;
use blacklist_eval::report::{self, Cell, Document, Table};
use blacklist_eval::scan_detect::{detect_scanners, ScannerVerdict};
use blacklist_eval::simgen::{generate, Scenario};

use crate::store::{Overrides, Store};
use crate::{Cli, CloudArgs, Command, DateArgs, EvalArgs, FpArgs, Ingest, Internal, PropagateArgs, SimgenArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let store = Store::new(&cli.store);
    match &cli.command {
        Command::Ingest { what } => ingest(&store, what),
        Command::Detect(a) => emit(cli, &store, "detect", detect(&store, a)?),
        Command::Match(a) => emit(cli, &store, "match", match_cmd(&store, a)?),
        Command::Intersect(a) => emit(cli, &store, "intersect", intersect(&store, a)?),
        Command::Decay(a) => emit(cli, &store, "decay", decay_cmd(&store, a)?),
        Command::Propagate(a) => emit(cli, &store, "propagate", propagate(&store, a)?),
        Command::FpCheck(a) => emit(cli, &store, "fp-check", fp_check(&store, a)?),
        Command::Cloud(a) => emit(cli, &store, "cloud", cloud(&store, a)?),
        Command::Report(a) => emit(cli, &store, "report", report_cmd(&store, a)?),
        Command::Simgen(a) => simgen(cli, a),
    }
}

fn emit(cli: &Cli, store: &Store, command: &str, doc: Document) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| store.reports_dir(command));
    doc.write_to(&dir, &format!("{command}.txt"))
        .with_context(|| format!("writing report to {}", dir.display()))?;
    let out = format!("{}\nreport written to {}\n", doc.to_text(), dir.display());
    match std::io::stdout().lock().write_all(out.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn text(s: impl ToString) -> Cell {
    Cell::Text(s.to_string())
}

fn dates(args: &DateArgs) -> Result<Vec<NaiveDate>> {
    match (args.date, args.from, args.to) {
        (Some(d), _, _) => Ok(vec![d]),
        (None, Some(from), Some(to)) => {
            if from > to {
                bail!("--from {from} is after --to {to}");
            }
            Ok(from.iter_days().take_while(|d| *d <= to).collect())
        }
        _ => bail!("give --date or both --from and --to"),
    }
}

fn networks(store: &Store, selection: &[String]) -> Result<Vec<String>> {
    if !selection.is_empty() {
        return Ok(selection.to_vec());
    }
    let all = store.networks()?;
    if all.is_empty() {
        bail!(
            "no networks in {}: run `bleval ingest network <file>` first",
            store.root().join("networks").display()
        );
    }
    Ok(all)
}

fn overrides(threshold: Option<usize>, exclude_ports: &Option<Vec<u16>>) -> Overrides {
    Overrides {
        threshold,
        exclude_ports: exclude_ports.clone(),
    }
}

fn unions(specs: &[String]) -> Vec<UnionSpec> {
    specs.iter().map(|s| UnionSpec::parse(s)).collect()
}

fn require_feeds(feeds: Vec<BlacklistSnapshot>, date: NaiveDate, store: &Store) -> Result<Vec<BlacklistSnapshot>> {
    if feeds.is_empty() {
        bail!(
            "no blacklist snapshots for {date} under {}: run `bleval ingest feed` first",
            store.root().join("feeds").display()
        );
    }
    Ok(feeds)
}

fn copy_into(src: &Path, dest: &Path) -> Result<()> {
    let bytes = fs::read(src).with_context(|| format!("reading {}", src.display()))?;
    write_file(dest, &bytes)
}

fn write_file(dest: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(dest, bytes).with_context(|| format!("writing {}", dest.display()))
}

// ---------------------------------------------------------------- ingest

fn ingest(store: &Store, what: &Ingest) -> Result<()> {
    match what {
        Ingest::Network { file } => println!("{}", ingest_network(store, file)?),
        Ingest::Flows { network, date, file } => println!("{}", ingest_flows(store, network, *date, file)?),
        Ingest::Logs { network, date, file } => println!("{}", ingest_logs(store, network, *date, file)?),
        Ingest::Ports { network, date, file } => println!("{}", ingest_ports(store, network, *date, file)?),
        Ingest::Feed { name, date, file } => println!("{}", ingest_feed(store, name, *date, file)?),
        Ingest::Tree { dir } => ingest_tree(store, dir)?,
    }
    Ok(())
}

fn ingest_network(store: &Store, file: &Path) -> Result<String> {
    let cfg = NetworkConfig::load(file)?;
    let dest = store.network_path(cfg.network_name());
    write_file(&dest, cfg.to_toml().as_bytes())?;
    Ok(format!(
        "network {}: {} local prefixes, threshold {}, excluded ports {:?}",
        cfg.network_name(),
        cfg.local_prefixes().len(),
        cfg.scanner_threshold(),
        cfg.excluded_ports()
    ))
}

fn ingest_flows(store: &Store, network: &str, date: NaiveDate, file: &Path) -> Result<String> {
    let cfg = store.network(network, &Overrides::default())?;
    let day = load_day(file, cfg, date)?;
    copy_into(file, &store.flows_path(network, date))?;
    Ok(format!(
        "flows {network} {date}: {} records, {} receive-only hosts, {} diagnostics, {} out of window",
        day.flows().len(),
        day.receive_only_hosts().len(),
        day.diagnostics().len(),
        day.out_of_window()
    ))
}

fn ingest_logs(store: &Store, network: &str, date: NaiveDate, file: &Path) -> Result<String> {
    let cfg = store.network(network, &Overrides::default())?;
    let f = fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let events = LogSentinel::with_defaults(cfg.whitelist_index().clone())
        .scan_reader(BufReader::new(f), date)
        .with_context(|| format!("reading {}", file.display()))?;
    copy_into(file, &store.logs_path(network, date))?;
    Ok(format!("logs {network} {date}: {} sources over the failure threshold", events.len()))
}

fn ingest_ports(store: &Store, network: &str, date: NaiveDate, file: &Path) -> Result<String> {
    store.network(network, &Overrides::default())?;
    let f = fs::File::open(file).with_context(|| format!("opening {}", file.display()))?;
    let (events, bad) = read_port_events(BufReader::new(f)).with_context(|| format!("reading {}", file.display()))?;
    if let Some((line, reason)) = bad.first() {
        bail!("{}:{line}: {reason} ({} bad lines)", file.display(), bad.len());
    }
    copy_into(file, &store.ports_path(network, date))?;
    Ok(format!("ports {network} {date}: {} contact events", events.len()))
}

fn ingest_feed(store: &Store, name: &str, date: NaiveDate, file: &Path) -> Result<String> {
    let bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let snap = parse_blacklist(&bytes, name, date)?;
    for d in snap.diagnostics() {
        log::warn!("{}: {d:?}", file.display());
    }
    let stats = store.feed_store().save(&snap)?;
    let churn = stats
        .churn_vs_previous_day
        .map(|c| format!("churn {}", c.percent()))
        .unwrap_or_else(|| "no previous day".into());
    Ok(format!(
        "feed {name} {date}: {} entries, {} addresses, {} lines, {} comments, {} duplicates, {} diagnostics, {churn}",
        stats.entry_count,
        stats.expanded_ips,
        stats.raw_line_count,
        stats.comment_line_count,
        stats.duplicate_lines,
        stats.diagnostic_count
    ))
}

/// `(name, date, path)` for every `<root>/<name>/<date>.<ext>`, sorted.
fn dated_files(root: &Path, ext: &str) -> Result<Vec<(String, NaiveDate, PathBuf)>> {
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let dir = entry?.path();
        if !dir.is_dir() {
            continue;
        }
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        for f in fs::read_dir(&dir).with_context(|| format!("reading {}", dir.display()))? {
            let path = f?.path();
            if path.extension().is_none_or(|e| e != ext) {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            match stem.parse::<NaiveDate>() {
                Ok(date) => out.push((name.clone(), date, path)),
                Err(_) => log::warn!("skipping {}: file name is not a date", path.display()),
            }
        }
    }
    out.sort();
    Ok(out)
}

fn ingest_tree(store: &Store, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let net_dir = dir.join("networks");
    let mut nets: Vec<PathBuf> = match fs::read_dir(&net_dir) {
        Ok(rd) => rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "toml"))
            .collect(),
        Err(_) => Vec::new(),
    };
    nets.sort();
    for p in &nets {
        let line = ingest_network(store, p)?;
        log::info!("{line}");
        *counts.entry("networks").or_default() += 1;
    }
    for (name, date, path) in dated_files(&dir.join("feeds"), "txt")? {
        let line = ingest_feed(store, &name, date, &path)?;
        log::info!("{line}");
        *counts.entry("feed snapshots").or_default() += 1;
    }
    for (name, date, path) in dated_files(&dir.join("flows"), "csv")? {
        let line = ingest_flows(store, &name, date, &path)?;
        log::info!("{line}");
        *counts.entry("flow days").or_default() += 1;
    }
    for (name, date, path) in dated_files(&dir.join("logs"), "log")? {
        let line = ingest_logs(store, &name, date, &path)?;
        log::info!("{line}");
        *counts.entry("log days").or_default() += 1;
    }
    for (name, date, path) in dated_files(&dir.join("ports"), "csv")? {
        let line = ingest_ports(store, &name, date, &path)?;
        log::info!("{line}");
        *counts.entry("port-event days").or_default() += 1;
    }
    if counts.is_empty() {
        bail!("nothing to ingest under {}", dir.display());
    }
    let summary: Vec<String> = counts.iter().map(|(k, n)| format!("{n} {k}")).collect();
    println!("ingested {} from {}", summary.join(", "), dir.display());
    Ok(())
}

// ---------------------------------------------------------------- detect

fn detect(store: &Store, a: &EvalArgs) -> Result<Document> {
    let ov = overrides(a.threshold, &a.exclude_ports);
    let mut summary = Table::new("Scanner detection")
        .column("network")
        .column("date")
        .column("threshold")
        .column("flows")
        .column("receive_only_hosts")
        .column("scanners");
    let mut all = Vec::new();
    for net in networks(store, &a.network)? {
        let cfg = store.network(&net, &ov)?;
        for date in dates(&a.dates)? {
            let day = store.day(&cfg, date)?;
            let verdicts = detect_scanners(&day, &cfg);
            summary.push(vec![
                text(&net),
                text(date),
                text(cfg.scanner_threshold()),
                text(day.flows().len()),
                text(day.receive_only_hosts().len()),
                text(verdicts.len()),
            ]);
            all.extend(verdicts);
        }
    }
    let mut doc = Document::default();
    doc.add("detect_summary", summary);
    doc.add("scanners", report::scanner_table(&all));
    Ok(doc)
}

// ---------------------------------------------------------------- match

fn match_cmd(store: &Store, a: &EvalArgs) -> Result<Document> {
    let ov = overrides(a.threshold, &a.exclude_ports);
    let kind = GroundTruthKind::from(a.kind);
    let unions = unions(&a.union);
    let mut reports = Vec::new();
    for net in networks(store, &a.network)? {
        let cfg = store.network(&net, &ov)?;
        for date in dates(&a.dates)? {
            let truth = store.truth(&cfg, date, kind)?;
            let feeds = require_feeds(store.feeds_on(date, &a.feeds)?, date, store)?;
            let refs: Vec<&BlacklistSnapshot> = feeds.iter().collect();
            reports.push(match_rate(&truth, &refs, &unions)?);
        }
    }
    let mut doc = Document::default();
    doc.add("match", report::match_table(&format!("Match rate ({kind})"), &reports));
    doc.add(
        "match_summary",
        report::match_summary_table(&format!("Match rate over days ({kind})"), &summarize_match_rates(&reports)),
    );
    Ok(doc)
}

// ---------------------------------------------------------------- intersect

fn intersect(store: &Store, a: &EvalArgs) -> Result<Document> {
    let mut doc = Document::default();
    for date in dates(&a.dates)? {
        let feeds = require_feeds(store.feeds_on(date, &a.feeds)?, date, store)?;
        let refs: Vec<&BlacklistSnapshot> = feeds.iter().collect();
        let m = intersection_matrix(&refs)?;
        doc.add(format!("intersection_{date}"), report::intersection_table(date, &m));
    }
    Ok(doc)
}

// ---------------------------------------------------------------- decay

fn decay_cmd(store: &Store, a: &EvalArgs) -> Result<Document> {
    let ov = overrides(a.threshold, &a.exclude_ports);
    let kind = GroundTruthKind::from(a.kind);
    let days = dates(&a.dates)?;
    let base_date = days[0];
    let feed_names = if a.feeds.is_empty() {
        store
            .feed_store()
            .feeds()?
            .into_iter()
            .filter(|f| store.feed_store().exists(f, base_date))
            .collect()
    } else {
        a.feeds.clone()
    };
    if feed_names.is_empty() {
        bail!("no blacklist snapshots for the base day {base_date}");
    }
    let mut doc = Document::default();
    for net in networks(store, &a.network)? {
        let cfg = store.network(&net, &ov)?;
        let mut truth = BTreeMap::new();
        for &d in &days {
            truth.insert(d, store.truth(&cfg, d, kind)?.ips);
        }
        for feed in &feed_names {
            let base = store.feeds_on(base_date, std::slice::from_ref(feed))?.remove(0);
            let mut fresh = BTreeMap::new();
            for &d in &days {
                if store.feed_store().exists(feed, d) {
                    fresh.insert(d, store.feed_store().load(feed, d)?);
                } else {
                    log::warn!("feed `{feed}` has no snapshot for {d}; that day is reported as unavailable");
                }
            }
            let r = decay(&base, &fresh, &truth)?;
            doc.add(format!("decay_{net}_{feed}"), report::decay_table(&net, &r));
        }
    }
    Ok(doc)
}

// ---------------------------------------------------------------- propagate

type DailySets = BTreeMap<NaiveDate, BTreeSet<IpAddress>>;

fn scanner_sets(store: &Store, cfg: &Arc<NetworkConfig>, days: &[NaiveDate]) -> Result<DailySets> {
    let mut out = BTreeMap::new();
    for &d in days {
        out.insert(d, store.truth(cfg, d, GroundTruthKind::Scanner)?.ips);
    }
    Ok(out)
}

fn propagate(store: &Store, a: &PropagateArgs) -> Result<Document> {
    let ov = overrides(a.threshold, &a.exclude_ports);
    let days = dates(&DateArgs {
        date: None,
        from: Some(a.from),
        to: Some(a.to),
    })?;
    let sources = networks(store, &a.network)?;
    let all = store.networks()?;
    let mut sets: BTreeMap<String, DailySets> = BTreeMap::new();
    let mut curves = Vec::new();
    for src in &sources {
        let targets: Vec<String> = if a.target.is_empty() {
            all.iter().filter(|n| *n != src).cloned().collect()
        } else {
            a.target.clone()
        };
        for name in std::iter::once(src).chain(&targets) {
            if !sets.contains_key(name) {
                let cfg = store.network(name, &ov)?;
                sets.insert(name.clone(), scanner_sets(store, &cfg, &days)?);
            }
        }
        let seed: DailySets = [(a.from, sets[src][&a.from].clone())].into_iter().collect();
        for tgt in &targets {
            let horizon = (days.len() - 1) as u32;
            curves.push(propagation(src, &seed, tgt, &sets[tgt], horizon)?);
        }
    }
    if curves.is_empty() {
        bail!("propagation needs at least two networks");
    }
    let mut doc = Document::default();
    doc.add("propagation", report::propagation_table(&curves));
    Ok(doc)
}

// ---------------------------------------------------------------- fp-check

fn fp_check(store: &Store, a: &FpArgs) -> Result<Document> {
    let mut reports = Vec::new();
    for net in networks(store, &a.network)? {
        let cfg = store.network(&net, &Overrides::default())?;
        for date in dates(&a.dates)? {
            let day = store.day(&cfg, date)?;
            let feeds = require_feeds(store.feeds_on(date, &a.feeds)?, date, store)?;
            let refs: Vec<&BlacklistSnapshot> = feeds.iter().collect();
            reports.push(false_positive_overlap(&day, &refs, a.benign_max));
        }
    }
    let mut doc = Document::default();
    doc.add("false_positives", report::false_positive_table(&reports));
    Ok(doc)
}

// ---------------------------------------------------------------- cloud

fn read_ip_list(path: &Path) -> Result<Vec<IpAddress>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ips = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ip: IpAddress = line
            .parse()
            .map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        ips.insert(ip);
    }
    Ok(ips.into_iter().collect())
}

fn cloud(store: &Store, a: &CloudArgs) -> Result<Document> {
    let ips = read_ip_list(&a.ips)?;
    let transport = Arc::new(UreqTransport::new(Duration::from_secs(a.timeout)));
    let clock = Arc::new(SystemClock);
    let mut clients = Vec::new();
    for p in &a.provider {
        let cfg = CloudProviderConfig::load(p)?;
        let client = CloudClient::open(cfg, &store.cloud_dir(), transport.clone(), clock.clone())?
            .with_max_age(a.max_age.map(chrono::Duration::hours));
        clients.push(client);
    }
    let outcomes = batch_lookup_all(&mut clients, &ips);

    let mut summary = Table::new("Cloud reputation lookups")
        .column("provider")
        .column("addresses")
        .column("spent")
        .column("cached")
        .column("unserved")
        .column("remaining_budget")
        .rate_column("listed")
        .rate_column("consensus");
    let mut verdicts = Table::new("Cloud verdicts")
        .column("ip")
        .column("provider")
        .column("listed")
        .column("consensus")
        .column("signal");
    for (client, o) in clients.iter().zip(&outcomes) {
        if o.spent + o.cached + o.unserved != ips.len() {
            return Err(anyhow!(Internal(format!(
                "provider {}: spent {} + cached {} + unserved {} != {} addresses",
                o.provider_name,
                o.spent,
                o.cached,
                o.unserved,
                ips.len()
            ))));
        }
        for (ip, e) in &o.errors {
            eprintln!("{}: {ip}: {e}", o.provider_name);
        }
        if o.budget_exhausted {
            eprintln!(
                "{}: budget exhausted for the window starting {}; {} addresses not queried",
                o.provider_name,
                client.window_start(),
                o.unserved
            );
        }
        let n = o.verdicts.len() as u64;
        summary.push(vec![
            text(&o.provider_name),
            text(ips.len()),
            text(o.spent),
            text(o.cached),
            text(o.unserved),
            text(client.remaining_budget()),
            Ratio::new(o.verdicts.iter().filter(|v| v.listed).count() as u64, n).into(),
            Ratio::new(o.verdicts.iter().filter(|v| v.consensus).count() as u64, n).into(),
        ]);
        let mut sorted: Vec<_> = o.verdicts.iter().collect();
        sorted.sort_by_key(|v| v.ip);
        for v in sorted {
            verdicts.push(vec![
                text(v.ip),
                text(&v.provider_name),
                text(v.listed),
                text(v.consensus),
                text(v.raw_signal.as_ref().map(|s| s.to_string()).unwrap_or_else(|| "-".into())),
            ]);
        }
    }
    let mut doc = Document::default();
    doc.add("cloud_summary", summary);
    doc.add("cloud_verdicts", verdicts);
    Ok(doc)
}

// ---------------------------------------------------------------- report

struct DayData {
    day: DailyFlowSet,
    scanners: Vec<ScannerVerdict>,
    attacks: Option<Vec<AttackEvent>>,
}

fn report_cmd(store: &Store, a: &EvalArgs) -> Result<Document> {
    let ov = overrides(a.threshold, &a.exclude_ports);
    let days = dates(&a.dates)?;
    let nets = networks(store, &a.network)?;
    let feed_names = if a.feeds.is_empty() { store.feed_store().feeds()? } else { a.feeds.clone() };
    let unions = unions(&a.union);
    let mut doc = Document::default();

    // feeds on their own
    let mut stats: Vec<(String, NaiveDate, FeedStats)> = Vec::new();
    for f in &feed_names {
        for &d in &days {
            if store.feed_store().exists(f, d) {
                stats.push((f.clone(), d, store.feed_store().load_stats(f, d)?));
            }
        }
    }
    doc.add("feed_stats", report::feed_stats_table(&stats));
    doc.add("churn", report::churn_summary_table(&stats));
    let mut feeds_by_day: BTreeMap<NaiveDate, Vec<BlacklistSnapshot>> = BTreeMap::new();
    for &d in &days {
        let feeds: Vec<BlacklistSnapshot> = feed_names
            .iter()
            .filter(|f| store.feed_store().exists(f, d))
            .map(|f| store.feed_store().load(f, d))
            .collect::<Result<_, _>>()?;
        if !feeds.is_empty() {
            let refs: Vec<&BlacklistSnapshot> = feeds.iter().collect();
            doc.add(format!("intersection_{d}"), report::intersection_table(d, &intersection_matrix(&refs)?));
        }
        feeds_by_day.insert(d, feeds);
    }

    // per network-day inputs
    let mut data: BTreeMap<(String, NaiveDate), DayData> = BTreeMap::new();
    for net in &nets {
        let cfg = store.network(net, &ov)?;
        for &d in &days {
            let day = store.day(&cfg, d)?;
            let scanners = detect_scanners(&day, &cfg);
            let attacks = if store.logs_path(net, d).is_file() {
                Some(store.attack_events(&cfg, d)?)
            } else {
                log::warn!("no server log for {net} on {d}; log-attacker metrics skip that day");
                None
            };
            data.insert((net.clone(), d), DayData { day, scanners, attacks });
        }
    }
    let set_of = |dd: &DayData, kind: GroundTruthKind| -> Option<BTreeSet<IpAddress>> {
        match kind {
            GroundTruthKind::Scanner => Some(dd.scanners.iter().map(|v| v.remote_ip).collect()),
            GroundTruthKind::LogAttacker => dd.attacks.as_ref().map(|e| e.iter().map(|e| e.remote_ip).collect()),
            GroundTruthKind::AlertedHighScore => Some(blacklist_eval::evaluator::high_score_hosts(
                &dd.day,
                blacklist_eval::evaluator::DEFAULT_HIGH_SCORE_MIN,
            )),
        }
    };

    // match rates
    for kind in [GroundTruthKind::Scanner, GroundTruthKind::LogAttacker, GroundTruthKind::AlertedHighScore] {
        let mut reports: Vec<MatchRateReport> = Vec::new();
        for ((net, d), dd) in &data {
            let feeds = &feeds_by_day[d];
            let Some(ips) = set_of(dd, kind) else { continue };
            if feeds.is_empty() {
                continue;
            }
            let truth = GroundTruth {
                date: *d,
                network_name: net.clone(),
                kind,
                ips,
            };
            let refs: Vec<&BlacklistSnapshot> = feeds.iter().collect();
            reports.push(match_rate(&truth, &refs, &unions)?);
        }
        doc.add(format!("match_{kind}"), report::match_table(&format!("Match rate ({kind})"), &reports));
        doc.add(
            format!("match_summary_{kind}"),
            report::match_summary_table(&format!("Match rate over days ({kind})"), &summarize_match_rates(&reports)),
        );
    }

    // decay against the first day's snapshot
    let base = days[0];
    for net in &nets {
        let truth: DailySets = days
            .iter()
            .map(|d| (*d, set_of(&data[&(net.clone(), *d)], GroundTruthKind::Scanner).unwrap_or_default()))
            .collect();
        for base_feed in &feeds_by_day[&base] {
            let fresh: BTreeMap<NaiveDate, BlacklistSnapshot> = days
                .iter()
                .filter_map(|d| {
                    feeds_by_day[d]
                        .iter()
                        .find(|f| f.feed_name() == base_feed.feed_name())
                        .map(|f| (*d, f.clone()))
                })
                .collect();
            let r = decay(base_feed, &fresh, &truth)?;
            doc.add(format!("decay_{net}_{}", base_feed.feed_name()), report::decay_table(net, &r));
        }
    }

    // propagation between every ordered pair
    if nets.len() > 1 {
        let mut curves = Vec::new();
        for src in &nets {
            let seed: DailySets = [(base, set_of(&data[&(src.clone(), base)], GroundTruthKind::Scanner).unwrap_or_default())]
                .into_iter()
                .collect();
            for tgt in nets.iter().filter(|t| *t != src) {
                let target: DailySets = days
                    .iter()
                    .map(|d| (*d, set_of(&data[&(tgt.clone(), *d)], GroundTruthKind::Scanner).unwrap_or_default()))
                    .collect();
                curves.push(propagation(src, &seed, tgt, &target, (days.len() - 1) as u32)?);
            }
        }
        doc.add("propagation", report::propagation_table(&curves));
    }

    // false positives
    let mut fp = Vec::new();
    for ((_, d), dd) in &data {
        let refs: Vec<&BlacklistSnapshot> = feeds_by_day[d].iter().collect();
        fp.push(false_positive_overlap(&dd.day, &refs, DEFAULT_BENIGN_SCORE_MAX));
    }
    doc.add("false_positives", report::false_positive_table(&fp));

    // address aggregation over the whole range
    let mut agg = Vec::new();
    for net in &nets {
        for kind in [GroundTruthKind::Scanner, GroundTruthKind::LogAttacker] {
            let all: BTreeSet<IpAddress> = days
                .iter()
                .filter_map(|d| set_of(&data[&(net.clone(), *d)], kind))
                .flatten()
                .collect();
            agg.push((format!("{net} {kind}"), aggregate_slash24(&all, &DEFAULT_AGGREGATION_BOUNDS)?));
        }
    }
    doc.add("aggregation", report::aggregation_table(&agg));

    // server monitoring
    let mut servers = Vec::new();
    for ((net, d), dd) in &data {
        let Some(attackers) = set_of(dd, GroundTruthKind::LogAttacker) else { continue };
        let others: BTreeMap<String, BTreeSet<IpAddress>> = nets
            .iter()
            .filter(|o| *o != net)
            .map(|o| (o.clone(), data[&(o.clone(), *d)].day.remote_ips()))
            .collect();
        let refs: Vec<&BlacklistSnapshot> = feeds_by_day[d].iter().collect();
        servers.push(server_summary(net, *d, &attackers, &refs, &others));
    }
    doc.add("servers", report::server_summary_table(&servers));

    let scanners: Vec<ScannerVerdict> = data.values().flat_map(|dd| dd.scanners.iter().cloned()).collect();
    doc.add("scanners", report::scanner_table(&scanners));
    for net in &nets {
        let events: Vec<AttackEvent> = days
            .iter()
            .filter_map(|d| data[&(net.clone(), *d)].attacks.clone())
            .flatten()
            .collect();
        doc.add(format!("attacks_{net}"), report::attack_event_table(net, &events));
    }
    Ok(doc)
}

// ---------------------------------------------------------------- simgen

fn simgen(cli: &Cli, a: &SimgenArgs) -> Result<()> {
    let out = cli
        .out
        .as_ref()
        .ok_or_else(|| anyhow!("simgen needs --out <dir>"))?;
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let fixture = generate(&scenario)?;
    fixture.write_to(out)?;
    let m = &fixture.manifest;
    println!(
        "simgen: seed {}, {} days from {}, {} files written to {}",
        m.seed,
        m.days,
        m.start_date,
        fixture.files().len(),
        out.display()
    );
    for n in &m.networks {
        let scanners: usize = n.days.iter().map(|d| d.scanners.len()).sum();
        let attackers: usize = n.days.iter().map(|d| d.log_attackers.len()).sum();
        println!(
            "  {}: {scanners} scanner-days, {attackers} log-attacker-days (threshold {})",
            n.name, n.scanner_threshold
        );
    }
    Ok(())
}
