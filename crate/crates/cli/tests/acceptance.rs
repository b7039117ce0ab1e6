//! One PASS/FAIL line per acceptance criterion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::time::Instant;

use blacklist_eval::blacklist_store::{churn, BlacklistSnapshot};
use blacklist_eval::cloud_reputation::mock::MockProvider;
use blacklist_eval::cloud_reputation::{batch_lookup_all, CloudClient, CloudProviderConfig, ManualClock, UreqTransport};
use blacklist_eval::evaluator::{match_rate, GroundTruth, GroundTruthKind, UnionSpec};
use blacklist_eval::flow_pipeline::{day_window, DailyFlowSet, FlowRecord, NetworkConfig, Proto};
use blacklist_eval::log_sentinel::{LogSentinel, Tally};
use blacklist_eval::prefix_index::{IpAddress, IpPrefix, PrefixIndex};
use blacklist_eval::ratio::Ratio;
use blacklist_eval::scan_detect::detect_scanners;
use blacklist_eval::simgen::Manifest;
use chrono::{NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn date(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, d).unwrap()
}

fn fixture_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three_networks.toml")
}

fn bleval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bleval")).args(args).output().expect("spawn bleval")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let out = bleval(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("`bleval {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

/// Rows of a report CSV keyed by header name.
fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    Ok(lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

fn ratio(row: &BTreeMap<String, String>, col: &str) -> Ratio {
    let n = row[&format!("{col}_num")].parse().unwrap();
    let d = row[&format!("{col}_den")].parse().unwrap();
    Ratio::new(n, d)
}

/// Generates the fixture and ingests it into a fresh store.
struct Run {
    fixture: PathBuf,
    store: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn build(root: &Path, scenario: &Path) -> Result<Self, String> {
        let fixture = root.join("fixture");
        let store = root.join("store");
        run_ok(&["simgen", scenario.to_str().unwrap(), "--out", fixture.to_str().unwrap()])?;
        run_ok(&["ingest", "--store", store.to_str().unwrap(), "tree", fixture.to_str().unwrap()])?;
        let manifest = Manifest::load(&fixture.join("manifest.json")).map_err(|e| e.to_string())?;
        Ok(Run { fixture, store, manifest })
    }

    fn range(&self) -> (String, String) {
        let start = self.manifest.start_date;
        let end = start + chrono::Duration::days(i64::from(self.manifest.days) - 1);
        (start.to_string(), end.to_string())
    }

    fn eval(&self, cmd: &str, out: &Path, extra: &[&str]) -> Result<(), String> {
        let (from, to) = self.range();
        let mut args = vec![cmd, "--store", self.store.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend(["--from", &from, "--to", &to]);
        args.extend(extra);
        run_ok(&args).map(|_| ())
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let list: Vec<IpPrefix> = (0..1000)
        .map(|i| {
            if i % 2 == 0 {
                IpPrefix::truncating(IpAddress::v4(rng.random::<u32>() >> 3), rng.random_range(12..=32)).unwrap()
            } else {
                let bits = (0x2001_0db8u128 << 96) | (rng.random::<u128>() >> 40);
                IpPrefix::truncating(IpAddress::v6(bits), rng.random_range(32..=128)).unwrap()
            }
        })
        .collect();
    let probes: Vec<IpAddress> = (0..10_000)
        .map(|i| {
            if i % 2 == 0 {
                IpAddress::v4(rng.random::<u32>() >> 3)
            } else {
                IpAddress::v6((0x2001_0db8u128 << 96) | (rng.random::<u128>() >> 40))
            }
        })
        .collect();
    let started = Instant::now();
    let index: PrefixIndex = list.iter().copied().collect();
    let got = index.contains_batch(&probes);
    let mut hits = 0;
    for (a, g) in probes.iter().zip(&got) {
        let want = list.iter().any(|p| p.contains(*a));
        ensure!(*g == want, "contains({a}) = {g}, linear scan says {want}");
        let longest = list.iter().filter(|p| p.contains(*a)).max_by_key(|p| p.len()).copied();
        ensure!(index.longest_match(*a) == longest, "longest_match({a}) disagrees");
        hits += usize::from(want);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(format!("10000 lookups agree with linear scan ({hits} hits, {secs:.2}s)"))
}

fn addresses(list: &[IpPrefix]) -> HashSet<u32> {
    let mut out = HashSet::new();
    for p in list {
        let base = p.network().bits() as u32;
        out.extend((0..(1u32 << p.host_bits())).map(|i| base + i));
    }
    out
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut gen = |n: usize| -> Vec<IpPrefix> {
        (0..n)
            .map(|_| {
                let off: u32 = rng.random_range(0..65536);
                IpPrefix::truncating(IpAddress::v4(0x0a00_0000 | off), rng.random_range(16..=32)).unwrap()
            })
            .collect()
    };
    for trial in 0..200 {
        let (a, b) = (gen(1 + trial % 30), gen(1 + trial % 17));
        let (ia, ib): (PrefixIndex, PrefixIndex) = (a.iter().copied().collect(), b.iter().copied().collect());
        let b_addrs = addresses(&b);
        let want = ia.entries().iter().filter(|p| addresses(&[**p]).is_subset(&b_addrs)).count();
        ensure!(ia.containment_count(&ib) == want, "trial {trial}: containment {} vs oracle {want}", ia.containment_count(&ib));
    }
    let x: PrefixIndex = ["198.51.100.7/32".parse::<IpPrefix>().unwrap()].into_iter().collect();
    let y: PrefixIndex = ["198.51.100.0/24".parse::<IpPrefix>().unwrap()].into_iter().collect();
    let pair = (x.containment_count(&y), y.containment_count(&x));
    ensure!(pair == (1, 0), "asymmetry case gave {pair:?}");
    Ok("200 random pairs match the address-set oracle, {x/32} vs {x/24} = (1,0)".into())
}

fn flow(client: IpAddress, server: IpAddress, port: u16, proto: Proto) -> FlowRecord {
    FlowRecord {
        timestamp: day_window(date(13)).0 + 60,
        proto,
        client_ip: client,
        server_ip: server,
        client_port: 40000,
        server_port: port,
        c2s_pkts: 1,
        s2c_pkts: 0,
        c2s_bytes: 60,
        s2c_bytes: 0,
        cyberscore: 150,
    }
}

fn criterion_3() -> Outcome {
    let cfg = Arc::new(NetworkConfig::new("n", vec!["10.0.0.0/16".parse().unwrap()]).unwrap());
    let remote = |i: u32| IpAddress::v4(0x2d00_0000 + i);
    let sweep = |r: IpAddress, n: u32, port: u16, proto: Proto| -> Vec<FlowRecord> {
        (0..n).map(|h| flow(r, IpAddress::v4(0x0a00_1000 + h), port, proto)).collect()
    };
    let mut flows = Vec::new();
    for n in [127, 128, 500] {
        flows.extend(sweep(remote(n), n, 22, Proto::Tcp));
    }
    flows.extend(sweep(remote(1), 600, 53, Proto::Udp));
    flows.extend(sweep(remote(2), 600, 443, Proto::Tcp));
    let day = DailyFlowSet::from_records(flows, cfg.clone(), date(13));
    let got: BTreeSet<IpAddress> = detect_scanners(&day, &cfg).into_iter().map(|v| v.remote_ip).collect();
    let want: BTreeSet<IpAddress> = [remote(128), remote(500)].into();
    ensure!(got == want, "flagged {got:?}, expected {want:?}");
    Ok("fan-outs 127/128/500 flag 128 and 500; UDP and 443 sweeps unflagged".into())
}

fn criterion_4(run: &Run, out: &Path) -> Outcome {
    let m = &run.manifest;
    run.eval("match", &out.join("match"), &[])?;
    run.eval("decay", &out.join("decay"), &["--network", "campus"])?;
    run.eval("propagate", &out.join("propagate"), &[])?;

    let mut percents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let rows = read_csv(&out.join("match/match.csv"))?;
    ensure!(!rows.is_empty(), "match.csv is empty");
    for row in rows.iter().filter(|r| r["truth"] == "scanner" && r["union"] == "no") {
        let d: NaiveDate = row["date"].parse().unwrap();
        let got = ratio(row, "match");
        let want = m.expected_rate(&row["network"], d, GroundTruthKind::Scanner, &row["feed"]);
        ensure!(want == Some(got), "match {} {} {}: {got} vs manifest {want:?}", row["network"], d, row["feed"]);
        if row["network"] == "campus" {
            percents.entry(row["feed"].clone()).or_default().insert(got.percent());
        }
    }
    for (feed, p) in [("half", "50.0%"), ("fifteen", "15.0%"), ("zero", "0.0%")] {
        let seen = percents.get(feed).cloned().unwrap_or_default();
        ensure!(seen == BTreeSet::from([p.to_string()]), "{feed} reported {seen:?}, expected only {p}");
    }

    for exp in m.expected_decay.iter().filter(|e| e.network == "campus" && e.kind == GroundTruthKind::Scanner) {
        let rows = read_csv(&out.join(format!("decay/decay_campus_{}.csv", exp.feed)))?;
        ensure!(rows.len() == exp.rows.len(), "decay {}: {} rows vs {}", exp.feed, rows.len(), exp.rows.len());
        for (row, want) in rows.iter().zip(&exp.rows) {
            let delta: i64 = row["delta_matched"].parse().unwrap();
            ensure!(
                delta == want.delta_matched && ratio(row, "stale") == want.stale,
                "decay {} offset {}: delta {delta} vs {}",
                exp.feed,
                want.offset,
                want.delta_matched
            );
        }
        ensure!(rows[0]["delta_matched"] == "0", "decay {} offset 0 delta is {}", exp.feed, rows[0]["delta_matched"]);
    }

    let prop = read_csv(&out.join("propagate/propagation.csv"))?;
    for exp in &m.expected_propagation {
        for (k, want) in exp.points.iter().enumerate() {
            let row = prop
                .iter()
                .find(|r| r["source"] == exp.source && r["target"] == exp.target && r["day"] == k.to_string())
                .ok_or(format!("no propagation row {}->{} day {k}", exp.source, exp.target))?;
            ensure!(ratio(row, "seen") == *want, "propagation {}->{} day {k}", exp.source, exp.target);
        }
    }
    let day1 = prop
        .iter()
        .find(|r| r["source"] == "office" && r["target"] == "hosting" && r["day"] == "1")
        .ok_or("no office->hosting day 1 row")?;
    ensure!(ratio(day1, "seen") == Ratio::new(2, 3), "office->hosting day 1 is {}", ratio(day1, "seen"));
    Ok("match 50.0/15.0/0.0%, decay deltas match the manifest, office->hosting day 1 = 2/3".into())
}

fn fp_counts(run: &Run, out: &Path) -> Result<BTreeMap<(String, String, String), u64>, String> {
    run.eval("fp-check", out, &[])?;
    let rows = read_csv(&out.join("false_positives.csv"))?;
    let mut counts = BTreeMap::new();
    for row in &rows {
        let key = (row["network"].clone(), row["date"].clone(), row["feed"].clone());
        counts.insert(key, ratio(row, "listed").numerator);
    }
    for exp in &run.manifest.expected_false_positives {
        let got = counts.get(&(exp.network.clone(), exp.date.to_string(), exp.feed.clone()));
        ensure!(got == Some(&exp.listed.numerator), "fp {} {} {}: {got:?} vs manifest {}", exp.network, exp.date, exp.feed, exp.listed);
    }
    Ok(counts)
}

fn criterion_5(run: &Run, out: &Path, root: &Path) -> Outcome {
    let clean = fp_counts(run, &out.join("fp"))?;
    ensure!(!clean.is_empty(), "fp-check produced no rows");
    ensure!(clean.values().all(|&c| c == 0), "nonzero overlap: {clean:?}");

    let text = std::fs::read_to_string(fixture_scenario()).unwrap();
    let planted = text.replacen("name = \"fifteen\"\n", "name = \"fifteen\"\nbenign_planted = 1\n", 1);
    ensure!(planted != text, "could not edit scenario");
    let scenario = root.join("planted.toml");
    std::fs::write(&scenario, planted).unwrap();
    let variant = Run::build(&root.join("planted"), &scenario)?;
    let counts = fp_counts(&variant, &out.join("fp_planted"))?;
    ensure!(counts.len() == clean.len(), "row sets differ");
    for ((net, day, feed), c) in &counts {
        let want = u64::from(net == "campus" && feed == "fifteen");
        ensure!(*c == want, "{net} {day} {feed}: {c}, expected {want}");
    }
    Ok(format!("{} overlap counts are 0; planting flips only campus/fifteen to 1", clean.len()))
}

fn criterion_6(run: &Run) -> Outcome {
    let fail = |ip: &str, n: usize| -> Vec<String> {
        (0..n)
            .map(|i| format!("Mar 13 0{i}:00:00 srv sshd[100]: Failed password for root from {ip} port 4000{i} ssh2"))
            .collect()
    };
    let whitelist: PrefixIndex = ["203.0.113.0/24".parse::<IpPrefix>().unwrap()].into_iter().collect();
    let sentinel = LogSentinel::with_defaults(whitelist);
    let flagged = |lines: Vec<String>| -> Vec<String> {
        sentinel.scan_logs(lines.iter().map(String::as_str), date(13)).into_iter().map(|e| e.remote_ip.to_string()).collect()
    };
    ensure!(flagged(fail("45.0.0.2", 2)).is_empty(), "2 failures raised an event");
    ensure!(flagged(fail("45.0.0.3", 3)) == ["45.0.0.3"], "3 failures raised no event");
    ensure!(flagged(fail("203.0.113.9", 10)).is_empty(), "whitelisted address raised an event");

    let mut compared = 0;
    for entry in std::fs::read_dir(run.fixture.join("logs/campus")).unwrap() {
        let path = entry.unwrap().path();
        let d: NaiveDate = path.file_stem().unwrap().to_str().unwrap().parse().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let campus = NetworkConfig::from_toml(&std::fs::read_to_string(run.fixture.join("networks/campus.toml")).unwrap())
            .map_err(|e| e.to_string())?;
        let s = LogSentinel::with_defaults(campus.whitelist_index().clone());
        let whole = s.events(s.tally(lines.iter().copied()), d);
        let merged = lines.chunks(lines.len().div_ceil(7).max(1)).map(|c| s.tally(c.iter().copied())).fold(Tally::default(), Tally::merge);
        ensure!(s.events(merged, d) == whole, "chunked events differ on {d}");
        compared += whole.len();
    }
    Ok(format!("thresholds and whitelist hold; chunked campus logs give the same {compared} events"))
}

fn criterion_7() -> Outcome {
    let hosts = |r: std::ops::Range<u32>| -> BlacklistSnapshot {
        let d = if r.start == 0 { date(13) } else { date(14) };
        BlacklistSnapshot::from_prefixes("f", d, r.map(|i| IpPrefix::host(IpAddress::v4(0xc000_0200 + i))).collect::<Vec<_>>()).unwrap()
    };
    let base = hosts(0..20);
    let same = BlacklistSnapshot::from_prefixes("f", date(14), base.entries().to_vec()).unwrap();
    let results = [
        churn(&base, &same).unwrap().percent(),
        churn(&base, &hosts(20..40)).unwrap().percent(),
        churn(&base, &hosts(10..30)).unwrap().percent(),
    ];
    ensure!(results == ["0.0%", "100.0%", "50.0%"], "got {results:?}");
    Ok("identical 0.0%, disjoint 100.0%, half replaced 50.0%".into())
}

fn criterion_8() -> Outcome {
    let server = MockProvider::start(|req| {
        let n: u32 = req.last_segment().rsplit('.').next().unwrap().parse().unwrap();
        let body = match req.path.split('/').nth(1).unwrap() {
            "vt" => format!(r#"{{"data":{{"malicious":{}}}}}"#, n % 8),
            "abuse" => format!(r#"{{"data":{{"abuseConfidenceScore":{}}}}}"#, 96 + n % 5),
            _ => format!(r#"{{"classification":"{}"}}"#, ["benign", "malicious", "unknown"][n as usize % 3]),
        };
        (200, body)
    })
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2023, 3, 20, 9, 0, 0).unwrap()));
    let cfg = |name: &str, signal: &str, rule: &str| {
        CloudProviderConfig::from_toml(&format!(
            "provider_name = \"{name}\"\nbase_url = \"{}\"\nsignal_field = \"{signal}\"\nbudget = {{ limit = 500, window = \"day\" }}\nconsensus_rule = {{ {rule} }}\n",
            server.url(&format!("/{name}/{{ip}}"))
        ))
        .unwrap()
    };
    let open = |c: CloudProviderConfig| CloudClient::open(c, dir.path(), Arc::new(UreqTransport::default()), clock.clone()).unwrap();
    let ips: Vec<IpAddress> = (0..600).map(|i| IpAddress::v4(0x2d00_0000 + i)).collect();

    let mut vt = vec![open(cfg("vt", "/data/malicious", "min_matches = 5"))];
    let first = batch_lookup_all(&mut vt, &ips).remove(0);
    ensure!(server.request_count() <= 500, "{} requests against a 500 budget", server.request_count());
    ensure!(first.spent == 500 && first.unserved == 100, "spent {} unserved {}", first.spent, first.unserved);
    let served: Vec<IpAddress> = first.verdicts.iter().map(|v| v.ip).collect();
    let mut again = vec![open(cfg("vt", "/data/malicious", "min_matches = 5"))];
    let warm = batch_lookup_all(&mut again, &served).remove(0);
    ensure!(warm.spent == 0 && server.request_count() == 500, "warm rerun spent {}", warm.spent);

    for v in &first.verdicts {
        let n = v.ip.to_string().rsplit('.').next().unwrap().parse::<u32>().unwrap() % 8;
        ensure!(v.consensus == (n >= 5), "vt consensus wrong for {}", v.ip);
    }
    let mut others = vec![
        open(cfg("abuse", "/data/abuseConfidenceScore", "accuracy_equals = 100")),
        open(cfg("gn", "/classification", "classification_equals = \"malicious\"")),
    ];
    let small = &ips[..30];
    let outs = batch_lookup_all(&mut others, small);
    for v in &outs[0].verdicts {
        let n = v.ip.to_string().rsplit('.').next().unwrap().parse::<u32>().unwrap();
        ensure!(v.consensus == (96 + n % 5 == 100), "abuse consensus wrong for {}", v.ip);
    }
    for v in &outs[1].verdicts {
        let n = v.ip.to_string().rsplit('.').next().unwrap().parse::<u32>().unwrap();
        ensure!(v.consensus == (n % 3 == 1), "classification consensus wrong for {}", v.ip);
    }
    Ok(format!("{} requests for 600 addresses, warm rerun spent 0, all three consensus rules hold", first.spent))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100 {
        let pick = |rng: &mut ChaCha8Rng, n: usize| -> BTreeSet<u32> { (0..n).map(|_| rng.random_range(0..80)).collect() };
        let truth = pick(&mut rng, 30);
        let n_feeds = rng.random_range(2..5);
        let feeds: Vec<BTreeSet<u32>> = (0..n_feeds).map(|_| pick(&mut rng, 40)).collect();
        let snaps: Vec<BlacklistSnapshot> = feeds
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let entries: Vec<IpPrefix> = f.iter().map(|x| IpPrefix::host(IpAddress::v4(0xc000_0200 + x))).collect();
                BlacklistSnapshot::from_prefixes(&format!("f{i}"), date(13), entries).unwrap()
            })
            .collect();
        let gt = GroundTruth {
            date: date(13),
            network_name: "n".into(),
            kind: GroundTruthKind::Scanner,
            ips: truth.iter().map(|x| IpAddress::v4(0xc000_0200 + x)).collect(),
        };
        let names: Vec<&str> = snaps.iter().map(|s| s.feed_name()).collect();
        let union = UnionSpec::parse(&names.join("+"));
        let refs: Vec<&BlacklistSnapshot> = snaps.iter().collect();
        let report = match_rate(&gt, &refs, std::slice::from_ref(&union)).map_err(|e| e.to_string())?;
        let u = report.rate(&union.name).unwrap();
        let covered = truth.iter().filter(|t| feeds.iter().any(|f| f.contains(t))).count() as u64;
        ensure!(u == Ratio::new(covered, truth.len() as u64), "case {case}: union {u} vs oracle {covered}");
        for name in &names {
            let r = report.rate(name).unwrap();
            ensure!(u.numerator >= r.numerator, "case {case}: union {u} below {name} {r}");
        }
    }
    Ok("union rate >= every member over 100 random fixtures".into())
}

fn cli_contract(run: &Run, out: &Path, root: &Path) -> Outcome {
    let store = run.store.to_str().unwrap();
    let (from, to) = run.range();
    let report = |dir: &str| -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        let target = out.join(dir);
        run_ok(&["report", "--store", store, "--from", &from, "--to", &to, "--out", target.to_str().unwrap()])?;
        let mut files = BTreeMap::new();
        for e in std::fs::read_dir(&target).unwrap() {
            let p = e.unwrap().path();
            files.insert(p.strip_prefix(&target).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
        Ok(files)
    };
    let (a, b) = (report("report_a")?, report("report_b")?);
    ensure!(a == b && !a.is_empty(), "report output differs between runs");

    let empty = root.join("empty.txt");
    std::fs::write(&empty, "# nothing\n").unwrap();
    let o = bleval(&["ingest", "--store", store, "feed", "--name", "blank", "--date", &from, empty.to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    ensure!(o.status.code() == Some(1) && stderr.contains("empty snapshot"), "empty feed: {:?} {stderr}", o.status.code());
    let o = bleval(&["match", "--store", store, "--date", "2001-01-01"]);
    ensure!(o.status.code() == Some(1), "missing date exited {:?}", o.status.code());

    let boundary: IpAddress = "45.30.0.1".parse().unwrap();
    let campus = run.manifest.network("campus").unwrap();
    ensure!(campus.days.iter().all(|d| !d.scanners.contains(&boundary)), "fan-out 127 scanner flagged");
    Ok(format!("report byte-identical ({} files), empty snapshot exits 1", a.len()))
}

#[test]
fn acceptance() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("reports");
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut record = |label: &str, outcome: Outcome| {
        let line = match &outcome {
            Ok(detail) => format!("PASS criterion {label}: {detail}\n"),
            Err(why) => format!("FAIL criterion {label}: {why}\n"),
        };
        // bypasses the harness capture so the lines show up in plain `cargo test`
        let _ = std::io::stdout().write_all(line.as_bytes());
        results.push((label.to_string(), outcome));
    };

    record("1", criterion_1());
    record("2", criterion_2());
    record("3", criterion_3());

    let started = Instant::now();
    let run = Run::build(&root.path().join("main"), &fixture_scenario());
    match run {
        Ok(run) => {
            let c4 = criterion_4(&run, &out).and_then(|detail| {
                let secs = started.elapsed().as_secs_f64();
                if secs < 60.0 {
                    Ok(format!("{detail} ({secs:.1}s)"))
                } else {
                    Err(format!("took {secs:.1}s"))
                }
            });
            record("4", c4);
            record("5", criterion_5(&run, &out, root.path()));
            record("6", criterion_6(&run));
            record("7", criterion_7());
            record("8", criterion_8());
            record("9", criterion_9());
            record("cli", cli_contract(&run, &out, root.path()));
        }
        Err(why) => {
            for label in ["4", "5", "6"] {
                record(label, Err(why.clone()));
            }
            record("7", criterion_7());
            record("8", criterion_8());
            record("9", criterion_9());
        }
    }

    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(l, _)| l.as_str()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
