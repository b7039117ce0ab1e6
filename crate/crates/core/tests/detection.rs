use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use blacklist_eval::blacklist_store::BlacklistSnapshot;
use blacklist_eval::evaluator::{
    aggregate_slash24, benign_remote_clients, decay, false_positive_overlap, propagation,
};
use blacklist_eval::flow_pipeline::{day_window, DailyFlowSet, FlowRecord, NetworkConfig, Proto};
use blacklist_eval::log_sentinel::{LogSentinel, Tally};
use blacklist_eval::prefix_index::{IpAddress, IpPrefix, PrefixIndex};
use blacklist_eval::ratio::Ratio;
use blacklist_eval::scan_detect::detect_scanners;
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, 13).unwrap()
}

fn cfg() -> Arc<NetworkConfig> {
    Arc::new(
        NetworkConfig::new("uni", vec!["10.0.0.0/16".parse().unwrap()])
            .unwrap()
            .with_admin_whitelist(vec!["203.0.113.0/24".parse().unwrap()]),
    )
}

fn flow(client: IpAddress, server: IpAddress, port: u16, proto: Proto, s2c: u64, score: u64) -> FlowRecord {
    FlowRecord {
        timestamp: day_window(date()).0 + 60,
        proto,
        client_ip: client,
        server_ip: server,
        client_port: 40000,
        server_port: port,
        c2s_pkts: 1,
        s2c_pkts: s2c,
        c2s_bytes: 60,
        s2c_bytes: s2c * 60,
        cyberscore: score,
    }
}

fn local(i: u32) -> IpAddress {
    IpAddress::v4(0x0a00_0000 + i)
}

fn remote(i: u32) -> IpAddress {
    IpAddress::v4(0x2d00_0000 + i)
}

/// Remote `r` contacts `fan_out` silent hosts.
fn sweep(r: IpAddress, fan_out: u32, port: u16, proto: Proto) -> Vec<FlowRecord> {
    (0..fan_out).map(|h| flow(r, local(1000 + h), port, proto, 0, 150)).collect()
}

#[test]
fn scanner_threshold_boundary() {
    let mut flows = Vec::new();
    flows.extend(sweep(remote(127), 127, 22, Proto::Tcp));
    flows.extend(sweep(remote(128), 128, 22, Proto::Tcp));
    flows.extend(sweep(remote(500), 500, 23, Proto::Tcp));
    flows.extend(sweep(remote(1), 600, 53, Proto::Udp));
    flows.extend(sweep(remote(2), 600, 443, Proto::Tcp));
    flows.extend(sweep(remote(3), 600, 80, Proto::Tcp));
    flows.extend(sweep("203.0.113.5".parse().unwrap(), 600, 22, Proto::Tcp));
    let day = DailyFlowSet::from_records(flows, cfg(), date());
    let flagged: BTreeSet<IpAddress> = detect_scanners(&day, &cfg()).into_iter().map(|v| v.remote_ip).collect();
    assert_eq!(flagged, [remote(128), remote(500)].into_iter().collect());
}

#[test]
fn answered_hosts_do_not_count() {
    let r = remote(9);
    let mut flows = sweep(r, 200, 22, Proto::Tcp);
    // 100 of the 200 hosts answer someone during the day
    flows.extend((0..100).map(|h| flow(remote(50), local(1000 + h), 8080, Proto::Tcp, 3, 0)));
    let day = DailyFlowSet::from_records(flows, cfg(), date());
    assert!(detect_scanners(&day, &cfg()).is_empty());
    let low = NetworkConfig::clone(&cfg()).with_threshold(100).unwrap();
    let v = detect_scanners(&day, &low);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].distinct_receive_only_contacted, 100);
}

fn mixed_day(seed: u64) -> Vec<FlowRecord> {
    let mut flows = Vec::new();
    for r in 0..6u32 {
        flows.extend(sweep(remote(r), 60 + r * 30, 22, Proto::Tcp));
    }
    for c in 0..20u32 {
        flows.push(flow(IpAddress::v4(0xc612_0000 + c), local(1 + c % 5), 443, Proto::Tcp, 5, (c * 5) as u64));
    }
    flows.push(flow(IpAddress::v4(0xc612_0000), local(2), 443, Proto::Tcp, 5, 180));
    flows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    flows
}

proptest! {
    #[test]
    fn detection_ignores_flow_order_and_threshold_is_monotone(seed: u64, t1 in 1usize..250, t2 in 1usize..250) {
        let a = DailyFlowSet::from_records(mixed_day(seed), cfg(), date());
        let b = DailyFlowSet::from_records(mixed_day(seed.wrapping_add(1)), cfg(), date());
        prop_assert_eq!(detect_scanners(&a, &cfg()), detect_scanners(&b, &cfg()));
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let at = |t| -> BTreeSet<IpAddress> {
            let c = NetworkConfig::clone(&cfg()).with_threshold(t).unwrap();
            detect_scanners(&a, &c).into_iter().map(|v| v.remote_ip).collect()
        };
        prop_assert!(at(hi).is_subset(&at(lo)));
    }

    #[test]
    fn false_positive_counts_ignore_order(seed: u64) {
        let a = DailyFlowSet::from_records(mixed_day(seed), cfg(), date());
        let b = DailyFlowSet::from_records(mixed_day(seed ^ 0x55), cfg(), date());
        let benign = benign_remote_clients(&a, 100);
        // client 0 has one flow over 100, so it is not benign
        prop_assert!(!benign.contains(&IpAddress::v4(0xc612_0000)));
        prop_assert_eq!(benign.len(), 19);
        let f1 = BlacklistSnapshot::from_prefixes("f1", date(), ["198.18.0.0/28".parse::<IpPrefix>().unwrap()]).unwrap();
        let f2 = BlacklistSnapshot::from_prefixes("f2", date(), [IpPrefix::host(remote(0))]).unwrap();
        let ra = false_positive_overlap(&a, &[&f1, &f2], 100);
        let mut rb = false_positive_overlap(&b, &[&f2, &f1], 100);
        rb.rows.sort();
        prop_assert_eq!(&ra.rows, &rb.rows);
        prop_assert_eq!(ra.rows.clone(), vec![("f1".to_string(), 15), ("f2".to_string(), 0)]);
    }

    #[test]
    fn propagation_is_monotone(
        seeds in prop::collection::btree_set(0u32..50, 0..20),
        days in prop::collection::vec(prop::collection::btree_set(0u32..50, 0..30), 1..8),
    ) {
        let start = date();
        let to_set = |s: &BTreeSet<u32>| s.iter().map(|i| remote(*i)).collect::<BTreeSet<_>>();
        let source: BTreeMap<_, _> = [(start, to_set(&seeds))].into_iter().collect();
        let target: BTreeMap<_, _> = days
            .iter()
            .enumerate()
            .map(|(d, s)| (start + chrono::Days::new(d as u64), to_set(s)))
            .collect();
        let curve = propagation("a", &source, "b", &target, (days.len() - 1) as u32).unwrap();
        prop_assert_eq!(curve.points.len(), days.len());
        for w in curve.points.windows(2) {
            prop_assert!(w[0].numerator <= w[1].numerator);
            prop_assert_eq!(w[0].denominator, seeds.len() as u64);
        }
        let everything: BTreeSet<u32> = days.iter().flatten().copied().collect();
        let last = curve.points.last().unwrap();
        prop_assert_eq!(last.numerator, seeds.intersection(&everything).count() as u64);
    }

    #[test]
    fn aggregation_matches_grouping_oracle(ips in prop::collection::btree_set(0u32..4096, 0..300)) {
        let set: BTreeSet<IpAddress> = ips.iter().map(|i| IpAddress::v4(0x2d00_0000 + i * 3)).collect();
        let report = aggregate_slash24(&set, &[8, 64]).unwrap();
        let mut groups: BTreeMap<u32, u64> = BTreeMap::new();
        for ip in &set {
            *groups.entry(ip.bits() as u32 >> 8).or_default() += 1;
        }
        let h = &report.v4;
        prop_assert_eq!(h.total_groups, groups.len() as u64);
        let counted: u64 = h.buckets.iter().map(|b| b.groups).sum();
        prop_assert_eq!(counted, groups.len() as u64);
        for b in &h.buckets {
            let expect = groups.values().filter(|n| **n >= b.low && b.high.is_none_or(|hi| **n <= hi)).count() as u64;
            prop_assert_eq!(b.groups, expect);
        }
        for (bound, n) in &h.at_least {
            prop_assert_eq!(*n, groups.values().filter(|c| **c >= *bound).count() as u64);
        }
        prop_assert_eq!(report.v6.total_groups, 0);
    }

    #[test]
    fn chunked_log_tallies_equal_whole_day(cuts in prop::collection::vec(0usize..40, 0..6), seed: u64) {
        let mut lines = Vec::new();
        for i in 0..40u32 {
            let ip = 1 + i % 5;
            lines.push(format!(
                "Mar 13 10:00:{:02} srv sshd[{}]: Failed password for root from 45.0.0.{ip} port 4{i:04} ssh2",
                i % 60,
                100 + i
            ));
            if i % 3 == 0 {
                lines.push(format!("Mar 13 10:01:00 srv CRON[{i}]: session opened for user root"));
            }
        }
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let sentinel = LogSentinel::with_defaults(PrefixIndex::new());
        let whole = sentinel.tally(lines.iter().map(String::as_str));

        let mut bounds: Vec<usize> = cuts.iter().map(|c| c * lines.len() / 40).collect();
        bounds.extend([0, lines.len()]);
        bounds.sort_unstable();
        let merged = bounds
            .windows(2)
            .map(|w| sentinel.tally(lines[w[0]..w[1]].iter().map(String::as_str)))
            .fold(Tally::default(), Tally::merge);
        prop_assert_eq!(&merged, &whole);
        prop_assert_eq!(sentinel.events(merged, date()), sentinel.events(whole, date()));
    }
}

#[test]
fn failure_threshold_and_whitelist() {
    let line = |ip: &str, n: u32| {
        format!("Mar 13 09:00:00 srv sshd[{n}]: Failed password for invalid user admin from {ip} port 5{n:04} ssh2")
    };
    let mut lines: Vec<String> = Vec::new();
    lines.extend((0..2).map(|n| line("45.0.0.2", n)));
    lines.extend((0..3).map(|n| line("45.0.0.3", n)));
    lines.extend((0..10).map(|n| line("203.0.113.5", n)));
    let whitelist: PrefixIndex = ["203.0.113.0/24".parse::<IpPrefix>().unwrap()].into_iter().collect();
    let events = LogSentinel::with_defaults(whitelist).scan_logs(lines.iter().map(String::as_str), date());
    let flagged: Vec<String> = events.iter().map(|e| e.remote_ip.to_string()).collect();
    assert_eq!(flagged, vec!["45.0.0.3"]);
    assert_eq!(events[0].evidence_count, 3);
}

#[test]
fn decay_offset_zero_is_zero() {
    let truth: BTreeMap<NaiveDate, BTreeSet<IpAddress>> = (0..3)
        .map(|d| (date() + chrono::Days::new(d), (0..10).map(remote).collect()))
        .collect();
    let base = BlacklistSnapshot::from_prefixes("f", date(), (0..5).map(|i| IpPrefix::host(remote(i)))).unwrap();
    let later = BlacklistSnapshot::from_prefixes("f", date() + chrono::Days::new(2), (3..9).map(|i| IpPrefix::host(remote(i))))
        .unwrap();
    let fresh = [(date(), base.clone()), (later.date(), later)].into_iter().collect();
    let r = decay(&base, &fresh, &truth).unwrap();
    assert_eq!(r.rows[0].delta_matched(), Some(0));
    assert_eq!(r.rows[1].daily, None);
    assert_eq!(r.rows[1].stale, Ratio::new(5, 10));
    assert_eq!(r.rows[2].daily, Some(Ratio::new(6, 10)));
    assert_eq!(r.rows[2].delta_matched(), Some(-1));
}
