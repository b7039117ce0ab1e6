use std::collections::BTreeSet;

use blacklist_eval::blacklist_store::{churn, intersection_matrix, parse_blacklist, BlacklistSnapshot, FeedStore};
use blacklist_eval::evaluator::{match_rate, GroundTruth, GroundTruthKind, UnionSpec};
use blacklist_eval::prefix_index::{IpAddress, IpPrefix};
use blacklist_eval::ratio::Ratio;
use chrono::NaiveDate;
use proptest::prelude::*;

fn day(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 3, d).unwrap()
}

fn hosts(range: std::ops::Range<u32>) -> Vec<IpPrefix> {
    range.map(|i| IpPrefix::host(IpAddress::v4(0xc000_0200 + i))).collect()
}

fn snap(name: &str, d: u32, entries: Vec<IpPrefix>) -> BlacklistSnapshot {
    BlacklistSnapshot::from_prefixes(name, day(d), entries).unwrap()
}

#[test]
fn churn_identical_disjoint_and_half_replaced() {
    let a = snap("f", 13, hosts(0..10));
    assert_eq!(churn(&a, &snap("f", 14, hosts(0..10))).unwrap(), Ratio::new(0, 20));
    assert_eq!(churn(&a, &snap("f", 14, hosts(10..20))).unwrap(), Ratio::new(20, 20));
    let half = churn(&a, &snap("f", 14, hosts(5..15))).unwrap();
    assert_eq!(half, Ratio::new(10, 20));
    assert_eq!(half.percent(), "50.0%");
}

#[test]
fn churn_needs_consecutive_days_of_one_feed() {
    let a = snap("f", 13, hosts(0..3));
    assert!(churn(&a, &snap("f", 15, hosts(0..3))).is_err());
    assert!(churn(&a, &snap("g", 14, hosts(0..3))).is_err());
}

#[test]
fn store_round_trip_keeps_entries_and_churn() {
    let dir = tempfile::tempdir().unwrap();
    let store = FeedStore::new(dir.path());
    let first = parse_blacklist(b"# header\n192.0.2.1\n192.0.2.1\n198.51.100.0/24\n", "pn", day(13)).unwrap();
    let stats = store.save(&first).unwrap();
    assert_eq!((stats.entry_count, stats.duplicate_lines, stats.comment_line_count), (2, 1, 1));
    assert_eq!(stats.churn_vs_previous_day, None);

    let second = parse_blacklist(b"192.0.2.1\n203.0.113.9\n", "pn", day(14)).unwrap();
    let stats = store.save(&second).unwrap();
    assert_eq!(stats.churn_vs_previous_day, Some(Ratio::new(2, 4)));

    let loaded = store.load("pn", day(13)).unwrap();
    assert_eq!(loaded.entries(), first.entries());
    assert_eq!(store.dates("pn").unwrap(), vec![day(13), day(14)]);
    assert_eq!(store.load_stats("pn", day(14)).unwrap(), stats);
}

#[test]
fn empty_feed_is_rejected() {
    let err = parse_blacklist(b"# only comments\n\n", "pn", day(13)).unwrap_err();
    assert!(err.to_string().contains("empty snapshot"));
}

fn entry_set(n: u32) -> impl Strategy<Value = BTreeSet<u32>> {
    prop::collection::btree_set(0..n, 1..(n as usize))
}

fn to_prefixes(set: &BTreeSet<u32>) -> Vec<IpPrefix> {
    set.iter().map(|i| IpPrefix::host(IpAddress::v4(0xc000_0200 + i))).collect()
}

proptest! {
    #[test]
    fn churn_is_symmetric_and_bounded(a in entry_set(64), b in entry_set(64)) {
        let ab = churn(&snap("f", 13, to_prefixes(&a)), &snap("f", 14, to_prefixes(&b))).unwrap();
        let ba = churn(&snap("f", 13, to_prefixes(&b)), &snap("f", 14, to_prefixes(&a))).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.numerator <= ab.denominator);
        let changed = a.symmetric_difference(&b).count() as u64;
        prop_assert_eq!(ab, Ratio::new(changed, (a.len() + b.len()) as u64));
    }

    #[test]
    fn intersection_cells_match_cover_oracle(a in entry_set(64), b in entry_set(64)) {
        let fa = snap("a", 13, to_prefixes(&a));
        // b as /30 blocks, so containment is partial
        let blocks: BTreeSet<u32> = b.iter().map(|i| i & !3).collect();
        let fb = snap(
            "b",
            13,
            blocks.iter().map(|i| IpPrefix::new(IpAddress::v4(0xc000_0200 + i), 30).unwrap()).collect(),
        );
        let m = intersection_matrix(&[&fa, &fb]).unwrap();
        let a_in_b = a.iter().filter(|i| blocks.contains(&(*i & !3))).count();
        let b_in_a = blocks.iter().filter(|blk| (0..4).all(|k| a.contains(&(*blk + k)))).count();
        prop_assert_eq!(m.cells[0][1], Some(a_in_b));
        prop_assert_eq!(m.cells[1][0], Some(b_in_a));
        prop_assert_eq!(m.cells[0][0], None);
    }

    // 100 randomized fixtures: a union is never worse than its best member,
    // and beats it exactly when it adds a ground-truth address.
    #[test]
    fn union_dominates_members(
        truth in entry_set(40),
        feeds in prop::collection::vec(entry_set(60), 2..5),
    ) {
        let gt = GroundTruth {
            date: day(13),
            network_name: "n".into(),
            kind: GroundTruthKind::Scanner,
            ips: truth.iter().map(|i| IpAddress::v4(0xc000_0200 + i)).collect(),
        };
        let snaps: Vec<BlacklistSnapshot> = feeds
            .iter()
            .enumerate()
            .map(|(i, f)| snap(&format!("f{i}"), 13, to_prefixes(f)))
            .collect();
        let refs: Vec<&BlacklistSnapshot> = snaps.iter().collect();
        let names: Vec<String> = snaps.iter().map(|s| s.feed_name().to_string()).collect();
        let union = UnionSpec::parse(&names.join("+"));
        let report = match_rate(&gt, &refs, std::slice::from_ref(&union)).unwrap();
        let u = report.rate(&union.name).unwrap();

        let matched = |f: &BTreeSet<u32>| truth.intersection(f).count() as u64;
        let best = feeds.iter().max_by_key(|f| matched(f)).unwrap();
        for (name, f) in names.iter().zip(&feeds) {
            let r = report.rate(name).unwrap();
            prop_assert_eq!(r, Ratio::new(matched(f), truth.len() as u64));
            prop_assert!(u.numerator >= r.numerator);
        }
        let adds = truth.iter().any(|t| !best.contains(t) && feeds.iter().any(|f| f.contains(t)));
        prop_assert_eq!(u.numerator > matched(best), adds);
    }
}
