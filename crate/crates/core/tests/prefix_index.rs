use std::collections::HashSet;
use std::time::Instant;

use blacklist_eval::prefix_index::{Family, IpAddress, IpPrefix, PrefixIndex};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linear_contains(list: &[IpPrefix], addr: IpAddress) -> bool {
    list.iter().any(|p| p.contains(addr))
}

fn linear_longest(list: &[IpPrefix], addr: IpAddress) -> Option<IpPrefix> {
    list.iter().filter(|p| p.contains(addr)).max_by_key(|p| p.len()).copied()
}

fn addr(family: Family, bits: u128) -> IpAddress {
    match family {
        Family::V4 => IpAddress::v4(bits as u32),
        Family::V6 => IpAddress::v6(bits),
    }
}

fn random_prefix(rng: &mut ChaCha8Rng) -> IpPrefix {
    // addresses from a few hot ranges so lookups actually hit
    if rng.random_bool(0.5) {
        let bits = (rng.random_range(0..4u32) << 28) | rng.random::<u32>() >> 4;
        IpPrefix::truncating(IpAddress::v4(bits), rng.random_range(12..=32)).unwrap()
    } else {
        let bits = (0x2001_0db8u128 << 96) | (rng.random_range(0..4u128) << 92) | (rng.random::<u128>() >> 36);
        IpPrefix::truncating(IpAddress::v6(bits), rng.random_range(40..=128)).unwrap()
    }
}

fn random_lookup(rng: &mut ChaCha8Rng, list: &[IpPrefix]) -> IpAddress {
    if rng.random_bool(0.5) {
        // inside a stored prefix, at a random offset
        let p = list[rng.random_range(0..list.len())];
        let host_bits = p.host_bits() as u32;
        let offset = if host_bits == 0 { 0 } else { rng.random::<u128>() >> (128 - host_bits) };
        addr(p.family(), p.network().bits() | offset)
    } else if rng.random_bool(0.5) {
        IpAddress::v4((rng.random_range(0..4u32) << 28) | rng.random::<u32>() >> 4)
    } else {
        IpAddress::v6((0x2001_0db8u128 << 96) | (rng.random::<u128>() >> 32))
    }
}

#[test]
fn thousand_prefixes_ten_thousand_lookups_match_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let list: Vec<IpPrefix> = (0..1000).map(|_| random_prefix(&mut rng)).collect();
    let lookups: Vec<IpAddress> = (0..10_000).map(|_| random_lookup(&mut rng, &list)).collect();

    let started = Instant::now();
    let index: PrefixIndex = list.iter().copied().collect();
    let batch = index.contains_batch(&lookups);
    let mut hits = 0;
    for (a, &got) in lookups.iter().zip(&batch) {
        assert_eq!(got, linear_contains(&list, *a), "contains({a})");
        assert_eq!(index.contains(*a), got);
        assert_eq!(index.longest_match(*a), linear_longest(&list, *a), "longest_match({a})");
        hits += got as usize;
    }
    let elapsed = started.elapsed();
    assert!(hits > 1000 && hits < 10_000, "lookups should mix hits and misses, got {hits}");
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
}

fn slash16_prefix() -> impl Strategy<Value = IpPrefix> {
    (0u32..65536, 18u8..=32).prop_map(|(off, len)| IpPrefix::truncating(IpAddress::v4(0x0a00_0000 | off), len).unwrap())
}

fn addresses(list: &[IpPrefix]) -> HashSet<u32> {
    let mut out = HashSet::new();
    for p in list {
        let base = p.network().bits() as u32;
        for i in 0..(1u32 << p.host_bits()) {
            out.insert(base + i);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn containment_matches_address_set_oracle(
        a in prop::collection::vec(slash16_prefix(), 1..40),
        b in prop::collection::vec(slash16_prefix(), 1..40),
    ) {
        let ia: PrefixIndex = a.iter().copied().collect();
        let ib: PrefixIndex = b.iter().copied().collect();
        let b_addrs = addresses(&b);
        let expected = ia
            .entries()
            .iter()
            .filter(|p| addresses(&[**p]).is_subset(&b_addrs))
            .count();
        prop_assert_eq!(ia.containment_count(&ib), expected);
        prop_assert_eq!(ia.expanded_v4_count(), addresses(&a).len() as u64);
        prop_assert_eq!(ia.expanded_address_count(), BigUint::from(addresses(&a).len()));
    }

    #[test]
    fn membership_matches_linear_scan(
        list in prop::collection::vec(slash16_prefix(), 0..60),
        probes in prop::collection::vec(0u32..65536, 1..200),
    ) {
        let index: PrefixIndex = list.iter().copied().collect();
        for off in probes {
            let a = IpAddress::v4(0x0a00_0000 | off);
            prop_assert_eq!(index.contains(a), linear_contains(&list, a));
            prop_assert_eq!(index.longest_match(a), linear_longest(&list, a));
        }
    }

    #[test]
    fn insertion_order_does_not_matter(mut list in prop::collection::vec(slash16_prefix(), 1..60), seed: u64) {
        let a: PrefixIndex = list.iter().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        list.shuffle(&mut rng);
        let b: PrefixIndex = list.iter().copied().collect();
        prop_assert_eq!(a.entry_count(), b.entry_count());
        prop_assert_eq!(a.expanded_v4_count(), b.expanded_v4_count());
        prop_assert_eq!(a.containment_count(&b), a.entry_count());
    }
}

#[test]
fn host_list_versus_covering_prefix_is_asymmetric() {
    let hosts: PrefixIndex = ["192.0.2.7/32"].iter().map(|s| s.parse().unwrap()).collect();
    let nets: PrefixIndex = ["192.0.2.0/24"].iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!((hosts.containment_count(&nets), nets.containment_count(&hosts)), (1, 0));
}

#[test]
fn families_never_mix() {
    let index: PrefixIndex = ["0.0.0.0/0"].iter().map(|s| s.parse().unwrap()).collect();
    assert!(index.contains("203.0.113.1".parse().unwrap()));
    assert!(!index.contains("::1".parse().unwrap()));
    assert!(!index.contains("::ffff:203.0.113.1".parse().unwrap()));
}
