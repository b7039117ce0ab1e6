//! Longest-prefix-match set of IPv4 and IPv6 prefixes.
//!
//! A [`PrefixIndex`] keeps one Patricia trie per address family plus the list
//! of distinct stored prefixes in insertion order. Nested and overlapping
//! prefixes are kept as-is; queries that need union semantics
//! ([`PrefixIndex::expanded_address_count`], [`PrefixIndex::containment_count`])
//! dedupe at query time.
//!
//! Mutation goes through `&mut self`; once built, an index is `Sync` and can be
//! queried from any number of threads.

mod addr;
mod trie;

use std::collections::HashSet;

use num_bigint::BigUint;

pub use addr::{Family, IpAddress, IpPrefix, PrefixError};
use trie::Patricia;

use crate::par;

#[derive(Debug, Clone, Default)]
pub struct PrefixIndex {
    v4: Patricia,
    v6: Patricia,
    entries: Vec<IpPrefix>,
    seen: HashSet<IpPrefix>,
    v4_entries: usize,
}

impl PrefixIndex {
    pub fn new() -> Self {
        Self::default()
    }

    fn trie(&self, family: Family) -> &Patricia {
        match family {
            Family::V4 => &self.v4,
            Family::V6 => &self.v6,
        }
    }

    /// Adds a prefix. Returns false if it was already stored.
    pub fn insert(&mut self, prefix: IpPrefix) -> bool {
        if !self.seen.insert(prefix) {
            return false;
        }
        let trie = match prefix.family() {
            Family::V4 => {
                self.v4_entries += 1;
                &mut self.v4
            }
            Family::V6 => &mut self.v6,
        };
        let added = trie.insert(prefix.key(), prefix.len());
        debug_assert!(added);
        self.entries.push(prefix);
        true
    }

    /// Parses and inserts `addr/len`, rejecting non-canonical input.
    pub fn insert_str(&mut self, text: &str) -> Result<bool, PrefixError> {
        Ok(self.insert(text.parse()?))
    }

    pub fn contains(&self, addr: IpAddress) -> bool {
        self.trie(addr.family()).contains(addr.key())
    }

    /// The most specific stored prefix covering `addr`.
    pub fn longest_match(&self, addr: IpAddress) -> Option<IpPrefix> {
        let len = self.trie(addr.family()).longest_match(addr.key())?;
        Some(IpPrefix::truncating(addr, len).expect("stored length within family width"))
    }

    /// Membership for a batch of addresses, in input order.
    pub fn contains_batch(&self, addrs: &[IpAddress]) -> Vec<bool> {
        par::map_slice(addrs, |a| self.contains(*a))
    }

    /// True when every address of `prefix` is covered by the union of stored
    /// prefixes.
    pub fn covers(&self, prefix: IpPrefix) -> bool {
        self.trie(prefix.family())
            .covers_prefix(prefix.key(), prefix.len())
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn v4_entry_count(&self) -> usize {
        self.v4_entries
    }

    pub fn v6_entry_count(&self) -> usize {
        self.entries.len() - self.v4_entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct stored prefixes in insertion order.
    pub fn entries(&self) -> &[IpPrefix] {
        &self.entries
    }

    /// Number of distinct addresses covered by the union of all prefixes.
    pub fn expanded_address_count(&self) -> BigUint {
        let mut total = BigUint::from(self.expanded_v4_count());
        for len in self.v6.maximal_terminal_lengths() {
            total += BigUint::from(1u8) << (128 - len as usize);
        }
        total
    }

    /// IPv4 part of [`Self::expanded_address_count`]; at most 2^32.
    pub fn expanded_v4_count(&self) -> u64 {
        self.v4
            .maximal_terminal_lengths()
            .into_iter()
            .map(|len| 1u64 << (32 - len as u32))
            .sum()
    }

    /// Number of entries of `self` whose every address is covered by `other`.
    pub fn containment_count(&self, other: &PrefixIndex) -> usize {
        par::count_slice(&self.entries, |p| other.covers(*p))
    }
}

impl FromIterator<IpPrefix> for PrefixIndex {
    fn from_iter<I: IntoIterator<Item = IpPrefix>>(iter: I) -> Self {
        let mut index = PrefixIndex::new();
        index.extend(iter);
        index
    }
}

impl Extend<IpPrefix> for PrefixIndex {
    fn extend<I: IntoIterator<Item = IpPrefix>>(&mut self, iter: I) {
        for p in iter {
            self.insert(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> IpAddress {
        s.parse().unwrap()
    }

    fn index(prefixes: &[&str]) -> PrefixIndex {
        prefixes.iter().map(|p| p.parse::<IpPrefix>().unwrap()).collect()
    }

    #[test]
    fn duplicate_insert_is_idempotent() {
        let mut idx = PrefixIndex::new();
        assert!(idx.insert_str("10.0.0.0/8").unwrap());
        assert!(!idx.insert_str("10.0.0.0/8").unwrap());
        assert_eq!(idx.entry_count(), 1);
    }

    #[test]
    fn universal_prefix_covers_all_v4() {
        let idx = index(&["0.0.0.0/0"]);
        assert!(idx.contains(ip("0.0.0.0")));
        assert!(idx.contains(ip("203.0.113.9")));
        assert!(idx.contains(ip("255.255.255.255")));
        assert!(!idx.contains(ip("2001:db8::1")));
        assert_eq!(idx.expanded_v4_count(), 1 << 32);
    }

    #[test]
    fn exact_host() {
        let idx = index(&["1.2.3.4/32"]);
        assert!(idx.contains(ip("1.2.3.4")));
        assert!(!idx.contains(ip("1.2.3.5")));
    }

    #[test]
    fn empty_index() {
        let idx = PrefixIndex::new();
        assert!(!idx.contains(ip("1.1.1.1")));
        assert!(!idx.contains(ip("::1")));
        assert_eq!(idx.expanded_address_count(), BigUint::from(0u8));
        assert_eq!(idx.containment_count(&idx), 0);
    }

    #[test]
    fn prefix_cover() {
        let idx = index(&["10.0.0.0/8"]);
        assert!(idx.contains(ip("10.200.1.1")));
        assert!(!idx.contains(ip("11.0.0.1")));
    }

    #[test]
    fn rejects_non_canonical() {
        let mut idx = PrefixIndex::new();
        let err = idx.insert_str("192.168.1.7/24").unwrap_err();
        assert!(err.to_string().contains("192.168.1.7/24"));
        assert!(idx.is_empty());
    }

    #[test]
    fn expanded_counts_do_not_double_count() {
        assert_eq!(index(&["1.2.3.0/24"]).expanded_address_count(), 256u32.into());
        assert_eq!(
            index(&["1.2.3.0/24", "1.2.3.4/32"]).expanded_address_count(),
            256u32.into()
        );
        let both = index(&["1.2.3.0/24", "2001:db8::/120"]);
        assert_eq!(both.expanded_address_count(), 512u32.into());
        assert_eq!(both.v4_entry_count(), 1);
        assert_eq!(both.v6_entry_count(), 1);
    }

    #[test]
    fn containment_is_asymmetric() {
        let hosts = index(&["1.2.3.4/32"]);
        let net = index(&["1.2.3.0/24"]);
        assert_eq!(hosts.containment_count(&net), 1);
        assert_eq!(net.containment_count(&hosts), 0);
        assert_eq!(net.containment_count(&net), 1);
    }

    #[test]
    fn containment_through_split_coverage() {
        let whole = index(&["1.2.3.0/24"]);
        let halves = index(&["1.2.3.0/25", "1.2.3.128/25"]);
        assert_eq!(whole.containment_count(&halves), 1);
        assert_eq!(halves.containment_count(&whole), 2);
    }

    #[test]
    fn longest_match_prefers_specific() {
        let idx = index(&["10.0.0.0/8", "10.1.0.0/16", "2001:db8::/32"]);
        assert_eq!(idx.longest_match(ip("10.1.2.3")).unwrap().to_string(), "10.1.0.0/16");
        assert_eq!(idx.longest_match(ip("10.2.2.3")).unwrap().to_string(), "10.0.0.0/8");
        assert_eq!(
            idx.longest_match(ip("2001:db8::5")).unwrap().to_string(),
            "2001:db8::/32"
        );
        assert!(idx.longest_match(ip("11.0.0.0")).is_none());
    }
}
