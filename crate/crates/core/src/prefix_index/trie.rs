//! Path-compressed binary radix trie (Patricia tree) over left-aligned
//! 128-bit keys. One instance holds prefixes of a single address family.
//!
//! Nodes live in an arena and refer to children by index. A node is either
//! terminal (a stored prefix) or a branch point with exactly two children;
//! since entries are never removed, that shape holds for the lifetime of the
//! trie.

use super::addr::mask;

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: u128,
    len: u8,
    terminal: bool,
    child: [u32; 2],
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Root,
    Child(u32, usize),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Patricia {
    nodes: Vec<Node>,
    root: Option<u32>,
}

#[inline]
fn bit_at(key: u128, pos: u8) -> usize {
    ((key >> (127 - pos as u32)) & 1) as usize
}

#[inline]
fn common_len(a: u128, b: u128, limit: u8) -> u8 {
    ((a ^ b).leading_zeros() as u8).min(limit)
}

impl Patricia {
    fn get_slot(&self, slot: Slot) -> Option<u32> {
        match slot {
            Slot::Root => self.root,
            Slot::Child(n, side) => {
                let c = self.nodes[n as usize].child[side];
                (c != NIL).then_some(c)
            }
        }
    }

    fn set_slot(&mut self, slot: Slot, idx: u32) {
        match slot {
            Slot::Root => self.root = Some(idx),
            Slot::Child(n, side) => self.nodes[n as usize].child[side] = idx,
        }
    }

    fn push(&mut self, key: u128, len: u8, terminal: bool) -> u32 {
        let idx = u32::try_from(self.nodes.len()).expect("trie node arena overflow");
        self.nodes.push(Node {
            key,
            len,
            terminal,
            child: [NIL, NIL],
        });
        idx
    }

    /// Inserts a canonical prefix. Returns false when it was already present.
    pub(crate) fn insert(&mut self, key: u128, len: u8) -> bool {
        debug_assert_eq!(key & !mask(len), 0);
        let mut slot = Slot::Root;
        loop {
            let Some(idx) = self.get_slot(slot) else {
                let leaf = self.push(key, len, true);
                self.set_slot(slot, leaf);
                return true;
            };
            let node = &self.nodes[idx as usize];
            let (nkey, nlen) = (node.key, node.len);
            let c = common_len(nkey, key, nlen.min(len));

            if c == nlen && c == len {
                let node = &mut self.nodes[idx as usize];
                let added = !node.terminal;
                node.terminal = true;
                return added;
            }
            if c == nlen {
                slot = Slot::Child(idx, bit_at(key, nlen));
                continue;
            }
            if c == len {
                // new prefix is an ancestor of the existing node
                let up = self.push(key, len, true);
                self.nodes[up as usize].child[bit_at(nkey, len)] = idx;
                self.set_slot(slot, up);
                return true;
            }
            let branch = self.push(key & mask(c), c, false);
            let leaf = self.push(key, len, true);
            self.nodes[branch as usize].child[bit_at(key, c)] = leaf;
            self.nodes[branch as usize].child[bit_at(nkey, c)] = idx;
            self.set_slot(slot, branch);
            return true;
        }
    }

    /// Length of the longest stored prefix covering `key`.
    pub(crate) fn longest_match(&self, key: u128) -> Option<u8> {
        let mut best = None;
        let mut cur = self.root;
        while let Some(idx) = cur {
            let node = &self.nodes[idx as usize];
            if common_len(node.key, key, node.len) < node.len {
                break;
            }
            if node.terminal {
                best = Some(node.len);
            }
            if node.len == 128 {
                break;
            }
            let c = node.child[bit_at(key, node.len)];
            cur = (c != NIL).then_some(c);
        }
        best
    }

    pub(crate) fn contains(&self, key: u128) -> bool {
        let mut cur = self.root;
        while let Some(idx) = cur {
            let node = &self.nodes[idx as usize];
            if common_len(node.key, key, node.len) < node.len {
                return false;
            }
            if node.terminal {
                return true;
            }
            if node.len == 128 {
                return false;
            }
            let c = node.child[bit_at(key, node.len)];
            cur = (c != NIL).then_some(c);
        }
        false
    }

    /// True when the union of stored prefixes covers every key under
    /// `(key, len)`.
    pub(crate) fn covers_prefix(&self, key: u128, len: u8) -> bool {
        let mut cur = self.root;
        while let Some(idx) = cur {
            let node = &self.nodes[idx as usize];
            if node.len > len {
                // only one subtree lies under the region and it is narrower
                return false;
            }
            if common_len(node.key, key, node.len) < node.len {
                return false;
            }
            if node.terminal {
                return true;
            }
            if node.len == len {
                return self.subtree_full(idx);
            }
            let c = node.child[bit_at(key, node.len)];
            cur = (c != NIL).then_some(c);
        }
        false
    }

    /// Whether the terminals under `idx` cover all of the node's own prefix.
    fn subtree_full(&self, idx: u32) -> bool {
        let mut stack = vec![idx];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.terminal {
                continue;
            }
            if node.len == 128 {
                return false;
            }
            for side in node.child {
                if side == NIL || self.nodes[side as usize].len != node.len + 1 {
                    return false;
                }
                stack.push(side);
            }
        }
        true
    }

    /// Lengths of terminal prefixes not nested under another terminal.
    pub(crate) fn maximal_terminal_lengths(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut stack: Vec<u32> = self.root.into_iter().collect();
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i as usize];
            if node.terminal {
                out.push(node.len);
                continue;
            }
            stack.extend(node.child.iter().copied().filter(|&c| c != NIL));
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key4(a: u8, b: u8, c: u8, d: u8) -> u128 {
        (u32::from_be_bytes([a, b, c, d]) as u128) << 96
    }

    #[test]
    fn branch_and_ancestor_inserts() {
        let mut t = Patricia::default();
        assert!(t.insert(key4(10, 1, 0, 0), 16));
        assert!(t.insert(key4(10, 2, 0, 0), 16));
        assert!(t.insert(key4(10, 0, 0, 0), 8));
        assert!(!t.insert(key4(10, 0, 0, 0), 8));
        assert_eq!(t.longest_match(key4(10, 1, 9, 9)), Some(16));
        assert_eq!(t.longest_match(key4(10, 3, 9, 9)), Some(8));
        assert_eq!(t.longest_match(key4(11, 0, 0, 0)), None);
    }

    #[test]
    fn branch_node_becomes_terminal() {
        let mut t = Patricia::default();
        t.insert(key4(10, 0, 0, 0), 24);
        t.insert(key4(10, 0, 1, 0), 24);
        // shared ancestor 10.0.0.0/23 exists as a branch; inserting it marks it
        assert!(t.insert(key4(10, 0, 0, 0), 23));
        assert_eq!(t.node_count(), 3);
        assert!(t.covers_prefix(key4(10, 0, 0, 0), 23));
    }

    #[test]
    fn two_halves_cover_parent() {
        let mut t = Patricia::default();
        t.insert(key4(1, 2, 3, 0), 25);
        assert!(!t.covers_prefix(key4(1, 2, 3, 0), 24));
        t.insert(key4(1, 2, 3, 128), 25);
        assert!(t.covers_prefix(key4(1, 2, 3, 0), 24));
        assert!(!t.covers_prefix(key4(1, 2, 2, 0), 23));
    }
}
