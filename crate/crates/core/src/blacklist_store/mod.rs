//! Dated blacklist snapshots: parsing, per-feed statistics, churn between
//! consecutive days, cross-feed containment matrices and feed unions.
//!
//! The accepted text format is one entry per line. An entry is a bare address
//! (stored as a host prefix) or a canonical CIDR prefix. `#` and `;` start a
//! comment, either on a line of its own or after an entry. Lines may end in
//! LF or CRLF. Malformed lines are skipped and reported as diagnostics.

mod store;

use std::collections::HashSet;
use std::fmt::Write as _;

use chrono::NaiveDate;
use num_bigint::BigUint;
use thiserror::Error;

use crate::par;
use crate::prefix_index::{IpAddress, IpPrefix, PrefixIndex};
use crate::ratio::Ratio;

pub use store::FeedStore;

#[derive(Debug, Error)]
pub enum BlacklistError {
    #[error("empty snapshot: feed `{feed}` on {date} has no valid entries")]
    EmptySnapshot { feed: String, date: NaiveDate },
    #[error("invalid feed name `{0}`")]
    InvalidFeedName(String),
    #[error("feed mismatch: `{0}` vs `{1}`")]
    FeedMismatch(String, String),
    #[error("dates are not consecutive: {prev} then {cur}")]
    NonConsecutive { prev: NaiveDate, cur: NaiveDate },
    #[error("snapshots span several dates ({0} and {1})")]
    MixedDates(NaiveDate, NaiveDate),
    #[error("no snapshots given")]
    NoSnapshots,
    #[error("snapshot not found: {0}")]
    NotFound(String),
    #[error("malformed metadata in {path}: {reason}")]
    BadMeta { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    /// 1-based line number.
    pub line: usize,
    pub content: String,
    pub reason: String,
}

/// One feed on one day.
#[derive(Debug, Clone)]
pub struct BlacklistSnapshot {
    feed_name: String,
    date: NaiveDate,
    index: PrefixIndex,
    raw_line_count: usize,
    comment_line_count: usize,
    duplicate_lines: usize,
    diagnostics: Vec<ParseDiagnostic>,
}

/// Feed names double as directory names in the store.
pub fn validate_feed_name(name: &str) -> Result<(), BlacklistError> {
    let ok = !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '+'));
    if ok {
        Ok(())
    } else {
        Err(BlacklistError::InvalidFeedName(name.to_string()))
    }
}

/// Parses a feed in the text format described in the module docs.
pub fn parse_blacklist(
    text: &[u8],
    feed_name: &str,
    date: NaiveDate,
) -> Result<BlacklistSnapshot, BlacklistError> {
    validate_feed_name(feed_name)?;
    let text = text.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(text);

    let mut index = PrefixIndex::new();
    let mut raw_line_count = 0;
    let mut comment_line_count = 0;
    let mut duplicate_lines = 0;
    let mut diagnostics = Vec::new();

    let mut lines: Vec<&[u8]> = text.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    for (i, raw) in lines.into_iter().enumerate() {
        raw_line_count += 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let Ok(line) = std::str::from_utf8(raw) else {
            diagnostics.push(ParseDiagnostic {
                line: i + 1,
                content: String::from_utf8_lossy(raw).into_owned(),
                reason: "invalid UTF-8".to_string(),
            });
            continue;
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with(['#', ';']) {
            comment_line_count += 1;
            continue;
        }
        let entry = line.split(['#', ';']).next().unwrap_or("").trim();
        match entry.parse::<IpPrefix>() {
            Ok(prefix) => {
                if !index.insert(prefix) {
                    duplicate_lines += 1;
                }
            }
            Err(e) => diagnostics.push(ParseDiagnostic {
                line: i + 1,
                content: line.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    if index.is_empty() {
        return Err(BlacklistError::EmptySnapshot {
            feed: feed_name.to_string(),
            date,
        });
    }
    if !diagnostics.is_empty() {
        log::warn!(
            "feed {feed_name} {date}: skipped {} malformed line(s)",
            diagnostics.len()
        );
    }
    Ok(BlacklistSnapshot {
        feed_name: feed_name.to_string(),
        date,
        index,
        raw_line_count,
        comment_line_count,
        duplicate_lines,
        diagnostics,
    })
}

impl BlacklistSnapshot {
    /// Builds a snapshot from already-canonical prefixes.
    pub fn from_prefixes(
        feed_name: &str,
        date: NaiveDate,
        prefixes: impl IntoIterator<Item = IpPrefix>,
    ) -> Result<Self, BlacklistError> {
        validate_feed_name(feed_name)?;
        let mut index = PrefixIndex::new();
        let mut lines = 0;
        let mut duplicate_lines = 0;
        for p in prefixes {
            lines += 1;
            if !index.insert(p) {
                duplicate_lines += 1;
            }
        }
        if index.is_empty() {
            return Err(BlacklistError::EmptySnapshot {
                feed: feed_name.to_string(),
                date,
            });
        }
        Ok(Self {
            feed_name: feed_name.to_string(),
            date,
            index,
            raw_line_count: lines,
            comment_line_count: 0,
            duplicate_lines,
            diagnostics: Vec::new(),
        })
    }

    pub fn feed_name(&self) -> &str {
        &self.feed_name
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    /// Distinct canonical entries in first-seen order.
    pub fn entries(&self) -> &[IpPrefix] {
        self.index.entries()
    }

    pub fn index(&self) -> &PrefixIndex {
        &self.index
    }

    pub fn entry_count(&self) -> usize {
        self.index.entry_count()
    }

    /// Physical lines in the source text, including comments and blanks.
    pub fn raw_line_count(&self) -> usize {
        self.raw_line_count
    }

    pub fn comment_line_count(&self) -> usize {
        self.comment_line_count
    }

    /// Valid entry lines that repeated an earlier entry.
    pub fn duplicate_lines(&self) -> usize {
        self.duplicate_lines
    }

    pub fn diagnostics(&self) -> &[ParseDiagnostic] {
        &self.diagnostics
    }

    pub fn contains(&self, addr: IpAddress) -> bool {
        self.index.contains(addr)
    }

    pub fn expanded_ips(&self) -> BigUint {
        self.index.expanded_address_count()
    }

    /// Canonical text form; parsing it yields the same entry set.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# feed: {}", self.feed_name);
        let _ = writeln!(out, "# date: {}", self.date);
        for p in self.entries() {
            if p.is_host() {
                let _ = writeln!(out, "{}", p.network());
            } else {
                let _ = writeln!(out, "{p}");
            }
        }
        out
    }

    fn entry_set(&self) -> HashSet<IpPrefix> {
        self.entries().iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedStats {
    pub entry_count: usize,
    pub raw_line_count: usize,
    pub comment_line_count: usize,
    pub duplicate_lines: usize,
    pub diagnostic_count: usize,
    pub expanded_ips: BigUint,
    /// Absent when no previous-day snapshot exists.
    pub churn_vs_previous_day: Option<Ratio>,
}

pub fn feed_stats(
    snapshot: &BlacklistSnapshot,
    previous_day: Option<&BlacklistSnapshot>,
) -> Result<FeedStats, BlacklistError> {
    let churn_vs_previous_day = previous_day.map(|p| churn(p, snapshot)).transpose()?;
    Ok(FeedStats {
        entry_count: snapshot.entry_count(),
        raw_line_count: snapshot.raw_line_count(),
        comment_line_count: snapshot.comment_line_count(),
        duplicate_lines: snapshot.duplicate_lines(),
        diagnostic_count: snapshot.diagnostics().len(),
        expanded_ips: snapshot.expanded_ips(),
        churn_vs_previous_day,
    })
}

/// Fraction of entries that changed between two consecutive days:
/// `(|prev \ cur| + |cur \ prev|) / (|prev| + |cur|)`.
pub fn churn(prev: &BlacklistSnapshot, cur: &BlacklistSnapshot) -> Result<Ratio, BlacklistError> {
    if prev.feed_name != cur.feed_name {
        return Err(BlacklistError::FeedMismatch(
            prev.feed_name.clone(),
            cur.feed_name.clone(),
        ));
    }
    if prev.date.succ_opt() != Some(cur.date) {
        return Err(BlacklistError::NonConsecutive {
            prev: prev.date,
            cur: cur.date,
        });
    }
    Ok(set_churn(&prev.entry_set(), &cur.entry_set()))
}

pub(crate) fn set_churn(a: &HashSet<IpPrefix>, b: &HashSet<IpPrefix>) -> Ratio {
    let changed = a.difference(b).count() + b.difference(a).count();
    Ratio::new(changed as u64, (a.len() + b.len()) as u64)
}

/// Asymmetric containment counts between feeds of the same day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectionMatrix {
    pub feed_names: Vec<String>,
    /// `cells[i][j]`: entries of feed i fully covered by feed j. The
    /// diagonal is `None`.
    pub cells: Vec<Vec<Option<usize>>>,
}

fn common_date(snapshots: &[&BlacklistSnapshot]) -> Result<NaiveDate, BlacklistError> {
    let first = snapshots.first().ok_or(BlacklistError::NoSnapshots)?.date;
    match snapshots.iter().find(|s| s.date != first) {
        Some(other) => Err(BlacklistError::MixedDates(first, other.date)),
        None => Ok(first),
    }
}

pub fn intersection_matrix(
    snapshots: &[&BlacklistSnapshot],
) -> Result<IntersectionMatrix, BlacklistError> {
    if snapshots.is_empty() {
        return Ok(IntersectionMatrix {
            feed_names: Vec::new(),
            cells: Vec::new(),
        });
    }
    common_date(snapshots)?;
    let n = snapshots.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let counts = par::map_slice(&pairs, |&(i, j)| {
        snapshots[i].index.containment_count(&snapshots[j].index)
    });
    let mut cells = vec![vec![None; n]; n];
    for (&(i, j), c) in pairs.iter().zip(counts) {
        cells[i][j] = Some(c);
    }
    Ok(IntersectionMatrix {
        feed_names: snapshots.iter().map(|s| s.feed_name.clone()).collect(),
        cells,
    })
}

/// Combined feed whose membership is the OR of its members.
pub fn union_feed(
    snapshots: &[&BlacklistSnapshot],
    name: &str,
) -> Result<BlacklistSnapshot, BlacklistError> {
    let date = common_date(snapshots)?;
    BlacklistSnapshot::from_prefixes(
        name,
        date,
        snapshots.iter().flat_map(|s| s.entries().iter().copied()),
    )
}
