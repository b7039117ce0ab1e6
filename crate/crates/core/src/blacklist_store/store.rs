use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use num_bigint::BigUint;

use super::{feed_stats, parse_blacklist, validate_feed_name, BlacklistError, BlacklistSnapshot, FeedStats};
use crate::ratio::Ratio;

/// On-disk snapshot store: `feeds/<name>/<YYYY-MM-DD>.txt` holds the
/// canonical text and `<YYYY-MM-DD>.meta` holds `key=value` statistics.
#[derive(Debug, Clone)]
pub struct FeedStore {
    root: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BlacklistError + '_ {
    move |source| BlacklistError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl FeedStore {
    /// `root` is the store root; feeds live under `root/feeds`.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn feed_dir(&self, name: &str) -> PathBuf {
        self.root.join("feeds").join(name)
    }

    pub fn snapshot_path(&self, name: &str, date: NaiveDate) -> PathBuf {
        self.feed_dir(name).join(format!("{date}.txt"))
    }

    pub fn meta_path(&self, name: &str, date: NaiveDate) -> PathBuf {
        self.feed_dir(name).join(format!("{date}.meta"))
    }

    pub fn exists(&self, name: &str, date: NaiveDate) -> bool {
        self.snapshot_path(name, date).is_file()
    }

    /// Writes the snapshot and its stats. Churn is computed against the
    /// previous day's stored snapshot when one exists.
    pub fn save(&self, snapshot: &BlacklistSnapshot) -> Result<FeedStats, BlacklistError> {
        let name = snapshot.feed_name();
        let dir = self.feed_dir(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let previous = match snapshot.date().pred_opt() {
            Some(prev) if self.exists(name, prev) => Some(self.load(name, prev)?),
            _ => None,
        };
        let stats = feed_stats(snapshot, previous.as_ref())?;

        let txt = self.snapshot_path(name, snapshot.date());
        fs::write(&txt, snapshot.serialize()).map_err(io_err(&txt))?;
        let meta = self.meta_path(name, snapshot.date());
        fs::write(&meta, render_meta(snapshot, &stats)).map_err(io_err(&meta))?;

        // the next day's churn depends on this snapshot
        if let Some(next) = snapshot.date().succ_opt() {
            if self.exists(name, next) {
                let next_snap = self.load(name, next)?;
                let next_stats = feed_stats(&next_snap, Some(snapshot))?;
                let path = self.meta_path(name, next);
                let stored = self.load_stats(name, next)?;
                let merged = FeedStats {
                    churn_vs_previous_day: next_stats.churn_vs_previous_day,
                    ..stored
                };
                fs::write(&path, render_meta_stats(name, next, &merged)).map_err(io_err(&path))?;
            }
        }
        Ok(stats)
    }

    pub fn load(&self, name: &str, date: NaiveDate) -> Result<BlacklistSnapshot, BlacklistError> {
        validate_feed_name(name)?;
        let path = self.snapshot_path(name, date);
        if !path.is_file() {
            return Err(BlacklistError::NotFound(path.display().to_string()));
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        parse_blacklist(&bytes, name, date)
    }

    pub fn load_stats(&self, name: &str, date: NaiveDate) -> Result<FeedStats, BlacklistError> {
        let path = self.meta_path(name, date);
        if !path.is_file() {
            return Err(BlacklistError::NotFound(path.display().to_string()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        parse_meta(&text).map_err(|reason| BlacklistError::BadMeta {
            path: path.display().to_string(),
            reason,
        })
    }

    /// Stored feed names, sorted.
    pub fn feeds(&self) -> Result<Vec<String>, BlacklistError> {
        let dir = self.root.join("feeds");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut names = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            if entry.path().is_dir() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    /// Dates with a stored snapshot for `name`, ascending.
    pub fn dates(&self, name: &str) -> Result<Vec<NaiveDate>, BlacklistError> {
        let dir = self.feed_dir(name);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut dates = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let file = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = file.strip_suffix(".txt") {
                if let Ok(d) = stem.parse::<NaiveDate>() {
                    dates.push(d);
                }
            }
        }
        dates.sort();
        Ok(dates)
    }
}

fn render_meta(snapshot: &BlacklistSnapshot, stats: &FeedStats) -> String {
    render_meta_stats(snapshot.feed_name(), snapshot.date(), stats)
}

fn render_meta_stats(name: &str, date: NaiveDate, stats: &FeedStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "feed={name}");
    let _ = writeln!(out, "date={date}");
    let _ = writeln!(out, "entry_count={}", stats.entry_count);
    let _ = writeln!(out, "raw_line_count={}", stats.raw_line_count);
    let _ = writeln!(out, "comment_line_count={}", stats.comment_line_count);
    let _ = writeln!(out, "duplicate_lines={}", stats.duplicate_lines);
    let _ = writeln!(out, "diagnostics={}", stats.diagnostic_count);
    let _ = writeln!(out, "expanded_ips={}", stats.expanded_ips);
    match stats.churn_vs_previous_day {
        Some(r) => {
            let _ = writeln!(out, "churn={}/{}", r.numerator, r.denominator);
        }
        None => {
            let _ = writeln!(out, "churn=absent");
        }
    }
    out
}

fn parse_meta(text: &str) -> Result<FeedStats, String> {
    let mut entry_count = None;
    let mut raw_line_count = None;
    let mut comment_line_count = None;
    let mut duplicate_lines = None;
    let mut diagnostic_count = None;
    let mut expanded_ips = None;
    let mut churn = None;

    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got `{line}`"))?;
        let num = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {e}"));
        match key {
            "entry_count" => entry_count = Some(num(value)?),
            "raw_line_count" => raw_line_count = Some(num(value)?),
            "comment_line_count" => comment_line_count = Some(num(value)?),
            "duplicate_lines" => duplicate_lines = Some(num(value)?),
            "diagnostics" => diagnostic_count = Some(num(value)?),
            "expanded_ips" => {
                expanded_ips = Some(
                    value
                        .parse::<BigUint>()
                        .map_err(|e| format!("expanded_ips: {e}"))?,
                )
            }
            "churn" => {
                churn = Some(if value == "absent" {
                    None
                } else {
                    let (n, d) = value
                        .split_once('/')
                        .ok_or_else(|| format!("churn: expected n/d, got `{value}`"))?;
                    let n = n.parse().map_err(|e| format!("churn: {e}"))?;
                    let d = d.parse().map_err(|e| format!("churn: {e}"))?;
                    Some(Ratio::new(n, d))
                })
            }
            _ => {}
        }
    }
    let missing = |k: &str| format!("missing key `{k}`");
    Ok(FeedStats {
        entry_count: entry_count.ok_or_else(|| missing("entry_count"))?,
        raw_line_count: raw_line_count.ok_or_else(|| missing("raw_line_count"))?,
        comment_line_count: comment_line_count.ok_or_else(|| missing("comment_line_count"))?,
        duplicate_lines: duplicate_lines.ok_or_else(|| missing("duplicate_lines"))?,
        diagnostic_count: diagnostic_count.ok_or_else(|| missing("diagnostics"))?,
        expanded_ips: expanded_ips.ok_or_else(|| missing("expanded_ips"))?,
        churn_vs_previous_day: churn.ok_or_else(|| missing("churn"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 3, d).unwrap()
    }

    #[test]
    fn save_load_and_churn_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let store = FeedStore::new(dir.path());
        let a = parse_blacklist(b"1.1.1.1\n2.2.2.2\n# c\n", "PN", day(13)).unwrap();
        let b = parse_blacklist(b"1.1.1.1\n3.3.3.0/24\n", "PN", day(14)).unwrap();

        let st = store.save(&a).unwrap();
        assert_eq!(st.churn_vs_previous_day, None);
        let st = store.save(&b).unwrap();
        assert_eq!(st.churn_vs_previous_day, Some(Ratio::new(2, 4)));

        assert!(store.snapshot_path("PN", day(13)).is_file());
        let reloaded = store.load("PN", day(14)).unwrap();
        assert_eq!(reloaded.entries(), b.entries());
        assert_eq!(store.load_stats("PN", day(14)).unwrap(), st);
        assert_eq!(store.feeds().unwrap(), ["PN"]);
        assert_eq!(store.dates("PN").unwrap(), [day(13), day(14)]);
        assert!(matches!(store.load("PN", day(15)), Err(BlacklistError::NotFound(_))));
    }

    #[test]
    fn out_of_order_save_updates_next_day_churn() {
        let dir = tempfile::tempdir().unwrap();
        let store = FeedStore::new(dir.path());
        let b = parse_blacklist(b"1.1.1.1\n", "ET", day(14)).unwrap();
        let a = parse_blacklist(b"2.2.2.2\n", "ET", day(13)).unwrap();
        store.save(&b).unwrap();
        assert_eq!(store.load_stats("ET", day(14)).unwrap().churn_vs_previous_day, None);
        store.save(&a).unwrap();
        assert_eq!(
            store.load_stats("ET", day(14)).unwrap().churn_vs_previous_day,
            Some(Ratio::new(2, 2))
        );
    }

    #[test]
    fn meta_rejects_garbage() {
        assert!(parse_meta("entry_count=x\n").is_err());
        assert!(parse_meta("nonsense\n").is_err());
        assert!(parse_meta("entry_count=1\n").unwrap_err().contains("missing"));
    }
}
