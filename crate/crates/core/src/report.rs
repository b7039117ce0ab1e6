//! Tabular rendering of metric results.
//!
//! Every [`Table`] renders two ways: CSV for downstream tools and aligned
//! text for reading. A rate column becomes three CSV columns
//! (`<name>_num`, `<name>_den`, `<name>`) and one text column such as
//! `50.0% (3/6)`, so each percentage can be checked against its counts.
//! Rendering is deterministic; nothing time-dependent is written.

use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::blacklist_store::{FeedStats, IntersectionMatrix};
use crate::evaluator::{
    AggregationHistogram, AggregationReport, DecayReport, FalsePositiveReport, MatchRateReport,
    MatchSummary, PropagationCurve, ServerSummary,
};
use crate::log_sentinel::AttackEvent;
use crate::ratio::Ratio;
use crate::scan_detect::ScannerVerdict;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Rate(Ratio),
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<Ratio> for Cell {
    fn from(r: Ratio) -> Self {
        Cell::Rate(r)
    }
}

fn text<T: ToString>(v: T) -> Cell {
    Cell::Text(v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Text,
    Rate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    columns: Vec<(String, ColumnKind)>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn column(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Text));
        self
    }

    pub fn rate_column(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Rate));
        self
    }

    /// Appends a row. Panics if the cells do not match the column layout.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width for table `{}`", self.title);
        for (cell, (name, kind)) in row.iter().zip(&self.columns) {
            let ok = matches!(
                (cell, kind),
                (Cell::Text(_), ColumnKind::Text) | (Cell::Rate(_), ColumnKind::Rate)
            );
            assert!(ok, "cell type mismatch in column `{name}`");
        }
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = Vec::new();
        for (name, kind) in &self.columns {
            match kind {
                ColumnKind::Text => header.push(name.clone()),
                ColumnKind::Rate => {
                    header.push(format!("{name}_num"));
                    header.push(format!("{name}_den"));
                    header.push(name.clone());
                }
            }
        }
        w.write_record(&header).expect("in-memory csv write");
        for row in &self.rows {
            let mut rec = Vec::with_capacity(header.len());
            for cell in row {
                match cell {
                    Cell::Text(s) => rec.push(s.clone()),
                    Cell::Rate(r) => {
                        rec.push(r.numerator.to_string());
                        rec.push(r.denominator.to_string());
                        rec.push(r.fraction_text());
                    }
                }
            }
            w.write_record(&rec).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
    }

    pub fn to_text(&self) -> String {
        let rendered: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| match c {
                        Cell::Text(s) => s.clone(),
                        Cell::Rate(r) => r.to_string(),
                    })
                    .collect()
            })
            .collect();
        let mut widths: Vec<usize> = self.columns.iter().map(|(n, _)| n.chars().count()).collect();
        for row in &rendered {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }

        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        let line = |out: &mut String, cells: Vec<&str>| {
            let mut s = String::new();
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                // first column left-aligned, the rest right-aligned
                if i == 0 {
                    write!(s, "{cell:<w$}").unwrap();
                } else {
                    write!(s, "{cell:>w$}").unwrap();
                }
            }
            writeln!(out, "{}", s.trim_end()).unwrap();
        };
        line(&mut out, self.columns.iter().map(|(n, _)| n.as_str()).collect());
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, rule.iter().map(String::as_str).collect());
        if rendered.is_empty() {
            writeln!(out, "(no rows)").unwrap();
        }
        for row in &rendered {
            line(&mut out, row.iter().map(String::as_str).collect());
        }
        out
    }
}

/// Several tables rendered as one text document, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Document {
    pub tables: Vec<(String, Table)>,
}

impl Document {
    /// `slug` names the CSV file the table is written to.
    pub fn add(&mut self, slug: impl Into<String>, table: Table) {
        self.tables.push((slug.into(), table));
    }

    pub fn to_text(&self) -> String {
        self.tables
            .iter()
            .map(|(_, t)| t.to_text())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Writes `<slug>.csv` for every table and the text rendering as
    /// `text_name` into `dir`.
    pub fn write_to(&self, dir: &std::path::Path, text_name: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (slug, t) in &self.tables {
            std::fs::write(dir.join(format!("{slug}.csv")), t.to_csv())?;
        }
        std::fs::write(dir.join(text_name), self.to_text())
    }
}

pub fn feed_stats_table(rows: &[(String, NaiveDate, FeedStats)]) -> Table {
    let mut t = Table::new("Blacklist feeds")
        .column("feed")
        .column("date")
        .column("entries")
        .column("lines")
        .column("comments")
        .column("duplicates")
        .column("skipped")
        .column("expanded_ips")
        .rate_column("churn");
    for (name, date, s) in rows {
        // a feed's first day has no churn; 0/0 renders as undefined
        let churn = s.churn_vs_previous_day.unwrap_or_default();
        t.push(vec![
            text(name),
            text(date),
            text(s.entry_count),
            text(s.raw_line_count),
            text(s.comment_line_count),
            text(s.duplicate_lines),
            text(s.diagnostic_count),
            text(&s.expanded_ips),
            churn.into(),
        ]);
    }
    t
}

/// Mean churn per feed over consecutive-day pairs.
pub fn churn_summary_table(rows: &[(String, NaiveDate, FeedStats)]) -> Table {
    let mut t = Table::new("Feed update rate")
        .column("feed")
        .column("day_pairs")
        .rate_column("pooled_churn")
        .column("mean_daily_churn");
    let mut order: Vec<&str> = Vec::new();
    for (name, _, _) in rows {
        if !order.contains(&name.as_str()) {
            order.push(name);
        }
    }
    for name in order {
        let churns: Vec<Ratio> = rows
            .iter()
            .filter(|(n, _, _)| n == name)
            .filter_map(|(_, _, s)| s.churn_vs_previous_day)
            .collect();
        let pooled = churns.iter().fold(Ratio::default(), |a, r| {
            Ratio::new(a.numerator + r.numerator, a.denominator + r.denominator)
        });
        let defined: Vec<f64> = churns.iter().filter_map(|r| r.fraction()).collect();
        let mean = if defined.is_empty() {
            "undefined".to_string()
        } else {
            format!("{:.1}%", 100.0 * defined.iter().sum::<f64>() / defined.len() as f64)
        };
        t.push(vec![text(name), text(churns.len()), pooled.into(), text(mean)]);
    }
    t
}

pub fn intersection_table(date: NaiveDate, m: &IntersectionMatrix) -> Table {
    let mut t = Table::new(format!(
        "Contained entries on {date} (row feed entries fully covered by column feed)"
    ))
    .column("feed");
    for name in &m.feed_names {
        t = t.column(name);
    }
    for (i, name) in m.feed_names.iter().enumerate() {
        let mut row = vec![text(name)];
        for cell in &m.cells[i] {
            row.push(match cell {
                Some(n) => text(n),
                None => text("-"),
            });
        }
        t.push(row);
    }
    t
}

pub fn match_table(title: &str, reports: &[MatchRateReport]) -> Table {
    let mut t = Table::new(title)
        .column("network")
        .column("date")
        .column("truth")
        .column("feed")
        .column("union")
        .rate_column("match");
    for r in reports {
        for row in &r.rows {
            t.push(vec![
                text(&r.network_name),
                text(r.date),
                text(r.kind),
                text(&row.feed),
                text(if row.is_union { "yes" } else { "no" }),
                row.rate.into(),
            ]);
        }
    }
    t
}

pub fn match_summary_table(title: &str, summaries: &[MatchSummary]) -> Table {
    let mut t = Table::new(title)
        .column("feed")
        .column("days")
        .column("defined_days")
        .column("mean_of_daily_rates")
        .rate_column("pooled_rate");
    for s in summaries {
        let mean = match s.mean_of_daily_rates {
            Some(m) => format!("{:.1}%", m * 100.0),
            None => "undefined".into(),
        };
        t.push(vec![
            text(&s.feed),
            text(s.days),
            text(s.defined_days),
            text(mean),
            s.pooled_rate.into(),
        ]);
    }
    t
}

pub fn decay_table(network: &str, report: &DecayReport) -> Table {
    let mut t = Table::new(format!(
        "Decay of {} on {network} (base {})",
        report.feed, report.base_date
    ))
    .column("offset")
    .column("date")
    .rate_column("daily")
    .rate_column("stale")
    .column("delta_matched")
    .column("delta");
    for r in &report.rows {
        let (daily, delta_matched, delta) = match r.daily {
            Some(d) => (
                d,
                r.delta_matched().map_or("undefined".into(), |n| n.to_string()),
                r.delta()
                    .map_or("undefined".into(), |f| format!("{:.1}%", f * 100.0)),
            ),
            None => (Ratio::default(), "unavailable".into(), "unavailable".into()),
        };
        t.push(vec![
            text(r.offset),
            text(r.date),
            daily.into(),
            r.stale.into(),
            text(delta_matched),
            text(delta),
        ]);
    }
    t
}

pub fn propagation_table(curves: &[PropagationCurve]) -> Table {
    let mut t = Table::new("Scanner propagation")
        .column("source")
        .column("target")
        .column("start")
        .column("day")
        .rate_column("seen");
    for c in curves {
        for (d, p) in c.points.iter().enumerate() {
            t.push(vec![
                text(&c.source_network),
                text(&c.target_network),
                text(c.start),
                text(d),
                (*p).into(),
            ]);
        }
    }
    t
}

pub fn false_positive_table(reports: &[FalsePositiveReport]) -> Table {
    let mut t = Table::new("Benign remote clients listed in feeds")
        .column("network")
        .column("date")
        .column("benign_score_max")
        .column("feed")
        .rate_column("listed");
    for r in reports {
        for (feed, n) in &r.rows {
            t.push(vec![
                text(&r.network_name),
                text(r.date),
                text(r.benign_score_max),
                text(feed),
                Ratio::new(*n, r.benign_total).into(),
            ]);
        }
    }
    t
}

fn bucket_label(low: u64, high: Option<u64>) -> String {
    match high {
        Some(h) if h == low => low.to_string(),
        Some(h) => format!("{low}..{h}"),
        None => format!(">={low}"),
    }
}

fn push_histogram(t: &mut Table, label: &str, h: &AggregationHistogram) {
    let family = match h.family {
        crate::prefix_index::Family::V4 => "ipv4",
        crate::prefix_index::Family::V6 => "ipv6",
    };
    for b in &h.buckets {
        t.push(vec![
            text(label),
            text(format!("{family}/{}", h.group_len)),
            text(bucket_label(b.low, b.high)),
            Ratio::new(b.groups, h.total_groups).into(),
        ]);
    }
    for (bound, n) in &h.at_least {
        t.push(vec![
            text(label),
            text(format!("{family}/{}", h.group_len)),
            text(format!("at least {bound}")),
            Ratio::new(*n, h.total_groups).into(),
        ]);
    }
}

pub fn aggregation_table(sets: &[(String, AggregationReport)]) -> Table {
    let mut t = Table::new("Addresses per network")
        .column("set")
        .column("grouping")
        .column("size")
        .rate_column("networks");
    for (label, r) in sets {
        push_histogram(&mut t, label, &r.v4);
        push_histogram(&mut t, label, &r.v6);
    }
    t
}

pub fn server_summary_table(rows: &[ServerSummary]) -> Table {
    let mut networks: Vec<&str> = Vec::new();
    for r in rows {
        for n in r.also_visited.keys() {
            if !networks.contains(&n.as_str()) {
                networks.push(n);
            }
        }
    }
    networks.sort_unstable();
    let mut t = Table::new("Server monitoring")
        .column("server")
        .column("date")
        .column("attackers")
        .rate_column("in_blacklist");
    for n in &networks {
        t = t.rate_column(&format!("also_visited_{n}"));
    }
    for r in rows {
        let mut row = vec![
            text(&r.server),
            text(r.date),
            text(r.attackers),
            r.in_blacklist.into(),
        ];
        for n in &networks {
            // a network not measured for this row has nothing to divide by
            row.push(r.also_visited.get(*n).copied().unwrap_or_default().into());
        }
        t.push(row);
    }
    t
}

pub fn scanner_table(verdicts: &[ScannerVerdict]) -> Table {
    let mut t = Table::new("Scanners")
        .column("network")
        .column("date")
        .column("remote_ip")
        .column("distinct_hosts")
        .column("flows");
    for v in verdicts {
        t.push(vec![
            text(&v.network_name),
            text(v.date),
            text(v.remote_ip),
            text(v.distinct_receive_only_contacted),
            text(v.evidence_flow_count),
        ]);
    }
    t
}

pub fn attack_event_table(network: &str, events: &[AttackEvent]) -> Table {
    let mut t = Table::new("Attack events")
        .column("network")
        .column("date")
        .column("remote_ip")
        .column("kind")
        .column("evidence")
        .column("services");
    for e in events {
        let services: Vec<&str> = e.services.iter().map(String::as_str).collect();
        t.push(vec![
            text(network),
            text(e.date),
            text(e.remote_ip),
            text(e.kind),
            text(e.evidence_count),
            text(services.join(";")),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let mut t = Table::new("demo").column("feed").rate_column("match");
        t.push(vec!["PN".into(), Ratio::new(3, 6).into()]);
        t.push(vec!["ET".into(), Ratio::new(0, 0).into()]);
        t
    }

    #[test]
    fn csv_expands_rates() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "feed,match_num,match_den,match");
        assert_eq!(lines[1], "PN,3,6,0.500000");
        assert_eq!(lines[2], "ET,0,0,undefined");
    }

    #[test]
    fn text_shows_fraction_and_counts() {
        let txt = sample().to_text();
        assert!(txt.contains("50.0% (3/6)"));
        assert!(txt.contains("undefined (0/0)"));
        assert!(txt.starts_with("demo\n"));
    }

    #[test]
    fn csv_quotes_commas() {
        let mut t = Table::new("q").column("a");
        t.push(vec!["x,y".into()]);
        assert_eq!(t.to_csv().lines().nth(1), Some("\"x,y\""));
    }

    #[test]
    #[should_panic(expected = "row width")]
    fn row_width_checked() {
        let mut t = Table::new("w").column("a").column("b");
        t.push(vec!["only one".into()]);
    }
}
