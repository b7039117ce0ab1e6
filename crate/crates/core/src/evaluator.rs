//! Blacklist effectiveness metrics.
//!
//! Every operation here is a pure function over immutable inputs. Rates are
//! [`Ratio`]s so that each reported percentage comes with the two integer
//! counts it was computed from; a zero denominator stays undefined.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blacklist_store::{union_feed, BlacklistError, BlacklistSnapshot};
use crate::flow_pipeline::{DailyFlowSet, Endpoint};
use crate::par;
use crate::prefix_index::{Family, IpAddress, IpPrefix};
use crate::ratio::Ratio;

/// Score at or below which a remote client counts as benign.
pub const DEFAULT_BENIGN_SCORE_MAX: u64 = 100;
/// Summed host score strictly above which a remote counts as alerted.
pub const DEFAULT_HIGH_SCORE_MIN: u64 = 5000;
pub const DEFAULT_AGGREGATION_BOUNDS: [u64; 2] = [8, 64];
pub const V6_GROUP_LEN: u8 = 56;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("feed `{feed}` is dated {feed_date}, ground truth is {truth_date}")]
    DateMismatch {
        feed: String,
        feed_date: NaiveDate,
        truth_date: NaiveDate,
    },
    #[error("union `{union}` references unknown feed `{feed}`")]
    UnknownUnionMember { union: String, feed: String },
    #[error("missing data for {0}")]
    MissingDay(NaiveDate),
    #[error("ground truth starts on {truth}, base feed is dated {base}")]
    BaseDateMismatch { base: NaiveDate, truth: NaiveDate },
    #[error("fresh feed `{found}` does not match base feed `{expected}`")]
    FeedMismatch { expected: String, found: String },
    #[error("aggregation bounds must be strictly increasing and positive")]
    BadBounds,
    #[error(transparent)]
    Blacklist(#[from] BlacklistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    Scanner,
    AlertedHighScore,
    LogAttacker,
}

impl fmt::Display for GroundTruthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroundTruthKind::Scanner => "scanner",
            GroundTruthKind::AlertedHighScore => "alerted_high_score",
            GroundTruthKind::LogAttacker => "log_attacker",
        })
    }
}

/// Malicious addresses observed on one network on one day.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub date: NaiveDate,
    pub network_name: String,
    pub kind: GroundTruthKind,
    pub ips: BTreeSet<IpAddress>,
}

/// A combined feed evaluated alongside its members, e.g. `PN+ET+dshield`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnionSpec {
    pub name: String,
    pub members: Vec<String>,
}

impl UnionSpec {
    /// Parses `a+b+c` into a union named `a+b+c`.
    pub fn parse(text: &str) -> Self {
        Self {
            name: text.to_string(),
            members: text.split('+').map(str::trim).map(str::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedMatch {
    pub feed: String,
    pub is_union: bool,
    pub rate: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchRateReport {
    pub date: NaiveDate,
    pub network_name: String,
    pub kind: GroundTruthKind,
    pub total: u64,
    pub rows: Vec<FeedMatch>,
}

impl MatchRateReport {
    pub fn rate(&self, feed: &str) -> Option<Ratio> {
        self.rows.iter().find(|r| r.feed == feed).map(|r| r.rate)
    }
}

fn matched(truth: &BTreeSet<IpAddress>, feed: &BlacklistSnapshot) -> u64 {
    truth.iter().filter(|ip| feed.contains(**ip)).count() as u64
}

/// Share of ground-truth addresses listed in each feed, plus requested
/// union rows.
pub fn match_rate(
    truth: &GroundTruth,
    feeds: &[&BlacklistSnapshot],
    unions: &[UnionSpec],
) -> Result<MatchRateReport, EvalError> {
    for f in feeds {
        if f.date() != truth.date {
            return Err(EvalError::DateMismatch {
                feed: f.feed_name().to_string(),
                feed_date: f.date(),
                truth_date: truth.date,
            });
        }
    }
    let mut combined = Vec::with_capacity(unions.len());
    for u in unions {
        let members = u
            .members
            .iter()
            .map(|m| {
                feeds
                    .iter()
                    .copied()
                    .find(|f| f.feed_name() == m)
                    .ok_or_else(|| EvalError::UnknownUnionMember {
                        union: u.name.clone(),
                        feed: m.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        combined.push(union_feed(&members, &u.name)?);
    }

    let total = truth.ips.len() as u64;
    let all: Vec<(&BlacklistSnapshot, bool)> = feeds
        .iter()
        .map(|f| (*f, false))
        .chain(combined.iter().map(|f| (f, true)))
        .collect();
    let rows = par::map_slice(&all, |(feed, is_union)| FeedMatch {
        feed: feed.feed_name().to_string(),
        is_union: *is_union,
        rate: Ratio::new(matched(&truth.ips, feed), total),
    });
    Ok(MatchRateReport {
        date: truth.date,
        network_name: truth.network_name.clone(),
        kind: truth.kind,
        total,
        rows,
    })
}

/// Multi-day averages for one feed. The mean only covers days with a defined
/// rate; the pooled rate sums numerators and denominators.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchSummary {
    pub feed: String,
    pub days: usize,
    pub defined_days: usize,
    pub mean_of_daily_rates: Option<f64>,
    pub pooled_rate: Ratio,
}

pub fn summarize_match_rates(reports: &[MatchRateReport]) -> Vec<MatchSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut per_feed: BTreeMap<String, Vec<Ratio>> = BTreeMap::new();
    for r in reports {
        for row in &r.rows {
            if !per_feed.contains_key(&row.feed) {
                order.push(row.feed.clone());
            }
            per_feed.entry(row.feed.clone()).or_default().push(row.rate);
        }
    }
    order
        .into_iter()
        .map(|feed| {
            let rates = &per_feed[&feed];
            let defined: Vec<f64> = rates.iter().filter_map(|r| r.fraction()).collect();
            let pooled = rates.iter().fold(Ratio::default(), |acc, r| {
                Ratio::new(acc.numerator + r.numerator, acc.denominator + r.denominator)
            });
            MatchSummary {
                days: rates.len(),
                defined_days: defined.len(),
                mean_of_daily_rates: (!defined.is_empty())
                    .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                pooled_rate: pooled,
                feed,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecayRow {
    pub offset: i64,
    pub date: NaiveDate,
    /// Rate with that day's own snapshot; `None` when it is unavailable.
    pub daily: Option<Ratio>,
    /// Rate with the base-day snapshot.
    pub stale: Ratio,
}

impl DecayRow {
    /// `stale - daily` as an exact numerator over the day's ground-truth
    /// size. `None` when the daily feed is unavailable.
    pub fn delta_matched(&self) -> Option<i64> {
        self.daily
            .map(|d| self.stale.numerator as i64 - d.numerator as i64)
    }

    pub fn delta(&self) -> Option<f64> {
        let n = self.delta_matched()?;
        (self.stale.denominator != 0).then(|| n as f64 / self.stale.denominator as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecayReport {
    pub feed: String,
    pub base_date: NaiveDate,
    pub rows: Vec<DecayRow>,
}

/// Compares each day's fresh snapshot against reusing the base-day snapshot.
/// Offset 0 always uses the base snapshot on both sides.
pub fn decay(
    base_feed: &BlacklistSnapshot,
    fresh_feeds: &BTreeMap<NaiveDate, BlacklistSnapshot>,
    ground_truth_by_date: &BTreeMap<NaiveDate, BTreeSet<IpAddress>>,
) -> Result<DecayReport, EvalError> {
    let base_date = base_feed.date();
    match ground_truth_by_date.keys().next() {
        Some(&first) if first != base_date => {
            return Err(EvalError::BaseDateMismatch {
                base: base_date,
                truth: first,
            })
        }
        None => return Err(EvalError::MissingDay(base_date)),
        _ => {}
    }
    for f in fresh_feeds.values() {
        if f.feed_name() != base_feed.feed_name() {
            return Err(EvalError::FeedMismatch {
                expected: base_feed.feed_name().to_string(),
                found: f.feed_name().to_string(),
            });
        }
    }
    let days: Vec<(&NaiveDate, &BTreeSet<IpAddress>)> = ground_truth_by_date.iter().collect();
    let rows = par::map_slice(&days, |(date, truth)| {
        let total = truth.len() as u64;
        let stale = Ratio::new(matched(truth, base_feed), total);
        let daily = if **date == base_date {
            Some(stale)
        } else {
            fresh_feeds
                .get(*date)
                .filter(|f| f.date() == **date)
                .map(|f| Ratio::new(matched(truth, f), total))
        };
        DecayRow {
            offset: (**date - base_date).num_days(),
            date: **date,
            daily,
            stale,
        }
    });
    Ok(DecayReport {
        feed: base_feed.feed_name().to_string(),
        base_date,
        rows,
    })
}

/// Remote client addresses whose highest per-flow score is at most
/// `benign_score_max`.
pub fn benign_remote_clients(day: &DailyFlowSet, benign_score_max: u64) -> BTreeSet<IpAddress> {
    let mut max_score: BTreeMap<IpAddress, u64> = BTreeMap::new();
    for f in day.flows() {
        if day.config().classify(f.client_ip) == Endpoint::Remote {
            let e = max_score.entry(f.client_ip).or_insert(0);
            *e = (*e).max(f.cyberscore);
        }
    }
    max_score
        .into_iter()
        .filter(|(_, s)| *s <= benign_score_max)
        .map(|(ip, _)| ip)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FalsePositiveReport {
    pub date: NaiveDate,
    pub network_name: String,
    pub benign_score_max: u64,
    pub benign_total: u64,
    /// `(feed, benign addresses listed in it)`.
    pub rows: Vec<(String, u64)>,
}

/// Benign remote clients that a feed would have blocked.
pub fn false_positive_overlap(
    day: &DailyFlowSet,
    feeds: &[&BlacklistSnapshot],
    benign_score_max: u64,
) -> FalsePositiveReport {
    let benign = benign_remote_clients(day, benign_score_max);
    let rows = par::map_slice(feeds, |f| (f.feed_name().to_string(), matched(&benign, f)));
    FalsePositiveReport {
        date: day.date(),
        network_name: day.network_name().to_string(),
        benign_score_max,
        benign_total: benign.len() as u64,
        rows,
    }
}

/// Remote addresses whose summed flow score over the day is strictly
/// greater than `score_min`. A flow's score is credited to every remote
/// endpoint of the flow.
pub fn high_score_hosts(day: &DailyFlowSet, score_min: u64) -> BTreeSet<IpAddress> {
    let mut sums: BTreeMap<IpAddress, u64> = BTreeMap::new();
    for f in day.flows() {
        for ip in [f.client_ip, f.server_ip] {
            if day.config().classify(ip) == Endpoint::Remote {
                *sums.entry(ip).or_insert(0) += f.cyberscore;
            }
        }
    }
    sums.into_iter()
        .filter(|(_, s)| *s > score_min)
        .map(|(ip, _)| ip)
        .collect()
}

pub fn high_score_coverage(
    day: &DailyFlowSet,
    feeds: &[&BlacklistSnapshot],
    score_min: u64,
    unions: &[UnionSpec],
) -> Result<MatchRateReport, EvalError> {
    let truth = GroundTruth {
        date: day.date(),
        network_name: day.network_name().to_string(),
        kind: GroundTruthKind::AlertedHighScore,
        ips: high_score_hosts(day, score_min),
    };
    match_rate(&truth, feeds, unions)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagationCurve {
    pub source_network: String,
    pub target_network: String,
    pub start: NaiveDate,
    /// `points[d]`: source day-0 scanners seen in the target within `d` days.
    pub points: Vec<Ratio>,
}

/// How many of the source network's day-0 scanners show up as scanners in
/// the target network on day 0..=d, for each d up to `horizon`.
pub fn propagation(
    source_network: &str,
    source: &BTreeMap<NaiveDate, BTreeSet<IpAddress>>,
    target_network: &str,
    target: &BTreeMap<NaiveDate, BTreeSet<IpAddress>>,
    horizon: u32,
) -> Result<PropagationCurve, EvalError> {
    let (&start, seeds) = source.iter().next().ok_or_else(|| {
        EvalError::MissingDay(target.keys().next().copied().unwrap_or(NaiveDate::MIN))
    })?;
    let total = seeds.len() as u64;
    let mut seen: BTreeSet<IpAddress> = BTreeSet::new();
    let mut points = Vec::with_capacity(horizon as usize + 1);
    for d in 0..=horizon {
        let date = start + chrono::Days::new(d as u64);
        let day_set = target.get(&date).ok_or(EvalError::MissingDay(date))?;
        seen.extend(seeds.intersection(day_set).copied());
        points.push(Ratio::new(seen.len() as u64, total));
    }
    Ok(PropagationCurve {
        source_network: source_network.to_string(),
        target_network: target_network.to_string(),
        start,
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub low: u64,
    /// Inclusive; `None` means unbounded.
    pub high: Option<u64>,
    pub groups: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationHistogram {
    pub family: Family,
    pub group_len: u8,
    pub total_groups: u64,
    /// Disjoint buckets covering every group size.
    pub buckets: Vec<Bucket>,
    /// `(bound, groups with at least bound addresses)` per configured bound.
    pub at_least: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationReport {
    pub v4: AggregationHistogram,
    pub v6: AggregationHistogram,
}

fn histogram(
    family: Family,
    group_len: u8,
    ips: impl Iterator<Item = IpAddress>,
    bounds: &[u64],
) -> AggregationHistogram {
    let mut groups: BTreeMap<IpPrefix, u64> = BTreeMap::new();
    for ip in ips {
        let p = IpPrefix::truncating(ip, group_len).expect("group length within family width");
        *groups.entry(p).or_insert(0) += 1;
    }
    let mut edges = vec![1u64];
    edges.extend(bounds.iter().copied().filter(|&b| b > 1));
    let mut buckets: Vec<Bucket> = edges
        .iter()
        .enumerate()
        .map(|(i, &low)| Bucket {
            low,
            high: edges.get(i + 1).map(|next| next - 1),
            groups: 0,
        })
        .collect();
    for &size in groups.values() {
        let i = edges.iter().rposition(|&low| size >= low).expect("sizes are >= 1");
        buckets[i].groups += 1;
    }
    let at_least = bounds
        .iter()
        .map(|&b| (b, groups.values().filter(|&&s| s >= b).count() as u64))
        .collect();
    AggregationHistogram {
        family,
        group_len,
        total_groups: groups.len() as u64,
        buckets,
        at_least,
    }
}

/// Groups addresses into /24 (IPv4) and /56 (IPv6) networks and histograms
/// the number of distinct addresses per network. Lower bounds are inclusive.
pub fn aggregate_slash24(
    ips: &BTreeSet<IpAddress>,
    bounds: &[u64],
) -> Result<AggregationReport, EvalError> {
    if bounds.is_empty() || bounds[0] == 0 || bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadBounds);
    }
    Ok(AggregationReport {
        v4: histogram(Family::V4, 24, ips.iter().copied().filter(|ip| ip.is_v4()), bounds),
        v6: histogram(
            Family::V6,
            V6_GROUP_LEN,
            ips.iter().copied().filter(|ip| !ip.is_v4()),
            bounds,
        ),
    })
}

/// Share of attackers that also appear among each network's remote
/// addresses.
pub fn cross_visit(
    attackers: &BTreeSet<IpAddress>,
    other_networks: &BTreeMap<String, BTreeSet<IpAddress>>,
) -> BTreeMap<String, Ratio> {
    let total = attackers.len() as u64;
    other_networks
        .iter()
        .map(|(name, remotes)| {
            let n = attackers.intersection(remotes).count() as u64;
            (name.clone(), Ratio::new(n, total))
        })
        .collect()
}

/// Server monitoring summary for one monitored server (or server network).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerSummary {
    pub server: String,
    pub date: NaiveDate,
    pub attackers: u64,
    /// Attackers listed in at least one feed.
    pub in_blacklist: Ratio,
    pub also_visited: BTreeMap<String, Ratio>,
}

pub fn server_summary(
    server: &str,
    date: NaiveDate,
    attackers: &BTreeSet<IpAddress>,
    feeds: &[&BlacklistSnapshot],
    other_networks: &BTreeMap<String, BTreeSet<IpAddress>>,
) -> ServerSummary {
    let listed = attackers
        .iter()
        .filter(|ip| feeds.iter().any(|f| f.contains(**ip)))
        .count() as u64;
    ServerSummary {
        server: server.to_string(),
        date,
        attackers: attackers.len() as u64,
        in_blacklist: Ratio::new(listed, attackers.len() as u64),
        also_visited: cross_visit(attackers, other_networks),
    }
}
