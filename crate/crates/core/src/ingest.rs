//! Raw-log parsing and the preprocessing pipeline.
//!
//! The pipeline order is fixed: [`dedup_purchases`] → [`remove_leaked_views`]
//! → [`filter_activity`] → [`build_dataset`]. Each stage is idempotent on its
//! own output. Session extraction and per-user weights operate on the built
//! dataset.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::types::{Behavior, FeedbackDataset, Interaction};

/// Seconds per day; used to detect date-only timestamp granularity.
const DAY_SECONDS: i64 = 86_400;

/// How [`parse_interactions`] treats malformed lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsePolicy {
    /// Any malformed line aborts the parse (default).
    Strict,
    /// Malformed lines are skipped and reported back.
    Lenient,
}

/// Result of a lenient or fully clean parse.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub events: Vec<Interaction>,
    /// `(line number, reason)` for every skipped line, 1-based, file order.
    pub skipped: Vec<(usize, String)>,
}

/// Ingest failure.
#[derive(Debug, Clone, PartialEq)]
pub enum IngestError {
    /// Strict-mode parse failure; carries the first offenders (at most 10)
    /// and the total count.
    Malformed { offenders: Vec<(usize, String)>, total: usize },
    /// Activity filtering removed every purchase.
    EmptyDataset,
    /// Session extraction is meaningless on date-granular timestamps.
    DayGranularTimestamps,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::Malformed { offenders, total } => {
                writeln!(f, "{total} malformed line(s); first {}:", offenders.len())?;
                for (line, reason) in offenders {
                    writeln!(f, "  line {line}: {reason}")?;
                }
                Ok(())
            }
            IngestError::EmptyDataset => {
                write!(f, "activity filter left no purchases; thresholds too aggressive for this log")
            }
            IngestError::DayGranularTimestamps => {
                write!(f, "timestamps are day-granular; sessions cannot be extracted")
            }
        }
    }
}

impl core::error::Error for IngestError {}

fn parse_line(line: &str) -> Result<Interaction, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item id".to_string());
    }
    let behavior = match fields[2].to_ascii_lowercase().as_str() {
        "purchase" => Behavior::Purchase,
        "view" => Behavior::View,
        other => return Err(format!("unknown behavior token `{other}`")),
    };
    let timestamp: i64 = fields[3]
        .parse()
        .map_err(|_| format!("invalid timestamp `{}`", fields[3]))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    Ok(Interaction {
        user: fields[0].to_string(),
        item: fields[1].to_string(),
        behavior,
        timestamp,
    })
}

fn is_header(line: &str) -> bool {
    let fields: Vec<String> =
        line.split(',').map(|f| f.trim().to_ascii_lowercase()).collect();
    fields == ["user_id", "item_id", "behavior", "timestamp"]
}

/// Parses delimited interaction text: `user_id,item_id,behavior,timestamp`,
/// one record per line, optional header, behavior `purchase`/`view`
/// (case-insensitive). Records come back in file order; blank lines are
/// ignored.
pub fn parse_interactions(input: &str, policy: ParsePolicy) -> Result<ParsedLog, IngestError> {
    let mut events = Vec::new();
    let mut skipped = Vec::new();

    for (idx, raw) in input.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if idx == 0 && is_header(line) {
            continue;
        }
        match parse_line(line) {
            Ok(event) => events.push(event),
            Err(reason) => skipped.push((idx + 1, reason)),
        }
    }

    if policy == ParsePolicy::Strict && !skipped.is_empty() {
        let total = skipped.len();
        skipped.truncate(10);
        return Err(IngestError::Malformed { offenders: skipped, total });
    }
    Ok(ParsedLog { events, skipped })
}

/// Merges repeated purchases of the same `(user, item)` into one purchase
/// carrying the earliest timestamp, placed at the first occurrence. Views
/// pass through untouched.
pub fn dedup_purchases(events: &[Interaction]) -> Vec<Interaction> {
    let mut earliest: BTreeMap<(&str, &str), i64> = BTreeMap::new();
    for e in events {
        if e.behavior == Behavior::Purchase {
            earliest
                .entry((e.user.as_str(), e.item.as_str()))
                .and_modify(|ts| *ts = (*ts).min(e.timestamp))
                .or_insert(e.timestamp);
        }
    }

    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    let mut out = Vec::with_capacity(events.len());
    for e in events {
        match e.behavior {
            Behavior::View => out.push(e.clone()),
            Behavior::Purchase => {
                let key = (e.user.as_str(), e.item.as_str());
                if seen.insert(key) {
                    let mut merged = e.clone();
                    merged.timestamp = earliest[&key];
                    out.push(merged);
                }
            }
        }
    }
    out
}

/// Drops every view on a `(user, item)` pair that is purchased anywhere in
/// the log, regardless of event order. Purchases pass through untouched.
pub fn remove_leaked_views(events: &[Interaction]) -> Vec<Interaction> {
    let purchased: BTreeSet<(&str, &str)> = events
        .iter()
        .filter(|e| e.behavior == Behavior::Purchase)
        .map(|e| (e.user.as_str(), e.item.as_str()))
        .collect();

    events
        .iter()
        .filter(|e| {
            e.behavior == Behavior::Purchase
                || !purchased.contains(&(e.user.as_str(), e.item.as_str()))
        })
        .cloned()
        .collect()
}

/// Repeatedly removes users with fewer than `min_user_purchases` purchases
/// and items with fewer than `min_item_purchases` purchases until a fixed
/// point; all events of a removed user or item are dropped. The fixed point
/// is unique, so removal order does not matter.
pub fn filter_activity(
    events: &[Interaction],
    min_user_purchases: usize,
    min_item_purchases: usize,
) -> Result<Vec<Interaction>, IngestError> {
    let mut kept: Vec<Interaction> = events.to_vec();

    loop {
        let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &kept {
            if e.behavior == Behavior::Purchase {
                *user_counts.entry(e.user.as_str()).or_insert(0) += 1;
                *item_counts.entry(e.item.as_str()).or_insert(0) += 1;
            }
        }

        let dead_users: BTreeSet<String> = kept
            .iter()
            .map(|e| e.user.as_str())
            .filter(|u| user_counts.get(u).copied().unwrap_or(0) < min_user_purchases)
            .map(str::to_string)
            .collect();
        let dead_items: BTreeSet<String> = kept
            .iter()
            .map(|e| e.item.as_str())
            .filter(|i| item_counts.get(i).copied().unwrap_or(0) < min_item_purchases)
            .map(str::to_string)
            .collect();

        if dead_users.is_empty() && dead_items.is_empty() {
            break;
        }
        kept.retain(|e| !dead_users.contains(&e.user) && !dead_items.contains(&e.item));
    }

    if !kept.iter().any(|e| e.behavior == Behavior::Purchase) {
        return Err(IngestError::EmptyDataset);
    }
    Ok(kept)
}

/// Bijective maps between external string ids and dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMaps {
    /// External user id per dense index.
    pub users: Vec<String>,
    /// External item id per dense index.
    pub items: Vec<String>,
}

impl IdMaps {
    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.iter().position(|u| u == id)
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.items.iter().position(|i| i == id)
    }
}

/// Assigns dense indices in first-appearance order and materializes the
/// per-user purchased/viewed sets with their timestamps.
///
/// Repeat views of the same `(user, item)` collapse to one set entry keeping
/// the earliest timestamp (purchases were already merged by
/// [`dedup_purchases`]). The day-granularity flag is set when every
/// timestamp falls on a day boundary, or when forced by the caller.
pub fn build_dataset(
    events: &[Interaction],
    force_day_granular: bool,
) -> (FeedbackDataset, IdMaps) {
    let mut user_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut item_index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();

    for e in events {
        if !user_index.contains_key(e.user.as_str()) {
            user_index.insert(e.user.as_str(), users.len());
            users.push(e.user.clone());
        }
        if !item_index.contains_key(e.item.as_str()) {
            item_index.insert(e.item.as_str(), items.len());
            items.push(e.item.clone());
        }
    }

    let num_users = users.len();
    let num_items = items.len();
    let mut purchase_maps: Vec<BTreeMap<u32, i64>> = alloc::vec![BTreeMap::new(); num_users];
    let mut view_maps: Vec<BTreeMap<u32, i64>> = alloc::vec![BTreeMap::new(); num_users];

    for e in events {
        let u = user_index[e.user.as_str()];
        let i = item_index[e.item.as_str()] as u32;
        let map = match e.behavior {
            Behavior::Purchase => &mut purchase_maps[u],
            Behavior::View => &mut view_maps[u],
        };
        map.entry(i)
            .and_modify(|ts| *ts = (*ts).min(e.timestamp))
            .or_insert(e.timestamp);
    }

    let day_granular = force_day_granular
        || (!events.is_empty() && events.iter().all(|e| e.timestamp % DAY_SECONDS == 0));

    let mut data = FeedbackDataset::empty(num_users, num_items);
    data.timestamps_day_granular = day_granular;
    for u in 0..num_users {
        for (&item, &ts) in &purchase_maps[u] {
            data.purchases[u].push(item);
            data.purchase_timestamps[u].push(ts);
        }
        for (&item, &ts) in &view_maps[u] {
            data.views[u].push(item);
            data.view_timestamps[u].push(ts);
        }
    }

    (data, IdMaps { users, items })
}

/// A maximal run of one user's interactions with consecutive gaps of at most
/// `d` seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user: usize,
    pub start_ts: i64,
    pub end_ts: i64,
    /// Distinct viewed item indices, ascending.
    pub viewed: Vec<u32>,
    /// Distinct purchased item indices, ascending.
    pub purchased: Vec<u32>,
}

/// One timestamped event of a single user, dense-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionEvent {
    pub item: u32,
    pub behavior: Behavior,
    pub timestamp: i64,
}

/// Splits one user's time-sorted events into sessions: a new session starts
/// exactly when the gap to the previous event exceeds `gap_seconds`
/// (a gap equal to the threshold still joins).
pub fn extract_sessions(
    user: usize,
    events: &[SessionEvent],
    gap_seconds: i64,
    timestamps_day_granular: bool,
) -> Result<Vec<Session>, IngestError> {
    if timestamps_day_granular {
        return Err(IngestError::DayGranularTimestamps);
    }
    debug_assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

    let mut sessions: Vec<Session> = Vec::new();
    for e in events {
        let start_new = match sessions.last() {
            Some(s) => e.timestamp - s.end_ts > gap_seconds,
            None => true,
        };
        if start_new {
            sessions.push(Session {
                user,
                start_ts: e.timestamp,
                end_ts: e.timestamp,
                viewed: Vec::new(),
                purchased: Vec::new(),
            });
        }
        let s = sessions.last_mut().unwrap();
        s.end_ts = e.timestamp;
        let set = match e.behavior {
            Behavior::Purchase => &mut s.purchased,
            Behavior::View => &mut s.viewed,
        };
        if let Err(pos) = set.binary_search(&e.item) {
            set.insert(pos, e.item);
        }
    }
    Ok(sessions)
}

/// Session-averaged view/purchase ratio `A_u`.
///
/// Sessions without purchases are excluded from the mean; when no session
/// qualifies the ratio falls back to the user's global `|V_u| / |S_u|`.
/// Callers guarantee `total_purchases >= 1`.
pub fn view_purchase_ratio(
    sessions: &[Session],
    total_views: usize,
    total_purchases: usize,
) -> f64 {
    assert!(total_purchases >= 1, "view_purchase_ratio requires at least one purchase");

    let mut sum = 0.0;
    let mut qualifying = 0usize;
    for s in sessions {
        if !s.purchased.is_empty() {
            sum += s.viewed.len() as f64 / s.purchased.len() as f64;
            qualifying += 1;
        }
    }
    if qualifying > 0 {
        sum / qualifying as f64
    } else {
        total_views as f64 / total_purchases as f64
    }
}

/// `alpha_u = A_u^beta / (A_u^beta + 1)`, in `[0, 1)`.
pub fn user_weight(ratio: f64, beta: f64) -> f64 {
    debug_assert!(ratio >= 0.0 && beta > 0.0);
    let powered = libm::pow(ratio, beta);
    powered / (powered + 1.0)
}

/// Per-user session ratios and the derived loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UserWeights {
    /// `A_u` per user.
    pub ratio: Vec<f64>,
    /// `alpha_u` per user.
    pub alpha: Vec<f64>,
}

/// Computes `A_u` and `alpha_u` for every user of a dataset by replaying its
/// timestamped events through session extraction.
pub fn compute_user_weights(
    data: &FeedbackDataset,
    beta: f64,
    session_gap_seconds: i64,
) -> Result<UserWeights, IngestError> {
    if data.timestamps_day_granular {
        return Err(IngestError::DayGranularTimestamps);
    }

    let mut ratio = Vec::with_capacity(data.num_users);
    let mut alpha = Vec::with_capacity(data.num_users);
    for u in 0..data.num_users {
        let mut events: Vec<SessionEvent> = Vec::with_capacity(
            data.purchases[u].len() + data.views[u].len(),
        );
        for (&item, &ts) in data.purchases[u].iter().zip(&data.purchase_timestamps[u]) {
            events.push(SessionEvent { item, behavior: Behavior::Purchase, timestamp: ts });
        }
        for (&item, &ts) in data.views[u].iter().zip(&data.view_timestamps[u]) {
            events.push(SessionEvent { item, behavior: Behavior::View, timestamp: ts });
        }
        events.sort_by_key(|e| (e.timestamp, e.item, e.behavior == Behavior::View));

        let sessions = extract_sessions(u, &events, session_gap_seconds, false)?;
        let a = view_purchase_ratio(&sessions, data.views[u].len(), data.purchases[u].len());
        ratio.push(a);
        alpha.push(user_weight(a, beta));
    }
    Ok(UserWeights { ratio, alpha })
}
