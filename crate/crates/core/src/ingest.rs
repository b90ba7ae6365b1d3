//! Event parsing, cleaning, and sessionization.
//!
//! The raw log is delimiter-separated text with a configurable column
//! layout. Events are grouped per user, cleaned (short-dwell or
//! low-rating events dropped depending on the dataset mode), cut into
//! sessions at app boundaries and idle gaps, optionally length-capped
//! and merged, and finally projected onto the auxiliary views through
//! the item attribute maps.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{DatasetMode, View};

/// One interaction record.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub user_id: String,
    pub item_id: String,
    pub category_id: Option<String>,
    pub shop_id: Option<String>,
    /// Seconds since epoch.
    pub timestamp: i64,
    /// Time spent after the click, milliseconds. Absent for logs that
    /// do not record it; absent dwell never triggers the dwell filter.
    pub dwell_ms: Option<i64>,
    /// Explicit score, for ratings-mode logs.
    pub rating: Option<f64>,
}

/// A contiguous, cleaned run of one user's behaviors in one view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: String,
    pub view: View,
    /// Never empty; no two consecutive entries are equal.
    pub nodes: Vec<String>,
    pub start_ts: i64,
    pub end_ts: i64,
}

/// Cleaning and splitting thresholds. Construct with [`SessionRules::clicks`]
/// or [`SessionRules::ratings`] and override fields as needed.
#[derive(Debug, Clone)]
pub struct SessionRules {
    pub mode: DatasetMode,
    /// Clicks mode: drop events whose recorded dwell is below this.
    pub min_dwell_ms: i64,
    /// Ratings mode: drop events rated below this.
    pub min_rating: f64,
    /// A gap of at least this many seconds starts a new session.
    pub idle_split_s: i64,
    /// Merge consecutive sessions whose gap is below this. `None` disables
    /// merging (ratings mode, where it would undo the length cap).
    pub merge_gap_s: Option<i64>,
    /// Split sessions longer than this at the cap, repeatedly.
    pub max_len: Option<usize>,
}

impl SessionRules {
    /// Dwell-filtered click logs: 2 s dwell floor, 1 h idle split,
    /// 30 min session merge.
    pub fn clicks() -> Self {
        SessionRules {
            mode: DatasetMode::Clicks,
            min_dwell_ms: 2000,
            min_rating: 0.0,
            idle_split_s: 3600,
            merge_gap_s: Some(1800),
            max_len: None,
        }
    }

    /// Explicit-rating logs: ratings below 3 dropped, sessions split at
    /// a one-year idle gap and capped at 50 events.
    pub fn ratings() -> Self {
        SessionRules {
            mode: DatasetMode::Ratings,
            min_dwell_ms: 0,
            min_rating: 3.0,
            idle_split_s: 365 * 24 * 3600,
            merge_gap_s: None,
            max_len: Some(50),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.idle_split_s <= 0 {
            return Err(Error::Config("idle_split_s must be positive".into()));
        }
        if let Some(gap) = self.merge_gap_s {
            if gap <= 0 {
                return Err(Error::Config("merge_gap_s must be positive".into()));
            }
            if gap >= self.idle_split_s {
                return Err(Error::Config(format!(
                    "merge_gap_s ({gap}) must be smaller than idle_split_s ({})",
                    self.idle_split_s
                )));
            }
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// One column of the input log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    UserId,
    ItemId,
    CategoryId,
    ShopId,
    Timestamp,
    DwellMs,
    Rating,
    /// Column present in the file but ignored.
    Skip,
}

impl Field {
    fn parse(name: &str) -> Result<Field> {
        Ok(match name {
            "user_id" => Field::UserId,
            "item_id" => Field::ItemId,
            "category_id" => Field::CategoryId,
            "shop_id" => Field::ShopId,
            "timestamp" => Field::Timestamp,
            "dwell_ms" => Field::DwellMs,
            "rating" => Field::Rating,
            "skip" | "-" => Field::Skip,
            other => return Err(Error::Config(format!("unknown column {other:?}"))),
        })
    }
}

/// Column layout of the input log.
#[derive(Debug, Clone)]
pub struct Schema {
    pub delimiter: char,
    pub columns: Vec<Field>,
}

impl Schema {
    /// Parse a comma-separated column list, e.g.
    /// `user_id,item_id,category_id,timestamp,dwell_ms`.
    /// `user_id`, `item_id`, and `timestamp` are required.
    pub fn from_column_list(list: &str, delimiter: char) -> Result<Schema> {
        let columns: Vec<Field> = list
            .split(',')
            .map(|c| Field::parse(c.trim()))
            .collect::<Result<_>>()?;
        let schema = Schema { delimiter, columns };
        for required in [Field::UserId, Field::ItemId, Field::Timestamp] {
            match schema.columns.iter().filter(|&&f| f == required).count() {
                1 => {}
                0 => {
                    return Err(Error::Config(format!(
                        "required column missing from schema: {required:?}"
                    )))
                }
                _ => {
                    return Err(Error::Config(format!(
                        "column declared more than once: {required:?}"
                    )))
                }
            }
        }
        Ok(schema)
    }
}

/// Parse a raw log. Events come back grouped by user and time-sorted
/// (stable, so equal timestamps keep input order). Malformed rows are
/// counted and skipped, not fatal.
pub fn parse_events(
    source: impl BufRead,
    schema: &Schema,
) -> Result<(BTreeMap<String, Vec<Event>>, u64)> {
    let mut by_user: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    let mut skipped = 0u64;
    for line in source.lines() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.is_empty() {
            continue;
        }
        match parse_row(&line, schema) {
            Some(ev) => by_user.entry(ev.user_id.clone()).or_default().push(ev),
            None => skipped += 1,
        }
    }
    for events in by_user.values_mut() {
        events.sort_by_key(|e| e.timestamp);
    }
    Ok((by_user, skipped))
}

fn parse_row(line: &str, schema: &Schema) -> Option<Event> {
    let mut cells = line.split(schema.delimiter);
    let mut user_id = None;
    let mut item_id = None;
    let mut category_id = None;
    let mut shop_id = None;
    let mut timestamp = None;
    let mut dwell_ms = None;
    let mut rating = None;
    for &field in &schema.columns {
        let cell = cells.next()?;
        match field {
            Field::UserId => user_id = Some(cell.to_string()),
            Field::ItemId => item_id = Some(cell.to_string()),
            Field::CategoryId if !cell.is_empty() => category_id = Some(cell.to_string()),
            Field::ShopId if !cell.is_empty() => shop_id = Some(cell.to_string()),
            Field::Timestamp => timestamp = Some(cell.parse::<i64>().ok()?),
            Field::DwellMs if !cell.is_empty() => dwell_ms = Some(cell.parse::<i64>().ok()?),
            Field::Rating if !cell.is_empty() => rating = Some(cell.parse::<f64>().ok()?),
            _ => {}
        }
    }
    let timestamp = timestamp?;
    if timestamp < 0 || dwell_ms.is_some_and(|d| d < 0) {
        return None;
    }
    Some(Event {
        user_id: user_id?,
        item_id: item_id?,
        category_id,
        shop_id,
        timestamp,
        dwell_ms,
        rating,
    })
}

/// Drop noisy events. Clicks mode removes events whose recorded dwell is
/// below the floor; ratings mode removes events rated below the floor.
/// Events missing the filtered field are kept. Order is preserved.
pub fn clean_events(events: &[Event], rules: &SessionRules) -> Vec<Event> {
    events
        .iter()
        .filter(|e| match rules.mode {
            DatasetMode::Clicks => e.dwell_ms.is_none_or(|d| d >= rules.min_dwell_ms),
            DatasetMode::Ratings => e.rating.is_none_or(|r| r >= rules.min_rating),
        })
        .cloned()
        .collect()
}

/// Cut one user's cleaned events into item-view sessions.
///
/// Cuts happen at every app boundary (a boundary timestamp `b` separates
/// events with `ts < b` from `ts >= b`) and at every idle gap of at least
/// `idle_split_s`. Sessions longer than `max_len` are then split at the
/// cap repeatedly, and finally consecutive duplicate items are collapsed.
pub fn split_sessions(
    events: &[Event],
    rules: &SessionRules,
    boundaries: Option<&[i64]>,
) -> Vec<Session> {
    let mut chunks: Vec<&[Event]> = Vec::new();
    let mut start = 0;
    for i in 1..events.len() {
        let prev = events[i - 1].timestamp;
        let cur = events[i].timestamp;
        let boundary_between = boundaries
            .is_some_and(|bs| bs.iter().any(|&b| prev < b && b <= cur));
        if boundary_between || cur - prev >= rules.idle_split_s {
            chunks.push(&events[start..i]);
            start = i;
        }
    }
    if !events.is_empty() {
        chunks.push(&events[start..]);
    }

    let mut capped: Vec<&[Event]> = Vec::new();
    for chunk in chunks {
        match rules.max_len {
            Some(cap) => capped.extend(chunk.chunks(cap)),
            None => capped.push(chunk),
        }
    }

    capped
        .into_iter()
        .map(|chunk| Session {
            user_id: chunk[0].user_id.clone(),
            view: View::Item,
            nodes: collapse_consecutive(chunk.iter().map(|e| e.item_id.as_str())),
            start_ts: chunk[0].timestamp,
            end_ts: chunk[chunk.len() - 1].timestamp,
        })
        .collect()
}

/// Merge one user's consecutive sessions whose gap is below the merge
/// threshold, left-to-right. Duplicates are re-collapsed at each seam.
/// Idempotent: merged output has no gap below the threshold.
pub fn merge_sessions(sessions: Vec<Session>, rules: &SessionRules) -> Vec<Session> {
    let Some(gap) = rules.merge_gap_s else {
        return sessions;
    };
    let mut merged: Vec<Session> = Vec::with_capacity(sessions.len());
    for next in sessions {
        match merged.last_mut() {
            Some(prev) if next.start_ts - prev.end_ts < gap => {
                for node in next.nodes {
                    if prev.nodes.last() != Some(&node) {
                        prev.nodes.push(node);
                    }
                }
                prev.end_ts = next.end_ts;
            }
            _ => merged.push(next),
        }
    }
    merged
}

/// Full per-user pipeline: clean, split, merge.
pub fn sessionize_user(
    events: &[Event],
    rules: &SessionRules,
    boundaries: Option<&[i64]>,
) -> Vec<Session> {
    let cleaned = clean_events(events, rules);
    merge_sessions(split_sessions(&cleaned, rules, boundaries), rules)
}

/// Item -> attribute mapping for one auxiliary view, the raw material
/// for cross-view links. Many-to-one: an item observed with two distinct
/// attributes is a data error.
#[derive(Debug, Clone)]
pub struct AttributeMap {
    pub view: View,
    map: BTreeMap<String, String>,
}

/// What to do with an item that has no attribute in some auxiliary view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingAttr {
    /// Drop the item from the derived session and count it.
    SkipItem,
    Fatal,
}

impl AttributeMap {
    pub fn new(view: View) -> Self {
        AttributeMap {
            view,
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, item_id: &str, attr_id: &str) -> Result<()> {
        match self.map.get(item_id) {
            Some(existing) if existing != attr_id => Err(Error::Data(format!(
                "item {item_id:?} has two distinct {} attributes: {existing:?} and {attr_id:?}",
                self.view
            ))),
            Some(_) => Ok(()),
            None => {
                self.map.insert(item_id.to_string(), attr_id.to_string());
                Ok(())
            }
        }
    }

    pub fn get(&self, item_id: &str) -> Option<&str> {
        self.map.get(item_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Collect the attribute map for one auxiliary view from parsed events.
    pub fn from_events<'a>(
        events: impl IntoIterator<Item = &'a Event>,
        view: View,
    ) -> Result<Self> {
        let mut map = AttributeMap::new(view);
        for ev in events {
            let attr = match view {
                View::Category => ev.category_id.as_deref(),
                View::Shop => ev.shop_id.as_deref(),
                View::Item => {
                    return Err(Error::Config(
                        "item view has no attribute map".into(),
                    ))
                }
            };
            if let Some(attr) = attr {
                map.insert(&ev.item_id, attr)?;
            }
        }
        Ok(map)
    }
}

/// Project item sessions onto an auxiliary view through its attribute
/// map, collapsing duplicates introduced by the projection. Returns the
/// derived sessions and the count of dropped unmapped items.
pub fn derive_view_sessions(
    item_sessions: &[Session],
    attrs: &AttributeMap,
    on_missing: MissingAttr,
) -> Result<(Vec<Session>, u64)> {
    let mut out = Vec::with_capacity(item_sessions.len());
    let mut dropped = 0u64;
    for session in item_sessions {
        let mut mapped: Vec<&str> = Vec::with_capacity(session.nodes.len());
        for item in &session.nodes {
            match attrs.get(item) {
                Some(attr) => mapped.push(attr),
                None => match on_missing {
                    MissingAttr::SkipItem => dropped += 1,
                    MissingAttr::Fatal => {
                        return Err(Error::Data(format!(
                            "item {item:?} has no {} attribute",
                            attrs.view
                        )))
                    }
                },
            }
        }
        let nodes = collapse_consecutive(mapped.into_iter());
        if !nodes.is_empty() {
            out.push(Session {
                user_id: session.user_id.clone(),
                view: attrs.view,
                nodes,
                start_ts: session.start_ts,
                end_ts: session.end_ts,
            });
        }
    }
    Ok((out, dropped))
}

fn collapse_consecutive<'a>(nodes: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for node in nodes {
        if out.last().map(String::as_str) != Some(node) {
            out.push(node.to_string());
        }
    }
    out
}

/// Write sessions as `user_id<TAB>view<TAB>node1,node2,...`, one per line.
/// Line order is meaningful: a user's sessions appear in chronological
/// order, so the last line of a user is their most recent session.
pub fn write_sessions(mut w: impl Write, sessions: &[Session]) -> Result<()> {
    for s in sessions {
        writeln!(w, "{}\t{}\t{}", s.user_id, s.view, s.nodes.join(","))
            .map_err(|e| Error::io("<session output>", e))?;
    }
    Ok(())
}

/// Read a session file written by [`write_sessions`]. Timestamps are not
/// stored in the format; they come back as 0 and only line order conveys
/// recency.
pub fn read_sessions(r: impl BufRead, path: &Path) -> Result<Vec<Session>> {
    let mut sessions = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let mut cells = line.splitn(3, '\t');
        let (Some(user), Some(view), Some(nodes)) = (cells.next(), cells.next(), cells.next())
        else {
            return Err(Error::Data(format!(
                "{}:{}: expected user<TAB>view<TAB>nodes",
                path.display(),
                lineno + 1
            )));
        };
        let nodes: Vec<String> = nodes.split(',').map(str::to_string).collect();
        if nodes.iter().any(String::is_empty) {
            return Err(Error::Data(format!(
                "{}:{}: empty node id",
                path.display(),
                lineno + 1
            )));
        }
        sessions.push(Session {
            user_id: user.to_string(),
            view: view.parse()?,
            nodes,
            start_ts: 0,
            end_ts: 0,
        });
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: &str, item: &str, ts: i64) -> Event {
        Event {
            user_id: user.into(),
            item_id: item.into(),
            category_id: None,
            shop_id: None,
            timestamp: ts,
            dwell_ms: None,
            rating: None,
        }
    }

    fn ev_dwell(item: &str, ts: i64, dwell: i64) -> Event {
        Event {
            dwell_ms: Some(dwell),
            ..ev("u", item, ts)
        }
    }

    fn ev_rated(item: &str, ts: i64, rating: f64) -> Event {
        Event {
            rating: Some(rating),
            ..ev("u", item, ts)
        }
    }

    fn schema() -> Schema {
        Schema::from_column_list("user_id,item_id,timestamp,dwell_ms", '\t').unwrap()
    }

    #[test]
    fn parse_empty_input() {
        let (map, skipped) = parse_events("".as_bytes(), &schema()).unwrap();
        assert!(map.is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn parse_sorts_by_timestamp() {
        let input = "u1\tB\t300\t5000\nu1\tA\t100\t5000\nu1\tC\t200\t5000\n";
        let (map, skipped) = parse_events(input.as_bytes(), &schema()).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(map.len(), 1);
        let items: Vec<&str> = map["u1"].iter().map(|e| e.item_id.as_str()).collect();
        assert_eq!(items, ["A", "C", "B"]);
    }

    #[test]
    fn parse_skips_bad_timestamp() {
        let input = "u1\tA\t100\t1\nu1\tB\toops\t1\nu1\tC\t300\t1\nu2\tD\t\t1\nu2\tE\t50\t1\n";
        let (map, skipped) = parse_events(input.as_bytes(), &schema()).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(map["u1"].len(), 2);
        assert_eq!(map["u2"].len(), 1);
    }

    #[test]
    fn parse_skips_short_rows() {
        let input = "u1\tA\t100\t1\nu1\tB\n";
        let (map, skipped) = parse_events(input.as_bytes(), &schema()).unwrap();
        assert_eq!(map["u1"].len(), 1);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn parse_optional_fields_empty() {
        let s = Schema::from_column_list("user_id,item_id,category_id,timestamp,rating", '\t')
            .unwrap();
        let input = "u1\tA\t\t100\t\nu1\tB\tC9\t200\t4.5\n";
        let (map, skipped) = parse_events(input.as_bytes(), &s).unwrap();
        assert_eq!(skipped, 0);
        assert_eq!(map["u1"][0].category_id, None);
        assert_eq!(map["u1"][0].rating, None);
        assert_eq!(map["u1"][1].category_id.as_deref(), Some("C9"));
        assert_eq!(map["u1"][1].rating, Some(4.5));
    }

    #[test]
    fn schema_requires_core_columns() {
        assert!(Schema::from_column_list("user_id,item_id", '\t').is_err());
        assert!(Schema::from_column_list("user_id,item_id,timestamp,item_id", '\t').is_err());
        assert!(Schema::from_column_list("user_id,item_id,skip,timestamp", '\t').is_ok());
    }

    #[test]
    fn clean_drops_short_dwell() {
        let events = vec![
            ev_dwell("A", 0, 1500),
            ev_dwell("B", 10, 2500),
            ev_dwell("C", 20, 1999),
        ];
        let kept = clean_events(&events, &SessionRules::clicks());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].item_id, "B");
    }

    #[test]
    fn clean_keeps_missing_dwell() {
        // An event without a recorded dwell (e.g. the last click of a
        // visit) is never filtered.
        let events = vec![ev_dwell("A", 0, 2500), ev("u", "B", 10)];
        let kept = clean_events(&events, &SessionRules::clicks());
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn clean_is_identity_when_all_pass() {
        let events = vec![ev_dwell("A", 0, 2000), ev_dwell("B", 10, 9000)];
        assert_eq!(clean_events(&events, &SessionRules::clicks()), events);
    }

    #[test]
    fn clean_drops_low_ratings() {
        let events = vec![
            ev_rated("A", 0, 2.0),
            ev_rated("B", 10, 3.0),
            ev_rated("C", 20, 5.0),
        ];
        let kept = clean_events(&events, &SessionRules::ratings());
        let items: Vec<&str> = kept.iter().map(|e| e.item_id.as_str()).collect();
        assert_eq!(items, ["B", "C"]);
    }

    #[test]
    fn split_at_idle_gap() {
        // Gaps of 10 min and 2 h against a 1 h threshold: split once.
        let events = vec![ev("u", "A", 0), ev("u", "B", 600), ev("u", "C", 7800)];
        let sessions = split_sessions(&events, &SessionRules::clicks(), None);
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].nodes, ["A", "B"]);
        assert_eq!(sessions[1].nodes, ["C"]);
        assert_eq!(sessions[0].start_ts, 0);
        assert_eq!(sessions[0].end_ts, 600);
    }

    #[test]
    fn split_at_exact_threshold() {
        // The threshold gap itself splits.
        let events = vec![ev("u", "A", 0), ev("u", "B", 3600)];
        let sessions = split_sessions(&events, &SessionRules::clicks(), None);
        assert_eq!(sessions.len(), 2);
        let events = vec![ev("u", "A", 0), ev("u", "B", 3599)];
        let sessions = split_sessions(&events, &SessionRules::clicks(), None);
        assert_eq!(sessions.len(), 1);
    }

    #[test]
    fn split_at_app_boundary() {
        let events = vec![ev("u", "A", 0), ev("u", "B", 100), ev("u", "C", 200)];
        let sessions = split_sessions(&events, &SessionRules::clicks(), Some(&[150]));
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].nodes, ["A", "B"]);
        assert_eq!(sessions[1].nodes, ["C"]);
        // A boundary at an event's own timestamp cuts before that event.
        let sessions = split_sessions(&events, &SessionRules::clicks(), Some(&[100]));
        assert_eq!(sessions[0].nodes, ["A"]);
    }

    #[test]
    fn split_caps_length() {
        let events: Vec<Event> = (0..120).map(|i| ev("u", &format!("I{i}"), i)).collect();
        let sessions = split_sessions(&events, &SessionRules::ratings(), None);
        let lens: Vec<usize> = sessions.iter().map(|s| s.nodes.len()).collect();
        assert_eq!(lens, [50, 50, 20]);
    }

    #[test]
    fn split_collapses_duplicates() {
        let events = vec![ev("u", "A", 0), ev("u", "A", 10), ev("u", "B", 20)];
        let sessions = split_sessions(&events, &SessionRules::clicks(), None);
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].nodes, ["A", "B"]);
        assert_eq!(sessions[0].end_ts, 20);
    }

    fn session(nodes: &[&str], start: i64, end: i64) -> Session {
        Session {
            user_id: "u".into(),
            view: View::Item,
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            start_ts: start,
            end_ts: end,
        }
    }

    #[test]
    fn merge_below_gap() {
        // 20 min gap, 30 min threshold: merged.
        let sessions = vec![session(&["A", "B"], 0, 100), session(&["C"], 1300, 1400)];
        let merged = merge_sessions(sessions, &SessionRules::clicks());
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].nodes, ["A", "B", "C"]);
        assert_eq!((merged[0].start_ts, merged[0].end_ts), (0, 1400));
    }

    #[test]
    fn merge_respects_gap() {
        // 45 min gap: unchanged. 30 min exactly: unchanged (strict <).
        let sessions = vec![session(&["A"], 0, 100), session(&["B"], 2800, 2900)];
        assert_eq!(merge_sessions(sessions.clone(), &SessionRules::clicks()), sessions);
        let sessions = vec![session(&["A"], 0, 100), session(&["B"], 1900, 2000)];
        assert_eq!(merge_sessions(sessions.clone(), &SessionRules::clicks()).len(), 2);
    }

    #[test]
    fn merge_collapses_seam() {
        let sessions = vec![session(&["B", "A"], 0, 100), session(&["A", "C"], 700, 800)];
        let merged = merge_sessions(sessions, &SessionRules::clicks());
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].nodes, ["B", "A", "C"]);
    }

    #[test]
    fn merge_chains_left_to_right() {
        // Each adjacent gap is 10 min; everything merges into one.
        let sessions = vec![
            session(&["A"], 0, 100),
            session(&["B"], 700, 800),
            session(&["C"], 1400, 1500),
        ];
        let merged = merge_sessions(sessions, &SessionRules::clicks());
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].nodes, ["A", "B", "C"]);
    }

    #[test]
    fn derive_maps_and_collapses() {
        let mut attrs = AttributeMap::new(View::Category);
        attrs.insert("I1", "C2").unwrap();
        attrs.insert("I2", "C2").unwrap();
        attrs.insert("I3", "C1").unwrap();
        let item_sessions = vec![session(&["I1", "I2", "I3"], 0, 100)];
        let (derived, dropped) =
            derive_view_sessions(&item_sessions, &attrs, MissingAttr::SkipItem).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(derived.len(), 1);
        assert_eq!(derived[0].view, View::Category);
        assert_eq!(derived[0].nodes, ["C2", "C1"]);
    }

    #[test]
    fn derive_singleton() {
        let mut attrs = AttributeMap::new(View::Shop);
        attrs.insert("I1", "S1").unwrap();
        let (derived, _) =
            derive_view_sessions(&[session(&["I1"], 0, 0)], &attrs, MissingAttr::SkipItem)
                .unwrap();
        assert_eq!(derived[0].nodes, ["S1"]);
    }

    #[test]
    fn derive_missing_item_policies() {
        let mut attrs = AttributeMap::new(View::Category);
        attrs.insert("I1", "C1").unwrap();
        let sessions = vec![session(&["I1", "I9"], 0, 100)];
        let (derived, dropped) =
            derive_view_sessions(&sessions, &attrs, MissingAttr::SkipItem).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(derived[0].nodes, ["C1"]);
        assert!(derive_view_sessions(&sessions, &attrs, MissingAttr::Fatal).is_err());
        // A session of only unmapped items disappears entirely.
        let (derived, dropped) =
            derive_view_sessions(&[session(&["I9"], 0, 0)], &attrs, MissingAttr::SkipItem)
                .unwrap();
        assert!(derived.is_empty());
        assert_eq!(dropped, 1);
    }

    #[test]
    fn attribute_conflict_is_fatal() {
        let mut attrs = AttributeMap::new(View::Category);
        attrs.insert("I1", "C1").unwrap();
        attrs.insert("I1", "C1").unwrap();
        assert!(attrs.insert("I1", "C2").is_err());
    }

    #[test]
    fn session_file_round_trip() {
        let sessions = vec![
            session(&["A", "B"], 0, 100),
            Session {
                view: View::Category,
                ..session(&["C1"], 0, 0)
            },
        ];
        let mut buf = Vec::new();
        write_sessions(&mut buf, &sessions).unwrap();
        let back = read_sessions(buf.as_slice(), Path::new("<mem>")).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].nodes, ["A", "B"]);
        assert_eq!(back[1].view, View::Category);
    }

    prop_compose! {
        fn arb_events()(
            specs in prop::collection::vec((0u8..6, 0i64..20_000, prop::option::of(0i64..4000)), 0..40)
        ) -> Vec<Event> {
            let mut ts = 0;
            specs
                .into_iter()
                .map(|(item, gap, dwell)| {
                    ts += gap;
                    Event { dwell_ms: dwell, ..ev("u", &format!("I{item}"), ts) }
                })
                .collect()
        }
    }

    proptest! {
        #[test]
        fn no_consecutive_duplicates_anywhere(events in arb_events()) {
            let rules = SessionRules::clicks();
            for s in sessionize_user(&events, &rules, None) {
                prop_assert!(!s.nodes.is_empty());
                prop_assert!(s.nodes.windows(2).all(|w| w[0] != w[1]));
            }
        }

        #[test]
        fn merge_is_idempotent(events in arb_events()) {
            let rules = SessionRules::clicks();
            let once = sessionize_user(&events, &rules, None);
            let twice = merge_sessions(once.clone(), &rules);
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn clean_preserves_subsequence(events in arb_events()) {
            let rules = SessionRules::clicks();
            let cleaned = clean_events(&events, &rules);
            let mut it = events.iter();
            for kept in &cleaned {
                prop_assert!(it.any(|e| e == kept));
            }
        }

        #[test]
        fn derived_sessions_never_longer(events in arb_events()) {
            let rules = SessionRules::clicks();
            let mut attrs = AttributeMap::new(View::Category);
            for i in 0..6 {
                attrs.insert(&format!("I{i}"), &format!("C{}", i % 2)).unwrap();
            }
            let item_sessions = sessionize_user(&events, &rules, None);
            let (derived, dropped) =
                derive_view_sessions(&item_sessions, &attrs, MissingAttr::SkipItem).unwrap();
            prop_assert_eq!(dropped, 0);
            prop_assert!(derived.len() <= item_sessions.len());
            for (d, s) in derived.iter().zip(item_sessions.iter()) {
                prop_assert!(d.nodes.len() <= s.nodes.len());
            }
        }

        #[test]
        fn sessions_are_time_ordered_and_disjoint(events in arb_events()) {
            let rules = SessionRules::clicks();
            let sessions = sessionize_user(&events, &rules, None);
            for s in &sessions {
                prop_assert!(s.start_ts <= s.end_ts);
            }
            for w in sessions.windows(2) {
                prop_assert!(w[0].end_ts <= w[1].start_ts);
            }
        }
    }
}
