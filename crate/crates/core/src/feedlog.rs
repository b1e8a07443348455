//! Impression logs: parsing, per-user streams, and supervised sample cutting.
//!
//! Input is JSON-lines with one impression per line:
//!
//! ```text
//! {"user":1,"item":7,"cat":2,"ts":100,"click":1,"feat":[0.1,0.2]}
//! ```
//!
//! `feat` is optional but, when present, must have the same length on every
//! line of a file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{index, IndexedRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stm::ExposureContext;
use crate::{derive_seed, Error, Result};

pub type UserId = u64;
pub type ItemId = u64;
pub type CategoryId = u64;
/// Seconds since the epoch. Always non-negative once parsed.
pub type Timestamp = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEvent {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub category_id: CategoryId,
    pub timestamp: Timestamp,
    pub clicked: bool,
    pub dense_feature: Option<Vec<f64>>,
}

impl FeedbackEvent {
    pub fn record(&self) -> ItemRecord {
        ItemRecord {
            item_id: self.item_id,
            category_id: self.category_id,
            timestamp: self.timestamp,
            dense_feature: self.dense_feature.clone(),
        }
    }
}

/// The item-side view of an impression, as carried by samples and contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    #[serde(rename = "item")]
    pub item_id: ItemId,
    #[serde(rename = "cat")]
    pub category_id: CategoryId,
    #[serde(rename = "ts")]
    pub timestamp: Timestamp,
    #[serde(rename = "feat", default, skip_serializing_if = "Option::is_none")]
    pub dense_feature: Option<Vec<f64>>,
}

/// On-disk line layout of one impression.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventLine {
    user: u64,
    item: u64,
    cat: u64,
    ts: i64,
    click: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feat: Option<Vec<f64>>,
}

/// Parse a JSON-lines impression log. Blank lines are ignored; line numbers
/// in errors are 1-based.
pub fn parse_events<R: BufRead>(reader: R) -> Result<Vec<FeedbackEvent>> {
    let mut events = Vec::new();
    let mut dense_len: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: EventLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let clicked = match raw.click {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("click must be 0 or 1, got {other}"),
                })
            }
        };
        if raw.ts < 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("negative timestamp {}", raw.ts),
            });
        }
        if let Some(feat) = &raw.feat {
            match dense_len {
                None => dense_len = Some(feat.len()),
                Some(expected) if expected != feat.len() => {
                    return Err(Error::Schema(format!(
                        "line {line_no}: dense feature has length {}, expected {expected}",
                        feat.len()
                    )))
                }
                Some(_) => {}
            }
            if feat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: line_no,
                    message: "dense feature contains a non-finite value".into(),
                });
            }
        }
        events.push(FeedbackEvent {
            user_id: raw.user,
            item_id: raw.item,
            category_id: raw.cat,
            timestamp: raw.ts,
            clicked,
            dense_feature: raw.feat,
        });
    }
    Ok(events)
}

pub fn parse_events_str(text: &str) -> Result<Vec<FeedbackEvent>> {
    parse_events(text.as_bytes())
}

pub fn event_to_line(event: &FeedbackEvent) -> String {
    let line = EventLine {
        user: event.user_id,
        item: event.item_id,
        cat: event.category_id,
        ts: event.timestamp,
        click: i64::from(event.clicked),
        feat: event.dense_feature.clone(),
    };
    serde_json::to_string(&line).expect("event lines always serialize")
}

pub fn write_events<W: Write>(events: &[FeedbackEvent], mut out: W) -> Result<()> {
    for event in events {
        writeln!(out, "{}", event_to_line(event))?;
    }
    out.flush()?;
    Ok(())
}

/// All impressions of one user in time order, partitioned into clicked and
/// unclicked positions.
#[derive(Debug, Clone, PartialEq)]
pub struct UserStream {
    pub user_id: UserId,
    pub events: Vec<FeedbackEvent>,
    pub clicked_idx: Vec<usize>,
    pub unclicked_idx: Vec<usize>,
}

impl UserStream {
    pub fn clicks(&self) -> impl Iterator<Item = &FeedbackEvent> + '_ {
        self.clicked_idx.iter().map(move |&i| &self.events[i])
    }

    pub fn unclicked(&self) -> impl Iterator<Item = &FeedbackEvent> + '_ {
        self.unclicked_idx.iter().map(move |&i| &self.events[i])
    }

    /// Unclicked impressions as records, ascending by timestamp.
    pub fn unclicked_records(&self) -> Vec<ItemRecord> {
        self.unclicked().map(FeedbackEvent::record).collect()
    }

    /// The stream restricted to events strictly before `cutoff`.
    pub fn truncated_before(&self, cutoff: Timestamp) -> UserStream {
        let end = self.events.partition_point(|e| e.timestamp < cutoff);
        UserStream::from_sorted(self.user_id, self.events[..end].to_vec())
    }

    fn from_sorted(user_id: UserId, events: Vec<FeedbackEvent>) -> UserStream {
        let (clicked_idx, unclicked_idx): (Vec<usize>, Vec<usize>) =
            (0..events.len()).partition(|&i| events[i].clicked);
        UserStream {
            user_id,
            events,
            clicked_idx,
            unclicked_idx,
        }
    }
}

/// Group events by user (ascending user id) and stably sort each group by
/// timestamp, so equal timestamps keep file order.
pub fn build_streams(events: &[FeedbackEvent]) -> Vec<UserStream> {
    let mut by_user: BTreeMap<UserId, Vec<FeedbackEvent>> = BTreeMap::new();
    for event in events {
        by_user.entry(event.user_id).or_default().push(event.clone());
    }
    by_user
        .into_iter()
        .map(|(user_id, mut evs)| {
            evs.sort_by_key(|e| e.timestamp);
            UserStream::from_sorted(user_id, evs)
        })
        .collect()
}

/// One supervised example: up to `n` clicks of history, the exposure context
/// of each history click, and the candidate item with its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    #[serde(rename = "user")]
    pub user_id: UserId,
    pub history: Vec<ItemRecord>,
    /// Empty until [`crate::stm::preprocess_dataset`] attaches them.
    #[serde(default)]
    pub contexts: Vec<ExposureContext>,
    /// The user's most recent unclicked impressions before the target,
    /// used by the sequence-level variants. Filled by preprocessing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exposure_pool: Vec<ItemRecord>,
    pub target: ItemRecord,
    pub label: bool,
    /// Prediction time: only impressions strictly before it are visible to
    /// the sample. Both samples of a positive/negative pair share the
    /// positive's timestamp. `None` means the target's own timestamp.
    #[serde(rename = "cutoff", default, skip_serializing_if = "Option::is_none")]
    pub cutoff_ts: Option<Timestamp>,
}

impl TrainingSample {
    pub fn cutoff(&self) -> Timestamp {
        self.cutoff_ts.unwrap_or(self.target.timestamp)
    }

    pub fn has_contexts(&self) -> bool {
        self.contexts.len() == self.history.len()
    }
}

pub fn write_samples<W: Write>(samples: &[TrainingSample], mut out: W) -> Result<()> {
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<TrainingSample>> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: TrainingSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Ok(samples)
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
const TEST_STREAM: u64 = 0x7465_7374_0000_0000;

/// Random prefix samples per user. Each draw picks a subsequence length
/// `T >= 2` (distinct per user) and predicts click `T` from the clicks before
/// it, paired with one negative drawn from the user's unclicked impressions.
pub fn make_training_samples(
    streams: &[UserStream],
    n: usize,
    samples_per_user: usize,
    rng_seed: u64,
) -> Result<Vec<TrainingSample>> {
    check_history_len(n)?;
    let mut samples = Vec::new();
    for stream in streams {
        let clicks = stream.clicked_idx.len();
        if clicks < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed ^ TRAIN_STREAM, stream.user_id));
        // Candidate subsequence lengths 2..=clicks.
        let candidates = clicks - 1;
        let mut lengths: Vec<usize> = index::sample(&mut rng, candidates, samples_per_user.min(candidates))
            .into_iter()
            .map(|i| i + 2)
            .collect();
        lengths.sort_unstable();
        for t in lengths {
            push_pair(stream, t, n, &mut rng, &mut samples);
        }
    }
    Ok(samples)
}

/// One positive (the user's last click) and at most one negative per user.
pub fn make_test_samples(streams: &[UserStream], n: usize, rng_seed: u64) -> Result<Vec<TrainingSample>> {
    check_history_len(n)?;
    let mut samples = Vec::new();
    for stream in streams {
        let clicks = stream.clicked_idx.len();
        if clicks < 2 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed ^ TEST_STREAM, stream.user_id));
        push_pair(stream, clicks, n, &mut rng, &mut samples);
    }
    Ok(samples)
}

fn check_history_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("max history length n must be >= 2, got {n}")));
    }
    Ok(())
}

/// Emit the positive for subsequence length `t` and its paired negative.
///
/// The negative is drawn uniformly from unclicked impressions at or after the
/// target's timestamp, i.e. what was on screen from prediction time on. An
/// earlier impression would already be part of the visible exposure log, so
/// when none is available the positive goes unpaired.
fn push_pair(stream: &UserStream, t: usize, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<TrainingSample>) {
    let clicks = &stream.clicked_idx[..t];
    let target = stream.events[clicks[t - 1]].record();
    let start = (t - 1).saturating_sub(n);
    let history: Vec<ItemRecord> = clicks[start..t - 1]
        .iter()
        .map(|&i| stream.events[i].record())
        .collect();

    let later: Vec<usize> = stream
        .unclicked_idx
        .iter()
        .copied()
        .filter(|&i| stream.events[i].timestamp >= target.timestamp)
        .collect();
    let negative = later.choose(rng).map(|&i| stream.events[i].record());
    let cutoff_ts = Some(target.timestamp);

    out.push(TrainingSample {
        user_id: stream.user_id,
        history: history.clone(),
        contexts: Vec::new(),
        exposure_pool: Vec::new(),
        target,
        label: true,
        cutoff_ts,
    });
    if let Some(target) = negative {
        out.push(TrainingSample {
            user_id: stream.user_id,
            history,
            contexts: Vec::new(),
            exposure_pool: Vec::new(),
            target,
            label: false,
            cutoff_ts,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: u64, item: u64, ts: i64, clicked: bool) -> FeedbackEvent {
        FeedbackEvent {
            user_id: user,
            item_id: item,
            category_id: item % 3,
            timestamp: ts,
            clicked,
            dense_feature: None,
        }
    }

    #[test]
    fn parses_single_event() {
        let events = parse_events_str(r#"{"user":1,"item":7,"cat":2,"ts":100,"click":1}"#).unwrap();
        assert_eq!(
            events,
            vec![FeedbackEvent {
                user_id: 1,
                item_id: 7,
                category_id: 2,
                timestamp: 100,
                clicked: true,
                dense_feature: None
            }]
        );
    }

    #[test]
    fn rejects_bad_click_flag() {
        let err = parse_events_str(r#"{"user":1,"item":7,"cat":2,"ts":100,"click":2}"#).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("click"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_events_str("").unwrap().is_empty());
        assert!(parse_events_str("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"user\":1,\"item\":7,\"cat\":2,\"ts\":100,\"click\":1}\n{\"user\":1,\"item\":";
        match parse_events_str(text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_timestamp_rejected() {
        assert!(parse_events_str(r#"{"user":1,"item":7,"cat":2,"ts":-5,"click":0}"#).is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(parse_events_str(r#"{"user":1,"item":7,"cat":2,"ts":5,"click":0,"like":1}"#).is_err());
    }

    #[test]
    fn inconsistent_dense_length_is_schema_error() {
        let text = concat!(
            "{\"user\":1,\"item\":7,\"cat\":2,\"ts\":1,\"click\":0,\"feat\":[1.0,2.0]}\n",
            "{\"user\":1,\"item\":8,\"cat\":2,\"ts\":2,\"click\":0}\n",
            "{\"user\":1,\"item\":9,\"cat\":2,\"ts\":3,\"click\":1,\"feat\":[1.0]}\n",
        );
        assert!(matches!(parse_events_str(text), Err(Error::Schema(_))));
    }

    #[test]
    fn streams_partition_clicks() {
        let events = vec![ev(1, 1, 30, true), ev(1, 2, 20, false), ev(1, 3, 10, true)];
        let streams = build_streams(&events);
        assert_eq!(streams.len(), 1);
        let s = &streams[0];
        let clicked_ts: Vec<i64> = s.clicks().map(|e| e.timestamp).collect();
        let unclicked_ts: Vec<i64> = s.unclicked().map(|e| e.timestamp).collect();
        assert_eq!(clicked_ts, vec![10, 30]);
        assert_eq!(unclicked_ts, vec![20]);
    }

    #[test]
    fn single_click_stream() {
        let streams = build_streams(&[ev(4, 1, 5, true)]);
        assert_eq!(streams[0].clicked_idx, vec![0]);
        assert!(streams[0].unclicked_idx.is_empty());
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let streams = build_streams(&[ev(1, 9, 5, false), ev(1, 4, 5, true), ev(1, 6, 1, false)]);
        let items: Vec<u64> = streams[0].events.iter().map(|e| e.item_id).collect();
        assert_eq!(items, vec![6, 9, 4]);
    }

    #[test]
    fn streams_ordered_by_user() {
        let streams = build_streams(&[ev(5, 1, 1, true), ev(2, 1, 1, true), ev(5, 2, 0, false)]);
        let users: Vec<u64> = streams.iter().map(|s| s.user_id).collect();
        assert_eq!(users, vec![2, 5]);
    }

    fn abc_stream(with_x: bool) -> Vec<UserStream> {
        let mut events = vec![ev(1, 10, 1, true), ev(1, 11, 2, true), ev(1, 12, 3, true)];
        if with_x {
            events.push(ev(1, 99, 2, false));
        }
        build_streams(&events)
    }

    #[test]
    fn training_sample_full_prefix() {
        // Three clicks give two candidate lengths; ask for both and look at T = 3.
        let samples = make_training_samples(&abc_stream(false), 30, 2, 7).unwrap();
        let pos: Vec<_> = samples.iter().filter(|s| s.history.len() == 2).collect();
        assert_eq!(pos.len(), 1);
        let ids: Vec<u64> = pos[0].history.iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec![10, 11]);
        assert_eq!(pos[0].target.item_id, 12);
        assert!(pos[0].label);
    }

    #[test]
    fn training_negative_from_singleton_pool() {
        // The impression at ts 2 is on screen at the second click but
        // already in the past at the third.
        let samples = make_training_samples(&abc_stream(true), 30, 2, 7).unwrap();
        let neg: Vec<_> = samples.iter().filter(|s| !s.label).collect();
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].target.item_id, 99);
        let ids: Vec<u64> = neg[0].history.iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec![10]);
        assert_eq!(neg[0].cutoff(), 2);
    }

    #[test]
    fn pair_shares_the_positive_cutoff() {
        let events = vec![ev(1, 1, 10, true), ev(1, 2, 20, true), ev(1, 60, 25, false)];
        let samples = make_test_samples(&build_streams(&events), 30, 3).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[1].target.timestamp, 25);
        assert_eq!(samples[0].cutoff(), 20);
        assert_eq!(samples[1].cutoff(), 20);
    }

    #[test]
    fn single_click_user_yields_nothing() {
        let streams = build_streams(&[ev(1, 1, 1, true), ev(1, 2, 2, false)]);
        assert!(make_training_samples(&streams, 30, 4, 0).unwrap().is_empty());
        assert!(make_test_samples(&streams, 30, 0).unwrap().is_empty());
    }

    #[test]
    fn no_unclicked_means_no_negative() {
        let samples = make_test_samples(&abc_stream(false), 30, 0).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(samples[0].label);
    }

    #[test]
    fn test_sample_uses_last_click() {
        let events: Vec<_> = (0..4).map(|i| ev(1, 20 + i, i as i64 * 10, true)).collect();
        let samples = make_test_samples(&build_streams(&events), 30, 1).unwrap();
        let ids: Vec<u64> = samples[0].history.iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec![20, 21, 22]);
        assert_eq!(samples[0].target.item_id, 23);
    }

    #[test]
    fn test_negative_is_seeded() {
        let mut events: Vec<_> = (0..4).map(|i| ev(1, 20 + i, i as i64 * 10, true)).collect();
        events.push(ev(1, 77, 35, false));
        events.push(ev(1, 88, 45, false));
        let streams = build_streams(&events);
        let a = make_test_samples(&streams, 30, 42).unwrap();
        let b = make_test_samples(&streams, 30, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert!([77, 88].contains(&a[1].target.item_id));
    }

    #[test]
    fn history_keeps_most_recent() {
        let events: Vec<_> = (0..5).map(|i| ev(1, 30 + i, i as i64, true)).collect();
        let samples = make_test_samples(&build_streams(&events), 3, 1).unwrap();
        let ids: Vec<u64> = samples[0].history.iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec![31, 32, 33]);
    }

    #[test]
    fn negative_prefers_later_impressions() {
        let events = vec![
            ev(1, 1, 10, true),
            ev(1, 50, 12, false),
            ev(1, 2, 20, true),
            ev(1, 60, 25, false),
        ];
        let samples = make_test_samples(&build_streams(&events), 30, 3).unwrap();
        assert_eq!(samples[1].target.item_id, 60);
    }

    #[test]
    fn rejects_tiny_n() {
        assert!(make_test_samples(&abc_stream(true), 1, 0).is_err());
    }

    #[test]
    fn truncation_drops_late_events() {
        let s = &abc_stream(true)[0];
        let t = s.truncated_before(3);
        assert_eq!(t.events.len(), 3);
        assert_eq!(t.clicked_idx.len(), 2);
        assert_eq!(t.unclicked_idx.len(), 1);
    }
}
