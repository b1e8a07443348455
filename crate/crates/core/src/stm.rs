//! Exposure context search.
//!
//! For every clicked item the context is the set of the user's unclicked
//! impressions closest in time to the click. The search runs offline, once,
//! before training.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::feedlog::{ItemRecord, Timestamp, TrainingSample, UserId, UserStream};
use crate::{Error, Result};

/// Unclicked impressions attached to one click, stored as a valid prefix of
/// a fixed-capacity slot array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureContext {
    pub click_ts: Timestamp,
    /// Valid items only, ascending by timestamp.
    pub items: Vec<ItemRecord>,
    /// One flag per slot; the first `items.len()` are true.
    pub mask: Vec<bool>,
}

impl ExposureContext {
    pub fn empty(click_ts: Timestamp, capacity: usize) -> Self {
        ExposureContext {
            click_ts,
            items: Vec::new(),
            mask: vec![false; capacity],
        }
    }

    pub fn count(&self) -> usize {
        self.items.len()
    }

    pub fn capacity(&self) -> usize {
        self.mask.len()
    }

    fn from_selection(click_ts: Timestamp, pool: &[ItemRecord], mut picked: Vec<usize>, capacity: usize) -> Self {
        picked.sort_unstable();
        let mut mask = vec![false; capacity];
        mask[..picked.len()].iter_mut().for_each(|m| *m = true);
        ExposureContext {
            click_ts,
            items: picked.into_iter().map(|i| pool[i].clone()).collect(),
            mask,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Take up to `l` items on each side of the click instead of `l` total.
    pub per_side: bool,
    /// Only impressions strictly before the click.
    pub past_only: bool,
}

impl SearchOptions {
    pub fn capacity(&self, l: usize) -> usize {
        if self.per_side && !self.past_only {
            2 * l
        } else {
            l
        }
    }
}

/// Cursor walking backwards from the insertion point. Equal timestamps form a
/// group which is handed out in ascending index order.
struct LeftCursor<'a> {
    pool: &'a [ItemRecord],
    /// Exclusive end of the not-yet-grouped region.
    end: usize,
    group: std::ops::Range<usize>,
}

impl<'a> LeftCursor<'a> {
    fn new(pool: &'a [ItemRecord], end: usize) -> Self {
        LeftCursor { pool, end, group: end..end }
    }

    fn peek(&mut self) -> Option<usize> {
        if self.group.is_empty() {
            if self.end == 0 {
                return None;
            }
            let ts = self.pool[self.end - 1].timestamp;
            let start = self.pool[..self.end].partition_point(|r| r.timestamp < ts);
            self.group = start..self.end;
            self.end = start;
        }
        Some(self.group.start)
    }

    fn advance(&mut self) {
        self.group.start += 1;
    }
}

/// Nearest unclicked impressions to `click_ts` by absolute time difference.
///
/// `unclicked` must be sorted ascending by timestamp. Ties in distance go to
/// the earlier impression, then to the lower index. Cost is `O(log m + l)`.
pub fn search_context(click_ts: Timestamp, unclicked: &[ItemRecord], l: usize, opts: SearchOptions) -> ExposureContext {
    let capacity = opts.capacity(l);
    let split = unclicked.partition_point(|r| r.timestamp < click_ts);
    let mut left = LeftCursor::new(unclicked, split);
    let mut right = split;
    let mut picked = Vec::with_capacity(capacity);

    if opts.past_only {
        while picked.len() < l {
            match left.peek() {
                Some(i) => {
                    picked.push(i);
                    left.advance();
                }
                None => break,
            }
        }
    } else if opts.per_side {
        let mut taken = 0;
        while taken < l {
            match left.peek() {
                Some(i) => {
                    picked.push(i);
                    left.advance();
                    taken += 1;
                }
                None => break,
            }
        }
        let upper = (split + l).min(unclicked.len());
        picked.extend(split..upper);
    } else {
        while picked.len() < l {
            let from_left = match (left.peek(), right < unclicked.len()) {
                (None, false) => break,
                (Some(_), false) => true,
                (None, true) => false,
                (Some(i), true) => {
                    let dl = click_ts - unclicked[i].timestamp;
                    let dr = unclicked[right].timestamp - click_ts;
                    dl <= dr
                }
            };
            if from_left {
                let i = left.peek().expect("checked above");
                picked.push(i);
                left.advance();
            } else {
                picked.push(right);
                right += 1;
            }
        }
    }
    ExposureContext::from_selection(click_ts, unclicked, picked, capacity)
}

/// Attach an exposure context to every history click of every sample, plus
/// the sample's sequence-level exposure pool (the `pool_len` most recent
/// unclicked impressions).
///
/// Only impressions strictly before the sample's cutoff (its prediction
/// time) are searched, so nothing shown from then on, including a negative
/// target, can leak into the inputs.
pub fn preprocess_dataset(
    streams: &[UserStream],
    samples: &[TrainingSample],
    l: usize,
    pool_len: usize,
    opts: SearchOptions,
) -> Result<Vec<TrainingSample>> {
    if l == 0 {
        return Err(Error::Config("context capacity l must be >= 1".into()));
    }
    let unclicked: HashMap<UserId, Vec<ItemRecord>> = streams
        .iter()
        .map(|s| (s.user_id, s.unclicked_records()))
        .collect();

    samples
        .par_iter()
        .map(|sample| {
            let pool = unclicked.get(&sample.user_id).ok_or_else(|| {
                Error::Integrity(format!("sample references unknown user {}", sample.user_id))
            })?;
            let cut = pool.partition_point(|r| r.timestamp < sample.cutoff());
            let visible = &pool[..cut];
            let contexts = sample
                .history
                .iter()
                .map(|click| search_context(click.timestamp, visible, l, opts))
                .collect();
            let exposure_pool = visible[cut.saturating_sub(pool_len)..].to_vec();
            Ok(TrainingSample {
                contexts,
                exposure_pool,
                ..sample.clone()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(item: u64, ts: i64) -> ItemRecord {
        ItemRecord {
            item_id: item,
            category_id: 0,
            timestamp: ts,
            dense_feature: None,
        }
    }

    fn pool(ts: &[i64]) -> Vec<ItemRecord> {
        ts.iter().enumerate().map(|(i, &t)| rec(i as u64, t)).collect()
    }

    fn stamps(ctx: &ExposureContext) -> Vec<i64> {
        ctx.items.iter().map(|r| r.timestamp).collect()
    }

    #[test]
    fn nearest_two() {
        let ctx = search_context(6, &pool(&[1, 5, 9, 20]), 2, SearchOptions::default());
        assert_eq!(stamps(&ctx), vec![5, 9]);
        assert_eq!(ctx.mask, vec![true, true]);
    }

    #[test]
    fn fewer_than_capacity() {
        let ctx = search_context(6, &pool(&[5]), 4, SearchOptions::default());
        assert_eq!(ctx.count(), 1);
        assert_eq!(stamps(&ctx), vec![5]);
        assert_eq!(ctx.mask, vec![true, false, false, false]);
    }

    #[test]
    fn empty_pool() {
        let ctx = search_context(6, &[], 4, SearchOptions::default());
        assert_eq!(ctx.count(), 0);
        assert!(ctx.mask.iter().all(|m| !m));
    }

    #[test]
    fn equal_distance_prefers_past() {
        let ctx = search_context(10, &pool(&[8, 12]), 1, SearchOptions::default());
        assert_eq!(stamps(&ctx), vec![8]);
    }

    #[test]
    fn equal_timestamps_lowest_index_first() {
        let p = pool(&[4, 4, 4, 30]);
        let ctx = search_context(5, &p, 2, SearchOptions::default());
        let ids: Vec<u64> = ctx.items.iter().map(|r| r.item_id).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    #[test]
    fn past_only_ignores_future() {
        let ctx = search_context(
            6,
            &pool(&[1, 5, 6, 7]),
            3,
            SearchOptions {
                past_only: true,
                per_side: false,
            },
        );
        assert_eq!(stamps(&ctx), vec![1, 5]);
        assert_eq!(ctx.capacity(), 3);
    }

    #[test]
    fn per_side_takes_both() {
        let ctx = search_context(
            10,
            &pool(&[1, 2, 3, 11, 40, 50]),
            2,
            SearchOptions {
                per_side: true,
                past_only: false,
            },
        );
        assert_eq!(stamps(&ctx), vec![2, 3, 11, 40]);
        assert_eq!(ctx.capacity(), 4);
    }

    fn stream(clicks: &[i64], unclicked: &[i64]) -> UserStream {
        let mut events: Vec<_> = clicks
            .iter()
            .map(|&t| (t, true))
            .chain(unclicked.iter().map(|&t| (t, false)))
            .map(|(t, c)| crate::feedlog::FeedbackEvent {
                user_id: 1,
                item_id: t as u64,
                category_id: 0,
                timestamp: t,
                clicked: c,
                dense_feature: None,
            })
            .collect();
        events.sort_by_key(|e| e.timestamp);
        crate::feedlog::build_streams(&events).remove(0)
    }

    fn sample(history: &[i64], target_ts: i64) -> TrainingSample {
        TrainingSample {
            user_id: 1,
            history: history.iter().map(|&t| rec(t as u64, t)).collect(),
            contexts: Vec::new(),
            exposure_pool: Vec::new(),
            target: rec(999, target_ts),
            label: true,
            cutoff_ts: None,
        }
    }

    #[test]
    fn preprocess_attaches_contexts() {
        let s = stream(&[10, 30, 40], &[12, 28, 29]);
        let out = preprocess_dataset(&[s], &[sample(&[10, 30], 40)], 2, 300, SearchOptions::default()).unwrap();
        let got: Vec<Vec<i64>> = out[0].contexts.iter().map(stamps).collect();
        assert_eq!(got, vec![vec![12, 28], vec![28, 29]]);
        assert_eq!(out[0].exposure_pool.len(), 3);
    }

    #[test]
    fn preprocess_without_unclicked() {
        let s = stream(&[10, 30, 40], &[]);
        let out = preprocess_dataset(&[s], &[sample(&[10, 30], 40)], 2, 20, SearchOptions::default()).unwrap();
        assert!(out[0].contexts.iter().all(|c| c.count() == 0));
    }

    #[test]
    fn preprocess_capacity_exceeds_supply() {
        let s = stream(&[10, 30, 40], &[5, 15, 25]);
        let out = preprocess_dataset(&[s], &[sample(&[10, 30], 40)], 10, 300, SearchOptions::default()).unwrap();
        assert!(out[0].contexts.iter().all(|c| c.count() == 3));
    }

    #[test]
    fn preprocess_hides_impressions_after_target() {
        let s = stream(&[10, 30, 40], &[12, 35, 41, 45]);
        let out = preprocess_dataset(&[s], &[sample(&[10, 30], 40)], 4, 300, SearchOptions::default()).unwrap();
        for ctx in &out[0].contexts {
            assert!(ctx.items.iter().all(|r| r.timestamp < 40));
        }
        assert_eq!(out[0].exposure_pool.len(), 2);
    }

    #[test]
    fn preprocess_pool_keeps_most_recent() {
        let s = stream(&[10, 30, 40], &[1, 2, 3, 4, 5]);
        let out = preprocess_dataset(&[s], &[sample(&[10, 30], 40)], 2, 2, SearchOptions::default()).unwrap();
        let ts: Vec<i64> = out[0].exposure_pool.iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, vec![4, 5]);
    }

    #[test]
    fn preprocess_unknown_user() {
        let s = stream(&[10, 30], &[12]);
        let mut orphan = sample(&[10], 30);
        orphan.user_id = 2;
        assert!(matches!(
            preprocess_dataset(&[s], &[orphan], 2, 20, SearchOptions::default()),
            Err(Error::Integrity(_))
        ));
    }
}
