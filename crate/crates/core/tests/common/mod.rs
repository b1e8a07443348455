#![allow(dead_code)]

use rand::Rng;
use tem4ctr::diffcore::ParamStore;
use tem4ctr::feedlog::{ItemRecord, TrainingSample};
use tem4ctr::stm::{search_context, SearchOptions};

pub fn item<R: Rng>(rng: &mut R, num_items: usize, num_categories: usize, ts: i64) -> ItemRecord {
    ItemRecord {
        item_id: rng.random_range(0..num_items as u64),
        category_id: rng.random_range(0..num_categories as u64),
        timestamp: ts,
        dense_feature: None,
    }
}

/// A preprocessed sample with `n` history clicks whose contexts are searched
/// in a random pool of unclicked impressions (possibly empty).
pub fn random_sample<R: Rng>(
    rng: &mut R,
    n: usize,
    l: usize,
    num_items: usize,
    num_categories: usize,
    label: bool,
) -> TrainingSample {
    let history: Vec<ItemRecord> = (0..n)
        .map(|j| item(rng, num_items, num_categories, 100 * j as i64))
        .collect();
    let pool_len = rng.random_range(0..3 * l + 2);
    let mut pool: Vec<ItemRecord> = (0..pool_len)
        .map(|_| {
            let ts = rng.random_range(0..100 * n as i64);
            item(rng, num_items, num_categories, ts)
        })
        .collect();
    pool.sort_by_key(|r| r.timestamp);
    let contexts = history
        .iter()
        .map(|h| search_context(h.timestamp, &pool, l, SearchOptions::default()))
        .collect();
    let exposure_pool = pool.iter().rev().take(l * n).rev().cloned().collect();
    TrainingSample {
        user_id: 0,
        history,
        contexts,
        exposure_pool,
        target: item(rng, num_items, num_categories, 100 * n as i64),
        label,
        cutoff_ts: None,
    }
}

/// Overwrite every parameter from one flat vector in store order.
pub fn set_flat(store: &mut ParamStore, values: &[f64]) {
    let mut offset = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let t = store.get_mut(id);
        let n = t.numel();
        t.values_mut().copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    assert_eq!(offset, values.len());
}
