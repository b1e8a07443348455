//! Property tests for the invariants not covered by the acceptance suite.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tem4ctr::feedlog::{event_to_line, parse_events_str, read_samples, write_samples, FeedbackEvent, ItemRecord};
use tem4ctr::harness::{auc, prepare_dataset, ExperimentConfig};
use tem4ctr::model::{ModelConfig, ModelVariant, Tem4Ctr};
use tem4ctr::stm::{search_context, SearchOptions};

fn pool_from(timestamps: &[i64]) -> Vec<ItemRecord> {
    let mut ts = timestamps.to_vec();
    ts.sort_unstable();
    ts.into_iter()
        .enumerate()
        .map(|(i, t)| ItemRecord {
            item_id: i as u64,
            category_id: 0,
            timestamp: t,
            dense_feature: None,
        })
        .collect()
}

fn ids(items: &[ItemRecord]) -> Vec<u64> {
    items.iter().map(|r| r.item_id).collect()
}

/// Positions before the click, nearest first, equal timestamps by index.
fn past_oracle(click: i64, pool: &[ItemRecord], l: usize) -> Vec<usize> {
    let mut before: Vec<usize> = (0..pool.len()).filter(|&i| pool[i].timestamp < click).collect();
    before.sort_by_key(|&i| (click - pool[i].timestamp, i));
    before.truncate(l);
    before
}

fn events_strategy() -> impl Strategy<Value = Vec<FeedbackEvent>> {
    (any::<u64>(), 1usize..8, 2usize..30).prop_map(|(seed, users, per_user)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        for user in 0..users as u64 {
            let mut ts = rng.random_range(0..1000i64);
            for _ in 0..per_user {
                ts += rng.random_range(0..5);
                events.push(FeedbackEvent {
                    user_id: user,
                    item_id: rng.random_range(0..40),
                    category_id: rng.random_range(0..5),
                    timestamp: ts,
                    clicked: rng.random_bool(0.3),
                    dense_feature: None,
                });
            }
        }
        events
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn past_only_matches_oracle(ts in prop::collection::vec(0i64..50, 0..30), click in -5i64..55, l in 1usize..10) {
        let pool = pool_from(&ts);
        let opts = SearchOptions { past_only: true, ..SearchOptions::default() };
        let got = search_context(click, &pool, l, opts);
        let mut want = past_oracle(click, &pool, l);
        want.sort_unstable();
        prop_assert_eq!(ids(&got.items), want.iter().map(|&i| i as u64).collect::<Vec<_>>());
        prop_assert!(got.items.iter().all(|r| r.timestamp < click));
        prop_assert_eq!(got.capacity(), l);
    }

    #[test]
    fn per_side_matches_oracle(ts in prop::collection::vec(0i64..50, 0..30), click in -5i64..55, l in 1usize..10) {
        let pool = pool_from(&ts);
        let opts = SearchOptions { per_side: true, ..SearchOptions::default() };
        let got = search_context(click, &pool, l, opts);
        let mut want = past_oracle(click, &pool, l);
        want.extend((0..pool.len()).filter(|&i| pool[i].timestamp >= click).take(l));
        want.sort_unstable();
        prop_assert_eq!(ids(&got.items), want.iter().map(|&i| i as u64).collect::<Vec<_>>());
        prop_assert_eq!(got.capacity(), 2 * l);
    }

    #[test]
    fn context_is_a_sorted_valid_prefix(ts in prop::collection::vec(0i64..50, 0..30), click in 0i64..50, l in 1usize..10) {
        let pool = pool_from(&ts);
        let got = search_context(click, &pool, l, SearchOptions::default());
        prop_assert_eq!(got.count(), l.min(pool.len()));
        prop_assert!(got.mask[..got.count()].iter().all(|&m| m));
        prop_assert!(got.mask[got.count()..].iter().all(|&m| !m));
        prop_assert!(got.items.windows(2).all(|w| w[0].item_id < w[1].item_id));
    }

    #[test]
    fn larger_budget_keeps_the_nearer_items(ts in prop::collection::vec(0i64..50, 0..30), click in 0i64..50, l in 1usize..10) {
        let pool = pool_from(&ts);
        let small = ids(&search_context(click, &pool, l, SearchOptions::default()).items);
        let large = ids(&search_context(click, &pool, l + 1, SearchOptions::default()).items);
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn no_input_reaches_past_the_target(events in events_strategy(), n in 2usize..6, l in 1usize..4) {
        let cfg = ExperimentConfig { n, l, samples_per_user: 2, ..ExperimentConfig::default() };
        let data = prepare_dataset(&events, &cfg).unwrap();
        for s in data.train.iter().chain(&data.test) {
            let t = s.cutoff();
            prop_assert!(s.target.timestamp >= t);
            prop_assert!(s.history.len() <= n);
            prop_assert!(s.history.iter().all(|h| h.timestamp <= t));
            prop_assert_eq!(s.contexts.len(), s.history.len());
            for ctx in &s.contexts {
                prop_assert!(ctx.items.iter().all(|r| r.timestamp < t));
                prop_assert!(ctx.count() <= l);
            }
            prop_assert!(s.exposure_pool.len() <= l * n);
            prop_assert!(s.exposure_pool.iter().all(|r| r.timestamp < t));
        }
    }

    #[test]
    fn event_lines_round_trip(events in events_strategy(), feat in prop::option::of(prop::collection::vec(-1e6f64..1e6, 1..4))) {
        let events: Vec<FeedbackEvent> = events
            .into_iter()
            .map(|e| FeedbackEvent { dense_feature: feat.clone(), ..e })
            .collect();
        let text: String = events.iter().map(|e| event_to_line(e) + "\n").collect();
        prop_assert_eq!(parse_events_str(&text).unwrap(), events);
    }

    #[test]
    fn samples_round_trip(events in events_strategy()) {
        let cfg = ExperimentConfig { n: 4, l: 2, ..ExperimentConfig::default() };
        let data = prepare_dataset(&events, &cfg).unwrap();
        let mut buf = Vec::new();
        write_samples(&data.train, &mut buf).unwrap();
        prop_assert_eq!(read_samples(&buf[..]).unwrap(), data.train);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(scores in prop::collection::vec(0u8..10, 2..60), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let s: Vec<f64> = scores.iter().map(|&x| f64::from(x)).collect();
        let warped: Vec<f64> = s.iter().map(|x| (x * 0.3).exp() - 7.0).collect();
        let flipped: Vec<bool> = labels.iter().map(|y| !y).collect();
        let a = auc(&s, &labels).unwrap();
        prop_assert_eq!(a, auc(&warped, &labels).unwrap());
        prop_assert!((auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn probability_is_open_unit_and_embeddings_get_gradient(seed in any::<u64>(), variant in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = ModelVariant::ALL[variant];
        let model = Tem4Ctr::new(ModelConfig { variant, ..ModelConfig::new(3, 15, 4) }, seed).unwrap();
        let label = rng.random_bool(0.5);
        let sample = common::random_sample(&mut rng, 3, 2, 15, 4, label);
        let p = model.predict(&sample).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
        let (_, grads) = model.loss_and_grad(&[&sample]).unwrap();
        for table in [model.tables.item_table, model.tables.category_table] {
            let g = grads.get(table).expect("embedding tables are trainable");
            prop_assert!(g.iter().any(|&v| v != 0.0), "no gradient reached {}", model.params.name(table));
        }
    }
}
