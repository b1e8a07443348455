//! Synthetic impression logs with a planted exposure-context signal.
//!
//! Each user has a taste vector. Every session starts with one click whose
//! category (the session intent) is drawn from a temperature-scaled softmax
//! of taste against the category centres, and whose item is drawn the same
//! way within that category. A burst of unclicked impressions follows. With
//! probability `context_signal_strength` the burst previews the category of
//! the user's next intent; otherwise its categories are uniform and carry no
//! information. The final click is followed by a burst previewing an intent
//! that never materialises, so later impressions (the negatives) are drawn
//! from the same taste distribution as clicks and only the exposure context
//! tells them apart.
//!
//! Inter-session gaps are exponential with per-user rates spread
//! lognormally, so some users are dense and others sparse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};

use super::config::SynthConfig;
use crate::derive_seed;
use crate::feedlog::FeedbackEvent;
use crate::Result;

const CATALOG_STREAM: u64 = u64::MAX;
/// Mean gap between sessions for a user of unit rate, in seconds.
const MEAN_SESSION_GAP: f64 = 6.0 * 3600.0;
/// Mean spacing between consecutive impressions inside a session.
const MEAN_IMPRESSION_GAP: f64 = 20.0;
/// Spread of item vectors around their category centre.
const ITEM_SPREAD: f64 = 0.35;

struct Catalog {
    centers: Vec<Vec<f64>>,
    items: Vec<Vec<f64>>,
    /// Item ids per category; item `i` belongs to category `i % C`.
    by_category: Vec<Vec<usize>>,
}

fn unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Catalog {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, CATALOG_STREAM));
        let centers: Vec<Vec<f64>> = (0..cfg.num_categories).map(|_| unit(&mut rng, cfg.latent_dim)).collect();
        let mut by_category = vec![Vec::new(); cfg.num_categories];
        let items = (0..cfg.num_items)
            .map(|i| {
                let c = i % cfg.num_categories;
                by_category[c].push(i);
                let noise = unit(&mut rng, cfg.latent_dim);
                let v: Vec<f64> = centers[c].iter().zip(&noise).map(|(a, b)| a + ITEM_SPREAD * b).collect();
                let norm = dot(&v, &v).sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Catalog {
            centers,
            items,
            by_category,
        }
    }
}

/// Index drawn from `softmax(scores / temperature)`.
fn softmax_choice<R: Rng>(rng: &mut R, scores: impl Iterator<Item = f64>, temperature: f64) -> usize {
    let scores: Vec<f64> = scores.map(|s| s / temperature).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generate `num_users * events_per_user` events, grouped by user and
/// ascending in time within each user.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<FeedbackEvent>> {
    cfg.validate()?;
    let catalog = Catalog::new(cfg);
    let mut events = Vec::with_capacity(cfg.num_users * cfg.events_per_user);
    for user in 0..cfg.num_users as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, user));
        simulate_user(cfg, &catalog, user, &mut rng, &mut events);
    }
    Ok(events)
}

fn simulate_user(cfg: &SynthConfig, catalog: &Catalog, user: u64, rng: &mut ChaCha8Rng, out: &mut Vec<FeedbackEvent>) {
    let taste = unit(rng, cfg.latent_dim);
    let clicks = ((cfg.events_per_user as f64 * (1.0 - cfg.exposure_rate)).round() as usize)
        .clamp(2, cfg.events_per_user - 1);
    let impressions = cfg.events_per_user - clicks;

    // Burst sizes: the final burst gets at least one impression, the rest
    // are spread uniformly over sessions.
    let mut burst = vec![0usize; clicks];
    burst[clicks - 1] = 1;
    for _ in 1..impressions {
        burst[rng.random_range(0..clicks)] += 1;
    }

    // One intent per session plus a hypothetical next one that the final
    // burst previews but no click ever realises.
    let affinity: Vec<f64> = catalog.centers.iter().map(|c| dot(c, &taste)).collect();
    let intents: Vec<usize> = (0..=clicks)
        .map(|_| softmax_choice(rng, affinity.iter().copied(), cfg.click_temperature))
        .collect();

    let rate: f64 = LogNormal::new(0.0, 1.0).expect("valid lognormal").sample(rng);
    let session_gap = Exp::new(rate / MEAN_SESSION_GAP).expect("positive rate");
    let impression_gap = Exp::new(1.0 / MEAN_IMPRESSION_GAP).expect("positive rate");
    let mut ts: i64 = rng.random_range(0..30 * 86_400);

    let record = |item: usize, ts: i64, clicked: bool| FeedbackEvent {
        user_id: user,
        item_id: item as u64,
        category_id: (item % cfg.num_categories) as u64,
        timestamp: ts,
        clicked,
        dense_feature: None,
    };

    for j in 0..clicks {
        let pool = &catalog.by_category[intents[j]];
        let clicked = pool[softmax_choice(
            rng,
            pool.iter().map(|&i| dot(&catalog.items[i], &taste)),
            cfg.click_temperature,
        )];
        out.push(record(clicked, ts, true));
        let preview = (rng.random::<f64>() < cfg.context_signal_strength).then_some(intents[j + 1]);
        for _ in 0..burst[j] {
            ts += 1 + impression_gap.sample(rng) as i64;
            let category = preview.unwrap_or_else(|| rng.random_range(0..cfg.num_categories));
            let pool = &catalog.by_category[category];
            out.push(record(pool[rng.random_range(0..pool.len())], ts, false));
        }
        ts += 1 + session_gap.sample(rng) as i64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedlog::build_streams;

    fn small(strength: f64) -> SynthConfig {
        SynthConfig {
            num_users: 20,
            num_items: 100,
            num_categories: 5,
            events_per_user: 30,
            context_signal_strength: strength,
            seed: 9,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn event_count_and_order() {
        let cfg = SynthConfig::default();
        let events = gen_synthetic(&cfg).unwrap();
        assert_eq!(events.len(), 25_000);
        for stream in build_streams(&events) {
            assert_eq!(stream.events.len(), 50);
            assert!(stream.clicked_idx.len() >= 2);
            // The last event is an impression after the final click.
            assert!(!stream.events.last().unwrap().clicked);
        }
    }

    #[test]
    fn seeded_determinism() {
        assert_eq!(gen_synthetic(&small(0.5)).unwrap(), gen_synthetic(&small(0.5)).unwrap());
        let other = SynthConfig { seed: 10, ..small(0.5) };
        assert_ne!(gen_synthetic(&small(0.5)).unwrap(), gen_synthetic(&other).unwrap());
    }

    #[test]
    fn full_strength_previews_next_click() {
        let events = gen_synthetic(&small(1.0)).unwrap();
        for stream in build_streams(&events) {
            let clicks: Vec<usize> = stream.clicked_idx.clone();
            for w in clicks.windows(2) {
                let next_cat = stream.events[w[1]].category_id;
                for e in &stream.events[w[0] + 1..w[1]] {
                    assert_eq!(e.category_id, next_cat);
                }
            }
        }
    }
}
