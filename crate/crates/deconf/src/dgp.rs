//! Seeded generators for the synthetic confounded scenarios.
//!
//! Randomness is counter-based: every item owns a ChaCha stream keyed by
//! (seed, item index), every context a stream keyed by (seed, context index),
//! so generation order and thread count cannot change the output.

use std::collections::BTreeMap;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::model::{Dataset, DgpConfig, Item, PreferencePair, Scenario, Split};

/// Region mention of a headline. `None` means no team reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionTag {
    None,
    West,
    Central,
    East,
}

impl RegionTag {
    pub const ALL: [RegionTag; 4] = [
        RegionTag::None,
        RegionTag::West,
        RegionTag::Central,
        RegionTag::East,
    ];

    /// Index into the region_prob vector (0 = none).
    pub fn index(self) -> usize {
        match self {
            RegionTag::None => 0,
            RegionTag::West => 1,
            RegionTag::Central => 2,
            RegionTag::East => 3,
        }
    }

    pub fn from_index(i: usize) -> RegionTag {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionTag::None => "none",
            RegionTag::West => "west",
            RegionTag::Central => "central",
            RegionTag::East => "east",
        }
    }
}

/// Instrument column names for the region one-hot.
pub const REGION_INSTRUMENTS: [&str; 3] = ["region_west", "region_central", "region_east"];

const CONTEXT_STREAM_BASE: u64 = 1 << 63;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn master_key(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(seed ^ (i as u64)).to_le_bytes());
    }
    key
}

/// Per-item RNG stream: independent of generation order.
pub fn item_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(master_key(seed));
    rng.set_stream(index);
    rng
}

/// Per-context RNG stream, disjoint from item streams.
pub fn context_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(master_key(seed));
    rng.set_stream(CONTEXT_STREAM_BASE | index);
    rng
}

fn sample_region(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn normal(rng: &mut impl Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).expect("sd validated nonnegative").sample(rng)
    }
}

/// Attributes an embedding is assembled from.
#[derive(Debug, Clone, Default)]
pub struct EmbedAttrs {
    pub sentiment: f64,
    /// Region index (0 = none) for the orthogonal/entangled layouts.
    pub region: Option<usize>,
    /// Month 1..=12 for the temporal layout.
    pub month: Option<u8>,
    /// Monday marker for the weekday layout.
    pub monday: Option<bool>,
}

/// Temporal feature scales. Ridge shrinks directions in inverse proportion
/// to their data variance, so the layout keeps the variance ordering
/// sentiment > nuisance > month block: month effects are the first casualty
/// of regularization, nuisance noise the second, sentiment the last.
pub const MONTH_BLOCK_SCALE: f64 = 0.3;
pub const TEMPORAL_NUISANCE_SD: f64 = 0.15;

/// Deterministic embedding layout, per scenario:
///
/// * orthogonal/entangled: `[sentiment, west, central, east, nuisance...]`
/// * temporal:             `[sentiment, month_01..month_12, nuisance...]`
/// * weekday_marker:       `[sentiment, marker, nuisance...]`
pub fn embed(attrs: &EmbedAttrs, nuisance: &[f64], cfg: &DgpConfig) -> Result<Vec<f64>> {
    let fixed = cfg.fixed_dims();
    if cfg.d < fixed + nuisance.len() {
        return Err(Error::Config(format!(
            "embedding dimension d = {} too small for layout ({} fixed + {} nuisance)",
            cfg.d,
            fixed,
            nuisance.len()
        )));
    }
    let mut v = vec![0.0; cfg.d];
    v[0] = attrs.sentiment;
    match cfg.scenario {
        Scenario::Orthogonal | Scenario::Entangled => {
            if let Some(r) = attrs.region {
                if r > 0 {
                    v[r] = 1.0;
                }
            }
        }
        Scenario::Temporal => {
            if let Some(m) = attrs.month {
                v[m as usize] = MONTH_BLOCK_SCALE;
            }
        }
        Scenario::WeekdayMarker => {
            if attrs.monday == Some(true) {
                v[1] = 1.0;
            }
        }
    }
    v[fixed..fixed + nuisance.len()].copy_from_slice(nuisance);
    Ok(v)
}

fn split_for_context(context_index: usize) -> Split {
    match context_index % 10 {
        0..=5 => Split::Train,
        6 | 7 => Split::Valid,
        _ => Split::Test,
    }
}

fn item_id(i: usize) -> String {
    format!("i{i:06}")
}

fn context_id(i: usize) -> String {
    format!("c{i:06}")
}

/// Context membership (context id, item indices) for a config. Weekday
/// context sizes come from the per-context streams, so this reproduces the
/// exact grouping the generators used.
pub fn context_layout(cfg: &DgpConfig) -> Vec<(String, Vec<usize>)> {
    match cfg.scenario {
        Scenario::WeekdayMarker => {
            let mut next = 0usize;
            (0..cfg.n)
                .map(|c| {
                    let size = context_stream(cfg.seed, c as u64).gen_range(2..=5usize);
                    let members = (next..next + size).collect();
                    next += size;
                    (context_id(c), members)
                })
                .collect()
        }
        _ => {
            let n_contexts = cfg.n.div_ceil(cfg.context_size);
            (0..n_contexts)
                .map(|c| {
                    let lo = c * cfg.context_size;
                    let hi = ((c + 1) * cfg.context_size).min(cfg.n);
                    (context_id(c), (lo..hi).collect())
                })
                .collect()
        }
    }
}

/// All strictly-ordered pairs per context, capped at `cap` pairs per context.
/// Selection keeps the largest margins, ties broken by (winner_id, loser_id).
pub fn build_pairs(groups: &[(String, Vec<&Item>)], cap: usize) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for (ctx, items) in groups {
        let mut candidates = Vec::new();
        for a in items {
            for b in items {
                if a.outcome > b.outcome {
                    candidates.push(PreferencePair {
                        context_id: ctx.clone(),
                        winner_id: a.id.clone(),
                        loser_id: b.id.clone(),
                        margin: a.outcome - b.outcome,
                    });
                }
            }
        }
        candidates.sort_by(|x, y| {
            y.margin
                .partial_cmp(&x.margin)
                .unwrap()
                .then_with(|| x.winner_id.cmp(&y.winner_id))
                .then_with(|| x.loser_id.cmp(&y.loser_id))
        });
        candidates.truncate(cap);
        out.extend(candidates);
    }
    out
}

fn assemble(items: Vec<Item>, contexts: Vec<(String, Vec<usize>)>, cap: usize) -> Dataset {
    let mut split = BTreeMap::new();
    for (ci, (_, members)) in contexts.iter().enumerate() {
        let s = split_for_context(ci);
        for &m in members {
            split.insert(items[m].id.clone(), s);
        }
    }
    let groups: Vec<(String, Vec<&Item>)> = contexts
        .iter()
        .map(|(cid, members)| (cid.clone(), members.iter().map(|&m| &items[m]).collect()))
        .collect();
    let pairs = build_pairs(&groups, cap);
    Dataset { items, pairs, split }
}

fn gen_region_scenario(cfg: &DgpConfig, entangle: f64) -> Result<Dataset> {
    let cfg = cfg.clone().validated()?;
    let mut items = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = item_stream(cfg.seed, i as u64);
        let s: f64 = rng.gen();
        let region = sample_region(&mut rng, &cfg.region_prob);
        let eps = normal(&mut rng, cfg.noise_confounder_sd);
        let nu = normal(&mut rng, cfg.noise_outcome_sd);
        let nuisance: Vec<f64> = (0..cfg.nuisance_dims)
            .map(|_| normal(&mut rng, 1.0))
            .collect();

        let level = if region == 0 {
            0.0
        } else {
            cfg.region_levels[region - 1]
        };
        let p_structural = level + entangle * s;
        let p = p_structural + eps;
        let y = s + cfg.coef_confounder * p + nu;

        let embedding = embed(
            &EmbedAttrs {
                sentiment: s,
                region: Some(region),
                ..Default::default()
            },
            &nuisance,
            &cfg,
        )?;

        let mut confounders = BTreeMap::new();
        confounders.insert("popularity".to_string(), p);
        let mut instruments = BTreeMap::new();
        for (k, name) in REGION_INSTRUMENTS.iter().enumerate() {
            instruments.insert((*name).to_string(), if region == k + 1 { 1.0 } else { 0.0 });
        }
        let mut latent = BTreeMap::new();
        latent.insert("sentiment".to_string(), s);
        latent.insert("popularity_true".to_string(), p_structural);
        latent.insert("noise_outcome".to_string(), nu);
        latent.insert("region".to_string(), region as f64);

        items.push(Item {
            id: item_id(i),
            embedding,
            confounders,
            instruments,
            latent: Some(latent),
            outcome: y,
            time_month: None,
            time_weekday: None,
        });
    }

    Ok(assemble(items, context_layout(&cfg), cfg.pair_cap))
}

/// Popularity driven by region mentions only, independent of sentiment.
pub fn gen_orthogonal(cfg: &DgpConfig) -> Result<Dataset> {
    if cfg.scenario != Scenario::Orthogonal {
        return Err(Error::Config("scenario must be orthogonal".into()));
    }
    gen_region_scenario(cfg, 0.0)
}

/// Popularity entangled with sentiment through `coef_entangle`.
pub fn gen_entangled(cfg: &DgpConfig) -> Result<Dataset> {
    if cfg.scenario != Scenario::Entangled {
        return Err(Error::Config("scenario must be entangled".into()));
    }
    gen_region_scenario(cfg, cfg.coef_entangle)
}

/// Monthly additive effects on the outcome; all items of a context share a
/// month, so the effect cancels within preference pairs.
pub fn gen_temporal(cfg: &DgpConfig, month_effects: &[f64]) -> Result<Dataset> {
    if cfg.scenario != Scenario::Temporal {
        return Err(Error::Config("scenario must be temporal".into()));
    }
    if month_effects.len() != 12 {
        return Err(Error::Config(format!(
            "month_effects must have 12 entries, got {}",
            month_effects.len()
        )));
    }
    let cfg = cfg.clone().validated()?;
    let months: Vec<u8> = (0..cfg.n.div_ceil(cfg.context_size))
        .map(|c| context_stream(cfg.seed, c as u64).gen_range(1..=12u8))
        .collect();

    let mut items = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = item_stream(cfg.seed, i as u64);
        let s: f64 = rng.gen();
        let nu = normal(&mut rng, cfg.noise_outcome_sd);
        let nuisance: Vec<f64> = (0..cfg.nuisance_dims)
            .map(|_| normal(&mut rng, TEMPORAL_NUISANCE_SD))
            .collect();
        let month = months[i / cfg.context_size];
        let effect = month_effects[month as usize - 1];
        let y = s + effect + nu;

        let embedding = embed(
            &EmbedAttrs {
                sentiment: s,
                month: Some(month),
                ..Default::default()
            },
            &nuisance,
            &cfg,
        )?;

        let mut confounders = BTreeMap::new();
        confounders.insert("month_effect".to_string(), effect);
        let mut instruments = BTreeMap::new();
        for m in 1..=12u8 {
            instruments.insert(
                format!("month_{m:02}"),
                if m == month { 1.0 } else { 0.0 },
            );
        }
        let mut latent = BTreeMap::new();
        latent.insert("sentiment".to_string(), s);
        latent.insert("noise_outcome".to_string(), nu);

        items.push(Item {
            id: item_id(i),
            embedding,
            confounders,
            instruments,
            latent: Some(latent),
            outcome: y,
            time_month: Some(month),
            time_weekday: None,
        });
    }

    Ok(assemble(items, context_layout(&cfg), cfg.pair_cap))
}

/// Monday boost that makes a Monday item beat an independent non-Monday item
/// with probability `skew`, given Uniform[0,1] qualities.
pub fn monday_boost(skew: f64) -> f64 {
    if skew >= 0.5 {
        1.0 - (2.0 * (1.0 - skew)).sqrt()
    } else {
        (2.0 * skew).sqrt() - 1.0
    }
}

/// Weekday-marker scenario: `cfg.n` contexts of 2-5 items each; a dedicated
/// marker dimension is 1 iff the item was posted on a Monday, and outcomes
/// carry a Monday boost calibrated so mixed pairs favor Monday with
/// probability `skew`.
pub fn gen_weekday_pairs(cfg: &DgpConfig, skew: f64) -> Result<Dataset> {
    if cfg.scenario != Scenario::WeekdayMarker {
        return Err(Error::Config("scenario must be weekday_marker".into()));
    }
    if !(0.0..=1.0).contains(&skew) {
        return Err(Error::Config(format!("skew {skew} outside [0, 1]")));
    }
    let cfg = cfg.clone().validated()?;
    let boost = monday_boost(skew);

    let contexts = context_layout(&cfg);
    let mut items = Vec::new();
    for (c, (_, members)) in contexts.iter().enumerate() {
        for (k, &i) in members.iter().enumerate() {
            debug_assert_eq!(i, items.len());
            // stream keyed by (context, slot) so context sizes upstream
            // cannot shift later items' draws
            let mut rng = item_stream(cfg.seed, ((c as u64) << 3) | k as u64);
            let s: f64 = rng.gen();
            let weekday = rng.gen_range(0..7u8); // 0 = Monday
            let nuisance: Vec<f64> = (0..cfg.nuisance_dims)
                .map(|_| normal(&mut rng, 1.0))
                .collect();
            let monday = weekday == 0;
            let y = s + if monday { boost } else { 0.0 };

            let embedding = embed(
                &EmbedAttrs {
                    sentiment: s,
                    monday: Some(monday),
                    ..Default::default()
                },
                &nuisance,
                &cfg,
            )?;

            let mut confounders = BTreeMap::new();
            confounders.insert("monday".to_string(), if monday { 1.0 } else { 0.0 });
            let mut latent = BTreeMap::new();
            latent.insert("sentiment".to_string(), s);

            items.push(Item {
                id: item_id(i),
                embedding,
                confounders,
                instruments: BTreeMap::new(),
                latent: Some(latent),
                outcome: y,
                time_month: None,
                time_weekday: Some(weekday),
            });
        }
    }
    Ok(assemble(items, contexts, cfg.pair_cap))
}

/// Dispatch on `cfg.scenario`.
pub fn generate(cfg: &DgpConfig, month_effects: Option<&[f64]>, skew: Option<f64>) -> Result<Dataset> {
    match cfg.scenario {
        Scenario::Orthogonal => gen_orthogonal(cfg),
        Scenario::Entangled => gen_entangled(cfg),
        Scenario::Temporal => {
            let effects = month_effects
                .ok_or_else(|| Error::Config("temporal scenario requires month_effects".into()))?;
            gen_temporal(cfg, effects)
        }
        Scenario::WeekdayMarker => {
            let skew = skew
                .ok_or_else(|| Error::Config("weekday_marker scenario requires skew".into()))?;
            gen_weekday_pairs(cfg, skew)
        }
    }
}
