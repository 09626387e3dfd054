//! Shared domain types: items, preference pairs, datasets, and generator
//! configuration.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which split an item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One logged interaction: an embedding, named confounders/instruments,
/// optional simulation ground truth, and the observed outcome.
///
/// `latent` is evaluation-only ground truth; training operations never read it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub embedding: Vec<f64>,
    pub confounders: BTreeMap<String, f64>,
    pub instruments: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<BTreeMap<String, f64>>,
    pub outcome: f64,
    #[serde(rename = "month", default, skip_serializing_if = "Option::is_none")]
    pub time_month: Option<u8>,
    #[serde(rename = "weekday", default, skip_serializing_if = "Option::is_none")]
    pub time_weekday: Option<u8>,
}

impl Item {
    pub fn latent_value(&self, name: &str) -> Option<f64> {
        self.latent.as_ref().and_then(|m| m.get(name).copied())
    }
}

/// Ordered comparison between two items of the same context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context_id: String,
    pub winner_id: String,
    pub loser_id: String,
    pub margin: f64,
}

/// In-memory dataset: items, preference pairs, and the split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub pairs: Vec<PreferencePair>,
    pub split: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn item(&self, id: &str) -> Option<&Item> {
        self.items.iter().find(|it| it.id == id)
    }

    /// Items of one split, in dataset order.
    pub fn split_items(&self, split: Split) -> Vec<&Item> {
        self.items
            .iter()
            .filter(|it| self.split.get(&it.id) == Some(&split))
            .collect()
    }

    /// Pairs whose members belong to the given split.
    pub fn split_pairs(&self, split: Split) -> Vec<&PreferencePair> {
        self.pairs
            .iter()
            .filter(|p| self.split.get(&p.winner_id) == Some(&split))
            .collect()
    }
}

/// Generator scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Orthogonal,
    Entangled,
    Temporal,
    WeekdayMarker,
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::Orthogonal => "orthogonal",
            Scenario::Entangled => "entangled",
            Scenario::Temporal => "temporal",
            Scenario::WeekdayMarker => "weekday_marker",
        };
        f.write_str(s)
    }
}

/// Configuration for the synthetic generators.
///
/// For `weekday_marker`, `n` counts contexts (each holding 2-5 items);
/// for the other scenarios it counts items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_coef_confounder")]
    pub coef_confounder: f64,
    #[serde(default = "default_coef_entangle")]
    pub coef_entangle: f64,
    #[serde(default = "default_region_levels")]
    pub region_levels: Vec<f64>,
    #[serde(default = "default_noise_outcome_sd")]
    pub noise_outcome_sd: f64,
    #[serde(default = "default_noise_confounder_sd")]
    pub noise_confounder_sd: f64,
    /// Total embedding dimension; 0 means "derive from the scenario layout
    /// plus `nuisance_dims`".
    #[serde(default)]
    pub d: usize,
    #[serde(default = "default_nuisance_dims")]
    pub nuisance_dims: usize,
    /// Probabilities for the region categories, in order none/west/central/east.
    #[serde(default = "default_region_prob")]
    pub region_prob: Vec<f64>,
    /// Items per context for the non-weekday scenarios.
    #[serde(default = "default_context_size")]
    pub context_size: usize,
    /// Per-context cap on generated preference pairs.
    #[serde(default = "default_pair_cap")]
    pub pair_cap: usize,
}

fn default_coef_confounder() -> f64 {
    0.1
}
fn default_coef_entangle() -> f64 {
    -10.5
}
fn default_region_levels() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}
fn default_noise_outcome_sd() -> f64 {
    0.1
}
fn default_noise_confounder_sd() -> f64 {
    0.5
}
fn default_nuisance_dims() -> usize {
    8
}
fn default_region_prob() -> Vec<f64> {
    vec![0.25, 0.25, 0.25, 0.25]
}
fn default_context_size() -> usize {
    4
}
fn default_pair_cap() -> usize {
    10
}

impl DgpConfig {
    pub fn new(scenario: Scenario, n: usize, seed: u64) -> Self {
        let mut cfg = DgpConfig {
            scenario,
            n,
            seed,
            coef_confounder: default_coef_confounder(),
            coef_entangle: default_coef_entangle(),
            region_levels: default_region_levels(),
            noise_outcome_sd: default_noise_outcome_sd(),
            noise_confounder_sd: default_noise_confounder_sd(),
            d: 0,
            nuisance_dims: default_nuisance_dims(),
            region_prob: default_region_prob(),
            context_size: default_context_size(),
            pair_cap: default_pair_cap(),
        };
        cfg.d = cfg.fixed_dims() + cfg.nuisance_dims;
        cfg
    }

    /// Number of non-nuisance embedding dimensions for the scenario layout.
    pub fn fixed_dims(&self) -> usize {
        match self.scenario {
            // [sentiment, west, central, east]
            Scenario::Orthogonal | Scenario::Entangled => 1 + self.region_levels.len(),
            // [sentiment, month_01 .. month_12]
            Scenario::Temporal => 1 + 12,
            // [sentiment, marker]
            Scenario::WeekdayMarker => 2,
        }
    }

    /// Resolve `d` (deriving it when left at 0) and check all invariants.
    pub fn validated(mut self) -> Result<Self> {
        if self.n < 1 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.noise_outcome_sd < 0.0 || self.noise_confounder_sd < 0.0 {
            return Err(Error::Config("noise sds must be >= 0".into()));
        }
        if self.region_prob.len() != self.region_levels.len() + 1 {
            return Err(Error::Config(format!(
                "region_prob needs {} entries (none + one per level), got {}",
                self.region_levels.len() + 1,
                self.region_prob.len()
            )));
        }
        let psum: f64 = self.region_prob.iter().sum();
        if self.region_prob.iter().any(|&p| p < 0.0) || (psum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "region_prob must be nonnegative and sum to 1 (sum {psum})"
            )));
        }
        if self.context_size < 1 {
            return Err(Error::Config("context_size must be >= 1".into()));
        }
        if self.pair_cap < 1 {
            return Err(Error::Config("pair_cap must be >= 1".into()));
        }
        let want = self.fixed_dims() + self.nuisance_dims;
        if self.d == 0 {
            self.d = want;
        } else if self.d != want {
            return Err(Error::Config(format!(
                "d = {} inconsistent with layout: fixed {} + nuisance {} = {want}",
                self.d,
                self.fixed_dims(),
                self.nuisance_dims
            )));
        }
        Ok(self)
    }
}

/// Check every dataset invariant. Violations are data, not failures: the
/// returned list is empty iff the dataset is well formed, and each entry
/// names the offending id or field.
pub fn validate(ds: &Dataset) -> Vec<String> {
    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();

    for item in &ds.items {
        if !ids.insert(item.id.as_str()) {
            violations.push(format!("duplicate item id {:?}", item.id));
        }
        if item.embedding.iter().any(|v| !v.is_finite()) {
            violations.push(format!("item {:?}: non-finite embedding entry", item.id));
        }
        if !item.outcome.is_finite() {
            violations.push(format!("item {:?}: non-finite outcome", item.id));
        }
        if let Some(m) = item.time_month {
            if !(1..=12).contains(&m) {
                violations.push(format!("item {:?}: month {} out of 1..12", item.id, m));
            }
        }
        if let Some(w) = item.time_weekday {
            if w > 6 {
                violations.push(format!("item {:?}: weekday {} out of 0..6", item.id, w));
            }
        }
    }

    for id in ds.split.keys() {
        if !ids.contains(id.as_str()) {
            violations.push(format!("split references unknown item id {id:?}"));
        }
    }

    for pair in &ds.pairs {
        let tag = format!("pair ({:?}, {:?})", pair.winner_id, pair.loser_id);
        if pair.winner_id == pair.loser_id {
            violations.push(format!("{tag}: winner_id equals loser_id"));
        }
        let w_known = ids.contains(pair.winner_id.as_str());
        let l_known = ids.contains(pair.loser_id.as_str());
        if !w_known {
            violations.push(format!("{tag}: unknown winner_id"));
        }
        if !l_known {
            violations.push(format!("{tag}: unknown loser_id"));
        }
        if pair.margin.is_nan() || pair.margin <= 0.0 {
            violations.push(format!("{tag}: margin {} not strictly positive", pair.margin));
        }
        if w_known && l_known {
            match (ds.split.get(&pair.winner_id), ds.split.get(&pair.loser_id)) {
                (Some(a), Some(b)) if a != b => {
                    violations.push(format!("{tag}: cross-split pair ({a:?} vs {b:?})"));
                }
                _ => {}
            }
        }
    }

    violations
}
