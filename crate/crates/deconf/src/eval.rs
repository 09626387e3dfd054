//! Diagnostic metrics: pairwise ROC AUC, Pearson correlations, the temporal
//! pattern correlation, marker-rate statistics with Welch t-tests, and
//! best-of-n selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Item, PreferencePair};
use crate::reward::{predict, RewardModel};
use crate::stats::student_t_two_sided_p;

/// Fraction of pairs the model ranks correctly, with exact score ties
/// credited 0.5 (Mann-Whitney convention).
pub fn roc_auc(ds: &Dataset, pairs: &[&PreferencePair], model: &RewardModel) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("roc_auc needs at least one pair".into()));
    }
    let by_id: BTreeMap<&str, &Item> = ds.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut credit = 0.0;
    for p in pairs {
        let w = by_id
            .get(p.winner_id.as_str())
            .ok_or_else(|| Error::Input(format!("unknown winner_id {:?}", p.winner_id)))?;
        let l = by_id
            .get(p.loser_id.as_str())
            .ok_or_else(|| Error::Input(format!("unknown loser_id {:?}", p.loser_id)))?;
        let sw = predict(model, w)?;
        let sl = predict(model, l)?;
        credit += if sw > sl {
            1.0
        } else if sw == sl {
            0.5
        } else {
            0.0
        };
    }
    Ok(credit / pairs.len() as f64)
}

/// Mann-Whitney AUC for labeled scores, computed from midranks in
/// O(n log n). Ties across and within groups get the standard 0.5 credit.
pub fn roc_auc_scores(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Input("roc_auc_scores needs both classes nonempty".into()));
    }
    let n_pos = positive.len();
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must be comparable"));

    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0; // average of ranks i+1..=j
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    let n_neg_f = negative.len() as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg_f))
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Input(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in at least one argument".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

fn monthly_means(values: impl Iterator<Item = (u8, f64)>) -> BTreeMap<u8, f64> {
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for (month, v) in values {
        let e = sums.entry(month).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(m, (s, c))| (m, s / c as f64))
        .collect()
}

/// Correlation between per-month mean predicted score on the validation items
/// and per-month mean observed outcome on the training items, over months
/// present in both.
pub fn temporal_corr(model: &RewardModel, valid: &[&Item], train: &[&Item]) -> Result<f64> {
    let mut valid_scores = Vec::new();
    for it in valid {
        if let Some(m) = it.time_month {
            valid_scores.push((m, predict(model, it)?));
        }
    }
    let pred_by_month = monthly_means(valid_scores.into_iter());
    let obs_by_month = monthly_means(
        train
            .iter()
            .filter_map(|it| it.time_month.map(|m| (m, it.outcome))),
    );
    let common: Vec<u8> = pred_by_month
        .keys()
        .filter(|m| obs_by_month.contains_key(m))
        .copied()
        .collect();
    if common.len() < 2 {
        return Err(Error::Input(format!(
            "temporal_corr needs >= 2 common months, found {}",
            common.len()
        )));
    }
    let a: Vec<f64> = common.iter().map(|m| pred_by_month[m]).collect();
    let b: Vec<f64> = common.iter().map(|m| obs_by_month[m]).collect();
    pearson(&a, &b)
}

/// Cross-run mean and standard error of per-run marker rates.
pub fn marker_stats(runs: &[Vec<bool>]) -> Result<(f64, f64)> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(Error::Input("marker_stats needs nonempty runs".into()));
    }
    let rates: Vec<f64> = runs
        .iter()
        .map(|r| r.iter().filter(|&&b| b).count() as f64 / r.len() as f64)
        .collect();
    Ok(mean_and_se(&rates))
}

/// Sample mean and standard error of the mean (0 for a single value).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch two-sample t-test with Welch-Satterthwaite degrees of freedom.
/// Two zero-variance samples with equal means return t = 0, p = 1.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input("welch_ttest needs >= 2 values per sample".into()));
    }
    let (ma, _) = mean_and_se(a);
    let (mb, _) = mean_and_se(b);
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (b.len() - 1) as f64;
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    if sa + sb == 0.0 {
        if ma == mb {
            return Ok(TTest { t: 0.0, df: (a.len() + b.len() - 2) as f64, p: 1.0 });
        }
        return Err(Error::Estimator(
            "zero variance in both samples with unequal means".into(),
        ));
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2)
        / (sa.powi(2) / (a.len() - 1) as f64 + sb.powi(2) / (b.len() - 1) as f64);
    let p = student_t_two_sided_p(t, df);
    Ok(TTest { t, df, p })
}

/// One-sample t-test of mean(xs) against `mu0`.
pub fn one_sample_ttest(xs: &[f64], mu0: f64) -> Result<TTest> {
    if xs.len() < 2 {
        return Err(Error::Input("one_sample_ttest needs >= 2 values".into()));
    }
    let (mean, se) = mean_and_se(xs);
    if se == 0.0 {
        if mean == mu0 {
            return Ok(TTest { t: 0.0, df: (xs.len() - 1) as f64, p: 1.0 });
        }
        return Err(Error::Estimator("zero variance with mean off target".into()));
    }
    let t = (mean - mu0) / se;
    let df = (xs.len() - 1) as f64;
    Ok(TTest { t, df, p: student_t_two_sided_p(t, df) })
}

/// Argmax of the model score over a candidate set; ties break toward the
/// lexicographically smallest id.
pub fn best_of_n<'a>(model: &RewardModel, candidates: &[&'a Item]) -> Result<&'a Item> {
    if candidates.is_empty() {
        return Err(Error::Input("best_of_n needs at least one candidate".into()));
    }
    let mut best: Option<(&Item, f64)> = None;
    for &c in candidates {
        let score = predict(model, c)?;
        best = Some(match best {
            None => (c, score),
            Some((b, s)) => {
                if score > s || (score == s && c.id < b.id) {
                    (c, score)
                } else {
                    (b, s)
                }
            }
        });
    }
    Ok(best.expect("nonempty candidates").0)
}

/// Per-arm summary of best-of-n selections across seeds: mean selected
/// sentiment with its standard error, plus mean west/central/east pick
/// counts per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub arm: String,
    pub mean_sentiment: f64,
    pub se_sentiment: f64,
    pub region_counts: [f64; 3],
    pub seeds: usize,
}

/// Summarize selections for one arm. `picks_per_seed` holds the chosen items
/// of each seed's run; every pick must carry latent sentiment.
pub fn arm_report(arm: &str, picks_per_seed: &[Vec<&Item>]) -> Result<ArmStats> {
    let mut seed_means = Vec::with_capacity(picks_per_seed.len());
    let mut counts = [0.0f64; 3];
    for picks in picks_per_seed {
        if picks.is_empty() {
            return Err(Error::Input("arm_report needs nonempty picks per seed".into()));
        }
        let mut sum = 0.0;
        for it in picks {
            let s = it.latent_value("sentiment").ok_or_else(|| {
                Error::Input(format!("item {:?}: missing latent sentiment", it.id))
            })?;
            sum += s;
            if let Some(r) = it.latent_value("region") {
                let r = r as usize;
                if (1..=3).contains(&r) {
                    counts[r - 1] += 1.0;
                }
            }
        }
        seed_means.push(sum / picks.len() as f64);
    }
    let (mean_sentiment, se_sentiment) = mean_and_se(&seed_means);
    let n_seeds = picks_per_seed.len().max(1) as f64;
    Ok(ArmStats {
        arm: arm.to_string(),
        mean_sentiment,
        se_sentiment,
        region_counts: [counts[0] / n_seeds, counts[1] / n_seeds, counts[2] / n_seeds],
        seeds: picks_per_seed.len(),
    })
}
