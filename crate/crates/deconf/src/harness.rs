//! Experiment orchestration: lambda sweeps, scenario arm comparisons, and
//! the weekday-marker amplification study.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::deconfound::{fit_dml, fit_iv2sls, fit_ols, residualize};
use crate::dgp::{self, REGION_INSTRUMENTS};
use crate::error::{Error, Result};
use crate::eval::{
    arm_report, best_of_n, mean_and_se, one_sample_ttest, pearson, roc_auc, temporal_corr,
    welch_ttest, ArmStats, TTest,
};
use crate::model::{Dataset, DgpConfig, Item, Scenario, Split};
use crate::reward::{fit_pairwise_bt, fit_ridge, mse, predict, FitOptions, RewardModel};

/// One grid point of a regularization sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub train_mse: f64,
    pub valid_mse: f64,
    pub test_pair_auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub argmin_valid_lambda: f64,
    pub argmax_auc_lambda: f64,
}

/// For each lambda: ridge fit on train, MSE on train/valid, ROC AUC on test
/// pairs, temporal correlation when months are present.
pub fn run_lambda_sweep(ds: &Dataset, grid: &[f64], opts: &FitOptions) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid must be nonempty".into()));
    }
    if grid.iter().any(|&l| l < 0.0 || !l.is_finite()) {
        return Err(Error::Config("lambda grid values must be finite and >= 0".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("lambda grid contains duplicates".into()));
    }

    let train = ds.split_items(Split::Train);
    let valid = ds.split_items(Split::Valid);
    let test_pairs = ds.split_pairs(Split::Test);
    if train.is_empty() || valid.is_empty() || test_pairs.is_empty() {
        return Err(Error::Input(
            "sweep needs train and valid items and test pairs".into(),
        ));
    }
    let x_train: Vec<Vec<f64>> = train.iter().map(|it| it.embedding.clone()).collect();
    let y_train: Vec<f64> = train.iter().map(|it| it.outcome).collect();
    let x_valid: Vec<Vec<f64>> = valid.iter().map(|it| it.embedding.clone()).collect();
    let y_valid: Vec<f64> = valid.iter().map(|it| it.outcome).collect();
    let months_present = train.iter().any(|it| it.time_month.is_some());

    let mut rows = Vec::with_capacity(sorted.len());
    for &lambda in &sorted {
        let fit_opts = FitOptions {
            lambda,
            ..opts.clone()
        };
        let model = fit_ridge(&x_train, &y_train, &fit_opts, None)
            .map_err(|e| Error::Estimator(format!("lambda {lambda}: {e}")))?;
        let tc = if months_present {
            temporal_corr(&model, &valid, &train).ok()
        } else {
            None
        };
        rows.push(SweepRow {
            lambda,
            train_mse: mse(&model, &x_train, &y_train),
            valid_mse: mse(&model, &x_valid, &y_valid),
            test_pair_auc: roc_auc(ds, &test_pairs, &model)?,
            temporal_corr: tc,
        });
    }

    let argmin_valid_lambda = rows
        .iter()
        .min_by(|a, b| a.valid_mse.partial_cmp(&b.valid_mse).unwrap())
        .map(|r| r.lambda)
        .unwrap();
    let argmax_auc_lambda = rows
        .iter()
        .max_by(|a, b| {
            a.test_pair_auc
                .partial_cmp(&b.test_pair_auc)
                .unwrap()
                // on AUC ties prefer the smaller lambda, so scan keeps the first
                .then(b.lambda.partial_cmp(&a.lambda).unwrap())
        })
        .map(|r| r.lambda)
        .unwrap();

    Ok(SweepReport {
        rows,
        argmin_valid_lambda,
        argmax_auc_lambda,
    })
}

/// Training arms of the scenario comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    OracleSentiment,
    SentimentPlusNoise,
    NaiveObserved,
    ConfInEmbedding,
    ConfInHead,
    DeconfoundIv,
    DeconfoundDml,
}

impl Arm {
    pub const ALL: [Arm; 7] = [
        Arm::OracleSentiment,
        Arm::SentimentPlusNoise,
        Arm::NaiveObserved,
        Arm::ConfInEmbedding,
        Arm::ConfInHead,
        Arm::DeconfoundIv,
        Arm::DeconfoundDml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arm::OracleSentiment => "oracle_sentiment",
            Arm::SentimentPlusNoise => "sentiment_plus_noise",
            Arm::NaiveObserved => "naive_observed",
            Arm::ConfInEmbedding => "conf_in_embedding",
            Arm::ConfInHead => "conf_in_head",
            Arm::DeconfoundIv => "deconfound_iv",
            Arm::DeconfoundDml => "deconfound_dml",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Arm> {
        Arm::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}")))
    }
}

/// Per-seed metrics for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSeedRow {
    pub arm: String,
    pub seed: u64,
    pub corr_train: f64,
    pub corr_valid: f64,
    pub auc: f64,
    pub mean_selected_sentiment: f64,
    pub region_pick_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
}

/// Per-arm aggregate across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummaryRow {
    #[serde(flatten)]
    pub stats: ArmStats,
    pub corr_train: f64,
    pub corr_valid: f64,
    pub auc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
}

/// Aggregated scenario comparison across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub candidate_k: usize,
    pub per_seed: Vec<ArmSeedRow>,
    pub summary: Vec<ArmSummaryRow>,
}

impl EvalReport {
    pub fn seed_rows(&self, arm: Arm) -> Vec<&ArmSeedRow> {
        self.per_seed
            .iter()
            .filter(|r| r.arm == arm.name())
            .collect()
    }

    pub fn summary_for(&self, arm: Arm) -> Option<&ArmSummaryRow> {
        self.summary.iter().find(|s| s.stats.arm == arm.name())
    }
}

/// Fresh per-item noise stream, disjoint from generator streams.
fn noisy_target_noise(seed: u64, index: u64, sd: f64) -> f64 {
    use rand::Rng;
    use rand_distr::Distribution;
    let mut rng = dgp::item_stream(seed, (1 << 62) | index);
    if sd == 0.0 {
        let _: f64 = rng.gen();
        0.0
    } else {
        rand_distr::Normal::new(0.0, sd).unwrap().sample(&mut rng)
    }
}

fn latent_sentiment(it: &Item) -> Result<f64> {
    it.latent_value("sentiment")
        .ok_or_else(|| Error::Input(format!("item {:?}: missing latent sentiment", it.id)))
}

fn augmented_with_popularity(it: &Item) -> Item {
    let mut aug = it.clone();
    aug.embedding.push(it.confounders["popularity"]);
    aug
}

struct ArmFit {
    model: RewardModel,
    /// Embeddings get the popularity column appended before scoring.
    augment: bool,
    alpha_hat: Option<f64>,
}

fn fit_arm(arm: Arm, ds: &Dataset, lambda: f64, seed: u64, opts: &FitOptions) -> Result<ArmFit> {
    let train = ds.split_items(Split::Train);
    let ridge_opts = FitOptions {
        lambda,
        ..opts.clone()
    };
    let x: Vec<Vec<f64>> = train.iter().map(|it| it.embedding.clone()).collect();
    let fit = |x: &[Vec<f64>], y: &[f64], extra: Option<&BTreeMap<String, Vec<f64>>>| {
        fit_ridge(x, y, &ridge_opts, extra)
    };

    match arm {
        Arm::OracleSentiment => {
            let y: Vec<f64> = train
                .iter()
                .map(|it| latent_sentiment(it))
                .collect::<Result<_>>()?;
            Ok(ArmFit { model: fit(&x, &y, None)?, augment: false, alpha_hat: None })
        }
        Arm::SentimentPlusNoise => {
            let y: Vec<f64> = train
                .iter()
                .enumerate()
                .map(|(i, it)| {
                    latent_sentiment(it)
                        .map(|s| s + noisy_target_noise(seed, i as u64, 0.1))
                })
                .collect::<Result<_>>()?;
            Ok(ArmFit { model: fit(&x, &y, None)?, augment: false, alpha_hat: None })
        }
        Arm::NaiveObserved => {
            let y: Vec<f64> = train.iter().map(|it| it.outcome).collect();
            Ok(ArmFit { model: fit(&x, &y, None)?, augment: false, alpha_hat: None })
        }
        Arm::ConfInEmbedding => {
            let y: Vec<f64> = train.iter().map(|it| it.outcome).collect();
            let x_aug: Vec<Vec<f64>> = train
                .iter()
                .map(|it| augmented_with_popularity(it).embedding)
                .collect();
            Ok(ArmFit { model: fit(&x_aug, &y, None)?, augment: true, alpha_hat: None })
        }
        Arm::ConfInHead => {
            let y: Vec<f64> = train.iter().map(|it| it.outcome).collect();
            let mut extra = BTreeMap::new();
            extra.insert(
                "popularity".to_string(),
                train.iter().map(|it| it.confounders["popularity"]).collect(),
            );
            Ok(ArmFit { model: fit(&x, &y, Some(&extra))?, augment: false, alpha_hat: None })
        }
        Arm::DeconfoundIv => {
            let instruments: Vec<String> =
                REGION_INSTRUMENTS.iter().map(|s| s.to_string()).collect();
            let dfit = fit_iv2sls(ds, "popularity", &instruments)?;
            let alpha = dfit.alpha["popularity"];
            let resid = residualize(ds, &dfit)?;
            let rtrain = resid.split_items(Split::Train);
            let y: Vec<f64> = rtrain.iter().map(|it| it.outcome).collect();
            Ok(ArmFit { model: fit(&x, &y, None)?, augment: false, alpha_hat: Some(alpha) })
        }
        Arm::DeconfoundDml => {
            let dml_opts = FitOptions {
                lambda: 1e-3,
                seed,
                ..FitOptions::default()
            };
            let dfit = fit_dml(ds, "popularity", 5, &dml_opts)?;
            let alpha = dfit.alpha["popularity"];
            let resid = residualize(ds, &dfit)?;
            let rtrain = resid.split_items(Split::Train);
            let y: Vec<f64> = rtrain.iter().map(|it| it.outcome).collect();
            Ok(ArmFit { model: fit(&x, &y, None)?, augment: false, alpha_hat: Some(alpha) })
        }
    }
}

fn score_item(fit: &ArmFit, it: &Item) -> Result<f64> {
    if fit.augment {
        predict(&fit.model, &augmented_with_popularity(it))
    } else {
        predict(&fit.model, it)
    }
}

fn corr_with_sentiment(fit: &ArmFit, items: &[&Item]) -> Result<f64> {
    let scores: Vec<f64> = items
        .iter()
        .map(|it| score_item(fit, it))
        .collect::<Result<_>>()?;
    let sentiments: Vec<f64> = items
        .iter()
        .map(|it| latent_sentiment(it))
        .collect::<Result<_>>()?;
    pearson(&scores, &sentiments)
}

/// Chunk a split's items into candidate sets of size `candidate_k`.
fn candidate_groups<'a>(items: &[&'a Item], candidate_k: usize) -> Vec<Vec<&'a Item>> {
    items
        .chunks(candidate_k)
        .filter(|c| c.len() == candidate_k)
        .map(|c| c.to_vec())
        .collect()
}

/// Run the scenario comparison: per seed, generate one dataset shared by all
/// arms, fit each arm's reward model, and evaluate sentiment correlations
/// and best-of-n selections.
pub fn run_scenario(
    cfg: &DgpConfig,
    arms: &[Arm],
    seeds: &[u64],
    lambda: f64,
    candidate_k: usize,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::Config("seeds list must be nonempty".into()));
    }
    if arms.is_empty() {
        return Err(Error::Config("arms list must be nonempty".into()));
    }
    if !matches!(cfg.scenario, Scenario::Orthogonal | Scenario::Entangled) {
        return Err(Error::Config(
            "run_scenario supports the orthogonal and entangled scenarios".into(),
        ));
    }
    let mut unique = arms.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != arms.len() {
        return Err(Error::Config("arms list contains duplicates".into()));
    }

    let opts = FitOptions::default();
    let mut per_seed = Vec::new();
    let mut picks_by_arm: BTreeMap<Arm, Vec<Vec<Item>>> = BTreeMap::new();

    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let ds = dgp::generate(&seed_cfg, None, None)?;
        let train = ds.split_items(Split::Train);
        let valid = ds.split_items(Split::Valid);
        let test = ds.split_items(Split::Test);
        let test_pairs = ds.split_pairs(Split::Test);
        let groups = candidate_groups(&test, candidate_k);

        for &arm in arms {
            let fit = fit_arm(arm, &ds, lambda, seed, &opts)
                .map_err(|e| Error::Estimator(format!("arm {} seed {seed}: {e}", arm.name())))?;
            let corr_train = corr_with_sentiment(&fit, &train)?;
            let corr_valid = corr_with_sentiment(&fit, &valid)?;
            let auc = if fit.augment {
                let aug_ds = Dataset {
                    items: ds.items.iter().map(augmented_with_popularity).collect(),
                    pairs: ds.pairs.clone(),
                    split: ds.split.clone(),
                };
                roc_auc(&aug_ds, &aug_ds.split_pairs(Split::Test), &fit.model)?
            } else {
                roc_auc(&ds, &test_pairs, &fit.model)?
            };

            let mut picks = Vec::with_capacity(groups.len());
            for group in &groups {
                picks.push(best_of_n_scored(&fit, group)?.clone());
            }
            let mean_sent = {
                let vals: Vec<f64> = picks
                    .iter()
                    .map(latent_sentiment)
                    .collect::<Result<_>>()?;
                vals.iter().sum::<f64>() / vals.len().max(1) as f64
            };
            let region_rate = picks
                .iter()
                .filter(|it| it.latent_value("region").unwrap_or(0.0) > 0.0)
                .count() as f64
                / picks.len().max(1) as f64;

            per_seed.push(ArmSeedRow {
                arm: arm.name().to_string(),
                seed,
                corr_train,
                corr_valid,
                auc,
                mean_selected_sentiment: mean_sent,
                region_pick_rate: region_rate,
                alpha_hat: fit.alpha_hat,
            });
            picks_by_arm.entry(arm).or_default().push(picks);
        }
    }

    let mut summary = Vec::new();
    for &arm in arms {
        let seed_picks = &picks_by_arm[&arm];
        let views: Vec<Vec<&Item>> = seed_picks
            .iter()
            .map(|p| p.iter().collect())
            .collect();
        let stats = arm_report(arm.name(), &views)?;
        let rows: Vec<&ArmSeedRow> = per_seed
            .iter()
            .filter(|r| r.arm == arm.name())
            .collect();
        let mean = |f: &dyn Fn(&ArmSeedRow) -> f64| {
            rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
        };
        let alphas: Vec<f64> = rows.iter().filter_map(|r| r.alpha_hat).collect();
        summary.push(ArmSummaryRow {
            stats,
            corr_train: mean(&|r| r.corr_train),
            corr_valid: mean(&|r| r.corr_valid),
            auc: mean(&|r| r.auc),
            alpha_hat: if alphas.is_empty() {
                None
            } else {
                Some(alphas.iter().sum::<f64>() / alphas.len() as f64)
            },
        });
    }

    Ok(EvalReport {
        scenario: cfg.scenario.to_string(),
        seeds: seeds.to_vec(),
        lambda,
        candidate_k,
        per_seed,
        summary,
    })
}

/// best_of_n over possibly-augmented scoring.
fn best_of_n_scored<'a>(fit: &ArmFit, group: &[&'a Item]) -> Result<&'a Item> {
    if !fit.augment {
        return best_of_n(&fit.model, group);
    }
    let mut best: Option<(&Item, f64)> = None;
    for &it in group {
        let score = score_item(fit, it)?;
        best = Some(match best {
            None => (it, score),
            Some((b, s)) => {
                if score > s || (score == s && it.id < b.id) {
                    (it, score)
                } else {
                    (b, s)
                }
            }
        });
    }
    best.map(|(it, _)| it)
        .ok_or_else(|| Error::Input("best_of_n needs at least one candidate".into()))
}

/// Per-arm outcome of the weekday amplification study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdayArm {
    pub arm: String,
    pub marker_weights: Vec<f64>,
    pub marker_weight_mean: f64,
    pub marker_weight_se: f64,
    /// Two-sided one-sample t-test of the marker weights against zero.
    pub weight_test: TTest,
    pub marker_pick_rates: Vec<f64>,
    pub pick_rate_mean: f64,
    pub pick_rate_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdayReport {
    pub skew: f64,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    /// Fraction of Monday items among the test candidates, averaged over seeds.
    pub base_marker_rate: f64,
    pub naive: WeekdayArm,
    pub deconfounded: WeekdayArm,
    /// Welch test between the two arms' pick rates across seeds.
    pub pick_rate_test: TTest,
}

const MARKER_DIM: usize = 1;

fn weekday_arm(name: &str, weights: Vec<f64>, rates: Vec<f64>) -> Result<WeekdayArm> {
    let (wm, wse) = mean_and_se(&weights);
    let (rm, rse) = mean_and_se(&rates);
    let weight_test = one_sample_ttest(&weights, 0.0)?;
    Ok(WeekdayArm {
        arm: name.to_string(),
        marker_weights: weights,
        marker_weight_mean: wm,
        marker_weight_se: wse,
        weight_test,
        marker_pick_rates: rates,
        pick_rate_mean: rm,
        pick_rate_se: rse,
    })
}

/// Weekday study: per seed, fit Bradley-Terry reward models on raw pairs
/// (naive) and on pairs rebuilt from outcomes residualized on the Monday
/// confounder (deconfounded); compare marker weights and best-of-n marker
/// pick rates.
pub fn run_weekday_study(
    cfg: &DgpConfig,
    skew: f64,
    seeds: &[u64],
    lambda: f64,
    candidate_k: usize,
) -> Result<WeekdayReport> {
    if cfg.scenario != Scenario::WeekdayMarker {
        return Err(Error::Config("weekday study needs scenario = weekday_marker".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seeds list must be nonempty".into()));
    }

    let bt_opts = FitOptions {
        lambda,
        learning_rate: 2.0,
        max_iters: 2_000,
        tol: 1e-7,
        ..Default::default()
    };

    let mut naive_weights = Vec::new();
    let mut deconf_weights = Vec::new();
    let mut naive_rates = Vec::new();
    let mut deconf_rates = Vec::new();
    let mut base_rates = Vec::new();

    for &seed in seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed;
        let ds = dgp::gen_weekday_pairs(&seed_cfg, skew)?;

        let train_pairs: Vec<_> = ds
            .split_pairs(Split::Train)
            .into_iter()
            .cloned()
            .collect();
        let naive_model = fit_pairwise_bt(&ds, &train_pairs, &bt_opts)
            .map_err(|e| Error::Estimator(format!("naive arm seed {seed}: {e}")))?;

        // residualize on the Monday indicator, then rebuild training pairs
        let dfit = fit_ols(&ds, &["monday".to_string()])?;
        let resid = residualize(&ds, &dfit)?;
        let layout = dgp::context_layout(&seed_cfg);
        let groups: Vec<(String, Vec<&Item>)> = layout
            .iter()
            .enumerate()
            .filter(|(ci, _)| {
                let first = &resid.items[layout[*ci].1[0]];
                resid.split.get(&first.id) == Some(&Split::Train)
            })
            .map(|(_, (cid, members))| {
                (cid.clone(), members.iter().map(|&m| &resid.items[m]).collect())
            })
            .collect();
        let resid_pairs = dgp::build_pairs(&groups, seed_cfg.pair_cap);
        let deconf_model = fit_pairwise_bt(&resid, &resid_pairs, &bt_opts)
            .map_err(|e| Error::Estimator(format!("deconfounded arm seed {seed}: {e}")))?;

        naive_weights.push(naive_model.weights[MARKER_DIM]);
        deconf_weights.push(deconf_model.weights[MARKER_DIM]);

        let test = ds.split_items(Split::Test);
        base_rates.push(
            test.iter()
                .filter(|it| it.time_weekday == Some(0))
                .count() as f64
                / test.len().max(1) as f64,
        );
        let groups = candidate_groups(&test, candidate_k);
        let rate_for = |model: &RewardModel| -> Result<f64> {
            let mut monday_picks = 0usize;
            for group in &groups {
                if best_of_n(model, group)?.time_weekday == Some(0) {
                    monday_picks += 1;
                }
            }
            Ok(monday_picks as f64 / groups.len().max(1) as f64)
        };
        naive_rates.push(rate_for(&naive_model)?);
        deconf_rates.push(rate_for(&deconf_model)?);
    }

    let pick_rate_test = welch_ttest(&naive_rates, &deconf_rates)?;
    let base_marker_rate = base_rates.iter().sum::<f64>() / base_rates.len() as f64;
    Ok(WeekdayReport {
        skew,
        seeds: seeds.to_vec(),
        lambda,
        base_marker_rate,
        naive: weekday_arm("naive", naive_weights, naive_rates)?,
        deconfounded: weekday_arm("deconfounded", deconf_weights, deconf_rates)?,
        pick_rate_test,
    })
}
