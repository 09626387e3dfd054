//! End-to-end acceptance checks. Each test prints a single pass/fail line;
//! the printed criteria map one-to-one onto the suite's exit conditions.

use std::collections::BTreeMap;
use std::process::Command;

use deconf::deconfound::{fit_iv2sls, fit_ols};
use deconf::dgp::{gen_entangled, gen_temporal, REGION_INSTRUMENTS};
use deconf::eval::{roc_auc_scores, welch_ttest};
use deconf::harness::{run_lambda_sweep, run_scenario, run_weekday_study, Arm};
use deconf::model::{DgpConfig, Scenario};
use deconf::reward::{fit_ridge, grad_check, FitOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Analytic OLS slope on the entangled DGP: with p = region + eps - 10.5 s,
/// cov(p, y) = 0.1 var(p) - 10.5 var(s) and var(s) = 1/12,
/// var(p) = var(region) + 10.5^2/12 + var(eps) = 1.25 + 9.1875 + 0.25.
const ENTANGLED_OLS_SLOPE: f64 = 0.018_128_655;

fn verdict(criterion: &str, pass: bool) {
    println!("acceptance {criterion}: {}", if pass { "pass" } else { "FAIL" });
    assert!(pass, "acceptance criterion failed: {criterion}");
}

#[test]
fn criterion_1_alpha_recovery() {
    let instruments: Vec<String> = REGION_INSTRUMENTS.iter().map(|s| s.to_string()).collect();
    let mut iv_covered = 0;
    let mut ols_missed = 0;
    let mut ols_alphas = Vec::new();
    for seed in 1..=20u64 {
        let cfg = DgpConfig::new(Scenario::Entangled, 10_000, seed);
        let ds = gen_entangled(&cfg).unwrap();
        let iv = fit_iv2sls(&ds, "popularity", &instruments).unwrap();
        if (iv.alpha["popularity"] - 0.1).abs() <= 3.0 * iv.stderr["popularity"] {
            iv_covered += 1;
        }
        let ols = fit_ols(&ds, &["popularity".to_string()]).unwrap();
        if (ols.alpha["popularity"] - 0.1).abs() > 5.0 * ols.stderr["popularity"] {
            ols_missed += 1;
        }
        ols_alphas.push(ols.alpha["popularity"]);
    }
    let ols_mean = ols_alphas.iter().sum::<f64>() / ols_alphas.len() as f64;
    let oracle_hit = (ols_mean - ENTANGLED_OLS_SLOPE).abs() < 0.005;
    verdict(
        "1 (IV covers alpha, OLS pinned to the biased oracle slope)",
        iv_covered >= 18 && ols_missed >= 18 && oracle_hit,
    );
}

#[test]
fn criterion_2_correlation_sign_flip() {
    let seeds: Vec<u64> = (1..=5).collect();
    let arms = [Arm::NaiveObserved, Arm::DeconfoundIv];

    let ent_cfg = DgpConfig::new(Scenario::Entangled, 2_000, 0);
    let ent = run_scenario(&ent_cfg, &arms, &seeds, 1e-3, 8).unwrap();
    let naive_low = ent
        .seed_rows(Arm::NaiveObserved)
        .iter()
        .filter(|r| r.corr_valid < 0.1)
        .count();
    let iv_high = ent
        .seed_rows(Arm::DeconfoundIv)
        .iter()
        .filter(|r| r.corr_valid > 0.6)
        .count();

    let orth_cfg = DgpConfig::new(Scenario::Orthogonal, 2_000, 0);
    let orth = run_scenario(&orth_cfg, &Arm::ALL, &seeds, 1e-3, 8).unwrap();
    let all_positive = seeds
        .iter()
        .filter(|&&s| {
            orth.per_seed
                .iter()
                .filter(|r| r.seed == s)
                .all(|r| r.corr_valid > 0.0)
        })
        .count();
    let iv_ge_naive = seeds
        .iter()
        .filter(|&&s| {
            let corr = |arm: Arm| {
                orth.per_seed
                    .iter()
                    .find(|r| r.seed == s && r.arm == arm.name())
                    .unwrap()
                    .corr_valid
            };
            corr(Arm::DeconfoundIv) >= corr(Arm::NaiveObserved)
        })
        .count();

    verdict(
        "2 (entangled sign flip, orthogonal all-positive)",
        naive_low >= 4 && iv_high >= 4 && all_positive >= 4 && iv_ge_naive >= 4,
    );
}

#[test]
fn criterion_3_selection_ordering() {
    let seeds: Vec<u64> = (1..=5).collect();
    let cfg = DgpConfig::new(Scenario::Entangled, 2_000, 0);
    let rep = run_scenario(&cfg, &[Arm::NaiveObserved, Arm::DeconfoundIv], &seeds, 1e-3, 8)
        .unwrap();
    let sentiment_wins = seeds
        .iter()
        .filter(|&&s| {
            let get = |arm: Arm| {
                rep.per_seed
                    .iter()
                    .find(|r| r.seed == s && r.arm == arm.name())
                    .unwrap()
            };
            get(Arm::DeconfoundIv).mean_selected_sentiment
                > get(Arm::NaiveObserved).mean_selected_sentiment
        })
        .count();
    let rate = |arm: Arm| {
        let rows = rep.seed_rows(arm);
        rows.iter().map(|r| r.region_pick_rate).sum::<f64>() / rows.len() as f64
    };
    verdict(
        "3 (best-of-n: deconfounded sentiment up, region picks down)",
        sentiment_wins >= 4 && rate(Arm::NaiveObserved) > rate(Arm::DeconfoundIv),
    );
}

#[test]
fn criterion_4_monday_amplification() {
    let cfg = DgpConfig::new(Scenario::WeekdayMarker, 300, 0);
    let seeds: Vec<u64> = (1..=10).collect();
    let rep = run_weekday_study(&cfg, 0.6, &seeds, 0.01, 8).unwrap();
    let naive_positive =
        rep.naive.marker_weight_mean > 0.0 && rep.naive.weight_test.p < 0.05;
    let deconf_flat = rep.deconfounded.weight_test.p >= 0.05;
    let naive_amplifies = rep.naive.pick_rate_mean > rep.base_marker_rate;
    let deconf_near_base =
        (rep.deconfounded.pick_rate_mean - rep.base_marker_rate).abs() < 0.05;
    verdict(
        "4 (Monday marker amplified by naive BT, removed by residualization)",
        naive_positive && deconf_flat && naive_amplifies && deconf_near_base,
    );
}

#[test]
fn criterion_5_sweep_gap() {
    // deterministic spread of month effects over [-0.2, 0.2]
    let effects: Vec<f64> = (0..12)
        .map(|i| 0.2 * ((i as f64 * 2.399963) % 2.0 - 1.0))
        .collect();
    let grid: Vec<f64> = (0..15)
        .map(|i| 10f64.powf(-4.0 + 6.0 * i as f64 / 14.0))
        .collect();
    let mut gap_ok = 0;
    let mut corr_ok = 0;
    for seed in 1..=20u64 {
        let mut cfg = DgpConfig::new(Scenario::Temporal, 800, seed);
        cfg.nuisance_dims = 128;
        cfg.d = cfg.fixed_dims() + cfg.nuisance_dims;
        let ds = gen_temporal(&cfg, &effects).unwrap();
        let rep = run_lambda_sweep(&ds, &grid, &FitOptions::default()).unwrap();
        if rep.argmax_auc_lambda >= rep.argmin_valid_lambda {
            gap_ok += 1;
        }
        let tc = |l: f64| {
            rep.rows
                .iter()
                .find(|r| r.lambda == l)
                .and_then(|r| r.temporal_corr)
                .unwrap()
        };
        if tc(rep.argmax_auc_lambda) < tc(rep.argmin_valid_lambda) {
            corr_ok += 1;
        }
    }
    verdict(
        "5 (AUC-optimal lambda above MSE-optimal, temporal corr declines)",
        gap_ok >= 16 && corr_ok >= 14,
    );
}

#[test]
fn criterion_6_numerical_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // ROC AUC vs brute-force Mann-Whitney on 1,000 scores with ties
    let pos: Vec<f64> = (0..500).map(|_| (rng.gen_range(0..40) as f64) / 7.0).collect();
    let neg: Vec<f64> = (0..500).map(|_| (rng.gen_range(0..40) as f64) / 9.0).collect();
    let fast = roc_auc_scores(&pos, &neg).unwrap();
    let mut u = 0.0;
    for &p in &pos {
        for &n in &neg {
            u += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    let auc_exact = (fast - u / (pos.len() * neg.len()) as f64).abs() < 1e-12;

    // BT gradient vs central finite differences, 20 random problems
    let mut grad_ok = true;
    for _ in 0..20 {
        let d = rng.gen_range(2..6);
        let m = rng.gen_range(5..30);
        let diffs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let point: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = rng.gen_range(0.0..0.5);
        grad_ok &= grad_check(&diffs, &point, lambda) < 1e-4;
    }

    // closed-form ridge is a local minimum under coordinate perturbation
    let mut ridge_ok = true;
    for _ in 0..20 {
        let n = rng.gen_range(20..60);
        let d = rng.gen_range(1..5);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lambda = rng.gen_range(0.01..1.0);
        let opts = FitOptions::with_lambda(lambda);
        let model = fit_ridge(&x, &y, &opts, None).unwrap();
        let objective = |w: &[f64], b: f64| {
            let fit: f64 = x
                .iter()
                .zip(&y)
                .map(|(row, &yi)| {
                    let pred: f64 = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
                    (yi - pred).powi(2)
                })
                .sum::<f64>()
                / n as f64;
            fit + lambda * w.iter().map(|v| v * v).sum::<f64>()
        };
        let base = objective(&model.weights, model.bias);
        for j in 0..d {
            for delta in [-1e-3, 1e-3] {
                let mut w = model.weights.clone();
                w[j] += delta;
                ridge_ok &= objective(&w, model.bias) >= base - 1e-12;
            }
        }
        for delta in [-1e-3, 1e-3] {
            ridge_ok &= objective(&model.weights, model.bias + delta) >= base - 1e-12;
        }
    }

    // 2SLS with the confounder as its own instrument collapses to OLS
    let cfg = DgpConfig::new(Scenario::Entangled, 2_000, 3);
    let ds = gen_entangled(&cfg).unwrap();
    let ols = fit_ols(&ds, &["popularity".to_string()]).unwrap();
    let self_iv = fit_iv2sls(&ds, "popularity", &["popularity".to_string()]).unwrap();
    let collapse = (ols.alpha["popularity"] - self_iv.alpha["popularity"]).abs() < 1e-10;

    // Welch t on the hand-computed reference
    let t = welch_ttest(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    let welch = (t.t + 3.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12
        && (t.p - 0.021311641128756727).abs() < 1e-6;

    verdict(
        "6 (AUC, BT gradient, ridge optimum, 2SLS collapse, Welch oracles)",
        auc_exact && grad_ok && ridge_ok && collapse && welch,
    );
}

fn run_pipeline(dir: &std::path::Path, threads: usize) -> BTreeMap<String, String> {
    let bin = env!("CARGO_BIN_EXE_deconf");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{"dgp": {"scenario": "entangled", "n": 2000, "seed": 7},
            "eval": {"seeds": [1, 2, 3], "arms": ["naive_observed", "deconfound_iv"], "lambda": 0.001}}"#,
    )
    .unwrap();
    let data = dir.join("data");
    let reports = dir.join("reports");
    let model = dir.join("model.json");
    let eval = dir.join("eval.json");
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate".into(), "--config".into(), config.display().to_string(), "--out".into(), data.display().to_string()],
        vec!["train".into(), "--data".into(), data.display().to_string(), "--out".into(), model.display().to_string(), "--lambda".into(), "0.001".into()],
        vec!["eval".into(), "--data".into(), data.display().to_string(), "--model".into(), model.display().to_string(), "--out".into(), eval.display().to_string()],
        vec!["scenario".into(), "--config".into(), config.display().to_string(), "--out".into(), reports.display().to_string()],
    ];
    for step in steps {
        let status = Command::new(bin)
            .args(&step)
            .arg("--threads")
            .arg(threads.to_string())
            .status()
            .unwrap();
        assert!(status.success(), "pipeline step {step:?} failed");
    }
    let mut hashes = BTreeMap::new();
    for path in [
        data.join("items.jsonl"),
        data.join("pairs.jsonl"),
        model.clone(),
        eval.clone(),
        reports.join("entangled_scenario_1-3.json"),
        reports.join("entangled_scenario_1-3.csv"),
    ] {
        let bytes = std::fs::read(&path).unwrap();
        hashes.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            format!("{:x}", Sha256::digest(&bytes)),
        );
    }
    hashes
}

#[test]
fn criterion_7_determinism() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let first = run_pipeline(dir1.path(), 1);
    let second = run_pipeline(dir2.path(), 4);
    verdict(
        "7 (byte-identical pipeline reruns across --threads)",
        first == second && first.len() == 6,
    );
}
