//! Confounder-coefficient estimation (OLS baseline, two-stage least squares,
//! cross-fitted partialling-out) and outcome residualization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Item, Split};
use crate::reward::{fit_ridge, FitOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Iv2sls,
    Dml,
}

/// Estimated confounder coefficients with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconfoundFit {
    pub method: Method,
    pub alpha: BTreeMap<String, f64>,
    pub stderr: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_stage_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak_instrument: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    pub n_used: usize,
}

/// Instruments weaker than this first-stage F are flagged, not rejected.
pub const WEAK_INSTRUMENT_F: f64 = 10.0;

fn train_items(ds: &Dataset) -> Vec<&Item> {
    ds.split_items(Split::Train)
}

fn confounder_column(items: &[&Item], name: &str) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|it| {
            it.confounders.get(name).copied().ok_or_else(|| {
                Error::Input(format!("item {:?}: missing confounder {name:?}", it.id))
            })
        })
        .collect()
}

/// OLS with intercept appended as the last column. Returns coefficients,
/// (X'X)^-1 and the residual sum of squares.
fn ols_solve(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let xtx = design.transpose() * design;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("collinear regressor columns".into()))?;
    let beta = chol.solve(&(design.transpose() * y));
    let xtx_inv = chol.inverse();
    let resid = y - design * &beta;
    let rss = resid.dot(&resid);
    Ok((beta, xtx_inv, rss))
}

fn with_intercept(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let mut design = DMatrix::zeros(n, cols.len() + 1);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..n {
            design[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        design[(i, cols.len())] = 1.0;
    }
    design
}

/// Least-squares regression of the outcome on the named confounders plus an
/// intercept, with homoskedastic standard errors. The naive baseline.
pub fn fit_ols(ds: &Dataset, confounders: &[String]) -> Result<DeconfoundFit> {
    let items = train_items(ds);
    let n = items.len();
    if n < confounders.len() + 2 {
        return Err(Error::Input(format!(
            "need at least {} train items for {} confounders, have {n}",
            confounders.len() + 2,
            confounders.len()
        )));
    }
    let cols: Vec<Vec<f64>> = confounders
        .iter()
        .map(|name| confounder_column(&items, name))
        .collect::<Result<_>>()?;
    let design = with_intercept(&cols, n);
    let y = DVector::from_iterator(n, items.iter().map(|it| it.outcome));
    let (beta, xtx_inv, rss) = ols_solve(&design, &y)?;

    let dof = (n - confounders.len() - 1) as f64;
    let sigma2 = rss / dof;
    let mut alpha = BTreeMap::new();
    let mut stderr = BTreeMap::new();
    for (j, name) in confounders.iter().enumerate() {
        alpha.insert(name.clone(), beta[j]);
        stderr.insert(name.clone(), (sigma2 * xtx_inv[(j, j)]).max(0.0).sqrt());
    }
    Ok(DeconfoundFit {
        method: Method::Ols,
        alpha,
        stderr,
        first_stage_f: None,
        weak_instrument: None,
        folds: None,
        n_used: n,
    })
}

/// Two-stage least squares for a single endogenous confounder.
///
/// Stage 1 regresses the confounder on the instruments, stage 2 regresses the
/// outcome on the fitted values. Standard errors use residuals formed with
/// the *original* confounder, and the first-stage F statistic is reported
/// (values below 10 raise the weak-instrument flag).
pub fn fit_iv2sls(ds: &Dataset, confounder: &str, instruments: &[String]) -> Result<DeconfoundFit> {
    if instruments.is_empty() {
        return Err(Error::Input("2SLS needs at least one instrument".into()));
    }
    let items = train_items(ds);
    let n = items.len();
    if n < instruments.len() + 3 {
        return Err(Error::Input(format!(
            "need more than {} train items for 2SLS, have {n}",
            instruments.len() + 2
        )));
    }
    let p = confounder_column(&items, confounder)?;
    let z_cols: Vec<Vec<f64>> = instruments
        .iter()
        .map(|name| {
            items
                .iter()
                .map(|it| {
                    it.confounders
                        .get(name)
                        .or_else(|| it.instruments.get(name))
                        .copied()
                        .ok_or_else(|| {
                            Error::Input(format!("item {:?}: missing instrument {name:?}", it.id))
                        })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for (name, col) in instruments.iter().zip(&z_cols) {
        let mean = col.iter().sum::<f64>() / n as f64;
        if col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() == 0.0 {
            return Err(Error::DegenerateInstrument(format!(
                "instrument {name:?} has zero variance in sample"
            )));
        }
    }

    // stage 1: p on Z + intercept
    let z_design = with_intercept(&z_cols, n);
    let p_vec = DVector::from_column_slice(&p);
    let (gamma, _, rss1) = ols_solve(&z_design, &p_vec)?;
    let p_hat = &z_design * &gamma;

    let p_mean = p.iter().sum::<f64>() / n as f64;
    let tss = p.iter().map(|v| (v - p_mean).powi(2)).sum::<f64>();
    let r2 = 1.0 - rss1 / tss;
    let k = instruments.len() as f64;
    let first_stage_f = (r2 / k) / ((1.0 - r2) / (n as f64 - k - 1.0));

    // stage 2: y on p_hat + intercept
    let y = DVector::from_iterator(n, items.iter().map(|it| it.outcome));
    let phat_col: Vec<f64> = p_hat.iter().copied().collect();
    let s2_design = with_intercept(&[phat_col], n);
    let (beta, _, _) = ols_solve(&s2_design, &y)?;
    let alpha_hat = beta[0];
    let intercept = beta[1];

    // 2SLS residuals with the original confounder
    let u: Vec<f64> = items
        .iter()
        .zip(&p)
        .map(|(it, &pi)| it.outcome - alpha_hat * pi - intercept)
        .collect();
    let sigma2 = u.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 2.0);
    let phat_mean = p_hat.iter().sum::<f64>() / n as f64;
    let phat_ss = p_hat.iter().map(|v| (v - phat_mean).powi(2)).sum::<f64>();
    let se = (sigma2 / phat_ss).sqrt();

    let mut alpha = BTreeMap::new();
    alpha.insert(confounder.to_string(), alpha_hat);
    let mut stderr = BTreeMap::new();
    stderr.insert(confounder.to_string(), se);

    Ok(DeconfoundFit {
        method: Method::Iv2sls,
        alpha,
        stderr,
        first_stage_f: Some(first_stage_f),
        weak_instrument: Some(first_stage_f < WEAK_INSTRUMENT_F),
        folds: None,
        n_used: n,
    })
}

/// Double machine learning for the partially linear model: K-fold
/// cross-fitting of ridge nuisance fits for outcome and confounder, then the
/// partialled-out coefficient on pooled residuals with a
/// heteroskedasticity-robust standard error.
pub fn fit_dml(ds: &Dataset, confounder: &str, k_folds: usize, opts: &FitOptions) -> Result<DeconfoundFit> {
    if k_folds < 2 {
        return Err(Error::Input("DML needs K >= 2 folds".into()));
    }
    let items = train_items(ds);
    let n = items.len();
    if n < 2 * k_folds {
        return Err(Error::FoldSize(format!(
            "train size {n} too small for {k_folds} folds"
        )));
    }
    let p = confounder_column(&items, confounder)?;

    // deterministic fold assignment from the seed
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        fold_of[idx] = rank % k_folds;
    }
    for f in 0..k_folds {
        let size = fold_of.iter().filter(|&&x| x == f).count();
        if size < 2 {
            return Err(Error::FoldSize(format!("fold {f} has {size} items")));
        }
    }

    let mut p_resid = vec![0.0; n];
    let mut y_resid = vec![0.0; n];
    for f in 0..k_folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let hold_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let x_train: Vec<Vec<f64>> = train_idx.iter().map(|&i| items[i].embedding.clone()).collect();
        let y_train: Vec<f64> = train_idx.iter().map(|&i| items[i].outcome).collect();
        let p_train: Vec<f64> = train_idx.iter().map(|&i| p[i]).collect();

        let outcome_model = fit_ridge(&x_train, &y_train, opts, None)?;
        let confounder_model = fit_ridge(&x_train, &p_train, opts, None)?;

        for &i in &hold_idx {
            let x = &items[i].embedding;
            let dot = |m: &crate::reward::RewardModel| {
                m.bias + m.weights.iter().zip(x).map(|(w, e)| w * e).sum::<f64>()
            };
            y_resid[i] = items[i].outcome - dot(&outcome_model);
            p_resid[i] = p[i] - dot(&confounder_model);
        }
    }

    let num: f64 = p_resid.iter().zip(&y_resid).map(|(a, b)| a * b).sum();
    let den: f64 = p_resid.iter().map(|a| a * a).sum();
    if den == 0.0 {
        return Err(Error::Estimator(
            "confounder residuals are identically zero; nothing to partial out".into(),
        ));
    }
    let alpha_hat = num / den;
    // sandwich variance for the scalar moment
    let meat: f64 = p_resid
        .iter()
        .zip(&y_resid)
        .map(|(&pt, &yt)| (pt * (yt - alpha_hat * pt)).powi(2))
        .sum();
    let se = meat.sqrt() / den;

    let mut alpha = BTreeMap::new();
    alpha.insert(confounder.to_string(), alpha_hat);
    let mut stderr = BTreeMap::new();
    stderr.insert(confounder.to_string(), se);

    Ok(DeconfoundFit {
        method: Method::Dml,
        alpha,
        stderr,
        first_stage_f: None,
        weak_instrument: None,
        folds: Some(k_folds),
        n_used: n,
    })
}

/// Subtract the fitted confounder contribution from every outcome. The
/// intercept is never subtracted; constant shifts do not affect ranking or
/// pairwise training.
pub fn residualize(ds: &Dataset, fit: &DeconfoundFit) -> Result<Dataset> {
    let missing: Vec<&str> = ds
        .items
        .iter()
        .filter(|it| fit.alpha.keys().any(|name| !it.confounders.contains_key(name)))
        .map(|it| it.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!(
            "items missing fitted confounders: {}",
            missing.join(", ")
        )));
    }
    let mut out = ds.clone();
    for it in &mut out.items {
        let adjustment: f64 = fit
            .alpha
            .iter()
            .map(|(name, a)| a * it.confounders[name])
            .sum();
        it.outcome -= adjustment;
    }
    Ok(out)
}
