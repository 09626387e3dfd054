//! Reward-model fitting: closed-form ridge on outcomes (regression head) and
//! Bradley-Terry logistic regression on preference pairs (pairwise head).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Item, PreferencePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Regression,
    Pairwise,
}

/// Linear scorer over embeddings, optionally with named confounder-head
/// coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub head: Head,
    pub lambda: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confounder_coeffs: Option<BTreeMap<String, f64>>,
}

impl RewardModel {
    pub fn zero(d: usize, head: Head) -> Self {
        RewardModel {
            head,
            lambda: 0.0,
            bias: 0.0,
            weights: vec![0.0; d],
            confounder_coeffs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub learning_rate: f64,
    pub intercept: bool,
    pub intercept_penalized: bool,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 0.0,
            max_iters: 20_000,
            tol: 1e-8,
            learning_rate: 0.5,
            intercept: true,
            intercept_penalized: false,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        FitOptions {
            lambda,
            ..Default::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("tol and learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Minimize (1/n)·Σ (y_i − w·x_i − b)² + λ‖w‖² in closed form via the
/// regularized normal equations (Cholesky on the Gram matrix). The bias is
/// unpenalized unless `opts.intercept_penalized` is set. `extra_cols` join
/// the design matrix and their coefficients land in `confounder_coeffs`.
pub fn fit_ridge(
    x: &[Vec<f64>],
    y: &[f64],
    opts: &FitOptions,
    extra_cols: Option<&BTreeMap<String, Vec<f64>>>,
) -> Result<RewardModel> {
    opts.check()?;
    let n = x.len();
    if n == 0 || y.len() != n {
        return Err(Error::Input(format!(
            "need matching nonempty X ({n} rows) and y ({} values)",
            y.len()
        )));
    }
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(Error::Input("ragged design matrix".into()));
    }
    let n_extra = extra_cols.map_or(0, |m| m.len());
    if let Some(extra) = extra_cols {
        for (name, col) in extra {
            if col.len() != n {
                return Err(Error::Input(format!(
                    "extra column {name:?} has {} values, expected {n}",
                    col.len()
                )));
            }
        }
    }

    let p = d + n_extra + usize::from(opts.intercept);
    let mut design = DMatrix::zeros(n, p);
    for (i, row) in x.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    if let Some(extra) = extra_cols {
        for (k, col) in extra.values().enumerate() {
            for i in 0..n {
                design[(i, d + k)] = col[i];
            }
        }
    }
    if opts.intercept {
        for i in 0..n {
            design[(i, p - 1)] = 1.0;
        }
    }
    let yv = DVector::from_column_slice(y);
    if design.iter().any(|v| !v.is_finite()) || yv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in design matrix or outcomes".into()));
    }

    let nf = n as f64;
    let mut gram = design.transpose() * &design / nf;
    for j in 0..p {
        let penalize_intercept = opts.intercept_penalized || !opts.intercept;
        if j < d + n_extra || penalize_intercept {
            gram[(j, j)] += opts.lambda;
        }
    }
    let rhs = design.transpose() * &yv / nf;

    let rank_err = || {
        Error::RankDeficient(format!(
            "normal equations not positive definite (lambda = {}); design is rank deficient",
            opts.lambda
        ))
    };
    let chol = gram.clone().cholesky().ok_or_else(rank_err)?;
    // Cholesky can numerically succeed on a singular Gram; a pivot ratio
    // below 1e-7 means a column is numerically in the span of the others.
    let diag = chol.l_dirty().diagonal();
    let max_piv = diag.iter().fold(0.0f64, |a, &b| a.max(b));
    let min_piv = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min_piv.is_nan() || min_piv <= 0.0 || min_piv / max_piv < 1e-7 {
        return Err(rank_err());
    }
    let beta = chol.solve(&rhs);

    let weights: Vec<f64> = beta.iter().take(d).copied().collect();
    let confounder_coeffs = extra_cols.map(|extra| {
        extra
            .keys()
            .cloned()
            .zip(beta.iter().skip(d).take(n_extra).copied())
            .collect()
    });
    let bias = if opts.intercept { beta[p - 1] } else { 0.0 };

    Ok(RewardModel {
        head: Head::Regression,
        lambda: opts.lambda,
        bias,
        weights,
        confounder_coeffs,
    })
}

/// Score an item: w·embedding + bias, plus the confounder head when present.
pub fn predict(model: &RewardModel, item: &Item) -> Result<f64> {
    if item.embedding.len() != model.weights.len() {
        return Err(Error::Input(format!(
            "item {:?}: embedding length {} != model dimension {}",
            item.id,
            item.embedding.len(),
            model.weights.len()
        )));
    }
    let mut score = model.bias
        + model
            .weights
            .iter()
            .zip(&item.embedding)
            .map(|(w, e)| w * e)
            .sum::<f64>();
    if let Some(coeffs) = &model.confounder_coeffs {
        for (name, c) in coeffs {
            let v = item.confounders.get(name).ok_or_else(|| {
                Error::Input(format!("item {:?}: missing confounder {name:?}", item.id))
            })?;
            score += c * v;
        }
    }
    Ok(score)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^{-z}) without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Bradley-Terry objective and gradient at `w` over winner-minus-loser
/// embedding differences: (1/m)·Σ ln(1 + e^{-w·Δ}) + λ‖w‖².
pub fn bt_loss_grad(diffs: &[Vec<f64>], w: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let d = w.len();
    let mut grad = vec![0.0; d];
    let mut loss = 0.0;
    let m = diffs.len().max(1) as f64;
    for diff in diffs {
        let z: f64 = w.iter().zip(diff).map(|(a, b)| a * b).sum();
        loss += log1p_exp_neg(z);
        let coeff = -sigmoid(-z);
        for (g, &dv) in grad.iter_mut().zip(diff) {
            *g += coeff * dv;
        }
    }
    loss /= m;
    for g in grad.iter_mut() {
        *g /= m;
    }
    for (g, &wi) in grad.iter_mut().zip(w) {
        *g += 2.0 * lambda * wi;
    }
    loss += lambda * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad)
}

fn pair_diffs(ds: &Dataset, pairs: &[PreferencePair]) -> Result<Vec<Vec<f64>>> {
    let by_id: BTreeMap<&str, &Item> = ds.items.iter().map(|i| (i.id.as_str(), i)).collect();
    pairs
        .iter()
        .map(|p| {
            let w = by_id
                .get(p.winner_id.as_str())
                .ok_or_else(|| Error::Input(format!("unknown winner_id {:?}", p.winner_id)))?;
            let l = by_id
                .get(p.loser_id.as_str())
                .ok_or_else(|| Error::Input(format!("unknown loser_id {:?}", p.loser_id)))?;
            Ok(w.embedding
                .iter()
                .zip(&l.embedding)
                .map(|(a, b)| a - b)
                .collect())
        })
        .collect()
}

/// Fit the pairwise Bradley-Terry head by full-batch gradient descent from a
/// zero start. The bias cancels in score differences and stays fixed at 0.
pub fn fit_pairwise_bt(
    ds: &Dataset,
    pairs: &[PreferencePair],
    opts: &FitOptions,
) -> Result<RewardModel> {
    opts.check()?;
    if pairs.is_empty() {
        return Err(Error::Input("pairwise fit needs at least one pair".into()));
    }
    let diffs = pair_diffs(ds, pairs)?;
    let d = diffs[0].len();
    let mut w = vec![0.0; d];
    for iter in 0..opts.max_iters {
        let (loss, grad) = bt_loss_grad(&diffs, &w, opts.lambda);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                message: "non-finite Bradley-Terry loss".into(),
            });
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.tol {
            break;
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= opts.learning_rate * gi;
        }
    }
    Ok(RewardModel {
        head: Head::Pairwise,
        lambda: opts.lambda,
        bias: 0.0,
        weights: w,
        confounder_coeffs: None,
    })
}

/// Compare the analytic Bradley-Terry gradient with central finite
/// differences (step 1e-5); returns the max relative discrepancy.
pub fn grad_check(diffs: &[Vec<f64>], point: &[f64], lambda: f64) -> f64 {
    if point.is_empty() {
        return 0.0;
    }
    let step = 1e-5;
    let (_, analytic) = bt_loss_grad(diffs, point, lambda);
    let mut max_rel = 0.0f64;
    for j in 0..point.len() {
        let mut plus = point.to_vec();
        plus[j] += step;
        let mut minus = point.to_vec();
        minus[j] -= step;
        let fd = (bt_loss_grad(diffs, &plus, lambda).0 - bt_loss_grad(diffs, &minus, lambda).0)
            / (2.0 * step);
        let denom = analytic[j].abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max((analytic[j] - fd).abs() / denom);
    }
    max_rel
}

/// Mean squared prediction error of the regression head over raw embeddings.
pub fn mse(model: &RewardModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(row, &yi)| {
            let pred = model.bias
                + model
                    .weights
                    .iter()
                    .zip(row)
                    .map(|(w, e)| w * e)
                    .sum::<f64>();
            (pred - yi).powi(2)
        })
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn no_intercept(lambda: f64) -> FitOptions {
        FitOptions {
            lambda,
            intercept: false,
            ..Default::default()
        }
    }

    #[test]
    fn unregularized_ridge_interpolates() {
        let m = fit_ridge(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &no_intercept(0.0), None).unwrap();
        assert_abs_diff_eq!(m.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_ridge_closed_form() {
        // minimize (1/n)Σ(y - wx)² + λw²  =>  w = Σxy / (Σx² + nλ) = 5/7
        let m = fit_ridge(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &no_intercept(1.0), None).unwrap();
        assert_abs_diff_eq!(m.weights[0], 5.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn huge_lambda_shrinks_to_mean() {
        let x = vec![vec![1.0, 0.3], vec![2.0, -0.4], vec![3.0, 0.9]];
        let y = vec![2.0, 4.0, 9.0];
        let m = fit_ridge(&x, &y, &FitOptions::with_lambda(1e9), None).unwrap();
        let norm: f64 = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "weight norm {norm}");
        assert_abs_diff_eq!(m.bias, 5.0, epsilon = 1e-6);
    }

    #[test]
    fn rank_deficiency_reported() {
        // duplicate column, lambda = 0
        let x = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = vec![1.0, 2.0, 3.0];
        let err = fit_ridge(&x, &y, &no_intercept(0.0), None).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)), "{err}");
    }

    #[test]
    fn nan_inputs_rejected() {
        let err = fit_ridge(&[vec![f64::NAN]], &[1.0], &no_intercept(0.0), None).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn extra_cols_land_in_confounder_coeffs() {
        // y = 2*x + 3*c exactly
        let x = vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let c = vec![1.0, -1.0, 2.0, 0.5];
        let y: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| 2.0 * xi[0] + 3.0 * ci).collect();
        let mut extra = BTreeMap::new();
        extra.insert("popularity".to_string(), c);
        let m = fit_ridge(&x, &y, &no_intercept(0.0), Some(&extra)).unwrap();
        assert_abs_diff_eq!(m.weights[0], 2.0, epsilon = 1e-10);
        let coeffs = m.confounder_coeffs.as_ref().unwrap();
        assert_abs_diff_eq!(coeffs["popularity"], 3.0, epsilon = 1e-10);
    }

    fn make_item(id: &str, emb: Vec<f64>) -> Item {
        Item {
            id: id.into(),
            embedding: emb,
            confounders: BTreeMap::new(),
            instruments: BTreeMap::new(),
            latent: None,
            outcome: 0.0,
            time_month: None,
            time_weekday: None,
        }
    }

    fn pair_dataset(winner_emb: Vec<f64>, loser_emb: Vec<f64>) -> (Dataset, Vec<PreferencePair>) {
        let ds = Dataset {
            items: vec![make_item("w", winner_emb), make_item("l", loser_emb)],
            pairs: vec![],
            split: BTreeMap::new(),
        };
        let pairs = vec![PreferencePair {
            context_id: "c".into(),
            winner_id: "w".into(),
            loser_id: "l".into(),
            margin: 1.0,
        }];
        (ds, pairs)
    }

    #[test]
    fn identical_embeddings_leave_weights_at_zero() {
        let (ds, pairs) = pair_dataset(vec![0.5, 0.5], vec![0.5, 0.5]);
        let m = fit_pairwise_bt(&ds, &pairs, &FitOptions::default()).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        let diffs = vec![vec![0.0, 0.0]];
        let (loss, _) = bt_loss_grad(&diffs, &m.weights, 0.0);
        assert_abs_diff_eq!(loss, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn scalar_bt_matches_fixed_point_oracle() {
        // single pair [1] vs [0], penalty 0.25 w²: optimum solves 0.5 w = σ(-w)
        let (ds, pairs) = pair_dataset(vec![1.0], vec![0.0]);
        let opts = FitOptions {
            lambda: 0.25,
            ..Default::default()
        };
        let m = fit_pairwise_bt(&ds, &pairs, &opts).unwrap();

        // bisection oracle on the stationarity condition
        let f = |w: f64| 0.5 * w - sigmoid(-w);
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_abs_diff_eq!(m.weights[0], oracle, epsilon = 1e-4);
        assert!((0.6..0.7).contains(&oracle), "oracle {oracle}");
    }

    #[test]
    fn contradictory_pairs_cancel() {
        let ds = Dataset {
            items: vec![make_item("a", vec![1.0]), make_item("b", vec![0.0])],
            pairs: vec![],
            split: BTreeMap::new(),
        };
        let pairs = vec![
            PreferencePair {
                context_id: "c".into(),
                winner_id: "a".into(),
                loser_id: "b".into(),
                margin: 1.0,
            },
            PreferencePair {
                context_id: "c".into(),
                winner_id: "b".into(),
                loser_id: "a".into(),
                margin: 1.0,
            },
        ];
        let m = fit_pairwise_bt(&ds, &pairs, &FitOptions::default()).unwrap();
        assert!(m.weights[0].abs() < 1e-9, "w = {}", m.weights[0]);
    }

    #[test]
    fn empty_pair_set_is_an_input_error() {
        let ds = Dataset {
            items: vec![],
            pairs: vec![],
            split: BTreeMap::new(),
        };
        assert!(matches!(
            fit_pairwise_bt(&ds, &[], &FitOptions::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn predict_applies_weights_and_confounder_head() {
        let mut model = RewardModel::zero(2, Head::Regression);
        model.weights = vec![1.0, 0.0];
        let item = make_item("x", vec![0.3, 9.0]);
        assert_abs_diff_eq!(predict(&model, &item).unwrap(), 0.3);

        let mut coeffs = BTreeMap::new();
        coeffs.insert("popularity".to_string(), 0.1);
        model.confounder_coeffs = Some(coeffs);
        let mut item = make_item("x", vec![0.5, 0.0]);
        item.confounders.insert("popularity".to_string(), 3.0);
        assert_abs_diff_eq!(predict(&model, &item).unwrap(), 0.8, epsilon = 1e-12);

        let bare = make_item("y", vec![0.5, 0.0]);
        assert!(matches!(predict(&model, &bare), Err(Error::Input(_))));
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let model = RewardModel::zero(2, Head::Regression);
        let item = make_item("x", vec![1.0]);
        assert!(matches!(predict(&model, &item), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let diffs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(grad_check(&diffs, &w, 0.3) < 1e-4);
    }

    #[test]
    fn grad_check_conventions() {
        // no pairs: pure quadratic penalty, FD matches to high accuracy
        let w = vec![0.7, -0.2];
        assert!(grad_check(&[], &w, 0.5) < 1e-6);
        // empty weight vector: 0 by convention
        assert_eq!(grad_check(&[], &[], 0.5), 0.0);
    }

    #[test]
    fn shrinkage_is_monotone_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] - 0.5 * r[2] + rng.gen_range(-0.1..0.1)).collect();
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let m = fit_ridge(&x, &y, &FitOptions::with_lambda(lambda), None).unwrap();
            let norm: f64 = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12, "norm {norm} after {last} at lambda {lambda}");
            last = norm;
        }
    }

    #[test]
    fn ridge_solution_is_a_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<Vec<f64>> = (0..25)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[1] + rng.gen_range(-0.2..0.2)).collect();
        let opts = FitOptions::with_lambda(0.05);
        let m = fit_ridge(&x, &y, &opts, None).unwrap();

        let objective = |w: &[f64], b: f64| -> f64 {
            let n = x.len() as f64;
            let fit: f64 = x
                .iter()
                .zip(&y)
                .map(|(r, &yi)| {
                    let pred = b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
                    (pred - yi).powi(2)
                })
                .sum::<f64>()
                / n;
            fit + opts.lambda * w.iter().map(|v| v * v).sum::<f64>()
        };
        let base = objective(&m.weights, m.bias);
        for j in 0..m.weights.len() {
            for delta in [-1e-3, 1e-3] {
                let mut w = m.weights.clone();
                w[j] += delta;
                assert!(objective(&w, m.bias) >= base - 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn bt_loss_is_translation_invariant(
            scores in proptest::collection::vec(-2.0f64..2.0, 4),
            shift in -5.0f64..5.0,
        ) {
            // adding a constant to every item's score leaves pair differences,
            // and hence the loss, unchanged
            let diffs = vec![
                vec![scores[0] - scores[1]],
                vec![scores[2] - scores[3]],
            ];
            let shifted = vec![
                vec![(scores[0] + shift) - (scores[1] + shift)],
                vec![(scores[2] + shift) - (scores[3] + shift)],
            ];
            let w = vec![0.8];
            let (a, _) = bt_loss_grad(&diffs, &w, 0.0);
            let (b, _) = bt_loss_grad(&shifted, &w, 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn predict_is_linear_in_the_embedding(
            e1 in proptest::collection::vec(-3.0f64..3.0, 3),
            e2 in proptest::collection::vec(-3.0f64..3.0, 3),
            w in proptest::collection::vec(-2.0f64..2.0, 3),
            bias in -1.0f64..1.0,
        ) {
            let mut model = RewardModel::zero(3, Head::Regression);
            model.weights = w;
            model.bias = bias;
            let sum: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| a + b).collect();
            let lhs = predict(&model, &make_item("s", sum)).unwrap();
            let rhs = predict(&model, &make_item("a", e1)).unwrap()
                + predict(&model, &make_item("b", e2)).unwrap()
                - bias;
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
