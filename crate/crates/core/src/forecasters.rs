//! Base power forecasters. Each ensemble member pairs one weather model with
//! one of these; external models plug in through the [`Forecaster`] trait.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CsgeError, Result};
use crate::neighbors::KdTree;

/// Penalty added to the normal equations when the design is rank deficient.
pub const RIDGE_PENALTY: f64 = 1e-6;

/// Anything that can produce a normalized power forecast for one row.
///
/// `None` signals that the member is unavailable for this row; the ensemble
/// then renormalizes over the remaining members.
pub trait Forecaster {
    fn predict(&self, features: &[f64], recent_power: Option<f64>) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ForecasterKind {
    Persistence,
    LinearRegression,
    KnnRegressor { neighbors: usize },
}

impl ForecasterKind {
    pub const DEFAULT_KNN_NEIGHBORS: usize = 20;
}

impl fmt::Display for ForecasterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ForecasterKind::Persistence => write!(f, "persistence"),
            ForecasterKind::LinearRegression => write!(f, "linear"),
            ForecasterKind::KnnRegressor { neighbors } => write!(f, "knn:{neighbors}"),
        }
    }
}

impl FromStr for ForecasterKind {
    type Err = CsgeError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "persistence" => return Ok(ForecasterKind::Persistence),
            "linear" | "linear_regression" => return Ok(ForecasterKind::LinearRegression),
            "knn" | "knn_regressor" => {
                return Ok(ForecasterKind::KnnRegressor {
                    neighbors: Self::DEFAULT_KNN_NEIGHBORS,
                })
            }
            _ => {}
        }
        let count = s
            .strip_prefix("knn:")
            .or_else(|| s.strip_prefix("knn_regressor:"))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .ok_or_else(|| CsgeError::Config(format!("unknown forecaster kind '{s}'")))?;
        Ok(ForecasterKind::KnnRegressor { neighbors: count })
    }
}

impl TryFrom<String> for ForecasterKind {
    type Error = CsgeError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ForecasterKind> for String {
    fn from(k: ForecasterKind) -> String {
        k.to_string()
    }
}

/// Per-dimension affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fit on rows of equal length. Constant dimensions get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dims: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dims];
        let mut m2 = vec![0.0; dims];
        for row in rows {
            n += 1;
            for d in 0..dims {
                let delta = row[d] - mean[d];
                mean[d] += delta / n as f64;
                m2[d] += delta * (row[d] - mean[d]);
            }
        }
        let scale = m2
            .iter()
            .map(|v| {
                let sd = if n > 1 {
                    (v / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// A fitted base forecaster.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecasterState {
    Persistence,
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
        /// True when the ridge fallback was needed.
        ridge: bool,
    },
    Knn {
        neighbors: usize,
        standardizer: Standardizer,
        tree: KdTree,
        targets: Vec<f64>,
    },
}

impl ForecasterState {
    pub fn kind(&self) -> ForecasterKind {
        match self {
            ForecasterState::Persistence => ForecasterKind::Persistence,
            ForecasterState::Linear { .. } => ForecasterKind::LinearRegression,
            ForecasterState::Knn { neighbors, .. } => ForecasterKind::KnnRegressor {
                neighbors: *neighbors,
            },
        }
    }

    /// Input dimensionality the state was fitted on; `None` for persistence.
    pub fn feature_dims(&self) -> Option<usize> {
        match self {
            ForecasterState::Persistence => None,
            ForecasterState::Linear { coefficients, .. } => Some(coefficients.len()),
            ForecasterState::Knn { standardizer, .. } => Some(standardizer.dims()),
        }
    }

    fn evaluate(&self, features: &[f64], recent_power: Option<f64>) -> Option<f64> {
        match self {
            ForecasterState::Persistence => recent_power,
            ForecasterState::Linear {
                intercept,
                coefficients,
                ..
            } => {
                debug_assert_eq!(features.len(), coefficients.len());
                Some(intercept + dot(coefficients, features))
            }
            ForecasterState::Knn {
                neighbors,
                standardizer,
                tree,
                targets,
            } => {
                let q = standardizer.apply(features);
                let hits = tree.nearest(&q, *neighbors);
                Some(hits.iter().map(|(i, _)| targets[*i]).sum::<f64>() / hits.len() as f64)
            }
        }
    }
}

impl Forecaster for ForecasterState {
    fn predict(&self, features: &[f64], recent_power: Option<f64>) -> Option<f64> {
        self.evaluate(features, recent_power)
            .filter(|v| v.is_finite())
            .map(|v| v.clamp(0.0, 1.0))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fit a forecaster of the given kind on `(inputs, targets)`.
pub fn fit(kind: ForecasterKind, inputs: &[&[f64]], targets: &[f64]) -> Result<ForecasterState> {
    if inputs.len() != targets.len() {
        return Err(CsgeError::domain(format!(
            "{} input rows but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    match kind {
        ForecasterKind::Persistence => Ok(ForecasterState::Persistence),
        ForecasterKind::LinearRegression => fit_linear(inputs, targets),
        ForecasterKind::KnnRegressor { neighbors } => {
            if inputs.is_empty() {
                return Err(CsgeError::InsufficientData(
                    "kNN regressor needs at least one row".into(),
                ));
            }
            if neighbors == 0 {
                return Err(CsgeError::domain(
                    "kNN regressor needs at least one neighbor",
                ));
            }
            let dims = inputs[0].len();
            check_widths(inputs, dims)?;
            let standardizer = Standardizer::fit(inputs.iter().copied(), dims);
            let points: Vec<f64> = inputs.iter().flat_map(|x| standardizer.apply(x)).collect();
            Ok(ForecasterState::Knn {
                neighbors,
                standardizer,
                tree: KdTree::new(points, dims.max(1)),
                targets: targets.to_vec(),
            })
        }
    }
}

fn check_widths(inputs: &[&[f64]], dims: usize) -> Result<()> {
    match inputs.iter().position(|x| x.len() != dims) {
        Some(i) => Err(CsgeError::domain(format!(
            "row {i} has {} features, expected {dims}",
            inputs[i].len()
        ))),
        None => Ok(()),
    }
}

fn fit_linear(inputs: &[&[f64]], targets: &[f64]) -> Result<ForecasterState> {
    let n = inputs.len();
    if n == 0 {
        return Err(CsgeError::InsufficientData(
            "linear regression needs data".into(),
        ));
    }
    let dims = inputs[0].len();
    check_widths(inputs, dims)?;
    if n < dims + 1 {
        return Err(CsgeError::InsufficientData(format!(
            "linear regression on {dims} features needs {} rows, got {n}",
            dims + 1
        )));
    }
    // center so the intercept drops out of the normal equations
    let x_mean: Vec<f64> = (0..dims)
        .map(|d| inputs.iter().map(|x| x[d]).sum::<f64>() / n as f64)
        .collect();
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let mut gram = vec![0.0; dims * dims];
    let mut rhs = vec![0.0; dims];
    for (x, &y) in inputs.iter().zip(targets) {
        let yc = y - y_mean;
        for i in 0..dims {
            let xi = x[i] - x_mean[i];
            rhs[i] += xi * yc;
            for j in 0..=i {
                gram[i * dims + j] += xi * (x[j] - x_mean[j]);
            }
        }
    }
    for i in 0..dims {
        for j in 0..i {
            gram[j * dims + i] = gram[i * dims + j];
        }
    }
    let (coefficients, ridge) = match solve_spd(&gram, &rhs, dims) {
        Some(beta) => (beta, false),
        None => {
            let mut reg = gram.clone();
            for i in 0..dims {
                reg[i * dims + i] += RIDGE_PENALTY;
            }
            let beta = solve_spd(&reg, &rhs, dims).ok_or_else(|| {
                CsgeError::domain("linear regression design is degenerate even with ridge")
            })?;
            log::warn!("rank-deficient design; fitted with ridge penalty {RIDGE_PENALTY}");
            (beta, true)
        }
    };
    let intercept = y_mean - dot(&coefficients, &x_mean);
    Ok(ForecasterState::Linear {
        intercept,
        coefficients,
        ridge,
    })
}

/// Cholesky solve with one step of iterative refinement. `None` when the
/// matrix is not numerically positive definite.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= tol {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let solve = |rhs: &[f64]| {
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
            y[i] = (rhs[i] - s) / l[i * n + i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
            x[i] = (y[i] - s) / l[i * n + i];
        }
        x
    };
    let mut x = solve(b);
    let resid: Vec<f64> = (0..n)
        .map(|i| b[i] - (0..n).map(|j| a[i * n + j] * x[j]).sum::<f64>())
        .collect();
    for (xi, d) in x.iter_mut().zip(solve(&resid)) {
        *xi += d;
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn views(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    #[test]
    fn kinds_parse_and_display() {
        for s in ["persistence", "linear", "knn:7"] {
            assert_eq!(s.parse::<ForecasterKind>().unwrap().to_string(), s);
        }
        assert_eq!(
            "knn".parse::<ForecasterKind>().unwrap(),
            ForecasterKind::KnnRegressor { neighbors: 20 }
        );
        assert!("ann".parse::<ForecasterKind>().is_err());
        assert!("knn:0".parse::<ForecasterKind>().is_err());
    }

    #[test]
    fn linear_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 20.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let ForecasterState::Linear {
            intercept,
            coefficients,
            ridge,
        } = fit(ForecasterKind::LinearRegression, &views(&rows), &y).unwrap()
        else {
            panic!("wrong state")
        };
        assert!(!ridge);
        assert!((coefficients[0] - 2.0).abs() < 1e-9);
        assert!(intercept.abs() < 1e-9);
    }

    #[test]
    fn linear_prediction_is_clipped() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 20.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let state = fit(ForecasterKind::LinearRegression, &views(&rows), &y).unwrap();
        assert_eq!(state.predict(&[0.7], None), Some(1.0));
        assert!((state.predict(&[0.2], None).unwrap() - 0.4).abs() < 1e-9);
    }

    #[test]
    fn collinear_design_falls_back_to_ridge() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 0.5 + 0.5;
                vec![x, x, 1.0 - x * 0.5]
            })
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.3 * r[0] + 0.1).collect();
        let state = fit(ForecasterKind::LinearRegression, &views(&rows), &y).unwrap();
        let ForecasterState::Linear {
            coefficients,
            intercept,
            ridge,
        } = &state
        else {
            panic!("wrong state")
        };
        assert!(*ridge);
        assert!(coefficients.iter().all(|c| c.is_finite()) && intercept.is_finite());
        assert!((state.predict(&rows[4], None).unwrap() - y[4]).abs() < 1e-3);
    }

    #[test]
    fn linear_needs_enough_rows() {
        let rows = vec![vec![0.1, 0.2], vec![0.3, 0.1]];
        assert!(fit(ForecasterKind::LinearRegression, &views(&rows), &[0.1, 0.2]).is_err());
        assert!(fit(ForecasterKind::LinearRegression, &[], &[]).is_err());
    }

    #[test]
    fn knn_self_neighbor() {
        let rows: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![i as f64 / 25.0, (i % 4) as f64])
            .collect();
        let y: Vec<f64> = (0..25).map(|i| (i as f64 / 30.0).min(1.0)).collect();
        let state = fit(
            ForecasterKind::KnnRegressor { neighbors: 1 },
            &views(&rows),
            &y,
        )
        .unwrap();
        for (r, t) in rows.iter().zip(&y) {
            assert_eq!(state.predict(r, None), Some(*t));
        }
    }

    #[test]
    fn knn_averages_three_nearest() {
        let rows = vec![vec![0.0], vec![0.1], vec![0.2], vec![0.9], vec![1.0]];
        let y = [0.1, 0.2, 0.3, 0.9, 0.9];
        let state = fit(
            ForecasterKind::KnnRegressor { neighbors: 3 },
            &views(&rows),
            &y,
        )
        .unwrap();
        assert!((state.predict(&[0.1], None).unwrap() - 0.2).abs() < 1e-12);
        assert!(fit(ForecasterKind::KnnRegressor { neighbors: 3 }, &[], &[]).is_err());
    }

    #[test]
    fn persistence_returns_recent_power() {
        let state = fit(ForecasterKind::Persistence, &[], &[]).unwrap();
        assert_eq!(state.predict(&[0.3, 0.9], Some(0.42)), Some(0.42));
        assert_eq!(state.predict(&[], None), None);
    }

    #[test]
    fn standardizer_handles_constant_columns() {
        let rows = [vec![1.0, 2.0], vec![1.0, 4.0]];
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), 2);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![0.0, 0.0]);
    }

    fn brute_knn_mean(rows: &[Vec<f64>], y: &[f64], q: &[f64], c: usize) -> f64 {
        let s = Standardizer::fit(rows.iter().map(|r| r.as_slice()), q.len());
        let qs = s.apply(q);
        let mut d: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let rs = s.apply(r);
                (rs.iter().zip(&qs).map(|(a, b)| (a - b) * (a - b)).sum(), i)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.iter().take(c).map(|(_, i)| y[*i]).sum::<f64>() / c.min(rows.len()) as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn predictions_stay_in_unit_interval(
            rows in prop::collection::vec(prop::collection::vec(-1.0f64..2.0, 2), 4..40),
            q in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - r[1]).collect();
            for kind in [ForecasterKind::LinearRegression, ForecasterKind::KnnRegressor { neighbors: 3 }] {
                let state = fit(kind, &views(&rows), &y).unwrap();
                let p = state.predict(&q, None).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn residuals_orthogonal_to_features(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 12..80),
            noise in prop::collection::vec(-0.1f64..0.1, 80),
        ) {
            let y: Vec<f64> = rows.iter().zip(&noise).map(|(r, e)| 0.2 + 0.3 * r[0] - 0.1 * r[2] + e).collect();
            let state = fit(ForecasterKind::LinearRegression, &views(&rows), &y).unwrap();
            let ForecasterState::Linear { intercept, coefficients, ridge } = &state else { unreachable!() };
            prop_assume!(!ridge);
            let resid: Vec<f64> = rows.iter().zip(&y).map(|(r, t)| t - intercept - dot(coefficients, r)).collect();
            let n = rows.len() as f64;
            prop_assert!(resid.iter().sum::<f64>().abs() <= 1e-8 * n);
            for d in 0..3 {
                let dp: f64 = rows.iter().zip(&resid).map(|(r, e)| r[d] * e).sum();
                prop_assert!(dp.abs() <= 1e-8 * n, "column {} dot {}", d, dp);
            }
        }

        #[test]
        fn knn_matches_linear_scan(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..200),
            q in prop::collection::vec(0.0f64..1.0, 3),
            c in 1usize..12,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1]).collect();
            let state = fit(ForecasterKind::KnnRegressor { neighbors: c }, &views(&rows), &y).unwrap();
            let want = brute_knn_mean(&rows, &y, &q, c);
            prop_assert!((state.predict(&q, None).unwrap() - want).abs() < 1e-12);
        }
    }
}
