//! Coopetitive soft gating: maps a tuple of error scores to weights that sum
//! to one. The exponent `eta` moves the weighting from plain averaging
//! (`eta = 0`) towards winner-takes-all gating (`eta -> inf`).
//!
//! Scores are divided by the smallest positive score of the tuple before the
//! exponent is applied. The weights then depend only on score ratios, and
//! `epsilon` only matters for zero scores, whatever the magnitude of the
//! errors or the value of `eta`.

use serde::{Deserialize, Serialize};

use crate::error::{CsgeError, Result};

pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Error scores of the members competing within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTuple {
    scores: Vec<f64>,
    epsilon: f64,
}

impl ScoreTuple {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        Self::with_epsilon(scores, DEFAULT_EPSILON)
    }

    /// `epsilon = 0` is accepted for exact analysis; zero scores then win outright.
    pub fn with_epsilon(scores: Vec<f64>, epsilon: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(CsgeError::domain("score tuple is empty"));
        }
        if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(CsgeError::domain(format!(
                "score {s} is not a finite nonnegative value"
            )));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(CsgeError::domain(format!(
                "epsilon {epsilon} must be nonnegative"
            )));
        }
        Ok(ScoreTuple { scores, epsilon })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn scale(&self) -> f64 {
        gate_scale(&self.scores)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta >= 0.0 {
        Ok(())
    } else {
        Err(CsgeError::domain(format!(
            "eta {eta} must be finite and nonnegative"
        )))
    }
}

/// Gate weight of a single score `omega` against the tuple.
pub fn soft_gate(omega: f64, scores: &ScoreTuple, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(CsgeError::domain(format!(
            "score {omega} is not a finite nonnegative value"
        )));
    }
    let scale = scores.scale();
    let eps = scores.epsilon;
    let a_omega = gate_term(log_ratio(omega, scale), eta, eps);
    let terms: Vec<f64> = scores
        .scores
        .iter()
        .map(|&s| gate_term(log_ratio(s, scale), eta, eps))
        .collect();
    if a_omega == 0.0 || terms.contains(&0.0) {
        // only reachable with epsilon = 0: zero-error members share everything
        let zeros = terms.iter().filter(|t| **t == 0.0).count();
        return Ok(if a_omega == 0.0 {
            1.0 / zeros.max(1) as f64
        } else {
            0.0
        });
    }
    let denom: f64 = terms.iter().map(|t| 1.0 / t).sum();
    Ok(1.0 / (a_omega * denom))
}

/// Gate weights for every member of the tuple; they sum to one.
pub fn soft_gate_all(scores: &ScoreTuple, eta: f64) -> Result<Vec<f64>> {
    check_eta(eta)?;
    let scale = scores.scale();
    let logs: Vec<f64> = scores.scores.iter().map(|&s| log_ratio(s, scale)).collect();
    let mut out = vec![0.0; logs.len()];
    gate_log_ratios(&logs, eta, scores.epsilon, &mut out);
    Ok(out)
}

/// `ln(score / scale)`, `-inf` for a zero score.
#[inline]
pub(crate) fn log_ratio(score: f64, scale: f64) -> f64 {
    (score / scale).ln()
}

#[inline]
fn gate_term(log_ratio: f64, eta: f64, eps: f64) -> f64 {
    if eta == 0.0 {
        1.0 + eps
    } else {
        (eta * log_ratio).exp() + eps
    }
}

/// Smallest positive score, or 1 when every score is zero.
fn gate_scale(scores: &[f64]) -> f64 {
    let m = scores
        .iter()
        .copied()
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Logs of the scores relative to the tuple's smallest positive score, as
/// consumed by [`gate_log_ratios`].
pub(crate) fn log_ratios(scores: &[f64]) -> Vec<f64> {
    let scale = gate_scale(scores);
    scores.iter().map(|&s| log_ratio(s, scale)).collect()
}

/// Core gate on precomputed log ratios. Writes normalized weights to `out`.
pub(crate) fn gate_log_ratios(logs: &[f64], eta: f64, eps: f64, out: &mut [f64]) {
    debug_assert_eq!(logs.len(), out.len());
    let mut total = 0.0;
    let mut zeros = 0usize;
    for (o, &l) in out.iter_mut().zip(logs) {
        let a = gate_term(l, eta, eps);
        if a == 0.0 {
            zeros += 1;
            *o = 0.0;
        } else {
            *o = 1.0 / a;
            total += *o;
        }
    }
    if zeros > 0 {
        for (o, &l) in out.iter_mut().zip(logs) {
            *o = if gate_term(l, eta, eps) == 0.0 {
                1.0 / zeros as f64
            } else {
                0.0
            };
        }
        return;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(scores: &[f64]) -> ScoreTuple {
        ScoreTuple::with_epsilon(scores.to_vec(), 0.0).unwrap()
    }

    /// Direct evaluation of the unnormalized-score gate formula with epsilon = 0.
    fn reference(scores: &[f64], omega: f64, eta: f64) -> f64 {
        let denom: f64 = scores.iter().map(|s| 1.0 / s.powf(eta)).sum();
        1.0 / (omega.powf(eta) * denom)
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let t = ScoreTuple::new(vec![0.3, 0.3]).unwrap();
        assert!((soft_gate(0.3, &t, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_is_uniform() {
        let t = ScoreTuple::new(vec![0.2, 0.4]).unwrap();
        assert!((soft_gate(0.2, &t, 0.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((soft_gate(0.4, &t, 0.0).unwrap() - 0.5).abs() < 1e-12);
        let z = ScoreTuple::new(vec![0.0, 0.0, 0.7]).unwrap();
        for w in soft_gate_all(&z, 0.0).unwrap() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_examples() {
        let t = exact(&[0.2, 0.4]);
        assert!((soft_gate(0.2, &t, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((soft_gate(0.2, &t, 2.0).unwrap() - 0.8).abs() < 1e-12);
        assert!((reference(&[0.2, 0.4], 0.2, 2.0) - 0.8).abs() < 1e-12);
        let w = soft_gate_all(&exact(&[0.1, 0.2, 0.4]), 1.0).unwrap();
        for (got, want) in w.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn default_epsilon_is_negligible_on_typical_scores() {
        let t = ScoreTuple::new(vec![0.2, 0.4]).unwrap();
        assert!((soft_gate(0.2, &t, 2.0).unwrap() - 0.8).abs() < 1e-9);
    }

    #[test]
    fn single_member_gets_everything() {
        for eta in [0.0, 1.0, 7.5] {
            let w = soft_gate_all(&ScoreTuple::new(vec![0.5]).unwrap(), eta).unwrap();
            assert_eq!(w, vec![1.0]);
        }
    }

    #[test]
    fn symmetric_triple() {
        let w = soft_gate_all(&ScoreTuple::new(vec![0.2; 3]).unwrap(), 3.0).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn zero_score_wins_when_unique() {
        let t = ScoreTuple::new(vec![0.0, 0.3, 0.5]).unwrap();
        let w = soft_gate_all(&t, 1.0).unwrap();
        assert!(w[0] > 0.999_999);
        let exact = soft_gate_all(&exact(&[0.0, 0.3]), 1.0).unwrap();
        assert_eq!(exact, vec![1.0, 0.0]);
    }

    #[test]
    fn rejects_invalid_input() {
        assert!(ScoreTuple::new(vec![]).is_err());
        assert!(ScoreTuple::new(vec![-0.1, 0.2]).is_err());
        assert!(ScoreTuple::new(vec![f64::NAN]).is_err());
        let t = ScoreTuple::new(vec![0.1, 0.2]).unwrap();
        assert!(soft_gate(0.1, &t, -1.0).is_err());
        assert!(soft_gate(-0.1, &t, 1.0).is_err());
        assert!(soft_gate_all(&t, f64::INFINITY).is_err());
    }

    #[test]
    fn large_eta_gates_to_best() {
        let w = soft_gate_all(&ScoreTuple::new(vec![0.2, 0.4, 0.9]).unwrap(), 50.0).unwrap();
        assert!(w[0] >= 0.999);
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(scores in prop::collection::vec(0.0f64..5.0, 1..10), eta in 0.0f64..50.0) {
            let w = soft_gate_all(&ScoreTuple::new(scores).unwrap(), eta).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn matches_reference_formula(scores in prop::collection::vec(0.01f64..2.0, 1..8), eta in 0.0f64..6.0) {
            let t = exact(&scores);
            for &s in &scores {
                let got = soft_gate(s, &t, eta).unwrap();
                let want = reference(&scores, s, eta);
                prop_assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }

        #[test]
        fn lower_score_gets_higher_weight(a in 0.01f64..1.0, gap in 0.001f64..1.0, eta in 0.1f64..20.0) {
            let t = ScoreTuple::new(vec![a, a + gap]).unwrap();
            let w = soft_gate_all(&t, eta).unwrap();
            prop_assert!(w[0] > w[1]);
        }

        #[test]
        fn scale_invariant(scores in prop::collection::vec(0.0f64..3.0, 1..8), c in 1e-3f64..1e3, eta in 0.0f64..10.0) {
            let a = soft_gate_all(&ScoreTuple::new(scores.clone()).unwrap(), eta).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let b = soft_gate_all(&ScoreTuple::new(scaled).unwrap(), eta).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
