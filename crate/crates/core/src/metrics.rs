//! Forecast scores: RMSE, coefficient of determination, skill against a
//! baseline, and win counts across data sets.

use serde::{Deserialize, Serialize};

use crate::error::{CsgeError, Result};

/// Scores closer than this count as a tie when awarding wins.
pub const WIN_TIE_TOLERANCE: f64 = 1e-3;

fn check_pair(forecasts: &[f64], observations: &[f64]) -> Result<()> {
    if forecasts.len() != observations.len() {
        return Err(CsgeError::domain(format!(
            "{} forecasts but {} observations",
            forecasts.len(),
            observations.len()
        )));
    }
    if forecasts.is_empty() {
        return Err(CsgeError::InsufficientData(
            "cannot score an empty series".into(),
        ));
    }
    Ok(())
}

pub fn rmse(forecasts: &[f64], observations: &[f64]) -> Result<f64> {
    check_pair(forecasts, observations)?;
    let sse: f64 = forecasts
        .iter()
        .zip(observations)
        .map(|(f, o)| (f - o) * (f - o))
        .sum();
    Ok((sse / forecasts.len() as f64).sqrt())
}

/// Squared Pearson correlation. `None` when either series has zero variance.
pub fn r_squared(forecasts: &[f64], observations: &[f64]) -> Result<Option<f64>> {
    check_pair(forecasts, observations)?;
    let n = forecasts.len() as f64;
    let mf = forecasts.iter().sum::<f64>() / n;
    let mo = observations.iter().sum::<f64>() / n;
    let (mut sfo, mut sff, mut soo) = (0.0, 0.0, 0.0);
    for (f, o) in forecasts.iter().zip(observations) {
        let (df, d_o) = (f - mf, o - mo);
        sfo += df * d_o;
        sff += df * df;
        soo += d_o * d_o;
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if sff <= 0.0 || soo <= 0.0 || constant(forecasts) || constant(observations) {
        return Ok(None);
    }
    Ok(Some((sfo * sfo / (sff * soo)).min(1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// Fractional improvement of `e_eval` over `e_base` for an error score.
pub fn skill(e_base: f64, e_eval: f64) -> Result<f64> {
    if e_base == 0.0 || !e_base.is_finite() {
        return Err(CsgeError::domain(format!(
            "skill needs a nonzero baseline, got {e_base}"
        )));
    }
    Ok((e_base - e_eval) / e_base)
}

/// Skill with the sign flipped for higher-is-better scores, so a positive
/// value always means the evaluated method is better.
pub fn skill_directed(base: f64, eval: f64, direction: Direction) -> Result<f64> {
    let s = skill(base, eval)?;
    Ok(match direction {
        Direction::LowerBetter => s,
        Direction::HigherBetter => -s,
    })
}

/// Win counts per method from `scores[method][dataset]`. Each data set awards
/// one point, shared equally among methods within the tie tolerance of the best.
/// Shares are kept as exact fractions and rounded to multiples of
/// 2^-`WIN_UNIT_BITS` by largest remainder, so the counts sum to the number of
/// data sets exactly in floating point.
pub fn wins(scores: &[Vec<f64>], direction: Direction) -> Vec<f64> {
    let n_methods = scores.len();
    let n_sets = scores.iter().map(|s| s.len()).min().unwrap_or(0);
    let denom = (1..=n_methods.max(1) as u128).fold(1u128, lcm);
    let mut numer = vec![0u128; n_methods];
    for d in 0..n_sets {
        let col: Vec<f64> = scores.iter().map(|s| s[d]).collect();
        let best = match direction {
            Direction::LowerBetter => col.iter().cloned().fold(f64::INFINITY, f64::min),
            Direction::HigherBetter => col.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        let winners: Vec<usize> = (0..col.len())
            .filter(|&m| (col[m] - best).abs() <= WIN_TIE_TOLERANCE)
            .collect();
        for &m in &winners {
            numer[m] += denom / winners.len() as u128;
        }
    }
    let unit = 1u128 << WIN_UNIT_BITS;
    let mut units: Vec<u128> = numer.iter().map(|&x| x * unit / denom).collect();
    let mut order: Vec<usize> = (0..n_methods).collect();
    order.sort_by_key(|&m| std::cmp::Reverse(numer[m] * unit % denom));
    let deficit = n_sets as u128 * unit - units.iter().sum::<u128>();
    for &m in order.iter().take(deficit as usize) {
        units[m] += 1;
    }
    units.iter().map(|&u| u as f64 / unit as f64).collect()
}

/// Resolution of win shares in bits.
const WIN_UNIT_BITS: u32 = 40;

fn lcm(a: u128, b: u128) -> u128 {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Scores of several methods on several data sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub datasets: Vec<String>,
    pub methods: Vec<String>,
    /// `rmse[method][dataset]`.
    pub rmse: Vec<Vec<f64>>,
    pub r2: Vec<Vec<Option<f64>>>,
}

/// Footer statistics of one score column set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Skill of the mean score against the baseline's mean score.
    pub skill_of_mean: Vec<Option<f64>>,
    /// Mean over data sets of the per-data-set skill.
    pub mean_skill: Vec<Option<f64>>,
    pub wins: Vec<f64>,
}

impl ScoreTable {
    pub fn new(
        datasets: Vec<String>,
        methods: Vec<String>,
        rmse: Vec<Vec<f64>>,
        r2: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if methods.is_empty() || datasets.is_empty() {
            return Err(CsgeError::domain("score table needs methods and data sets"));
        }
        let rmse_ok = rmse.len() == methods.len() && rmse.iter().all(|r| r.len() == datasets.len());
        let r2_ok = r2.len() == methods.len() && r2.iter().all(|r| r.len() == datasets.len());
        if !(rmse_ok && r2_ok) {
            return Err(CsgeError::domain(
                "score matrix shape does not match labels",
            ));
        }
        Ok(ScoreTable {
            datasets,
            methods,
            rmse,
            r2,
        })
    }

    pub fn method_index(&self, name: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == name)
    }

    pub fn rmse_summary(&self, baseline: usize) -> Summary {
        let full: Vec<Vec<Option<f64>>> = self
            .rmse
            .iter()
            .map(|r| r.iter().map(|v| Some(*v)).collect())
            .collect();
        summarize(&full, baseline, Direction::LowerBetter)
    }

    /// Summary over R²; data sets with an undefined R² for any method are skipped.
    pub fn r2_summary(&self, baseline: usize) -> Summary {
        summarize(&self.r2, baseline, Direction::HigherBetter)
    }
}

fn summarize(scores: &[Vec<Option<f64>>], baseline: usize, direction: Direction) -> Summary {
    let n_sets = scores[0].len();
    let complete: Vec<usize> = (0..n_sets)
        .filter(|&d| scores.iter().all(|s| s[d].is_some()))
        .collect();
    let col = |m: usize| -> Vec<f64> { complete.iter().map(|&d| scores[m][d].unwrap()).collect() };
    let mean: Vec<f64> = (0..scores.len()).map(|m| mean_of(&col(m))).collect();
    let std = (0..scores.len()).map(|m| std_of(&col(m))).collect();
    let base = col(baseline);
    let skill_of_mean = mean
        .iter()
        .map(|m| skill_directed(mean[baseline], *m, direction).ok())
        .collect();
    let mean_skill = (0..scores.len())
        .map(|m| {
            let per: Option<Vec<f64>> = col(m)
                .iter()
                .zip(&base)
                .map(|(e, b)| skill_directed(*b, *e, direction).ok())
                .collect();
            per.filter(|p| !p.is_empty()).map(|p| mean_of(&p))
        })
        .collect();
    let matrix: Vec<Vec<f64>> = (0..scores.len()).map(col).collect();
    Summary {
        mean,
        std,
        skill_of_mean,
        mean_skill,
        wins: wins(&matrix, direction),
    }
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_of(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean_of(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
