//! The three weighting aspects (global, local, lead-time) for power models
//! within each weather model and for the weather models themselves, all
//! derived from historical forecast errors.
//!
//! Weather-model quality is never observed directly; it is estimated as the
//! mean quality of the power models run on that weather model.

use serde::{Deserialize, Serialize};

use crate::data::{LeadGrid, MemberId};
use crate::error::{CsgeError, Result};
use crate::forecasters::Standardizer;
use crate::gating::{soft_gate_all, ScoreTuple, DEFAULT_EPSILON};
use crate::neighbors::KdTree;

pub const DEFAULT_NEIGHBOR_COUNT: usize = 30;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 1;

/// The six gate exponents. Array order is
/// `(global, local, lead-time)` for power models, then the same for weather models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaVector {
    pub global_power: f64,
    pub local_power: f64,
    pub leadtime_power: f64,
    pub global_weather: f64,
    pub local_weather: f64,
    pub leadtime_weather: f64,
}

/// One of the six gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coord {
    GlobalPower = 0,
    LocalPower = 1,
    LeadtimePower = 2,
    GlobalWeather = 3,
    LocalWeather = 4,
    LeadtimeWeather = 5,
}

impl Coord {
    pub const ALL: [Coord; 6] = [
        Coord::GlobalPower,
        Coord::LocalPower,
        Coord::LeadtimePower,
        Coord::GlobalWeather,
        Coord::LocalWeather,
        Coord::LeadtimeWeather,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn aspect(self) -> Aspect {
        match self {
            Coord::GlobalPower | Coord::GlobalWeather => Aspect::Global,
            Coord::LocalPower | Coord::LocalWeather => Aspect::Local,
            Coord::LeadtimePower | Coord::LeadtimeWeather => Aspect::LeadTime,
        }
    }

    pub fn is_weather(self) -> bool {
        self.index() >= 3
    }

    pub fn name(self) -> &'static str {
        match self {
            Coord::GlobalPower => "global_power",
            Coord::LocalPower => "local_power",
            Coord::LeadtimePower => "leadtime_power",
            Coord::GlobalWeather => "global_weather",
            Coord::LocalWeather => "local_weather",
            Coord::LeadtimeWeather => "leadtime_weather",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Global,
    Local,
    LeadTime,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Global, Aspect::Local, Aspect::LeadTime];

    pub fn coords(self) -> [Coord; 2] {
        match self {
            Aspect::Global => [Coord::GlobalPower, Coord::GlobalWeather],
            Aspect::Local => [Coord::LocalPower, Coord::LocalWeather],
            Aspect::LeadTime => [Coord::LeadtimePower, Coord::LeadtimeWeather],
        }
    }

    pub fn letter(self) -> char {
        match self {
            Aspect::Global => 'g',
            Aspect::Local => 'l',
            Aspect::LeadTime => 'k',
        }
    }

    pub fn from_letter(c: char) -> Option<Aspect> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.letter() == c.to_ascii_lowercase())
    }

    /// Parse a comma-separated letter list such as `g,k`.
    pub fn parse_list(s: &str) -> Result<Vec<Aspect>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let mut chars = part.chars();
            let a = match (chars.next(), chars.next()) {
                (Some(c), None) => Aspect::from_letter(c),
                _ => None,
            }
            .ok_or_else(|| {
                CsgeError::Config(format!("unknown aspect {part:?}; expected g, l or k"))
            })?;
            if !out.contains(&a) {
                out.push(a);
            }
        }
        Ok(out)
    }
}

impl EtaVector {
    pub fn splat(v: f64) -> Self {
        Self::from_array([v; 6])
    }

    pub fn zeros() -> Self {
        Self::splat(0.0)
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        EtaVector {
            global_power: a[0],
            local_power: a[1],
            leadtime_power: a[2],
            global_weather: a[3],
            local_weather: a[4],
            leadtime_weather: a[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.global_power,
            self.local_power,
            self.leadtime_power,
            self.global_weather,
            self.local_weather,
            self.leadtime_weather,
        ]
    }

    pub fn get(&self, c: Coord) -> f64 {
        self.to_array()[c.index()]
    }

    pub fn set(&mut self, c: Coord, v: f64) {
        let mut a = self.to_array();
        a[c.index()] = v;
        *self = Self::from_array(a);
    }

    pub fn validate(&self) -> Result<()> {
        match self
            .to_array()
            .iter()
            .position(|v| !(v.is_finite() && *v >= 0.0))
        {
            Some(i) => Err(CsgeError::domain(format!(
                "eta {} = {} must be finite and nonnegative",
                Coord::ALL[i].name(),
                self.to_array()[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn sum(&self) -> f64 {
        self.to_array().iter().sum()
    }
}

/// Signed validation errors `forecast - observation` per member, with the
/// overall and per-lead RMSE derived from them.
#[derive(Debug, Clone)]
pub struct ErrorLedger {
    grid: LeadGrid,
    leads: Vec<u32>,
    errors: Vec<Vec<Vec<Option<f64>>>>,
    rmse: Vec<Vec<Option<f64>>>,
    lead_rmse: Vec<Vec<Vec<Option<f64>>>>,
}

impl ErrorLedger {
    /// `forecasts[psi][phi][row]` against `observations[row]` at `leads[row]`.
    pub fn new(
        grid: LeadGrid,
        leads: Vec<u32>,
        observations: &[f64],
        forecasts: &[Vec<Vec<Option<f64>>>],
    ) -> Result<Self> {
        if leads.len() != observations.len() {
            return Err(CsgeError::domain(
                "ledger leads and observations differ in length",
            ));
        }
        if let Some(k) = leads.iter().find(|k| !grid.contains(**k)) {
            return Err(CsgeError::domain(format!("ledger lead {k} outside grid")));
        }
        let mut errors = Vec::with_capacity(forecasts.len());
        for per_psi in forecasts {
            let mut e_psi = Vec::with_capacity(per_psi.len());
            for f in per_psi {
                if f.len() != observations.len() {
                    return Err(CsgeError::domain("ledger forecast column has wrong length"));
                }
                e_psi.push(
                    f.iter()
                        .zip(observations)
                        .map(|(y, o)| y.map(|y| y - o))
                        .collect::<Vec<_>>(),
                );
            }
            errors.push(e_psi);
        }
        let n_leads = grid.len();
        let rmse = errors
            .iter()
            .map(|p| {
                p.iter()
                    .map(|e| rmse_of(e.iter().flatten().copied()))
                    .collect()
            })
            .collect();
        let lead_rmse = errors
            .iter()
            .map(|p: &Vec<Vec<Option<f64>>>| {
                p.iter()
                    .map(|e| {
                        let mut sums = vec![(0.0, 0usize); n_leads];
                        for (err, k) in e.iter().zip(&leads) {
                            if let Some(v) = err {
                                let s = &mut sums[(k - grid.k_min) as usize];
                                s.0 += v * v;
                                s.1 += 1;
                            }
                        }
                        sums.into_iter()
                            .map(|(s, n)| (n > 0).then(|| (s / n as f64).sqrt()))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(ErrorLedger {
            grid,
            leads,
            errors,
            rmse,
            lead_rmse,
        })
    }

    pub fn grid(&self) -> LeadGrid {
        self.grid
    }

    pub fn weather_count(&self) -> usize {
        self.errors.len()
    }

    pub fn power_count(&self, psi: usize) -> usize {
        self.errors[psi].len()
    }

    pub fn leads(&self) -> &[u32] {
        &self.leads
    }

    pub fn errors(&self, m: MemberId) -> &[Option<f64>] {
        &self.errors[m.weather][m.power]
    }

    pub fn rmse(&self, m: MemberId) -> Option<f64> {
        self.rmse[m.weather][m.power]
    }

    pub fn lead_rmse(&self, m: MemberId, lead: u32) -> Option<f64> {
        self.grid
            .index(lead)
            .and_then(|i| self.lead_rmse[m.weather][m.power][i])
    }

    /// Overall RMSE of every member; errors if any member has no errors.
    pub fn rmse_matrix(&self) -> Result<Vec<Vec<f64>>> {
        self.rmse
            .iter()
            .enumerate()
            .map(|(psi, row)| {
                row.iter()
                    .enumerate()
                    .map(|(phi, r)| {
                        r.ok_or_else(|| {
                            CsgeError::InsufficientData(format!(
                                "member {} has no validation errors",
                                MemberId::new(psi, phi)
                            ))
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

fn rmse_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (n > 0).then(|| (s / n as f64).sqrt())
}

/// Mean of each member-score row: the indirect weather-model quality.
fn weather_means(scores: &[Vec<f64>]) -> Vec<f64> {
    scores
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect()
}

/// Global power-model weights for weather model `psi`.
pub fn global_power_weights(ledger: &ErrorLedger, psi: usize, eta_g: f64) -> Result<Vec<f64>> {
    if psi >= ledger.weather_count() {
        return Err(CsgeError::domain(format!(
            "weather model {} unknown",
            psi + 1
        )));
    }
    let scores = ledger.rmse_matrix()?.swap_remove(psi);
    soft_gate_all(&ScoreTuple::new(scores)?, eta_g)
}

/// Global weather-model weights from the mean RMSE of each model's power models.
pub fn global_weather_weights(ledger: &ErrorLedger, eta_g: f64) -> Result<Vec<f64>> {
    let p = weather_means(&ledger.rmse_matrix()?);
    soft_gate_all(&ScoreTuple::new(p)?, eta_g)
}

/// Historic feature matrix of one weather model with the absolute errors of
/// each of its power models, queried by nearest neighbors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoricStore {
    standardizer: Standardizer,
    tree: KdTree,
    abs_errors: Vec<Vec<f64>>,
    origins: Vec<i64>,
    neighbor_count: usize,
}

/// Local quality estimate for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalQuality {
    /// Mean absolute error over the neighborhood, per power model.
    pub q: Vec<f64>,
    pub neighbors: Vec<usize>,
    /// The store held fewer rows than the configured neighbor count.
    pub degraded: bool,
}

impl HistoricStore {
    /// `features` are raw rows; `abs_errors[phi][row]`. The standardizer is
    /// frozen from the parameter set and reused for every query.
    pub fn new(
        standardizer: Standardizer,
        features: &[&[f64]],
        abs_errors: Vec<Vec<f64>>,
        origins: Vec<i64>,
        neighbor_count: usize,
    ) -> Result<Self> {
        if neighbor_count == 0 {
            return Err(CsgeError::domain("neighbor count must be at least 1"));
        }
        if features.is_empty() {
            return Err(CsgeError::InsufficientData(
                "historic store is empty".into(),
            ));
        }
        let dims = standardizer.dims();
        if features.iter().any(|f| f.len() != dims) {
            return Err(CsgeError::domain(
                "historic feature width differs from standardizer",
            ));
        }
        if abs_errors.is_empty() || abs_errors.iter().any(|e| e.len() != features.len()) {
            return Err(CsgeError::domain(
                "historic error columns must match the row count",
            ));
        }
        if origins.len() != features.len() {
            return Err(CsgeError::domain(
                "historic origins must match the row count",
            ));
        }
        if abs_errors
            .iter()
            .flatten()
            .any(|e| !(e.is_finite() && *e >= 0.0))
        {
            return Err(CsgeError::domain(
                "historic errors must be finite absolute values",
            ));
        }
        let points: Vec<f64> = features
            .iter()
            .flat_map(|f| standardizer.apply(f))
            .collect();
        Ok(HistoricStore {
            tree: KdTree::new(points, dims.max(1)),
            standardizer,
            abs_errors,
            origins,
            neighbor_count,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.standardizer.dims()
    }

    pub fn power_count(&self) -> usize {
        self.abs_errors.len()
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// Standardized feature row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        self.tree.point(i)
    }

    pub fn abs_error(&self, phi: usize, row: usize) -> f64 {
        self.abs_errors[phi][row]
    }

    pub fn origin(&self, row: usize) -> i64 {
        self.origins[row]
    }

    /// Keep only the listed power-model columns.
    pub fn select_power(&self, keep: &[usize]) -> HistoricStore {
        HistoricStore {
            abs_errors: keep.iter().map(|&p| self.abs_errors[p].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn with_neighbor_count(mut self, c: usize) -> Result<Self> {
        if c == 0 {
            return Err(CsgeError::domain("neighbor count must be at least 1"));
        }
        self.neighbor_count = c;
        Ok(self)
    }

    /// Mean absolute error of each power model over the `C` nearest rows.
    pub fn local_quality(&self, query: &[f64]) -> Result<LocalQuality> {
        self.local_quality_where(query, |_| true)
    }

    /// Same as [`local_quality`](Self::local_quality), ignoring rows issued at
    /// `origin`. Used when scoring rows that are themselves in the store.
    pub fn local_quality_excluding(&self, query: &[f64], origin: i64) -> Result<LocalQuality> {
        self.local_quality_where(query, |i| self.origins[i] != origin)
    }

    fn local_quality_where(
        &self,
        query: &[f64],
        keep: impl Fn(usize) -> bool,
    ) -> Result<LocalQuality> {
        if query.len() != self.dims() {
            return Err(CsgeError::domain(format!(
                "query has {} features, store has {}",
                query.len(),
                self.dims()
            )));
        }
        let q = self.standardizer.apply(query);
        let hits = self.tree.nearest_filtered(&q, self.neighbor_count, keep);
        if hits.is_empty() {
            return Err(CsgeError::InsufficientData(
                "no eligible historic rows".into(),
            ));
        }
        let neighbors: Vec<usize> = hits.iter().map(|h| h.0).collect();
        let n = neighbors.len() as f64;
        let q = self
            .abs_errors
            .iter()
            .map(|col| neighbors.iter().map(|&i| col[i]).sum::<f64>() / n)
            .collect();
        Ok(LocalQuality {
            q,
            degraded: neighbors.len() < self.neighbor_count,
            neighbors,
        })
    }
}

/// Local weights from per-weather-model q vectors: power weights within each
/// weather model and weather weights from the mean q of each model.
pub fn local_weights(
    q_power: &[Vec<f64>],
    eta_l_pow: f64,
    eta_l_wx: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if q_power.is_empty() {
        return Err(CsgeError::domain("no weather models"));
    }
    let power = q_power
        .iter()
        .map(|q| soft_gate_all(&ScoreTuple::new(q.clone())?, eta_l_pow))
        .collect::<Result<Vec<_>>>()?;
    let weather = soft_gate_all(&ScoreTuple::new(weather_means(q_power))?, eta_l_wx)?;
    Ok((power, weather))
}

/// Relative per-lead quality `r[psi][phi][k - k_min]`: each lead's RMSE
/// divided by the member's mean RMSE over all leads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadProfile {
    pub grid: LeadGrid,
    pub ratios: Vec<Vec<Vec<f64>>>,
}

impl LeadProfile {
    pub fn ratio(&self, m: MemberId, lead: u32) -> Option<f64> {
        self.grid
            .index(lead)
            .map(|i| self.ratios[m.weather][m.power][i])
    }
}

/// Per-lead RMSE normalized by its mean over leads, after an optional
/// centered moving average of odd width `smoothing_window`.
pub fn leadtime_profile(ledger: &ErrorLedger, smoothing_window: usize) -> Result<LeadProfile> {
    if smoothing_window == 0 || smoothing_window % 2 == 0 {
        return Err(CsgeError::domain(format!(
            "smoothing window must be odd, got {smoothing_window}"
        )));
    }
    let grid = ledger.grid;
    let half = smoothing_window / 2;
    let mut ratios = Vec::with_capacity(ledger.weather_count());
    for (psi, per_psi) in ledger.lead_rmse.iter().enumerate() {
        let mut out_psi = Vec::with_capacity(per_psi.len());
        for (phi, per_lead) in per_psi.iter().enumerate() {
            let n = per_lead.len();
            let mut smoothed = Vec::with_capacity(n);
            for i in 0..n {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(n - 1);
                let window: Vec<f64> = per_lead[lo..=hi].iter().flatten().copied().collect();
                if window.is_empty() {
                    return Err(CsgeError::MissingLead {
                        weather: psi + 1,
                        power: phi + 1,
                        lead: grid.k_min + i as u32,
                    });
                }
                smoothed.push(window.iter().sum::<f64>() / window.len() as f64);
            }
            let mean = smoothed.iter().sum::<f64>() / n as f64;
            out_psi.push(if mean > 0.0 {
                smoothed.iter().map(|r| r / mean).collect()
            } else {
                vec![1.0; n]
            });
        }
        ratios.push(out_psi);
    }
    Ok(LeadProfile { grid, ratios })
}

/// Lead-time weights: `power[k][psi][phi]` and `weather[k][psi]`.
pub type LeadWeights = (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>);

pub fn leadtime_weights(
    profile: &LeadProfile,
    eta_k_pow: f64,
    eta_k_wx: f64,
) -> Result<LeadWeights> {
    let n = profile.grid.len();
    let mut power = Vec::with_capacity(n);
    let mut weather = Vec::with_capacity(n);
    for i in 0..n {
        let r: Vec<Vec<f64>> = profile
            .ratios
            .iter()
            .map(|p| p.iter().map(|m| m[i]).collect())
            .collect();
        let (pw, wx) = local_weights(&r, eta_k_pow, eta_k_wx)?;
        power.push(pw);
        weather.push(wx);
    }
    Ok((power, weather))
}

/// Everything the ensemble needs to weight a future forecast: quality
/// statistics per member, historic stores per weather model, and the gate
/// exponents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightState {
    pub(crate) grid: LeadGrid,
    pub(crate) power_counts: Vec<usize>,
    pub(crate) global_rmse: Vec<Vec<f64>>,
    pub(crate) lead_profile: LeadProfile,
    pub(crate) historic: Vec<HistoricStore>,
    pub(crate) eta: EtaVector,
    pub(crate) epsilon: f64,
}

impl WeightState {
    pub fn new(
        ledger: &ErrorLedger,
        historic: Vec<HistoricStore>,
        eta: EtaVector,
        smoothing_window: usize,
    ) -> Result<Self> {
        eta.validate()?;
        let global_rmse = ledger.rmse_matrix()?;
        let lead_profile = leadtime_profile(ledger, smoothing_window)?;
        if historic.len() != global_rmse.len() {
            return Err(CsgeError::domain(
                "one historic store per weather model required",
            ));
        }
        for (psi, (store, r)) in historic.iter().zip(&global_rmse).enumerate() {
            if store.power_count() != r.len() {
                return Err(CsgeError::domain(format!(
                    "historic store of weather model {} has {} error columns, expected {}",
                    psi + 1,
                    store.power_count(),
                    r.len()
                )));
            }
        }
        Ok(WeightState {
            grid: ledger.grid(),
            power_counts: global_rmse.iter().map(|r| r.len()).collect(),
            global_rmse,
            lead_profile,
            historic,
            eta,
            epsilon: DEFAULT_EPSILON,
        })
    }

    pub fn grid(&self) -> LeadGrid {
        self.grid
    }

    pub fn eta(&self) -> EtaVector {
        self.eta
    }

    pub fn set_eta(&mut self, eta: EtaVector) -> Result<()> {
        eta.validate()?;
        self.eta = eta;
        Ok(())
    }

    pub fn with_eta(mut self, eta: EtaVector) -> Result<Self> {
        self.set_eta(eta)?;
        Ok(self)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn weather_count(&self) -> usize {
        self.power_counts.len()
    }

    pub fn power_counts(&self) -> &[usize] {
        &self.power_counts
    }

    pub fn member_count(&self) -> usize {
        self.power_counts.iter().sum()
    }

    /// Members in weather-major order.
    pub fn members(&self) -> Vec<MemberId> {
        self.power_counts
            .iter()
            .enumerate()
            .flat_map(|(psi, &n)| (0..n).map(move |phi| MemberId::new(psi, phi)))
            .collect()
    }

    /// Position of a member in [`members`](Self::members).
    pub fn flat_position(&self, m: MemberId) -> Option<usize> {
        if m.weather >= self.weather_count() || m.power >= self.power_counts[m.weather] {
            return None;
        }
        Some(self.power_counts[..m.weather].iter().sum::<usize>() + m.power)
    }

    pub fn global_rmse(&self) -> &[Vec<f64>] {
        &self.global_rmse
    }

    pub fn lead_profile(&self) -> &LeadProfile {
        &self.lead_profile
    }

    pub fn historic(&self, psi: usize) -> &HistoricStore {
        &self.historic[psi]
    }

    pub fn global_power_weights(&self, psi: usize) -> Result<Vec<f64>> {
        soft_gate_all(
            &ScoreTuple::new(self.global_rmse[psi].clone())?,
            self.eta.global_power,
        )
    }

    pub fn global_weather_weights(&self) -> Result<Vec<f64>> {
        soft_gate_all(
            &ScoreTuple::new(weather_means(&self.global_rmse))?,
            self.eta.global_weather,
        )
    }

    pub fn leadtime_weights(&self) -> Result<LeadWeights> {
        leadtime_weights(
            &self.lead_profile,
            self.eta.leadtime_power,
            self.eta.leadtime_weather,
        )
    }

    /// Restrict to a subset of weather models and, within each kept model,
    /// a subset of its power models (both in the given order).
    pub fn select(&self, weather: &[usize], power: &[Vec<usize>]) -> Result<WeightState> {
        if weather.len() != power.len() || weather.is_empty() {
            return Err(CsgeError::domain("member selection is malformed"));
        }
        let mut out = WeightState {
            grid: self.grid,
            power_counts: Vec::new(),
            global_rmse: Vec::new(),
            lead_profile: LeadProfile {
                grid: self.grid,
                ratios: Vec::new(),
            },
            historic: Vec::new(),
            eta: self.eta,
            epsilon: self.epsilon,
        };
        for (&psi, phis) in weather.iter().zip(power) {
            if psi >= self.weather_count() || phis.is_empty() {
                return Err(CsgeError::domain("member selection is malformed"));
            }
            if let Some(p) = phis.iter().find(|p| **p >= self.power_counts[psi]) {
                return Err(CsgeError::domain(format!(
                    "member {} does not exist",
                    MemberId::new(psi, *p)
                )));
            }
            out.power_counts.push(phis.len());
            out.global_rmse
                .push(phis.iter().map(|&p| self.global_rmse[psi][p]).collect());
            out.lead_profile.ratios.push(
                phis.iter()
                    .map(|&p| self.lead_profile.ratios[psi][p].clone())
                    .collect(),
            );
            out.historic.push(self.historic[psi].select_power(phis));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> LeadGrid {
        LeadGrid::hourly(1, 2).unwrap()
    }

    /// Ledger whose members have the given constant absolute errors.
    fn ledger_from_rmse(rmse: &[Vec<f64>]) -> ErrorLedger {
        let leads = vec![1, 2, 1, 2];
        let obs = vec![0.5; 4];
        let f: Vec<Vec<Vec<Option<f64>>>> = rmse
            .iter()
            .map(|p| p.iter().map(|r| vec![Some(0.5 + r); 4]).collect())
            .collect();
        ErrorLedger::new(grid2(), leads, &obs, &f).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn ledger_rmse_recomputes_from_errors() {
        let grid = LeadGrid::hourly(1, 3).unwrap();
        let leads = vec![1, 2, 3, 1, 2, 3];
        let obs = vec![0.1, 0.5, 0.9, 0.2, 0.4, 0.0];
        let f = vec![vec![vec![
            Some(0.2),
            Some(0.45),
            None,
            Some(0.3),
            Some(0.8),
            Some(0.05),
        ]]];
        let l = ErrorLedger::new(grid, leads, &obs, &f).unwrap();
        let m = MemberId::new(0, 0);
        let e: Vec<f64> = l.errors(m).iter().flatten().copied().collect();
        let want = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
        assert!((l.rmse(m).unwrap() - want).abs() < 1e-12);
        assert!((l.lead_rmse(m, 1).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(l.lead_rmse(m, 3).map(|v| (v * 1e12).round()), Some(5e10));
    }

    #[test]
    fn global_power_weight_examples() {
        let l = ledger_from_rmse(&[vec![0.1, 0.1]]);
        assert!(close(
            &global_power_weights(&l, 0, 3.0).unwrap(),
            &[0.5, 0.5],
            1e-12
        ));
        let l = ledger_from_rmse(&[vec![0.1, 0.2]]);
        assert!(close(
            &global_power_weights(&l, 0, 1.0).unwrap(),
            &[2.0 / 3.0, 1.0 / 3.0],
            1e-9
        ));
        let l = ledger_from_rmse(&[vec![0.1, 0.2, 0.4]]);
        assert!(close(
            &global_power_weights(&l, 0, 0.0).unwrap(),
            &[1.0 / 3.0; 3],
            1e-12
        ));
    }

    #[test]
    fn global_weights_need_complete_ledger() {
        let f = vec![vec![vec![Some(0.5), Some(0.5)], vec![None, None]]];
        let l = ErrorLedger::new(grid2(), vec![1, 2], &[0.4, 0.4], &f).unwrap();
        assert!(global_power_weights(&l, 0, 1.0).is_err());
        assert!(global_weather_weights(&l, 1.0).is_err());
    }

    #[test]
    fn global_weather_weight_examples() {
        let l = ledger_from_rmse(&[vec![0.1, 0.3], vec![0.1, 0.3]]);
        assert!(close(
            &global_weather_weights(&l, 2.0).unwrap(),
            &[0.5, 0.5],
            1e-12
        ));
        // columns average to 0.1 and 0.3
        let l = ledger_from_rmse(&[vec![0.05, 0.15], vec![0.2, 0.4]]);
        assert!(close(
            &global_weather_weights(&l, 1.0).unwrap(),
            &[0.75, 0.25],
            1e-9
        ));
        let l = ledger_from_rmse(&[vec![0.05, 0.15]]);
        assert_eq!(global_weather_weights(&l, 1.0).unwrap(), vec![1.0]);
    }

    fn store(rows: &[Vec<f64>], errs: Vec<Vec<f64>>, c: usize) -> HistoricStore {
        let views: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let std = Standardizer::fit(views.iter().copied(), rows[0].len());
        let origins = (0..rows.len() as i64).collect();
        HistoricStore::new(std, &views, errs, origins, c).unwrap()
    }

    #[test]
    fn local_quality_self_neighbor() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64 / 20.0, (i * 7 % 20) as f64 / 20.0])
            .collect();
        let e0: Vec<f64> = (0..20).map(|i| i as f64 / 100.0).collect();
        let e1: Vec<f64> = (0..20).map(|i| (20 - i) as f64 / 100.0).collect();
        let s = store(&rows, vec![e0.clone(), e1.clone()], 1);
        let lq = s.local_quality(&rows[7]).unwrap();
        assert_eq!(lq.neighbors, vec![7]);
        assert_eq!(lq.q, vec![e0[7], e1[7]]);
        assert!(!lq.degraded);
    }

    #[test]
    fn full_neighborhood_is_global_mean() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin()]).collect();
        let e: Vec<f64> = (0..12).map(|i| i as f64 / 10.0).collect();
        let s = store(&rows, vec![e.clone()], 12);
        let lq = s.local_quality(&[0.3]).unwrap();
        assert!((lq.q[0] - e.iter().sum::<f64>() / 12.0).abs() < 1e-12);
        let big = store(&rows, vec![e], 50).local_quality(&[0.3]).unwrap();
        assert!(big.degraded);
        assert_eq!(big.neighbors.len(), 12);
    }

    #[test]
    fn local_quality_separates_clusters() {
        // model A is accurate near 0, model B near 1
        let mut rows = Vec::new();
        let (mut ea, mut eb) = (Vec::new(), Vec::new());
        for i in 0..40 {
            let jitter = (i as f64 * 0.61).sin() * 0.05;
            if i % 2 == 0 {
                rows.push(vec![0.0 + jitter, 0.1]);
                ea.push(0.02);
                eb.push(0.2);
            } else {
                rows.push(vec![1.0 + jitter, 0.9]);
                ea.push(0.25);
                eb.push(0.03);
            }
        }
        let s = store(&rows, vec![ea, eb], 5);
        let q1 = s.local_quality(&[0.01, 0.1]).unwrap().q;
        assert!(q1[0] < q1[1]);
        let q2 = s.local_quality(&[0.98, 0.88]).unwrap().q;
        assert!(q2[1] < q2[0]);
    }

    #[test]
    fn excluding_origin_skips_own_rows() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let s = store(&rows, vec![(0..10).map(|i| i as f64).collect()], 1);
        let lq = s.local_quality_excluding(&[4.0], 4).unwrap();
        assert_eq!(lq.neighbors, vec![3]);
    }

    #[test]
    fn store_rejects_bad_shapes() {
        let rows = [vec![0.1], vec![0.2]];
        let views: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let std = Standardizer::fit(views.iter().copied(), 1);
        assert!(HistoricStore::new(std.clone(), &views, vec![vec![0.1]], vec![0, 1], 1).is_err());
        assert!(
            HistoricStore::new(std.clone(), &views, vec![vec![0.1, 0.2]], vec![0, 1], 0).is_err()
        );
        assert!(HistoricStore::new(std, &[], vec![vec![]], vec![], 1).is_err());
        let s = store(&[vec![0.1], vec![0.2]], vec![vec![0.0, 0.1]], 1);
        assert!(s.local_quality(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn local_weight_examples() {
        let (p, w) = local_weights(&[vec![0.2, 0.2], vec![0.2, 0.2]], 2.0, 2.0).unwrap();
        assert!(close(&p[0], &[0.5, 0.5], 1e-12) && close(&w, &[0.5, 0.5], 1e-12));
        let (_, w) = local_weights(&[vec![0.1, 0.2], vec![0.2, 0.4]], 1.0, 1.0).unwrap();
        assert!(close(&w, &[2.0 / 3.0, 1.0 / 3.0], 1e-9));
        let (p, w) = local_weights(&[vec![0.1, 0.5], vec![0.9, 0.4]], 0.0, 0.0).unwrap();
        assert!(close(&p[1], &[0.5, 0.5], 1e-12) && close(&w, &[0.5, 0.5], 1e-12));
    }

    fn ledger_from_lead_rmse(per_lead: &[f64]) -> ErrorLedger {
        let grid = LeadGrid::hourly(1, per_lead.len() as u32).unwrap();
        let leads: Vec<u32> = grid.leads().collect();
        let obs = vec![0.2; leads.len()];
        let f = vec![vec![per_lead.iter().map(|r| Some(0.2 + r)).collect()]];
        ErrorLedger::new(grid, leads, &obs, &f).unwrap()
    }

    #[test]
    fn leadtime_profile_examples() {
        let p = leadtime_profile(&ledger_from_lead_rmse(&[0.2, 0.2, 0.2]), 1).unwrap();
        assert!(close(&p.ratios[0][0], &[1.0; 3], 1e-12));
        let p = leadtime_profile(&ledger_from_lead_rmse(&[0.1, 0.3]), 1).unwrap();
        assert!(close(&p.ratios[0][0], &[0.5, 1.5], 1e-12));
        // window 3: (0.25, 0.2, 0.25) before normalization
        let p = leadtime_profile(&ledger_from_lead_rmse(&[0.1, 0.4, 0.1]), 3).unwrap();
        let mean = (0.25 + 0.2 + 0.25) / 3.0;
        assert!(close(
            &p.ratios[0][0],
            &[0.25 / mean, 0.2 / mean, 0.25 / mean],
            1e-12
        ));
    }

    #[test]
    fn leadtime_profile_missing_lead() {
        let grid = LeadGrid::hourly(1, 3).unwrap();
        let f = vec![vec![vec![Some(0.3), Some(0.4)]]];
        let l = ErrorLedger::new(grid, vec![1, 3], &[0.2, 0.2], &f).unwrap();
        match leadtime_profile(&l, 1) {
            Err(CsgeError::MissingLead {
                weather: 1,
                power: 1,
                lead: 2,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let p = leadtime_profile(&l, 3).unwrap();
        assert_eq!(p.ratios[0][0].len(), 3);
        assert!(leadtime_profile(&l, 2).is_err());
    }

    #[test]
    fn leadtime_ratio_mean_is_one() {
        let p = leadtime_profile(&ledger_from_lead_rmse(&[0.05, 0.1, 0.3, 0.2, 0.15]), 1).unwrap();
        let r = &p.ratios[0][0];
        assert!((r.iter().sum::<f64>() / r.len() as f64 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leadtime_weight_examples() {
        let profile = LeadProfile {
            grid: grid2(),
            ratios: vec![vec![vec![0.3, 1.7], vec![1.2, 0.8]]],
        };
        let (p, _) = leadtime_weights(&profile, 1.0, 1.0).unwrap();
        assert!((p[0][0][0] - 0.8).abs() < 1e-9);
        let (p, w) = leadtime_weights(&profile, 0.0, 0.0).unwrap();
        assert!(close(&p[1][0], &[0.5, 0.5], 1e-12) && close(&w[0], &[1.0], 1e-12));
        let flat = LeadProfile {
            grid: grid2(),
            ratios: vec![vec![vec![1.0, 1.0]; 3]; 2],
        };
        let (p, w) = leadtime_weights(&flat, 4.0, 4.0).unwrap();
        assert!(close(&p[0][1], &[1.0 / 3.0; 3], 1e-12) && close(&w[1], &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn eta_vector_order() {
        let e = EtaVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(e.global_power, 1.0);
        assert_eq!(e.leadtime_weather, 6.0);
        assert_eq!(e.get(Coord::GlobalWeather), 4.0);
        assert!(EtaVector::splat(-1.0).validate().is_err());
    }
}
