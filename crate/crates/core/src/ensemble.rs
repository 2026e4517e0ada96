//! Fusion of member forecasts: the six gate factors of each member are
//! multiplied, normalized over the available members and used as convex
//! combination weights.
//!
//! A weather model counts as available for a prediction when its features
//! are present. Only available weather models compete in the weather-level
//! gates. Within an available weather model all of its power models compete;
//! members that then fail to deliver a value are dropped at normalization.

use std::collections::HashMap;

use crate::data::{AlignedRow, MemberId};
use crate::error::{CsgeError, Result};
use crate::forecasters::Forecaster;
use crate::gating::{gate_log_ratios, log_ratios, soft_gate_all, ScoreTuple};
use crate::weighting::{Coord, EtaVector, LocalQuality, WeightState};

/// One member's forecast for a single (origin, lead).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemberForecast {
    pub member: MemberId,
    pub lead: u32,
    pub value: Option<f64>,
}

/// Inputs of one prediction, in the state's member order.
#[derive(Debug, Clone, PartialEq)]
pub struct RowInputs {
    pub lead: u32,
    /// One value per member of [`WeightState::members`]; `None` if unavailable.
    pub values: Vec<Option<f64>>,
    /// Local quality per weather model; `None` marks the model as unavailable.
    pub local_q: Vec<Option<Vec<f64>>>,
}

impl RowInputs {
    /// Mark a member as unavailable.
    pub fn drop_member(&mut self, state: &WeightState, m: MemberId) -> Result<()> {
        let pos = state
            .flat_position(m)
            .ok_or_else(|| CsgeError::domain(format!("member {m} does not exist")))?;
        self.values[pos] = None;
        Ok(())
    }
}

/// Per-member breakdown of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberDiagnostics {
    pub member: MemberId,
    pub value: Option<f64>,
    /// Gate factors in [`Coord`] order.
    pub factors: [f64; 6],
    /// `w_psi * w_phi|psi` before normalization.
    pub raw: f64,
    pub weight: f64,
}

impl MemberDiagnostics {
    pub fn factor(&self, c: Coord) -> f64 {
        self.factors[c.index()]
    }

    pub fn weather_product(&self) -> f64 {
        self.factors[3] * self.factors[4] * self.factors[5]
    }

    pub fn power_product(&self) -> f64 {
        self.factors[0] * self.factors[1] * self.factors[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub lead: u32,
    pub value: f64,
    pub weights: Vec<f64>,
    pub members: Vec<MemberDiagnostics>,
    /// Some historic store held fewer rows than the neighbor count.
    pub degraded_locality: bool,
}

/// The two three-factor products `(w_psi, w_phi|psi)` of one member before
/// normalization across members.
pub fn member_weight_raw(
    state: &WeightState,
    member: MemberId,
    lead: u32,
    local_q: &[Option<Vec<f64>>],
) -> Result<(f64, f64)> {
    state
        .flat_position(member)
        .ok_or_else(|| CsgeError::domain(format!("member {member} does not exist")))?;
    let lead_idx = state
        .grid()
        .index(lead)
        .ok_or_else(|| CsgeError::domain(format!("lead {lead} outside grid")))?;
    if local_q.len() != state.weather_count() {
        return Err(CsgeError::domain(
            "one local quality entry per weather model required",
        ));
    }
    let psi = member.weather;
    let own_q = local_q[psi]
        .as_ref()
        .ok_or_else(|| CsgeError::domain(format!("weather model {} is unavailable", psi + 1)))?;
    let avail: Vec<usize> = (0..state.weather_count())
        .filter(|p| local_q[*p].is_some())
        .collect();
    let pos = avail
        .iter()
        .position(|p| *p == psi)
        .expect("own model is available");
    let eta = state.eta();
    let eps = state.epsilon();
    let gate = |scores: Vec<f64>, eta: f64, i: usize| -> Result<f64> {
        Ok(soft_gate_all(&ScoreTuple::with_epsilon(scores, eps)?, eta)?[i])
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let rmse = state.global_rmse();
    let ratios = &state.lead_profile().ratios;
    let lead_of = |p: usize| -> Vec<f64> { ratios[p].iter().map(|r| r[lead_idx]).collect() };

    let power = gate(rmse[psi].clone(), eta.global_power, member.power)?
        * gate(own_q.clone(), eta.local_power, member.power)?
        * gate(lead_of(psi), eta.leadtime_power, member.power)?;
    let weather = gate(
        avail.iter().map(|&p| mean(&rmse[p])).collect(),
        eta.global_weather,
        pos,
    )? * gate(
        avail
            .iter()
            .map(|&p| mean(local_q[p].as_ref().unwrap()))
            .collect(),
        eta.local_weather,
        pos,
    )? * gate(
        avail.iter().map(|&p| mean(&lead_of(p))).collect(),
        eta.leadtime_weather,
        pos,
    )?;
    Ok((weather, power))
}

/// Normalize raw products over the available members. Unavailable members
/// get weight 0; if every available product is zero the weights are uniform.
pub fn normalize_weights(raw: &[f64], available: &[bool]) -> Result<Vec<f64>> {
    if raw.len() != available.len() {
        return Err(CsgeError::domain(
            "raw weights and availability differ in length",
        ));
    }
    let mut out = vec![0.0; raw.len()];
    normalize_into(raw, |j| available[j], &mut out)?;
    Ok(out)
}

fn normalize_into(raw: &[f64], available: impl Fn(usize) -> bool, out: &mut [f64]) -> Result<()> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (j, r) in raw.iter().enumerate() {
        if available(j) {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(CsgeError::domain(format!("raw weight {r} is invalid")));
            }
            total += r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CsgeError::NoMembersAvailable);
    }
    if total <= 0.0 {
        log::warn!("all raw weights are zero; falling back to uniform weights");
    }
    for (j, (o, r)) in out.iter_mut().zip(raw).enumerate() {
        *o = match (available(j), total > 0.0) {
            (false, _) => 0.0,
            (true, true) => r / total,
            (true, false) => 1.0 / count as f64,
        };
    }
    Ok(())
}

/// Weighted sum of the available member values.
pub fn combine(forecasts: &[MemberForecast], weights: &[f64]) -> Result<f64> {
    if forecasts.len() != weights.len() {
        return Err(CsgeError::domain(format!(
            "{} forecasts but {} weights",
            forecasts.len(),
            weights.len()
        )));
    }
    let mut any = false;
    let mut sum = 0.0;
    for (f, w) in forecasts.iter().zip(weights) {
        if let Some(v) = f.value {
            sum += w * v;
            any = true;
        }
    }
    if !any {
        return Err(CsgeError::NoMembersAvailable);
    }
    Ok(sum)
}

/// Query for one prediction: per-weather-model features and the latest
/// measured power.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub origin: i64,
    pub lead: u32,
    pub features: &'a [Option<Vec<f64>>],
    pub recent_power: Option<f64>,
}

impl<'a> From<&'a AlignedRow> for Query<'a> {
    fn from(r: &'a AlignedRow) -> Self {
        Query {
            origin: r.origin,
            lead: r.lead,
            features: &r.features,
            recent_power: r.recent_power,
        }
    }
}

/// Run the base forecasters and historic-store lookups for one query.
/// `forecasters[psi][phi]` must match the state's member layout.
pub fn row_inputs<F: Forecaster>(
    state: &WeightState,
    forecasters: &[Vec<F>],
    query: &Query<'_>,
) -> Result<(RowInputs, bool)> {
    check_layout(state, forecasters)?;
    if query.features.len() != state.weather_count() {
        return Err(CsgeError::domain(format!(
            "query has {} weather models, state has {}",
            query.features.len(),
            state.weather_count()
        )));
    }
    let mut values = Vec::with_capacity(state.member_count());
    let mut local_q = Vec::with_capacity(state.weather_count());
    let mut degraded = false;
    for (psi, per_psi) in forecasters.iter().enumerate() {
        match &query.features[psi] {
            Some(x) => {
                let LocalQuality { q, degraded: d, .. } = state.historic(psi).local_quality(x)?;
                degraded |= d;
                local_q.push(Some(q));
                values.extend(per_psi.iter().map(|f| f.predict(x, query.recent_power)));
            }
            None => {
                local_q.push(None);
                values.extend(std::iter::repeat_n(None, per_psi.len()));
            }
        }
    }
    Ok((
        RowInputs {
            lead: query.lead,
            values,
            local_q,
        },
        degraded,
    ))
}

fn check_layout<F>(state: &WeightState, forecasters: &[Vec<F>]) -> Result<()> {
    let counts: Vec<usize> = forecasters.iter().map(|f| f.len()).collect();
    if counts != state.power_counts() {
        return Err(CsgeError::domain(format!(
            "forecaster layout {counts:?} does not match weight state {:?}",
            state.power_counts()
        )));
    }
    Ok(())
}

/// Full CSGE prediction for one (origin, lead) with diagnostics.
pub fn predict_csge<F: Forecaster>(
    state: &WeightState,
    forecasters: &[Vec<F>],
    query: &Query<'_>,
) -> Result<Prediction> {
    let (inputs, degraded) = row_inputs(state, forecasters, query)?;
    let mut plan = WeightPlan::compile(state, std::slice::from_ref(&inputs))?;
    plan.refresh(&state.eta())?;
    let mut p = plan.detail(0);
    p.degraded_locality = degraded;
    Ok(p)
}

/// Predictions for many rows sharing one compiled plan.
pub fn predict_rows(state: &WeightState, rows: &[RowInputs]) -> Result<Vec<Prediction>> {
    let mut plan = WeightPlan::compile(state, rows)?;
    plan.refresh(&state.eta())?;
    Ok((0..rows.len()).map(|i| plan.detail(i)).collect())
}

const NO_GATE: u32 = u32::MAX;

/// A family of gate tuples sharing one exponent, stored back to back.
#[derive(Debug, Clone, Default)]
struct GateTable {
    logs: Vec<f64>,
    starts: Vec<usize>,
    out: Vec<f64>,
    eta: Option<f64>,
}

impl GateTable {
    fn new() -> Self {
        GateTable {
            starts: vec![0],
            ..Default::default()
        }
    }

    /// Append a tuple; returns the offset of its first weight.
    fn push(&mut self, scores: &[f64]) -> usize {
        let start = self.logs.len();
        self.logs.extend(log_ratios(scores));
        self.starts.push(self.logs.len());
        start
    }

    fn refresh(&mut self, eta: f64, eps: f64) {
        if self.eta == Some(eta) {
            return;
        }
        self.out.resize(self.logs.len(), 0.0);
        for w in self.starts.windows(2) {
            gate_log_ratios(&self.logs[w[0]..w[1]], eta, eps, &mut self.out[w[0]..w[1]]);
        }
        self.eta = Some(eta);
    }
}

/// Weight computation compiled for a fixed batch of rows. Scores are turned
/// into log ratios once; evaluating a new exponent vector only re-gates the
/// tables whose exponent changed. Member values are never recomputed.
#[derive(Debug, Clone)]
pub struct WeightPlan {
    members: Vec<MemberId>,
    lead_of_row: Vec<u32>,
    /// `rows * members` values; NaN where unavailable.
    values: Vec<f64>,
    /// `rows * members * 6` offsets into the gate tables.
    slots: Vec<u32>,
    tables: [GateTable; 6],
    epsilon: f64,
}

impl WeightPlan {
    pub fn compile(state: &WeightState, rows: &[RowInputs]) -> Result<Self> {
        let members = state.members();
        let j_count = members.len();
        let psi_count = state.weather_count();
        if psi_count > 64 {
            return Err(CsgeError::domain("at most 64 weather models are supported"));
        }
        let mut tables: [GateTable; 6] = std::array::from_fn(|_| GateTable::new());
        let rmse = state.global_rmse();
        let ratios = &state.lead_profile().ratios;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

        let global_power: Vec<usize> = rmse
            .iter()
            .map(|r| tables[Coord::GlobalPower.index()].push(r))
            .collect();
        let mut lead_power: HashMap<(usize, usize), usize> = HashMap::new();
        let mut weather_cache: HashMap<(Coord, u64, usize), usize> = HashMap::new();

        let mut values = Vec::with_capacity(rows.len() * j_count);
        let mut slots = Vec::with_capacity(rows.len() * j_count * 6);
        let mut lead_of_row = Vec::with_capacity(rows.len());
        for (n, row) in rows.iter().enumerate() {
            if row.values.len() != j_count || row.local_q.len() != psi_count {
                return Err(CsgeError::domain(format!(
                    "row {n} does not match the member layout"
                )));
            }
            let k = state.grid().index(row.lead).ok_or_else(|| {
                CsgeError::domain(format!("row {n}: lead {} outside grid", row.lead))
            })?;
            let mut mask = 0u64;
            for (psi, q) in row.local_q.iter().enumerate() {
                if let Some(q) = q {
                    if q.len() != state.power_counts()[psi] {
                        return Err(CsgeError::domain(format!(
                            "row {n}: local quality of weather model {} has wrong length",
                            psi + 1
                        )));
                    }
                    mask |= 1 << psi;
                }
            }
            let avail: Vec<usize> = (0..psi_count).filter(|p| mask >> p & 1 == 1).collect();
            let usable = members
                .iter()
                .zip(&row.values)
                .any(|(m, v)| v.is_some() && mask >> m.weather & 1 == 1);
            if !usable {
                return Err(CsgeError::NoMembersAvailable);
            }

            let mut weather_slot = |coord: Coord, key: usize, scores: &dyn Fn() -> Vec<f64>| {
                *weather_cache
                    .entry((coord, mask, key))
                    .or_insert_with(|| tables[coord.index()].push(&scores()))
            };
            let wg = weather_slot(Coord::GlobalWeather, 0, &|| {
                avail.iter().map(|&p| mean(&rmse[p])).collect()
            });
            let wk = weather_slot(Coord::LeadtimeWeather, k, &|| {
                avail
                    .iter()
                    .map(|&p| ratios[p].iter().map(|r| r[k]).sum::<f64>() / ratios[p].len() as f64)
                    .collect()
            });
            let wl = tables[Coord::LocalWeather.index()].push(
                &avail
                    .iter()
                    .map(|&p| mean(row.local_q[p].as_ref().unwrap()))
                    .collect::<Vec<_>>(),
            );
            let mut local_power = vec![0usize; psi_count];
            for &p in &avail {
                local_power[p] =
                    tables[Coord::LocalPower.index()].push(row.local_q[p].as_ref().unwrap());
            }

            for (m, v) in members.iter().zip(&row.values) {
                let psi = m.weather;
                if mask >> psi & 1 == 0 {
                    values.push(f64::NAN);
                    slots.extend([NO_GATE; 6]);
                    continue;
                }
                values.push(v.unwrap_or(f64::NAN));
                let kp = *lead_power.entry((psi, k)).or_insert_with(|| {
                    let r: Vec<f64> = ratios[psi].iter().map(|r| r[k]).collect();
                    tables[Coord::LeadtimePower.index()].push(&r)
                });
                let pos = avail.iter().position(|p| *p == psi).unwrap();
                let phi = m.power;
                slots.extend([
                    (global_power[psi] + phi) as u32,
                    (local_power[psi] + phi) as u32,
                    (kp + phi) as u32,
                    (wg + pos) as u32,
                    (wl + pos) as u32,
                    (wk + pos) as u32,
                ]);
            }
            lead_of_row.push(row.lead);
        }
        if tables.iter().any(|t| t.logs.len() >= NO_GATE as usize) {
            return Err(CsgeError::domain("batch too large for one weight plan"));
        }
        Ok(WeightPlan {
            members,
            lead_of_row,
            values,
            slots,
            tables,
            epsilon: state.epsilon(),
        })
    }

    pub fn len(&self) -> usize {
        self.lead_of_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lead_of_row.is_empty()
    }

    pub fn members(&self) -> &[MemberId] {
        &self.members
    }

    pub fn lead(&self, row: usize) -> u32 {
        self.lead_of_row[row]
    }

    /// Member value of `row`, `None` when unavailable.
    pub fn value(&self, row: usize, member: usize) -> Option<f64> {
        let v = self.values[row * self.members.len() + member];
        (!v.is_nan()).then_some(v)
    }

    /// Re-gate every table whose exponent differs from the last call.
    pub fn refresh(&mut self, eta: &EtaVector) -> Result<()> {
        eta.validate()?;
        let eta = eta.to_array();
        for (t, e) in self.tables.iter_mut().zip(eta) {
            t.refresh(e, self.epsilon);
        }
        Ok(())
    }

    fn factors(&self, row: usize, member: usize) -> [f64; 6] {
        let base = (row * self.members.len() + member) * 6;
        std::array::from_fn(|c| {
            let s = self.slots[base + c];
            if s == NO_GATE {
                0.0
            } else {
                self.tables[c].out[s as usize]
            }
        })
    }

    fn raw_into(&self, row: usize, raw: &mut [f64]) {
        for (j, r) in raw.iter_mut().enumerate() {
            *r = self.factors(row, j).iter().product();
        }
    }

    fn row_value(&self, row: usize, raw: &mut [f64], weights: &mut [f64]) -> f64 {
        let j_count = self.members.len();
        let vals = &self.values[row * j_count..(row + 1) * j_count];
        self.raw_into(row, raw);
        normalize_into(raw, |j| !vals[j].is_nan(), weights)
            .expect("rows are checked at compile time");
        vals.iter()
            .zip(weights.iter())
            .filter(|(v, _)| !v.is_nan())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Ensemble value of every row under the current gates.
    pub fn values(&self) -> Vec<f64> {
        let j = self.members.len();
        let (mut raw, mut w) = (vec![0.0; j], vec![0.0; j]);
        (0..self.len())
            .map(|n| self.row_value(n, &mut raw, &mut w))
            .collect()
    }

    /// Mean squared error against `observations` under exponents `eta`.
    pub fn mse(&mut self, eta: &EtaVector, observations: &[f64]) -> Result<f64> {
        if observations.len() != self.len() {
            return Err(CsgeError::domain("observations do not match the plan rows"));
        }
        if observations.is_empty() {
            return Err(CsgeError::InsufficientData("no rows to score".into()));
        }
        self.refresh(eta)?;
        let j = self.members.len();
        let (mut raw, mut w) = (vec![0.0; j], vec![0.0; j]);
        let mut s = 0.0;
        for (n, o) in observations.iter().enumerate() {
            let e = self.row_value(n, &mut raw, &mut w) - o;
            s += e * e;
        }
        Ok(s / observations.len() as f64)
    }

    /// Full breakdown of one row under the current gates.
    pub fn detail(&self, row: usize) -> Prediction {
        let j = self.members.len();
        let (mut raw, mut weights) = (vec![0.0; j], vec![0.0; j]);
        let value = self.row_value(row, &mut raw, &mut weights);
        let members = (0..j)
            .map(|m| MemberDiagnostics {
                member: self.members[m],
                value: self.value(row, m),
                factors: self.factors(row, m),
                raw: raw[m],
                weight: weights[m],
            })
            .collect();
        Prediction {
            lead: self.lead_of_row[row],
            value,
            weights,
            members,
            degraded_locality: false,
        }
    }
}
