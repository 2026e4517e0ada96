//! Shared domain types: lead grids, member identities, forecast records and
//! the alignment of per-weather-model rows with observations.

use serde::{Deserialize, Serialize};

use crate::error::{CsgeError, Result};

/// Lead steps covered by a forecast product. A lead `k` refers to the target
/// time `origin + k * delta_secs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadGrid {
    pub k_min: u32,
    pub k_max: u32,
    pub delta_secs: i64,
}

impl LeadGrid {
    pub fn new(k_min: u32, k_max: u32, delta_secs: i64) -> Result<Self> {
        if k_max < k_min {
            return Err(CsgeError::domain(format!(
                "lead grid k_max {k_max} < k_min {k_min}"
            )));
        }
        if delta_secs <= 0 {
            return Err(CsgeError::domain("lead grid step must be positive"));
        }
        Ok(LeadGrid {
            k_min,
            k_max,
            delta_secs,
        })
    }

    /// Hourly grid.
    pub fn hourly(k_min: u32, k_max: u32) -> Result<Self> {
        Self::new(k_min, k_max, 3600)
    }

    pub fn len(&self) -> usize {
        (self.k_max - self.k_min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, lead: u32) -> bool {
        lead >= self.k_min && lead <= self.k_max
    }

    /// Position of `lead` in per-lead arrays.
    pub fn index(&self, lead: u32) -> Option<usize> {
        self.contains(lead).then(|| (lead - self.k_min) as usize)
    }

    pub fn leads(&self) -> impl Iterator<Item = u32> {
        self.k_min..=self.k_max
    }

    pub fn target_time(&self, origin: i64, lead: u32) -> i64 {
        origin + lead as i64 * self.delta_secs
    }
}

/// Identity of one ensemble member: a (weather model, power model) pair.
///
/// Indices are zero-based positions; [`flat_index`] yields the one-based
/// ensemble position `j = weather * phi_count + power + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemberId {
    pub weather: usize,
    pub power: usize,
}

impl MemberId {
    pub fn new(weather: usize, power: usize) -> Self {
        MemberId { weather, power }
    }

    /// Build from one-based (psi, phi) labels as shown to users.
    pub fn from_labels(psi: usize, phi: usize) -> Result<Self> {
        if psi == 0 || phi == 0 {
            return Err(CsgeError::domain(format!(
                "member labels are one-based, got {psi}:{phi}"
            )));
        }
        Ok(MemberId::new(psi - 1, phi - 1))
    }

    /// Inverse of [`flat_index`].
    pub fn from_flat(j: usize, phi_count: usize) -> Result<Self> {
        if j == 0 || phi_count == 0 {
            return Err(CsgeError::domain(format!(
                "flat index {j} with phi count {phi_count}"
            )));
        }
        Ok(MemberId::new((j - 1) / phi_count, (j - 1) % phi_count))
    }
}

impl std::fmt::Display for MemberId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.weather + 1, self.power + 1)
    }
}

/// One-based flat ensemble index of a member on a rectangular Ψ×Φ grid.
pub fn flat_index(id: MemberId, phi_count: usize) -> Result<usize> {
    if id.power >= phi_count {
        return Err(CsgeError::domain(format!(
            "power model {} out of range 1..={phi_count}",
            id.power + 1
        )));
    }
    Ok(id.weather * phi_count + id.power + 1)
}

/// One (origin, lead, weather model) row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Forecast origin, UTC epoch seconds.
    pub origin: i64,
    pub lead: u32,
    /// Steps by which this row's weather run predates `origin` (time-lagged rows).
    pub origin_lag: u32,
    pub weather_model: usize,
    pub features: Vec<f64>,
    pub observation: Option<f64>,
    pub recent_power: Option<f64>,
}

impl ForecastRecord {
    fn key(&self) -> (i64, u32, usize, u32) {
        (self.origin, self.lead, self.weather_model, self.origin_lag)
    }
}

/// Immutable, sorted collection of forecast records for one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    records: Vec<ForecastRecord>,
    grid: LeadGrid,
    weather_labels: Vec<String>,
    feature_dims: Vec<usize>,
}

impl DataSet {
    /// Validates and sorts `records` by (origin, lead, weather model, lag).
    pub fn new(
        mut records: Vec<ForecastRecord>,
        grid: LeadGrid,
        weather_labels: Vec<String>,
        feature_dims: Vec<usize>,
    ) -> Result<Self> {
        if weather_labels.is_empty() {
            return Err(CsgeError::domain(
                "data set needs at least one weather model",
            ));
        }
        if feature_dims.len() != weather_labels.len() {
            return Err(CsgeError::domain(format!(
                "{} weather labels but {} feature dimensions",
                weather_labels.len(),
                feature_dims.len()
            )));
        }
        for r in &records {
            let dims = *feature_dims.get(r.weather_model).ok_or_else(|| {
                CsgeError::domain(format!(
                    "record weather model {} unknown",
                    r.weather_model + 1
                ))
            })?;
            if r.features.len() != dims {
                return Err(CsgeError::domain(format!(
                    "record at origin {} lead {} has {} features, expected {dims}",
                    r.origin,
                    r.lead,
                    r.features.len()
                )));
            }
            if !grid.contains(r.lead) {
                return Err(CsgeError::domain(format!(
                    "lead {} outside grid {}..={}",
                    r.lead, grid.k_min, grid.k_max
                )));
            }
        }
        records.sort_by_key(|r| r.key());
        if let Some(w) = records.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(CsgeError::domain(format!(
                "duplicate record for origin {} lead {} weather model {}",
                w[0].origin,
                w[0].lead,
                w[0].weather_model + 1
            )));
        }
        Ok(DataSet {
            records,
            grid,
            weather_labels,
            feature_dims,
        })
    }

    pub fn records(&self) -> &[ForecastRecord] {
        &self.records
    }

    pub fn grid(&self) -> LeadGrid {
        self.grid
    }

    pub fn weather_count(&self) -> usize {
        self.weather_labels.len()
    }

    pub fn weather_labels(&self) -> &[String] {
        &self.weather_labels
    }

    pub fn feature_dims(&self) -> &[usize] {
        &self.feature_dims
    }

    /// Distinct origins in ascending order.
    pub fn origins(&self) -> Vec<i64> {
        let mut out: Vec<i64> = self.records.iter().map(|r| r.origin).collect();
        out.dedup();
        out
    }

    /// Keep only the listed weather models, renumbered in the given order.
    pub fn select_weather(&self, keep: &[usize]) -> Result<DataSet> {
        let mut map = vec![None; self.weather_count()];
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.weather_count() {
                return Err(CsgeError::domain(format!(
                    "weather model {} unknown",
                    old + 1
                )));
            }
            map[old] = Some(new);
        }
        let records = self
            .records
            .iter()
            .filter_map(|r| {
                map[r.weather_model].map(|w| ForecastRecord {
                    weather_model: w,
                    ..r.clone()
                })
            })
            .collect();
        DataSet::new(
            records,
            self.grid,
            keep.iter()
                .map(|&i| self.weather_labels[i].clone())
                .collect(),
            keep.iter().map(|&i| self.feature_dims[i]).collect(),
        )
    }
}

/// All weather models' inputs for one (origin, lead) with its observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRow {
    pub origin: i64,
    pub lead: u32,
    pub observation: f64,
    pub recent_power: Option<f64>,
    /// One entry per weather model; `None` when that model delivered nothing.
    pub features: Vec<Option<Vec<f64>>>,
}

impl AlignedRow {
    pub fn available_weather(&self) -> impl Iterator<Item = usize> + '_ {
        self.features
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.as_ref().map(|_| i))
    }
}

/// Aligned rows at one lead. Rows without an observation are skipped.
pub fn align(data: &DataSet, lead: u32) -> Result<Vec<AlignedRow>> {
    if !data.grid.contains(lead) {
        return Err(CsgeError::domain(format!(
            "lead {lead} outside grid {}..={}",
            data.grid.k_min, data.grid.k_max
        )));
    }
    Ok(group_rows(data, |r| r.lead == lead, false))
}

/// Aligned rows over every lead, ordered by (origin, lead).
pub fn align_all(data: &DataSet) -> Vec<AlignedRow> {
    group_rows(data, |_| true, false)
}

/// Like [`align_all`] but keeps rows without an observation, whose
/// `observation` is then NaN.
pub fn align_for_prediction(data: &DataSet) -> Vec<AlignedRow> {
    group_rows(data, |_| true, true)
}

fn group_rows(
    data: &DataSet,
    keep: impl Fn(&ForecastRecord) -> bool,
    unobserved: bool,
) -> Vec<AlignedRow> {
    let mut out = Vec::new();
    let recs = &data.records;
    let mut i = 0;
    while i < recs.len() {
        let (origin, lead) = (recs[i].origin, recs[i].lead);
        let mut end = i;
        while end < recs.len() && recs[end].origin == origin && recs[end].lead == lead {
            end += 1;
        }
        let group = &recs[i..end];
        i = end;
        if !keep(&group[0]) {
            continue;
        }
        let observation = match group.iter().find_map(|r| r.observation) {
            Some(o) => o,
            None if unobserved => f64::NAN,
            None => continue,
        };
        let mut features = vec![None; data.weather_count()];
        // records are sorted by lag within a weather model, so the first one
        // seen is the most recent run
        for r in group {
            if features[r.weather_model].is_none() {
                features[r.weather_model] = Some(r.features.clone());
            }
        }
        out.push(AlignedRow {
            origin,
            lead,
            observation,
            recent_power: group.iter().find_map(|r| r.recent_power),
            features,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(origin: i64, lead: u32, psi: usize, obs: Option<f64>) -> ForecastRecord {
        ForecastRecord {
            origin,
            lead,
            origin_lag: 0,
            weather_model: psi,
            features: vec![0.5, 0.25],
            observation: obs,
            recent_power: Some(0.1),
        }
    }

    fn two_model_set(records: Vec<ForecastRecord>) -> DataSet {
        DataSet::new(
            records,
            LeadGrid::hourly(1, 6).unwrap(),
            vec!["a".into(), "b".into()],
            vec![2, 2],
        )
        .unwrap()
    }

    #[test]
    fn flat_index_examples() {
        assert_eq!(
            flat_index(MemberId::from_labels(1, 1).unwrap(), 2).unwrap(),
            1
        );
        assert_eq!(
            flat_index(MemberId::from_labels(2, 1).unwrap(), 2).unwrap(),
            3
        );
        assert_eq!(
            flat_index(MemberId::from_labels(3, 2).unwrap(), 2).unwrap(),
            6
        );
    }

    #[test]
    fn flat_index_rejects_out_of_range() {
        assert!(flat_index(MemberId::new(0, 2), 2).is_err());
        assert!(MemberId::from_labels(0, 1).is_err());
        assert!(MemberId::from_flat(0, 2).is_err());
    }

    #[test]
    fn flat_index_round_trips() {
        for phi in 1..5 {
            for psi in 0..4 {
                for p in 0..phi {
                    let id = MemberId::new(psi, p);
                    let j = flat_index(id, phi).unwrap();
                    assert_eq!(MemberId::from_flat(j, phi).unwrap(), id);
                }
            }
        }
    }

    #[test]
    fn lead_grid_counts() {
        let g = LeadGrid::hourly(24, 48).unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g.index(24), Some(0));
        assert_eq!(g.index(49), None);
        assert!(LeadGrid::hourly(5, 4).is_err());
    }

    #[test]
    fn align_counts_complete_origins() {
        let recs = (0..10)
            .flat_map(|o| {
                [
                    rec(o * 86400, 5, 0, Some(0.3)),
                    rec(o * 86400, 5, 1, Some(0.3)),
                ]
            })
            .collect();
        let ds = two_model_set(recs);
        let rows = align(&ds, 5).unwrap();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.features.iter().all(|f| f.is_some())));
    }

    #[test]
    fn align_flags_missing_weather_model() {
        let mut recs: Vec<_> = (0..3)
            .flat_map(|o| [rec(o, 5, 0, Some(0.3)), rec(o, 5, 1, Some(0.3))])
            .collect();
        recs.retain(|r| !(r.origin == 1 && r.weather_model == 1));
        let rows = align(&two_model_set(recs), 5).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].features[1].is_none());
        assert_eq!(rows[1].available_weather().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn align_skips_missing_observations() {
        let recs = (0..4).map(|o| rec(o, 2, 0, None)).collect();
        assert!(align(&two_model_set(recs), 2).unwrap().is_empty());
    }

    #[test]
    fn align_rejects_lead_outside_grid() {
        let ds = two_model_set(vec![rec(0, 2, 0, Some(0.1))]);
        assert!(align(&ds, 7).is_err());
    }

    #[test]
    fn duplicate_keys_rejected() {
        let recs = vec![rec(0, 2, 0, Some(0.1)), rec(0, 2, 0, Some(0.2))];
        assert!(DataSet::new(
            recs,
            LeadGrid::hourly(1, 6).unwrap(),
            vec!["a".into(), "b".into()],
            vec![2, 2]
        )
        .is_err());
    }

    #[test]
    fn align_is_stable_under_permutation() {
        let mut recs: Vec<_> = (0..6)
            .flat_map(|o| {
                (1..=3).flat_map(move |k| {
                    [
                        rec(o, k, 0, Some(o as f64 / 10.0)),
                        rec(o, k, 1, Some(o as f64 / 10.0)),
                    ]
                })
            })
            .collect();
        let a = align_all(&two_model_set(recs.clone()));
        recs.reverse();
        recs.swap(0, 7);
        let b = align_all(&two_model_set(recs));
        assert_eq!(a, b);
    }
}
