//! Comparison experiments on one data set: the CSGE against a best single
//! member and static multi-model averages, all derived from one prepared
//! training so base models and neighbor lookups are shared.

use serde::{Deserialize, Serialize};

use crate::data::{align_all, AlignedRow, DataSet, MemberId};
use crate::ensemble::{predict_rows, Prediction};
use crate::error::{CsgeError, Result};
use crate::forecasters::ForecasterKind;
use crate::metrics;
use crate::training::{
    prepare_prediction_rows, MemberKinds, MemberSelection, PinnedEta, PreparedRows,
    PreparedTraining, SplitPlan, TrainConfig, TrainedModel,
};
use crate::weighting::{Aspect, Coord};

/// Exponent of the global weather gate in the fixed multi-model average.
pub const FIXED_WEATHER_ETA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Best single member by out-of-fold RMSE.
    #[serde(rename = "No-Ens")]
    NoEnsemble,
    /// Best power model on every weather model, equal weights.
    #[serde(rename = "MME-Eq")]
    MmeEqual,
    /// Best power model on every weather model, weather models weighted by global quality.
    #[serde(rename = "MME-Fix")]
    MmeFixed,
    /// Per weather model its best power model, all exponents trained.
    #[serde(rename = "CSGE-S")]
    CsgeSingle,
    /// Every member, all exponents trained.
    #[serde(rename = "CSGE-M")]
    CsgeMulti,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NoEnsemble,
        Method::MmeEqual,
        Method::MmeFixed,
        Method::CsgeSingle,
        Method::CsgeMulti,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoEnsemble => "No-Ens",
            Method::MmeEqual => "MME-Eq",
            Method::MmeFixed => "MME-Fix",
            Method::CsgeSingle => "CSGE-S",
            Method::CsgeMulti => "CSGE-M",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = CsgeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| CsgeError::Config(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Pins that disable every aspect not listed (exponent 0 means uniform).
pub fn ablation_pins(enabled: &[Aspect]) -> PinnedEta {
    let mut p = PinnedEta::default();
    for c in Coord::ALL {
        if !enabled.contains(&c.aspect()) {
            p.set(c, Some(0.0));
        }
    }
    p
}

/// A prepared training plus the test rows under the final base models.
pub struct Experiment {
    pub data: DataSet,
    pub config: TrainConfig,
    pub prepared: PreparedTraining,
    pub test: PreparedRows,
    test_rows: Vec<AlignedRow>,
}

/// A fitted variant and its test-set predictions.
pub struct VariantResult {
    pub name: String,
    pub selection: MemberSelection,
    pub model: TrainedModel,
    pub predictions: Vec<Prediction>,
    pub observations: Vec<f64>,
    /// Index into [`Experiment::test_rows`] of each prediction.
    pub rows: Vec<usize>,
}

impl VariantResult {
    pub fn values(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.value).collect()
    }

    pub fn rmse(&self) -> Result<f64> {
        metrics::rmse(&self.values(), &self.observations)
    }

    pub fn r_squared(&self) -> Result<Option<f64>> {
        metrics::r_squared(&self.values(), &self.observations)
    }

    /// RMSE over predictions whose lead satisfies `keep`.
    pub fn rmse_where(&self, keep: impl Fn(u32) -> bool) -> Result<f64> {
        let (f, o): (Vec<f64>, Vec<f64>) = self
            .predictions
            .iter()
            .zip(&self.observations)
            .filter(|(p, _)| keep(p.lead))
            .map(|(p, o)| (p.value, *o))
            .unzip();
        metrics::rmse(&f, &o)
    }
}

impl Experiment {
    pub fn new(
        data: DataSet,
        kinds: &MemberKinds,
        config: TrainConfig,
        plan: &SplitPlan,
    ) -> Result<Self> {
        let prepared = PreparedTraining::prepare(&data, kinds, &config, plan)?;
        let test_set: std::collections::HashSet<i64> =
            prepared.split.test.iter().copied().collect();
        let test_rows: Vec<AlignedRow> = align_all(&data)
            .into_iter()
            .filter(|r| test_set.contains(&r.origin))
            .collect();
        let refs: Vec<&AlignedRow> = test_rows.iter().collect();
        let test = prepare_prediction_rows(&prepared.state, &prepared.forecasters, &refs)?;
        Ok(Experiment {
            data,
            config,
            prepared,
            test,
            test_rows,
        })
    }

    pub fn test_rows(&self) -> &[AlignedRow] {
        &self.test_rows
    }

    pub fn kinds(&self) -> &MemberKinds {
        &self.prepared.kinds
    }

    /// Member with the lowest out-of-fold RMSE.
    pub fn best_single_member(&self) -> MemberId {
        let mut best = (MemberId::new(0, 0), f64::INFINITY);
        for (psi, row) in self.prepared.oof_rmse.iter().enumerate() {
            for (phi, r) in row.iter().enumerate() {
                if *r < best.1 {
                    best = (MemberId::new(psi, phi), *r);
                }
            }
        }
        best.0
    }

    /// Power-model kind with the lowest mean out-of-fold RMSE over the
    /// weather models that run it.
    pub fn best_kind(&self) -> ForecasterKind {
        let mut scores: Vec<(ForecasterKind, f64, usize)> = Vec::new();
        for (kinds, rmse) in self.prepared.kinds.iter().zip(&self.prepared.oof_rmse) {
            for (k, r) in kinds.iter().zip(rmse) {
                match scores.iter_mut().find(|s| s.0 == *k) {
                    Some(s) => {
                        s.1 += r;
                        s.2 += 1;
                    }
                    None => scores.push((*k, *r, 1)),
                }
            }
        }
        scores
            .into_iter()
            .min_by(|a, b| (a.1 / a.2 as f64).total_cmp(&(b.1 / b.2 as f64)))
            .map(|s| s.0)
            .expect("at least one member")
    }

    /// Every weather model running `kind`, restricted to that power model.
    pub fn kind_selection(&self, kind: ForecasterKind) -> Result<MemberSelection> {
        let mut sel = MemberSelection {
            weather: Vec::new(),
            power: Vec::new(),
        };
        for (psi, kinds) in self.prepared.kinds.iter().enumerate() {
            if let Some(phi) = kinds.iter().position(|k| *k == kind) {
                sel.weather.push(psi);
                sel.power.push(vec![phi]);
            }
        }
        if sel.weather.is_empty() {
            return Err(CsgeError::Config(format!("no weather model runs {kind}")));
        }
        Ok(sel)
    }

    /// Per weather model the power model with the lowest out-of-fold RMSE.
    pub fn best_per_weather(&self) -> MemberSelection {
        let power = self
            .prepared
            .oof_rmse
            .iter()
            .map(|r| {
                let best = (0..r.len()).min_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
                vec![best]
            })
            .collect();
        MemberSelection {
            weather: (0..self.prepared.oof_rmse.len()).collect(),
            power,
        }
    }

    pub fn all_members(&self) -> MemberSelection {
        MemberSelection::all(&self.prepared.power_counts())
    }

    /// Fit a member subset with optional extra pins and predict the test set.
    pub fn run(
        &self,
        name: &str,
        selection: &MemberSelection,
        pins: Option<PinnedEta>,
    ) -> Result<VariantResult> {
        let mut config = self.config.clone();
        if let Some(p) = pins {
            for c in Coord::ALL {
                if let Some(v) = p.get(c) {
                    config.pinned.set(c, Some(v));
                }
            }
        }
        let model = self.prepared.fit(selection, &config)?;
        self.evaluate(name, selection, model)
    }

    /// Test predictions of an already fitted variant.
    pub fn evaluate(
        &self,
        name: &str,
        selection: &MemberSelection,
        model: TrainedModel,
    ) -> Result<VariantResult> {
        let test = self.test.restrict(&self.prepared.power_counts(), selection);
        let predictions = predict_rows(&model.state, &test.rows)?;
        Ok(VariantResult {
            name: name.to_string(),
            selection: selection.clone(),
            model,
            predictions,
            observations: test.observations,
            rows: test.source,
        })
    }

    pub fn run_method(&self, method: Method) -> Result<VariantResult> {
        let name = method.name();
        match method {
            Method::NoEnsemble => {
                let m = self.best_single_member();
                let sel = MemberSelection {
                    weather: vec![m.weather],
                    power: vec![vec![m.power]],
                };
                self.run(name, &sel, Some(PinnedEta::all(0.0)))
            }
            Method::MmeEqual => self.run(
                name,
                &self.kind_selection(self.best_kind())?,
                Some(PinnedEta::all(0.0)),
            ),
            Method::MmeFixed => {
                let mut pins = PinnedEta::all(0.0);
                pins.global_weather = Some(FIXED_WEATHER_ETA);
                self.run(name, &self.kind_selection(self.best_kind())?, Some(pins))
            }
            Method::CsgeSingle => self.run(name, &self.best_per_weather(), None),
            Method::CsgeMulti => self.run(name, &self.all_members(), None),
        }
    }

    /// Mean final weight of the members of `kind` per lead over the test set.
    pub fn kind_weight_by_lead(
        result: &VariantResult,
        kinds: &MemberKinds,
        kind: ForecasterKind,
    ) -> Vec<(u32, f64)> {
        let sel_kinds = result.selection.restrict_kinds(kinds);
        let flat: Vec<ForecasterKind> = sel_kinds.into_iter().flatten().collect();
        let mut acc: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
        for p in &result.predictions {
            let w: f64 = p
                .weights
                .iter()
                .zip(&flat)
                .filter(|(_, k)| **k == kind)
                .map(|(w, _)| w)
                .sum();
            let e = acc.entry(p.lead).or_default();
            e.0 += w;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect()
    }
}

/// The same power-model kinds under every weather model.
pub fn default_kinds(weather_count: usize, kinds: &[ForecasterKind]) -> MemberKinds {
    vec![kinds.to_vec(); weather_count]
}
