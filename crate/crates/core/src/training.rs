//! Training: origin-disjoint splitting, base-model fitting per fold, error
//! ledgers and historic stores from out-of-sample predictions, and a greedy
//! coordinate-wise simplex search for the gate exponents.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{align_all, AlignedRow, DataSet, LeadGrid, MemberId};
use crate::ensemble::{Query, RowInputs, WeightPlan};
use crate::error::{CsgeError, Result};
use crate::forecasters::{fit, Forecaster, ForecasterKind, ForecasterState, Standardizer};
use crate::metrics;
use crate::weighting::{
    Coord, ErrorLedger, EtaVector, HistoricStore, WeightState, DEFAULT_NEIGHBOR_COUNT,
    DEFAULT_SMOOTHING_WINDOW,
};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_ETA_MAX: f64 = 50.0;
pub const DEFAULT_ZETA_GRID: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 1.0];

/// How origins are divided into test data and cross-validation folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub test_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            test_fraction: 0.2,
            folds: DEFAULT_FOLDS,
            seed: 0,
        }
    }
}

/// Origins playing each role within one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRoles {
    pub parameter: Vec<i64>,
    pub optimization: Vec<i64>,
    pub validation: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub test: Vec<i64>,
    pub train: Vec<i64>,
    pub folds: Vec<FoldRoles>,
}

/// Shuffle the distinct origins, hold out the test share, and cut the rest
/// into `folds` chunks. Fold `f` validates on chunk `f`, optimizes on chunk
/// `f + 1` and fits base models on the remaining chunks.
pub fn split(origins: &[i64], plan: &SplitPlan) -> Result<Split> {
    if !(plan.test_fraction > 0.0 && plan.test_fraction < 1.0) {
        return Err(CsgeError::Config(format!(
            "test fraction {} must lie in (0, 1)",
            plan.test_fraction
        )));
    }
    if plan.folds < 3 {
        return Err(CsgeError::Config(format!(
            "need at least 3 folds, got {}",
            plan.folds
        )));
    }
    let mut shuffled: Vec<i64> = origins.to_vec();
    shuffled.sort_unstable();
    shuffled.dedup();
    let n = shuffled.len();
    let n_test = (plan.test_fraction * n as f64).round() as usize;
    let n_train = n - n_test.min(n);
    if n_test == 0 || n_train < plan.folds {
        return Err(CsgeError::InsufficientData(format!(
            "{n} origins give {n_test} test and {n_train} training origins; need at least 1 test and {} training origins",
            plan.folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    shuffled.shuffle(&mut rng);
    let (test, train) = shuffled.split_at(n_test);
    let chunks: Vec<Vec<i64>> = (0..plan.folds)
        .map(|c| {
            let lo = c * n_train / plan.folds;
            let hi = (c + 1) * n_train / plan.folds;
            let mut v = train[lo..hi].to_vec();
            v.sort_unstable();
            v
        })
        .collect();
    let folds = (0..plan.folds)
        .map(|f| {
            let opt = (f + 1) % plan.folds;
            FoldRoles {
                parameter: (0..plan.folds)
                    .filter(|c| *c != f && *c != opt)
                    .flat_map(|c| chunks[c].iter().copied())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect(),
                optimization: chunks[opt].clone(),
                validation: chunks[f].clone(),
            }
        })
        .collect();
    let mut test = test.to_vec();
    test.sort_unstable();
    let mut train = train.to_vec();
    train.sort_unstable();
    Ok(Split { test, train, folds })
}

/// Exponents held fixed during training; the rest are optimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnedEta {
    pub global_power: Option<f64>,
    pub local_power: Option<f64>,
    pub leadtime_power: Option<f64>,
    pub global_weather: Option<f64>,
    pub local_weather: Option<f64>,
    pub leadtime_weather: Option<f64>,
}

impl PinnedEta {
    pub fn get(&self, c: Coord) -> Option<f64> {
        match c {
            Coord::GlobalPower => self.global_power,
            Coord::LocalPower => self.local_power,
            Coord::LeadtimePower => self.leadtime_power,
            Coord::GlobalWeather => self.global_weather,
            Coord::LocalWeather => self.local_weather,
            Coord::LeadtimeWeather => self.leadtime_weather,
        }
    }

    pub fn set(&mut self, c: Coord, v: Option<f64>) {
        let slot = match c {
            Coord::GlobalPower => &mut self.global_power,
            Coord::LocalPower => &mut self.local_power,
            Coord::LeadtimePower => &mut self.leadtime_power,
            Coord::GlobalWeather => &mut self.global_weather,
            Coord::LocalWeather => &mut self.local_weather,
            Coord::LeadtimeWeather => &mut self.leadtime_weather,
        };
        *slot = v;
    }

    pub fn all(v: f64) -> Self {
        let mut p = PinnedEta::default();
        for c in Coord::ALL {
            p.set(c, Some(v));
        }
        p
    }

    /// Apply the pins to `eta`.
    pub fn apply(&self, mut eta: EtaVector) -> EtaVector {
        for c in Coord::ALL {
            if let Some(v) = self.get(c) {
                eta.set(c, v);
            }
        }
        eta
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Fixed regularization weight; when absent it is chosen from `zeta_grid`.
    pub zeta: Option<f64>,
    pub zeta_grid: Vec<f64>,
    pub eta_init: EtaVector,
    pub eta_max: f64,
    pub function_tolerance: f64,
    pub parameter_tolerance: f64,
    pub max_iterations: usize,
    pub stage_order: Vec<Coord>,
    pub pinned: PinnedEta,
    /// After the greedy stages, refine all free exponents jointly.
    pub joint_refinement: bool,
    pub neighbor_count: usize,
    pub smoothing_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            zeta: None,
            zeta_grid: DEFAULT_ZETA_GRID.to_vec(),
            eta_init: EtaVector::splat(1.0),
            eta_max: DEFAULT_ETA_MAX,
            function_tolerance: 1e-6,
            parameter_tolerance: 1e-4,
            max_iterations: 200,
            stage_order: vec![
                Coord::GlobalWeather,
                Coord::GlobalPower,
                Coord::LocalWeather,
                Coord::LocalPower,
                Coord::LeadtimeWeather,
                Coord::LeadtimePower,
            ],
            pinned: PinnedEta::default(),
            joint_refinement: false,
            neighbor_count: DEFAULT_NEIGHBOR_COUNT,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsgeError::Config(m));
        if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
            return bad(format!("eta_max {} must be positive", self.eta_max));
        }
        if let Some(z) = self.zeta {
            if !(z >= 0.0 && z.is_finite()) {
                return bad(format!("zeta {z} must be nonnegative"));
            }
        } else if self.zeta_grid.is_empty()
            || self.zeta_grid.iter().any(|z| !(*z >= 0.0 && z.is_finite()))
        {
            return bad("zeta grid must hold nonnegative values".into());
        }
        self.eta_init
            .validate()
            .map_err(|e| CsgeError::Config(e.to_string()))?;
        for c in Coord::ALL {
            if let Some(v) = self.pinned.get(c) {
                if !(v >= 0.0 && v <= self.eta_max) {
                    return bad(format!("pinned {} = {v} outside [0, eta_max]", c.name()));
                }
            }
        }
        let unique: HashSet<Coord> = self.stage_order.iter().copied().collect();
        if unique.len() != self.stage_order.len() {
            return bad("stage order repeats an exponent".into());
        }
        if self.neighbor_count == 0 {
            return bad("neighbor_count must be at least 1".into());
        }
        if self.smoothing_window % 2 == 0 {
            return bad("smoothing_window must be odd".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        Ok(())
    }

    pub fn zetas(&self) -> Vec<f64> {
        match self.zeta {
            Some(z) => vec![z],
            None => self.zeta_grid.clone(),
        }
    }

    /// Stage coordinates that are not pinned.
    pub fn free_stages(&self) -> Vec<Coord> {
        self.stage_order
            .iter()
            .copied()
            .filter(|c| self.pinned.get(*c).is_none())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct SimplexOptions {
    upper: f64,
    ftol: f64,
    xtol: f64,
    max_iter: usize,
}

/// Nelder-Mead on the box `[0, upper]^n`. Candidates are reflected at zero
/// and clamped at `upper` before evaluation.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: SimplexOptions,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let project =
        |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.abs().min(opts.upper)).collect() };
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let start = project(x0.to_vec());
    let mut simplex = vec![start.clone()];
    for i in 0..n {
        let mut x = start.clone();
        let step = 0.5 * x[i].abs().max(1.0);
        x[i] = if x[i] + step <= opts.upper {
            x[i] + step
        } else {
            x[i] - step
        };
        simplex.push(project(x));
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
    };
    for _ in 0..opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let fspread = values
            .iter()
            .map(|v| (v - values[0]).abs())
            .fold(0.0, f64::max);
        let xspread = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (fspread <= opts.ftol || fspread.is_nan()) && xspread <= opts.xtol {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let xr = project(lerp(&centroid, &worst, -1.0));
        let fr = eval(&xr);
        if fr < values[0] {
            let xe = project(lerp(&centroid, &xr, 2.0));
            let fe = eval(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < values[n] {
            let xc = project(lerp(&centroid, &xr, 0.5));
            let fc = eval(&xc);
            (xc, fc, fc <= fr)
        } else {
            let xc = project(lerp(&centroid, &worst, 0.5));
            let fc = eval(&xc);
            (xc, fc, fc < values[n])
        };
        if accept {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        for i in 1..=n {
            simplex[i] = project(lerp(&simplex[0], &simplex[i], 0.5));
            values[i] = eval(&simplex[i]);
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .unwrap();
    (simplex[best].clone(), values[best])
}

/// Objective value after one greedy stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub coords: Vec<Coord>,
    pub eta: EtaVector,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub eta: EtaVector,
    pub objective: f64,
    pub initial_objective: f64,
    pub stages: Vec<StageRecord>,
    pub evaluations: usize,
}

/// Greedy staged simplex search: each stage frees one exponent, holding the
/// others at their current values, and keeps the incumbent unless the stage
/// strictly improves the objective.
pub fn optimize_eta(
    config: &TrainConfig,
    objective: &mut dyn FnMut(&EtaVector) -> f64,
) -> Result<OptimizationOutcome> {
    config.validate()?;
    let mut evaluations = 0usize;
    let mut f = |e: &EtaVector| {
        evaluations += 1;
        objective(e)
    };
    let clamp =
        |e: EtaVector| EtaVector::from_array(e.to_array().map(|v| v.abs().min(config.eta_max)));
    let mut eta = config.pinned.apply(clamp(config.eta_init));
    let mut best = f(&eta);
    if !best.is_finite() {
        return Err(CsgeError::NonFiniteObjective);
    }
    let initial_objective = best;
    let opts = SimplexOptions {
        upper: config.eta_max,
        ftol: config.function_tolerance,
        xtol: config.parameter_tolerance,
        max_iter: config.max_iterations,
    };
    let mut stages = Vec::new();
    let free = config.free_stages();
    let mut groups: Vec<Vec<Coord>> = free.iter().map(|c| vec![*c]).collect();
    if config.joint_refinement && free.len() > 1 {
        groups.push(free.clone());
    }
    for coords in groups {
        let base = eta;
        let mut stage_f = |x: &[f64]| {
            let mut e = base;
            for (c, v) in coords.iter().zip(x) {
                e.set(*c, *v);
            }
            f(&e)
        };
        let x0: Vec<f64> = coords.iter().map(|c| eta.get(*c)).collect();
        let (x, fx) = nelder_mead(&mut stage_f, &x0, opts);
        let mut candidate = base;
        for (c, v) in coords.iter().zip(&x) {
            candidate.set(*c, *v);
        }
        if fx < best {
            eta = candidate;
            best = fx;
        }
        // the lower bound is where regularization pushes; test it exactly
        let zeros = vec![0.0; coords.len()];
        if x0 != zeros {
            let mut at_zero = eta;
            for c in &coords {
                at_zero.set(*c, 0.0);
            }
            let f0 = stage_f(&zeros);
            if f0 < best {
                eta = at_zero;
                best = f0;
            }
        }
        stages.push(StageRecord {
            coords,
            eta,
            objective: best,
        });
    }
    Ok(OptimizationOutcome {
        eta,
        objective: best,
        initial_objective,
        stages,
        evaluations,
    })
}

/// Regularized training objective over precomputed member forecasts:
/// mean squared ensemble error plus `zeta` times the exponent sum.
pub struct Objective {
    plan: WeightPlan,
    observations: Vec<f64>,
    zeta: f64,
}

impl Objective {
    pub fn new(
        state: &WeightState,
        rows: &[RowInputs],
        observations: Vec<f64>,
        zeta: f64,
    ) -> Result<Self> {
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(CsgeError::domain(format!(
                "zeta {zeta} must be nonnegative"
            )));
        }
        if rows.len() != observations.len() {
            return Err(CsgeError::domain("rows and observations differ in length"));
        }
        if rows.is_empty() {
            return Err(CsgeError::InsufficientData(
                "objective needs at least one row".into(),
            ));
        }
        Ok(Objective {
            plan: WeightPlan::compile(state, rows)?,
            observations,
            zeta,
        })
    }

    /// Runs every base forecaster once per (row, member) up front.
    pub fn from_forecasters<F: Forecaster>(
        state: &WeightState,
        forecasters: &[Vec<F>],
        queries: &[Query<'_>],
        observations: Vec<f64>,
        zeta: f64,
    ) -> Result<Self> {
        let rows = queries
            .iter()
            .map(|q| crate::ensemble::row_inputs(state, forecasters, q).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Objective::new(state, &rows, observations, zeta)
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn mse(&mut self, eta: &EtaVector) -> f64 {
        self.plan
            .mse(eta, &self.observations)
            .unwrap_or(f64::INFINITY)
    }

    pub fn value(&mut self, eta: &EtaVector) -> f64 {
        self.mse(eta) + self.zeta * eta.sum()
    }
}

/// Base-model kinds per weather model: `kinds[psi][phi]`.
pub type MemberKinds = Vec<Vec<ForecasterKind>>;

/// Subset of the members of a prepared training: kept weather models and,
/// per kept model, kept power-model positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSelection {
    pub weather: Vec<usize>,
    pub power: Vec<Vec<usize>>,
}

impl MemberSelection {
    pub fn all(counts: &[usize]) -> Self {
        MemberSelection {
            weather: (0..counts.len()).collect(),
            power: counts.iter().map(|&n| (0..n).collect()).collect(),
        }
    }

    /// The same power-model positions under every listed weather model.
    pub fn uniform(weather: Vec<usize>, power: Vec<usize>) -> Self {
        MemberSelection {
            power: vec![power; weather.len()],
            weather,
        }
    }

    pub fn members(&self) -> Vec<MemberId> {
        self.weather
            .iter()
            .zip(&self.power)
            .flat_map(|(&psi, phis)| phis.iter().map(move |&phi| MemberId::new(psi, phi)))
            .collect()
    }

    /// Position of a full-layout member inside this selection.
    pub fn local(&self, m: MemberId) -> Option<MemberId> {
        let w = self.weather.iter().position(|&psi| psi == m.weather)?;
        let p = self.power[w].iter().position(|&phi| phi == m.power)?;
        Some(MemberId::new(w, p))
    }

    pub fn restrict_kinds(&self, kinds: &MemberKinds) -> MemberKinds {
        self.weather
            .iter()
            .zip(&self.power)
            .map(|(&psi, phis)| phis.iter().map(|&p| kinds[psi][p]).collect())
            .collect()
    }

    pub fn restrict_forecasters<F: Clone>(&self, f: &[Vec<F>]) -> Vec<Vec<F>> {
        self.weather
            .iter()
            .zip(&self.power)
            .map(|(&psi, phis)| phis.iter().map(|&p| f[psi][p].clone()).collect())
            .collect()
    }

    /// Restrict rows laid out for `counts`. Rows in which no selected member
    /// can deliver are removed, together with their observations.
    pub fn restrict_rows(
        &self,
        counts: &[usize],
        rows: &[RowInputs],
        observations: &[f64],
    ) -> (Vec<RowInputs>, Vec<f64>, Vec<usize>) {
        let offsets: Vec<usize> = counts
            .iter()
            .scan(0, |acc, n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        let mut out = Vec::with_capacity(rows.len());
        let mut obs = Vec::with_capacity(rows.len());
        let mut kept = Vec::with_capacity(rows.len());
        for (i, (r, o)) in rows.iter().zip(observations).enumerate() {
            let mut values = Vec::new();
            let mut local_q = Vec::new();
            let mut usable = false;
            for (&psi, phis) in self.weather.iter().zip(&self.power) {
                let q = r.local_q[psi]
                    .as_ref()
                    .map(|q| phis.iter().map(|&p| q[p]).collect::<Vec<_>>());
                for &p in phis {
                    let v = r.values[offsets[psi] + p];
                    usable |= q.is_some() && v.is_some();
                    values.push(v);
                }
                local_q.push(q);
            }
            if usable {
                out.push(RowInputs {
                    lead: r.lead,
                    values,
                    local_q,
                });
                obs.push(*o);
                kept.push(i);
            }
        }
        (out, obs, kept)
    }
}

/// Rows of one role with the member inputs already computed.
#[derive(Debug, Clone)]
pub struct PreparedRows {
    /// Position of each kept row in the rows it was prepared from.
    pub source: Vec<usize>,
    pub origins: Vec<i64>,
    pub rows: Vec<RowInputs>,
    pub observations: Vec<f64>,
}

impl PreparedRows {
    pub fn restrict(&self, counts: &[usize], sel: &MemberSelection) -> PreparedRows {
        let (rows, observations, kept) = sel.restrict_rows(counts, &self.rows, &self.observations);
        PreparedRows {
            source: kept.iter().map(|&i| self.source[i]).collect(),
            origins: kept.iter().map(|&i| self.origins[i]).collect(),
            rows,
            observations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedFold {
    /// Weight statistics from this fold's validation predictions, at `eta_init`.
    pub state: WeightState,
    pub optimization: PreparedRows,
    /// Validation rows; local quality excludes neighbors from the same origin.
    pub validation: PreparedRows,
}

/// Everything exponent search needs for the full member set: per-fold
/// states and row inputs plus the final base models and weight statistics.
#[derive(Debug, Clone)]
pub struct PreparedTraining {
    pub grid: LeadGrid,
    pub kinds: MemberKinds,
    pub split: Split,
    pub folds: Vec<PreparedFold>,
    pub forecasters: Vec<Vec<ForecasterState>>,
    /// Weight statistics from out-of-fold predictions over the whole training set.
    pub state: WeightState,
    /// Out-of-fold RMSE per member over all training rows.
    pub oof_rmse: Vec<Vec<f64>>,
}

/// Validation and optimization score of one (fold, zeta) exponent candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub fold: usize,
    pub zeta: f64,
    pub eta: EtaVector,
    pub optimization_objective: f64,
    pub stages: Vec<StageRecord>,
    pub validation_rmse: Vec<f64>,
    pub mean_validation_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub members: Vec<MemberId>,
    pub fold_sizes: Vec<[usize; 3]>,
    pub candidates: Vec<CandidateScore>,
    pub chosen: usize,
    pub eta: EtaVector,
    pub zeta: f64,
}

/// A trained ensemble: final base models and weight state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kinds: MemberKinds,
    pub forecasters: Vec<Vec<ForecasterState>>,
    pub state: WeightState,
    pub report: TrainingReport,
}

fn rows_for<'a>(rows: &'a [AlignedRow], origins: &[i64]) -> Vec<&'a AlignedRow> {
    let set: HashSet<i64> = origins.iter().copied().collect();
    rows.iter().filter(|r| set.contains(&r.origin)).collect()
}

fn fit_members(rows: &[&AlignedRow], kinds: &MemberKinds) -> Result<Vec<Vec<ForecasterState>>> {
    kinds
        .iter()
        .enumerate()
        .map(|(psi, per_psi)| {
            let (inputs, targets): (Vec<&[f64]>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| r.features[psi].as_deref().map(|x| (x, r.observation)))
                .unzip();
            per_psi
                .iter()
                .map(|k| match k {
                    ForecasterKind::Persistence => fit(*k, &[], &[]),
                    _ if inputs.is_empty() => Err(CsgeError::InsufficientData(format!(
                        "weather model {} has no parameter rows",
                        psi + 1
                    ))),
                    _ => fit(*k, &inputs, &targets),
                })
                .collect()
        })
        .collect()
}

/// `forecasts[psi][phi][row]`.
fn predict_members(
    forecasters: &[Vec<ForecasterState>],
    rows: &[&AlignedRow],
) -> Vec<Vec<Vec<Option<f64>>>> {
    forecasters
        .iter()
        .enumerate()
        .map(|(psi, per_psi)| {
            per_psi
                .iter()
                .map(|f| {
                    rows.iter()
                        .map(|r| {
                            r.features[psi]
                                .as_deref()
                                .and_then(|x| f.predict(x, r.recent_power))
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn standardizers(rows: &[&AlignedRow], dims: &[usize]) -> Vec<Standardizer> {
    dims.iter()
        .enumerate()
        .map(|(psi, &d)| {
            Standardizer::fit(rows.iter().filter_map(|r| r.features[psi].as_deref()), d)
        })
        .collect()
}

fn build_stores(
    rows: &[&AlignedRow],
    forecasts: &[Vec<Vec<Option<f64>>>],
    standardizers: &[Standardizer],
    neighbor_count: usize,
) -> Result<Vec<HistoricStore>> {
    forecasts
        .iter()
        .enumerate()
        .map(|(psi, per_psi)| {
            let mut feats: Vec<&[f64]> = Vec::new();
            let mut errs = vec![Vec::new(); per_psi.len()];
            let mut origins = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let Some(x) = r.features[psi].as_deref() else {
                    continue;
                };
                let vals: Option<Vec<f64>> = per_psi.iter().map(|f| f[i]).collect();
                let Some(vals) = vals else { continue };
                feats.push(x);
                origins.push(r.origin);
                for (e, v) in errs.iter_mut().zip(vals) {
                    e.push((v - r.observation).abs());
                }
            }
            HistoricStore::new(
                standardizers[psi].clone(),
                &feats,
                errs,
                origins,
                neighbor_count,
            )
            .map_err(|e| match e {
                CsgeError::InsufficientData(_) => CsgeError::InsufficientData(format!(
                    "no validation rows with complete forecasts for weather model {}",
                    psi + 1
                )),
                other => other,
            })
        })
        .collect()
}

fn ledger(
    grid: LeadGrid,
    rows: &[&AlignedRow],
    forecasts: &[Vec<Vec<Option<f64>>>],
) -> Result<ErrorLedger> {
    let leads: Vec<u32> = rows.iter().map(|r| r.lead).collect();
    let obs: Vec<f64> = rows.iter().map(|r| r.observation).collect();
    ErrorLedger::new(grid, leads, &obs, forecasts)
}

/// Row inputs from precomputed forecasts; local quality from `state`'s
/// stores, optionally excluding neighbors that share the row's origin.
fn prepare_rows(
    state: &WeightState,
    rows: &[&AlignedRow],
    forecasts: &[Vec<Vec<Option<f64>>>],
    exclude_own_origin: bool,
) -> Result<PreparedRows> {
    let mut out = PreparedRows {
        source: Vec::with_capacity(rows.len()),
        origins: Vec::with_capacity(rows.len()),
        rows: Vec::with_capacity(rows.len()),
        observations: Vec::with_capacity(rows.len()),
    };
    for (i, r) in rows.iter().enumerate() {
        let mut values = Vec::new();
        let mut local_q = Vec::new();
        let mut usable = false;
        for (psi, per_psi) in forecasts.iter().enumerate() {
            let q = match r.features[psi].as_deref() {
                Some(x) => {
                    let store = state.historic(psi);
                    let lq = if exclude_own_origin {
                        store.local_quality_excluding(x, r.origin)?
                    } else {
                        store.local_quality(x)?
                    };
                    Some(lq.q)
                }
                None => None,
            };
            for f in per_psi {
                usable |= q.is_some() && f[i].is_some();
                values.push(f[i]);
            }
            local_q.push(q);
        }
        if usable {
            out.source.push(i);
            out.origins.push(r.origin);
            out.observations.push(r.observation);
            out.rows.push(RowInputs {
                lead: r.lead,
                values,
                local_q,
            });
        }
    }
    Ok(out)
}

/// Row inputs for arbitrary aligned rows under a trained state and base models.
pub fn prepare_prediction_rows(
    state: &WeightState,
    forecasters: &[Vec<ForecasterState>],
    rows: &[&AlignedRow],
) -> Result<PreparedRows> {
    let forecasts = predict_members(forecasters, rows);
    prepare_rows(state, rows, &forecasts, false)
}

impl PreparedTraining {
    /// Fit base models per fold, build weight statistics from their
    /// validation predictions and precompute all row inputs.
    pub fn prepare(
        data: &DataSet,
        kinds: &MemberKinds,
        config: &TrainConfig,
        plan: &SplitPlan,
    ) -> Result<Self> {
        config.validate()?;
        if kinds.len() != data.weather_count() {
            return Err(CsgeError::Config(format!(
                "{} weather models in data but {} in the member kinds",
                data.weather_count(),
                kinds.len()
            )));
        }
        if kinds.iter().any(|k| k.is_empty()) {
            return Err(CsgeError::Config(
                "every weather model needs at least one forecaster".into(),
            ));
        }
        let grid = data.grid();
        let all_rows = align_all(data);
        let split = split(&data.origins(), plan)?;
        let init = config.pinned.apply(config.eta_init);
        let mut folds = Vec::with_capacity(split.folds.len());
        let mut oof_rows: Vec<&AlignedRow> = Vec::new();
        let mut oof_forecasts: Vec<Vec<Vec<Option<f64>>>> =
            kinds.iter().map(|k| vec![Vec::new(); k.len()]).collect();
        for (f, roles) in split.folds.iter().enumerate() {
            let param = rows_for(&all_rows, &roles.parameter);
            let opt = rows_for(&all_rows, &roles.optimization);
            let val = rows_for(&all_rows, &roles.validation);
            if param.is_empty() || opt.is_empty() || val.is_empty() {
                return Err(CsgeError::InsufficientData(format!(
                    "fold {} has an empty role ({} parameter, {} optimization, {} validation rows)",
                    f + 1,
                    param.len(),
                    opt.len(),
                    val.len()
                )));
            }
            let models = fit_members(&param, kinds)?;
            let val_fc = predict_members(&models, &val);
            let opt_fc = predict_members(&models, &opt);
            let stds = standardizers(&param, data.feature_dims());
            let stores = build_stores(&val, &val_fc, &stds, config.neighbor_count)?;
            let state = WeightState::new(
                &ledger(grid, &val, &val_fc)?,
                stores,
                init,
                config.smoothing_window,
            )?;
            let optimization = prepare_rows(&state, &opt, &opt_fc, false)?;
            let validation = prepare_rows(&state, &val, &val_fc, true)?;
            log::info!(
                "fold {}: {} parameter, {} optimization, {} validation rows",
                f + 1,
                param.len(),
                optimization.rows.len(),
                validation.rows.len()
            );
            for (acc, fc) in oof_forecasts.iter_mut().zip(val_fc) {
                for (a, v) in acc.iter_mut().zip(fc) {
                    a.extend(v);
                }
            }
            oof_rows.extend(val);
            folds.push(PreparedFold {
                state,
                optimization,
                validation,
            });
        }
        let train_rows = rows_for(&all_rows, &split.train);
        let forecasters = fit_members(&train_rows, kinds)?;
        let stds = standardizers(&train_rows, data.feature_dims());
        let stores = build_stores(&oof_rows, &oof_forecasts, &stds, config.neighbor_count)?;
        let oof_ledger = ledger(grid, &oof_rows, &oof_forecasts)?;
        let oof_rmse = oof_ledger.rmse_matrix()?;
        let state = WeightState::new(&oof_ledger, stores, init, config.smoothing_window)?;
        Ok(PreparedTraining {
            grid,
            kinds: kinds.clone(),
            split,
            folds,
            forecasters,
            state,
            oof_rmse,
        })
    }

    pub fn power_counts(&self) -> Vec<usize> {
        self.kinds.iter().map(|k| k.len()).collect()
    }

    /// Search exponents for a member subset and assemble the final model.
    pub fn fit(&self, selection: &MemberSelection, config: &TrainConfig) -> Result<TrainedModel> {
        config.validate()?;
        let counts = self.power_counts();
        let mut fold_states = Vec::new();
        let mut opt_sets = Vec::new();
        let mut val_sets = Vec::new();
        for fold in &self.folds {
            let state = fold
                .state
                .select(&selection.weather, &selection.power)?
                .with_eta(config.pinned.apply(config.eta_init))?;
            opt_sets.push(fold.optimization.restrict(&counts, selection));
            val_sets.push(fold.validation.restrict(&counts, selection));
            fold_states.push(state);
        }
        let mut val_plans = fold_states
            .iter()
            .zip(&val_sets)
            .map(|(s, v)| WeightPlan::compile(s, &v.rows))
            .collect::<Result<Vec<_>>>()?;
        let mut candidates = Vec::new();
        for (f, (state, opt)) in fold_states.iter().zip(&opt_sets).enumerate() {
            if opt.rows.is_empty() {
                return Err(CsgeError::InsufficientData(format!(
                    "fold {} has no usable optimization rows",
                    f + 1
                )));
            }
            let mut objective = Objective::new(state, &opt.rows, opt.observations.clone(), 0.0)?;
            for zeta in config.zetas() {
                objective = objective.with_zeta(zeta);
                let outcome = optimize_eta(config, &mut |e| objective.value(e))?;
                let validation_rmse = val_plans
                    .iter_mut()
                    .zip(&val_sets)
                    .map(|(p, v)| p.mse(&outcome.eta, &v.observations).map(f64::sqrt))
                    .collect::<Result<Vec<_>>>()?;
                let mean = validation_rmse.iter().sum::<f64>() / validation_rmse.len() as f64;
                log::debug!(
                    "fold {} zeta {zeta}: eta {:?}, validation rmse {mean:.5}",
                    f + 1,
                    outcome.eta
                );
                candidates.push(CandidateScore {
                    fold: f,
                    zeta,
                    eta: outcome.eta,
                    optimization_objective: outcome.objective,
                    stages: outcome.stages,
                    validation_rmse,
                    mean_validation_rmse: mean,
                });
            }
        }
        let chosen = (0..candidates.len())
            .min_by(|&a, &b| {
                candidates[a]
                    .mean_validation_rmse
                    .total_cmp(&candidates[b].mean_validation_rmse)
                    .then(a.cmp(&b))
            })
            .expect("at least one candidate");
        let eta = candidates[chosen].eta;
        let zeta = candidates[chosen].zeta;
        let state = self
            .state
            .select(&selection.weather, &selection.power)?
            .with_eta(eta)?;
        Ok(TrainedModel {
            kinds: selection.restrict_kinds(&self.kinds),
            forecasters: selection.restrict_forecasters(&self.forecasters),
            state,
            report: TrainingReport {
                members: selection.members(),
                fold_sizes: self
                    .split
                    .folds
                    .iter()
                    .map(|r| [r.parameter.len(), r.optimization.len(), r.validation.len()])
                    .collect(),
                candidates,
                chosen,
                eta,
                zeta,
            },
        })
    }
}

/// Train the full ensemble on the training share of `data`.
pub fn fit_csge(
    data: &DataSet,
    kinds: &MemberKinds,
    config: &TrainConfig,
    plan: &SplitPlan,
) -> Result<TrainedModel> {
    let prepared = PreparedTraining::prepare(data, kinds, config, plan)?;
    prepared.fit(&MemberSelection::all(&prepared.power_counts()), config)
}

impl TrainedModel {
    /// Ensemble predictions for aligned rows, in row order. Rows without any
    /// available member are skipped; the returned indices say which were kept.
    pub fn predict_rows(
        &self,
        rows: &[&AlignedRow],
    ) -> Result<(Vec<usize>, Vec<crate::ensemble::Prediction>)> {
        self.predict_rows_dropping(rows, &[])
    }

    /// As [`TrainedModel::predict_rows`] with the listed members (in this
    /// model's own layout) treated as unavailable.
    pub fn predict_rows_dropping(
        &self,
        rows: &[&AlignedRow],
        dropped: &[MemberId],
    ) -> Result<(Vec<usize>, Vec<crate::ensemble::Prediction>)> {
        let prepared = prepare_prediction_rows(&self.state, &self.forecasters, rows)?;
        let mut kept = Vec::with_capacity(prepared.rows.len());
        let mut inputs = Vec::with_capacity(prepared.rows.len());
        let members = self.state.members();
        for (src, mut r) in prepared.source.into_iter().zip(prepared.rows) {
            for m in dropped {
                r.drop_member(&self.state, *m)?;
            }
            let usable = members
                .iter()
                .enumerate()
                .any(|(j, m)| r.values[j].is_some() && r.local_q[m.weather].is_some());
            if usable {
                kept.push(src);
                inputs.push(r);
            }
        }
        Ok((kept, crate::ensemble::predict_rows(&self.state, &inputs)?))
    }

    /// RMSE of the ensemble on aligned rows.
    pub fn rmse(&self, rows: &[&AlignedRow]) -> Result<f64> {
        let (kept, preds) = self.predict_rows(rows)?;
        let f: Vec<f64> = preds.iter().map(|p| p.value).collect();
        let o: Vec<f64> = kept.iter().map(|&i| rows[i].observation).collect();
        metrics::rmse(&f, &o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ForecastRecord;
    use std::cell::Cell;

    #[test]
    fn split_fraction_arithmetic() {
        let origins: Vec<i64> = (0..100).map(|i| i * 3600).collect();
        let s = split(&origins, &SplitPlan::default()).unwrap();
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.train.len(), 80);
        for f in &s.folds {
            assert_eq!(
                (f.parameter.len(), f.optimization.len(), f.validation.len()),
                (48, 16, 16)
            );
            let mut all: Vec<i64> = f
                .parameter
                .iter()
                .chain(&f.optimization)
                .chain(&f.validation)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, s.train);
        }
        assert!(s.test.iter().all(|t| !s.train.contains(t)));
        assert_eq!(s, split(&origins, &SplitPlan::default()).unwrap());
        let other = split(
            &origins,
            &SplitPlan {
                seed: 9,
                ..SplitPlan::default()
            },
        )
        .unwrap();
        assert_ne!(s.test, other.test);
    }

    #[test]
    fn split_needs_enough_origins() {
        let err = split(&[1, 2, 3, 4], &SplitPlan::default()).unwrap_err();
        assert!(matches!(err, CsgeError::InsufficientData(_)));
        assert!(split(
            &[1, 2, 3],
            &SplitPlan {
                test_fraction: 1.0,
                ..SplitPlan::default()
            }
        )
        .is_err());
    }

    #[test]
    fn validation_rotates_through_chunks() {
        let origins: Vec<i64> = (0..50).collect();
        let s = split(&origins, &SplitPlan::default()).unwrap();
        let mut seen: Vec<i64> = s.folds.iter().flat_map(|f| f.validation.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, s.train);
    }

    fn surrogate(e: &EtaVector) -> f64 {
        let a = e.to_array();
        (a[0] - 2.0).powi(2) + a[1..].iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn greedy_simplex_recovers_surrogate_minimum() {
        let out = optimize_eta(&TrainConfig::default(), &mut surrogate).unwrap();
        let a = out.eta.to_array();
        assert!((a[0] - 2.0).abs() < 1e-3, "{a:?}");
        assert!(a[1..].iter().all(|v| v.abs() < 1e-3), "{a:?}");
        for w in out.stages.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
        assert!(out.stages[0].objective <= out.initial_objective);
    }

    #[test]
    fn heavy_penalty_drives_eta_to_zero() {
        let mut f = |e: &EtaVector| surrogate(e) + 1e6 * e.sum();
        let out = optimize_eta(&TrainConfig::default(), &mut f).unwrap();
        assert!(out.eta.to_array().iter().all(|v| *v < 1e-3));
    }

    #[test]
    fn constant_objective_keeps_start() {
        let cfg = TrainConfig {
            eta_init: EtaVector::from_array([0.5, 1.0, 1.5, 2.0, 2.5, 3.0]),
            ..TrainConfig::default()
        };
        let out = optimize_eta(&cfg, &mut |_| 4.2).unwrap();
        assert_eq!(out.eta, cfg.eta_init);
    }

    #[test]
    fn optimizer_stays_in_bounds() {
        let mut f = |e: &EtaVector| {
            let a = e.to_array();
            assert!(a.iter().all(|v| *v >= 0.0 && *v <= 50.0));
            (a[2] + 3.0).powi(2) - (a[4] - 80.0).abs()
        };
        let out = optimize_eta(&TrainConfig::default(), &mut f).unwrap();
        assert_eq!(out.eta.leadtime_power, 0.0);
        assert!((out.eta.local_weather - 0.0).abs() < 1e-3);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let r = optimize_eta(&TrainConfig::default(), &mut |_| f64::NAN);
        assert!(matches!(r, Err(CsgeError::NonFiniteObjective)));
    }

    #[test]
    fn pinned_coordinates_are_not_optimized() {
        let mut cfg = TrainConfig::default();
        cfg.pinned.global_power = Some(0.5);
        let out = optimize_eta(&cfg, &mut surrogate).unwrap();
        assert_eq!(out.eta.global_power, 0.5);
        assert_eq!(out.stages.len(), 5);
    }

    #[test]
    fn joint_refinement_adds_a_stage() {
        let cfg = TrainConfig {
            joint_refinement: true,
            ..TrainConfig::default()
        };
        let out = optimize_eta(&cfg, &mut surrogate).unwrap();
        assert_eq!(out.stages.len(), 7);
        assert!((out.eta.global_power - 2.0).abs() < 1e-3);
    }

    struct Counting<'a> {
        calls: &'a Cell<usize>,
        bias: f64,
    }

    impl Forecaster for Counting<'_> {
        fn predict(&self, features: &[f64], _: Option<f64>) -> Option<f64> {
            self.calls.set(self.calls.get() + 1);
            Some((features[0] + self.bias).clamp(0.0, 1.0))
        }
    }

    fn toy_state(counts: &[usize], eta: EtaVector) -> WeightState {
        let grid = LeadGrid::hourly(1, 2).unwrap();
        let leads = vec![1, 2, 1, 2];
        let obs = vec![0.5; 4];
        let f: Vec<Vec<Vec<Option<f64>>>> = counts
            .iter()
            .enumerate()
            .map(|(psi, &n)| {
                (0..n)
                    .map(|phi| {
                        (0..4)
                            .map(|i| Some(0.5 + 0.05 * (1 + psi + phi + i % 2) as f64))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let ledger = ErrorLedger::new(grid, leads, &obs, &f).unwrap();
        let stores = counts
            .iter()
            .map(|&n| {
                let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 6.0]).collect();
                let views: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                let errs = (0..n)
                    .map(|phi| (0..6).map(|i| 0.01 * ((i + phi) % 4 + 1) as f64).collect())
                    .collect();
                HistoricStore::new(
                    Standardizer::fit(views.iter().copied(), 1),
                    &views,
                    errs,
                    (0..6).collect(),
                    3,
                )
                .unwrap()
            })
            .collect();
        WeightState::new(&ledger, stores, eta, 1).unwrap()
    }

    #[test]
    fn objective_computes_base_forecasts_once() {
        let calls = Cell::new(0);
        let forecasters = vec![
            vec![
                Counting {
                    calls: &calls,
                    bias: 0.0,
                },
                Counting {
                    calls: &calls,
                    bias: 0.1,
                },
            ],
            vec![Counting {
                calls: &calls,
                bias: -0.1,
            }],
        ];
        let st = toy_state(&[2, 1], EtaVector::splat(1.0));
        let feats: Vec<Vec<Option<Vec<f64>>>> = (0..10)
            .map(|i| vec![Some(vec![i as f64 / 10.0]), Some(vec![i as f64 / 11.0])])
            .collect();
        let queries: Vec<Query> = feats
            .iter()
            .enumerate()
            .map(|(i, f)| Query {
                origin: i as i64,
                lead: 1 + (i % 2) as u32,
                features: f,
                recent_power: None,
            })
            .collect();
        let obs: Vec<f64> = (0..10).map(|i| i as f64 / 12.0).collect();
        let mut obj = Objective::from_forecasters(&st, &forecasters, &queries, obs, 0.0).unwrap();
        assert_eq!(calls.get(), 30);
        let a = obj.value(&EtaVector::splat(0.5));
        let b = obj.value(&EtaVector::splat(3.0));
        assert!(a.is_finite() && b.is_finite());
        assert_eq!(calls.get(), 30);
    }

    #[test]
    fn objective_examples() {
        let st = toy_state(&[2, 1], EtaVector::zeros());
        let rows: Vec<RowInputs> = (0..4)
            .map(|i| RowInputs {
                lead: 1 + i % 2,
                values: vec![Some(0.3); 3],
                local_q: vec![Some(vec![0.1, 0.2]), Some(vec![0.1])],
            })
            .collect();
        let mut obj = Objective::new(&st, &rows, vec![0.3; 4], 0.0).unwrap();
        assert_eq!(obj.value(&EtaVector::splat(2.0)), 0.0);
        let mut obj = obj.with_zeta(1.0);
        assert!((obj.value(&EtaVector::splat(1.0)) - 6.0).abs() < 1e-12);

        let single = toy_state(&[1], EtaVector::zeros());
        let rows: Vec<RowInputs> = (0..4)
            .map(|i| RowInputs {
                lead: 1 + i % 2,
                values: vec![Some(0.1 * i as f64)],
                local_q: vec![Some(vec![0.1])],
            })
            .collect();
        let obs = vec![0.2, 0.2, 0.5, 0.0];
        let mse = (0.04 + 0.01 + 0.09 + 0.09) / 4.0;
        let mut obj = Objective::new(&single, &rows, obs, 0.0).unwrap();
        for e in [0.0, 1.0, 7.0] {
            assert!((obj.value(&EtaVector::splat(e)) - mse).abs() < 1e-15);
        }
    }

    /// Two weather models; the second is ten times noisier.
    fn toy_data(n_origins: i64) -> DataSet {
        let grid = LeadGrid::hourly(1, 3).unwrap();
        let mut recs = Vec::new();
        for o in 0..n_origins {
            for k in 1..=3u32 {
                let truth = 0.5 + 0.4 * ((o * 7 + k as i64) as f64 * 0.37).sin();
                for (psi, noise) in [(0usize, 0.01), (1, 0.1)] {
                    let wobble = noise * ((o * 13 + k as i64 * 5 + psi as i64) as f64 * 1.7).sin();
                    recs.push(ForecastRecord {
                        origin: o * 86_400,
                        lead: k,
                        origin_lag: 0,
                        weather_model: psi,
                        features: vec![truth + wobble, 0.3],
                        observation: Some(truth),
                        recent_power: Some(0.5),
                    });
                }
            }
        }
        DataSet::new(recs, grid, vec!["good".into(), "poor".into()], vec![2, 2]).unwrap()
    }

    #[test]
    fn fit_prefers_better_weather_model() {
        let data = toy_data(60);
        let kinds = vec![vec![ForecasterKind::LinearRegression]; 2];
        let cfg = TrainConfig {
            neighbor_count: 5,
            zeta: Some(0.0),
            ..TrainConfig::default()
        };
        let model = fit_csge(&data, &kinds, &cfg, &SplitPlan::default()).unwrap();
        let g = model.state.global_weather_weights().unwrap();
        assert!(g[0] > 0.5, "{g:?}");
        assert_eq!(model.report.candidates.len(), 5);
        assert_eq!(model.report.fold_sizes[0], [29, 10, 9]);
        let again = fit_csge(&data, &kinds, &cfg, &SplitPlan::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&model.state).unwrap(),
            serde_json::to_string(&again.state).unwrap()
        );
    }

    #[test]
    fn restricted_rows_follow_selection() {
        let sel = MemberSelection {
            weather: vec![1],
            power: vec![vec![1, 0]],
        };
        let rows = vec![RowInputs {
            lead: 1,
            values: vec![Some(0.1), Some(0.2), Some(0.3), Some(0.4)],
            local_q: vec![Some(vec![0.01, 0.02]), Some(vec![0.03, 0.04])],
        }];
        let (r, o, kept) = sel.restrict_rows(&[2, 2], &rows, &[0.5]);
        assert_eq!(r[0].values, vec![Some(0.4), Some(0.3)]);
        assert_eq!(r[0].local_q, vec![Some(vec![0.04, 0.03])]);
        assert_eq!((o, kept), (vec![0.5], vec![0]));
    }
}
