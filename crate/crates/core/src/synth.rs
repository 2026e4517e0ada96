//! Synthetic wind-farm scenarios: an hourly AR(1) latent wind path, a
//! logistic power curve, and weather models that observe the latent wind
//! with their own bias, noise level and noise growth over the horizon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, ForecastRecord, LeadGrid};
use crate::error::{CsgeError, Result};
use crate::forecasters::ForecasterKind;

/// 2020-01-01T00:00:00Z.
pub const SYNTH_EPOCH: i64 = 1_577_836_800;
pub const FEATURE_NAMES: [&str; 6] = ["ws100", "ws10", "u100", "v100", "pressure", "temperature"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentProcess {
    /// Hourly AR(1) coefficient.
    pub rho: f64,
    pub innovation_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub cut_in: f64,
    pub rated: f64,
}

impl PowerCurve {
    /// Logistic curve centered between cut-in and rated speed.
    pub fn power(&self, wind: f64) -> f64 {
        let mid = 0.5 * (self.cut_in + self.rated);
        let steepness = (self.rated - self.cut_in) / 8.0;
        1.0 / (1.0 + (-(wind - mid) / steepness).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherModelSpec {
    pub label: String,
    pub bias: f64,
    /// Noise standard deviation at zero horizon.
    pub noise: f64,
    /// Relative noise increase per hour of horizon.
    pub growth: f64,
    /// Hours by which this model's run predates the ensemble origin.
    pub origin_lag: u32,
    /// Noise scales with `1 + regime_gain * (wind - 0.5)`; positive values make
    /// the model worse at high wind.
    pub regime_gain: f64,
}

impl WeatherModelSpec {
    pub fn new(label: &str, noise: f64, growth: f64) -> Self {
        WeatherModelSpec {
            label: label.to_string(),
            bias: 0.0,
            noise,
            growth,
            origin_lag: 0,
            regime_gain: 0.0,
        }
    }

    fn noise_at(&self, horizon: u32, wind: f64) -> f64 {
        let regime = (1.0 + self.regime_gain * (wind - 0.5)).max(0.2);
        self.noise * (1.0 + self.growth * horizon as f64) * regime
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub n_origins: usize,
    /// Hours between consecutive origins.
    pub origin_spacing: u32,
    pub k_min: u32,
    pub k_max: u32,
    pub latent: LatentProcess,
    pub weather_models: Vec<WeatherModelSpec>,
    pub power_curve: PowerCurve,
    /// Number of leading entries of [`FEATURE_NAMES`] emitted.
    pub feature_dims: usize,
    /// Suggested power models for every weather model.
    pub power_kinds: Vec<ForecasterKind>,
}

impl ScenarioSpec {
    pub fn grid(&self) -> Result<LeadGrid> {
        LeadGrid::hourly(self.k_min, self.k_max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CsgeError::Config(m));
        if !(self.latent.rho > 0.0 && self.latent.rho < 1.0) {
            return bad(format!("latent rho {} must lie in (0, 1)", self.latent.rho));
        }
        if !(self.latent.innovation_scale >= 0.0) {
            return bad("innovation scale must be nonnegative".into());
        }
        if self.n_origins == 0 || self.origin_spacing == 0 {
            return bad("scenario needs origins and a positive origin spacing".into());
        }
        if self.weather_models.is_empty() {
            return bad("scenario needs at least one weather model".into());
        }
        if let Some(m) = self
            .weather_models
            .iter()
            .find(|m| !(m.noise >= 0.0 && m.growth >= 0.0 && m.bias.is_finite()))
        {
            return bad(format!(
                "weather model {} has a negative noise scale",
                m.label
            ));
        }
        if !(self.power_curve.rated > self.power_curve.cut_in) {
            return bad("rated speed must exceed cut-in speed".into());
        }
        if !(1..=FEATURE_NAMES.len()).contains(&self.feature_dims) {
            return bad(format!(
                "feature_dims must be 1..=6, got {}",
                self.feature_dims
            ));
        }
        self.grid()?;
        Ok(())
    }

    fn hours(&self) -> usize {
        (self.n_origins - 1) * self.origin_spacing as usize + self.k_max as usize + 1
    }
}

/// Hourly latent wind path `clamp(0.5 + x_t, 0, 1)` with AR(1) `x_t`,
/// covering every target time of the scenario.
pub fn latent_path(spec: &ScenarioSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(latent_from(&mut rng, spec))
}

fn latent_from(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Vec<f64> {
    let LatentProcess {
        rho,
        innovation_scale,
    } = spec.latent;
    let stationary = innovation_scale / (1.0 - rho * rho).sqrt();
    let mut x = stationary * rng.sample::<f64, _>(StandardNormal);
    (0..spec.hours())
        .map(|_| {
            x = rho * x + innovation_scale * rng.sample::<f64, _>(StandardNormal);
            (0.5 + x).clamp(0.0, 1.0)
        })
        .collect()
}

/// Generate the scenario. Deterministic for a given spec.
pub fn generate(spec: &ScenarioSpec) -> Result<DataSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wind = latent_from(&mut rng, spec);
    let hours = wind.len();
    let power: Vec<f64> = wind.iter().map(|w| spec.power_curve.power(*w)).collect();
    // slowly turning wind direction and a seasonal temperature cycle
    let mut angle = Vec::with_capacity(hours);
    let mut theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    for _ in 0..hours {
        theta += 0.05 * rng.sample::<f64, _>(StandardNormal);
        angle.push(theta);
    }
    let grid = spec.grid()?;
    let mut records = Vec::with_capacity(spec.n_origins * grid.len() * spec.weather_models.len());
    let mut noise = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    for i in 0..spec.n_origins {
        let hour = i * spec.origin_spacing as usize;
        let origin = SYNTH_EPOCH + hour as i64 * 3600;
        for k in grid.leads() {
            let target = hour + k as usize;
            let w = wind[target];
            for (psi, m) in spec.weather_models.iter().enumerate() {
                let sigma = m.noise_at(k + m.origin_lag, w);
                let ws100 = (w + m.bias + noise(sigma)).clamp(0.0, 1.0);
                let ws10 = (0.75 * ws100 + noise(0.5 * sigma)).clamp(0.0, 1.0);
                let dir = angle[target] + noise(0.2);
                let all = [
                    ws100,
                    ws10,
                    (0.5 + 0.5 * ws100 * dir.cos()).clamp(0.0, 1.0),
                    (0.5 + 0.5 * ws100 * dir.sin()).clamp(0.0, 1.0),
                    (0.5 - 0.3 * (w - 0.5) + noise(0.5 * sigma)).clamp(0.0, 1.0),
                    (0.5 + 0.2 * (std::f64::consts::TAU * target as f64 / 8760.0).sin()
                        + noise(0.05))
                    .clamp(0.0, 1.0),
                ];
                records.push(ForecastRecord {
                    origin,
                    lead: k,
                    origin_lag: m.origin_lag,
                    weather_model: psi,
                    features: all[..spec.feature_dims].to_vec(),
                    observation: Some(power[target]),
                    recent_power: Some(power[hour]),
                });
            }
        }
    }
    DataSet::new(
        records,
        grid,
        spec.weather_models
            .iter()
            .map(|m| m.label.clone())
            .collect(),
        vec![spec.feature_dims; spec.weather_models.len()],
    )
}

fn knn() -> ForecasterKind {
    ForecasterKind::KnnRegressor {
        neighbors: ForecasterKind::DEFAULT_KNN_NEIGHBORS,
    }
}

fn base(name: &str, seed: u64, n_origins: usize, spacing: u32, leads: (u32, u32)) -> ScenarioSpec {
    ScenarioSpec {
        name: name.to_string(),
        seed,
        n_origins,
        origin_spacing: spacing,
        k_min: leads.0,
        k_max: leads.1,
        latent: LatentProcess {
            rho: 0.97,
            innovation_scale: 0.05,
        },
        weather_models: Vec::new(),
        power_curve: PowerCurve {
            cut_in: 0.25,
            rated: 0.75,
        },
        feature_dims: FEATURE_NAMES.len(),
        power_kinds: vec![ForecasterKind::LinearRegression, knn()],
    }
}

/// The four named scenarios.
pub fn scenario_catalog() -> Vec<ScenarioSpec> {
    let mut single = base("single-model", 11, 1500, 24, (1, 24));
    single.weather_models = vec![WeatherModelSpec::new("nwp", 0.06, 0.02)];
    single.power_kinds = vec![
        ForecasterKind::LinearRegression,
        knn(),
        ForecasterKind::Persistence,
    ];

    let mut mme = base("mme-day-ahead", 22, 5000, 24, (24, 48));
    mme.weather_models = vec![
        WeatherModelSpec {
            regime_gain: 1.2,
            ..WeatherModelSpec::new("nwp-a", 0.05, 0.004)
        },
        WeatherModelSpec {
            regime_gain: -1.2,
            ..WeatherModelSpec::new("nwp-b", 0.06, 0.002)
        },
        WeatherModelSpec {
            bias: 0.01,
            ..WeatherModelSpec::new("nwp-c", 0.06, 0.012)
        },
    ];

    let mut intraday = base("intraday-lagged", 33, 3000, 1, (1, 24));
    intraday.weather_models = vec![
        WeatherModelSpec {
            origin_lag: 24,
            ..WeatherModelSpec::new("day-ahead-a", 0.06, 0.005)
        },
        WeatherModelSpec {
            origin_lag: 24,
            ..WeatherModelSpec::new("day-ahead-b", 0.07, 0.005)
        },
        WeatherModelSpec {
            origin_lag: 24,
            ..WeatherModelSpec::new("day-ahead-c", 0.08, 0.005)
        },
        WeatherModelSpec::new("intraday", 0.03, 0.1),
    ];
    intraday.latent = LatentProcess {
        rho: 0.995,
        innovation_scale: 0.02,
    };
    intraday.power_kinds = vec![
        ForecasterKind::LinearRegression,
        knn(),
        ForecasterKind::Persistence,
    ];

    let mut sweep = base("model-count-sweep", 44, 2500, 24, (24, 48));
    sweep.weather_models = vec![
        WeatherModelSpec::new("nwp-1", 0.06, 0.005),
        WeatherModelSpec::new("nwp-2", 0.065, 0.005),
        WeatherModelSpec::new("nwp-3", 0.18, 0.005),
    ];

    vec![single, mme, intraday, sweep]
}

pub fn scenario(name: &str) -> Option<ScenarioSpec> {
    scenario_catalog().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(models: Vec<WeatherModelSpec>) -> ScenarioSpec {
        let mut s = base("t", 5, 400, 24, (1, 24));
        s.weather_models = models;
        s
    }

    fn feature_rmse_by_lead(ds: &DataSet, spec: &ScenarioSpec, psi: usize) -> Vec<f64> {
        let wind = latent_path(spec).unwrap();
        let grid = ds.grid();
        let mut acc = vec![(0.0, 0usize); grid.len()];
        for r in ds.records().iter().filter(|r| r.weather_model == psi) {
            let hour = ((r.origin - SYNTH_EPOCH) / 3600) as usize + r.lead as usize;
            let e = r.features[0] - wind[hour];
            let a = &mut acc[grid.index(r.lead).unwrap()];
            a.0 += e * e;
            a.1 += 1;
        }
        acc.iter().map(|(s, n)| (s / *n as f64).sqrt()).collect()
    }

    #[test]
    fn noiseless_model_sees_latent_wind() {
        let spec = small(vec![WeatherModelSpec::new("x", 0.0, 0.0)]);
        let ds = generate(&spec).unwrap();
        assert!(feature_rmse_by_lead(&ds, &spec, 0)
            .iter()
            .all(|e| *e == 0.0));
    }

    #[test]
    fn noise_grows_with_lead() {
        let mut spec = small(vec![WeatherModelSpec::new("x", 0.03, 0.1)]);
        spec.n_origins = 10_000 / 24 + 1;
        spec.k_max = 24;
        let ds = generate(&spec).unwrap();
        let e = feature_rmse_by_lead(&ds, &spec, 0);
        // each lead holds ~400 samples; compare leads four hours apart
        for w in e.windows(5) {
            assert!(w[4] > w[0], "{e:?}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = small(vec![WeatherModelSpec::new("x", 0.05, 0.01)]);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn power_in_unit_interval() {
        for spec in scenario_catalog() {
            let mut spec = spec;
            spec.n_origins = 50;
            let ds = generate(&spec).unwrap();
            for r in ds.records() {
                let o = r.observation.unwrap();
                assert!((0.0..=1.0).contains(&o));
                assert!(r.features.iter().all(|f| (0.0..=1.0).contains(f)));
            }
        }
    }

    #[test]
    fn latent_autocorrelation_matches_rho() {
        let spec = scenario("mme-day-ahead").unwrap();
        let w = latent_path(&spec).unwrap();
        let n = w.len() as f64;
        let m = w.iter().sum::<f64>() / n;
        let var: f64 = w.iter().map(|x| (x - m) * (x - m)).sum();
        let cov: f64 = w.windows(2).map(|p| (p[0] - m) * (p[1] - m)).sum();
        assert!((cov / var - spec.latent.rho).abs() < 0.05);
    }

    #[test]
    fn catalog_shape() {
        let c = scenario_catalog();
        assert_eq!(c.len(), 4);
        assert_eq!(scenario("mme-day-ahead").unwrap().weather_models.len(), 3);
        assert!(c.iter().all(|s| s.validate().is_ok()));
        assert!(scenario("nope").is_none());
    }

    #[test]
    fn intraday_model_is_sharpest_at_short_leads() {
        let mut spec = scenario("intraday-lagged").unwrap();
        spec.n_origins = 800;
        let ds = generate(&spec).unwrap();
        let intra = feature_rmse_by_lead(&ds, &spec, 3);
        for psi in 0..3 {
            let day = feature_rmse_by_lead(&ds, &spec, psi);
            for k in 0..4 {
                assert!(intra[k] < day[k]);
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = small(vec![WeatherModelSpec::new("x", 0.05, 0.01)]);
        s.latent.rho = 1.0;
        assert!(generate(&s).is_err());
        let mut s = small(vec![WeatherModelSpec::new("x", -0.05, 0.01)]);
        assert!(generate(&s).is_err());
        s.weather_models.clear();
        assert!(generate(&s).is_err());
    }
}
