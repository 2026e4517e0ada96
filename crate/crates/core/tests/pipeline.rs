use csge::experiment::Method;
use csge::forecasters::ForecasterKind;
use csge::io::{Bundle, ExperimentConfig};
use csge::pipeline;
use csge::synth::{self, WeatherModelSpec};

fn small_config(
    dir: &std::path::Path,
    noises: &[f64],
    kinds: Vec<ForecasterKind>,
) -> ExperimentConfig {
    let mut spec = synth::scenario("mme-day-ahead").unwrap();
    spec.n_origins = 60;
    spec.weather_models = noises
        .iter()
        .enumerate()
        .map(|(i, &n)| WeatherModelSpec::new(&format!("m{i}"), n, 0.005))
        .collect();
    spec.power_kinds = kinds;
    let path = pipeline::synth_gen(&spec, dir).unwrap();
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.methods = vec![Method::CsgeMulti];
    cfg
}

#[test]
fn bundle_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        &[0.05, 0.15],
        vec![
            ForecasterKind::LinearRegression,
            ForecasterKind::Persistence,
        ],
    );
    let (bundle, _) = pipeline::train(&cfg).unwrap();
    let path = dir.path().join("b.csge");
    bundle.save(&path).unwrap();
    let loaded = Bundle::load(&path).unwrap();
    let name = pipeline::default_method(&bundle).unwrap();
    let a = pipeline::predict(&bundle, None, &name, &[]).unwrap();
    let b = pipeline::predict(&loaded, None, &name, &[]).unwrap();
    assert_eq!(a, b);
    assert_eq!(bundle.to_bytes().unwrap(), loaded.to_bytes().unwrap());
}

#[test]
fn three_weather_two_power_bundle_has_six_forecasters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        &[0.05, 0.06, 0.07],
        vec![
            ForecasterKind::LinearRegression,
            ForecasterKind::Persistence,
        ],
    );
    let (bundle, summary) = pipeline::train(&cfg).unwrap();
    assert_eq!(bundle.forecasters.len(), 3);
    assert!(bundle.forecasters.iter().all(|f| f.len() == 2));
    assert_eq!(summary.oof_rmse.iter().map(Vec::len).sum::<usize>(), 6);
}

#[test]
fn noisier_weather_gives_worse_linear_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        &[0.05, 0.15],
        vec![ForecasterKind::LinearRegression],
    );
    let (_, summary) = pipeline::train(&cfg).unwrap();
    assert!(
        summary.oof_rmse[0][0] < summary.oof_rmse[1][0],
        "{:?}",
        summary.oof_rmse
    );
}
