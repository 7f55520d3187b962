use delaycast::bundle::{self, TftBundleConfig};
use delaycast::{archive, dataset, grids, reports, CliError};
use delaycast_core::formulation::{ForecastSample, NormStats, Panel, VariableSchema};
use delaycast_core::interpret::ImportanceSummary;
use delaycast_core::nn::ParamStore;
use delaycast_core::scenario::{generate, ScenarioConfig};
use delaycast_core::tft::{Tft, TftConfig};
use delaycast_core::training::{Forecasts, TrainConfig};
use delaycast_core::wx::WeatherGrid;
use delaycast_core::Tensor;
use grids::GridFormat;

fn small_scenario() -> ScenarioConfig {
    ScenarioConfig {
        steps: 120,
        height: 64,
        width: 64,
        ..ScenarioConfig::default()
    }
}

#[test]
fn archive_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ParamStore::new();
    let odd = vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0, f64::MAX, -1e-300, 0.1 + 0.2];
    s.add("a.w", Tensor::new(vec![2, 3], odd.clone()).unwrap()).unwrap();
    s.add("b", Tensor::from_vec(vec![std::f64::consts::PI])).unwrap();
    archive::save(dir.path(), &s).unwrap();
    let mut t = ParamStore::new();
    t.add("a.w", Tensor::zeros(&[2, 3])).unwrap();
    t.add("b", Tensor::zeros(&[1])).unwrap();
    archive::load_into(dir.path(), &mut t).unwrap();
    let bits = |st: &ParamStore| -> Vec<u64> {
        st.iter()
            .flat_map(|(_, x)| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(bits(&s), bits(&t));
    let mut wrong = ParamStore::new();
    wrong.add("a.w", Tensor::zeros(&[3, 2])).unwrap();
    wrong.add("b", Tensor::zeros(&[1])).unwrap();
    assert!(archive::load_into(dir.path(), &mut wrong).is_err());
}

#[test]
fn archive_rejects_truncated_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ParamStore::new();
    s.add("w", Tensor::zeros(&[4])).unwrap();
    archive::save(dir.path(), &s).unwrap();
    std::fs::write(dir.path().join("weights.bin"), [0u8; 10]).unwrap();
    assert!(matches!(archive::load_into(dir.path(), &mut s), Err(CliError::Data(_))));
}

#[test]
fn grid_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = WeatherGrid::new(42, 2, 3, vec![0, 6, 3, 1, 2, 5], vec![14, 0, 7, 1, 2, 3]).unwrap();
    for fmt in [GridFormat::Ascii, GridFormat::Binary] {
        let p = grids::write_grid(dir.path(), &g, fmt).unwrap();
        assert_eq!(grids::read_grid(&p).unwrap(), g);
    }
    let ascii = String::from_utf8(grids::encode(&g, GridFormat::Ascii)).unwrap();
    assert!(ascii.starts_with("WXG v1 2 3\n"));
}

#[test]
fn dataset_round_trip_is_exact() {
    let sc = generate(&small_scenario()).unwrap();
    let bytes = dataset::to_csv(&sc.records).unwrap();
    let back = dataset::from_csv(&bytes).unwrap();
    assert_eq!(back, sc.records);
    assert_eq!(dataset::to_csv(&back).unwrap(), bytes);
    let text = String::from_utf8(bytes).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("airport,t,arrivals,departures,arr_delay,dep_delay,arr_otp,dep_otp,f0,"));
    assert!(header.ends_with(",tmi14,hour,qod,month,dep_delay_ma,arr_delay_ma"));
}

#[test]
fn dataset_rejects_missing_values() {
    let sc = generate(&small_scenario()).unwrap();
    let text = String::from_utf8(dataset::to_csv(&sc.records[..2]).unwrap()).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[1].split(',').collect();
    cells[4] = "";
    lines[1] = cells.join(",");
    assert!(matches!(
        dataset::from_csv(lines.join("\n").as_bytes()),
        Err(CliError::Data(_))
    ));
}

#[test]
fn tft_bundle_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let sc = generate(&small_scenario()).unwrap();
    let panel = Panel::from_records(&sc.records).unwrap();
    let mut model_cfg = TftConfig::new(VariableSchema::delay());
    model_cfg.d = 8;
    model_cfg.heads = 1;
    let mut params = ParamStore::new();
    let model = Tft::new(&mut params, model_cfg.clone(), 3).unwrap();
    let cfg = TftBundleConfig {
        format_version: bundle::FORMAT_VERSION,
        model: model_cfg,
        stats: NormStats::fit(&panel, 100).unwrap(),
        train: TrainConfig::default(),
        t_split: 100,
    };
    bundle::save_tft(dir.path(), &cfg, &params).unwrap();
    let (cfg2, model2, params2) = bundle::load_tft(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    for ((n1, a), (n2, b)) in params.iter().zip(params2.iter()) {
        assert_eq!(n1, n2);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let sample = ForecastSample { entity: 1, anchor: 40 };
    let p1 = delaycast_core::tft::predict(&model, &params, &cfg.stats, &panel, 1, 40).unwrap();
    let p2 =
        delaycast_core::tft::predict(&model2, &params2, &cfg2.stats, &panel, sample.entity, sample.anchor).unwrap();
    assert_eq!(p1, p2);
    // saving again gives identical bytes
    let dir2 = tempfile::tempdir().unwrap();
    bundle::save_tft(dir2.path(), &cfg2, &params2).unwrap();
    for f in ["config.json", "weights/weights.bin", "weights/manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(dir2.path().join(f)).unwrap()
        );
    }
}

#[test]
fn report_tables_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = Forecasts {
        quantiles: vec![0.25, 0.5, 0.75],
        tau: 2,
        n_targets: 2,
        entities: vec![0],
        pred: (0..12).map(|i| i as f64 * 0.1).collect(),
        labels: vec![0.0; 4],
        baseline: vec![0.0; 4],
    };
    let names = vec!["LGA".to_string()];
    let targets = vec!["dep_delay_ma".to_string(), "arr_delay_ma".to_string()];
    let samples = [ForecastSample { entity: 0, anchor: 9 }];
    let rows = reports::forecast_rows(&f, &samples, &names, &targets).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[1].target.as_str(), rows[1].tau), ("dep_delay_ma", 2));
    assert_eq!(rows[1].quantiles, f.pred[6..9].to_vec());
    let p = dir.path().join("forecast.csv");
    reports::write_forecasts(&p, &f.quantiles, &rows).unwrap();
    let (cols, back) = reports::read_forecasts(&p).unwrap();
    assert_eq!(cols, ["q25", "q50", "q75"]);
    assert_eq!(back, rows);

    let s = ImportanceSummary {
        encoder_vars: vec![("a".into(), 0.25), ("b".into(), 0.75)],
        decoder_vars: vec![("c".into(), 1.0)],
        static_vars: vec![("airport".into(), 1.0)],
        attention_by_lag: vec![(-2, 0.1), (-1, 0.6), (1, 0.3)],
    };
    let imp = dir.path().join("importance.csv");
    reports::write_importance(&imp, &s).unwrap();
    let rows = reports::read_importance(&imp).unwrap();
    assert_eq!(rows[0], ("encoder".into(), "b".into(), 0.75));
    assert_eq!(rows.len(), 4);
    let att = dir.path().join("attention.csv");
    reports::write_attention(&att, &s).unwrap();
    assert_eq!(reports::read_attention(&att).unwrap(), s.attention_by_lag);
}
