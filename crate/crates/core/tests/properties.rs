use delaycast_core::formulation::{moving_average, EncodedSample, VarKind, VariableSchema};
use delaycast_core::interpret::aggregate;
use delaycast_core::nn::ParamStore;
use delaycast_core::scenario::{generate, ScenarioConfig, TmiCause};
use delaycast_core::tensor::gradcheck;
use delaycast_core::tft::{Tft, TftConfig};
use delaycast_core::training::{fit, mse_graph, pinball_loss, TrainConfig};
use delaycast_core::wx::{solve_geometry_layers, CodecConfig, WeatherGrid, WxCodec};
use delaycast_core::{seed, Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn tensor(shape: &[usize], s: u64) -> Tensor {
    let mut rng = seed::rng(s, "prop");
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matmul_shape_law_and_gradient(b in 1usize..3, m in 1usize..4, k in 1usize..4, n in 1usize..4, s in any::<u64>()) {
        let inputs = [tensor(&[b, m, k], s), tensor(&[k, n], s ^ 1)];
        let mut g = Graph::new();
        let x = g.constant(inputs[0].clone());
        let w = g.constant(inputs[1].clone());
        let y = g.matmul(x, w).unwrap();
        prop_assert_eq!(g.shape(y), &[b, m, n]);
        let err = gradcheck::check(&inputs, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let sq = g.mul(y, y)?;
            Ok(g.mean_all(sq))
        }).unwrap();
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(rows in 1usize..5, cols in 1usize..7, shift in -30.0f64..30.0, s in any::<u64>()) {
        let x = tensor(&[rows, cols], s);
        let shifted = Tensor::new(vec![rows, cols], x.data().iter().map(|v| v + shift).collect()).unwrap();
        let mut g = Graph::new();
        let a = g.constant(x);
        let b = g.constant(shifted);
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        for row in g.data(sa).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for (p, q) in g.data(sa).iter().zip(g.data(sb)) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv(
        h in 3usize..12, w in 3usize..12, cin in 1usize..4, cout in 1usize..4, stride in 1usize..3, s in any::<u64>()
    ) {
        let x = tensor(&[h, w, cin], s);
        let k = tensor(&[3, 3, cin, cout], s ^ 2);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let kv = g.constant(k);
        let cx = g.conv2d(xv, kv, stride).unwrap();
        let (oh, ow) = (g.shape(cx)[0], g.shape(cx)[1]);
        let y = tensor(&[oh, ow, cout], s ^ 3);
        let pad = (h - ((oh - 1) * stride + 3), w - ((ow - 1) * stride + 3));
        let yv = g.constant(y.clone());
        let ty = g.conv2d_transpose(yv, kv, stride, pad).unwrap();
        prop_assert_eq!(g.shape(ty), &[h, w, cin]);
        let lhs = dot(g.data(cx), y.data());
        let rhs = dot(x.data(), g.data(ty));
        prop_assert!((lhs - rhs).abs() < 1e-10, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn pinball_at_median_is_half_absolute_error(y in -1e3f64..1e3, y_hat in -1e3f64..1e3) {
        prop_assert!((pinball_loss(y, y_hat, 0.5) - 0.5 * (y - y_hat).abs()).abs() < 1e-9);
    }

    #[test]
    fn moving_average_is_shift_equivariant(xs in prop::collection::vec(-100.0f64..100.0, 6..40), lag in 1usize..5, window in 1usize..5) {
        let ma = moving_average(&xs, window).unwrap();
        let shifted: Vec<f64> = std::iter::repeat(0.0).take(lag).chain(xs.iter().copied()).collect();
        let ma_shifted = moving_average(&shifted, window).unwrap();
        for i in window - 1..xs.len() {
            prop_assert!((ma_shifted[i + lag] - ma[i]).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn codec_round_trip_shape_and_mean_pooled_feature(h in 63usize..110, w in 63usize..110, s in any::<u64>()) {
        let mut store = ParamStore::new();
        let codec = WxCodec::new(&mut store, &mut seed::rng(s, "codec"), &CodecConfig { channels: vec![2, 2, 2, 2, 3] }).unwrap();
        let mut rng = seed::rng(s, "grid");
        let n = h * w;
        let grid = WeatherGrid::new(
            0, h, w,
            (0..n).map(|_| rng.random_range(0..=6)).collect(),
            (0..n).map(|_| rng.random_range(0..=14)).collect(),
        ).unwrap();
        let out = codec.reconstruct(&store, &grid).unwrap();
        prop_assert_eq!(out.shape(), &[h, w, 2]);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let geom = solve_geometry_layers(h, w, 5).unwrap();
        let latent = codec.encode_grid(&store, &grid).unwrap();
        let (lh, lw) = geom.latent();
        prop_assert_eq!(latent.block.shape(), &[lh, lw, 3]);
        for c in 0..3 {
            let mean = latent.block.data().iter().skip(c).step_by(3).sum::<f64>() / (lh * lw) as f64;
            prop_assert!((latent.feature[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn tft_weights_are_simplices_and_forecasts_repeat(k in 1usize..4, tau in 1usize..4, s in any::<u64>()) {
        let cfg = tiny_config(k, tau);
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        let m1 = Tft::new(&mut s1, cfg.clone(), s).unwrap();
        let m2 = Tft::new(&mut s2, cfg.clone(), s).unwrap();
        let samples: Vec<EncodedSample> = (0..3).map(|i| sample(&cfg, s.wrapping_add(i))).collect();
        let refs: Vec<&EncodedSample> = samples.iter().collect();
        let sets = m1.forecast(&s1, &refs, 2).unwrap();
        prop_assert_eq!(&sets, &m2.forecast(&s2, &refs, 2).unwrap());
        let sch = &cfg.schema;
        for set in &sets {
            for row in set.past_weights.chunks(sch.n_past())
                .chain(set.future_weights.chunks(sch.n_future()))
                .chain(set.static_weights.chunks(sch.static_vars.len()))
            {
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let summary = aggregate(&sets, &cfg).unwrap();
        let mut reversed = sets.clone();
        reversed.reverse();
        let other = aggregate(&reversed, &cfg).unwrap();
        for (a, b) in summary.encoder_vars.iter().zip(&other.encoder_vars) {
            prop_assert!((a.1 - b.1).abs() < 1e-12);
        }
        for group in [&summary.encoder_vars, &summary.decoder_vars, &summary.static_vars] {
            prop_assert!((group.iter().map(|v| v.1).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        prop_assert!(summary.attention_by_lag.iter().all(|(_, a)| *a >= 0.0));
    }
}

fn tiny_config(k: usize, tau: usize) -> TftConfig {
    let mut cfg = TftConfig::new(VariableSchema::delay());
    cfg.d = 4;
    cfg.heads = 2;
    cfg.k = k;
    cfg.tau = tau;
    cfg
}

fn sample(cfg: &TftConfig, s: u64) -> EncodedSample {
    let sch = &cfg.schema;
    let mut rng = seed::rng(s, "sample");
    let (ko, to) = (sch.known_offset(), sch.target_offset());
    let rows: Vec<Vec<f64>> = (0..cfg.k + cfg.tau)
        .map(|_| {
            let mut r: Vec<f64> = (0..sch.n_past()).map(|_| rng.random::<f64>()).collect();
            for (i, v) in sch.known.iter().enumerate() {
                if let VarKind::Categorical { cardinality: n } | VarKind::Cyclic { period: n } = v.kind {
                    r[ko + i] = rng.random_range(0..n) as f64;
                }
            }
            r
        })
        .collect();
    EncodedSample {
        static_ids: vec![(s % 4) as usize],
        past: rows[..cfg.k].concat(),
        future: rows[cfg.k..].iter().flat_map(|r| r[ko..to].to_vec()).collect(),
        labels: rows[cfg.k..].iter().flat_map(|r| r[to..].to_vec()).collect(),
    }
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn delays_follow_weather_and_overload() {
    let cfg = ScenarioConfig {
        steps: 3000,
        ..ScenarioConfig::default()
    };
    let s = generate(&cfg).unwrap();
    for (a, site) in cfg.airports.iter().enumerate() {
        let rs: Vec<_> = s.records.iter().filter(|r| r.airport == site.airport).collect();
        let delay: Vec<f64> = rs.iter().map(|r| r.dep_delay).collect();
        let overage: Vec<f64> = rs.iter().map(|r| (r.dep_demand - r.adr).max(0.0)).collect();
        assert!(corr(&s.truth.severity[a], &delay) > 0.0, "{}", site.airport);
        assert!(corr(&overage, &delay) > 0.0, "{}", site.airport);
    }
}

#[test]
fn tmi_flags_match_their_triggers() {
    let cfg = ScenarioConfig {
        steps: 3000,
        ..ScenarioConfig::default()
    };
    let s = generate(&cfg).unwrap();
    let th = &cfg.tmi;
    let mut raised = 0;
    for r in &s.records {
        for (j, &flag) in r.tmi.iter().enumerate() {
            assert!(flag <= 1);
            if flag == 0 {
                continue;
            }
            raised += 1;
            let act = s
                .truth
                .tmi
                .iter()
                .find(|a| a.t == r.t && a.tmi == j && (a.airport.is_none() || a.airport == Some(r.airport)))
                .unwrap_or_else(|| panic!("flag {j} at t={} has no trigger", r.t));
            let threshold = match (j, act.cause) {
                (0..=8, _) => th.fca_severity,
                (9 | 10, _) => th.zny_severity,
                (11, TmiCause::LocalSeverity) => th.gdp_severity,
                (11, TmiCause::DemandRatio) => th.gdp_ratio,
                (12, _) => th.gs_severity,
                (13, _) => th.reroute_severity,
                _ => 2.0 * th.reroute_severity,
            };
            assert!(act.value > threshold, "flag {j}: {} <= {threshold}", act.value);
        }
    }
    assert!(raised > 0);
}

#[test]
fn seeded_fit_repeats_and_keeps_the_best_epoch() {
    // Least squares on a fixed design, scored on a held-out slice.
    let x = tensor(&[40, 3], 1);
    let w_true = [0.5, -1.0, 2.0];
    let y: Vec<f64> = x.data().chunks(3).map(|r| dot(r, &w_true)).collect();
    let run = || {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[3, 1]).with_requires_grad(true)).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 8,
            lr: 0.05,
            patience: 15,
            seed: 3,
            ..TrainConfig::default()
        };
        let loss = |g: &mut Graph, p: &ParamStore, idx: &[usize]| {
            let rows: Vec<f64> = idx.iter().flat_map(|&i| x.data()[i * 3..i * 3 + 3].to_vec()).collect();
            let xb = g.constant(Tensor::new(vec![idx.len(), 3], rows)?);
            let yb = g.constant(Tensor::new(vec![idx.len(), 1], idx.iter().map(|&i| y[i]).collect())?);
            let w = p.bind(g, p.id("w").unwrap());
            let pred = g.matmul(xb, w)?;
            mse_graph(g, pred, yb)
        };
        let val: Vec<usize> = (30..40).collect();
        let hist = fit(&mut store, &cfg, 30, loss, |p| {
            let mut g = Graph::new();
            let l = loss(&mut g, p, &val)?;
            Ok(g.data(l)[0])
        })
        .unwrap();
        let mut g = Graph::new();
        let l = loss(&mut g, &store, &val).unwrap();
        let final_val = g.data(l)[0];
        (hist, final_val, store)
    };
    let (h1, v1, s1) = run();
    let (h2, _, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(s1.by_name("w").unwrap().data(), s2.by_name("w").unwrap().data());
    let best = h1.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(v1, best);
    assert_eq!(h1.val_loss[h1.best_epoch], best);
}
