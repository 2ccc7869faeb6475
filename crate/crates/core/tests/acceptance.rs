//! Acceptance criteria, one line of output per criterion.
//!
//! Runs without the libtest harness: `cargo test --test acceptance`, or
//! `cargo test --test acceptance -- 3 10` to run a subset by number.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;

use svcavail::availability::{evaluate_stage1, train_stage1, Stage1Config};
use svcavail::duration::{evaluate_stage2, forecast, train_stage2, Stage2Config};
use svcavail::features::{build_instances, EncodingConfig, EncodingOptions, HolidayCalendar};
use svcavail::geo_cluster::{
    gap_statistic, haversine, haversine_deg, kmeans_haversine, GapStatConfig, GeoPoint, KMeansConfig,
    EARTH_RADIUS_KM,
};
use svcavail::nn::{
    batch_norm, grad_check, one_hot, scheduler_rate, LayerSpec, Loss, Network, NetworkSpec, SchedulerConfig,
    Tensor,
};
use svcavail::nn::{GradCheckOptions, Mode};
use svcavail::pipeline::{sha256_hex, Manifest};
use svcavail::rng::seeded;
use svcavail::series_gaf::{
    gadf, gasf, make_label, paa, perturb_zero_series, rescale_to_unit, GafOptions, MultiStepLabel,
};
use svcavail::synthetic::{
    default_hotspots, gaf_pairs, generate_trace, geo_blobs, two_service_trace, write_trace_csv, TraceSpec,
};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_s),
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1
fn haversine_oracle() -> Outcome {
    let t = Instant::now();
    let r = EARTH_RADIUS_KM;
    let pi = std::f64::consts::PI;
    let rel = |d: f64, want: f64| (d - want).abs() / want;
    let anti = [((0.0, 0.0), (0.0, 180.0)), ((90.0, 0.0), (-90.0, 0.0)), ((30.0, 40.0), (-30.0, -140.0))];
    for ((a, b), (c, d)) in anti {
        let got = haversine_deg(a, b, c, d, r);
        ensure(rel(got, pi * r) < 1e-9, format!("antipodal ({a},{b})-({c},{d}) gave {got}"))?;
    }
    let quarter = [((0.0, 0.0), (0.0, 90.0)), ((0.0, 0.0), (90.0, 0.0)), ((0.0, -45.0), (0.0, 45.0))];
    for ((a, b), (c, d)) in quarter {
        let got = haversine_deg(a, b, c, d, r);
        ensure(rel(got, pi * r / 2.0) < 1e-9, format!("quarter circle ({a},{b})-({c},{d}) gave {got}"))?;
    }
    let mut rng = seeded(11);
    for _ in 0..1000 {
        let p = GeoPoint::new(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0)).map_err(err)?;
        let q = GeoPoint::new(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..=180.0)).map_err(err)?;
        let pq = haversine(&p, &q, r).map_err(err)?;
        let qp = haversine(&q, &p, r).map_err(err)?;
        ensure(pq == qp, format!("asymmetric: {pq} vs {qp}"))?;
        ensure(haversine(&p, &p, r).map_err(err)? == 0.0, "d(p, p) != 0")?;
        ensure((0.0..=pi * r * (1.0 + 1e-12)).contains(&pq), format!("out of range: {pq}"))?;
    }
    within(t.elapsed(), 1)?;
    Ok("antipodes, quarter circles and 1000 random pairs".into())
}

fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let c2 = |n: f64| n * (n - 1.0) / 2.0;
    let index: f64 = table.values().map(|&n| c2(n)).sum();
    let sa: f64 = rows.values().map(|&n| c2(n)).sum();
    let sb: f64 = cols.values().map(|&n| c2(n)).sum();
    let expected = sa * sb / c2(a.len() as f64);
    let max = (sa + sb) / 2.0;
    (index - expected) / (max - expected)
}

// 2
fn clustering_recovery() -> Outcome {
    let t = Instant::now();
    let centers = default_hotspots();
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = haversine(&centers[i], &centers[j], EARTH_RADIUS_KM).map_err(err)?;
            ensure(d >= 500.0, format!("centers {i} and {j} only {d:.0} km apart"))?;
        }
    }
    let (points, truth) = geo_blobs(&centers, 100, 5.0, 21).map_err(err)?;
    let fit = kmeans_haversine(&points, &KMeansConfig::new(3, 5)).map_err(err)?;
    let ari = adjusted_rand_index(&fit.assignments, &truth);
    ensure(ari >= 0.99, format!("ARI {ari}"))?;
    for w in fit.cost_history.windows(2) {
        ensure(w[1] <= w[0], format!("cost rose from {} to {}", w[0], w[1]))?;
    }
    within(t.elapsed(), 5)?;
    Ok(format!("ARI {ari:.4} over {} iterations", fit.iterations))
}

// 3
fn gap_statistic_choice() -> Outcome {
    let t = Instant::now();
    let centers = default_hotspots();
    let mut chosen = Vec::new();
    for seed in 0..10u64 {
        let (points, _) = geo_blobs(&centers, 100, 5.0, 100 + seed).map_err(err)?;
        let r = gap_statistic(&points, &GapStatConfig::new((1..=8).collect(), 10, seed)).map_err(err)?;
        chosen.push(r.chosen_k);
    }
    let hits = chosen.iter().filter(|&&k| k == 3).count();
    ensure(hits >= 8, format!("k = 3 in {hits} of 10 seeds: {chosen:?}"))?;
    within(t.elapsed(), 60)?;
    Ok(format!("k = 3 in {hits} of 10 seeds"))
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Worst relative error over parameters and inputs, from central differences.
fn worst_gradient(spec: NetworkSpec, x: Tensor<f64>, y: Tensor<f64>, loss: Loss) -> Result<f64, String> {
    let opts = GradCheckOptions::default();
    let mut net = Network::<f64>::build(&spec, 3).map_err(err)?;
    let params = grad_check(&mut net, &x, &y, loss, &opts).map_err(err)?;
    net.zero_grad();
    let out = net.forward(&x, Mode::Train).map_err(err)?;
    let dx = net.backward(&loss.grad(&out, &y).map_err(err)?).map_err(err)?;
    let mut worst = params.max_rel_error;
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += opts.h;
        let plus = loss.value(&net.forward(&xp, Mode::Train).map_err(err)?, &y).map_err(err)?;
        xp.data_mut()[i] -= 2.0 * opts.h;
        let minus = loss.value(&net.forward(&xp, Mode::Train).map_err(err)?, &y).map_err(err)?;
        let numeric = (plus - minus) / (2.0 * opts.h);
        let a = dx.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor));
    }
    Ok(worst)
}

// 4
fn gradient_integrity() -> Outcome {
    let t = Instant::now();
    let img = vec![2, 6, 6];
    let flat = |layers: Vec<LayerSpec>, input: Vec<usize>, out: usize| {
        let mut layers = layers;
        let mut spec = NetworkSpec {
            input_shape: input,
            layers: layers.clone(),
        };
        let n: usize = spec.output_shape().expect("shape").iter().product();
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Dense { inputs: n, outputs: out });
        spec.layers = layers;
        spec
    };
    let conv = LayerSpec::Conv2d {
        in_channels: 2,
        out_channels: 3,
        kernel: (3, 3),
        stride: 2,
        padding: 1,
    };
    let cases: Vec<(&str, NetworkSpec, Vec<usize>)> = vec![
        ("dense", flat(vec![LayerSpec::Dense { inputs: 4, outputs: 5 }], vec![4], 2), vec![5, 4]),
        ("leaky_relu", flat(vec![LayerSpec::LeakyRelu { leak: 0.02 }], vec![4], 2), vec![5, 4]),
        ("relu", flat(vec![LayerSpec::Relu], vec![4], 2), vec![5, 4]),
        ("batch_norm", flat(vec![LayerSpec::batch_norm(4)], vec![4], 2), vec![5, 4]),
        ("batch_norm_2d", flat(vec![LayerSpec::batch_norm(2)], img.clone(), 2), vec![3, 2, 6, 6]),
        ("conv2d", flat(vec![conv.clone()], img.clone(), 2), vec![2, 2, 6, 6]),
        (
            "max_pool",
            flat(vec![LayerSpec::MaxPool { window: 3, stride: 2, padding: 1 }], img.clone(), 2),
            vec![2, 2, 6, 6],
        ),
        ("avg_pool", flat(vec![LayerSpec::AvgPool { window: 2, stride: 2 }], img.clone(), 2), vec![2, 2, 6, 6]),
        ("global_avg_pool", flat(vec![LayerSpec::GlobalAvgPool], img.clone(), 2), vec![2, 2, 6, 6]),
        (
            "residual_block",
            flat(
                vec![LayerSpec::ResidualBlock {
                    in_channels: 2,
                    out_channels: 3,
                    stride: 2,
                    batch_norm: true,
                }],
                img.clone(),
                2,
            ),
            vec![3, 2, 6, 6],
        ),
    ];
    let mut worst = 0.0f64;
    for (name, spec, shape) in cases {
        let out: usize = spec.output_shape().map_err(err)?.iter().product();
        let x = random(&shape, 7);
        let y = random(&[shape[0], out], 8);
        let e = worst_gradient(spec, x, y, Loss::MeanSquared)?;
        ensure(e < 1e-4, format!("{name}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    let softmax = NetworkSpec {
        input_shape: vec![4],
        layers: vec![LayerSpec::Dense { inputs: 4, outputs: 3 }, LayerSpec::Softmax],
    };
    let dense_bn = NetworkSpec {
        input_shape: vec![3],
        layers: vec![
            LayerSpec::Dense { inputs: 3, outputs: 6 },
            LayerSpec::LeakyRelu { leak: 0.01 },
            LayerSpec::batch_norm(6),
            LayerSpec::Dense { inputs: 6, outputs: 5 },
            LayerSpec::LeakyRelu { leak: 0.01 },
            LayerSpec::batch_norm(5),
            LayerSpec::Dense { inputs: 5, outputs: 3 },
            LayerSpec::Softmax,
        ],
    };
    let conv_net = NetworkSpec {
        input_shape: vec![1, 8, 8],
        layers: vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: (3, 3),
                stride: 1,
                padding: 1,
            },
            LayerSpec::batch_norm(2),
            LayerSpec::Relu,
            LayerSpec::MaxPool { window: 2, stride: 2, padding: 0 },
            LayerSpec::ResidualBlock {
                in_channels: 2,
                out_channels: 2,
                stride: 1,
                batch_norm: true,
            },
            LayerSpec::ResidualBlock {
                in_channels: 2,
                out_channels: 3,
                stride: 2,
                batch_norm: true,
            },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense { inputs: 3, outputs: 3 },
            LayerSpec::Softmax,
        ],
    };
    let labels = [0, 2, 1, 1, 0, 2];
    for (name, spec, shape) in [
        ("softmax + cross-entropy", softmax, vec![6, 4]),
        ("dense + batch norm + leaky relu", dense_bn, vec![6, 3]),
        ("conv + pool + residual + softmax", conv_net, vec![6, 1, 8, 8]),
    ] {
        let y = one_hot(&labels, 3).map_err(err)?;
        let e = worst_gradient(spec, random(&shape, 9), y, Loss::CrossEntropy)?;
        ensure(e < 1e-4, format!("{name}: relative error {e:e}"))?;
        worst = worst.max(e);
    }
    within(t.elapsed(), 120)?;
    Ok(format!("worst relative error {worst:.2e}"))
}

// 5
fn batch_norm_contract() -> Outcome {
    let t = Instant::now();
    let eps = 1e-5;
    let mut rng = seeded(5);
    for trial in 0..20 {
        let f = 7;
        let scale: Vec<f64> = (0..f).map(|_| rng.random_range(0.01..20.0)).collect();
        let shift: Vec<f64> = (0..f).map(|_| rng.random_range(-50.0..50.0)).collect();
        let data: Vec<f64> = (0..64 * f)
            .map(|i| shift[i % f] + scale[i % f] * rng.random_range(-1.0..1.0))
            .collect();
        let x = Tensor::new(vec![64, f], data).map_err(err)?;
        let y = batch_norm(&x, &vec![1.0; f], &vec![0.0; f], eps).map_err(err)?;
        for j in 0..f {
            let col: Vec<f64> = (0..64).map(|i| x.data()[i * f + j]).collect();
            let mu = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 64.0;
            let out: Vec<f64> = (0..64).map(|i| y.data()[i * f + j]).collect();
            let m = out.iter().sum::<f64>() / 64.0;
            let v = out.iter().map(|o| (o - m) * (o - m)).sum::<f64>() / 64.0;
            ensure(m.abs() < 1e-9, format!("trial {trial} feature {j}: mean {m:e}"))?;
            let want = var / (var + eps);
            ensure((v - want).abs() < 1e-9, format!("trial {trial} feature {j}: var {v} want {want}"))?;
        }
    }
    within(t.elapsed(), 1)?;
    Ok("20 batches of 64".into())
}

// 6
fn gaf_algebra() -> Outcome {
    let t = Instant::now();
    let mut rng = seeded(6);
    for w in 0..1000 {
        let n = rng.random_range(2..=32);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let x = rescale_to_unit(&raw);
        let s = gasf(&x).map_err(err)?;
        let d = gadf(&x).map_err(err)?;
        for i in 0..n {
            let diag = 2.0 * x[i] * x[i] - 1.0;
            ensure((s.get(i, i) - diag).abs() < 1e-12, format!("window {w}: diagonal {i}"))?;
            ensure(d.get(i, i) == 0.0, format!("window {w}: gadf diagonal {i}"))?;
            for j in 0..n {
                ensure(s.get(i, j) == s.get(j, i), format!("window {w}: gasf asymmetric at {i},{j}"))?;
                ensure(d.get(i, j) == -d.get(j, i), format!("window {w}: gadf not antisymmetric at {i},{j}"))?;
                let trig = (x[i].acos() + x[j].acos()).cos();
                ensure((s.get(i, j) - trig).abs() < 1e-12, format!("window {w}: trig form at {i},{j}"))?;
                let trig_d = (x[i].acos() - x[j].acos()).sin();
                ensure((d.get(i, j) - trig_d).abs() < 1e-12, format!("window {w}: gadf trig form at {i},{j}"))?;
                for v in [s.get(i, j), d.get(i, j)] {
                    ensure((-1.0..=1.0).contains(&v), format!("window {w}: entry {v} outside [-1, 1]"))?;
                }
            }
        }
    }
    within(t.elapsed(), 5)?;
    Ok("1000 windows".into())
}

// 7
fn label_codec() -> Outcome {
    let t = Instant::now();
    for gamma in 1..=3 {
        for c in 0..1usize << gamma {
            let l = MultiStepLabel::from_class(c, gamma).map_err(err)?;
            let future: Vec<f64> = l.bits().iter().map(|&b| f64::from(b)).collect();
            let back = make_label(&future).map_err(err)?;
            ensure(back.class_index() == c && back == l, format!("gamma {gamma}: class {c} did not round-trip"))?;
        }
    }
    let order = ["000", "100", "010", "110", "001", "101", "011", "111"];
    for (c, s) in order.iter().enumerate() {
        let future: Vec<f64> = s.chars().map(|ch| if ch == '1' { 1.0 } else { 0.0 }).collect();
        let got = make_label(&future).map_err(err)?.class_index();
        ensure(got == c, format!("{s} encoded as {got}, expected {c}"))?;
    }
    within(t.elapsed(), 1)?;
    Ok("gamma 1..=3 round-trip, bit order 000..111 -> 0..7".into())
}

// 8
fn scheduler_rates() -> Outcome {
    let cfg = SchedulerConfig {
        alpha0: 0.1,
        delta: 0.5,
        drop: 10,
    };
    let got = [scheduler_rate(&cfg, 0), scheduler_rate(&cfg, 10), scheduler_rate(&cfg, 25)];
    ensure(got == [0.1, 0.05, 0.025], format!("rates {got:?}"))?;
    Ok(format!("{got:?}"))
}

// 9
fn stage1_overfit() -> Outcome {
    let t = Instant::now();
    let records = two_service_trace(200, 9).map_err(err)?;
    let fit = kmeans_haversine(
        &records.iter().map(|r| r.point).collect::<Vec<_>>(),
        &KMeansConfig::new(2, 9),
    )
    .map_err(err)?;
    let set = build_instances(&records, &fit.model, &HolidayCalendar::default());
    ensure(set.instances.len() == 200, format!("{} instances", set.instances.len()))?;
    let fvs: Vec<_> = set.instances.iter().map(|i| i.features).collect();
    let enc = EncodingConfig::fit(&fvs, 2, EncodingOptions::default()).map_err(err)?;
    let cfg = Stage1Config {
        batch_size: 32,
        learning_rate: 0.05,
        max_epochs: 500,
        patience: 500,
        seed: 9,
        ..Stage1Config::default()
    };
    let run = || train_stage1::<f64>(&set.instances, &[], enc.clone(), fit.model.clone(), set.vocabulary.clone(), &cfg);
    let mut a = run().map_err(err)?;
    let mut b = run().map_err(err)?;
    let ev = evaluate_stage1(&a.model, &set.instances).map_err(err)?;
    ensure(ev.error_rate < 0.05, format!("training error {}", ev.error_rate))?;
    ensure(a.history == b.history, "training histories differ between runs")?;
    ensure(
        a.model.network.named_tensors() == b.model.network.named_tensors(),
        "weights differ between runs",
    )?;
    within(t.elapsed(), 180)?;
    Ok(format!("training error {:.3} after {} epochs, runs identical", ev.error_rate, a.history.len()))
}

// 10
fn stage2_overfit() -> Outcome {
    let t = Instant::now();
    let pairs = gaf_pairs(100, 3, 32, 10).map_err(err)?;
    let cfg = Stage2Config {
        gamma: 3,
        input_size: 32,
        width_factor: 0.125,
        scheduler: SchedulerConfig {
            alpha0: 0.05,
            delta: 0.5,
            drop: 40,
        },
        max_epochs: 200,
        patience: 200,
        seed: 10,
        ..Stage2Config::default()
    };
    let trained = train_stage2::<f32>(&pairs, &[], &cfg).map_err(err)?;
    let mut present = [false; 8];
    for p in &pairs {
        present[p.label.class_index()] = true;
    }
    for c in trained.augmented.keys() {
        present[*c] = true;
    }
    ensure(present.iter().all(|&p| p), format!("classes present: {present:?}"))?;
    let ev = evaluate_stage2(&trained.model, &pairs).map_err(err)?;
    let mut wrong = 0;
    for p in &pairs {
        let f = forecast(&trained.model, &p.pair).map_err(err)?;
        wrong += usize::from(f.label.class_index() != p.label.class_index());
    }
    ensure(
        wrong == ev.errors && ev.total == pairs.len() && ev.error_rate == wrong as f64 / pairs.len() as f64,
        format!("evaluation counted {} errors, independent pass {wrong}", ev.errors),
    )?;
    let accuracy = 1.0 - ev.error_rate;
    ensure(accuracy >= 0.95, format!("training accuracy {accuracy}"))?;
    within(t.elapsed(), 600)?;
    Ok(format!(
        "training accuracy {accuracy:.3} after {} epochs in {:.0}s",
        trained.history.len(),
        t.elapsed().as_secs_f64()
    ))
}

const SUBCOMMANDS: [&str; 6] = ["cluster", "featurize", "train-availability", "build-series", "encode-gaf", "train-duration"];

fn run_chain(config: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_svcavail");
    let mut steps: Vec<Vec<String>> = SUBCOMMANDS.iter().map(|s| vec![s.to_string()]).collect();
    steps.push(
        ["forecast", "--service", "svc00", "--cluster", "0", "--at", "2024-03-04T09:00:00"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    for args in steps {
        let out = Command::new(bin)
            .args(&args)
            .arg("--config")
            .arg(config)
            .output()
            .map_err(err)?;
        ensure(
            out.status.success(),
            format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()),
        )?;
    }
    Ok(())
}

fn output_digests(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut all = BTreeMap::new();
    for sub in SUBCOMMANDS.iter().chain(["forecast"].iter()) {
        let m = Manifest::load(&dir.join(format!("{sub}.manifest.toml"))).map_err(err)?;
        for f in m.outputs {
            let now = sha256_hex(&std::fs::read(&f.path).map_err(err)?);
            ensure(now == f.sha256, format!("{} does not match its manifest", f.path))?;
            all.insert(f.path, f.sha256);
        }
    }
    Ok(all)
}

// 11
fn end_to_end() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let records = generate_trace(&TraceSpec::default()).map_err(err)?;
    write_trace_csv(&dir.path().join("trace.csv"), &records).map_err(err)?;
    let config = dir.path().join("pipeline.toml");
    std::fs::write(
        &config,
        r#"[paths]
input = "trace.csv"
output_dir = "out"

[seeds]
cluster = 1
split = 2
stage1 = 3
stage2 = 4

[cluster]
k_max = 6
b = 5

[stage1]
max_epochs = 40

[series]
window = 64
stride = 4
gamma = 3

[gaf]
paa = 32

[stage2]
input_size = 32
width_factor = 0.125
max_epochs = 4
"#,
    )
    .map_err(err)?;
    run_chain(&config)?;
    let first = output_digests(&dir.path().join("out"))?;
    run_chain(&config)?;
    let second = output_digests(&dir.path().join("out"))?;
    ensure(first.len() >= 10, format!("only {} outputs recorded", first.len()))?;
    for (path, sha) in &first {
        ensure(second.get(path) == Some(sha), format!("{path} changed on rerun"))?;
    }
    within(t.elapsed(), 900)?;
    Ok(format!("{} artifacts reproduced in {:.0}s", first.len(), t.elapsed().as_secs_f64()))
}

// 12
fn paa_and_rescale() -> Outcome {
    let mut rng = seeded(12);
    for _ in 0..200 {
        let m = rng.random_range(1..=8);
        let k = m * rng.random_range(1..=8);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p = paa(&w, m).map_err(err)?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ensure((mean(&p) - mean(&w)).abs() < 1e-12, format!("paa mean drift for k {k}, m {m}"))?;
        if w.iter().any(|&v| v != w[0]) {
            let x = rescale_to_unit(&w);
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (xi, wi) in x.iter().zip(&w) {
                ensure(*wi != lo || *xi == -1.0, "minimum not mapped to -1")?;
                ensure(*wi != hi || *xi == 1.0, "maximum not mapped to +1")?;
                ensure((-1.0..=1.0).contains(xi), format!("{xi} outside [-1, 1]"))?;
            }
        }
    }
    for c in [0.0, 1.0, -2.5] {
        ensure(rescale_to_unit(&[c; 9]) == vec![0.0; 9], format!("constant {c} window not all zeros"))?;
    }
    let eps = GafOptions::default().perturb_eps;
    ensure(eps == 1e-3, format!("default epsilon {eps}"))?;
    ensure(perturb_zero_series(&[0.0; 5], eps) == vec![1e-3; 5], "all-zero window not perturbed")?;
    let sparse = [0.0, 1.0, 0.0, 0.0];
    ensure(perturb_zero_series(&sparse, eps) == sparse.to_vec(), "non-zero window perturbed")?;
    Ok("paa means, extremes, constants and the epsilon rule".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        (1, "haversine oracle", haversine_oracle),
        (2, "clustering recovery", clustering_recovery),
        (3, "gap statistic", gap_statistic_choice),
        (4, "gradient integrity", gradient_integrity),
        (5, "batch-norm contract", batch_norm_contract),
        (6, "GAF algebra", gaf_algebra),
        (7, "label codec", label_codec),
        (8, "scheduler", scheduler_rates),
        (9, "stage-1 overfit", stage1_overfit),
        (10, "stage-2 overfit", stage2_overfit),
        (11, "end-to-end pipeline", end_to_end),
        (12, "PAA and rescale", paa_and_rescale),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg} [{secs:.2}s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {msg} [{secs:.2}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
