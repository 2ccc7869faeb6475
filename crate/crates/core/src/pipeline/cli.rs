//! The `svcavail` command line.
//!
//! Every subcommand reads the pipeline config, works inside
//! `paths.output_dir` and writes `<subcommand>.manifest.toml` there.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use clap::{Args, CommandFactory, Parser, Subcommand};

use super::config::PipelineConfig;
use super::container::{
    cluster_container, cluster_from_container, stage1_container, stage1_from_container, stage2_container,
    stage2_from_container, ArtifactType, ModelContainer, WindowEncoding,
};
use super::ingest::{dedup_records, filter_rare_services, ingest, split, DatasetSchema};
use super::manifest::{FileDigest, Manifest};
use crate::availability::{available_services, evaluate_stage1, predict_availability, train_stage1};
use crate::duration::{evaluate_stage2, forecast, train_stage2};
use crate::error::{Error, Result};
use crate::features::{build_instances, EncodingConfig, FeatureVector, HolidayCalendar, ServiceVocabulary, TraceRecord, TrainingInstance};
use crate::geo_cluster::{gap_statistic, kmeans_haversine, ClusterModel, GapStatConfig, GeoPoint, InitStrategy, KMeansConfig};
use crate::rng::{permutation, seeded, sub_seed};
use crate::scalar::{Precision, Scalar};
use crate::series_gaf::io::{pairs_to_tensor, read_tensor_file, tensor_to_pairs, write_png, write_tensor_file};
use crate::series_gaf::{build_all_series, encode_window, roll_windows_upto, GafImagePair, LabeledPair, MultiStepLabel, PresenceSeries, WindowMeta};

pub const CLUSTERS_FILE: &str = "clusters.svcm";
pub const GAP_FILE: &str = "gap.csv";
pub const REJECTS_FILE: &str = "rejects.csv";
pub const INSTANCES_FILE: &str = "instances.csv";
pub const VOCABULARY_FILE: &str = "vocabulary.txt";
pub const STAGE1_FILE: &str = "stage1.svcm";
pub const STAGE1_HISTORY_FILE: &str = "stage1_history.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const WINDOWS_FILE: &str = "windows.csv";
pub const GAF_LABELS_FILE: &str = "gaf_labels.csv";
pub const STAGE2_FILE: &str = "stage2.svcm";
pub const STAGE2_HISTORY_FILE: &str = "stage2_history.csv";
pub const EVAL_FILE: &str = "eval.csv";

const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn gaf_file(split: &str) -> String {
    format!("gaf_{split}.gaft")
}

pub fn manifest_file(subcommand: &str) -> String {
    format!("{subcommand}.manifest.toml")
}

#[derive(Debug, Parser)]
#[command(name = "svcavail", version, about = "Two-stage availability and duration forecasting for crowdsourced services")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select k with the gap statistic and cluster record locations.
    Cluster(Common),
    /// Turn records into stage-1 instances and split them.
    Featurize(Common),
    /// Train the availability classifier.
    TrainAvailability(Common),
    /// Rank services available at a location and time.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        lat: f64,
        #[arg(long, allow_negative_numbers = true)]
        lon: f64,
        /// ISO-8601 local time, e.g. 2024-03-04T10:30:00.
        #[arg(long)]
        time: String,
    },
    /// Build presence series and rolling windows.
    BuildSeries(Common),
    /// Encode windows as GASF/GADF image pairs.
    EncodeGaf(Common),
    /// Train the duration model.
    TrainDuration(Common),
    /// Predict the next γ presence steps of a service in a cluster.
    Forecast {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        service: String,
        #[arg(long)]
        cluster: usize,
        /// ISO-8601 local time; the window ends at the step containing it.
        #[arg(long)]
        at: String,
    },
    /// Score both stages on their test splits.
    Eval(Common),
}

/// Runs one subcommand and returns the process exit status. Failures are
/// reported on stderr as a single `error[category]: detail` line.
pub fn run_subcommand<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let detail = e.kind().as_str().unwrap_or("invalid arguments");
            let first = e.to_string();
            let first = first.lines().next().unwrap_or(detail).trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            eprintln!("{}", Cli::command().render_usage());
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Cluster(c) => cmd_cluster(&Ctx::open(&c.config, "cluster")?),
        Command::Featurize(c) => cmd_featurize(&Ctx::open(&c.config, "featurize")?),
        Command::TrainAvailability(c) => cmd_train_availability(&Ctx::open(&c.config, "train-availability")?),
        Command::Predict { common, lat, lon, time } => cmd_predict(&Ctx::open(&common.config, "predict")?, lat, lon, &time),
        Command::BuildSeries(c) => cmd_build_series(&Ctx::open(&c.config, "build-series")?),
        Command::EncodeGaf(c) => cmd_encode_gaf(&Ctx::open(&c.config, "encode-gaf")?),
        Command::TrainDuration(c) => cmd_train_duration(&Ctx::open(&c.config, "train-duration")?),
        Command::Forecast {
            common,
            service,
            cluster,
            at,
        } => cmd_forecast(&Ctx::open(&common.config, "forecast")?, &service, cluster, &at),
        Command::Eval(c) => cmd_eval(&Ctx::open(&c.config, "eval")?),
    }
}

struct Ctx {
    cfg: PipelineConfig,
    subcommand: &'static str,
    config_path: PathBuf,
}

impl Ctx {
    fn open(config: &Path, subcommand: &'static str) -> Result<Self> {
        let cfg = PipelineConfig::load(config)?;
        let out = &cfg.paths.output_dir;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            cfg,
            subcommand,
            config_path: config.to_path_buf(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn manifest(&self) -> Result<Manifest> {
        let mut m = Manifest::new(self.subcommand, &self.cfg)?;
        m.inputs.push(FileDigest::of(&self.config_path)?);
        Ok(m)
    }

    fn finish(&self, mut m: Manifest, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            m.outputs.push(FileDigest::of(p)?);
        }
        m.write(&self.out(&manifest_file(self.subcommand)))
    }

    /// Reads an artifact from the output directory and records it as input.
    fn input(&self, name: &str, m: &mut Manifest) -> Result<PathBuf> {
        let p = self.out(name);
        if !p.exists() {
            let e = std::io::Error::new(
                std::io::ErrorKind::NotFound,
                "not found; run the subcommand that produces it first",
            );
            return Err(Error::io(&p, e));
        }
        m.inputs.push(FileDigest::of(&p)?);
        Ok(p)
    }

    fn records(&self, m: &mut Manifest) -> Result<(Vec<TraceRecord>, Vec<super::ingest::Reject>)> {
        let schema = match &self.cfg.paths.schema {
            Some(p) => {
                m.inputs.push(FileDigest::of(p)?);
                DatasetSchema::load(p)?
            }
            None => DatasetSchema::default(),
        };
        let input = &self.cfg.paths.input;
        let report = ingest(input, &schema)?;
        m.inputs.push(FileDigest::of(input)?);
        m.value("rows", report.rows as i64);
        m.value("rejected_rows", report.rejects.len() as i64);
        if !report.rejects.is_empty() {
            log::warn!("{} of {} rows rejected", report.rejects.len(), report.rows);
        }
        let mut records = report.records;
        if self.cfg.ingest.dedup {
            records = dedup_records(records);
        }
        let filtered = filter_rare_services(records, self.cfg.ingest.min_count);
        m.value("removed_services", filtered.removed.len() as i64);
        if filtered.records.is_empty() {
            return Err(Error::data(format!(
                "no service has at least min_count = {} records",
                self.cfg.ingest.min_count
            )));
        }
        m.value("records", filtered.records.len() as i64);
        Ok((filtered.records, report.rejects))
    }

    fn calendar(&self, m: &mut Manifest) -> Result<HolidayCalendar> {
        match &self.cfg.paths.holidays {
            Some(p) => {
                m.inputs.push(FileDigest::of(p)?);
                HolidayCalendar::load(p)
            }
            None => Ok(HolidayCalendar::default()),
        }
    }

    fn clusters(&self, m: &mut Manifest) -> Result<ClusterModel> {
        let p = self.input(CLUSTERS_FILE, m)?;
        cluster_from_container(&ModelContainer::load(&p)?.expect(ArtifactType::Cluster)?)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_time(s: &str) -> Result<NaiveDateTime> {
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s.trim(), fmt) {
            return Ok(t);
        }
    }
    Err(Error::validation(format!("time {s:?} is not ISO-8601 (expected e.g. 2024-03-04T10:30:00)")))
}

/// Row-oriented CSV reader returning `(line, fields)` with header checking.
fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bad = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let h = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if h.iter().collect::<Vec<_>>() != header {
        return Err(bad(1, format!("expected header {}", header.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(bad(line, format!("expected {} fields", header.len())));
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("cannot parse {v:?}"),
    })
}

fn split_index(path: &Path, line: usize, name: &str) -> Result<usize> {
    SPLITS.iter().position(|s| *s == name).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line,
        reason: format!("unknown split {name:?}"),
    })
}

// ---------------------------------------------------------------- cluster

fn cmd_cluster(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let (records, rejects) = ctx.records(&mut m)?;
    let c = &ctx.cfg.cluster;
    let seed = ctx.cfg.seeds.cluster;
    let points: Vec<GeoPoint> = records.iter().map(|r| r.point).collect();
    let mut outputs = Vec::new();

    let rejects_path = ctx.out(REJECTS_FILE);
    let mut text = String::from("line,reason\n");
    for r in &rejects {
        text.push_str(&format!("{},\"{}\"\n", r.line, r.reason.replace('"', "'")));
    }
    write_text(&rejects_path, &text)?;
    outputs.push(rejects_path);

    let k = if c.fixed_k > 0 {
        c.fixed_k
    } else {
        let sample: Vec<GeoPoint> = if c.max_points > 0 && points.len() > c.max_points {
            let mut idx = permutation(points.len(), &mut seeded(sub_seed(seed, 1)));
            idx.truncate(c.max_points);
            idx.sort_unstable();
            idx.iter().map(|&i| points[i]).collect()
        } else {
            points.clone()
        };
        let gap_cfg = GapStatConfig {
            k_values: (c.k_min..=c.k_max.min(sample.len())).collect(),
            b: c.b,
            seed,
            max_iter: c.max_iter,
            tol_km: c.tol_km,
            n_init: c.n_init,
            metric: c.metric,
            earth_radius_km: c.earth_radius_km,
        };
        let res = gap_statistic(&sample, &gap_cfg)?;
        let mut text = String::from("k,gap,log_wk,ref_log_wk_mean,ref_log_wk_sd\n");
        for i in 0..res.k_values.len() {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                res.k_values[i], res.gap[i], res.log_wk[i], res.ref_log_wk_mean[i], res.ref_log_wk_sd[i]
            ));
        }
        let gap_path = ctx.out(GAP_FILE);
        write_text(&gap_path, &text)?;
        outputs.push(gap_path);
        m.value("gap_points", sample.len() as i64);
        res.chosen_k
    };
    let fit = kmeans_haversine(
        &points,
        &KMeansConfig {
            k,
            seed: sub_seed(seed, 2),
            max_iter: c.max_iter,
            tol_km: c.tol_km,
            n_init: c.n_init,
            init: InitStrategy::PlusPlus,
            earth_radius_km: c.earth_radius_km,
        },
    )?;
    let path = ctx.out(CLUSTERS_FILE);
    cluster_container(&fit.model)?.save(&path)?;
    outputs.push(path);
    m.value("chosen_k", k as i64);
    m.value("kmeans_cost", fit.cost());
    m.value("kmeans_iterations", fit.iterations as i64);
    println!("chosen_k = {k}");
    ctx.finish(m, &outputs)
}

// -------------------------------------------------------------- featurize

const INSTANCE_HEADER: [&str; 10] = [
    "split",
    "label",
    "cluster_id",
    "lat",
    "lon",
    "time_of_day",
    "day_of_week",
    "is_weekday",
    "is_holiday",
    "month",
];

fn cmd_featurize(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let (records, _) = ctx.records(&mut m)?;
    let clusters = ctx.clusters(&mut m)?;
    let cal = ctx.calendar(&mut m)?;
    let set = build_instances(&records, &clusters, &cal);
    if !set.rejects.is_empty() {
        return Err(Error::data(format!("{} records could not be featurized: {}", set.rejects.len(), set.rejects[0].1)));
    }
    let s = split(&set.instances, ctx.cfg.split.fractions(), ctx.cfg.seeds.split)?;
    let mut text = INSTANCE_HEADER.join(",") + "\n";
    for (name, part) in SPLITS.iter().zip([&s.train, &s.val, &s.test]) {
        for i in part {
            let f = &i.features;
            text.push_str(&format!(
                "{name},{},{},{},{},{},{},{},{},{}\n",
                i.label,
                i.cluster_id,
                f.lat,
                f.lon,
                f.time_of_day,
                f.day_of_week,
                u8::from(f.is_weekday),
                u8::from(f.is_holiday),
                f.month
            ));
        }
    }
    let inst = ctx.out(INSTANCES_FILE);
    write_text(&inst, &text)?;
    let vocab = ctx.out(VOCABULARY_FILE);
    write_text(&vocab, &set.vocabulary.ids().iter().map(|s| format!("{s}\n")).collect::<String>())?;
    m.value("services", set.vocabulary.len() as i64);
    m.value("train", s.train.len() as i64);
    m.value("val", s.val.len() as i64);
    m.value("test", s.test.len() as i64);
    ctx.finish(m, &[inst, vocab])
}

/// Instances of the train, validation and test splits.
fn read_instances(path: &Path) -> Result<[Vec<TrainingInstance>; 3]> {
    let mut out: [Vec<TrainingInstance>; 3] = Default::default();
    for (line, f) in read_csv(path, &INSTANCE_HEADER)? {
        let bit = |v: &str| -> Result<bool> { Ok(field::<u8>(path, line, v)? != 0) };
        let inst = TrainingInstance {
            label: field(path, line, &f[1])?,
            cluster_id: field(path, line, &f[2])?,
            features: FeatureVector {
                lat: field(path, line, &f[3])?,
                lon: field(path, line, &f[4])?,
                time_of_day: field(path, line, &f[5])?,
                day_of_week: field(path, line, &f[6])?,
                is_weekday: bit(&f[7])?,
                is_holiday: bit(&f[8])?,
                month: field(path, line, &f[9])?,
            },
        };
        out[split_index(path, line, &f[0])?].push(inst);
    }
    Ok(out)
}

fn read_vocabulary(path: &Path) -> Result<ServiceVocabulary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(ServiceVocabulary::new(text.lines().filter(|l| !l.is_empty()).map(str::to_string)))
}

// ----------------------------------------------------- train-availability

fn cmd_train_availability(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let [train, val, test] = read_instances(&ctx.input(INSTANCES_FILE, &mut m)?)?;
    let vocab = read_vocabulary(&ctx.input(VOCABULARY_FILE, &mut m)?)?;
    let clusters = ctx.clusters(&mut m)?;
    let fv: Vec<FeatureVector> = train.iter().map(|i| i.features).collect();
    let enc = EncodingConfig::fit(&fv, clusters.k(), ctx.cfg.encoding)?;
    let outputs = match ctx.cfg.stage1.precision {
        Precision::F32 => train_availability::<f32>(ctx, &mut m, [train, val, test], enc, clusters, vocab)?,
        Precision::F64 => train_availability::<f64>(ctx, &mut m, [train, val, test], enc, clusters, vocab)?,
    };
    ctx.finish(m, &outputs)
}

fn train_availability<T: Scalar>(
    ctx: &Ctx,
    m: &mut Manifest,
    [train, val, test]: [Vec<TrainingInstance>; 3],
    enc: EncodingConfig,
    clusters: ClusterModel,
    vocab: ServiceVocabulary,
) -> Result<Vec<PathBuf>> {
    let t = train_stage1::<T>(&train, &val, enc, clusters, vocab, &ctx.cfg.stage1)?;
    let model_path = ctx.out(STAGE1_FILE);
    stage1_container(&t.model)?.save(&model_path)?;
    let mut text = String::from("epoch,learning_rate,train_loss,train_error,val_loss,val_error\n");
    for e in &t.history {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            e.train_error,
            opt(e.val_loss),
            opt(e.val_error)
        ));
    }
    let hist = ctx.out(STAGE1_HISTORY_FILE);
    write_text(&hist, &text)?;
    let last = t.history.last().expect("at least one epoch");
    m.value("epochs", t.history.len() as i64);
    m.value("stop", format!("{:?}", t.stop).to_lowercase());
    m.value("train_error", last.train_error);
    if !test.is_empty() {
        let ev = evaluate_stage1(&t.model, &test)?;
        m.value("test_error", ev.error_rate);
        println!("stage-1 test error {:.4} ({} / {})", ev.error_rate, ev.errors, ev.total);
    }
    Ok(vec![model_path, hist])
}

// ---------------------------------------------------------------- predict

fn cmd_predict(ctx: &Ctx, lat: f64, lon: f64, time: &str) -> Result<()> {
    let mut m = ctx.manifest()?;
    let c = ModelContainer::load(&ctx.input(STAGE1_FILE, &mut m)?)?.expect(ArtifactType::Stage1)?;
    let cal = ctx.calendar(&mut m)?;
    let p = GeoPoint::new(lat, lon)?;
    let t = parse_time(time)?;
    let probe = stage1_from_container::<f64>(&c)?;
    let ranked = match probe.config.precision {
        Precision::F64 => predict_availability(&probe, &p, t, &cal)?,
        Precision::F32 => predict_availability(&stage1_from_container::<f32>(&c)?, &p, t, &cal)?,
    };
    let shown = available_services(&ranked, probe.threshold());
    for s in &shown {
        println!("{}\t{:.6}", s.service_id, s.probability);
    }
    m.value("query_lat", lat);
    m.value("query_lon", lon);
    m.value("query_time", t.format("%Y-%m-%dT%H:%M:%S").to_string());
    m.value("top_service", shown[0].service_id.clone());
    m.value("top_probability", shown[0].probability);
    m.value("available", shown.len() as i64);
    ctx.finish(m, &[])
}

// ----------------------------------------------------------- build-series

const SERIES_HEADER: [&str; 5] = ["service_id", "cluster_id", "start", "granularity_s", "values"];
const WINDOW_HEADER: [&str; 5] = ["split", "service_id", "cluster_id", "start", "label"];
const SERIES_TIME: &str = "%Y-%m-%dT%H:%M:%S";

fn cmd_build_series(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let (records, _) = ctx.records(&mut m)?;
    let clusters = ctx.clusters(&mut m)?;
    let sc = ctx.cfg.series;
    let series = build_all_series(&records, &clusters, sc.granularity_s)?;
    let mut text = SERIES_HEADER.join(",") + "\n";
    for s in &series {
        let bits: String = s.values.iter().map(|&v| if v == 1 { '1' } else { '0' }).collect();
        text.push_str(&format!(
            "{},{},{},{},{bits}\n",
            s.service_id,
            s.cluster_id,
            s.start.format(SERIES_TIME),
            s.granularity_s
        ));
    }
    let series_path = ctx.out(SERIES_FILE);
    write_text(&series_path, &text)?;

    let mut rows = Vec::new();
    for s in &series {
        for w in roll_windows_upto(&s.as_f64(), sc.window, sc.stride, sc.gamma, sc.gamma)? {
            rows.push((s.service_id.clone(), s.cluster_id, w.start, w.label.class_index()));
        }
    }
    if rows.is_empty() {
        return Err(Error::data(format!(
            "no series is longer than window + gamma = {} steps",
            sc.window + sc.gamma
        )));
    }
    let sp = split(&rows, ctx.cfg.split.fractions(), sub_seed(ctx.cfg.seeds.split, 1))?;
    let mut text = WINDOW_HEADER.join(",") + "\n";
    for (name, part) in SPLITS.iter().zip([&sp.train, &sp.val, &sp.test]) {
        for (s, c, start, label) in part {
            text.push_str(&format!("{name},{s},{c},{start},{label}\n"));
        }
    }
    let windows_path = ctx.out(WINDOWS_FILE);
    write_text(&windows_path, &text)?;
    m.value("series", series.len() as i64);
    m.value("windows", rows.len() as i64);
    m.value("train", sp.train.len() as i64);
    m.value("val", sp.val.len() as i64);
    m.value("test", sp.test.len() as i64);
    ctx.finish(m, &[series_path, windows_path])
}

fn read_series(path: &Path) -> Result<BTreeMap<(String, usize), PresenceSeries>> {
    let mut out = BTreeMap::new();
    for (line, f) in read_csv(path, &SERIES_HEADER)? {
        let start = NaiveDateTime::parse_from_str(&f[2], SERIES_TIME).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line,
            reason: e.to_string(),
        })?;
        let values = f[4]
            .bytes()
            .map(|b| match b {
                b'0' => Ok(0u8),
                b'1' => Ok(1u8),
                _ => Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    reason: "series values must be 0/1".into(),
                }),
            })
            .collect::<Result<Vec<u8>>>()?;
        let s = PresenceSeries {
            service_id: f[0].clone(),
            cluster_id: field(path, line, &f[1])?,
            granularity_s: field(path, line, &f[3])?,
            start,
            values,
        };
        out.insert((s.service_id.clone(), s.cluster_id), s);
    }
    Ok(out)
}

// ------------------------------------------------------------- encode-gaf

const LABEL_HEADER: [&str; 6] = ["split", "index", "service_id", "cluster_id", "start", "label"];

fn cmd_encode_gaf(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let series_path = ctx.input(SERIES_FILE, &mut m)?;
    let windows_path = ctx.input(WINDOWS_FILE, &mut m)?;
    let series = read_series(&series_path)?;
    let sc = ctx.cfg.series;
    let opts = ctx.cfg.gaf.options();
    let side = opts.paa.unwrap_or(sc.window);
    let mut parts: [Vec<(GafImagePair, usize)>; 3] = Default::default();
    for (line, f) in read_csv(&windows_path, &WINDOW_HEADER)? {
        let key = (f[1].clone(), field::<usize>(&windows_path, line, &f[2])?);
        let start: usize = field(&windows_path, line, &f[3])?;
        let label: usize = field(&windows_path, line, &f[4])?;
        let s = series
            .get(&key)
            .ok_or_else(|| Error::data(format!("window at line {line} references unknown series {key:?}")))?;
        let w = s
            .values
            .get(start..start + sc.window)
            .ok_or_else(|| Error::data(format!("window at line {line} runs past its series")))?;
        let w: Vec<f64> = w.iter().map(|&v| v as f64).collect();
        let meta = WindowMeta {
            service_id: key.0,
            cluster_id: key.1,
            start,
            augmented: false,
        };
        parts[split_index(&windows_path, line, &f[0])?].push((encode_window(&w, &opts, meta)?, label));
    }

    let mut outputs = Vec::new();
    let mut text = LABEL_HEADER.join(",") + "\n";
    for (name, part) in SPLITS.iter().zip(&parts) {
        let refs: Vec<&GafImagePair> = part.iter().map(|(p, _)| p).collect();
        let (shape, data) = if refs.is_empty() {
            (vec![0, 2, side, side], Vec::new())
        } else {
            pairs_to_tensor(&refs)?
        };
        let path = ctx.out(&gaf_file(name));
        write_tensor_file(&path, &shape, &data)?;
        outputs.push(path);
        for (i, (p, label)) in part.iter().enumerate() {
            text.push_str(&format!(
                "{name},{i},{},{},{},{label}\n",
                p.meta.service_id, p.meta.cluster_id, p.meta.start
            ));
        }
        m.value(name, part.len() as i64);
    }
    let labels = ctx.out(GAF_LABELS_FILE);
    write_text(&labels, &text)?;
    outputs.push(labels);

    let n_png = ctx.cfg.gaf.png_count.min(parts[0].len());
    if n_png > 0 {
        let dir = ctx.out("png");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (i, (p, _)) in parts[0].iter().take(n_png).enumerate() {
            for (kind, img) in [("gasf", &p.gasf), ("gadf", &p.gadf)] {
                let path = dir.join(format!("train_{i:04}_{kind}.png"));
                write_png(&path, img)?;
                outputs.push(path);
            }
        }
    }
    ctx.finish(m, &outputs)
}

/// Labelled pairs of the three splits.
fn read_gaf(ctx: &Ctx, m: &mut Manifest) -> Result<[Vec<LabeledPair>; 3]> {
    let gamma = ctx.cfg.series.gamma;
    let labels_path = ctx.input(GAF_LABELS_FILE, m)?;
    let mut out: [Vec<LabeledPair>; 3] = Default::default();
    let mut meta: [Vec<(WindowMeta, usize)>; 3] = Default::default();
    for (line, f) in read_csv(&labels_path, &LABEL_HEADER)? {
        let s = split_index(&labels_path, line, &f[0])?;
        meta[s].push((
            WindowMeta {
                service_id: f[2].clone(),
                cluster_id: field(&labels_path, line, &f[3])?,
                start: field(&labels_path, line, &f[4])?,
                augmented: false,
            },
            field(&labels_path, line, &f[5])?,
        ));
    }
    for (i, name) in SPLITS.iter().enumerate() {
        let (shape, data) = read_tensor_file(&ctx.input(&gaf_file(name), m)?)?;
        let pairs = if shape.first() == Some(&0) {
            Vec::new()
        } else {
            tensor_to_pairs(&shape, &data)?
        };
        if pairs.len() != meta[i].len() {
            return Err(Error::Corrupt(format!(
                "{name} split has {} images but {} labels",
                pairs.len(),
                meta[i].len()
            )));
        }
        for (mut pair, (wm, label)) in pairs.into_iter().zip(std::mem::take(&mut meta[i])) {
            pair.meta = wm;
            out[i].push(LabeledPair {
                pair,
                label: MultiStepLabel::from_class(label, gamma)?,
            });
        }
    }
    Ok(out)
}

// --------------------------------------------------------- train-duration

fn cmd_train_duration(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let data = read_gaf(ctx, &mut m)?;
    let outputs = match ctx.cfg.stage2.precision {
        Precision::F32 => train_duration::<f32>(ctx, &mut m, data)?,
        Precision::F64 => train_duration::<f64>(ctx, &mut m, data)?,
    };
    ctx.finish(m, &outputs)
}

fn window_encoding(cfg: &PipelineConfig) -> WindowEncoding {
    WindowEncoding {
        window: cfg.series.window,
        stride: cfg.series.stride,
        granularity_s: cfg.series.granularity_s,
        gaf: cfg.gaf.options(),
    }
}

fn train_duration<T: Scalar>(ctx: &Ctx, m: &mut Manifest, [train, val, test]: [Vec<LabeledPair>; 3]) -> Result<Vec<PathBuf>> {
    let t = train_stage2::<T>(&train, &val, &ctx.cfg.stage2)?;
    for w in &t.warnings {
        log::warn!("{w}");
    }
    let model_path = ctx.out(STAGE2_FILE);
    stage2_container(&t.model, &window_encoding(&ctx.cfg))?.save(&model_path)?;
    let mut text = String::from("epoch,learning_rate,train_loss,train_error,val_loss,val_error\n");
    for e in &t.history {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.learning_rate,
            e.train_loss,
            e.train_error,
            opt(e.val_loss),
            opt(e.val_error)
        ));
    }
    let hist = ctx.out(STAGE2_HISTORY_FILE);
    write_text(&hist, &text)?;
    let last = t.history.last().expect("at least one epoch");
    m.value("epochs", t.history.len() as i64);
    m.value("augmented", t.augmented.values().sum::<usize>() as i64);
    m.value("train_error", last.train_error);
    if !test.is_empty() {
        let ev = evaluate_stage2(&t.model, &test)?;
        m.value("test_error", ev.error_rate);
        println!("stage-2 test error {:.4} ({} / {})", ev.error_rate, ev.errors, ev.total);
    }
    Ok(vec![model_path, hist])
}

// --------------------------------------------------------------- forecast

fn cmd_forecast(ctx: &Ctx, service: &str, cluster: usize, at: &str) -> Result<()> {
    let mut m = ctx.manifest()?;
    let c = ModelContainer::load(&ctx.input(STAGE2_FILE, &mut m)?)?.expect(ArtifactType::Stage2)?;
    let series = read_series(&ctx.input(SERIES_FILE, &mut m)?)?;
    let s = series
        .get(&(service.to_string(), cluster))
        .ok_or_else(|| Error::data(format!("no presence series for service {service:?} in cluster {cluster}")))?;
    let t = parse_time(at)?;
    let (probe, enc) = stage2_from_container::<f64>(&c)?;
    let step = s.step_of(t).ok_or_else(|| {
        Error::data(format!(
            "{at} lies outside the series ({} .. {})",
            s.start,
            s.step_start(s.len())
        ))
    })?;
    if step + 1 < enc.window {
        return Err(Error::data(format!(
            "forecast at {at} needs {} steps of history, only {} available",
            enc.window,
            step + 1
        )));
    }
    let w: Vec<f64> = s.values[step + 1 - enc.window..=step].iter().map(|&v| v as f64).collect();
    let meta = WindowMeta {
        service_id: service.to_string(),
        cluster_id: cluster,
        start: step + 1 - enc.window,
        augmented: false,
    };
    let pair = encode_window(&w, &enc.gaf, meta)?;
    let fc = match probe.config.precision {
        Precision::F64 => forecast(&probe, &pair)?,
        Precision::F32 => forecast(&stage2_from_container::<f32>(&c)?.0, &pair)?,
    };
    let bits = fc.label.bits();
    for (i, b) in bits.iter().enumerate() {
        println!("{}\t{b}", s.step_start(step + 1 + i).format("%Y-%m-%dT%H:%M:%S"));
    }
    let class = fc.label.class_index();
    println!("class\t{class}\tprobability\t{:.6}", fc.probabilities[class]);
    m.value("service", service.to_string());
    m.value("cluster", cluster as i64);
    m.value("at", t.format("%Y-%m-%dT%H:%M:%S").to_string());
    m.value("class", class as i64);
    m.value("bits", bits.iter().map(|b| b.to_string()).collect::<String>());
    m.value("probability", fc.probabilities[class]);
    ctx.finish(m, &[])
}

// ------------------------------------------------------------------- eval

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let mut m = ctx.manifest()?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    if ctx.out(STAGE1_FILE).exists() {
        let c = ModelContainer::load(&ctx.input(STAGE1_FILE, &mut m)?)?.expect(ArtifactType::Stage1)?;
        let [_, _, test] = read_instances(&ctx.input(INSTANCES_FILE, &mut m)?)?;
        let probe = stage1_from_container::<f64>(&c)?;
        let ev = match probe.config.precision {
            Precision::F64 => evaluate_stage1(&probe, &test)?,
            Precision::F32 => evaluate_stage1(&stage1_from_container::<f32>(&c)?, &test)?,
        };
        rows.push(("stage1_error".into(), ev.error_rate));
        rows.push(("stage1_test_size".into(), ev.total as f64));
    }
    if ctx.out(STAGE2_FILE).exists() {
        let c = ModelContainer::load(&ctx.input(STAGE2_FILE, &mut m)?)?.expect(ArtifactType::Stage2)?;
        let [_, _, test] = read_gaf(ctx, &mut m)?;
        let (probe, _) = stage2_from_container::<f64>(&c)?;
        let ev = match probe.config.precision {
            Precision::F64 => evaluate_stage2(&probe, &test)?,
            Precision::F32 => evaluate_stage2(&stage2_from_container::<f32>(&c)?.0, &test)?,
        };
        rows.push(("stage2_error".into(), ev.error_rate));
        for (i, e) in ev.per_bit_error.iter().enumerate() {
            rows.push((format!("stage2_error_step{}", i + 1), *e));
        }
        rows.push(("stage2_test_size".into(), ev.total as f64));
    }
    if rows.is_empty() {
        return Err(Error::data("no trained model found in the output directory"));
    }
    let mut text = String::from("metric,value\n");
    for (k, v) in &rows {
        text.push_str(&format!("{k},{v}\n"));
        println!("{k}\t{v}");
        m.value(k, *v);
    }
    let path = ctx.out(EVAL_FILE);
    write_text(&path, &text)?;
    ctx.finish(m, &[path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_times() {
        let t = parse_time("2024-03-04T10:30:00").unwrap();
        assert_eq!(parse_time("2024-03-04 10:30").unwrap(), t);
        assert!(parse_time("04/03/2024").is_err());
    }

    #[test]
    fn usage_errors_exit_nonzero() {
        assert_eq!(run_subcommand(["svcavail", "launch", "--config", "x.toml"]), 2);
        assert_eq!(run_subcommand(["svcavail", "cluster"]), 2);
        assert_eq!(run_subcommand(["svcavail", "cluster", "--config", "/nonexistent/x.toml"]), 1);
    }
}
