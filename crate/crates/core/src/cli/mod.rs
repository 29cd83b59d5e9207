//! Command-line front end: `gen`, `train`, `eval`, `bench` and `compare`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O or corrupt
//! input, 4 numerical abort.

pub mod config;
pub mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::metrics::{
    self, dataset_uncertainty_metrics, delta_map, format_report, method_flops, parse_report, sort_rows, uncertainty_counts,
    Averaging, DepthSums, Log10Mode, ReportRow, ThresholdRule, UncertaintyCounts,
};
use crate::model::{load_checkpoint, save_checkpoint, DepthNet};
use crate::synthdata::{self, generate_split, read_dataset, write_dataset, write_pfm, write_ppm, NoiseMode, SceneSpec};
use crate::trainer::{train_net, TrainConfig};
use crate::uq::{self, Method, UqConfig};

use config::{format_kv, parse_assignment, parse_flips, parse_kv, train_config_from_kv, train_config_to_kv, KvMap};
use manifest::RunManifest;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.uqdn";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EPOCH_LOG_FILE: &str = "epochs.csv";
pub const RUN_MANIFEST_FILE: &str = "run.json";

/// Both sides of the generated images and crops must be divisible by this
/// (the default network downsamples twice).
pub const SIZE_MULTIPLE: usize = 4;

#[derive(Debug, Parser)]
#[command(name = "uqdepth", version, about = "Uncertainty-aware monocular depth at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset split.
    Gen(GenArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run on a dataset split and write a report CSV.
    Eval(EvalArgs),
    /// Time repeated predictions of a trained run.
    Bench(BenchArgs),
    /// Merge reports into one table ordered by (model, method).
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Training crop side the data is meant for; defaults to size / 2.
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// none, homo:SIGMA or prop:FACTOR.
    #[arg(long, default_value = "none")]
    pub noise: String,
    #[arg(long, default_value_t = 0.5)]
    pub min_depth: f64,
    #[arg(long, default_value_t = 10.0)]
    pub max_depth: f64,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// Dataset root holding the split directories.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "train")]
    pub train_split: String,
    /// Validation split; skipped when the directory does not exist.
    #[arg(long, default_value = "val")]
    pub val_split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Extra KEY=VALUE overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub quiet: bool,
}

/// Prediction-time overrides shared by `eval` and `bench`.
#[derive(Debug, Args)]
pub struct MethodOverrides {
    /// Evaluate with a different method than the run was trained for
    /// (e.g. `tta` or `mcd` on a baseline run).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Comma-separated subset of h,v.
    #[arg(long)]
    pub flips: Option<String>,
    #[arg(long)]
    pub base_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub overrides: MethodOverrides,
    #[arg(long)]
    pub log10_mode: Option<String>,
    #[arg(long, default_value = "micro")]
    pub averaging: String,
    /// Also write per-image depth, uncertainty and accuracy maps next to
    /// the report.
    #[arg(long)]
    pub emit_maps: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub runs: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
    #[command(flatten)]
    pub overrides: MethodOverrides,
    /// Write the row to this CSV as well as stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report CSVs, or directories scanned for report*.csv and bench*.csv.
    #[arg(long, num_args = 0..)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies `UQDEPTH_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("UQDEPTH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("UQDEPTH_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))
}

/// Parses `argv` and runs the command; returns text for stdout.
pub fn run_from<I, T>(argv: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config(e.to_string()))?;
    let words: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    run(cli, &words)
}

pub fn run(cli: Cli, argv: &[String]) -> Result<String> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, argv),
        Command::Train(a) => cmd_train(&a, argv),
        Command::Eval(a) => cmd_eval(&a, argv),
        Command::Bench(a) => cmd_bench(&a, argv),
        Command::Compare(a) => cmd_compare(&a, argv),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

pub fn parse_noise(s: &str) -> Result<NoiseMode> {
    let level = |v: &str| {
        v.parse::<f64>()
            .ok()
            .filter(|x| *x >= 0.0 && x.is_finite())
            .ok_or_else(|| Error::Config(format!("bad noise level {v:?}")))
    };
    match s.split_once(':') {
        None if s == "none" => Ok(NoiseMode::None),
        Some(("homo", v)) => Ok(NoiseMode::Homoscedastic(level(v)?)),
        Some(("prop", v)) => Ok(NoiseMode::Proportional(level(v)?)),
        _ => Err(Error::Config(format!("noise must be none, homo:SIGMA or prop:FACTOR, got {s:?}"))),
    }
}

fn noise_name(n: NoiseMode) -> String {
    match n {
        NoiseMode::None => "none".into(),
        NoiseMode::Homoscedastic(s) => format!("homo:{s}"),
        NoiseMode::Proportional(f) => format!("prop:{f}"),
    }
}

fn cmd_gen(a: &GenArgs, argv: &[String]) -> Result<String> {
    let crop = a.crop.unwrap_or(a.size / 2);
    if a.size == 0 || !a.size.is_multiple_of(SIZE_MULTIPLE) || crop == 0 || !crop.is_multiple_of(SIZE_MULTIPLE) || crop > a.size {
        return Err(Error::Config(format!(
            "--size {} with crop {crop}: both must be positive multiples of {SIZE_MULTIPLE} (the network downsamples by {SIZE_MULTIPLE}) and crop <= size",
            a.size
        )));
    }
    if a.n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    if a.split.is_empty() || a.split.contains(['/', '\\']) {
        return Err(Error::Config(format!("invalid split name {:?}", a.split)));
    }
    let spec = SceneSpec {
        size: (a.size, a.size),
        min_depth: a.min_depth,
        max_depth: a.max_depth,
        noise: parse_noise(&a.noise)?,
        seed: a.seed,
        ..SceneSpec::default()
    };
    spec.validate()?;
    let samples = generate_split(&spec, &a.split, a.n)?;
    let dir = a.out.join(&a.split);
    create_dir(&dir)?;
    write_dataset(&samples, &dir)?;

    let mut m = RunManifest::new(argv);
    m.config = [
        ("n", a.n.to_string()),
        ("size", a.size.to_string()),
        ("crop", crop.to_string()),
        ("noise", noise_name(spec.noise)),
        ("min_depth", spec.min_depth.to_string()),
        ("max_depth", spec.max_depth.to_string()),
        ("split", a.split.clone()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    m.seeds.insert("seed".into(), a.seed);
    m.output(&dir.join(synthdata::MANIFEST_FILE))?;
    m.write(&dir.join(RUN_MANIFEST_FILE))?;
    Ok(format!("wrote {} samples to {}\n", a.n, dir.display()))
}

fn merged_train_config(a: &TrainArgs) -> Result<KvMap> {
    let mut map = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_kv(&text, &p.display().to_string())?
        }
        None => KvMap::new(),
    };
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    put("method", a.method.clone());
    put("seed", a.seed.map(|v| v.to_string()));
    put("epochs", a.epochs.map(|v| v.to_string()));
    put("heads", a.heads.map(|v| v.to_string()));
    put("samples", a.samples.map(|v| v.to_string()));
    for s in &a.set {
        let (k, v) = parse_assignment(s)?;
        map.insert(k, v);
    }
    Ok(map)
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> Result<String> {
    let mut map = merged_train_config(a)?;
    // Parse once up front so configuration errors win over missing data.
    train_config_from_kv(&map)?;
    let train_dir = a.data.join(&a.train_split);
    let train_data = read_dataset(&train_dir)?;
    let val_dir = a.data.join(&a.val_split);
    let val_data = if val_dir.join(synthdata::MANIFEST_FILE).exists() {
        read_dataset(&val_dir)?
    } else {
        Vec::new()
    };
    let first = train_data.first().ok_or_else(|| Error::Config("training split is empty".into()))?;
    map.entry("input_size".into())
        .or_insert_with(|| format!("{}x{}", first.height(), first.width()));
    let (cfg, model_name) = train_config_from_kv(&map)?;

    create_dir(&a.out)?;
    let net = DepthNet::build(cfg.model.clone())?;
    let quiet = a.quiet;
    let epochs = cfg.epochs;
    let (net, log) = train_net(net, &cfg, &train_data, &val_data, &mut |e, its| {
        if !quiet {
            let loss = its.iter().map(|r| r.loss).sum::<f64>() / its.len().max(1) as f64;
            let val = e.val.map_or("n/a".to_string(), |v| format!("{:.4}", v.delta1));
            eprintln!("epoch {:>3}/{epochs}  loss {loss:.5}  val delta1 {val}  {:.1}s", e.epoch + 1, e.wall_ms / 1e3);
        }
    })?;

    let snapshot = train_config_to_kv(&cfg, &model_name);
    let files = [
        (a.out.join(CONFIG_FILE), format_kv(&snapshot)),
        (a.out.join(TRAIN_LOG_FILE), log.iterations_csv()),
    ];
    for (p, text) in &files {
        write_text(p, text)?;
    }
    let ckpt = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&net, &ckpt)?;
    let epochs_path = a.out.join(EPOCH_LOG_FILE);
    write_text(&epochs_path, &log.epochs_csv())?;

    let mut m = RunManifest::new(argv);
    m.config = snapshot;
    m.seeds.insert("seed".into(), cfg.seed);
    m.seeds.insert("base_seed".into(), cfg.uq.base_seed);
    m.input(&train_dir.join(synthdata::MANIFEST_FILE))?;
    if !val_data.is_empty() {
        m.input(&val_dir.join(synthdata::MANIFEST_FILE))?;
    }
    for (p, _) in &files {
        m.output(p)?;
    }
    m.output(&ckpt)?;
    m.timing_output(&epochs_path);
    m.write(&a.out.join(RUN_MANIFEST_FILE))?;

    let last = log.epochs.last().and_then(|e| e.val);
    Ok(format!(
        "trained {} ({}) for {} iterations in {:.1}s{}; run written to {}\n",
        cfg.uq.method,
        model_name,
        log.iterations.len(),
        log.total_wall_ms() / 1e3,
        last.map_or(String::new(), |v| format!(", final val delta1 {:.4}", v.delta1)),
        a.out.display()
    ))
}

/// A trained run directory: merged configuration plus network.
pub struct LoadedRun {
    pub config: TrainConfig,
    pub model_name: String,
    pub net: DepthNet,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let cp = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cp).map_err(|e| Error::io(&cp, e))?;
    let (config, model_name) = train_config_from_kv(&parse_kv(&text, &cp.display().to_string())?)?;
    let net = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    if net.config() != &config.model {
        return Err(Error::corrupt(dir.join(CHECKPOINT_FILE), "checkpoint does not match config.txt"));
    }
    Ok(LoadedRun { config, model_name, net })
}

fn resolve_uq(run: &LoadedRun, o: &MethodOverrides) -> Result<UqConfig> {
    let mut uq = run.config.uq.clone();
    if let Some(m) = &o.method {
        uq.method = m.parse::<Method>()?;
    }
    if let Some(s) = o.samples {
        uq.samples = s;
    }
    if let Some(f) = &o.flips {
        uq.flips = parse_flips(f)?;
    }
    if let Some(b) = o.base_seed {
        uq.base_seed = b;
    }
    uq.heads = run.net.config().num_heads;
    uq.validate()?;
    Ok(uq)
}

struct ImageEval {
    sums: DepthSums,
    counts: Option<UncertaintyCounts>,
    sample_count: usize,
}

fn gray(map: &Array, scale: f64) -> Result<Array> {
    let s = map.shape();
    let plane = map.map(|v| if scale > 0.0 { (v / scale).clamp(0.0, 1.0) } else { 0.0 });
    let data = [plane.data(), plane.data(), plane.data()].concat();
    Array::new(vec![3, s[0], s[1]], data)
}

fn accuracy_image(acc: &Mask, valid: &Mask) -> Result<Array> {
    let [h, w] = valid.shape();
    let px = |c: usize, i: usize| match (valid.data()[i], acc.data()[i]) {
        (false, _) => (c == 0) as u8 as f64,
        (true, ok) => ok as u8 as f64,
    };
    Ok(Array::from_fn(&[3, h, w], |k| px(k / (h * w), k % (h * w))))
}

fn emit_maps(dir: &Path, index: usize, max_depth: f64, depth: &Array, unc: Option<&Array>, acc: &Mask, valid: &Mask) -> Result<()> {
    let base = |s: &str| dir.join(format!("{index:04}_{s}"));
    write_pfm(&base("depth.pfm"), depth)?;
    write_ppm(&base("depth.ppm"), &gray(depth, max_depth)?)?;
    write_ppm(&base("delta1.ppm"), &accuracy_image(acc, valid)?)?;
    if let Some(u) = unc {
        write_pfm(&base("uncertainty.pfm"), u)?;
        let top = u.data().iter().copied().fold(0.0, f64::max);
        write_ppm(&base("uncertainty.ppm"), &gray(u, top)?)?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, argv: &[String]) -> Result<String> {
    let run = load_run(&a.run)?;
    let uq = resolve_uq(&run, &a.overrides)?;
    let mode: Log10Mode = a.log10_mode.as_deref().map(str::parse).transpose()?.unwrap_or(run.config.log10_mode);
    let averaging: Averaging = a.averaging.parse()?;
    let split_dir = a.data.join(&a.split);
    let data = read_dataset(&split_dir)?;
    if data.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let maps_dir = a.emit_maps.then(|| {
        let stem = a.report.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.report.with_file_name(format!("{stem}_maps"))
    });
    if let Some(d) = &maps_dir {
        create_dir(d)?;
    }
    let floor = run.config.loss.variance_floor;
    let net = &run.net;
    let per_image: Vec<ImageEval> = data
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let p = uq::predict(net, &s.image, &uq, floor)?;
            let sums = DepthSums::from_image(&p.depth, &s.depth, &s.mask)?;
            let acc = delta_map(&p.depth, &s.depth, &s.mask, 1)?;
            let counts = p
                .uncertainty
                .as_ref()
                .map(|u| uncertainty_counts(&acc, u, &s.mask, ThresholdRule::Median))
                .transpose()?;
            if let Some(d) = &maps_dir {
                emit_maps(d, i, net.config().max_depth, &p.depth, p.uncertainty.as_ref(), &acc, &s.mask)?;
            }
            Ok(ImageEval {
                sums,
                counts,
                sample_count: p.sample_count,
            })
        })
        .collect::<Result<_>>()?;

    let mut sums = DepthSums::default();
    per_image.iter().for_each(|e| sums.merge(&e.sums));
    let counts: Vec<UncertaintyCounts> = per_image.iter().filter_map(|e| e.counts).collect();
    let unc = if counts.is_empty() {
        None
    } else {
        Some(dataset_uncertainty_metrics(&counts, averaging)?)
    };
    let (h, w) = net.config().input_size;
    let row = ReportRow {
        method: uq.method,
        model: run.model_name.clone(),
        depth: Some(sums.finish(mode)?),
        p_acc_cer: unc.and_then(|u| u.p_acc_cer),
        p_unc_ina: unc.and_then(|u| u.p_unc_ina),
        pavpu: unc.and_then(|u| u.pavpu),
        params: net.param_count(),
        flops: method_flops(net, &uq, h, w),
        infer_ms_mean: None,
        infer_ms_std: None,
        fps: None,
    };
    let text = format_report(std::slice::from_ref(&row));
    write_text(&a.report, &text)?;
    let meta_path = sidecar(&a.report, ".meta");
    let meta: KvMap = [
        ("averaging", format!("{averaging:?}").to_lowercase()),
        ("images", data.len().to_string()),
        ("log10_mode", mode.name().to_string()),
        ("method", uq.method.name().to_string()),
        ("sample_count", per_image[0].sample_count.to_string()),
        ("threshold", "median".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    write_text(&meta_path, &format_kv(&meta))?;

    let mut m = RunManifest::new(argv);
    m.config = meta;
    m.seeds.insert("base_seed".into(), uq.base_seed);
    m.input(&a.run.join(CHECKPOINT_FILE))?;
    m.input(&a.run.join(CONFIG_FILE))?;
    m.input(&split_dir.join(synthdata::MANIFEST_FILE))?;
    m.output(&a.report)?;
    m.output(&meta_path)?;
    m.write(&sidecar(&a.report, ".run.json"))?;
    Ok(text)
}

fn cmd_bench(a: &BenchArgs, argv: &[String]) -> Result<String> {
    if a.runs < 2 {
        return Err(Error::Config(format!("--runs must be at least 2 for a standard deviation, got {}", a.runs)));
    }
    let run = load_run(&a.run)?;
    let uq = resolve_uq(&run, &a.overrides)?;
    let size = run.net.config().input_size;
    let r = metrics::benchmark(&run.net, size, &uq, a.runs, a.warmup)?;
    let row = ReportRow {
        method: uq.method,
        model: run.model_name.clone(),
        depth: None,
        p_acc_cer: None,
        p_unc_ina: None,
        pavpu: None,
        params: r.trainable_params,
        flops: r.flops_per_forward,
        infer_ms_mean: Some(r.infer_ms_mean),
        infer_ms_std: Some(r.infer_ms_std),
        fps: Some(r.fps),
    };
    let text = format_report(std::slice::from_ref(&row));
    if let Some(p) = &a.report {
        write_text(p, &text)?;
        let mut m = RunManifest::new(argv);
        m.config.insert("runs".into(), a.runs.to_string());
        m.config.insert("warmup".into(), a.warmup.to_string());
        m.config.insert("method".into(), uq.method.name().into());
        m.input(&a.run.join(CHECKPOINT_FILE))?;
        m.timing_output(p);
        m.write(&sidecar(p, ".run.json"))?;
    }
    Ok(text)
}

fn is_csv_named(p: &Path, prefix: &str) -> bool {
    let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.starts_with(prefix) && name.ends_with(".csv")
}

/// Report rows and bench rows found at `paths`.
fn collect_rows(paths: &[PathBuf]) -> Result<(Vec<ReportRow>, Vec<ReportRow>)> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| is_csv_named(f, "report") || is_csv_named(f, "bench"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let (mut reports, mut benches) = (Vec::new(), Vec::new());
    for f in files {
        let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let rows = parse_report(&text, &f)?;
        if is_csv_named(&f, "bench") {
            benches.extend(rows);
        } else {
            reports.extend(rows);
        }
    }
    Ok((reports, benches))
}

fn check_unique(rows: &[ReportRow], what: &str) -> Result<()> {
    let mut seen = BTreeMap::new();
    for r in rows {
        if seen.insert((r.model.clone(), r.method), ()).is_some() {
            return Err(Error::Config(format!(
                "duplicate {what} row for method {} and model {}",
                r.method, r.model
            )));
        }
    }
    Ok(())
}

/// Merges report rows with bench rows of the same (method, model), filling
/// the timing columns, then sorts.
pub fn merge_rows(reports: Vec<ReportRow>, benches: Vec<ReportRow>) -> Result<Vec<ReportRow>> {
    check_unique(&reports, "report")?;
    check_unique(&benches, "bench")?;
    let mut rows = reports;
    for b in benches {
        match rows.iter_mut().find(|r| r.method == b.method && r.model == b.model) {
            Some(r) => {
                r.infer_ms_mean = b.infer_ms_mean;
                r.infer_ms_std = b.infer_ms_std;
                r.fps = b.fps;
            }
            None => rows.push(b),
        }
    }
    if rows.is_empty() {
        return Err(Error::Config("no report rows to compare".into()));
    }
    sort_rows(&mut rows);
    Ok(rows)
}

fn cmd_compare(a: &CompareArgs, argv: &[String]) -> Result<String> {
    if a.runs.is_empty() {
        return Err(Error::Config("compare needs at least one --runs entry".into()));
    }
    let (reports, benches) = collect_rows(&a.runs)?;
    let rows = merge_rows(reports, benches)?;
    let text = format_report(&rows);
    if let Some(out) = &a.out {
        write_text(out, &text)?;
        let mut m = RunManifest::new(argv);
        m.output(out)?;
        m.write(&sidecar(out, ".run.json"))?;
    }
    Ok(text)
}
