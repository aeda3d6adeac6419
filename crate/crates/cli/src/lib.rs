//! Command-line harness: fetch data, train, sweep corruptions, run the
//! baseline, plot, and inspect the encoder.

pub mod error;
pub mod fetch;
pub mod plot;

use clap::{Args, Parser, Subcommand};
use error::CliError;
use qsnn_core::config::{set_path, Manifest, Profile, RunConfig};
use qsnn_core::corrupt::{Corruption, NoiseKind};
use qsnn_core::dataio::{self, ResultsFormat, RunRecord};
use qsnn_core::encoder::{encode_image, AggregationMode};
use qsnn_core::experiment::{self, default_grid, parse_grid, Part, Pipeline};
use qsnn_core::rng::derive_seed;
use serde::Serialize;
use std::path::{Path, PathBuf};
use toml::{Table, Value};

#[derive(Debug, Parser)]
#[command(name = "qsnn", version, about = "Superposition-encoded spiking network experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config file or a run manifest.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// desk or paper.
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// mnist or fashion.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override any config key, e.g. `--set training.epochs=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download and install a dataset from its pinned package.
    Fetch {
        /// Install from a local copy of the package tarball.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train on clean encodings and save the model.
    Train,
    /// Evaluate a saved model over a corruption grid.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        /// invert, flip or awgn; all three when omitted.
        #[arg(long)]
        noise: Option<NoiseKind>,
        /// `a:b:step`; defaults to the published grid.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Train the rectifier baseline and evaluate it over corruption grids.
    Baseline {
        #[arg(long)]
        noise: Option<NoiseKind>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Evaluate a saved model at one corruption setting (clean by default).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        noise: Option<NoiseKind>,
        #[arg(long, default_value = "0")]
        param: String,
    },
    /// Render results files as an SVG line chart.
    Plot {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
    /// Show the encoding of one test image.
    EncodeDemo {
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value = "0")]
        theta: String,
        /// Number of pixels listed in the table.
        #[arg(long, default_value_t = 8)]
        pixels: usize,
        #[arg(long)]
        json: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fetch { .. } => "fetch",
            Command::Train => "train",
            Command::Sweep { .. } => "sweep",
            Command::Baseline { .. } => "baseline",
            Command::Eval { .. } => "eval",
            Command::Plot { .. } => "plot",
            Command::EncodeDemo { .. } => "encode-demo",
        }
    }
}

/// Resolved configuration and output location for one invocation.
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn overrides(common: &Common) -> Result<Table, CliError> {
    let mut t = Table::new();
    if let Some(seed) = common.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Config(format!("seed {seed} is too large")))?;
        set_path(&mut t, "seed", Value::Integer(seed));
    }
    if let Some(d) = &common.dataset {
        set_path(&mut t, "data.dataset", Value::String(d.clone()));
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        set_path(&mut t, k.trim(), parse_value(v.trim()));
    }
    Ok(t)
}

pub fn context(common: &Common) -> Result<Context, CliError> {
    let cfg = RunConfig::resolve(common.profile, common.config.as_deref(), &overrides(common)?)?;
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    Ok(Context {
        cfg,
        out,
        threads: rayon::current_num_threads(),
    })
}

fn write_manifest(ctx: &Context, command: &str, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
    let path = ctx.out.join(format!("{command}.manifest.toml"));
    let names = outputs.iter().map(|p| p.display().to_string()).collect();
    Manifest::new(command, &ctx.cfg, ctx.threads, names).write(&path)?;
    Ok(path)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn single_value(raw: &str) -> Result<f64, CliError> {
    match parse_grid(raw)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(CliError::Config(format!("expected one value, got {raw:?}"))),
    }
}

fn grids(noise: Option<NoiseKind>, grid: Option<&str>) -> Result<Vec<(NoiseKind, Vec<f64>)>, CliError> {
    let kinds = match noise {
        Some(k) => vec![k],
        None => NoiseKind::ALL.to_vec(),
    };
    kinds
        .into_iter()
        .map(|k| {
            let g = match grid {
                Some(spec) => parse_grid(spec)?,
                None => default_grid(k),
            };
            for &p in &g {
                k.with_param(p).validate()?;
            }
            Ok((k, g))
        })
        .collect()
}

fn print_records(records: &[RunRecord]) {
    for r in records {
        println!(
            "{:<6} {:<7} {:>8.4}  accuracy {:.4}",
            r.model, r.noise_kind, r.noise_param, r.accuracy
        );
    }
}

/// Writes the model, a per-epoch log and the manifest. Returns the model path.
pub fn cmd_train(ctx: &Context) -> Result<PathBuf, CliError> {
    let (train, test) = experiment::load_data(&ctx.cfg)?;
    println!(
        "training on {} {} images ({} hidden, {} epochs)",
        train.len(),
        ctx.cfg.data.dataset,
        ctx.cfg.model.hidden,
        ctx.cfg.training.epochs
    );
    let (net, logs) = experiment::train_network(&ctx.cfg, &train, |l| {
        println!(
            "epoch {:>3}  train accuracy {:.4}  loss {:.6}",
            l.epoch, l.train.accuracy, l.train.loss_mean
        )
    })?;
    let model = ctx.out.join("model.qsnn");
    dataio::save_model(&net, &model)?;

    let log_path = ctx.out.join("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(["epoch", "accuracy", "n_correct", "n_total", "loss_mean"])
        .map_err(|e| CliError::Io(e.to_string()))?;
    for l in &logs {
        w.write_record([
            l.epoch.to_string(),
            l.train.accuracy.to_string(),
            l.train.n_correct.to_string(),
            l.train.n_total.to_string(),
            l.train.loss_mean.to_string(),
        ])
        .map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(io(&log_path))?;

    let pipe = Pipeline::from_config(&ctx.cfg)?;
    let clean = experiment::evaluate_corrupted(
        &ctx.cfg,
        &pipe,
        &net,
        &test,
        Corruption::Invert { theta: 0.0 },
        ctx.cfg.aggregation.invert,
    )?;
    println!("clean test accuracy {:.4} on {} images", clean.accuracy, clean.n_total);
    write_manifest(ctx, "train", &[model.clone(), log_path])?;
    println!("model written to {}", model.display());
    Ok(model)
}

pub fn cmd_sweep(ctx: &Context, model: &Path, noise: Option<NoiseKind>, grid: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let plan = grids(noise, grid)?;
    let net = dataio::load_model(model)?;
    let (_, test) = experiment::load_data(&ctx.cfg)?;
    let mut outputs = Vec::new();
    for (kind, g) in plan {
        let records = experiment::sweep(&ctx.cfg, &net, &test, kind, &g)?;
        print_records(&records);
        let path = ctx.out.join(format!("sweep_{kind}.csv"));
        dataio::write_results(&records, &path, ResultsFormat::Csv)?;
        outputs.push(path);
    }
    write_manifest(ctx, "sweep", &outputs)?;
    Ok(outputs)
}

pub fn cmd_baseline(ctx: &Context, noise: Option<NoiseKind>, grid: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    let plan = grids(noise, grid)?;
    let (train, test) = experiment::load_data(&ctx.cfg)?;
    println!(
        "training baseline on {} images ({} hidden, {} epochs)",
        train.len(),
        ctx.cfg.baseline.hidden,
        ctx.cfg.baseline.epochs
    );
    let (net, logs) = experiment::train_baseline(&ctx.cfg, &train)?;
    if let Some(l) = logs.last() {
        println!("final epoch train accuracy {:.4}", l.train.accuracy);
    }
    let mut outputs = Vec::new();
    for (kind, g) in plan {
        let records = experiment::sweep_baseline(&ctx.cfg, &net, &test, kind, &g)?;
        print_records(&records);
        let path = ctx.out.join(format!("baseline_{kind}.csv"));
        dataio::write_results(&records, &path, ResultsFormat::Csv)?;
        outputs.push(path);
    }
    write_manifest(ctx, "baseline", &outputs)?;
    Ok(outputs)
}

pub fn cmd_eval(ctx: &Context, model: &Path, noise: Option<NoiseKind>, param: f64) -> Result<RunRecord, CliError> {
    let kind = noise.unwrap_or(NoiseKind::Invert);
    let corruption = kind.with_param(param);
    corruption.validate()?;
    let net = dataio::load_model(model)?;
    let (_, test) = experiment::load_data(&ctx.cfg)?;
    let pipe = Pipeline::from_config(&ctx.cfg)?;
    let m = experiment::evaluate_corrupted(&ctx.cfg, &pipe, &net, &test, corruption, ctx.cfg.aggregation_for(kind))?;
    let rec = experiment::record(&ctx.cfg, "qsnn", corruption, &m);
    print_records(std::slice::from_ref(&rec));
    let path = ctx.out.join("eval.json");
    dataio::write_results(std::slice::from_ref(&rec), &path, ResultsFormat::Json)?;
    write_manifest(ctx, "eval", &[path])?;
    Ok(rec)
}

pub fn cmd_plot(ctx: &Context, results: &[PathBuf], output: Option<&Path>, title: Option<&str>) -> Result<PathBuf, CliError> {
    let mut records = Vec::new();
    for p in results {
        records.extend(dataio::read_results(p, ResultsFormat::from_path(p))?);
    }
    if records.is_empty() {
        return Err(CliError::Data("results files hold no records".into()));
    }
    let out = match output {
        Some(p) => p.to_path_buf(),
        None => ctx.out.join(format!(
            "{}.svg",
            results[0].file_stem().and_then(|s| s.to_str()).unwrap_or("results")
        )),
    };
    let title = title
        .map(str::to_string)
        .unwrap_or_else(|| format!("{} accuracy", records[0].dataset));
    std::fs::write(&out, plot::render_svg(&records, &title)).map_err(io(&out))?;
    write_manifest(ctx, "plot", std::slice::from_ref(&out))?;
    println!("chart written to {}", out.display());
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct PixelRow {
    pub pixel: usize,
    pub x: f64,
    pub theta: f64,
    pub p: f64,
    pub q: f64,
    pub phi: f64,
    pub rate: f64,
    pub t0: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodeDemo {
    pub index: usize,
    pub label: usize,
    pub theta: f64,
    pub rows: Vec<PixelRow>,
    pub raster_pixel: usize,
    pub raster: String,
}

/// Encodes one uniformly inverted test image.
pub fn encode_demo(ctx: &Context, index: usize, theta: f64, n_rows: usize) -> Result<EncodeDemo, CliError> {
    let test = experiment::load_part(&ctx.cfg.data.dir, &ctx.cfg.data.dataset, Part::Test)?;
    if index >= test.len() {
        return Err(CliError::Data(format!(
            "image index {index} out of range (test set has {})",
            test.len()
        )));
    }
    let img = qsnn_core::corrupt::invert_background(test.width, test.height, test.image(index), theta)?;
    let cfg = ctx.cfg.encode_config();
    let spikes = encode_image(
        &img,
        AggregationMode::PerPixel,
        &cfg,
        derive_seed(ctx.cfg.seed, &[index as u64]),
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;

    let lit: Vec<usize> = (0..img.n_pixels()).filter(|&i| img.clean()[i] > 0.0).collect();
    let pool = if lit.is_empty() { (0..img.n_pixels()).collect() } else { lit };
    let take = n_rows.min(pool.len());
    let rows = (0..take)
        .map(|k| pool[k * pool.len() / take.max(1)])
        .map(|i| PixelRow {
            pixel: i,
            x: img.clean()[i],
            theta: img.theta()[i],
            p: spikes.outcomes[i].0,
            q: spikes.outcomes[i].1,
            phi: spikes.phases.phase(i),
            rate: spikes.rates[i],
            t0: spikes.t0[i],
        })
        .collect();
    let raster_pixel = (0..img.n_pixels())
        .max_by(|&a, &b| img.clean()[a].total_cmp(&img.clean()[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    let raster = spikes
        .train(raster_pixel)
        .iter()
        .map(|&s| if s { '|' } else { '.' })
        .collect();
    Ok(EncodeDemo {
        index,
        label: test.label(index),
        theta,
        rows,
        raster_pixel,
        raster,
    })
}

fn print_demo(d: &EncodeDemo) {
    println!("image {} (label {}), theta = {:.5}", d.index, d.label, d.theta);
    println!(
        "{:>6} {:>7} {:>8} {:>8} {:>8} {:>8} {:>7} {:>4}",
        "pixel", "x", "theta", "P", "Q", "phi", "rate", "t0"
    );
    for r in &d.rows {
        println!(
            "{:>6} {:>7.4} {:>8.5} {:>8.5} {:>8.5} {:>8.5} {:>7.4} {:>4}",
            r.pixel, r.x, r.theta, r.p, r.q, r.phi, r.rate, r.t0
        );
    }
    println!("spike train of pixel {} (one column per step):", d.raster_pixel);
    println!("{}", d.raster);
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli.common)?;
    match &cli.command {
        Command::Fetch { from, force } => {
            let written = fetch::fetch(&ctx.cfg.data.dataset, &ctx.cfg.data.dir, from.as_deref(), *force)?;
            if written.is_empty() {
                println!("{} already present in {}", ctx.cfg.data.dataset, ctx.cfg.data.dir.display());
            }
            for p in &written {
                println!("wrote {}", p.display());
            }
            write_manifest(&ctx, "fetch", &written)?;
        }
        Command::Train => {
            cmd_train(&ctx)?;
        }
        Command::Sweep { model, noise, grid } => {
            cmd_sweep(&ctx, model, *noise, grid.as_deref())?;
        }
        Command::Baseline { noise, grid } => {
            cmd_baseline(&ctx, *noise, grid.as_deref())?;
        }
        Command::Eval { model, noise, param } => {
            cmd_eval(&ctx, model, *noise, single_value(param)?)?;
        }
        Command::Plot { results, output, title } => {
            cmd_plot(&ctx, results, output.as_deref(), title.as_deref())?;
        }
        Command::EncodeDemo {
            index,
            theta,
            pixels,
            json,
        } => {
            let demo = encode_demo(&ctx, *index, single_value(theta)?, *pixels)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&demo).expect("demo serializes"));
            } else {
                print_demo(&demo);
            }
            write_manifest(&ctx, cli.command.name(), &[])?;
        }
    }
    Ok(())
}
