//! The `drsan` command: train, infer, eval, count and analyze.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use drsan::analysis::{
    attention_histogram, attention_spatial_map, coefficients_csv, extract_trace, histogram_csv, transplant_dra,
};
use drsan::eval::{evaluate, Bicubic, Upscaler};
use drsan::image::{load_image, save_image, TrainingPair};
use drsan::model::{count_multi_adds, count_params, hd_frame, load_checkpoint, save_checkpoint, Checkpoint};
use drsan::train::{train, LogRow, TrainConfig, TrainObserver};
use drsan::{Error, Model, NetworkConfig, Preset};
use log::{debug, info, LevelFilter};
use rand::SeedableRng;
use serde::Deserialize;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "drsan",
    version,
    about = "Lightweight super-resolution with dynamic residual self-attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on a directory of HR images.
    Train(TrainArgs),
    /// Super-resolve one image.
    Infer(InferArgs),
    /// PSNR/SSIM on the Y channel over a directory of HR images.
    Eval(EvalArgs),
    /// Parameter and multiply-add counts.
    Count(CountArgs),
    /// Inspect the attention of a trained model.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file with `model` (network config) and optional `train` sections.
    #[arg(long)]
    config: PathBuf,
    /// Directory of HR training images.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write (rewritten at every checkpoint interval).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Training log CSV; defaults to the checkpoint path with `.csv` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write 0 in the log's seconds column so logs are byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint path, or `bicubic` for the interpolation baseline.
    #[arg(long)]
    model: String,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    scale: usize,
    /// Border pixels ignored by the metrics (defaults to the scale).
    #[arg(long)]
    crop: Option<usize>,
    /// Write per-image rows here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CountArgs {
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Network config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale: Option<usize>,
    /// HR output height for the multiply-add count (default 720, cropped to
    /// a multiple of the scale).
    #[arg(long)]
    height: Option<usize>,
    /// HR output width (default 1280, cropped to a multiple of the scale).
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Dynamic residual coefficients of every group, one CSV row per value.
    Dra {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of one block's attention values.
    Hist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Residual block index, counted across groups.
        #[arg(long, default_value_t = 0)]
        block: usize,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Channel-averaged attention map of one block as a grey image.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        block: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct `target` with the coefficients computed from `donor`.
    Transplant {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        donor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the luma difference map.
        #[arg(long)]
        diff: Option<PathBuf>,
    },
}

/// Contents of a `train --config` file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: serde_json::Value,
    #[serde(default)]
    train: TrainConfig,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", single_line(&e.to_string()));
            EXIT_FAILURE
        }
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Configures logging from `DRSAN_LOG` (`quiet`, `info` or `debug`).
pub fn init_logging() {
    let level = match std::env::var("DRSAN_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Error,
        Ok("debug") => LevelFilter::Debug,
        _ => LevelFilter::Info,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "{}", record.args()))
        .try_init();
}

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

fn run(command: Command) -> CliResult {
    match command {
        Command::Train(a) => run_train(a),
        Command::Infer(a) => run_infer(a),
        Command::Eval(a) => run_eval(a),
        Command::Count(a) => run_count(a),
        Command::Analyze(a) => run_analyze(a),
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()).into())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()).into())
}

fn load_model(path: &Path) -> CliResult<Model<f32>> {
    Ok(load_checkpoint(path)?.model)
}

struct FileObserver {
    out: PathBuf,
    log: fs::File,
    log_path: PathBuf,
    timing: bool,
}

impl TrainObserver for FileObserver {
    fn log(&mut self, row: &LogRow) -> drsan::Result<()> {
        let row = LogRow {
            seconds: if self.timing { row.seconds } else { 0.0 },
            ..row.clone()
        };
        info!("iter {} lr {:.3e} loss {:.6}", row.iteration, row.lr, row.loss);
        writeln!(self.log, "{}", row.to_csv()).map_err(|source| Error::Io {
            path: self.log_path.clone(),
            source,
        })
    }

    fn checkpoint(&mut self, ckpt: &Checkpoint) -> drsan::Result<()> {
        debug!("checkpoint at iteration {}", ckpt.iteration);
        save_checkpoint(ckpt, &self.out)
    }
}

fn run_train(a: TrainArgs) -> CliResult {
    let file: TrainFile = serde_json::from_str(&read_text(&a.config)?)
        .map_err(|e| format!("invalid train config {}: {e}", a.config.display()))?;
    let net = NetworkConfig::from_value(file.model)?;
    let mut cfg = file.train;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = a.workers {
        cfg.workers = workers;
    }
    if let Some(iterations) = a.iterations {
        cfg.iterations = iterations;
    }
    cfg.validate()?;

    let images = drsan::eval::load_dataset(&a.data)?;
    let data = images
        .iter()
        .enumerate()
        .map(|(i, (_, img))| TrainingPair::new(i, img, net.scale))
        .collect::<drsan::Result<Vec<_>>>()?;
    info!(
        "training {} on {} images for {} iterations",
        net.to_json(),
        data.len(),
        cfg.iterations
    );

    let start = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.config() != &net {
                return Err(format!(
                    "checkpoint {} was trained with a different network config",
                    path.display()
                )
                .into());
            }
            ckpt
        }
        None => {
            // The init stream sits apart from the data worker streams.
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
            Checkpoint::new(Model::new(net, &mut rng)?)
        }
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".csv");
        PathBuf::from(s)
    });
    let mut log = fs::File::create(&log_path).map_err(|e| format!("cannot create {}: {e}", log_path.display()))?;
    writeln!(log, "{}", LogRow::CSV_HEADER)?;
    let mut observer = FileObserver {
        out: a.out.clone(),
        log,
        log_path: log_path.clone(),
        timing: !a.no_timing,
    };
    let outcome = train(start, &data, &cfg, &mut observer)?;
    info!(
        "wrote {} (iteration {}), log {}",
        a.out.display(),
        outcome.checkpoint.iteration,
        log_path.display()
    );
    Ok(())
}

fn run_infer(a: InferArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let lr = load_image(&a.input)?;
    let sr = model.upscale(&lr, model.config().scale)?;
    save_image(&sr, &a.output)?;
    info!("{}x{} -> {}x{}", lr.width(), lr.height(), sr.width(), sr.height());
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let model: Box<dyn Upscaler> = if a.model == "bicubic" {
        Box::new(Bicubic)
    } else {
        Box::new(load_model(Path::new(&a.model))?)
    };
    let report = evaluate(model.as_ref(), &a.dataset, a.scale, a.crop)?;
    match &a.csv {
        Some(path) => write_text(path, &report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    println!("{}", report.summary());
    Ok(())
}

fn run_count(a: CountArgs) -> CliResult {
    let cfg = match (&a.preset, &a.config) {
        (Some(name), _) => name.parse::<Preset>()?.config(a.scale.unwrap_or(2)),
        (None, Some(path)) => {
            let mut cfg = NetworkConfig::from_json(&read_text(path)?)?;
            if let Some(s) = a.scale {
                cfg.scale = s;
                cfg.validate()?;
            }
            cfg
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    cfg.validate()?;
    let (hd_h, hd_w) = hd_frame(cfg.scale);
    let (height, width) = (a.height.unwrap_or(hd_h), a.width.unwrap_or(hd_w));
    let madds = count_multi_adds(&cfg, height, width)?;
    println!("params={} multi_adds={}", count_params(&cfg), madds);
    info!(
        "{:.2}M parameters, {:.2}G multiply-adds at {}x{}",
        count_params(&cfg) as f64 / 1e6,
        madds as f64 / 1e9,
        width,
        height
    );
    Ok(())
}

fn file_id(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run_analyze(a: AnalyzeCommand) -> CliResult {
    match a {
        AnalyzeCommand::Dra { model, inputs, out } => {
            let model = load_model(&model)?;
            let traces = inputs
                .iter()
                .map(|p| extract_trace(&model, &load_image(p)?, &file_id(p)))
                .collect::<drsan::Result<Vec<_>>>()?;
            write_text(&out, &coefficients_csv(&traces)?)
        }
        AnalyzeCommand::Hist {
            model,
            input,
            block,
            bins,
            out,
        } => {
            let model = load_model(&model)?;
            let trace = extract_trace(&model, &load_image(&input)?, &file_id(&input))?;
            write_text(&out, &histogram_csv(&[attention_histogram(&trace, block, bins)?]))
        }
        AnalyzeCommand::Map {
            model,
            input,
            block,
            out,
        } => {
            let model = load_model(&model)?;
            let trace = extract_trace(&model, &load_image(&input)?, &file_id(&input))?;
            save_image(&attention_spatial_map(&trace, block)?.normalized, &out)?;
            Ok(())
        }
        AnalyzeCommand::Transplant {
            model,
            target,
            donor,
            out,
            diff,
        } => {
            let model = load_model(&model)?;
            let t = transplant_dra(&model, &load_image(&target)?, &load_image(&donor)?)?;
            save_image(&t.sr, &out)?;
            if let Some(path) = diff {
                save_image(&t.diff, &path)?;
            }
            let max = t.diff.data().iter().copied().fold(0.0, f64::max);
            println!("max_abs_diff={max}");
            Ok(())
        }
    }
}
