//! Command-line surface. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cifrenet_core::blocks::McimCfg;
use cifrenet_core::cost::{cascade_receptive_field, receptive_field, summarize, RfLayer, Shape4};
use cifrenet_core::gradcheck::{describe, run_suite};
use cifrenet_core::train::{
    argmax_channels, dataset_mean, evaluate, normalize, train_loop, ConfusionMatrix, HistoryRow, ToyCfg,
};
use cifrenet_core::Tensor;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, RunConfig};
use crate::dataset;
use crate::error::{Error, Result};
use crate::fsio;
use crate::pnm::{self, Image};

#[derive(Debug, Parser)]
#[command(name = "cifrenet", version, about = "Lightweight segmentation network: cost model, training and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer parameter / MAC / receptive-field report
    Summarize {
        /// Run configuration (defaults to the full network)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Input as NxCxHxW
        #[arg(long, default_value = "1x3x360x640")]
        input_shape: String,
        /// Also write the report as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Receptive field of a dilated cascade or an explicit layer list
    Rf {
        /// Dilation sets of the context module presets
        #[arg(long, default_value = "cityscapes", conflicts_with_all = ["dilations", "layers"])]
        preset: String,
        /// Three or more `;`-separated sets of comma-separated dilations
        #[arg(long, conflicts_with = "layers")]
        dilations: Option<String>,
        /// Comma-separated `kernel:dilation:stride` layers, input first
        #[arg(long)]
        layers: Option<String>,
        /// Kernel size of the dilated cascade
        #[arg(long, default_value_t = 3)]
        kernel: usize,
    },
    /// 64-bit finite-difference check of every operator and block
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Write the synthetic dataset as PPM/PGM pairs
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// `S` or `HxW`
        #[arg(long, default_value = "96")]
        size: String,
    },
    /// Train on a PPM/PGM directory
    Train(TrainArgs),
    /// Mean IoU of a checkpoint on a PPM/PGM directory
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        /// Write metrics as JSON
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Predict a class mask for one PPM image
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write an RGB palette image instead of class indices
        #[arg(long)]
        colorize: bool,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Run configuration (defaults to the mini preset)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV (`iter,loss,lr`)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Evaluate the final weights on this directory
    #[arg(long)]
    val_dir: Option<PathBuf>,
    /// Final metrics JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Override the configured iteration count
    #[arg(long)]
    max_iter: Option<usize>,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stdout>".into(),
        source: e,
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Summarize {
            config,
            input_shape,
            csv,
        } => {
            let cfg = load_config(config.as_deref(), RunConfig::default)?;
            let shape = parse_shape(&input_shape)?;
            let net = cifrenet_core::blocks::build_cifrenet::<f32>(&cfg.net, cfg.init_seed)?;
            let report = summarize(&net, shape)?;
            write!(out, "{}", report.to_table()).map_err(io_err)?;
            if let Some(p) = csv {
                fsio::write_atomic(&p, report.to_csv().as_bytes())?;
            }
        }
        Command::Rf {
            preset,
            dilations,
            layers,
            kernel,
        } => {
            let rf = match (dilations, layers) {
                (_, Some(l)) => receptive_field(&parse_layers(&l)?)?,
                (Some(d), None) => cascade_receptive_field(&parse_sets(&d)?, kernel)?,
                (None, None) => {
                    let m = match preset.as_str() {
                        "cityscapes" => McimCfg::cityscapes(),
                        "camvid" => McimCfg::camvid(),
                        "helen" => McimCfg::helen(),
                        p => return Err(Error::Invalid(format!("unknown preset `{p}` (cityscapes, camvid, helen)"))),
                    };
                    cascade_receptive_field(&m.dilations, kernel)?
                }
            };
            writeln!(out, "{rf}").map_err(io_err)?;
        }
        Command::Gradcheck { seeds } => {
            let results = run_suite(0..seeds)?;
            let failed = results.iter().filter(|r| !r.passed()).count();
            for r in &results {
                writeln!(out, "{}", describe(r)).map_err(io_err)?;
            }
            writeln!(out, "{} of {} checks passed", results.len() - failed, results.len()).map_err(io_err)?;
            if failed > 0 {
                writeln!(err, "error: {failed} gradient checks failed").map_err(io_err)?;
                return Ok(1);
            }
        }
        Command::GenData {
            out: dir,
            seed,
            count,
            classes,
            size,
        } => {
            let (height, width) = parse_size(&size)?;
            let cfg = ToyCfg {
                n_samples: count,
                classes,
                height,
                width,
                seed,
            };
            let written = dataset::write_toy(&dir, &cfg)?;
            writeln!(out, "wrote {} image/label pairs to {}", written.len(), dir.display()).map_err(io_err)?;
        }
        Command::Train(args) => train(args, out, err)?,
        Command::Eval {
            checkpoint,
            data_dir,
            report,
        } => {
            let ck = checkpoint::load(&checkpoint)?;
            let data = dataset::load_dir(&data_dir)?;
            let cm = evaluate(&ck.net, &data, &ck.mean)?;
            let shape = [1, 3, data[0].height(), data[0].width()];
            write!(out, "{}", iou_text(&cm)?).map_err(io_err)?;
            if let Some(p) = report {
                write_report(&p, &ck, &cm, shape)?;
            }
        }
        Command::Infer {
            checkpoint,
            input,
            output,
            colorize,
        } => {
            let ck = checkpoint::load(&checkpoint)?;
            let image = pnm::read_ppm(&input)?;
            let mask = predict(&ck, &image)?;
            let (h, w) = (image.shape()[1], image.shape()[2]);
            if colorize {
                pnm::write_image(&output, &colorize_mask(w, h, &mask)?)?;
            } else {
                pnm::write_pgm(&output, h, w, &mask)?;
            }
        }
    }
    Ok(0)
}

fn train(args: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref(), || RunConfig::mini(4))?;
    if let Some(n) = args.max_iter {
        cfg.train.max_iter = n;
    }
    let data = dataset::load_dir(&args.data_dir)?;
    let k = cfg.net.num_classes;
    if let Some(bad) = data
        .iter()
        .flat_map(|s| s.label.iter())
        .find(|&&l| l as usize >= k && l != cifrenet_core::ops::IGNORE_INDEX)
    {
        return Err(Error::Invalid(format!("label {bad} found, but the network has {k} classes")));
    }
    let mean = dataset_mean(data.iter().map(|s| &s.image));
    cfg.train.augment.mean = mean;
    let mut net = cifrenet_core::blocks::build_cifrenet::<f32>(&cfg.net, cfg.init_seed)?;
    let every = (cfg.train.max_iter / 20).max(1);
    let history = train_loop(&mut net, &data, &cfg.train, |r| {
        if r.iter % every == 0 || r.iter + 1 == cfg.train.max_iter {
            let _ = writeln!(err, "iter {:>6}  loss {:.5}  lr {:.6}", r.iter, r.loss, r.lr);
        }
    })?;
    checkpoint::save(&args.out, &cfg, &mean, &net)?;
    if let Some(p) = &args.metrics {
        fsio::write_atomic(p, history_csv(&history).as_bytes())?;
    }
    let last = history.last().expect("max_iter >= 1");
    writeln!(out, "trained {} iterations, final loss {:.5}", history.len(), last.loss).map_err(io_err)?;
    if args.val_dir.is_some() || args.report.is_some() {
        let eval_data = match &args.val_dir {
            Some(d) => dataset::load_dir(d)?,
            None => data,
        };
        let ck = Checkpoint {
            config: cfg,
            mean,
            net,
        };
        let cm = evaluate(&ck.net, &eval_data, &mean)?;
        write!(out, "{}", iou_text(&cm)?).map_err(io_err)?;
        if let Some(p) = &args.report {
            let shape = [1, 3, eval_data[0].height(), eval_data[0].width()];
            write_report(p, &ck, &cm, shape)?;
        }
    }
    Ok(())
}

fn load_config(path: Option<&Path>, default: impl FnOnce() -> RunConfig) -> Result<RunConfig> {
    match path {
        None => Ok(default()),
        Some(p) => {
            let bytes = fsio::read(p)?;
            let text = String::from_utf8(bytes).map_err(|_| Error::Invalid(format!("{}: not UTF-8", p.display())))?;
            config::parse(&text)
        }
    }
}

fn parse_usizes(s: &str, sep: char, what: &str) -> Result<Vec<usize>> {
    s.split(sep)
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("{what}: cannot parse `{}`", p.trim())))
        })
        .collect()
}

fn parse_shape(s: &str) -> Result<Shape4> {
    parse_usizes(s, 'x', "input shape")?
        .try_into()
        .map_err(|_| Error::Invalid(format!("input shape must be NxCxHxW, got `{s}`")))
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    match parse_usizes(s, 'x', "size")?.as_slice() {
        &[n] => Ok((n, n)),
        &[h, w] => Ok((h, w)),
        _ => Err(Error::Invalid(format!("size must be S or HxW, got `{s}`"))),
    }
}

fn parse_sets(s: &str) -> Result<Vec<Vec<usize>>> {
    s.split(';').map(|set| parse_usizes(set, ',', "dilations")).collect()
}

fn parse_layers(s: &str) -> Result<Vec<RfLayer>> {
    s.split(',')
        .map(|l| match parse_usizes(l, ':', "layers")?.as_slice() {
            &[k, d, st] => Ok(RfLayer::new(k, d, st)),
            _ => Err(Error::Invalid(format!("layer must be kernel:dilation:stride, got `{l}`"))),
        })
        .collect()
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("iter,loss,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{},{}", r.iter, r.loss, r.lr);
    }
    s
}

fn iou_text(cm: &ConfusionMatrix) -> Result<String> {
    let mut s = format!("miou {:.4}\n", cm.miou()?);
    for (k, iou) in cm.per_class_iou().iter().enumerate() {
        let _ = match iou {
            Some(v) => writeln!(s, "class {k:>3}  iou {v:.4}"),
            None => writeln!(s, "class {k:>3}  absent"),
        };
    }
    Ok(s)
}

/// `{"miou", "per_class_iou", "params", "macs"}`; absent classes are null.
pub fn metrics_json(cm: &ConfusionMatrix, params: u64, macs: u64) -> Result<String> {
    let v = serde_json::json!({
        "miou": cm.miou()?,
        "per_class_iou": cm.per_class_iou(),
        "params": params,
        "macs": macs,
    });
    Ok(serde_json::to_string_pretty(&v).expect("plain values serialize") + "\n")
}

fn write_report(path: &Path, ck: &Checkpoint, cm: &ConfusionMatrix, shape: Shape4) -> Result<()> {
    let report = summarize(&ck.net, shape)?;
    let json = metrics_json(cm, report.trainable_params(), report.total_macs())?;
    fsio::write_atomic(path, json.as_bytes())
}

/// Class map of one `[3, H, W]` image. Sides that are not a multiple of the
/// output stride are padded with the mean colour (zero after subtraction)
/// and the prediction is cropped back.
pub fn predict(ck: &Checkpoint, image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let os = ck.net.cfg.output_stride;
    let (ph, pw) = (h.div_ceil(os) * os, w.div_ceil(os) * os);
    let x = normalize(image, &ck.mean);
    let mut padded = vec![0.0f32; 3 * ph * pw];
    for c in 0..3 {
        for y in 0..h {
            let src = &x.data()[(c * h + y) * w..][..w];
            padded[(c * ph + y) * pw..][..w].copy_from_slice(src);
        }
    }
    let logits = ck.net.infer(&Tensor::new(&[1, 3, ph, pw], padded)?)?;
    let full = argmax_channels(&logits)?;
    Ok((0..h).flat_map(|y| full[y * pw..y * pw + w].iter().copied()).collect())
}

/// Class colours for `--colorize`; classes past the table wrap around to
/// index 1, and the ignore label is white.
pub const PALETTE: [[u8; 3]; 20] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
];

pub fn class_color(k: u8) -> [u8; 3] {
    match k as usize {
        255 => [255, 255, 255],
        i if i < PALETTE.len() => PALETTE[i],
        i => PALETTE[1 + (i - 1) % (PALETTE.len() - 1)],
    }
}

pub fn colorize_mask(width: usize, height: usize, mask: &[u8]) -> Result<Image> {
    Image::rgb(width, height, mask.iter().flat_map(|&k| class_color(k)).collect())
}
