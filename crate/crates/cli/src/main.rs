use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use tactiverse_core::codec::peaks_to_csv;
use tactiverse_core::config::RunConfig;
use tactiverse_core::dataset::Dataset;
use tactiverse_core::engine::gradcheck;
use tactiverse_core::engine::{Network, Tensor};
use tactiverse_core::eval::{
    evaluate_single_point, multi_contact_eval, predict_samples, two_point_discrimination, Predictor,
};
use tactiverse_core::format::{load_checkpoint, load_tensor, save_checkpoint, write_file};
use tactiverse_core::sim::{Sample, ScenarioSpec};
use tactiverse_core::train::{loss_curve_csv, split_dataset, train};
use tactiverse_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "tactiverse", version, about = "Tactile contact-geometry estimation from marker images")]
struct Cli {
    /// Master seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads. Affects speed only, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Unet,
    Cnn,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    /// Every eligible sample.
    All,
    /// The held-out part of the training split for the same seed.
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Counts per scenario kind, e.g. single:5000,dual:1000,triple:1000.
        #[arg(long, default_value = "single:5000")]
        scenario: String,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "unet")]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Single-point accuracy report (per-axis R², MAE, RMSE).
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Inter-point distance error over a dual-indenter separation sweep.
    TwoPoint {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Position and depth error grouped by contact count.
    MultiContact {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Extract contacts from one image.
    Infer {
        #[arg(long, required_unless_present = "passthrough")]
        model: Option<PathBuf>,
        /// Treat the image as a heatmap and decode it directly.
        #[arg(long, conflicts_with = "model")]
        passthrough: bool,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        op: String,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Corrupt one analytic gradient entry (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingInput(_) => 2,
        Error::Shape(_) => 3,
        Error::Format { .. } | Error::RawFormat(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

enum Failure {
    /// A check ran and reported failures; already printed.
    Checks,
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the effective configuration next to every artifact.
fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    write_file(&dir.join("config.json"), cfg.to_json().as_bytes())
}

fn load_model(path: &Path) -> Result<Network<f32>> {
    Network::from_params(load_checkpoint(path)?)
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    let cfg = load_config(cli)?;
    let seed = cli.seed.unwrap_or(cfg.train.seed);
    match &cli.cmd {
        Command::GenData { out, scenario } => {
            let spec = ScenarioSpec::parse(scenario)?;
            info!("generating {} samples", spec.total());
            let ds = Dataset::generate(seed, &spec, &cfg)?;
            ds.save(out)?;
            echo_config(out, &cfg)?;
            let counts: Vec<String> = ds.manifest.counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("wrote {} samples to {} ({})", ds.len(), out.display(), counts.join(", "));
        }
        Command::Train {
            data,
            arch,
            out,
            epochs,
            lr,
            batch,
        } => {
            let mut cfg = cfg.clone();
            if let Some(e) = epochs {
                cfg.train.max_epochs = *e;
            }
            if let Some(l) = lr {
                cfg.train.lr = *l;
            }
            if let Some(b) = batch {
                cfg.train.batch_size = *b;
            }
            cfg.train.validate()?;
            let ds = Dataset::load(data)?;
            let (tr, te) = split_dataset(&ds.samples, cfg.train.split_ratio, seed)?;
            let arch = cfg.model.architecture(match arch {
                Arch::Unet => "unet",
                Arch::Cnn => "cnn",
            })?;
            let net = Network::new(arch, seed)?;
            info!("training on {} samples, validating on {}", tr.len(), te.len());
            let outcome = train(net, &tr, &te, &cfg.train)?;
            create_dir(out)?;
            save_checkpoint(&out.join("model.tvm"), &outcome.network.params)?;
            write_file(&out.join("loss.csv"), loss_curve_csv(&outcome.curve).as_bytes())?;
            echo_config(out, &cfg)?;
            println!(
                "best epoch {} of {} (validation loss {:.6}{}); checkpoint {}",
                outcome.best_epoch,
                outcome.curve.len() - 1,
                outcome.best_val_loss,
                if outcome.stopped_early { ", stopped early" } else { "" },
                out.join("model.tvm").display()
            );
        }
        Command::Eval {
            data,
            model,
            report,
            split,
        } => {
            let net = load_model(model)?;
            let ds = Dataset::load(data)?;
            let pool: Vec<&Sample> = match split {
                Split::All => ds.samples.iter().collect(),
                Split::Test => split_dataset(&ds.samples, cfg.train.split_ratio, seed)?.1,
            };
            let singles: Vec<&Sample> = pool.iter().copied().filter(|s| s.contacts.len() == 1).collect();
            if singles.len() < pool.len() {
                warn!("skipping {} samples without exactly one contact", pool.len() - singles.len());
            }
            if singles.is_empty() {
                return Err(Error::Schema("dataset has no single-contact samples".into()).into());
            }
            let preds = predict_samples(&Predictor::Model(net), &singles, &cfg.grid, &cfg.kernel, &cfg.eval.peaks)?;
            let r = evaluate_single_point(&preds, &singles)?;
            create_dir(report)?;
            write_file(&report.join("single_point.csv"), r.to_csv().as_bytes())?;
            write_file(&report.join("summary.txt"), format!("{}\n", r.summary()).as_bytes())?;
            echo_config(report, &cfg)?;
            println!("{}", r.summary());
        }
        Command::TwoPoint { data, model, report } => {
            let net = load_model(model)?;
            let ds = Dataset::load(data)?;
            let sweep: Vec<&Sample> = ds.samples.iter().filter(|s| s.separation_mm.is_some()).collect();
            if sweep.is_empty() {
                return Err(Error::Schema("dataset has no separation-tagged dual samples".into()).into());
            }
            let preds = predict_samples(&Predictor::Model(net), &sweep, &cfg.grid, &cfg.kernel, &cfg.eval.peaks)?;
            let r = two_point_discrimination(&preds, &sweep, cfg.eval.match_gate_mm)?;
            create_dir(report)?;
            write_file(&report.join("two_point.csv"), r.to_csv().as_bytes())?;
            write_file(&report.join("summary.txt"), format!("{}\n", r.summary()).as_bytes())?;
            echo_config(report, &cfg)?;
            print!("{}", r.to_csv());
            println!("{}", r.summary());
        }
        Command::MultiContact { data, model, report } => {
            let net = load_model(model)?;
            let ds = Dataset::load(data)?;
            let multi: Vec<&Sample> = ds.samples.iter().filter(|s| s.contacts.len() >= 2).collect();
            if multi.is_empty() {
                return Err(Error::Schema("dataset has no multi-contact samples".into()).into());
            }
            let preds = predict_samples(&Predictor::Model(net), &multi, &cfg.grid, &cfg.kernel, &cfg.eval.peaks)?;
            let r = multi_contact_eval(&preds, &multi, cfg.eval.match_gate_mm)?;
            create_dir(report)?;
            write_file(&report.join("multi_contact.csv"), r.to_csv().as_bytes())?;
            write_file(&report.join("summary.txt"), format!("{}\n", r.summary()).as_bytes())?;
            echo_config(report, &cfg)?;
            println!("{}", r.summary());
        }
        Command::Infer {
            model,
            passthrough,
            image,
            out,
        } => {
            let predictor = match (model, passthrough) {
                (Some(m), false) => Predictor::Model(load_model(m)?),
                _ => Predictor::HeatmapPassthrough,
            };
            let img = load_tensor(image)?;
            let batch = as_batch(img)?;
            if let Predictor::Model(net) = &predictor {
                let want = net.input_shape();
                if batch.shape()[1..] != want[..] {
                    return Err(Error::shape(format!(
                        "image shape {:?} does not match the model input {:?}",
                        &batch.shape()[1..],
                        want
                    ))
                    .into());
                }
            }
            let peaks = predictor.predict(&batch, &cfg.grid, &cfg.kernel, &cfg.eval.peaks)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
                echo_config(parent, &cfg)?;
            }
            write_file(out, peaks_to_csv(&peaks[0]).as_bytes())?;
            println!("{} contacts", peaks[0].len());
        }
        Command::Gradcheck {
            op,
            tol,
            instances,
            corrupt,
        } => {
            let ops = gradcheck::select_ops(op)?;
            let reports = gradcheck::run_suite(&ops, *instances, *tol, seed, *corrupt)?;
            print!("{}", gradcheck::suite_table(&reports));
            if reports.iter().any(|r| !r.passed) {
                return Err(Failure::Checks);
            }
        }
    }
    Ok(())
}

/// Accepts a single (C, H, W) image or a batch of one.
fn as_batch(t: Tensor<f32>) -> Result<Tensor<f32>> {
    match t.shape().len() {
        3 => {
            let s = t.shape().to_vec();
            t.reshape(&[1, s[0], s[1], s[2]])
        }
        4 if t.shape()[0] == 1 => Ok(t),
        _ => Err(Error::shape(format!("expected a (C, H, W) image, got {:?}", t.shape()))),
    }
}
