//! Operator surface: dataset generation, training, captioning, evaluation,
//! ablation comparison, the positional-encoding probe, and the gradient
//! check suite.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or schema
//! error, 3 numeric failure. Diagnostics go to stderr; stdout carries only
//! command output (captions, tables, CSV).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use mobidiary_core::adam::AdamState;
use mobidiary_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mobidiary_core::config::RunConfig;
use mobidiary_core::datakit::{self, GenSpec, Sample};
use mobidiary_core::encoder::Modality;
use mobidiary_core::generator::{greedy_decode, DecodeConfig};
use mobidiary_core::gradcheck;
use mobidiary_core::metrics::answerer::{Answerer, BuiltinAnswerer, ProtoAnswerer};
use mobidiary_core::metrics::{self, MetricError, MetricReport, QaItem};
use mobidiary_core::model::{CaptionModel, DataDims, ModelError};
use mobidiary_core::parallel;
use mobidiary_core::pe;
use mobidiary_core::text::{tokenize, Vocabulary};
use mobidiary_core::trainer::{self, TrainError, TrainSample};

/// Working precision for every CLI run; checkpoints record the dtype.
type F = f32;

/// Content vocabulary cap for training runs.
const VOCAB_K: usize = 1000;

#[derive(Parser)]
#[command(
    name = "mobidiary",
    version,
    about = "Sensor-to-caption pipeline: synthetic data, training, decoding, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled dataset (80/20 split)
    GenData {
        /// Sensor modality: imu or wifi
        #[arg(long)]
        modality: String,
        /// Total number of samples before the split
        #[arg(long)]
        n: usize,
        /// Generation seed
        #[arg(long)]
        seed: u64,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a captioning model on the train split of a dataset directory
    Train {
        /// Run configuration file (dotted keys, one per line)
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (train.jsonl / test.jsonl / manifest.json)
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one sample from a JSONL file and print the caption
    Caption {
        /// Checkpoint directory
        #[arg(long)]
        ckpt: PathBuf,
        /// JSONL sample file
        #[arg(long)]
        input: PathBuf,
        /// Zero-based record index into the input file
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Evaluate a checkpoint on the test split of a dataset directory
    Eval {
        /// Checkpoint directory
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; the test split is scored
        #[arg(long)]
        data: PathBuf,
        /// Consistency answerer: builtin | proto:CMD
        #[arg(long, default_value = "builtin")]
        answerer: String,
    },
    /// Train the full model plus the three ablations and compare them
    Ablate {
        /// Run configuration file shared by all variants
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (trains on train.jsonl, scores test.jsonl)
        #[arg(long)]
        data: PathBuf,
        /// Directory for variant checkpoints and the comparison CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the positional-encoding similarity decay curve as CSV
    PeProbe {
        /// Encoding dimension (even)
        #[arg(long, default_value_t = 128)]
        d: usize,
        /// Frequency base
        #[arg(long, default_value_t = 1000.0)]
        base: f64,
        /// Largest lag to evaluate
        #[arg(long, default_value_t = 200)]
        max_lag: usize,
        /// Output CSV path (rows "lag,similarity")
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient verification suite
    Gradcheck,
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn from_train_error(e: TrainError) -> CliError {
    match e {
        TrainError::BadConfig(_) => CliError::Usage(e.to_string()),
        TrainError::EmptyDataset | TrainError::Model(_) => CliError::Data(e.to_string()),
        TrainError::NonFinite { .. } | TrainError::Graph(_) | TrainError::Adam(_) => {
            CliError::Numeric(e.to_string())
        }
    }
}

fn from_metric_error(e: MetricError) -> CliError {
    match e {
        MetricError::OutOfRange { .. } => CliError::Numeric(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

fn from_data_error(e: datakit::DataError) -> CliError {
    match e {
        datakit::DataError::BadSpec(_) | datakit::DataError::NoActions => {
            CliError::Usage(e.to_string())
        }
        _ => CliError::Data(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::GenData {
            modality,
            n,
            seed,
            out,
        } => cmd_gen_data(&modality, n, seed, &out),
        Cmd::Train { config, data, out } => cmd_train(&config, &data, &out),
        Cmd::Caption { ckpt, input, index } => cmd_caption(&ckpt, &input, index),
        Cmd::Eval {
            ckpt,
            data,
            answerer,
        } => cmd_eval(&ckpt, &data, &answerer),
        Cmd::Ablate { config, data, out } => cmd_ablate(&config, &data, &out),
        Cmd::PeProbe {
            d,
            base,
            max_lag,
            out,
        } => cmd_pe_probe(d, base, max_lag, &out),
        Cmd::Gradcheck => cmd_gradcheck(),
    }
}

fn cmd_gen_data(modality: &str, n: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let modality = Modality::parse(modality)
        .ok_or_else(|| CliError::Usage(format!("unknown modality {modality:?}, expected imu or wifi")))?;
    let spec = match modality {
        Modality::Imu => GenSpec::imu(n, seed),
        Modality::Wifi => GenSpec::wifi(n, seed),
    };
    let (train, test) = datakit::gen_dataset(&spec).map_err(from_data_error)?;
    datakit::write_dataset(out, &spec, &train, &test).map_err(from_data_error)?;
    eprintln!(
        "wrote {} train / {} test samples to {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn read_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Shapes shared by every sample in a split; the placement table always
/// covers the full catalog for the modality.
fn dims_from_samples(samples: &[Sample]) -> Result<DataDims, CliError> {
    let first = &samples[0].sensor;
    for s in samples {
        if s.sensor.modality != first.modality
            || s.sensor.devices != first.devices
            || s.sensor.channels != first.channels
        {
            return Err(CliError::Data(format!(
                "sample {} has shape {}x{} ({}), expected {}x{} ({})",
                s.id,
                s.sensor.devices,
                s.sensor.channels,
                s.sensor.modality.as_str(),
                first.devices,
                first.channels,
                first.modality.as_str()
            )));
        }
    }
    Ok(DataDims {
        modality: first.modality,
        devices: first.devices,
        channels: first.channels,
        num_placements: datakit::placement_catalog(first.modality).len(),
    })
}

struct TrainedRun {
    vocab: Vocabulary,
    dims: DataDims,
    model: CaptionModel<F>,
    opt: AdamState<F>,
    loss_log: String,
}

fn run_training(
    run: &RunConfig,
    train_split: &[Sample],
    label: &str,
) -> Result<TrainedRun, CliError> {
    let dims = dims_from_samples(train_split)?;
    let corpus: Vec<String> = train_split.iter().map(|s| s.caption.clone()).collect();
    let vocab = Vocabulary::build(&corpus, VOCAB_K).map_err(data)?;
    let mut model = CaptionModel::<F>::new(
        run.model_config(dims.modality),
        dims,
        vocab.total(),
        run.seed,
    )
    .map_err(usage)?;
    let tcfg = run.train_config();
    let mut opt = AdamState::new(&model.params, tcfg.lr, tcfg.weight_decay);
    let samples: Vec<TrainSample> = train_split
        .iter()
        .map(|s| TrainSample {
            sensor: s.sensor.clone(),
            caption_ids: tokenize(&s.caption, &vocab).ids,
        })
        .collect();
    eprintln!(
        "[{label}] training on {} samples ({} params, vocab {})",
        samples.len(),
        model.params.total_elements(),
        vocab.total()
    );
    let result = trainer::train(&mut model, &mut opt, &samples, &tcfg, |epoch, loss| {
        if epoch == 1 || epoch == tcfg.epochs || epoch % 10 == 0 {
            eprintln!("[{label}] epoch {epoch}/{}: loss {loss:.6}", tcfg.epochs);
        }
    })
    .map_err(from_train_error)?;
    eprintln!(
        "[{label}] done: {} steps, final loss {:.6}",
        result.steps, result.final_loss
    );
    Ok(TrainedRun {
        vocab,
        dims,
        model,
        opt,
        loss_log: trainer::loss_log_csv(&result.loss_log),
    })
}

fn save_run(run: &RunConfig, trained: TrainedRun, out: &Path) -> Result<(), CliError> {
    let ckpt = Checkpoint {
        run: run.clone(),
        dims: trained.dims,
        vocab: trained.vocab,
        seed: run.seed,
        params: trained.model.params,
        opt: trained.opt,
    };
    save_checkpoint(&ckpt, out).map_err(data)?;
    fs::write(out.join("loss_log.csv"), trained.loss_log)
        .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    eprintln!("checkpoint saved to {}", out.display());
    Ok(())
}

fn cmd_train(config: &Path, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let run = read_run_config(config)?;
    let ds = datakit::read_dataset(data_dir).map_err(from_data_error)?;
    if ds.train.is_empty() {
        return Err(CliError::Data(format!(
            "{}: train split is empty",
            data_dir.display()
        )));
    }
    let trained = run_training(&run, &ds.train, "train")?;
    save_run(&run, trained, out)
}

fn cmd_caption(ckpt_dir: &Path, input: &Path, index: usize) -> Result<(), CliError> {
    let ckpt: Checkpoint<F> = load_checkpoint(ckpt_dir).map_err(data)?;
    let model = ckpt.model().map_err(data)?;
    let samples = datakit::read_jsonl(input).map_err(from_data_error)?;
    let sample = samples.get(index).ok_or_else(|| {
        CliError::Data(format!(
            "index {index} out of range, {} has {} samples",
            input.display(),
            samples.len()
        ))
    })?;
    let dcfg = DecodeConfig {
        t_max: ckpt.run.t_max,
        ..DecodeConfig::default()
    };
    let decoded = greedy_decode(&model, &sample.sensor, &ckpt.vocab, &dcfg).map_err(data)?;
    println!("{}", decoded.caption);
    Ok(())
}

fn make_answerer(spec: &str) -> Result<Box<dyn Answerer>, CliError> {
    if spec == "builtin" {
        return Ok(Box::new(BuiltinAnswerer));
    }
    if let Some(cmd) = spec.strip_prefix("proto:") {
        return Ok(Box::new(ProtoAnswerer::spawn(cmd).map_err(usage)?));
    }
    Err(CliError::Usage(format!(
        "unknown answerer {spec:?}, expected builtin or proto:CMD"
    )))
}

fn decode_all(
    model: &CaptionModel<F>,
    vocab: &Vocabulary,
    t_max: usize,
    samples: &[Sample],
) -> Result<Vec<String>, CliError> {
    let dcfg = DecodeConfig {
        t_max,
        ..DecodeConfig::default()
    };
    parallel::pool()
        .install(|| {
            samples
                .par_iter()
                .map(|s| greedy_decode(model, &s.sensor, vocab, &dcfg).map(|d| d.caption))
                .collect::<Result<Vec<_>, ModelError>>()
        })
        .map_err(data)
}

fn evaluate_split(
    ckpt: &Checkpoint<F>,
    samples: &[Sample],
    answerer: &mut dyn Answerer,
) -> Result<MetricReport, CliError> {
    let model = ckpt.model().map_err(data)?;
    let cands = decode_all(&model, &ckpt.vocab, ckpt.run.t_max, samples)?;
    let refs: Vec<String> = samples.iter().map(|s| s.caption.clone()).collect();
    let qa: Vec<Vec<QaItem>> = samples.iter().map(|s| s.qa.clone()).collect();
    metrics::evaluate(&cands, &refs, &qa, answerer).map_err(from_metric_error)
}

fn cmd_eval(ckpt_dir: &Path, data_dir: &Path, answerer_spec: &str) -> Result<(), CliError> {
    let ckpt: Checkpoint<F> = load_checkpoint(ckpt_dir).map_err(data)?;
    let ds = datakit::read_dataset(data_dir).map_err(from_data_error)?;
    if ds.test.is_empty() {
        return Err(CliError::Data(format!(
            "{}: test split is empty",
            data_dir.display()
        )));
    }
    let mut answerer = make_answerer(answerer_spec)?;
    let report = evaluate_split(&ckpt, &ds.test, answerer.as_mut())?;
    print!("{}", report.table());
    print!("{}", report.csv());
    Ok(())
}

fn cmd_ablate(config: &Path, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let base = read_run_config(config)?;
    let ds = datakit::read_dataset(data_dir).map_err(from_data_error)?;
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(CliError::Data(format!(
            "{}: both splits must be non-empty",
            data_dir.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;

    let variants: [(&str, &str, fn(&mut RunConfig)); 4] = [
        ("full", "full", |_| {}),
        ("no_patch", "w/o patch", |r| r.ablation.patch = false),
        ("no_pe", "w/o PE", |r| r.ablation.pe = false),
        ("no_convffn", "w/o Conv-FFN", |r| r.ablation.convffn = false),
    ];

    let mut rows: Vec<(String, MetricReport)> = Vec::new();
    let mut csv = String::from("variant,bleu4,meteor,rouge_l,cider,s_avg,rmc\n");
    for (dir_name, display, tweak) in variants {
        let mut run = base.clone();
        tweak(&mut run);
        let trained = run_training(&run, &ds.train, dir_name)?;
        let vocab = trained.vocab.clone();
        let dims = trained.dims;
        let ckpt = Checkpoint {
            run: run.clone(),
            dims,
            vocab,
            seed: run.seed,
            params: trained.model.params.clone(),
            opt: trained.opt.clone(),
        };
        let mut answerer = BuiltinAnswerer;
        let report = evaluate_split(&ckpt, &ds.test, &mut answerer)?;
        save_checkpoint(&ckpt, &out.join(dir_name)).map_err(data)?;
        fs::write(out.join(dir_name).join("loss_log.csv"), &trained.loss_log)
            .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
        let _ = writeln!(
            csv,
            "{dir_name},{:?},{:?},{:?},{:?},{:?},{:?}",
            report.bleu4, report.meteor, report.rouge_l, report.cider, report.s_avg, report.rmc
        );
        rows.push((display.to_string(), report));
    }

    let csv_path = out.join("ablation.csv");
    fs::write(&csv_path, &csv).map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))?;

    println!(
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "B@4", "M", "R", "C", "S-Avg", "RMC"
    );
    for (name, r) in &rows {
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            name, r.bleu4, r.meteor, r.rouge_l, r.cider, r.s_avg, r.rmc
        );
    }
    eprintln!("ablation results written to {}", csv_path.display());
    Ok(())
}

fn cmd_pe_probe(d: usize, base: f64, max_lag: usize, out: &Path) -> Result<(), CliError> {
    let curve = pe::pe_decay_curve(d, base, max_lag).map_err(usage)?;
    let mut csv = String::new();
    for (lag, sim) in &curve {
        let _ = writeln!(csv, "{lag},{sim:?}");
    }
    fs::write(out, csv).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    eprintln!("wrote {} rows to {}", curve.len(), out.display());
    Ok(())
}

fn cmd_gradcheck() -> Result<(), CliError> {
    let mut suites = Vec::new();
    for seed in [0u64, 1] {
        suites.extend(gradcheck::primitive_suite(seed));
        suites.push(gradcheck::model_case(seed));
    }
    let mut failures = 0usize;
    let mut cases = 0usize;
    for s in &suites {
        cases += s.cases;
        println!(
            "{} {:<28} cases {:>3}  max rel err {:.3e}  tol {:.0e}",
            if s.passed() { "PASS" } else { "FAIL" },
            s.name,
            s.cases,
            s.max_rel_err,
            s.tol
        );
        if !s.passed() {
            failures += 1;
        }
    }
    println!("{} suites, {} cases, {} failures", suites.len(), cases, failures);
    if failures > 0 {
        return Err(CliError::Numeric(format!(
            "{failures} gradient check suites failed"
        )));
    }
    Ok(())
}
