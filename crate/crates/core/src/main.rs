use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tem4ctr::diffcore::CheckpointFormat;
use tem4ctr::feedlog::{parse_events, write_events, FeedbackEvent};
use tem4ctr::harness::{
    ablate, evaluate, gen_synthetic, prepare_dataset, rela_impr, sweep, train, DataShape, DataSource, Dataset,
    ExperimentConfig,
    SweepParam, SynthConfig,
};
use tem4ctr::model::{IemKind, ModelVariant, ScoringInput, Tem4Ctr};
use tem4ctr::{with_thread_pool, Error, Result};

/// Click-through-rate model with temporally aligned exposure context.
///
/// Worker threads are capped by TEM4CTR_THREADS.
#[derive(Parser)]
#[command(name = "tem4ctr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic impression log as JSON lines.
    GenSynth {
        #[command(flatten)]
        synth: SynthArgs,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split an event log, cut samples and attach exposure contexts.
    Preprocess {
        #[arg(long)]
        events: PathBuf,
        /// Output directory for meta.json, train.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Train one model and print its evaluation report.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Save the trained parameters here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "binary")]
        checkpoint_format: FormatArg,
        /// AUC of a base model; adds the relative improvement to the report.
        #[arg(long)]
        base_auc: Option<f64>,
    },
    /// Score the test samples with a saved checkpoint.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every ablation variant and the baseline over several seeds.
    Ablate {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Also write the summary table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train once per value of d or l.
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        param: String,
        /// Comma-separated values; the usual grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Binary,
    Json,
}

/// Either a raw event log or a preprocessed directory.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

/// A raw event log, or synthetic data generated per seed.
#[derive(Args)]
struct SourceArgs {
    #[arg(long)]
    events: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator settings as JSON; flags below override.
    #[arg(long)]
    synth_config: Option<PathBuf>,
    #[arg(long)]
    num_users: Option<usize>,
    #[arg(long)]
    num_items: Option<usize>,
    #[arg(long)]
    num_categories: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    events_per_user: Option<usize>,
    #[arg(long)]
    exposure_rate: Option<f64>,
    #[arg(long)]
    click_temperature: Option<f64>,
    #[arg(long)]
    context_signal_strength: Option<f64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment settings as JSON; flags below override.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    iem_kind: Option<String>,
    #[arg(long)]
    per_side: bool,
    #[arg(long)]
    past_only: bool,
    /// Attention scoring input: interaction or concat.
    #[arg(long)]
    scoring: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    scorer_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    head_hidden: Option<Vec<usize>>,
    #[arg(long)]
    samples_per_user: Option<usize>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json(&at(path, std::fs::read_to_string(path))?).map_err(|e| bad_file(path, e))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        take!(n, l, d, learning_rate, batch_size, epochs, seed, samples_per_user);
        if let Some(v) = &self.variant {
            cfg.variant = v.parse::<ModelVariant>()?;
        }
        if let Some(v) = &self.iem_kind {
            cfg.iem_kind = v.parse::<IemKind>()?;
        }
        if let Some(v) = &self.scoring {
            cfg.scoring = match v.as_str() {
                "interaction" => ScoringInput::Interaction,
                "concat" => ScoringInput::Concat,
                other => return Err(Error::Config(format!("unknown scoring input {other}"))),
            };
        }
        if let Some(v) = &self.scorer_hidden {
            cfg.scorer_hidden = [v[0], v[1]];
        }
        if let Some(v) = &self.head_hidden {
            cfg.head_hidden = [v[0], v[1]];
        }
        cfg.per_side |= self.per_side;
        cfg.past_only |= self.past_only;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SynthArgs {
    fn resolve(&self) -> Result<SynthConfig> {
        let mut cfg: SynthConfig = match &self.synth_config {
            Some(path) => serde_json::from_slice(&at(path, std::fs::read(path))?).map_err(|e| bad_file(path, e.into()))?,
            None => SynthConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        take!(
            num_users,
            num_items,
            num_categories,
            latent_dim,
            events_per_user,
            exposure_rate,
            click_temperature,
            context_signal_strength
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prefix an I/O error with the path it concerns.
fn at<T>(path: &Path, result: io::Result<T>) -> Result<T> {
    result.map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// A config file that does not parse is a usage error.
fn bad_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    }
}

fn read_events(path: &Path) -> Result<Vec<FeedbackEvent>> {
    parse_events(BufReader::new(at(path, File::open(path))?))
}

/// Load or prepare the data. A preprocessed directory fixes `n`, `l` and
/// the search options, which then override `cfg`.
fn load_data(args: &DataArgs, cfg: &mut ExperimentConfig) -> Result<Dataset> {
    match (&args.events, &args.data) {
        (Some(events), _) => prepare_dataset(&read_events(events)?, cfg),
        (None, Some(dir)) => {
            if !dir.join("meta.json").is_file() {
                return Err(Error::Io(io::Error::new(
                    io::ErrorKind::NotFound,
                    format!("{}: no meta.json; run `tem4ctr preprocess` first", dir.display()),
                )));
            }
            let dataset = Dataset::load(dir)?;
            if DataShape::of(cfg) != dataset.shape {
                eprintln!(
                    "note: using the settings {} was preprocessed with: {:?}",
                    dir.display(),
                    dataset.shape
                );
                dataset.shape.apply(cfg);
            }
            Ok(dataset)
        }
        (None, None) => unreachable!("clap requires one of --events/--data"),
    }
}

fn source(args: &SourceArgs) -> Result<DataSource> {
    match &args.events {
        Some(path) => Ok(DataSource::Events(read_events(path)?)),
        None => Ok(DataSource::Synthetic(args.synth.resolve()?)),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { synth, seed, out } => {
            let mut cfg = synth.resolve()?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let events = gen_synthetic(&cfg)?;
            match out {
                Some(path) => write_events(&events, BufWriter::new(at(&path, File::create(&path))?)),
                None => write_events(&events, BufWriter::new(io::stdout().lock())),
            }
        }
        Command::Preprocess { events, out, exp } => {
            let cfg = exp.resolve()?;
            let dataset = prepare_dataset(&read_events(&events)?, &cfg)?;
            dataset.save(&out)?;
            eprintln!(
                "wrote {} training and {} test samples to {}",
                dataset.train.len(),
                dataset.test.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            exp,
            checkpoint,
            checkpoint_format,
            base_auc,
        } => {
            let mut cfg = exp.resolve()?;
            let dataset = load_data(&data, &mut cfg)?;
            let (model, mut report) = train(&dataset, &cfg)?;
            if let Some(base) = base_auc {
                report.rela_impr_vs_base = Some(rela_impr(report.auc, base)?);
            }
            if let Some(path) = checkpoint {
                let format = match checkpoint_format {
                    FormatArg::Binary => CheckpointFormat::Binary,
                    FormatArg::Json => CheckpointFormat::Json,
                };
                model.save(&path, format)?;
            }
            print_json(&report)
        }
        Command::Eval { data, exp, checkpoint } => {
            let mut cfg = exp.resolve()?;
            let dataset = load_data(&data, &mut cfg)?;
            let model = Tem4Ctr::load(cfg.model_config(1, 1, None), &checkpoint)?;
            let auc = evaluate(&model, &dataset.test)?;
            print_json(&serde_json::json!({
                "auc": auc,
                "test_samples": dataset.test.len(),
                "variant": cfg.variant,
            }))
        }
        Command::Ablate { source: src, exp, seeds, csv } => {
            let cfg = exp.resolve()?;
            let report = ablate(&cfg, &source(&src)?, &seeds, &ModelVariant::ALL)?;
            if let Some(path) = csv {
                at(&path, std::fs::write(&path, report.to_csv()))?;
            }
            print_json(&report)
        }
        Command::Sweep {
            source: src,
            exp,
            param,
            values,
        } => {
            let cfg = exp.resolve()?;
            let param: SweepParam = param.parse()?;
            let values = if values.is_empty() { param.default_values() } else { values };
            print_json(&sweep(&cfg, &source(&src)?, param, &values)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_thread_pool(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Bad settings are usage errors; everything else failed at run time.
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
