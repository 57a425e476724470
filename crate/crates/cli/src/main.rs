use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use damage_ig::baselines::BaselineKind;
use damage_ig::harness::{self, Checkpoint, ExperimentConfig, Report, Slice};
use damage_ig::layout::SensorLayout;
use damage_ig::models::Architecture;
use damage_ig::preprocessing::io::{run_dir_name, write_run_dir};
use damage_ig::surrogate::{campaign_plan, ingest_external_run, simulate_campaign_run, RunFormat};
use damage_ig::{Error, Result};

/// Damage classification and Integrated Gradients attribution on
/// aerodynamic pressure time series.
#[derive(Parser)]
#[command(name = "damage-ig", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config file (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Angle of attack of the working subset, 0 or 8.
    #[arg(long, global = true)]
    aoa: Option<f64>,
    /// Split index 1..=3.
    #[arg(long, global = true)]
    split: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Generator preset or generator TOML path.
    #[arg(long, global = true)]
    generator: Option<String>,
    #[arg(long, global = true)]
    generator_seed: Option<u64>,
    /// Read runs from this directory instead of simulating them.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Columnar,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the surrogate campaign and write columnar run directories.
    Generate {
        /// Write all angles of attack instead of the configured one.
        #[arg(long)]
        all: bool,
        /// Also write the generator config used.
        #[arg(long)]
        write_config: Option<PathBuf>,
        /// Stop after writing the generator file.
        #[arg(long, requires = "write_config")]
        config_only: bool,
    },
    /// Validate an external run and store it in columnar form.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: FormatArg,
    },
    /// Train the configured architecture.
    Train {
        #[arg(long)]
        arch: Option<Architecture>,
    },
    /// Evaluate a checkpoint on one slice.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        slice: Slice,
    },
    /// Integrated Gradients over correctly classified samples.
    Attribute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        baseline: Option<BaselineKind>,
        #[arg(long)]
        steps: Option<usize>,
        /// Attribute at most this many samples of the slice.
        #[arg(long)]
        max_samples: Option<usize>,
    },
    /// Evaluate a checkpoint on APB, TVB and MVB reduced test inputs.
    Ablate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train on baseline-reduced data (TVB: CNN, MVB: mean-vector MLP).
    Retrain {
        #[arg(long)]
        baseline: BaselineKind,
    },
    /// STFT and vortex-shedding scan of one sensor.
    Spectra {
        #[arg(long)]
        sensor: Option<usize>,
        #[arg(long)]
        series: Option<usize>,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        run: Option<usize>,
        /// `coarse` or `fine`.
        #[arg(long)]
        preset: Option<String>,
        /// Candidate frequencies in Hz, comma separated.
        #[arg(long, value_delimiter = ',')]
        candidates: Option<Vec<f64>>,
    },
    /// Print the text summary of a JSON report.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Data(_) | Error::Shape(_) | Error::Io { .. } | Error::Json(_) => 3,
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &c.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.aoa {
        cfg.aoa_deg = v;
    }
    if let Some(v) = c.split {
        cfg.split_index = v;
    }
    if let Some(v) = c.epochs {
        cfg.training.max_epochs = v;
    }
    if let Some(v) = &c.generator {
        cfg.data.generator = v.clone();
    }
    if let Some(v) = c.generator_seed {
        cfg.data.generator_seed = v;
    }
    if let Some(v) = &c.data_dir {
        cfg.data.source = harness::DataSource::Dir;
        cfg.data.dir = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish(report: &Report, dir: &Path) -> Result<()> {
    print!("{}", report.summary());
    println!("written to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let layout = SensorLayout::default();
    match cli.command {
        Command::Generate {
            all,
            write_config,
            config_only,
        } => {
            let gen = harness::generator_config(&cfg.data.generator)?;
            gen.validate()?;
            if let Some(path) = write_config {
                fs::write(&path, gen.to_toml_string()).map_err(|e| Error::io(&path, e))?;
                if config_only {
                    return Ok(());
                }
            }
            let plan = campaign_plan(&gen, (!all).then_some(cfg.aoa_deg));
            for (series, class, run) in &plan {
                let raw =
                    simulate_campaign_run(&gen, series, *class, *run, cfg.data.generator_seed)?;
                write_run_dir(&cfg.out_dir.join(run_dir_name(&raw.meta)), &raw, &layout)?;
            }
            println!("{} runs written to {}", plan.len(), cfg.out_dir.display());
        }
        Command::Ingest { input, format } => {
            let format = match format {
                FormatArg::Csv => RunFormat::Csv,
                FormatArg::Columnar => RunFormat::Columnar,
            };
            let raw = ingest_external_run(&input, format)?;
            let dir = cfg.out_dir.join(run_dir_name(&raw.meta));
            write_run_dir(&dir, &raw, &layout)?;
            println!(
                "{} channels x {} steps written to {}",
                raw.channels(),
                raw.steps(),
                dir.display()
            );
        }
        Command::Train { arch } => {
            if let Some(a) = arch {
                cfg.model.architecture = a;
            }
            let data = harness::load_data(&cfg)?;
            let out = harness::train_classifier(&cfg, &data)?;
            let dir = cfg.out_dir.join("train");
            out.write(&dir)?;
            finish(&out.report, &dir)?;
        }
        Command::Eval { checkpoint, slice } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = harness::load_data(&cfg)?;
            let report = harness::evaluate_report(&ckpt, &cfg, &data, slice)?;
            let dir = cfg.out_dir.join("eval");
            report.write(&dir, "eval")?;
            finish(&report, &dir)?;
        }
        Command::Attribute {
            checkpoint,
            baseline,
            steps,
            max_samples,
        } => {
            if let Some(b) = baseline {
                cfg.attribution.baseline = b;
            }
            if let Some(s) = steps {
                cfg.attribution.steps = s;
            }
            if let Some(m) = max_samples {
                cfg.attribution.max_samples = m;
            }
            cfg.validate()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = harness::load_data(&cfg)?;
            let out = harness::attribute_campaign(&ckpt, &cfg, &data)?;
            let dir = cfg.out_dir.join("attribute");
            out.write(&dir)?;
            finish(&out.report, &dir)?;
        }
        Command::Ablate { checkpoint } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = harness::load_data(&cfg)?;
            let report = harness::ablate_on_baselines(&ckpt, &cfg, &data, &BaselineKind::ALL)?;
            let dir = cfg.out_dir.join("ablate");
            report.write(&dir, "ablate")?;
            finish(&report, &dir)?;
        }
        Command::Retrain { baseline } => {
            if baseline == BaselineKind::Apb {
                return Err(Error::Config(
                    "training a classifier on zero-only samples is not possible".into(),
                ));
            }
            let data = harness::load_data(&cfg)?;
            let out = harness::retrain_on_baseline(&cfg, &data, baseline)?;
            let dir = cfg
                .out_dir
                .join(format!("retrain-{}", baseline.name().to_lowercase()));
            out.write(&dir)?;
            finish(&out.report, &dir)?;
        }
        Command::Spectra {
            sensor,
            series,
            class,
            run,
            preset,
            candidates,
        } => {
            let s = &mut cfg.spectra;
            if let Some(v) = sensor {
                s.sensor_id = v;
            }
            if let Some(v) = series {
                s.test_series = v;
            }
            if let Some(v) = class {
                s.damage_class = v;
            }
            if let Some(v) = run {
                s.run_index = v;
            }
            if let Some(v) = preset {
                s.preset = v;
            }
            if let Some(v) = candidates {
                s.candidates = v;
            }
            let out = harness::spectra_scan(&cfg)?;
            let dir = cfg.out_dir.join("spectra");
            out.write(&dir)?;
            finish(&out.report, &dir)?;
        }
        Command::Report { input } => {
            let bytes = fs::read(&input).map_err(|e| Error::io(&input, e))?;
            let report: Report = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Data(format!("{}: not a report: {e}", input.display())))?;
            print!("{}", report.summary());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
