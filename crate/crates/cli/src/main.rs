use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairgen::data::synthesize_biased;
use fairgen::gan::ModelBundle;
use fairgen::pipeline::{
    self, PipelineConfig, Variant, PRETRAIN_CHECKPOINT, SYNTHETIC_CSV, TRANSFORM_CHECKPOINT,
};
use fairgen::{Error, Result};

/// Fairness-aware synthetic tabular data: pretrain, de-bias, sample, evaluate.
#[derive(Parser)]
#[command(name = "fairgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML pipeline config.
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the variant (baseline_alpha0, btgan_minus, btgan_full).
    #[arg(long)]
    variant: Option<Variant>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train and test splits as CSV.
    SynthData(Common),
    /// Stage 1: train the three players and record subgroup disparities.
    Pretrain(Common),
    /// Stage 2: fine-tune with the fairness penalty.
    Transform(Common),
    /// Stage 3: generate (and filter) synthetic rows.
    Sample(Common),
    /// Train downstream models on the synthetic rows and test on real data.
    Evaluate(Common),
    /// All stages plus reports.
    RunAll(Common),
    /// Stages 2 and 3 for several fairness weights from one pretrained model.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        alphas: Vec<f64>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::from_file(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(v) = c.variant {
        cfg.variant = v;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(cfg)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn checkpoint(cfg: &PipelineConfig, prep: &pipeline::Prepared, name: &str) -> Result<ModelBundle> {
    let path = cfg.output_dir.join(name);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    ModelBundle::load(&path, &prep.train.encoding().hash())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(c) => {
            let cfg = load_config(&c)?;
            let prep = pipeline::prepare_data(&cfg)?;
            prep.train.to_table()?.write_csv(&cfg.output_dir.join("train.csv"))?;
            prep.test.to_table()?.write_csv(&cfg.output_dir.join("test.csv"))?;
            if let pipeline::DataSource::Synthetic { spec } = &cfg.data {
                let truth = synthesize_biased(spec)?.ground_truth().cloned();
                write_json(&cfg.output_dir.join("ground_truth.json"), &truth)?;
            }
            println!("wrote {} train and {} test rows", prep.train.n_rows(), prep.test.n_rows());
        }
        Command::Pretrain(c) => {
            let cfg = load_config(&c)?;
            let prep = pipeline::prepare_data(&cfg)?;
            let bundle = pipeline::run_pretrain(&cfg, &prep)?;
            bundle.save(&cfg.output_dir.join(PRETRAIN_CHECKPOINT))?;
            println!("pretrained for {} epochs", cfg.training.epochs);
        }
        Command::Transform(c) => {
            let cfg = load_config(&c)?;
            let prep = pipeline::prepare_data(&cfg)?;
            let pre = checkpoint(&cfg, &prep, PRETRAIN_CHECKPOINT)?;
            let bundle = pipeline::run_transform(&cfg, &prep, pre)?;
            bundle.save(&cfg.output_dir.join(TRANSFORM_CHECKPOINT))?;
            println!("transformed with alpha {}", cfg.alpha());
        }
        Command::Sample(c) => {
            let cfg = load_config(&c)?;
            let prep = pipeline::prepare_data(&cfg)?;
            let bundle = checkpoint(&cfg, &prep, TRANSFORM_CHECKPOINT)?;
            let sampled = pipeline::run_sample(&cfg, &prep, &bundle)?;
            pipeline::write_synthetic(&prep, &sampled, &cfg.output_dir.join(SYNTHETIC_CSV))?;
            write_json(&cfg.output_dir.join("sample.json"), &sampled.drs)?;
            println!("wrote {} synthetic rows", sampled.labels.len());
        }
        Command::Evaluate(c) => {
            let cfg = load_config(&c)?;
            let prep = pipeline::prepare_data(&cfg)?;
            let path = cfg.output_dir.join(SYNTHETIC_CSV);
            if !path.exists() {
                return Err(Error::MissingArtifact(path));
            }
            let (x, labels) = pipeline::read_synthetic(&prep, &path)?;
            let ev = pipeline::run_evaluate(&cfg, &prep, &x, &labels)?;
            write_json(&cfg.output_dir.join("evaluation.json"), &ev)?;
            for r in &ev.synthetic {
                println!(
                    "{}: accuracy {:.4}, parity gap {:+.4}, data leakage {:.4}, delta {:+.4}",
                    r.model, r.test.accuracy, r.parity_gap, r.data_leakage, r.delta_amplification
                );
            }
        }
        Command::RunAll(c) => {
            let cfg = load_config(&c)?;
            let out = pipeline::run_pipeline(&cfg)?;
            let e = &out.report.evaluation;
            for (real, synth) in e.real.iter().zip(&e.synthetic) {
                println!(
                    "{}: real accuracy {:.4} gap {:+.4} | synthetic accuracy {:.4} gap {:+.4} leakage {:.4}",
                    synth.model,
                    real.test.accuracy,
                    real.parity_gap,
                    synth.test.accuracy,
                    synth.parity_gap,
                    synth.data_leakage
                );
            }
            println!("reports in {}", cfg.output_dir.display());
        }
        Command::SweepAlpha { common, alphas } => {
            let cfg = load_config(&common)?;
            let sweep = pipeline::run_alpha_sweep(&cfg, &alphas)?;
            let csv = cfg.output_dir.join("sweep.csv");
            std::fs::write(&csv, sweep.to_csv()).map_err(|e| Error::io(&csv, e))?;
            write_json(&cfg.output_dir.join("sweep.json"), &sweep)?;
            print!("{}", sweep.to_csv());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::InfeasibleSpec(_) | Error::InvalidSchema(_) | Error::SchemaMismatch { .. } => 2,
        Error::Divergence { .. } => 3,
        Error::DrsAbort { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
