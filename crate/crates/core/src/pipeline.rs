//! Config-driven end-to-end runs: data, pretraining, bias transform,
//! rejection sampling, evaluation and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    decode, load_csv, load_csv_with_encoding, synthesize_biased, BiasInjectionSpec, ColumnSchema, Dataset, SplitTag,
};
use crate::drs::{drs_filter, estimate_l, DrsConfig, DrsStats};
use crate::error::Stage;
use crate::eval::{evaluate, plug_in_mi, DownstreamModelSpec, EvalSettings, FairnessReport};
use crate::gan::{
    generate_staged, init_models, train_stage1, BatchSampler, BatchStage, ModelBundle, ModelSpecs, TrainingConfig,
};
use crate::mine::{generated_mi, train_stage2, MineConfig};
use crate::representation::{
    audit_dp_dgp, classify_band, compile_all, ldss, memberships, sampling_table, Audit, Subgroup, SubgroupSpec,
    DEFAULT_DELTA, DEFAULT_TEMPERATURE,
};
use crate::{rng, Error, Result};

/// The three compared configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No fairness penalty, uniform batches, no rejection sampling.
    BaselineAlpha0,
    /// Fairness penalty with uniform batches, no rejection sampling.
    BtganMinus,
    /// Fairness penalty, disparity-weighted batches and rejection sampling.
    #[default]
    BtganFull,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineAlpha0 => "baseline_alpha0",
            Variant::BtganMinus => "btgan_minus",
            Variant::BtganFull => "btgan_full",
        }
    }

    pub fn uses_weighted_sampler(self) -> bool {
        self == Variant::BtganFull
    }

    pub fn uses_rejection_sampling(self) -> bool {
        self == Variant::BtganFull
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_alpha0" => Ok(Variant::BaselineAlpha0),
            "btgan_minus" => Ok(Variant::BtganMinus),
            "btgan_full" => Ok(Variant::BtganFull),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected baseline_alpha0, btgan_minus or btgan_full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// A generated population. Its seed is replaced by the run's data seed.
    Synthetic { spec: BiasInjectionSpec },
    Csv {
        path: PathBuf,
        schema: Vec<ColumnSchema>,
        /// Fraction of training labels hidden from the models.
        #[serde(default)]
        label_missing_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdssConfig {
    /// Number of most recent pretraining epochs averaged.
    pub window: usize,
    pub temperature: f64,
}

impl Default for LdssConfig {
    fn default() -> Self {
        Self {
            window: 5,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
    /// Not part of the config hash.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub subgroups: Vec<SubgroupSpec>,
    /// Network architectures; derived from the data width when absent.
    #[serde(default)]
    pub models: Option<ModelSpecs>,
    /// Stage-1 training. Its seed is replaced by the run seed.
    #[serde(default)]
    pub training: TrainingConfig,
    /// Stage-2 epochs; a quarter of the stage-1 epochs (at least one) when
    /// absent.
    #[serde(default)]
    pub transform_epochs: Option<usize>,
    #[serde(default)]
    pub mine: MineConfig,
    #[serde(default)]
    pub drs: DrsConfig,
    #[serde(default)]
    pub ldss: LdssConfig,
    /// Rows to synthesize; the training-set size when absent.
    #[serde(default)]
    pub synthetic_rows: Option<usize>,
    #[serde(default = "default_downstream")]
    pub downstream: Vec<DownstreamModelSpec>,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default = "default_delta")]
    pub audit_delta: f64,
    /// Rows generated for the post-hoc MI estimate; 0 skips it.
    #[serde(default = "default_mi_rows")]
    pub mi_estimate_rows: usize,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_test_fraction() -> f64 {
    0.3
}

fn default_downstream() -> Vec<DownstreamModelSpec> {
    vec![DownstreamModelSpec::linear(0)]
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_mi_rows() -> usize {
    10_000
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are taken from the config file's directory.
        if let DataSource::Csv { path: data, .. } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.downstream.is_empty() {
            return Err(Error::Config("at least one downstream model is required".into()));
        }
        if self.ldss.window == 0 || !(self.ldss.temperature > 0.0) {
            return Err(Error::Config("LDSS window and temperature must be positive".into()));
        }
        if !(self.audit_delta > 0.0 && self.audit_delta < 1.0) {
            return Err(Error::Config(format!("audit_delta {} outside (0, 1)", self.audit_delta)));
        }
        if self.synthetic_rows == Some(0) {
            return Err(Error::Config("synthetic_rows must be positive".into()));
        }
        match &self.data {
            DataSource::Csv {
                label_missing_fraction, ..
            } => {
                if !(0.0..1.0).contains(label_missing_fraction) {
                    return Err(Error::Config("label_missing_fraction outside [0, 1)".into()));
                }
            }
            DataSource::Synthetic { spec } => spec.validate()?,
        }
        self.training.validate()?;
        self.mine.validate()?;
        self.drs.validate()
    }

    /// Hash of everything that affects results (the output directory does
    /// not).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&c).expect("config serializes"));
        hex::encode(&h.finalize()[..16])
    }

    pub fn stage1_config(&self) -> TrainingConfig {
        TrainingConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn stage2_config(&self) -> TrainingConfig {
        let epochs = self.transform_epochs.unwrap_or((self.training.epochs / 4).max(1));
        TrainingConfig {
            seed: rng::derive_seed(self.seed, "transform"),
            epochs,
            ..self.training.clone()
        }
    }

    /// Fairness weight for the configured variant.
    pub fn alpha(&self) -> f64 {
        match self.variant {
            Variant::BaselineAlpha0 => 0.0,
            _ => self.mine.alpha_fairness,
        }
    }
}

/// Train/test split and compiled subgroups, recomputed identically by every
/// stage from the config.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub subgroups: Vec<Subgroup>,
}

fn tag<T>(r: Result<T>, stage: Stage) -> Result<T> {
    r.map_err(|e| e.in_stage(stage))
}

/// Load or synthesize the data and split it.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<Prepared> {
    let data_seed = rng::derive_seed(cfg.seed, "data");
    let run = || -> Result<Prepared> {
        let (full, missing) = match &cfg.data {
            DataSource::Synthetic { spec } => {
                let spec = BiasInjectionSpec {
                    seed: data_seed,
                    ..spec.clone()
                };
                (synthesize_biased(&spec)?, 0.0)
            }
            DataSource::Csv {
                path,
                schema,
                label_missing_fraction,
            } => (load_csv(path, schema, SplitTag::Train)?, *label_missing_fraction),
        };
        let (train, test) = full.split_stratified(cfg.test_fraction, rng::derive_seed(data_seed, "split"))?;
        let train = if missing > 0.0 {
            train.mask_labels(missing, rng::derive_seed(data_seed, "mask"))?
        } else {
            train
        };
        let subgroups = compile_all(&cfg.subgroups, train.encoding())?;
        Ok(Prepared { train, test, subgroups })
    };
    tag(run(), Stage::Data)
}

/// Stage 1.
pub fn run_pretrain(cfg: &PipelineConfig, prep: &Prepared) -> Result<ModelBundle> {
    let run = || -> Result<ModelBundle> {
        let t = cfg.stage1_config();
        let enc = prep.train.encoding();
        let specs = cfg
            .models
            .clone()
            .unwrap_or_else(|| ModelSpecs::for_width(enc.width, enc.n_classes(), t.gumbel_temperature));
        let bundle = init_models(enc, &specs, &t)?;
        train_stage1(&prep.train, bundle, &t, &prep.subgroups)
    };
    tag(run(), Stage::Pretrain)
}

/// Batch sampler for stage 2: disparity weights from the last pretraining
/// epochs for the full variant, uniform otherwise.
pub fn stage2_sampler(cfg: &PipelineConfig, prep: &Prepared, pretrained: &ModelBundle) -> Result<BatchSampler> {
    if !cfg.variant.uses_weighted_sampler() || prep.subgroups.is_empty() {
        return Ok(BatchSampler::Uniform);
    }
    let trace = pretrained.log.lds_trace("pretrain");
    let labels: Vec<Option<usize>> = (0..prep.train.n_rows()).map(|i| prep.train.observed_label(i)).collect();
    let member = memberships(&prep.subgroups, prep.train.features().view(), &labels);
    let scores = ldss(&trace, cfg.ldss.window, &member)?;
    Ok(BatchSampler::Weighted(sampling_table(&scores, cfg.ldss.temperature, cfg.ldss.window)?))
}

/// Stage 2.
pub fn run_transform(cfg: &PipelineConfig, prep: &Prepared, pretrained: ModelBundle) -> Result<ModelBundle> {
    let run = || -> Result<ModelBundle> {
        let sampler = stage2_sampler(cfg, prep, &pretrained)?;
        let mine = MineConfig {
            alpha_fairness: cfg.alpha(),
            ..cfg.mine.clone()
        };
        train_stage2(&prep.train, pretrained, &mine, &sampler, &cfg.stage2_config(), &prep.subgroups)
    };
    tag(run(), Stage::Transform)
}

/// Output of stage 3: discretized rows and their labels.
pub struct Sampled {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub drs: Option<DrsStats>,
}

/// Stage 3: rejection sampling for the full variant, plain generation
/// otherwise.
pub fn run_sample(cfg: &PipelineConfig, prep: &Prepared, bundle: &ModelBundle) -> Result<Sampled> {
    let run = || -> Result<Sampled> {
        let n = cfg.synthetic_rows.unwrap_or(prep.train.n_rows());
        let seed = rng::derive_seed(cfg.seed, "drs");
        let (batch, drs) = if cfg.variant.uses_rejection_sampling() {
            let l = estimate_l(bundle, &cfg.drs, seed)?;
            let (b, stats) = drs_filter(bundle, n, l, &cfg.drs, seed)?;
            (b, Some(stats))
        } else {
            (generate_staged(bundle, n, seed, BatchStage::Transformed, 0)?, None)
        };
        Ok(Sampled {
            x: batch.discretized(&bundle.encoding),
            labels: batch.labels(),
            drs,
        })
    };
    tag(run(), Stage::Sample)
}

/// Positive-label rate per sensitive group and the plug-in label/sensitive
/// MI of a labeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBias {
    pub positive_rate_by_group: Vec<f64>,
    pub label_sensitive_mi: f64,
}

fn label_bias(cfg: &PipelineConfig, d: &Dataset, x: ndarray::ArrayView2<'_, f64>, labels: &[usize]) -> Result<LabelBias> {
    let column = match &cfg.eval.sensitive_column {
        Some(c) => c.clone(),
        None => d
            .encoding()
            .segments
            .iter()
            .find(|s| s.sensitive && s.is_discrete())
            .map(|s| s.name.clone())
            .ok_or_else(|| Error::Config("schema has no discrete sensitive column".into()))?,
    };
    let seg = d
        .encoding()
        .segment(&column)
        .ok_or_else(|| Error::Config(format!("unknown sensitive column `{column}`")))?;
    let s: Vec<usize> = x.outer_iter().map(|r| seg.discrete_value(r).unwrap_or(0)).collect();
    let k = seg.cardinality().unwrap_or(2);
    let mut pos = vec![0.0; k];
    let mut cnt = vec![0.0; k];
    for (&g, &y) in s.iter().zip(labels) {
        cnt[g] += 1.0;
        pos[g] += f64::from(u8::from(y == 1));
    }
    Ok(LabelBias {
        positive_rate_by_group: pos.iter().zip(&cnt).map(|(p, n)| if *n > 0.0 { p / n } else { 0.0 }).collect(),
        label_sensitive_mi: plug_in_mi(labels, &s),
    })
}

fn labeled_rows(d: &Dataset) -> (Array2<f64>, Vec<usize>) {
    let idx: Vec<usize> = (0..d.n_rows()).filter(|&i| d.true_label(i).is_some()).collect();
    (
        d.features().select(Axis(0), &idx),
        idx.iter().map(|&i| d.true_label(i).expect("filtered")).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Downstream models trained on the real training split.
    pub real: Vec<FairnessReport>,
    /// Downstream models trained on the synthetic rows.
    pub synthetic: Vec<FairnessReport>,
    pub real_label_bias: LabelBias,
    pub synthetic_label_bias: LabelBias,
    pub audit: Audit,
}

/// Train-on-synthetic, test-on-real evaluation plus the real-data reference.
pub fn run_evaluate(cfg: &PipelineConfig, prep: &Prepared, x: &Array2<f64>, labels: &[usize]) -> Result<Evaluation> {
    let run = || -> Result<Evaluation> {
        let (rx, ry) = labeled_rows(&prep.train);
        let mut real = Vec::new();
        let mut synthetic = Vec::new();
        for spec in &cfg.downstream {
            real.push(evaluate((rx.view(), &ry), &prep.test, spec, &cfg.eval, None)?);
            synthetic.push(evaluate((x.view(), labels), &prep.test, spec, &cfg.eval, Some(&prep.train))?);
        }
        let real_labels: Vec<Option<usize>> = prep.train.true_labels().to_vec();
        let synth_labels: Vec<Option<usize>> = labels.iter().map(|&y| Some(y)).collect();
        let audit = audit_dp_dgp(
            &prep.subgroups,
            (prep.train.features().view(), &real_labels),
            (x.view(), &synth_labels),
            cfg.audit_delta,
        )?;
        Ok(Evaluation {
            real,
            synthetic,
            real_label_bias: label_bias(cfg, &prep.train, rx.view(), &ry)?,
            synthetic_label_bias: label_bias(cfg, &prep.train, x.view(), labels)?,
            audit,
        })
    };
    tag(run(), Stage::Evaluate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub epochs: usize,
    pub discriminator_loss: f64,
    pub generator_loss: f64,
    pub classifier_loss: f64,
    pub mutual_information: Option<f64>,
}

fn summarize(bundle: &ModelBundle, stage: &str) -> Option<StageSummary> {
    let epochs: Vec<_> = bundle.log.epochs.iter().filter(|e| e.stage == stage).collect();
    let last = epochs.last()?;
    Some(StageSummary {
        epochs: epochs.len(),
        discriminator_loss: last.discriminator_loss,
        generator_loss: last.generator_loss,
        classifier_loss: last.classifier_loss,
        mutual_information: last.mutual_information,
    })
}

/// Everything a run measured. Contains no timings or paths, so identical
/// configs give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub variant: Variant,
    pub seed: u64,
    pub alpha: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    pub synthetic_rows: usize,
    pub pretrain: Option<StageSummary>,
    pub transform: Option<StageSummary>,
    pub weighted_sampler: bool,
    pub drs: Option<DrsStats>,
    /// Post-hoc neural MI estimate between generated records and their
    /// sensitive columns, in nats.
    pub generated_mi: Option<f64>,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub software_version: String,
    /// File name to sha256 of its contents.
    pub artifacts: BTreeMap<String, String>,
    pub stage_seconds: BTreeMap<String, f64>,
}

pub const PRETRAIN_CHECKPOINT: &str = "pretrain.ckpt.json";
pub const TRANSFORM_CHECKPOINT: &str = "transform.ckpt.json";
pub const SYNTHETIC_CSV: &str = "synthetic.csv";
pub const REPORT_JSON: &str = "report.json";
pub const TABLES_CSV: &str = "tables.csv";
pub const BANDS_CSV: &str = "bands.csv";
pub const LDS_TRACE_CSV: &str = "lds_trace.csv";
pub const CONFIG_TOML: &str = "config.toml";
pub const MANIFEST_JSON: &str = "manifest.json";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write decoded synthetic rows.
pub fn write_synthetic(prep: &Prepared, sampled: &Sampled, path: &Path) -> Result<()> {
    decode(&prep.train, sampled.x.view(), Some(&sampled.labels))?.write_csv(path)
}

/// Read synthetic rows back on the training encoding.
pub fn read_synthetic(prep: &Prepared, path: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let d = load_csv_with_encoding(path, prep.train.schema(), prep.train.encoding(), SplitTag::Train)?;
    Ok(labeled_rows(&d))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn tables_csv(report: &RunReport) -> String {
    let mut out = String::from(
        "source,model,train_accuracy,accuracy,precision,recall,f1,auroc,auprc,parity_gap,auroc_gap,data_leakage,model_leakage,delta,jsd,discriminative_score\n",
    );
    let e = &report.evaluation;
    for (source, rows) in [("real", &e.real), ("synthetic", &e.synthetic)] {
        for r in rows {
            out.push_str(&format!(
                "{source},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.model,
                r.train_accuracy,
                r.test.accuracy,
                r.test.precision,
                r.test.recall,
                r.test.f1,
                fmt_opt(r.test.auroc),
                fmt_opt(r.test.auprc),
                r.parity_gap,
                fmt_opt(r.auroc_gap),
                r.data_leakage,
                r.model_leakage,
                r.delta_amplification,
                fmt_opt(r.jsd),
                fmt_opt(r.discriminative.map(|d| d.score)),
            ));
        }
    }
    out
}

fn bands_csv(audit: &Audit) -> String {
    let mut out = String::from("subgroup,p_real,p_synth,lds,band,auditable\n");
    for s in &audit.subgroups {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.subgroup_id,
            s.p_real,
            s.p_synth,
            s.lds,
            s.band.map_or_else(|| "unauditable".to_string(), |b| b.to_string()),
            s.auditable
        ));
    }
    out.push_str("\nband,proportion\n");
    for (b, p) in &audit.band_proportions {
        out.push_str(&format!("{b},{p}\n"));
    }
    out
}

fn lds_trace_csv(bundle: &ModelBundle) -> String {
    let mut out = String::from("stage,epoch,subgroup,lds,band\n");
    for e in &bundle.log.epochs {
        for (id, v) in bundle.log.subgroups.iter().zip(&e.lds) {
            out.push_str(&format!("{},{},{id},{v},{}\n", e.stage, e.epoch, classify_band(*v)));
        }
    }
    out
}

/// Write the report, flat tables and manifest for a finished run.
pub fn emit_report(
    dir: &Path,
    cfg: &PipelineConfig,
    report: &RunReport,
    bundle: &ModelBundle,
    stage_seconds: BTreeMap<String, f64>,
) -> Result<RunManifest> {
    let run = || -> Result<RunManifest> {
        ensure_dir(dir)?;
        write(&dir.join(CONFIG_TOML), &cfg.to_toml()?)?;
        write(&dir.join(REPORT_JSON), &serde_json::to_string_pretty(report)?)?;
        write(&dir.join(TABLES_CSV), &tables_csv(report))?;
        write(&dir.join(BANDS_CSV), &bands_csv(&report.evaluation.audit))?;
        write(&dir.join(LDS_TRACE_CSV), &lds_trace_csv(bundle))?;
        let mut artifacts = BTreeMap::new();
        for name in [
            CONFIG_TOML,
            PRETRAIN_CHECKPOINT,
            TRANSFORM_CHECKPOINT,
            SYNTHETIC_CSV,
            REPORT_JSON,
            TABLES_CSV,
            BANDS_CSV,
            LDS_TRACE_CSV,
        ] {
            let p = dir.join(name);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
            artifacts.insert(name.to_string(), sha256_file(&p)?);
        }
        let manifest = RunManifest {
            config_hash: cfg.hash(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            artifacts,
            stage_seconds,
        };
        write(&dir.join(MANIFEST_JSON), &serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    };
    tag(run(), Stage::Report)
}

/// Check every artifact named in a manifest exists and matches its hash.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: RunManifest = serde_json::from_str(&text)?;
    for (name, hash) in &m.artifacts {
        let p = dir.join(name);
        if !p.exists() {
            return Err(Error::MissingArtifact(p));
        }
        let found = sha256_file(&p)?;
        if &found != hash {
            return Err(Error::CheckpointMismatch {
                expected: hash.clone(),
                found,
            });
        }
    }
    Ok(m)
}

/// Result of [`run_pipeline`].
pub struct RunOutcome {
    pub report: RunReport,
    pub manifest: RunManifest,
}

fn build_report(
    cfg: &PipelineConfig,
    prep: &Prepared,
    bundle: &ModelBundle,
    sampled_drs: Option<DrsStats>,
    synthetic_rows: usize,
    evaluation: Evaluation,
) -> Result<RunReport> {
    let generated = if cfg.mi_estimate_rows > 0 {
        let est = generated_mi(bundle, cfg.mi_estimate_rows, &cfg.mine, rng::derive_seed(cfg.seed, "mi-report"));
        Some(tag(est, Stage::Evaluate)?.reported())
    } else {
        None
    };
    Ok(RunReport {
        config_hash: cfg.hash(),
        variant: cfg.variant,
        seed: cfg.seed,
        alpha: cfg.alpha(),
        train_rows: prep.train.n_rows(),
        test_rows: prep.test.n_rows(),
        synthetic_rows,
        pretrain: summarize(bundle, "pretrain"),
        transform: summarize(bundle, "transform"),
        weighted_sampler: cfg.variant.uses_weighted_sampler() && !prep.subgroups.is_empty(),
        drs: sampled_drs,
        generated_mi: generated,
        evaluation,
    })
}

/// All stages, writing checkpoints, synthetic rows and reports to
/// `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let mut seconds = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, seconds: &mut BTreeMap<String, f64>| {
        seconds.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let prep = prepare_data(cfg)?;
    lap("data", &mut seconds);
    let pretrained = run_pretrain(cfg, &prep)?;
    tag(pretrained.save(&dir.join(PRETRAIN_CHECKPOINT)), Stage::Pretrain)?;
    lap("pretrain", &mut seconds);
    let transformed = run_transform(cfg, &prep, pretrained)?;
    tag(transformed.save(&dir.join(TRANSFORM_CHECKPOINT)), Stage::Transform)?;
    lap("transform", &mut seconds);
    let sampled = run_sample(cfg, &prep, &transformed)?;
    let csv_path = dir.join(SYNTHETIC_CSV);
    tag(write_synthetic(&prep, &sampled, &csv_path), Stage::Sample)?;
    lap("sample", &mut seconds);
    let (x, labels) = tag(read_synthetic(&prep, &csv_path), Stage::Evaluate)?;
    let evaluation = run_evaluate(cfg, &prep, &x, &labels)?;
    let report = build_report(cfg, &prep, &transformed, sampled.drs, x.nrows(), evaluation)?;
    lap("evaluate", &mut seconds);
    let manifest = emit_report(&dir, cfg, &report, &transformed, seconds)?;
    Ok(RunOutcome { report, manifest })
}

/// One row of an alpha sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub generated_mi: f64,
    pub label_sensitive_mi: f64,
    pub parity_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,train_accuracy,test_accuracy,generated_mi,label_sensitive_mi,parity_gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.alpha, r.train_accuracy, r.test_accuracy, r.generated_mi, r.label_sensitive_mi, r.parity_gap
            ));
        }
        out
    }
}

/// Re-run stages 2 and 3 for each alpha from one shared pretrained model,
/// with uniform batches and no rejection sampling so alpha is the only
/// difference between rows.
pub fn run_alpha_sweep(cfg: &PipelineConfig, alphas: &[f64]) -> Result<SweepReport> {
    cfg.validate()?;
    if alphas.len() < 2 {
        return Err(Error::Config("an alpha sweep needs at least two values".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Config(format!("alpha {a} must be finite and >= 0")));
    }
    let prep = prepare_data(cfg)?;
    let pretrained = run_pretrain(cfg, &prep)?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let c = PipelineConfig {
            variant: Variant::BtganMinus,
            mine: MineConfig {
                alpha_fairness: alpha,
                ..cfg.mine.clone()
            },
            downstream: vec![cfg.downstream[0].clone()],
            ..cfg.clone()
        };
        let bundle = run_transform(&c, &prep, pretrained.clone())?;
        let sampled = run_sample(&c, &prep, &bundle)?;
        let ev = run_evaluate(&c, &prep, &sampled.x, &sampled.labels)?;
        let mi_rows = if c.mi_estimate_rows > 0 { c.mi_estimate_rows } else { default_mi_rows() };
        let mi = tag(
            generated_mi(&bundle, mi_rows, &c.mine, rng::derive_seed(c.seed, "mi-report")),
            Stage::Evaluate,
        )?;
        let r = &ev.synthetic[0];
        log::info!("alpha {alpha}: test accuracy {:.4}, parity gap {:.4}", r.test.accuracy, r.parity_gap);
        rows.push(SweepRow {
            alpha,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test.accuracy,
            generated_mi: mi.reported(),
            label_sensitive_mi: ev.synthetic_label_bias.label_sensitive_mi,
            parity_gap: r.parity_gap,
        });
    }
    Ok(SweepReport {
        config_hash: cfg.hash(),
        rows,
    })
}
