//! Experiment driver behind the command-line tool: configuration, cached
//! stage artifacts, the three-stage run, ablations and evaluation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::Error;
use crate::eval::{fidelity, train_probe, EvalRow, FidelityReport, LabeledImage, ViewpointProbe};
use crate::homography::{make_pseudo_aerial_with, PseudoAerialOptions};
use crate::imageio::{read_image, resize_bilinear, write_image, ImageBuffer};
use crate::optimize::{
    finetune_model, optimize_embedding, train_base_model, BaseTrainConfig, TrainReport,
    TrainingExample, EMBEDDING_LR, EMBEDDING_STEPS, FINETUNE_LR, FINETUNE_STEPS,
};
use crate::prompting::{compose_view_prompts, PromptEmbedder, Strategy};
use crate::rng::SeededRng;
use crate::sampler::{sample_grid, SamplerConfig, DEFAULT_GUIDANCE_SCALE, DEFAULT_SAMPLING_STEPS};
use crate::scenegen::{
    generate_dataset, render_view, Color, DatasetManifest, SceneSpec, Shape, View, MANIFEST_FILE,
};
use crate::toydiffusion::checkpoint::{
    decode_embedding, decode_params, encode_embedding, encode_params,
};
use crate::toydiffusion::{
    make_schedule, ConditioningEmbedding, DenoiserParams, NoiseSchedule, ScheduleKind,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const RECORD_FILE: &str = "record.txt";
pub const EVAL_FILE: &str = "eval.tsv";
pub const ABLATION_FILE: &str = "ablation.tsv";

const STREAM_DATASET: u64 = 1;
const STREAM_EMBEDDER: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_PROBE: u64 = 4;
const STREAM_EMBEDDING_OPT: u64 = 5;
const STREAM_FINETUNE: u64 = 6;
const STREAM_SAMPLER: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Dataset,
    TrainBase,
    Probe,
    Warp,
    EmbeddingOpt,
    Finetune,
    Sample,
    Eval,
    Ablate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::TrainBase => "train-base",
            Stage::Probe => "probe",
            Stage::Warp => "warp",
            Stage::EmbeddingOpt => "optimize-embedding",
            Stage::Finetune => "finetune",
            Stage::Sample => "sample",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
        })
    }
}

#[derive(Debug, Error)]
#[error("[{stage}] {error}")]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> StageResult<T>;
}

impl<T, E: Into<Error>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> StageResult<T> {
        self.map_err(|e| StageError {
            stage,
            error: e.into(),
        })
    }
}

fn fail<T>(stage: Stage, msg: impl Into<String>) -> StageResult<T> {
    Err(StageError {
        stage,
        error: Error::Config(msg.into()),
    })
}

/// Where the optimized embedding starts: the source prompt (the method) or
/// the target prompt (Ablation 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingInit {
    Source,
    Target,
}

impl fmt::Display for EmbeddingInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingInit::Source => "source",
            EmbeddingInit::Target => "target",
        })
    }
}

impl FromStr for EmbeddingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "source" => Ok(EmbeddingInit::Source),
            "target" => Ok(EmbeddingInit::Target),
            _ => Err(Error::Config(format!("unknown embedding init {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub size: usize,
    pub n_scenes: usize,
    pub embed_dim: usize,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub schedule: ScheduleKind,
    pub train_steps: usize,
    pub train_lr: f64,
    pub batch: usize,
    pub cond_dropout_p: f64,
    pub embed_steps: usize,
    pub embed_lr: f64,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    pub sample_steps: usize,
    pub guidance_scale: f64,
    pub eta: f64,
    pub alphas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub strategy: Strategy,
    pub embedding_init: EmbeddingInit,
    pub homography: bool,
    pub warp_fill: f64,
    pub ablation_alpha: f64,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = BaseTrainConfig::default();
        Self {
            size: 16,
            n_scenes: 64,
            embed_dim: 32,
            schedule_steps: 50,
            beta_start: 1e-3,
            beta_end: 0.2,
            schedule: ScheduleKind::Linear,
            train_steps: base.steps,
            train_lr: base.lr,
            batch: base.batch,
            cond_dropout_p: base.cond_dropout_p,
            embed_steps: EMBEDDING_STEPS,
            embed_lr: EMBEDDING_LR,
            finetune_steps: FINETUNE_STEPS,
            finetune_lr: FINETUNE_LR,
            sample_steps: DEFAULT_SAMPLING_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            eta: 1.0,
            alphas: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            seeds: (0..20).collect(),
            strategy: Strategy::Alternating,
            embedding_init: EmbeddingInit::Source,
            homography: true,
            warp_fill: 0.0,
            ablation_alpha: 0.5,
            master_seed: 0,
            out_dir: PathBuf::from("runs"),
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, Error> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, Error> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

/// Accepts `a..b` (end exclusive) or a comma list.
fn parse_seeds(v: &str) -> Result<Vec<u64>, Error> {
    match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (parse_num("seeds", a.trim())?, parse_num("seeds", b.trim())?);
            Ok((a..b).collect())
        }
        None => parse_list("seeds", v),
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, Error> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 27] = [
        "size",
        "n_scenes",
        "embed_dim",
        "schedule_steps",
        "beta_start",
        "beta_end",
        "schedule",
        "train_steps",
        "train_lr",
        "batch",
        "cond_dropout_p",
        "embed_steps",
        "embed_lr",
        "finetune_steps",
        "finetune_lr",
        "sample_steps",
        "guidance_scale",
        "eta",
        "alphas",
        "seeds",
        "strategy",
        "embedding_init",
        "homography",
        "warp_fill",
        "ablation_alpha",
        "master_seed",
        "out_dir",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "size" => self.size.to_string(),
            "n_scenes" => self.n_scenes.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "schedule_steps" => self.schedule_steps.to_string(),
            "beta_start" => self.beta_start.to_string(),
            "beta_end" => self.beta_end.to_string(),
            "schedule" => self.schedule.to_string(),
            "train_steps" => self.train_steps.to_string(),
            "train_lr" => self.train_lr.to_string(),
            "batch" => self.batch.to_string(),
            "cond_dropout_p" => self.cond_dropout_p.to_string(),
            "embed_steps" => self.embed_steps.to_string(),
            "embed_lr" => self.embed_lr.to_string(),
            "finetune_steps" => self.finetune_steps.to_string(),
            "finetune_lr" => self.finetune_lr.to_string(),
            "sample_steps" => self.sample_steps.to_string(),
            "guidance_scale" => self.guidance_scale.to_string(),
            "eta" => self.eta.to_string(),
            "alphas" => join(&self.alphas),
            "seeds" => join(&self.seeds),
            "strategy" => self.strategy.to_string(),
            "embedding_init" => self.embedding_init.to_string(),
            "homography" => self.homography.to_string(),
            "warp_fill" => self.warp_fill.to_string(),
            "ablation_alpha" => self.ablation_alpha.to_string(),
            "master_seed" => self.master_seed.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), Error> {
        let v = value.trim();
        match key {
            "size" => self.size = parse_num(key, v)?,
            "n_scenes" => self.n_scenes = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "schedule_steps" => self.schedule_steps = parse_num(key, v)?,
            "beta_start" => self.beta_start = parse_num(key, v)?,
            "beta_end" => self.beta_end = parse_num(key, v)?,
            "schedule" => self.schedule = v.parse()?,
            "train_steps" => self.train_steps = parse_num(key, v)?,
            "train_lr" => self.train_lr = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "cond_dropout_p" => self.cond_dropout_p = parse_num(key, v)?,
            "embed_steps" => self.embed_steps = parse_num(key, v)?,
            "embed_lr" => self.embed_lr = parse_num(key, v)?,
            "finetune_steps" => self.finetune_steps = parse_num(key, v)?,
            "finetune_lr" => self.finetune_lr = parse_num(key, v)?,
            "sample_steps" => self.sample_steps = parse_num(key, v)?,
            "guidance_scale" => self.guidance_scale = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "alphas" => self.alphas = parse_list(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "strategy" => self.strategy = v.parse()?,
            "embedding_init" => self.embedding_init = v.parse()?,
            "homography" => self.homography = parse_bool(key, v)?,
            "warp_fill" => self.warp_fill = parse_num(key, v)?,
            "ablation_alpha" => self.ablation_alpha = parse_num(key, v)?,
            "master_seed" => self.master_seed = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), Error> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Parses flat `key = value` lines on top of the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if seen.contains(&k) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {k:?}",
                    n + 1
                )));
            }
            seen.push(k);
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Hash of every key except `out_dir`; names the run directory.
    pub fn hash(&self) -> String {
        self.hash_keys(&Self::KEYS[..Self::KEYS.len() - 1])
    }

    fn hash_keys(&self, keys: &[&str]) -> String {
        let mut h = Sha256::new();
        for k in keys {
            h.update(format!("{k}={}\n", self.get(k).expect("known key")));
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.size < 8 {
            return bad(format!("size must be >= 8, got {}", self.size));
        }
        for (name, v) in [
            ("n_scenes", self.n_scenes),
            ("embed_dim", self.embed_dim),
            ("schedule_steps", self.schedule_steps),
            ("train_steps", self.train_steps),
            ("batch", self.batch),
            ("embed_steps", self.embed_steps),
            ("finetune_steps", self.finetune_steps),
            ("sample_steps", self.sample_steps),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        for (name, v) in [
            ("train_lr", self.train_lr),
            ("embed_lr", self.embed_lr),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [
            ("cond_dropout_p", self.cond_dropout_p),
            ("eta", self.eta),
            ("warp_fill", self.warp_fill),
            ("ablation_alpha", self.ablation_alpha),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad(format!(
                "alphas must be a non-empty list in [0, 1], got {:?}",
                self.alphas
            ));
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return bad(format!(
                "guidance_scale must be >= 0, got {}",
                self.guidance_scale
            ));
        }
        let sched = self.noise_schedule()?;
        sched.strided_timesteps(self.sample_steps)?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule, Error> {
        make_schedule(
            self.schedule_steps,
            self.beta_start,
            self.beta_end,
            self.schedule,
        )
    }

    pub fn stream_seed(&self, stream: u64) -> u64 {
        SeededRng::derived(self.master_seed, stream).next_u64()
    }

    /// Sampler seed for user seed `s`; shared by every variant of a run.
    pub fn sampler_seed(&self, s: u64) -> u64 {
        self.stream_seed(STREAM_SAMPLER.wrapping_add(s))
    }

    pub fn embedder(&self) -> Result<PromptEmbedder, Error> {
        PromptEmbedder::new(self.embed_dim, self.stream_seed(STREAM_EMBEDDER))
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.sample_steps,
            guidance_scale: self.guidance_scale,
            seed: 0,
            eta: self.eta,
            shape: (self.size, self.size, 3),
            record_trajectory: false,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(format!("run-{}", self.hash()))
    }

    fn cache_dir(&self) -> PathBuf {
        self.out_dir.join("cache")
    }

    fn dataset_key(&self) -> String {
        self.hash_keys(&["size", "n_scenes", "master_seed"])
    }

    fn base_key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dataset_key());
        h.update(self.hash_keys(&[
            "embed_dim",
            "schedule_steps",
            "beta_start",
            "beta_end",
            "schedule",
            "train_steps",
            "train_lr",
            "batch",
            "cond_dropout_p",
        ]));
        hex::encode(&h.finalize()[..8])
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.cache_dir()
            .join(format!("dataset-{}", self.dataset_key()))
    }

    pub fn base_checkpoint_path(&self) -> PathBuf {
        self.cache_dir()
            .join(format!("base-{}.adkf", self.base_key()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn params_checksum(p: &DenoiserParams) -> String {
    sha256_hex(&encode_params(p))
}

pub fn embedding_checksum(e: &ConditioningEmbedding) -> String {
    sha256_hex(&encode_embedding(e))
}

fn checksum_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

/// Writes `bytes` and a checksum sidecar.
fn store_artifact(path: &Path, bytes: &[u8]) -> Result<String, Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let sum = sha256_hex(bytes);
    fs::write(path, bytes)?;
    fs::write(checksum_path(path), format!("{sum}\n"))?;
    Ok(sum)
}

/// Reads a cached artifact, refusing it when the sidecar checksum disagrees.
fn load_artifact(path: &Path) -> Result<Option<(Vec<u8>, String)>, Error> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path)?;
    let sum = sha256_hex(&bytes);
    let recorded = fs::read_to_string(checksum_path(path))?;
    if recorded.trim() != sum {
        return Err(Error::Checkpoint(format!(
            "{} does not match its recorded checksum",
            path.display()
        )));
    }
    Ok(Some((bytes, sum)))
}

/// What to translate.
#[derive(Debug, Clone, PartialEq)]
pub enum RunInput {
    /// Front view of a dataset scene.
    Scene(usize),
    /// Front view rendered from an explicit scene.
    Spec(SceneSpec),
    /// An image on disk with its scene text; `spec` enables fidelity scoring.
    Image {
        path: PathBuf,
        txt: String,
        spec: Option<SceneSpec>,
    },
}

impl fmt::Display for RunInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunInput::Scene(id) => write!(f, "scene {id}"),
            RunInput::Spec(s) => write!(f, "spec {}", format_spec(s)),
            RunInput::Image { path, txt, .. } => write!(f, "image {} ({txt})", path.display()),
        }
    }
}

/// `shape,color,u,scale,floor`, e.g. `cube,red,0.3,0.3,0.5`.
pub fn parse_spec(s: &str) -> Result<SceneSpec, Error> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!(
            "scene spec {s:?} must be shape,color,u,scale,floor"
        )));
    }
    let spec = SceneSpec {
        shape: parts[0].parse::<Shape>()?,
        color: parts[1].parse::<Color>()?,
        u: parse_num("u", parts[2])?,
        scale: parse_num("scale", parts[3])?,
        floor: parse_num("floor", parts[4])?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn format_spec(s: &SceneSpec) -> String {
    format!("{},{},{},{},{}", s.shape, s.color, s.u, s.scale, s.floor)
}

/// One ablation or manipulation setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub homography: bool,
    pub strategy: Strategy,
    pub init: EmbeddingInit,
}

/// The full method plus Ablations 1-3 and manipulations 1-4, derived from `cfg`.
pub fn ablation_variants(cfg: &RunConfig) -> Vec<Variant> {
    let full = Variant {
        name: "full",
        homography: true,
        strategy: cfg.strategy,
        init: EmbeddingInit::Source,
    };
    vec![
        full,
        Variant {
            name: "abl1_no_homography",
            homography: false,
            ..full
        },
        Variant {
            name: "abl2_linear",
            strategy: Strategy::LinearOnly,
            ..full
        },
        Variant {
            name: "abl3_tgt_vicinity",
            init: EmbeddingInit::Target,
            ..full
        },
        Variant {
            name: "manip1",
            strategy: Strategy::AlternatingStartE2,
            ..full
        },
        Variant {
            name: "manip2",
            strategy: Strategy::E1Only,
            ..full
        },
        Variant {
            name: "manip3",
            strategy: Strategy::FirstHalfE1,
            ..full
        },
        Variant {
            name: "manip4",
            strategy: Strategy::FirstHalfE2,
            ..full
        },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageChecksums {
    pub base: String,
    pub target: String,
    pub e_opt: String,
    pub finetuned: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub alpha: f64,
    pub seed: u64,
    /// Relative to the run directory.
    pub path: Option<PathBuf>,
    pub aerialness: f64,
    pub fidelity: Option<FidelityReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSummary {
    pub alpha: f64,
    pub mean_aerialness: f64,
    pub mean_fidelity: Option<f64>,
}

impl AlphaSummary {
    pub fn product(&self) -> Option<f64> {
        self.mean_fidelity.map(|f| f * self.mean_aerialness)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub config_text: String,
    pub variant: String,
    pub input: String,
    pub checksums: StageChecksums,
    pub samples: Vec<SampleRecord>,
    pub summary: Vec<AlphaSummary>,
    /// Sweep value maximizing mean aerialness times mean fidelity.
    pub best_alpha: Option<f64>,
}

impl RunRecord {
    pub fn summary_at(&self, alpha: f64) -> Option<&AlphaSummary> {
        self.summary.iter().find(|s| s.alpha == alpha)
    }

    pub fn eval_rows(&self) -> Vec<EvalRow> {
        self.samples
            .iter()
            .map(|s| EvalRow {
                image: s.path.as_ref().map_or_else(
                    || format!("a{}_s{}", s.alpha, s.seed),
                    |p| p.display().to_string(),
                ),
                aerialness: s.aerialness,
                fidelity: s.fidelity.clone(),
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "config_hash\t{}\nvariant\t{}\ninput\t{}\nbase\t{}\ntarget\t{}\ne_opt\t{}\nfinetuned\t{}\n",
            self.config_hash,
            self.variant,
            self.input,
            self.checksums.base,
            self.checksums.target,
            self.checksums.e_opt,
            self.checksums.finetuned
        );
        for s in &self.summary {
            out.push_str(&format!(
                "alpha\t{}\t{:.6}\t{}\n",
                s.alpha,
                s.mean_aerialness,
                s.mean_fidelity
                    .map_or("NA".to_string(), |f| format!("{f:.6}"))
            ));
        }
        out.push_str(&format!(
            "best_alpha\t{}\n",
            self.best_alpha.map_or("NA".to_string(), |a| a.to_string())
        ));
        out.push_str("# config\n");
        out.push_str(&self.config_text);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub aerialness: f64,
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub alpha: f64,
    pub rows: Vec<AblationRow>,
    pub records: Vec<RunRecord>,
}

impl AblationReport {
    /// `(variant, mean aerialness, mean fidelity)` in variant order.
    pub fn means(&self) -> Vec<(String, f64, Option<f64>)> {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !names.contains(&r.variant.as_str()) {
                names.push(&r.variant);
            }
        }
        names
            .into_iter()
            .map(|n| {
                let rows: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == n).collect();
                let k = rows.len() as f64;
                let aer = rows.iter().map(|r| r.aerialness).sum::<f64>() / k;
                let fid = rows
                    .iter()
                    .map(|r| r.fidelity)
                    .sum::<Option<f64>>()
                    .map(|f| f / k);
                (n.to_string(), aer, fid)
            })
            .collect()
    }

    pub fn mean_of(&self, variant: &str) -> Option<(f64, Option<f64>)> {
        self.means()
            .into_iter()
            .find(|(n, _, _)| n == variant)
            .map(|(_, a, f)| (a, f))
    }

    pub fn to_text(&self) -> String {
        let na = |f: Option<f64>| f.map_or("NA".to_string(), |v| format!("{v:.6}"));
        let mut out = format!(
            "# alpha={}\nvariant\tseed\taerialness\tfidelity\n",
            self.alpha
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{}\n",
                r.variant,
                r.seed,
                r.aerialness,
                na(r.fidelity)
            ));
        }
        out.push_str("# means\n");
        for (n, a, f) in self.means() {
            out.push_str(&format!("{n}\tmean\t{a:.6}\t{}\n", na(f)));
        }
        out
    }
}

/// Loaded shared state for commands that need the dataset and base model.
pub struct Pipeline {
    cfg: RunConfig,
    sched: NoiseSchedule,
    embedder: PromptEmbedder,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> StageResult<Self> {
        cfg.validate().at(Stage::Config)?;
        let sched = cfg.noise_schedule().at(Stage::Config)?;
        let embedder = cfg.embedder().at(Stage::Config)?;
        Ok(Self {
            cfg,
            sched,
            embedder,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn embedder(&self) -> &PromptEmbedder {
        &self.embedder
    }

    /// Writes the config snapshot into the run directory.
    pub fn prepare_run_dir(&self) -> StageResult<PathBuf> {
        let dir = self.cfg.run_dir();
        fs::create_dir_all(&dir).at(Stage::Config)?;
        fs::write(dir.join(CONFIG_FILE), self.cfg.to_text()).at(Stage::Config)?;
        Ok(dir)
    }

    /// Generates the dataset unless an identical one is already cached.
    pub fn dataset(&self) -> StageResult<DatasetManifest> {
        let dir = self.cfg.dataset_dir();
        if dir.join(MANIFEST_FILE).exists() {
            return DatasetManifest::load(&dir).at(Stage::Dataset);
        }
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).at(Stage::Dataset)?;
        }
        generate_dataset(
            self.cfg.n_scenes,
            self.cfg.size,
            self.cfg.stream_seed(STREAM_DATASET),
            &tmp,
        )
        .at(Stage::Dataset)?;
        fs::rename(&tmp, &dir).at(Stage::Dataset)?;
        DatasetManifest::load(&dir).at(Stage::Dataset)
    }

    fn labeled_images(
        &self,
        manifest: &DatasetManifest,
    ) -> StageResult<Vec<(LabeledImage, String)>> {
        manifest
            .entries
            .iter()
            .map(|e| {
                let image = read_image(manifest.image_path(e))?;
                Ok((
                    LabeledImage {
                        image,
                        view: e.view,
                    },
                    e.prompt.clone(),
                ))
            })
            .collect::<Result<Vec<_>, Error>>()
            .at(Stage::Dataset)
    }

    /// Trains the base model, or returns the cached checkpoint and its checksum.
    pub fn train_base(&self) -> StageResult<(DenoiserParams, String)> {
        let path = self.cfg.base_checkpoint_path();
        if let Some((bytes, sum)) = load_artifact(&path).at(Stage::TrainBase)? {
            return Ok((decode_params(&bytes).at(Stage::TrainBase)?, sum));
        }
        let manifest = self.dataset()?;
        let data = self
            .labeled_images(&manifest)?
            .into_iter()
            .map(|(l, prompt)| {
                Ok(TrainingExample {
                    image: l.image,
                    embedding: self.embedder.embed(&prompt)?,
                })
            })
            .collect::<Result<Vec<_>, Error>>()
            .at(Stage::TrainBase)?;
        let tcfg = BaseTrainConfig {
            steps: self.cfg.train_steps,
            lr: self.cfg.train_lr,
            batch: self.cfg.batch,
            cond_dropout_p: self.cfg.cond_dropout_p,
            seed: self.cfg.stream_seed(STREAM_TRAIN),
            ..BaseTrainConfig::default()
        };
        let (params, report) = train_base_model(&data, &self.sched, &tcfg).at(Stage::TrainBase)?;
        let sum = store_artifact(&path, &encode_params(&params)).at(Stage::TrainBase)?;
        fs::write(path.with_extension("report.tsv"), report.to_text()).at(Stage::TrainBase)?;
        Ok((params, sum))
    }

    /// Loads the base checkpoint; fails when `train-base` has not run.
    pub fn load_base(&self) -> StageResult<(DenoiserParams, String)> {
        let path = self.cfg.base_checkpoint_path();
        match load_artifact(&path).at(Stage::TrainBase)? {
            Some((bytes, sum)) => Ok((decode_params(&bytes).at(Stage::TrainBase)?, sum)),
            None => fail(
                Stage::TrainBase,
                format!(
                    "missing base checkpoint {} (run train-base first)",
                    path.display()
                ),
            ),
        }
    }

    pub fn probe(&self) -> StageResult<ViewpointProbe> {
        let manifest = self.dataset()?;
        let samples: Vec<LabeledImage> = self
            .labeled_images(&manifest)?
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        train_probe(&samples, self.cfg.stream_seed(STREAM_PROBE)).at(Stage::Probe)
    }

    /// Ground image at the working size, its scene text and optional spec.
    pub fn resolve_input(
        &self,
        input: &RunInput,
    ) -> StageResult<(ImageBuffer, String, Option<SceneSpec>)> {
        let size = self.cfg.size;
        match input {
            RunInput::Scene(id) => {
                let manifest = self.dataset()?;
                let e = manifest.entry(*id, View::Front).ok_or_else(|| StageError {
                    stage: Stage::Dataset,
                    error: Error::Config(format!("scene {id} not in dataset")),
                })?;
                let img = read_image(manifest.image_path(e)).at(Stage::Dataset)?;
                Ok((img, e.spec.description(), Some(e.spec)))
            }
            RunInput::Spec(spec) => {
                let img = render_view(spec, View::Front, size).at(Stage::Warp)?;
                Ok((img, spec.description(), Some(*spec)))
            }
            RunInput::Image { path, txt, spec } => {
                let img = read_image(path).at(Stage::Warp)?;
                let img = to_rgb(&img).at(Stage::Warp)?;
                let img = resize_bilinear(&img, size, size).at(Stage::Warp)?;
                Ok((img, txt.clone(), *spec))
            }
        }
    }

    /// Step 1: the finetuning target for a ground view.
    pub fn target_image(&self, ground: &ImageBuffer, homography: bool) -> StageResult<ImageBuffer> {
        if !homography {
            return Ok(ground.clone());
        }
        let opts = PseudoAerialOptions {
            corners: None,
            fill: self.cfg.warp_fill,
        };
        make_pseudo_aerial_with(ground, self.cfg.size, &opts).at(Stage::Warp)
    }

    /// Step 2a, cached by its inputs.
    fn embedding_stage(
        &self,
        base: &DenoiserParams,
        base_sum: &str,
        e_init: &ConditioningEmbedding,
        target: &ImageBuffer,
        target_sum: &str,
    ) -> StageResult<(ConditioningEmbedding, String)> {
        let key = {
            let mut h = Sha256::new();
            for part in [
                base_sum,
                target_sum,
                &embedding_checksum(e_init),
                &self
                    .cfg
                    .hash_keys(&["embed_steps", "embed_lr", "master_seed"]),
            ] {
                h.update(part);
                h.update([0]);
            }
            hex::encode(&h.finalize()[..8])
        };
        let path = self.cfg.cache_dir().join(format!("eopt-{key}.adke"));
        if let Some((bytes, sum)) = load_artifact(&path).at(Stage::EmbeddingOpt)? {
            return Ok((decode_embedding(&bytes).at(Stage::EmbeddingOpt)?, sum));
        }
        let (e_opt, report) = optimize_embedding(
            base,
            e_init,
            target,
            &self.sched,
            self.cfg.embed_steps,
            self.cfg.embed_lr,
            self.cfg.stream_seed(STREAM_EMBEDDING_OPT),
        )
        .at(Stage::EmbeddingOpt)?;
        if params_checksum(base) != base_sum {
            return fail(
                Stage::EmbeddingOpt,
                "denoiser weights changed during embedding optimization",
            );
        }
        let sum = store_artifact(&path, &encode_embedding(&e_opt)).at(Stage::EmbeddingOpt)?;
        write_report(&path, &report).at(Stage::EmbeddingOpt)?;
        Ok((e_opt, sum))
    }

    /// Step 2b, cached by its inputs. Independent of alpha and strategy.
    fn finetune_stage(
        &self,
        base: &DenoiserParams,
        base_sum: &str,
        e_opt: &ConditioningEmbedding,
        e_opt_sum: &str,
        target: &ImageBuffer,
        target_sum: &str,
    ) -> StageResult<(DenoiserParams, String)> {
        let key = {
            let mut h = Sha256::new();
            for part in [
                base_sum,
                e_opt_sum,
                target_sum,
                &self
                    .cfg
                    .hash_keys(&["finetune_steps", "finetune_lr", "master_seed"]),
            ] {
                h.update(part);
                h.update([0]);
            }
            hex::encode(&h.finalize()[..8])
        };
        let path = self.cfg.cache_dir().join(format!("finetuned-{key}.adkf"));
        if let Some((bytes, sum)) = load_artifact(&path).at(Stage::Finetune)? {
            return Ok((decode_params(&bytes).at(Stage::Finetune)?, sum));
        }
        let (tuned, report) = finetune_model(
            base,
            e_opt,
            target,
            &self.sched,
            self.cfg.finetune_steps,
            self.cfg.finetune_lr,
            self.cfg.stream_seed(STREAM_FINETUNE),
        )
        .at(Stage::Finetune)?;
        if embedding_checksum(e_opt) != e_opt_sum {
            return fail(
                Stage::Finetune,
                "optimized embedding changed during finetuning",
            );
        }
        let sum = store_artifact(&path, &encode_params(&tuned)).at(Stage::Finetune)?;
        write_report(&path, &report).at(Stage::Finetune)?;
        Ok((tuned, sum))
    }

    /// Runs Steps 1-3 for one variant and scores every sample. Images are
    /// written under `run_dir/sample_dir` when given.
    pub fn execute(
        &self,
        input: &RunInput,
        variant: &Variant,
        alphas: &[f64],
        sample_dir: Option<&Path>,
        probe: &ViewpointProbe,
    ) -> StageResult<RunRecord> {
        let (base, base_sum) = self.load_base()?;
        let (ground, txt, spec) = self.resolve_input(input)?;
        let target = self.target_image(&ground, variant.homography)?;
        let target_sum = sha256_hex(&target.to_bytes());

        let (src_prompt, tgt_prompt) = compose_view_prompts(&txt).at(Stage::EmbeddingOpt)?;
        let e_src = self.embedder.embed(&src_prompt).at(Stage::EmbeddingOpt)?;
        let e_tgt = self.embedder.embed(&tgt_prompt).at(Stage::EmbeddingOpt)?;
        let e_init = match variant.init {
            EmbeddingInit::Source => &e_src,
            EmbeddingInit::Target => &e_tgt,
        };
        let (e_opt, e_opt_sum) =
            self.embedding_stage(&base, &base_sum, e_init, &target, &target_sum)?;
        let (tuned, tuned_sum) =
            self.finetune_stage(&base, &base_sum, &e_opt, &e_opt_sum, &target, &target_sum)?;

        let seeds: Vec<u64> = self
            .cfg
            .seeds
            .iter()
            .map(|&s| self.cfg.sampler_seed(s))
            .collect();
        let cells = sample_grid(
            &tuned,
            &self.sched,
            &e_opt,
            &e_tgt,
            alphas,
            variant.strategy,
            &self.cfg.sampler_config(),
            &seeds,
        )
        .at(Stage::Sample)?;

        let run_dir = self.cfg.run_dir();
        let mut samples = Vec::with_capacity(cells.len());
        for (k, cell) in cells.iter().enumerate() {
            let user_seed = self.cfg.seeds[k % seeds.len()];
            let path = match sample_dir {
                Some(dir) => {
                    let rel = dir.join(format!("sample_a{}_s{}.ppm", cell.alpha, user_seed));
                    let abs = run_dir.join(&rel);
                    if let Some(parent) = abs.parent() {
                        fs::create_dir_all(parent).at(Stage::Sample)?;
                    }
                    write_image(&cell.image, &abs).at(Stage::Sample)?;
                    Some(rel)
                }
                None => None,
            };
            let aerialness = probe.aerialness(&cell.image).at(Stage::Eval)?;
            let fid = spec
                .as_ref()
                .map(|s| fidelity(s, &cell.image))
                .transpose()
                .at(Stage::Eval)?;
            samples.push(SampleRecord {
                alpha: cell.alpha,
                seed: user_seed,
                path,
                aerialness,
                fidelity: fid,
            });
        }

        let summary: Vec<AlphaSummary> = alphas
            .iter()
            .map(|&a| {
                let s: Vec<&SampleRecord> = samples.iter().filter(|s| s.alpha == a).collect();
                let k = s.len() as f64;
                AlphaSummary {
                    alpha: a,
                    mean_aerialness: s.iter().map(|r| r.aerialness).sum::<f64>() / k,
                    mean_fidelity: s
                        .iter()
                        .map(|r| r.fidelity.as_ref().map(|f| f.score))
                        .sum::<Option<f64>>()
                        .map(|f| f / k),
                }
            })
            .collect();
        let best_alpha = summary
            .iter()
            .filter(|s| s.alpha > 0.0 && s.alpha < 1.0)
            .filter_map(|s| s.product().map(|p| (s.alpha, p)))
            .fold(None, |best: Option<(f64, f64)>, (a, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((a, p)),
            })
            .map(|(a, _)| a);

        Ok(RunRecord {
            config_hash: self.cfg.hash(),
            config_text: self.cfg.to_text(),
            variant: variant.name.to_string(),
            input: input.to_string(),
            checksums: StageChecksums {
                base: base_sum,
                target: target_sum,
                e_opt: e_opt_sum,
                finetuned: tuned_sum,
            },
            samples,
            summary,
            best_alpha,
        })
    }
}

fn write_report(artifact: &Path, report: &TrainReport) -> Result<(), Error> {
    fs::write(artifact.with_extension("report.tsv"), report.to_text())?;
    Ok(())
}

/// Replicates a single gray channel to RGB.
fn to_rgb(img: &ImageBuffer) -> Result<ImageBuffer, Error> {
    match img.channels() {
        3 => Ok(img.clone()),
        1 => ImageBuffer::new(
            img.height(),
            img.width(),
            3,
            img.data().iter().flat_map(|&v| [v, v, v]).collect(),
        ),
        c => Err(Error::InvalidArgument(format!(
            "unsupported channel count {c}"
        ))),
    }
}

pub fn cmd_dataset(cfg: &RunConfig) -> StageResult<PathBuf> {
    let p = Pipeline::new(cfg.clone())?;
    p.prepare_run_dir()?;
    Ok(p.dataset()?.root.join(MANIFEST_FILE))
}

/// Returns the checkpoint path and its checksum.
pub fn cmd_train_base(cfg: &RunConfig) -> StageResult<(PathBuf, String)> {
    let p = Pipeline::new(cfg.clone())?;
    p.prepare_run_dir()?;
    let (_, sum) = p.train_base()?;
    Ok((cfg.base_checkpoint_path(), sum))
}

/// Resizes to `size x size`, projects to a `2*size` pseudo-aerial view and
/// writes it to `output` (default: `<run dir>/warp/<stem>_aerial.ppm`).
pub fn cmd_warp(input: &Path, output: Option<&Path>, cfg: &RunConfig) -> StageResult<PathBuf> {
    cfg.validate().at(Stage::Config)?;
    let img = read_image(input).at(Stage::Warp)?;
    let img = resize_bilinear(&img, cfg.size, cfg.size).at(Stage::Warp)?;
    let opts = PseudoAerialOptions {
        corners: None,
        fill: cfg.warp_fill,
    };
    let out = make_pseudo_aerial_with(&img, 2 * cfg.size, &opts).at(Stage::Warp)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let stem = input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image");
            let ext = if out.channels() == 1 { "pgm" } else { "ppm" };
            cfg.run_dir()
                .join("warp")
                .join(format!("{stem}_aerial.{ext}"))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(Stage::Warp)?;
    }
    write_image(&out, &path).at(Stage::Warp)?;
    Ok(path)
}

/// The full method over the configured alpha sweep; writes samples,
/// `eval.tsv` and `record.txt` into the run directory.
pub fn cmd_run(input: &RunInput, cfg: &RunConfig) -> StageResult<RunRecord> {
    let p = Pipeline::new(cfg.clone())?;
    let dir = p.prepare_run_dir()?;
    let probe = p.probe()?;
    let variant = Variant {
        name: "run",
        homography: cfg.homography,
        strategy: cfg.strategy,
        init: cfg.embedding_init,
    };
    let record = p.execute(
        input,
        &variant,
        &cfg.alphas,
        Some(Path::new("samples")),
        &probe,
    )?;
    let eval: String = record
        .eval_rows()
        .iter()
        .map(|r| r.to_line() + "\n")
        .collect();
    fs::write(dir.join(EVAL_FILE), eval).at(Stage::Eval)?;
    fs::write(dir.join(RECORD_FILE), record.to_text()).at(Stage::Eval)?;
    Ok(record)
}

/// Every ablation variant at `cfg.ablation_alpha` with shared sampler seeds.
pub fn cmd_ablate(input: &RunInput, cfg: &RunConfig) -> StageResult<AblationReport> {
    let p = Pipeline::new(cfg.clone())?;
    let dir = p.prepare_run_dir()?;
    let probe = p.probe()?;
    let alpha = cfg.ablation_alpha;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for v in ablation_variants(cfg) {
        let rec = p.execute(
            input,
            &v,
            &[alpha],
            Some(&Path::new("ablate").join(v.name)),
            &probe,
        )?;
        for s in &rec.samples {
            rows.push(AblationRow {
                variant: v.name.to_string(),
                seed: s.seed,
                aerialness: s.aerialness,
                fidelity: s.fidelity.as_ref().map(|f| f.score),
            });
        }
        records.push(rec);
    }
    let report = AblationReport {
        alpha,
        rows,
        records,
    };
    fs::write(dir.join(ABLATION_FILE), report.to_text()).at(Stage::Ablate)?;
    Ok(report)
}

/// Scores images with the dataset probe and, given a spec, fidelity.
pub fn cmd_eval(
    images: &[PathBuf],
    spec: Option<&SceneSpec>,
    cfg: &RunConfig,
) -> StageResult<Vec<EvalRow>> {
    let p = Pipeline::new(cfg.clone())?;
    let probe = p.probe()?;
    images
        .iter()
        .map(|path| {
            let img = read_image(path).at(Stage::Eval)?;
            let img = to_rgb(&img).at(Stage::Eval)?;
            let img = if img.height() != cfg.size || img.width() != cfg.size {
                resize_bilinear(&img, cfg.size, cfg.size).at(Stage::Eval)?
            } else {
                img
            };
            Ok(EvalRow {
                image: path.display().to_string(),
                aerialness: probe.aerialness(&img).at(Stage::Eval)?,
                fidelity: spec
                    .map(|s| fidelity(s, &img))
                    .transpose()
                    .at(Stage::Eval)?,
            })
        })
        .collect()
}

/// Trains the viewpoint probe; writes its weights to `<run dir>/probe.tsv`.
pub fn cmd_probe(cfg: &RunConfig) -> StageResult<ViewpointProbe> {
    let p = Pipeline::new(cfg.clone())?;
    let dir = p.prepare_run_dir()?;
    let probe = p.probe()?;
    let mut text = format!("# training_accuracy={}\n", probe.training_accuracy());
    for w in probe.weights() {
        text.push_str(&format!("{w}\n"));
    }
    fs::write(dir.join("probe.tsv"), text).at(Stage::Probe)?;
    Ok(probe)
}
