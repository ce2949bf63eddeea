//! Training loop for ERM, adversarial learning (AL), note-conditioned
//! adversarial learning (NCAL v1/v2) and domain-independent heads (DInD),
//! plus the attribute probe and model evaluation.
//!
//! Each step runs: forward through encoder and note head; one attribute
//! predictor update on detached inputs; the adversarial loss recomputed with
//! the updated predictor on attached inputs; a note-head update from the
//! transcription loss only; and, after the first `k1` steps, an encoder
//! update along `∂L_y/∂θ − λ ∂L_A/∂θ`.

mod batch;
mod probe;
mod step;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Attribute;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::metrics::{evaluate, FairnessReport, MatchMode, Tolerances, Transcription};
use crate::notelab::PostProcConfig;
use crate::svtmodel::{DindMode, FeatureNorm, ModelConfig, SvtModel};
use crate::tensornet::OptimizerKind;

pub use batch::{prepare_songs, Batch, BatchSampler, PreparedSong};
pub use probe::{probe_accuracy, probe_model, ProbeConfig};
pub use step::{JointGradients, StepLosses, Trainer};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Al,
    NcalV1,
    NcalV2,
    Dind,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Al => "al",
            Method::NcalV1 => "ncal_v1",
            Method::NcalV2 => "ncal_v2",
            Method::Dind => "dind",
        }
    }

    pub fn is_adversarial(self) -> bool {
        matches!(self, Method::Al | Method::NcalV1 | Method::NcalV2)
    }
}

/// How the encoder's adversarial direction is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradRoute {
    /// A gradient reversal node between encoder and attribute predictor.
    #[default]
    Grl,
    /// Separate backward passes for both losses, combined afterwards.
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Encoder learning rate (η₁).
    #[serde(default = "default_lr")]
    pub lr_encoder: f64,
    /// Note predictor learning rate (η₂).
    #[serde(default = "default_lr")]
    pub lr_note: f64,
    /// Attribute predictor learning rate (η₃).
    #[serde(default = "default_lr")]
    pub lr_attr: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Probing steps with a frozen encoder.
    #[serde(default = "default_k1")]
    pub k1: usize,
    /// Joint fine-tuning steps.
    #[serde(default = "default_k2")]
    pub k2: usize,
    #[serde(default = "default_batch_songs")]
    pub batch_songs: usize,
    #[serde(default = "default_chunk_s")]
    pub chunk_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub grad_route: GradRoute,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub frontend: FrontendConfig,
    #[serde(default)]
    pub postproc: PostProcConfig,
    #[serde(default)]
    pub dind_inference: DindMode,
}

fn default_method() -> Method {
    Method::Erm
}
fn default_lr() -> f64 {
    1e-3
}
fn default_lambda() -> f64 {
    0.5
}
fn default_k1() -> usize {
    300
}
fn default_k2() -> usize {
    1500
}
fn default_batch_songs() -> usize {
    8
}
fn default_chunk_s() -> f64 {
    4.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            method: default_method(),
            lr_encoder: default_lr(),
            lr_note: default_lr(),
            lr_attr: default_lr(),
            lambda: default_lambda(),
            k1: default_k1(),
            k2: default_k2(),
            batch_songs: default_batch_songs(),
            chunk_s: default_chunk_s(),
            seed: 0,
            optimizer: OptimizerKind::default(),
            grad_route: GradRoute::default(),
            model: ModelConfig::default(),
            frontend: FrontendConfig::default(),
            postproc: PostProcConfig::default(),
            dind_inference: DindMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "train config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let rates = [self.lr_encoder, self.lr_note, self.lr_attr];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Config(format!("learning rates {rates:?} must be positive")));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        if self.batch_songs == 0 || !(self.chunk_s > 0.0) {
            return Err(Error::Config("batch_songs and chunk_s must be positive".into()));
        }
        if self.model.input_dim != self.frontend.n_mels {
            return Err(Error::Config(format!(
                "model input_dim {} differs from frontend n_mels {}",
                self.model.input_dim, self.frontend.n_mels
            )));
        }
        self.model.validate()?;
        self.frontend.validate()?;
        self.postproc.validate()
    }

    pub fn total_steps(&self) -> usize {
        self.k1 + self.k2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub l_y: f64,
    pub l_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub history: Vec<HistoryRow>,
    pub model: SvtModel,
}

fn check_groups(songs: &[PreparedSong], method: Method) -> Result<()> {
    let has = |a| songs.iter().any(|s| s.attribute == a);
    if songs.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    if (method.is_adversarial() || method == Method::Dind) && !(has(Attribute::F) && has(Attribute::M)) {
        return Err(Error::Invalid(format!(
            "{} needs both groups in the training split",
            method.as_str()
        )));
    }
    Ok(())
}

/// Runs `k1 + k2` joint steps on `songs`.
pub fn train(songs: &[PreparedSong], config: &TrainConfig) -> Result<RunRecord> {
    config.validate()?;
    check_groups(songs, config.method)?;
    let norm = FeatureNorm::fit(songs.iter().map(|s| &s.features))?;
    let mut trainer = Trainer::new(config, norm.clone())?;
    let mut sampler = BatchSampler::new(
        songs,
        &norm,
        config.batch_songs,
        config.chunk_s,
        config.frontend.hop_s,
        config.seed,
    )?;
    let mut history = Vec::with_capacity(config.total_steps());
    for k in 1..=config.total_steps() {
        let batch = sampler.next_batch()?;
        let l = trainer.step(&batch)?;
        history.push(HistoryRow {
            step: k,
            l_y: l.l_y,
            l_a: l.l_a,
        });
        if k % 100 == 0 || k == config.total_steps() {
            info!(
                "{} step {k}/{}: L_y {:.4}{}",
                config.method.as_str(),
                config.total_steps(),
                l.l_y,
                l.l_a.map(|a| format!(", L_A {a:.4}")).unwrap_or_default()
            );
        }
    }
    Ok(RunRecord {
        config: config.clone(),
        history,
        model: trainer.model,
    })
}

/// Transcribes every song and scores the result per group.
pub fn evaluate_model(
    model: &SvtModel,
    songs: &[PreparedSong],
    post: &PostProcConfig,
    dind: DindMode,
    tol: &Tolerances,
    modes: &[MatchMode],
) -> Result<FairnessReport> {
    let transcriptions = songs
        .par_iter()
        .map(|s| {
            let estimate = model.transcribe(&s.features, Some(s.attribute), dind, post)?;
            Ok(Transcription {
                attribute: s.attribute,
                reference: s.notes.clone(),
                estimate,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&transcriptions, tol, modes)
}

#[cfg(test)]
mod tests;
