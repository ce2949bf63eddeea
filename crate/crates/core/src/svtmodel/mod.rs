//! Acoustic encoder, note predictor, attribute predictor and their losses.

mod dind;
mod model;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::notelab::{FrameLabels, OctaveRange, N_PITCH_CLASSES};
use crate::tensornet::{init_uniform, Graph, NodeId, ParamSet};

pub use dind::{dind_predict, DindMode};
pub use model::{FeatureNorm, NoteHeads, SvtModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature dimension of the encoder input.
    pub input_dim: usize,
    pub conv_channels: [usize; 2],
    /// Odd temporal kernel width of both convolutions.
    pub kernel: usize,
    pub ff_hidden: usize,
    /// Latent dimension `D_z`.
    pub latent_dim: usize,
    /// Width of the attribute predictor's embeddings and hidden layers.
    pub attr_hidden: usize,
    pub octaves: OctaveRange,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 40,
            conv_channels: [64, 64],
            kernel: 5,
            ff_hidden: 64,
            latent_dim: 64,
            attr_hidden: 64,
            octaves: OctaveRange::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.input_dim,
            self.conv_channels[0],
            self.conv_channels[1],
            self.ff_hidden,
            self.latent_dim,
            self.attr_hidden,
            self.octaves.n_octaves,
        ];
        if widths.contains(&0) || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("model {self:?}")));
        }
        Ok(())
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout {
            n_octave_classes: self.octaves.n_classes(),
        }
    }
}

/// Column layout of the note predictor output: `[O, S, V..., P...]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_octave_classes: usize,
}

impl HeadLayout {
    pub const ONSET: usize = 0;
    pub const SILENCE: usize = 1;
    pub const OCTAVE: usize = 2;

    pub fn pitch_start(&self) -> usize {
        Self::OCTAVE + self.n_octave_classes
    }

    pub fn width(&self) -> usize {
        self.pitch_start() + N_PITCH_CLASSES
    }
}

fn push_linear<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, din: usize, dout: usize, rng: &mut R) {
    p.push(format!("{name}.w"), init_uniform(&[din, dout], din, rng));
    p.push(format!("{name}.b"), init_uniform(&[dout], din, rng));
}

fn push_conv<R: Rng + ?Sized>(p: &mut ParamSet, name: &str, k: usize, din: usize, dout: usize, rng: &mut R) {
    p.push(format!("{name}.w"), init_uniform(&[k, din, dout], k * din, rng));
    p.push(format!("{name}.b"), init_uniform(&[dout], k * din, rng));
}

/// `conv → relu → conv → relu → linear → relu → linear`, frame-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub params: ParamSet,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let [c1, c2] = cfg.conv_channels;
        let mut p = ParamSet::new();
        push_conv(&mut p, "conv1", cfg.kernel, cfg.input_dim, c1, rng);
        push_conv(&mut p, "conv2", cfg.kernel, c1, c2, rng);
        push_linear(&mut p, "ff1", c2, cfg.ff_hidden, rng);
        push_linear(&mut p, "ff2", cfg.ff_hidden, cfg.latent_dim, rng);
        Self { params: p }
    }

    /// `x` is `[B, T, D]` or `[T, D]`; `ids` are this encoder's bound params.
    pub fn forward(g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let h = g.conv1d(x, ids[0], ids[1])?;
        let h = g.relu(h)?;
        let h = g.conv1d(h, ids[2], ids[3])?;
        let h = g.relu(h)?;
        let h = g.linear(h, ids[4], ids[5])?;
        let h = g.relu(h)?;
        g.linear(h, ids[6], ids[7])
    }
}

/// One linear layer from latents to all note-head logits.
#[derive(Clone, Debug, PartialEq)]
pub struct NotePredictor {
    pub params: ParamSet,
    pub layout: HeadLayout,
}

impl NotePredictor {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let layout = cfg.layout();
        let mut p = ParamSet::new();
        push_linear(&mut p, "out", cfg.latent_dim, layout.width(), rng);
        Self { params: p, layout }
    }

    pub fn forward(g: &mut Graph, ids: &[NodeId], z: NodeId) -> Result<NodeId> {
        g.linear(z, ids[0], ids[1])
    }
}

/// What the attribute predictor is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrVariant {
    /// Latents only.
    Uncond,
    /// Latents plus ground-truth frame labels as one-hot rows.
    NcalV1,
    /// Latents plus the note predictor's raw logits.
    NcalV2,
}

/// Per-frame attribute logit from latents and, for the conditioned variants,
/// the note condition: embed each, concatenate, two relu layers, one logit.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributePredictor {
    pub variant: AttrVariant,
    pub params: ParamSet,
    pub cond_width: usize,
}

impl AttributePredictor {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, variant: AttrVariant, rng: &mut R) -> Self {
        let h = cfg.attr_hidden;
        let cond_width = match variant {
            AttrVariant::Uncond => 0,
            _ => cfg.layout().width(),
        };
        let mut p = ParamSet::new();
        push_linear(&mut p, "feat", cfg.latent_dim, h, rng);
        if cond_width > 0 {
            push_linear(&mut p, "cond", cond_width, h, rng);
        }
        let joint = if cond_width > 0 { 2 * h } else { h };
        push_linear(&mut p, "hidden1", joint, h, rng);
        push_linear(&mut p, "hidden2", h, h, rng);
        push_linear(&mut p, "out", h, 1, rng);
        Self {
            variant,
            params: p,
            cond_width,
        }
    }

    /// Returns `[..., 1]` logits. `cond` must be present exactly for the
    /// conditioned variants and have width `cond_width`.
    pub fn forward(&self, g: &mut Graph, ids: &[NodeId], z: NodeId, cond: Option<NodeId>) -> Result<NodeId> {
        let fz = g.linear(z, ids[0], ids[1])?;
        let (joint, rest) = match (self.variant, cond) {
            (AttrVariant::Uncond, None) => (fz, &ids[2..]),
            (AttrVariant::Uncond, Some(_)) => {
                return Err(Error::Invalid("unconditioned attribute predictor given a condition".into()))
            }
            (_, None) => return Err(Error::Invalid("conditioned attribute predictor needs a condition".into())),
            (_, Some(c)) => {
                let w = g.value(c).last_dim();
                if w != self.cond_width {
                    return Err(Error::Shape(format!(
                        "condition width {w}, expected {}",
                        self.cond_width
                    )));
                }
                let fc = g.linear(c, ids[2], ids[3])?;
                (g.concat(&[fz, fc])?, &ids[4..])
            }
        };
        let h = g.linear(joint, rest[0], rest[1])?;
        let h = g.relu(h)?;
        let h = g.linear(h, rest[2], rest[3])?;
        let h = g.relu(h)?;
        g.linear(h, rest[4], rest[5])
    }
}

/// Frame-averaged sum of onset BCE, silence BCE, octave CE and pitch CE.
pub fn svt_loss(g: &mut Graph, logits: NodeId, labels: &FrameLabels, layout: &HeadLayout) -> Result<NodeId> {
    let rows = g.value(logits).rows();
    if g.value(logits).last_dim() != layout.width() || rows != labels.len() {
        return Err(Error::Shape(format!(
            "logits {:?} against {} frames of width {}",
            g.value(logits).shape(),
            labels.len(),
            layout.width()
        )));
    }
    let o_t: Vec<f64> = labels.onset.iter().map(|&b| f64::from(u8::from(b))).collect();
    let s_t: Vec<f64> = labels.silence.iter().map(|&b| f64::from(u8::from(b))).collect();
    let o = g.slice_last(logits, HeadLayout::ONSET, 1)?;
    let s = g.slice_last(logits, HeadLayout::SILENCE, 1)?;
    let v = g.slice_last(logits, HeadLayout::OCTAVE, layout.n_octave_classes)?;
    let p = g.slice_last(logits, layout.pitch_start(), N_PITCH_CLASSES)?;
    let lo = g.bce_with_logits(o, &o_t)?;
    let ls = g.bce_with_logits(s, &s_t)?;
    let lv = g.ce_with_logits(v, &labels.octave)?;
    let lp = g.ce_with_logits(p, &labels.pitch)?;
    let a = g.add(lo, ls)?;
    let b = g.add(lv, lp)?;
    g.add(a, b)
}

/// Frame-averaged BCE of attribute logits against per-frame targets.
pub fn attr_loss(g: &mut Graph, logits: NodeId, targets: &[f64]) -> Result<NodeId> {
    g.bce_with_logits(logits, targets)
}
