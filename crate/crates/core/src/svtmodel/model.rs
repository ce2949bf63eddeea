use rand::Rng;

use super::{dind_predict, AttrVariant, AttributePredictor, DindMode, Encoder, ModelConfig, NotePredictor};
use crate::corpus::{Attribute, NoteEvent};
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::notelab::{frames_to_notes, FramePredictions, PostProcConfig};
use crate::tensornet::{Graph, ParamSet, Tensor};

/// Per-dimension standardisation fitted on training features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a FeatureSequence>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.dim];
                sq = vec![0.0; s.dim];
            } else if s.dim != sum.len() {
                return Err(Error::Shape("feature dimensions differ".into()));
            }
            for row in s.frames.chunks_exact(s.dim) {
                for (k, v) in row.iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            n += s.n_frames;
        }
        if n == 0 {
            return Err(Error::Invalid("no frames to fit normalisation".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, f: &FeatureSequence) -> Result<Tensor> {
        if f.dim != self.mean.len() {
            return Err(Error::Shape(format!(
                "features of width {} against normalisation of width {}",
                f.dim,
                self.mean.len()
            )));
        }
        let data = f
            .frames
            .chunks_exact(f.dim)
            .flat_map(|row| row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s))
            .collect();
        Tensor::new(vec![f.n_frames, f.dim], data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoteHeads {
    Single(NotePredictor),
    /// One head per group, as in domain-independent training.
    PerGroup { f: NotePredictor, m: NotePredictor },
}

/// Encoder θ, note head(s) φ, optional attribute predictor ψ, and the input
/// normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct SvtModel {
    pub config: ModelConfig,
    pub norm: FeatureNorm,
    pub encoder: Encoder,
    pub heads: NoteHeads,
    pub attr: Option<AttributePredictor>,
}

impl SvtModel {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        per_group_heads: bool,
        attr: Option<AttrVariant>,
        norm: FeatureNorm,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if norm.mean.len() != config.input_dim {
            return Err(Error::Config(format!(
                "normalisation width {} against input dim {}",
                norm.mean.len(),
                config.input_dim
            )));
        }
        let encoder = Encoder::new(config, rng);
        let heads = if per_group_heads {
            let f = NotePredictor::new(config, rng);
            let m = NotePredictor::new(config, rng);
            NoteHeads::PerGroup { f, m }
        } else {
            NoteHeads::Single(NotePredictor::new(config, rng))
        };
        let attr = attr.map(|v| AttributePredictor::new(config, v, rng));
        Ok(Self {
            config: config.clone(),
            norm,
            encoder,
            heads,
            attr,
        })
    }

    fn groups(&self) -> Vec<(&'static str, &ParamSet)> {
        let mut out = vec![("enc.", &self.encoder.params)];
        match &self.heads {
            NoteHeads::Single(h) => out.push(("note.", &h.params)),
            NoteHeads::PerGroup { f, m } => {
                out.push(("note_f.", &f.params));
                out.push(("note_m.", &m.params));
            }
        }
        if let Some(a) = &self.attr {
            out.push(("attr.", &a.params));
        }
        out
    }

    /// Named tensors in a fixed order, for checkpoints.
    pub fn records(&self) -> Vec<(String, Tensor)> {
        let d = self.norm.mean.len();
        let mut out = vec![
            ("norm.mean".to_string(), Tensor::new(vec![d], self.norm.mean.clone()).expect("width")),
            ("norm.std".to_string(), Tensor::new(vec![d], self.norm.std.clone()).expect("width")),
        ];
        for (prefix, params) in self.groups() {
            out.extend(params.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())));
        }
        out
    }

    /// Overwrites every tensor from checkpoint records.
    pub fn load_records(&mut self, records: &[(String, Tensor)]) -> Result<()> {
        let find = |key: &str| {
            records
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t.data().to_vec())
                .ok_or_else(|| Error::format("checkpoint", format!("missing record {key}")))
        };
        let (mean, std) = (find("norm.mean")?, find("norm.std")?);
        if mean.len() != self.config.input_dim || std.len() != self.config.input_dim {
            return Err(Error::format("checkpoint", "normalisation width"));
        }
        self.norm = FeatureNorm { mean, std };
        self.encoder.params.load(records, "enc.")?;
        match &mut self.heads {
            NoteHeads::Single(h) => h.params.load(records, "note.")?,
            NoteHeads::PerGroup { f, m } => {
                f.params.load(records, "note_f.")?;
                m.params.load(records, "note_m.")?;
            }
        }
        if let Some(a) = &mut self.attr {
            a.params.load(records, "attr.")?;
        }
        Ok(())
    }

    /// Latents `z` as a `[T, D_z]` tensor.
    pub fn encode(&self, features: &FeatureSequence) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(self.norm.apply(features)?);
        let ids = self.encoder.params.bind(&mut g, false);
        let z = Encoder::forward(&mut g, &ids, x)?;
        Ok(g.value(z).clone())
    }

    /// Note-head logits from latents.
    pub fn predict_from_latent(
        &self,
        z: &Tensor,
        attribute: Option<Attribute>,
        mode: DindMode,
    ) -> Result<FramePredictions> {
        let nv = self.config.octaves.n_classes();
        let run = |head: &NotePredictor| -> Result<FramePredictions> {
            let mut g = Graph::new();
            let zi = g.input(z.clone());
            let ids = head.params.bind(&mut g, false);
            let out = NotePredictor::forward(&mut g, &ids, zi)?;
            FramePredictions::from_rows(g.value(out).data(), nv)
        };
        match &self.heads {
            NoteHeads::Single(h) => run(h),
            NoteHeads::PerGroup { f, m } => dind_predict(&run(f)?, &run(m)?, mode, attribute),
        }
    }

    pub fn predict(
        &self,
        features: &FeatureSequence,
        attribute: Option<Attribute>,
        mode: DindMode,
    ) -> Result<FramePredictions> {
        self.predict_from_latent(&self.encode(features)?, attribute, mode)
    }

    pub fn transcribe(
        &self,
        features: &FeatureSequence,
        attribute: Option<Attribute>,
        mode: DindMode,
        post: &PostProcConfig,
    ) -> Result<Vec<NoteEvent>> {
        let pred = self.predict(features, attribute, mode)?;
        frames_to_notes(&pred, &features.grid(), post, &self.config.octaves)
    }
}
