use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Batch, GradRoute, Method, TrainConfig};
use crate::corpus::Attribute;
use crate::error::{Error, Result};
use crate::svtmodel::{attr_loss, svt_loss, AttrVariant, Encoder, FeatureNorm, NoteHeads, NotePredictor, SvtModel};
use crate::tensornet::{Graph, NodeId, Optimizer, ParamSet, Tensor};

/// Losses of one joint step. `l_a` is measured with the updated attribute
/// predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub l_y: f64,
    pub l_a: Option<f64>,
}

/// Gradients of one step without applying them.
#[derive(Clone, Debug, PartialEq)]
pub struct JointGradients {
    pub l_y: f64,
    pub l_a: Option<f64>,
    /// Encoder direction `∂L_y/∂θ − λ ∂L_A/∂θ`; `None` while probing.
    pub encoder: Option<Vec<Tensor>>,
    /// `∂L_y/∂φ` per note head, `None` for a head without frames.
    pub note: Vec<Option<Vec<Tensor>>>,
}

/// Forward state of one head on its share of the batch.
struct Part {
    head: usize,
    note_ids: Vec<NodeId>,
    z: NodeId,
    logits: NodeId,
    batch: Batch,
}

struct Forward {
    enc_ids: Vec<NodeId>,
    parts: Vec<Part>,
    l_y: NodeId,
}

/// Model plus optimizer state; runs the joint update one batch at a time.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SvtModel,
    opt_enc: Optimizer,
    opt_note: Vec<Optimizer>,
    opt_attr: Option<Optimizer>,
    steps_done: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig, norm: FeatureNorm) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let model = SvtModel::new(
            &config.model,
            config.method == Method::Dind,
            config.method.attr_variant(),
            norm,
            &mut rng,
        )?;
        Ok(Self::from_model(config, model))
    }

    pub fn from_model(config: &TrainConfig, model: SvtModel) -> Self {
        let kind = config.optimizer;
        let opt_enc = Optimizer::new(kind, &model.encoder.params, config.lr_encoder);
        let opt_note = heads(&model)
            .iter()
            .map(|h| Optimizer::new(kind, &h.params, config.lr_note))
            .collect();
        let opt_attr = model
            .attr
            .as_ref()
            .map(|a| Optimizer::new(kind, &a.params, config.lr_attr));
        Self {
            config: config.clone(),
            model,
            opt_enc,
            opt_note,
            opt_attr,
            steps_done: 0,
        }
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    /// Whether step `k` (1-based) updates the encoder.
    fn encoder_trains(&self, k: usize) -> bool {
        k > self.config.k1
    }

    fn forward(&self, g: &mut Graph, batch: &Batch, train_theta: bool) -> Result<Forward> {
        let enc_ids = self.model.encoder.params.bind(g, train_theta);
        let split: Vec<(usize, Batch)> = match &self.model.heads {
            NoteHeads::Single(_) => vec![(0, batch.clone())],
            NoteHeads::PerGroup { .. } => [Attribute::F, Attribute::M]
                .iter()
                .enumerate()
                .filter_map(|(h, &a)| batch.subset(a).map(|b| (h, b)))
                .collect(),
        };
        let total = batch.n_frames() as f64;
        let heads = heads(&self.model);
        let mut parts = Vec::with_capacity(split.len());
        let mut l_y: Option<NodeId> = None;
        for (head, sub) in split {
            let x = g.input(sub.x.clone());
            let z = Encoder::forward(g, &enc_ids, x)?;
            let note_ids = heads[head].params.bind(g, true);
            let logits = NotePredictor::forward(g, &note_ids, z)?;
            let mut l = svt_loss(g, logits, &sub.labels, &heads[head].layout)?;
            if sub.n_frames() != batch.n_frames() {
                l = g.scale(l, sub.n_frames() as f64 / total)?;
            }
            l_y = Some(match l_y {
                None => l,
                Some(prev) => g.add(prev, l)?,
            });
            parts.push(Part {
                head,
                note_ids,
                z,
                logits,
                batch: sub,
            });
        }
        let l_y = l_y.ok_or_else(|| Error::Invalid("empty batch".into()))?;
        Ok(Forward { enc_ids, parts, l_y })
    }

    fn condition_value(&self, part: &Part, g: &Graph) -> Option<Tensor> {
        let variant = self.model.attr.as_ref()?.variant;
        let b = &part.batch;
        match variant {
            AttrVariant::Uncond => None,
            AttrVariant::NcalV1 => {
                let w = self.model.config.layout().width();
                let rows = b.labels.one_hot(&self.model.config.octaves);
                Some(Tensor::new(vec![b.attributes.len(), b.chunk_frames, w], rows).expect("label widths"))
            }
            AttrVariant::NcalV2 => Some(g.value(part.logits).clone()),
        }
    }

    /// One attribute-predictor step on detached latents and conditions.
    fn update_attr(&mut self, z: Tensor, cond: Option<Tensor>, targets: &[f64]) -> Result<f64> {
        let attr = self.model.attr.as_ref().expect("adversarial method");
        let mut g = Graph::new();
        let zi = g.input(z);
        let ci = cond.map(|c| g.input(c));
        let ids = attr.params.bind(&mut g, true);
        let a = attr.forward(&mut g, &ids, zi, ci)?;
        let la = attr_loss(&mut g, a, targets)?;
        let value = g.value(la).item();
        let grads = g.backward(la)?;
        let grads = attr.params.collect_grads(&ids, &grads);
        let attr = self.model.attr.as_mut().expect("adversarial method");
        self.opt_attr
            .as_mut()
            .expect("attribute optimizer")
            .step(&mut attr.params, &grads)?;
        Ok(value)
    }

    /// `L_A` of the current attribute predictor on the attached forward
    /// state. With `reverse`, latents pass through a gradient reversal first.
    fn attached_attr_loss(&self, g: &mut Graph, fwd: &Forward, reverse: bool) -> Result<Option<NodeId>> {
        let Some(attr) = &self.model.attr else {
            return Ok(None);
        };
        let part = &fwd.parts[0];
        let z = if reverse {
            g.grad_reverse(part.z, self.config.lambda)?
        } else {
            part.z
        };
        let cond = match attr.variant {
            AttrVariant::Uncond => None,
            AttrVariant::NcalV1 => {
                let v = self.condition_value(part, g).expect("v1 condition");
                Some(g.input(v))
            }
            AttrVariant::NcalV2 => {
                // same logits as the note head, but φ enters as a constant so
                // only the encoder sees the adversarial gradient
                let head = &heads(&self.model)[part.head];
                let ids = head.params.bind(g, false);
                Some(NotePredictor::forward(g, &ids, z)?)
            }
        };
        let ids = attr.params.bind(g, false);
        let a = attr.forward(g, &ids, z, cond)?;
        Ok(Some(attr_loss(g, a, &part.batch.frame_targets())?))
    }

    fn gradients(&self, g: &mut Graph, fwd: &Forward, train_theta: bool, route: GradRoute) -> Result<JointGradients> {
        let heads = heads(&self.model);
        let reverse = train_theta && route == GradRoute::Grl;
        let la = self.attached_attr_loss(g, fwd, reverse)?;
        let l_y = g.value(fwd.l_y).item();
        let l_a = la.map(|id| g.value(id).item());
        let mut note: Vec<Option<Vec<Tensor>>> = vec![None; heads.len()];
        let encoder;
        match (la, train_theta, route) {
            (Some(la), true, GradRoute::Grl) => {
                let total = g.add(fwd.l_y, la)?;
                let grads = g.backward(total)?;
                encoder = Some(self.model.encoder.params.collect_grads(&fwd.enc_ids, &grads));
                for p in &fwd.parts {
                    note[p.head] = Some(heads[p.head].params.collect_grads(&p.note_ids, &grads));
                }
            }
            (Some(la), true, GradRoute::Explicit) => {
                let gy = g.backward(fwd.l_y)?;
                let ga = g.backward(la)?;
                let ey = self.model.encoder.params.collect_grads(&fwd.enc_ids, &gy);
                let ea = self.model.encoder.params.collect_grads(&fwd.enc_ids, &ga);
                let lambda = self.config.lambda;
                encoder = Some(
                    ey.iter()
                        .zip(&ea)
                        .map(|(y, a)| {
                            let d = y.data().iter().zip(a.data()).map(|(u, v)| u - lambda * v).collect();
                            Tensor::new(y.shape().to_vec(), d).expect("same shape")
                        })
                        .collect(),
                );
                for p in &fwd.parts {
                    note[p.head] = Some(heads[p.head].params.collect_grads(&p.note_ids, &gy));
                }
            }
            _ => {
                let grads = g.backward(fwd.l_y)?;
                encoder = train_theta.then(|| self.model.encoder.params.collect_grads(&fwd.enc_ids, &grads));
                for p in &fwd.parts {
                    note[p.head] = Some(heads[p.head].params.collect_grads(&p.note_ids, &grads));
                }
            }
        }
        Ok(JointGradients {
            l_y,
            l_a,
            encoder,
            note,
        })
    }

    /// Only the attribute-predictor update of a step, on detached latents;
    /// encoder and note heads are left untouched.
    pub fn attr_only_step(&mut self, batch: &Batch) -> Result<f64> {
        if self.model.attr.is_none() {
            return Err(Error::Invalid("method has no attribute predictor".into()));
        }
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, false)?;
        let part = &fwd.parts[0];
        let z = g.value(part.z).clone();
        let cond = self.condition_value(part, &g);
        let targets = part.batch.frame_targets();
        self.update_attr(z, cond, &targets)
    }

    /// Gradients the next step would apply, given the current attribute
    /// predictor (no attribute update, no parameter change).
    pub fn joint_gradients(&self, batch: &Batch, route: GradRoute) -> Result<JointGradients> {
        let train_theta = self.encoder_trains(self.steps_done + 1);
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, train_theta)?;
        self.gradients(&mut g, &fwd, train_theta, route)
    }

    /// One joint step: forward, attribute update on detached inputs,
    /// recomputed adversarial loss, note-head update, encoder update after
    /// the probing phase.
    pub fn step(&mut self, batch: &Batch) -> Result<StepLosses> {
        let k = self.steps_done + 1;
        let diverged = |e: Error| match e {
            Error::NonFinite(what) => Error::Diverged {
                step: k,
                detail: format!("non-finite value in {what}"),
            },
            other => other,
        };
        let train_theta = self.encoder_trains(k);
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, train_theta).map_err(diverged)?;
        if self.model.attr.is_some() {
            let part = &fwd.parts[0];
            let z = g.value(part.z).clone();
            let cond = self.condition_value(part, &g);
            let targets = part.batch.frame_targets();
            self.update_attr(z, cond, &targets).map_err(diverged)?;
        }
        let grads = self
            .gradients(&mut g, &fwd, train_theta, self.config.grad_route)
            .map_err(diverged)?;
        drop(fwd);
        drop(g);
        if !grads.l_y.is_finite() || grads.l_a.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: k,
                detail: format!("losses L_y={} L_A={:?}", grads.l_y, grads.l_a),
            });
        }
        let heads = heads_mut(&mut self.model);
        for (i, (h, gr)) in heads.into_iter().zip(&grads.note).enumerate() {
            if let Some(gr) = gr {
                self.opt_note[i].step(h, gr)?;
            }
        }
        if let Some(ge) = &grads.encoder {
            self.opt_enc.step(&mut self.model.encoder.params, ge)?;
        }
        self.steps_done = k;
        Ok(StepLosses {
            l_y: grads.l_y,
            l_a: grads.l_a,
        })
    }
}

fn heads(model: &SvtModel) -> Vec<&NotePredictor> {
    match &model.heads {
        NoteHeads::Single(h) => vec![h],
        NoteHeads::PerGroup { f, m } => vec![f, m],
    }
}

fn heads_mut(model: &mut SvtModel) -> Vec<&mut ParamSet> {
    match &mut model.heads {
        NoteHeads::Single(h) => vec![&mut h.params],
        NoteHeads::PerGroup { f, m } => vec![&mut f.params, &mut m.params],
    }
}

impl Method {
    pub fn attr_variant(self) -> Option<AttrVariant> {
        match self {
            Method::Erm | Method::Dind => None,
            Method::Al => Some(AttrVariant::Uncond),
            Method::NcalV1 => Some(AttrVariant::NcalV1),
            Method::NcalV2 => Some(AttrVariant::NcalV2),
        }
    }
}
