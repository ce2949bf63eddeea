use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PreparedSong;
use crate::corpus::Attribute;
use crate::error::{Error, Result};
use crate::svtmodel::{attr_loss, AttrVariant, AttributePredictor, ModelConfig, SvtModel};
use crate::tensornet::{Adam, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Training frames sampled from the fitting songs.
    pub max_frames: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.01,
            hidden: 64,
            max_frames: 4096,
            seed: 0,
        }
    }
}

fn standardize(rows: &mut [f64], dim: usize, mean: &[f64], std: &[f64]) {
    for row in rows.chunks_exact_mut(dim) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
            *v = (*v - m) / s;
        }
    }
}

/// Fits a fresh unconditioned attribute predictor on frames of `fit` and
/// returns song-level accuracy on `held_out`, each song labelled by the
/// majority of its frame decisions. Inputs are `[T, D]` frame matrices.
pub fn probe_accuracy(fit: &[(Tensor, Attribute)], held_out: &[(Tensor, Attribute)], cfg: &ProbeConfig) -> Result<f64> {
    let has = |a| fit.iter().any(|(_, b)| *b == a);
    if !(has(Attribute::F) && has(Attribute::M)) || held_out.is_empty() {
        return Err(Error::Invalid("probe needs both groups to fit and songs to score".into()));
    }
    let dim = fit[0].0.last_dim();
    if fit.iter().chain(held_out).any(|(t, _)| t.shape().len() != 2 || t.last_dim() != dim) {
        return Err(Error::Shape("probe inputs must be [T, D] with one D".into()));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (t, a) in fit {
        rows.extend_from_slice(t.data());
        targets.extend(std::iter::repeat_n(a.target(), t.rows()));
    }
    let n = targets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    if n > cfg.max_frames {
        let mut idx = sample(&mut rng, n, cfg.max_frames).into_vec();
        idx.sort_unstable();
        rows = idx.iter().flat_map(|&i| rows[i * dim..(i + 1) * dim].to_vec()).collect();
        targets = idx.iter().map(|&i| targets[i]).collect();
    }
    let m = targets.len();
    let mut mean = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for row in rows.chunks_exact(dim) {
        for k in 0..dim {
            mean[k] += row[k];
            sq[k] += row[k] * row[k];
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, mu)| (q / m as f64 - mu * mu).max(0.0).sqrt().max(1e-6))
        .collect();
    standardize(&mut rows, dim, &mean, &std);
    let x = Tensor::new(vec![m, dim], rows)?;

    let mcfg = ModelConfig {
        latent_dim: dim,
        attr_hidden: cfg.hidden,
        ..ModelConfig::default()
    };
    let mut psi = AttributePredictor::new(&mcfg, AttrVariant::Uncond, &mut rng);
    let mut opt = Adam::new(&psi.params, cfg.lr);
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let ids = psi.params.bind(&mut g, true);
        let a = psi.forward(&mut g, &ids, xi, None)?;
        let l = attr_loss(&mut g, a, &targets)?;
        let grads = g.backward(l)?;
        let grads = psi.params.collect_grads(&ids, &grads);
        opt.step(&mut psi.params, &grads)?;
    }

    let mut correct = 0.0;
    for (t, a) in held_out {
        let mut rows = t.data().to_vec();
        standardize(&mut rows, dim, &mean, &std);
        let mut g = Graph::new();
        let xi = g.input(Tensor::new(vec![t.rows(), dim], rows)?);
        let ids = psi.params.bind(&mut g, false);
        let out = psi.forward(&mut g, &ids, xi, None)?;
        let votes_m = g.value(out).data().iter().filter(|&&v| v > 0.0).count();
        let total = t.rows();
        let predicted = if 2 * votes_m > total {
            Some(Attribute::M)
        } else if 2 * votes_m < total {
            Some(Attribute::F)
        } else {
            None
        };
        correct += match predicted {
            Some(p) if p == *a => 1.0,
            Some(_) => 0.0,
            None => 0.5,
        };
    }
    Ok(correct / held_out.len() as f64)
}

/// Probe on the frozen encoder of `model`: fit on `fit` songs, score `held_out`.
pub fn probe_model(model: &SvtModel, fit: &[PreparedSong], held_out: &[PreparedSong], cfg: &ProbeConfig) -> Result<f64> {
    let encode = |songs: &[PreparedSong]| -> Result<Vec<(Tensor, Attribute)>> {
        songs
            .par_iter()
            .map(|s| Ok((model.encode(&s.features)?, s.attribute)))
            .collect()
    };
    probe_accuracy(&encode(fit)?, &encode(held_out)?, cfg)
}
