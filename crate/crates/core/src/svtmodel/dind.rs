use serde::{Deserialize, Serialize};

use crate::corpus::Attribute;
use crate::error::{Error, Result};
use crate::notelab::FramePredictions;
use crate::tensornet::{sigmoid, softmax_in_place};

/// How per-group note heads are combined at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DindMode {
    /// Use the head of the song's true group.
    #[default]
    Calibrated,
    /// Average both heads' class probabilities; the group is not used.
    Miscalibrated,
}

fn averaged_binary(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let p = 0.5 * (sigmoid(x) + sigmoid(y));
            p.ln() - (1.0 - p).ln()
        })
        .collect()
}

fn averaged_categorical(a: &[f64], b: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for (ra, rb) in a.chunks_exact(width).zip(b.chunks_exact(width)) {
        let (mut pa, mut pb) = (ra.to_vec(), rb.to_vec());
        softmax_in_place(&mut pa);
        softmax_in_place(&mut pb);
        out.extend(pa.iter().zip(&pb).map(|(x, y)| (0.5 * (x + y)).ln()));
    }
    out
}

/// Combines the group-F and group-M head outputs.
pub fn dind_predict(
    head_f: &FramePredictions,
    head_m: &FramePredictions,
    mode: DindMode,
    attribute: Option<Attribute>,
) -> Result<FramePredictions> {
    head_f.validate()?;
    head_m.validate()?;
    if head_f.len() != head_m.len() || head_f.n_octave_classes != head_m.n_octave_classes {
        return Err(Error::Shape("group heads disagree in shape".into()));
    }
    match mode {
        DindMode::Calibrated => match attribute {
            Some(Attribute::F) => Ok(head_f.clone()),
            Some(Attribute::M) => Ok(head_m.clone()),
            None => Err(Error::Invalid("calibrated inference needs the group attribute".into())),
        },
        DindMode::Miscalibrated => Ok(FramePredictions {
            onset: averaged_binary(&head_f.onset, &head_m.onset),
            silence: averaged_binary(&head_f.silence, &head_m.silence),
            octave: averaged_categorical(&head_f.octave, &head_m.octave, head_f.n_octave_classes),
            pitch: averaged_categorical(&head_f.pitch, &head_m.pitch, crate::notelab::N_PITCH_CLASSES),
            n_octave_classes: head_f.n_octave_classes,
        }),
    }
}
