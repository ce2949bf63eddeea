//! Note-level transcription scores, per-group utility and fairness gap, and
//! trade-off model selection.

mod matching;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{Attribute, NoteEvent};
use crate::error::{Error, Result};

pub use matching::{match_notes, max_bipartite_matching};

/// Matching tolerances; the defaults are the usual note-transcription ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub onset_s: f64,
    pub pitch_cents: f64,
    pub offset_s_min: f64,
    pub offset_ratio: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            onset_s: 0.05,
            pitch_cents: 50.0,
            offset_s_min: 0.05,
            offset_ratio: 0.2,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [self.onset_s, self.pitch_cents, self.offset_s_min, self.offset_ratio];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("tolerances {self:?}")))
        }
    }
}

/// Which note attributes must agree for a match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchMode {
    #[serde(rename = "con")]
    COn,
    #[serde(rename = "conp")]
    COnP,
    #[serde(rename = "conpoff")]
    COnPOff,
}

impl MatchMode {
    pub const ALL: [MatchMode; 3] = [MatchMode::COnPOff, MatchMode::COnP, MatchMode::COn];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "con" => Ok(MatchMode::COn),
            "conp" => Ok(MatchMode::COnP),
            "conpoff" => Ok(MatchMode::COnPOff),
            other => Err(Error::Config(format!("unknown metric mode {other:?}"))),
        }
    }
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::COn => "COn",
            MatchMode::COnP => "COnP",
            MatchMode::COnPOff => "COnPOff",
        })
    }
}

/// Precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_ref: usize,
    pub n_est: usize,
    pub n_matched: usize,
}

impl Prf {
    /// Scores from counts. Two empty lists score 1.0; one empty list scores 0.
    pub fn from_counts(n_matched: usize, n_ref: usize, n_est: usize) -> Self {
        let (precision, recall, f1) = if n_ref == 0 && n_est == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let p = if n_est == 0 { 0.0 } else { n_matched as f64 / n_est as f64 };
            let r = if n_ref == 0 { 0.0 } else { n_matched as f64 / n_ref as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f)
        };
        Self {
            precision,
            recall,
            f1,
            n_ref,
            n_est,
            n_matched,
        }
    }
}

pub fn transcription_prf(reference: &[NoteEvent], estimate: &[NoteEvent], mode: MatchMode, tol: &Tolerances) -> Prf {
    let m = match_notes(reference, estimate, mode, tol);
    Prf::from_counts(m.len(), reference.len(), estimate.len())
}

/// One transcribed song: group, reference notes, estimated notes.
#[derive(Clone, Debug, PartialEq)]
pub struct Transcription {
    pub attribute: Attribute,
    pub reference: Vec<NoteEvent>,
    pub estimate: Vec<NoteEvent>,
}

/// Per-group scores; a group absent from the evaluated songs is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScores<T> {
    #[serde(rename = "F")]
    pub f: Option<T>,
    #[serde(rename = "M")]
    pub m: Option<T>,
}

impl<T> GroupScores<T> {
    pub fn get(&self, a: Attribute) -> Option<&T> {
        match a {
            Attribute::F => self.f.as_ref(),
            Attribute::M => self.m.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: MatchMode,
    /// Notes pooled over all songs.
    pub total: Prf,
    /// Notes pooled within each group.
    pub groups: GroupScores<Prf>,
    /// Mean per-song F1 overall and per group.
    pub macro_f1: f64,
    pub macro_groups: GroupScores<f64>,
    /// Total F1 in percentage points.
    pub utility: f64,
    /// Group-M F1 minus group-F F1 in percentage points; `None` when a group
    /// is missing.
    pub fairness_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub tolerances: Tolerances,
    pub n_songs: usize,
    pub modes: Vec<ModeReport>,
}

impl FairnessReport {
    pub fn mode(&self, mode: MatchMode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// Keeps only `mode`.
    pub fn restrict(&mut self, mode: MatchMode) {
        self.modes.retain(|m| m.mode == mode);
    }
}

/// Fairness gap in percentage points from per-group F1 fractions.
pub fn fairness_gap(f1_f: f64, f1_m: f64) -> f64 {
    100.0 * f1_m - 100.0 * f1_f
}

/// Scores transcribed songs for every requested mode.
pub fn evaluate(songs: &[Transcription], tol: &Tolerances, modes: &[MatchMode]) -> Result<FairnessReport> {
    tol.validate()?;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let per_song: Vec<(Attribute, usize, usize, usize, f64)> = songs
            .iter()
            .map(|s| {
                let m = match_notes(&s.reference, &s.estimate, mode, tol).len();
                let prf = Prf::from_counts(m, s.reference.len(), s.estimate.len());
                (s.attribute, m, s.reference.len(), s.estimate.len(), prf.f1)
            })
            .collect();
        let pool = |filter: Option<Attribute>| -> Option<(Prf, f64)> {
            let rows: Vec<_> = per_song
                .iter()
                .filter(|r| filter.is_none_or(|a| r.0 == a))
                .collect();
            if rows.is_empty() {
                return None;
            }
            let (m, r, e) = rows
                .iter()
                .fold((0, 0, 0), |acc, x| (acc.0 + x.1, acc.1 + x.2, acc.2 + x.3));
            let macro_f1 = rows.iter().map(|x| x.4).sum::<f64>() / rows.len() as f64;
            Some((Prf::from_counts(m, r, e), macro_f1))
        };
        let (total, macro_f1) = pool(None).unwrap_or((Prf::from_counts(0, 0, 0), 1.0));
        let gf = pool(Some(Attribute::F));
        let gm = pool(Some(Attribute::M));
        let fairness_gap = match (&gf, &gm) {
            (Some(f), Some(m)) => Some(fairness_gap(f.0.f1, m.0.f1)),
            _ => None,
        };
        out.push(ModeReport {
            mode,
            total,
            groups: GroupScores {
                f: gf.map(|x| x.0),
                m: gm.map(|x| x.0),
            },
            macro_f1,
            macro_groups: GroupScores {
                f: gf.map(|x| x.1),
                m: gm.map(|x| x.1),
            },
            utility: 100.0 * total.f1,
            fairness_gap,
        });
    }
    Ok(FairnessReport {
        tolerances: *tol,
        n_songs: songs.len(),
        modes: out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selection {
    Selected(usize),
    NoneQualified,
}

/// Among runs `(U, F)` with `U > u0 - delta`, picks the one maximizing
/// `min(F, 0)`, breaking ties by higher `U` and then by lower index.
pub fn tradeoff_select(runs: &[(f64, f64)], u0: f64, delta: f64) -> Result<Selection> {
    if !(delta >= 0.0) {
        return Err(Error::Config(format!("tolerance delta {delta}")));
    }
    if runs.is_empty() {
        return Err(Error::Invalid("no runs to select from".into()));
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &(u, f)) in runs.iter().enumerate() {
        if !(u > u0 - delta) || f.is_nan() {
            continue;
        }
        let score = f.min(0.0);
        let better = match best {
            None => true,
            Some((_, bs, bu)) => score > bs || (score == bs && u > bu),
        };
        if better {
            best = Some((i, score, u));
        }
    }
    Ok(best.map_or(Selection::NoneQualified, |b| Selection::Selected(b.0)))
}

#[cfg(test)]
mod tests;
