//! Selection among N-best machine translations using externally produced
//! language-check verdicts and quality-estimation scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtCandidate {
    pub source_id: String,
    pub target_language: String,
    pub candidate_id: String,
    pub text: String,
    /// Verdict of the upstream language checker.
    pub lang_ok: bool,
    /// Upstream QE score, higher is better.
    pub qe_score: f64,
}

/// Output row for a chosen translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedTranslation {
    pub source_id: String,
    pub language: String,
    pub candidate_id: String,
    pub text: String,
    pub qe_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedGroup {
    pub source_id: String,
    pub language: String,
    pub candidates: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    /// Keyed by `(source_id, target_language)`.
    pub chosen: BTreeMap<(String, String), MtCandidate>,
    pub dropped: Vec<DroppedGroup>,
}

impl Selection {
    pub fn selected_rows(&self) -> Vec<SelectedTranslation> {
        self.chosen
            .values()
            .map(|c| SelectedTranslation {
                source_id: c.source_id.clone(),
                language: c.target_language.clone(),
                candidate_id: c.candidate_id.clone(),
                text: c.text.clone(),
                qe_score: c.qe_score,
            })
            .collect()
    }
}

/// Within each `(source_id, target_language)` group, drops candidates that
/// failed the language check and keeps the highest QE score. Equal scores go
/// to the lexicographically smallest `candidate_id`.
pub fn select_best(candidates: &[MtCandidate]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Precondition("no translation candidates".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<&MtCandidate>> = BTreeMap::new();
    for c in candidates {
        if c.qe_score.is_nan() {
            return Err(Error::Data(format!(
                "candidate `{}` has a NaN qe_score",
                c.candidate_id
            )));
        }
        groups
            .entry((c.source_id.clone(), c.target_language.clone()))
            .or_default()
            .push(c);
    }

    let mut selection = Selection::default();
    for (key, members) in groups {
        let best = members.iter().filter(|c| c.lang_ok).copied().reduce(|best, c| {
            let better = c.qe_score > best.qe_score
                || (c.qe_score == best.qe_score && c.candidate_id < best.candidate_id);
            if better {
                c
            } else {
                best
            }
        });
        match best {
            Some(c) => {
                selection.chosen.insert(key, c.clone());
            }
            None => selection.dropped.push(DroppedGroup {
                source_id: key.0,
                language: key.1,
                candidates: members.len(),
                reason: "no candidate passed the language check".into(),
            }),
        }
    }
    Ok(selection)
}

/// Linear-interpolation percentile (the "linear" method of common numeric
/// libraries) of `values` at `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Precondition("percentile of an empty vector".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Precondition(format!("percentile {p} outside [0, 100]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("percentile of non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSide {
    /// Strictly below the `p`-th percentile.
    Below,
    /// Strictly above the `(100 - p)`-th percentile.
    Above,
}

pub fn qe_percentile_mask(qe: &[f64], p: f64, side: MaskSide) -> Result<Vec<bool>> {
    if qe.len() < 4 {
        return Err(Error::Precondition(format!(
            "percentile masks need at least 4 instances, got {}",
            qe.len()
        )));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Precondition(format!("percentile {p} outside (0, 100)")));
    }
    Ok(match side {
        MaskSide::Below => {
            let t = percentile(qe, p)?;
            qe.iter().map(|&v| v < t).collect()
        }
        MaskSide::Above => {
            let t = percentile(qe, 100.0 - p)?;
            qe.iter().map(|&v| v > t).collect()
        }
    })
}
