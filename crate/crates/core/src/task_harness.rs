//! Classification-style evaluations built on CLIPScore comparisons, and the
//! cross-language correlation heatmap.
//!
//! Every task is split in two layers: a scoring step that turns dataset
//! records into scored items, and a pure decision step over those items. All
//! comparisons are strict, so a tie counts as incorrect, except for the
//! pairwise preference task where ties are settled by a seeded coin flip.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{
    EmbeddingStore, FoilRecord, NliRecord, PascalCategory, PreferenceRecord, TwoImageRecord,
};
use crate::error::{Error, Result};
use crate::metric_core::{clip_score, ref_clip_score, ClipScoreConfig};
use crate::mt_select::{qe_percentile_mask, MaskSide};
use crate::rank_correlation::pearson;

/// Visual entailment label, ordered by agreement with the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Contradiction = 0,
    Neutral = 1,
    Entailment = 2,
}

impl NliLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
            NliLabel::Entailment => "entailment",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: u64,
    pub total: u64,
}

impl Tally {
    pub fn record(&mut self, correct: bool) {
        self.total += 1;
        self.correct += u64::from(correct);
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEntry {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

impl From<Tally> for BreakdownEntry {
    fn from(t: Tally) -> Self {
        Self {
            correct: t.correct,
            total: t.total,
            accuracy: t.accuracy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub task: String,
    pub language: String,
    pub breakdown: BTreeMap<String, BreakdownEntry>,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    /// Instances or groups left out for lack of ground truth or malformed structure.
    pub skipped: u64,
    /// Unweighted mean of the breakdown accuracies, where that is meaningful.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_accuracy: Option<f64>,
}

impl AccuracyResult {
    fn build(
        task: &str,
        language: String,
        overall: Tally,
        breakdown: BTreeMap<String, Tally>,
        skipped: u64,
    ) -> Result<Self> {
        if overall.total == 0 {
            return Err(Error::EmptyTask(format!("{task} has no eligible comparisons")));
        }
        Ok(Self {
            task: task.to_string(),
            language,
            breakdown: breakdown.into_iter().map(|(k, v)| (k, v.into())).collect(),
            correct: overall.correct,
            total: overall.total,
            accuracy: overall.accuracy(),
            skipped,
            macro_accuracy: None,
        })
    }
}

fn common_language<'a>(mut langs: impl Iterator<Item = &'a str>) -> String {
    match langs.next() {
        None => "all".into(),
        Some(first) => {
            if langs.all(|l| l == first) {
                first.to_string()
            } else {
                "all".into()
            }
        }
    }
}

/// Resolves ids against a pair of stores and computes scores.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub images: &'a EmbeddingStore,
    pub texts: &'a EmbeddingStore,
    pub cfg: ClipScoreConfig,
}

impl<'a> Scorer<'a> {
    pub fn new(images: &'a EmbeddingStore, texts: &'a EmbeddingStore, cfg: ClipScoreConfig) -> Self {
        Self { images, texts, cfg }
    }

    fn text(&self, context: &str, id: &str) -> Result<&'a [f32]> {
        self.texts.vector(id).ok_or_else(|| Error::UnresolvedId {
            instance: context.to_string(),
            id: id.to_string(),
        })
    }

    fn image(&self, context: &str, id: &str) -> Result<&'a [f32]> {
        self.images.vector(id).ok_or_else(|| Error::UnresolvedId {
            instance: context.to_string(),
            id: id.to_string(),
        })
    }

    pub fn clip(&self, context: &str, text_id: &str, image_id: &str) -> Result<f64> {
        clip_score(self.text(context, text_id)?, self.image(context, image_id)?, &self.cfg)
    }

    pub fn ref_clip(
        &self,
        context: &str,
        text_id: &str,
        reference_ids: &[String],
        image_id: &str,
    ) -> Result<f64> {
        if reference_ids.is_empty() {
            return Err(Error::Precondition(format!(
                "`{context}` has no references for RefCLIPScore"
            )));
        }
        let refs = reference_ids
            .iter()
            .map(|id| self.text(context, id))
            .collect::<Result<Vec<_>>>()?;
        ref_clip_score(
            self.text(context, text_id)?,
            &refs,
            self.image(context, image_id)?,
            &self.cfg,
        )
    }
}

// ---------------------------------------------------------------------------
// VALSE foils
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFoil {
    pub phenomenon: String,
    pub language: String,
    pub caption_score: f64,
    pub foil_score: f64,
}

pub fn score_foils(foils: &[FoilRecord], scorer: &Scorer) -> Result<Vec<ScoredFoil>> {
    foils
        .iter()
        .map(|f| {
            let ctx = format!("{}/{}", f.image_id, f.caption_id);
            Ok(ScoredFoil {
                phenomenon: f.phenomenon.clone(),
                language: f.language.clone(),
                caption_score: scorer.clip(&ctx, &f.caption_id, &f.image_id)?,
                foil_score: scorer.clip(&ctx, &f.foil_id, &f.image_id)?,
            })
        })
        .collect()
}

/// Correct when the true caption strictly outscores its foil. Broken down by
/// phenomenon with an unweighted macro average.
pub fn valse_from_scores(items: &[ScoredFoil]) -> Result<AccuracyResult> {
    let mut overall = Tally::default();
    let mut by_phenomenon: BTreeMap<String, Tally> = BTreeMap::new();
    for item in items {
        let ok = item.caption_score > item.foil_score;
        overall.record(ok);
        by_phenomenon.entry(item.phenomenon.clone()).or_default().record(ok);
    }
    let macro_accuracy = (!by_phenomenon.is_empty()).then(|| {
        by_phenomenon.values().map(Tally::accuracy).sum::<f64>() / by_phenomenon.len() as f64
    });
    let language = common_language(items.iter().map(|i| i.language.as_str()));
    let mut result = AccuracyResult::build("valse", language, overall, by_phenomenon, 0)?;
    result.macro_accuracy = macro_accuracy;
    Ok(result)
}

pub fn valse_accuracy(foils: &[FoilRecord], scorer: &Scorer) -> Result<AccuracyResult> {
    valse_from_scores(&score_foils(foils, scorer)?)
}

// ---------------------------------------------------------------------------
// XVNLI
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredNli {
    pub image_id: String,
    pub language: String,
    pub label: NliLabel,
    pub score: f64,
}

pub fn score_nli(records: &[NliRecord], scorer: &Scorer) -> Result<Vec<ScoredNli>> {
    records
        .iter()
        .map(|r| {
            Ok(ScoredNli {
                image_id: r.image_id.clone(),
                language: r.language.clone(),
                label: r.label,
                score: scorer.clip(&format!("{}/{}", r.image_id, r.caption_id), &r.caption_id, &r.image_id)?,
            })
        })
        .collect()
}

fn by_image(items: &[ScoredNli]) -> BTreeMap<&str, Vec<&ScoredNli>> {
    let mut groups: BTreeMap<&str, Vec<&ScoredNli>> = BTreeMap::new();
    for item in items {
        groups.entry(item.image_id.as_str()).or_default().push(item);
    }
    groups
}

fn nli_language(items: &[ScoredNli]) -> String {
    common_language(items.iter().map(|i| i.language.as_str()))
}

/// Contradiction/entailment pairs on the same image; correct when the
/// entailment caption scores strictly higher.
pub fn xvnli_task1(items: &[ScoredNli]) -> Result<AccuracyResult> {
    let mut overall = Tally::default();
    for group in by_image(items).values() {
        let of = |label| group.iter().filter(move |i| i.label == label);
        for c in of(NliLabel::Contradiction) {
            for e in of(NliLabel::Entailment) {
                overall.record(e.score > c.score);
            }
        }
    }
    AccuracyResult::build("xvnli_task1", nli_language(items), overall, BTreeMap::new(), 0)
}

/// Every pair of differently labeled captions on the same image; correct when
/// the score order strictly matches the label order.
pub fn xvnli_task2(items: &[ScoredNli]) -> Result<AccuracyResult> {
    let mut overall = Tally::default();
    let mut by_labels: BTreeMap<String, Tally> = BTreeMap::new();
    for group in by_image(items).values() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                if a.label == b.label {
                    continue;
                }
                let (lo, hi) = if a.label < b.label { (a, b) } else { (b, a) };
                let ok = hi.score > lo.score;
                overall.record(ok);
                by_labels
                    .entry(format!("{}<{}", lo.label.as_str(), hi.label.as_str()))
                    .or_default()
                    .record(ok);
            }
        }
    }
    AccuracyResult::build("xvnli_task2", nli_language(items), overall, by_labels, 0)
}

/// Every (entailment, neutral, contradiction) triple on the same image;
/// correct only for a strictly matching order.
pub fn xvnli_task3(items: &[ScoredNli]) -> Result<AccuracyResult> {
    let mut overall = Tally::default();
    for group in by_image(items).values() {
        let of = |label| group.iter().filter(move |i| i.label == label);
        for e in of(NliLabel::Entailment) {
            for n in of(NliLabel::Neutral) {
                for c in of(NliLabel::Contradiction) {
                    overall.record(e.score > n.score && n.score > c.score);
                }
            }
        }
    }
    AccuracyResult::build("xvnli_task3", nli_language(items), overall, BTreeMap::new(), 0)
}

// ---------------------------------------------------------------------------
// MaRVL
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTwoImage {
    pub group_id: String,
    pub caption_id: String,
    pub language: String,
    pub label: bool,
    pub left: f64,
    pub right: f64,
}

impl ScoredTwoImage {
    fn best(&self) -> f64 {
        self.left.max(self.right)
    }

    fn worst(&self) -> f64 {
        self.left.min(self.right)
    }
}

pub fn score_two_image(records: &[TwoImageRecord], scorer: &Scorer) -> Result<Vec<ScoredTwoImage>> {
    records
        .iter()
        .map(|r| {
            let ctx = format!("{}/{}", r.group_id, r.caption_id);
            Ok(ScoredTwoImage {
                group_id: r.group_id.clone(),
                caption_id: r.caption_id.clone(),
                language: r.language.clone(),
                label: r.label,
                left: scorer.clip(&ctx, &r.caption_id, &r.image_left)?,
                right: scorer.clip(&ctx, &r.caption_id, &r.image_right)?,
            })
        })
        .collect()
}

fn marvl_language(items: &[ScoredTwoImage]) -> String {
    common_language(items.iter().map(|i| i.language.as_str()))
}

/// For each caption, compares every true instance against every false one:
/// correct when the true instance's better image strictly outscores the false
/// instance's worse image. Captions lacking one of the labels are skipped.
pub fn marvl_task1(items: &[ScoredTwoImage]) -> Result<AccuracyResult> {
    let mut groups: BTreeMap<&str, Vec<&ScoredTwoImage>> = BTreeMap::new();
    for item in items {
        groups.entry(item.caption_id.as_str()).or_default().push(item);
    }
    let mut overall = Tally::default();
    let mut skipped = 0;
    for (caption, group) in &groups {
        let trues: Vec<_> = group.iter().filter(|i| i.label).collect();
        let falses: Vec<_> = group.iter().filter(|i| !i.label).collect();
        if trues.is_empty() || falses.is_empty() {
            warn!("caption `{caption}` lacks a true or a false instance; skipped");
            skipped += 1;
            continue;
        }
        for t in &trues {
            for f in &falses {
                overall.record(t.best() > f.worst());
            }
        }
    }
    AccuracyResult::build("marvl_task1", marvl_language(items), overall, BTreeMap::new(), skipped)
}

/// Groups of four (two true, two false): correct when both true maxima
/// strictly exceed both false minima. Malformed groups are skipped.
pub fn marvl_task2(items: &[ScoredTwoImage]) -> Result<AccuracyResult> {
    let mut groups: BTreeMap<&str, Vec<&ScoredTwoImage>> = BTreeMap::new();
    for item in items {
        groups.entry(item.group_id.as_str()).or_default().push(item);
    }
    let mut overall = Tally::default();
    let mut skipped = 0;
    for (gid, group) in &groups {
        let n_true = group.iter().filter(|i| i.label).count();
        if group.len() != 4 || n_true != 2 {
            warn!(
                "group `{gid}` has {} instances ({n_true} true); expected 2 true and 2 false",
                group.len()
            );
            skipped += 1;
            continue;
        }
        let true_floor = group
            .iter()
            .filter(|i| i.label)
            .map(|i| i.best())
            .fold(f64::INFINITY, f64::min);
        let false_ceiling = group
            .iter()
            .filter(|i| !i.label)
            .map(|i| i.worst())
            .fold(f64::NEG_INFINITY, f64::max);
        overall.record(true_floor > false_ceiling);
    }
    AccuracyResult::build("marvl_task2", marvl_language(items), overall, BTreeMap::new(), skipped)
}

// ---------------------------------------------------------------------------
// Pascal-50S
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseMetric {
    Clipscore,
    Refclipscore,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPreference {
    pub category: PascalCategory,
    pub votes_a: u32,
    pub votes_b: u32,
    pub score_a: f64,
    pub score_b: f64,
}

pub fn score_preferences(
    prefs: &[PreferenceRecord],
    scorer: &Scorer,
    metric: PairwiseMetric,
) -> Result<Vec<ScoredPreference>> {
    prefs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ctx = format!("preference #{i} ({})", p.image_id);
            let score = |cand: &str| match metric {
                PairwiseMetric::Clipscore => scorer.clip(&ctx, cand, &p.image_id),
                PairwiseMetric::Refclipscore => {
                    scorer.ref_clip(&ctx, cand, &p.reference_ids, &p.image_id)
                }
            };
            Ok(ScoredPreference {
                category: p.category,
                votes_a: p.votes_a,
                votes_b: p.votes_b,
                score_a: score(&p.candidate_a)?,
                score_b: score(&p.candidate_b)?,
            })
        })
        .collect()
}

/// Accuracy at picking the majority-preferred caption. Score ties are decided
/// by a coin flip drawn from stream `index` of a generator seeded with `seed`;
/// vote ties have no ground truth and are skipped.
pub fn pascal_from_scores(items: &[ScoredPreference], seed: u64) -> Result<AccuracyResult> {
    let mut overall = Tally::default();
    let mut by_category: BTreeMap<String, Tally> = BTreeMap::new();
    let mut skipped = 0;
    for (i, p) in items.iter().enumerate() {
        if p.votes_a == p.votes_b {
            skipped += 1;
            continue;
        }
        let (preferred, other) = if p.votes_a > p.votes_b {
            (p.score_a, p.score_b)
        } else {
            (p.score_b, p.score_a)
        };
        let ok = if preferred == other {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng.gen_bool(0.5)
        } else {
            preferred > other
        };
        overall.record(ok);
        by_category.entry(p.category.as_str().to_string()).or_default().record(ok);
    }
    AccuracyResult::build("pascal", "en".into(), overall, by_category, skipped)
}

pub fn pascal_pairwise(
    prefs: &[PreferenceRecord],
    scorer: &Scorer,
    metric: PairwiseMetric,
    seed: u64,
) -> Result<AccuracyResult> {
    pascal_from_scores(&score_preferences(prefs, scorer, metric)?, seed)
}

// ---------------------------------------------------------------------------
// Cross-language heatmap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PercentileMode {
    All,
    Bottom25,
    Top25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub languages: Vec<String>,
    /// Row-major; `None` where the restricted subset was too small or constant.
    pub cells: Vec<Vec<Option<f64>>>,
}

/// Minimum restricted subset size for a heatmap cell.
pub const MIN_CELL_INSTANCES: usize = 3;

/// Pearson correlation between the per-instance scores of every language pair.
///
/// In the percentile modes each language with QE scores contributes a mask of
/// the instances strictly below its 25th (or above its 75th) percentile; a cell
/// uses the intersection of the masks of its two languages. Languages without
/// QE scores (the untranslated pivot) contribute no mask, so a pivot/partner
/// cell is restricted by the partner's mask alone.
pub fn language_heatmap(
    scores: &[(String, Vec<f64>)],
    qe: Option<&BTreeMap<String, Vec<f64>>>,
    mode: PercentileMode,
) -> Result<Heatmap> {
    let Some((_, first)) = scores.first() else {
        return Err(Error::Precondition("heatmap needs at least one language".into()));
    };
    let n = first.len();
    let mut seen = BTreeSet::new();
    for (lang, v) in scores {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
        if !seen.insert(lang.as_str()) {
            return Err(Error::DuplicateId(lang.clone()));
        }
    }

    let masks: Vec<Option<Vec<bool>>> = match mode {
        PercentileMode::All => vec![None; scores.len()],
        PercentileMode::Bottom25 | PercentileMode::Top25 => {
            let qe = qe.ok_or_else(|| {
                Error::Precondition("percentile modes need QE scores".into())
            })?;
            let side = if mode == PercentileMode::Bottom25 {
                MaskSide::Below
            } else {
                MaskSide::Above
            };
            scores
                .iter()
                .map(|(lang, _)| match qe.get(lang) {
                    None => Ok(None),
                    Some(q) if q.len() != n => Err(Error::DimensionMismatch {
                        expected: n,
                        found: q.len(),
                    }),
                    Some(q) => qe_percentile_mask(q, 25.0, side).map(Some),
                })
                .collect::<Result<_>>()?
        }
    };

    let k = scores.len();
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        cells[i][i] = Some(1.0);
        for j in i + 1..k {
            let keep = |t: usize| {
                [&masks[i], &masks[j]]
                    .iter()
                    .all(|m| m.as_ref().is_none_or(|m| m[t]))
            };
            let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n)
                .filter(|&t| keep(t))
                .map(|t| (scores[i].1[t], scores[j].1[t]))
                .unzip();
            let r = if xs.len() < MIN_CELL_INSTANCES {
                None
            } else {
                match pearson(&xs, &ys) {
                    Ok(r) => Some(r),
                    Err(Error::Undefined(_)) => None,
                    Err(e) => return Err(e),
                }
            };
            cells[i][j] = r;
            cells[j][i] = r;
        }
    }
    Ok(Heatmap {
        languages: scores.iter().map(|(l, _)| l.clone()).collect(),
        cells,
    })
}

pub fn write_heatmap_csv<W: Write>(h: &Heatmap, w: &mut W) -> io::Result<()> {
    write!(w, "language")?;
    for l in &h.languages {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (l, row) in h.languages.iter().zip(&h.cells) {
        write!(w, "{l}")?;
        for c in row {
            match c {
                Some(v) => write!(w, ",{v:.6}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
