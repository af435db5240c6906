//! CLIPScore, RefCLIPScore and corpus-level averages over stored embeddings.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingStore, RatedPairRecord};
use crate::error::{Error, Result};

pub const DEFAULT_W: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipScoreConfig {
    /// Rescale weight applied to the clamped cosine.
    pub w: f64,
}

impl Default for ClipScoreConfig {
    fn default() -> Self {
        Self { w: DEFAULT_W }
    }
}

impl ClipScoreConfig {
    pub fn new(w: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Precondition(format!(
                "rescale weight must be positive, got {w}"
            )));
        }
        Ok(Self { w })
    }

    /// `w * max(cos, 0)`.
    pub fn rescale(&self, cos: f64) -> f64 {
        self.w * cos.max(0.0)
    }
}

/// Cosine similarity accumulated in `f64`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    let denom = (na * nb).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Numeric("cosine of a zero or non-finite vector".into()));
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Harmonic mean of two non-negative values; zero when either is zero.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn clip_score(candidate: &[f32], image: &[f32], cfg: &ClipScoreConfig) -> Result<f64> {
    Ok(cfg.rescale(cosine(candidate, image)?))
}

/// Harmonic mean of the CLIPScore and the best clamped cosine between the
/// candidate and any reference.
///
/// The reference term is a raw cosine in `[0, 1]` while the CLIPScore term is
/// on the `[0, w]` scale; the two are combined without further rescaling.
pub fn ref_clip_score(
    candidate: &[f32],
    references: &[&[f32]],
    image: &[f32],
    cfg: &ClipScoreConfig,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Precondition(
            "RefCLIPScore needs at least one reference".into(),
        ));
    }
    let clip = clip_score(candidate, image, cfg)?;
    let mut best = f64::NEG_INFINITY;
    for r in references {
        best = best.max(cosine(candidate, r)?);
    }
    Ok(harmonic_mean(clip, best.max(0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub language: String,
    pub clipscore: f64,
    pub refclipscore: Option<f64>,
}

fn resolve<'a>(store: &'a EmbeddingStore, instance: &str, id: &str) -> Result<&'a [f32]> {
    store.vector(id).ok_or_else(|| Error::UnresolvedId {
        instance: instance.to_string(),
        id: id.to_string(),
    })
}

pub fn score_pair(
    pair: &RatedPairRecord,
    images: &EmbeddingStore,
    texts: &EmbeddingStore,
    cfg: &ClipScoreConfig,
) -> Result<ScoreRecord> {
    let image = resolve(images, &pair.instance_id, &pair.image_id)?;
    let candidate = resolve(texts, &pair.instance_id, &pair.candidate_id)?;
    let clipscore = clip_score(candidate, image, cfg)?;
    let refclipscore = if pair.reference_ids.is_empty() {
        None
    } else {
        let refs = pair
            .reference_ids
            .iter()
            .map(|id| resolve(texts, &pair.instance_id, id))
            .collect::<Result<Vec<_>>>()?;
        Some(ref_clip_score(candidate, &refs, image, cfg)?)
    };
    Ok(ScoreRecord {
        instance_id: pair.instance_id.clone(),
        language: pair.language.clone(),
        clipscore,
        refclipscore,
    })
}

/// Scores every pair, in input order.
pub fn score_dataset(
    pairs: &[RatedPairRecord],
    images: &EmbeddingStore,
    texts: &EmbeddingStore,
    cfg: &ClipScoreConfig,
) -> Result<Vec<ScoreRecord>> {
    pairs
        .par_iter()
        .map(|p| score_pair(p, images, texts, cfg))
        .collect()
}

/// Arithmetic mean with `f64` accumulation.
pub fn corpus_mean<I>(values: I) -> Result<f64>
where
    I: IntoIterator<Item = f64>,
{
    let (sum, n) = values
        .into_iter()
        .fold((0.0f64, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return Err(Error::Precondition("mean of an empty corpus".into()));
    }
    Ok(sum / n as f64)
}

pub const SCORE_CSV_HEADER: &str = "instance_id,language,clipscore,refclipscore";

pub fn write_scores_csv<W: Write>(records: &[ScoreRecord], w: &mut W) -> io::Result<()> {
    writeln!(w, "{SCORE_CSV_HEADER}")?;
    for r in records {
        let refc = r
            .refclipscore
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.6},{}",
            r.instance_id, r.language, r.clipscore, refc
        )?;
    }
    Ok(())
}

/// Parses the score CSV written by [`write_scores_csv`].
pub fn read_scores_csv(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SCORE_CSV_HEADER => {}
        _ => {
            return Err(Error::Schema {
                line: 1,
                message: format!("expected header `{SCORE_CSV_HEADER}`"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(schema(format!("expected 4 columns, got {}", cols.len())));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| schema(format!("bad number `{s}`: {e}")))
        };
        out.push(ScoreRecord {
            instance_id: cols[0].to_string(),
            language: cols[1].to_string(),
            clipscore: parse(cols[2])?,
            refclipscore: if cols[3].is_empty() {
                None
            } else {
                Some(parse(cols[3])?)
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding_store::{EmbeddingRecord, Modality, Split};
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn identical_vectors_score_w() {
        let v = [0.6f32, 0.8];
        let s = clip_score(&v, &v, &ClipScoreConfig::default()).unwrap();
        assert!((s - 2.5).abs() < 1e-6);
    }

    #[test]
    fn negative_cosine_clamps_to_zero() {
        let c = [1.0f32, 0.0];
        let v = [-0.2f32, (1.0f32 - 0.04).sqrt()];
        assert_eq!(clip_score(&c, &v, &ClipScoreConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_vector_matches_direct_cosine() {
        let h = std::f32::consts::FRAC_1_SQRT_2;
        let s = clip_score(&[1.0, 0.0], &[h, h], &ClipScoreConfig::default()).unwrap();
        // 2.5 * sqrt(2)/2 evaluated directly; f32 storage of 1/sqrt(2) limits agreement.
        assert!((s - 1.767_766_952_966_368_8).abs() < 1e-7, "{s}");
    }

    #[test]
    fn dimension_mismatch_errors() {
        assert!(matches!(
            clip_score(&[1.0], &[1.0, 0.0], &ClipScoreConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ref_clip_score_cases() {
        let cfg = ClipScoreConfig::default();
        let v = [1.0f32, 0.0, 0.0];
        let c = [1.0f32, 0.0, 0.0];
        let s = ref_clip_score(&c, &[&c], &v, &cfg).unwrap();
        assert!((s - 2.0 * 2.5 / 3.5).abs() < 1e-9);

        assert!((harmonic_mean(1.5, 0.8) - 2.0 * 1.5 * 0.8 / 2.3).abs() < EPS);
        assert!((harmonic_mean(1.5, 0.8) - 1.043_478_260_869_565).abs() < 1e-12);

        let r = [-1.0f32, 0.0, 0.0];
        assert_eq!(ref_clip_score(&c, &[&r], &v, &cfg).unwrap(), 0.0);
        assert!(ref_clip_score(&c, &[], &v, &cfg).is_err());
    }

    #[test]
    fn invalid_w_rejected() {
        assert!(ClipScoreConfig::new(0.0).is_err());
        assert!(ClipScoreConfig::new(-1.0).is_err());
        assert!(ClipScoreConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn corpus_mean_cases() {
        assert_eq!(corpus_mean([2.5]).unwrap(), 2.5);
        assert_eq!(corpus_mean([0.0, 2.5]).unwrap(), 1.25);
        assert!(corpus_mean(std::iter::empty()).is_err());
    }

    fn stores() -> (EmbeddingStore, EmbeddingStore) {
        let images = EmbeddingStore::from_records(
            2,
            [EmbeddingRecord::new("img", vec![1.0, 0.0], Modality::Image)],
        )
        .unwrap();
        let texts = EmbeddingStore::from_records(
            2,
            [
                EmbeddingRecord::new("c0", vec![1.0, 0.0], Modality::Text),
                EmbeddingRecord::new("c1", vec![1.0, 1.0], Modality::Text),
                EmbeddingRecord::new("c2", vec![0.0, 1.0], Modality::Text),
            ],
        )
        .unwrap();
        (images, texts)
    }

    fn pair(id: &str, cand: &str, refs: &[&str]) -> RatedPairRecord {
        RatedPairRecord {
            instance_id: id.into(),
            image_id: "img".into(),
            candidate_id: cand.into(),
            reference_ids: refs.iter().map(|s| s.to_string()).collect(),
            rating: 1.0,
            language: "en".into(),
            split: Split::Test,
        }
    }

    #[test]
    fn score_dataset_without_references() {
        let (images, texts) = stores();
        let pairs = [pair("a", "c0", &[]), pair("b", "c1", &[]), pair("c", "c2", &[])];
        let out = score_dataset(&pairs, &images, &texts, &ClipScoreConfig::default()).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.refclipscore.is_none()));
        let ids: Vec<_> = out.iter().map(|r| r.instance_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn score_dataset_names_missing_candidate() {
        let (images, texts) = stores();
        let pairs = [pair("a", "c0", &[]), pair("zz", "ghost", &[])];
        let err = score_dataset(&pairs, &images, &texts, &ClipScoreConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("zz") && msg.contains("ghost"), "{msg}");
    }

    #[test]
    fn csv_round_trip_and_mean() {
        let (images, texts) = stores();
        let pairs = [pair("a", "c0", &["c1"]), pair("b", "c1", &[]), pair("c", "c2", &["c0"])];
        let out = score_dataset(&pairs, &images, &texts, &ClipScoreConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(SCORE_CSV_HEADER));
        assert!(text.contains("b,en,1.767767,\n"), "{text}");
        let back = read_scores_csv(&text).unwrap();
        let csv_mean = back.iter().map(|r| r.clipscore).sum::<f64>() / back.len() as f64;
        let mean = corpus_mean(out.iter().map(|r| r.clipscore)).unwrap();
        assert!((csv_mean - mean).abs() < 1e-6);
    }

    fn unit_pair(dim: usize) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (
            proptest::collection::vec(-1.0f32..1.0, dim),
            proptest::collection::vec(-1.0f32..1.0, dim),
        )
            .prop_filter("nonzero", |(a, b)| {
                a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3)
            })
    }

    proptest! {
        #[test]
        fn clip_score_bounded_and_scale_invariant(
            (c, v) in unit_pair(8),
            alpha in 0.01f32..100.0,
            beta in 0.01f32..100.0,
        ) {
            let cfg = ClipScoreConfig::default();
            let s = clip_score(&c, &v, &cfg).unwrap();
            prop_assert!((0.0..=cfg.w).contains(&s));
            let cs: Vec<f32> = c.iter().map(|x| x * alpha).collect();
            let vs: Vec<f32> = v.iter().map(|x| x * beta).collect();
            let scaled = clip_score(&cs, &vs, &cfg).unwrap();
            prop_assert!((scaled - s).abs() < 1e-5);
        }

        #[test]
        fn ref_clip_score_dominated_by_twice_the_min(
            (c, v) in unit_pair(6),
            (r, _) in unit_pair(6),
        ) {
            let cfg = ClipScoreConfig::default();
            let s = ref_clip_score(&c, &[&r], &v, &cfg).unwrap();
            let clip = clip_score(&c, &v, &cfg).unwrap();
            let best = cosine(&c, &r).unwrap().max(0.0);
            prop_assert!(s <= 2.0 * clip.min(best) + 1e-12);
        }
    }
}
