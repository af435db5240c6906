//! Regenerates the toy bundle under `tests/data/toy`.
//!
//! 12 images and 40 captions (36 candidates in three languages plus four
//! references) with synthetic 16-dimensional embeddings, and one small input
//! file per subcommand.
//!
//! ```text
//! cargo run -p capeval-cli --example make_toy_bundle
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use capeval::embedding_store::{
    save_store, write_jsonl, EmbeddingRecord, EmbeddingStore, FoilRecord, Modality, NliRecord,
    PascalCategory, PreferenceRecord, RatedPairRecord, Split, TwoImageRecord,
};
use capeval::mt_select::MtCandidate;
use capeval::task_harness::NliLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const DIM: usize = 16;
const IMAGES: usize = 12;
const LANGUAGES: [&str; 3] = ["de", "en", "fr"];
const REFERENCES: usize = 4;

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    unit((0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

/// `a * base + b * (random unit)`, normalized.
fn blend(rng: &mut ChaCha8Rng, base: &[f32], a: f32, b: f32) -> Vec<f32> {
    let noise = random_unit(rng);
    unit(base.iter().zip(&noise).map(|(x, n)| a * x + b * n).collect())
}

fn image_id(i: usize) -> String {
    format!("img{:02}", i + 1)
}

fn caption_id(i: usize, lang: &str) -> String {
    format!("c{:02}_{lang}", i + 1)
}

fn instance_id(i: usize) -> String {
    format!("p{:02}", i + 1)
}

/// Rating of every candidate describing image `i`.
fn rating(i: usize) -> f64 {
    (i % 4 + 1) as f64
}

fn write_lines<T: Serialize>(dir: &Path, name: &str, rows: &[T]) {
    let file = File::create(dir.join(name)).expect("create output file");
    let mut w = BufWriter::new(file);
    write_jsonl(rows, &mut w).expect("write jsonl");
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy");
    fs::create_dir_all(&dir).expect("create bundle directory");
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let image_vecs: Vec<Vec<f32>> = (0..IMAGES).map(|_| random_unit(&mut rng)).collect();
    let mut images = EmbeddingStore::new(DIM).unwrap();
    for (i, v) in image_vecs.iter().enumerate() {
        images
            .insert(EmbeddingRecord::new(image_id(i), v.clone(), Modality::Image))
            .unwrap();
    }

    // Candidate closeness to its image grows with the rating; the shared
    // per-image offset makes languages agree with each other.
    let mut texts = EmbeddingStore::new(DIM).unwrap();
    for (i, img) in image_vecs.iter().enumerate() {
        let base = blend(&mut rng, img, 0.35 * rating(i) as f32, 1.0);
        for lang in LANGUAGES {
            let v = blend(&mut rng, &base, 1.0, 0.35);
            texts
                .insert(EmbeddingRecord::new(caption_id(i, lang), v, Modality::Text))
                .unwrap();
        }
    }
    for (r, img) in image_vecs.iter().take(REFERENCES).enumerate() {
        let v = blend(&mut rng, img, 1.0, 0.5);
        texts
            .insert(EmbeddingRecord::new(format!("ref{:02}", r + 1), v, Modality::Text))
            .unwrap();
    }
    save_store(&images, dir.join("images.capevec")).unwrap();
    save_store(&texts, dir.join("texts.capevec")).unwrap();

    let mut pairs = Vec::new();
    for lang in LANGUAGES {
        for i in 0..IMAGES {
            pairs.push(RatedPairRecord {
                instance_id: instance_id(i),
                image_id: image_id(i),
                candidate_id: caption_id(i, lang),
                reference_ids: if i < REFERENCES {
                    vec![format!("ref{:02}", i + 1)]
                } else {
                    vec![]
                },
                rating: rating(i),
                language: lang.into(),
                split: if i < 8 { Split::Train } else { Split::Test },
            });
        }
    }
    write_lines(&dir, "pairs.jsonl", &pairs);

    let phenomena = ["counting", "existence", "relations"];
    let foils: Vec<FoilRecord> = LANGUAGES
        .iter()
        .flat_map(|lang| {
            (0..IMAGES).map(move |i| FoilRecord {
                image_id: image_id(i),
                caption_id: caption_id(i, lang),
                foil_id: caption_id((i + 6) % IMAGES, lang),
                phenomenon: phenomena[i % 3].into(),
                language: lang.to_string(),
            })
        })
        .collect();
    write_lines(&dir, "valse.jsonl", &foils);

    let mut nli = Vec::new();
    for lang in LANGUAGES {
        for i in 0..6 {
            for (offset, label) in [
                (0, NliLabel::Entailment),
                (1, NliLabel::Neutral),
                (6, NliLabel::Contradiction),
            ] {
                nli.push(NliRecord {
                    image_id: image_id(i),
                    caption_id: caption_id((i + offset) % IMAGES, lang),
                    label,
                    language: lang.into(),
                });
            }
        }
    }
    write_lines(&dir, "xvnli.jsonl", &nli);

    let mut marvl = Vec::new();
    for lang in LANGUAGES {
        for g in 0..3 {
            let a = 2 * g;
            let caption = caption_id(a, lang);
            let group = format!("g{}_{lang}", g + 1);
            for (left, right, label) in [
                (a, a + 1, true),
                (a + 1, a, true),
                (a + 6, a + 7, false),
                (a + 7, a + 6, false),
            ] {
                marvl.push(TwoImageRecord {
                    group_id: group.clone(),
                    caption_id: caption.clone(),
                    image_left: image_id(left),
                    image_right: image_id(right),
                    label,
                    language: lang.into(),
                });
            }
        }
    }
    // A malformed group: three instances.
    for (left, right, label) in [(10, 11, true), (11, 10, false), (9, 10, false)] {
        marvl.push(TwoImageRecord {
            group_id: "g_bad".into(),
            caption_id: caption_id(11, "en"),
            image_left: image_id(left),
            image_right: image_id(right),
            label,
            language: "en".into(),
        });
    }
    write_lines(&dir, "marvl.jsonl", &marvl);

    let categories = [PascalCategory::HC, PascalCategory::HI, PascalCategory::HM, PascalCategory::MM];
    let prefs: Vec<PreferenceRecord> = (0..IMAGES)
        .map(|i| {
            let votes_a = rng.gen_range(0..=5);
            PreferenceRecord {
                image_id: image_id(i),
                candidate_a: caption_id(i, "en"),
                candidate_b: caption_id((i + 1) % IMAGES, "en"),
                category: categories[i % 4],
                votes_a,
                votes_b: 5 - votes_a,
                reference_ids: vec![],
            }
        })
        .collect();
    write_lines(&dir, "pascal.jsonl", &prefs);

    let mut candidates = Vec::new();
    for lang in ["de", "fr"] {
        for i in 0..IMAGES {
            for k in 0..3 {
                candidates.push(MtCandidate {
                    source_id: instance_id(i),
                    target_language: lang.into(),
                    candidate_id: format!("{}_mt{k}", caption_id(i, lang)),
                    text: format!("translation {k} of caption {} into {lang}", i + 1),
                    // The last source in French never passes the language check.
                    lang_ok: !(lang == "fr" && i == IMAGES - 1) && (k != 1 || i % 2 == 0),
                    qe_score: (rng.gen_range(0.0f64..1.0) * 1000.0).round() / 1000.0,
                });
            }
        }
    }
    write_lines(&dir, "mt_candidates.jsonl", &candidates);

    #[derive(Serialize)]
    struct CaptionLink {
        image_id: String,
        caption_id: String,
    }
    let links: Vec<CaptionLink> = (0..IMAGES)
        .map(|i| CaptionLink {
            image_id: image_id(i),
            caption_id: caption_id(i, "en"),
        })
        .collect();
    write_lines(&dir, "captions.jsonl", &links);

    println!("wrote toy bundle to {}", dir.display());
}
