//! Linear adapters over frozen embeddings, trained with a symmetric
//! contrastive loss on image/caption batches and a Pearson-correlation loss on
//! human-rated batches.
//!
//! Each modality gets its own `d x d` map. An adapted embedding is
//! `normalize(W x)`, and the similarity of image `i` with text `j` is the dot
//! product of the adapted unit vectors. Gradients are derived by hand and
//! backpropagated through the normalization; the tests check them against
//! central finite differences.
//!
//! In combined mode every optimizer step accumulates the gradient of one
//! contrastive batch and one rated batch; the two kinds of instance never
//! share a batch.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingRecord, EmbeddingStore, Modality};
use crate::error::{Error, Result};
use crate::metric_core::ClipScoreConfig;

pub const INITIAL_TAU: f64 = 0.07;
pub const MIN_TAU: f64 = 1e-3;
pub const MAX_TAU: f64 = 100.0;
/// Centered-norm threshold below which a Pearson batch is degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterState {
    pub w_text: DMatrix<f64>,
    pub w_image: DMatrix<f64>,
    pub log_tau: f64,
    pub step: u64,
}

impl AdapterState {
    pub fn identity(dim: usize) -> Self {
        Self {
            w_text: DMatrix::identity(dim, dim),
            w_image: DMatrix::identity(dim, dim),
            log_tau: INITIAL_TAU.ln(),
            step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w_text.nrows()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    fn matrix(&self, modality: Modality) -> &DMatrix<f64> {
        match modality {
            Modality::Image => &self.w_image,
            Modality::Text => &self.w_text,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.w_text.iter().chain(self.w_image.iter()).all(|v| v.is_finite())
            && self.log_tau.is_finite();
        if finite {
            Ok(())
        } else {
            Err(Error::Numeric("adapter parameters are not finite".into()))
        }
    }
}

/// Gradient of a loss with respect to every adapter parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_text: DMatrix<f64>,
    pub w_image: DMatrix<f64>,
    pub log_tau: f64,
}

impl Gradients {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_text: DMatrix::zeros(dim, dim),
            w_image: DMatrix::zeros(dim, dim),
            log_tau: 0.0,
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, weight: f64) {
        self.w_text += &other.w_text * weight;
        self.w_image += &other.w_image * weight;
        self.log_tau += other.log_tau * weight;
    }
}

fn to_dvector(v: &[f32]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(|&x| f64::from(x)))
}

fn columns(vectors: &[&[f32]], dim: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(dim, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        m.set_column(j, &to_dvector(v));
    }
    Ok(m)
}

/// Image/text pairs aligned by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub images: DMatrix<f64>,
    pub texts: DMatrix<f64>,
}

impl ContrastiveBatch {
    pub fn new(images: &[&[f32]], texts: &[&[f32]]) -> Result<Self> {
        if images.len() != texts.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                found: texts.len(),
            });
        }
        if images.len() < 2 {
            return Err(Error::Precondition(format!(
                "contrastive batches need at least 2 pairs, got {}",
                images.len()
            )));
        }
        let dim = images[0].len();
        Ok(Self {
            images: columns(images, dim)?,
            texts: columns(texts, dim)?,
        })
    }

    pub fn len(&self) -> usize {
        self.images.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Image/text pairs with one human rating each.
#[derive(Debug, Clone, PartialEq)]
pub struct PearsonBatch {
    pub images: DMatrix<f64>,
    pub texts: DMatrix<f64>,
    pub ratings: DVector<f64>,
}

impl PearsonBatch {
    pub fn new(images: &[&[f32]], texts: &[&[f32]], ratings: &[f64]) -> Result<Self> {
        if images.len() != texts.len() || images.len() != ratings.len() {
            return Err(Error::DimensionMismatch {
                expected: images.len(),
                found: texts.len().min(ratings.len()),
            });
        }
        if images.len() < 3 {
            return Err(Error::Precondition(format!(
                "rated batches need at least 3 pairs, got {}",
                images.len()
            )));
        }
        let dim = images[0].len();
        Ok(Self {
            images: columns(images, dim)?,
            texts: columns(texts, dim)?,
            ratings: DVector::from_column_slice(ratings),
        })
    }
}

/// `W X` with unit-normalized columns, plus the pre-normalization norms.
fn project(w: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if w.ncols() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: w.ncols(),
            found: x.nrows(),
        });
    }
    let mut raw = w * x;
    let mut norms = Vec::with_capacity(raw.ncols());
    for mut col in raw.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numeric("adapted embedding has zero or non-finite norm".into()));
        }
        col /= n;
        norms.push(n);
    }
    Ok((raw, norms))
}

/// Pulls gradients on unit columns back through the normalization and the
/// linear map: returns `dL/dW`.
fn backprop(
    unit: &DMatrix<f64>,
    norms: &[f64],
    grad_unit: &DMatrix<f64>,
    inputs: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut grad_raw = grad_unit.clone();
    for (j, mut g) in grad_raw.column_iter_mut().enumerate() {
        let u = unit.column(j);
        let radial = u.dot(&g);
        g -= u * radial;
        g /= norms[j];
    }
    grad_raw * inputs.transpose()
}

pub fn adapted_cosine(state: &AdapterState, image: &[f32], text: &[f32]) -> Result<f64> {
    let d = state.dim();
    if image.len() != d || text.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if image.len() != d { image.len() } else { text.len() },
        });
    }
    let a = &state.w_image * to_dvector(image);
    let b = &state.w_text * to_dvector(text);
    let c = a.dot(&b) / (a.norm() * b.norm());
    if c.is_finite() {
        Ok(c.clamp(-1.0, 1.0))
    } else {
        Err(Error::Numeric("adapted cosine is not finite".into()))
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric InfoNCE loss over the similarity matrix of a batch, with its
/// gradient.
pub fn contrastive_loss(state: &AdapterState, batch: &ContrastiveBatch) -> Result<(f64, Gradients)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::Precondition("contrastive batch needs N >= 2".into()));
    }
    let tau = state.tau();
    let (img, img_norms) = project(&state.w_image, &batch.images)?;
    let (txt, txt_norms) = project(&state.w_text, &batch.texts)?;
    let sim = img.transpose() * &txt;
    let logits = &sim / tau;

    let row_lse: Vec<f64> = (0..n).map(|i| log_sum_exp(logits.row(i).iter().copied())).collect();
    let col_lse: Vec<f64> = (0..n).map(|j| log_sum_exp(logits.column(j).iter().copied())).collect();

    let loss = -(0..n)
        .map(|i| 2.0 * logits[(i, i)] - row_lse[i] - col_lse[i])
        .sum::<f64>()
        / (2.0 * n as f64);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("contrastive loss is not finite (tau = {tau})")));
    }

    // dL/ds_ij = (softmax_row + softmax_col - 2 delta_ij) / (2 N tau)
    let scale = 1.0 / (2.0 * n as f64 * tau);
    let grad_sim = DMatrix::from_fn(n, n, |i, j| {
        let p_row = (logits[(i, j)] - row_lse[i]).exp();
        let p_col = (logits[(i, j)] - col_lse[j]).exp();
        let target = if i == j { 2.0 } else { 0.0 };
        (p_row + p_col - target) * scale
    });
    let grad_log_tau = -grad_sim.component_mul(&sim).sum();
    let grad_img = &txt * grad_sim.transpose();
    let grad_txt = &img * &grad_sim;

    Ok((
        loss,
        Gradients {
            w_image: backprop(&img, &img_norms, &grad_img, &batch.images),
            w_text: backprop(&txt, &txt_norms, &grad_txt, &batch.texts),
            log_tau: grad_log_tau,
        },
    ))
}

/// How CLIPScore values entering the Pearson loss are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PearsonInput {
    /// `w * max(cos, 0)`; no gradient flows where the cosine is negative.
    Clamped,
    /// `w * cos`.
    RawCosine,
}

/// `1 - r(x, y)` for the batch's CLIPScore vector `x` and ratings `y`.
pub fn pearson_loss(
    state: &AdapterState,
    batch: &PearsonBatch,
    cfg: &ClipScoreConfig,
) -> Result<(f64, Gradients)> {
    pearson_loss_with(state, batch, cfg, PearsonInput::Clamped)
}

pub fn pearson_loss_with(
    state: &AdapterState,
    batch: &PearsonBatch,
    cfg: &ClipScoreConfig,
    input: PearsonInput,
) -> Result<(f64, Gradients)> {
    let n = batch.ratings.len();
    let (img, img_norms) = project(&state.w_image, &batch.images)?;
    let (txt, txt_norms) = project(&state.w_text, &batch.texts)?;
    let cos: Vec<f64> = (0..n).map(|i| img.column(i).dot(&txt.column(i))).collect();
    let (x, dx_dcos): (Vec<f64>, Vec<f64>) = cos
        .iter()
        .map(|&c| match input {
            PearsonInput::Clamped if c > 0.0 => (cfg.w * c, cfg.w),
            PearsonInput::Clamped => (0.0, 0.0),
            PearsonInput::RawCosine => (cfg.w * c, cfg.w),
        })
        .unzip();

    let x = DVector::from_vec(x);
    let xc = x.add_scalar(-x.mean());
    let yc = batch.ratings.add_scalar(-batch.ratings.mean());
    let (nx, ny) = (xc.norm(), yc.norm());
    if ny < DEGENERATE_NORM {
        return Err(Error::Degenerate("ratings are constant within the batch".into()));
    }
    if nx < DEGENERATE_NORM {
        return Err(Error::Degenerate("CLIPScore values are constant within the batch".into()));
    }
    let r = (xc.dot(&yc) / (nx * ny)).clamp(-1.0, 1.0);
    let loss = 1.0 - r;

    // dr/dx_i = yc_i / (|xc| |yc|) - r xc_i / |xc|^2 (centering drops out).
    let grad_x = (&yc / (nx * ny) - &xc * (r / (nx * nx))) * -1.0;
    let mut grad_img = DMatrix::zeros(img.nrows(), n);
    let mut grad_txt = DMatrix::zeros(txt.nrows(), n);
    for i in 0..n {
        let g = grad_x[i] * dx_dcos[i];
        grad_img.set_column(i, &(txt.column(i) * g));
        grad_txt.set_column(i, &(img.column(i) * g));
    }
    Ok((
        loss,
        Gradients {
            w_image: backprop(&img, &img_norms, &grad_img, &batch.images),
            w_text: backprop(&txt, &txt_norms, &grad_txt, &batch.texts),
            log_tau: 0.0,
        },
    ))
}

/// Maps every vector through the matrix for its modality and renormalizes.
pub fn export_adapted_store(state: &AdapterState, store: &EmbeddingStore) -> Result<EmbeddingStore> {
    if store.dimension() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            found: store.dimension(),
        });
    }
    let mut out = EmbeddingStore::new(store.dimension())?;
    for record in store.iter() {
        let mapped = state.matrix(record.modality) * to_dvector(&record.vector);
        let norm = mapped.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Numeric(format!(
                "adapter maps `{}` to a zero or non-finite vector",
                record.id
            )));
        }
        let vector = mapped.iter().map(|v| (v / norm) as f32).collect();
        out.insert(EmbeddingRecord::new(record.id.clone(), vector, record.modality))?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    ContrastiveOnly,
    PearsonOnly,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    /// Weight of the Pearson gradient when accumulated with the contrastive one.
    pub pearson_weight: f64,
    pub pearson_input: PearsonInput,
    pub clip: ClipScoreConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 32,
            seed: 0,
            loss_mode: LossMode::Combined,
            pearson_weight: 1.0,
            pearson_input: PearsonInput::Clamped,
            clip: ClipScoreConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Precondition("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Precondition("epochs and batch size must be positive".into()));
        }
        if !(self.pearson_weight >= 0.0 && self.pearson_weight.is_finite()) {
            return Err(Error::Precondition("pearson weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// A matching image/caption pair for the contrastive objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub image: Vec<f32>,
    pub text: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatedExample {
    pub image: Vec<f32>,
    pub text: Vec<f32>,
    pub rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub step: u64,
    pub loss_contrastive: Option<f64>,
    pub loss_pearson: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub updates: usize,
    pub mean_contrastive: Option<f64>,
    pub mean_pearson: Option<f64>,
    pub pearson_batches: usize,
    pub skipped_pearson: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub updates: Vec<UpdateRecord>,
    pub epochs: Vec<EpochSummary>,
}

fn cmp_vectors(a: &[f32], b: &[f32]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Indices in a content-defined order, so the seeded shuffle does not depend
/// on how the caller ordered the dataset.
fn canonical_order<T>(items: &[T], cmp: impl Fn(&T, &T) -> Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| cmp(&items[a], &items[b]));
    idx
}

fn epoch_batches(order: &[usize], rng: &mut ChaCha8Rng, batch_size: usize, min: usize) -> Vec<Vec<usize>> {
    let mut shuffled = order.to_vec();
    shuffled.shuffle(rng);
    shuffled
        .chunks(batch_size)
        .filter(|c| c.len() >= min)
        .map(<[usize]>::to_vec)
        .collect()
}

fn contrastive_batch(data: &[PairExample], idx: &[usize]) -> Result<ContrastiveBatch> {
    let images: Vec<&[f32]> = idx.iter().map(|&i| data[i].image.as_slice()).collect();
    let texts: Vec<&[f32]> = idx.iter().map(|&i| data[i].text.as_slice()).collect();
    ContrastiveBatch::new(&images, &texts)
}

fn pearson_batch(data: &[RatedExample], idx: &[usize]) -> Result<PearsonBatch> {
    let images: Vec<&[f32]> = idx.iter().map(|&i| data[i].image.as_slice()).collect();
    let texts: Vec<&[f32]> = idx.iter().map(|&i| data[i].text.as_slice()).collect();
    let ratings: Vec<f64> = idx.iter().map(|&i| data[i].rating).collect();
    PearsonBatch::new(&images, &texts, &ratings)
}

fn apply_sgd(state: &mut AdapterState, grads: &Gradients, lr: f64) -> Result<()> {
    state.w_text -= &grads.w_text * lr;
    state.w_image -= &grads.w_image * lr;
    state.log_tau = (state.log_tau - lr * grads.log_tau).clamp(MIN_TAU.ln(), MAX_TAU.ln());
    state.step += 1;
    state.check_finite()
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Runs plain SGD for `cfg.epochs` epochs.
///
/// An epoch shuffles each dataset once (contrastive order from stream 0 of the
/// seeded generator, rated order from stream 1) and performs as many updates
/// as the larger of the two batch lists; in combined mode the shorter list
/// wraps around. Degenerate rated batches are skipped and counted; training
/// aborts if more than half of an epoch's rated batches were skipped.
pub fn train(
    mut state: AdapterState,
    contrastive: &[PairExample],
    rated: &[RatedExample],
    cfg: &TrainConfig,
) -> Result<(AdapterState, TrainReport)> {
    cfg.validate()?;
    let use_c = matches!(cfg.loss_mode, LossMode::ContrastiveOnly | LossMode::Combined);
    let use_p = matches!(cfg.loss_mode, LossMode::PearsonOnly | LossMode::Combined);
    let min_c = 2;
    let min_p = 3;
    if use_c && contrastive.len() < min_c {
        return Err(Error::Precondition(format!(
            "{:?} training needs at least {min_c} contrastive pairs",
            cfg.loss_mode
        )));
    }
    if use_p && rated.len() < min_p {
        return Err(Error::Precondition(format!(
            "{:?} training needs at least {min_p} rated pairs",
            cfg.loss_mode
        )));
    }

    let c_order = canonical_order(contrastive, |a, b| {
        cmp_vectors(&a.image, &b.image).then_with(|| cmp_vectors(&a.text, &b.text))
    });
    let p_order = canonical_order(rated, |a, b| {
        cmp_vectors(&a.image, &b.image)
            .then_with(|| cmp_vectors(&a.text, &b.text))
            .then_with(|| a.rating.total_cmp(&b.rating))
    });
    let mut c_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    c_rng.set_stream(0);
    let mut p_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    p_rng.set_stream(1);

    let dim = state.dim();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let c_batches = if use_c {
            epoch_batches(&c_order, &mut c_rng, cfg.batch_size, min_c)
        } else {
            Vec::new()
        };
        let p_batches = if use_p {
            epoch_batches(&p_order, &mut p_rng, cfg.batch_size, min_p)
        } else {
            Vec::new()
        };
        let updates = c_batches.len().max(p_batches.len());

        let mut c_losses = Vec::new();
        let mut p_losses = Vec::new();
        let mut skipped = 0;
        for k in 0..updates {
            let mut grads = Gradients::zeros(dim);
            let mut record = UpdateRecord {
                step: state.step + 1,
                loss_contrastive: None,
                loss_pearson: None,
            };
            if use_c {
                let batch = contrastive_batch(contrastive, &c_batches[k % c_batches.len()])?;
                let (loss, g) = contrastive_loss(&state, &batch)?;
                grads.add_scaled(&g, 1.0);
                record.loss_contrastive = Some(loss);
                c_losses.push(loss);
            }
            if use_p {
                let batch = pearson_batch(rated, &p_batches[k % p_batches.len()])?;
                match pearson_loss_with(&state, &batch, &cfg.clip, cfg.pearson_input) {
                    Ok((loss, g)) => {
                        grads.add_scaled(&g, cfg.pearson_weight);
                        record.loss_pearson = Some(loss);
                        p_losses.push(loss);
                    }
                    Err(Error::Degenerate(why)) => {
                        log::debug!("skipping rated batch at update {k}: {why}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if record.loss_contrastive.is_none() && record.loss_pearson.is_none() {
                continue;
            }
            apply_sgd(&mut state, &grads, cfg.learning_rate)?;
            report.updates.push(record);
        }

        let pearson_batches = if use_p { updates } else { 0 };
        report.epochs.push(EpochSummary {
            epoch,
            updates,
            mean_contrastive: mean(&c_losses),
            mean_pearson: mean(&p_losses),
            pearson_batches,
            skipped_pearson: skipped,
        });
        if use_p && 2 * skipped > pearson_batches {
            return Err(Error::TrainingAborted(format!(
                "epoch {epoch}: {skipped} of {pearson_batches} rated batches were degenerate"
            )));
        }
    }
    Ok((state, report))
}

pub fn write_loss_curve_csv<W: Write>(report: &TrainReport, w: &mut W) -> io::Result<()> {
    writeln!(w, "step,loss_contrastive,loss_pearson")?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.9}")).unwrap_or_default();
    for u in &report.updates {
        writeln!(w, "{},{},{}", u.step, fmt(u.loss_contrastive), fmt(u.loss_pearson))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    dim: usize,
    tau: f64,
    step: u64,
    #[serde(default)]
    log_tau: Option<f64>,
}

/// One JSON header line, then `W_text` and `W_image` as row-major
/// little-endian `f64`.
pub fn write_checkpoint<W: Write>(state: &AdapterState, w: &mut W) -> io::Result<()> {
    let header = CheckpointHeader {
        dim: state.dim(),
        tau: state.tau(),
        step: state.step,
        log_tau: Some(state.log_tau),
    };
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n")?;
    for m in [&state.w_text, &state.w_image] {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                w.write_all(&m[(r, c)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<AdapterState> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io("<checkpoint>", e))?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let d = header.dim;
    if d == 0 {
        return Err(Error::Corrupt("checkpoint dimension is zero".into()));
    }
    let mut read_matrix = || -> Result<DMatrix<f64>> {
        let mut buf = vec![0u8; 8 * d * d];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Corrupt("checkpoint matrices are truncated".into()))?;
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(DMatrix::from_row_slice(d, d, &values))
    };
    let w_text = read_matrix()?;
    let w_image = read_matrix()?;
    let state = AdapterState {
        w_text,
        w_image,
        log_tau: header.log_tau.unwrap_or_else(|| header.tau.ln()),
        step: header.step,
    };
    state.check_finite()?;
    Ok(state)
}

pub fn save_checkpoint(state: &AdapterState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(state, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AdapterState> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}
