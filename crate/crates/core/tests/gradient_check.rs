//! Analytic adapter gradients against central finite differences.

use capeval::adapter_finetune::{
    contrastive_loss, pearson_loss_with, AdapterState, ContrastiveBatch, Gradients, PearsonBatch,
    PearsonInput,
};
use capeval::metric_core::ClipScoreConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const MAX_REL_ERR: f64 = 1e-4;

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_state(rng: &mut ChaCha8Rng, d: usize) -> AdapterState {
    let perturb = |rng: &mut ChaCha8Rng| {
        DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| rng.gen_range(-0.3..0.3))
    };
    AdapterState {
        w_text: perturb(rng),
        w_image: perturb(rng),
        log_tau: rng.gen_range(-2.5..0.5),
        step: 0,
    }
}

/// Relative error between two gradient blocks, by Euclidean norm.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_gradients(state: &AdapterState, loss: &dyn Fn(&AdapterState) -> f64) -> Gradients {
    let d = state.dim();
    let mut g = Gradients::zeros(d);
    for r in 0..d {
        for c in 0..d {
            let mut plus = state.clone();
            let mut minus = state.clone();
            plus.w_text[(r, c)] += H;
            minus.w_text[(r, c)] -= H;
            g.w_text[(r, c)] = (loss(&plus) - loss(&minus)) / (2.0 * H);

            let mut plus = state.clone();
            let mut minus = state.clone();
            plus.w_image[(r, c)] += H;
            minus.w_image[(r, c)] -= H;
            g.w_image[(r, c)] = (loss(&plus) - loss(&minus)) / (2.0 * H);
        }
    }
    let mut plus = state.clone();
    let mut minus = state.clone();
    plus.log_tau += H;
    minus.log_tau -= H;
    g.log_tau = (loss(&plus) - loss(&minus)) / (2.0 * H);
    g
}

fn assert_close(analytic: &Gradients, numeric: &Gradients, what: &str) {
    let t = rel_err(analytic.w_text.as_slice(), numeric.w_text.as_slice());
    let i = rel_err(analytic.w_image.as_slice(), numeric.w_image.as_slice());
    let tau = rel_err(&[analytic.log_tau], &[numeric.log_tau]);
    assert!(t <= MAX_REL_ERR, "{what}: W_text relative error {t}");
    assert!(i <= MAX_REL_ERR, "{what}: W_image relative error {i}");
    assert!(tau <= MAX_REL_ERR, "{what}: log_tau relative error {tau}");
}

#[test]
fn contrastive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let d = 5;
    for trial in 0..10 {
        let state = random_state(&mut rng, d);
        let n = 3 + trial % 4;
        let images: Vec<Vec<f32>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let texts: Vec<Vec<f32>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let ir: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[f32]> = texts.iter().map(Vec::as_slice).collect();
        let batch = ContrastiveBatch::new(&ir, &tr).unwrap();
        let (_, analytic) = contrastive_loss(&state, &batch).unwrap();
        let numeric = numeric_gradients(&state, &|s| contrastive_loss(s, &batch).unwrap().0);
        assert_close(&analytic, &numeric, &format!("contrastive trial {trial}"));
    }
}

#[test]
fn pearson_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 5;
    let cfg = ClipScoreConfig::default();
    for (trial, input) in (0..10).zip([PearsonInput::Clamped, PearsonInput::RawCosine].iter().cycle()) {
        let state = random_state(&mut rng, d);
        let n = 4 + trial % 3;
        // Texts are noisy copies of their images so cosines stay well away
        // from the clamp at zero.
        let images: Vec<Vec<f32>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let texts: Vec<Vec<f32>> = images
            .iter()
            .map(|v| {
                let noise = unit(&mut rng, d);
                let w: f32 = rng.gen_range(0.2..0.6);
                v.iter().zip(&noise).map(|(a, b)| a + w * b).collect()
            })
            .collect();
        let ratings: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        let ir: Vec<&[f32]> = images.iter().map(Vec::as_slice).collect();
        let tr: Vec<&[f32]> = texts.iter().map(Vec::as_slice).collect();
        let batch = PearsonBatch::new(&ir, &tr, &ratings).unwrap();
        let (_, analytic) = pearson_loss_with(&state, &batch, &cfg, *input).unwrap();
        let numeric =
            numeric_gradients(&state, &|s| pearson_loss_with(s, &batch, &cfg, *input).unwrap().0);
        assert_close(&analytic, &numeric, &format!("pearson trial {trial} ({input:?})"));
    }
}
