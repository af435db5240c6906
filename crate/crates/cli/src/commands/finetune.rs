use std::collections::BTreeSet;

use capeval::adapter_finetune::{
    export_adapted_store, train, write_checkpoint, write_loss_curve_csv, AdapterState, LossMode,
    PairExample, PearsonInput, RatedExample, TrainConfig,
};
use capeval::embedding_store::{
    load_jsonl, write_store, EmbeddingStore, JsonlRecord, RatedPairRecord,
    Split,
};
use capeval::Error;
use serde::Deserialize;

use super::{clip_config, load_stores};
use crate::output::{derive_seed, Run};
use crate::{CliError, FinetuneArgs, GlobalOpts, LossArg};

/// A caption known to describe an image.
#[derive(Debug, Deserialize)]
struct CaptionLink {
    image_id: String,
    caption_id: String,
}

impl JsonlRecord for CaptionLink {}

fn lookup<'a>(store: &'a EmbeddingStore, context: &str, id: &str) -> Result<&'a [f32], Error> {
    store.vector(id).ok_or_else(|| Error::UnresolvedId {
        instance: context.to_string(),
        id: id.to_string(),
    })
}

pub fn run(g: &GlobalOpts, args: &FinetuneArgs) -> Result<(), CliError> {
    let clip = clip_config(g)?;
    let (images, texts) = load_stores(&args.stores)?;
    let mut pairs: Vec<RatedPairRecord> = load_jsonl(&args.pairs)?;
    if let Some(split) = args.split {
        let split: Split = split.into();
        pairs.retain(|p| p.split == split);
    }

    let mut links: BTreeSet<(String, String)> = BTreeSet::new();
    for p in &pairs {
        for r in &p.reference_ids {
            links.insert((p.image_id.clone(), r.clone()));
        }
    }
    if let Some(path) = &args.captions {
        let extra: Vec<CaptionLink> = load_jsonl(path)?;
        links.extend(extra.into_iter().map(|c| (c.image_id, c.caption_id)));
    }
    let contrastive = links
        .iter()
        .map(|(image, caption)| {
            let ctx = format!("{image}/{caption}");
            Ok(PairExample {
                image: lookup(&images, &ctx, image)?.to_vec(),
                text: lookup(&texts, &ctx, caption)?.to_vec(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let rated = pairs
        .iter()
        .map(|p| {
            Ok(RatedExample {
                image: lookup(&images, &p.instance_id, &p.image_id)?.to_vec(),
                text: lookup(&texts, &p.instance_id, &p.candidate_id)?.to_vec(),
                rating: p.rating,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: derive_seed(g.seed, "finetune"),
        loss_mode: match args.loss {
            LossArg::Contrastive => LossMode::ContrastiveOnly,
            LossArg::Pearson => LossMode::PearsonOnly,
            LossArg::Combined => LossMode::Combined,
        },
        pearson_weight: args.pearson_weight,
        pearson_input: if args.pearson_raw_cos {
            PearsonInput::RawCosine
        } else {
            PearsonInput::Clamped
        },
        clip,
    };
    let initial = AdapterState::identity(images.dimension());
    let (state, report) = train(initial, &contrastive, &rated, &cfg)?;

    let mut ckpt = Vec::new();
    write_checkpoint(&state, &mut ckpt).expect("writing to memory");
    let mut curve = Vec::new();
    write_loss_curve_csv(&report, &mut curve).expect("writing to memory");

    let mut run = Run::new(&g.out_dir, "finetune", g.seed);
    run.input("images", &args.stores.images)
        .input("texts", &args.stores.texts)
        .input("pairs", &args.pairs);
    if let Some(path) = &args.captions {
        run.input("captions", path);
    }
    run.config(cfg);
    run.write("adapter.ckpt", &ckpt)?;
    run.write("loss_curve.csv", &curve)?;
    if args.export {
        for (name, store) in [("adapted_images.capevec", &images), ("adapted_texts.capevec", &texts)] {
            let adapted = export_adapted_store(&state, store)?;
            let mut bytes = Vec::with_capacity(adapted.encoded_len());
            write_store(&adapted, &mut bytes).expect("writing to memory");
            run.write(name, &bytes)?;
        }
    }
    run.finish()?;

    println!(
        "contrastive pairs: {}, rated pairs: {}",
        contrastive.len(),
        rated.len()
    );
    let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
    println!(
        "{:>5} {:>7} {:>12} {:>12} {:>8}",
        "epoch", "updates", "contrastive", "pearson", "skipped"
    );
    for e in &report.epochs {
        println!(
            "{:>5} {:>7} {:>12} {:>12} {:>8}",
            e.epoch + 1,
            e.updates,
            fmt(e.mean_contrastive),
            fmt(e.mean_pearson),
            e.skipped_pearson
        );
    }
    println!("final tau: {:.6}", state.tau());
    Ok(())
}
