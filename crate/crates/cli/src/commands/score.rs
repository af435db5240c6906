use capeval::embedding_store::{load_jsonl, RatedPairRecord};
use capeval::metric_core::{corpus_mean, score_dataset, write_scores_csv};
use serde_json::json;

use super::{clip_config, load_stores};
use crate::output::Run;
use crate::{CliError, GlobalOpts, ScoreArgs};

pub fn run(g: &GlobalOpts, args: &ScoreArgs) -> Result<(), CliError> {
    let cfg = clip_config(g)?;
    let (images, texts) = load_stores(&args.stores)?;
    let pairs: Vec<RatedPairRecord> = load_jsonl(&args.pairs)?;
    let records = score_dataset(&pairs, &images, &texts, &cfg)?;

    let mut csv = Vec::new();
    write_scores_csv(&records, &mut csv).expect("writing to memory");
    let mut run = Run::new(&g.out_dir, "score", g.seed);
    run.input("images", &args.stores.images)
        .input("texts", &args.stores.texts)
        .input("pairs", &args.pairs)
        .config(json!({ "w": cfg.w }));
    run.write("scores.csv", &csv)?;
    run.finish()?;

    let mean = corpus_mean(records.iter().map(|r| r.clipscore))?;
    println!("pairs: {}", records.len());
    println!("mean clipscore: {mean:.6}");
    let refs: Vec<f64> = records.iter().filter_map(|r| r.refclipscore).collect();
    if !refs.is_empty() {
        println!(
            "mean refclipscore: {:.6} ({} pairs with references)",
            corpus_mean(refs.iter().copied())?,
            refs.len()
        );
    }
    Ok(())
}
