use std::collections::BTreeMap;

use capeval::embedding_store::{load_jsonl, FoilRecord, NliRecord, PreferenceRecord, TwoImageRecord};
use capeval::task_harness::{
    marvl_task1, marvl_task2, pascal_pairwise, score_foils, score_nli, score_two_image,
    valse_from_scores, xvnli_task1, xvnli_task2, xvnli_task3, AccuracyResult, PairwiseMetric,
    Scorer,
};
use capeval::Result;
use serde_json::json;

use super::{clip_config, load_stores};
use crate::output::{derive_seed, pct, Run};
use crate::{CliError, GlobalOpts, MarvlTask, TaskCommand, TaskData, XvnliTask};

/// Splits scored items by language, keeping input order within each.
fn by_language<T: Clone>(items: &[T], language: impl Fn(&T) -> &str) -> BTreeMap<String, Vec<T>> {
    let mut out: BTreeMap<String, Vec<T>> = BTreeMap::new();
    for item in items {
        out.entry(language(item).to_string()).or_default().push(item.clone());
    }
    out
}

type TaskFn<T> = fn(&[T]) -> Result<AccuracyResult>;

fn per_language<T: Clone>(
    items: &[T],
    language: impl Fn(&T) -> &str,
    tasks: &[TaskFn<T>],
) -> Result<Vec<AccuracyResult>> {
    let groups = by_language(items, language);
    let mut out = Vec::new();
    for task in tasks {
        for group in groups.values() {
            out.push(task(group)?);
        }
    }
    Ok(out)
}

fn finish(
    g: &GlobalOpts,
    name: &str,
    data: &TaskData,
    config: serde_json::Value,
    results: &[AccuracyResult],
) -> Result<(), CliError> {
    let mut run = Run::new(&g.out_dir, &format!("task-{name}"), g.seed);
    run.input("images", &data.stores.images)
        .input("texts", &data.stores.texts)
        .input("data", &data.data)
        .config(config);
    run.write_json(&format!("{name}.json"), &results)?;
    run.finish()?;

    println!(
        "{:<14} {:<10} {:>8} {:>9} {:>8}",
        "task", "language", "accuracy", "correct", "skipped"
    );
    for r in results {
        println!(
            "{:<14} {:<10} {:>8} {:>9} {:>8}",
            r.task,
            r.language,
            pct(r.accuracy),
            format!("{}/{}", r.correct, r.total),
            r.skipped
        );
        if let Some(m) = r.macro_accuracy {
            println!("{:<14} {:<10} {:>8}", "", "macro", pct(m));
        }
    }
    Ok(())
}

pub fn run(g: &GlobalOpts, cmd: &TaskCommand) -> Result<(), CliError> {
    let cfg = clip_config(g)?;
    match cmd {
        TaskCommand::Valse(data) => {
            let (images, texts) = load_stores(&data.stores)?;
            let scorer = Scorer::new(&images, &texts, cfg);
            let foils: Vec<FoilRecord> = load_jsonl(&data.data)?;
            let scored = score_foils(&foils, &scorer)?;
            let results = per_language(&scored, |s| &s.language, &[valse_from_scores])?;
            finish(g, "valse", data, json!({ "w": cfg.w }), &results)
        }
        TaskCommand::Xvnli { data, task } => {
            let (images, texts) = load_stores(&data.stores)?;
            let scorer = Scorer::new(&images, &texts, cfg);
            let records: Vec<NliRecord> = load_jsonl(&data.data)?;
            let scored = score_nli(&records, &scorer)?;
            let tasks: &[TaskFn<_>] = match task {
                XvnliTask::One => &[xvnli_task1],
                XvnliTask::Two => &[xvnli_task2],
                XvnliTask::Three => &[xvnli_task3],
                XvnliTask::All => &[xvnli_task1, xvnli_task2, xvnli_task3],
            };
            let results = per_language(&scored, |s| &s.language, tasks)?;
            let config = json!({ "w": cfg.w, "task": format!("{task:?}").to_lowercase() });
            finish(g, "xvnli", data, config, &results)
        }
        TaskCommand::Marvl { data, task } => {
            let (images, texts) = load_stores(&data.stores)?;
            let scorer = Scorer::new(&images, &texts, cfg);
            let records: Vec<TwoImageRecord> = load_jsonl(&data.data)?;
            let scored = score_two_image(&records, &scorer)?;
            let tasks: &[TaskFn<_>] = match task {
                MarvlTask::One => &[marvl_task1],
                MarvlTask::Two => &[marvl_task2],
                MarvlTask::All => &[marvl_task1, marvl_task2],
            };
            let results = per_language(&scored, |s| &s.language, tasks)?;
            let config = json!({ "w": cfg.w, "task": format!("{task:?}").to_lowercase() });
            finish(g, "marvl", data, config, &results)
        }
        TaskCommand::Pascal { data, metric } => {
            let (images, texts) = load_stores(&data.stores)?;
            let scorer = Scorer::new(&images, &texts, cfg);
            let prefs: Vec<PreferenceRecord> = load_jsonl(&data.data)?;
            let metric: PairwiseMetric = (*metric).into();
            let seed = derive_seed(g.seed, "pascal");
            let result = pascal_pairwise(&prefs, &scorer, metric, seed)?;
            let config = json!({ "w": cfg.w, "metric": metric });
            finish(g, "pascal", data, config, &[result])
        }
    }
}
