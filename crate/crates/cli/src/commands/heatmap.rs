use std::collections::{BTreeMap, BTreeSet};

use capeval::embedding_store::{load_jsonl, JsonlRecord};
use capeval::metric_core::read_scores_csv;
use capeval::task_harness::{language_heatmap, write_heatmap_csv, PercentileMode};
use capeval::Error;
use log::warn;
use serde_json::json;

use super::read_text;
use crate::output::{pct, Run};
use crate::{CliError, GlobalOpts, HeatmapArgs};

/// The fields of a `mt-select` output row the heatmap needs.
#[derive(serde::Deserialize)]
struct Selected {
    source_id: String,
    language: String,
    qe_score: f64,
}

impl JsonlRecord for Selected {
    fn validate(&self) -> Result<(), String> {
        if self.qe_score.is_finite() {
            Ok(())
        } else {
            Err(format!("qe_score of `{}` is not finite", self.source_id))
        }
    }
}

pub fn run(g: &GlobalOpts, args: &HeatmapArgs) -> Result<(), CliError> {
    let scores = read_scores_csv(&read_text(&args.scores)?)?;

    let mut by_lang: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for s in &scores {
        let prev = by_lang
            .entry(s.language.clone())
            .or_default()
            .insert(s.instance_id.clone(), s.clipscore);
        if prev.is_some() {
            return Err(Error::DuplicateId(format!("{} ({})", s.instance_id, s.language)).into());
        }
    }

    // QE scores per language, keyed by source_id (the instance_id).
    let mut qe_table: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    if let Some(path) = &args.qe {
        let rows: Vec<Selected> = load_jsonl(path)?;
        for r in rows {
            if by_lang.contains_key(&r.language) {
                qe_table.entry(r.language).or_default().insert(r.source_id, r.qe_score);
            }
        }
    }

    // Instances are aligned across languages by instance_id. Only ids scored
    // in every language, and holding a QE score in every language that has
    // any, take part.
    let mut shared: Option<BTreeSet<&String>> = None;
    for ids in by_lang.values().chain(qe_table.values()) {
        let these: BTreeSet<&String> = ids.keys().collect();
        shared = Some(match shared {
            None => these,
            Some(s) => s.intersection(&these).copied().collect(),
        });
    }
    let shared: Vec<&String> = shared.unwrap_or_default().into_iter().collect();
    let dropped = scores.len() - shared.len() * by_lang.len();
    if dropped > 0 {
        warn!("{dropped} score rows lack a counterpart in some language or a QE score and are ignored");
    }
    if shared.is_empty() {
        return Err(Error::Data("no instance is scored in every language".into()).into());
    }

    let vectors: Vec<(String, Vec<f64>)> = by_lang
        .iter()
        .map(|(lang, ids)| (lang.clone(), shared.iter().map(|id| ids[*id]).collect()))
        .collect();
    let qe: Option<BTreeMap<String, Vec<f64>>> = args.qe.as_ref().map(|_| {
        qe_table
            .iter()
            .map(|(lang, ids)| (lang.clone(), shared.iter().map(|id| ids[*id]).collect()))
            .collect()
    });

    let mode: PercentileMode = args.mode.into();
    let heatmap = language_heatmap(&vectors, qe.as_ref(), mode)?;
    let mut csv = Vec::new();
    write_heatmap_csv(&heatmap, &mut csv).expect("writing to memory");

    let mut run = Run::new(&g.out_dir, "heatmap", g.seed);
    run.input("scores", &args.scores);
    if let Some(path) = &args.qe {
        run.input("qe", path);
    }
    run.config(json!({ "mode": mode, "instances": shared.len() }));
    run.write("heatmap.csv", &csv)?;
    run.finish()?;

    print!("{:<10}", "");
    for l in &heatmap.languages {
        print!(" {l:>7}");
    }
    println!();
    for (l, row) in heatmap.languages.iter().zip(&heatmap.cells) {
        print!("{l:<10}");
        for cell in row {
            print!(" {:>7}", cell.map(pct).unwrap_or_else(|| "-".into()));
        }
        println!();
    }
    Ok(())
}
