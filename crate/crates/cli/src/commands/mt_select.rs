use capeval::embedding_store::{load_jsonl, write_jsonl};
use capeval::mt_select::{select_best, MtCandidate};
use serde_json::json;

use crate::output::Run;
use crate::{CliError, GlobalOpts, MtSelectArgs};

pub fn run(g: &GlobalOpts, args: &MtSelectArgs) -> Result<(), CliError> {
    let candidates: Vec<MtCandidate> = load_jsonl(&args.candidates)?;
    let selection = select_best(&candidates)?;
    let rows = selection.selected_rows();

    let mut selected = Vec::new();
    write_jsonl(&rows, &mut selected).expect("writing to memory");
    let mut dropped = Vec::new();
    write_jsonl(&selection.dropped, &mut dropped).expect("writing to memory");

    let mut run = Run::new(&g.out_dir, "mt-select", g.seed);
    run.input("candidates", &args.candidates)
        .config(json!({ "tie_break": "smallest candidate_id" }));
    run.write("selected.jsonl", &selected)?;
    run.write("dropped.jsonl", &dropped)?;
    run.finish()?;

    println!("candidates: {}", candidates.len());
    println!("selected:   {}", rows.len());
    println!("dropped:    {}", selection.dropped.len());
    for d in &selection.dropped {
        println!("  {} ({}): {}", d.source_id, d.language, d.reason);
    }
    Ok(())
}
