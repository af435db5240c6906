use std::collections::{BTreeMap, HashMap};

use capeval::embedding_store::{load_jsonl, RatedPairRecord};
use capeval::metric_core::{read_scores_csv, ScoreRecord};
use capeval::rank_correlation::{correlate, kendall_tau_b, kendall_tau_c, spearman, CorrelationReport};
use capeval::resampling::{bootstrap_std, BootstrapConfig, BootstrapSummary, StrataKey, Stratified};
use capeval::Error;
use serde::Serialize;
use serde_json::json;

use super::read_text;
use crate::output::{derive_seed, pct, Run};
use crate::{CliError, CorrelateArgs, GlobalOpts, MetricArg};

struct Row {
    score: f64,
    rating: f64,
    language: String,
}

impl Stratified for Row {
    fn stratum(&self, key: StrataKey) -> Option<String> {
        match key {
            StrataKey::RatingValue => Some(format!("{}", self.rating)),
            StrataKey::Language => Some(self.language.clone()),
            StrataKey::None => Some(String::new()),
        }
    }
}

#[derive(Debug, Serialize)]
struct BootstrapBlock {
    rho: BootstrapSummary,
    tau_b: BootstrapSummary,
    tau_c: BootstrapSummary,
}

#[derive(Debug, Serialize)]
struct GroupReport {
    language: String,
    report: CorrelationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<BootstrapBlock>,
}

#[derive(Debug, Serialize)]
struct MacroAverage {
    rho: f64,
    tau_b: f64,
    tau_c: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    metric: &'static str,
    groups: Vec<GroupReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_average: Option<MacroAverage>,
}

/// Pairs each rated instance with its score, keyed by `(instance_id, language)`.
fn join(scores: &[ScoreRecord], pairs: &[RatedPairRecord], metric: MetricArg) -> Result<Vec<Row>, Error> {
    let mut index: HashMap<(&str, &str), &ScoreRecord> = HashMap::with_capacity(scores.len());
    for s in scores {
        if index.insert((&s.instance_id, &s.language), s).is_some() {
            return Err(Error::DuplicateId(format!("{} ({})", s.instance_id, s.language)));
        }
    }
    pairs
        .iter()
        .map(|p| {
            let s = index
                .get(&(p.instance_id.as_str(), p.language.as_str()))
                .ok_or_else(|| {
                    Error::Data(format!(
                        "no score for instance `{}` ({})",
                        p.instance_id, p.language
                    ))
                })?;
            let score = match metric {
                MetricArg::Clipscore => s.clipscore,
                MetricArg::Refclipscore => s.refclipscore.ok_or_else(|| {
                    Error::Data(format!(
                        "instance `{}` ({}) has no refclipscore",
                        p.instance_id, p.language
                    ))
                })?,
            };
            Ok(Row {
                score,
                rating: p.rating,
                language: p.language.clone(),
            })
        })
        .collect()
}

fn columns(rows: &[&Row]) -> (Vec<f64>, Vec<f64>) {
    rows.iter().map(|r| (r.score, r.rating)).unzip()
}

fn bootstrap(rows: &[Row], m: u64, cfg: &BootstrapConfig) -> Result<BootstrapBlock, Error> {
    let rho = bootstrap_std(rows, |sub| {
        let (x, y) = columns(sub);
        spearman(&x, &y)
    }, cfg)?;
    let tau_b = bootstrap_std(rows, |sub| {
        let (x, y) = columns(sub);
        kendall_tau_b(&x, &y).map(|(t, _)| t)
    }, cfg)?;
    let tau_c = bootstrap_std(rows, |sub| {
        let (x, y) = columns(sub);
        kendall_tau_c(&x, &y, Some(m))
    }, cfg)?;
    Ok(BootstrapBlock { rho, tau_b, tau_c })
}

pub fn run(g: &GlobalOpts, args: &CorrelateArgs) -> Result<(), CliError> {
    let scores = read_scores_csv(&read_text(&args.scores)?)?;
    let pairs: Vec<RatedPairRecord> = load_jsonl(&args.pairs)?;
    let rows = join(&scores, &pairs, args.metric)?;

    let mut groups: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for row in rows {
        let key = if args.per_language {
            row.language.clone()
        } else {
            "all".to_string()
        };
        groups.entry(key).or_default().push(row);
    }

    let boot_cfg = BootstrapConfig {
        iterations: args.boot_iters,
        fraction: args.boot_frac,
        seed: derive_seed(g.seed, "bootstrap"),
        strata: args.strata.into(),
    };
    if args.bootstrap {
        boot_cfg.validate()?;
    }

    let mut reports = Vec::new();
    for (language, rows) in &groups {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.score, r.rating)).unzip();
        let report = correlate(&x, &y, args.m).inspect_err(|_| {
            eprintln!("while correlating group `{language}` ({} instances)", rows.len());
        })?;
        let boot = if args.bootstrap {
            Some(bootstrap(rows, report.m, &boot_cfg)?)
        } else {
            None
        };
        reports.push(GroupReport {
            language: language.clone(),
            report,
            bootstrap: boot,
        });
    }

    let macro_average = (args.per_language && !reports.is_empty()).then(|| {
        let k = reports.len() as f64;
        MacroAverage {
            rho: reports.iter().map(|r| r.report.rho).sum::<f64>() / k,
            tau_b: reports.iter().map(|r| r.report.tau_b).sum::<f64>() / k,
            tau_c: reports.iter().map(|r| r.report.tau_c).sum::<f64>() / k,
        }
    });

    let metric = match args.metric {
        MetricArg::Clipscore => "clipscore",
        MetricArg::Refclipscore => "refclipscore",
    };
    let report = Report {
        metric,
        groups: reports,
        macro_average,
    };

    let mut run = Run::new(&g.out_dir, "correlate", g.seed);
    run.input("scores", &args.scores)
        .input("pairs", &args.pairs)
        .config(json!({
            "metric": metric,
            "m": args.m,
            "per_language": args.per_language,
            "bootstrap": args.bootstrap.then_some(&boot_cfg),
        }));
    run.write_json("correlation.json", &report)?;
    run.finish()?;

    print_table(&report, args.bootstrap);
    Ok(())
}

fn print_table(report: &Report, with_std: bool) {
    println!("metric: {}", report.metric);
    if with_std {
        println!(
            "{:<10} {:>6} {:>7} {:>6} {:>7} {:>6} {:>7} {:>6}",
            "language", "n", "rho", "std", "tau_b", "std", "tau_c", "std"
        );
    } else {
        println!("{:<10} {:>6} {:>7} {:>7} {:>7}", "language", "n", "rho", "tau_b", "tau_c");
    }
    for g in &report.groups {
        let r = &g.report;
        match &g.bootstrap {
            Some(b) => println!(
                "{:<10} {:>6} {:>7} {:>6} {:>7} {:>6} {:>7} {:>6}",
                g.language,
                r.n,
                pct(r.rho),
                pct(b.rho.std),
                pct(r.tau_b),
                pct(b.tau_b.std),
                pct(r.tau_c),
                pct(b.tau_c.std)
            ),
            None => println!(
                "{:<10} {:>6} {:>7} {:>7} {:>7}",
                g.language,
                r.n,
                pct(r.rho),
                pct(r.tau_b),
                pct(r.tau_c)
            ),
        }
    }
    if let Some(m) = &report.macro_average {
        if with_std {
            println!(
                "{:<10} {:>6} {:>7} {:>6} {:>7} {:>6} {:>7} {:>6}",
                "macro", "", pct(m.rho), "", pct(m.tau_b), "", pct(m.tau_c), ""
            );
        } else {
            println!(
                "{:<10} {:>6} {:>7} {:>7} {:>7}",
                "macro", "", pct(m.rho), pct(m.tau_b), pct(m.tau_c)
            );
        }
    }
}
