//! `neuron` command line. Exit status: 0 success, 1 usage, 2 data error,
//! 3 external-service error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::{
    build_narrative_resources, explain_once, load_graph, load_records, narrate_once, prepare_focus,
    run_explanation_comparison, run_performance_experiment, train_embeddings, write_explanation_outputs,
    write_performance_outputs, ExperimentConfig, HarnessError, OutputDir, Pipeline,
};
use crate::cohort::write_admissions_jsonl;
use crate::ontology::discover_levels;
use crate::util::derive_seed;

pub const ENV_SEED: &str = "NEURON_SEED";
pub const ENV_LLM_URL: &str = "NEURON_LLM_URL";
pub const ENV_JUDGE_URL: &str = "NEURON_JUDGE_URL";

#[derive(Debug, Parser)]
#[command(
    name = "neuron",
    version,
    about = "Ontology-informed mortality risk models and explanation-quality evaluation"
)]
pub struct Cli {
    /// Experiment config JSON; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override (else NEURON_SEED, else the first seed in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution and temperature 0 for generation.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Chat-completions URL or STUB (else NEURON_LLM_URL, else the config).
    #[arg(long, global = true)]
    pub llm: Option<String>,
    /// Judge URL or STUB (else NEURON_JUDGE_URL, else the config).
    #[arg(long, global = true)]
    pub judge: Option<String>,
    /// Output directory (else the config's out_dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate the ontology and cohort and write a cohort summary.
    Ingest,
    /// Train concept embeddings and training-split IDF weights.
    Embed,
    /// Train every predictor × feature configuration and write the performance table.
    Train,
    /// Attribute the focus stay's prediction once.
    Explain,
    /// Generate one narrative for the focus stay.
    Narrate,
    /// Run the repeated explanation comparison and write the metric table.
    Evaluate,
    /// Summarise existing outputs as markdown.
    Report,
}

impl Command {
    fn stage(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Embed => "embed",
            Command::Train => "train",
            Command::Explain => "explain",
            Command::Narrate => "narrate",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
        }
    }
}

/// Parse `argv` (program name first), run, and return the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("neuron {}: {e}", cli.command.stage());
            e.exit_code()
        }
    }
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.trim().is_empty())
}

/// Config with command-line and environment overrides applied.
pub fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, u64), HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = match (cli.seed, env(ENV_SEED)) {
        (Some(s), _) => Some(s),
        (None, Some(v)) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| HarnessError::Usage(format!("{ENV_SEED}={v} is not an unsigned integer")))?,
        ),
        (None, None) => None,
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let Some(u) = cli.llm.clone().or_else(|| env(ENV_LLM_URL)) {
        cfg.llm.endpoint = u;
    }
    if let Some(u) = cli.judge.clone().or_else(|| env(ENV_JUDGE_URL)) {
        cfg.judge.endpoint = u;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.deterministic {
        cfg.llm.temperature = 0.0;
        cfg.judge.temperature = 0.0;
    }
    cfg.validate()?;
    let seed = cfg.seeds[0];
    Ok((cfg, seed))
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let (cfg, seed) = resolve_config(cli)?;
    if cli.deterministic {
        // fails only if the global pool already exists, e.g. under a test harness
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    if cli.command == Command::Report {
        return report(&cfg.out_dir);
    }
    let out = OutputDir::create(&cfg.out_dir)?;
    match cli.command {
        Command::Ingest => ingest(&cfg, seed, &out)?,
        Command::Embed => embed(&cfg, seed, &out)?,
        Command::Train => {
            let (table, models) = run_performance_experiment(&cfg)?;
            write_performance_outputs(&out, &table, &models)?;
            let mut buf = Vec::new();
            table.write_csv(&mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
        Command::Explain => {
            let case = prepare_focus(&cfg, seed)?;
            let (attr, grouped, drivers) = explain_once(&case, cfg.explain.top_k, derive_seed(seed, &[0xE7, 0]))?;
            out.write_json(
                "attributions/focus.json",
                &serde_json::json!({
                    "stay_id": case.record.stay_id,
                    "explainer": case.explainer.name(),
                    "attribution": attr,
                    "grouped": grouped,
                    "drivers": drivers,
                }),
            )?;
            println!("stay {} ({} explainer)", case.record.stay_id, case.explainer.name());
            for t in &drivers.tokens {
                println!("{t}");
            }
        }
        Command::Narrate => {
            let case = prepare_focus(&cfg, seed)?;
            let res = build_narrative_resources(&cfg, &case.pipeline, Some(out.llm_log()?))?;
            let run_seed = derive_seed(seed, &[0xE7, 0]);
            let (_, _, drivers) = explain_once(&case, cfg.explain.top_k, run_seed)?;
            let (prompt, bundle) = narrate_once(&case, &cfg, &res, &drivers, run_seed)?;
            out.write_text("narratives/prompt.txt", &prompt.render())?;
            out.write_json("narratives/focus.json", &bundle)?;
            println!("{}", bundle.raw);
        }
        Command::Evaluate => {
            let outcome = run_explanation_comparison(&cfg, seed, Some(out.llm_log()?))?;
            write_explanation_outputs(&out, &outcome)?;
            let table = std::fs::read_to_string(out.root().join("metrics/metric_table.csv")).unwrap_or_default();
            print!("{table}");
        }
        Command::Report => unreachable!("handled above"),
    }
    out.record_stage(&cfg, cli.command.stage())?;
    Ok(())
}

fn ingest(cfg: &ExperimentConfig, seed: u64, out: &OutputDir) -> Result<(), HarnessError> {
    let graph = load_graph(cfg)?;
    let levels = discover_levels(&graph).map_err(|e| HarnessError::data("ontology", e))?;
    let records = load_records(cfg, &graph, seed)?;
    let pipe = Pipeline::build(cfg, seed, false)?;
    let labelled = records.iter().filter(|r| r.label.is_some()).count();
    let deaths = records.iter().filter(|r| r.label == Some(1)).count();
    let summary = serde_json::json!({
        "seed": seed,
        "concepts": graph.len(),
        "edges": graph.edge_count(),
        "anchors": levels.anchor_count(),
        "n_raw": pipe.prepared.n_raw,
        "n_filtered": pipe.prepared.n_filtered,
        "n_train": pipe.prepared.train.len(),
        "n_val": pipe.prepared.val.len(),
        "mortality_rate": if labelled == 0 { 0.0 } else { deaths as f64 / labelled as f64 },
        "subjects_overlap": pipe.prepared.subjects_overlap(),
    });
    out.write_json("data/cohort_summary.json", &summary)?;
    let path = out.file("data/admissions.jsonl")?;
    write_admissions_jsonl(&records, &path).map_err(|e| HarnessError::data("cohort", e))?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    Ok(())
}

fn embed(cfg: &ExperimentConfig, seed: u64, out: &OutputDir) -> Result<(), HarnessError> {
    let pipe = Pipeline::build(cfg, seed, false)?;
    let table = train_embeddings(cfg, &pipe.graph, seed)?;
    table
        .save(&out.file("embeddings/concepts.tsv")?)
        .map_err(|e| HarnessError::data("embed", e))?;
    out.write_json("embeddings/idf.json", &pipe.weights)?;
    println!("{} concept vectors of dimension {}", table.len(), cfg.skipgram.dim);
    Ok(())
}

fn read_csv(path: &Path) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).ok()?;
    let header = r.headers().ok()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .filter_map(Result::ok)
        .map(|rec| rec.iter().map(str::to_string).collect())
        .collect();
    Some((header, rows))
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        s.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    s
}

/// Markdown summary of `perf/performance.csv` and `metrics/metric_table.csv`.
pub fn render_report(out_dir: &Path) -> Result<String, HarnessError> {
    let perf = read_csv(&out_dir.join("perf/performance.csv"));
    let table = read_csv(&out_dir.join("metrics/metric_table.csv"));
    if perf.is_none() && table.is_none() {
        return Err(HarnessError::data(
            "report",
            format!(
                "no perf/performance.csv or metrics/metric_table.csv under {}",
                out_dir.display()
            ),
        ));
    }
    let mut md = String::from("# NEURON report\n");
    if let Some((h, rows)) = perf {
        md.push_str("\n## Predictive performance\n\n");
        md.push_str(&markdown_table(&h, &rows));
    }
    if let Some((h, rows)) = table {
        md.push_str("\n## Explanation quality\n\n");
        md.push_str(&markdown_table(&h, &rows));
    }
    Ok(md)
}

fn report(out_dir: &Path) -> Result<(), HarnessError> {
    let md = render_report(out_dir)?;
    let path = out_dir.join("report.md");
    std::fs::write(&path, &md).map_err(|e| HarnessError::data("report", format!("{}: {e}", path.display())))?;
    print!("{md}");
    Ok(())
}
