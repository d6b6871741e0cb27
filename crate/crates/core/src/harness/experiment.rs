use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use super::{EndpointSettings, ExperimentConfig, ExplainerChoice, HarnessError, OutputDir, Pipeline};
use crate::attribution::{
    collapse_and_group, rank_drivers, AttributionVector, DriverList, ExactExplainer, Explainer, GroupedAttribution,
    KernelExplainer, OutputSpace, MAX_EXACT_FEATURES,
};
use crate::cohort::{AdmissionRecord, ColumnLayout, FeatureConfig};
use crate::metrics::{
    additivity_gap, aggregate, clinical_plausibility, coherence_score, completeness_score, infidelity, judge_scores,
    narrative_completeness, perturbation_metrics, required_items, shap_mass_coverage, stability_summary,
    write_metric_table_csv, HttpJudge, JudgeClient, JudgeScores, MetricReport, MetricsError, RunMetrics, StubJudge,
};
use crate::narrative::{
    build_corpus, build_driver_section, build_prompt, extract_claims, generate_narrative, index_documents,
    tabular_drivers, validate_template, HashEmbedder, HttpClient, JsonlLog, KnowledgeBase, Lexicon, LlmClient,
    NarrativeBundle, NarrativeContext, NarrativeError, Prompt, StubClient, VectorIndex, DEFAULT_TEMPLATE,
};
use crate::predictors::{evaluate, train, PerformanceRow, Predictor, PredictorKind};
use crate::util::{derive_seed, median};

const STREAM_RUN: u64 = 0xE7;
const STREAM_BOOT: u64 = 0xB0;
const STREAM_AGG: u64 = 0xA6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfEntry {
    pub seed: u64,
    pub row: PerformanceRow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PerformanceTable {
    pub entries: Vec<PerfEntry>,
    /// Validation stay ids per seed, shared by every configuration.
    pub val_stays: BTreeMap<u64, Vec<String>>,
}

impl PerformanceTable {
    pub fn rows_for(&self, kind: PredictorKind, config: FeatureConfig) -> Vec<&PerformanceRow> {
        self.entries
            .iter()
            .map(|e| &e.row)
            .filter(|r| r.model == kind.name() && r.config == config.name())
            .collect()
    }

    pub fn mean_auc(&self, kind: PredictorKind, config: FeatureConfig) -> Option<f64> {
        let rows = self.rows_for(kind, config);
        (!rows.is_empty()).then(|| rows.iter().map(|r| r.auc).sum::<f64>() / rows.len() as f64)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| HarnessError::data("output", e);
        let mut header = vec!["seed"];
        header.extend(PerformanceRow::CSV_HEADER);
        w.write_record(&header).map_err(err)?;
        for e in &self.entries {
            let r = &e.row;
            let f = |v: f64| format!("{v:.4}");
            w.write_record([
                e.seed.to_string(),
                r.model.clone(),
                r.config.clone(),
                f(r.auc),
                f(r.auc_ci_lo),
                f(r.auc_ci_hi),
                f(r.accuracy),
                f(r.sensitivity),
                f(r.precision),
                f(r.f1),
                f(r.specificity),
                r.n_val.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| HarnessError::data("output", e))
    }
}

pub struct TrainedModel {
    pub seed: u64,
    pub predictor: Predictor,
}

/// Every predictor × configuration for every seed, scored on the shared
/// validation split.
pub fn run_performance_experiment(
    cfg: &ExperimentConfig,
) -> Result<(PerformanceTable, Vec<TrainedModel>), HarnessError> {
    let with_emb = cfg.configs.iter().any(|c| c.uses_graph());
    let mut table = PerformanceTable::default();
    let mut models = Vec::new();
    for &seed in &cfg.seeds {
        let pipe = Pipeline::build(cfg, seed, with_emb)?;
        for &config in &cfg.configs {
            let (tr, va) = pipe.matrices(config)?;
            match table.val_stays.get(&seed) {
                Some(prev) if *prev != va.rows => {
                    return Err(HarnessError::data(
                        "features",
                        "validation rows differ between configurations",
                    ));
                }
                Some(_) => {}
                None => {
                    table.val_stays.insert(seed, va.rows.clone());
                }
            }
            for &kind in &cfg.predictors {
                let model = train(kind, &tr, &cfg.hyper_for(kind), seed).map_err(|e| HarnessError::data("train", e))?;
                let row = evaluate(&model, &va, cfg.n_boot, derive_seed(seed, &[STREAM_BOOT]))
                    .map_err(|e| HarnessError::data("evaluate", e))?;
                log::info!("seed {seed} {} {}: AUC {:.4}", row.model, row.config, row.auc);
                table.entries.push(PerfEntry { seed, row });
                models.push(TrainedModel { seed, predictor: model });
            }
        }
    }
    Ok((table, models))
}

pub fn write_performance_outputs(
    out: &OutputDir,
    table: &PerformanceTable,
    models: &[TrainedModel],
) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    out.write_text("perf/performance.csv", &String::from_utf8_lossy(&buf))?;
    out.write_json("perf/val_stays.json", &table.val_stays)?;
    for m in models {
        let p = &m.predictor;
        let config = p.config.map_or("NONE", |c| c.name());
        out.write_text(
            &format!("perf/models/seed{}_{}_{}.json", m.seed, p.kind.name(), config),
            &p.to_json(),
        )?;
    }
    Ok(())
}

/// The trained model and the stay whose prediction is explained.
pub struct FocusCase {
    pub seed: u64,
    pub pipeline: Pipeline,
    pub predictor: Predictor,
    pub layout: ColumnLayout,
    pub record: AdmissionRecord,
    /// Feature row in raw units.
    pub x_raw: Vec<f64>,
    /// The same row in model space.
    pub z: Vec<f64>,
    /// Training medians in model space.
    pub baseline: Vec<f64>,
    pub explainer: Box<dyn Explainer + Send>,
}

fn choose_explainer(
    choice: ExplainerChoice,
    d: usize,
    kernel_samples: usize,
) -> Result<Box<dyn Explainer + Send>, HarnessError> {
    let kernel = || -> Box<dyn Explainer + Send> {
        Box::new(KernelExplainer {
            n_samples: kernel_samples,
            space: OutputSpace::Logit,
        })
    };
    match choice {
        ExplainerChoice::Exact if d > MAX_EXACT_FEATURES => Err(HarnessError::Usage(format!(
            "exact explainer supports at most {MAX_EXACT_FEATURES} features, layout has {d}"
        ))),
        ExplainerChoice::Exact => Ok(Box::new(ExactExplainer {
            space: OutputSpace::Logit,
        })),
        ExplainerChoice::Kernel => Ok(kernel()),
        ExplainerChoice::Auto if d <= MAX_EXACT_FEATURES => Ok(Box::new(ExactExplainer {
            space: OutputSpace::Logit,
        })),
        ExplainerChoice::Auto => Ok(kernel()),
    }
}

/// Train the configured predictor and pick the stay to explain: the one in
/// `explain.stay_id`, else the highest-risk validation stay.
pub fn prepare_focus(cfg: &ExperimentConfig, seed: u64) -> Result<FocusCase, HarnessError> {
    let e = &cfg.explain;
    let pipeline = Pipeline::build(cfg, seed, e.config.uses_graph())?;
    let (tr, va) = pipeline.matrices(e.config)?;
    let predictor =
        train(e.predictor, &tr, &cfg.hyper_for(e.predictor), seed).map_err(|err| HarnessError::data("train", err))?;
    let row = match &e.stay_id {
        Some(id) => va
            .rows
            .iter()
            .position(|r| r == id)
            .ok_or_else(|| HarnessError::data("explain", format!("stay {id} is not in the validation split")))?,
        None => {
            let probs = predictor
                .predict_proba_matrix(&va.values)
                .map_err(|err| HarnessError::data("explain", err))?;
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        }
    };
    let stay = &va.rows[row];
    let record = pipeline
        .prepared
        .val
        .iter()
        .find(|r| &r.stay_id == stay)
        .cloned()
        .ok_or_else(|| HarnessError::data("explain", format!("stay {stay} has no record")))?;
    let x_raw = va.values.row(row).to_vec();
    let medians: Vec<f64> = (0..tr.values.ncols())
        .map(|j| median(&tr.values.column(j).to_vec()).unwrap_or(0.0))
        .collect();
    let to_model = |v: &[f64]| {
        predictor
            .model_space(v)
            .map_err(|err| HarnessError::data("explain", err))
    };
    let z = to_model(&x_raw)?;
    let baseline = to_model(&medians)?;
    let explainer = choose_explainer(e.explainer, va.columns.len(), e.kernel_samples)?;
    Ok(FocusCase {
        seed,
        layout: va.columns.clone(),
        pipeline,
        predictor,
        record,
        x_raw,
        z,
        baseline,
        explainer,
    })
}

/// Attribution for one run seed, grouped and ranked.
pub fn explain_once(
    case: &FocusCase,
    top_k: usize,
    seed: u64,
) -> Result<(AttributionVector, GroupedAttribution, DriverList), HarnessError> {
    let attr = case
        .explainer
        .explain(&case.predictor, &case.z, &case.baseline, seed)
        .map_err(|e| HarnessError::data("explain", e))?
        .with_names(case.layout.names());
    let mut grouped =
        collapse_and_group(&attr, &case.layout, Some(&case.x_raw)).map_err(|e| HarnessError::data("explain", e))?;
    grouped.name_anchors(&case.pipeline.graph);
    let drivers = rank_drivers(&grouped, top_k);
    Ok((attr, grouped, drivers))
}

pub fn make_llm(s: &EndpointSettings) -> Box<dyn LlmClient> {
    if s.is_stub() {
        return Box::new(StubClient);
    }
    Box::new(HttpClient {
        url: s.endpoint.clone(),
        model: s.model.clone(),
        temperature: s.temperature,
        timeout: Duration::from_secs(s.timeout_secs),
        retries: s.retries,
    })
}

pub fn make_judge(s: &EndpointSettings) -> Box<dyn JudgeClient> {
    if s.is_stub() {
        return Box::new(StubJudge);
    }
    Box::new(HttpJudge {
        url: s.endpoint.clone(),
        model: s.model.clone(),
        timeout: Duration::from_secs(s.timeout_secs),
        retries: s.retries,
    })
}

/// Knowledge base, lexicon, template, retrieval index and clients.
pub struct NarrativeResources {
    pub kb: KnowledgeBase,
    pub lexicon: Lexicon,
    pub template: String,
    pub embedder: HashEmbedder,
    pub index: VectorIndex,
    pub llm: Box<dyn LlmClient>,
    pub judge: Box<dyn JudgeClient>,
    pub log: Option<JsonlLog>,
}

impl NarrativeResources {
    pub fn context<'a>(&'a self, cfg: &ExperimentConfig, pipeline: &'a Pipeline) -> NarrativeContext<'a> {
        NarrativeContext {
            graph: &pipeline.graph,
            index: &self.index,
            embedder: &self.embedder,
            kb: &self.kb,
            budgets: cfg.explain.budgets,
            retrieve_k: cfg.explain.retrieve_k,
            template: &self.template,
        }
    }
}

fn narrative_err(stage: &'static str, e: NarrativeError) -> HarnessError {
    if e.is_external() || matches!(e, NarrativeError::SectionParseFailure { .. }) {
        HarnessError::external(stage, e)
    } else {
        HarnessError::data(stage, e)
    }
}

pub fn build_narrative_resources(
    cfg: &ExperimentConfig,
    pipeline: &Pipeline,
    log: Option<JsonlLog>,
) -> Result<NarrativeResources, HarnessError> {
    let e = &cfg.explain;
    let kb = match &e.knowledge_base {
        Some(p) => KnowledgeBase::load(p).map_err(|err| HarnessError::data("knowledge_base", err))?,
        None => KnowledgeBase::builtin(),
    };
    kb.validate().map_err(|err| HarnessError::data("knowledge_base", err))?;
    let lexicon = match &e.lexicon {
        Some(p) => Lexicon::load(p).map_err(|err| HarnessError::data("lexicon", err))?,
        None => Lexicon::builtin(),
    };
    let template = match &e.template {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|err| HarnessError::data("template", format!("{}: {err}", p.display())))?,
        None => DEFAULT_TEMPLATE.to_string(),
    };
    validate_template(&template).map_err(|err| HarnessError::data("template", err))?;
    let embedder = HashEmbedder::default();
    let corpus = build_corpus(&pipeline.graph, &pipeline.records);
    let index = index_documents(&corpus, &embedder).map_err(|err| HarnessError::data("index", err))?;
    Ok(NarrativeResources {
        kb,
        lexicon,
        template,
        embedder,
        index,
        llm: make_llm(&cfg.llm),
        judge: make_judge(&cfg.judge),
        log,
    })
}

/// Prompt and generated narrative for one ranked driver list.
pub fn narrate_once(
    case: &FocusCase,
    cfg: &ExperimentConfig,
    res: &NarrativeResources,
    drivers: &DriverList,
    seed: u64,
) -> Result<(Prompt, NarrativeBundle), HarnessError> {
    let ctx = res.context(cfg, &case.pipeline);
    let prompt = build_prompt(&ctx, &case.record, drivers).map_err(|e| narrative_err("narrate", e))?;
    let bundle = generate_narrative(res.llm.as_ref(), &prompt, &res.lexicon, seed, res.log.as_ref())
        .map_err(|e| narrative_err("narrate", e))?;
    Ok((prompt, bundle))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationRun {
    pub run: usize,
    pub seed: u64,
    pub attribution: AttributionVector,
    pub drivers: DriverList,
    /// Driver list rendered as text, the attribution-only explanation.
    pub shap_text: String,
    pub prompt: String,
    pub narrative: NarrativeBundle,
    pub shap_metrics: RunMetrics,
    pub rag_metrics: RunMetrics,
    pub judge_error: Option<String>,
}

fn or_nan(r: Result<f64, MetricsError>) -> Result<f64, HarnessError> {
    match r {
        Ok(v) => Ok(v),
        Err(MetricsError::EmptyTopK | MetricsError::NoClaims) => Ok(f64::NAN),
        Err(e) => Err(HarnessError::data("metrics", e)),
    }
}

fn insert_judge(m: &mut RunMetrics, s: &JudgeScores) {
    for (k, v) in [
        ("ha_faithfulness", s.faithfulness),
        ("ha_plausibility", s.plausibility),
        ("ha_usefulness", s.usefulness),
        ("ha_sensemaking", s.sensemaking),
        ("ha_overall", s.overall),
    ] {
        m.insert(k.to_string(), v);
    }
}

fn one_run(
    case: &FocusCase,
    cfg: &ExperimentConfig,
    res: &NarrativeResources,
    run: usize,
) -> Result<ExplanationRun, HarnessError> {
    let e = &cfg.explain;
    let seed = derive_seed(case.seed, &[STREAM_RUN, run as u64]);
    let (attr, _, drivers) = explain_once(case, e.top_k, seed)?;
    let pcfg = e.perturbation.with_seed(seed);
    let model = &case.predictor;
    let pm = perturbation_metrics(case.explainer.as_ref(), model, &case.z, &case.baseline, e.top_k, &pcfg)
        .map_err(|err| HarnessError::data("metrics", err))?;
    let inf =
        infidelity(&attr, model, &case.z, &case.baseline, &pcfg).map_err(|err| HarnessError::data("metrics", err))?;
    let shap_text = build_driver_section(&drivers, &case.record.imputed, &res.kb);
    let (prompt, narrative) = narrate_once(case, cfg, res, &drivers, seed)?;
    let prompt_text = prompt.render();

    let mut shap = RunMetrics::new();
    shap.insert("completeness".into(), completeness_score(&attr));
    shap.insert("additivity_gap".into(), additivity_gap(&attr));
    shap.insert("infidelity".into(), inf);
    shap.insert("max_sensitivity".into(), pm.max_sensitivity);
    shap.insert("robustness".into(), pm.topk_jaccard);

    let mut rag = RunMetrics::new();
    let mentioned = narrative.mentioned_keys();
    rag.insert(
        "mass_coverage".into(),
        or_nan(shap_mass_coverage(&tabular_drivers(&drivers), &mentioned))?,
    );
    let nc = match narrative_completeness(&required_items(&drivers), &narrative.raw, &res.lexicon) {
        Ok(r) => r.score,
        Err(MetricsError::EmptyTopK) => f64::NAN,
        Err(err) => return Err(HarnessError::data("metrics", err)),
    };
    rag.insert("narrative_completeness".into(), nc);
    let claims = extract_claims(narrative.driver_section(), &res.lexicon);
    rag.insert(
        "clinical_plausibility".into(),
        or_nan(clinical_plausibility(&claims, &res.kb))?,
    );

    let judged = judge_scores(res.judge.as_ref(), &shap_text, &prompt_text)
        .and_then(|s| Ok((s, judge_scores(res.judge.as_ref(), &narrative.raw, &prompt_text)?)));
    let judge_error = match judged {
        Ok((s, r)) => {
            insert_judge(&mut shap, &s);
            insert_judge(&mut rag, &r);
            rag.insert("narrative_coherence".into(), r.coherence);
            None
        }
        Err(err @ (MetricsError::JudgeUnavailable(_) | MetricsError::MalformedJudgeResponse(_))) => {
            log::warn!("run {run}: judge skipped: {err}");
            rag.insert("narrative_coherence".into(), coherence_score(&narrative.raw));
            Some(err.to_string())
        }
        Err(err) => return Err(HarnessError::data("judge", err)),
    };

    Ok(ExplanationRun {
        run,
        seed,
        attribution: attr,
        drivers,
        shap_text,
        prompt: prompt_text,
        narrative,
        shap_metrics: shap,
        rag_metrics: rag,
        judge_error,
    })
}

/// `explain.runs` independent runs, at most `explain.concurrency` at once.
pub fn run_explanation_runs(
    case: &FocusCase,
    cfg: &ExperimentConfig,
    res: &NarrativeResources,
) -> Result<Vec<ExplanationRun>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.explain.concurrency.min(rayon::current_num_threads()).max(1))
        .build()
        .map_err(|e| HarnessError::data("explain", e))?;
    pool.install(|| {
        (0..cfg.explain.runs)
            .into_par_iter()
            .map(|r| one_run(case, cfg, res, r))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplanationOutcome {
    pub seed: u64,
    pub stay_id: String,
    pub predictor: PredictorKind,
    pub config: FeatureConfig,
    pub explainer: String,
    pub n_features: usize,
    pub runs: Vec<ExplanationRun>,
    pub shap: MetricReport,
    pub rag: MetricReport,
    pub judge_failures: usize,
}

/// Add the pairwise-cosine stability row.
fn add_stability(report: &mut MetricReport, vectors: &[Vec<f64>], seed: u64) -> Result<(), HarnessError> {
    match stability_summary(vectors, seed) {
        Ok(s) => {
            report.metrics.insert("stability".into(), s);
            Ok(())
        }
        Err(MetricsError::TooFewRuns(_)) => {
            report.skipped.insert("stability".into());
            Ok(())
        }
        Err(e) => Err(HarnessError::data("metrics", e)),
    }
}

pub fn summarize_runs(
    case: &FocusCase,
    cfg: &ExperimentConfig,
    runs: Vec<ExplanationRun>,
) -> Result<ExplanationOutcome, HarnessError> {
    let agg_seed = derive_seed(case.seed, &[STREAM_AGG]);
    let shap_runs: Vec<RunMetrics> = runs.iter().map(|r| r.shap_metrics.clone()).collect();
    let rag_runs: Vec<RunMetrics> = runs.iter().map(|r| r.rag_metrics.clone()).collect();
    let mut shap = aggregate(&shap_runs, agg_seed).map_err(|e| HarnessError::data("metrics", e))?;
    let mut rag = aggregate(&rag_runs, derive_seed(agg_seed, &[1])).map_err(|e| HarnessError::data("metrics", e))?;
    let phis: Vec<Vec<f64>> = runs.iter().map(|r| r.attribution.phi.clone()).collect();
    let mentions: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| r.narrative.mention_vector.iter().map(|b| f64::from(*b)).collect())
        .collect();
    add_stability(&mut shap, &phis, derive_seed(agg_seed, &[2]))?;
    add_stability(&mut rag, &mentions, derive_seed(agg_seed, &[3]))?;
    Ok(ExplanationOutcome {
        seed: case.seed,
        stay_id: case.record.stay_id.clone(),
        predictor: cfg.explain.predictor,
        config: cfg.explain.config,
        explainer: case.explainer.name().to_string(),
        n_features: case.layout.len(),
        judge_failures: runs.iter().filter(|r| r.judge_error.is_some()).count(),
        runs,
        shap,
        rag,
    })
}

/// Attribution-only versus retrieval-grounded narrative for one stay.
pub fn run_explanation_comparison(
    cfg: &ExperimentConfig,
    seed: u64,
    log: Option<JsonlLog>,
) -> Result<ExplanationOutcome, HarnessError> {
    let case = prepare_focus(cfg, seed)?;
    let res = build_narrative_resources(cfg, &case.pipeline, log)?;
    let runs = run_explanation_runs(&case, cfg, &res)?;
    summarize_runs(&case, cfg, runs)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    run: usize,
    seed: u64,
    driver_tokens: &'a [String],
    mentioned: BTreeSet<String>,
    shap_metrics: &'a RunMetrics,
    rag_metrics: &'a RunMetrics,
    judge_error: &'a Option<String>,
}

pub fn write_explanation_outputs(out: &OutputDir, o: &ExplanationOutcome) -> Result<(), HarnessError> {
    for r in &o.runs {
        out.write_json(
            &format!("attributions/run_{:02}.json", r.run),
            &serde_json::json!({"attribution": r.attribution, "drivers": r.drivers}),
        )?;
        out.write_json(&format!("narratives/run_{:02}.json", r.run), &r.narrative)?;
        out.write_text(&format!("narratives/shap_run_{:02}.txt", r.run), &r.shap_text)?;
    }
    if let Some(first) = o.runs.first() {
        out.write_text("narratives/prompt.txt", &first.prompt)?;
    }
    let summaries: Vec<RunSummary> = o
        .runs
        .iter()
        .map(|r| RunSummary {
            run: r.run,
            seed: r.seed,
            driver_tokens: &r.drivers.tokens,
            mentioned: r.narrative.mentioned_keys(),
            shap_metrics: &r.shap_metrics,
            rag_metrics: &r.rag_metrics,
            judge_error: &r.judge_error,
        })
        .collect();
    out.write_json("metrics/runs.json", &summaries)?;
    out.write_json("metrics/shap_report.json", &o.shap)?;
    out.write_json("metrics/rag_report.json", &o.rag)?;
    out.write_json(
        "metrics/focus.json",
        &serde_json::json!({
            "seed": o.seed,
            "stay_id": o.stay_id,
            "predictor": o.predictor,
            "config": o.config,
            "explainer": o.explainer,
            "n_features": o.n_features,
            "runs": o.runs.len(),
            "judge_failures": o.judge_failures,
        }),
    )?;
    let mut buf = Vec::new();
    write_metric_table_csv(&o.shap, &o.rag, &mut buf).map_err(|e| HarnessError::data("output", e))?;
    out.write_text("metrics/metric_table.csv", &String::from_utf8_lossy(&buf))?;
    Ok(())
}
