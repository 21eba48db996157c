//! Stage drivers.
//!
//! Each subcommand maps to one driver here. Drivers read their inputs from
//! disk, do the work through the core library, and write outputs plus a run
//! manifest. Model-facing stages checkpoint after every batch and, with
//! `--resume`, skip ids that already have settled results, so interrupted
//! runs never re-issue completed calls.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use quarry_core::graphlet::{sample_per_shape, write_census_tsv, Graphlet, SamplingPlan};
use quarry_core::jsonl::{append_jsonl, read_jsonl, read_jsonl_checkpoint, write_jsonl};
use quarry_core::kg::load_graph;
use quarry_core::llm::{
    BackendError, ChatBackend, CompletionRequest, Gateway, GatewayConfig, HttpBackend,
    HttpBackendConfig, MockBackend,
};
use quarry_core::prompt::{PromptCatalog, PromptConfig};
use quarry_core::qa::{
    apply_length_filter, compute_length_bounds, funnel_by_shape, generate_batch, judge_batch,
    FunnelReport, QARecord, StageStatus,
};
use quarry_core::rephrase::{
    rephrase_batch, write_failures_tsv, ExemplarBank, RephraseFailure, RephrasedQA, TargetFormat,
};
use quarry_core::retrieval::{
    build_bundles, bundle_stats, Bm25Index, Document, EvidenceBundle,
};

use crate::config::{LlmMode, PipelineConfig};
use crate::manifest::ManifestBuilder;
use crate::plot;

/// Everything a stage driver needs: parsed config, output root, resume flag.
pub struct StageContext {
    pub config: PipelineConfig,
    pub out_dir: PathBuf,
    pub resume: bool,
}

/// Backend selected by `llm.mode`.
pub enum AnyBackend {
    Mock(MockBackend),
    Http(HttpBackend),
}

impl ChatBackend for AnyBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        match self {
            AnyBackend::Mock(b) => b.complete(request),
            AnyBackend::Http(b) => b.complete(request),
        }
    }

    fn name(&self) -> &str {
        match self {
            AnyBackend::Mock(b) => b.name(),
            AnyBackend::Http(b) => b.name(),
        }
    }
}

impl StageContext {
    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out_dir.join(name);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn catalog(&self) -> Result<PromptCatalog> {
        match &self.config.prompts.catalog_dir {
            Some(dir) => PromptCatalog::load(dir)
                .with_context(|| format!("loading prompt catalog from {}", dir.display())),
            None => Ok(PromptCatalog::builtin()),
        }
    }

    fn gateway(&self, stage: &str) -> Result<Gateway<AnyBackend>> {
        let llm = &self.config.llm;
        let backend = match llm.mode {
            LlmMode::Mock => AnyBackend::Mock(MockBackend::new(llm.mock.knobs())),
            LlmMode::Http => {
                let http = HttpBackend::new(HttpBackendConfig {
                    endpoint: llm.http.endpoint.clone(),
                    model: llm.http.model.clone(),
                    api_key_env: llm.http.api_key_env.clone(),
                    timeout_secs: llm.http.timeout_secs,
                })
                .map_err(|e| anyhow::anyhow!("{e}"))?;
                AnyBackend::Http(http)
            }
        };
        let gateway_config = GatewayConfig {
            max_in_flight: llm.max_in_flight,
            max_retries: llm.max_retries,
            base_delay_ms: llm.base_delay_ms,
            max_delay_ms: llm.max_delay_ms,
        };
        let audit_dir = self.subdir("audit")?;
        let audit_path = audit_dir.join(format!("{stage}.jsonl"));
        Gateway::new(backend, gateway_config)
            .with_audit_log(&audit_path)
            .with_context(|| format!("opening audit log {}", audit_path.display()))
    }
}

/// Loads a checkpoint file, dropping a torn final line, and rewrites it so
/// later appends start on a clean line boundary. Missing file means empty.
fn load_checkpoint<T>(path: &Path) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned + serde::Serialize,
{
    if !path.exists() {
        return Ok(Vec::new());
    }
    let records: Vec<T> = read_jsonl_checkpoint(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    write_jsonl(path, &records)
        .with_context(|| format!("rewriting checkpoint {}", path.display()))?;
    Ok(records)
}

/// Removes a stale checkpoint when the run is not resuming.
fn reset_unless_resuming(resume: bool, path: &Path) -> Result<()> {
    if !resume && path.exists() {
        fs::remove_file(path).with_context(|| format!("removing {}", path.display()))?;
    }
    Ok(())
}

pub fn cmd_prepare(ctx: &StageContext) -> Result<()> {
    let paths = &ctx.config.paths;
    let mut manifest = ManifestBuilder::new("prepare", ctx.config.seed);
    manifest.input(&paths.nodes)?;
    manifest.input(&paths.edges)?;

    let graph = load_graph(&paths.nodes, &paths.edges)?;
    info!("loaded graph: {} nodes, {} edges", graph.node_count(), graph.edge_count());

    let graph_dir = ctx.subdir("graph")?;
    let graph = match &paths.hydration {
        Some(hydration_path) => {
            manifest.input(hydration_path)?;
            let (graph, report) = graph.apply_hydration(hydration_path)?;
            let report_path = graph_dir.join("hydration_report.json");
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            fs::write(&report_path, text)?;
            manifest.output(&ctx.out_dir, &report_path);
            info!(
                "hydration mapped {} of {} nodes; {} still unnamed",
                report.resolved,
                report.total_nodes,
                report.unnamed_ids.len()
            );
            graph
        }
        None => graph,
    };

    let simplified = graph.simplify();
    info!(
        "simplified: {} edges remain of {}",
        simplified.edge_count(),
        graph.edge_count()
    );

    let histogram = simplified.degree_histogram()?;
    let histogram_path = graph_dir.join("degree_histogram.tsv");
    histogram.write_tsv(&histogram_path)?;
    manifest.output(&ctx.out_dir, &histogram_path);

    let reduction = &ctx.config.reduction;
    let reduced = simplified.reduce_by_degree(reduction.min_degree, reduction.max_degree)?;
    info!(
        "degree band [{}, {}]: {} of {} nodes remain",
        reduction.min_degree,
        reduction.max_degree,
        reduced.node_count(),
        simplified.node_count()
    );

    let reduced_histogram = reduced.degree_histogram()?;
    let reduced_histogram_path = graph_dir.join("degree_histogram_reduced.tsv");
    reduced_histogram.write_tsv(&reduced_histogram_path)?;
    manifest.output(&ctx.out_dir, &reduced_histogram_path);

    let nodes_out = graph_dir.join("nodes.tsv");
    let edges_out = graph_dir.join("edges.tsv");
    reduced.save_tsv(&nodes_out, &edges_out)?;
    manifest.output(&ctx.out_dir, &nodes_out);
    manifest.output(&ctx.out_dir, &edges_out);
    info!("reduced graph checksum {}", reduced.checksum());

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

fn load_reduced_graph(ctx: &StageContext) -> Result<quarry_core::kg::Graph> {
    let nodes = ctx.out_dir.join("graph/nodes.tsv");
    let edges = ctx.out_dir.join("graph/edges.tsv");
    if !nodes.exists() {
        bail!("missing {}; run the prepare stage first", nodes.display());
    }
    // Loading always yields a directed multigraph; the saved data is already
    // canonical, so this simplify only restores the flags.
    Ok(load_graph(&nodes, &edges)?.simplify())
}

pub fn cmd_graphlets(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("graphlets", ctx.config.seed);
    let nodes = ctx.out_dir.join("graph/nodes.tsv");
    let edges = ctx.out_dir.join("graph/edges.tsv");
    let graph = load_reduced_graph(ctx)?;
    manifest.input(&nodes)?;
    manifest.input(&edges)?;

    let sampling = &ctx.config.sampling;
    let plan = if sampling.calibrate {
        SamplingPlan::calibrated(&graph, sampling.target_per_shape, ctx.config.seed)?
    } else {
        SamplingPlan::with_unit_probabilities(sampling.target_per_shape, ctx.config.seed)
    };

    let set = sample_per_shape(&graph, &plan)?;
    info!(
        "sampled {} graphlets across {} populated shapes",
        set.graphlets.len(),
        set.census.iter().filter(|row| row.sampled > 0).count()
    );

    let dir = ctx.subdir("graphlets")?;
    let graphlets_path = dir.join("graphlets.jsonl");
    write_jsonl(&graphlets_path, &set.graphlets)?;
    manifest.output(&ctx.out_dir, &graphlets_path);

    let census_path = dir.join("census.tsv");
    write_census_tsv(&set.census, &census_path)?;
    manifest.output(&ctx.out_dir, &census_path);

    let sampling_manifest_path = dir.join("sampling_manifest.json");
    let mut text = serde_json::to_string_pretty(&set.manifest)?;
    text.push('\n');
    fs::write(&sampling_manifest_path, text)?;
    manifest.output(&ctx.out_dir, &sampling_manifest_path);

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

fn generation_config<'a>(ctx: &StageContext, catalog: &'a PromptCatalog) -> Result<&'a PromptConfig> {
    Ok(catalog.config(&ctx.config.prompts.config_id)?)
}

pub fn cmd_generate(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("generate", ctx.config.seed);
    let graphlets_path = ctx.out_dir.join("graphlets/graphlets.jsonl");
    if !graphlets_path.exists() {
        bail!("missing {}; run the graphlets stage first", graphlets_path.display());
    }
    manifest.input(&graphlets_path)?;
    let graphlets: Vec<Graphlet> = read_jsonl(&graphlets_path)?;

    let catalog = ctx.catalog()?;
    let prompt_config = generation_config(ctx, &catalog)?;
    let gateway = ctx.gateway("generate")?;

    let qa_dir = ctx.subdir("qa")?;
    let generated_path = qa_dir.join("generated.jsonl");
    reset_unless_resuming(ctx.resume, &generated_path)?;
    let existing: Vec<QARecord> = load_checkpoint(&generated_path)?;
    let done: HashSet<&str> = existing.iter().map(|r| r.graphlet_id.as_str()).collect();
    let pending: Vec<&Graphlet> =
        graphlets.iter().filter(|g| !done.contains(g.graphlet_id.as_str())).collect();
    info!(
        "generation: {} done, {} pending of {}",
        done.len(),
        pending.len(),
        graphlets.len()
    );

    let temperature = ctx.config.llm.temperature;
    for chunk in pending.chunks(ctx.config.llm.batch_size) {
        let batch: Vec<Graphlet> = chunk.iter().map(|&g| g.clone()).collect();
        let records = generate_batch(&catalog, prompt_config, &gateway, &batch, temperature)?;
        append_jsonl(&generated_path, &records)?;
    }
    manifest.output(&ctx.out_dir, &generated_path);

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_filter(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("filter", ctx.config.seed);
    let qa_dir = ctx.subdir("qa")?;
    let generated_path = qa_dir.join("generated.jsonl");
    if !generated_path.exists() {
        bail!("missing {}; run the generate stage first", generated_path.display());
    }
    manifest.input(&generated_path)?;
    let mut records: Vec<QARecord> = read_jsonl(&generated_path)?;

    // Length stage is deterministic given generated.jsonl, so it is simply
    // recomputed on resume.
    let bounds = compute_length_bounds(&records, ctx.config.filtering.z_threshold)?;
    let bounds_path = qa_dir.join("bounds.json");
    bounds.save(&bounds_path)?;
    manifest.output(&ctx.out_dir, &bounds_path);

    let culled = apply_length_filter(&mut records, &bounds);
    info!("length filter culled {culled} of {} records", records.len());
    let filtered_path = qa_dir.join("filtered.jsonl");
    write_jsonl(&filtered_path, &records)?;
    manifest.output(&ctx.out_dir, &filtered_path);

    let judged_path = qa_dir.join("judged.jsonl");
    reset_unless_resuming(ctx.resume, &judged_path)?;
    let already: Vec<QARecord> = load_checkpoint(&judged_path)?;
    let judged_ids: HashSet<&str> = already.iter().map(|r| r.graphlet_id.as_str()).collect();
    let pending: Vec<QARecord> = records
        .iter()
        .filter(|r| {
            r.stage_status == StageStatus::Generated && !judged_ids.contains(r.graphlet_id.as_str())
        })
        .cloned()
        .collect();
    info!("judging {} records ({} already settled)", pending.len(), already.len());

    let catalog = ctx.catalog()?;
    let gateway = ctx.gateway("judge")?;
    let temperature = ctx.config.llm.temperature;
    for chunk in pending.chunks(ctx.config.llm.batch_size) {
        let mut batch = chunk.to_vec();
        judge_batch(&catalog, &gateway, &mut batch, temperature)?;
        append_jsonl(&judged_path, &batch)?;
    }
    manifest.output(&ctx.out_dir, &judged_path);

    let merged = merge_judged(&records, &read_jsonl(&judged_path)?)?;

    let accepted: Vec<&QARecord> =
        merged.iter().filter(|r| r.stage_status == StageStatus::Accepted).collect();
    let accepted_path = qa_dir.join("accepted.jsonl");
    write_jsonl(&accepted_path, &accepted)?;
    manifest.output(&ctx.out_dir, &accepted_path);

    let funnel = FunnelReport::from_records(merged.iter());
    if !funnel.is_conserved() {
        bail!("funnel buckets do not sum to generated; judged checkpoint is inconsistent");
    }
    let funnel_path = qa_dir.join("funnel.tsv");
    funnel.write_tsv(&funnel_path)?;
    manifest.output(&ctx.out_dir, &funnel_path);
    info!(
        "funnel: {} generated, {} accepted ({:.1}%)",
        funnel.generated,
        funnel.accepted,
        100.0 * funnel.acceptance_of_generated()
    );

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Replaces each pre-judge record with its judged version. Every record
/// still marked `Generated` must have one, or the stage is incomplete.
fn merge_judged(records: &[QARecord], judged: &[QARecord]) -> Result<Vec<QARecord>> {
    let by_id: HashMap<&str, &QARecord> =
        judged.iter().map(|r| (r.graphlet_id.as_str(), r)).collect();
    records
        .iter()
        .map(|record| {
            if record.stage_status != StageStatus::Generated {
                return Ok(record.clone());
            }
            match by_id.get(record.graphlet_id.as_str()) {
                Some(j) => Ok((*j).clone()),
                None => bail!("record {} was never judged", record.graphlet_id),
            }
        })
        .collect()
}

/// The post-judge record set: filtered.jsonl with verdicts merged in.
pub fn load_judged_records(qa_dir: &Path) -> Result<Vec<QARecord>> {
    let records: Vec<QARecord> = read_jsonl(&qa_dir.join("filtered.jsonl"))?;
    let judged: Vec<QARecord> = read_jsonl(&qa_dir.join("judged.jsonl"))?;
    merge_judged(&records, &judged)
}

pub fn cmd_retrieve(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("retrieve", ctx.config.seed);
    let corpus_path = &ctx.config.paths.corpus;
    manifest.input(corpus_path)?;
    let documents: Vec<Document> = read_jsonl(corpus_path)?;

    let index_dir = ctx.subdir("index")?;
    let index = Bm25Index::build(&documents)?;
    index.save(&index_dir)?;
    for file in ["lengths.bin", "postings.bin", "manifest.json"] {
        manifest.output(&ctx.out_dir, &index_dir.join(file));
    }
    // Round-trip proves what was written is what later stages will read.
    let index = Bm25Index::load(&index_dir)?;
    info!("indexed {} documents, avg length {:.2}", index.doc_count(), index.avg_len());

    let accepted_path = ctx.out_dir.join("qa/accepted.jsonl");
    if !accepted_path.exists() {
        bail!("missing {}; run the filter stage first", accepted_path.display());
    }
    manifest.input(&accepted_path)?;
    let accepted: Vec<QARecord> = read_jsonl(&accepted_path)?;

    let evidence_dir = ctx.subdir("evidence")?;
    let bundles_path = evidence_dir.join("bundles.jsonl");
    reset_unless_resuming(ctx.resume, &bundles_path)?;
    let existing: Vec<EvidenceBundle> = load_checkpoint(&bundles_path)?;
    let done: HashSet<&str> = existing.iter().map(|b| b.qa_id.as_str()).collect();
    let pending: Vec<QARecord> =
        accepted.iter().filter(|r| !done.contains(r.graphlet_id.as_str())).cloned().collect();
    info!("evidence: {} bundles done, {} pending", done.len(), pending.len());

    let catalog = ctx.catalog()?;
    let gateway = ctx.gateway("evidence")?;
    let temperature = ctx.config.llm.temperature;
    let top_k = ctx.config.retrieval.top_k;
    for chunk in pending.chunks(ctx.config.llm.batch_size) {
        let bundles =
            build_bundles(&catalog, &gateway, &index, &documents, chunk, top_k, temperature)?;
        append_jsonl(&bundles_path, &bundles)?;
    }
    manifest.output(&ctx.out_dir, &bundles_path);

    let bundles: Vec<EvidenceBundle> = read_jsonl(&bundles_path)?;
    let stats = bundle_stats(&bundles);
    let stats_path = evidence_dir.join("stats.tsv");
    stats.write_tsv(&stats_path)?;
    manifest.output(&ctx.out_dir, &stats_path);
    info!(
        "evidence: {:.1}% of bundles have at least two supporting documents",
        100.0 * stats.frac_at_least_two
    );

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

/// Checkpoint row for the rephrase stage: either a kept record or a refusal.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum RephraseRow {
    Accepted {
        #[serde(flatten)]
        record: RephrasedQA,
    },
    Failed {
        qa_id: String,
        format: TargetFormat,
        reason: String,
    },
}

impl RephraseRow {
    fn qa_id(&self) -> &str {
        match self {
            RephraseRow::Accepted { record } => &record.qa_id,
            RephraseRow::Failed { qa_id, .. } => qa_id,
        }
    }
}

pub fn cmd_rephrase(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("rephrase", ctx.config.seed);
    let accepted_path = ctx.out_dir.join("qa/accepted.jsonl");
    let bundles_path = ctx.out_dir.join("evidence/bundles.jsonl");
    for path in [&accepted_path, &bundles_path] {
        if !path.exists() {
            bail!("missing {}; run earlier stages first", path.display());
        }
        manifest.input(path)?;
    }
    let accepted: Vec<QARecord> = read_jsonl(&accepted_path)?;
    let bundles: Vec<EvidenceBundle> = read_jsonl(&bundles_path)?;
    let bundle_by_id: HashMap<&str, &EvidenceBundle> =
        bundles.iter().map(|b| (b.qa_id.as_str(), b)).collect();

    let catalog = ctx.catalog()?;
    let gateway = ctx.gateway("rephrase")?;
    let rephrase_dir = ctx.subdir("rephrase")?;
    let rephrase_config = &ctx.config.rephrase;
    let temperature = ctx.config.llm.temperature;
    let mut all_failures: Vec<RephraseFailure> = Vec::new();

    for target in &rephrase_config.targets {
        let format = target.format;
        let exemplar_path = ctx
            .config
            .exemplar_path(format)
            .with_context(|| format!("no exemplar file configured for {format}"))?;
        manifest.input(exemplar_path)?;
        let bank = ExemplarBank::load(exemplar_path, format)?
            .subset(rephrase_config.exemplar_sample_size, ctx.config.seed)?;

        let outcomes_path = rephrase_dir.join(format!("{format}.outcomes.jsonl"));
        reset_unless_resuming(ctx.resume, &outcomes_path)?;
        let existing: Vec<RephraseRow> = load_checkpoint(&outcomes_path)?;
        let done: HashSet<&str> = existing.iter().map(RephraseRow::qa_id).collect();

        let pending: Vec<(&QARecord, &EvidenceBundle)> = accepted
            .iter()
            .filter(|r| !done.contains(r.graphlet_id.as_str()))
            .map(|record| {
                let bundle =
                    bundle_by_id.get(record.graphlet_id.as_str()).copied().ok_or_else(|| {
                        anyhow::anyhow!("record {} has no evidence bundle", record.graphlet_id)
                    })?;
                Ok((record, bundle))
            })
            .collect::<Result<_>>()?;
        info!("rephrase {format}: {} done, {} pending", done.len(), pending.len());

        for chunk in pending.chunks(ctx.config.llm.batch_size) {
            let outcome = rephrase_batch(
                &catalog,
                &gateway,
                &bank,
                chunk,
                format,
                rephrase_config.exemplars_per_prompt,
                temperature,
            )?;
            let mut rows: Vec<RephraseRow> = Vec::with_capacity(outcome.total());
            for record in outcome.accepted {
                rows.push(RephraseRow::Accepted { record });
            }
            for failure in outcome.failures {
                rows.push(RephraseRow::Failed {
                    qa_id: failure.qa_id,
                    format: failure.format,
                    reason: failure.reason,
                });
            }
            append_jsonl(&outcomes_path, &rows)?;
        }
        manifest.output(&ctx.out_dir, &outcomes_path);

        // Final per-format dataset holds only records that passed validation,
        // in accepted.jsonl order.
        let rows: Vec<RephraseRow> = read_jsonl(&outcomes_path)?;
        let mut kept: HashMap<&str, &RephrasedQA> = HashMap::new();
        for row in &rows {
            match row {
                RephraseRow::Accepted { record } => {
                    kept.insert(record.qa_id.as_str(), record);
                }
                RephraseRow::Failed { qa_id, format, reason } => {
                    all_failures.push(RephraseFailure {
                        qa_id: qa_id.clone(),
                        format: *format,
                        reason: reason.clone(),
                    });
                }
            }
        }
        let ordered: Vec<&RephrasedQA> = accepted
            .iter()
            .filter_map(|r| kept.get(r.graphlet_id.as_str()).copied())
            .collect();
        let dataset_path = rephrase_dir.join(format!("{format}.jsonl"));
        write_jsonl(&dataset_path, &ordered)?;
        manifest.output(&ctx.out_dir, &dataset_path);
        info!("rephrase {format}: kept {} of {}", ordered.len(), rows.len());
    }

    all_failures.sort_by(|a, b| {
        (a.format.as_str(), a.qa_id.as_str()).cmp(&(b.format.as_str(), b.qa_id.as_str()))
    });
    let failures_path = rephrase_dir.join("failures.tsv");
    write_failures_tsv(&all_failures, &failures_path)?;
    manifest.output(&ctx.out_dir, &failures_path);

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

pub fn cmd_stats(ctx: &StageContext) -> Result<()> {
    let mut manifest = ManifestBuilder::new("stats", ctx.config.seed);
    let stats_dir = ctx.subdir("stats")?;
    let qa_dir = ctx.out_dir.join("qa");
    let mut sections = 0usize;

    let census_path = ctx.out_dir.join("graphlets/census.tsv");
    if census_path.exists() {
        manifest.input(&census_path)?;
        let census = read_census(&census_path)?;
        let shape_bars: Vec<(String, u64)> = census
            .iter()
            .filter(|(_, _, sampled)| *sampled > 0)
            .map(|(ordinal, size, sampled)| (format!("s{size}#{ordinal}"), *sampled))
            .collect();
        let shape_svg = stats_dir.join("shape_counts.svg");
        plot::bar_chart("Sampled graphlets per shape", &shape_bars, &shape_svg)?;
        manifest.output(&ctx.out_dir, &shape_svg);
        sections += 1;
    }

    if qa_dir.join("filtered.jsonl").exists() && qa_dir.join("judged.jsonl").exists() {
        manifest.input(&qa_dir.join("filtered.jsonl"))?;
        manifest.input(&qa_dir.join("judged.jsonl"))?;
        let merged = load_judged_records(&qa_dir)?;
        let by_shape = funnel_by_shape(merged.iter());
        let by_shape_path = stats_dir.join("funnel_by_shape.tsv");
        write_funnel_by_shape(&by_shape, &by_shape_path)?;
        manifest.output(&ctx.out_dir, &by_shape_path);

        let funnel = FunnelReport::from_records(merged.iter());
        let funnel_bars = vec![
            ("generated".to_string(), funnel.generated),
            ("parse_failed".to_string(), funnel.parse_failed),
            ("length_culled".to_string(), funnel.length_culled),
            ("judge_rejected".to_string(), funnel.judge_rejected),
            ("judge_unparseable".to_string(), funnel.judge_parse_failed),
            ("accepted".to_string(), funnel.accepted),
        ];
        let funnel_svg = stats_dir.join("funnel.svg");
        plot::bar_chart("Filter funnel", &funnel_bars, &funnel_svg)?;
        manifest.output(&ctx.out_dir, &funnel_svg);
        sections += 1;
    }

    // Rephrase counts are reported only once that stage has run.
    let rephrase_dir = ctx.out_dir.join("rephrase");
    let mut rephrase_rows: Vec<(String, u64, u64)> = Vec::new();
    for target in &ctx.config.rephrase.targets {
        let path = rephrase_dir.join(format!("{}.outcomes.jsonl", target.format));
        if !path.exists() {
            continue;
        }
        manifest.input(&path)?;
        let rows: Vec<RephraseRow> = read_jsonl(&path)?;
        let kept = rows.iter().filter(|r| matches!(r, RephraseRow::Accepted { .. })).count();
        rephrase_rows.push((
            target.format.to_string(),
            kept as u64,
            (rows.len() - kept) as u64,
        ));
    }
    if !rephrase_rows.is_empty() {
        let path = stats_dir.join("rephrase_counts.tsv");
        let mut file = fs::File::create(&path)?;
        writeln!(file, "format\taccepted\tfailed")?;
        for (format, kept, failed) in &rephrase_rows {
            writeln!(file, "{format}\t{kept}\t{failed}")?;
        }
        manifest.output(&ctx.out_dir, &path);
        sections += 1;
    }

    if sections == 0 {
        let notice_path = stats_dir.join("notice.txt");
        fs::write(&notice_path, "no completed stages found; nothing to report\n")?;
        manifest.output(&ctx.out_dir, &notice_path);
        info!("stats: no completed stages found");
    }

    manifest.write(&ctx.out_dir)?;
    Ok(())
}

fn write_funnel_by_shape(by_shape: &BTreeMap<u8, FunnelReport>, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(
        file,
        "shape_ordinal\tgenerated\tparse_failed\tlength_culled\tjudge_rejected\tjudge_parse_failed\taccepted\taccepted_per_generated"
    )?;
    for (ordinal, report) in by_shape {
        writeln!(
            file,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
            ordinal,
            report.generated,
            report.parse_failed,
            report.length_culled,
            report.judge_rejected,
            report.judge_parse_failed,
            report.accepted,
            report.acceptance_of_generated()
        )?;
    }
    Ok(())
}

/// (shape_ordinal, size, sampled_count) rows from a census file.
fn read_census(path: &Path) -> Result<Vec<(u8, u8, u64)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            continue; // header
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            bail!("{}:{}: expected 4 fields", path.display(), idx + 1);
        }
        rows.push((
            fields[0].parse().with_context(|| format!("{}:{}", path.display(), idx + 1))?,
            fields[1].parse().with_context(|| format!("{}:{}", path.display(), idx + 1))?,
            fields[3].parse().with_context(|| format!("{}:{}", path.display(), idx + 1))?,
        ));
    }
    Ok(rows)
}

/// Runs every stage in pipeline order.
pub fn cmd_run(ctx: &StageContext) -> Result<()> {
    cmd_prepare(ctx)?;
    cmd_graphlets(ctx)?;
    cmd_generate(ctx)?;
    cmd_filter(ctx)?;
    cmd_retrieve(ctx)?;
    cmd_rephrase(ctx)?;
    cmd_stats(ctx)?;
    Ok(())
}
