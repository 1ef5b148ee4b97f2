use std::path::Path;
use std::sync::Arc;

use medplan_core::corpus::{
    export_tuning_pairs, load_corpus, split_corpus, write_corpus, write_jsonl, CorpusFormat, CorpusSplit, LoadMode,
};
use medplan_core::embedding::EmbeddingGateway;
use medplan_core::eval::{assessment_table_csv, build_eval_cases, plan_table_csv, run_ablation, write_report, AblationConfig};
use medplan_core::generation::{Pipeline, StageOutput};
use medplan_core::retrieval::{KnowledgeBase, PatientContext};
use medplan_core::synth::{synthesize, SynthConfig};
use medplan_core::{Execution, PatientRecord, Stage};
use medplan_service::AppConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{data, usage, CliError, CliResult};
use crate::{Cli, Command, GenerateArgs, Global};

struct Ctx {
    config: AppConfig,
    seed: u64,
    json: bool,
    force: bool,
}

impl Ctx {
    fn new(g: &Global) -> CliResult<Self> {
        let mut config = match &g.config {
            Some(p) => AppConfig::load(p).map_err(usage)?,
            None => AppConfig::default(),
        };
        let seed = g.seed.unwrap_or(config.pipeline.rng_seed);
        config.pipeline.rng_seed = seed;
        Ok(Ctx { config, seed, json: g.json, force: g.force })
    }

    fn guard(&self, out: &Path) -> CliResult<()> {
        if out.exists() && !self.force {
            return Err(CliError::Usage(format!("{} exists; pass --force to replace it", out.display())));
        }
        Ok(())
    }

    fn gateway(&self) -> CliResult<EmbeddingGateway> {
        EmbeddingGateway::from_config(&self.config.pipeline.providers).map_err(usage)
    }

    fn pipeline(&self, kb: KnowledgeBase) -> CliResult<Pipeline> {
        Pipeline::from_config(self.config.pipeline.clone(), Arc::new(kb)).map_err(usage)
    }

    fn emit(&self, human: String, machine: serde_json::Value) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&machine).expect("json output"));
        } else {
            print!("{human}");
        }
    }
}

fn load(path: &Path) -> CliResult<Vec<PatientRecord>> {
    Ok(load_corpus(path, CorpusFormat::Jsonl, LoadMode::Strict)?.0)
}

fn read_split(path: &Path) -> CliResult<CorpusSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("invalid split file {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| data(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Ingest { corpus, out, lenient } => ingest(&ctx, &corpus, &out, lenient),
        Command::Split { corpus, out } => split(&ctx, &corpus, &out),
        Command::Index { corpus, split, out } => index(&ctx, &corpus, split.as_deref(), &out),
        Command::ExportTuning { corpus, split, kb, stage, out } => export(&ctx, &corpus, &split, kb.as_deref(), stage.into(), &out),
        Command::Generate(args) => generate(&ctx, &args),
        Command::Eval { corpus, split, kb, ablation, tuned, out } => {
            eval(&ctx, &corpus, split.as_deref(), kb.as_deref(), ablation.as_deref(), tuned, &out)
        }
        Command::Serve { port, kb, data_dir } => serve(ctx, port, kb, data_dir),
        Command::Synth { out, patients, short_rate } => synth(&ctx, &out, patients, short_rate),
    }
}

fn ingest(ctx: &Ctx, corpus: &Path, out: &Path, lenient: bool) -> CliResult<()> {
    ctx.guard(out)?;
    let mode = if lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let (records, report) = load_corpus(corpus, CorpusFormat::Jsonl, mode)?;
    write_corpus(&records, out)?;
    let mut human = format!("loaded {} of {} notes for {} patients\n", report.loaded, report.read, report.patients);
    for (code, n) in &report.dropped {
        human.push_str(&format!("dropped {n} ({code})\n"));
    }
    for m in &report.malformed {
        human.push_str(&format!("skipped line {}: {}\n", m.line, m.message));
    }
    ctx.emit(human, serde_json::to_value(&report).expect("report json"));
    Ok(())
}

fn split(ctx: &Ctx, corpus: &Path, out: &Path) -> CliResult<()> {
    ctx.guard(out)?;
    let records = load(corpus)?;
    let split = split_corpus(&records, &ctx.config.split, ctx.seed)?;
    write_text(out, &(serde_json::to_string_pretty(&split).expect("split json") + "\n"))?;
    let counts = json!({
        "kb": split.kb_mrns.len(),
        "train": split.train_mrns.len(),
        "test": split.test_mrns.len(),
        "seed": ctx.seed,
    });
    let human = format!(
        "kb {} / train {} / test {} patients (seed {})\n",
        split.kb_mrns.len(),
        split.train_mrns.len(),
        split.test_mrns.len(),
        ctx.seed
    );
    ctx.emit(human, counts);
    Ok(())
}

fn build_kb(ctx: &Ctx, records: &[PatientRecord], split: Option<&CorpusSplit>) -> CliResult<KnowledgeBase> {
    let notes = match split {
        Some(s) => s.kb_notes(records),
        None => records.iter().flat_map(|r| r.visits.iter().cloned()).collect(),
    };
    Ok(KnowledgeBase::build(&notes, &ctx.gateway()?)?)
}

fn index(ctx: &Ctx, corpus: &Path, split: Option<&Path>, out: &Path) -> CliResult<()> {
    ctx.guard(out)?;
    let records = load(corpus)?;
    let split = split.map(read_split).transpose()?;
    let kb = build_kb(ctx, &records, split.as_ref())?;
    kb.save(out)?;
    let (a, p) = (kb.index(Stage::Assessment).len(), kb.index(Stage::Plan).len());
    ctx.emit(format!("indexed {a} assessment and {p} plan documents\n"), json!({ "assessment_docs": a, "plan_docs": p }));
    Ok(())
}

fn export(ctx: &Ctx, corpus: &Path, split: &Path, kb: Option<&Path>, stage: Stage, out: &Path) -> CliResult<()> {
    ctx.guard(out)?;
    let records = load(corpus)?;
    let split = read_split(split)?;
    let kb = match kb {
        Some(dir) => KnowledgeBase::load(dir)?,
        None => build_kb(ctx, &records, Some(&split))?,
    };
    let pipeline = ctx.pipeline(kb)?;
    let (pairs, report) = export_tuning_pairs(&split, &records, &pipeline, stage, Execution::Parallel)?;
    write_jsonl(&pairs, out)?;
    let mut human = format!("wrote {} {stage} pairs to {}\n", report.exported, out.display());
    for s in &report.skipped {
        human.push_str(&format!("skipped {} ({})\n", s.mrn, s.reason));
    }
    ctx.emit(human, serde_json::to_value(&report).expect("report json"));
    Ok(())
}

/// Deterministic view of one stage; leaves out timings.
#[derive(Serialize)]
struct StageSummary<'a> {
    text: &'a str,
    provider_tag: &'a str,
    prompt_fingerprint: &'a str,
    query_text: &'a str,
    doc_ids: Vec<String>,
    self_history: &'a [u32],
}

impl<'a> From<&'a StageOutput> for StageSummary<'a> {
    fn from(o: &'a StageOutput) -> Self {
        StageSummary {
            text: &o.result.text,
            provider_tag: &o.result.provider_tag,
            prompt_fingerprint: &o.result.prompt_fingerprint,
            query_text: &o.bundle.query_text,
            doc_ids: o.bundle.doc_ids(),
            self_history: &o.prompt.history_used,
        }
    }
}

fn generate(ctx: &Ctx, args: &GenerateArgs) -> CliResult<()> {
    let kb = match (&args.kb, &args.kb_corpus) {
        (Some(dir), _) => KnowledgeBase::load(dir)?,
        (None, Some(corpus)) => build_kb(ctx, &load(corpus)?, None)?,
        (None, None) => KnowledgeBase::empty(),
    };
    let history = match &args.history {
        Some(path) => load(path)?.into_iter().find(|r| r.mrn == args.mrn).map(|r| r.visits).unwrap_or_default(),
        None => Vec::new(),
    };
    let patient = PatientContext::new(&args.mrn, history);
    let pipeline = ctx.pipeline(kb)?;
    let refs = |o: &StageOutput| o.bundle.doc_ids().join(", ");
    if args.single_pass {
        let out = pipeline.run_single_pass(&args.subjective, &args.objective, &patient)?;
        let human = format!("mrn: {}\nmethod: S+O→P\nplan: {}\nplan references: {}\n", args.mrn, out.result.text, refs(&out));
        let machine = json!({ "mrn": args.mrn, "method": "single_pass", "plan": StageSummary::from(&out) });
        ctx.emit(human, machine);
    } else {
        let out = pipeline.run_two_stage(&args.subjective, &args.objective, &patient)?;
        let human = format!(
            "mrn: {}\nmethod: S+O→A→P\nassessment: {}\nplan: {}\nassessment references: {}\nplan references: {}\n",
            args.mrn,
            out.assessment.result.text,
            out.plan.result.text,
            refs(&out.assessment),
            refs(&out.plan)
        );
        let machine = json!({
            "mrn": args.mrn,
            "method": "two_stage",
            "assessment": StageSummary::from(&out.assessment),
            "plan": StageSummary::from(&out.plan),
        });
        ctx.emit(human, machine);
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AblationFile {
    configs: Vec<AblationConfig>,
}

fn eval(
    ctx: &Ctx,
    corpus: &Path,
    split: Option<&Path>,
    kb: Option<&Path>,
    ablation: Option<&Path>,
    tuned: bool,
    out: &Path,
) -> CliResult<()> {
    ctx.guard(out)?;
    let records = load(corpus)?;
    let split = match split {
        Some(p) => read_split(p)?,
        None => split_corpus(&records, &ctx.config.split, ctx.seed)?,
    };
    let (cases, skipped) = build_eval_cases(&split, &records);
    if cases.is_empty() {
        return Err(CliError::Data("no eligible cases".into()));
    }
    let kb = match kb {
        Some(dir) => KnowledgeBase::load(dir)?,
        None => build_kb(ctx, &records, Some(&split))?,
    };
    let pipeline = ctx.pipeline(kb)?;
    let configs = match ablation {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            let file: AblationFile = toml::from_str(&text).map_err(|e| usage(format!("invalid ablation file {}: {e}", p.display())))?;
            file.configs
        }
        None => AblationConfig::matrix(pipeline.generator_tag(), tuned),
    };
    let report = run_ablation(&cases, &configs, &pipeline, pipeline.embeddings(), Execution::Parallel);
    write_report(&report, out)?;

    let audit = &report.audit;
    let audit_line = if audit.is_clean() {
        format!("leakage audit: clean ({} bundles)\n", audit.bundles_checked)
    } else {
        format!("leakage audit: {} violations ({} bundles)\n", audit.violations.len(), audit.bundles_checked)
    };
    let human = format!(
        "{} cases, {} skipped\n\n{}\n{}\n{audit_line}",
        report.case_count,
        skipped.len(),
        plan_table_csv(&report),
        assessment_table_csv(&report)
    );
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "slug": r.config.slug(),
                "plan": r.plan.mean,
                "assessment": r.assessment.as_ref().and_then(|a| a.mean),
                "failures": r.failures.len(),
            })
        })
        .collect();
    let machine = json!({ "case_count": report.case_count, "skipped": skipped, "rows": rows, "audit": audit });
    ctx.emit(human, machine);

    if report.rows.iter().all(|r| r.plan.per_case.is_empty()) {
        let first = report.rows.iter().flat_map(|r| &r.failures).next().map(|f| f.error.clone()).unwrap_or_default();
        return Err(CliError::Provider(format!("every case failed: {first}")));
    }
    Ok(())
}

fn serve(mut ctx: Ctx, port: Option<u16>, kb: Option<std::path::PathBuf>, data_dir: Option<std::path::PathBuf>) -> CliResult<()> {
    let svc = &mut ctx.config.service;
    if let Some(port) = port {
        let host = svc.bind.rsplit_once(':').map(|(h, _)| h.to_string()).unwrap_or_else(|| "127.0.0.1".into());
        svc.bind = format!("{host}:{port}");
    }
    if kb.is_some() {
        svc.kb_dir = kb;
    }
    if data_dir.is_some() {
        svc.data_dir = data_dir;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime.block_on(medplan_service::serve(&ctx.config)).map_err(|e| match e {
        medplan_service::StartupError::Config(e) => usage(e),
        medplan_service::StartupError::Bind { .. } => usage(e),
        other => data(other),
    })
}

fn synth(ctx: &Ctx, out: &Path, patients: usize, short_rate: f64) -> CliResult<()> {
    ctx.guard(out)?;
    if !(0.0..=1.0).contains(&short_rate) {
        return Err(usage(format!("--short-rate must lie in [0, 1], got {short_rate}")));
    }
    let records = synthesize(&SynthConfig { patients, short_patient_rate: short_rate, seed: ctx.seed, ..Default::default() });
    write_corpus(&records, out)?;
    let notes: usize = records.iter().map(PatientRecord::len).sum();
    ctx.emit(format!("wrote {notes} notes for {patients} patients\n"), json!({ "patients": patients, "notes": notes }));
    Ok(())
}
