use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ragmark::audit::AuditReport;
use ragmark::corpus::{load_corpus, save_corpus, ExperimentSplit, WatermarkSummary};
use ragmark::exec::Exec;
use ragmark::experiment::{
    audit_split, run_baseline, run_battery, run_sweep, sib_curve, summarize, universal_thresholds, Axis, Case,
    CaseResult, ExperimentConfig, Lab, Method,
};

use crate::config::{FileConfig, Resolved};
use crate::output::{csv, opt, Staging};
use crate::Failure;

const CONFIG_ECHO: &str = "config.toml";

pub struct Ctx {
    pub resolved: Resolved,
    pub force: bool,
    pub exec: Exec,
}

impl Ctx {
    fn cfg(&self) -> &ExperimentConfig {
        &self.resolved.experiment
    }

    fn out(&self, command: &str) -> PathBuf {
        self.resolved
            .out
            .clone()
            .unwrap_or_else(|| Path::new("ragmark-out").join(command))
    }

    fn lab(&self) -> Result<Lab, Failure> {
        Ok(Lab::new(self.cfg().vocab()?)?)
    }

    /// Same context with the experiment fields a loaded split pins down.
    fn pinned_to(&self, split: &ExperimentSplit) -> Resolved {
        let mut r = self.resolved.clone();
        r.experiment.setting = split.setting;
        r.experiment.scale = split.scale;
        r.experiment.seeds = vec![split.seed];
        r
    }
}

fn check_vocab(split: &ExperimentSplit, cfg: &ExperimentConfig, dir: &Path) -> Result<(), Failure> {
    if split.vocab_size != cfg.vocab_size {
        return Err(Failure::data(format!(
            "{}: corpus vocabulary {} differs from configured {}",
            dir.display(),
            split.vocab_size,
            cfg.vocab_size
        )));
    }
    Ok(())
}

pub fn gen(ctx: &Ctx, seed: Option<u64>) -> Result<(), Failure> {
    let seed = seed.unwrap_or(ctx.cfg().seeds[0]);
    let split = ctx.lab()?.split(ctx.cfg(), seed, ctx.exec)?;
    let stage = Staging::begin(&ctx.out("gen"), ctx.force)?;
    save_corpus(&split, stage.dir())?;
    stage.write(CONFIG_ECHO, ctx.pinned_to(&split).echo_toml())?;
    let out = stage.commit()?;
    println!(
        "{}: {} split, seed {seed}: {} corpus documents, {} owner IN, {} owner OUT",
        out.display(),
        split.setting,
        split.corpus.len(),
        split.owner_in.len(),
        split.owner_out.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct WatermarkRecord<'a> {
    config: FileConfig,
    summary: &'a WatermarkSummary,
}

pub fn watermark(ctx: &Ctx, corpus: &Path) -> Result<(), Failure> {
    if !ctx.resolved.salt_given {
        return Err(Failure::usage(
            "watermarking needs a secret salt (--salt or [watermark] salt); the audit guarantee depends on it",
        ));
    }
    let split = load_corpus(corpus)?;
    check_vocab(&split, ctx.cfg(), corpus)?;
    if split.salt_fingerprint.is_some() {
        return Err(Failure::data(format!(
            "{}: split is already watermarked",
            corpus.display()
        )));
    }
    let resolved = ctx.pinned_to(&split);
    let world = ctx.lab()?.watermark(&resolved.experiment, split, ctx.exec)?;

    let stage = Staging::begin(&ctx.out("watermark"), ctx.force)?;
    save_corpus(&world.split, stage.dir())?;
    stage.write_json(
        "watermark.json",
        &WatermarkRecord {
            config: resolved.echo(),
            summary: &world.watermark,
        },
    )?;
    let rows = world
        .watermark
        .docs
        .iter()
        .map(|d| format!("{},{},{},{}", d.doc_id, d.green_ratio, d.facts_retained, d.facts_total));
    stage.write(
        "watermark.csv",
        csv("doc_id,green_ratio,facts_retained,facts_total", rows),
    )?;
    stage.write(CONFIG_ECHO, resolved.echo_toml())?;
    let out = stage.commit()?;
    println!(
        "{}: {} owner documents watermarked, mean green ratio {:.4}, fact retention {:.4}",
        out.display(),
        world.watermark.docs.len(),
        world.watermark.mean_green_ratio,
        world.watermark.fact_retention
    );
    Ok(())
}

/// One audit as stored on disk.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: FileConfig,
    pub seed: u64,
    pub case: Case,
    pub report: AuditReport,
}

fn case_slug(case: Case) -> String {
    case.to_string().to_ascii_lowercase()
}

fn runs_csv(results: &[CaseResult]) -> String {
    let rows = results.iter().map(|r| {
        let s = &r.report.final_score;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.case,
            r.report.decision,
            r.correct(),
            opt(s.z),
            s.log10_p,
            s.green_count,
            s.scored_count,
            r.report.queries_issued,
            r.report.skipped,
            opt(r.report.queries_to_decision)
        )
    });
    csv(
        "seed,case,decision,correct,final_z,log10_p,green,scored,queries_issued,skipped,queries_to_decision",
        rows,
    )
}

fn summary_csv(results: &[CaseResult]) -> String {
    let rows = summarize(results).into_iter().map(|s| {
        format!(
            "{},{},{},{},{},{}",
            s.case,
            s.runs,
            s.correct,
            s.min_log10_p,
            s.max_log10_p,
            opt(s.max_queries_to_decision)
        )
    });
    csv(
        "case,runs,correct,min_log10_p,max_log10_p,max_queries_to_decision",
        rows,
    )
}

fn print_summary(results: &[CaseResult]) {
    println!("case  runs  correct  min_log10_p  max_log10_p  max_queries_to_decision");
    for s in summarize(results) {
        println!(
            "{:<4}  {:>4}  {:>7}  {:>11.3}  {:>11.3}  {:>23}",
            s.case.to_string(),
            s.runs,
            s.correct,
            s.min_log10_p,
            s.max_log10_p,
            opt(s.max_queries_to_decision)
        );
    }
}

pub fn audit(ctx: &Ctx, corpus: Option<&Path>) -> Result<(), Failure> {
    let (resolved, results) = match corpus {
        Some(dir) => {
            let split = load_corpus(dir)?;
            check_vocab(&split, ctx.cfg(), dir)?;
            let expected = ctx.cfg().wm.salt_fingerprint();
            match &split.salt_fingerprint {
                None => {
                    return Err(Failure::data(format!(
                        "{}: split is not watermarked; run `ragmark watermark` first",
                        dir.display()
                    )))
                }
                Some(found) if *found != expected => {
                    return Err(Failure::data(format!(
                        "{}: split was watermarked under salt fingerprint {found}, configured salt has {expected}",
                        dir.display()
                    )))
                }
                Some(_) => {}
            }
            let resolved = ctx.pinned_to(&split);
            let results = Case::ALL
                .iter()
                .map(|&case| {
                    Ok(CaseResult {
                        seed: split.seed,
                        case,
                        report: audit_split(&resolved.experiment, &split, case, ctx.exec)?,
                    })
                })
                .collect::<Result<Vec<_>, Failure>>()?;
            (resolved, results)
        }
        None => (ctx.resolved.clone(), run_battery(&ctx.lab()?, ctx.cfg(), ctx.exec)?),
    };

    let stage = Staging::begin(&ctx.out("audit"), ctx.force)?;
    for r in &results {
        let stem = format!("seed{}-{}", r.seed, case_slug(r.case));
        stage.write_json(
            &format!("report-{stem}.json"),
            &RunRecord {
                config: resolved.echo(),
                seed: r.seed,
                case: r.case,
                report: r.report.clone(),
            },
        )?;
        stage.write(&format!("trace-{stem}.csv"), r.report.trace_csv())?;
    }
    stage.write("runs.csv", runs_csv(&results))?;
    stage.write("summary.csv", summary_csv(&results))?;
    stage.write(CONFIG_ECHO, resolved.echo_toml())?;
    let out = stage.commit()?;
    println!("{}:", out.display());
    print_summary(&results);
    Ok(())
}

#[derive(Serialize)]
struct BaselineRecord<'a> {
    config: FileConfig,
    method: Method,
    rows: &'a [ragmark::experiment::BaselineRow],
    universal_sib_thresholds: Option<usize>,
}

pub fn baseline(ctx: &Ctx, method: Method) -> Result<(), Failure> {
    let cfg = ctx.cfg();
    let lab = ctx.lab()?;
    let rows = run_baseline(&lab, cfg, method, ctx.exec)?;
    let curve = match method {
        Method::Sib => Some(sib_curve(&lab, cfg, ctx.exec)?),
        _ => None,
    };
    let universal = curve.as_deref().map(|c| universal_thresholds(c).len());

    let stage = Staging::begin(&ctx.out("baseline"), ctx.force)?;
    let lines = rows.iter().map(|r| {
        let t = r.sib_thresholds;
        format!(
            "{method},{},{},{},{},{},{},{},{},{},{}",
            cfg.setting,
            cfg.profile,
            r.seed,
            r.case,
            r.score.mean,
            r.threshold,
            r.decision,
            r.correct(),
            opt(t.map(|t| t.similarity)),
            opt(t.map(|t| t.perplexity))
        )
    });
    stage.write(
        "decisions.csv",
        csv(
            "method,setting,profile,seed,case,score,threshold,decision,correct,sib_similarity,sib_perplexity",
            lines,
        ),
    )?;
    if let Some(curve) = &curve {
        let lines = curve
            .iter()
            .map(|p| format!("{},{},{},{}", p.profile, p.similarity, p.perplexity, p.accuracy));
        stage.write("sib_curve.csv", csv("profile,similarity,perplexity,accuracy", lines))?;
    }
    stage.write_json(
        "baseline.json",
        &BaselineRecord {
            config: ctx.resolved.echo(),
            method,
            rows: &rows,
            universal_sib_thresholds: universal,
        },
    )?;
    stage.write(CONFIG_ECHO, ctx.resolved.echo_toml())?;
    let out = stage.commit()?;
    let correct = rows.iter().filter(|r| r.correct()).count();
    println!(
        "{}: {method} {}/{} correct decisions",
        out.display(),
        correct,
        rows.len()
    );
    if let Some(n) = universal {
        println!("SIB grid points perfect under every profile: {n}");
    }
    Ok(())
}

pub fn sweep(ctx: &Ctx, axis: Axis, values: Option<&[f64]>) -> Result<(), Failure> {
    let values = values.map(<[f64]>::to_vec).unwrap_or_else(|| axis.default_values());
    let rows = run_sweep(&ctx.lab()?, ctx.cfg(), axis, &values, ctx.exec)?;

    let stage = Staging::begin(&ctx.out("sweep"), ctx.force)?;
    let lines = rows.iter().map(|r| {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.value,
            r.seed,
            r.case,
            opt(r.final_z),
            r.log10_p,
            r.scored,
            r.decision,
            r.correct,
            opt(r.queries_to_decision)
        )
    });
    stage.write(
        &format!("sweep-{axis}.csv"),
        csv(
            "axis,value,seed,case,final_z,log10_p,scored,decision,correct,queries_to_decision",
            lines,
        ),
    )?;
    stage.write(CONFIG_ECHO, ctx.resolved.echo_toml())?;
    let out = stage.commit()?;
    println!("{}:", out.display());
    println!("{axis:>10}  correct  runs");
    for v in &values {
        let at: Vec<_> = rows.iter().filter(|r| r.value == *v).collect();
        println!(
            "{v:>10}  {:>7}  {:>4}",
            at.iter().filter(|r| r.correct).count(),
            at.len()
        );
    }
    Ok(())
}

/// Re-aggregates the reports of an audit directory into summary and
/// plot-ready trace tables.
pub fn report(ctx: &Ctx, dir: &Path) -> Result<(), Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy();
            name.starts_with("report-") && name.ends_with(".json")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::data(format!("{}: no audit reports found", dir.display())));
    }
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
        let record: RunRecord =
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", p.display())))?;
        records.push(record);
    }
    records.sort_by_key(|r| (r.seed, r.case != Case::In));
    let config = records[0].config.clone();
    let results: Vec<CaseResult> = records
        .into_iter()
        .map(|r| CaseResult {
            seed: r.seed,
            case: r.case,
            report: r.report,
        })
        .collect();

    let stage = Staging::begin(&ctx.out("report"), ctx.force)?;
    let traces = results.iter().flat_map(|r| {
        r.report.trace.iter().map(move |e| {
            format!(
                "{},{},{},{},{},{},{}",
                r.seed,
                r.case,
                e.n,
                e.green,
                e.scored,
                opt(e.z),
                e.log10_p
            )
        })
    });
    stage.write("traces.csv", csv("seed,case,n,green,scored,z,log10_p", traces))?;
    stage.write("runs.csv", runs_csv(&results))?;
    stage.write("summary.csv", summary_csv(&results))?;
    stage.write(
        CONFIG_ECHO,
        toml::to_string(&config).map_err(|e| Failure::internal(e.to_string()))?,
    )?;
    let out = stage.commit()?;
    println!("{}: {} audits", out.display(), results.len());
    print_summary(&results);
    Ok(())
}
