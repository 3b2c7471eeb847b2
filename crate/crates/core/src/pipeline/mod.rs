//! End-to-end commands: cohort generation, training, the benchmark sweep,
//! Bayesian interpretation and report assembly. Every output is a pure
//! function of the configuration and the seed.

mod config;
mod report;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bayes::{
    code_risk_scores, patient_risk_ci, posterior_odds_ratios, train_bbb, write_code_scores, write_odds_ratios,
    BayesianModel, CodeScore, OddsRatio, OR_SAMPLES,
};
use crate::compute::{derive_seed, RngStream};
use crate::data::{
    generate_synthetic, load_cohort, split_by_patient, Cohort, Split, Stream, SyntheticCohort, VitalBinner,
};
use crate::embeddings::mce_pretrain;
use crate::error::{Error, Result};
use crate::metrics::{Estimate, MetricReport, BOOTSTRAP_RESAMPLES};
use crate::models::{build_model, ArchitectureSpec, InputSchema, MceTables};
use crate::training::{predict_subset, train, write_epoch_log, TrainOutcome};

pub use config::{apply_env_overrides, CohortPaths, RunConfig, ENV_PREFIX};
pub use report::{
    benchmark_markdown, code_score_markdown, fmt_estimate, odds_ratio_markdown, write_report, REFERENCE_FOOTER,
};

pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_MD: &str = "benchmark.md";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const SPLIT_HASH_FILE: &str = "split_hash.txt";
pub const ODDS_RATIOS_CSV: &str = "odds_ratios.csv";
pub const ODDS_RATIOS_MD: &str = "odds_ratios.md";
pub const CODE_SCORES_MD: &str = "code_scores.md";
pub const ELBO_CSV: &str = "elbo.csv";
pub const BBB_DIR: &str = "bbb";
pub const REPORT_MD: &str = "report.md";

/// Fixed sub-seeds derived from the run seed.
/// Sub-seed tags mixed into the run seed for each random stream.
pub mod seeds {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const MCE_DP: u64 = 4;
    pub const MCE_MV: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const BAYES: u64 = 7;
    pub const SAMPLING: u64 = 8;
}

pub fn code_scores_csv(stream: Stream) -> String {
    format!("code_scores_{stream}.csv")
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The synthetic cohort of `cfg`, in raw form with its planted codes.
pub fn synthesize(cfg: &RunConfig) -> Result<SyntheticCohort> {
    generate_synthetic(&cfg.synth, cfg.seed)
}

/// Loads the configured cohort files, or generates the synthetic cohort.
pub fn load_run_cohort(cfg: &RunConfig) -> Result<Cohort> {
    match &cfg.cohort {
        Some(p) => load_cohort(&p.stays, &p.events, &VitalBinner::oasis(), &cfg.load),
        None => synthesize(cfg)?.to_cohort(&cfg.load),
    }
}

/// Writes the synthetic cohort files (stays, events, planted codes).
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SyntheticCohort> {
    let syn = synthesize(cfg)?;
    syn.write_dir(out_dir)?;
    Ok(syn)
}

pub fn run_split(cfg: &RunConfig, cohort: &Cohort) -> Result<Split> {
    split_by_patient(cohort, &cfg.split, derive_seed(cfg.seed, seeds::SPLIT))
}

/// Pretrained co-occurrence tables for both streams.
pub fn pretrain_mce(cfg: &RunConfig, cohort: &Cohort) -> Result<MceTables> {
    let dp = mce_pretrain(cohort, Stream::Dp, &cfg.mce, derive_seed(cfg.seed, seeds::MCE_DP))?;
    let mv = mce_pretrain(cohort, Stream::Mv, &cfg.mce, derive_seed(cfg.seed, seeds::MCE_MV))?;
    Ok(MceTables {
        dp: dp.table().clone(),
        mv: mv.table().clone(),
    })
}

/// One trained architecture with its test-split evaluation.
#[derive(Debug, Clone)]
pub struct TrainedArchitecture {
    pub outcome: TrainOutcome,
    pub metrics: MetricReport,
    pub seconds: f64,
}

pub fn train_architecture(
    cfg: &RunConfig,
    cohort: &Cohort,
    split: &Split,
    spec: ArchitectureSpec,
    mce: Option<&MceTables>,
) -> Result<TrainedArchitecture> {
    let start = Instant::now();
    let schema = InputSchema::from_cohort(cohort);
    let mce = if spec.needs_mce() {
        Some(mce.ok_or_else(|| Error::Config(format!("{spec} needs pretrained MCE tables")))?)
    } else {
        None
    };
    let model = build_model(spec, &schema, &cfg.model, derive_seed(cfg.seed, seeds::INIT), mce)?;
    let outcome = train(
        model,
        cohort,
        &split.train,
        &split.val,
        &cfg.train,
        derive_seed(cfg.seed, seeds::TRAIN),
    )?;
    let preds = predict_subset(&outcome.model, cohort, &split.test)?;
    let metrics = MetricReport::evaluate(&preds, BOOTSTRAP_RESAMPLES, derive_seed(cfg.seed, seeds::BOOTSTRAP))?;
    Ok(TrainedArchitecture {
        outcome,
        metrics,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains one architecture, saving its checkpoint, epoch log and test
/// metrics under `out_dir/<name>/`.
pub fn cmd_train(cfg: &RunConfig, spec: ArchitectureSpec, out_dir: &Path) -> Result<TrainedArchitecture> {
    let cohort = load_run_cohort(cfg)?;
    let split = run_split(cfg, &cohort)?;
    let mce = if spec.needs_mce() {
        Some(pretrain_mce(cfg, &cohort)?)
    } else {
        None
    };
    let trained = train_architecture(cfg, &cohort, &split, spec, mce.as_ref())?;
    let dir = out_dir.join(spec.name());
    trained.outcome.model.save(&dir)?;
    write_epoch_log(&trained.outcome.logs, create(&dir.join("epochs.csv"))?)?;
    let m = dir.join("metrics.json");
    serde_json::to_writer_pretty(create(&m)?, &trained.metrics)?;
    write_text(&dir.join(SPLIT_HASH_FILE), &format!("{}\n", split.fingerprint(&cohort)))?;
    Ok(trained)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub architecture: ArchitectureSpec,
    pub metrics: Option<MetricReport>,
    pub n_parameters: usize,
    pub best_epoch: usize,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub split_hash: String,
    pub n_test: usize,
    /// Positive fraction of the test split.
    pub test_prevalence: f64,
}

impl BenchmarkReport {
    pub fn row(&self, spec: ArchitectureSpec) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.architecture == spec)
    }
}

/// Flat CSV record of one benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCsvRow {
    pub architecture: String,
    pub n_parameters: usize,
    pub best_epoch: usize,
    pub ap: Option<f64>,
    pub ap_lo: Option<f64>,
    pub ap_hi: Option<f64>,
    pub auroc: Option<f64>,
    pub auroc_lo: Option<f64>,
    pub auroc_hi: Option<f64>,
    pub f1: Option<f64>,
    pub f1_lo: Option<f64>,
    pub f1_hi: Option<f64>,
    pub sensitivity: Option<f64>,
    pub sensitivity_lo: Option<f64>,
    pub sensitivity_hi: Option<f64>,
    pub specificity: Option<f64>,
    pub specificity_lo: Option<f64>,
    pub specificity_hi: Option<f64>,
    pub error: String,
}

impl BenchmarkCsvRow {
    pub fn from_row(r: &BenchmarkRow) -> Self {
        let get = |f: fn(&MetricReport) -> Estimate| r.metrics.as_ref().map(f);
        let (ap, auroc, f1, sens, spec) = (
            get(|m| m.ap),
            get(|m| m.auroc),
            get(|m| m.f1),
            get(|m| m.sensitivity),
            get(|m| m.specificity),
        );
        Self {
            architecture: r.architecture.name().to_string(),
            n_parameters: r.n_parameters,
            best_epoch: r.best_epoch,
            ap: ap.map(|e| e.point),
            ap_lo: ap.map(|e| e.lo),
            ap_hi: ap.map(|e| e.hi),
            auroc: auroc.map(|e| e.point),
            auroc_lo: auroc.map(|e| e.lo),
            auroc_hi: auroc.map(|e| e.hi),
            f1: f1.map(|e| e.point),
            f1_lo: f1.map(|e| e.lo),
            f1_hi: f1.map(|e| e.hi),
            sensitivity: sens.map(|e| e.point),
            sensitivity_lo: sens.map(|e| e.lo),
            sensitivity_hi: sens.map(|e| e.hi),
            specificity: spec.map(|e| e.point),
            specificity_lo: spec.map(|e| e.lo),
            specificity_hi: spec.map(|e| e.hi),
            error: r.error.clone().unwrap_or_default(),
        }
    }

    pub fn metrics(&self) -> Option<MetricReport> {
        let est = |p: Option<f64>, lo: Option<f64>, hi: Option<f64>| {
            Some(Estimate {
                point: p?,
                lo: lo?,
                hi: hi?,
            })
        };
        Some(MetricReport {
            ap: est(self.ap, self.ap_lo, self.ap_hi)?,
            auroc: est(self.auroc, self.auroc_lo, self.auroc_hi)?,
            f1: est(self.f1, self.f1_lo, self.f1_hi)?,
            sensitivity: est(self.sensitivity, self.sensitivity_lo, self.sensitivity_hi)?,
            specificity: est(self.specificity, self.specificity_lo, self.specificity_hi)?,
        })
    }
}

fn benchmark_one(
    cfg: &RunConfig,
    cohort: &Cohort,
    split: &Split,
    spec: ArchitectureSpec,
    mce: Option<&MceTables>,
) -> BenchmarkRow {
    let start = Instant::now();
    match train_architecture(cfg, cohort, split, spec, mce) {
        Ok(t) => BenchmarkRow {
            architecture: spec,
            metrics: Some(t.metrics),
            n_parameters: t.outcome.model.n_parameters(),
            best_epoch: t.outcome.best_epoch,
            seconds: t.seconds,
            error: None,
        },
        Err(e) => {
            log::warn!("{spec} failed: {e}");
            BenchmarkRow {
                architecture: spec,
                metrics: None,
                n_parameters: 0,
                best_epoch: 0,
                seconds: start.elapsed().as_secs_f64(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Trains every configured architecture on one shared split and evaluates
/// each on the test partition. A failing architecture yields a row with its
/// error; the others still run.
pub fn run_benchmark(cfg: &RunConfig, cohort: &Cohort) -> Result<BenchmarkReport> {
    if cfg.architectures.is_empty() {
        return Err(Error::Config("no architectures requested".into()));
    }
    let split = run_split(cfg, cohort)?;
    let mce = if cfg.architectures.iter().any(|a| a.needs_mce()) {
        Some(pretrain_mce(cfg, cohort)?)
    } else {
        None
    };
    let archs = &cfg.architectures;
    let slots: Vec<Mutex<Option<BenchmarkRow>>> = archs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.jobs.min(archs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&spec) = archs.get(i) else { break };
                let row = benchmark_one(cfg, cohort, &split, spec, mce.as_ref());
                *slots[i].lock().expect("result slot") = Some(row);
            });
        }
    });
    let rows = slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every architecture ran"))
        .collect();
    let n_pos = split.test.iter().filter(|&&i| cohort.stays[i].label == 1).count();
    Ok(BenchmarkReport {
        rows,
        split_hash: split.fingerprint(cohort),
        n_test: split.test.len(),
        test_prevalence: n_pos as f64 / split.test.len().max(1) as f64,
    })
}

/// Writes the benchmark CSV and markdown, the split hash and the wall-clock
/// timings (kept apart so the other files are reproducible byte for byte).
pub fn write_benchmark(report: &BenchmarkReport, out_dir: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(&out_dir.join(BENCHMARK_CSV))?);
    for r in &report.rows {
        wtr.serialize(BenchmarkCsvRow::from_row(r))?;
    }
    wtr.flush().map_err(|e| Error::io(out_dir.join(BENCHMARK_CSV), e))?;
    let rows: Vec<BenchmarkCsvRow> = report.rows.iter().map(BenchmarkCsvRow::from_row).collect();
    write_text(&out_dir.join(BENCHMARK_MD), &benchmark_markdown(&rows))?;
    write_text(&out_dir.join(SPLIT_HASH_FILE), &format!("{}\n", report.split_hash))?;
    let mut t = csv::Writer::from_writer(create(&out_dir.join(TIMINGS_CSV))?);
    t.write_record(["architecture", "seconds"])?;
    for r in &report.rows {
        t.write_record([r.architecture.name().to_string(), format!("{:.3}", r.seconds)])?;
    }
    t.flush().map_err(|e| Error::io(out_dir.join(TIMINGS_CSV), e))?;
    Ok(())
}

pub fn cmd_benchmark(cfg: &RunConfig, out_dir: &Path) -> Result<BenchmarkReport> {
    let cohort = load_run_cohort(cfg)?;
    let report = run_benchmark(cfg, &cohort)?;
    write_benchmark(&report, out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct Interpretation {
    pub model: BayesianModel,
    pub odds_ratios: Vec<OddsRatio>,
    pub dp_scores: Vec<CodeScore>,
    pub mv_scores: Vec<CodeScore>,
    /// Epoch ELBO losses; empty when the posterior was loaded.
    pub epoch_elbo: Vec<f64>,
    pub stay_risk: Option<(u64, Estimate)>,
}

/// Interpretation outputs of a trained posterior over `cohort`.
pub fn interpret_model(
    cfg: &RunConfig,
    cohort: &Cohort,
    model: BayesianModel,
    epoch_elbo: Vec<f64>,
    stay_id: Option<u64>,
) -> Result<Interpretation> {
    let base = RngStream::new(derive_seed(cfg.seed, seeds::SAMPLING));
    let odds_ratios = posterior_odds_ratios(&model, OR_SAMPLES, &base.substream(1))?;
    let dp_scores = code_risk_scores(&model, &cohort.dp_vocab, Stream::Dp, OR_SAMPLES, &mut base.substream(2))?;
    let mv_scores = code_risk_scores(&model, &cohort.mv_vocab, Stream::Mv, OR_SAMPLES, &mut base.substream(3))?;
    let stay_risk = match stay_id {
        Some(id) => {
            let stay = cohort
                .stays
                .iter()
                .find(|s| s.stay_id == id)
                .ok_or_else(|| Error::Data(format!("stay {id} is not in the cohort")))?;
            Some((id, patient_risk_ci(&model, stay, OR_SAMPLES, &mut base.substream(4))?))
        }
        None => None,
    };
    Ok(Interpretation {
        model,
        odds_ratios,
        dp_scores,
        mv_scores,
        epoch_elbo,
        stay_risk,
    })
}

/// Bayes-by-Backprop on the whole cohort (or a saved posterior when
/// `checkpoint` is given), followed by odds ratios, code scores and the
/// optional single-stay credible interval.
pub fn cmd_interpret(
    cfg: &RunConfig,
    out_dir: &Path,
    checkpoint: Option<&Path>,
    stay_id: Option<u64>,
) -> Result<Interpretation> {
    let cohort = load_run_cohort(cfg)?;
    let (model, elbo) = match checkpoint {
        Some(dir) => {
            if !dir.join(crate::models::MANIFEST_FILE).exists() {
                return Err(Error::Config(format!("no posterior checkpoint in {}", dir.display())));
            }
            (BayesianModel::load(dir)?, Vec::new())
        }
        None => {
            let out = train_bbb(&cohort, &cfg.bayes, derive_seed(cfg.seed, seeds::BAYES))?;
            out.model.save(&out_dir.join(BBB_DIR))?;
            (out.model, out.epoch_elbo)
        }
    };
    let interp = interpret_model(cfg, &cohort, model, elbo, stay_id)?;
    write_interpretation(&interp, cfg.top_k, out_dir)?;
    Ok(interp)
}

pub fn write_interpretation(interp: &Interpretation, top_k: usize, out_dir: &Path) -> Result<()> {
    write_odds_ratios(&interp.odds_ratios, create(&out_dir.join(ODDS_RATIOS_CSV))?)?;
    write_text(&out_dir.join(ODDS_RATIOS_MD), &odds_ratio_markdown(&interp.odds_ratios))?;
    write_code_scores(&interp.dp_scores, create(&out_dir.join(code_scores_csv(Stream::Dp)))?)?;
    write_code_scores(&interp.mv_scores, create(&out_dir.join(code_scores_csv(Stream::Mv)))?)?;
    let md = code_score_markdown(
        &[(Stream::Dp, &interp.dp_scores), (Stream::Mv, &interp.mv_scores)],
        top_k,
    );
    write_text(&out_dir.join(CODE_SCORES_MD), &md)?;
    if !interp.epoch_elbo.is_empty() {
        let mut w = csv::Writer::from_writer(create(&out_dir.join(ELBO_CSV))?);
        w.write_record(["epoch", "elbo_loss"])?;
        for (i, l) in interp.epoch_elbo.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format!("{l}")])?;
        }
        w.flush().map_err(|e| Error::io(out_dir.join(ELBO_CSV), e))?;
    }
    Ok(())
}

/// Assembles `report.md` from whichever result files exist in `out_dir`.
pub fn cmd_report(out_dir: &Path, top_k: usize) -> Result<PathBuf> {
    let text = write_report(out_dir, top_k)?;
    let path = out_dir.join(REPORT_MD);
    write_text(&path, &text)?;
    Ok(path)
}

#[cfg(test)]
mod tests;
