use std::fmt::Write as _;
use std::path::Path;

use crate::bayes::{CodeScore, OddsRatio};
use crate::data::{static_index, Stream, STATIC_LABELS};
use crate::error::{Error, Result};
use crate::metrics::Estimate;

use super::{code_scores_csv, BenchmarkCsvRow, BENCHMARK_CSV, ODDS_RATIOS_CSV, SPLIT_HASH_FILE};

/// Published full-cohort reference values, quoted for context only.
pub const REFERENCE_FOOTER: &str = "Reference (MIMIC-III, not reproducible here): \
the ODE + RNN architecture reached AP 0.331 and the logistic regression baseline AP 0.257.";

/// `point [lo,hi]` with three decimals.
pub fn fmt_estimate(e: &Estimate) -> String {
    format!("{:.3} [{:.3},{:.3}]", e.point, e.lo, e.hi)
}

pub fn benchmark_markdown(rows: &[BenchmarkCsvRow]) -> String {
    let mut s = String::from("| Architecture | AP | AUROC | F1 | Sensitivity | Specificity |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for r in rows {
        let name = r
            .architecture
            .parse::<crate::models::ArchitectureSpec>()
            .map(|a| a.label().to_string())
            .unwrap_or_else(|_| r.architecture.clone());
        match r.metrics() {
            Some(m) => {
                let cells: Vec<String> = m.entries().iter().map(|(_, e)| fmt_estimate(e)).collect();
                let _ = writeln!(s, "| {name} | {} |", cells.join(" | "));
            }
            None => {
                let _ = writeln!(s, "| {name} | failed: {} | | | | |", r.error);
            }
        }
    }
    let _ = write!(
        s,
        "\nMean with 95% bootstrap confidence interval over patients.\n\n{REFERENCE_FOOTER}\n"
    );
    s
}

fn covariate_label(name: &str) -> String {
    match (static_index(name), name) {
        (Some(i), _) => STATIC_LABELS[i].to_string(),
        (None, "score_dp") => "Diagnoses and procedures score".into(),
        (None, "score_mv") => "Medications and vitals score".into(),
        _ => name.to_string(),
    }
}

pub fn odds_ratio_markdown(rows: &[OddsRatio]) -> String {
    let mut s = String::from("| Covariate | Odds ratio [95% CI] | exp(mean weight) |\n|---|---|---|\n");
    for r in rows {
        let e = Estimate {
            point: r.or_mean,
            lo: r.or_lo,
            hi: r.or_hi,
        };
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} |",
            covariate_label(&r.covariate),
            fmt_estimate(&e),
            r.or_at_mean
        );
    }
    s
}

pub fn code_score_markdown(tables: &[(Stream, &Vec<CodeScore>)], top_k: usize) -> String {
    let mut s = String::new();
    for (stream, rows) in tables {
        let title = match stream {
            Stream::Dp => "Diagnoses and procedures",
            Stream::Mv => "Medications and vitals",
        };
        let _ = write!(
            s,
            "### {title}: top {top_k} codes\n\n| Rank | Code | Score [95% CI] |\n|---|---|---|\n"
        );
        for (i, r) in rows.iter().take(top_k).enumerate() {
            let e = Estimate {
                point: r.score_mean,
                lo: r.score_lo,
                hi: r.score_hi,
            };
            let _ = writeln!(s, "| {} | {} | {} |", i + 1, r.code, fmt_estimate(&e));
        }
        s.push('\n');
    }
    s
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<Vec<T>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(Some(rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>()?))
}

/// Markdown report built from the result files present in `dir`.
pub fn write_report(dir: &Path, top_k: usize) -> Result<String> {
    let mut s = String::from("# Readmission risk report\n\n");
    let mut found = false;
    if let Some(rows) = read_rows::<BenchmarkCsvRow>(&dir.join(BENCHMARK_CSV))? {
        found = true;
        s.push_str("## Model comparison\n\n");
        s.push_str(&benchmark_markdown(&rows));
        if let Ok(h) = std::fs::read_to_string(dir.join(SPLIT_HASH_FILE)) {
            let _ = writeln!(s, "\nSplit hash: `{}`", h.trim());
        }
        s.push('\n');
    }
    if let Some(rows) = read_rows::<OddsRatio>(&dir.join(ODDS_RATIOS_CSV))? {
        found = true;
        s.push_str("## Odds ratios\n\n");
        s.push_str(&odds_ratio_markdown(&rows));
        s.push('\n');
    }
    let mut tables = Vec::new();
    for stream in Stream::BOTH {
        if let Some(rows) = read_rows::<CodeScore>(&dir.join(code_scores_csv(stream)))? {
            tables.push((stream, rows));
        }
    }
    if !tables.is_empty() {
        found = true;
        s.push_str("## Code risk scores\n\n");
        let refs: Vec<(Stream, &Vec<CodeScore>)> = tables.iter().map(|(st, r)| (*st, r)).collect();
        s.push_str(&code_score_markdown(&refs, top_k));
    }
    if !found {
        return Err(Error::Data(format!("no result files found in {}", dir.display())));
    }
    Ok(s)
}
