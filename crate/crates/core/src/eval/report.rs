use std::fmt::Write as _;

use super::interests::InterestReport;
use super::retrieval::{RetrievalKind, RetrievalReport};
use crate::loss::LossWeights;

pub const RETRIEVAL_CSV_HEADER: &str =
    "method,lambda1,lambda2,lambda3,text_to_user,image_to_text,image_to_user,joint";
pub const INTEREST_CSV_HEADER: &str = "method,lambda1,lambda2,lambda3,f1";

fn weights_fields(weights: Option<&LossWeights>) -> String {
    match weights {
        Some(w) => format!("{},{},{}", w.text_user, w.image_text, w.image_user),
        None => "-,-,-".into(),
    }
}

/// One table row; missing tasks print as `-`, as does the joint score
/// unless all three tasks are present.
pub fn retrieval_csv_row(method: &str, weights: Option<&LossWeights>, report: &RetrievalReport) -> String {
    let mut row = format!("{method},{}", weights_fields(weights));
    for t in report.tasks() {
        match t {
            Some(t) => {
                let _ = write!(row, ",{:.2}", t.mean_median_rank);
            }
            None => row.push_str(",-"),
        }
    }
    match super::joint_normalized_metric(report) {
        Ok(j) => {
            let _ = write!(row, ",{j:.5}");
        }
        Err(_) => row.push_str(",-"),
    }
    row
}

/// `key=value` lines, one record per task.
pub fn retrieval_kv_lines(method: &str, report: &RetrievalReport) -> String {
    let mut out = String::new();
    for kind in RetrievalKind::ALL {
        if let Some(t) = report.get(kind) {
            let _ = writeln!(
                out,
                "method={method} task={} mean_median_rank={} gallery={} queries={} normalized={}",
                kind.name(),
                t.mean_median_rank,
                t.gallery_size,
                t.queries,
                t.normalized()
            );
        }
    }
    if let Ok(j) = super::joint_normalized_metric(report) {
        let _ = writeln!(out, "method={method} joint={j}");
    }
    out
}

pub fn interest_csv_row(method: &str, weights: Option<&LossWeights>, report: &InterestReport) -> String {
    format!("{method},{},{:.4}", weights_fields(weights), report.macro_f1)
}

pub fn interest_kv_lines(method: &str, report: &InterestReport) -> String {
    let mut out = String::new();
    for (c, f) in report.classes.iter().zip(&report.per_class) {
        let _ = writeln!(out, "method={method} class={c} f1={f}");
    }
    let _ = writeln!(
        out,
        "method={method} macro_f1={} folds={}",
        report.macro_f1, report.folds
    );
    out
}
