//! CSV tables for experiment results.
//!
//! Wall-clock time is deliberately absent so identical runs give identical
//! bytes.

use std::fmt::Write;

use crate::metrics::METRIC_NAMES;
use crate::train::{ExperimentResult, FoldResult};

fn header(lead: &[&str]) -> String {
    let mut cols: Vec<&str> = lead.to_vec();
    cols.extend(METRIC_NAMES);
    cols.join(",") + "\n"
}

/// One fold's test metrics.
pub fn fold_csv(fold: &FoldResult) -> String {
    let mut out = header(&["fold", "repeat", "best_epoch", "epochs_trained"]);
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        fold.fold,
        fold.repeat,
        fold.best_epoch,
        fold.epochs_trained,
        fold.report.csv_cells().join(",")
    );
    out
}

/// One row per experiment: strategy, number of pooled runs, then the eight
/// metrics as `mean±std` (plain values for a single run).
pub fn aggregate_csv(results: &[ExperimentResult]) -> String {
    let mut out = header(&["fusion", "runs"]);
    for r in results {
        let _ = writeln!(out, "{},{},{}", r.fusion, r.folds.len(), r.aggregate.csv_cells().join(","));
    }
    out
}

/// A cross-corpus result row.
pub struct CrossCorpusRow<'a> {
    pub train: &'a str,
    pub test: &'a str,
    pub result: &'a ExperimentResult,
}

pub fn cross_corpus_csv(rows: &[CrossCorpusRow<'_>]) -> String {
    let mut out = header(&["train", "test", "fusion"]);
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.train,
            r.test,
            r.result.fusion,
            r.result.aggregate.csv_cells().join(",")
        );
    }
    out
}
