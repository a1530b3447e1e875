//! Binary classification metrics with support-weighted (WA) and unweighted
//! (UA) class averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order used in every table: `WAA, WAP, WAR, WAF1, UAA, UAP, UAR, UAF1`.
pub const METRIC_NAMES: [&str; 8] = ["WAA", "WAP", "WAR", "WAF1", "UAA", "UAP", "UAR", "UAF1"];

/// `counts[actual][predicted]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_predictions(actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::arg(format!(
                "{} labels vs {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (&a, &p) in actual.iter().zip(predicted) {
            if a > 1 || p > 1 {
                return Err(Error::arg(format!("labels must be 0 or 1, got ({}, {})", a, p)));
            }
            cm.counts[a][p] += 1;
        }
        Ok(cm)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.counts[actual][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// The eight table metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub waa: f64,
    pub wap: f64,
    pub war: f64,
    pub waf1: f64,
    pub uaa: f64,
    pub uap: f64,
    pub uar: f64,
    pub uaf1: f64,
}

impl MetricValues {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.waa, self.wap, self.war, self.waf1, self.uaa, self.uap, self.uar, self.uaf1,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        MetricValues {
            waa: a[0],
            wap: a[1],
            war: a[2],
            waf1: a[3],
            uaa: a[4],
            uap: a[5],
            uar: a[6],
            uaf1: a[7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: MetricValues,
    /// Population std over aggregated runs; `None` for a single evaluation.
    pub std: Option<MetricValues>,
    /// Set when some precision, recall or F1 had a zero denominator and was
    /// defined as 0.
    pub degenerate: bool,
}

impl MetricReport {
    /// Eight cells, `mean±std` when a std is present.
    pub fn csv_cells(&self) -> Vec<String> {
        let m = self.values.to_array();
        match &self.std {
            Some(s) => {
                let s = s.to_array();
                m.iter().zip(s).map(|(m, s)| format!("{:.4}±{:.4}", m, s)).collect()
            }
            None => m.iter().map(|v| format!("{:.6}", v)).collect(),
        }
    }
}

fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

/// Per-class precision, recall and F1, then WA (support-weighted) and UA
/// (plain mean) averages. WAA is accuracy, UAA balanced accuracy.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::arg("confusion matrix is empty"));
    }
    let c = cm.counts;
    let mut degenerate = false;
    let mut p = [0.0; 2];
    let mut r = [0.0; 2];
    let mut f = [0.0; 2];
    let mut support = [0.0; 2];
    for k in 0..2 {
        let tp = c[k][k] as f64;
        let predicted = (c[0][k] + c[1][k]) as f64;
        support[k] = (c[k][0] + c[k][1]) as f64;
        p[k] = ratio(tp, predicted, &mut degenerate);
        r[k] = ratio(tp, support[k], &mut degenerate);
        f[k] = ratio(2.0 * p[k] * r[k], p[k] + r[k], &mut degenerate);
    }
    let n = n as f64;
    let wa = |x: [f64; 2]| (support[0] * x[0] + support[1] * x[1]) / n;
    let ua = |x: [f64; 2]| (x[0] + x[1]) / 2.0;
    let values = MetricValues {
        waa: (c[0][0] + c[1][1]) as f64 / n,
        wap: wa(p),
        war: wa(r),
        waf1: wa(f),
        uaa: ua(r),
        uap: ua(p),
        uar: ua(r),
        uaf1: ua(f),
    };
    Ok(MetricReport {
        values,
        std: None,
        degenerate,
    })
}

/// Mean and population std of each metric.
pub fn aggregate_runs(reports: &[MetricReport]) -> Result<MetricReport> {
    if reports.is_empty() {
        return Err(Error::arg("no reports to aggregate"));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; 8];
    for r in reports {
        for (m, v) in mean.iter_mut().zip(r.values.to_array()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 8];
    for r in reports {
        for ((s, v), m) in var.iter_mut().zip(r.values.to_array()).zip(mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.map(|s| (s / n).sqrt());
    Ok(MetricReport {
        values: MetricValues::from_array(mean),
        std: Some(MetricValues::from_array(std)),
        degenerate: reports.iter().any(|r| r.degenerate),
    })
}
