//! Confusion counts and the binary change-detection metrics derived from them.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    Iou,
    Kappa,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Accuracy,
        Metric::Iou,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::Kappa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::F1 => "F1",
            Metric::Iou => "IoU",
            Metric::Kappa => "Kappa",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A metric whose denominator vanished for the given counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{metric} undefined: {reason}")]
pub struct UndefinedMetric {
    pub metric: Metric,
    pub reason: String,
}

pub type MetricResult = std::result::Result<f64, UndefinedMetric>;

fn ratio(metric: Metric, num: u64, den: u64, reason: &'static str) -> MetricResult {
    if den == 0 {
        Err(UndefinedMetric {
            metric,
            reason: reason.into(),
        })
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Counts over two equally long 0/1 slices.
    pub fn from_slices(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, reference {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = [0u64; 4];
        for (&p, &t) in pred.iter().zip(truth) {
            c[((p != 0) as usize) << 1 | (t != 0) as usize] += 1;
        }
        Ok(Self {
            tn: c[0],
            fn_: c[1],
            fp: c[2],
            tp: c[3],
        })
    }

    pub fn accumulate(pred: &BinaryMask, truth: &BinaryMask) -> Result<Self> {
        if !pred.same_shape(truth) {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, reference {}x{}",
                pred.height(),
                pred.width(),
                truth.height(),
                truth.width()
            )));
        }
        Self::from_slices(pred.data(), truth.data())
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> MetricResult {
        ratio(Metric::Accuracy, self.tp + self.tn, self.total(), "no pixels compared")
    }

    pub fn precision(&self) -> MetricResult {
        ratio(Metric::Precision, self.tp, self.tp + self.fp, "no positive predictions")
    }

    pub fn recall(&self) -> MetricResult {
        ratio(Metric::Recall, self.tp, self.tp + self.fn_, "no positive reference pixels")
    }

    pub fn f1(&self) -> MetricResult {
        ratio(
            Metric::F1,
            2 * self.tp,
            2 * self.tp + self.fp + self.fn_,
            "no positives predicted or referenced",
        )
    }

    pub fn iou(&self) -> MetricResult {
        ratio(
            Metric::Iou,
            self.tp,
            self.tp + self.fp + self.fn_,
            "no positives predicted or referenced",
        )
    }

    /// Observed agreement and chance agreement from the marginals.
    pub fn agreement(&self) -> Option<(f64, f64)> {
        let n = self.total();
        if n == 0 {
            return None;
        }
        let n = n as f64;
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let po = (tp + tn) / n;
        let pe = ((tp + fp) / n) * ((tp + fn_) / n) + ((fn_ + tn) / n) * ((fp + tn) / n);
        Some((po, pe))
    }

    pub fn kappa(&self) -> MetricResult {
        let (po, pe) = self.agreement().ok_or(UndefinedMetric {
            metric: Metric::Kappa,
            reason: "no pixels compared".into(),
        })?;
        if pe == 1.0 {
            return Err(UndefinedMetric {
                metric: Metric::Kappa,
                reason: "chance agreement is 1 (single class in both maps)".into(),
            });
        }
        Ok((po - pe) / (1.0 - pe))
    }

    pub fn metric(&self, m: Metric) -> MetricResult {
        match m {
            Metric::Accuracy => self.accuracy(),
            Metric::Precision => self.precision(),
            Metric::Recall => self.recall(),
            Metric::F1 => self.f1(),
            Metric::Iou => self.iou(),
            Metric::Kappa => self.kappa(),
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

impl<'a> Sum<&'a ConfusionCounts> for ConfusionCounts {
    fn sum<I: Iterator<Item = &'a Self>>(iter: I) -> Self {
        iter.copied().sum()
    }
}

/// One evaluated model: counts plus every metric (None where undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub threshold: Option<f32>,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub kappa: Option<f64>,
    pub undefined: Vec<UndefinedMetric>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, threshold: Option<f32>, counts: ConfusionCounts) -> Self {
        let mut undefined = Vec::new();
        let mut get = |m: Metric| match counts.metric(m) {
            Ok(v) => Some(v),
            Err(e) => {
                undefined.push(e);
                None
            }
        };
        let accuracy = get(Metric::Accuracy);
        let iou = get(Metric::Iou);
        let precision = get(Metric::Precision);
        let recall = get(Metric::Recall);
        let f1 = get(Metric::F1);
        let kappa = get(Metric::Kappa);
        Self {
            name: name.into(),
            threshold,
            counts,
            accuracy,
            iou,
            precision,
            recall,
            f1,
            kappa,
            undefined,
        }
    }

    pub fn value(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => self.accuracy,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
            Metric::F1 => self.f1,
            Metric::Iou => self.iou,
            Metric::Kappa => self.kappa,
        }
    }
}

/// Aligned text table, metrics as percentages with two decimals.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut header = vec!["Model".to_string(), "Threshold".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.name.clone(),
                r.threshold.map_or_else(|| "-".to_string(), |t| format!("{t:.2}")),
            ];
            row.extend(
                Metric::ALL
                    .iter()
                    .map(|&m| r.value(m).map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", v * 100.0))),
            );
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        parts.join("  ")
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
