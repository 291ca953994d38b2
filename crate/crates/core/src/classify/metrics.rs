//! Confusion counts and the binary diagnostic metrics, with patient as the
//! positive class. A metric whose denominator is zero is reported as
//! undefined rather than 0.

use std::fmt;

use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// The same counts with healthy treated as the positive class.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(preds: &[Label], truth: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} ground-truth labels",
            preds.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(truth) {
        match (p, t) {
            (Label::Patient, Label::Patient) => cm.tp += 1,
            (Label::Patient, Label::Healthy) => cm.fp += 1,
            (Label::Healthy, Label::Healthy) => cm.tn += 1,
            (Label::Healthy, Label::Patient) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// A ratio that may be undefined; serializes as a number or `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "MetricRepr")]
pub struct Metric(pub Option<f64>);

#[derive(Deserialize)]
#[serde(untagged)]
enum MetricRepr {
    Value(f64),
    Text(#[allow(dead_code)] String),
}

impl From<MetricRepr> for Metric {
    fn from(r: MetricRepr) -> Self {
        match r {
            MetricRepr::Value(v) => Metric(Some(v)),
            MetricRepr::Text(_) => Metric(None),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        Metric((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }

    pub fn is_undefined(&self) -> bool {
        self.0.is_none()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: Metric,
    pub sen: Metric,
    pub spe: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub f1: Metric,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("no evaluated samples"));
    }
    let sen = Metric::ratio(cm.tp, cm.tp + cm.fn_);
    let ppv = Metric::ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (ppv.0, sen.0) {
        (Some(p), Some(s)) if p + s > 0.0 => Metric(Some(2.0 * p * s / (p + s))),
        _ => Metric(None),
    };
    Ok(Metrics {
        acc: Metric::ratio(cm.tp + cm.tn, total),
        sen,
        spe: Metric::ratio(cm.tn, cm.tn + cm.fp),
        ppv,
        npv: Metric::ratio(cm.tn, cm.tn + cm.fn_),
        f1,
    })
}

impl Metrics {
    pub fn rows(&self) -> [(&'static str, Metric); 6] {
        [
            ("ACC", self.acc),
            ("SEN", self.sen),
            ("SPE", self.spe),
            ("PPV", self.ppv),
            ("NPV", self.npv),
            ("F1", self.f1),
        ]
    }
}
