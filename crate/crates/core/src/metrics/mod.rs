//! Confusion matrices, per-class precision/recall/F1 and the class-weighted F1.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// `K × K` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for a {classes}×{classes} confusion matrix",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, g: usize) -> u64 {
        self.counts[g * self.classes..(g + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, g: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, g)).sum()
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        counts[t * classes + p] += 1;
    }
    Ok(Confusion { classes, counts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision, recall and F1 per class; every 0/0 is taken as 0.
pub fn per_class_prf(confusion: &Confusion) -> Vec<ClassScores> {
    (0..confusion.classes)
        .map(|g| {
            let tp = confusion.get(g, g) as f64;
            let precision = ratio(tp, confusion.col_sum(g) as f64);
            let recall = ratio(tp, confusion.row_sum(g) as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassScores {
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Class weights `N_g / N_total` from the confusion row sums.
pub fn class_weights(confusion: &Confusion) -> Result<Vec<f64>> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyDataset("confusion matrix has no samples".into()));
    }
    Ok((0..confusion.classes)
        .map(|g| confusion.row_sum(g) as f64 / total as f64)
        .collect())
}

/// `Σ_g w_g · f1_g` with `w_g` the true-class share.
pub fn weighted_f1(confusion: &Confusion) -> Result<f64> {
    weighted_sum(confusion)
}

// `f1_g = 2·tp_g / (N_g + P_g)`, so the weighted sum is a ratio of integers.
// Summing it exactly and rounding once keeps a perfect matrix at exactly 1
// and the result independent of class order.
fn weighted_sum(confusion: &Confusion) -> Result<f64> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyDataset("confusion matrix has no samples".into()));
    }
    let mut acc = BigRational::zero();
    for g in 0..confusion.classes {
        let tp = confusion.get(g, g);
        if tp == 0 {
            continue;
        }
        let n_g = confusion.row_sum(g);
        let den = BigInt::from(n_g) + BigInt::from(confusion.col_sum(g));
        acc += BigRational::new(BigInt::from(2u8) * BigInt::from(n_g) * BigInt::from(tp), den);
    }
    let f = acc / BigInt::from(total);
    f.to_f64()
        .ok_or_else(|| Error::Internal("weighted F1 does not fit an f64".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub per_class: Vec<ClassScores>,
    pub weights: Vec<f64>,
    pub weighted_f1: f64,
}

impl MetricsReport {
    pub fn new(confusion: Confusion) -> Result<Self> {
        let weights = class_weights(&confusion)?;
        let per_class = per_class_prf(&confusion);
        let weighted_f1 = weighted_sum(&confusion)?;
        Ok(Self {
            confusion,
            per_class,
            weights,
            weighted_f1,
        })
    }

    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        Self::new(confusion_matrix(truth, predicted, classes)?)
    }

    /// Parses the text produced by `Display`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("malformed metrics report: {what}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut classes = None;
        for line in lines.by_ref() {
            if let Some(v) = line.strip_prefix("classes ") {
                classes = Some(v.parse::<usize>().map_err(|_| bad("class count"))?);
            }
            if line == "confusion" {
                break;
            }
        }
        let classes = classes.ok_or_else(|| bad("missing class count"))?;
        let mut counts = Vec::with_capacity(classes * classes);
        for line in lines.take(classes) {
            for cell in line.split_whitespace() {
                counts.push(cell.parse().map_err(|_| bad("confusion cell"))?);
            }
        }
        Self::new(Confusion::from_counts(classes, counts)?)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "weighted_f1 {:.6}", self.weighted_f1)?;
        writeln!(f, "samples {}", self.confusion.total())?;
        writeln!(f, "classes {}", self.confusion.classes)?;
        for (g, (s, w)) in self.per_class.iter().zip(&self.weights).enumerate() {
            writeln!(
                f,
                "class {g} weight={w:.6} precision={:.6} recall={:.6} f1={:.6}",
                s.precision, s.recall, s.f1
            )?;
        }
        writeln!(f, "confusion")?;
        for row in self.confusion.counts.chunks(self.confusion.classes) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(f, "{}", cells.join(" "))?;
        }
        Ok(())
    }
}
