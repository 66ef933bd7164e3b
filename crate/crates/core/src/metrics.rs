//! Accuracy, equal error rate and confusion matrices.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Matrix, Real};

/// How the EER operating point is read off the threshold sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EerMethod {
    /// `(FAR + FRR) / 2` at the midpoint threshold where `|FAR − FRR|` is smallest.
    #[default]
    Midpoint,
    /// Linear interpolation between the two sweep points that bracket `FAR = FRR`.
    Interpolated,
}

/// Index of the largest entry in each row; ties go to the smaller index.
pub fn argmax_rows<T: Real>(probs: &Matrix<T>) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One sweep point: false accepts and false rejects as counts.
#[derive(Clone, Copy)]
struct Point {
    fa: u64,
    fr: u64,
}

/// FA/FR counts at `-∞`, at each midpoint between sorted unique scores, and at `+∞`.
fn sweep(scores: &[f64], positive: &[bool]) -> Result<(Vec<Point>, u64, u64)> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!("{} scores for {} flags", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::EerUndefined);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = Vec::with_capacity(scores.len() + 1);
    // Threshold below every score: everything is accepted.
    let (mut fa, mut fr) = (n_neg, 0);
    points.push(Point { fa, fr });
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        while i < order.len() && scores[order[i]] == v {
            if positive[order[i]] {
                fr += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        // Threshold just above `v` (the next midpoint, or +∞ after the last value).
        points.push(Point { fa, fr });
    }
    Ok((points, n_pos, n_neg))
}

/// Binary equal error rate over a midpoint threshold sweep.
///
/// FAR counts negatives scoring at or above the threshold, FRR counts positives
/// below it. Fails with [`Error::EerUndefined`] unless both classes are present.
pub fn eer_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    eer_binary_with(scores, positive, EerMethod::Midpoint)
}

pub fn eer_binary_with(scores: &[f64], positive: &[bool], method: EerMethod) -> Result<f64> {
    let (points, n_pos, n_neg) = sweep(scores, positive)?;
    let far = |p: &Point| p.fa as f64 / n_neg as f64;
    let frr = |p: &Point| p.fr as f64 / n_pos as f64;
    match method {
        EerMethod::Midpoint => {
            // Compare |FAR − FRR| and FAR + FRR exactly on the common denominator.
            let gap = |p: &Point| (p.fa * n_pos).abs_diff(p.fr * n_neg);
            let total = |p: &Point| p.fa * n_pos + p.fr * n_neg;
            let best = points
                .iter()
                .min_by(|a, b| match gap(a).cmp(&gap(b)) {
                    Ordering::Equal => total(a).cmp(&total(b)),
                    o => o,
                })
                .expect("sweep is never empty");
            Ok((far(best) + frr(best)) / 2.0)
        }
        EerMethod::Interpolated => {
            let diff = |p: &Point| far(p) - frr(p);
            let k = points.iter().position(|p| diff(p) <= 0.0).expect("last point has FAR = 0");
            let (a, b) = (&points[k - 1], &points[k]);
            let (da, db) = (diff(a), diff(b));
            if db == 0.0 {
                return Ok(far(b));
            }
            let t = da / (da - db);
            Ok(far(a) + t * (far(b) - far(a)))
        }
    }
}

/// Per-class one-vs-all EER on the probability columns, and their unweighted mean.
pub fn eer_ova<T: Real>(probs: &Matrix<T>, labels: &[usize], method: EerMethod) -> Result<(Vec<f64>, f64)> {
    if labels.len() != probs.rows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), probs.rows())));
    }
    let c = probs.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange { label: bad, classes: c });
    }
    let mut per_class = Vec::with_capacity(c);
    for class in 0..c {
        let flags: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        if !flags.iter().any(|&f| f) {
            return Err(Error::ClassAbsent(class));
        }
        let scores: Vec<f64> = (0..probs.rows()).map(|r| probs[(r, class)].as_f64()).collect();
        per_class.push(eer_binary_with(&scores, &flags, method)?);
    }
    let avg = per_class.iter().sum::<f64>() / c as f64;
    Ok((per_class, avg))
}

/// `out[i][j]` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::LabelOutOfRange {
                label: p.max(l),
                classes,
            });
        }
        m[l][p] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub eer_avg: f64,
    pub eer_per_class: Vec<f64>,
    pub eer_method: EerMethod,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Full report from class probabilities. `class_names` may be empty.
    pub fn from_probs<T: Real>(
        probs: &Matrix<T>,
        labels: &[usize],
        class_names: &[String],
        method: EerMethod,
    ) -> Result<Self> {
        let preds = argmax_rows(probs);
        let accuracy = accuracy(&preds, labels)?;
        let (eer_per_class, eer_avg) = eer_ova(probs, labels, method)?;
        let confusion = confusion_matrix(&preds, labels, probs.cols())?;
        let class_names = if class_names.is_empty() {
            (0..probs.cols()).map(|c| format!("class_{c}")).collect()
        } else if class_names.len() == probs.cols() {
            class_names.to_vec()
        } else {
            return Err(Error::Shape(format!("{} class names for {} classes", class_names.len(), probs.cols())));
        };
        Ok(MetricsReport {
            n: labels.len(),
            accuracy,
            eer_avg,
            eer_per_class,
            eer_method: method,
            class_names,
            confusion,
        })
    }

    /// `acc=XX.XX% eer=YY.YY%`.
    pub fn summary_line(&self) -> String {
        format!("acc={:.2}% eer={:.2}%", 100.0 * self.accuracy, 100.0 * self.eer_avg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }

    /// Confusion matrix with a header row and a leading column of class names.
    pub fn confusion_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(&quote(name));
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(&quote(name));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
