//! Depth evaluation statistics.
//!
//! `d` is the ground truth and `d_star` the prediction. The relative errors
//! divide by the prediction `d*`, not by the ground truth; numbers are not
//! directly comparable with tables that normalize by ground truth.

use std::fmt::Write as _;

use crate::tensor::{Result, Shape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub avg_log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

pub const DELTA_BASE: f64 = 1.25;

impl MetricsReport {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.avg_log10,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        MetricsReport {
            abs_rel: v[0],
            sq_rel: v[1],
            rmse: v[2],
            rmse_log: v[3],
            avg_log10: v[4],
            delta1: v[5],
            delta2: v[6],
            delta3: v[7],
        }
    }

    /// Field-wise mean of per-sample reports.
    pub fn average(reports: &[MetricsReport]) -> MetricsReport {
        let mut acc = [0.0; 8];
        for r in reports {
            acc.iter_mut().zip(r.as_array()).for_each(|(a, v)| *a += v);
        }
        let n = reports.len().max(1) as f64;
        MetricsReport::from_array(acc.map(|a| a / n))
    }
}

/// All eight statistics over every pixel.
pub fn compute_metrics(d_star: &Tensor, d: &Tensor) -> Result<MetricsReport> {
    if d_star.shape() != d.shape() {
        return Err(TensorError::Invalid {
            op: "compute_metrics",
            reason: format!("prediction {} vs ground truth {}", d_star.shape(), d.shape()),
        });
    }
    let pred = d_star.values();
    let gt = d.values();
    if let Some((index, &value)) = pred.iter().chain(gt).enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(TensorError::LogDomain { index, value });
    }
    let n = pred.len() as f64;
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log, mut log10) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    for (&p, &t) in pred.iter().zip(gt) {
        let err = t - p;
        abs_rel += err.abs() / p;
        sq_rel += err * err / p;
        sq += err * err;
        let dl = p.ln() - t.ln();
        sq_log += dl * dl;
        log10 += (t.log10() - p.log10()).abs();
        let ratio = (p / t).max(t / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < DELTA_BASE.powi(k as i32 + 1) {
                *h += 1;
            }
        }
    }
    Ok(MetricsReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        rmse_log: (sq_log / n).sqrt(),
        avg_log10: log10 / n,
        delta1: hits[0] as f64 / n,
        delta2: hits[1] as f64 / n,
        delta3: hits[2] as f64 / n,
    })
}

/// Nearest-neighbour enlargement to `height x width` (integral factors only).
pub fn upsample_prediction(d_star: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let [b, c, h, w] = d_star.shape().dims();
    if !height.is_multiple_of(h) || !width.is_multiple_of(w) || height < h || width < w {
        return Err(TensorError::Invalid {
            op: "upsample_prediction",
            reason: format!("{h}x{w} does not divide {height}x{width}"),
        });
    }
    let (fy, fx) = (height / h, width / w);
    let shape = Shape::new(b, c, height, width)?;
    let src = d_star.values();
    let mut out = Vec::with_capacity(shape.numel());
    for p in 0..b * c {
        for y in 0..height {
            let row = &src[p * h * w + (y / fy) * w..p * h * w + (y / fy + 1) * w];
            out.extend((0..width).map(|x| row[x / fx]));
        }
    }
    Tensor::from_vec(shape, out)
}

const COLUMNS: [&str; 8] = ["Rel", "Sq Rel", "RMSE", "RMSE_log", "log10", "δ1", "δ2", "δ3"];

/// Aligned text table, one row per label, four decimals.
pub fn format_report(reports: &[MetricsReport], labels: &[&str]) -> String {
    assert_eq!(reports.len(), labels.len(), "one label per report");
    let label_width = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).max("Method".len());
    let cell = 9;
    let mut out = String::new();
    let _ = write!(out, "{:<label_width$}", "Method");
    for c in COLUMNS {
        let pad = cell - c.chars().count();
        let _ = write!(out, " | {}{c}", " ".repeat(pad));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width));
    for _ in COLUMNS {
        out.push_str("-|-");
        out.push_str(&"-".repeat(cell));
    }
    out.push('\n');
    for (r, label) in reports.iter().zip(labels) {
        let pad = label_width - label.chars().count();
        let _ = write!(out, "{label}{}", " ".repeat(pad));
        for v in r.as_array() {
            let _ = write!(out, " | {v:>cell$.4}");
        }
        out.push('\n');
    }
    out
}

pub const CSV_HEADER: &str = "label,abs_rel,sq_rel,rmse,rmse_log,avg_log10,delta1,delta2,delta3";

/// Comma-separated form of [`format_report`] with full precision.
pub fn format_report_csv(reports: &[MetricsReport], labels: &[&str]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (r, label) in reports.iter().zip(labels) {
        out.push_str(label);
        for v in r.as_array() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
