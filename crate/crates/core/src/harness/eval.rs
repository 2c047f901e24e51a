//! Validation-set evaluation.

use std::fmt::Write as _;

use super::model::TrainedModel;
use crate::data::{read_sample, ManifestEntry, SceneSample};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::tensor::{Result, Tensor};

#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub mean: MetricsReport,
    pub per_sample: Vec<(String, MetricsReport)>,
    /// Samples that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    fn from_rows(per_sample: Vec<(String, MetricsReport)>, failures: Vec<(String, String)>) -> Self {
        let reports: Vec<MetricsReport> = per_sample.iter().map(|(_, r)| *r).collect();
        EvalReport {
            mean: MetricsReport::average(&reports),
            per_sample,
            failures,
        }
    }

    /// `sample,abs_rel,...` one line per evaluated sample.
    pub fn per_sample_csv(&self) -> String {
        let mut out = String::from("sample,abs_rel,sq_rel,rmse,rmse_log,avg_log10,delta1,delta2,delta3\n");
        for (label, r) in &self.per_sample {
            out.push_str(label);
            for v in r.as_array() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn label(sample: &SceneSample) -> String {
    format!("{}:{}", sample.family, sample.seed)
}

/// Scores predicted maps against ground truth, pairwise.
pub fn evaluate_predictions(pairs: &[(String, Tensor, Tensor)]) -> Result<EvalReport> {
    let rows = pairs
        .iter()
        .map(|(name, pred, gt)| Ok((name.clone(), compute_metrics(pred, gt)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows, Vec::new()))
}

/// Full-resolution metrics of the model on in-memory samples.
pub fn evaluate(model: &TrainedModel, samples: &[SceneSample]) -> Result<EvalReport> {
    let rows = samples
        .iter()
        .map(|s| {
            let pred = model.predict(&s.rgb, Some(&s.depth))?;
            Ok((label(s), compute_metrics(&pred, &s.depth)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_rows(rows, Vec::new()))
}

/// Like [`evaluate`], reading each sample from disk. Unreadable samples are
/// recorded in `failures` and skipped.
pub fn evaluate_manifest(model: &TrainedModel, entries: &[ManifestEntry]) -> EvalReport {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for e in entries {
        let name = format!("{}:{}", e.family, e.seed);
        let result = read_sample(e)
            .map_err(|err| err.to_string())
            .and_then(|s| {
                let pred = model.predict(&s.rgb, Some(&s.depth)).map_err(|err| err.to_string())?;
                compute_metrics(&pred, &s.depth).map_err(|err| err.to_string())
            });
        match result {
            Ok(r) => rows.push((name, r)),
            Err(reason) => failures.push((name, reason)),
        }
    }
    EvalReport::from_rows(rows, failures)
}

/// Mean per-sample RMSE-log of predicting one constant depth everywhere.
pub fn constant_predictor_error(value: f64, samples: &[SceneSample]) -> Result<f64> {
    let mut acc = 0.0;
    for s in samples {
        let pred = Tensor::full(s.depth.shape(), value);
        acc += compute_metrics(&pred, &s.depth)?.rmse_log;
    }
    Ok(acc / samples.len().max(1) as f64)
}
