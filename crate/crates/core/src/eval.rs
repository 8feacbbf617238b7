//! Scoring fitted models against simulated ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SkpdError};
use crate::fit::{compose_c, SkpdModel, ZERO_THRESHOLD};
use crate::simgen::GroundTruth;

/// True and false positive rates of the estimated support. A rate is `None`
/// when the truth has no positives (TPR) or no negatives (FPR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportRates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(SkpdError::dim(format!(
            "estimate has {} entries, truth has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn support_rates(estimate: &[f64], truth: &[f64]) -> Result<SupportRates> {
    same_len(estimate, truth)?;
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (e, t) in estimate.iter().zip(truth) {
        let hit = e.abs() >= ZERO_THRESHOLD;
        if t.abs() >= ZERO_THRESHOLD {
            pos += 1;
            tp += usize::from(hit);
        } else {
            neg += 1;
            fp += usize::from(hit);
        }
    }
    let rate = |k: usize, m: usize| (m > 0).then(|| k as f64 / m as f64);
    Ok(SupportRates {
        tpr: rate(tp, pos),
        fpr: rate(fp, neg),
    })
}

/// Squared Euclidean distance.
pub fn mse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    same_len(estimate, truth)?;
    Ok(estimate.iter().zip(truth).map(|(e, t)| (e - t).powi(2)).sum())
}

/// Flips the joint sign of `(theta, c)` when that lowers the summed error.
/// Returns the aligned pair and whether a flip happened.
pub fn sign_align(theta: &[f64], c: &[f64], theta_true: &[f64], c_true: &[f64]) -> Result<(Vec<f64>, Vec<f64>, bool)> {
    let keep = mse(theta, theta_true)? + mse(c, c_true)?;
    let neg_t: Vec<f64> = theta.iter().map(|v| -v).collect();
    let neg_c: Vec<f64> = c.iter().map(|v| -v).collect();
    let flip = mse(&neg_t, theta_true)? + mse(&neg_c, c_true)?;
    if flip < keep {
        Ok((neg_t, neg_c, true))
    } else {
        Ok((theta.to_vec(), c.to_vec(), false))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub replicate: usize,
    pub tpr_c: Option<f64>,
    pub fpr_c: Option<f64>,
    pub tpr_theta: Option<f64>,
    pub fpr_theta: Option<f64>,
    pub mse_c: f64,
    pub mse_theta: f64,
    pub wall_time_seconds: f64,
    pub degenerate: bool,
}

/// Scores a model against the unit-variance ground truth after sign alignment.
pub fn evaluate(model: &SkpdModel, truth: &GroundTruth, method: &str, replicate: usize) -> Result<EvalReport> {
    let c = compose_c(model)?;
    let (theta, c, _) = sign_align(&model.theta, c.data(), &truth.theta_true, truth.c_true.data())?;
    let rc = support_rates(&c, truth.c_true.data())?;
    let rt = support_rates(&theta, &truth.theta_true)?;
    Ok(EvalReport {
        method: method.to_string(),
        replicate,
        tpr_c: rc.tpr,
        fpr_c: rc.fpr,
        tpr_theta: rt.tpr,
        fpr_theta: rt.fpr,
        mse_c: mse(&c, truth.c_true.data())?,
        mse_theta: mse(&theta, &truth.theta_true)?,
        wall_time_seconds: model.wall_time_seconds,
        degenerate: model.degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(m)`; absent for one replicate.
    pub se: Option<f64>,
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let se = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        });
        Some(Self {
            mean,
            se,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    pub tpr_c: Option<MetricSummary>,
    pub fpr_c: Option<MetricSummary>,
    pub tpr_theta: Option<MetricSummary>,
    pub fpr_theta: Option<MetricSummary>,
    pub mse_c: Option<MetricSummary>,
    pub mse_theta: Option<MetricSummary>,
    pub wall_time: Option<MetricSummary>,
    pub median_wall_time: f64,
    pub degenerate_fits: usize,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

/// Mean and standard error of every metric, grouped by method label.
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<MethodSummary>> {
    if reports.is_empty() {
        return Err(SkpdError::InvalidInput("nothing to aggregate".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&EvalReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.method.as_str()).or_default().push(r);
    }
    Ok(groups
        .into_iter()
        .map(|(method, rs)| {
            let opt = |f: fn(&EvalReport) -> Option<f64>| {
                MetricSummary::of(&rs.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let times: Vec<f64> = rs.iter().map(|r| r.wall_time_seconds).collect();
            MethodSummary {
                method: method.to_string(),
                replicates: rs.len(),
                tpr_c: opt(|r| r.tpr_c),
                fpr_c: opt(|r| r.fpr_c),
                tpr_theta: opt(|r| r.tpr_theta),
                fpr_theta: opt(|r| r.fpr_theta),
                mse_c: opt(|r| Some(r.mse_c)),
                mse_theta: opt(|r| Some(r.mse_theta)),
                wall_time: MetricSummary::of(&times),
                median_wall_time: median(&times),
                degenerate_fits: rs.iter().filter(|r| r.degenerate).count(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub batches: usize,
    pub threshold: usize,
    /// Per block, the number of batches whose indicators select it.
    pub counts: Vec<usize>,
    /// Blocks selected in at least `threshold` batches.
    pub consistent: Vec<usize>,
}

pub fn batch_consistency(models: &[SkpdModel], threshold: usize) -> Result<ConsistencyReport> {
    let first = models
        .first()
        .ok_or_else(|| SkpdError::InvalidInput("no models given".into()))?;
    if models.iter().any(|m| m.block_shape != first.block_shape) {
        return Err(SkpdError::dim("models have different block shapes"));
    }
    let mut counts = vec![0; first.block_shape.n_blocks()];
    for m in models {
        for b in m.active_blocks() {
            counts[b] += 1;
        }
    }
    let consistent = (0..counts.len()).filter(|&b| counts[b] >= threshold).collect();
    Ok(ConsistencyReport {
        batches: models.len(),
        threshold,
        counts,
        consistent,
    })
}
