//! Per-example gradient statistics: mean gradients, total variance (trace of
//! the covariance) and distances between the mean gradients of different
//! example subsets. Each layer's parameters are also treated as one vector.

use std::ops::Range;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub label: String,
    rows: Vec<Vec<f64>>,
    segments: Vec<Segment>,
}

impl GradientSet {
    /// Wraps explicit rows. With no segments given, the whole vector is one
    /// segment named `all`.
    pub fn from_rows(label: impl Into<String>, rows: Vec<Vec<f64>>, segments: Vec<Segment>) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or_else(|| Error::param("gradient set needs at least one row"))?;
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::param("gradient rows differ in length"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient set".into()));
        }
        let segments = if segments.is_empty() {
            vec![Segment {
                name: "all".into(),
                range: 0..width,
            }]
        } else {
            segments
        };
        let covered: usize = segments.iter().map(|s| s.range.len()).sum();
        if covered != width || segments[0].range.start != 0 || segments.windows(2).any(|w| w[0].range.end != w[1].range.start) {
            return Err(Error::param("segments must tile the gradient vector"));
        }
        Ok(Self {
            label: label.into(),
            rows,
            segments,
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows[0].len()
    }
}

/// Row `j` is the gradient of the loss of example `ids[j]` alone.
pub fn per_example_gradients(model: &Model, ids: &[usize], ds: &Dataset, label: impl Into<String>) -> Result<GradientSet> {
    if ids.is_empty() {
        return Err(Error::param("per-example gradients need at least one id"));
    }
    model.check_input(ds)?;
    if let Some(&bad) = ids.iter().find(|&&id| id >= ds.len()) {
        return Err(Error::param(format!("id {bad} outside dataset of {}", ds.len())));
    }
    let rows = ids
        .iter()
        .map(|&id| {
            let mut row = vec![0.0; model.num_params()];
            model.accumulate_gradient(ds.example(id), 1.0, &mut row);
            row
        })
        .collect();
    let segments = model
        .layers()
        .into_iter()
        .map(|l| Segment {
            name: l.name.to_string(),
            range: l.range,
        })
        .collect();
    GradientSet::from_rows(label, rows, segments)
}

/// Column-wise arithmetic mean.
pub fn mean_gradient(gs: &GradientSet) -> Vec<f64> {
    let n = gs.len() as f64;
    let mut mean = vec![0.0; gs.width()];
    for row in gs.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalVariance {
    pub total: f64,
    pub per_layer: Vec<(String, f64)>,
}

/// Sum over coordinates of the population variance (divide by n).
pub fn total_variance(gs: &GradientSet) -> TotalVariance {
    let n = gs.len() as f64;
    let mean = mean_gradient(gs);
    let coord_var: Vec<f64> = (0..gs.width())
        .map(|j| gs.rows().iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
        .collect();
    let per_layer: Vec<(String, f64)> = gs
        .segments()
        .iter()
        .map(|s| (s.name.clone(), coord_var[s.range.clone()].iter().sum()))
        .collect();
    TotalVariance {
        total: coord_var.iter().sum(),
        per_layer,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub whole: Vec<Vec<f64>>,
    pub per_layer: Vec<(String, Vec<Vec<f64>>)>,
}

impl DistanceMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        Some(self.whole[i][j])
    }
}

/// Pairwise Euclidean distances between mean gradients, for the whole
/// vector and for each segment. All sets must share one layout.
pub fn distance_matrix(sets: &[GradientSet]) -> Result<DistanceMatrix> {
    let first = sets.first().ok_or_else(|| Error::param("distance matrix needs at least one set"))?;
    if sets.iter().any(|s| s.segments() != first.segments()) {
        return Err(Error::param("gradient sets have different layouts"));
    }
    let means: Vec<Vec<f64>> = sets.iter().map(mean_gradient).collect();
    let k = sets.len();
    let pairwise = |range: Range<usize>| -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let d = euclidean(&means[i][range.clone()], &means[j][range.clone()]);
                m[i][j] = d;
                m[j][i] = d;
            }
        }
        m
    };
    Ok(DistanceMatrix {
        labels: sets.iter().map(|s| s.label.clone()).collect(),
        whole: pairwise(0..first.width()),
        per_layer: first
            .segments()
            .iter()
            .map(|s| (s.name.clone(), pairwise(s.range.clone())))
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub label: String,
    pub size: usize,
    pub total_variance: TotalVariance,
    pub mean_gradient_norm: f64,
    pub mean_gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub conditions: Vec<ConditionSummary>,
    pub distances: DistanceMatrix,
}

impl CoherenceReport {
    pub fn condition(&self, label: &str) -> Option<&ConditionSummary> {
        self.conditions.iter().find(|c| c.label == label)
    }
}

/// Gradient statistics for each named id subset plus their distance matrix.
pub fn coherence_report(model: &Model, ds: &Dataset, conditions: &[(String, Vec<usize>)]) -> Result<CoherenceReport> {
    let sets = conditions
        .iter()
        .map(|(label, ids)| per_example_gradients(model, ids, ds, label.clone()))
        .collect::<Result<Vec<_>>>()?;
    let summaries = sets
        .iter()
        .map(|gs| {
            let mean = mean_gradient(gs);
            ConditionSummary {
                label: gs.label.clone(),
                size: gs.len(),
                total_variance: total_variance(gs),
                mean_gradient_norm: mean.iter().map(|v| v * v).sum::<f64>().sqrt(),
                mean_gradient: mean,
            }
        })
        .collect();
    Ok(CoherenceReport {
        conditions: summaries,
        distances: distance_matrix(&sets)?,
    })
}

/// Default subset size for coherence reports: 10% of the data.
pub fn default_subset_size(n: usize) -> usize {
    ((n as f64 * 0.1).round() as usize).clamp(1, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_gaussian_mixture;
    use crate::model::Architecture;

    fn set(label: &str, rows: Vec<Vec<f64>>) -> GradientSet {
        GradientSet::from_rows(label, rows, Vec::new()).unwrap()
    }

    #[test]
    fn mean_of_unit_rows() {
        assert_eq!(mean_gradient(&set("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]])), vec![0.5, 0.5]);
        assert_eq!(mean_gradient(&set("a", vec![vec![3.0, -2.0]])), vec![3.0, -2.0]);
        let a = mean_gradient(&set("a", vec![vec![1.0, 2.0], vec![5.0, 7.0], vec![0.5, 0.0]]));
        let b = mean_gradient(&set("a", vec![vec![0.5, 0.0], vec![1.0, 2.0], vec![5.0, 7.0]]));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn total_variance_values() {
        assert_eq!(total_variance(&set("a", vec![vec![2.0, 3.0]; 4])).total, 0.0);
        assert!((total_variance(&set("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]])).total - 0.5).abs() < 1e-15);
        let rows = vec![vec![1.0, -2.0, 0.5], vec![0.3, 4.0, 1.0], vec![-1.0, 0.0, 2.0]];
        let doubled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 2.0 * v).collect()).collect();
        let tv = total_variance(&set("a", rows)).total;
        let tv2 = total_variance(&set("a", doubled)).total;
        assert!((tv2 - 4.0 * tv).abs() < 1e-12);
    }

    #[test]
    fn distance_between_means() {
        let a = set("a", vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let b = set("b", vec![vec![1.0, 1.0]]);
        let m = distance_matrix(&[a.clone(), b, a]).unwrap();
        assert!((m.whole[0][1] - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.whole[0][2], 0.0);
        assert_eq!(m.whole[1][0], m.whole[0][1]);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = set("a", vec![vec![1.0, 0.0]]);
        let b = GradientSet::from_rows(
            "b",
            vec![vec![1.0, 0.0]],
            vec![
                Segment { name: "x".into(), range: 0..1 },
                Segment { name: "y".into(), range: 1..2 },
            ],
        )
        .unwrap();
        assert!(distance_matrix(&[a, b]).is_err());
        assert!(GradientSet::from_rows("c", vec![vec![1.0]], vec![Segment { name: "x".into(), range: 0..2 }]).is_err());
    }

    #[test]
    fn per_example_rows_average_to_batch_gradient() {
        let ds = generate_gaussian_mixture(3, 4, 10, 1.0, 3).unwrap();
        let model = Model::init(Architecture::Mlp1 { hidden: 5 }, 3, 4, 1);
        let ids = [0, 4, 17, 4, 29];
        let gs = per_example_gradients(&model, &ids, &ds, "x").unwrap();
        assert_eq!(gs.rows()[1], gs.rows()[3]);
        let batch = model.backward(ids.iter().map(|&i| ds.example(i))).unwrap();
        for (a, b) in mean_gradient(&gs).iter().zip(&batch) {
            assert!((a - b).abs() < 1e-14);
        }
        let tv = total_variance(&gs);
        let layer_sum: f64 = tv.per_layer.iter().map(|(_, v)| v).sum();
        assert!((layer_sum - tv.total).abs() < 1e-12);
        assert!(per_example_gradients(&model, &[], &ds, "x").is_err());
    }

    #[test]
    fn report_all_vs_all_is_zero() {
        let ds = generate_gaussian_mixture(2, 3, 10, 1.0, 3).unwrap();
        let model = Model::init(Architecture::LinearSoftmax, 2, 3, 1);
        let all: Vec<usize> = (0..ds.len()).collect();
        let r = coherence_report(
            &model,
            &ds,
            &[("All".to_string(), all.clone()), ("All again".to_string(), all)],
        )
        .unwrap();
        assert_eq!(r.distances.get("All", "All again"), Some(0.0));
        assert_eq!(r.condition("All").unwrap().size, 20);
    }
}
