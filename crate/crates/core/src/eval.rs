//! Metrics, shot-group analysis, label-distribution reports and embedding
//! export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graphdata::Dataset;
use crate::trainer::ModelState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotGroup {
    Many,
    Med,
    Few,
}

impl ShotGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ShotGroup::Many => "many",
            ShotGroup::Med => "med",
            ShotGroup::Few => "few",
        }
    }
}

/// Training-count cutoffs: `many` at or above, `few` at or below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    pub many: usize,
    pub few: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self { many: 20, few: 5 }
    }
}

pub fn shot_split(class_counts: &[usize], thresholds: ShotThresholds) -> Vec<ShotGroup> {
    class_counts
        .iter()
        .map(|&n| {
            if n >= thresholds.many {
                ShotGroup::Many
            } else if n <= thresholds.few {
                ShotGroup::Few
            } else {
                ShotGroup::Med
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_acc: f64,
    /// Mean of the defined per-class accuracies.
    pub balanced_acc: f64,
    /// `None` for classes absent from the evaluation set.
    pub per_class_acc: Vec<Option<f64>>,
    pub many_acc: Option<f64>,
    pub med_acc: Option<f64>,
    pub few_acc: Option<f64>,
    /// `confusion[true][predicted]`.
    #[serde(skip)]
    pub confusion: Vec<Vec<usize>>,
}

fn mean_defined<'a>(vals: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], truth: &[usize], groups: &[ShotGroup]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::InvalidArgument("cannot evaluate an empty set".into()));
        }
        if predicted.len() != truth.len() {
            return Err(Error::shape("evaluate", &[predicted.len()], &[truth.len()]));
        }
        let c = groups.len();
        let mut confusion = vec![vec![0usize; c]; c];
        for (&p, &y) in predicted.iter().zip(truth) {
            if p >= c || y >= c {
                return Err(Error::InvalidArgument(format!("label {} outside {c} classes", p.max(y))));
            }
            confusion[y][p] += 1;
        }
        let per_class_acc: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[k] as f64 / n as f64)
            })
            .collect();
        let trace: usize = (0..c).map(|k| confusion[k][k]).sum();
        let group_acc = |g: ShotGroup| mean_defined(per_class_acc.iter().zip(groups).filter(|(_, &x)| x == g).map(|(a, _)| a));
        Ok(Self {
            overall_acc: trace as f64 / truth.len() as f64,
            balanced_acc: mean_defined(per_class_acc.iter()).unwrap_or(0.0),
            many_acc: group_acc(ShotGroup::Many),
            med_acc: group_acc(ShotGroup::Med),
            few_acc: group_acc(ShotGroup::Few),
            per_class_acc,
            confusion,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// `class,group,train_count,test_count,correct,accuracy`.
    pub fn per_class_csv(&self, groups: &[ShotGroup], train_counts: &[usize]) -> String {
        let mut out = String::from("class,group,train_count,test_count,correct,accuracy\n");
        for (k, row) in self.confusion.iter().enumerate() {
            let n: usize = row.iter().sum();
            let acc = self.per_class_acc[k].map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{k},{},{},{n},{},{acc}", groups[k].as_str(), train_counts[k], row[k]);
        }
        out
    }

    /// Rows are true classes, columns predicted classes.
    pub fn confusion_csv(&self) -> String {
        let c = self.confusion.len();
        let mut out = String::from("true");
        for k in 0..c {
            let _ = write!(out, ",pred_{k}");
        }
        out.push('\n');
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{k}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Argmax predictions of `model` on `test`, grouped by the training counts.
pub fn evaluate(model: &ModelState, test: &Dataset, groups: &[ShotGroup], exec: Exec) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty test set".into()));
    }
    if test.num_classes() != model.num_classes || groups.len() != model.num_classes {
        return Err(Error::InvalidArgument(format!(
            "model has {} classes, test set {}, shot groups {}",
            model.num_classes,
            test.num_classes(),
            groups.len()
        )));
    }
    let pred = model.predict(test, exec)?;
    Metrics::from_predictions(&pred, &test.labels(), groups)
}

/// `KL(p ‖ uniform)` of a histogram.
pub fn kl_to_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let c = counts.len() as f64;
    counts
        .iter()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total as f64;
            p * (p * c).ln()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDistReport {
    pub original: Vec<usize>,
    /// Training labels plus the labels of every retrieved graph.
    pub augmented: Vec<usize>,
    pub kl_original: f64,
    pub kl_augmented: f64,
}

impl LabelDistReport {
    /// Per class: counts, frequencies and the uniform reference, then a
    /// `kl_to_uniform` row.
    pub fn to_csv(&self) -> String {
        let c = self.original.len();
        let freq = |h: &[usize], k: usize| {
            let t: usize = h.iter().sum();
            if t == 0 { 0.0 } else { h[k] as f64 / t as f64 }
        };
        let mut out = String::from("class,original_count,augmented_count,original_freq,augmented_freq,uniform_freq\n");
        for k in 0..c {
            let _ = writeln!(
                out,
                "{k},{},{},{},{},{}",
                self.original[k],
                self.augmented[k],
                freq(&self.original, k),
                freq(&self.augmented, k),
                1.0 / c as f64
            );
        }
        let _ = writeln!(out, "kl_to_uniform,,,{},{},0", self.kl_original, self.kl_augmented);
        out
    }
}

/// Histograms of training labels before and after adding retrieved
/// neighbors. `neighbors[i]` lists the corpus indices retrieved for graph
/// `i`; an empty table leaves the histogram unchanged.
pub fn label_distribution_report(train: &Dataset, neighbors: &[Vec<usize>]) -> Result<LabelDistReport> {
    if !neighbors.is_empty() && neighbors.len() != train.len() {
        return Err(Error::InvalidArgument(format!(
            "retrieval results cover {} of {} training graphs",
            neighbors.len(),
            train.len()
        )));
    }
    let original = train.class_counts();
    let mut augmented = original.clone();
    for &j in neighbors.iter().flatten() {
        if j >= train.len() {
            return Err(Error::InvalidArgument(format!("retrieved index {j} outside the training set")));
        }
        augmented[train.graph(j).label()] += 1;
    }
    Ok(LabelDistReport {
        kl_original: kl_to_uniform(&original),
        kl_augmented: kl_to_uniform(&augmented),
        original,
        augmented,
    })
}

/// `graph_id,label,e0..e{D-1}` for every graph.
pub fn embeddings_csv(h: &Tensor, labels: &[usize]) -> String {
    let mut out = String::from("graph_id,label");
    for d in 0..h.cols() {
        let _ = write!(out, ",e{d}");
    }
    out.push('\n');
    for (i, &y) in labels.iter().enumerate() {
        let _ = write!(out, "{i},{y}");
        for v in h.row(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn export_embeddings(model: &ModelState, dataset: &Dataset, path: &Path, exec: Exec) -> Result<()> {
    let h = model.embed_dataset(dataset, exec)?;
    std::fs::write(path, embeddings_csv(&h, &dataset.labels())).map_err(|e| Error::io(path, e))
}

/// Mean pairwise cosine similarity within classes and across classes.
pub fn cosine_cluster_scores(h: &Tensor, labels: &[usize]) -> (f64, f64) {
    let unit: Vec<Vec<f64>> = (0..h.rows())
        .map(|i| {
            let r = h.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
        })
        .collect();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if labels[i] == labels[j] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

/// Mean, sample standard deviation and median over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub values: Vec<f64>,
}

pub fn summarize(values: &[f64]) -> Result<SeedSummary> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        (sorted[m - 1] + sorted[m]) / 2.0
    };
    Ok(SeedSummary {
        mean,
        std,
        median,
        values: values.to_vec(),
    })
}

/// Self-contained record of one evaluated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub config: serde_json::Value,
    pub seed: u64,
    pub data_fingerprint: String,
    pub metrics: Metrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retrieved_label_histogram: Option<Vec<usize>>,
    /// Unix seconds at start and end; only recorded on request so that
    /// reruns stay byte-identical.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timestamps: Option<(u64, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shot_split_examples() {
        let t = ShotThresholds::default();
        assert_eq!(shot_split(&[100, 10, 2], t), vec![ShotGroup::Many, ShotGroup::Med, ShotGroup::Few]);
        assert_eq!(shot_split(&[7, 7, 7], t), vec![ShotGroup::Med; 3]);
        assert_eq!(shot_split(&[20, 5], t), vec![ShotGroup::Many, ShotGroup::Few]);
    }

    #[test]
    fn oracle_and_constant_predictors() {
        let truth = [0, 1, 2, 0, 1, 2];
        let g = [ShotGroup::Many, ShotGroup::Med, ShotGroup::Few];
        let m = Metrics::from_predictions(&truth, &truth, &g).unwrap();
        assert_eq!(m.overall_acc, 1.0);
        assert!((0..3).all(|k| (0..3).all(|j| (m.confusion[k][j] > 0) == (k == j))));
        let m = Metrics::from_predictions(&[1; 6], &truth, &g).unwrap();
        assert!((m.overall_acc - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class_acc, vec![Some(0.0), Some(1.0), Some(0.0)]);
        assert_eq!((m.many_acc, m.med_acc, m.few_acc), (Some(0.0), Some(1.0), Some(0.0)));
    }

    #[test]
    fn hand_built_three_samples() {
        // Class 0: one right, one wrong; class 1: one right; class 2 absent.
        let g = [ShotGroup::Many, ShotGroup::Many, ShotGroup::Few];
        let m = Metrics::from_predictions(&[0, 1, 1], &[0, 0, 1], &g).unwrap();
        assert_eq!(m.per_class_acc, vec![Some(0.5), Some(1.0), None]);
        assert_eq!(m.many_acc, Some(0.75));
        assert_eq!(m.few_acc, None);
        assert_eq!(m.med_acc, None);
        assert!((m.overall_acc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.balanced_acc, 0.75);
        assert!(Metrics::from_predictions(&[], &[], &g).is_err());
    }

    #[test]
    fn metrics_json_field_names() {
        let m = Metrics::from_predictions(&[0], &[0], &[ShotGroup::Few]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for k in ["overall_acc", "per_class_acc", "many_acc", "med_acc", "few_acc"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_uniform(&[4, 4, 4]), 0.0);
        assert!((kl_to_uniform(&[1, 0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[7.0]).unwrap().std, 0.0);
    }

    #[test]
    fn embeddings_csv_layout() {
        let h = Tensor::matrix(2, 2, vec![0.5, -1.0, 2.0, 0.0]);
        assert_eq!(embeddings_csv(&h, &[1, 0]), "graph_id,label,e0,e1\n0,1,0.5,-1\n1,0,2,0\n");
    }
}
