//! Labeling accuracy, functional-unit detection counts, label histograms.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::LabelPair;

pub const DEFAULT_FOLD_THRESHOLD: usize = 25;
pub const OTHERS: &str = "Others";

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("evaluation scope is empty")]
    EmptyScope,
    #[error("ground truth has no label for {0}")]
    MissingGroundTruth(String),
}

/// `num / den` as a percentage with one decimal, rounded half up.
pub fn percent_display(num: usize, den: usize) -> String {
    if den == 0 {
        return "n/a".to_string();
    }
    // tenths of a percent, computed in integers
    let tenths = (2000 * num as u128 + den as u128) / (2 * den as u128);
    format!("{}.{}%", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub total: usize,
    pub name_matches: usize,
    pub group_matches: usize,
    pub name_accuracy: f64,
    pub group_accuracy: f64,
}

impl Accuracy {
    pub fn name_display(&self) -> String {
        percent_display(self.name_matches, self.total)
    }

    pub fn group_display(&self) -> String {
        percent_display(self.group_matches, self.total)
    }
}

/// Exact-pair and group-only accuracy over `scope`. Missing predictions are wrong.
pub fn label_accuracy(
    pred: &BTreeMap<String, LabelPair>,
    gt: &BTreeMap<String, LabelPair>,
    scope: &BTreeSet<String>,
) -> Result<Accuracy, EvalError> {
    if scope.is_empty() {
        return Err(EvalError::EmptyScope);
    }
    let (mut name_matches, mut group_matches) = (0, 0);
    for p in scope {
        let truth = gt.get(p).ok_or_else(|| EvalError::MissingGroundTruth(p.clone()))?;
        if let Some(guess) = pred.get(p) {
            if guess.group == truth.group {
                group_matches += 1;
                if guess.name == truth.name {
                    name_matches += 1;
                }
            }
        }
    }
    let total = scope.len();
    Ok(Accuracy {
        total,
        name_matches,
        group_matches,
        name_accuracy: name_matches as f64 / total as f64,
        group_accuracy: group_matches as f64 / total as f64,
    })
}

/// A ground-truth functional unit: its group label and the meshes it consists of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtUnit {
    pub unit_type: String,
    pub meshes: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub fully: usize,
    pub partially: usize,
    pub missed: usize,
}

impl DetectionCounts {
    pub fn total(&self) -> usize {
        self.fully + self.partially + self.missed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    Fully,
    Partially,
    Missed,
}

/// Share of a unit's meshes predicted with the unit's group label.
pub fn classify_unit(pred: &BTreeMap<String, LabelPair>, unit: &GtUnit) -> Detection {
    let hits = unit
        .meshes
        .iter()
        .filter(|m| pred.get(*m).is_some_and(|l| l.group == unit.unit_type))
        .count();
    match hits {
        0 => Detection::Missed,
        h if h == unit.meshes.len() => Detection::Fully,
        _ => Detection::Partially,
    }
}

/// Counts per unit type.
pub fn unit_detection_report(
    pred: &BTreeMap<String, LabelPair>,
    gt_units: &[GtUnit],
) -> BTreeMap<String, DetectionCounts> {
    let mut out: BTreeMap<String, DetectionCounts> = BTreeMap::new();
    for u in gt_units {
        let c = out.entry(u.unit_type.clone()).or_default();
        match classify_unit(pred, u) {
            Detection::Fully => c.fully += 1,
            Detection::Partially => c.partially += 1,
            Detection::Missed => c.missed += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub label: String,
    pub count: usize,
}

/// Histogram sorted by descending count then label; entries below `threshold`
/// are summed into a trailing "Others" bucket.
pub fn label_distribution<'a, I: IntoIterator<Item = &'a str>>(labels: I, threshold: usize) -> Vec<Bucket> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut out: Vec<Bucket> = Vec::new();
    let mut others = 0;
    for (label, count) in counts {
        if count < threshold || label == OTHERS {
            others += count;
        } else {
            out.push(Bucket {
                label: label.to_string(),
                count,
            });
        }
    }
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    if others > 0 {
        out.push(Bucket {
            label: OTHERS.to_string(),
            count: others,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub total: usize,
    pub group_correct: usize,
    pub name_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Accuracy,
    pub name_accuracy_display: String,
    pub group_accuracy_display: String,
    /// Keyed by ground-truth group.
    pub per_group: BTreeMap<String, GroupCounts>,
    pub detection: BTreeMap<String, DetectionCounts>,
    pub name_distribution: Vec<Bucket>,
    pub group_distribution: Vec<Bucket>,
}

/// Full report over `scope` (all ground-truth paths when `None`).
pub fn evaluate(
    pred: &BTreeMap<String, LabelPair>,
    gt: &BTreeMap<String, LabelPair>,
    gt_units: &[GtUnit],
    scope: Option<&BTreeSet<String>>,
    fold_threshold: usize,
) -> Result<EvalReport, EvalError> {
    let all: BTreeSet<String>;
    let scope = match scope {
        Some(s) => s,
        None => {
            all = gt.keys().cloned().collect();
            &all
        }
    };
    let accuracy = label_accuracy(pred, gt, scope)?;
    let mut per_group: BTreeMap<String, GroupCounts> = BTreeMap::new();
    for p in scope {
        let truth = &gt[p];
        let c = per_group.entry(truth.group.clone()).or_default();
        c.total += 1;
        if let Some(g) = pred.get(p).filter(|g| g.group == truth.group) {
            c.group_correct += 1;
            if g.name == truth.name {
                c.name_correct += 1;
            }
        }
    }
    Ok(EvalReport {
        name_accuracy_display: accuracy.name_display(),
        group_accuracy_display: accuracy.group_display(),
        accuracy,
        per_group,
        detection: unit_detection_report(pred, gt_units),
        name_distribution: label_distribution(pred.values().map(|l| l.name.as_str()), fold_threshold),
        group_distribution: label_distribution(pred.values().map(|l| l.group.as_str()), fold_threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(g: &str, n: &str) -> LabelPair {
        LabelPair {
            group: g.into(),
            name: n.into(),
        }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(percent_display(139, 174), "79.9%");
        assert_eq!(percent_display(67, 174), "38.5%");
        assert_eq!(percent_display(1, 8), "12.5%");
        assert_eq!(percent_display(1, 16), "6.3%");
        assert_eq!(percent_display(5, 5), "100.0%");
        assert_eq!(percent_display(0, 3), "0.0%");
    }

    #[test]
    fn perfect_and_disjoint() {
        let gt: BTreeMap<_, _> = [("/a".to_string(), lp("G", "x")), ("/b".to_string(), lp("H", "y"))].into();
        let scope: BTreeSet<String> = gt.keys().cloned().collect();
        let a = label_accuracy(&gt, &gt, &scope).unwrap();
        assert_eq!((a.name_accuracy, a.group_accuracy), (1.0, 1.0));
        let wrong: BTreeMap<_, _> = [("/a".to_string(), lp("Z", "x"))].into();
        let a = label_accuracy(&wrong, &gt, &scope).unwrap();
        assert_eq!((a.name_accuracy, a.group_accuracy), (0.0, 0.0));
        assert_eq!(label_accuracy(&gt, &gt, &BTreeSet::new()), Err(EvalError::EmptyScope));
    }

    #[test]
    fn detection_categories() {
        let unit = GtUnit {
            unit_type: "Valve assembly".into(),
            meshes: ["/1", "/2", "/3", "/4"].map(String::from).into(),
        };
        let mut pred: BTreeMap<String, LabelPair> = unit
            .meshes
            .iter()
            .map(|m| (m.clone(), lp("Valve assembly", "v")))
            .collect();
        assert_eq!(classify_unit(&pred, &unit), Detection::Fully);
        pred.insert("/1".into(), lp("Pipe assembly", "p"));
        pred.remove("/2");
        assert_eq!(classify_unit(&pred, &unit), Detection::Partially);
        assert_eq!(classify_unit(&BTreeMap::new(), &unit), Detection::Missed);
    }

    #[test]
    fn distribution_folds_small_labels() {
        let mut labels = vec!["Straight pipe"; 30];
        labels.extend(vec!["Gate valve"; 24]);
        labels.push("Dial");
        let d = label_distribution(labels.iter().copied(), DEFAULT_FOLD_THRESHOLD);
        assert_eq!(
            d,
            vec![
                Bucket {
                    label: "Straight pipe".into(),
                    count: 30
                },
                Bucket {
                    label: OTHERS.into(),
                    count: 25
                }
            ]
        );
        assert_eq!(label_distribution(["x"], 25).len(), 1);
        assert_eq!(label_distribution(["x"], 1)[0].label, "x");
    }
}
