//! Confusion matrix and per-class scoring.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::Class;
use crate::{Error, Result};

const N: usize = Class::COUNT;

/// Rows are the true class, columns the prediction, both in [`Class::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N]; N],
}

impl ConfusionMatrix {
    pub fn get(&self, truth: Class, predicted: Class) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn add(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: Class) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn column_sum(&self, c: Class) -> u64 {
        self.counts.iter().map(|r| r[c.index()]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N).map(|i| self.counts[i][i]).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self
            .counts
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain(Class::ALL.iter().map(|c| c.name().len()))
            .max()
            .unwrap_or(1);
        write!(f, "{:>w$}", "true\\pred", w = 9)?;
        for c in Class::ALL {
            write!(f, " {:>width$}", c.name())?;
        }
        writeln!(f)?;
        for t in Class::ALL {
            write!(f, "{:>9}", t.name())?;
            for p in Class::ALL {
                write!(f, " {:>width$}", self.get(t, p))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn confusion(preds: &[Class], labels: &[Class]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(labels) {
        cm.add(t, p);
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: Class,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Precision and recall per class; a zero denominator gives `None`.
pub fn precision_recall(cm: &ConfusionMatrix) -> [(Option<f64>, Option<f64>); N] {
    Class::ALL.map(|c| {
        let tp = cm.get(c, c);
        (ratio(tp, cm.column_sum(c)), ratio(tp, cm.row_sum(c)))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub per_class: [Option<f64>; N],
    /// Mean over Normal, AF and Other.
    pub mean3: Option<f64>,
    pub mean4: Option<f64>,
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// `F1_c = 2 tp / (row_c + col_c)`. The means skip classes whose F1 is undefined.
pub fn challenge_f1(cm: &ConfusionMatrix) -> F1Scores {
    let per_class = Class::ALL.map(|c| ratio(2 * cm.get(c, c), cm.row_sum(c) + cm.column_sum(c)));
    F1Scores {
        per_class,
        mean3: mean_defined(&per_class[..3]),
        mean4: mean_defined(&per_class),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub total: u64,
    pub accuracy: Option<f64>,
    pub classes: Vec<ClassScores>,
    pub f1_mean3: Option<f64>,
    pub f1_mean4: Option<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: ConfusionMatrix) -> Self {
        let pr = precision_recall(&cm);
        let f1 = challenge_f1(&cm);
        let classes = Class::ALL
            .iter()
            .map(|&c| ClassScores {
                class: c,
                precision: pr[c.index()].0,
                recall: pr[c.index()].1,
                f1: f1.per_class[c.index()],
            })
            .collect();
        Self {
            confusion: cm,
            total: cm.total(),
            accuracy: ratio(cm.correct(), cm.total()),
            classes,
            f1_mean3: f1.mean3,
            f1_mean4: f1.mean4,
        }
    }

    pub fn score(preds: &[Class], labels: &[Class]) -> Result<Self> {
        Ok(Self::from_confusion(confusion(preds, labels)?))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.confusion)?;
        writeln!(f)?;
        writeln!(f, "{:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1")?;
        for s in &self.classes {
            writeln!(
                f,
                "{:>9} {:>9} {:>9} {:>9}",
                s.class.name(),
                opt(s.precision),
                opt(s.recall),
                opt(s.f1)
            )?;
        }
        writeln!(f, "F1 (N/A/O) {}", opt(self.f1_mean3))?;
        write!(f, "F1 (all)   {}", opt(self.f1_mean4))
    }
}
