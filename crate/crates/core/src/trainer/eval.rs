use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::Model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    /// Recall per class; `None` for classes absent from the dataset.
    pub per_class_recall: Vec<Option<f64>>,
    /// Fraction of all samples classified correctly.
    pub micro_accuracy: f64,
    /// Mean recall over the classes present.
    pub macro_accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn from_predictions(class_names: Vec<String>, predictions: Vec<Prediction>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = class_names.len();
        let mut confusion = vec![vec![0usize; n]; n];
        for p in &predictions {
            if p.label >= n || p.predicted >= n {
                return Err(Error::LabelOutOfRange { label: p.label.max(p.predicted), num_classes: n });
            }
            confusion[p.label][p.predicted] += 1;
        }
        let per_class_recall: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let count: usize = row.iter().sum();
                (count > 0).then(|| row[c] as f64 / count as f64)
            })
            .collect();
        let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
        let micro_accuracy = correct as f64 / predictions.len() as f64;
        let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
        let macro_accuracy = present.iter().sum::<f64>() / present.len() as f64;
        Ok(Self { class_names, per_class_recall, micro_accuracy, macro_accuracy, confusion, predictions })
    }

    /// Confusion matrix as CSV with a header of predicted class names.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            out.push_str(name);
            for c in row {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("index,label,predicted\n");
        for p in &self.predictions {
            out.push_str(&format!("{},{},{}\n", p.index, p.label, p.predicted));
        }
        out
    }
}

/// Classifies every sample with dropout off. Samples are scored in
/// parallel; the report does not depend on scheduling.
pub fn evaluate<T: Scalar>(model: &Model<T>, ds: &Dataset<T>) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.num_classes() != model.num_classes() {
        return Err(Error::DimensionMismatch { expected: model.num_classes(), got: ds.num_classes() });
    }
    let predictions = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(index, s)| Ok(Prediction { index, label: s.label, predicted: model.predict(&s.image)? }))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(ds.class_names.clone(), predictions)
}
