use shiprec::trainer::{Ablation, EvalReport};

use crate::commands::AblationRow;

/// Minimum FULL-over-V1 gain, in accuracy points, for a passing verdict.
pub const REQUIRED_GAIN: f64 = 5.0;

pub struct AblationTable {
    class_names: Vec<String>,
    rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub variant: Ablation,
    pub completed: usize,
    pub runs: usize,
    pub accuracy: Option<f64>,
    pub macro_accuracy: Option<f64>,
    pub per_class: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl AblationTable {
    pub fn new(class_names: Vec<String>, rows: Vec<AblationRow>) -> Self {
        Self { class_names, rows }
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        Ablation::ALL
            .iter()
            .filter_map(|&variant| {
                let mine: Vec<&AblationRow> = self.rows.iter().filter(|r| r.variant == variant).collect();
                if mine.is_empty() {
                    return None;
                }
                let ok: Vec<&EvalReport> = mine.iter().filter_map(|r| r.result.as_ref().ok()).collect();
                Some(Aggregate {
                    variant,
                    completed: ok.len(),
                    runs: mine.len(),
                    accuracy: mean(ok.iter().map(|r| r.micro_accuracy)),
                    macro_accuracy: mean(ok.iter().map(|r| r.macro_accuracy)),
                    per_class: (0..self.class_names.len())
                        .map(|c| mean(ok.iter().filter_map(|r| r.per_class_recall[c])))
                        .collect(),
                })
            })
            .collect()
    }

    fn mean_of(&self, variant: Ablation) -> Option<f64> {
        self.aggregates().into_iter().find(|a| a.variant == variant && a.completed == a.runs)?.accuracy
    }

    /// True when FULL beats V1 by the required gain and V2, V3 both beat V1.
    pub fn passes(&self) -> Option<bool> {
        let v1 = self.mean_of(Ablation::V1)?;
        let (v2, v3, full) = (self.mean_of(Ablation::V2)?, self.mean_of(Ablation::V3)?, self.mean_of(Ablation::Full)?);
        Some(100.0 * (full - v1) >= REQUIRED_GAIN && v2 > v1 && v3 > v1)
    }

    pub fn verdict(&self) -> String {
        let Some(pass) = self.passes() else {
            return "verdict: INCOMPLETE (need all four variants with every run completed)".to_string();
        };
        let v1 = self.mean_of(Ablation::V1).unwrap_or(0.0);
        let gain = |a| 100.0 * (self.mean_of(a).unwrap_or(0.0) - v1);
        format!(
            "verdict: {} FULL-V1 {:+.2} pts (need >= {REQUIRED_GAIN}), V2-V1 {:+.2} pts, V3-V1 {:+.2} pts",
            if pass { "PASS" } else { "FAIL" },
            gain(Ablation::Full),
            gain(Ablation::V2),
            gain(Ablation::V3)
        )
    }

    /// Exit code of the first failed run, or 0.
    pub fn exit_code(&self) -> i32 {
        self.rows.iter().find_map(|r| r.result.as_ref().err().map(|e| e.code)).unwrap_or(0)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["config".to_string(), "seed".into(), "status".into(), "accuracy".into(), "macro_accuracy".into()];
        header.extend(self.class_names.iter().map(|n| format!("recall_{n}")));
        header.push("data_hash".into());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.variant.name().to_string(), r.seed.to_string()];
            match &r.result {
                Ok(rep) => {
                    rec.push("ok".into());
                    rec.push(fmt(Some(rep.micro_accuracy)));
                    rec.push(fmt(Some(rep.macro_accuracy)));
                    rec.extend(rep.per_class_recall.iter().map(|&v| fmt(v)));
                }
                Err(e) => {
                    rec.push(format!("error:{}", e.kind));
                    rec.extend(std::iter::repeat_n(String::new(), 2 + self.class_names.len()));
                }
            }
            rec.push(r.data_hash.clone());
            w.write_record(&rec).expect("in-memory write");
        }
        for a in self.aggregates() {
            let mut rec = vec![a.variant.name().to_string(), "mean".into(), format!("{}/{}", a.completed, a.runs)];
            rec.push(fmt(a.accuracy));
            rec.push(fmt(a.macro_accuracy));
            rec.extend(a.per_class.iter().map(|&v| fmt(v)));
            rec.push(String::new());
            w.write_record(&rec).expect("in-memory write");
        }
        let mut out = w.into_inner().expect("in-memory flush");
        out.extend(format!("# {}\n", self.verdict()).into_bytes());
        out
    }
}
