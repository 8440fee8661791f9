use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use shiprec::data::{augment_resample, export_dir, load_dir, synth_split};
use shiprec::trainer::{evaluate, load_checkpoint, save_checkpoint, Ablation, EpochRecord, EvalReport};
use shiprec::{Dataset, Model};

use crate::config::ExperimentConfig;
use crate::failure::Failure;
use crate::output::{pretty_json, write_atomic};

pub const CHECKPOINT: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth,
    /// Directory holding `train/` and `test/` class folders.
    Dir(PathBuf),
}

/// Config with command-line overrides applied and validated.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, ablation: Option<Ablation>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
        cfg.ablation_seeds = vec![s];
    }
    if let Some(a) = ablation {
        cfg.train.ablation = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub data_hash: String,
}

fn check_class_names(train: &Dataset, test: &Dataset) -> Result<(), Failure> {
    if train.class_names != test.class_names {
        return Err(Failure::dataset(format!(
            "train classes {:?} differ from test classes {:?}",
            train.class_names, test.class_names
        )));
    }
    Ok(())
}

/// Loads or generates the raw train/test splits; `data_hash` covers both.
pub fn load_splits(cfg: &ExperimentConfig, source: &DataSource) -> Result<Splits, Failure> {
    let (train, test) = match source {
        DataSource::Synth => synth_split(&cfg.synth, cfg.test_per_class)?,
        DataSource::Dir(root) => {
            let size = cfg.train.extractor.input_size;
            let train = load_dir(&root.join("train"), size)?;
            let test = load_dir(&root.join("test"), size)?;
            check_class_names(&train, &test)?;
            (train, test)
        }
    };
    let mut h = Sha256::new();
    h.update(train.content_hash());
    h.update(test.content_hash());
    Ok(Splits { train, test, data_hash: hex::encode(h.finalize()) })
}

pub fn summary_value(cfg: &ExperimentConfig, report: &EvalReport, data_hash: &str, epochs: usize) -> Value {
    let per_class: serde_json::Map<String, Value> =
        report.class_names.iter().zip(&report.per_class_recall).map(|(n, r)| (n.clone(), json!(r))).collect();
    json!({
        "final_accuracy": report.micro_accuracy,
        "macro_accuracy": report.macro_accuracy,
        "per_class": per_class,
        "config_hash": cfg.hash(),
        "config": cfg.to_value(),
        "seeds": { "train": cfg.train.seed, "data": cfg.synth.seed },
        "data_hash": data_hash,
        "epochs": epochs,
    })
}

pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub report: EvalReport,
    pub summary: Value,
}

/// Trains and evaluates without touching the filesystem.
pub fn train_in_memory(cfg: &ExperimentConfig, splits: &Splits) -> Result<TrainOutcome, Failure> {
    cfg.train.validate(splits.train.num_classes())?;
    let train = if cfg.augment_per_class > 0 {
        augment_resample(&splits.train, cfg.augment_per_class, cfg.train.seed)?
    } else {
        splits.train.clone()
    };
    let mut model = Model::new(&cfg.train, train.class_names.clone())?;
    let records = model.fit(&train, None, |_| Ok(()))?;
    let report = evaluate(&model, &splits.test)?;
    let summary = summary_value(cfg, &report, &splits.data_hash, records.len());
    Ok(TrainOutcome { model, records, report, summary })
}

pub fn metrics_jsonl(records: &[EpochRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("record serializes"));
        out.push(b'\n');
    }
    out
}

fn write_report(out: &Path, report: &EvalReport) -> Result<(), Failure> {
    write_atomic(out, "confusion.csv", report.confusion_csv().as_bytes())?;
    write_atomic(out, "predictions.csv", report.predictions_csv().as_bytes())?;
    Ok(())
}

pub fn write_train_outputs(out: &Path, outcome: &TrainOutcome) -> Result<(), Failure> {
    std::fs::create_dir_all(out)?;
    save_checkpoint(&outcome.model, &out.join(CHECKPOINT))?;
    write_atomic(out, "metrics.jsonl", &metrics_jsonl(&outcome.records))?;
    write_report(out, &outcome.report)?;
    // Summary last: its presence marks a complete run.
    write_atomic(out, "summary.json", &pretty_json(&outcome.summary))?;
    Ok(())
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let splits = load_splits(cfg, &DataSource::Synth)?;
    export_dir(&splits.train, &out.join("train"))?;
    export_dir(&splits.test, &out.join("test"))?;
    println!("{}", json!({ "train": splits.train.len(), "test": splits.test.len(), "data_hash": splits.data_hash }));
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, source: &DataSource, out: &Path) -> Result<(), Failure> {
    let splits = load_splits(cfg, source)?;
    let outcome = train_in_memory(cfg, &splits)?;
    write_train_outputs(out, &outcome)?;
    println!("{}", outcome.summary["final_accuracy"]);
    Ok(())
}

/// Evaluates a checkpoint on the test split (or on `dir` itself when it has
/// no `test/` subfolder).
pub fn cmd_eval(cfg: &ExperimentConfig, source: &DataSource, checkpoint: &Path, out: &Path) -> Result<(), Failure> {
    let model: Model = load_checkpoint(checkpoint)?;
    let (test, data_hash) = match source {
        DataSource::Synth => {
            let s = load_splits(cfg, source)?;
            (s.test, s.data_hash)
        }
        DataSource::Dir(root) => {
            let size = model.config.extractor.input_size;
            if root.join("test").is_dir() {
                let s = load_splits(&ExperimentConfig { train: model.config.clone(), ..cfg.clone() }, source)?;
                (s.test, s.data_hash)
            } else {
                let ds = load_dir(root, size)?;
                let hash = ds.content_hash();
                (ds, hash)
            }
        }
    };
    if test.class_names != model.class_names {
        return Err(Failure::dataset(format!(
            "dataset classes {:?} differ from checkpoint classes {:?}",
            test.class_names, model.class_names
        )));
    }
    let report = evaluate(&model, &test)?;
    let run_cfg = ExperimentConfig { train: model.config.clone(), ..cfg.clone() };
    let summary = summary_value(&run_cfg, &report, &data_hash, model.epoch);
    write_report(out, &report)?;
    write_atomic(out, "eval.json", &pretty_json(&summary))?;
    print!("{}", report.confusion_csv());
    println!("micro_accuracy {:.4} macro_accuracy {:.4}", report.micro_accuracy, report.macro_accuracy);
    Ok(())
}

pub struct AblationRow {
    pub variant: Ablation,
    pub seed: u64,
    pub data_hash: String,
    pub result: Result<EvalReport, Failure>,
}

/// Runs the requested variants over every ablation seed. Each seed gets its
/// own generated data, shared by all variants.
pub fn cmd_ablate(cfg: &ExperimentConfig, source: &DataSource, variants: &[Ablation], out: &Path) -> Result<i32, Failure> {
    let mut rows = Vec::new();
    let mut class_names = Vec::new();
    for &seed in &cfg.ablation_seeds {
        let mut seeded = cfg.clone();
        seeded.train.seed = seed;
        seeded.synth.seed = seed;
        let splits = match load_splits(&seeded, source) {
            Ok(s) => s,
            Err(e) => {
                for &variant in variants {
                    rows.push(AblationRow { variant, seed, data_hash: String::new(), result: Err(e.clone()) });
                }
                continue;
            }
        };
        class_names.clone_from(&splits.train.class_names);
        for &variant in variants {
            let mut run = seeded.clone();
            run.train.ablation = variant;
            let dir = out.join(format!("{}-seed{seed}", variant.name()));
            let result = train_in_memory(&run, &splits).and_then(|o| {
                write_train_outputs(&dir, &o)?;
                Ok(o.report)
            });
            match &result {
                Ok(r) => eprintln!("{} seed {seed}: {:.4}", variant.name(), r.micro_accuracy),
                Err(e) => eprintln!("{} seed {seed}: {}", variant.name(), e.to_json_line()),
            }
            rows.push(AblationRow { variant, seed, data_hash: splits.data_hash.clone(), result });
        }
    }
    let table = crate::ablation::AblationTable::new(class_names, rows);
    write_atomic(out, "ablation.csv", &table.to_csv())?;
    println!("{}", table.verdict());
    Ok(table.exit_code())
}
