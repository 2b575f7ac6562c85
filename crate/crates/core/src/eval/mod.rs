//! Retrieval, original-over-negation, composite score and zero-shot metrics.

use crate::autodiff::kernels::dot;
use crate::model::SemClipModel;
use crate::projection::BankConfig;
use crate::scene::{Caption, Relation, Scene, TripleRecord};
use crate::trainer::{train, TrainConfig};
use crate::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

/// Percentage of queries whose true gallery item has the highest cosine.
/// Ties go to the lowest gallery index.
pub fn top1_retrieval_accuracy(queries: &[Vec<f64>], gallery: &[Vec<f64>], targets: &[usize]) -> Result<f64, Error> {
    if gallery.is_empty() {
        return Err(Error::Contract("retrieval gallery is empty".into()));
    }
    if queries.len() != targets.len() {
        return Err(Error::Contract(format!("{} queries but {} targets", queries.len(), targets.len())));
    }
    if queries.is_empty() {
        return Err(Error::Contract("no retrieval queries".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t >= gallery.len()) {
        return Err(Error::Contract(format!("target {t} outside gallery of {}", gallery.len())));
    }
    let hits = queries.iter().zip(targets).filter(|(q, &t)| argmax(gallery.iter().map(|g| dot(q, g))) == t).count();
    Ok(percent(hits, queries.len()))
}

fn argmax(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Percentage of samples where the image is strictly closer to the original
/// caption than to its negation. Ties count as failures.
pub fn original_over_negation_accuracy(images: &[Vec<f64>], originals: &[Vec<f64>], negations: &[Vec<f64>]) -> Result<f64, Error> {
    if images.len() != originals.len() || images.len() != negations.len() {
        return Err(Error::Contract("original-over-negation inputs differ in length".into()));
    }
    if images.is_empty() {
        return Err(Error::Contract("no original-over-negation samples".into()));
    }
    let wins = images.iter().zip(originals).zip(negations).filter(|((i, t), n)| dot(i, t) > dot(i, n)).count();
    Ok(percent(wins, images.len()))
}

/// `max(0, 2·(acc − 50))`, in percentage points: chance maps to 0.
pub fn rescale_negation(acc_neg: f64) -> f64 {
    (2.0 * (acc_neg - 50.0)).max(0.0)
}

/// Mean of the two retrieval accuracies and the rescaled negation accuracy.
pub fn composite_score(acc_orig: f64, acc_para: f64, acc_neg: f64) -> Result<f64, Error> {
    for (name, x) in [("acc_orig", acc_orig), ("acc_para", acc_para), ("acc_neg", acc_neg)] {
        if !(0.0..=100.0).contains(&x) {
            return Err(Error::Contract(format!("{name} = {x} is not a percentage")));
        }
    }
    Ok((acc_orig + acc_para + rescale_negation(acc_neg)) / 3.0)
}

pub fn negation_delta(standard_acc: f64, negated_acc: f64) -> f64 {
    standard_acc - negated_acc
}

/// Prompt for one class, in the plain or negated template.
pub fn zero_shot_prompt(class_name: &str, negated: bool) -> Caption {
    let not = if negated { " not" } else { "" };
    Caption::from(format!("this is{not} a photo of a {class_name}"))
}

/// Top-1 accuracy of nearest-prompt classification.
pub fn zero_shot_accuracy(images: &[Vec<f64>], prompts: &[Vec<f64>], labels: &[usize]) -> Result<f64, Error> {
    if prompts.len() < 2 {
        return Err(Error::Contract("zero-shot classification needs at least two classes".into()));
    }
    top1_retrieval_accuracy(images, prompts, labels)
}

/// Classifies `scenes` against one prompt per class name.
pub fn zero_shot_classify(
    model: &SemClipModel,
    scenes: &[Scene],
    labels: &[usize],
    class_names: &[&str],
    negated: bool,
) -> Result<f64, Error> {
    let prompts: Vec<Caption> = class_names.iter().map(|c| zero_shot_prompt(c, negated)).collect();
    let prompt_embs = model.embed_texts(&prompts)?;
    zero_shot_accuracy(&model.embed_images(scenes), &prompt_embs, labels)
}

pub const DATASET_LABEL: &str = "synthetic";
pub const RELATION_TASK: &str = "relation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub task: String,
    pub standard_acc: f64,
    pub negated_acc: f64,
    /// Signed; negative values are kept.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub acc_orig: f64,
    pub acc_para: f64,
    pub acc_neg: f64,
    pub acc_neg_rescaled: f64,
    pub composite: f64,
    pub zero_shot: Vec<ZeroShotResult>,
    pub gallery_size: usize,
    pub queries: usize,
    pub model: crate::model::ModelConfig,
}

/// Unique scenes in first-appearance order, and each record's index into it.
pub fn gallery(records: &[TripleRecord]) -> (Vec<Scene>, Vec<usize>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut scenes = Vec::new();
    let targets = records
        .iter()
        .map(|r| {
            *index.entry(r.scene_id.as_str()).or_insert_with(|| {
                scenes.push(r.scene);
                scenes.len() - 1
            })
        })
        .collect();
    (scenes, targets)
}

/// Evaluates `model` on held-out triples.
///
/// Retrieval ranks the distinct held-out scenes; zero-shot classifies the
/// relation of each distinct held-out scene.
pub fn evaluate(model: &SemClipModel, records: &[TripleRecord], variant: &str) -> Result<EvalReport, Error> {
    if records.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let (scenes, targets) = gallery(records);
    let gallery_embs = model.embed_images(&scenes);
    let texts = |f: fn(&TripleRecord) -> &str| {
        let captions: Vec<Caption> = records.iter().map(|r| Caption::from(f(r))).collect();
        model.embed_texts(&captions)
    };
    let originals = texts(|r| &r.original)?;
    let paraphrases = texts(|r| &r.paraphrase)?;
    let negations = texts(|r| &r.negation)?;

    let acc_orig = top1_retrieval_accuracy(&originals, &gallery_embs, &targets)?;
    let acc_para = top1_retrieval_accuracy(&paraphrases, &gallery_embs, &targets)?;
    let images: Vec<Vec<f64>> = targets.iter().map(|&t| gallery_embs[t].clone()).collect();
    let acc_neg = original_over_negation_accuracy(&images, &originals, &negations)?;

    let classes: Vec<String> = Relation::ALL.iter().map(|r| r.phrase()).collect();
    let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
    let labels: Vec<usize> = scenes.iter().map(|s| s.relation.index()).collect();
    let standard_acc = zero_shot_classify(model, &scenes, &labels, &class_refs, false)?;
    let negated_acc = zero_shot_classify(model, &scenes, &labels, &class_refs, true)?;

    Ok(EvalReport {
        variant: variant.to_string(),
        acc_orig,
        acc_para,
        acc_neg,
        acc_neg_rescaled: rescale_negation(acc_neg),
        composite: composite_score(acc_orig, acc_para, acc_neg)?,
        zero_shot: vec![ZeroShotResult {
            task: RELATION_TASK.into(),
            standard_acc,
            negated_acc,
            delta: negation_delta(standard_acc, negated_acc),
        }],
        gallery_size: scenes.len(),
        queries: records.len(),
        model: model.config(),
    })
}

pub const REPORT_HEADER: &str = "metric,dataset,variant,value";
pub const ZERO_SHOT_HEADER: &str = "task,variant,standard_acc,negated_acc,delta";

/// Table-1 style rows: one metric per line.
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in reports {
        for (metric, value) in [
            ("acc_orig", r.acc_orig),
            ("acc_para", r.acc_para),
            ("acc_neg", r.acc_neg),
            ("acc_neg_rescaled", r.acc_neg_rescaled),
            ("composite", r.composite),
        ] {
            writeln!(out, "{metric},{DATASET_LABEL},{},{value}", r.variant).expect("writing to a String");
        }
    }
    out
}

pub fn zero_shot_csv(reports: &[EvalReport]) -> String {
    let mut out = format!("{ZERO_SHOT_HEADER}\n");
    for r in reports {
        for z in &r.zero_shot {
            writeln!(out, "{},{},{},{},{}", z.task, r.variant, z.standard_acc, z.negated_acc, z.delta)
                .expect("writing to a String");
        }
    }
    out
}

/// The four loss variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Paraphrase,
    Negation,
    Semclip,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Paraphrase, Variant::Negation, Variant::Semclip];

    /// `(α, β, γ)`
    pub fn weights(self) -> crate::losses::LossWeights {
        let (b, g) = match self {
            Variant::Baseline => (0.0, 0.0),
            Variant::Paraphrase => (1.0, 0.0),
            Variant::Negation => (0.0, 1.0),
            Variant::Semclip => (1.0, 1.0),
        };
        crate::losses::LossWeights { alpha: 1.0, beta: b, gamma: g }
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Paraphrase => "paraphrase",
            Variant::Negation => "negation",
            Variant::Semclip => "semclip",
        }
    }

    /// Whether the projection bank affects training.
    pub fn uses_bank(self) -> bool {
        self != Variant::Baseline
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::Usage(format!("unknown variant {s:?}; expected baseline, paraphrase, negation or semclip")))
    }
}

/// Every (n, normalize, learnable) combination of the sweep.
pub fn bank_grid() -> Vec<BankConfig> {
    let mut out = Vec::with_capacity(8);
    for n in [1, 2] {
        for learnable in [false, true] {
            for normalize in [false, true] {
                out.push(BankConfig { n, normalize, learnable });
            }
        }
    }
    out
}

pub fn cell_label(variant: Variant, bank: &BankConfig) -> String {
    format!(
        "{}/n{}-{}-{}",
        variant.key(),
        bank.n,
        if bank.normalize { "norm" } else { "raw" },
        if bank.learnable { "learned" } else { "fixed" }
    )
}

/// Result of one sweep cell.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub variant: Variant,
    pub bank: BankConfig,
    pub label: String,
    pub outcome: Result<EvalReport, String>,
}

/// Trains and evaluates every variant on every bank setting, in parallel.
/// A failing cell is recorded and the sweep goes on.
pub fn ablation_sweep(base: &TrainConfig, train_split: &[TripleRecord], test_split: &[TripleRecord]) -> Vec<SweepCell> {
    let cells: Vec<(Variant, BankConfig)> =
        Variant::ALL.iter().flat_map(|&v| bank_grid().into_iter().map(move |b| (v, b))).collect();
    cells
        .into_par_iter()
        .map(|(variant, bank)| {
            let label = cell_label(variant, &bank);
            let config = TrainConfig { weights: variant.weights(), bank, ..base.clone() };
            let outcome = train(&config, train_split).map_err(|e| e.to_string()).and_then(|o| match o.failure {
                Some(f) => Err(f),
                None => evaluate(&o.model, test_split, &label).map_err(|e| e.to_string()),
            });
            SweepCell { variant, bank, label, outcome }
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "variant,n,normalize,learnable,status,acc_orig,acc_para,acc_neg,acc_neg_rescaled,composite,zs_standard,zs_negated,zs_delta";

/// One row per cell with its status; failed cells leave the metrics empty.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for c in cells {
        let head = format!("{},{},{},{}", c.variant.key(), c.bank.n, c.bank.normalize, c.bank.learnable);
        match &c.outcome {
            Ok(r) => {
                let z = &r.zero_shot[0];
                writeln!(
                    out,
                    "{head},ok,{},{},{},{},{},{},{},{}",
                    r.acc_orig, r.acc_para, r.acc_neg, r.acc_neg_rescaled, r.composite, z.standard_acc, z.negated_acc, z.delta
                )
            }
            Err(e) => writeln!(out, "{head},\"failed: {}\",,,,,,,,", e.replace('"', "'")),
        }
        .expect("writing to a String");
    }
    out
}
