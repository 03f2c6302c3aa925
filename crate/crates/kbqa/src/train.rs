//! Training and evaluation drivers: batched gradient accumulation, Adam
//! with norm clipping, best-dev checkpointing, divergence abort, and the
//! evaluation report writer.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, TrainConfig};
use crate::data::KnowledgeGraph;
use crate::model::{Model, ModelError, PreparedExample};
use crate::nn::{clip_grad_norm, AdamState, NnError, Runtime};
use crate::params::ParamError;
use crate::scorer::{set_metrics, summarize, EvalRecord, EvalSummary, Prediction, ScorerError};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the {0} split is empty")]
    EmptySplit(&'static str),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}; the checkpoint holds the last good model"
    )]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Dev metrics after one epoch, with the epoch's mean training loss.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: EvalSummary,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub epochs_run: usize,
    /// Epoch whose checkpoint is on disk (0 = the initialization).
    pub best_epoch: usize,
    pub best_dev: EvalSummary,
    pub history: Vec<EpochStats>,
}

/// Scores one split deterministically (no dropout) and reports per-question
/// records in input order plus corpus means. `top_k` limits the candidate
/// list included in each record.
pub fn evaluate(
    model: &Model,
    examples: &[PreparedExample],
    graph: &KnowledgeGraph,
    threshold: f64,
    top_k: usize,
) -> Result<(Vec<EvalRecord>, EvalSummary)> {
    let mut records = Vec::with_capacity(examples.len());
    let binding = model.store.bind();
    for ex in examples {
        let fwd = model.forward(&binding, ex, &mut Runtime::eval(), false)?;
        let scores: Vec<f64> = fwd.scores.iter().map(|s| s.data()[0]).collect();
        let pred = Prediction::new(&fwd.entities, &scores, threshold);
        let hit = pred.hit_at_1(&ex.gold);
        let (precision, recall, f1) = set_metrics(&pred.answers, &ex.gold);
        let top1_set: BTreeSet<usize> = pred.top().into_iter().collect();
        let (_, _, f1_top1) = set_metrics(&top1_set, &ex.gold);
        let top = pred
            .ranked
            .iter()
            .take(top_k)
            .map(|(e, s)| (graph.entity_name(*e).to_string(), *s))
            .collect();
        records.push(EvalRecord {
            id: ex.id.clone(),
            hit_at_1: hit,
            precision,
            recall,
            f1,
            f1_top1,
            top,
        });
    }
    let summary = summarize(&records);
    Ok((records, summary))
}

/// Runs the optimization loop. The checkpoint at `checkpoint_path` always
/// holds the best-dev model seen so far (Hit@1, ties broken by F1), starting
/// from the initialization, so an abort mid-training leaves a usable file.
pub fn train(
    model: &mut Model,
    train_set: &[PreparedExample],
    dev_set: &[PreparedExample],
    graph: &KnowledgeGraph,
    tc: &TrainConfig,
    checkpoint_path: &Path,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }

    model.store.save(checkpoint_path)?;
    let (_, init_dev) = evaluate(model, dev_set, graph, tc.threshold, 5)?;
    log::info!(
        "epoch=0 split=dev hit1={:.4} f1={:.4} (initialization)",
        init_dev.hit_at_1,
        init_dev.f1
    );
    let mut best = (init_dev.hit_at_1, init_dev.f1);
    let mut best_epoch = 0usize;
    let mut best_dev = init_dev;
    let mut history = Vec::with_capacity(tc.epochs);

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = AdamState::new(tc.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(tc.batch_size).enumerate() {
            let binding = model.store.bind();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &train_set[i];
                let mut rt = Runtime::train(tc.dropout, ChaCha8Rng::seed_from_u64(rng.gen()));
                let fwd = model.forward(&binding, ex, &mut rt, false)?;
                let loss = model.loss(&fwd, &ex.gold, tc.label_smoothing)?;
                let value = loss.item()?;
                if !value.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss += value;
                loss.scale(scale).backward()?;
            }
            let mut grads = binding.grads();
            drop(binding);
            clip_grad_norm(&mut grads, tc.grad_clip);
            adam.step(&mut model.store, &grads)?;
        }
        epoch_loss /= train_set.len() as f64;

        let (_, dev) = evaluate(model, dev_set, graph, tc.threshold, 5)?;
        log::info!(
            "epoch={epoch} split=train loss={epoch_loss:.6}; split=dev hit1={:.4} f1={:.4}",
            dev.hit_at_1,
            dev.f1
        );
        if (dev.hit_at_1, dev.f1) > best {
            best = (dev.hit_at_1, dev.f1);
            best_epoch = epoch;
            best_dev = dev.clone();
            model.store.save(checkpoint_path)?;
            log::info!("epoch={epoch} checkpoint saved (new best dev)");
        }
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            dev,
        });
    }

    Ok(TrainOutcome {
        epochs_run: tc.epochs,
        best_epoch,
        best_dev,
        history,
    })
}

/// Writes the per-question records (one JSON object per line) and the
/// summary (pretty JSON). Output depends only on the records, so repeated
/// evaluations of one checkpoint produce byte-identical files.
pub fn write_report(
    records_path: &Path,
    summary_path: &Path,
    records: &[EvalRecord],
    summary: &EvalSummary,
) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("eval records serialize");
        out.push(b'\n');
    }
    std::fs::write(records_path, out)?;
    let mut summary_bytes = serde_json::to_vec_pretty(summary).expect("summary serializes");
    summary_bytes.push(b'\n');
    std::fs::write(summary_path, summary_bytes)?;
    Ok(())
}

/// Renders the corpus means as a small fixed-width table.
pub fn summary_table(rows: &[(String, EvalSummary)]) -> String {
    let mut s = String::from(
        "setting                    hit@1   precision  recall     f1      f1@top1\n",
    );
    for (name, m) in rows {
        s.push_str(&format!(
            "{name:<26} {:>6.4}  {:>9.4}  {:>7.4}  {:>7.4}  {:>7.4}\n",
            m.hit_at_1, m.precision, m.recall, m.f1, m.f1_top1
        ));
    }
    s
}
