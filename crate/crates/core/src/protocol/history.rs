use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Task, VflDataset};
use crate::error::{Error, Result};
use crate::gini::{build_indicator, partition_feature, IndicatorMatrix};
use crate::data::FeatureKind;
use crate::nn::{class_index, evaluate, LossKind, Matrix};
use crate::rng::{stream, Stream, StreamRng};

use super::model::{ClientModel, Snapshot};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub loss: f64,
    pub train_acc: Option<f64>,
    pub open_feature_gates: usize,
    pub open_embedding_gates: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Regularizer value per client after the round's update.
    pub reg: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bytes_by_type: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    /// Extra per-round values supplied by the caller's hook.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<RoundRecord>,
    pub stopped_early: bool,
}

impl History {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<RoundRecord>, _>>()?;
        Ok(History {
            records,
            stopped_early: false,
        })
    }
}

/// Epoch-wise shuffled mini-batches from the `Batches` stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::Batches);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchSampler { order, pos: 0, rng }
    }

    /// The next `b` indices (at most one full pass); reshuffles at the end
    /// of every epoch.
    pub fn next_batch(&mut self, b: usize) -> Vec<usize> {
        let n = self.order.len();
        let mut out = Vec::with_capacity(b.min(n));
        for _ in 0..b.min(n) {
            if self.pos == n {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Output layer size, loss and class count for a task.
pub fn task_shape(task: Task) -> (usize, LossKind, Option<usize>) {
    match task {
        Task::Classification { classes } => (classes, LossKind::CrossEntropy, Some(classes)),
        Task::Regression => (1, LossKind::Mse, None),
    }
}

/// Class labels for the Gini exchange. Regression targets are cut into
/// quantile bins and the bin index is used as the class.
pub fn gini_labels(y: &[f64], task: Task, bins: usize) -> Result<(Vec<usize>, usize)> {
    match task {
        Task::Classification { classes } => Ok((
            y.iter().map(|&v| class_index(v, classes)).collect::<Result<_>>()?,
            classes,
        )),
        Task::Regression => {
            let part = partition_feature(y, FeatureKind::Continuous, bins)?;
            let mut labels = vec![0; y.len()];
            for (k, cell) in part.cells.iter().enumerate() {
                for &i in cell {
                    labels[i] = k;
                }
            }
            Ok((labels, part.cells.len()))
        }
    }
}

pub fn gini_indicator(y: &[f64], task: Task, bins: usize) -> Result<(Vec<usize>, IndicatorMatrix)> {
    let (labels, c) = gini_labels(y, task, bins)?;
    let a = build_indicator(&labels, c)?;
    Ok((labels, a))
}

/// Per-client feature kinds in partition order.
pub fn client_kinds(ds: &VflDataset, features: &[Vec<usize>]) -> Vec<Vec<FeatureKind>> {
    features.iter().map(|f| f.iter().map(|&j| ds.kinds[j]).collect()).collect()
}

/// A trainer that can be driven round by round: the secure protocol or the
/// plaintext oracle.
pub trait Engine {
    fn round(&self) -> u64;
    fn step(&mut self) -> Result<RoundRecord>;
    /// Model outputs for aligned rows of every client's view.
    fn predict(&mut self, views: &[Matrix], gated: bool) -> Result<Vec<Vec<f64>>>;
    fn snapshot(&self) -> Snapshot;
    fn client_models(&self) -> Vec<&ClientModel>;
    fn loss_kind(&self) -> LossKind;
    fn threshold(&self) -> f64;

    /// Feature-gate selections per client.
    fn selected(&self) -> Vec<Vec<bool>> {
        let t = self.threshold();
        self.client_models().iter().map(|c| c.features.selected_mask(t)).collect()
    }
}

/// Held-out data and patience for early stopping.
pub struct EarlyStop<'a> {
    pub views: &'a [Matrix],
    pub y: &'a [f64],
    pub patience: u64,
    pub every: u64,
}

pub fn mean_loss(kind: LossKind, preds: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if preds.len() != y.len() || y.is_empty() {
        return Err(Error::shape(format!("{} predictions", y.len()), preds.len()));
    }
    let mut total = 0.0;
    for (p, &t) in preds.iter().zip(y) {
        total += evaluate(kind, p, t)?.0;
    }
    Ok(total / y.len() as f64)
}

pub type RoundHook<'h> = &'h mut dyn FnMut(&dyn Engine, &mut RoundRecord);

/// Runs up to `max_rounds` rounds, optionally stopping once the held-out
/// loss has not improved for `patience` rounds.
pub fn run_training(
    engine: &mut dyn Engine,
    max_rounds: u64,
    early: Option<EarlyStop<'_>>,
    mut hook: Option<RoundHook<'_>>,
) -> Result<History> {
    let mut history = History::default();
    let mut best = f64::INFINITY;
    let mut best_round = 0;
    for _ in 0..max_rounds {
        let mut rec = engine.step()?;
        if let Some(es) = &early {
            if rec.round % es.every == 0 {
                let preds = engine.predict(es.views, false)?;
                let val = mean_loss(engine.loss_kind(), &preds, es.y)?;
                rec.val_loss = Some(val);
                if val < best {
                    best = val;
                    best_round = rec.round;
                }
            }
        }
        if let Some(h) = hook.as_mut() {
            h(&*engine, &mut rec);
        }
        let round = rec.round;
        history.records.push(rec);
        if let Some(es) = &early {
            if round - best_round >= es.patience && best.is_finite() {
                log::info!("early stop at round {round}: best held-out loss {best:.5} at round {best_round}");
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(history)
}
