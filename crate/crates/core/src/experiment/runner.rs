use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{partition_vertical, Provenance, VerticalPartition, VflDataset};
use crate::error::Result;
use crate::gini::{init_mu_from_gini, GiniReport};
use crate::nn::LossKind;
use crate::protocol::{
    mean_loss, run_training, Bucket, EarlyStop, Engine, GateInit, History, OracleTrainer, RoundRecord, SecureTrainer,
    TcpTransport, TrainConfig, Wire,
};

use super::config::{EngineKind, ExperimentConfig, Method, TransportKind};
use super::metrics::{accuracy, r2_score, selection, Selection};

/// Train/test split, optional validation rows and the vertical partition.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: VflDataset,
    pub validation: Option<VflDataset>,
    pub test: VflDataset,
    pub partition: VerticalPartition,
}

pub fn prepare(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<Prepared> {
    let seed = cfg.data_seed();
    let ds = cfg.dataset.build(seed, base)?;
    let (train, test) = ds.split(cfg.test_fraction, seed)?;
    let (train, validation) = if cfg.train.patience.is_some() {
        let (t, v) = train.split(cfg.validation_fraction, seed.wrapping_add(1))?;
        (t, Some(v))
    } else {
        (train, None)
    };
    let partition = partition_vertical(ds.n_features(), cfg.clients, cfg.partition, seed)?;
    Ok(Prepared {
        train,
        validation,
        test,
        partition,
    })
}

/// Either trainer behind one interface.
pub enum Trainer {
    Secure(Box<SecureTrainer>),
    Oracle(Box<OracleTrainer>),
}

impl Trainer {
    pub fn new(
        engine: EngineKind,
        transport: TransportKind,
        cfg: &TrainConfig,
        train: &VflDataset,
        partition: &VerticalPartition,
    ) -> Result<Self> {
        Ok(match engine {
            EngineKind::Plaintext => Trainer::Oracle(Box::new(OracleTrainer::new(cfg, train, partition)?)),
            EngineKind::Secure => {
                let wire = match transport {
                    TransportKind::Inproc => Wire::in_proc(),
                    TransportKind::Tcp => Wire::new(Box::new(TcpTransport::connect(partition.clients())?)),
                };
                Trainer::Secure(Box::new(SecureTrainer::new(cfg, train, partition, wire)?))
            }
        })
    }

    pub fn engine(&mut self) -> &mut dyn Engine {
        match self {
            Trainer::Secure(t) => t.as_mut(),
            Trainer::Oracle(t) => t.as_mut(),
        }
    }

    pub fn gini_init(&mut self, train: &VflDataset, partition: &VerticalPartition) -> Result<Vec<GiniReport>> {
        match self {
            Trainer::Secure(t) => t.gini_init(),
            Trainer::Oracle(t) => t.gini_init(train, partition),
        }
    }

    /// Bytes on the wire so far: setup, training and prediction.
    pub fn bytes_total(&self) -> u64 {
        match self {
            Trainer::Secure(t) => t.wire.meter.total().bytes,
            Trainer::Oracle(_) => 0,
        }
    }

    pub fn bucket_bytes(&self, bucket: Bucket) -> u64 {
        match self {
            Trainer::Secure(t) => t.wire.meter.bucket(bucket).values().map(|c| c.bytes).sum(),
            Trainer::Oracle(_) => 0,
        }
    }
}

/// Per-feature Gini scores in global feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiniTable {
    pub feature: Vec<usize>,
    pub name: Vec<String>,
    pub score: Vec<f64>,
    pub mu: Vec<f64>,
    pub constant: Vec<bool>,
}

impl GiniTable {
    fn from_reports(train: &VflDataset, partition: &VerticalPartition, reports: &[GiniReport], cfg: &TrainConfig) -> Self {
        let d = train.n_features();
        let scores: Vec<Vec<f64>> = reports.iter().map(|r| r.scores.clone()).collect();
        let mus: Vec<Vec<f64>> = reports
            .iter()
            .map(|r| init_mu_from_gini(&r.scores, cfg.mu_range.0, cfg.mu_range.1))
            .collect();
        let constant: Vec<Vec<bool>> = reports.iter().map(|r| r.constant.clone()).collect();
        GiniTable {
            feature: (0..d).collect(),
            name: train.names.clone(),
            score: partition.scatter(&scores, d),
            mu: partition.scatter(&mus, d),
            constant: partition.scatter(&constant, d),
        }
    }

    /// Indices of the `k` lowest scores, ties broken by index, sorted.
    pub fn lowest(&self, k: usize) -> Vec<usize> {
        let mut order: Vec<usize> = self.feature.clone();
        order.sort_by(|&a, &b| self.score[a].total_cmp(&self.score[b]).then(a.cmp(&b)));
        let mut keep: Vec<usize> = order.into_iter().take(k).collect();
        keep.sort_unstable();
        keep
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["feature", "name", "gini", "mu", "constant"])?;
        for j in 0..self.feature.len() {
            w.write_record([
                self.feature[j].to_string(),
                self.name[j].clone(),
                format!("{:?}", self.score[j]),
                format!("{:?}", self.mu[j]),
                self.constant[j].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs only the Gini exchange for a configuration.
pub fn gini_scores(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<(GiniTable, u64)> {
    cfg.validate()?;
    let prep = prepare(cfg, base)?;
    let mut trainer = Trainer::new(cfg.engine, cfg.transport, &cfg.train, &prep.train, &prep.partition)?;
    let reports = trainer.gini_init(&prep.train, &prep.partition)?;
    let bytes = trainer.bucket_bytes(Bucket::Setup);
    Ok((GiniTable::from_reports(&prep.train, &prep.partition, &reports, &cfg.train), bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// `None` when undefined: nothing selected while informative features
    /// exist, or provenance unknown.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub r2: Option<f64>,
    pub test_loss: f64,
    pub selected_ratio: f64,
    pub selected_count: usize,
    pub informative_selected: usize,
    pub bytes_total: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub total: u64,
    pub up: u64,
    pub down: u64,
    pub per_type: BTreeMap<String, u64>,
    /// `(round, bytes_up, bytes_down)`.
    pub per_round: Vec<(u64, u64, u64)>,
}

/// Training traffic aggregated from the per-round history.
pub fn comm_report(history: &History) -> CommReport {
    let mut r = CommReport::default();
    for rec in &history.records {
        r.up += rec.bytes_up;
        r.down += rec.bytes_down;
        r.per_round.push((rec.round, rec.bytes_up, rec.bytes_down));
        for (ty, b) in &rec.bytes_by_type {
            *r.per_type.entry(ty.clone()).or_default() += b;
        }
    }
    r.total = r.up + r.down;
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub method: Method,
    pub engine: EngineKind,
    pub seed: u64,
    pub data_seed: u64,
    pub clients: usize,
    pub n_features: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rounds: u64,
    pub stopped_early: bool,
    /// History file name, relative to the report.
    pub history: Option<String>,
    pub metrics: FinalMetrics,
    /// Global indices of the selected features.
    pub selected: Vec<usize>,
    pub gini: Option<Vec<f64>>,
    pub comm: CommReport,
    pub setup_bytes: u64,
    pub predict_bytes: u64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

/// A finished run: the report plus the full history.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub history: History,
}

/// Training set, partition and the map back to global features for the
/// chosen method. `gini_filter` keeps only its `k` features.
struct Plan {
    train: VflDataset,
    validation: Option<VflDataset>,
    test: VflDataset,
    partition: VerticalPartition,
    /// Global feature index of every column of `train`.
    global: Vec<usize>,
    gini: Option<GiniTable>,
    setup_bytes: u64,
}

fn plan(cfg: &ExperimentConfig, prep: Prepared) -> Result<Plan> {
    let d = prep.train.n_features();
    if cfg.method != Method::GiniFilter {
        return Ok(Plan {
            global: (0..d).collect(),
            train: prep.train,
            validation: prep.validation,
            test: prep.test,
            partition: prep.partition,
            gini: None,
            setup_bytes: 0,
        });
    }
    let k = cfg.gini_k.unwrap_or(d).min(d);
    let mut scorer = Trainer::new(cfg.engine, cfg.transport, &cfg.train, &prep.train, &prep.partition)?;
    let reports = scorer.gini_init(&prep.train, &prep.partition)?;
    let setup_bytes = scorer.bucket_bytes(Bucket::Setup);
    drop(scorer);
    let table = GiniTable::from_reports(&prep.train, &prep.partition, &reports, &cfg.train);
    let keep = table.lowest(k);
    let mut local_of = vec![None; d];
    for (local, &g) in keep.iter().enumerate() {
        local_of[g] = Some(local);
    }
    let features: Vec<Vec<usize>> = prep
        .partition
        .features
        .iter()
        .map(|f| f.iter().filter_map(|&g| local_of[g]).collect::<Vec<_>>())
        .filter(|f| !f.is_empty())
        .collect();
    if features.len() < prep.partition.clients() {
        log::info!(
            "gini_filter: {} of {} clients keep no features and sit out",
            prep.partition.clients() - features.len(),
            prep.partition.clients()
        );
    }
    Ok(Plan {
        train: prep.train.select_columns(&keep),
        validation: prep.validation.map(|v| v.select_columns(&keep)),
        test: prep.test.select_columns(&keep),
        partition: VerticalPartition { features },
        global: keep,
        gini: Some(table),
        setup_bytes,
    })
}

/// Global selection mask from per-client gate selections.
fn global_selection(selected: &[Vec<bool>], partition: &VerticalPartition, global: &[usize], d: usize) -> Vec<bool> {
    let local = partition.scatter(selected, global.len());
    let mut out = vec![false; d];
    for (l, &g) in global.iter().enumerate() {
        out[g] = local[l];
    }
    out
}

fn selection_of(mask: &[bool], provenance: &[Provenance]) -> Result<Selection> {
    let mut s = selection(mask, provenance)?;
    if provenance.iter().all(|&p| p == Provenance::Unknown) {
        s.precision = None;
        s.recall = None;
    }
    Ok(s)
}

/// Trains and evaluates one configuration without writing files.
pub fn run_experiment(cfg: &ExperimentConfig, base: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let prep = prepare(cfg, base)?;
    let provenance = prep.train.provenance.clone();
    let d = prep.train.n_features();
    let plan = plan(cfg, prep)?;
    let tcfg = cfg.method_train_config();

    let mut trainer = Trainer::new(cfg.engine, cfg.transport, &tcfg, &plan.train, &plan.partition)?;
    let mut gini = plan.gini.as_ref().map(|t| t.score.clone());
    if tcfg.init == GateInit::Gini && !tcfg.pin_feature_gates {
        let reports = trainer.gini_init(&plan.train, &plan.partition)?;
        gini = Some(GiniTable::from_reports(&plan.train, &plan.partition, &reports, &tcfg).score);
    }

    let val_views = plan.validation.as_ref().map(|v| plan.partition.views(v));
    let early = match (&val_views, &plan.validation, tcfg.patience) {
        (Some(views), Some(v), Some(patience)) => Some(EarlyStop {
            views,
            y: &v.y,
            patience,
            every: tcfg.eval_every.max(1),
        }),
        _ => None,
    };
    let mut hook = |engine: &dyn Engine, rec: &mut RoundRecord| {
        let mask = global_selection(&engine.selected(), &plan.partition, &plan.global, d);
        if let Ok(s) = selection_of(&mask, &provenance) {
            rec.metrics.insert("selected".into(), s.selected as f64);
            if let Some(p) = s.precision {
                rec.metrics.insert("precision".into(), p);
            }
        }
    };
    let history = run_training(trainer.engine(), tcfg.max_rounds, early, Some(&mut hook))?;

    let engine = trainer.engine();
    let mask = global_selection(&engine.selected(), &plan.partition, &plan.global, d);
    let sel = selection_of(&mask, &provenance)?;
    let test_views = plan.partition.views(&plan.test);
    let preds = engine.predict(&test_views, cfg.predict_gated)?;
    let kind = engine.loss_kind();
    let test_loss = mean_loss(kind, &preds, &plan.test.y)?;
    let (test_accuracy, r2) = match (kind, plan.test.classes()) {
        (LossKind::CrossEntropy, Some(c)) => (Some(accuracy(&preds, &plan.test.y, c)?), None),
        _ => {
            let flat: Vec<f64> = preds.iter().map(|p| p[0]).collect();
            (None, r2_score(&plan.test.y, &flat)?)
        }
    };
    let comm = comm_report(&history);
    let report = RunReport {
        name: cfg.name.clone(),
        method: cfg.method,
        engine: cfg.engine,
        seed: cfg.train.seed,
        data_seed: cfg.data_seed(),
        clients: cfg.clients,
        n_features: d,
        n_train: plan.train.n_samples(),
        n_test: plan.test.n_samples(),
        rounds: history.records.last().map_or(0, |r| r.round),
        stopped_early: history.stopped_early,
        history: None,
        metrics: FinalMetrics {
            precision: sel.precision,
            recall: sel.recall,
            test_accuracy,
            r2,
            test_loss,
            selected_ratio: sel.selected as f64 / d as f64,
            selected_count: sel.selected,
            informative_selected: sel.hits,
            bytes_total: trainer.bytes_total() + plan.setup_bytes,
        },
        selected: (0..d).filter(|&j| mask[j]).collect(),
        gini,
        comm,
        setup_bytes: trainer.bucket_bytes(Bucket::Setup) + plan.setup_bytes,
        predict_bytes: trainer.bucket_bytes(Bucket::Predict),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { report, history })
}

/// Output directory: the configured one, or `runs/<name>`.
pub fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

/// Writes `report.json`, `history.jsonl`, `timing.json` and one
/// `series/<metric>.csv` per per-round quantity.
pub fn write_outputs(out: &mut RunOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("series"))?;
    out.history.write_jsonl(&dir.join("history.jsonl"))?;
    out.report.history = Some("history.jsonl".into());
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&out.report)?)?;
    let timing = serde_json::json!({ "wall_time_s": out.report.wall_time_s });
    fs::write(dir.join("timing.json"), serde_json::to_vec_pretty(&timing)?)?;
    for (name, points) in series(&out.history) {
        let mut w = csv::Writer::from_path(dir.join("series").join(format!("{name}.csv")))?;
        w.write_record(["round", name.as_str()])?;
        for (r, v) in points {
            w.write_record([r.to_string(), format!("{v:?}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// `(round, value)` series keyed by metric name.
pub fn series(history: &History) -> BTreeMap<String, Vec<(u64, f64)>> {
    let mut out: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for rec in &history.records {
        let mut put = |k: &str, v: f64| out.entry(k.to_string()).or_default().push((rec.round, v));
        put("loss", rec.loss);
        put("open_feature_gates", rec.open_feature_gates as f64);
        put("open_embedding_gates", rec.open_embedding_gates as f64);
        put("bytes", (rec.bytes_up + rec.bytes_down) as f64);
        if let Some(a) = rec.train_acc {
            put("train_acc", a);
        }
        if let Some(v) = rec.val_loss {
            put("val_loss", v);
        }
        for (k, v) in &rec.metrics {
            put(k, *v);
        }
    }
    out
}

/// Loads a configuration file, applies `overrides`, runs it and writes the
/// outputs. CSV dataset paths resolve against the file's directory.
pub fn run_file(path: &Path, overrides: impl FnOnce(&mut ExperimentConfig)) -> Result<RunOutput> {
    let mut cfg = ExperimentConfig::load_unchecked(path)?;
    overrides(&mut cfg);
    cfg.validate()?;
    let base = path.parent();
    let mut out = run_experiment(&cfg, base)?;
    write_outputs(&mut out, &out_dir(&cfg))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub method: Method,
    pub rounds: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub r2: Option<f64>,
    pub selected_ratio: f64,
    pub bytes_total: u64,
}

impl From<&RunReport> for CompareRow {
    fn from(r: &RunReport) -> Self {
        CompareRow {
            name: r.name.clone(),
            method: r.method,
            rounds: r.rounds,
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            test_accuracy: r.metrics.test_accuracy,
            r2: r.metrics.r2,
            selected_ratio: r.metrics.selected_ratio,
            bytes_total: r.metrics.bytes_total,
        }
    }
}

/// Runs configurations in order and writes `compare.csv` and
/// `compare.json` into `dir`.
pub fn compare(configs: &[(ExperimentConfig, Option<PathBuf>)], dir: &Path) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::with_capacity(configs.len());
    for (cfg, base) in configs {
        let out = run_experiment(cfg, base.as_deref())?;
        rows.push(CompareRow::from(&out.report));
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join("compare.json"), serde_json::to_vec_pretty(&rows)?)?;
    let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
    w.write_record([
        "name",
        "method",
        "rounds",
        "precision",
        "recall",
        "test_accuracy",
        "r2",
        "selected_ratio",
        "bytes_total",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    for r in &rows {
        w.write_record([
            r.name.clone(),
            r.method.name().to_string(),
            r.rounds.to_string(),
            opt(r.precision),
            opt(r.recall),
            opt(r.test_accuracy),
            opt(r.r2),
            format!("{:?}", r.selected_ratio),
            r.bytes_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
