//! The MNIST classification and auto-encoder comparisons: per-seed training
//! runs and across-seed median curves.

use std::borrow::Cow;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{Activation, ActivationKind};
use crate::error::{Error, Result};
use crate::math::Rng;
use crate::mnist::{Dataset, MnistFiles, CLASSES};
use crate::network::{AdamConfig, AdamState, EvalMetrics, Network, NetworkSpec, Task};
use crate::normalization::NormalizerKind;
use crate::report::sig10;

pub const PAPER_TRAIN_SAMPLES: usize = 51_200;
pub const PAPER_TEST_SAMPLES: usize = 6_400;
pub const PAPER_BATCH_SIZE: usize = 128;
pub const PAPER_EPOCHS: usize = 50;
pub const PAPER_WIDTH: usize = 128;
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub activation: ActivationKind,
    pub hidden_layers: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    /// `None` applies the standard pairing (see [`normalizer_policy`]).
    pub normalizer: Option<NormalizerKind>,
    pub output_activation: Activation,
    pub adam: AdamConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Inverted dropout after every hidden layer; 0 disables it.
    #[serde(default)]
    pub dropout: f64,
}

/// SGELU networks get min-max after each hidden activation, every other
/// activation gets batch norm before it.
pub fn normalizer_policy(kind: ActivationKind) -> NormalizerKind {
    match kind {
        ActivationKind::Sgelu { .. } => NormalizerKind::MinMax,
        _ => NormalizerKind::BatchNorm,
    }
}

impl ExperimentConfig {
    /// 784 → 8×128 → 10, sigmoid output, 50 epochs of batch 128.
    pub fn classification(activation: ActivationKind) -> Self {
        ExperimentConfig {
            task: Task::Classify,
            activation,
            hidden_layers: 8,
            width: PAPER_WIDTH,
            epochs: PAPER_EPOCHS,
            batch_size: PAPER_BATCH_SIZE,
            seeds: DEFAULT_SEEDS.to_vec(),
            normalizer: None,
            output_activation: Activation::Sigmoid,
            adam: AdamConfig::default(),
            train_samples: PAPER_TRAIN_SAMPLES,
            test_samples: PAPER_TEST_SAMPLES,
            dropout: 0.0,
        }
    }

    /// 784 → 128 → 784, sigmoid output.
    pub fn autoencoder(activation: ActivationKind) -> Self {
        ExperimentConfig {
            task: Task::Autoencode,
            hidden_layers: 1,
            ..Self::classification(activation)
        }
    }

    pub fn normalizer(&self) -> NormalizerKind {
        self.normalizer.unwrap_or_else(|| normalizer_policy(self.activation))
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        if matches!(self.activation, ActivationKind::Relu | ActivationKind::Elu { .. }) {
            return Err(Error::config(format!(
                "{} networks are not part of the comparison; use sgelu, gelu or lisht",
                self.activation.name()
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::config("need at least one hidden layer of positive width"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        for (n, what) in [(self.train_samples, "training"), (self.test_samples, "test")] {
            if n == 0 || n % self.batch_size != 0 {
                return Err(Error::config(format!(
                    "{what} sample count {n} is not a positive multiple of the batch size {}",
                    self.batch_size
                )));
            }
        }
        match (self.activation, self.normalizer()) {
            (ActivationKind::Sgelu { .. }, NormalizerKind::BatchNorm) => Err(Error::config(
                "SGELU networks are paired with min-max normalization, not batch norm",
            )),
            (k, NormalizerKind::MinMax) if !matches!(k, ActivationKind::Sgelu { .. }) => Err(
                Error::config(format!("{} networks are paired with batch norm, not min-max", k.name())),
            ),
            _ => Ok(()),
        }
    }

    pub fn network_spec(&self, input_dim: usize) -> NetworkSpec {
        let output = match self.task {
            Task::Classify => CLASSES,
            Task::Autoencode => input_dim,
        };
        let mut spec = NetworkSpec::mlp(
            input_dim,
            &vec![self.width; self.hidden_layers],
            self.activation,
            self.normalizer(),
            output,
            self.output_activation,
        );
        let hidden = spec.layers.len() - 1;
        for l in &mut spec.layers[..hidden] {
            l.dropout = self.dropout;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub activation: String,
    pub seed: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Sentinel written when a run stops on a non-finite value; losses are NaN.
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub activation: ActivationKind,
    pub seed: u64,
    /// Test metrics of the freshly initialized network.
    pub initial_test: EvalMetrics,
    pub records: Vec<MetricsRecord>,
    pub network: Network,
    pub diverged: bool,
}

/// Batch-mean metrics over a whole dataset in evaluation mode. Batches are
/// taken in file order so min-max layers see the same groups every time.
pub fn evaluate_dataset(net: &Network, data: &Dataset, batch_size: usize, task: Task) -> Result<EvalMetrics> {
    let mut rng = Rng::new(0);
    let mut loss = 0.0;
    let mut acc = 0.0;
    let mut batches = 0usize;
    for batch in data.batches(batch_size, &mut rng, false)? {
        let target = target_for(task, &batch)?;
        let m = net.evaluate(&batch.x, target, task)?;
        loss += m.loss;
        acc += m.accuracy.unwrap_or(0.0);
        batches += 1;
    }
    let n = batches as f64;
    Ok(EvalMetrics {
        loss: loss / n,
        accuracy: (task == Task::Classify).then_some(acc / n),
    })
}

fn target_for(task: Task, batch: &crate::mnist::Batch) -> Result<&crate::math::Matrix> {
    match task {
        Task::Classify => batch
            .y
            .as_ref()
            .ok_or_else(|| Error::config("classification needs labelled data")),
        Task::Autoencode => Ok(&batch.x),
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Divergence { .. } | Error::NonFinite(_))
}

/// Called once per completed epoch record, from whichever thread ran it.
pub type EpochObserver<'a> = &'a (dyn Fn(&MetricsRecord) + Sync);

fn prefix(data: &Dataset, n: usize) -> Result<Cow<'_, Dataset>> {
    if data.len() == n {
        Ok(Cow::Borrowed(data))
    } else {
        data.take_subset(n).map(Cow::Owned)
    }
}

/// Loads the MNIST files in `dir` and keeps the leading `train_samples` and
/// `test_samples` examples.
pub fn load_mnist(dir: &Path, train_samples: usize, test_samples: usize) -> Result<(Dataset, Dataset)> {
    let files = MnistFiles::in_dir(dir)?;
    let train = files.load_train()?.take_subset(train_samples)?;
    let test = files.load_test()?.take_subset(test_samples)?;
    Ok((train, test))
}

/// Trains one network for one seed. Divergence ends the run early with a
/// sentinel record instead of an error.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    run_single_observed(cfg, seed, train, test, &|_| {})
}

pub fn run_single_observed(
    cfg: &ExperimentConfig,
    seed: u64,
    train: &Dataset,
    test: &Dataset,
    observer: EpochObserver<'_>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let train = prefix(train, cfg.train_samples)?;
    let test = prefix(test, cfg.test_samples)?;
    let root = Rng::new(seed);
    let mut init_rng = root.fork(0);
    let mut shuffle_rng = root.fork(1);
    let mut dropout_rng = root.fork(2);

    let mut net = Network::init(&cfg.network_spec(train.images.cols()), &mut init_rng)?;
    let mut adam = AdamState::for_network(&net, cfg.adam);
    let initial_test = evaluate_dataset(&net, &test, cfg.batch_size, cfg.task)?;
    let name = cfg.activation.name().to_string();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut diverged = false;

    for epoch in 1..=cfg.epochs {
        let result = (|| -> Result<MetricsRecord> {
            for batch in train.batches(cfg.batch_size, &mut shuffle_rng, true)? {
                let target = target_for(cfg.task, &batch)?;
                let loss = net.train_step(&batch.x, target, &mut adam, &mut dropout_rng)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
            }
            let tr = evaluate_dataset(&net, &train, cfg.batch_size, cfg.task)?;
            let te = evaluate_dataset(&net, &test, cfg.batch_size, cfg.task)?;
            if !(tr.loss.is_finite() && te.loss.is_finite()) {
                return Err(Error::NonFinite("evaluation loss"));
            }
            Ok(MetricsRecord {
                activation: name.clone(),
                seed,
                epoch,
                train_loss: tr.loss,
                test_loss: te.loss,
                train_acc: tr.accuracy,
                test_acc: te.accuracy,
                diverged: false,
            })
        })();
        match result {
            Ok(rec) => {
                observer(&rec);
                records.push(rec);
            }
            Err(e) if is_divergence(&e) => {
                let rec = MetricsRecord {
                    activation: name.clone(),
                    seed,
                    epoch,
                    train_loss: f64::NAN,
                    test_loss: f64::NAN,
                    train_acc: None,
                    test_acc: None,
                    diverged: true,
                };
                observer(&rec);
                records.push(rec);
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutcome {
        activation: cfg.activation,
        seed,
        initial_test,
        records,
        network: net,
        diverged,
    })
}

/// Runs every `(config, seed)` pair, at most `threads` at a time. Results
/// come back in config-then-seed order regardless of scheduling.
pub fn run_all(
    cfgs: &[ExperimentConfig],
    train: &Dataset,
    test: &Dataset,
    threads: usize,
    observer: EpochObserver<'_>,
) -> Result<Vec<RunOutcome>> {
    for c in cfgs {
        c.validate()?;
    }
    let jobs: Vec<(&ExperimentConfig, u64)> =
        cfgs.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    if threads <= 1 {
        return jobs
            .into_iter()
            .map(|(c, s)| run_single_observed(c, s, train, test, observer))
            .collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.into_par_iter()
            .map(|(c, s)| run_single_observed(c, s, train, test, observer))
            .collect()
    })
}

fn require_task(cfg: &ExperimentConfig, task: Task) -> Result<()> {
    if cfg.task != task {
        return Err(Error::config(format!(
            "expected a {} config, got {}",
            task.name(),
            cfg.task.name()
        )));
    }
    Ok(())
}

pub fn run_classification(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RunOutcome>> {
    require_task(cfg, Task::Classify)?;
    run_all(std::slice::from_ref(cfg), train, test, 1, &|_| {})
}

pub fn run_autoencoder(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Vec<RunOutcome>> {
    require_task(cfg, Task::Autoencode)?;
    run_all(std::slice::from_ref(cfg), train, test, 1, &|_| {})
}

#[derive(Debug, Clone, PartialEq)]
pub struct MedianRecord {
    pub activation: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    /// Runs that had not diverged by this epoch.
    pub runs: usize,
}

pub struct SuiteResult {
    pub runs: Vec<RunOutcome>,
    pub medians: Vec<MedianRecord>,
}

impl SuiteResult {
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.runs.iter().flat_map(|r| r.records.iter())
    }

    pub fn median(&self, activation: &str, epoch: usize) -> Option<&MedianRecord> {
        self.medians.iter().find(|m| m.activation == activation && m.epoch == epoch)
    }
}

/// Middle order statistic; mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-activation, per-epoch medians across seeds, ignoring diverged records.
pub fn median_curves(runs: &[RunOutcome]) -> Vec<MedianRecord> {
    let mut names: Vec<String> = Vec::new();
    for r in runs {
        let n = r.activation.name().to_string();
        if !names.contains(&n) {
            names.push(n);
        }
    }
    let mut out = Vec::new();
    for name in names {
        let group: Vec<&RunOutcome> = runs.iter().filter(|r| r.activation.name() == name).collect();
        let epochs = group.iter().map(|r| r.records.len()).max().unwrap_or(0);
        for epoch in 1..=epochs {
            let recs: Vec<&MetricsRecord> = group
                .iter()
                .filter_map(|r| r.records.get(epoch - 1))
                .filter(|m| !m.diverged)
                .collect();
            let pick = |f: &dyn Fn(&MetricsRecord) -> f64| median(&recs.iter().map(|m| f(m)).collect::<Vec<_>>());
            let acc = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| -> Option<f64> {
                let v: Option<Vec<f64>> = recs.iter().map(|m| f(m)).collect();
                v.filter(|v| !v.is_empty()).map(|v| median(&v))
            };
            out.push(MedianRecord {
                activation: name.clone(),
                epoch,
                train_loss: pick(&|m| m.train_loss),
                test_loss: pick(&|m| m.test_loss),
                train_acc: acc(&|m| m.train_acc),
                test_acc: acc(&|m| m.test_acc),
                runs: recs.len(),
            });
        }
    }
    out
}

/// Runs every config over its seeds and collapses the seeds to medians.
pub fn run_suite(cfgs: &[ExperimentConfig], train: &Dataset, test: &Dataset, threads: usize) -> Result<SuiteResult> {
    run_suite_observed(cfgs, train, test, threads, &|_| {})
}

pub fn run_suite_observed(
    cfgs: &[ExperimentConfig],
    train: &Dataset,
    test: &Dataset,
    threads: usize,
    observer: EpochObserver<'_>,
) -> Result<SuiteResult> {
    let first = cfgs.first().ok_or_else(|| Error::config("suite has no configurations"))?;
    for c in cfgs {
        if c.task != first.task || c.epochs != first.epochs || c.batch_size != first.batch_size {
            return Err(Error::config("suite configs must share task, epochs and batch size"));
        }
    }
    let runs = run_all(cfgs, train, test, threads, observer)?;
    let medians = median_curves(&runs);
    Ok(SuiteResult { runs, medians })
}

/// The three networks the comparison trains, with paper defaults.
pub fn standard_configs(task: Task, sgelu_alpha: f64) -> Result<Vec<ExperimentConfig>> {
    let kinds = [
        ActivationKind::sgelu(sgelu_alpha)?,
        ActivationKind::Gelu,
        ActivationKind::Lisht,
    ];
    Ok(kinds
        .into_iter()
        .map(|k| match task {
            Task::Classify => ExperimentConfig::classification(k),
            Task::Autoencode => ExperimentConfig::autoencoder(k),
        })
        .collect())
}

fn opt(v: Option<f64>) -> String {
    v.map(sig10).unwrap_or_default()
}

/// CSV with header `activation,seed,epoch,train_loss,test_loss,train_acc,test_acc`.
/// Accuracy columns are empty for the auto-encoder; diverged records carry NaN losses.
pub fn write_runs_csv<'a, W: Write>(records: impl IntoIterator<Item = &'a MetricsRecord>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "activation,seed,epoch,train_loss,test_loss,train_acc,test_acc")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.activation,
            r.seed,
            r.epoch,
            sig10(r.train_loss),
            sig10(r.test_loss),
            opt(r.train_acc),
            opt(r.test_acc)
        )?;
    }
    Ok(())
}

/// CSV with header `activation,epoch,train_loss,test_loss,train_acc,test_acc,runs`.
pub fn write_median_csv<W: Write>(medians: &[MedianRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "activation,epoch,train_loss,test_loss,train_acc,test_acc,runs")?;
    for m in medians {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            m.activation,
            m.epoch,
            sig10(m.train_loss),
            sig10(m.test_loss),
            opt(m.train_acc),
            opt(m.test_acc),
            m.runs
        )?;
    }
    Ok(())
}
