//! Training with curriculum-scheduled excitation, evaluation and prediction.

use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curriculum::{default_zero_from, CurriculumSchedule, ScheduleKind};
use crate::dataio::{self, Grid, SamplePair, Split};
use crate::error::{Error, Result};
use crate::excitation::{DownscaleMode, GradientMode};
use crate::exec;
use crate::metrics::{self, MetricsRecord, SaliencyMap};
use crate::network::{NetworkSpec, ParameterStore, UNet};
use crate::tensor::Tensor;

pub const HISTORY_HEADER: &str = "epoch,alpha,train_loss,val_f_beta,val_mae";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("optimizer must be sgd or adam, got `{s}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset_root: PathBuf,
    pub network: NetworkSpec,
    pub ae_enabled: bool,
    pub downscale_mode: DownscaleMode,
    pub gradient_mode: GradientMode,
    pub schedule: ScheduleKind,
    pub alpha0: f64,
    /// Defaults to `round(0.8·epochs)` when unset.
    pub zero_from: Option<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_out: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset_root: PathBuf::from("data"),
            network: NetworkSpec::default(),
            ae_enabled: true,
            downscale_mode: DownscaleMode::Any,
            gradient_mode: GradientMode::Flow,
            schedule: ScheduleKind::Cosine,
            alpha0: 1.0,
            zero_from: None,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            checkpoint_out: None,
            metrics_out: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        self.network.validate()?;
        self.curriculum()?;
        Ok(())
    }

    pub fn curriculum(&self) -> Result<CurriculumSchedule> {
        let zero_from = self.zero_from.unwrap_or_else(|| default_zero_from(self.epochs));
        CurriculumSchedule::new(self.schedule, self.alpha0, self.epochs, zero_from)
    }

    /// Excitation factor used during `epoch`; always 0 with excitation off.
    pub fn alpha_at(&self, epoch: usize) -> Result<f64> {
        if !self.ae_enabled {
            return Ok(0.0);
        }
        Ok(self.curriculum()?.alpha_at(epoch))
    }

    pub fn build_network(&self) -> Result<UNet> {
        UNet::new(self.network.clone(), self.downscale_mode, self.gradient_mode)
    }
}

/// One row per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub alpha: f64,
    pub train_loss: f64,
    /// NaN when the validation split is empty.
    pub val_f_beta: f64,
    pub val_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.alpha, r.train_loss, r.val_f_beta, r.val_mae
            ));
        }
        s
    }
}

enum OptState {
    Sgd {
        velocity: Vec<Vec<f64>>,
    },
    Adam {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: i32,
    },
}

/// First-order optimizer applied to a whole parameter store.
pub struct Optimizer {
    lr: f64,
    momentum: f64,
    beta1: f64,
    beta2: f64,
    state: OptState,
}

const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(config: &TrainConfig, store: &ParameterStore) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.len()]).collect::<Vec<_>>();
        let state = match config.optimizer {
            OptimizerKind::Sgd => OptState::Sgd { velocity: zeros() },
            OptimizerKind::Adam => OptState::Adam {
                m: zeros(),
                v: zeros(),
                step: 0,
            },
        };
        Optimizer {
            lr: config.learning_rate,
            momentum: config.momentum,
            beta1: config.beta1,
            beta2: config.beta2,
            state,
        }
    }

    /// `grads[i]` belongs to the i-th tensor of `store`.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Vec<f64>]) {
        match &mut self.state {
            OptState::Sgd { velocity } => {
                for ((p, g), vel) in store.values_mut().zip(grads).zip(velocity.iter_mut()) {
                    for ((p, &g), v) in p.iter_mut().zip(g).zip(vel.iter_mut()) {
                        *v = self.momentum * *v + g;
                        *p -= self.lr * *v;
                    }
                }
            }
            OptState::Adam { m, v, step } => {
                *step += 1;
                let bc1 = 1.0 - self.beta1.powi(*step);
                let bc2 = 1.0 - self.beta2.powi(*step);
                for (((p, g), m), v) in store.values_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

pub struct TrainOutcome {
    pub network: UNet,
    pub store: ParameterStore,
    pub history: TrainHistory,
}

fn mask_target(sample: &SamplePair) -> Tensor {
    let (h, w) = (sample.mask.height(), sample.mask.width());
    Tensor::new([1, h, w], sample.mask.to_values()).expect("mask extents")
}

/// Loads the train and validation splits and checks them against the network.
pub fn load_training_data(config: &TrainConfig) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    let manifest = dataio::scan_dataset(&config.dataset_root)?;
    let train = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Val)?;
    if train.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: train split is empty",
            config.dataset_root.display()
        )));
    }
    let d = config.network.divisor();
    for s in train.iter().chain(&val) {
        let (c, h, w) = s.image.chw()?;
        if c != config.network.in_channels {
            return Err(Error::Dataset(format!(
                "`{}` has {c} channels, config says in_channels = {}",
                s.id, config.network.in_channels
            )));
        }
        if h % d != 0 || w % d != 0 {
            return Err(Error::Dataset(format!(
                "`{}` is {h}×{w}; extents must be multiples of {d} for {} stages",
                s.id, config.network.stages
            )));
        }
    }
    Ok((train, val))
}

/// Trains on the configured dataset and writes the checkpoint and history
/// CSV when their paths are set.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let (train_set, val_set) = load_training_data(config)?;
    let outcome = train_on(config, &train_set, &val_set)?;
    if let Some(path) = &config.checkpoint_out {
        dataio::save_checkpoint(&outcome.store, path)?;
    }
    if let Some(path) = &config.metrics_out {
        fs::write(path, outcome.history.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(outcome)
}

/// Training loop over in-memory samples. Single-threaded over samples, so
/// the result depends only on the config and data.
pub fn train_on(config: &TrainConfig, train_set: &[SamplePair], val_set: &[SamplePair]) -> Result<TrainOutcome> {
    config.validate()?;
    let network = config.build_network()?;
    let mut store = network.init_params(config.seed);
    let mut optimizer = Optimizer::new(config, &store);
    let targets: Vec<Tensor> = train_set.iter().map(mask_target).collect();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let alpha = config.alpha_at(epoch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for &i in &order {
            let sample = &train_set[i];
            let mut pass = network.forward_train(&store, &sample.image, &sample.mask, alpha)?;
            let loss = pass.tape.bce_loss(pass.output, &targets[i])?;
            let value = pass.tape.value(loss).item().expect("scalar loss");
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    sample: sample.id.clone(),
                });
            }
            loss_sum += value;
            pass.tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = pass
                .params
                .iter()
                .map(|&p| match pass.tape.grad(p) {
                    Some(g) => g.to_vec(),
                    None => vec![0.0; pass.tape.value(p).len()],
                })
                .collect();
            optimizer.step(&mut store, &grads);
        }

        let (val_f_beta, val_mae) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let r = evaluate_samples(&network, &store, val_set)?;
            (r.f_beta, r.mae)
        };
        let row = EpochRecord {
            epoch,
            alpha,
            train_loss: loss_sum / train_set.len() as f64,
            val_f_beta,
            val_mae,
        };
        info!(
            "epoch {epoch:>3} alpha {:.4} loss {:.5} val F {:.4} MAE {:.4}",
            row.alpha, row.train_loss, row.val_f_beta, row.val_mae
        );
        history.rows.push(row);
    }
    Ok(TrainOutcome {
        network,
        store,
        history,
    })
}

/// Inference-path saliency map for one image.
pub fn predict_map(network: &UNet, store: &ParameterStore, image: &Tensor) -> Result<SaliencyMap> {
    let out = network.forward_infer(store, image)?;
    let (_, h, w) = out.chw()?;
    SaliencyMap::new(h, w, out.into_data())
}

/// Scores `samples` with an arbitrary predictor, in parallel.
pub fn evaluate_with<F>(samples: &[SamplePair], predict: F) -> Result<MetricsRecord>
where
    F: Fn(&SamplePair) -> Result<SaliencyMap> + Sync + Send,
{
    let records = exec::map(samples, |s| metrics::evaluate_image(&predict(s)?, &s.mask));
    metrics::mean_record(&records.into_iter().collect::<Result<Vec<_>>>()?)
}

pub fn evaluate_samples(network: &UNet, store: &ParameterStore, samples: &[SamplePair]) -> Result<MetricsRecord> {
    evaluate_with(samples, |s| predict_map(network, store, &s.image))
}

/// Sequential counterpart of [`evaluate_samples`]; identical results.
pub fn evaluate_samples_seq(network: &UNet, store: &ParameterStore, samples: &[SamplePair]) -> Result<MetricsRecord> {
    let records = exec::map_seq(samples, |s| {
        metrics::evaluate_image(&predict_map(network, store, &s.image)?, &s.mask)
    });
    metrics::mean_record(&records.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Rebuilds the inference network described by a checkpoint.
pub fn load_model(checkpoint: impl AsRef<Path>) -> Result<(UNet, ParameterStore)> {
    let store = dataio::load_checkpoint(checkpoint)?;
    let spec = NetworkSpec::infer_from(&store)?;
    let network = UNet::new(spec, DownscaleMode::default(), GradientMode::default())?;
    Ok((network, store))
}

/// Evaluates a checkpoint on one split; appends a CSV row to `metrics_out`
/// (writing the header first if the file is new or empty).
pub fn evaluate_checkpoint(
    checkpoint: impl AsRef<Path>,
    dataset_root: impl AsRef<Path>,
    split: Split,
    metrics_out: Option<&Path>,
) -> Result<MetricsRecord> {
    let (network, store) = load_model(checkpoint)?;
    let manifest = dataio::scan_dataset(dataset_root)?;
    let samples = manifest.load_split(split)?;
    if samples.is_empty() {
        return Err(Error::Dataset(format!("split `{split}` is empty")));
    }
    let record = evaluate_samples(&network, &store, &samples)?;
    if let Some(path) = metrics_out {
        append_csv_row(path, metrics::CSV_HEADER, &record.csv_row(&split.to_string()))?;
    }
    Ok(record)
}

pub fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let text = if fresh {
        format!("{header}\n{row}\n")
    } else {
        format!("{row}\n")
    };
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs a checkpoint on one image file and writes the saliency map as PGM.
pub fn predict_file(checkpoint: impl AsRef<Path>, image: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<()> {
    let (network, store) = load_model(checkpoint)?;
    let image = dataio::load_image(image)?;
    let map = predict_map(&network, &store, &image)?;
    let grid = Grid::new(map.height(), map.width(), map.values().to_vec())?;
    dataio::save_pgm(&grid, out)
}

/// Test-split scores of a baseline and an excitation run sharing one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline: MetricsRecord,
    pub excited: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<SeedComparison>,
}

impl Comparison {
    pub fn mean_baseline(&self) -> (f64, f64) {
        mean_pair(self.runs.iter().map(|r| &r.baseline))
    }

    pub fn mean_excited(&self) -> (f64, f64) {
        mean_pair(self.runs.iter().map(|r| &r.excited))
    }

    /// Mean F-measure does not drop and mean MAE does not rise.
    pub fn excitation_helps(&self) -> bool {
        let (fb, mb) = self.mean_baseline();
        let (fe, me) = self.mean_excited();
        fe >= fb && me <= mb
    }
}

fn mean_pair<'a>(records: impl Iterator<Item = &'a MetricsRecord>) -> (f64, f64) {
    let (mut f, mut m, mut n) = (0.0, 0.0, 0usize);
    for r in records {
        f += r.f_beta;
        m += r.mae;
        n += 1;
    }
    (f / n as f64, m / n as f64)
}

/// Final test-split metrics of one training run.
pub fn run_and_test(config: &TrainConfig, data: &ExperimentData) -> Result<MetricsRecord> {
    let out = train_on(config, &data.train, &data.val)?;
    evaluate_samples(&out.network, &out.store, &data.test)
}

/// Train/val/test samples held in memory for repeated runs.
pub struct ExperimentData {
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

impl ExperimentData {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let manifest = dataio::scan_dataset(root)?;
        Ok(ExperimentData {
            train: manifest.load_split(Split::Train)?,
            val: manifest.load_split(Split::Val)?,
            test: manifest.load_split(Split::Test)?,
        })
    }
}

/// Baseline versus excitation over `seeds`; the two arms differ only in
/// `ae_enabled`. Runs are independent and execute in parallel.
pub fn compare(base: &TrainConfig, data: &ExperimentData, seeds: &[u64]) -> Result<Comparison> {
    if data.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let results = exec::map(&jobs, |&(seed, ae)| {
        let cfg = TrainConfig {
            seed,
            ae_enabled: ae,
            checkpoint_out: None,
            metrics_out: None,
            ..base.clone()
        };
        run_and_test(&cfg, data)
    });
    let mut results = results.into_iter();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let baseline = results.next().expect("job per arm")?;
        let excited = results.next().expect("job per arm")?;
        runs.push(SeedComparison {
            seed,
            baseline,
            excited,
        });
    }
    Ok(Comparison { runs })
}

/// Runs `config` with excitation enabled for each seed (test-split scores).
pub fn run_excited(config: &TrainConfig, data: &ExperimentData, seeds: &[u64]) -> Result<Vec<MetricsRecord>> {
    let results = exec::map(seeds, |&seed| {
        let cfg = TrainConfig {
            seed,
            ae_enabled: true,
            checkpoint_out: None,
            metrics_out: None,
            ..config.clone()
        };
        run_and_test(&cfg, data)
    });
    results.into_iter().collect()
}
