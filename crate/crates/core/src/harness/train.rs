use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{BlobSource, ExperimentConfig};
use super::synth::{flip_tensor, load_split, Sample, Split};
use crate::blobpipe::{blobs_from_labels, BlobMap, FACE};
use crate::error::{Error, Result};
use crate::grid::{HardMask, LabelMap};
use crate::metrics::{sparsity, superpixel_accuracy, ConfusionMatrix, MetricsRow, Scores};
use crate::net::{Adam, Network, PlateauScheduler};
use crate::tensor::{hard_predict, softmax_channels, Tensor};

pub const NUM_CLASSES: usize = 3;
pub const LOG_HEADER: &str = "epoch,loss,val_mean_recall,val_sparsity,lr";
pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const ERROR_FILE: &str = "error.txt";

const INIT_STREAM: u64 = 1 << 40;
const TRAIN_STREAM: u64 = 2 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mean_recall: f64,
    pub val_sparsity: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.loss, self.val_mean_recall, self.val_sparsity, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub checkpoint: PathBuf,
}

/// Blob map used as the consensus partition for one sample.
pub fn training_blobs(sample: &Sample, source: BlobSource) -> BlobMap {
    match source {
        BlobSource::Synth => sample.blobs.clone(),
        BlobSource::Classes => blobs_from_labels(&sample.labels, false),
        BlobSource::Components => blobs_from_labels(&sample.labels, true),
    }
}

pub fn initial_network(cfg: &ExperimentConfig) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INIT_STREAM);
    Network::desk(NUM_CLASSES, cfg.dropout, &mut rng)
}

pub fn predict_mask(net: &Network, image: &Tensor) -> Result<HardMask> {
    hard_predict(&softmax_channels(&net.predict(image)?)?)
}

/// Load the train and val splits from `data_dir` and train.
pub fn train(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_set = load_split(data_dir, Split::Train, cfg.n_train)?;
    let val_set = load_split(data_dir, Split::Val, cfg.n_val)?;
    train_on(cfg, &train_set, &val_set, out_dir)
}

fn record_error(out_dir: &Path, err: &Error) {
    let _ = fs::write(
        out_dir.join(ERROR_FILE),
        format!("error[{}]: {}\n", err.category(), err),
    );
}

/// Train from `initial_network(cfg)`, writing the epoch log, the config and
/// the best-by-validation-recall checkpoint into `out_dir`.
pub fn train_on(
    cfg: &ExperimentConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: &Path,
) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg_path = out_dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let _ = fs::remove_file(out_dir.join(ERROR_FILE));
    let log_path = out_dir.join(LOG_FILE);
    let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;

    let result = run_epochs(cfg, train_set, val_set, out_dir, &mut |rec| {
        writeln!(log, "{}", rec.csv())
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))
    });
    if let Err(e) = &result {
        record_error(out_dir, e);
    }
    result
}

fn run_epochs(
    cfg: &ExperimentConfig,
    train_set: &[Sample],
    val_set: &[Sample],
    out_dir: &Path,
    emit: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainSummary> {
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let loss_cfg = cfg.loss_config();
    let mut net = initial_network(cfg)?;
    let mut opt = Adam::new(cfg.lr);
    let mut sched = PlateauScheduler::new(cfg.lr_factor, cfg.lr_patience, cfg.lr_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);

    let blobs: Vec<BlobMap> = train_set.iter().map(|s| training_blobs(s, cfg.blobs)).collect();
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut losses = vec![0.0; train_set.len()];

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = net.zero_grads();
            for &idx in batch {
                let s = &train_set[idx];
                let flipped;
                let (image, labels, blob) = if cfg.flip && rng.random_bool(0.5) {
                    flipped = (
                        flip_tensor(&s.image)?,
                        s.labels.flip_horizontal(),
                        blobs[idx].flip_horizontal(),
                    );
                    (&flipped.0, &flipped.1, &flipped.2)
                } else {
                    (&s.image, &s.labels, &blobs[idx])
                };
                let drop_rng: Option<&mut dyn rand::RngCore> = if cfg.dropout > 0.0 { Some(&mut rng) } else { None };
                let (z, cache) = net.forward(image, drop_rng)?;
                let mut res = cfg.loss.evaluate(&z, labels, blob, &loss_cfg)?;
                if !res.loss.is_finite() || !res.grad.is_finite() {
                    return Err(Error::NonFinite(format!("loss diverged at epoch {epoch}, image {idx}")));
                }
                losses[idx] = res.loss;
                let scale = 1.0 / batch.len() as f64;
                res.grad.data_mut().iter_mut().for_each(|g| *g *= scale);
                net.backward(&cache, &res.grad, &mut grads, false)?;
            }
            opt.step(net.params_mut(), &grads)?;
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val = evaluate(&net, val_set, false)?;
        let rec = EpochRecord {
            epoch,
            loss,
            val_mean_recall: val.scores.mean_recall.unwrap_or(0.0),
            val_sparsity: val.sparsity,
            lr: opt.lr,
        };
        if !(rec.loss.is_finite() && rec.val_mean_recall.is_finite() && rec.val_sparsity.is_finite()) {
            return Err(Error::NonFinite(format!("epoch {epoch} summary")));
        }
        emit(&rec)?;
        if rec.val_mean_recall > best.1 {
            best = (epoch, rec.val_mean_recall);
            net.save(&checkpoint)?;
        }
        opt.lr = sched.observe(rec.val_mean_recall, opt.lr);
        records.push(rec);
    }
    Ok(TrainSummary {
        epochs: records,
        best_epoch: best.0,
        best_val_recall: best.1,
        checkpoint,
    })
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
    pub sparsity: f64,
    pub superpixel_accuracy: f64,
}

fn merge_labels(m: &LabelMap) -> LabelMap {
    m.map(|&v| u8::from(v == FACE))
}

/// Score `net` on `samples`. `merged` folds occlusion and background into a
/// single non-face class before scoring.
pub fn evaluate(net: &Network, samples: &[Sample], merged: bool) -> Result<Evaluation> {
    let k = if merged { 2 } else { NUM_CLASSES };
    let mut cm = ConfusionMatrix::new(k);
    let mut pairs = Vec::with_capacity(samples.len());
    let mut sp_total = 0.0;
    for s in samples {
        let mut pred = predict_mask(net, &s.image)?;
        let mut gt = s.labels.clone();
        if merged {
            pred = merge_labels(&pred);
            gt = merge_labels(&gt);
        }
        cm.accumulate(&pred, &gt, None)?;
        let region_gt = s.superpixels.region_modes(&gt)?;
        sp_total += superpixel_accuracy(&pred, &region_gt, &s.superpixels)?;
        pairs.push((pred, gt));
    }
    let sparsity = sparsity(pairs.iter().map(|(p, g)| (p, g)))?;
    Ok(Evaluation {
        scores: cm.scores(),
        confusion: cm,
        sparsity,
        superpixel_accuracy: if samples.is_empty() {
            0.0
        } else {
            sp_total / samples.len() as f64
        },
    })
}

/// Evaluate a checkpoint on one split of a generated dataset and write the
/// metrics CSV (header plus one row).
pub fn eval(
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    n: usize,
    merged: bool,
    method: &str,
    out_csv: &Path,
) -> Result<MetricsRow> {
    let net = Network::load(checkpoint)?;
    let samples = load_split(data_dir, split, n)?;
    let ev = evaluate(&net, &samples, merged)?;
    let row = MetricsRow {
        method: method.to_string(),
        split: split.name().to_string(),
        scores: ev.scores,
        sparsity: ev.sparsity,
        superpixel_accuracy: Some(ev.superpixel_accuracy),
    };
    let k = if merged { 2 } else { NUM_CLASSES };
    let text = format!("{}\n{}\n", MetricsRow::csv_header(k), row.to_csv());
    fs::write(out_csv, text).map_err(|e| Error::io(out_csv, e))?;
    Ok(row)
}
