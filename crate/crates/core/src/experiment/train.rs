use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{self, SaveInfo};
use crate::config::ExperimentConfig;
use crate::data::{Dataset, Mode, PreprocessConfig};
use crate::error::{Error, Result};
use crate::experiment::output::write_training_log;
use crate::experiment::{ensure_dir, RunData};
use crate::metrics::Metrics;
use crate::model::PemvModel;
use crate::nn::Module;
use crate::optim::AdamW;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_o: f64,
    pub loss_f: f64,
    pub loss_ip: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val: Metrics,
    pub log: Vec<EpochLog>,
    pub model: PemvModel<f32>,
    pub checkpoint: PathBuf,
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    epoch: usize,
    batch: usize,
    indices: &'a [usize],
    loss_total: f64,
    loss_o: f64,
    loss_f: f64,
    loss_ip: f64,
}

/// Trains one seed. Writes `training_log.csv` and `best.ckpt` to `out_dir`.
/// The kept model has the best validation accuracy; ties keep the earlier epoch.
pub fn train(cfg: &ExperimentConfig, seed: u64, data: &RunData, out_dir: &Path) -> Result<TrainResult> {
    cfg.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::Invalid("training and validation splits must be non-empty".into()));
    }
    ensure_dir(out_dir)?;
    let hash = cfg.hash();
    let mut model = PemvModel::<f32>::new(cfg.model.clone(), &mut stream(seed, STREAM_INIT))?;
    let mut opt = AdamW::<f32>::new(cfg.optim.clone());
    let mut shuffle_rng = stream(seed, STREAM_SHUFFLE);
    let mut pair_rng = stream(seed, STREAM_PAIRS);
    let mut aug_rng = stream(seed, STREAM_AUGMENT);
    let checkpoint_path = out_dir.join("best.ckpt");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let mut best: Option<(usize, Metrics, PemvModel<f32>)> = None;

    for epoch in 1..=cfg.train.epochs {
        order.shuffle(&mut shuffle_rng);
        let aug_seed = aug_rng.next_u64();
        let mut sums = [0.0f64; 4];
        for (b, indices) in order.chunks(cfg.train.batch_size).enumerate() {
            let (images, labels) = data.train.batch(indices, &cfg.data, Mode::Train, aug_seed);
            model.zero_grad();
            let out = model.forward_backward(&images, &labels, &cfg.loss, &mut pair_rng)?;
            let parts = [out.total, out.lo, out.lf, out.lip].map(f64::from);
            if parts.iter().any(|v| !v.is_finite()) {
                let dump = Diagnostic {
                    epoch,
                    batch: b,
                    indices,
                    loss_total: parts[0],
                    loss_o: parts[1],
                    loss_f: parts[2],
                    loss_ip: parts[3],
                };
                std::fs::write(out_dir.join("nonfinite_loss.json"), serde_json::to_string_pretty(&dump)?)?;
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    indices: indices.to_vec(),
                    components: format!("total={} lo={} lf={} lip={}", parts[0], parts[1], parts[2], parts[3]),
                });
            }
            opt.step(&mut model);
            model.update_bank(&out.mediators, &labels)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p * indices.len() as f64;
            }
        }
        let n = data.train.len() as f64;
        let (val, _) = evaluate_model(&model, &data.val, &cfg.data, cfg.train.batch_size)?;
        let entry = EpochLog {
            epoch,
            loss_total: sums[0] / n,
            loss_o: sums[1] / n,
            loss_f: sums[2] / n,
            loss_ip: sums[3] / n,
            val,
        };
        log::info!(
            "seed {seed} epoch {epoch}/{}: loss {:.4} (o {:.4} f {:.4} ip {:.4}) val acc {:.2}",
            cfg.train.epochs,
            entry.loss_total,
            entry.loss_o,
            entry.loss_f,
            entry.loss_ip,
            val.acc
        );
        log.push(entry);
        if best.as_ref().is_none_or(|(_, m, _)| val.acc > m.acc) {
            checkpoint::save(
                &checkpoint_path,
                &model,
                &SaveInfo {
                    config_hash: &hash,
                    seed,
                    epoch,
                    val_acc: val.acc,
                },
            )?;
            best = Some((epoch, val, model.clone()));
        }
    }
    write_training_log(&out_dir.join("training_log.csv"), &log)?;
    let (best_epoch, best_val, model) = best.expect("at least one epoch");
    Ok(TrainResult {
        seed,
        best_epoch,
        best_val,
        log,
        model,
        checkpoint: checkpoint_path,
    })
}

/// Metrics and predictions of `model` on a whole split, without augmentation.
pub fn evaluate_model(model: &PemvModel<f32>, data: &Dataset, pre: &PreprocessConfig, batch_size: usize) -> Result<(Metrics, Vec<usize>)> {
    let mut predictions = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (images, _) = data.batch(chunk, pre, Mode::Eval, 0);
        predictions.extend(model.predict_batch(&images)?);
    }
    Ok((Metrics::from_predictions(&predictions, &data.labels)?, predictions))
}

/// Loads a checkpoint and evaluates it on `data`.
pub fn evaluate(checkpoint: &Path, data: &Dataset, pre: &PreprocessConfig, batch_size: usize) -> Result<Metrics> {
    let ck = checkpoint::load::<f32>(checkpoint, None)?;
    if ck.header.model.input_size != data.size {
        return Err(Error::Config(format!(
            "checkpoint expects {}px inputs, dataset was decoded at {}px",
            ck.header.model.input_size, data.size
        )));
    }
    Ok(evaluate_model(&ck.model, data, pre, batch_size)?.0)
}
