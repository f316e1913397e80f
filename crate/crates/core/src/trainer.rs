//! Teacher-forcing training loop: per-sample graphs, gradients averaged
//! over non-PAD target tokens, Adam updates, per-step loss log.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adam::{adam_step, clip_grad_norm, AdamError, AdamState, GradMap};
use crate::encoder::SensorSequence;
use crate::graph::{Graph, GraphError};
use crate::model::{CaptionModel, ModelError};
use crate::parallel;
use crate::rng::stream_seed;
use crate::scalar::Scalar;
use crate::text::{EOS_ID, PAD_ID, SOS_ID};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training aborted")]
    NonFinite { epoch: usize, batch: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm gradient clip; off by default.
    pub max_grad_norm: Option<f64>,
    /// Epoch interval for held-out evaluation hooks in orchestration.
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-3,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            max_grad_norm: None,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::BadConfig("epochs must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(TrainError::BadConfig(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig(format!(
                "weight_decay {} must be finite and >= 0",
                self.weight_decay
            )));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(TrainError::BadConfig(format!("max_grad_norm {c} must be > 0")));
            }
        }
        Ok(())
    }
}

/// One training pair: a sensor clip and its caption as content-word ids.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub sensor: SensorSequence,
    pub caption_ids: Vec<u32>,
}

/// Teacher-forcing views of a caption, optionally padded to a fixed length:
/// input `[<SOS>, w_1..w_T, <PAD>...]`, targets `[w_1..w_T, <EOS>, <PAD>...]`,
/// mask true exactly on the T+1 real target positions.
pub fn teacher_pair(
    caption_ids: &[u32],
    t_max: usize,
    pad_to: Option<usize>,
) -> (Vec<u32>, Vec<usize>, Vec<bool>) {
    let content = &caption_ids[..caption_ids.len().min(t_max)];
    let n = content.len() + 1;
    let total = pad_to.map_or(n, |l| l.max(n));

    let mut input = Vec::with_capacity(total);
    input.push(SOS_ID);
    input.extend_from_slice(content);
    let mut targets: Vec<usize> = content.iter().map(|&w| w as usize).collect();
    targets.push(EOS_ID as usize);
    let mut mask = vec![true; n];

    input.resize(total, PAD_ID);
    targets.resize(total, PAD_ID as usize);
    mask.resize(total, false);
    (input, targets, mask)
}

/// Masked-sum NLL and real-token count for one sample. The batch loss is
/// the sum of these sums divided by the total count, i.e. the mean over
/// non-PAD target positions.
pub fn sample_loss<T: Scalar>(
    model: &CaptionModel<T>,
    g: &mut Graph<T>,
    p: &crate::params::BoundParams,
    sample: &TrainSample,
    pad_to: Option<usize>,
) -> Result<(crate::graph::NodeId, usize), ModelError> {
    let (input, targets, mask) = teacher_pair(&sample.caption_ids, model.cfg.t_max, pad_to);
    let x = model.encode_sensor(g, p, &sample.sensor)?;
    let logits = model.caption_logits_from_features(g, p, x, &input)?;
    let logp = g.log_softmax_rows(logits)?;
    let nll = g.nll_sum_masked(logp, &targets, &mask)?;
    let count = mask.iter().filter(|&&b| b).count();
    Ok((nll, count))
}

fn batch_grads<T: Scalar>(
    model: &CaptionModel<T>,
    batch: &[&TrainSample],
) -> Result<(f64, GradMap<T>), ModelError> {
    // Per-sample graphs keep peak memory at one sample's activations per
    // worker; order-preserving collect plus a sequential reduce keeps the
    // result deterministic under any thread count.
    let per_sample: Vec<Result<(f64, usize, GradMap<T>), ModelError>> =
        parallel::pool().install(|| {
            batch
                .par_iter()
                .map(|sample| {
                    let mut g = Graph::new();
                    let bound = model.params.bind(&mut g);
                    let (nll, count) = sample_loss(model, &mut g, &bound, sample, None)?;
                    let loss_sum = g.value(nll).data()[0].to_f64_();
                    let grads = g.backward(nll)?;
                    let mut map = GradMap::new();
                    for (name, id) in bound.iter() {
                        let shape = model.params.get(name).expect("bound name").shape();
                        map.insert(name.clone(), grads.tensor(id, shape));
                    }
                    Ok((loss_sum, count, map))
                })
                .collect()
        });

    let mut total_loss = 0.0f64;
    let mut total_count = 0usize;
    let mut acc: Option<GradMap<T>> = None;
    for r in per_sample {
        let (loss_sum, count, map) = r?;
        total_loss += loss_sum;
        total_count += count;
        match &mut acc {
            None => acc = Some(map),
            Some(acc) => {
                for (name, t) in acc.iter_mut() {
                    let add = map.get(name).expect("same param set").data();
                    let dst = t.data_mut();
                    for i in 0..dst.len() {
                        dst[i] = dst[i] + add[i];
                    }
                }
            }
        }
    }
    let mut grads = acc.expect("nonempty batch");
    let inv = T::from_f64(1.0 / total_count as f64);
    for t in grads.values_mut() {
        for v in t.data_mut() {
            *v = *v * inv;
        }
    }
    Ok((total_loss / total_count as f64, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub loss_log: Vec<LossRow>,
    pub final_loss: f64,
    pub steps: u64,
}

/// Runs the full loop; `on_epoch_end(epoch, mean_epoch_loss)` fires after
/// each epoch (evaluation hooks, progress printing).
pub fn train<T: Scalar>(
    model: &mut CaptionModel<T>,
    opt: &mut AdamState<T>,
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch_end: impl FnMut(usize, f64),
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut loss_log = Vec::new();
    let mut step: u64 = 0;
    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, epoch as u64));
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_batches = 0usize;
        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut grads) = batch_grads(model, &batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: batch_idx,
                });
            }
            if let Some(c) = cfg.max_grad_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(&mut model.params, &grads, opt)?;
            step += 1;
            loss_log.push(LossRow { epoch, step, loss });
            epoch_loss += loss;
            epoch_batches += 1;
        }
        on_epoch_end(epoch, epoch_loss / epoch_batches as f64);
    }
    let final_loss = loss_log.last().map_or(f64::NAN, |r| r.loss);
    Ok(TrainResult {
        loss_log,
        final_loss,
        steps: step,
    })
}

/// Mean per-token loss over a dataset without touching the parameters.
pub fn evaluate_loss<T: Scalar>(
    model: &CaptionModel<T>,
    data: &[TrainSample],
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let sums: Vec<Result<(f64, usize), ModelError>> = parallel::pool().install(|| {
        data.par_iter()
            .map(|sample| {
                let mut g = Graph::new();
                let bound = model.params.bind_frozen(&mut g);
                let (nll, count) = sample_loss(model, &mut g, &bound, sample, None)?;
                Ok((g.value(nll).data()[0].to_f64_(), count))
            })
            .collect()
    });
    let mut total = 0.0;
    let mut n = 0usize;
    for r in sums {
        let (s, c) = r?;
        total += s;
        n += c;
    }
    Ok(total / n as f64)
}

/// Serializes the loss log in the on-disk layout: header then one row per
/// optimizer step.
pub fn loss_log_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("epoch,step,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.step, r.loss));
    }
    out
}
