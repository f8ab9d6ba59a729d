use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{encoder_input, position_tensor, Checkpoint, CvaeError, Model, Result, TrainingMetadata};
use crate::autodiff::{AdamState, Tape, Tensor};
use crate::geometry::Point;
use crate::interaction::{FeatureMap, Frame, InteractionDataset};
use crate::rng::{derive_indexed, rng_indexed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Samples per tape; gradients of a batch are summed over micro-batches
    /// in order, so results do not depend on thread count.
    pub micro_batch: usize,
    /// Hold out every frame whose index hashes to 0 mod 10.
    pub validation: bool,
    pub max_steps: Option<u64>,
    /// Stop once training contact accuracy reaches this value.
    pub target_contact_accuracy: Option<f64>,
    pub eval_every: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            lr: 1e-3,
            micro_batch: 16,
            validation: true,
            max_steps: None,
            target_contact_accuracy: None,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_contact_accuracy: Option<f64>,
}

pub fn is_validation_frame(index: usize) -> bool {
    derive_indexed(0, "validation-split", index as u64) % 10 == 0
}

struct Batch {
    input: Tensor<f32>,
    positions: Tensor<f32>,
}

fn make_batch(frames: &[&Frame], num_classes: usize) -> Batch {
    let pts: Vec<Vec<Point>> = frames.iter().map(|f| f.points()).collect();
    let maps: Vec<FeatureMap> = frames.iter().map(|f| f.feature_map(num_classes)).collect();
    let items: Vec<(&[Point], &FeatureMap)> = pts.iter().map(|p| p.as_slice()).zip(&maps).collect();
    Batch {
        input: encoder_input(&items),
        positions: position_tensor(&pts.iter().map(|p| p.as_slice()).collect::<Vec<_>>()),
    }
}

/// Loss and gradients of one micro-batch, with the loss normalized by `norm`.
fn shard_grads(
    model: &Model,
    frames: &[&Frame],
    noise: Tensor<f32>,
    norm: usize,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let b = make_batch(frames, model.config.num_classes);
    let mut tape = Tape::<f32>::new();
    let net = model.bind(&mut tape, &model.params);
    let lv = net.loss_normalized(&mut tape, b.input, b.positions, noise, frames.len(), norm)?;
    let loss = tape.value(lv.total).data[0] as f64;
    let mut grads = tape.backward(lv.total)?;
    let g = net
        .p
        .iter()
        .zip(&model.params)
        .map(|(&v, p)| grads.take_or_zeros(v, p.rows, p.cols))
        .collect();
    Ok((loss, g))
}

/// Fraction of vertices whose reconstructed contact (from the posterior
/// mean, threshold 0.5) matches the label.
pub fn contact_accuracy(model: &Model, frames: &[&Frame]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in frames.chunks(16) {
        let b = make_batch(chunk, model.config.num_classes);
        let mut tape = Tape::<f32>::new();
        let net = model.bind(&mut tape, &model.params);
        let x = tape.constant(b.input);
        let pos = tape.constant(b.positions);
        let (mu, _) = net.encode(&mut tape, x, chunk.len())?;
        let (c, _) = net.decode(&mut tape, mu, pos, chunk.len())?;
        let probs = &tape.value(c).data;
        let labels = chunk.iter().flat_map(|f| f.contact.iter());
        for (&p, &l) in probs.iter().zip(labels) {
            correct += ((p >= 0.5) as u8 == l) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

fn eval_loss(model: &Model, frames: &[&Frame]) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in frames.chunks(16) {
        let noise = Tensor::zeros(chunk.len(), model.config.latent_dim);
        let b = make_batch(chunk, model.config.num_classes);
        let mut tape = Tape::<f32>::new();
        let net = model.bind(&mut tape, &model.params);
        let lv = net.loss_normalized(&mut tape, b.input, b.positions, noise, chunk.len(), frames.len())?;
        sum += tape.value(lv.total).data[0] as f64;
    }
    Ok(sum)
}

/// Trains `model` in place on `dataset` and returns the checkpoint.
pub fn train(
    mut model: Model,
    dataset: &InteractionDataset,
    options: &TrainOptions,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Checkpoint> {
    if dataset.frames.is_empty() {
        return Err(CvaeError::EmptyDataset);
    }
    model.check_resolution(dataset.vertex_count)?;
    if dataset.num_feature_classes() != model.config.num_classes {
        return Err(CvaeError::Classes {
            expected: model.config.num_classes,
            found: dataset.num_feature_classes(),
        });
    }
    if options.batch_size == 0 || options.micro_batch == 0 {
        return Err(CvaeError::Config("batch sizes must be positive".into()));
    }
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = (0..dataset.frames.len())
        .partition(|&i| !(options.validation && is_validation_frame(i)));
    let train_idx = if train_idx.is_empty() { val_idx.clone() } else { train_idx };
    let train_frames: Vec<&Frame> = train_idx.iter().map(|&i| &dataset.frames[i]).collect();
    let val_frames: Vec<&Frame> = val_idx.iter().map(|&i| &dataset.frames[i]).collect();

    let sizes: Vec<usize> = model.params.iter().map(|p| p.data.len()).collect();
    let mut adam = AdamState::<f32>::new(&sizes, options.lr);
    let mut meta = TrainingMetadata {
        seed,
        steps: 0,
        epochs_completed: 0,
        stopped_early: false,
        train_frames: train_frames.len(),
        val_frames: val_frames.len(),
        step_losses: Vec::new(),
        epochs: Vec::new(),
        final_contact_accuracy: None,
    };
    let latent = model.config.latent_dim;
    'outer: for epoch in 0..options.epochs {
        let mut order: Vec<usize> = (0..train_frames.len()).collect();
        order.shuffle(&mut rng_indexed(seed, "epoch-order", epoch as u64));
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(options.batch_size) {
            let mut nrng = rng_indexed(seed, "noise", meta.steps);
            let noise: Vec<f32> = (0..chunk.len() * latent).map(|_| nrng.sample(StandardNormal)).collect();
            let frames: Vec<&Frame> = chunk.iter().map(|&i| train_frames[i]).collect();
            let shards: Vec<(usize, &[&Frame])> = frames
                .chunks(options.micro_batch)
                .enumerate()
                .map(|(k, s)| (k * options.micro_batch, s))
                .collect();
            let results: Vec<Result<(f64, Vec<Tensor<f32>>)>> = shards
                .par_iter()
                .map(|&(start, s)| {
                    let eps = Tensor::from_vec(
                        s.len(),
                        latent,
                        noise[start * latent..(start + s.len()) * latent].to_vec(),
                    );
                    shard_grads(&model, s, eps, chunk.len())
                })
                .collect();
            let mut loss = 0.0;
            let mut total: Option<Vec<Tensor<f32>>> = None;
            for r in results {
                let (l, g) = r?;
                loss += l;
                match &mut total {
                    None => total = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            for (x, y) in a.data.iter_mut().zip(&b.data) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let grads = total.unwrap();
            let finite = loss.is_finite() && grads.iter().all(|g| g.data.iter().all(|v| v.is_finite()));
            if !finite {
                let last = meta.step_losses.iter().rev().take(5).rev().copied().collect();
                return Err(CvaeError::NonFinite {
                    step: meta.steps,
                    last,
                });
            }
            {
                let mut ps: Vec<&mut [f32]> = model.params.iter_mut().map(|p| p.data.as_mut_slice()).collect();
                let gs: Vec<&[f32]> = grads.iter().map(|g| g.data.as_slice()).collect();
                adam.update(&mut ps, &gs)?;
            }
            meta.steps += 1;
            meta.step_losses.push(loss);
            epoch_loss += loss;
            batches += 1;
            if let Some(target) = options.target_contact_accuracy {
                if meta.steps % options.eval_every.max(1) == 0 {
                    let acc = contact_accuracy(&model, &train_frames)?;
                    meta.final_contact_accuracy = Some(acc);
                    if acc >= target {
                        meta.stopped_early = true;
                        break 'outer;
                    }
                }
            }
            if options.max_steps.is_some_and(|m| meta.steps >= m) {
                break 'outer;
            }
        }
        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_loss: if val_frames.is_empty() { None } else { Some(eval_loss(&model, &val_frames)?) },
            val_contact_accuracy: if val_frames.is_empty() {
                None
            } else {
                Some(contact_accuracy(&model, &val_frames)?)
            },
        };
        on_epoch(&stats);
        meta.epochs.push(stats);
        meta.epochs_completed = epoch + 1;
    }
    Ok(Checkpoint { model, metadata: meta })
}
