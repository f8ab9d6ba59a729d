//! Conditional VAE over body feature maps, conditioned on vertex positions.
//!
//! Encoder: spiral convolutions with pooling down the mesh hierarchy, a
//! dense layer and Gaussian heads. Decoder: the latent code joined to every
//! vertex's coordinates, spiral convolutions at feature resolution, then
//! per-vertex contact (sigmoid) and semantics (softmax).

mod checkpoint;
mod train;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{check_gradients, AutodiffError, Scalar, Tape, Tensor, Var};
use crate::geometry::{BodyMesh, Point};
use crate::interaction::{canonicalize, FeatureMap, Frame};
use crate::meshnet::{build_spirals, MeshHierarchy, MeshNetError, SparseMatrix, SpiralIndex};
use crate::rng::rng_for;

pub use checkpoint::{Checkpoint, TrainingMetadata};
pub use train::{contact_accuracy, train, EpochStats, TrainOptions};

#[derive(Debug, Error)]
pub enum CvaeError {
    #[error("resolution mismatch: expected {expected} vertices, got {found}")]
    Resolution { expected: usize, found: usize },
    #[error("topology mismatch: model expects {expected} body vertices, got {found}")]
    Topology { expected: usize, found: usize },
    #[error("class count mismatch: model has {expected} feature classes, data has {found}")]
    Classes { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}; last finite losses {last:?}")]
    NonFinite { step: u64, last: Vec<f64> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    MeshNet(#[from] MeshNetError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

type Result<T> = std::result::Result<T, CvaeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub conv_width: usize,
    pub fc_width: usize,
    /// Hierarchy level holding feature maps.
    pub feature_level: usize,
    /// Encoder conv→pool stages.
    pub pool_levels: usize,
    /// Decoder convolutions of width `conv_width` before the output layer.
    pub decoder_convs: usize,
    pub spiral_length: usize,
    pub alpha: f64,
    pub lambda_c: f64,
    pub lambda_s: f64,
    /// Semantic classes including void.
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 256,
            conv_width: 64,
            fc_width: 512,
            feature_level: 1,
            pool_levels: 3,
            decoder_convs: 4,
            spiral_length: 9,
            alpha: 0.1,
            lambda_c: 1.0,
            lambda_s: 1.0,
            num_classes: 9,
        }
    }
}

impl ModelConfig {
    /// Output channels per vertex: contact plus semantics.
    pub fn feature_width(&self) -> usize {
        1 + self.num_classes
    }

    /// Encoder input channels per vertex: xyz, contact, semantics.
    pub fn input_width(&self) -> usize {
        3 + self.feature_width()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("conv_width", self.conv_width),
            ("fc_width", self.fc_width),
            ("pool_levels", self.pool_levels),
            ("decoder_convs", self.decoder_convs),
            ("spiral_length", self.spiral_length),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(CvaeError::Config(format!("{name} must be positive")));
        }
        if !(self.alpha >= 0.0) || !(self.lambda_c >= 0.0) || !(self.lambda_s >= 0.0) {
            return Err(CvaeError::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Shapes of every parameter tensor, in storage order.
pub fn param_layout(config: &ModelConfig, level_sizes: &[usize]) -> Vec<(String, usize, usize)> {
    let (l, cw) = (config.spiral_length, config.conv_width);
    let mut out = Vec::new();
    let mut cin = config.input_width();
    for i in 0..config.pool_levels {
        out.push((format!("enc.conv{i}.w"), l * cin, cw));
        out.push((format!("enc.conv{i}.b"), 1, cw));
        cin = cw;
    }
    let coarsest = level_sizes[config.feature_level + config.pool_levels];
    out.push(("enc.fc.w".into(), coarsest * cw, config.fc_width));
    out.push(("enc.fc.b".into(), 1, config.fc_width));
    for head in ["mu", "logvar"] {
        out.push((format!("enc.{head}.w"), config.fc_width, config.latent_dim));
        out.push((format!("enc.{head}.b"), 1, config.latent_dim));
    }
    out.push(("dec.conv0.w_xyz".into(), l * 3, cw));
    out.push(("dec.conv0.w_z".into(), config.latent_dim, cw));
    out.push(("dec.conv0.b".into(), 1, cw));
    for i in 1..config.decoder_convs {
        out.push((format!("dec.conv{i}.w"), l * cw, cw));
        out.push((format!("dec.conv{i}.b"), 1, cw));
    }
    out.push(("dec.out.w".into(), l * cw, config.feature_width()));
    out.push(("dec.out.b".into(), 1, config.feature_width()));
    out
}

/// Model: configuration, mesh support and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub class_names: Vec<String>,
    pub hierarchy: Arc<MeshHierarchy>,
    /// Spirals for levels `feature_level .. feature_level + pool_levels`.
    pub spirals: Vec<SpiralIndex>,
    pub params: Vec<Tensor<f32>>,
}

/// Parameter handles on a tape, in [`param_layout`] order.
struct Net<'a> {
    model: &'a Model,
    p: Vec<Var>,
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(
        config: ModelConfig,
        hierarchy: Arc<MeshHierarchy>,
        class_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let sizes = hierarchy.level_sizes();
        let needed = config.feature_level + config.pool_levels;
        if sizes.len() <= needed {
            return Err(CvaeError::Config(format!(
                "hierarchy has {} levels; config needs {}",
                sizes.len(),
                needed + 1
            )));
        }
        if class_names.len() + 1 != config.num_classes {
            return Err(CvaeError::Classes {
                expected: config.num_classes,
                found: class_names.len() + 1,
            });
        }
        let spirals = (config.feature_level..needed)
            .map(|lv| build_spirals(&hierarchy.levels[lv], config.spiral_length))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut rng = rng_for(seed, "cvae-init");
        let params = param_layout(&config, &sizes)
            .into_iter()
            .map(|(name, r, c)| {
                if name.ends_with(".b") {
                    Tensor::zeros(r, c)
                } else {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-a..a) as f32).collect())
                }
            })
            .collect();
        Ok(Self {
            config,
            class_names,
            hierarchy,
            spirals,
            params,
        })
    }

    pub fn feature_resolution(&self) -> usize {
        self.hierarchy.levels[self.config.feature_level].vertex_count()
    }

    pub fn body_resolution(&self) -> usize {
        self.hierarchy.levels[0].vertex_count()
    }

    pub fn param_names(&self) -> Vec<String> {
        param_layout(&self.config, &self.hierarchy.level_sizes())
            .into_iter()
            .map(|p| p.0)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Zeroes a named parameter group (e.g. `"enc.mu"` or `"dec.out"`).
    pub fn zero_params(&mut self, prefix: &str) {
        let names = self.param_names();
        for (n, p) in names.iter().zip(&mut self.params) {
            if n.starts_with(prefix) {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn pool_map(&self, stage: usize) -> Arc<SparseMatrix> {
        Arc::new(self.hierarchy.down[self.config.feature_level + stage].clone())
    }

    /// Puts parameters on a tape as trainable leaves.
    fn bind<'a, T: Scalar>(&'a self, tape: &mut Tape<T>, params: &[Tensor<T>]) -> Net<'a> {
        Net {
            model: self,
            p: params.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    fn params_as<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|t| t.cast()).collect()
    }

    /// Relative error of the tape gradient of the training loss against
    /// central differences (double precision), per parameter tensor.
    /// `noise` holds `frames.len() × latent_dim` reparameterization draws.
    pub fn gradient_check(&self, frames: &[Frame], noise: &[f64], h: f64) -> Result<Vec<(String, f64)>> {
        let latent = self.config.latent_dim;
        if noise.len() != frames.len() * latent {
            return Err(CvaeError::Config(format!("expected {} noise values, got {}", frames.len() * latent, noise.len())));
        }
        for f in frames {
            self.check_resolution(f.contact.len())?;
        }
        let params: Vec<Tensor<f64>> = self.params_as();
        let pts: Vec<Vec<Point>> = frames.iter().map(|f| f.points()).collect();
        let maps: Vec<FeatureMap> = frames.iter().map(|f| f.feature_map(self.config.num_classes)).collect();
        let items: Vec<(&[Point], &FeatureMap)> = pts.iter().map(|p| p.as_slice()).zip(&maps).collect();
        let input: Tensor<f64> = encoder_input(&items);
        let positions: Tensor<f64> = position_tensor(&pts.iter().map(|p| p.as_slice()).collect::<Vec<_>>());
        let n = frames.len();
        let mut out = Vec::new();
        for (k, name) in self.param_names().into_iter().enumerate() {
            let failure = std::cell::RefCell::new(None);
            let err = check_gradients(&[params[k].clone()], h, |tape, v| {
                let p = (0..params.len())
                    .map(|j| if j == k { v[0] } else { tape.constant(params[j].clone()) })
                    .collect();
                let net = Net { model: self, p };
                let eps = Tensor::from_vec(n, latent, noise.to_vec());
                match net.loss_normalized(tape, input.clone(), positions.clone(), eps, n, n) {
                    Ok(l) => Ok(l.total),
                    Err(CvaeError::Autodiff(a)) => Err(a),
                    Err(e) => {
                        *failure.borrow_mut() = Some(e.to_string());
                        Err(AutodiffError::NonScalarLoss((0, 0)))
                    }
                }
            });
            if let Some(e) = failure.into_inner() {
                return Err(CvaeError::Config(e));
            }
            out.push((name, err?));
        }
        Ok(out)
    }

    fn check_resolution(&self, n: usize) -> Result<()> {
        let expected = self.feature_resolution();
        if n != expected {
            return Err(CvaeError::Resolution { expected, found: n });
        }
        Ok(())
    }

    /// Posterior mean and log-variance for one feature map.
    pub fn encode(&self, fmap: &FeatureMap, positions: &[Point]) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_resolution(positions.len())?;
        self.check_resolution(fmap.resolution())?;
        if fmap.num_classes != self.config.num_classes {
            return Err(CvaeError::Classes {
                expected: self.config.num_classes,
                found: fmap.num_classes,
            });
        }
        let mut tape = Tape::<f32>::new();
        let net = self.bind(&mut tape, &self.params);
        let x = tape.constant(encoder_input(&[(positions, fmap)]));
        let (mu, lv) = net.encode(&mut tape, x, 1)?;
        Ok((tape.value(mu).data.clone(), tape.value(lv).data.clone()))
    }

    /// Feature map for latent `z` at feature-resolution `positions`.
    pub fn decode(&self, z: &[f32], positions: &[Point]) -> Result<FeatureMap> {
        self.check_resolution(positions.len())?;
        if z.len() != self.config.latent_dim {
            return Err(CvaeError::Config(format!(
                "latent has {} entries, expected {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        let mut tape = Tape::<f32>::new();
        let net = self.bind(&mut tape, &self.params);
        let zv = tape.constant(Tensor::from_vec(1, z.len(), z.to_vec()));
        let pv = tape.constant(position_tensor(&[positions]));
        let (c, s) = net.decode(&mut tape, zv, pv, 1)?;
        Ok(FeatureMap {
            contact: tape.value(c).data.iter().map(|&v| v as f64).collect(),
            semantics: tape.value(s).data.iter().map(|&v| v as f64).collect(),
            num_classes: self.config.num_classes,
        })
    }

    /// Canonicalizes a full-resolution body and maps it to feature resolution.
    pub fn condition(&self, body: &BodyMesh) -> Result<Vec<Point>> {
        let expected = self.body_resolution();
        if body.vertex_count() != expected {
            return Err(CvaeError::Topology {
                expected,
                found: body.vertex_count(),
            });
        }
        let canon = canonicalize(body);
        Ok(self
            .hierarchy
            .downsample_points(&canon.mesh.vertices, self.config.feature_level))
    }

    /// `n` feature maps from `z ~ N(0, I)`, conditioned on the body only.
    pub fn sample(&self, body: &BodyMesh, n: usize, seed: u64) -> Result<Vec<FeatureMap>> {
        let pos = self.condition(body)?;
        let mut rng = rng_for(seed, "cvae-sample");
        (0..n)
            .map(|_| {
                let z: Vec<f32> = (0..self.config.latent_dim).map(|_| rng.sample(StandardNormal)).collect();
                self.decode(&z, &pos)
            })
            .collect()
    }

    /// The map decoded from `z = 0`.
    pub fn sample_mode(&self, body: &BodyMesh) -> Result<FeatureMap> {
        let pos = self.condition(body)?;
        self.decode(&vec![0.0; self.config.latent_dim], &pos)
    }
}

/// Per-vertex encoder input rows `[x, y, z, contact, semantics…]` for a batch.
pub(crate) fn encoder_input<T: Scalar>(items: &[(&[Point], &FeatureMap)]) -> Tensor<T> {
    let width = items.first().map(|(_, f)| 4 + f.num_classes).unwrap_or(0);
    let mut data = Vec::new();
    for (pos, f) in items {
        for (v, p) in pos.iter().enumerate() {
            data.extend([p.x, p.y, p.z, f.contact[v]].map(T::lit));
            data.extend(f.semantic_row(v).iter().map(|&s| T::lit(s)));
        }
    }
    let rows = data.len() / width.max(1);
    Tensor::from_vec(rows, width, data)
}

pub(crate) fn position_tensor<T: Scalar>(items: &[&[Point]]) -> Tensor<T> {
    let data: Vec<T> = items
        .iter()
        .flat_map(|pos| pos.iter().flat_map(|p| [p.x, p.y, p.z].map(T::lit)))
        .collect();
    Tensor::from_vec(data.len() / 3, 3, data)
}

/// Spiral indices for `batch` stacked copies of a level.
fn batched_spiral(s: &SpiralIndex, batch: usize) -> Arc<Vec<u32>> {
    let n = s.vertex_count() as u32;
    let mut out = Vec::with_capacity(s.indices.len() * batch);
    for b in 0..batch as u32 {
        out.extend(s.indices.iter().map(|&i| i + b * n));
    }
    Arc::new(out)
}

/// Outputs of one forward pass with targets attached.
pub struct LossVars {
    pub total: Var,
    pub kl: Var,
    pub rec: Var,
    pub contact: Var,
}

impl Net<'_> {
    fn spiral_conv<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        stage: usize,
        batch: usize,
        w: usize,
        b: usize,
    ) -> Result<Var> {
        let s = &self.model.spirals[stage];
        let g = tape.gather_rows(x, batched_spiral(s, batch), s.length)?;
        Ok(tape.linear(g, self.p[w], Some(self.p[b]))?)
    }

    fn encode<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, batch: usize) -> Result<(Var, Var)> {
        let cfg = &self.model.config;
        let mut h = x;
        let mut k = 0;
        for stage in 0..cfg.pool_levels {
            let c = self.spiral_conv(tape, h, stage, batch, k, k + 1)?;
            let a = tape.relu(c);
            h = tape.sparse_map(a, self.model.pool_map(stage), batch)?;
            k += 2;
        }
        let (rows, cols) = tape.shape(h);
        let flat = tape.reshape(h, batch, rows / batch * cols)?;
        let fc = tape.linear(flat, self.p[k], Some(self.p[k + 1]))?;
        let fc = tape.relu(fc);
        let mu = tape.linear(fc, self.p[k + 2], Some(self.p[k + 3]))?;
        let lv = tape.linear(fc, self.p[k + 4], Some(self.p[k + 5]))?;
        Ok((mu, lv))
    }

    fn decoder_base(&self) -> usize {
        2 * self.model.config.pool_levels + 6
    }

    /// Returns (contact probabilities `B·V × 1`, semantics `B·V × C`).
    fn decode<T: Scalar>(&self, tape: &mut Tape<T>, z: Var, pos: Var, batch: usize) -> Result<(Var, Var)> {
        let cfg = &self.model.config;
        let v = self.model.feature_resolution();
        let k = self.decoder_base();
        let s = &self.model.spirals[0];
        let idx = batched_spiral(s, batch);
        let g = tape.gather_rows(pos, idx.clone(), s.length)?;
        let xyz = tape.linear(g, self.p[k], Some(self.p[k + 2]))?;
        let zp = tape.linear(z, self.p[k + 1], None)?;
        let zr = tape.repeat_rows(zp, v)?;
        let sum = tape.add(xyz, zr)?;
        let mut h = tape.relu(sum);
        let mut k = k + 3;
        for _ in 1..cfg.decoder_convs {
            let g = tape.gather_rows(h, idx.clone(), s.length)?;
            let c = tape.linear(g, self.p[k], Some(self.p[k + 1]))?;
            h = tape.relu(c);
            k += 2;
        }
        let g = tape.gather_rows(h, idx, s.length)?;
        let out = tape.linear(g, self.p[k], Some(self.p[k + 1]))?;
        let logit = tape.slice_cols(out, 0, 1)?;
        let contact = tape.sigmoid(logit);
        let sem_logits = tape.slice_cols(out, 1, cfg.feature_width())?;
        let sem = tape.softmax(sem_logits);
        Ok((contact, sem))
    }

    /// Forward pass and loss for `batch` samples, normalized by `norm`.
    fn loss_normalized<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        input: Tensor<T>,
        positions: Tensor<T>,
        noise: Tensor<T>,
        batch: usize,
        norm: usize,
    ) -> Result<LossVars> {
        let cfg = &self.model.config;
        let nc = cfg.num_classes;
        let target_c = column_slice(&input, 3, 4);
        let target_s = column_slice(&input, 4, 4 + nc);
        let x = tape.constant(input);
        let pos = tape.constant(positions);
        let eps = tape.constant(noise);
        let (mu, lv) = self.encode(tape, x, batch)?;
        let z = tape.reparameterize(mu, lv, eps)?;
        let (c, s) = self.decode(tape, z, pos, batch)?;
        let tc = tape.constant(target_c);
        let ts = tape.constant(target_s);
        Ok(loss_terms(tape, cfg, mu, lv, c, s, tc, ts, norm)?)
    }
}

fn column_slice<T: Scalar>(t: &Tensor<T>, a: usize, b: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(t.rows * (b - a));
    for r in 0..t.rows {
        data.extend_from_slice(&t.row(r)[a..b]);
    }
    Tensor::from_vec(t.rows, b - a, data)
}

/// `total = (α·KL + λc·ΣBCE + λs·ΣCCE) / batch`; `kl` and `rec` are the
/// per-sample averages of the unweighted terms.
#[allow(clippy::too_many_arguments)]
pub fn loss_terms<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    mu: Var,
    logvar: Var,
    contact: Var,
    semantics: Var,
    target_contact: Var,
    target_semantics: Var,
    batch: usize,
) -> std::result::Result<LossVars, AutodiffError> {
    let inv = 1.0 / batch as f64;
    let kl_e = tape.kl_normal(mu, logvar)?;
    let kl = tape.sum(kl_e);
    let bce_e = tape.bce(contact, target_contact)?;
    let bce = tape.sum(bce_e);
    let cce_e = tape.cce(semantics, target_semantics)?;
    let cce = tape.sum(cce_e);
    let total = tape.weighted_sum(&[
        (cfg.alpha * inv, kl),
        (cfg.lambda_c * inv, bce),
        (cfg.lambda_s * inv, cce),
    ])?;
    let rec = tape.weighted_sum(&[(cfg.lambda_c * inv, bce), (cfg.lambda_s * inv, cce)])?;
    let kl_mean = tape.scale(kl, inv);
    Ok(LossVars {
        total,
        kl: kl_mean,
        rec,
        contact,
    })
}

#[cfg(test)]
mod tests;
