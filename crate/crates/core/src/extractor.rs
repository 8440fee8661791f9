//! Small convolutional backbone: four stride-2 stages of 3x3 convolutions
//! followed by global average pooling and a dense embedding layer.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};
use crate::rng;
use crate::scalar::Scalar;

const KERNEL: usize = 3;
const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Side length of the square single-channel input.
    pub input_size: usize,
    /// Convolutions per stage; the first of each stage has stride 2.
    pub block_counts: [usize; STAGES],
    /// Channels of the first stage; doubled at every following stage.
    pub base_channels: usize,
    /// Length of the embedding produced by the dense layer.
    pub embed_dim: usize,
    /// Probability of keeping a unit in the embedding during training.
    pub dropout_keep: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { input_size: 32, block_counts: [1, 1, 1, 1], base_channels: 4, embed_dim: 32, dropout_keep: 1.0 }
    }
}

impl ExtractorConfig {
    /// Block counts and dense width from the published configuration.
    pub fn published() -> Self {
        Self { input_size: 224, block_counts: [2, 2, 8, 2], base_channels: 64, embed_dim: 512, dropout_keep: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.input_size < 8 || !self.input_size.is_multiple_of(1 << STAGES) {
            return bad(format!("input_size {} must be >= 8 and divisible by 16", self.input_size));
        }
        if let Some(i) = self.block_counts.iter().position(|&b| b == 0) {
            return bad(format!("block_counts[{i}] must be positive"));
        }
        if self.base_channels == 0 {
            return bad("base_channels must be positive".into());
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive".into());
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return bad(format!("dropout_keep {} must lie in (0, 1]", self.dropout_keep));
        }
        Ok(())
    }

    pub fn map_side(&self) -> usize {
        self.input_size >> STAGES
    }

    pub fn map_channels(&self) -> usize {
        self.base_channels << (STAGES - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

/// Feature maps `[h, w, c]` of one sample, as a node on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMaps {
    pub values: Var,
    pub sample_id: usize,
}

/// Embedding of one sample, as a node on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVector {
    pub values: Var,
    pub sample_id: usize,
}

/// Tape handles for every extractor parameter, in [`Extractor::params`] order.
#[derive(Clone, Debug)]
pub struct ExtractorVars {
    convs: Vec<(Var, Var)>,
    dense_w: Var,
    dense_b: Var,
}

impl ExtractorVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.convs.iter().flat_map(|&(k, b)| [k, b]).collect();
        out.push(self.dense_w);
        out.push(self.dense_b);
        out
    }

    pub fn first_kernel(&self) -> Var {
        self.convs[0].0
    }
}

/// Whether dropout is active for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor<T> {
    cfg: ExtractorConfig,
    convs: Vec<ConvLayer<T>>,
    dense_w: Tensor<T>,
    dense_b: Tensor<T>,
}

fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

impl<T: Scalar> Extractor<T> {
    /// Builds an extractor with weights drawn uniformly in
    /// `±sqrt(6 / fan_in)` and zero biases, deterministically per seed.
    pub fn new(cfg: &ExtractorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, &[rng::STREAM_EXTRACTOR]);
        let mut convs = Vec::new();
        let mut cin = 1;
        for (stage, &count) in cfg.block_counts.iter().enumerate() {
            let cout = cfg.base_channels << stage;
            for block in 0..count {
                let fan_in = KERNEL * KERNEL * cin;
                convs.push(ConvLayer {
                    kernel: he_uniform(&[KERNEL, KERNEL, cin, cout], fan_in, &mut rng),
                    bias: Tensor::zeros(&[cout]),
                    stride: if block == 0 { 2 } else { 1 },
                });
                cin = cout;
            }
        }
        let dense_w = he_uniform(&[cin, cfg.embed_dim], cin, &mut rng);
        let dense_b = Tensor::zeros(&[cfg.embed_dim]);
        Ok(Self { cfg: cfg.clone(), convs, dense_w, dense_b })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.convs
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.convs.iter().enumerate() {
            out.push((format!("extractor.conv{i}.kernel"), &layer.kernel));
            out.push((format!("extractor.conv{i}.bias"), &layer.bias));
        }
        out.push(("extractor.dense.weight".to_string(), &self.dense_w));
        out.push(("extractor.dense.bias".to_string(), &self.dense_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.convs.iter_mut().enumerate() {
            out.push((format!("extractor.conv{i}.kernel"), &mut layer.kernel));
            out.push((format!("extractor.conv{i}.bias"), &mut layer.bias));
        }
        out.push(("extractor.dense.weight".to_string(), &mut self.dense_w));
        out.push(("extractor.dense.bias".to_string(), &mut self.dense_b));
        out
    }

    fn bind_with(&self, tape: &mut Tape<T>, record: fn(&mut Tape<T>, Tensor<T>) -> Var) -> ExtractorVars {
        let convs = self
            .convs
            .iter()
            .map(|l| (record(tape, l.kernel.clone()), record(tape, l.bias.clone())))
            .collect();
        let dense_w = record(tape, self.dense_w.clone());
        let dense_b = record(tape, self.dense_b.clone());
        ExtractorVars { convs, dense_w, dense_b }
    }

    /// Records all parameters as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> ExtractorVars {
        self.bind_with(tape, Tape::leaf)
    }

    /// Records all parameters as constants (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> ExtractorVars {
        self.bind_with(tape, Tape::constant)
    }

    /// Runs the convolutional stages, each a 3x3 convolution plus bias and
    /// ReLU. The maps are non-negative.
    pub fn forward_maps(&self, tape: &mut Tape<T>, vars: &ExtractorVars, image: Var, sample_id: usize) -> Result<FeatureMaps> {
        let s = self.cfg.input_size;
        if tape.shape(image) != [s, s, 1] {
            return Err(Error::SizeMismatch { expected: s, got: tape.shape(image).to_vec() });
        }
        let mut x = image;
        for (layer, &(k, b)) in self.convs.iter().zip(&vars.convs) {
            let y = tape.conv2d(x, k, layer.stride, 1)?;
            let y = tape.add_bias(y, b)?;
            x = tape.relu(y);
        }
        Ok(FeatureMaps { values: x, sample_id })
    }

    /// Global average pooling, dense projection, then dropout when training.
    pub fn embed(&self, tape: &mut Tape<T>, vars: &ExtractorVars, maps: &FeatureMaps, mode: Mode<'_>) -> Result<FeatureVector> {
        let c = self.cfg.map_channels();
        let pooled = tape.global_avg_pool(maps.values)?;
        let row = tape.reshape(pooled, &[1, c])?;
        let proj = tape.matmul(row, vars.dense_w)?;
        let proj = tape.add_bias(proj, vars.dense_b)?;
        let mut v = tape.reshape(proj, &[self.cfg.embed_dim])?;
        if let Mode::Train(rng) = mode {
            let keep = self.cfg.dropout_keep;
            if keep < 1.0 {
                let scale = T::lit(1.0 / keep);
                let mask = (0..self.cfg.embed_dim)
                    .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                    .collect();
                v = tape.mask_mul(v, mask)?;
            }
        }
        Ok(FeatureVector { values: v, sample_id: maps.sample_id })
    }

    /// Inference pass returning `(maps, embedding)` values for one image.
    pub fn infer(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut tape = Tape::new();
        let vars = self.bind_frozen(&mut tape);
        let img = tape.constant(image.clone());
        let maps = self.forward_maps(&mut tape, &vars, img, 0)?;
        let v = self.embed(&mut tape, &vars, &maps, Mode::Eval)?;
        Ok((tape.value(maps.values).clone(), tape.value(v.values).clone()))
    }
}
