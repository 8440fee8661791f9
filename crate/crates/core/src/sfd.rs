//! Selective feature discrimination.
//!
//! For every sample in a batch the most similar sample of another class and
//! the least similar sample of its own class are mined from the embeddings.
//! Channels of the feature maps are then selected by the sign of their
//! per-channel cosine: positively correlated channels of the inter-class pair
//! (`p_neg`) and negatively correlated channels of the inner-class pair
//! (`p_pos`). With the extractor's non-negative maps `p_pos` is always
//! empty and its mean counts as 0; the selection still handles signed maps.
//! The hinge
//!
//! ```text
//! L_i = max(mean_{u in p_neg} s_u(i, inter) + psi - mean_{u in p_pos} s_u(i, inner), 0)
//! ```
//!
//! pushes the first group apart and pulls the second together. Pair and
//! channel choices are constants with respect to the gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::FeatureMaps;
use crate::numcore::{NumError, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Norm floor used by every cosine in this module.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SfdConfig {
    /// Hinge margin between inter-pair and inner-pair channel similarity.
    pub psi: f64,
}

impl Default for SfdConfig {
    fn default() -> Self {
        Self { psi: 0.1 }
    }
}

impl SfdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.psi.is_finite() || self.psi < 0.0 {
            return Err(Error::InvalidConfig(format!("psi {} must be finite and non-negative", self.psi)));
        }
        Ok(())
    }
}

/// Cosine similarity with norms floored at `eps`, clamped to `[-1, 1]`.
pub fn cosine_sim<T: Scalar>(a: &[T], b: &[T], eps: T) -> T {
    assert_eq!(a.len(), b.len(), "cosine_sim on vectors of different length");
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt().max(eps);
    let nb = b.iter().map(|&y| y * y).sum::<T>().sqrt().max(eps);
    (dot / (na * nb)).max(-T::one()).min(T::one())
}

/// Hardest partners of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PairChoice<T> {
    /// Most similar sample of a different class.
    pub inter_idx: usize,
    /// Least similar other sample of the same class.
    pub inner_idx: usize,
    pub inter_sim: T,
    pub inner_sim: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedPairs<T> {
    pub pairs: Vec<PairChoice<T>>,
}

/// Mines the hardest inter-class and inner-class partner of every sample by
/// cosine similarity of the embeddings. Ties go to the lowest batch index.
pub fn mine_pairs<T: Scalar, V: AsRef<[T]>>(vectors: &[V], labels: &[usize]) -> Result<MinedPairs<T>> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: vectors.len(), got: labels.len() });
    }
    let eps = T::lit(COSINE_EPS);
    let n = vectors.len();
    // Symmetric similarity table, filled once.
    let mut sim = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_sim(vectors[i].as_ref(), vectors[j].as_ref(), eps);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let mut inter: Option<(usize, T)> = None;
        let mut inner: Option<(usize, T)> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let s = sim[i * n + j];
            if labels[j] != labels[i] {
                if inter.is_none_or(|(_, best)| s > best) {
                    inter = Some((j, s));
                }
            } else if inner.is_none_or(|(_, worst)| s < worst) {
                inner = Some((j, s));
            }
        }
        let (inter_idx, inter_sim) = inter.ok_or(Error::InsufficientClassStructure { sample: i, partner: "inter-class" })?;
        let (inner_idx, inner_sim) = inner.ok_or(Error::InsufficientClassStructure { sample: i, partner: "inner-class" })?;
        pairs.push(PairChoice { inter_idx, inner_idx, inter_sim, inner_sim });
    }
    Ok(MinedPairs { pairs })
}

/// Which half of a [`ChannelSelection`] a pair contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Different-class pair: keep channels with positive similarity.
    Inter,
    /// Same-class pair: keep channels with negative similarity.
    Inner,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSelection {
    /// Channels where the inter-class pair is positively similar.
    pub p_neg: Vec<usize>,
    /// Channels where the inner-class pair is negatively similar.
    pub p_pos: Vec<usize>,
}

/// Cosine similarity of every flattened channel slice of two `[h, w, c]` maps.
pub fn partial_similarities<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<T>> {
    if a.shape() != b.shape() || a.shape().len() != 3 {
        return Err(NumError::ShapeMismatch { op: "partial_similarities", left: a.shape().to_vec(), right: b.shape().to_vec() }.into());
    }
    let c = a.shape()[2];
    let eps = T::lit(COSINE_EPS);
    let (mut dot, mut aa, mut bb) = (vec![T::zero(); c], vec![T::zero(); c], vec![T::zero(); c]);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let p = i % c;
        dot[p] = dot[p] + x * y;
        aa[p] = aa[p] + x * x;
        bb[p] = bb[p] + y * y;
    }
    Ok((0..c).map(|p| dot[p] / (aa[p].sqrt().max(eps) * bb[p].sqrt().max(eps))).collect())
}

/// Channels selected for one pair. Channels with similarity exactly zero
/// (including all-zero slices) are never selected.
pub fn select_channels<T: Scalar>(maps_a: &Tensor<T>, maps_b: &Tensor<T>, kind: PairKind) -> Result<Vec<usize>> {
    let sims = partial_similarities(maps_a, maps_b)?;
    Ok(sims
        .iter()
        .enumerate()
        .filter(|(_, &s)| match kind {
            PairKind::Inter => s > T::zero(),
            PairKind::Inner => s < T::zero(),
        })
        .map(|(p, _)| p)
        .collect())
}

/// Selections for every sample of a batch given its mined pairs.
pub fn select_for_batch<T: Scalar>(maps: &[&Tensor<T>], mined: &MinedPairs<T>) -> Result<Vec<ChannelSelection>> {
    mined
        .pairs
        .iter()
        .enumerate()
        .map(|(i, pc)| {
            Ok(ChannelSelection {
                p_neg: select_channels(maps[i], maps[pc.inter_idx], PairKind::Inter)?,
                p_pos: select_channels(maps[i], maps[pc.inner_idx], PairKind::Inner)?,
            })
        })
        .collect()
}

/// Mean over the batch of the per-sample hinge. An empty channel set
/// contributes zero to its mean term.
pub fn disc_loss<T: Scalar>(
    tape: &mut Tape<T>,
    maps: &[FeatureMaps],
    mined: &MinedPairs<T>,
    selections: &[ChannelSelection],
    cfg: &SfdConfig,
) -> Result<Var> {
    if maps.len() != mined.pairs.len() || maps.len() != selections.len() {
        return Err(Error::DimensionMismatch { expected: maps.len(), got: selections.len() });
    }
    let eps = T::lit(COSINE_EPS);
    let psi = T::lit(cfg.psi);
    let mut per_sample = Vec::with_capacity(maps.len());
    for (i, (pc, sel)) in mined.pairs.iter().zip(selections).enumerate() {
        let mut arg = None;
        if !sel.p_neg.is_empty() {
            let sims = tape.channel_cosine(maps[i].values, maps[pc.inter_idx].values, eps)?;
            let picked = tape.gather(sims, &sel.p_neg)?;
            let neg = tape.mean(picked);
            arg = Some(tape.add_scalar(neg, psi));
        }
        let mut arg = arg.unwrap_or_else(|| tape.constant(Tensor::scalar(psi)));
        if !sel.p_pos.is_empty() {
            let sims = tape.channel_cosine(maps[i].values, maps[pc.inner_idx].values, eps)?;
            let picked = tape.gather(sims, &sel.p_pos)?;
            let pos = tape.mean(picked);
            arg = tape.sub(arg, pos)?;
        }
        per_sample.push(tape.relu(arg));
    }
    let stacked = tape.stack(&per_sample)?;
    Ok(tape.mean(stacked))
}

/// Loss together with the discrete decisions that produced it.
#[derive(Clone, Debug)]
pub struct SfdOutput<T> {
    pub loss: Var,
    pub mined: MinedPairs<T>,
    pub selections: Vec<ChannelSelection>,
}

/// Mines pairs on the embeddings, selects channels on the maps, and records
/// the loss on the tape.
pub fn sfd_loss<T: Scalar>(
    tape: &mut Tape<T>,
    maps: &[FeatureMaps],
    vectors: &[Var],
    labels: &[usize],
    cfg: &SfdConfig,
) -> Result<SfdOutput<T>> {
    let vec_values: Vec<&Tensor<T>> = vectors.iter().map(|&v| tape.value(v)).collect();
    let mined = mine_pairs(&vec_values, labels)?;
    let map_values: Vec<&Tensor<T>> = maps.iter().map(|m| tape.value(m.values)).collect();
    let selections = select_for_batch(&map_values, &mined)?;
    let loss = disc_loss(tape, maps, &mined, &selections, cfg)?;
    Ok(SfdOutput { loss, mined, selections })
}

/// Debug record of the decisions made for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SfdRecord {
    pub sample_id: usize,
    pub inter_idx: usize,
    pub inner_idx: usize,
    pub p_neg: Vec<usize>,
    pub p_pos: Vec<usize>,
}

pub fn debug_records<T>(mined: &MinedPairs<T>, selections: &[ChannelSelection]) -> Vec<SfdRecord> {
    mined
        .pairs
        .iter()
        .zip(selections)
        .enumerate()
        .map(|(i, (pc, sel))| SfdRecord {
            sample_id: i,
            inter_idx: pc.inter_idx,
            inner_idx: pc.inner_idx,
            p_neg: sel.p_neg.clone(),
            p_pos: sel.p_pos.clone(),
        })
        .collect()
}
