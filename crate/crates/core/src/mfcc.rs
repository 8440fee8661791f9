//! Multi-feature-center cosine classifier.
//!
//! Each of the `N` classes owns `H` learnable centers. An embedding is scored
//! against all `N*H` centers by cosine similarity, the scaled scores go
//! through one softmax, and the class probability is the softmax mass summed
//! over that class's centers. During training a margin `delta` is subtracted
//! from the true class's probability when the sample is already classified
//! correctly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, Tape, Tensor, Var};
use crate::rng;
use crate::scalar::Scalar;

/// Floor applied before taking the logarithm of a class probability.
pub const PROB_FLOOR: f64 = 1e-12;
const NORM_EPS: f64 = 1e-12;
const RESIDUAL_FLOOR: f64 = 1e-8;
const RESTART_BUDGET: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterConfig {
    /// Centers per class (`H`).
    pub centers_per_class: usize,
    /// Multiplier applied to cosine scores before the softmax.
    pub scale: f64,
    /// Margin subtracted from a correctly predicted class probability.
    pub delta: f64,
    /// Orthogonalize across classes as well as within each class.
    pub global_orthogonal: bool,
}

impl Default for CenterConfig {
    fn default() -> Self {
        Self { centers_per_class: 4, scale: 16.0, delta: 0.1, global_orthogonal: false }
    }
}

impl CenterConfig {
    pub fn validate(&self, dim: usize, num_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.centers_per_class == 0 {
            return bad("centers_per_class must be positive".into());
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta {} must be finite and non-negative", self.delta));
        }
        if dim < self.centers_per_class {
            return bad(format!("embedding dimension {dim} smaller than centers_per_class {}", self.centers_per_class));
        }
        if self.global_orthogonal && dim < self.centers_per_class * num_classes {
            return bad(format!(
                "global orthogonality needs embedding dimension >= {} (got {dim})",
                self.centers_per_class * num_classes
            ));
        }
        Ok(())
    }
}

/// `C x (N*H)` center matrix; column `m*H + j` is center `j` of class `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank<T> {
    pub centers: Tensor<T>,
    pub num_classes: usize,
    pub centers_per_class: usize,
    pub scale: T,
    pub delta: T,
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Each accepted
/// vector is orthogonalized against `basis` and every vector accepted before
/// it in this call; a draw whose residual norm falls below `1e-8` is redrawn.
fn orthonormal_draws(
    dim: usize,
    count: usize,
    basis: &[Vec<f64>],
    mut draw: impl FnMut(&mut [f64]),
    first_index: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut restarts = 0;
        let v = loop {
            let mut v = vec![0.0; dim];
            draw(&mut v);
            for _ in 0..2 {
                for u in basis.iter().chain(&accepted) {
                    let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
                }
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm >= RESIDUAL_FLOOR {
                v.iter_mut().for_each(|a| *a /= norm);
                break v;
            }
            restarts += 1;
            if restarts > RESTART_BUDGET {
                return Err(Error::RestartBudgetExceeded { center: first_index + k, budget: RESTART_BUDGET });
            }
        };
        accepted.push(v);
    }
    Ok(accepted)
}

/// Centers with default scale and margin.
pub fn init_centers<T: Scalar>(dim: usize, num_classes: usize, per_class: usize, seed: u64) -> Result<CenterBank<T>> {
    let cfg = CenterConfig { centers_per_class: per_class, ..CenterConfig::default() };
    CenterBank::init(dim, num_classes, &cfg, seed)
}

impl<T: Scalar> CenterBank<T> {
    /// Draws Gaussian vectors and orthonormalizes the `H` centers of each
    /// class (or all `N*H` centers when `global_orthogonal`).
    pub fn init(dim: usize, num_classes: usize, cfg: &CenterConfig, seed: u64) -> Result<Self> {
        let per_class = cfg.centers_per_class;
        if dim < per_class {
            return Err(Error::InfeasibleCenters { dim, per_class });
        }
        cfg.validate(dim, num_classes)?;
        let mut rng = rng::stream(seed, &[rng::STREAM_CENTERS]);
        let draw = |v: &mut [f64]| v.iter_mut().for_each(|a| *a = rng.sample(StandardNormal));
        let columns = Self::orthonormal_columns(dim, num_classes, per_class, cfg.global_orthogonal, draw)?;
        Ok(Self::from_columns(dim, num_classes, per_class, &columns, cfg))
    }

    fn orthonormal_columns(
        dim: usize,
        num_classes: usize,
        per_class: usize,
        global: bool,
        mut draw: impl FnMut(&mut [f64]),
    ) -> Result<Vec<Vec<f64>>> {
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(num_classes * per_class);
        for m in 0..num_classes {
            let basis: &[Vec<f64>] = if global { &columns } else { &[] };
            let block = orthonormal_draws(dim, per_class, basis, &mut draw, m * per_class)?;
            columns.extend(block);
        }
        Ok(columns)
    }

    fn from_columns(dim: usize, num_classes: usize, per_class: usize, columns: &[Vec<f64>], cfg: &CenterConfig) -> Self {
        let gamma = columns.len();
        let centers = Tensor::from_fn(&[dim, gamma], |i| T::lit(columns[i % gamma][i / gamma]));
        Self {
            centers,
            num_classes,
            centers_per_class: per_class,
            scale: T::lit(cfg.scale),
            delta: T::lit(cfg.delta),
        }
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn total_centers(&self) -> usize {
        self.num_classes * self.centers_per_class
    }

    /// Center `j` of class `m`.
    pub fn center(&self, class: usize, j: usize) -> Vec<T> {
        let gamma = self.total_centers();
        let col = class * self.centers_per_class + j;
        (0..self.dim()).map(|r| self.centers.data()[r * gamma + col]).collect()
    }

    /// `[N*H, N]` matrix with a one where a center belongs to a class.
    pub fn class_indicator(&self) -> Tensor<T> {
        let n = self.num_classes;
        Tensor::from_fn(&[self.total_centers(), n], |i| {
            if (i / n) / self.centers_per_class == i % n {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Cosine scores of one embedding against every center, shaped `[N, H]`.
    pub fn sim_scores(&self, v: &[T]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let centers = tape.constant(self.centers.clone());
        let x = tape.constant(Tensor::from_vec(v.to_vec()));
        let s = batch_scores(&mut tape, x, centers)?;
        Ok(tape.value(s).reshaped(&[self.num_classes, self.centers_per_class])?)
    }

    /// Predicted class of one embedding.
    pub fn predict(&self, v: &[T]) -> Result<usize> {
        Ok(class_probs(&self.sim_scores(v)?, self, None).predicted)
    }
}

/// Cosine scores of embeddings `[B, C]` (or a single `[C]`) against centers
/// `[C, N*H]`, giving `[B, N*H]`.
pub fn batch_scores<T: Scalar>(tape: &mut Tape<T>, vectors: Var, centers: Var) -> Result<Var> {
    let dim = tape.shape(centers)[0];
    let v = match tape.shape(vectors) {
        [c] if *c == dim => tape.reshape(vectors, &[1, dim])?,
        [_, c] if *c == dim => vectors,
        other => {
            let got = *other.last().unwrap();
            return Err(Error::DimensionMismatch { expected: dim, got });
        }
    };
    let eps = T::lit(NORM_EPS);
    let vn = tape.l2_normalize(v, eps);
    let ct = tape.transpose(centers)?;
    let cn = tape.l2_normalize(ct, eps);
    let cnt = tape.transpose(cn)?;
    Ok(tape.matmul(vn, cnt)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbs<T> {
    /// Per-class probability; the true class entry has the margin subtracted
    /// when `margin_applied`.
    pub probs: Vec<T>,
    /// Argmax of the probabilities before any margin.
    pub predicted: usize,
    pub margin_applied: bool,
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities from an `[N, H]` (or flat `N*H`) score block.
pub fn class_probs<T: Scalar>(scores: &Tensor<T>, bank: &CenterBank<T>, true_label: Option<usize>) -> ClassProbs<T> {
    let h = bank.centers_per_class;
    let mut flat: Vec<T> = scores.data().iter().map(|&s| s * bank.scale).collect();
    softmax_in_place(&mut flat);
    let mut probs: Vec<T> = flat.chunks(h).map(|c| c.iter().copied().sum()).collect();
    let predicted = argmax(&probs);
    let margin_applied = true_label == Some(predicted);
    if margin_applied {
        probs[predicted] = probs[predicted] - bank.delta;
    }
    ClassProbs { probs, predicted, margin_applied }
}

/// Mean negative log of the (margin-adjusted, floored) true-class probability.
pub fn mfcc_loss_from_probs<T: Scalar>(probs: &[ClassProbs<T>], labels: &[usize]) -> Result<T> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: labels.len() });
    }
    let floor = T::lit(PROB_FLOOR);
    let mut total = T::zero();
    for (p, &y) in probs.iter().zip(labels) {
        let n = p.probs.len();
        let py = *p.probs.get(y).ok_or(Error::LabelOutOfRange { label: y, num_classes: n })?;
        total = total - py.max(floor).ln();
    }
    Ok(total / T::from_usize_lossy(labels.len()))
}

#[derive(Clone, Debug)]
pub struct MfccOutput<T> {
    pub loss: Var,
    pub probs: Vec<ClassProbs<T>>,
}

/// Records the classifier loss for a batch of cosine scores `[B, N*H]`.
/// The margin is a constant shift and carries no gradient.
pub fn mfcc_loss<T: Scalar>(tape: &mut Tape<T>, scores: Var, labels: &[usize], bank: &CenterBank<T>) -> Result<MfccOutput<T>> {
    let n = bank.num_classes;
    let gamma = bank.total_centers();
    let b = labels.len();
    if tape.shape(scores) != [b, gamma] {
        return Err(Error::DimensionMismatch { expected: b * gamma, got: tape.value(scores).len() });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::LabelOutOfRange { label: bad, num_classes: n });
    }
    let logits = tape.scale(scores, bank.scale);
    let sm = tape.softmax_rows(logits);
    let ind = tape.constant(bank.class_indicator());
    let mass = tape.matmul(sm, ind)?;

    let mass_vals = tape.value(mass).data().to_vec();
    let mut margin = vec![T::zero(); b * n];
    let mut probs = Vec::with_capacity(b);
    for (r, &y) in labels.iter().enumerate() {
        let row = &mass_vals[r * n..(r + 1) * n];
        let predicted = argmax(row);
        let margin_applied = predicted == y;
        let mut p = row.to_vec();
        if margin_applied {
            margin[r * n + y] = bank.delta;
            p[y] = p[y] - bank.delta;
        }
        probs.push(ClassProbs { probs: p, predicted, margin_applied });
    }
    let margin = tape.constant(Tensor::new(vec![b, n], margin)?);
    let adjusted = tape.sub(mass, margin)?;
    let picks: Vec<usize> = labels.iter().enumerate().map(|(r, &y)| r * n + y).collect();
    let picked = tape.gather(adjusted, &picks)?;
    let floored = tape.clamp_min(picked, T::lit(PROB_FLOOR));
    let logs = tape.log(floored);
    let mean = tape.mean(logs);
    let loss = tape.scale(mean, -T::one());
    Ok(MfccOutput { loss, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_error(bank: &CenterBank<f64>, class: usize) -> f64 {
        let h = bank.centers_per_class;
        let mut worst: f64 = 0.0;
        for i in 0..h {
            for j in 0..h {
                let (a, b) = (bank.center(class, i), bank.center(class, j));
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    #[test]
    fn small_bank_gram_is_identity() {
        let bank = init_centers::<f64>(8, 2, 4, 1).unwrap();
        assert_eq!(bank.centers.shape(), &[8, 8]);
        for m in 0..2 {
            assert!(gram_error(&bank, m) <= 1e-9);
        }
    }

    #[test]
    fn single_center_is_unit() {
        let bank = init_centers::<f64>(5, 3, 1, 2).unwrap();
        for m in 0..3 {
            let c = bank.center(m, 0);
            assert!((c.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_and_restart_budget() {
        assert!(matches!(init_centers::<f64>(3, 2, 4, 0), Err(Error::InfeasibleCenters { dim: 3, per_class: 4 })));
        let err = CenterBank::<f64>::orthonormal_columns(4, 1, 2, false, |v| v.iter_mut().for_each(|a| *a = 0.0)).unwrap_err();
        assert!(matches!(err, Error::RestartBudgetExceeded { center: 0, .. }));
    }

    #[test]
    fn global_orthogonality() {
        let cfg = CenterConfig { centers_per_class: 3, global_orthogonal: true, ..CenterConfig::default() };
        let bank = CenterBank::<f64>::init(6, 2, &cfg, 4).unwrap();
        let (a, b) = (bank.center(0, 1), bank.center(1, 2));
        assert!(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().abs() < 1e-12);
        assert!(CenterBank::<f64>::init(5, 2, &cfg, 4).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_centers::<f64>(16, 3, 4, 9).unwrap(), init_centers::<f64>(16, 3, 4, 9).unwrap());
    }

    #[test]
    fn score_of_own_center_and_orthogonal_vector() {
        let bank = init_centers::<f64>(8, 2, 2, 5).unwrap();
        let s = bank.sim_scores(&bank.center(0, 0)).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert!((s.at(&[0, 0]) - 1.0).abs() < 1e-12);
        assert!(s.at(&[0, 1]).abs() < 1e-12);

        // project a random vector off class 1's span
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        for j in 0..2 {
            let c = bank.center(1, j);
            let p: f64 = v.iter().zip(&c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(&c).for_each(|(a, b)| *a -= p * b);
        }
        let s = bank.sim_scores(&v).unwrap();
        assert!(s.at(&[1, 0]).abs() < 1e-12 && s.at(&[1, 1]).abs() < 1e-12);
        assert!(matches!(bank.sim_scores(&[1.0; 7]), Err(Error::DimensionMismatch { expected: 8, got: 7 })));
    }

    #[test]
    fn equal_scores_are_uniform() {
        let mut bank = init_centers::<f64>(6, 3, 2, 0).unwrap();
        bank.delta = 0.0;
        let p = class_probs(&Tensor::full(&[3, 2], 0.3), &bank, None);
        assert_eq!(p.predicted, 0);
        for &q in &p.probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_built_margin_case() {
        let mut bank = init_centers::<f64>(4, 2, 2, 0).unwrap();
        bank.scale = 1.0;
        bank.delta = 0.1;
        let scores = Tensor::new(vec![2, 2], vec![0.9, 0.2, -0.1, 0.4]).unwrap();
        let p = class_probs(&scores, &bank, Some(0));
        let e: Vec<f64> = [0.9f64, 0.2, -0.1, 0.4].iter().map(|s| s.exp()).collect();
        let z: f64 = e.iter().sum();
        let p0 = (e[0] + e[1]) / z;
        assert!(p.margin_applied);
        assert!((p.probs[0] - (p0 - 0.1)).abs() < 1e-15);
        assert!((p.probs[1] - (e[2] + e[3]) / z).abs() < 1e-15);
        // wrong label: no margin
        let q = class_probs(&scores, &bank, Some(1));
        assert!(!q.margin_applied);
        assert!((q.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_from_probs_cases() {
        let perfect = ClassProbs { probs: vec![1.0, 0.0], predicted: 0, margin_applied: false };
        assert_eq!(mfcc_loss_from_probs(&[perfect], &[0]).unwrap(), 0.0);
        let uniform = ClassProbs { probs: vec![0.25; 4], predicted: 0, margin_applied: false };
        let l = mfcc_loss_from_probs(&[uniform.clone(), uniform.clone()], &[1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert!(matches!(mfcc_loss_from_probs(&[uniform], &[4]), Err(Error::LabelOutOfRange { label: 4, .. })));
    }

    #[test]
    fn tape_loss_label_out_of_range() {
        let bank = init_centers::<f64>(4, 2, 1, 0).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(matches!(mfcc_loss(&mut tape, s, &[2], &bank), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn gradient_wrt_vectors_and_centers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = init_centers::<f64>(6, 3, 2, 1).unwrap();
        let v = Tensor::from_fn(&[4, 6], |_| rng.sample(StandardNormal));
        let labels = [0, 1, 2, 1];
        let loss = |tape: &mut Tape<f64>, v: Var, c: Var| -> Result<Var> {
            let s = batch_scores(tape, v, c)?;
            Ok(mfcc_loss(tape, s, &labels, &bank)?.loss)
        };
        let e1 = finite_diff_check(
            |tape, x| {
                let c = tape.constant(bank.centers.clone());
                loss(tape, x, c)
            },
            &v,
            1e-5,
        )
        .unwrap();
        let e2 = finite_diff_check(
            |tape, c| {
                let x = tape.constant(v.clone());
                loss(tape, x, c)
            },
            &bank.centers,
            1e-5,
        )
        .unwrap();
        assert!(e1 <= 1e-4 && e2 <= 1e-4, "{e1} {e2}");
    }

    #[test]
    fn prediction_scale_invariance() {
        let bank = init_centers::<f64>(8, 3, 2, 3).unwrap();
        let mut scaled = bank.clone();
        scaled.centers = bank.centers.map(|x| 3.5 * x);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = v.iter().map(|x| 0.01 * x).collect();
            let p = bank.predict(&v).unwrap();
            assert_eq!(p, bank.predict(&w).unwrap());
            assert_eq!(p, scaled.predict(&v).unwrap());
        }
    }
}
