use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample, Source};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::rng;
use crate::scalar::Scalar;

const BACKGROUND: f64 = 0.04;
const BASE_HALF_LENGTH: f64 = 5.0;
const LENGTH_STEP: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Sub-populations per class, each with its own hull geometry.
    pub modes_per_class: usize,
    /// 0 keeps classes fully distinct; 1 makes every class identical
    /// within a mode.
    pub inter_class_overlap: f64,
    /// Standard deviation of the multiplicative speckle.
    pub speckle_sigma: f64,
    pub image_size: usize,
    pub samples_per_class: usize,
    /// Scale of the per-sample geometric and radiometric perturbation.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            modes_per_class: 2,
            inter_class_overlap: 0.6,
            speckle_sigma: 0.1,
            image_size: 32,
            samples_per_class: 40,
            jitter: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.modes_per_class == 0 {
            return bad("modes_per_class must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.inter_class_overlap) {
            return bad(format!("inter_class_overlap {} outside [0, 1]", self.inter_class_overlap));
        }
        if !(self.speckle_sigma.is_finite() && self.speckle_sigma >= 0.0) {
            return bad(format!("speckle_sigma {} must be non-negative", self.speckle_sigma));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!("jitter {} must be non-negative", self.jitter));
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        Ok(())
    }

    /// Rendering parameters of mode `mode` of class `class`, after overlap.
    pub fn mode_params(&self, class: usize, mode: usize) -> ModeParams {
        let n = self.num_classes;
        let alpha = self.inter_class_overlap;
        let own = |c: usize| raw_mode_params(c, mode, n);
        let mean = |f: fn(&ModeParams) -> f64| (0..n).map(|c| f(&own(c))).sum::<f64>() / n as f64;
        let mine = own(class);
        let pull = |v: f64, m: f64| (1.0 - alpha) * v + alpha * m;
        ModeParams {
            half_length: pull(mine.half_length, mean(|p| p.half_length)),
            spot: pull(mine.spot, mean(|p| p.spot)),
            ..mine
        }
    }
}

/// Geometry and radiometry of one rendered hull.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeParams {
    pub half_length: f64,
    pub half_width: f64,
    /// Hull axis orientation in radians.
    pub angle: f64,
    /// Position of the bright superstructure along the axis, in `[-1, 1]`
    /// of the half length.
    pub spot: f64,
    pub brightness: f64,
}

/// Class-specific parameters before overlap. Odd modes are broad hulls,
/// even modes slender ones, and the class ordering of hull length is
/// reversed on odd modes, so no single monotone size cue ranks the classes
/// consistently across modes.
fn raw_mode_params(class: usize, mode: usize, num_classes: usize) -> ModeParams {
    let rank = if mode.is_multiple_of(2) { class } else { num_classes - 1 - class };
    let spot_rank = (class + mode) % num_classes;
    let span = (num_classes - 1).max(1) as f64;
    ModeParams {
        half_length: BASE_HALF_LENGTH + LENGTH_STEP * rank as f64 * 2.0 / span,
        half_width: 1.2 + 1.6 * (mode % 2) as f64,
        angle: 0.2 + 0.1 * mode as f64,
        spot: -0.6 + 1.2 * spot_rank as f64 / span,
        brightness: 0.9,
    }
}

/// Noise-free rendering of a hull centred in an `s x s` chip.
pub fn render_mode_template(p: &ModeParams, size: usize) -> Vec<f64> {
    render(p, size, 0.0, 0.0)
}

fn render(p: &ModeParams, size: usize, dx: f64, dy: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = p.angle.sin_cos();
    let spot_u = p.spot * p.half_length;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (rx, ry) = (x as f64 - c - dx, y as f64 - c - dy);
            let u = rx * cos + ry * sin;
            let v = -rx * sin + ry * cos;
            let r2 = (u / p.half_length).powi(2) + (v / p.half_width).powi(2);
            let hull = (-r2 * r2).exp();
            let spot = (-((u - spot_u).powi(2) + v.powi(2)) / 2.0).exp();
            out[y * size + x] = BACKGROUND + p.brightness * (0.7 * hull + 0.4 * spot);
        }
    }
    out
}

/// Class-balanced synthetic dataset, deterministic per seed. Samples are
/// ordered by class; modes cycle within each class.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig) -> Result<Dataset<T>> {
    cfg.validate()?;
    let s = cfg.image_size;
    let j = cfg.jitter;
    let mut samples = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for class in 0..cfg.num_classes {
        for idx in 0..cfg.samples_per_class {
            let mut rng = rng::stream(cfg.seed, &[rng::STREAM_SYNTH, class as u64, idx as u64]);
            let mode = idx % cfg.modes_per_class;
            let base = cfg.mode_params(class, mode);
            let mut unit = |scale: f64| scale * j * rng.random_range(-1.0..=1.0);
            let p = ModeParams {
                half_length: base.half_length + unit(0.4),
                half_width: base.half_width + unit(0.15),
                angle: base.angle + unit(0.08),
                spot: base.spot + unit(0.05),
                brightness: base.brightness * (1.0 + unit(0.1)),
            };
            let (dx, dy) = (unit(1.5), unit(1.5));
            let mut pixels = render(&p, s, dx, dy);
            if cfg.speckle_sigma > 0.0 {
                for v in pixels.iter_mut() {
                    let n: f64 = rng.sample(StandardNormal);
                    *v *= (1.0 + cfg.speckle_sigma * n).max(0.0);
                }
            }
            let data = pixels.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))).collect();
            samples.push(Sample {
                image: Tensor::new(vec![s, s, 1], data)?,
                label: class,
                source: Source::Synthetic { mode },
            });
        }
    }
    let class_names = (0..cfg.num_classes).map(|c| format!("class_{c}")).collect();
    Ok(Dataset { samples, class_names })
}

/// Training set of `cfg.samples_per_class` per class plus a disjoint
/// held-out set of `test_per_class` per class drawn from the same
/// distribution. Training samples are identical to `synth_generate(cfg)`.
pub fn synth_split<T: Scalar>(cfg: &SynthConfig, test_per_class: usize) -> Result<(Dataset<T>, Dataset<T>)> {
    let n_train = cfg.samples_per_class;
    let all = synth_generate::<T>(&SynthConfig { samples_per_class: n_train + test_per_class, ..cfg.clone() })?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in all.samples.into_iter().enumerate() {
        if i % (n_train + test_per_class) < n_train {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    let names = all.class_names;
    Ok((Dataset { samples: train, class_names: names.clone() }, Dataset { samples: test, class_names: names }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn deterministic_and_balanced() {
        let cfg = SynthConfig { samples_per_class: 7, ..SynthConfig::default() };
        let a = synth_generate::<f64>(&cfg).unwrap();
        let b = synth_generate::<f64>(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![7, 7, 7]);
        assert!(a.samples.iter().all(|s| s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v))));
        let c = synth_generate::<f64>(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        let (train, test) = synth_split::<f64>(&cfg, 5).unwrap();
        assert_eq!(train, a);
        assert_eq!(test.class_counts(), vec![5, 5, 5]);
    }

    #[test]
    fn separable_regime_nearest_template_is_perfect() {
        let cfg = SynthConfig {
            modes_per_class: 1,
            inter_class_overlap: 0.0,
            speckle_sigma: 0.0,
            jitter: 0.3,
            samples_per_class: 50,
            ..SynthConfig::default()
        };
        let ds = synth_generate::<f64>(&cfg).unwrap();
        let templates: Vec<Vec<f64>> =
            (0..cfg.num_classes).map(|c| render_mode_template(&cfg.mode_params(c, 0), cfg.image_size)).collect();
        for s in &ds.samples {
            let best = (0..templates.len())
                .min_by(|&a, &b| dist(s.image.data(), &templates[a]).total_cmp(&dist(s.image.data(), &templates[b])))
                .unwrap();
            assert_eq!(best, s.label);
        }
    }

    #[test]
    fn modes_are_further_apart_than_classes_under_high_overlap() {
        for overlap in [0.55, 0.6, 0.8] {
            let cfg = SynthConfig { inter_class_overlap: overlap, samples_per_class: 60, ..SynthConfig::default() };
            let ds = synth_generate::<f64>(&cfg).unwrap();
            let size = cfg.image_size * cfg.image_size;
            let mut means = vec![vec![vec![0.0; size]; 2]; cfg.num_classes];
            let mut counts = vec![[0usize; 2]; cfg.num_classes];
            for s in &ds.samples {
                let Source::Synthetic { mode } = s.source else { unreachable!() };
                counts[s.label][mode] += 1;
                for (m, v) in means[s.label][mode].iter_mut().zip(s.image.data()) {
                    *m += v;
                }
            }
            for c in 0..cfg.num_classes {
                for m in 0..2 {
                    let n = counts[c][m] as f64;
                    means[c][m].iter_mut().for_each(|v| *v /= n);
                }
            }
            let inner: f64 =
                (0..cfg.num_classes).map(|c| dist(&means[c][0], &means[c][1])).sum::<f64>() / cfg.num_classes as f64;
            let mut nearest_inter = f64::INFINITY;
            for a in 0..cfg.num_classes {
                for b in a + 1..cfg.num_classes {
                    for ma in 0..2 {
                        for mb in 0..2 {
                            nearest_inter = nearest_inter.min(dist(&means[a][ma], &means[b][mb]));
                        }
                    }
                }
            }
            assert!(inner > nearest_inter, "overlap {overlap}: inner {inner} vs inter {nearest_inter}");
        }
    }

    #[test]
    fn invalid_config() {
        assert!(SynthConfig { inter_class_overlap: 1.5, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { modes_per_class: 0, ..SynthConfig::default() }.validate().is_err());
    }
}
