#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shiprec::numcore::{NumError, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values in `[lo, hi]` with sign flipped at random, so nothing lands near zero.
pub fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.random_range(lo..hi);
        if rng.random::<bool>() { v } else { -v }
    })
}

pub type ScalarFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var, NumError>>;

/// Reduces an arbitrary tensor to a scalar through fixed random weights,
/// so every output coordinate reaches the loss with a distinct factor.
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, NumError> {
    let w = uniform(tape.shape(y), -1.0, 1.0, &mut rng(seed));
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// One finite-difference case per primitive (and per differentiable input).
pub fn primitive_cases(seed: u64) -> Vec<(&'static str, ScalarFn, Tensor<f64>)> {
    let mut r = rng(seed);
    let mut cases: Vec<(&'static str, ScalarFn, Tensor<f64>)> = Vec::new();
    let s = seed;

    let b = uniform(&[4, 3], -1.0, 1.0, &mut r);
    cases.push((
        "matmul_left",
        Box::new(move |t, x| {
            let c = t.constant(b.clone());
            let y = t.matmul(x, c)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 4], -1.0, 1.0, &mut r),
    ));
    let a = uniform(&[3, 4], -1.0, 1.0, &mut r);
    cases.push((
        "matmul_right",
        Box::new(move |t, x| {
            let c = t.constant(a.clone());
            let y = t.matmul(c, x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[4, 2], -1.0, 1.0, &mut r),
    ));
    for (name, stride, pad) in [("conv2d_input_s1_p1", 1, 1), ("conv2d_input_s2_p1", 2, 1), ("conv2d_input_s1_p0", 1, 0)] {
        let k = uniform(&[3, 3, 2, 3], -1.0, 1.0, &mut r);
        cases.push((
            name,
            Box::new(move |t, x| {
                let kv = t.constant(k.clone());
                let y = t.conv2d(x, kv, stride, pad)?;
                weighted_sum(t, y, s)
            }),
            uniform(&[5, 5, 2], -1.0, 1.0, &mut r),
        ));
    }
    for (name, stride) in [("conv2d_kernel_s1", 1), ("conv2d_kernel_s2", 2)] {
        let img = uniform(&[6, 5, 2], -1.0, 1.0, &mut r);
        cases.push((
            name,
            Box::new(move |t, k| {
                let xv = t.constant(img.clone());
                let y = t.conv2d(xv, k, stride, 1)?;
                weighted_sum(t, y, s)
            }),
            uniform(&[3, 3, 2, 2], -1.0, 1.0, &mut r),
        ));
    }
    let bias = uniform(&[3], -1.0, 1.0, &mut r);
    cases.push((
        "add_bias_x",
        Box::new(move |t, x| {
            let bv = t.constant(bias.clone());
            let y = t.add_bias(x, bv)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 2, 3], -1.0, 1.0, &mut r),
    ));
    let xs = uniform(&[4, 3], -1.0, 1.0, &mut r);
    cases.push((
        "add_bias_bias",
        Box::new(move |t, bv| {
            let x = t.constant(xs.clone());
            let y = t.add_bias(x, bv)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3], -1.0, 1.0, &mut r),
    ));
    let other = uniform(&[3, 2], -1.0, 1.0, &mut r);
    let o1 = other.clone();
    cases.push((
        "add",
        Box::new(move |t, x| {
            let c = t.constant(o1.clone());
            let y = t.add(x, c)?;
            let y = t.add(y, x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3, 2], -1.0, 1.0, &mut r),
    ));
    let o2 = other.clone();
    cases.push((
        "sub",
        Box::new(move |t, x| {
            let c = t.constant(o2.clone());
            let y = t.sub(c, x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3, 2], -1.0, 1.0, &mut r),
    ));
    let o3 = other;
    cases.push((
        "mul",
        Box::new(move |t, x| {
            let c = t.constant(o3.clone());
            let y = t.mul(x, c)?;
            let y = t.mul(y, x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3, 2], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "scale",
        Box::new(move |t, x| {
            let y = t.scale(x, -2.5);
            weighted_sum(t, y, s)
        }),
        uniform(&[4], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "add_scalar",
        Box::new(move |t, x| {
            let y = t.add_scalar(x, 0.7);
            let y = t.mul(y, y)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[4], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "relu",
        Box::new(move |t, x| {
            let y = t.relu(x);
            weighted_sum(t, y, s)
        }),
        away_from_zero(&[3, 3], 0.05, 1.0, &mut r),
    ));
    cases.push((
        "global_avg_pool",
        Box::new(move |t, x| {
            let y = t.global_avg_pool(x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3, 2, 4], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "l2_normalize",
        Box::new(move |t, x| {
            let y = t.l2_normalize(x, 1e-12);
            weighted_sum(t, y, s)
        }),
        uniform(&[3, 4], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "softmax_rows",
        Box::new(move |t, x| {
            let y = t.softmax_rows(x);
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 5], -3.0, 3.0, &mut r),
    ));
    cases.push((
        "transpose",
        Box::new(move |t, x| {
            let y = t.transpose(x)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 3], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "reshape",
        Box::new(move |t, x| {
            let y = t.reshape(x, &[3, 2])?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 3], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "sum",
        Box::new(move |t, x| {
            let y = t.mul(x, x)?;
            Ok(t.sum(y))
        }),
        uniform(&[5], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "mean",
        Box::new(move |t, x| {
            let y = t.mul(x, x)?;
            Ok(t.mean(y))
        }),
        uniform(&[5], -1.0, 1.0, &mut r),
    ));
    cases.push((
        "log",
        Box::new(move |t, x| {
            let y = t.log(x);
            weighted_sum(t, y, s)
        }),
        uniform(&[4], 0.2, 2.0, &mut r),
    ));
    cases.push((
        "clamp_min",
        Box::new(move |t, x| {
            let y = t.clamp_min(x, 0.0);
            weighted_sum(t, y, s)
        }),
        away_from_zero(&[6], 0.05, 1.0, &mut r),
    ));
    cases.push((
        "gather",
        Box::new(move |t, x| {
            let y = t.gather(x, &[3, 0, 3, 5])?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 3], -1.0, 1.0, &mut r),
    ));
    let tail = uniform(&[3], -1.0, 1.0, &mut r);
    cases.push((
        "stack",
        Box::new(move |t, x| {
            let c = t.constant(tail.clone());
            let sq = t.mul(x, x)?;
            let y = t.stack(&[x, c, sq])?;
            weighted_sum(t, y, s)
        }),
        uniform(&[3], -1.0, 1.0, &mut r),
    ));
    let cb = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    cases.push((
        "channel_cosine",
        Box::new(move |t, x| {
            let c = t.constant(cb.clone());
            let y = t.channel_cosine(x, c, 1e-12)?;
            let z = t.channel_cosine(c, x, 1e-12)?;
            let y = t.add(y, z)?;
            weighted_sum(t, y, s)
        }),
        uniform(&[2, 3, 4], -1.0, 1.0, &mut r),
    ));
    let mask: Vec<f64> = (0..6).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();
    cases.push((
        "mask_mul",
        Box::new(move |t, x| {
            let y = t.mask_mul(x, mask.clone())?;
            weighted_sum(t, y, s)
        }),
        uniform(&[6], -1.0, 1.0, &mut r),
    ));
    cases
}

/// Naive `[m,k] x [k,n]` product.
pub fn matmul_oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// Direct-definition convolution over signed coordinates.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (h, wd, cin) = (x.shape()[0] as i64, x.shape()[1] as i64, x.shape()[2]);
    let (k, cout) = (w.shape()[0] as i64, w.shape()[3]);
    let (s, p) = (stride as i64, pad as i64);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = Tensor::zeros(&[oh as usize, ow as usize, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..cout {
                let mut acc = 0.0;
                for ky in 0..k {
                    for kx in 0..k {
                        for ci in 0..cin {
                            let (iy, ix) = (oy * s + ky - p, ox * s + kx - p);
                            if iy < 0 || ix < 0 || iy >= h || ix >= wd {
                                continue;
                            }
                            acc += x.at(&[iy as usize, ix as usize, ci]) * w.at(&[ky as usize, kx as usize, ci, co]);
                        }
                    }
                }
                let off = out.offset(&[oy as usize, ox as usize, co]);
                out.data_mut()[off] = acc;
            }
        }
    }
    out
}
