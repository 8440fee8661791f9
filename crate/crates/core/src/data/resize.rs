use crate::numcore::Tensor;
use crate::scalar::Scalar;

fn taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of an `[h, w, 1]` image to `[target, target, 1]` using
/// half-pixel centers (align-corners off) with edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, target: usize) -> Tensor<T> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    if h == target && w == target {
        return img.clone();
    }
    let d = img.data();
    let rows: Vec<_> = (0..target).map(|y| taps(y, h, target)).collect();
    let cols: Vec<_> = (0..target).map(|x| taps(x, w, target)).collect();
    Tensor::from_fn(&[target, target, 1], |i| {
        let (y0, y1, fy) = rows[i / target];
        let (x0, x1, fx) = cols[i % target];
        let (fy, fx) = (T::lit(fy), T::lit(fx));
        let top = d[y0 * w + x0] + (d[y0 * w + x1] - d[y0 * w + x0]) * fx;
        let bottom = d[y1 * w + x0] + (d[y1 * w + x1] - d[y1 * w + x0]) * fx;
        top + (bottom - top) * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_size_is_bit_identical() {
        let img = Tensor::from_fn(&[5, 5, 1], |i| (i as f64).sin());
        assert_eq!(resize_bilinear(&img, 5), img);
    }

    #[test]
    fn two_by_two_to_four_by_four() {
        let img = Tensor::new(vec![2, 2, 1], vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
        let out = resize_bilinear(&img, 4);
        // source coordinates along each axis: -0.25 -> 0, 0.25, 0.75, 1.25 -> 1
        let axis = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let expected = 2.0 * axis[y] + axis[x];
                assert!((out.at(&[y, x, 0]) - expected).abs() < 1e-15, "({y},{x})");
            }
        }
    }

    proptest! {
        #[test]
        fn constants_and_bounds(h in 1usize..9, w in 1usize..9, target in 1usize..20, c in 0.0f64..1.0, seed in any::<u64>()) {
            let flat = Tensor::full(&[h, w, 1], c);
            prop_assert!(resize_bilinear(&flat, target).data().iter().all(|&v| v == c));
            let img = Tensor::from_fn(&[h, w, 1], |i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 1000.0);
            let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &v in resize_bilinear(&img, target).data() {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
