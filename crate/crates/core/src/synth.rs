//! Synthetic low-rank ground truth.
//!
//! `Z = E·A` where each column of `E` (`L × K`) is a Gaussian bump over the
//! band axis and each row of `A` (`K × H·W`) is uniform noise smoothed by a
//! 5×5 box filter applied twice, rescaled to `[0, 1]`. The product is then
//! min-max normalized to `[0, 1]`.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cube::HsiCube;
use crate::error::{Error, Result};

const BOX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GtSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub rank: usize,
    pub seed: u64,
}

impl GtSpec {
    pub fn new(height: usize, width: usize, bands: usize, rank: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            bands,
            rank,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::invalid("ground-truth dimensions must be at least 1"));
        }
        if self.rank == 0 || self.rank > self.bands.min(self.height * self.width) {
            return Err(Error::invalid(format!(
                "rank must be in 1..={}, got {}",
                self.bands.min(self.height * self.width),
                self.rank
            )));
        }
        Ok(())
    }
}

/// Spectral bumps `E` (`L × K`) and spatial fields `A` (`K × H·W`), before
/// the product is normalized.
pub fn gt_factors(spec: &GtSpec) -> Result<(Array2<f64>, Array2<f64>)> {
    spec.validate()?;
    let GtSpec {
        height: h,
        width: w,
        bands: l,
        rank: k,
        ..
    } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = (l.max(2) - 1) as f64;
    let bumps: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let center = rng.random_range(0.0..=span);
            let width = rng.random_range(0.08..0.25) * l as f64;
            (center, width.max(0.5))
        })
        .collect();
    let e = Array2::from_shape_fn((l, k), |(b, j)| {
        let (c, s) = bumps[j];
        let d = (b as f64 - c) / s;
        (-0.5 * d * d).exp()
    });
    let mut a = Array2::zeros((k, h * w));
    for j in 0..k {
        let noise = Array2::from_shape_fn((h, w), |_| rng.random::<f64>());
        let smooth = box_filter(box_filter(noise.view()).view());
        let (lo, hi) = smooth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
        for (dst, &v) in a.row_mut(j).iter_mut().zip(smooth.iter()) {
            *dst = if scale > 0.0 { (v - lo) * scale } else { 1.0 };
        }
    }
    Ok((e, a))
}

/// Builds the normalized ground-truth cube.
pub fn make_gt(spec: &GtSpec) -> Result<HsiCube> {
    let (e, a) = gt_factors(spec)?;
    let mut z = e.dot(&a);
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        z.mapv_inplace(|v| (v - lo) / (hi - lo));
    } else {
        z.fill(1.0);
    }
    HsiCube::fold_spectral(z, spec.height, spec.width)
}

/// Index reflection without edge repeat, folded as often as needed.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

fn box_filter(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (h, w) = x.dim();
    let r = (BOX / 2) as isize;
    let norm = 1.0 / (BOX * BOX) as f64;
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut s = 0.0;
        for di in -r..=r {
            for dj in -r..=r {
                s += x[[reflect(i as isize + di, h), reflect(j as isize + dj, w)]];
            }
        }
        s * norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use faer::Mat;

    fn singular_values(m: &Array2<f64>) -> Vec<f64> {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]).singular_values().unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = GtSpec::new(10, 9, 7, 3, 42);
        let a = make_gt(&spec).unwrap();
        let b = make_gt(&spec).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = make_gt(&GtSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalized_to_unit_range() {
        let gt = make_gt(&GtSpec::new(16, 12, 9, 4, 1)).unwrap();
        let lo = gt.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = gt.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn unnormalized_product_has_the_requested_rank() {
        for rank in 1..=5 {
            let (e, a) = gt_factors(&GtSpec::new(14, 13, 20, rank, 7 + rank as u64)).unwrap();
            let s = singular_values(&e.dot(&a));
            assert!(s[rank - 1] > 1e-6 * s[0], "rank {rank} collapsed");
            assert!(s[rank] < 1e-8 * s[0], "rank {rank}: {:?}", &s[..rank + 1]);
        }
    }

    #[test]
    fn normalization_adds_at_most_one_rank() {
        let gt = make_gt(&GtSpec::new(12, 12, 15, 3, 2)).unwrap();
        let s = singular_values(&gt.unfold_spectral());
        assert!(s[4] < 1e-8 * s[0]);
    }

    #[test]
    fn rank_one_spectra_are_multiples_of_one_bump() {
        let spec = GtSpec::new(8, 8, 12, 1, 3);
        let (e, _) = gt_factors(&spec).unwrap();
        let gt = make_gt(&spec).unwrap();
        let bump = e.column(0);
        for r in 0..8 {
            for c in 0..8 {
                let s = gt.spectrum(r, c);
                let scale = s.iter().zip(bump.iter()).map(|(a, b)| a * b).sum::<f64>()
                    / bump.iter().map(|b| b * b).sum::<f64>();
                for (v, b) in s.iter().zip(bump.iter()) {
                    assert!((v - scale * b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(make_gt(&GtSpec::new(0, 4, 4, 1, 0)).is_err());
        assert!(make_gt(&GtSpec::new(4, 4, 3, 4, 0)).is_err());
        assert!(make_gt(&GtSpec::new(1, 2, 5, 3, 0)).is_err());
        assert!(make_gt(&GtSpec::new(1, 1, 1, 1, 0)).is_ok());
    }

    #[test]
    fn reflection_folds_small_axes() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-3, 2), 1);
        assert_eq!(reflect(7, 3), 1);
    }
}
