//! Forward observation model: PSF blur, decimation, spectral response and
//! additive Gaussian noise.
//!
//! The low-resolution HSI is `noise(decimate(blur(Z)))`, the high-resolution
//! MSI is `noise(srf · Z)`. Blur uses mirror padding without edge repetition
//! (`-1 -> 1`, `n -> n-2`).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

const UNIT_SUM_TOL: f64 = 1e-12;

/// A normalized, odd-sized, nonnegative 2-D blur kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    taps: Array2<f64>,
}

impl PsfKernel {
    pub fn new(taps: Array2<f64>) -> Result<Self> {
        let (r, c) = taps.dim();
        if r != c || r % 2 == 0 {
            return Err(Error::invalid(format!(
                "PSF must be square with odd size, got {r}x{c}"
            )));
        }
        if taps.iter().any(|&t| t < 0.0 || !t.is_finite()) {
            return Err(Error::invalid("PSF taps must be finite and nonnegative"));
        }
        let sum: f64 = taps.sum();
        if (sum - 1.0).abs() > UNIT_SUM_TOL {
            return Err(Error::invalid(format!("PSF taps sum to {sum}, expected 1")));
        }
        Ok(Self { taps })
    }

    /// The 1×1 identity kernel.
    pub fn identity() -> Self {
        Self {
            taps: Array2::ones((1, 1)),
        }
    }

    pub fn size(&self) -> usize {
        self.taps.nrows()
    }

    pub fn taps(&self) -> ArrayView2<'_, f64> {
        self.taps.view()
    }
}

/// Isotropic Gaussian PSF with taps `exp(-((i-c)² + (j-c)²) / 2σ²)`, normalized.
pub fn gaussian_psf(size: usize, sigma: f64) -> Result<PsfKernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::invalid(format!("PSF size must be odd, got {size}")));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("PSF sigma must be positive, got {sigma}")));
    }
    let c = (size - 1) as f64 / 2.0;
    let mut taps = Array2::from_shape_fn((size, size), |(i, j)| {
        let di = i as f64 - c;
        let dj = j as f64 - c;
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    let sum = taps.sum();
    taps.mapv_inplace(|t| t / sum);
    PsfKernel::new(taps)
}

#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if idx < 0 {
        -idx
    } else if idx >= n {
        2 * (n - 1) - idx
    } else {
        idx
    };
    debug_assert!((0..n).contains(&r));
    r as usize
}

fn check_kernel_fits(psf: &PsfKernel, height: usize, width: usize) -> Result<()> {
    let limit = 2 * height.min(width) - 1;
    if psf.size() > limit {
        return Err(Error::invalid(format!(
            "PSF of size {} exceeds 2*min(H,W)-1 = {limit} for a {height}x{width} plane",
            psf.size()
        )));
    }
    Ok(())
}

/// Convolves one plane with the PSF under mirror padding.
pub fn blur_plane(plane: ArrayView2<'_, f64>, psf: &PsfKernel) -> Result<Array2<f64>> {
    let (h, w) = plane.dim();
    check_kernel_fits(psf, h, w)?;
    let k = psf.size();
    let c = (k / 2) as isize;
    let taps = psf.taps();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for a in 0..k {
                let src_r = reflect(i as isize - a as isize + c, h);
                for b in 0..k {
                    let src_c = reflect(j as isize - b as isize + c, w);
                    acc += taps[[a, b]] * plane[[src_r, src_c]];
                }
            }
            out[[i, j]] = acc;
        }
    }
    Ok(out)
}

/// Adjoint of [`blur_plane`]: scatters each output cotangent back along the
/// same mirrored taps.
pub fn blur_plane_adjoint(cotangent: ArrayView2<'_, f64>, psf: &PsfKernel) -> Result<Array2<f64>> {
    let (h, w) = cotangent.dim();
    check_kernel_fits(psf, h, w)?;
    let k = psf.size();
    let c = (k / 2) as isize;
    let taps = psf.taps();
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let g = cotangent[[i, j]];
            if g == 0.0 {
                continue;
            }
            for a in 0..k {
                let src_r = reflect(i as isize - a as isize + c, h);
                for b in 0..k {
                    let src_c = reflect(j as isize - b as isize + c, w);
                    out[[src_r, src_c]] += taps[[a, b]] * g;
                }
            }
        }
    }
    Ok(out)
}

/// Blurs every band independently.
pub fn blur(cube: &HsiCube, psf: &PsfKernel) -> Result<HsiCube> {
    let (h, w, l) = cube.dims();
    check_kernel_fits(psf, h, w)?;
    let mut out = Array3::zeros((l, h, w));
    for (b, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        dst.assign(&blur_plane(cube.band(b), psf)?);
    }
    HsiCube::from_array(out)
}

/// Spatial decimation keeping rows/cols `offset, offset + ratio, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownsampleSpec {
    ratio: usize,
    offset: usize,
}

impl DownsampleSpec {
    pub fn new(ratio: usize, offset: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::invalid("downsampling ratio must be at least 1"));
        }
        if offset >= ratio {
            return Err(Error::invalid(format!(
                "downsampling offset {offset} must be below the ratio {ratio}"
            )));
        }
        Ok(Self { ratio, offset })
    }

    /// Offset `⌊r/2⌋`, the kept sample sits at the center of each `r × r` block.
    pub fn centered(ratio: usize) -> Result<Self> {
        Self::new(ratio, ratio / 2)
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Output length along an axis of length `n`.
    pub fn output_len(&self, n: usize) -> Result<usize> {
        if n <= self.offset {
            return Err(Error::invalid(format!(
                "axis of length {n} has no samples at offset {}",
                self.offset
            )));
        }
        Ok((n - self.offset - 1) / self.ratio + 1)
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        Ok((self.output_len(height)?, self.output_len(width)?))
    }

    pub fn decimate_plane(&self, plane: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (h, w) = plane.dim();
        let (oh, ow) = self.output_dims(h, w)?;
        Ok(Array2::from_shape_fn((oh, ow), |(i, j)| {
            plane[[self.offset + i * self.ratio, self.offset + j * self.ratio]]
        }))
    }

    /// Zero-filling adjoint of [`DownsampleSpec::decimate_plane`].
    pub fn decimate_plane_adjoint(
        &self,
        cotangent: ArrayView2<'_, f64>,
        height: usize,
        width: usize,
    ) -> Result<Array2<f64>> {
        let (oh, ow) = self.output_dims(height, width)?;
        if cotangent.dim() != (oh, ow) {
            return Err(Error::invalid(format!(
                "cotangent is {:?}, expected {oh}x{ow}",
                cotangent.dim()
            )));
        }
        let mut out = Array2::zeros((height, width));
        for i in 0..oh {
            for j in 0..ow {
                out[[self.offset + i * self.ratio, self.offset + j * self.ratio]] =
                    cotangent[[i, j]];
            }
        }
        Ok(out)
    }
}

pub fn downsample(cube: &HsiCube, spec: DownsampleSpec) -> Result<HsiCube> {
    let (h, w, l) = cube.dims();
    let (oh, ow) = spec.output_dims(h, w)?;
    let mut out = Array3::zeros((l, oh, ow));
    for (b, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        dst.assign(&spec.decimate_plane(cube.band(b))?);
    }
    HsiCube::from_array(out)
}

/// Row-stochastic band-mixing matrix (`l × L`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResponse {
    weights: Array2<f64>,
}

impl SpectralResponse {
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (l, big_l) = weights.dim();
        if l == 0 || big_l == 0 {
            return Err(Error::invalid("SRF must have at least one row and column"));
        }
        if l > big_l {
            return Err(Error::invalid(format!(
                "SRF has {l} output bands but only {big_l} input bands"
            )));
        }
        if weights.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("SRF weights must be finite and nonnegative"));
        }
        for (j, row) in weights.axis_iter(Axis(0)).enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > UNIT_SUM_TOL {
                return Err(Error::invalid(format!("SRF row {j} sums to {s}, expected 1")));
            }
        }
        Ok(Self { weights })
    }

    pub fn identity(bands: usize) -> Result<Self> {
        Self::new(Array2::eye(bands))
    }

    pub fn out_bands(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_bands(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    /// One row per output band, comma-separated weights, shortest
    /// round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.weights.axis_iter(Axis(0)) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format("srf", format!("line {}: {e}", i + 1)))?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::format(
                        "srf",
                        format!("line {} has {} columns, expected {}", i + 1, row.len(), first.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::format("srf", "no rows"));
        }
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let weights = Array2::from_shape_vec((rows.len(), cols), flat)
            .map_err(|e| Error::format("srf", e.to_string()))?;
        Self::new(weights)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// Synthetic response: row `j` is a Gaussian bump centered at
/// `(j + 0.5)·L/l − 0.5` with standard deviation `L/(2l)`.
pub fn gaussian_srf(out_bands: usize, in_bands: usize) -> Result<SpectralResponse> {
    if out_bands == 0 || out_bands > in_bands {
        return Err(Error::invalid(format!(
            "SRF needs 1 <= l <= L, got l = {out_bands}, L = {in_bands}"
        )));
    }
    let big_l = in_bands as f64;
    let l = out_bands as f64;
    let std = big_l / (2.0 * l);
    let mut weights = Array2::from_shape_fn((out_bands, in_bands), |(j, b)| {
        let center = (j as f64 + 0.5) * big_l / l - 0.5;
        let d = b as f64 - center;
        (-(d * d) / (2.0 * std * std)).exp().max(0.0)
    });
    for mut row in weights.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    SpectralResponse::new(weights)
}

pub fn apply_srf(cube: &HsiCube, srf: &SpectralResponse) -> Result<HsiCube> {
    if srf.in_bands() != cube.bands() {
        return Err(Error::invalid(format!(
            "SRF expects {} bands, cube has {}",
            srf.in_bands(),
            cube.bands()
        )));
    }
    let mixed = srf.weights.dot(&cube.unfold_spectral());
    HsiCube::fold_spectral(mixed, cube.height(), cube.width())
}

/// Additive white Gaussian noise at a target SNR.
///
/// `snr_db = +inf` disables noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid(format!("SNR must be finite or +inf, got {snr_db}")));
        }
        Ok(Self { snr_db, seed })
    }

    pub fn disabled() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.snr_db == f64::INFINITY
    }

    /// `σ = sqrt(mean(x²) · 10^(−snr/10))`.
    pub fn sigma_for(&self, mean_square: f64) -> f64 {
        (mean_square * 10f64.powf(-self.snr_db / 10.0)).sqrt()
    }
}

#[inline]
fn splitmix64_at(seed: u64, counter: u64) -> u64 {
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal variate for element `index`, a pure function of
/// `(seed, index)`.
///
/// Element pairs `(2p, 2p+1)` share one Box–Muller draw. The uniforms are
/// outputs `2p` and `2p+1` of SplitMix64 seeded with `seed`:
/// `u1 = (top53(x₀) + 1)·2⁻⁵³ ∈ (0, 1]`, `u2 = top53(x₁)·2⁻⁵³ ∈ [0, 1)`.
/// Even elements take `r·cos(2πu2)`, odd ones `r·sin(2πu2)`, with
/// `r = sqrt(−2 ln u1)`.
pub fn standard_normal_at(seed: u64, index: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let pair = index / 2;
    let u1 = ((splitmix64_at(seed, 2 * pair) >> 11) + 1) as f64 * SCALE;
    let u2 = (splitmix64_at(seed, 2 * pair + 1) >> 11) as f64 * SCALE;
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * PI * u2;
    if index.is_multiple_of(2) {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

pub fn add_noise(cube: &HsiCube, noise: NoiseSpec) -> Result<HsiCube> {
    if noise.snr_db.is_nan() || noise.snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("SNR must be finite or +inf"));
    }
    if noise.is_disabled() {
        return Ok(cube.clone());
    }
    let data = cube.as_slice();
    let mean_square = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    if mean_square == 0.0 {
        return Err(Error::invalid(
            "cannot set a noise level from the SNR of an all-zero cube",
        ));
    }
    let sigma = noise.sigma_for(mean_square);
    let noisy = data
        .iter()
        .enumerate()
        .map(|(i, &v)| v + sigma * standard_normal_at(noise.seed, i as u64))
        .collect();
    let (h, w, l) = cube.dims();
    HsiCube::new(h, w, l, noisy)
}

/// The known (non-blind) degradation linking the latent cube to both
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Degradation {
    pub psf: PsfKernel,
    pub down: DownsampleSpec,
    pub srf: SpectralResponse,
}

impl Degradation {
    /// Blur then decimate one plane.
    pub fn spatial_plane(&self, plane: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let blurred = blur_plane(plane, &self.psf)?;
        self.down.decimate_plane(blurred.view())
    }

    /// Adjoint of [`Degradation::spatial_plane`].
    pub fn spatial_plane_adjoint(
        &self,
        cotangent: ArrayView2<'_, f64>,
        height: usize,
        width: usize,
    ) -> Result<Array2<f64>> {
        let up = self.down.decimate_plane_adjoint(cotangent, height, width)?;
        blur_plane_adjoint(up.view(), &self.psf)
    }

    /// Checks that an `lr` and `msi` pair is consistent with this degradation
    /// for a latent cube of the MSI's spatial size and the HSI's band count.
    pub fn check_observations(&self, lr_hsi: &HsiCube, hr_msi: &HsiCube) -> Result<()> {
        let (h, w, msi_bands) = hr_msi.dims();
        let (lh, lw, bands) = lr_hsi.dims();
        if self.srf.in_bands() != bands {
            return Err(Error::invalid(format!(
                "SRF expects {} bands but the LR-HSI has {bands}",
                self.srf.in_bands()
            )));
        }
        if self.srf.out_bands() != msi_bands {
            return Err(Error::invalid(format!(
                "SRF produces {} bands but the HR-MSI has {msi_bands}",
                self.srf.out_bands()
            )));
        }
        check_kernel_fits(&self.psf, h, w)?;
        let expected = self.down.output_dims(h, w)?;
        if expected != (lh, lw) {
            return Err(Error::invalid(format!(
                "LR-HSI is {lh}x{lw}, but decimating the {h}x{w} MSI grid with ratio {} offset {} gives {}x{}",
                self.down.ratio(),
                self.down.offset(),
                expected.0,
                expected.1
            )));
        }
        Ok(())
    }
}

/// Simulates `(lr_hsi, hr_msi)` from a ground-truth cube.
pub fn simulate(
    gt: &HsiCube,
    degradation: &Degradation,
    noise_hsi: NoiseSpec,
    noise_msi: NoiseSpec,
) -> Result<(HsiCube, HsiCube)> {
    let lr = downsample(&blur(gt, &degradation.psf)?, degradation.down)?;
    let lr = add_noise(&lr, noise_hsi)?;
    let msi = add_noise(&apply_srf(gt, &degradation.srf)?, noise_msi)?;
    Ok((lr, msi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cube(h: usize, w: usize, l: usize, seed: u64) -> HsiCube {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HsiCube::from_fn(h, w, l, |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn mirror(i: isize, n: isize) -> usize {
        // independent formulation of mirror-without-repeat
        let period = 2 * (n - 1);
        let m = i.rem_euclid(period.max(1));
        (if m < n { m } else { period - m }) as usize
    }

    #[test]
    fn psf_size_one_is_identity() {
        assert_eq!(gaussian_psf(1, 0.7).unwrap().taps(), ndarray::array![[1.0]]);
    }

    #[test]
    fn psf_center_tap_by_direct_evaluation() {
        let psf = gaussian_psf(5, 1.0).unwrap();
        let mut total = 0.0;
        for i in -2i32..=2 {
            for j in -2i32..=2 {
                total += (-((i * i + j * j) as f64) / 2.0).exp();
            }
        }
        assert!((psf.taps()[[2, 2]] - 1.0 / total).abs() < 1e-15);
        assert!((psf.taps().sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psf_rotation_symmetry() {
        for sigma in [0.3, 1.0, 4.0] {
            let t = gaussian_psf(3, sigma).unwrap().taps().to_owned();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(t[[i, j]], t[[j, 2 - i]]);
                }
            }
        }
    }

    #[test]
    fn psf_rejects_even_size() {
        assert!(matches!(gaussian_psf(4, 1.0), Err(Error::InvalidArgument(_))));
        assert!(gaussian_psf(3, 0.0).is_err());
    }

    #[test]
    fn blur_keeps_constants() {
        let cube = HsiCube::from_fn(6, 7, 2, |_, _, b| 0.25 + b as f64).unwrap();
        let out = blur(&cube, &gaussian_psf(5, 1.0).unwrap()).unwrap();
        for (a, b) in out.as_slice().iter().zip(cube.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn blur_of_delta_is_kernel() {
        let psf = gaussian_psf(5, 1.3).unwrap();
        let cube = HsiCube::from_fn(9, 9, 1, |r, c, _| if r == 4 && c == 4 { 1.0 } else { 0.0 }).unwrap();
        let out = blur(&cube, &psf).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                assert!((out.get(2 + a, 2 + b, 0) - psf.taps()[[a, b]]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn blur_matches_brute_force_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let taps = Array2::from_shape_fn((3, 3), |_| rng.random::<f64>());
        let taps = &taps / taps.sum();
        let psf = PsfKernel::new(taps.clone()).unwrap();
        let cube = random_cube(6, 6, 1, 11);
        let out = blur(&cube, &psf).unwrap();
        for i in 0..6isize {
            for j in 0..6isize {
                let mut acc = 0.0;
                for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        let k = taps[[(di + 1) as usize, (dj + 1) as usize]];
                        acc += k * cube.get(mirror(i - di, 6), mirror(j - dj, 6), 0);
                    }
                }
                assert!((out.get(i as usize, j as usize, 0) - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn blur_rejects_oversized_kernel() {
        let cube = random_cube(2, 5, 1, 0);
        assert!(blur(&cube, &gaussian_psf(5, 1.0).unwrap()).is_err());
        assert!(blur(&cube, &gaussian_psf(3, 1.0).unwrap()).is_ok());
    }

    #[test]
    fn blur_is_linear() {
        let psf = gaussian_psf(5, 1.0).unwrap();
        let x = random_cube(8, 7, 2, 1);
        let y = random_cube(8, 7, 2, 2);
        let combo = HsiCube::from_fn(8, 7, 2, |r, c, b| 1.5 * x.get(r, c, b) - 0.7 * y.get(r, c, b)).unwrap();
        let lhs = blur(&combo, &psf).unwrap();
        let bx = blur(&x, &psf).unwrap();
        let by = blur(&y, &psf).unwrap();
        for (i, v) in lhs.as_slice().iter().enumerate() {
            let rhs = 1.5 * bx.as_slice()[i] - 0.7 * by.as_slice()[i];
            assert!((v - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn blur_adjoint_satisfies_inner_product_identity() {
        let psf = gaussian_psf(5, 1.1).unwrap();
        let x = random_cube(7, 9, 1, 4);
        let y = random_cube(7, 9, 1, 5);
        let bx = blur_plane(x.band(0), &psf).unwrap();
        let bty = blur_plane_adjoint(y.band(0), &psf).unwrap();
        let lhs: f64 = (&bx * &y.band(0)).sum();
        let rhs: f64 = (&bty * &x.band(0)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn downsample_identity_ratio() {
        let cube = random_cube(5, 3, 2, 8);
        assert_eq!(downsample(&cube, DownsampleSpec::new(1, 0).unwrap()).unwrap(), cube);
    }

    #[test]
    fn downsample_by_two() {
        let cube = HsiCube::new(4, 4, 1, (1..=16).map(f64::from).collect()).unwrap();
        let out = downsample(&cube, DownsampleSpec::new(2, 0).unwrap()).unwrap();
        assert_eq!(out.dims(), (2, 2, 1));
        assert_eq!(out.as_slice(), &[1.0, 3.0, 9.0, 11.0]);
    }

    #[test]
    fn downsample_matches_index_enumeration() {
        let cube = random_cube(8, 8, 2, 9);
        let out = downsample(&cube, DownsampleSpec::new(4, 1).unwrap()).unwrap();
        let rows: Vec<usize> = (0..8).filter(|r| r % 4 == 1).collect();
        assert_eq!(out.dims(), (rows.len(), rows.len(), 2));
        for b in 0..2 {
            for (i, &r) in rows.iter().enumerate() {
                for (j, &c) in rows.iter().enumerate() {
                    assert_eq!(out.get(i, j, b), cube.get(r, c, b));
                }
            }
        }
    }

    #[test]
    fn downsample_rejects_bad_offset() {
        assert!(matches!(DownsampleSpec::new(4, 4), Err(Error::InvalidArgument(_))));
        assert_eq!(DownsampleSpec::centered(4).unwrap().offset(), 2);
    }

    #[test]
    fn decimation_adjoint_identity() {
        let spec = DownsampleSpec::new(3, 1).unwrap();
        let x = random_cube(8, 7, 1, 12);
        let dx = spec.decimate_plane(x.band(0)).unwrap();
        let y = Array2::from_shape_fn(dx.dim(), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let dty = spec.decimate_plane_adjoint(y.view(), 8, 7).unwrap();
        assert!(((&dx * &y).sum() - (&dty * &x.band(0)).sum()).abs() < 1e-12);
    }

    #[test]
    fn srf_identity_and_constant() {
        let cube = random_cube(3, 3, 4, 2);
        assert_eq!(apply_srf(&cube, &SpectralResponse::identity(4).unwrap()).unwrap(), cube);
        let constant = HsiCube::from_fn(2, 2, 31, |_, _, _| 0.375).unwrap();
        let out = apply_srf(&constant, &gaussian_srf(4, 31).unwrap()).unwrap();
        assert!(out.as_slice().iter().all(|v| (v - 0.375).abs() < 1e-14));
    }

    #[test]
    fn srf_matches_per_pixel_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut w = Array2::from_shape_fn((2, 4), |_| rng.random::<f64>());
        for mut row in w.axis_iter_mut(Axis(0)) {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let srf = SpectralResponse::new(w.clone()).unwrap();
        let cube = random_cube(2, 2, 4, 22);
        let out = apply_srf(&cube, &srf).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                for j in 0..2 {
                    let expect: f64 = (0..4).map(|b| w[[j, b]] * cube.get(r, c, b)).sum();
                    assert!((out.get(r, c, j) - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn srf_rejects_band_mismatch() {
        let cube = random_cube(2, 2, 3, 0);
        assert!(apply_srf(&cube, &gaussian_srf(2, 4).unwrap()).is_err());
        assert!(gaussian_srf(5, 4).is_err());
    }

    #[test]
    fn gaussian_srf_shapes() {
        assert_eq!(gaussian_srf(1, 1).unwrap().weights(), ndarray::array![[1.0]]);
        let pan = gaussian_srf(1, 8).unwrap();
        let row = pan.weights().row(0).to_owned();
        for b in 0..8 {
            assert!((row[b] - row[7 - b]).abs() < 1e-15);
        }
        assert!((row.sum() - 1.0).abs() < 1e-12);
        let srf = gaussian_srf(4, 31).unwrap();
        let argmax: Vec<usize> = srf
            .weights()
            .axis_iter(Axis(0))
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            })
            .collect();
        assert!(argmax.windows(2).all(|p| p[0] < p[1]), "{argmax:?}");
    }

    #[test]
    fn srf_csv_round_trip() {
        let srf = gaussian_srf(3, 10).unwrap();
        assert_eq!(SpectralResponse::from_csv(&srf.to_csv()).unwrap(), srf);
        assert!(SpectralResponse::from_csv("0.5,0.5\n1.0\n").is_err());
    }

    #[test]
    fn srf_outputs_stay_in_pixel_hull() {
        let cube = random_cube(3, 3, 12, 41);
        let out = apply_srf(&cube, &gaussian_srf(3, 12).unwrap()).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let s = cube.spectrum(r, c);
                let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in out.spectrum(r, c) {
                    assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
                }
            }
        }
    }

    #[test]
    fn noise_disabled_is_identity() {
        let cube = random_cube(3, 3, 3, 1);
        assert_eq!(add_noise(&cube, NoiseSpec::disabled()).unwrap(), cube);
    }

    #[test]
    fn noise_is_deterministic() {
        let cube = random_cube(4, 4, 3, 1);
        let spec = NoiseSpec::new(20.0, 99).unwrap();
        let a = add_noise(&cube, spec).unwrap();
        let b = add_noise(&cube, spec).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = add_noise(&cube, NoiseSpec::new(20.0, 100).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_rejects_zero_cube() {
        let cube = HsiCube::zeros(2, 2, 2).unwrap();
        assert!(matches!(add_noise(&cube, NoiseSpec::new(30.0, 0).unwrap()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn noise_hits_target_snr() {
        let cube = HsiCube::from_fn(100, 100, 10, |r, c, b| 0.5 + 0.3 * ((r + c + b) as f64 * 0.1).sin()).unwrap();
        let noisy = add_noise(&cube, NoiseSpec::new(30.0, 5).unwrap()).unwrap();
        let signal: f64 = cube.as_slice().iter().map(|v| v * v).sum();
        let resid: f64 = noisy.as_slice().iter().zip(cube.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
        let snr = 10.0 * (signal / resid).log10();
        assert!((snr - 30.0).abs() < 0.2, "snr {snr}");
    }

    #[test]
    fn simulate_shapes_match_reference_protocol() {
        let gt = random_cube(48, 48, 31, 7);
        let degr = Degradation {
            psf: gaussian_psf(5, 1.0).unwrap(),
            down: DownsampleSpec::centered(4).unwrap(),
            srf: gaussian_srf(4, 31).unwrap(),
        };
        let (lr, msi) = simulate(&gt, &degr, NoiseSpec::new(30.0, 1).unwrap(), NoiseSpec::new(30.0, 2).unwrap()).unwrap();
        assert_eq!(lr.dims(), (12, 12, 31));
        assert_eq!(msi.dims(), (48, 48, 4));
        degr.check_observations(&lr, &msi).unwrap();
    }

    #[test]
    fn simulate_identity_pipeline() {
        let gt = random_cube(5, 6, 3, 13);
        let degr = Degradation {
            psf: PsfKernel::identity(),
            down: DownsampleSpec::new(1, 0).unwrap(),
            srf: SpectralResponse::identity(3).unwrap(),
        };
        let (lr, msi) = simulate(&gt, &degr, NoiseSpec::disabled(), NoiseSpec::disabled()).unwrap();
        assert_eq!(lr, gt);
        assert_eq!(msi, gt);
    }

    #[test]
    fn simulate_equals_component_pipeline() {
        let gt = random_cube(12, 12, 6, 17);
        let degr = Degradation {
            psf: gaussian_psf(3, 0.8).unwrap(),
            down: DownsampleSpec::new(3, 1).unwrap(),
            srf: gaussian_srf(2, 6).unwrap(),
        };
        let nh = NoiseSpec::new(25.0, 3).unwrap();
        let nm = NoiseSpec::new(35.0, 4).unwrap();
        let (lr, msi) = simulate(&gt, &degr, nh, nm).unwrap();
        let lr_ref = add_noise(&downsample(&blur(&gt, &degr.psf).unwrap(), degr.down).unwrap(), nh).unwrap();
        let msi_ref = add_noise(&apply_srf(&gt, &degr.srf).unwrap(), nm).unwrap();
        assert_eq!(lr, lr_ref);
        assert_eq!(msi, msi_ref);
    }
}
