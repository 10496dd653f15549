//! Full-reference quality metrics and the bicubic baseline.

use std::fmt;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::cube::HsiCube;
use crate::error::{Error, Result};

/// PSNR of a band whose error is exactly zero.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// How the dynamic range used by PSNR and SSIM is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Peak {
    /// Maximum of the reference band.
    #[default]
    BandMax,
    /// Fixed 1.0.
    Unit,
}

impl Peak {
    fn of(self, band: ArrayView2<'_, f64>) -> f64 {
        match self {
            Peak::BandMax => band.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Peak::Unit => 1.0,
        }
    }
}

fn same_dims(pred: &HsiCube, reference: &HsiCube) -> Result<()> {
    if pred.dims() != reference.dims() {
        return Err(Error::invalid(format!(
            "prediction is {:?} but reference is {:?}",
            pred.dims(),
            reference.dims()
        )));
    }
    Ok(())
}

fn is_all_zero(band: ArrayView2<'_, f64>) -> bool {
    band.iter().all(|&v| v == 0.0)
}

/// A band-averaged score and the bands left out of the average.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAverage {
    pub value: f64,
    pub skipped_bands: Vec<usize>,
}

/// Mean PSNR over bands, skipping all-zero reference bands.
pub fn mpsnr_detailed(pred: &HsiCube, reference: &HsiCube, peak: Peak) -> Result<BandAverage> {
    same_dims(pred, reference)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for b in 0..reference.bands() {
        let r = reference.band(b);
        if is_all_zero(r) {
            skipped.push(b);
            continue;
        }
        let p = pred.band(b);
        let mse = p.iter().zip(r.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / r.len() as f64;
        let psnr = if mse == 0.0 {
            PSNR_CAP_DB
        } else {
            let pk = peak.of(r);
            (10.0 * (pk * pk / mse).log10()).min(PSNR_CAP_DB)
        };
        sum += psnr;
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("every reference band is all zero; PSNR is undefined"));
    }
    Ok(BandAverage {
        value: sum / used as f64,
        skipped_bands: skipped,
    })
}

pub fn mpsnr(pred: &HsiCube, reference: &HsiCube) -> Result<f64> {
    Ok(mpsnr_detailed(pred, reference, Peak::BandMax)?.value)
}

fn gaussian_window() -> Array2<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w = Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s = w.sum();
    w / s
}

/// Mean SSIM of one band over all fully contained window positions.
fn ssim_band(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, window: &Array2<f64>, peak: f64) -> f64 {
    let (h, w) = x.dim();
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = SSIM_WINDOW;
    let mut total = 0.0;
    for i in 0..=h - n {
        for j in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let g = window[[a, b]];
                    mx += g * x[[i + a, j + b]];
                    my += g * y[[i + a, j + b]];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let g = window[[a, b]];
                    let dx = x[[i + a, j + b]] - mx;
                    let dy = y[[i + a, j + b]] - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cxy += g * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / ((h - n + 1) * (w - n + 1)) as f64
}

/// Mean SSIM over bands (11×11 Gaussian window, σ = 1.5). Bands whose
/// reference is all zero are skipped.
pub fn mssim_detailed(pred: &HsiCube, reference: &HsiCube, peak: Peak) -> Result<BandAverage> {
    same_dims(pred, reference)?;
    if reference.height() < SSIM_WINDOW || reference.width() < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            reference.height(),
            reference.width()
        )));
    }
    let window = gaussian_window();
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    for b in 0..reference.bands() {
        let r = reference.band(b);
        if is_all_zero(r) {
            skipped.push(b);
            continue;
        }
        sum += ssim_band(pred.band(b), r, &window, peak.of(r));
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("every reference band is all zero; SSIM is undefined"));
    }
    Ok(BandAverage {
        value: sum / used as f64,
        skipped_bands: skipped,
    })
}

pub fn mssim(pred: &HsiCube, reference: &HsiCube) -> Result<f64> {
    Ok(mssim_detailed(pred, reference, Peak::BandMax)?.value)
}

/// Mean spectral angle in degrees over pixels where both spectra have norm
/// at least 1e-12.
pub fn sam(pred: &HsiCube, reference: &HsiCube) -> Result<f64> {
    same_dims(pred, reference)?;
    if reference.bands() < 2 {
        return Err(Error::invalid("SAM needs at least two bands"));
    }
    let p = pred.unfold_spectral();
    let r = reference.unfold_spectral();
    let mut sum = 0.0;
    let mut used = 0usize;
    for (pc, rc) in p.axis_iter(Axis(1)).zip(r.axis_iter(Axis(1))) {
        let np = pc.dot(&pc).sqrt();
        let nr = rc.dot(&rc).sqrt();
        if np < 1e-12 || nr < 1e-12 {
            continue;
        }
        // 2·atan2(|u − v|, |u + v|) on unit vectors stays accurate near 0°
        let (mut diff, mut plus) = (0.0, 0.0);
        for (&a, &b) in pc.iter().zip(rc.iter()) {
            let (u, v) = (a / np, b / nr);
            diff += (u - v) * (u - v);
            plus += (u + v) * (u + v);
        }
        sum += 2.0 * diff.sqrt().atan2(plus.sqrt());
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid("every pixel has a zero spectrum; SAM is undefined"));
    }
    Ok((sum / used as f64).to_degrees())
}

/// `100/d · sqrt(mean_ℓ (RMSE_ℓ / μ_ℓ)²)`.
pub fn ergas(pred: &HsiCube, reference: &HsiCube, ratio: f64) -> Result<f64> {
    same_dims(pred, reference)?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("ERGAS ratio must be positive, got {ratio}")));
    }
    let mut acc = 0.0;
    for b in 0..reference.bands() {
        let r = reference.band(b);
        let n = r.len() as f64;
        let mean = r.sum() / n;
        if mean == 0.0 {
            return Err(Error::invalid(format!("reference band {b} has zero mean")));
        }
        let mse = pred.band(b).iter().zip(r.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 / ratio * (acc / reference.bands() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mpsnr: f64,
    pub mssim: f64,
    pub sam: f64,
    pub ergas: f64,
    pub ratio_used: f64,
    /// Reference bands left out of MPSNR/MSSIM because they are all zero.
    pub skipped_bands: Vec<usize>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "mpsnr,mssim,sam_deg,ergas,ratio";

    pub fn csv_line(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{}",
            self.mpsnr, self.mssim, self.sam, self.ergas, self.ratio_used
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MPSNR {:.4} dB  MSSIM {:.5}  SAM {:.4} deg  ERGAS {:.4} (d = {})",
            self.mpsnr, self.mssim, self.sam, self.ergas, self.ratio_used
        )
    }
}

pub fn evaluate(pred: &HsiCube, reference: &HsiCube, ratio: f64, peak: Peak) -> Result<MetricsReport> {
    let psnr = mpsnr_detailed(pred, reference, peak)?;
    let ssim = mssim_detailed(pred, reference, peak)?;
    Ok(MetricsReport {
        mpsnr: psnr.value,
        mssim: ssim.value,
        sam: sam(pred, reference)?,
        ergas: ergas(pred, reference, ratio)?,
        ratio_used: ratio,
        skipped_bands: psnr.skipped_bands,
    })
}

/// Catmull-Rom kernel (`a = −0.5`).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Four `(index, weight)` taps per output sample for resampling an axis of
/// length `n` to `m`, using the pixel-center mapping
/// `x = (i + 0.5)·n/m − 0.5` and edge replication.
pub fn resample_taps(n: usize, m: usize) -> Vec<[(usize, f64); 4]> {
    (0..m)
        .map(|i| {
            if n == 1 {
                return [(0, 1.0), (0, 0.0), (0, 0.0), (0, 0.0)];
            }
            let x = (i as f64 + 0.5) * n as f64 / m as f64 - 0.5;
            let base = x.floor();
            let frac = x - base;
            let mut taps = [(0usize, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let offset = k as f64 - 1.0;
                let idx = (base + offset).clamp(0.0, (n - 1) as f64) as usize;
                *tap = (idx, cubic_kernel(offset - frac));
            }
            taps
        })
        .collect()
}

fn resample_axis(data: &Array3<f64>, axis: usize, m: usize) -> Array3<f64> {
    let n = data.len_of(Axis(axis));
    let taps = resample_taps(n, m);
    let mut shape = [data.dim().0, data.dim().1, data.dim().2];
    shape[axis] = m;
    let mut out = Array3::zeros(shape);
    for (i, t) in taps.iter().enumerate() {
        // anchored at tap 1 so constant runs come out exact
        let anchor = data.index_axis(Axis(axis), t[1].0);
        let mut dst = out.index_axis_mut(Axis(axis), i);
        dst.assign(&anchor);
        for &(idx, w) in t {
            if w != 0.0 && idx != t[1].0 {
                let src = data.index_axis(Axis(axis), idx);
                ndarray::Zip::from(&mut dst)
                    .and(&src)
                    .and(&anchor)
                    .for_each(|d, &x, &a| *d += w * (x - a));
            }
        }
    }
    out
}

/// Separable Catmull-Rom resampling along width, then height, then bands.
pub fn bicubic_resample(cube: &HsiCube, target: (usize, usize, usize)) -> Result<HsiCube> {
    let (h, w, l) = target;
    if h == 0 || w == 0 || l == 0 {
        return Err(Error::invalid(format!("target dims must be at least 1, got {target:?}")));
    }
    // storage is (bands, height, width)
    let data = cube.view().to_owned();
    let data = if w == cube.width() { data } else { resample_axis(&data, 2, w) };
    let data = if h == cube.height() { data } else { resample_axis(&data, 1, h) };
    let data = if l == cube.bands() { data } else { resample_axis(&data, 0, l) };
    HsiCube::from_array(data)
}
