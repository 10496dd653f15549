//! Builds a synthetic ground truth and degrades it into an LR-HSI (blur,
//! decimation, noise) and an HR-MSI (spectral response, noise), then reports
//! the realized noise levels.
//!
//! cargo run --release --example simulate_observations -- [out_dir]

use std::path::PathBuf;

use lowrank_fusion::cube::{write_cube, HsiCube};
use lowrank_fusion::degrade::{gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec};
use lowrank_fusion::synth::{make_gt, GtSpec};

fn snr_db(clean: &HsiCube, noisy: &HsiCube) -> f64 {
    let signal: f64 = clean.as_slice().iter().map(|v| v * v).sum();
    let noise: f64 = clean.as_slice().iter().zip(noisy.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (signal / noise).log10()
}

fn main() -> lowrank_fusion::Result<()> {
    let out: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(std::env::temp_dir);
    let gt = make_gt(&GtSpec::new(48, 48, 31, 6, 7))?;
    let degr = Degradation {
        psf: gaussian_psf(5, 1.0)?,
        down: DownsampleSpec::centered(4)?,
        srf: gaussian_srf(4, 31)?,
    };
    let (lr, msi) = simulate(&gt, &degr, NoiseSpec::new(30.0, 1)?, NoiseSpec::new(30.0, 2)?)?;
    let (lr_clean, msi_clean) = simulate(&gt, &degr, NoiseSpec::disabled(), NoiseSpec::disabled())?;

    println!("ground truth {:?}", gt.dims());
    println!("LR-HSI {:?}, realized SNR {:.2} dB", lr.dims(), snr_db(&lr_clean, &lr));
    println!("HR-MSI {:?}, realized SNR {:.2} dB", msi.dims(), snr_db(&msi_clean, &msi));
    println!("SRF row sums: {:?}", degr.srf.weights().sum_axis(ndarray::Axis(1)).to_vec());

    for (name, cube) in [("gt", &gt), ("lr_hsi", &lr), ("hr_msi", &msi)] {
        let path = out.join(format!("{name}.f32c"));
        write_cube(cube, &path)?;
        println!("wrote {}", path.display());
    }
    degr.srf.write_csv(out.join("hr_msi.srf.csv"))?;
    Ok(())
}
