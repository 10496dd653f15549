//! Scores a bicubic upsampling of a simulated LR-HSI, and a few controlled
//! distortions of the ground truth, with MPSNR, MSSIM, SAM and ERGAS.
//!
//! cargo run --release --example quality_metrics

use lowrank_fusion::degrade::{add_noise, gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec};
use lowrank_fusion::metrics::{bicubic_resample, evaluate, MetricsReport, Peak};
use lowrank_fusion::synth::{make_gt, GtSpec};

fn main() -> lowrank_fusion::Result<()> {
    let gt = make_gt(&GtSpec::new(48, 48, 31, 6, 7))?;
    let degr = Degradation {
        psf: gaussian_psf(5, 1.0)?,
        down: DownsampleSpec::centered(4)?,
        srf: gaussian_srf(4, 31)?,
    };
    let (lr, _) = simulate(&gt, &degr, NoiseSpec::new(30.0, 1)?, NoiseSpec::disabled())?;

    let candidates = [
        ("identity", gt.clone()),
        ("bicubic x4", bicubic_resample(&lr, gt.dims())?),
        ("noise 30 dB", add_noise(&gt, NoiseSpec::new(30.0, 9)?)?),
        ("noise 20 dB", add_noise(&gt, NoiseSpec::new(20.0, 9)?)?),
        ("gain 1.1", gt.map(|v| 1.1 * v)?),
    ];
    println!("{:<12} {}", "candidate", MetricsReport::CSV_HEADER);
    for (name, cube) in &candidates {
        println!("{name:<12} {}", evaluate(cube, &gt, 4.0, Peak::BandMax)?.csv_line());
    }
    Ok(())
}
