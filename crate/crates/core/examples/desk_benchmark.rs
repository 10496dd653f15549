//! Synthetic 48×48×31 fusion problem, trained at desk scale and compared
//! against bicubic upsampling of the LR-HSI.
//!
//! cargo run --release --example desk_benchmark -- [iters] [msi_bands] [snr_db] [eta]

use std::time::Instant;

use lowrank_fusion::degrade::{gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec};
use lowrank_fusion::fuse::{infer, train_with_callback, NetConfigs, Observations, Preset, TrainConfig};
use lowrank_fusion::metrics::{bicubic_resample, evaluate, Peak};
use lowrank_fusion::synth::{make_gt, GtSpec};

fn main() -> lowrank_fusion::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default);
    let iters = arg(0, Preset::Desk.max_iters() as f64) as u64;
    let msi_bands = arg(1, 4.0) as usize;
    let snr = arg(2, 30.0);
    let eta = arg(3, 0.0025);

    let gt = make_gt(&GtSpec::new(48, 48, 31, 6, 7))?;
    let degr = Degradation {
        psf: gaussian_psf(5, 1.0)?,
        down: DownsampleSpec::centered(4)?,
        srf: gaussian_srf(msi_bands, 31)?,
    };
    let (lr, msi) = simulate(&gt, &degr, NoiseSpec::new(snr, 1)?, NoiseSpec::new(snr, 2)?)?;
    let obs = Observations::new(lr.clone(), msi);

    let config = TrainConfig {
        lambda: 1.0,
        eta,
        max_iters: iters,
        ..TrainConfig::from_preset(Preset::Desk)
    };
    let nets = NetConfigs::from_preset(8, Preset::Desk, config.seed);
    let start = Instant::now();
    let (model, report) = train_with_callback(&obs, &degr, &nets, &config, |r| {
        println!(
            "iter {:>5}  total {:.6e}  hsi {:.4e}  msi {:.4e}  tv {:.3}  ({:.1}s)",
            r.iter,
            r.terms.total,
            r.terms.hsi_obs,
            r.terms.msi_obs,
            r.terms.tv,
            start.elapsed().as_secs_f64()
        );
        true
    })?;
    println!(
        "stopped: {} after {} iterations, best total {:.6e} at {:?}",
        report.stop_reason.as_str(),
        report.iterations,
        report.best_total,
        report.best_iter
    );

    let fused = infer(&model, gt.dims())?;
    let baseline = bicubic_resample(&lr, gt.dims())?;
    println!("fused    {}", evaluate(&fused, &gt, 4.0, Peak::BandMax)?);
    println!("bicubic  {}", evaluate(&baseline, &gt, 4.0, Peak::BandMax)?);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
