//! Trains briefly on a small problem, round-trips the model through a
//! checkpoint and evaluates it on grids finer and coarser than the one it
//! was trained on.
//!
//! cargo run --release --example arbitrary_resolution -- [iters]

use lowrank_fusion::analysis::numerical_rank;
use lowrank_fusion::degrade::{gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec};
use lowrank_fusion::fuse::{infer, load_model, save_model, train, NetConfigs, Observations, Preset, TrainConfig};
use lowrank_fusion::synth::{make_gt, GtSpec};

fn main() -> lowrank_fusion::Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let gt = make_gt(&GtSpec::new(24, 24, 16, 4, 1))?;
    let degr = Degradation {
        psf: gaussian_psf(5, 1.0)?,
        down: DownsampleSpec::centered(4)?,
        srf: gaussian_srf(3, 16)?,
    };
    let (lr, msi) = simulate(&gt, &degr, NoiseSpec::new(35.0, 1)?, NoiseSpec::new(35.0, 2)?)?;
    let config = TrainConfig {
        max_iters: iters,
        log_every: 100,
        ..TrainConfig::default()
    };
    let (model, report) = train(&Observations::new(lr, msi), &degr, &NetConfigs::from_preset(5, Preset::Desk, 0), &config)?;
    println!("trained {} iterations, best total {:.4e}", report.iterations, report.best_total);

    let path = std::env::temp_dir().join("arbitrary_resolution.clrf");
    save_model(&model, &path)?;
    let model = load_model(&path)?;
    for dims in [(24, 24, 16), (72, 72, 46), (8, 8, 5), (30, 17, 100)] {
        let cube = infer(&model, dims)?;
        let (lo, hi) = cube
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let shape = format!("{}x{}x{}", dims.0, dims.1, dims.2);
        println!(
            "{shape:<10} range [{lo:.3}, {hi:.3}]  numerical rank {}",
            numerical_rank(&cube.unfold_spectral())?
        );
    }
    Ok(())
}
