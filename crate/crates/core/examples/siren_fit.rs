//! Fits a 1-D signal with a small sine-activated network and Adam, using the
//! hand-written backward pass.
//!
//! cargo run --release --example siren_fit

use lowrank_fusion::siren::{AdamState, SirenConfig, SirenNet};
use ndarray::Array2;

fn main() -> lowrank_fusion::Result<()> {
    let n = 200;
    let x = Array2::from_shape_fn((n, 1), |(i, _)| -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    let target = x.mapv(|t| (5.0 * t).sin() * (-t * t).exp() + 0.3 * (17.0 * t).cos());

    let mut net = SirenNet::init(SirenConfig::new(1, 1, vec![64, 64]).with_seed(3))?;
    let lens: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(1e-4, &lens);

    for step in 0..=1500 {
        let y = net.forward(x.view())?;
        let residual = &y - &target;
        let mse = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
        if step % 250 == 0 {
            println!("step {step:>4}  mse {mse:.3e}");
        }
        let upstream = residual * (2.0 / n as f64);
        let grads = net.backward(x.view(), upstream.view())?;
        adam.step(&mut net.params_mut(), &grads.as_slices())?;
    }
    println!("{} parameters, {} Adam steps", net.parameter_count(), adam.step_count());
    Ok(())
}
