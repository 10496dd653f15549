//! Data-fidelity and total-variation terms of the fusion objective, with
//! their gradients chained back into both networks.
//!
//! The objective is
//!
//! ```text
//! ‖X − Ê Â B S‖²_F  +  λ ‖Y − H Ê Â‖²_F  +  η Σ_k TV(â_k)
//! ```
//!
//! Terms are named after the observation they compare against:
//! `hsi_obs` uses the LR-HSI `X`, `msi_obs` uses the HR-MSI `Y`. The
//! blur/decimation `BS` is applied to the `K` rows of `Â` rather than to the
//! `L` bands of the product, which is the same linear map.

use ndarray::{Array2, ArrayView2, Axis};

use super::{assemble, FusionModel, Observations};
use crate::degrade::Degradation;
use crate::error::{Error, Result};
use crate::siren::Gradients;

/// Weights of the regularized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// `λ`, on the HR-MSI term.
    pub lambda: f64,
    /// `η`, on the TV term.
    pub eta: f64,
}

/// The unweighted terms and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub hsi_obs: f64,
    pub msi_obs: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossTerms {
    fn new(hsi_obs: f64, msi_obs: f64, tv: f64, weights: LossWeights) -> Self {
        Self {
            hsi_obs,
            msi_obs,
            tv,
            total: hsi_obs + weights.lambda * msi_obs + weights.eta * tv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub spatial: Gradients,
    pub spectral: Gradients,
}

fn check_shapes(model: &FusionModel, obs: &Observations, degradation: &Degradation) -> Result<()> {
    obs.check(degradation)?;
    if model.train_dims() != obs.latent_dims() {
        return Err(Error::invalid(format!(
            "model was built for {:?} but observations imply {:?}",
            model.train_dims(),
            obs.latent_dims()
        )));
    }
    Ok(())
}

/// `BS` applied to each row of `a` (`K × H·W`), giving `K × h·w`.
fn spatial_degrade_rows(a: ArrayView2<'_, f64>, h: usize, w: usize, degradation: &Degradation) -> Result<Array2<f64>> {
    let (lh, lw) = degradation.down.output_dims(h, w)?;
    let mut out = Array2::zeros((a.nrows(), lh * lw));
    for (k, row) in a.axis_iter(Axis(0)).enumerate() {
        let plane = row.to_shape((h, w)).map_err(|e| Error::invalid(e.to_string()))?;
        let low = degradation.spatial_plane(plane.view())?;
        out.row_mut(k).assign(&low.to_shape(lh * lw).map_err(|e| Error::invalid(e.to_string()))?);
    }
    Ok(out)
}

/// `(BS)ᵀ` applied to each row of `g` (`K × h·w`), giving `K × H·W`.
fn spatial_degrade_rows_adjoint(g: ArrayView2<'_, f64>, h: usize, w: usize, degradation: &Degradation) -> Result<Array2<f64>> {
    let (lh, lw) = degradation.down.output_dims(h, w)?;
    let mut out = Array2::zeros((g.nrows(), h * w));
    for (k, row) in g.axis_iter(Axis(0)).enumerate() {
        let plane = row.to_shape((lh, lw)).map_err(|e| Error::invalid(e.to_string()))?;
        let up = degradation.spatial_plane_adjoint(plane.view(), h, w)?;
        out.row_mut(k).assign(&up.to_shape(h * w).map_err(|e| Error::invalid(e.to_string()))?);
    }
    Ok(out)
}

/// Returns `(‖X − ÊÂBS‖², ‖Y − HÊÂ‖²)` for the model on its training grid.
pub fn loss_data(model: &FusionModel, obs: &Observations, degradation: &Degradation) -> Result<(f64, f64)> {
    check_shapes(model, obs, degradation)?;
    let (h, w, _) = model.train_dims();
    let factors = assemble(model, &model.train_grid())?;
    let p = spatial_degrade_rows(factors.spatial.view(), h, w, degradation)?;
    let r1 = factors.spectral.dot(&p) - obs.lr_hsi.unfold_spectral();
    let q = degradation.srf.weights().dot(&factors.spectral);
    let r2 = q.dot(&factors.spatial) - obs.hr_msi.unfold_spectral();
    Ok((sum_sq(&r1), sum_sq(&r2)))
}

fn sum_sq(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Anisotropic total variation of each row of `a` viewed as an `H × W`
/// plane: `Σ |a(i+1,j) − a(i,j)| + |a(i,j+1) − a(i,j)|`, boundary
/// differences omitted.
pub fn loss_tv(a: ArrayView2<'_, f64>, dims: (usize, usize)) -> Result<f64> {
    Ok(tv_impl(a, dims, false)?.0)
}

/// TV together with a subgradient (`sign(0) = 0`).
pub fn loss_tv_with_subgradient(a: ArrayView2<'_, f64>, dims: (usize, usize)) -> Result<(f64, Array2<f64>)> {
    let (tv, g) = tv_impl(a, dims, true)?;
    Ok((tv, g.expect("subgradient requested")))
}

fn tv_impl(a: ArrayView2<'_, f64>, dims: (usize, usize), want_grad: bool) -> Result<(f64, Option<Array2<f64>>)> {
    let (h, w) = dims;
    if a.ncols() != h * w {
        return Err(Error::invalid(format!(
            "TV input has {} columns, expected H*W = {}",
            a.ncols(),
            h * w
        )));
    }
    let mut grad = want_grad.then(|| Array2::zeros(a.raw_dim()));
    let mut total = 0.0;
    for (k, row) in a.axis_iter(Axis(0)).enumerate() {
        for i in 0..h {
            for j in 0..w {
                let here = i * w + j;
                let v = row[here];
                if i + 1 < h {
                    let d = row[here + w] - v;
                    total += d.abs();
                    if let Some(g) = grad.as_mut() {
                        let s = sign(d);
                        g[[k, here + w]] += s;
                        g[[k, here]] -= s;
                    }
                }
                if j + 1 < w {
                    let d = row[here + 1] - v;
                    total += d.abs();
                    if let Some(g) = grad.as_mut() {
                        let s = sign(d);
                        g[[k, here + 1]] += s;
                        g[[k, here]] -= s;
                    }
                }
            }
        }
    }
    Ok((total, grad))
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Total objective and the gradient of every network parameter.
pub fn loss_total_and_grad(
    model: &FusionModel,
    obs: &Observations,
    degradation: &Degradation,
    weights: LossWeights,
) -> Result<(LossTerms, ModelGradients)> {
    check_shapes(model, obs, degradation)?;
    let (h, w, _) = model.train_dims();
    let grid = model.train_grid();
    let (e, spectral_tape) = model.spectral_net().forward_with_tape(grid.spectral.view())?;
    let (a_t, spatial_tape) = model.spatial_net().forward_with_tape(grid.spatial.view())?;
    let a = a_t.t();

    // LR-HSI term: R1 = Ê P − X with P = Â B S
    let p = spatial_degrade_rows(a, h, w, degradation)?;
    let r1 = e.dot(&p) - obs.lr_hsi.unfold_spectral();
    let hsi_obs = sum_sq(&r1);

    // HR-MSI term: R2 = Q Â − Y with Q = H Ê
    let srf = degradation.srf.weights();
    let q = srf.dot(&e);
    let r2 = q.dot(&a) - obs.hr_msi.unfold_spectral();
    let msi_obs = sum_sq(&r2);

    let (tv, tv_grad) = if weights.eta != 0.0 {
        let (tv, g) = loss_tv_with_subgradient(a, (h, w))?;
        (tv, Some(g))
    } else {
        (loss_tv(a, (h, w))?, None)
    };

    let terms = LossTerms::new(hsi_obs, msi_obs, tv, weights);
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            tensor: 0,
            layer: 0,
            index: 0,
            detail: format!(
                "objective is {} (hsi_obs {}, msi_obs {}, tv {})",
                terms.total, hsi_obs, msi_obs, tv
            ),
        });
    }

    let two_r1 = r1 * 2.0;
    let two_r2 = r2 * 2.0;
    // ∂/∂Ê
    let mut d_e = two_r1.dot(&p.t());
    d_e.scaled_add(weights.lambda, &srf.t().dot(&two_r2.dot(&a.t())));
    // ∂/∂Â
    let d_p = e.t().dot(&two_r1);
    let mut d_a = spatial_degrade_rows_adjoint(d_p.view(), h, w, degradation)?;
    d_a.scaled_add(weights.lambda, &q.t().dot(&two_r2));
    if let Some(g) = tv_grad {
        d_a.scaled_add(weights.eta, &g);
    }

    let spectral = model.spectral_net().backward_with_tape(&spectral_tape, d_e.view())?;
    let spatial = model.spatial_net().backward_with_tape(&spatial_tape, d_a.t())?;
    Ok((terms, ModelGradients { spatial, spectral }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::HsiCube;
    use crate::degrade::{add_noise, apply_srf, blur, downsample, gaussian_psf, gaussian_srf, DownsampleSpec, NoiseSpec};
    use crate::fuse::{reconstruct, FusionModel, NetConfigs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn degradation(bands: usize, msi_bands: usize, ratio: usize, psf: usize) -> Degradation {
        Degradation {
            psf: gaussian_psf(psf, 1.0).unwrap(),
            down: DownsampleSpec::centered(ratio).unwrap(),
            srf: gaussian_srf(msi_bands, bands).unwrap(),
        }
    }

    fn random_model(rank: usize, dims: (usize, usize, usize), seed: u64) -> FusionModel {
        let cfg = NetConfigs::new(rank, vec![10, 10], vec![8]).with_seed(seed);
        let mut model = FusionModel::init(&cfg, dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let (s, e) = model.nets_mut();
        for net in [s, e] {
            for t in net.params_mut() {
                for v in t.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
        }
        model
    }

    fn random_obs(dims: (usize, usize, usize), degr: &Degradation, seed: u64) -> Observations {
        let (h, w, l) = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = HsiCube::from_fn(h, w, l, |_, _, _| rng.random::<f64>()).unwrap();
        let lr = downsample(&blur(&gt, &degr.psf).unwrap(), degr.down).unwrap();
        let msi = apply_srf(&gt, &degr.srf).unwrap();
        Observations::new(lr, msi)
    }

    #[test]
    fn exact_model_has_zero_data_loss() {
        let dims = (8, 8, 5);
        let degr = degradation(5, 2, 2, 3);
        let model = random_model(3, dims, 1);
        let z = reconstruct(&model, &model.train_grid()).unwrap();
        let lr = add_noise(&downsample(&blur(&z, &degr.psf).unwrap(), degr.down).unwrap(), NoiseSpec::disabled()).unwrap();
        let msi = apply_srf(&z, &degr.srf).unwrap();
        let (a, b) = loss_data(&model, &Observations::new(lr, msi), &degr).unwrap();
        assert!(a < 1e-24 && b < 1e-24, "{a} {b}");
    }

    #[test]
    fn zero_model_loss_is_observation_energy() {
        let dims = (6, 6, 3);
        let degr = degradation(3, 2, 2, 3);
        let obs = random_obs(dims, &degr, 4);
        let mut model = random_model(2, dims, 2);
        let (s, e) = model.nets_mut();
        for net in [s, e] {
            for t in net.params_mut() {
                t.fill(0.0);
            }
        }
        let (a, b) = loss_data(&model, &obs, &degr).unwrap();
        let ex: f64 = obs.lr_hsi.as_slice().iter().map(|v| v * v).sum();
        let ey: f64 = obs.hr_msi.as_slice().iter().map(|v| v * v).sum();
        assert_eq!(a, ex);
        assert_eq!(b, ey);
    }

    #[test]
    fn data_loss_matches_brute_force_pipeline() {
        let dims = (6, 6, 3);
        let degr = degradation(3, 2, 2, 3);
        let obs = random_obs(dims, &degr, 9);
        let model = random_model(2, dims, 3);
        let (a, b) = loss_data(&model, &obs, &degr).unwrap();
        // materialize, degrade with the cube-level operators, sum squares
        let z = reconstruct(&model, &model.train_grid()).unwrap();
        let lr_hat = downsample(&blur(&z, &degr.psf).unwrap(), degr.down).unwrap();
        let msi_hat = apply_srf(&z, &degr.srf).unwrap();
        let ra: f64 = lr_hat.as_slice().iter().zip(obs.lr_hsi.as_slice()).map(|(p, q)| (p - q).powi(2)).sum();
        let rb: f64 = msi_hat.as_slice().iter().zip(obs.hr_msi.as_slice()).map(|(p, q)| (p - q).powi(2)).sum();
        assert!((a - ra).abs() <= 1e-10 * ra);
        assert!((b - rb).abs() <= 1e-10 * rb);
    }

    #[test]
    fn data_loss_rejects_mismatched_model() {
        let degr = degradation(3, 2, 2, 3);
        let obs = random_obs((6, 6, 3), &degr, 9);
        let model = random_model(2, (8, 8, 3), 3);
        assert!(matches!(loss_data(&model, &obs, &degr), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn tv_constant_and_worked_example() {
        let constant = Array2::from_elem((2, 12), 0.7);
        assert_eq!(loss_tv(constant.view(), (3, 4)).unwrap(), 0.0);
        let a = ndarray::array![[0.0, 1.0, 2.0, 3.0]];
        assert_eq!(loss_tv(a.view(), (2, 2)).unwrap(), 6.0);
        assert!(loss_tv(a.view(), (3, 2)).is_err());
    }

    #[test]
    fn tv_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((3, 20), |_| rng.random_range(-1.0..1.0));
        let mut expect = 0.0_f64;
        for k in 0..3 {
            let plane = |i: usize, j: usize| -> f64 { a[[k, i * 5 + j]] };
            for i in 0..4 {
                for j in 0..5 {
                    if i + 1 < 4 {
                        expect += (plane(i + 1, j) - plane(i, j)).abs();
                    }
                    if j + 1 < 5 {
                        expect += (plane(i, j + 1) - plane(i, j)).abs();
                    }
                }
            }
        }
        assert_eq!(loss_tv(a.view(), (4, 5)).unwrap(), expect);
    }

    #[test]
    fn zero_everything_gives_zero_total_and_gradient() {
        let dims = (4, 4, 3);
        let degr = degradation(3, 2, 2, 3);
        let mut model = random_model(2, dims, 7);
        let (s, e) = model.nets_mut();
        for net in [s, e] {
            for t in net.params_mut() {
                t.fill(0.0);
            }
        }
        let obs = Observations::new(HsiCube::zeros(2, 2, 3).unwrap(), HsiCube::zeros(4, 4, 2).unwrap());
        let (terms, grads) =
            loss_total_and_grad(&model, &obs, &degr, LossWeights { lambda: 0.0, eta: 0.0 }).unwrap();
        assert_eq!(terms.total, 0.0);
        for g in [&grads.spatial, &grads.spectral] {
            assert!(g.as_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn lambda_is_linear_in_total() {
        let dims = (6, 6, 3);
        let degr = degradation(3, 2, 2, 3);
        let obs = random_obs(dims, &degr, 1);
        let model = random_model(2, dims, 5);
        let w = LossWeights { lambda: 1.0, eta: 0.01 };
        let (t1, _) = loss_total_and_grad(&model, &obs, &degr, w).unwrap();
        let (t2, _) = loss_total_and_grad(&model, &obs, &degr, LossWeights { lambda: 2.0, ..w }).unwrap();
        assert!((t2.total - t1.total - t1.msi_obs).abs() <= 1e-12 * t2.total);
        assert!((t1.total - (t1.hsi_obs + t1.msi_obs + 0.01 * t1.tv)).abs() <= 1e-12 * t1.total);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dims = (4, 4, 3);
        let degr = degradation(3, 2, 2, 3);
        let obs = random_obs(dims, &degr, 11);
        let model = random_model(2, dims, 13);
        let w = LossWeights { lambda: 1.25, eta: 0.05 };
        let (_, grads) = loss_total_and_grad(&model, &obs, &degr, w).unwrap();
        let total = |m: &FusionModel| loss_total_and_grad(m, &obs, &degr, w).unwrap().0.total;
        let h = 1e-6;
        for which in 0..2 {
            let g = if which == 0 { &grads.spatial } else { &grads.spectral };
            let slices: Vec<Vec<f64>> = g.as_slices().iter().map(|s| s.to_vec()).collect();
            for (t, tensor) in slices.iter().enumerate() {
                for (j, &an) in tensor.iter().enumerate().step_by(3) {
                    let perturb = |delta: f64| {
                        let mut m = model.clone();
                        let (s, e) = m.nets_mut();
                        let net = if which == 0 { s } else { e };
                        net.params_mut()[t][j] += delta;
                        total(&m)
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
                    assert!(err < 1e-5, "net {which} tensor {t} idx {j}: fd {fd} an {an}");
                }
            }
        }
    }
}
