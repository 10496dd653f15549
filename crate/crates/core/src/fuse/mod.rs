//! Continuous low-rank fusion model.
//!
//! The latent cube is represented as `Ê·Â` where row `i` of `Ê` (`L × K`) is
//! the spectral network evaluated at band coordinate `b_i` and column `j` of
//! `Â` (`K × N`) is the spatial network evaluated at pixel coordinate `o_j`.
//! Because both factors are functions of continuous coordinates, the same
//! trained pair can be evaluated on any grid.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{load_model, read_model_from, save_model, write_model_to, MODEL_MAGIC, MODEL_VERSION};
pub use loss::{loss_data, loss_total_and_grad, loss_tv, loss_tv_with_subgradient, LossTerms, LossWeights, ModelGradients};
pub use train::{train, train_with_callback, Preset, StopReason, TrainConfig, TrainRecord, TrainReport};

use ndarray::{Array2, ArrayView1};

use crate::cube::{make_grid, CoordinateGrid, HsiCube};
use crate::degrade::Degradation;
use crate::error::{Error, Result};
use crate::siren::{Activation, SirenConfig, SirenNet};

/// Observed inputs to the fusion problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    /// Low-spatial-resolution hyperspectral image `X`.
    pub lr_hsi: HsiCube,
    /// High-spatial-resolution multispectral image `Y`.
    pub hr_msi: HsiCube,
}

impl Observations {
    pub fn new(lr_hsi: HsiCube, hr_msi: HsiCube) -> Self {
        Self { lr_hsi, hr_msi }
    }

    /// `(H, W, L)` of the latent high-resolution cube.
    pub fn latent_dims(&self) -> (usize, usize, usize) {
        (self.hr_msi.height(), self.hr_msi.width(), self.lr_hsi.bands())
    }

    pub fn check(&self, degradation: &Degradation) -> Result<()> {
        degradation.check_observations(&self.lr_hsi, &self.hr_msi)
    }
}

/// Network shapes for the spatial (`2 → K`) and spectral (`1 → K`) nets.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfigs {
    pub spatial: SirenConfig,
    pub spectral: SirenConfig,
}

impl NetConfigs {
    pub fn new(rank: usize, spatial_hidden: Vec<usize>, spectral_hidden: Vec<usize>) -> Self {
        Self {
            spatial: SirenConfig::new(2, rank, spatial_hidden),
            spectral: SirenConfig::new(1, rank, spectral_hidden),
        }
    }

    /// Layer widths from a preset; the two nets get distinct seeds derived
    /// from `seed`.
    pub fn from_preset(rank: usize, preset: Preset, seed: u64) -> Self {
        let (spatial, spectral) = preset.hidden_sizes();
        Self::new(rank, spatial, spectral).with_seed(seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.spatial.seed = seed.wrapping_mul(2).wrapping_add(1);
        self.spectral.seed = seed.wrapping_mul(2).wrapping_add(2);
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.spatial.activation = activation;
        self.spectral.activation = activation;
        self
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.spatial.omega0 = omega0;
        self.spectral.omega0 = omega0;
        self
    }
}

/// Evaluated factors on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    /// `L × K` spectral basis `Ê`.
    pub spectral: Array2<f64>,
    /// `K × N` spatial coefficients `Â`.
    pub spatial: Array2<f64>,
}

impl Factors {
    /// `Ê·Â`, the `L × N` reconstruction.
    pub fn product(&self) -> Array2<f64> {
        self.spectral.dot(&self.spatial)
    }
}

/// A trained (or initialized) pair of coordinate networks.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    spatial_net: SirenNet,
    spectral_net: SirenNet,
    train_dims: (usize, usize, usize),
}

impl FusionModel {
    pub fn new(spatial_net: SirenNet, spectral_net: SirenNet, train_dims: (usize, usize, usize)) -> Result<Self> {
        if spatial_net.in_dim() != 2 || spectral_net.in_dim() != 1 {
            return Err(Error::invalid(format!(
                "spatial net must take 2 inputs and spectral net 1, got {} and {}",
                spatial_net.in_dim(),
                spectral_net.in_dim()
            )));
        }
        let rank = spatial_net.out_dim();
        if spectral_net.out_dim() != rank {
            return Err(Error::invalid(format!(
                "spatial net has rank {rank} but spectral net has {}",
                spectral_net.out_dim()
            )));
        }
        let (h, w, l) = train_dims;
        if h == 0 || w == 0 || l == 0 {
            return Err(Error::invalid("training dimensions must be at least 1"));
        }
        if rank > l.min(h * w) {
            return Err(Error::invalid(format!(
                "rank {rank} exceeds min(L, N) = {} for a {h}x{w}x{l} problem",
                l.min(h * w)
            )));
        }
        Ok(Self {
            spatial_net,
            spectral_net,
            train_dims,
        })
    }

    pub fn init(configs: &NetConfigs, train_dims: (usize, usize, usize)) -> Result<Self> {
        Self::new(
            SirenNet::init(configs.spatial.clone())?,
            SirenNet::init(configs.spectral.clone())?,
            train_dims,
        )
    }

    pub fn rank(&self) -> usize {
        self.spatial_net.out_dim()
    }

    pub fn train_dims(&self) -> (usize, usize, usize) {
        self.train_dims
    }

    pub fn train_grid(&self) -> CoordinateGrid {
        let (h, w, l) = self.train_dims;
        make_grid(h, w, l).expect("training dimensions are validated on construction")
    }

    pub fn spatial_net(&self) -> &SirenNet {
        &self.spatial_net
    }

    pub fn spectral_net(&self) -> &SirenNet {
        &self.spectral_net
    }

    pub(crate) fn nets_mut(&mut self) -> (&mut SirenNet, &mut SirenNet) {
        (&mut self.spatial_net, &mut self.spectral_net)
    }

    /// Value of the continuous function `f(s, b) = Φ(s)·Ψ(b)ᵀ`.
    pub fn entry(&self, spatial: [f64; 2], band: f64) -> Result<f64> {
        let s = Array2::from_shape_vec((1, 2), spatial.to_vec()).expect("1x2");
        let b = Array2::from_elem((1, 1), band);
        let phi = self.spatial_net.forward(s.view())?;
        let psi = self.spectral_net.forward(b.view())?;
        Ok(dot(phi.row(0), psi.row(0)))
    }
}

fn dot(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Evaluates `Ê` on the grid's band coordinates and `Â` on its pixel
/// coordinates.
pub fn assemble(model: &FusionModel, grid: &CoordinateGrid) -> Result<Factors> {
    let spectral = model.spectral_net.forward(grid.spectral.view())?;
    let spatial = model.spatial_net.forward(grid.spatial.view())?;
    Ok(Factors {
        spectral,
        spatial: spatial.reversed_axes().as_standard_layout().into_owned(),
    })
}

/// `Ê·Â` on `grid`, folded into a cube.
pub fn reconstruct(model: &FusionModel, grid: &CoordinateGrid) -> Result<HsiCube> {
    let z = assemble(model, grid)?.product();
    HsiCube::fold_spectral(z, grid.height(), grid.width())
}

/// Evaluates the model on a freshly spanned `H' × W' × L'` grid.
///
/// At the training dimensions this is the same computation as the training
/// reconstruction and reproduces it bit for bit.
pub fn infer(model: &FusionModel, target: (usize, usize, usize)) -> Result<HsiCube> {
    let (h, w, l) = target;
    reconstruct(model, &make_grid(h, w, l)?)
}
