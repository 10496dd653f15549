//! Rank and Lipschitz oracles for the factorized representation.

use std::fmt;

use faer::Mat;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::siren::{Activation, SirenNet};

/// Relative singular-value threshold used for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

fn to_faer(m: &Array2<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn svd_failed() -> Error {
    Error::invalid("singular value decomposition did not converge")
}

/// Singular values in descending order.
pub fn singular_values(m: &Array2<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut s = to_faer(m).singular_values().map_err(|_| svd_failed())?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Number of singular values above `tol·σ_max`.
pub fn numerical_rank_with_tol(m: &Array2<f64>, tol: f64) -> Result<usize> {
    let s = singular_values(m)?;
    Ok(match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > tol * top).count(),
        _ => 0,
    })
}

pub fn numerical_rank(m: &Array2<f64>) -> Result<usize> {
    numerical_rank_with_tol(m, RANK_TOL)
}

/// `M ≈ U·Vᵀ` with `U = U_K Σ_K` (`n1 × K`) and `V = V_K` (`n2 × K`), `K`
/// being the numerical rank at relative tolerance `tol`.
pub fn rank_factorize(m: &Array2<f64>, tol: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let (n1, n2) = m.dim();
    if m.is_empty() {
        return Ok((Array2::zeros((n1, 0)), Array2::zeros((n2, 0))));
    }
    let svd = to_faer(m).thin_svd().map_err(|_| svd_failed())?;
    let (u, sv, v) = (svd.U(), svd.S().column_vector(), svd.V());
    // faer orders singular values non-increasingly
    let top = if sv.nrows() > 0 { sv[0] } else { 0.0 };
    let k = if top > 0.0 {
        (0..sv.nrows()).take_while(|&i| sv[i] > tol * top).count()
    } else {
        0
    };
    let uk = Array2::from_shape_fn((n1, k), |(i, c)| u[(i, c)] * sv[c]);
    let vk = Array2::from_shape_fn((n2, k), |(j, c)| v[(j, c)]);
    Ok((uk, vk))
}

/// `f(s, b) = X[s, b]` with the row index split as a 2-D spatial coordinate
/// `s = (i, j)`, `i < l1`, `j < l2`, row `i·l2 + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMatrixFunction {
    backing: Array2<f64>,
    l1: usize,
    l2: usize,
}

impl DiscreteMatrixFunction {
    pub fn new(backing: Array2<f64>, l1: usize, l2: usize) -> Result<Self> {
        if l1.checked_mul(l2) != Some(backing.nrows()) {
            return Err(Error::invalid(format!(
                "spatial shape {l1}x{l2} does not cover {} rows",
                backing.nrows()
            )));
        }
        Ok(Self { backing, l1, l2 })
    }

    pub fn backing(&self) -> &Array2<f64> {
        &self.backing
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        (self.l1, self.l2)
    }

    pub fn bands(&self) -> usize {
        self.backing.ncols()
    }

    pub fn eval(&self, s: (usize, usize), b: usize) -> Result<f64> {
        if s.0 >= self.l1 || s.1 >= self.l2 || b >= self.bands() {
            return Err(Error::invalid(format!("coordinate ({s:?}, {b}) out of range")));
        }
        Ok(self.backing[[s.0 * self.l2 + s.1, b]])
    }

    /// The matrix `M[p, q] = f(spatial[p], bands[q])`.
    pub fn sample(&self, spatial: &[(usize, usize)], bands: &[usize]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((spatial.len(), bands.len()));
        for (p, &s) in spatial.iter().enumerate() {
            for (q, &b) in bands.iter().enumerate() {
                m[[p, q]] = self.eval(s, b)?;
            }
        }
        Ok(m)
    }

    /// Every coordinate once, in storage order.
    pub fn full_sample(&self) -> Array2<f64> {
        self.backing.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankWitness {
    pub max_rank: usize,
    /// Shape of the sampled matrix attaining `max_rank`.
    pub dims: (usize, usize),
    pub trials: usize,
}

/// Largest numerical rank over `trials` random sampled matrices (random
/// sizes, coordinates drawn with repetition) and the full-sample matrix.
pub fn mf_rank_witness(f: &DiscreteMatrixFunction, trials: usize, seed: u64) -> Result<RankWitness> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    let full = f.full_sample();
    let mut best = RankWitness {
        max_rank: numerical_rank(&full)?,
        dims: full.dim(),
        trials,
    };
    let (l1, l2) = f.spatial_shape();
    let n1 = l1 * l2;
    let n2 = f.bands();
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rows = rng.random_range(1..=2 * n1);
        let cols = rng.random_range(1..=2 * n2);
        let spatial: Vec<(usize, usize)> = (0..rows)
            .map(|_| (rng.random_range(0..l1), rng.random_range(0..l2)))
            .collect();
        let bands: Vec<usize> = (0..cols).map(|_| rng.random_range(0..n2)).collect();
        let m = f.sample(&spatial, &bands)?;
        let r = numerical_rank(&m)?;
        if r > best.max_rank {
            best.max_rank = r;
            best.dims = (rows, cols);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCertificate {
    pub delta: f64,
    pub kappa: f64,
    /// Largest operator 1-norm over every weight matrix of both nets.
    pub eta: f64,
    pub zeta: f64,
    /// Weight matrices per network.
    pub depth: usize,
}

impl LipschitzCertificate {
    /// `η^(2d+1)·κ^(2d−2)·ζ`.
    pub fn from_parts(eta: f64, kappa: f64, zeta: f64, depth: usize) -> Self {
        let d = depth as i32;
        Self {
            delta: eta.powi(2 * d + 1) * kappa.powi(2 * d - 2) * zeta,
            kappa,
            eta,
            zeta,
            depth,
        }
    }

    /// The chained layer bound `η^(2d)·κ^(2d−2)·ζ`; `delta` dominates it only
    /// when `η ≥ 1`.
    pub fn chained_bound(&self) -> f64 {
        let d = self.depth as i32;
        self.eta.powi(2 * d) * self.kappa.powi(2 * d - 2) * self.zeta
    }

    pub fn covers_chained_bound(&self) -> bool {
        self.delta >= self.chained_bound()
    }

    pub const CSV_HEADER: &'static str = "delta,kappa,eta,zeta,depth";

    pub fn csv_row(&self) -> String {
        format!("{:?},{:?},{:?},{:?},{}", self.delta, self.kappa, self.eta, self.zeta, self.depth)
    }
}

impl fmt::Display for LipschitzCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Lipschitz certificate (bias-free sine networks)")?;
        writeln!(f, "  depth d (weight matrices per net): {}", self.depth)?;
        writeln!(f, "  kappa (activation constant = omega0): {}", self.kappa)?;
        writeln!(f, "  eta (max operator 1-norm): {}", self.eta)?;
        writeln!(f, "  zeta (coordinate bound): {}", self.zeta)?;
        writeln!(f, "  delta = eta^(2d+1) kappa^(2d-2) zeta = {:e}", self.delta)?;
        if !self.covers_chained_bound() {
            writeln!(
                f,
                "  note: eta < 1, so delta is below the chained bound eta^(2d) kappa^(2d-2) zeta = {:e}",
                self.chained_bound()
            )?;
        }
        write!(f, "  trained networks carry biases and are outside this certificate")
    }
}

/// Operator norm induced by the vector 1-norm: the largest column
/// absolute sum.
pub fn operator_one_norm(w: &Array2<f64>) -> f64 {
    w.columns()
        .into_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_certifiable(net: &SirenNet, name: &str) -> Result<()> {
    if net.config().activation != Activation::Sine {
        return Err(Error::invalid(format!("{name} net must use sine activations")));
    }
    if !net.has_zero_biases() {
        return Err(Error::invalid(format!(
            "{name} net has nonzero biases; the certificate only covers bias-free networks"
        )));
    }
    Ok(())
}

pub fn lipschitz_certificate(spatial: &SirenNet, spectral: &SirenNet, zeta: f64) -> Result<LipschitzCertificate> {
    check_certifiable(spatial, "spatial")?;
    check_certifiable(spectral, "spectral")?;
    if spatial.depth() != spectral.depth() {
        return Err(Error::invalid(format!(
            "networks must have equal depth, got {} and {}",
            spatial.depth(),
            spectral.depth()
        )));
    }
    if spatial.out_dim() != spectral.out_dim() {
        return Err(Error::invalid("networks must share the output rank"));
    }
    if spatial.config().omega0 != spectral.config().omega0 {
        return Err(Error::invalid("networks must share omega0"));
    }
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::invalid(format!("zeta must be positive, got {zeta}")));
    }
    let eta = spatial
        .layers()
        .iter()
        .chain(spectral.layers())
        .map(|l| operator_one_norm(&l.weight))
        .fold(0.0, f64::max);
    Ok(LipschitzCertificate::from_parts(
        eta,
        spatial.config().omega0,
        zeta,
        spatial.depth(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub samples: usize,
    /// Pairs with identical coordinates, excluded from the ratio.
    pub degenerate: usize,
    pub violations: usize,
    /// Largest `|Δf| / (δ·(‖Δs‖₁ + |Δb|))`.
    pub max_ratio: f64,
}

/// Uniform point of the 2-D `ℓ1` ball of radius `zeta`.
fn sample_l1_ball(rng: &mut ChaCha8Rng, zeta: f64) -> [f64; 2] {
    loop {
        let p = [rng.random_range(-zeta..=zeta), rng.random_range(-zeta..=zeta)];
        if p[0].abs() + p[1].abs() <= zeta {
            return p;
        }
    }
}

/// Samples coordinate pairs in the certificate's domain and counts pairs
/// whose difference exceeds the certified bound.
pub fn empirical_lipschitz_check(
    spatial: &SirenNet,
    spectral: &SirenNet,
    cert: &LipschitzCertificate,
    samples: usize,
    seed: u64,
) -> Result<LipschitzCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zeta = cert.zeta;
    let mut s_in = Array2::zeros((2 * samples, 2));
    let mut b_in = Array2::zeros((2 * samples, 1));
    for r in 0..2 * samples {
        let s = sample_l1_ball(&mut rng, zeta);
        s_in[[r, 0]] = s[0];
        s_in[[r, 1]] = s[1];
        b_in[[r, 0]] = rng.random_range(-zeta..=zeta);
    }
    // Half the pairs share a coordinate so each factor is probed alone, and
    // a few repeat both.
    for p in 0..samples {
        match p % 16 {
            3 => {
                for c in 0..2 {
                    let v = s_in[[2 * p, c]];
                    s_in[[2 * p + 1, c]] = v;
                }
                let b = b_in[[2 * p, 0]];
                b_in[[2 * p + 1, 0]] = b;
            }
            1 | 5 | 9 | 13 => {
                let b = b_in[[2 * p, 0]];
                b_in[[2 * p + 1, 0]] = b;
            }
            2 | 6 | 10 | 14 => {
                let (x, y) = (s_in[[2 * p, 0]], s_in[[2 * p, 1]]);
                s_in[[2 * p + 1, 0]] = x;
                s_in[[2 * p + 1, 1]] = y;
            }
            _ => {}
        }
    }
    let phi = spatial.forward(s_in.view())?;
    let psi = spectral.forward(b_in.view())?;
    let f: Vec<f64> = (0..2 * samples)
        .map(|r| phi.row(r).iter().zip(psi.row(r).iter()).map(|(a, b)| a * b).sum())
        .collect();
    let mut out = LipschitzCheck {
        samples,
        degenerate: 0,
        violations: 0,
        max_ratio: 0.0,
    };
    for p in 0..samples {
        let (i, j) = (2 * p, 2 * p + 1);
        let dist = (s_in[[i, 0]] - s_in[[j, 0]]).abs()
            + (s_in[[i, 1]] - s_in[[j, 1]]).abs()
            + (b_in[[i, 0]] - b_in[[j, 0]]).abs();
        let df = (f[i] - f[j]).abs();
        if dist == 0.0 {
            out.degenerate += 1;
            if df != 0.0 {
                out.violations += 1;
            }
            continue;
        }
        let bound = cert.delta * dist;
        if df > bound {
            out.violations += 1;
        }
        if bound > 0.0 {
            out.max_ratio = out.max_ratio.max(df / bound);
        }
    }
    Ok(out)
}

impl LipschitzCheck {
    pub const CSV_HEADER: &'static str = "samples,degenerate,violations,max_ratio";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:?}", self.samples, self.degenerate, self.violations, self.max_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siren::{Layer, SirenConfig};
    use ndarray::{array, Array1};

    fn random_low_rank(n1: usize, n2: usize, rank: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 {
            let (u1, u2): (f64, f64) = (rng.random_range(f64::EPSILON..1.0), rng.random());
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        let a = Array2::from_shape_fn((n1, rank), |_| normal());
        let b = Array2::from_shape_fn((rank, n2), |_| normal());
        a.dot(&b)
    }

    fn zero_bias_net(in_dim: usize, hidden: Vec<usize>, omega0: f64, seed: u64) -> SirenNet {
        SirenNet::init(SirenConfig::new(in_dim, 3, hidden).with_omega0(omega0).with_seed(seed)).unwrap()
    }

    #[test]
    fn numerical_rank_basics() {
        assert_eq!(numerical_rank(&Array2::zeros((4, 3))).unwrap(), 0);
        assert_eq!(numerical_rank(&Array2::eye(4)).unwrap(), 4);
        assert_eq!(numerical_rank(&random_low_rank(9, 7, 3, 1)).unwrap(), 3);
    }

    #[test]
    fn witness_zero_matrix() {
        let f = DiscreteMatrixFunction::new(Array2::zeros((6, 4)), 2, 3).unwrap();
        assert_eq!(mf_rank_witness(&f, 10, 0).unwrap().max_rank, 0);
    }

    #[test]
    fn witness_recovers_constructed_rank() {
        let x = random_low_rank(6, 8, 3, 4);
        let f = DiscreteMatrixFunction::new(x, 3, 2).unwrap();
        assert_eq!(mf_rank_witness(&f, 100, 9).unwrap().max_rank, 3);
    }

    #[test]
    fn witness_identity_via_full_sample() {
        let f = DiscreteMatrixFunction::new(Array2::eye(4), 2, 2).unwrap();
        let w = mf_rank_witness(&f, 1, 0).unwrap();
        assert_eq!(w.max_rank, 4);
    }

    #[test]
    fn witness_never_exceeds_rank_of_backing() {
        for seed in 0..10 {
            let x = random_low_rank(12, 5, 1 + seed as usize % 4, seed);
            let r = numerical_rank(&x).unwrap();
            let f = DiscreteMatrixFunction::new(x, 4, 3).unwrap();
            assert!(mf_rank_witness(&f, 30, seed).unwrap().max_rank <= r);
        }
    }

    #[test]
    fn sampled_matrix_is_a_selection() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (10 * i + j) as f64);
        let f = DiscreteMatrixFunction::new(x, 3, 2).unwrap();
        assert_eq!(f.eval((2, 1), 2).unwrap(), 52.0);
        let m = f.sample(&[(1, 0), (1, 0), (0, 1)], &[2, 0]).unwrap();
        assert_eq!(m, array![[22.0, 20.0], [22.0, 20.0], [12.0, 10.0]]);
        assert!(f.eval((3, 0), 0).is_err());
        assert!(DiscreteMatrixFunction::new(Array2::zeros((5, 2)), 2, 2).is_err());
    }

    #[test]
    fn factorize_outer_product_and_zero() {
        let u = array![[1.0], [2.0], [-1.0]];
        let v = array![[0.5, 3.0]];
        let m = u.dot(&v);
        let (a, b) = rank_factorize(&m, RANK_TOL).unwrap();
        assert_eq!(a.ncols(), 1);
        let err = (&m - &a.dot(&b.t())).iter().map(|e| e * e).sum::<f64>().sqrt();
        assert!(err < 1e-14);
        let (a, b) = rank_factorize(&Array2::zeros((3, 4)), RANK_TOL).unwrap();
        assert_eq!((a.dim(), b.dim()), ((3, 0), (4, 0)));
    }

    #[test]
    fn factorize_random_rank_five() {
        let m = random_low_rank(200, 150, 5, 3);
        let (a, b) = rank_factorize(&m, RANK_TOL).unwrap();
        assert_eq!(a.ncols(), 5);
        let norm = m.iter().map(|e| e * e).sum::<f64>().sqrt();
        let err = (&m - &a.dot(&b.t())).iter().map(|e| e * e).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * norm, "{err} vs {norm}");
        let s = singular_values(&m).unwrap();
        let direct = s.iter().filter(|&&v| v > RANK_TOL * s[0]).count();
        assert_eq!(direct, 5);
    }

    #[test]
    fn certificate_single_layer_example() {
        let w = array![[1.5, -2.0], [0.5, 0.0]];
        assert_eq!(operator_one_norm(&w), 2.0);
        let layer = |w: Array2<f64>| Layer {
            bias: Array1::zeros(w.nrows()),
            weight: w,
        };
        let spatial = SirenNet::from_layers(SirenConfig::new(2, 2, vec![]).with_omega0(1.0), vec![layer(w)]).unwrap();
        let spectral =
            SirenNet::from_layers(SirenConfig::new(1, 2, vec![]).with_omega0(1.0), vec![layer(array![[1.0], [-1.0]])])
                .unwrap();
        let c = lipschitz_certificate(&spatial, &spectral, 1.0).unwrap();
        assert_eq!((c.eta, c.depth, c.delta), (2.0, 1, 8.0));
        let c3 = lipschitz_certificate(&spatial, &spectral, 3.0).unwrap();
        assert_eq!(c3.delta, 3.0 * c.delta);
    }

    #[test]
    fn certificate_preconditions() {
        let a = zero_bias_net(2, vec![8, 8], 30.0, 1);
        let b = zero_bias_net(1, vec![8], 30.0, 2);
        assert!(lipschitz_certificate(&a, &b, 1.0).is_err());
        let mut c = zero_bias_net(1, vec![8, 8], 30.0, 3);
        assert!(lipschitz_certificate(&a, &c, 1.0).is_ok());
        c.params_mut()[1][0] = 0.1;
        assert!(lipschitz_certificate(&a, &c, 1.0).is_err());
        let relu = SirenNet::init(SirenConfig::new(1, 3, vec![8, 8]).with_activation(Activation::Relu)).unwrap();
        assert!(lipschitz_certificate(&a, &relu, 1.0).is_err());
    }

    #[test]
    fn zero_weight_nets_have_no_violations() {
        let mut a = zero_bias_net(2, vec![6], 30.0, 1);
        let mut b = zero_bias_net(1, vec![6], 30.0, 2);
        for net in [&mut a, &mut b] {
            for p in net.params_mut() {
                p.fill(0.0);
            }
        }
        let cert = lipschitz_certificate(&a, &b, 1.0).unwrap();
        let check = empirical_lipschitz_check(&a, &b, &cert, 500, 0).unwrap();
        assert_eq!((check.violations, check.max_ratio), (0, 0.0));
    }

    #[test]
    fn identical_pairs_are_skipped() {
        let a = zero_bias_net(2, vec![6], 30.0, 1);
        let b = zero_bias_net(1, vec![6], 30.0, 2);
        let cert = lipschitz_certificate(&a, &b, 1.0).unwrap();
        let check = empirical_lipschitz_check(&a, &b, &cert, 160, 0).unwrap();
        assert_eq!(check.degenerate, 10);
        assert_eq!(check.violations, 0);
        assert!(check.max_ratio.is_finite());
    }

    #[test]
    fn random_zero_bias_pairs_respect_the_bound() {
        for seed in 0..5 {
            let a = zero_bias_net(2, vec![16, 16], 30.0, seed);
            let b = zero_bias_net(1, vec![16, 16], 30.0, seed + 50);
            let cert = lipschitz_certificate(&a, &b, 1.0).unwrap();
            assert!(cert.covers_chained_bound());
            let check = empirical_lipschitz_check(&a, &b, &cert, 1000, seed).unwrap();
            assert_eq!(check.violations, 0);
            assert!(check.max_ratio < 1.0);
        }
    }

    #[test]
    fn chained_bound_holds_even_below_unit_eta() {
        // small weights push eta below 1, where delta undercuts the chain
        let layer = |w: Array2<f64>| Layer {
            bias: Array1::zeros(w.nrows()),
            weight: w,
        };
        let spatial = SirenNet::from_layers(
            SirenConfig::new(2, 1, vec![2]).with_omega0(1.0),
            vec![layer(array![[0.5, 0.0], [0.0, 0.5]]), layer(array![[0.5, 0.5]])],
        )
        .unwrap();
        let spectral = SirenNet::from_layers(
            SirenConfig::new(1, 1, vec![1]).with_omega0(1.0),
            vec![layer(array![[0.5]]), layer(array![[0.5]])],
        )
        .unwrap();
        let cert = lipschitz_certificate(&spatial, &spectral, 1.0).unwrap();
        assert_eq!(cert.eta, 0.5);
        assert!(!cert.covers_chained_bound());
        let chained = LipschitzCertificate {
            delta: cert.chained_bound(),
            ..cert
        };
        let check = empirical_lipschitz_check(&spatial, &spectral, &chained, 2000, 1).unwrap();
        assert_eq!(check.violations, 0);
    }
}
