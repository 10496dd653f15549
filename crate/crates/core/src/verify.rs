//! Self-contained verification suites: each runs an independent oracle and
//! reports pass/fail per property.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    empirical_lipschitz_check, lipschitz_certificate, mf_rank_witness, numerical_rank, DiscreteMatrixFunction,
};
use crate::cube::HsiCube;
use crate::degrade::{add_noise, gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::fuse::{loss_total_and_grad, loss_tv, loss_tv_with_subgradient, FusionModel, LossWeights, NetConfigs, Observations};
use crate::siren::{SirenConfig, SirenNet};

pub const GRADCHECK_PARAMS: usize = 100;
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const GRADCHECK_FLOOR: f64 = 1e-3;
pub const LIPSCHITZ_PAIRS: usize = 10;
pub const LIPSCHITZ_SAMPLES: usize = 10_000;
pub const MFRANK_MATRICES: usize = 20;
pub const MFRANK_TRIALS: usize = 100;
pub const TV_CASES: usize = 50;
pub const NOISE_SAMPLES: usize = 1_000_000;
pub const NOISE_TOL_DB: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Lipschitz,
    Mfrank,
    Tv,
    Noise,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Gradcheck, Suite::Lipschitz, Suite::Mfrank, Suite::Tv, Suite::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradcheck => "gradcheck",
            Suite::Lipschitz => "lipschitz",
            Suite::Mfrank => "mfrank",
            Suite::Tv => "tv",
            Suite::Noise => "noise",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub properties: Vec<PropertyResult>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            properties: Vec::new(),
        }
    }

    fn record(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.properties.push(PropertyResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            writeln!(
                f,
                "[{}] {}: {} ({})",
                if p.passed { "PASS" } else { "FAIL" },
                self.suite.name(),
                p.name,
                p.detail
            )?;
        }
        write!(
            f,
            "{}: {}/{} properties passed",
            self.suite.name(),
            self.properties.iter().filter(|p| p.passed).count(),
            self.properties.len()
        )
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Gradcheck => gradcheck(seed),
        Suite::Lipschitz => lipschitz(seed),
        Suite::Mfrank => mfrank(seed),
        Suite::Tv => tv(seed),
        Suite::Noise => noise(seed),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gradcheck_problem(seed: u64) -> Result<(Observations, Degradation)> {
    let degr = Degradation {
        psf: gaussian_psf(3, 1.0)?,
        down: DownsampleSpec::centered(2)?,
        srf: gaussian_srf(2, 3)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = HsiCube::from_fn(4, 4, 3, |_, _, _| rng.random::<f64>())?;
    let (lr, msi) = simulate(&gt, &degr, NoiseSpec::new(30.0, seed)?, NoiseSpec::new(30.0, seed + 1)?)?;
    Ok((Observations::new(lr, msi), degr))
}

/// A 4×4×3, K = 2 model with perturbed (nonzero) biases whose spatial
/// factor has no near-zero TV differences.
fn gradcheck_model(seed: u64) -> Result<FusionModel> {
    for attempt in 0..100u64 {
        let s = seed.wrapping_mul(131).wrapping_add(attempt);
        let cfg = NetConfigs::new(2, vec![10, 10], vec![8]).with_seed(s);
        let mut model = FusionModel::init(&cfg, (4, 4, 3))?;
        let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5EED);
        let (sp, sc) = model.nets_mut();
        for net in [sp, sc] {
            for t in net.params_mut() {
                for v in t.iter_mut() {
                    *v += rng.random_range(-0.1..0.1);
                }
            }
        }
        let a = crate::fuse::assemble(&model, &model.train_grid())?.spatial;
        if min_tv_difference(&a, 4, 4) >= 1e-8 {
            return Ok(model);
        }
    }
    Err(Error::invalid("could not sample a model away from TV kinks"))
}

fn min_tv_difference(a: &Array2<f64>, h: usize, w: usize) -> f64 {
    let mut m = f64::INFINITY;
    for row in a.rows() {
        for i in 0..h {
            for j in 0..w {
                if i + 1 < h {
                    m = m.min((row[(i + 1) * w + j] - row[i * w + j]).abs());
                }
                if j + 1 < w {
                    m = m.min((row[i * w + j + 1] - row[i * w + j]).abs());
                }
            }
        }
    }
    m
}

fn gradcheck(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Gradcheck);
    let (obs, degr) = gradcheck_problem(seed)?;
    let model = gradcheck_model(seed)?;
    let configs = [
        ("hsi term", LossWeights { lambda: 0.0, eta: 0.0 }),
        ("hsi+msi terms", LossWeights { lambda: 1.25, eta: 0.0 }),
        ("hsi+tv terms", LossWeights { lambda: 0.0, eta: 0.5 }),
        ("all terms", LossWeights { lambda: 1.25, eta: 0.0025 }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF1D1);
    let spatial_tensors = model.spatial_net().params().len();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut failed = Vec::new();
    let h = 1e-6;
    for (c, (label, weights)) in configs.iter().enumerate() {
        let (_, grads) = loss_total_and_grad(&model, &obs, &degr, *weights)?;
        let analytic: Vec<Vec<f64>> = grads
            .spatial
            .as_slices()
            .into_iter()
            .chain(grads.spectral.as_slices())
            .map(|s| s.to_vec())
            .collect();
        let count = GRADCHECK_PARAMS / configs.len() + usize::from(c < GRADCHECK_PARAMS % configs.len());
        for _ in 0..count {
            let t = rng.random_range(0..analytic.len());
            let j = rng.random_range(0..analytic[t].len());
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                let (sp, sc) = m.nets_mut();
                if t < spatial_tensors {
                    sp.params_mut()[t][j] += delta;
                } else {
                    sc.params_mut()[t - spatial_tensors][j] += delta;
                }
                Ok(loss_total_and_grad(&m, &obs, &degr, *weights)?.0.total)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let an = analytic[t][j];
            let err = (fd - an).abs() / an.abs().max(fd.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max(err);
            checked += 1;
            if err > GRADCHECK_TOL {
                failed.push(format!("{label}: tensor {t} index {j} analytic {an:e} fd {fd:e}"));
            }
        }
    }
    report.record(
        format!("{checked} parameters match central differences within {GRADCHECK_TOL:e}"),
        failed.is_empty(),
        if failed.is_empty() {
            format!("{}/{checked} within tolerance, worst relative error {worst:.2e}", checked)
        } else {
            format!("{} failures, first: {}", failed.len(), failed[0])
        },
    );
    Ok(report)
}

fn zero_bias_pair(rng: &mut ChaCha8Rng, seed: u64) -> Result<(SirenNet, SirenNet)> {
    let depth = rng.random_range(1..=3);
    let spatial_hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(8..=32)).collect();
    let spectral_hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(8..=32)).collect();
    let rank = rng.random_range(1..=6);
    let a = SirenNet::init(SirenConfig::new(2, rank, spatial_hidden).with_seed(seed * 2 + 1))?;
    let b = SirenNet::init(SirenConfig::new(1, rank, spectral_hidden).with_seed(seed * 2 + 2))?;
    Ok((a, b))
}

fn lipschitz(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Lipschitz);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total_violations = 0usize;
    let mut worst_ratio = 0.0f64;
    let mut all_covered = true;
    for p in 0..LIPSCHITZ_PAIRS {
        let (a, b) = zero_bias_pair(&mut rng, seed.wrapping_mul(1000).wrapping_add(p as u64))?;
        let cert = lipschitz_certificate(&a, &b, 1.0)?;
        all_covered &= cert.covers_chained_bound();
        let check = empirical_lipschitz_check(&a, &b, &cert, LIPSCHITZ_SAMPLES, seed ^ p as u64)?;
        total_violations += check.violations;
        worst_ratio = worst_ratio.max(check.max_ratio);
        report.record(
            format!("pair {p}: zero violations over {LIPSCHITZ_SAMPLES} pairs"),
            check.violations == 0,
            format!(
                "d = {}, eta = {:.3}, delta = {:.3e}, violations {}, max ratio {:.3e}",
                cert.depth, cert.eta, cert.delta, check.violations, check.max_ratio
            ),
        );
    }
    report.record(
        "delta dominates the chained layer bound (eta >= 1)",
        all_covered,
        "holds for SIREN-initialized networks",
    );
    report.record(
        "no violations across all pairs",
        total_violations == 0,
        format!("{total_violations} violations, worst ratio {worst_ratio:.3e}"),
    );
    Ok(report)
}

fn mfrank(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Mfrank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..MFRANK_MATRICES {
        let rank = 1 + i % 5;
        let (l1, l2) = loop {
            let (a, b) = (rng.random_range(1..=5), rng.random_range(1..=5));
            if a * b >= rank {
                break (a, b);
            }
        };
        let n1 = l1 * l2;
        let n2 = rng.random_range(rank..=12);
        let u = Array2::from_shape_fn((n1, rank), |_| gaussian(&mut rng));
        let v = Array2::from_shape_fn((rank, n2), |_| gaussian(&mut rng));
        let x = u.dot(&v);
        let svd_rank = numerical_rank(&x)?;
        let f = DiscreteMatrixFunction::new(x, l1, l2)?;
        let w = mf_rank_witness(&f, MFRANK_TRIALS, seed.wrapping_add(i as u64))?;
        report.record(
            format!("matrix {i}: witness rank equals constructed rank {rank}"),
            w.max_rank == rank && svd_rank == rank,
            format!(
                "{n1}x{n2} split {l1}x{l2}, witness {} at {:?}, SVD rank {svd_rank}",
                w.max_rank, w.dims
            ),
        );
    }
    Ok(report)
}

fn tv_reference(a: &Array2<f64>, h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..a.nrows() {
        for i in 0..h {
            for j in 0..w {
                let v = a[[k, i * w + j]];
                if i + 1 < h {
                    total += (a[[k, (i + 1) * w + j]] - v).abs();
                }
                if j + 1 < w {
                    total += (a[[k, i * w + j + 1]] - v).abs();
                }
            }
        }
    }
    total
}

fn tv(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Tv);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..TV_CASES {
        let (k, h, w) = (rng.random_range(1..=4), rng.random_range(1..=9), rng.random_range(1..=9));
        let a = Array2::from_shape_fn((k, h * w), |_| rng.random_range(-2.0..2.0));
        if loss_tv(a.view(), (h, w))? != tv_reference(&a, h, w) {
            mismatches += 1;
        }
    }
    report.record(
        format!("{TV_CASES} random inputs equal the double-loop reference exactly"),
        mismatches == 0,
        format!("{mismatches} mismatches"),
    );
    let example = ndarray::array![[0.0, 1.0, 2.0, 3.0]];
    let v = loss_tv(example.view(), (2, 2))?;
    report.record("[[0,1],[2,3]] gives 6", v == 6.0, format!("got {v}"));
    let constant = Array2::from_elem((3, 20), 0.25);
    let v = loss_tv(constant.view(), (4, 5))?;
    report.record("constant rows give 0", v == 0.0, format!("got {v}"));

    // TV is piecewise linear: away from kinks a small step changes it by
    // exactly the subgradient's directional derivative.
    let a = Array2::from_shape_fn((2, 30), |_| rng.random_range(-1.0..1.0));
    let dir = Array2::from_shape_fn((2, 30), |_| rng.random_range(-1.0..1.0));
    let (base, g) = loss_tv_with_subgradient(a.view(), (5, 6))?;
    let step = 1e-9;
    let moved = loss_tv((&a + &(&dir * step)).view(), (5, 6))?;
    let predicted = (g * &dir).sum() * step;
    let err = ((moved - base) - predicted).abs();
    report.record(
        "subgradient matches the directional change",
        err < 1e-12,
        format!("error {err:.2e}"),
    );
    Ok(report)
}

fn noise(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Noise);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, l) = (100, 100, NOISE_SAMPLES / 10_000);
    let clean = HsiCube::from_fn(h, w, l, |_, _, _| rng.random_range(0.1..1.0))?;
    let signal = clean.as_slice().iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    for (i, snr) in [10.0, 20.0, 25.0, 30.0, 40.0].into_iter().enumerate() {
        let noisy = add_noise(&clean, NoiseSpec::new(snr, seed.wrapping_add(i as u64))?)?;
        let n = noisy.as_slice().iter().zip(clean.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            / clean.len() as f64;
        let realized = 10.0 * (signal / n).log10();
        report.record(
            format!("{snr} dB target realized within {NOISE_TOL_DB} dB over {} samples", clean.len()),
            (realized - snr).abs() <= NOISE_TOL_DB,
            format!("realized {realized:.4} dB"),
        );
    }
    let spec = NoiseSpec::new(30.0, seed)?;
    let a = add_noise(&clean, spec)?;
    let b = add_noise(&clean, spec)?;
    report.record("same seed gives bit-identical noise", a == b, "");
    let off = add_noise(&clean, NoiseSpec::disabled())?;
    report.record("infinite SNR leaves the cube unchanged", off == clean, "");
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }

    #[test]
    fn small_suites_pass() {
        for s in [Suite::Tv, Suite::Mfrank, Suite::Gradcheck] {
            let r = run_suite(s, 1).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn report_formats_one_line_per_property() {
        let mut r = SuiteReport::new(Suite::Tv);
        r.record("a", true, "x");
        r.record("b", false, "y");
        let text = r.to_string();
        assert!(text.contains("[PASS] tv: a (x)"));
        assert!(text.contains("[FAIL] tv: b (y)"));
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }
}
