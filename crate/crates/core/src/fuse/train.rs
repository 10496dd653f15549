//! Full-batch Adam training with best-loss tracking and plateau early stop.

use std::fmt::Write as _;
use std::path::Path;

use super::loss::{loss_total_and_grad, LossTerms, LossWeights};
use super::{FusionModel, NetConfigs, Observations};
use crate::degrade::Degradation;
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::siren::AdamState;

/// Network and optimizer profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Spatial 5×512, spectral 2×128, lr 3e-5, 30000 iterations.
    Paper,
    /// Spatial 3×128, spectral 2×64, lr 1e-4, 5000 iterations.
    Desk,
}

impl Preset {
    pub fn hidden_sizes(self) -> (Vec<usize>, Vec<usize>) {
        match self {
            Preset::Paper => (vec![512; 5], vec![128; 2]),
            Preset::Desk => (vec![128; 3], vec![64; 2]),
        }
    }

    pub fn lr(self) -> f64 {
        match self {
            Preset::Paper => 3e-5,
            Preset::Desk => 1e-4,
        }
    }

    pub fn max_iters(self) -> u64 {
        match self {
            Preset::Paper => 30_000,
            Preset::Desk => 5_000,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::invalid(format!("unknown preset `{other}` (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub lr: f64,
    pub max_iters: u64,
    /// Consecutive logged checks without relative improvement before stopping.
    pub patience: u32,
    pub min_rel_improve: f64,
    /// Seeds both networks' initialization.
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Desk)
    }
}

impl TrainConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            lambda: 1.25,
            eta: 0.0025,
            lr: preset.lr(),
            max_iters: preset.max_iters(),
            patience: 10,
            min_rel_improve: 1e-4,
            seed: 0,
            log_every: 200,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            eta: self.eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and > 0, got {}", self.lr)));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        if self.min_rel_improve.is_nan() || self.min_rel_improve < 0.0 {
            return Err(Error::invalid("min_rel_improve must be >= 0"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iter: u64,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    EarlyStop,
    User,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::MaxIters => "max_iters",
            StopReason::EarlyStop => "early_stop",
            StopReason::User => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
    pub stop_reason: StopReason,
    /// Optimizer steps taken.
    pub iterations: u64,
    /// Iteration whose parameters were returned; `None` when no loss was
    /// ever evaluated.
    pub best_iter: Option<u64>,
    pub best_total: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iter,loss_hsi_obs,loss_msi_obs,loss_tv,total";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let t = r.terms;
            let _ = writeln!(s, "{},{:?},{:?},{:?},{:?}", r.iter, t.hsi_obs, t.msi_obs, t.tv, t.total);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }

    pub fn first_total(&self) -> Option<f64> {
        self.records.first().map(|r| r.terms.total)
    }
}

pub fn train(
    obs: &Observations,
    degradation: &Degradation,
    nets: &NetConfigs,
    config: &TrainConfig,
) -> Result<(FusionModel, TrainReport)> {
    train_with_callback(obs, degradation, nets, config, |_| true)
}

/// Like [`train`], calling `on_log` at every logged iteration. Returning
/// `false` stops training with [`StopReason::User`].
pub fn train_with_callback(
    obs: &Observations,
    degradation: &Degradation,
    nets: &NetConfigs,
    config: &TrainConfig,
    mut on_log: impl FnMut(&TrainRecord) -> bool,
) -> Result<(FusionModel, TrainReport)> {
    config.validate()?;
    obs.check(degradation)?;
    let mut model = FusionModel::init(&nets.clone().with_seed(config.seed), obs.latent_dims())?;
    let mut report = TrainReport {
        records: Vec::new(),
        stop_reason: StopReason::MaxIters,
        iterations: 0,
        best_iter: None,
        best_total: f64::INFINITY,
    };
    if config.max_iters == 0 {
        return Ok((model, report));
    }

    let weights = config.weights();
    let lens: Vec<usize> = {
        let (s, e) = model.nets_mut();
        s.params_mut().iter().chain(e.params_mut().iter()).map(|p| p.len()).collect()
    };
    let mut adam = AdamState::new(config.lr, &lens);
    let mut best = model.clone();
    let mut plateau_ref = f64::INFINITY;
    let mut stale = 0u32;
    let mut last_finite = f64::NAN;

    let evaluate = |m: &FusionModel, iter: u64, last_finite: f64| {
        loss_total_and_grad(m, obs, degradation, weights).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged {
                iteration: iter,
                last_finite_total: last_finite,
            },
            other => other,
        })
    };

    let mut iter = 0u64;
    loop {
        let (terms, grads) = evaluate(&model, iter, last_finite)?;
        last_finite = terms.total;
        if terms.total < report.best_total {
            report.best_total = terms.total;
            report.best_iter = Some(iter);
            best = model.clone();
        }
        let record = TrainRecord { iter, terms };
        if iter == config.max_iters {
            if report.records.last().map(|r| r.iter) != Some(iter) {
                report.records.push(record);
            }
            break;
        }
        if iter.is_multiple_of(config.log_every) {
            report.records.push(record);
            if report.best_total < plateau_ref * (1.0 - config.min_rel_improve) {
                plateau_ref = report.best_total;
                stale = 0;
            } else {
                stale += 1;
            }
            if !on_log(&record) {
                report.stop_reason = StopReason::User;
                break;
            }
            if stale >= config.patience {
                report.stop_reason = StopReason::EarlyStop;
                break;
            }
        }

        let grad_slices: Vec<&[f64]> = grads
            .spatial
            .as_slices()
            .into_iter()
            .chain(grads.spectral.as_slices())
            .collect();
        let (s, e) = model.nets_mut();
        let mut params: Vec<&mut [f64]> = s.params_mut();
        params.extend(e.params_mut());
        adam.step(&mut params, &grad_slices)?;
        iter += 1;
        report.iterations = iter;
    }
    Ok((best, report))
}
