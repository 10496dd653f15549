//! `hsifuse` command-line interface.
//!
//! Exit codes: 0 success, 1 verification or training failure, 2 usage
//! error, 3 I/O or format error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cube::{read_cube, write_cube, HsiCube};
use crate::degrade::{gaussian_psf, gaussian_srf, simulate, Degradation, DownsampleSpec, NoiseSpec, SpectralResponse};
use crate::error::{Error, Result};
use crate::fuse::{infer, load_model, save_model, train_with_callback, NetConfigs, Observations, Preset, TrainConfig};
use crate::io_util::write_atomic;
use crate::metrics::{evaluate, MetricsReport, Peak};
use crate::synth::{make_gt, GtSpec};
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hsifuse", version, about = "Hyperspectral/multispectral fusion with continuous low-rank factorization")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reproducible reductions. Batch gradients are always summed in a fixed
    /// order, so results do not depend on --threads either way.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic low-rank ground-truth cube.
    MakeGt(MakeGtArgs),
    /// Degrade a ground-truth cube into LR-HSI and HR-MSI observations.
    Simulate(SimulateArgs),
    /// Train a model on an LR-HSI / HR-MSI pair.
    Fuse(FuseArgs),
    /// Evaluate a trained model on an arbitrary grid.
    Infer(InferArgs),
    /// Compare a cube against a reference (MPSNR, MSSIM, SAM, ERGAS).
    Eval(EvalArgs),
    /// Export one band as PGM or one pixel's spectrum as CSV.
    Export(ExportArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct MakeGtArgs {
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    #[arg(long, default_value_t = 48)]
    pub width: usize,
    #[arg(long, default_value_t = 31)]
    pub bands: usize,
    #[arg(long, default_value_t = 6)]
    pub rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DegradationArgs {
    #[arg(long, default_value_t = 4)]
    pub ratio: usize,
    #[arg(long, default_value_t = 5)]
    pub psf_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub psf_sigma: f64,
}

impl DegradationArgs {
    fn build(&self, srf: SpectralResponse) -> Result<Degradation> {
        Ok(Degradation {
            psf: gaussian_psf(self.psf_size, self.psf_sigma)?,
            down: DownsampleSpec::centered(self.ratio)?,
            srf,
        })
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[command(flatten)]
    pub degradation: DegradationArgs,
    #[arg(long, default_value_t = 4)]
    pub msi_bands: usize,
    /// SNR of the LR-HSI noise in dB (`inf` disables it).
    #[arg(long, default_value_t = 30.0)]
    pub snr_hsi: f64,
    #[arg(long, default_value_t = 30.0)]
    pub snr_msi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_hsi: PathBuf,
    #[arg(long)]
    pub out_msi: PathBuf,
    /// Where to write the SRF matrix (default: next to the MSI, `.srf.csv`).
    #[arg(long)]
    pub out_srf: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub hsi: PathBuf,
    #[arg(long)]
    pub msi: PathBuf,
    /// SRF CSV written by `simulate`.
    #[arg(long)]
    pub srf: PathBuf,
    #[command(flatten)]
    pub degradation: DegradationArgs,
    #[arg(long, default_value_t = 9)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.25)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0025)]
    pub eta: f64,
    /// Learning rate (default: from the preset).
    #[arg(long)]
    pub lr: Option<f64>,
    /// Maximum iterations (default: from the preset).
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long, default_value_t = 10)]
    pub patience: u32,
    #[arg(long, default_value_t = 1e-4)]
    pub min_rel_improve: f64,
    #[arg(long, default_value_t = 200)]
    pub log_every: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PresetArg::Paper)]
    pub preset: PresetArg,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Training log as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Suppress per-log progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub bands: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeakArg {
    BandMax,
    Unit,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// ERGAS resolution ratio.
    #[arg(long, default_value_t = 4.0)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = PeakArg::BandMax)]
    pub peak: PeakArg,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("what").required(true).args(["band", "pixel"]))]
pub struct ExportArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, requires = "out_pgm")]
    pub band: Option<usize>,
    #[arg(long)]
    pub out_pgm: Option<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["ROW", "COL"], requires = "out_csv")]
    pub pixel: Option<Vec<usize>>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SuiteArg {
    Gradcheck,
    Lipschitz,
    Mfrank,
    Tv,
    Noise,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Gradcheck => Suite::Gradcheck,
            SuiteArg::Lipschitz => Suite::Lipschitz,
            SuiteArg::Mfrank => Suite::Mfrank,
            SuiteArg::Tv => Suite::Tv,
            SuiteArg::Noise => Suite::Noise,
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn main() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // a second global pool in the same process is harmless to skip
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Format { .. } | Error::Io(_) => EXIT_IO,
        Error::NonFinite { .. } | Error::Diverged { .. } => EXIT_FAILURE,
    }
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::MakeGt(a) => cmd_make_gt(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn cmd_make_gt(a: &MakeGtArgs) -> Result<i32> {
    let gt = make_gt(&GtSpec::new(a.height, a.width, a.bands, a.rank, a.seed))?;
    write_cube(&gt, &a.out)?;
    println!(
        "wrote {}x{}x{} ground truth (rank {}) to {}",
        a.height,
        a.width,
        a.bands,
        a.rank,
        a.out.display()
    );
    Ok(EXIT_OK)
}

/// `msi.f32c` → `msi.srf.csv`.
pub fn default_srf_path(msi: &Path) -> PathBuf {
    msi.with_extension("srf.csv")
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let gt = read_cube(&a.gt)?;
    let degr = a.degradation.build(gaussian_srf(a.msi_bands, gt.bands())?)?;
    let noise_hsi = NoiseSpec::new(a.snr_hsi, a.seed.wrapping_mul(2).wrapping_add(1))?;
    let noise_msi = NoiseSpec::new(a.snr_msi, a.seed.wrapping_mul(2).wrapping_add(2))?;
    let (lr, msi) = simulate(&gt, &degr, noise_hsi, noise_msi)?;
    let srf_path = a.out_srf.clone().unwrap_or_else(|| default_srf_path(&a.out_msi));
    write_cube(&lr, &a.out_hsi)?;
    write_cube(&msi, &a.out_msi)?;
    degr.srf.write_csv(&srf_path)?;
    println!(
        "LR-HSI {:?} -> {}\nHR-MSI {:?} -> {}\nSRF {}x{} -> {}",
        lr.dims(),
        a.out_hsi.display(),
        msi.dims(),
        a.out_msi.display(),
        degr.srf.out_bands(),
        degr.srf.in_bands(),
        srf_path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_fuse(a: &FuseArgs) -> Result<i32> {
    let preset: Preset = a.preset.into();
    let config = TrainConfig {
        lambda: a.lambda,
        eta: a.eta,
        lr: a.lr.unwrap_or(preset.lr()),
        max_iters: a.iters.unwrap_or(preset.max_iters()),
        patience: a.patience,
        min_rel_improve: a.min_rel_improve,
        seed: a.seed,
        log_every: a.log_every,
    };
    config.validate()?;
    let obs = Observations::new(read_cube(&a.hsi)?, read_cube(&a.msi)?);
    let degr = a.degradation.build(SpectralResponse::read_csv(&a.srf)?)?;
    obs.check(&degr)?;
    let (h, w, l) = obs.latent_dims();
    if a.rank == 0 || a.rank > l.min(h * w) {
        return Err(Error::invalid(format!(
            "--rank must be in 1..={} for a {h}x{w}x{l} problem",
            l.min(h * w)
        )));
    }
    let nets = NetConfigs::from_preset(a.rank, preset, a.seed);
    let start = Instant::now();
    let quiet = a.quiet;
    let (model, report) = train_with_callback(&obs, &degr, &nets, &config, |r| {
        if !quiet {
            eprintln!(
                "iter {:>6}  total {:.6e}  hsi_obs {:.4e}  msi_obs {:.4e}  tv {:.4e}  {:.1}s",
                r.iter,
                r.terms.total,
                r.terms.hsi_obs,
                r.terms.msi_obs,
                r.terms.tv,
                start.elapsed().as_secs_f64()
            );
        }
        true
    })?;
    save_model(&model, &a.out_model)?;
    if let Some(path) = &a.report {
        report.write_csv(path)?;
    }
    println!(
        "{} after {} iterations; best total {:e}; model -> {}",
        report.stop_reason.as_str(),
        report.iterations,
        report.best_total,
        a.out_model.display()
    );
    Ok(EXIT_OK)
}

fn cmd_infer(a: &InferArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let cube = infer(&model, (a.height, a.width, a.bands))?;
    write_cube(&cube, &a.out)?;
    println!(
        "inferred {}x{}x{} (trained at {:?}) -> {}",
        a.height,
        a.width,
        a.bands,
        model.train_dims(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let pred = read_cube(&a.pred)?;
    let reference = read_cube(&a.reference)?;
    let peak = match a.peak {
        PeakArg::BandMax => Peak::BandMax,
        PeakArg::Unit => Peak::Unit,
    };
    let report = evaluate(&pred, &reference, a.ratio, peak)?;
    if !report.skipped_bands.is_empty() {
        eprintln!(
            "warning: all-zero reference bands skipped in MPSNR/MSSIM: {:?}",
            report.skipped_bands
        );
    }
    println!("{}\n{}", MetricsReport::CSV_HEADER, report.csv_line());
    if let Some(path) = &a.out_csv {
        write_atomic(path, format!("{}\n", report.csv_line()).as_bytes())?;
    }
    Ok(EXIT_OK)
}

/// 8-bit binary PGM of one band, min-max scaled. Returns the file bytes and
/// the `(min, max)` used.
pub fn band_pgm(cube: &HsiCube, band: usize) -> Result<(Vec<u8>, f64, f64)> {
    if band >= cube.bands() {
        return Err(Error::invalid(format!(
            "band {band} out of range (cube has {})",
            cube.bands()
        )));
    }
    let plane = cube.band(band);
    let (lo, hi) = plane
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", cube.width(), cube.height()).into_bytes();
    out.extend(plane.iter().map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8));
    Ok((out, lo, hi))
}

/// `band_index,value` rows for one pixel.
pub fn spectrum_csv(cube: &HsiCube, row: usize, col: usize) -> Result<String> {
    if row >= cube.height() || col >= cube.width() {
        return Err(Error::invalid(format!(
            "pixel ({row}, {col}) out of range for {}x{}",
            cube.height(),
            cube.width()
        )));
    }
    let mut s = String::from("band_index,value\n");
    for (b, v) in cube.spectrum(row, col).into_iter().enumerate() {
        let _ = writeln!(s, "{b},{v:?}");
    }
    Ok(s)
}

fn cmd_export(a: &ExportArgs) -> Result<i32> {
    let cube = read_cube(&a.cube)?;
    if let (Some(band), Some(path)) = (a.band, &a.out_pgm) {
        let (bytes, lo, hi) = band_pgm(&cube, band)?;
        write_atomic(path, &bytes)?;
        println!(
            "band {band} -> {} (scaled from [{lo:?}, {hi:?}] to [0, 255])",
            path.display()
        );
    }
    if let (Some(px), Some(path)) = (&a.pixel, &a.out_csv) {
        let csv = spectrum_csv(&cube, px[0], px[1])?;
        write_atomic(path, csv.as_bytes())?;
        println!("spectrum of pixel ({}, {}) -> {}", px[0], px[1], path.display());
    }
    Ok(EXIT_OK)
}

fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    let report = run_suite(a.suite.into(), a.seed)?;
    println!("{report}");
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        for f in report.failures() {
            eprintln!("failed: {}", f.name);
        }
        Ok(EXIT_FAILURE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_subcommand() {
        for argv in [
            &["hsifuse", "make-gt", "--out", "gt.f32c"][..],
            &["hsifuse", "simulate", "--gt", "g", "--out-hsi", "h", "--out-msi", "m", "--snr-hsi", "inf"],
            &["hsifuse", "--threads", "2", "fuse", "--hsi", "h", "--msi", "m", "--srf", "s", "--out-model", "o"],
            &["hsifuse", "infer", "--model", "m", "--height", "4", "--width", "4", "--bands", "3", "--out", "o"],
            &["hsifuse", "eval", "--pred", "p", "--ref", "r"],
            &["hsifuse", "export", "--cube", "c", "--band", "0", "--out-pgm", "o.pgm"],
            &["hsifuse", "export", "--cube", "c", "--pixel", "1", "2", "--out-csv", "o.csv"],
            &["hsifuse", "verify", "--suite", "tv", "--deterministic"],
        ] {
            Cli::try_parse_from(argv).unwrap_or_else(|e| panic!("{argv:?}: {e}"));
        }
    }

    #[test]
    fn simulate_defaults() {
        let cli = Cli::try_parse_from(["hsifuse", "simulate", "--gt", "g", "--out-hsi", "h", "--out-msi", "m"]).unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        assert_eq!(
            (a.degradation.ratio, a.degradation.psf_size, a.degradation.psf_sigma, a.snr_hsi, a.snr_msi),
            (4, 5, 1.0, 30.0, 30.0)
        );
        assert_eq!(default_srf_path(Path::new("out/msi.f32c")), PathBuf::from("out/msi.srf.csv"));
    }

    #[test]
    fn fuse_defaults_follow_reference_settings() {
        let cli = Cli::try_parse_from(["hsifuse", "fuse", "--hsi", "h", "--msi", "m", "--srf", "s", "--out-model", "o"])
            .unwrap();
        let Command::Fuse(a) = cli.command else { panic!() };
        assert_eq!((a.rank, a.lambda, a.eta), (9, 1.25, 0.0025));
        assert!(matches!(a.preset, PresetArg::Paper));
    }

    #[test]
    fn export_requires_a_target() {
        assert!(Cli::try_parse_from(["hsifuse", "export", "--cube", "c"]).is_err());
        assert!(Cli::try_parse_from(["hsifuse", "export", "--cube", "c", "--band", "0"]).is_err());
    }

    #[test]
    fn pgm_of_constant_band_is_uniform() {
        let cube = HsiCube::from_fn(3, 4, 2, |_, _, _| 0.7).unwrap();
        let (bytes, lo, hi) = band_pgm(&cube, 1).unwrap();
        let header = b"P5\n4 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 12);
        assert!(pixels.iter().all(|&p| p == pixels[0]));
        assert_eq!((lo, hi), (0.7, 0.7));
        assert!(band_pgm(&cube, 2).is_err());
    }

    #[test]
    fn pgm_scales_to_full_range() {
        let cube = HsiCube::from_fn(1, 3, 1, |_, c, _| c as f64).unwrap();
        let (bytes, _, _) = band_pgm(&cube, 0).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn spectrum_csv_rows() {
        let cube = HsiCube::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let csv = spectrum_csv(&cube, 0, 0).unwrap();
        assert_eq!(csv, "band_index,value\n0,0.1\n1,0.2\n2,0.3\n");
        assert!(spectrum_csv(&cube, 1, 0).is_err());
    }

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::invalid("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::format("magic", "bad magic")), EXIT_IO);
        assert_eq!(
            exit_code(&Error::Diverged {
                iteration: 3,
                last_finite_total: 1.0
            }),
            EXIT_FAILURE
        );
    }
}
