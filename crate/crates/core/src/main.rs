use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fddcov::conversion::{Converter, Method, DEFAULT_TRUNCATION};
use fddcov::io::{read_covariance, read_operator, write_covariance, write_operator};
use fddcov::metrics::{grassmann_se, normalized_frobenius_se, DEFAULT_ENERGY_FRACTION};
use fddcov::simharness::{parse_grid, parse_methods, Campaign, CampaignConfig, MethodTag, write_outputs};
use fddcov::{Error, Result};

#[derive(Parser)]
#[command(name = "fddcov", version, about = "Uplink-to-downlink covariance conversion for FDD massive MIMO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel and conversion-operator management.
    Kernel {
        #[command(subcommand)]
        action: KernelAction,
    },
    /// Convert one UL covariance file into a DL covariance file.
    Convert {
        /// UL covariance (text or FCOV1 binary).
        input: PathBuf,
        /// Output path; a `.bin` extension selects the binary format.
        output: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the Monte Carlo campaign.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// OFDM snapshots (tapped-delay-line channel).
        #[arg(long)]
        wideband: bool,
        /// Output directory for the CSV files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare an estimate against a reference covariance.
    Metrics { reference: PathBuf, estimate: PathBuf },
}

#[derive(Subcommand)]
enum KernelAction {
    /// Build the conversion operator and write it to `--operator`.
    Build {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Campaign configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Working grid, e.g. 120x60.
    #[arg(long)]
    grid: Option<String>,
    /// alg1, alg2 or both.
    #[arg(long)]
    method: Option<String>,
    /// Conversion-operator file.
    #[arg(long)]
    operator: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<CampaignConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config {
                    line: 0,
                    message: format!("cannot read {}: {e}", p.display()),
                })?;
                CampaignConfig::parse(&text)?
            }
            None => CampaignConfig::default(),
        };
        let flag = |m: String| Error::Config { line: 0, message: m };
        if let Some(g) = &self.grid {
            cfg.grid = parse_grid(g).map_err(flag)?;
        }
        if let Some(m) = &self.method {
            cfg.methods = parse_methods(m).map_err(flag)?;
        }
        if let Some(p) = &self.operator {
            cfg.operator = Some(p.clone());
        }
        Ok(cfg)
    }
}

fn converter(cfg: &CampaignConfig, truncation: f64) -> Result<Converter> {
    Converter::new(&cfg.geometry()?, cfg.ul_hz, cfg.dl_hz, &cfg.working_grid()?, cfg.mode, truncation)
}

fn kernel_build(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let path = cfg.operator.clone().unwrap_or_else(|| PathBuf::from("operator.fcnv"));
    let start = Instant::now();
    // Same operator a `simulate` run with this config would compute.
    let conv = converter(&cfg, cfg.effective_truncation())?;
    let op = conv.operator();
    write_operator(&path, &op)?;
    println!(
        "wrote {} ({}x{}, rank {}) in {:.1}s",
        path.display(),
        op.matrix.nrows(),
        op.matrix.ncols(),
        conv.projector().rank(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn convert(input: &Path, output: &Path, common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let r_u = read_covariance(input)?;
    let wants_alg2 = cfg.methods.contains(&MethodTag::Alg2);
    if common.method.is_some() && wants_alg2 && cfg.methods.contains(&MethodTag::Alg1) {
        return Err(Error::Config {
            line: 0,
            message: "convert takes a single method, alg1 or alg2".into(),
        });
    }
    let op = cfg.operator.as_deref().map(read_operator).transpose()?;
    // A single input carries no noise level, so the truncation is the
    // explicit one, else the cached operator's, else the exact-data default.
    let truncation = cfg
        .truncation
        .or(op.as_ref().map(|o| o.provenance.truncation))
        .unwrap_or(DEFAULT_TRUNCATION);
    let conv = converter(&cfg, truncation)?;
    if let Some(op) = &op {
        conv.check_operator(op)?;
    }
    // Without an explicit method, convert uses Algorithm 1.
    let method = if common.method.is_some() && wants_alg2 {
        Method::Algorithm2(cfg.eapm)
    } else {
        Method::Algorithm1(op.as_ref())
    };
    let out = conv.convert(&r_u, &method)?;
    write_covariance(output, out.r_d.matrix())?;
    if let Method::Algorithm2(_) = method {
        eprintln!(
            "EAPM: {} iterations, residual {:e}, converged {}",
            out.iterations, out.residual, out.converged
        );
    }
    Ok(())
}

fn simulate(common: &Common, trials: Option<usize>, seed: Option<u64>, wideband: bool, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(t) = trials {
        cfg.n_trials = t;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if wideband && cfg.wideband.is_none() {
        cfg.wideband = Some(Default::default());
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    let start = Instant::now();
    let campaign = Campaign::new(cfg)?;
    let result = campaign.run()?;
    let cfg = campaign.config();
    write_outputs(&cfg.out_dir, &result, &cfg.methods)?;
    println!(
        "{} trials ({} failed) in {:.1}s, results in {}",
        result.records.len() + result.failures.len(),
        result.failures.len(),
        start.elapsed().as_secs_f64(),
        cfg.out_dir.display()
    );
    if !result.failures.is_empty() && result.records.is_empty() {
        return Err(Error::Numerical("every trial failed".into()));
    }
    Ok(())
}

fn metrics(reference: &Path, estimate: &Path) -> Result<()> {
    let r = read_covariance(reference)?;
    let e = read_covariance(estimate)?;
    let f = normalized_frobenius_se(r.matrix(), e.matrix())?;
    let g = grassmann_se(r.matrix(), e.matrix(), DEFAULT_ENERGY_FRACTION)?;
    println!("frobenius_se,grassmann_se,rank,tie");
    println!("{f:e},{:e},{},{}", g.value, g.rank, g.tie);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) => 2,
        Error::Io(_) | Error::Format(_) | Error::DimensionMismatch { .. } => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Kernel {
            action: KernelAction::Build { common },
        } => kernel_build(common),
        Command::Convert { input, output, common } => convert(input, output, common),
        Command::Simulate {
            common,
            trials,
            seed,
            wideband,
            out,
        } => simulate(common, *trials, *seed, *wideband, out.clone()),
        Command::Metrics { reference, estimate } => metrics(reference, estimate),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
