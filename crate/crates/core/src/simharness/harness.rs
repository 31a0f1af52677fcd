//! Trial execution.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::{CampaignConfig, MethodTag};
use crate::channel::{
    aps_from_scenario, cluster_channels, draw_scenario, draw_subpaths, mean_inverse_xpr, ofdm_subcarrier, Link,
};
use crate::conversion::{ConversionOperator, Converter, Method};
use crate::covariance::{covariance_from_aps, psd_projection, upa_average, CovarianceMatrix, SampleCovariance, UpaStructure};
use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, ArrayManifold, UpaGeometry};
use crate::io::read_operator;
use crate::linalg::frobenius;
use crate::metrics::{grassmann_se, normalized_frobenius_se, DEFAULT_ENERGY_FRACTION};
use crate::{CMatrix, CVector, Complex};

/// Error of one estimator in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRecord {
    pub method: MethodTag,
    pub frobenius_se: f64,
    pub grassmann_se: f64,
    /// Eigenvalue tie at the subspace boundary of the estimate.
    pub tie: bool,
    /// EAPM iterations (Algorithm 2 only).
    pub iterations: Option<usize>,
    /// Relative UL residual of the reconstructed spectrum (conversions only).
    pub residual: Option<f64>,
    pub converged: bool,
}

impl MethodRecord {
    pub fn flags(&self) -> String {
        let mut f = Vec::new();
        if self.tie {
            f.push("tie");
        }
        if !self.converged {
            f.push("eapm_not_converged");
        }
        f.join(";")
    }
}

/// Per-trial quantities that are not estimator errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDiagnostics {
    /// `‖R̂ − R‖_F` before structure averaging (after PSD projection).
    pub raw_error: f64,
    /// `‖upa_average(R̂) − R‖_F`.
    pub averaged_error: f64,
    /// UPA structure violation of the raw UL estimate, relative to its norm.
    pub structure_violation: f64,
    /// Empirical per-antenna UL SNR of the generated snapshots in dB.
    pub empirical_snr_db: f64,
    /// SEs of the all-zeros DL estimate, the trivial reference.
    pub zero_frobenius_se: f64,
    pub zero_grassmann_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub seed: u64,
    pub methods: Vec<MethodRecord>,
    pub diagnostics: TrialDiagnostics,
}

impl TrialRecord {
    pub fn method(&self, m: MethodTag) -> Option<&MethodRecord> {
        self.methods.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial_id: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CampaignResult {
    /// Successful trials in trial-id order.
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial_id`; independent of scheduling.
pub fn trial_seed(master_seed: u64, trial_id: usize) -> u64 {
    splitmix64(splitmix64(master_seed) ^ splitmix64(trial_id as u64).rotate_left(17))
}

/// Worker count: the config value, else `FDDCOV_THREADS`, else the machine.
pub fn worker_count(cfg: &CampaignConfig) -> usize {
    cfg.threads
        .or_else(|| std::env::var("FDDCOV_THREADS").ok().and_then(|v| v.trim().parse().ok()))
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Everything shared by the trials of one campaign.
#[derive(Debug)]
pub struct Campaign {
    cfg: CampaignConfig,
    geom: UpaGeometry,
    truth_grid: AngularGrid,
    converter: Converter,
    operator: ConversionOperator,
    mean_inv_xpr: f64,
}

impl Campaign {
    /// Builds the kernels and the conversion operator, loading the latter
    /// from `cfg.operator` when set.
    pub fn new(cfg: CampaignConfig) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.geometry()?;
        let converter = Converter::new(&geom, cfg.ul_hz, cfg.dl_hz, &cfg.working_grid()?, cfg.mode, cfg.effective_truncation())?;
        let operator = match &cfg.operator {
            Some(path) => {
                let op = read_operator(path)?;
                converter.check_operator(&op)?;
                op
            }
            None => converter.operator(),
        };
        Ok(Self {
            truth_grid: cfg.truth_grid()?,
            mean_inv_xpr: mean_inverse_xpr(cfg.scenario.xpr_db),
            geom,
            converter,
            operator,
            cfg,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.cfg
    }

    pub fn converter(&self) -> &Converter {
        &self.converter
    }

    pub fn operator(&self) -> &ConversionOperator {
        &self.operator
    }

    /// One WSS window: scenario, snapshots, estimates and errors.
    pub fn run_trial(&self, trial_id: usize) -> Result<TrialRecord> {
        let cfg = &self.cfg;
        let seed = trial_seed(cfg.master_seed, trial_id);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);

        let mut scenario = draw_scenario(&mut rng, &cfg.scenario)?;
        if let Some(wb) = &cfg.wideband {
            scenario.assign_delay_taps(&mut rng, wb)?;
        }
        let aps = aps_from_scenario(&scenario, &self.truth_grid, self.mean_inv_xpr)?;
        let r_u = covariance_from_aps(&aps, &self.geom, cfg.ul_hz, &self.truth_grid)?;
        let r_d = covariance_from_aps(&aps, &self.geom, cfg.dl_hz, &self.truth_grid)?;

        let n = self.geom.n_antennas();
        let noise_var = |r: &CovarianceMatrix| {
            if cfg.snr_db.is_infinite() {
                0.0
            } else {
                r.trace() / (n as f64 * 10f64.powf(cfg.snr_db / 10.0))
            }
        };
        let (var_u, var_d) = (noise_var(&r_u), noise_var(&r_d));
        let man_u = ArrayManifold::new(&self.geom, cfg.ul_hz)?;
        let man_d = ArrayManifold::new(&self.geom, cfg.dl_hz)?;
        let mut acc_u = SampleCovariance::new(n);
        let mut acc_d = SampleCovariance::new(n);
        let (mut signal_power, mut noise_power) = (0.0, 0.0);
        for s in 0..cfg.n_snapshots {
            let sub = draw_subpaths(&mut rng, &scenario);
            let parts_u = cluster_channels(&sub, &scenario, &man_u, Link::Uplink)?;
            let parts_d = cluster_channels(&sub, &scenario, &man_d, Link::Downlink)?;
            let (h_u, h_d) = match &cfg.wideband {
                Some(wb) => {
                    let k = s % wb.n_subcarriers;
                    (ofdm_subcarrier(&parts_u, &scenario, wb, k), ofdm_subcarrier(&parts_d, &scenario, wb, k))
                }
                None => (sum(&parts_u, n), sum(&parts_d, n)),
            };
            let z_u = noise(&mut rng, n, var_u);
            let z_d = noise(&mut rng, n, var_d);
            signal_power += h_u.norm_squared();
            noise_power += z_u.norm_squared();
            acc_u.push(&(h_u + z_u))?;
            acc_d.push(&(h_d + z_d))?;
        }

        let raw_u = psd_projection(acc_u.finish()?.matrix())?;
        let est_u = upa_average(&raw_u, &self.geom)?;
        let est_d = upa_average(&psd_projection(acc_d.finish()?.matrix())?, &self.geom)?;
        let structure = UpaStructure::new(&self.geom);
        let diagnostics = TrialDiagnostics {
            raw_error: frobenius(&(raw_u.matrix() - r_u.matrix())),
            averaged_error: frobenius(&(est_u.matrix() - r_u.matrix())),
            structure_violation: structure.violation(raw_u.matrix()) / raw_u.frobenius().max(f64::MIN_POSITIVE),
            empirical_snr_db: if noise_power > 0.0 {
                10.0 * (signal_power / noise_power).log10()
            } else {
                f64::INFINITY
            },
            zero_frobenius_se: normalized_frobenius_se(r_d.matrix(), &CMatrix::zeros(n, n))?,
            zero_grassmann_se: grassmann_se(r_d.matrix(), &CMatrix::zeros(n, n), DEFAULT_ENERGY_FRACTION)?.value,
        };

        let score = |method, est: &CovarianceMatrix, iterations, residual, converged| -> Result<MethodRecord> {
            let g = grassmann_se(r_d.matrix(), est.matrix(), DEFAULT_ENERGY_FRACTION)?;
            Ok(MethodRecord {
                method,
                frobenius_se: normalized_frobenius_se(r_d.matrix(), est.matrix())?,
                grassmann_se: g.value,
                tie: g.tie,
                iterations,
                residual,
                converged,
            })
        };
        let mut methods = Vec::with_capacity(cfg.methods.len());
        for &m in &cfg.methods {
            let rec = match m {
                MethodTag::Alg1 => {
                    let conv = self.converter.convert(&est_u, &Method::Algorithm1(Some(&self.operator)))?;
                    let v = self.converter.vectorize_ul(&est_u)?;
                    let norm = v.norm();
                    let off = self.converter.projector().out_of_range_norm(&v)?;
                    let residual = if norm > 0.0 { off / norm } else { off };
                    score(m, &conv.r_d, None, Some(residual), true)?
                }
                MethodTag::Alg2 => {
                    let conv = self.converter.convert(&est_u, &Method::Algorithm2(cfg.eapm))?;
                    score(m, &conv.r_d, Some(conv.iterations), Some(conv.residual), conv.converged)?
                }
                MethodTag::Baseline => score(m, &est_d, None, None, true)?,
            };
            methods.push(rec);
        }
        Ok(TrialRecord {
            trial_id,
            seed,
            methods,
            diagnostics,
        })
    }

    /// Runs every trial on a pool of [`worker_count`] threads. Failed trials
    /// are logged to stderr and collected; the campaign continues.
    pub fn run(&self) -> Result<CampaignResult> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count(&self.cfg))
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
        let outcomes: Vec<(usize, Result<TrialRecord>)> =
            pool.install(|| (0..self.cfg.n_trials).into_par_iter().map(|t| (t, self.run_trial(t))).collect());
        let mut result = CampaignResult::default();
        for (trial_id, outcome) in outcomes {
            match outcome {
                Ok(r) => result.records.push(r),
                Err(e) => {
                    eprintln!("trial {trial_id} failed: {e}");
                    result.failures.push(TrialFailure {
                        trial_id,
                        seed: trial_seed(self.cfg.master_seed, trial_id),
                        reason: e.to_string(),
                    });
                }
            }
        }
        Ok(result)
    }
}

fn sum(parts: &[CVector], n: usize) -> CVector {
    parts.iter().fold(CVector::zeros(n), |acc, p| acc + p)
}

/// Circular complex Gaussian noise with per-entry variance `var`.
fn noise(rng: &mut ChaCha20Rng, n: usize, var: f64) -> CVector {
    if var == 0.0 {
        return CVector::zeros(n);
    }
    let s = (var / 2.0).sqrt();
    CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex::new(s * re, s * im)
    })
}
