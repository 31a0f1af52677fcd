//! Campaign configuration and its `key = value` file format.
//!
//! Every key is optional; an empty file gives the default campaign
//! (8×4 cross-polarized UPA at 1.8/1.9 GHz, 1000 snapshots at 10 dB).
//! Lines are `key = value`, `#` starts a comment, unknown keys are errors.

use std::path::PathBuf;

use crate::channel::{ScenarioConfig, WidebandConfig};
use crate::conversion::{EapmParams, VectorizationMode, DEFAULT_TRUNCATION};
use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, ElementPattern, Measure, SectorPattern, UeBasePattern, UpaGeometry};
use crate::SPEED_OF_LIGHT;

/// Default truncation for campaigns with finite SNR.
pub const NOISY_TRUNCATION: f64 = 1e-4;

/// Estimators evaluated per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodTag {
    Alg1,
    Alg2,
    /// Same estimator applied directly to DL snapshots.
    Baseline,
}

impl MethodTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Alg1 => "alg1",
            Self::Alg2 => "alg2",
            Self::Baseline => "baseline",
        }
    }
}

/// Parses `alg1`, `alg2`, `both`, `baseline` or a comma-separated mix.
/// The baseline is always appended.
pub fn parse_methods(s: &str) -> std::result::Result<Vec<MethodTag>, String> {
    let mut out = Vec::new();
    for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok {
            "alg1" => out.push(MethodTag::Alg1),
            "alg2" => out.push(MethodTag::Alg2),
            "both" => out.extend([MethodTag::Alg1, MethodTag::Alg2]),
            "baseline" => out.push(MethodTag::Baseline),
            other => return Err(format!("unknown method `{other}` (expected alg1, alg2, both or baseline)")),
        }
    }
    out.push(MethodTag::Baseline);
    out.sort();
    out.dedup();
    Ok(out)
}

/// Parses `AxZ` grid dimensions.
pub fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let bad = || format!("grid `{s}` must look like 120x60");
    let (a, z) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let z: usize = z.trim().parse().map_err(|_| bad())?;
    if a == 0 || z == 0 {
        return Err(bad());
    }
    Ok((a, z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub ul_hz: f64,
    pub dl_hz: f64,
    pub n_vertical: usize,
    pub n_horizontal: usize,
    /// Element spacing in meters; `None` means half the UL wavelength.
    pub spacing: Option<f64>,
    /// `None` selects isotropic elements.
    pub element: Option<SectorPattern>,
    pub n_snapshots: usize,
    /// Per-antenna estimation SNR in dB; infinity disables noise.
    pub snr_db: f64,
    pub n_trials: usize,
    pub master_seed: u64,
    /// Working grid for the conversion kernels.
    pub grid: (usize, usize),
    /// Finer grid for the ground-truth covariances.
    pub truth_grid: (usize, usize),
    pub measure: Measure,
    pub methods: Vec<MethodTag>,
    pub wideband: Option<WidebandConfig>,
    pub scenario: ScenarioConfig,
    pub eapm: EapmParams,
    /// Gram-spectrum truncation; `None` picks it from the SNR, see
    /// [`CampaignConfig::effective_truncation`].
    pub truncation: Option<f64>,
    pub mode: VectorizationMode,
    pub out_dir: PathBuf,
    /// Cached conversion operator to load instead of computing `F`.
    pub operator: Option<PathBuf>,
    /// Worker cap; `None` defers to `FDDCOV_THREADS` or the machine.
    pub threads: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            ul_hz: 1.8e9,
            dl_hz: 1.9e9,
            n_vertical: 8,
            n_horizontal: 4,
            spacing: None,
            element: Some(SectorPattern::default()),
            n_snapshots: 1000,
            snr_db: 10.0,
            n_trials: 200,
            master_seed: 0,
            grid: (120, 60),
            truth_grid: (360, 180),
            measure: Measure::Product,
            methods: vec![MethodTag::Alg1, MethodTag::Alg2, MethodTag::Baseline],
            wideband: None,
            scenario: ScenarioConfig::default(),
            eapm: EapmParams::default(),
            truncation: None,
            mode: VectorizationMode::Structured,
            out_dir: PathBuf::from("out"),
            operator: None,
            threads: None,
        }
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn element(cfg: &mut CampaignConfig) -> std::result::Result<&mut SectorPattern, String> {
    cfg.element
        .as_mut()
        .ok_or_else(|| "element pattern is isotropic; set `element = sector` first".to_string())
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("`{v}` is not a valid number"))
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    match v {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_num(v),
    }
}

impl CampaignConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|message| Error::Config { line: line_no, message })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; the error message carries no line number.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let deg = |v: &str| parse_f64(v).map(f64::to_radians);
        match key {
            "ul_hz" => self.ul_hz = parse_f64(v)?,
            "dl_hz" => self.dl_hz = parse_f64(v)?,
            "n_vertical" => self.n_vertical = parse_num(v)?,
            "n_horizontal" => self.n_horizontal = parse_num(v)?,
            "spacing" => self.spacing = if v == "auto" { None } else { Some(parse_f64(v)?) },
            "element" => {
                self.element = match v {
                    "sector" => Some(self.element.unwrap_or_default()),
                    "isotropic" => None,
                    _ => return Err(format!("unknown element pattern `{v}` (expected sector or isotropic)")),
                }
            }
            "element_max_gain_dbi" => element(self)?.max_gain_dbi = parse_f64(v)?,
            "element_vertical_beamwidth_deg" => element(self)?.vertical_beamwidth_deg = parse_f64(v)?,
            "element_horizontal_beamwidth_deg" => element(self)?.horizontal_beamwidth_deg = parse_f64(v)?,
            "element_side_lobe_db" => element(self)?.side_lobe_db = parse_f64(v)?,
            "element_front_back_db" => element(self)?.front_back_db = parse_f64(v)?,
            "n_snapshots" => self.n_snapshots = parse_num(v)?,
            "snr_db" | "snr_est_db" => self.snr_db = parse_f64(v)?,
            "n_trials" => self.n_trials = parse_num(v)?,
            "seed" => self.master_seed = parse_num(v)?,
            "grid" => self.grid = parse_grid(v)?,
            "truth_grid" => self.truth_grid = parse_grid(v)?,
            "measure" => {
                self.measure = match v {
                    "product" => Measure::Product,
                    "solid_angle" => Measure::SolidAngle,
                    _ => return Err(format!("unknown measure `{v}` (expected product or solid_angle)")),
                }
            }
            "methods" => self.methods = parse_methods(v)?,
            "wideband" => {
                self.wideband = if parse_bool(v)? {
                    Some(self.wideband.unwrap_or_default())
                } else {
                    None
                }
            }
            "n_subcarriers" => self.wideband.get_or_insert_with(Default::default).n_subcarriers = parse_num(v)?,
            "impulse_length" => self.wideband.get_or_insert_with(Default::default).impulse_length = parse_num(v)?,
            "n_clusters" => self.scenario.n_clusters = parse_num(v)?,
            "n_subpaths" => self.scenario.n_subpaths = parse_num(v)?,
            "xpr_mean_db" => self.scenario.xpr_db.0 = parse_f64(v)?,
            "xpr_std_db" => self.scenario.xpr_db.1 = parse_f64(v)?,
            "mean_azimuth_min_deg" => self.scenario.mean_azimuth.lo = deg(v)?,
            "mean_azimuth_max_deg" => self.scenario.mean_azimuth.hi = deg(v)?,
            "mean_zenith_min_deg" => self.scenario.mean_zenith.lo = deg(v)?,
            "mean_zenith_max_deg" => self.scenario.mean_zenith.hi = deg(v)?,
            "bs_azimuth_spread_min_deg" => self.scenario.bs_azimuth_spread.lo = deg(v)?,
            "bs_azimuth_spread_max_deg" => self.scenario.bs_azimuth_spread.hi = deg(v)?,
            "bs_zenith_spread_min_deg" => self.scenario.bs_zenith_spread.lo = deg(v)?,
            "bs_zenith_spread_max_deg" => self.scenario.bs_zenith_spread.hi = deg(v)?,
            "ue_azimuth_spread_min_deg" => self.scenario.ue_azimuth_spread.lo = deg(v)?,
            "ue_azimuth_spread_max_deg" => self.scenario.ue_azimuth_spread.hi = deg(v)?,
            "ue_zenith_spread_min_deg" => self.scenario.ue_zenith_spread.lo = deg(v)?,
            "ue_zenith_spread_max_deg" => self.scenario.ue_zenith_spread.hi = deg(v)?,
            "ue_rotation_max_deg" => self.scenario.ue_rotation_max = deg(v)?,
            "ue_pattern" => {
                self.scenario.ue_base = match v {
                    "isotropic" => UeBasePattern::IsotropicVertical,
                    "dipole" => UeBasePattern::ShortDipole,
                    _ => return Err(format!("unknown UE pattern `{v}` (expected isotropic or dipole)")),
                }
            }
            "eapm_max_iterations" => self.eapm.max_iterations = parse_num(v)?,
            "eapm_tolerance" => self.eapm.residual_tolerance = parse_f64(v)?,
            "eapm_extrapolate" => self.eapm.extrapolate = parse_bool(v)?,
            "truncation" => self.truncation = Some(parse_f64(v)?),
            "vectorization" => {
                self.mode = VectorizationMode::parse(v).ok_or_else(|| format!("unknown vectorization `{v}` (expected structured or full)"))?
            }
            "out" => self.out_dir = PathBuf::from(v),
            "operator" => self.operator = Some(PathBuf::from(v)),
            "threads" => self.threads = Some(parse_num(v)?),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { line: 0, message: m });
        if !(self.ul_hz > 0.0 && self.ul_hz.is_finite() && self.dl_hz > 0.0 && self.dl_hz.is_finite()) {
            return bad("carrier frequencies must be positive".into());
        }
        if self.n_vertical == 0 || self.n_horizontal == 0 {
            return bad("array dimensions must be positive".into());
        }
        if self.spacing.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("element spacing must be positive".into());
        }
        if self.n_snapshots == 0 || self.n_trials == 0 {
            return bad("snapshot and trial counts must be at least 1".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad("SNR must be a number or inf".into());
        }
        if self.threads == Some(0) {
            return bad("thread count must be at least 1".into());
        }
        if self.mode == VectorizationMode::Full && self.n_vertical * self.n_horizontal > 8 {
            return bad("full vectorization is limited to arrays of at most 8 elements".into());
        }
        let wrap = |e: Error| Error::Config { line: 0, message: e.to_string() };
        self.scenario.validate().map_err(wrap)?;
        self.eapm.validate().map_err(wrap)?;
        if let Some(wb) = &self.wideband {
            wb.validate().map_err(wrap)?;
            if wb.impulse_length < self.scenario.n_clusters {
                return bad(format!(
                    "impulse length {} cannot hold {} distinct cluster delays",
                    wb.impulse_length, self.scenario.n_clusters
                ));
            }
        }
        if self.truncation.is_some_and(|t| !(t > 0.0 && t < 1.0)) {
            return bad("truncation must lie in (0, 1)".into());
        }
        Ok(())
    }

    /// Truncation used for the conversion operator. Noisy estimates put
    /// energy along the weakest Gram directions, which the minimum-norm
    /// lift amplifies by `λ^{-1/2}`; cutting at [`NOISY_TRUNCATION`] keeps
    /// both algorithms stable. Exact inputs keep the library default.
    pub fn effective_truncation(&self) -> f64 {
        self.truncation.unwrap_or(if self.snr_db.is_infinite() {
            DEFAULT_TRUNCATION
        } else {
            NOISY_TRUNCATION
        })
    }

    pub fn geometry(&self) -> Result<UpaGeometry> {
        let d = self.spacing.unwrap_or(SPEED_OF_LIGHT / self.ul_hz / 2.0);
        let pattern = self.element.map_or(ElementPattern::Isotropic, ElementPattern::Sector);
        UpaGeometry::new(self.n_vertical, self.n_horizontal, d, pattern)
    }

    pub fn working_grid(&self) -> Result<AngularGrid> {
        AngularGrid::uniform_with_measure(self.grid.0, self.grid.1, self.measure)
    }

    pub fn truth_grid(&self) -> Result<AngularGrid> {
        AngularGrid::uniform_with_measure(self.truth_grid.0, self.truth_grid.1, self.measure)
    }

    pub fn runs(&self, m: MethodTag) -> bool {
        self.methods.contains(&m)
    }
}
