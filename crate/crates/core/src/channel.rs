//! Clustered 3D dual-polarized multipath channels: scenario drawing,
//! per-snapshot subpath realizations, narrow-band and OFDM channel
//! synthesis, and the ground-truth polarized angular power spectra.

use std::f64::consts::{FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI, SQRT_2};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::covariance::PolarizedAps;
use crate::error::{Error, Result};
use crate::geometry::{ue_response, AngularGrid, ArrayManifold, Direction, UeBasePattern, UePatternConfig};
use crate::{CMatrix, CVector, Complex};

/// Closed interval `[lo, hi]` used for uniform parameter draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn degrees(lo: f64, hi: f64) -> Self {
        Self::new(lo.to_radians(), hi.to_radians())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi == self.lo {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidParameter(format!("{name}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

/// Distribution of the slow (per-window) scenario parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_clusters: usize,
    pub n_subpaths: usize,
    /// Cluster mean azimuth, shared range for BS and UE sides.
    pub mean_azimuth: Range,
    /// Cluster mean zenith, shared range for BS and UE sides.
    pub mean_zenith: Range,
    pub bs_azimuth_spread: Range,
    pub bs_zenith_spread: Range,
    pub ue_azimuth_spread: Range,
    pub ue_zenith_spread: Range,
    /// Log-normal XPR parameters `(μ, σ)` in dB.
    pub xpr_db: (f64, f64),
    /// Upper bound of the uniform UE rotation angles.
    pub ue_rotation_max: f64,
    pub ue_base: UeBasePattern,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_clusters: 5,
            n_subpaths: 20,
            mean_azimuth: Range::new(-2.0 * FRAC_PI_3, 2.0 * FRAC_PI_3),
            mean_zenith: Range::new(FRAC_PI_4, 3.0 * FRAC_PI_4),
            bs_azimuth_spread: Range::degrees(3.0, 5.0),
            bs_zenith_spread: Range::degrees(1.0, 3.0),
            ue_azimuth_spread: Range::degrees(5.0, 10.0),
            ue_zenith_spread: Range::degrees(3.0, 5.0),
            xpr_db: (7.0, 3.0),
            ue_rotation_max: FRAC_PI_6,
            ue_base: UeBasePattern::IsotropicVertical,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 {
            return Err(Error::InvalidParameter("cluster count must be at least 1".into()));
        }
        if self.n_subpaths == 0 {
            return Err(Error::InvalidParameter("subpath count must be at least 1".into()));
        }
        self.mean_azimuth.validate("mean azimuth")?;
        self.mean_zenith.validate("mean zenith")?;
        if self.mean_azimuth.lo < -PI || self.mean_azimuth.hi > PI || self.mean_zenith.lo < 0.0 || self.mean_zenith.hi > PI {
            return Err(Error::InvalidParameter("cluster mean ranges must lie inside the angular domain".into()));
        }
        for (r, name) in [
            (&self.bs_azimuth_spread, "BS azimuth spread"),
            (&self.bs_zenith_spread, "BS zenith spread"),
            (&self.ue_azimuth_spread, "UE azimuth spread"),
            (&self.ue_zenith_spread, "UE zenith spread"),
        ] {
            r.validate(name)?;
            if r.lo <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(self.xpr_db.0.is_finite() && self.xpr_db.1.is_finite() && self.xpr_db.1 >= 0.0) {
            return Err(Error::InvalidParameter("XPR parameters must be finite with nonnegative spread".into()));
        }
        if !(self.ue_rotation_max.is_finite() && self.ue_rotation_max >= 0.0) {
            return Err(Error::InvalidParameter("UE rotation bound must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Slow parameters of one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    /// Average power `α_c`.
    pub power: f64,
    pub bs_mean: Direction,
    /// `(σ_azimuth, σ_zenith)` in radians at the BS.
    pub bs_spread: (f64, f64),
    pub ue_mean: Direction,
    pub ue_spread: (f64, f64),
    /// Delay tap `l_c` (wide-band only).
    pub delay_tap: usize,
}

/// One draw of the slow parameters, fixed over a stationarity window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDraw {
    pub clusters: Vec<ClusterParams>,
    pub n_subpaths: usize,
    pub xpr_db: (f64, f64),
    pub ue: UePatternConfig,
}

pub fn draw_scenario<R: Rng + ?Sized>(rng: &mut R, cfg: &ScenarioConfig) -> Result<ScenarioDraw> {
    cfg.validate()?;
    let mut clusters = Vec::with_capacity(cfg.n_clusters);
    for _ in 0..cfg.n_clusters {
        let power = rng.random::<f64>();
        let bs_mean = Direction::new(cfg.mean_azimuth.sample(rng), cfg.mean_zenith.sample(rng))?;
        let ue_mean = Direction::new(cfg.mean_azimuth.sample(rng), cfg.mean_zenith.sample(rng))?;
        let bs_spread = (cfg.bs_azimuth_spread.sample(rng), cfg.bs_zenith_spread.sample(rng));
        let ue_spread = (cfg.ue_azimuth_spread.sample(rng), cfg.ue_zenith_spread.sample(rng));
        clusters.push(ClusterParams {
            power,
            bs_mean,
            bs_spread,
            ue_mean,
            ue_spread,
            delay_tap: 0,
        });
    }
    let total: f64 = clusters.iter().map(|c| c.power).sum();
    if total > 0.0 {
        for c in &mut clusters {
            c.power /= total;
        }
    } else {
        // All draws were exactly zero; fall back to equal powers.
        let p = 1.0 / cfg.n_clusters as f64;
        clusters.iter_mut().for_each(|c| c.power = p);
    }
    if cfg.n_clusters == 1 {
        clusters[0].power = 1.0;
    }
    let rot = Range::new(0.0, cfg.ue_rotation_max);
    let ue = UePatternConfig {
        rotation: [rot.sample(rng), rot.sample(rng), rot.sample(rng)],
        base: cfg.ue_base,
    };
    Ok(ScenarioDraw {
        clusters,
        n_subpaths: cfg.n_subpaths,
        xpr_db: cfg.xpr_db,
        ue,
    })
}

/// OFDM tapped-delay-line parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WidebandConfig {
    pub n_subcarriers: usize,
    pub impulse_length: usize,
}

impl Default for WidebandConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            impulse_length: 16,
        }
    }
}

impl WidebandConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subcarriers == 0 || self.impulse_length == 0 || self.impulse_length > self.n_subcarriers {
            return Err(Error::InvalidParameter(format!(
                "wide-band config needs 1 <= impulse length ({}) <= subcarriers ({})",
                self.impulse_length, self.n_subcarriers
            )));
        }
        Ok(())
    }
}

impl ScenarioDraw {
    /// Draws distinct delay taps from `{0, …, L−1}`, one per cluster.
    pub fn assign_delay_taps<R: Rng + ?Sized>(&mut self, rng: &mut R, wb: &WidebandConfig) -> Result<()> {
        wb.validate()?;
        if wb.impulse_length < self.clusters.len() {
            return Err(Error::InvalidParameter(format!(
                "impulse length {} cannot hold {} distinct cluster delays",
                wb.impulse_length,
                self.clusters.len()
            )));
        }
        let taps = sample(rng, wb.impulse_length, self.clusters.len());
        for (c, l) in self.clusters.iter_mut().zip(taps.iter()) {
            c.delay_tap = l;
        }
        Ok(())
    }

    pub fn total_power(&self) -> f64 {
        self.clusters.iter().map(|c| c.power).sum()
    }
}

/// Which carrier's phase tuple a synthesis uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Uplink,
    Downlink,
}

/// Fast parameters of one subpath. Directions and XPR are shared by both
/// links; the phase tuples `(φ_VV, φ_VH, φ_HV, φ_HH)` are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct Subpath {
    pub dod: Direction,
    pub doa: Direction,
    pub xpr: f64,
    pub phases_ul: [f64; 4],
    pub phases_dl: [f64; 4],
}

impl Subpath {
    pub fn phases(&self, link: Link) -> &[f64; 4] {
        match link {
            Link::Uplink => &self.phases_ul,
            Link::Downlink => &self.phases_dl,
        }
    }
}

/// All subpaths of one block-fading realization, cluster-major
/// (`c · N_p + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubpathRealization {
    pub subpaths: Vec<Subpath>,
    pub n_subpaths: usize,
}

impl SubpathRealization {
    pub fn cluster(&self, c: usize) -> &[Subpath] {
        &self.subpaths[c * self.n_subpaths..(c + 1) * self.n_subpaths]
    }
}

/// Gaussian direction about `mean`, redrawn until it falls inside the domain.
fn gaussian_direction<R: Rng + ?Sized>(rng: &mut R, mean: &Direction, spread: (f64, f64)) -> Direction {
    loop {
        let a = mean.azimuth() + spread.0 * rng.sample::<f64, _>(StandardNormal);
        let z = mean.zenith() + spread.1 * rng.sample::<f64, _>(StandardNormal);
        if let Ok(d) = Direction::new(a, z) {
            return d;
        }
    }
}

fn uniform_phases<R: Rng + ?Sized>(rng: &mut R) -> [f64; 4] {
    std::array::from_fn(|_| rng.random_range(-PI..=PI))
}

/// Draws `K = 10^{X/10}` with `X ~ N(μ, σ²)` in dB.
pub fn draw_xpr<R: Rng + ?Sized>(rng: &mut R, xpr_db: (f64, f64)) -> f64 {
    let x = xpr_db.0 + xpr_db.1 * rng.sample::<f64, _>(StandardNormal);
    10f64.powf(x / 10.0)
}

pub fn draw_subpaths<R: Rng + ?Sized>(rng: &mut R, scenario: &ScenarioDraw) -> SubpathRealization {
    let mut subpaths = Vec::with_capacity(scenario.clusters.len() * scenario.n_subpaths);
    for c in &scenario.clusters {
        for _ in 0..scenario.n_subpaths {
            let dod = gaussian_direction(rng, &c.bs_mean, c.bs_spread);
            let doa = gaussian_direction(rng, &c.ue_mean, c.ue_spread);
            let xpr = draw_xpr(rng, scenario.xpr_db);
            let phases_ul = uniform_phases(rng);
            let phases_dl = uniform_phases(rng);
            subpaths.push(Subpath {
                dod,
                doa,
                xpr,
                phases_ul,
                phases_dl,
            });
        }
    }
    SubpathRealization {
        subpaths,
        n_subpaths: scenario.n_subpaths,
    }
}

fn check_realization(sub: &SubpathRealization, scenario: &ScenarioDraw) -> Result<()> {
    let expected = scenario.clusters.len() * scenario.n_subpaths;
    if sub.n_subpaths != scenario.n_subpaths || sub.subpaths.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: sub.subpaths.len(),
        });
    }
    Ok(())
}

/// Per-cluster channel vectors `h_c`.
pub fn cluster_channels(
    sub: &SubpathRealization,
    scenario: &ScenarioDraw,
    manifold: &ArrayManifold,
    link: Link,
) -> Result<Vec<CVector>> {
    check_realization(sub, scenario)?;
    let ne = manifold.geometry().n_elements();
    let mut ph = vec![Complex::new(0.0, 0.0); ne];
    let mut out = Vec::with_capacity(scenario.clusters.len());
    for (c, cluster) in scenario.clusters.iter().enumerate() {
        let scale = (cluster.power / scenario.n_subpaths as f64).sqrt();
        let mut h = CVector::zeros(2 * ne);
        for s in sub.cluster(c) {
            let (bv, bh) = ue_response(&scenario.ue, &s.doa);
            let [vv, vh, hv, hh] = s.phases(link).map(|p| Complex::from_polar(1.0, p));
            let cross = 1.0 / s.xpr.sqrt();
            // A · M · B^T with B = (b_V, b_H) real.
            let c_v = vv * bv + vh * (cross * bh);
            let c_h = hv * (cross * bv) + hh * bh;
            manifold.element_phasors(&s.dod, &mut ph);
            let fields = manifold.slant_fields(&s.dod);
            for (k, (fv, fh)) in fields.iter().enumerate() {
                let coef = (c_v * *fv + c_h * *fh) * scale;
                for (n, p) in ph.iter().enumerate() {
                    h[k * ne + n] += p * coef;
                }
            }
        }
        out.push(h);
    }
    Ok(out)
}

/// Narrow-band channel `h = Σ_c h_c`.
pub fn synthesize_channel(
    sub: &SubpathRealization,
    scenario: &ScenarioDraw,
    manifold: &ArrayManifold,
    link: Link,
) -> Result<CVector> {
    let parts = cluster_channels(sub, scenario, manifold, link)?;
    let mut h = CVector::zeros(2 * manifold.geometry().n_elements());
    for p in &parts {
        h += p;
    }
    Ok(h)
}

/// Channel at subcarrier `k`: `Σ_c h_c e^{−j2πk l_c / N_s}`.
pub fn ofdm_subcarrier(parts: &[CVector], scenario: &ScenarioDraw, wb: &WidebandConfig, k: usize) -> CVector {
    let n = parts.first().map_or(0, |p| p.len());
    let mut h = CVector::zeros(n);
    for (p, c) in parts.iter().zip(&scenario.clusters) {
        let lag = ((k as u128 * c.delay_tap as u128) % wb.n_subcarriers as u128) as f64;
        let phase = -2.0 * PI * lag / wb.n_subcarriers as f64;
        h.axpy(Complex::from_polar(1.0, phase), p, Complex::new(1.0, 0.0));
    }
    h
}

/// Wide-band channel: `N × N_s` matrix whose column `k` is the channel at
/// subcarrier `k`.
pub fn synthesize_ofdm_channel(
    sub: &SubpathRealization,
    scenario: &ScenarioDraw,
    manifold: &ArrayManifold,
    link: Link,
    wb: &WidebandConfig,
) -> Result<CMatrix> {
    wb.validate()?;
    if let Some(c) = scenario.clusters.iter().find(|c| c.delay_tap >= wb.impulse_length) {
        return Err(Error::InvalidParameter(format!(
            "delay tap {} exceeds impulse length {}",
            c.delay_tap, wb.impulse_length
        )));
    }
    let parts = cluster_channels(sub, scenario, manifold, link)?;
    let n = 2 * manifold.geometry().n_elements();
    let mut out = CMatrix::zeros(n, wb.n_subcarriers);
    for k in 0..wb.n_subcarriers {
        out.set_column(k, &ofdm_subcarrier(&parts, scenario, wb, k));
    }
    Ok(out)
}

/// Closed form `E[1/K] = E[10^{−X/10}] = exp(−aμ + a²σ²/2)`, `a = ln(10)/10`.
pub fn mean_inverse_xpr(xpr_db: (f64, f64)) -> f64 {
    let a = std::f64::consts::LN_10 / 10.0;
    (-a * xpr_db.0 + 0.5 * a * a * xpr_db.1 * xpr_db.1).exp()
}

/// Monte Carlo estimate of `E[1/K]` from `n` draws.
pub fn mean_inverse_xpr_mc<R: Rng + ?Sized>(rng: &mut R, xpr_db: (f64, f64), n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Empty("Monte Carlo sample"));
    }
    let dist = Normal::new(xpr_db.0, xpr_db.1).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let sum: f64 = (0..n).map(|_| 10f64.powf(-dist.sample(rng) / 10.0)).sum();
    Ok(sum / n as f64)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Probability that a `N(μ, σ²)` variable lands in `[lo, hi]`, computed on
/// the tail nearer to the interval to avoid cancellation.
fn normal_interval_mass(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    if sigma == 0.0 {
        return if mu >= lo && mu < hi { 1.0 } else { 0.0 };
    }
    let (a, b) = ((lo - mu) / sigma, (hi - mu) / sigma);
    if a > 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
    .max(0.0)
}

/// Beyond this many standard deviations a cell is treated as empty.
const TAIL_CUTOFF_SIGMAS: f64 = 8.0;

/// Expected `(b_V², b_H²)` under the UE-side truncated Gaussian of one
/// cluster, by midpoint quadrature over ±8σ clipped to the domain.
fn ue_pattern_moments(ue: &UePatternConfig, mean: &Direction, spread: (f64, f64)) -> (f64, f64) {
    const NODES: usize = 96;
    let axis = |mu: f64, sigma: f64, lo: f64, hi: f64| -> Vec<(f64, f64)> {
        if sigma == 0.0 {
            return vec![(mu, 1.0)];
        }
        let (l, h) = ((mu - 8.0 * sigma).max(lo), (mu + 8.0 * sigma).min(hi));
        let step = (h - l) / NODES as f64;
        (0..NODES)
            .map(|i| {
                let x = l + (i as f64 + 0.5) * step;
                let t = (x - mu) / sigma;
                (x, (-0.5 * t * t).exp())
            })
            .collect()
    };
    let az = axis(mean.azimuth(), spread.0, -PI, PI);
    let zen = axis(mean.zenith(), spread.1, 0.0, PI);
    let (mut sv, mut sh, mut total) = (0.0, 0.0, 0.0);
    for &(z, wz) in &zen {
        for &(a, wa) in &az {
            let w = wa * wz;
            let (bv, bh) = ue_response(ue, &Direction::new(a, z).expect("quadrature node inside domain"));
            sv += w * bv * bv;
            sh += w * bh * bh;
            total += w;
        }
    }
    (sv / total, sh / total)
}

/// Probability mass of the BS-side truncated Gaussian of one cluster in
/// every grid cell (or, on grids without cells, density times weight).
fn bs_cell_masses(grid: &AngularGrid, mean: &Direction, spread: (f64, f64)) -> Vec<f64> {
    let (mu_a, mu_z) = (mean.azimuth(), mean.zenith());
    let (s_a, s_z) = spread;
    let norm_a = normal_interval_mass(mu_a, s_a, -PI, PI + f64::EPSILON);
    let norm_z = normal_interval_mass(mu_z, s_z, 0.0, PI + f64::EPSILON);
    let far = |x: f64, mu: f64, s: f64, half: f64| (x - mu).abs() - half > TAIL_CUTOFF_SIGMAS * s;

    if let Some((n_az, n_zen)) = grid.shape() {
        let da = 2.0 * PI / n_az as f64;
        let dz = PI / n_zen as f64;
        let pa: Vec<f64> = (0..n_az)
            .map(|i| {
                let lo = -PI + i as f64 * da;
                if far(lo + 0.5 * da, mu_a, s_a, 0.5 * da) {
                    0.0
                } else {
                    normal_interval_mass(mu_a, s_a, lo, lo + da) / norm_a
                }
            })
            .collect();
        let pz: Vec<f64> = (0..n_zen)
            .map(|j| {
                let lo = j as f64 * dz;
                if far(lo + 0.5 * dz, mu_z, s_z, 0.5 * dz) {
                    0.0
                } else {
                    normal_interval_mass(mu_z, s_z, lo, lo + dz) / norm_z
                }
            })
            .collect();
        let mut out = Vec::with_capacity(n_az * n_zen);
        for z in &pz {
            for a in &pa {
                out.push(z * a);
            }
        }
        return out;
    }

    // Point sampling of the product-measure density.
    let pdf = |x: f64, mu: f64, s: f64| {
        let t = (x - mu) / s;
        (-0.5 * t * t).exp() / (s * (2.0 * PI).sqrt())
    };
    grid.nodes()
        .iter()
        .zip(grid.weights())
        .map(|(d, w)| {
            if s_a == 0.0 || s_z == 0.0 || far(d.azimuth(), mu_a, s_a, 0.0) || far(d.zenith(), mu_z, s_z, 0.0) {
                return 0.0;
            }
            let density = pdf(d.azimuth(), mu_a, s_a) * pdf(d.zenith(), mu_z, s_z) / (norm_a * norm_z);
            let jacobian = match grid.measure() {
                crate::geometry::Measure::Product => 1.0,
                crate::geometry::Measure::SolidAngle => d.zenith().sin(),
            };
            density * w / jacobian
        })
        .collect()
}

/// Ground-truth `(ρ_V, ρ_H)` of a scenario on `grid`:
/// `ρ_V = Σ_c α_c f_BS,c · E_UE,c[b_V² + b_H²/K]`, `ρ_H` symmetric.
///
/// Values are cell averages of the BS-side density (mass of the cell divided
/// by its quadrature weight), so the total power is preserved exactly even
/// for spreads below the grid resolution.
pub fn aps_from_scenario(scenario: &ScenarioDraw, grid: &AngularGrid, mean_inv_xpr: f64) -> Result<PolarizedAps> {
    if !(mean_inv_xpr >= 0.0) || !mean_inv_xpr.is_finite() {
        return Err(Error::InvalidParameter(format!("mean inverse XPR {mean_inv_xpr} must be nonnegative")));
    }
    let q = grid.len();
    let mut rho_v = vec![0.0; q];
    let mut rho_h = vec![0.0; q];
    for c in &scenario.clusters {
        let (ev, eh) = ue_pattern_moments(&scenario.ue, &c.ue_mean, c.ue_spread);
        let wv = c.power * (ev + mean_inv_xpr * eh);
        let wh = c.power * (eh + mean_inv_xpr * ev);
        for (i, m) in bs_cell_masses(grid, &c.bs_mean, c.bs_spread).into_iter().enumerate() {
            if m > 0.0 {
                let density = m / grid.weights()[i];
                rho_v[i] += wv * density;
                rho_h[i] += wh * density;
            }
        }
    }
    PolarizedAps::new(grid, rho_v, rho_h)
}
