//! Directions on the angular domain, quadrature grids, the cross-polarized
//! uniform planar array (UPA) and the BS/UE radiation patterns.
//!
//! Conventions:
//!
//! - A [`Direction`] is an (azimuth, zenith) pair in `[-π, π] × [0, π]`.
//! - The propagation unit vector is `(sin z cos a, sin z sin a, cos z)`.
//! - The array lies in the y–z plane with boresight along +x; vertical
//!   element rows run along z, horizontal columns along y.
//! - Array phases are referenced to the centroid of the element positions.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::{CVector, Complex, SPEED_OF_LIGHT};

/// A point of the angular domain `[-π, π] × [0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth: f64,
    zenith: f64,
}

impl Direction {
    /// Array boresight: azimuth 0, zenith π/2.
    pub const BORESIGHT: Direction = Direction {
        azimuth: 0.0,
        zenith: FRAC_PI_2,
    };

    /// Builds a direction; values outside the domain are rejected, not wrapped.
    pub fn new(azimuth: f64, zenith: f64) -> Result<Self> {
        if !(-PI..=PI).contains(&azimuth) || !(0.0..=PI).contains(&zenith) {
            return Err(Error::InvalidDirection { azimuth, zenith });
        }
        Ok(Self { azimuth, zenith })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn zenith(&self) -> f64 {
        self.zenith
    }

    /// Propagation unit vector.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (sz, cz) = self.zenith.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [sz * ca, sz * sa, cz]
    }
}

/// Measure used for the quadrature weights of an [`AngularGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Plain product Lebesgue measure `da dz` (total mass 2π²).
    Product,
    /// Solid angle `sin z da dz` (total mass ≈ 4π).
    SolidAngle,
}

/// Weighted quadrature discretization of the angular domain.
#[derive(Debug, Clone)]
pub struct AngularGrid {
    nodes: Vec<Direction>,
    weights: Vec<f64>,
    shape: Option<(usize, usize)>,
    measure: Measure,
    fingerprint: u64,
}

impl AngularGrid {
    /// Uniform midpoint grid with `n_azimuth × n_zenith` nodes and uniform
    /// product-measure weights. Nodes are ordered zenith-major: node
    /// `j * n_azimuth + i` has azimuth index `i` and zenith index `j`.
    pub fn uniform(n_azimuth: usize, n_zenith: usize) -> Result<Self> {
        Self::uniform_with_measure(n_azimuth, n_zenith, Measure::Product)
    }

    pub fn uniform_with_measure(n_azimuth: usize, n_zenith: usize, measure: Measure) -> Result<Self> {
        if n_azimuth == 0 || n_zenith == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid dimensions must be positive, got {n_azimuth}x{n_zenith}"
            )));
        }
        let da = 2.0 * PI / n_azimuth as f64;
        let dz = PI / n_zenith as f64;
        let mut nodes = Vec::with_capacity(n_azimuth * n_zenith);
        let mut weights = Vec::with_capacity(n_azimuth * n_zenith);
        for j in 0..n_zenith {
            let z = (j as f64 + 0.5) * dz;
            let w = match measure {
                Measure::Product => da * dz,
                Measure::SolidAngle => da * dz * z.sin(),
            };
            for i in 0..n_azimuth {
                let a = -PI + (i as f64 + 0.5) * da;
                nodes.push(Direction { azimuth: a, zenith: z });
                weights.push(w);
            }
        }
        let mut grid = Self::from_parts(nodes, weights, measure)?;
        grid.shape = Some((n_azimuth, n_zenith));
        Ok(grid)
    }

    /// Arbitrary node set with positive product-measure weights.
    pub fn from_nodes(nodes: Vec<Direction>, weights: Vec<f64>) -> Result<Self> {
        Self::from_parts(nodes, weights, Measure::Product)
    }

    fn from_parts(nodes: Vec<Direction>, weights: Vec<f64>, measure: Measure) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("angular grid"));
        }
        if nodes.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: nodes.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid weight {w} is not positive")));
        }
        let mut keys: Vec<(u64, u64)> = nodes
            .iter()
            .map(|d| (d.azimuth.to_bits(), d.zenith.to_bits()))
            .collect();
        keys.sort_unstable();
        if keys.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("grid nodes are not distinct".into()));
        }
        let mut hasher = Fnv64::new();
        for (d, w) in nodes.iter().zip(&weights) {
            hasher.write_f64(d.azimuth);
            hasher.write_f64(d.zenith);
            hasher.write_f64(*w);
        }
        Ok(Self {
            nodes,
            weights,
            shape: None,
            measure,
            fingerprint: hasher.finish(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Direction] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `(n_azimuth, n_zenith)` for uniform grids.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    /// Stable hash of nodes and weights; used to detect grid mismatches.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Index of the node closest to `dir` (Euclidean in angle coordinates).
    pub fn nearest(&self, dir: &Direction) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (q, n) in self.nodes.iter().enumerate() {
            let d = (n.azimuth - dir.azimuth).powi(2) + (n.zenith - dir.zenith).powi(2);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }
}

/// 64-bit FNV-1a, used for provenance fingerprints that must be stable
/// across builds and platforms.
#[derive(Debug, Clone)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_f64(&mut self, x: f64) {
        self.write(&x.to_le_bytes());
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

/// Parabolic-in-dB sector pattern of the 3D-UMa BS antenna element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorPattern {
    pub max_gain_dbi: f64,
    pub vertical_beamwidth_deg: f64,
    pub horizontal_beamwidth_deg: f64,
    pub side_lobe_db: f64,
    pub front_back_db: f64,
}

impl Default for SectorPattern {
    fn default() -> Self {
        Self {
            max_gain_dbi: 8.0,
            vertical_beamwidth_deg: 65.0,
            horizontal_beamwidth_deg: 65.0,
            side_lobe_db: 30.0,
            front_back_db: 30.0,
        }
    }
}

impl SectorPattern {
    /// Attenuation relative to the boresight gain, in dB (nonnegative).
    pub fn attenuation_db(&self, dir: &Direction) -> f64 {
        let z = dir.zenith.to_degrees();
        let a = dir.azimuth.to_degrees();
        let vertical = (12.0 * ((z - 90.0) / self.vertical_beamwidth_deg).powi(2)).min(self.side_lobe_db);
        let horizontal = (12.0 * (a / self.horizontal_beamwidth_deg).powi(2)).min(self.front_back_db);
        (vertical + horizontal).min(self.front_back_db)
    }

    pub fn power_db(&self, dir: &Direction) -> f64 {
        self.max_gain_dbi - self.attenuation_db(dir)
    }
}

/// BS element power pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementPattern {
    /// Unit gain in every direction.
    Isotropic,
    Sector(SectorPattern),
}

impl Default for ElementPattern {
    fn default() -> Self {
        ElementPattern::Sector(SectorPattern::default())
    }
}

impl ElementPattern {
    /// Linear power gain.
    pub fn power(&self, dir: &Direction) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::Sector(p) => 10f64.powf(p.power_db(dir) / 10.0),
        }
    }

    /// Amplitude of the field pattern, `sqrt(power)`.
    pub fn amplitude(&self, dir: &Direction) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::Sector(p) => 10f64.powf(p.power_db(dir) / 20.0),
        }
    }
}

/// Vertical and horizontal field components of one slanted BS element.
///
/// `f_V = sqrt(P) cos ζ`, `f_H = sqrt(P) sin ζ` with slant angle `ζ`.
pub fn bs_element_field(dir: &Direction, slant: f64, pattern: &ElementPattern) -> (Complex, Complex) {
    let amp = pattern.amplitude(dir);
    let (s, c) = slant.sin_cos();
    (Complex::new(amp * c, 0.0), Complex::new(amp * s, 0.0))
}

/// Cross-polarized uniform planar array.
///
/// Antenna `(u, v, k)` (zero-based row, column, slant) sits at vector index
/// `k·N_V·N_H + u·N_H + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpaGeometry {
    n_vertical: usize,
    n_horizontal: usize,
    spacing: f64,
    slants: [f64; 2],
    pattern: ElementPattern,
}

impl UpaGeometry {
    pub fn new(n_vertical: usize, n_horizontal: usize, spacing: f64, pattern: ElementPattern) -> Result<Self> {
        Self::with_slants(n_vertical, n_horizontal, spacing, [FRAC_PI_4, -FRAC_PI_4], pattern)
    }

    pub fn with_slants(
        n_vertical: usize,
        n_horizontal: usize,
        spacing: f64,
        slants: [f64; 2],
        pattern: ElementPattern,
    ) -> Result<Self> {
        if n_vertical == 0 || n_horizontal == 0 {
            return Err(Error::InvalidParameter(format!(
                "array dimensions must be positive, got {n_vertical}x{n_horizontal}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidParameter(format!("spacing {spacing} must be positive")));
        }
        Ok(Self {
            n_vertical,
            n_horizontal,
            spacing,
            slants,
            pattern,
        })
    }

    /// The 8×4 cross-polarized UPA with half-wavelength spacing at `carrier_hz`
    /// and the default sector pattern.
    pub fn half_wavelength(n_vertical: usize, n_horizontal: usize, carrier_hz: f64) -> Result<Self> {
        Self::new(
            n_vertical,
            n_horizontal,
            SPEED_OF_LIGHT / carrier_hz / 2.0,
            ElementPattern::default(),
        )
    }

    pub fn n_vertical(&self) -> usize {
        self.n_vertical
    }

    pub fn n_horizontal(&self) -> usize {
        self.n_horizontal
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn slants(&self) -> [f64; 2] {
        self.slants
    }

    pub fn pattern(&self) -> &ElementPattern {
        &self.pattern
    }

    /// Number of element positions, `N_V·N_H`.
    pub fn n_elements(&self) -> usize {
        self.n_vertical * self.n_horizontal
    }

    /// Number of antennas, `2·N_V·N_H`.
    pub fn n_antennas(&self) -> usize {
        2 * self.n_elements()
    }

    pub fn antenna_index(&self, u: usize, v: usize, k: usize) -> usize {
        debug_assert!(u < self.n_vertical && v < self.n_horizontal && k < 2);
        k * self.n_elements() + u * self.n_horizontal + v
    }

    /// Stable fingerprint of all geometry parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.n_vertical as u64);
        h.write_u64(self.n_horizontal as u64);
        h.write_f64(self.spacing);
        h.write_f64(self.slants[0]);
        h.write_f64(self.slants[1]);
        match self.pattern {
            ElementPattern::Isotropic => h.write(b"isotropic"),
            ElementPattern::Sector(p) => {
                h.write(b"sector");
                for x in [
                    p.max_gain_dbi,
                    p.vertical_beamwidth_deg,
                    p.horizontal_beamwidth_deg,
                    p.side_lobe_db,
                    p.front_back_db,
                ] {
                    h.write_f64(x);
                }
            }
        }
        h.finish()
    }
}

/// Element positions in meters, in vector-index order `u·N_H + v`.
///
/// Element `(u, v)` sits at `(0, v·d, u·d)`; the two slanted antennas of an
/// element share its position.
pub fn element_positions(geom: &UpaGeometry) -> Vec<[f64; 3]> {
    let d = geom.spacing;
    let mut out = Vec::with_capacity(geom.n_elements());
    for u in 0..geom.n_vertical {
        for v in 0..geom.n_horizontal {
            out.push([0.0, v as f64 * d, u as f64 * d]);
        }
    }
    out
}

/// Dual-polarized array response: the two columns of `A(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringResponse {
    pub a_vertical: CVector,
    pub a_horizontal: CVector,
}

/// Array geometry bound to one carrier frequency, with centroid-relative
/// element offsets precomputed.
#[derive(Debug, Clone)]
pub struct ArrayManifold {
    geom: UpaGeometry,
    carrier_hz: f64,
    wavenumber: f64,
    offsets: Vec<[f64; 3]>,
}

impl ArrayManifold {
    pub fn new(geom: &UpaGeometry, carrier_hz: f64) -> Result<Self> {
        if !(carrier_hz > 0.0) || !carrier_hz.is_finite() {
            return Err(Error::InvalidParameter(format!("carrier frequency {carrier_hz} must be positive")));
        }
        let pos = element_positions(geom);
        let n = pos.len() as f64;
        let mut centroid = [0.0; 3];
        for p in &pos {
            for i in 0..3 {
                centroid[i] += p[i] / n;
            }
        }
        let offsets = pos
            .iter()
            .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
            .collect();
        Ok(Self {
            geom: geom.clone(),
            carrier_hz,
            wavenumber: 2.0 * PI * carrier_hz / SPEED_OF_LIGHT,
            offsets,
        })
    }

    pub fn geometry(&self) -> &UpaGeometry {
        &self.geom
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    /// Writes the per-element phase factors `e^{j k ⟨p_n, u⟩}` into `out`
    /// (length `N_V·N_H`).
    pub fn element_phasors(&self, dir: &Direction, out: &mut [Complex]) {
        let u = dir.unit_vector();
        for (o, p) in out.iter_mut().zip(&self.offsets) {
            let phase = self.wavenumber * (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]);
            let (s, c) = phase.sin_cos();
            *o = Complex::new(c, s);
        }
    }

    /// Field components `[(f_V, f_H) of slant 0, (f_V, f_H) of slant 1]`.
    /// They are real for the supported patterns.
    pub fn slant_fields(&self, dir: &Direction) -> [(f64, f64); 2] {
        let amp = self.geom.pattern.amplitude(dir);
        let f = |slant: f64| {
            let (s, c) = slant.sin_cos();
            (amp * c, amp * s)
        };
        [f(self.geom.slants[0]), f(self.geom.slants[1])]
    }

    pub fn response(&self, dir: &Direction) -> SteeringResponse {
        let ne = self.geom.n_elements();
        let mut ph = vec![Complex::new(0.0, 0.0); ne];
        self.element_phasors(dir, &mut ph);
        let fields = self.slant_fields(dir);
        let mut a_v = CVector::zeros(2 * ne);
        let mut a_h = CVector::zeros(2 * ne);
        for (k, (fv, fh)) in fields.iter().enumerate() {
            for (n, p) in ph.iter().enumerate() {
                a_v[k * ne + n] = p * *fv;
                a_h[k * ne + n] = p * *fh;
            }
        }
        SteeringResponse {
            a_vertical: a_v,
            a_horizontal: a_h,
        }
    }
}

/// Dual-polarized response of the array at `carrier_hz` toward `dir`.
pub fn array_response(geom: &UpaGeometry, carrier_hz: f64, dir: &Direction) -> Result<SteeringResponse> {
    Ok(ArrayManifold::new(geom, carrier_hz)?.response(dir))
}

/// Unrotated, vertically polarized UE antenna pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UeBasePattern {
    /// `F'_θ = 1`, `F'_φ = 0`.
    #[default]
    IsotropicVertical,
    /// `F'_θ = sin θ'`, `F'_φ = 0`.
    ShortDipole,
}

/// UE antenna: base pattern plus a 3D rotation given by the Euler angles
/// `(α, β, γ)` (bearing, down-tilt, slant).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UePatternConfig {
    pub rotation: [f64; 3],
    pub base: UeBasePattern,
}

/// Rotated UE pattern `(b_V, b_H)` evaluated in global coordinates.
pub fn ue_response(cfg: &UePatternConfig, dir: &Direction) -> (f64, f64) {
    let [alpha, beta, gamma] = cfg.rotation;
    let (st, ct) = dir.zenith.sin_cos();
    let (sp, cp) = (dir.azimuth - alpha).sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();

    let local_amp = match cfg.base {
        UeBasePattern::IsotropicVertical => 1.0,
        UeBasePattern::ShortDipole => {
            let cos_local = (cb * cg * ct + (sb * cg * cp - sg * sp) * st).clamp(-1.0, 1.0);
            (1.0 - cos_local * cos_local).sqrt()
        }
    };

    let re = sg * ct * sp + cg * (cb * st - sb * ct * cp);
    let im = sg * cp + sb * cg * sp;
    let psi = if re.hypot(im) < 1e-15 { 0.0 } else { im.atan2(re) };
    let (s, c) = psi.sin_cos();
    (c * local_amp, s * local_amp)
}
