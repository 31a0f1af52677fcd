//! UL→DL covariance conversion by reconstructing the polarized angular
//! power spectrum.
//!
//! The UL covariance is written as a linear system `G_u x = r_u` in the
//! gridded spectrum `x = [ρ_V; ρ_H]`, where the inner product on spectra is
//! the quadrature-weighted `⟨x, y⟩_W = Σ_q w_q (x_V y_V + x_H y_H)`.
//! Algorithm 1 takes the `W`-minimum-norm solution (a fixed linear map, so
//! the whole conversion collapses to `r_d = F r_u`); Algorithm 2 runs
//! extrapolated alternating projections between that affine variety and the
//! nonnegative cone.

use rayon::prelude::*;

use crate::covariance::{full_devectorize, full_vectorize, psd_projection, CovarianceMatrix, PolarizedAps, UpaStructure};
use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, ArrayManifold, UpaGeometry};
use crate::linalg::symmetric_eigen_desc;
use crate::{CMatrix, Complex, RMatrix, RVector};

/// Default relative eigenvalue cutoff for the normal system `G W⁻¹ Gᵀ`.
pub const DEFAULT_TRUNCATION: f64 = 1e-8;

/// How covariance matrices are turned into real vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorizationMode {
    /// Compressed UPA parameters (`M = 570` for an 8×4 array).
    Structured,
    /// Real and imaginary parts of every entry (`M = 2N²`).
    Full,
}

impl VectorizationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Structured => "structured",
            Self::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "structured" => Some(Self::Structured),
            "full" => Some(Self::Full),
            _ => None,
        }
    }
}

/// Real `M × 2Q` matrix mapping a gridded spectrum to a vectorized
/// covariance at one carrier frequency.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    matrix: RMatrix,
    carrier_hz: f64,
    grid_fingerprint: u64,
    geometry: UpaGeometry,
    mode: VectorizationMode,
}

/// Writes the vectorization of `a a^H` into `col`.
fn vectorize_outer(a: &[Complex], mode: VectorizationMode, structure: &UpaStructure, col: &mut [f64]) {
    match mode {
        VectorizationMode::Structured => {
            for p in 0..structure.n_params() {
                let (i, j) = structure.representative(p);
                let z = a[i] * a[j].conj();
                col[2 * p] = z.re;
                col[2 * p + 1] = if structure.is_real_param(p) { 0.0 } else { z.im };
            }
        }
        VectorizationMode::Full => {
            let n = a.len();
            let nn = n * n;
            for j in 0..n {
                let cj = a[j].conj();
                for i in 0..n {
                    let z = a[i] * cj;
                    col[j * n + i] = z.re;
                    col[nn + j * n + i] = z.im;
                }
            }
        }
    }
}

pub fn build_kernel(geom: &UpaGeometry, carrier_hz: f64, grid: &AngularGrid, mode: VectorizationMode) -> Result<KernelOperator> {
    let manifold = ArrayManifold::new(geom, carrier_hz)?;
    let structure = UpaStructure::new(geom);
    let rows = match mode {
        VectorizationMode::Structured => structure.len(),
        VectorizationMode::Full => 2 * geom.n_antennas() * geom.n_antennas(),
    };
    let q = grid.len();
    let mut matrix = RMatrix::zeros(rows, 2 * q);
    {
        // Column-major storage: column c occupies slice [c·rows, (c+1)·rows).
        let (v_cols, h_cols) = matrix.as_mut_slice().split_at_mut(rows * q);
        v_cols
            .par_chunks_mut(rows)
            .zip(h_cols.par_chunks_mut(rows))
            .enumerate()
            .for_each(|(k, (cv, ch))| {
                let dir = &grid.nodes()[k];
                let w = grid.weights()[k];
                let s = manifold.response(dir);
                vectorize_outer(s.a_vertical.as_slice(), mode, &structure, cv);
                vectorize_outer(s.a_horizontal.as_slice(), mode, &structure, ch);
                cv.iter_mut().chain(ch.iter_mut()).for_each(|x| *x *= w);
            });
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("kernel has non-finite entries".into()));
    }
    Ok(KernelOperator {
        matrix,
        carrier_hz,
        grid_fingerprint: grid.fingerprint(),
        geometry: geom.clone(),
        mode,
    })
}

impl KernelOperator {
    pub fn matrix(&self) -> &RMatrix {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn mode(&self) -> VectorizationMode {
        self.mode
    }

    pub fn geometry(&self) -> &UpaGeometry {
        &self.geometry
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    pub fn apply(&self, aps: &PolarizedAps) -> Result<RVector> {
        if aps.grid_fingerprint() != self.grid_fingerprint || 2 * aps.len() != self.matrix.ncols() {
            return Err(Error::GridMismatch);
        }
        Ok(&self.matrix * aps.to_stacked())
    }

    /// Vectorizes a covariance matrix in this kernel's mode. Structured mode
    /// expects an already averaged input.
    pub fn vectorize(&self, r: &CMatrix) -> Result<RVector> {
        match self.mode {
            VectorizationMode::Structured => Ok(UpaStructure::new(&self.geometry).vectorize(r)?.values),
            VectorizationMode::Full => {
                let n = self.geometry.n_antennas();
                if r.nrows() != n || r.ncols() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: r.nrows(),
                    });
                }
                Ok(full_vectorize(r))
            }
        }
    }

    pub fn devectorize(&self, v: &RVector) -> Result<CMatrix> {
        match self.mode {
            VectorizationMode::Structured => UpaStructure::new(&self.geometry).devectorize_values(v),
            VectorizationMode::Full => full_devectorize(v, self.geometry.n_antennas()),
        }
    }
}

/// `W`-orthogonal projector onto the (truncated) affine variety
/// `{x : G x = r}`.
///
/// With `G W⁻¹ Gᵀ = U Λ Uᵀ` and the `k` retained eigenpairs, the whitened
/// system `B = Λ_k^{-1/2} U_kᵀ G` has `W`-orthonormal rows, so
/// `P_V(y) = y + W⁻¹ Bᵀ (b − B y)` with `b = Λ_k^{-1/2} U_kᵀ r`.
#[derive(Debug, Clone)]
pub struct VarietyProjector {
    /// `k × 2Q`.
    whitened: RMatrix,
    /// `k × M`, maps `r` to `b`.
    whitener: RMatrix,
    /// Retained eigenvalues `λ_1 ≥ … ≥ λ_k`.
    eigenvalues: Vec<f64>,
    /// Retained eigenvectors `U_k` (`M × k`).
    basis: RMatrix,
    /// Quadrature weights duplicated for both polarizations.
    weights: RVector,
    truncation: f64,
    rows: usize,
    grid_fingerprint: u64,
}

impl VarietyProjector {
    pub fn new(kernel: &KernelOperator, grid: &AngularGrid, truncation: f64) -> Result<Self> {
        if kernel.grid_fingerprint != grid.fingerprint() {
            return Err(Error::GridMismatch);
        }
        if !(truncation > 0.0 && truncation < 1.0) {
            return Err(Error::InvalidParameter(format!("truncation {truncation} must lie in (0, 1)")));
        }
        let g = &kernel.matrix;
        let q = grid.len();
        let weights = RVector::from_iterator(2 * q, grid.weights().iter().chain(grid.weights()).copied());
        // G W^{-1/2}, so that the Gram matrix is a plain product.
        let mut scaled = g.clone();
        for (c, mut col) in scaled.column_iter_mut().enumerate() {
            col /= weights[c].sqrt();
        }
        let gram = &scaled * scaled.transpose();
        let (values, vectors) = symmetric_eigen_desc(gram);
        let lmax = values.first().copied().unwrap_or(0.0);
        if !(lmax > 0.0) {
            return Err(Error::Numerical("kernel has no usable rows".into()));
        }
        let k = values.iter().take_while(|l| **l >= truncation * lmax).count();
        let basis = vectors.columns(0, k).into_owned();
        let mut whitener = basis.transpose();
        for (i, mut row) in whitener.row_iter_mut().enumerate() {
            row /= values[i].sqrt();
        }
        let whitened = &whitener * g;
        Ok(Self {
            whitened,
            whitener,
            eigenvalues: values[..k].to_vec(),
            basis,
            weights,
            truncation,
            rows: g.nrows(),
            grid_fingerprint: grid.fingerprint(),
        })
    }

    /// Number of retained directions.
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn check_rhs(&self, r: &RVector) -> Result<()> {
        if r.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: r.len(),
            });
        }
        Ok(())
    }

    /// Whitened right-hand side `b`.
    pub fn whiten(&self, r: &RVector) -> Result<RVector> {
        self.check_rhs(r)?;
        Ok(&self.whitener * r)
    }

    /// `‖r − U_k U_kᵀ r‖`, the part of `r` no spectrum on this grid reaches.
    pub fn out_of_range_norm(&self, r: &RVector) -> Result<f64> {
        self.check_rhs(r)?;
        let coords = self.basis.transpose() * r;
        Ok((r.norm_squared() - coords.norm_squared()).max(0.0).sqrt())
    }

    /// Applies `P_V` given the whitened right-hand side.
    fn project_whitened(&self, y: &RVector, b: &RVector) -> RVector {
        let e = b - &self.whitened * y;
        self.lift(y, &e)
    }

    /// `y + W⁻¹ Bᵀ e`.
    fn lift(&self, y: &RVector, e: &RVector) -> RVector {
        let mut step = self.whitened.tr_mul(e);
        step.component_div_assign(&self.weights);
        step + y
    }

    pub fn weighted_norm(&self, x: &RVector) -> f64 {
        x.iter().zip(self.weights.iter()).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
    }
}

/// Nearest point of `{x : G x = r}` (truncated) to `from` in the `W` norm.
pub fn project_onto_variety(projector: &VarietyProjector, r: &RVector, from: &PolarizedAps, grid: &AngularGrid) -> Result<PolarizedAps> {
    if from.grid_fingerprint() != projector.grid_fingerprint {
        return Err(Error::GridMismatch);
    }
    let b = projector.whiten(r)?;
    PolarizedAps::from_stacked(grid, &projector.project_whitened(&from.to_stacked(), &b))
}

/// Entrywise `max(x, 0)`: the metric projection onto the nonnegative cone
/// (for any positive diagonal weighting).
pub fn project_onto_cone(aps: &PolarizedAps, grid: &AngularGrid) -> Result<PolarizedAps> {
    PolarizedAps::from_stacked(grid, &aps.to_stacked().map(|x| x.max(0.0)))
}

/// Precomputed Algorithm 1 map `F = G_d G_u⁺`, together with where it came
/// from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionOperator {
    pub matrix: RMatrix,
    pub provenance: Provenance,
}

/// Identifies the setup a [`ConversionOperator`] was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub geometry_hash: u64,
    pub ul_hz: f64,
    pub dl_hz: f64,
    pub grid_shape: Option<(usize, usize)>,
    pub grid_hash: u64,
    pub truncation: f64,
    pub mode: VectorizationMode,
}

impl ConversionOperator {
    pub fn apply(&self, r_u: &RVector) -> Result<RVector> {
        if r_u.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.ncols(),
                actual: r_u.len(),
            });
        }
        Ok(&self.matrix * r_u)
    }
}

/// Extrapolated alternating projection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EapmParams {
    pub max_iterations: usize,
    /// Stop once `‖G_u P_Z(x) − r_u‖ ≤ tolerance · ‖r_u‖`.
    pub residual_tolerance: f64,
    /// `false` runs plain alternating projections (`ν = 1`).
    pub extrapolate: bool,
}

impl Default for EapmParams {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            residual_tolerance: 1e-3,
            extrapolate: true,
        }
    }
}

impl EapmParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("EAPM needs at least one iteration".into()));
        }
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidParameter("EAPM tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Upper clamp for the extrapolation coefficient.
const MAX_EXTRAPOLATION: f64 = 100.0;
/// Relative cone distance below which an iterate counts as feasible.
const FEASIBLE_DISTANCE: f64 = 1e-12;

/// Result of one spectrum reconstruction.
#[derive(Debug, Clone)]
pub struct AlgorithmOutput {
    pub aps: PolarizedAps,
    pub r_d: RVector,
    /// Relative UL residual `‖G_u x − r_u‖ / ‖r_u‖` of the returned spectrum.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Per-iteration `Φ(x_k)`.
    pub residual_trace: Vec<f64>,
    /// Per-iteration `‖x_k − P_Z(x_k)‖_W`.
    pub cone_distance_trace: Vec<f64>,
}

/// Solver state shared by both algorithms: UL/DL kernels on one grid and
/// the UL variety projector.
#[derive(Debug, Clone)]
pub struct Converter {
    grid: AngularGrid,
    kernel_u: KernelOperator,
    kernel_d: KernelOperator,
    projector: VarietyProjector,
}

impl Converter {
    pub fn new(
        geom: &UpaGeometry,
        ul_hz: f64,
        dl_hz: f64,
        grid: &AngularGrid,
        mode: VectorizationMode,
        truncation: f64,
    ) -> Result<Self> {
        let kernel_u = build_kernel(geom, ul_hz, grid, mode)?;
        let kernel_d = if dl_hz == ul_hz {
            kernel_u.clone()
        } else {
            build_kernel(geom, dl_hz, grid, mode)?
        };
        Self::from_kernels(kernel_u, kernel_d, grid, truncation)
    }

    pub fn from_kernels(kernel_u: KernelOperator, kernel_d: KernelOperator, grid: &AngularGrid, truncation: f64) -> Result<Self> {
        if kernel_u.grid_fingerprint != kernel_d.grid_fingerprint || kernel_u.mode != kernel_d.mode {
            return Err(Error::GridMismatch);
        }
        if kernel_u.geometry.fingerprint() != kernel_d.geometry.fingerprint() {
            return Err(Error::InvalidParameter("UL and DL kernels use different arrays".into()));
        }
        let projector = VarietyProjector::new(&kernel_u, grid, truncation)?;
        Ok(Self {
            grid: grid.clone(),
            kernel_u,
            kernel_d,
            projector,
        })
    }

    pub fn grid(&self) -> &AngularGrid {
        &self.grid
    }

    pub fn kernel_u(&self) -> &KernelOperator {
        &self.kernel_u
    }

    pub fn kernel_d(&self) -> &KernelOperator {
        &self.kernel_d
    }

    pub fn projector(&self) -> &VarietyProjector {
        &self.projector
    }

    pub fn geometry(&self) -> &UpaGeometry {
        &self.kernel_u.geometry
    }

    pub fn mode(&self) -> VectorizationMode {
        self.kernel_u.mode
    }

    /// `F = G_d W⁻¹ Bᵀ Λ_k^{-1/2} U_kᵀ`.
    pub fn operator(&self) -> ConversionOperator {
        let p = &self.projector;
        let mut gdw = self.kernel_d.matrix.clone();
        for (c, mut col) in gdw.column_iter_mut().enumerate() {
            col /= p.weights[c];
        }
        let matrix = (gdw * p.whitened.transpose()) * &p.whitener;
        ConversionOperator {
            matrix,
            provenance: Provenance {
                geometry_hash: self.geometry().fingerprint(),
                ul_hz: self.kernel_u.carrier_hz,
                dl_hz: self.kernel_d.carrier_hz,
                grid_shape: self.grid.shape(),
                grid_hash: self.grid.fingerprint(),
                truncation: p.truncation,
                mode: self.mode(),
            },
        }
    }

    /// Checks that a loaded operator matches this converter's setup.
    pub fn check_operator(&self, op: &ConversionOperator) -> Result<()> {
        let expected = self.operator_provenance();
        if op.provenance != expected {
            return Err(Error::Format(format!(
                "conversion operator was built for a different setup ({:?}, expected {:?})",
                op.provenance, expected
            )));
        }
        if op.matrix.nrows() != self.kernel_d.rows() || op.matrix.ncols() != self.kernel_u.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel_u.rows(),
                actual: op.matrix.ncols(),
            });
        }
        Ok(())
    }

    fn operator_provenance(&self) -> Provenance {
        Provenance {
            geometry_hash: self.geometry().fingerprint(),
            ul_hz: self.kernel_u.carrier_hz,
            dl_hz: self.kernel_d.carrier_hz,
            grid_shape: self.grid.shape(),
            grid_hash: self.grid.fingerprint(),
            truncation: self.projector.truncation,
            mode: self.mode(),
        }
    }

    fn residual_of(&self, x: &RVector, r_u: &RVector) -> f64 {
        let norm = r_u.norm();
        let res = (&self.kernel_u.matrix * x - r_u).norm();
        if norm > 0.0 {
            res / norm
        } else {
            res
        }
    }

    /// Algorithm 1: `W`-minimum-norm spectrum consistent with `r_u`.
    pub fn algorithm1(&self, r_u: &RVector) -> Result<AlgorithmOutput> {
        let b = self.projector.whiten(r_u)?;
        let x = self.projector.lift(&RVector::zeros(2 * self.grid.len()), &b);
        let r_d = &self.kernel_d.matrix * &x;
        let residual = self.residual_of(&x, r_u);
        Ok(AlgorithmOutput {
            aps: PolarizedAps::from_stacked(&self.grid, &x)?,
            r_d,
            residual,
            iterations: 0,
            converged: true,
            residual_trace: Vec::new(),
            cone_distance_trace: Vec::new(),
        })
    }

    /// Algorithm 2: extrapolated alternating projections between the UL
    /// variety and the nonnegative cone, warm-started at Algorithm 1.
    pub fn algorithm2(&self, r_u: &RVector, params: &EapmParams) -> Result<AlgorithmOutput> {
        params.validate()?;
        let p = &self.projector;
        let b = p.whiten(r_u)?;
        let r_norm = r_u.norm();
        // Φ² = ‖Λ^{1/2}(B y − b)‖² + ‖r_⊥‖².
        let floor_sq = p.out_of_range_norm(r_u)?.powi(2);
        let sqrt_lambda = RVector::from_iterator(p.rank(), p.eigenvalues.iter().map(|l| l.sqrt()));
        let phi = |e: &RVector| {
            let s = e.component_mul(&sqrt_lambda).norm_squared() + floor_sq;
            if r_norm > 0.0 {
                s.sqrt() / r_norm
            } else {
                s.sqrt()
            }
        };

        let mut x = p.lift(&RVector::zeros(2 * self.grid.len()), &b);
        let mut best: Option<(f64, RVector)> = None;
        let mut residual_trace = Vec::new();
        let mut cone_distance_trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;

        for _ in 0..params.max_iterations {
            let y = x.map(|v| v.max(0.0));
            let e = &b - &p.whitened * &y;
            let f = phi(&e);
            let dist = p.weighted_norm(&(&y - &x));
            residual_trace.push(f);
            cone_distance_trace.push(dist);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, y.clone()));
            }
            if f <= params.residual_tolerance || dist <= FEASIBLE_DISTANCE * p.weighted_norm(&x) {
                converged = true;
                best = Some((f, y));
                break;
            }
            iterations += 1;
            let z = p.lift(&y, &e);
            let step = &z - &x;
            let nu = if params.extrapolate {
                let den = p.weighted_norm(&step).powi(2);
                if den > 0.0 {
                    (dist * dist / den).clamp(1.0, MAX_EXTRAPOLATION)
                } else {
                    1.0
                }
            } else {
                1.0
            };
            x.axpy(nu, &step, 1.0);
        }

        let (_, y) = match best {
            Some(b) => b,
            None => unreachable!("at least one iteration runs"),
        };
        let r_d = &self.kernel_d.matrix * &y;
        let residual = self.residual_of(&y, r_u);
        Ok(AlgorithmOutput {
            aps: PolarizedAps::from_stacked(&self.grid, &y)?,
            r_d,
            residual,
            iterations,
            converged,
            residual_trace,
            cone_distance_trace,
        })
    }

    /// Vectorizes an estimated UL covariance the way the solvers expect:
    /// structure averaging first in structured mode.
    pub fn vectorize_ul(&self, r_u: &CovarianceMatrix) -> Result<RVector> {
        let m = r_u.matrix();
        let n = self.geometry().n_antennas();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.nrows(),
            });
        }
        match self.mode() {
            VectorizationMode::Structured => {
                let s = UpaStructure::new(self.geometry());
                Ok(s.vectorize(&s.average(m)?)?.values)
            }
            VectorizationMode::Full => Ok(full_vectorize(m)),
        }
    }

    /// Turns a DL vector back into a PSD covariance.
    pub fn finish_dl(&self, r_d: &RVector) -> Result<CovarianceMatrix> {
        let m = self.kernel_d.devectorize(r_d)?;
        psd_projection(&crate::linalg::hermitian_part(&m))
    }

    /// Full pipeline for one UL estimate.
    pub fn convert(&self, r_u: &CovarianceMatrix, method: &Method) -> Result<Conversion> {
        let v = self.vectorize_ul(r_u)?;
        let out = match method {
            Method::Algorithm1(Some(op)) => {
                let r_d = op.apply(&v)?;
                Conversion {
                    r_d: self.finish_dl(&r_d)?,
                    iterations: 0,
                    residual: f64::NAN,
                    converged: true,
                    aps: None,
                }
            }
            Method::Algorithm1(None) => {
                let o = self.algorithm1(&v)?;
                Conversion {
                    r_d: self.finish_dl(&o.r_d)?,
                    iterations: 0,
                    residual: o.residual,
                    converged: true,
                    aps: Some(o.aps),
                }
            }
            Method::Algorithm2(params) => {
                let o = self.algorithm2(&v, params)?;
                Conversion {
                    r_d: self.finish_dl(&o.r_d)?,
                    iterations: o.iterations,
                    residual: o.residual,
                    converged: o.converged,
                    aps: Some(o.aps),
                }
            }
        };
        Ok(out)
    }
}

/// Conversion algorithm selection for [`Converter::convert`].
#[derive(Debug, Clone)]
pub enum Method<'a> {
    /// Minimum-norm reconstruction, optionally through a precomputed `F`.
    Algorithm1(Option<&'a ConversionOperator>),
    Algorithm2(EapmParams),
}

/// DL estimate and solver diagnostics.
#[derive(Debug, Clone)]
pub struct Conversion {
    pub r_d: CovarianceMatrix,
    pub iterations: usize,
    /// Relative UL residual of the reconstructed spectrum (NaN when only the
    /// precomputed operator was used).
    pub residual: f64,
    pub converged: bool,
    pub aps: Option<PolarizedAps>,
}

/// Convenience one-shot conversion.
pub fn convert(
    r_u: &CovarianceMatrix,
    geom: &UpaGeometry,
    ul_hz: f64,
    dl_hz: f64,
    grid: &AngularGrid,
    method: &Method,
) -> Result<CovarianceMatrix> {
    let conv = Converter::new(geom, ul_hz, dl_hz, grid, VectorizationMode::Structured, DEFAULT_TRUNCATION)?;
    Ok(conv.convert(r_u, method)?.r_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{covariance_from_aps, upa_average};
    use crate::geometry::ElementPattern;
    use crate::linalg::frobenius;
    use crate::SPEED_OF_LIGHT;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(nv: usize, nh: usize) -> UpaGeometry {
        UpaGeometry::new(nv, nh, SPEED_OF_LIGHT / 1.8e9 / 2.0, ElementPattern::default()).unwrap()
    }

    fn random_aps(grid: &AngularGrid, rng: &mut ChaCha8Rng) -> PolarizedAps {
        let v = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        let h = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
        PolarizedAps::new(grid, v, h).unwrap()
    }

    #[test]
    fn kernel_reads_out_point_mass() {
        let grid = AngularGrid::uniform(24, 12).unwrap();
        let g = geom(2, 2);
        let k = build_kernel(&g, 1.8e9, &grid, VectorizationMode::Full).unwrap();
        let q = 77;
        let mut v = vec![0.0; grid.len()];
        v[q] = 1.0 / grid.weights()[q];
        let aps = PolarizedAps::new(&grid, v, vec![0.0; grid.len()]).unwrap();
        let a = crate::geometry::array_response(&g, 1.8e9, &grid.nodes()[q]).unwrap().a_vertical;
        let expected = full_vectorize(&(&a * a.adjoint()));
        assert!((k.apply(&aps).unwrap() - expected).norm() < 1e-12);
    }

    #[test]
    fn kernel_matches_quadrature_covariance() {
        let grid = AngularGrid::uniform(36, 18).unwrap();
        let g = geom(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aps = random_aps(&grid, &mut rng);
        let r = covariance_from_aps(&aps, &g, 1.9e9, &grid).unwrap();
        let full = build_kernel(&g, 1.9e9, &grid, VectorizationMode::Full).unwrap();
        let rf = full_vectorize(r.matrix());
        assert!((full.apply(&aps).unwrap() - &rf).norm() <= 1e-12 * rf.norm());
        let st = build_kernel(&g, 1.9e9, &grid, VectorizationMode::Structured).unwrap();
        let rs = st.vectorize(upa_average(&r, &g).unwrap().matrix()).unwrap();
        assert!((st.apply(&aps).unwrap() - &rs).norm() <= 1e-12 * rs.norm());
    }

    #[test]
    fn kernel_row_counts() {
        let grid = AngularGrid::uniform(8, 4).unwrap();
        let g = geom(8, 4);
        assert_eq!(build_kernel(&g, 1.8e9, &grid, VectorizationMode::Structured).unwrap().rows(), 570);
        assert_eq!(build_kernel(&g, 1.8e9, &grid, VectorizationMode::Full).unwrap().rows(), 8192);
    }

    fn small_converter(ul: f64, dl: f64) -> Converter {
        let grid = AngularGrid::uniform(48, 24).unwrap();
        Converter::new(&geom(4, 2), ul, dl, &grid, VectorizationMode::Structured, DEFAULT_TRUNCATION).unwrap()
    }

    #[test]
    fn variety_projection_solves_consistent_system() {
        let c = small_converter(1.8e9, 1.9e9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = random_aps(c.grid(), &mut rng);
        let r = c.kernel_u().apply(&x0).unwrap();
        let zero = PolarizedAps::zeros(c.grid());
        let x = project_onto_variety(c.projector(), &r, &zero, c.grid()).unwrap();
        let res = (c.kernel_u().apply(&x).unwrap() - &r).norm() / r.norm();
        assert!(res <= 1e-8, "{res}");
        // Minimum norm.
        let p = c.projector();
        assert!(p.weighted_norm(&x.to_stacked()) <= p.weighted_norm(&x0.to_stacked()));
        // Points of the variety are fixed.
        let again = project_onto_variety(p, &r, &x, c.grid()).unwrap();
        let d = p.weighted_norm(&(again.to_stacked() - x.to_stacked()));
        assert!(d <= 1e-10 * p.weighted_norm(&x.to_stacked()));
    }

    #[test]
    fn cone_projection_properties() {
        let grid = AngularGrid::uniform(12, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = random_aps(&grid, &mut rng);
        assert_eq!(project_onto_cone(&pos, &grid).unwrap(), pos);
        let neg = pos.combine(-1.0, &pos, 0.0).unwrap();
        assert!(project_onto_cone(&neg, &grid).unwrap().to_stacked().iter().all(|v| *v == 0.0));
        let mixed = pos.combine(1.0, &random_aps(&grid, &mut rng), -1.0).unwrap();
        let y = project_onto_cone(&mixed, &grid).unwrap();
        let w: Vec<f64> = grid.weights().iter().chain(grid.weights()).copied().collect();
        let (xs, ys) = (mixed.to_stacked(), y.to_stacked());
        for _ in 0..50 {
            let z = random_aps(&grid, &mut rng).to_stacked();
            let ip: f64 = (0..xs.len()).map(|i| w[i] * (xs[i] - ys[i]) * (z[i] - ys[i])).sum();
            assert!(ip <= 1e-12);
        }
    }

    #[test]
    fn equal_frequencies_reproduce_range_inputs() {
        let c = small_converter(1.8e9, 1.8e9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = c.kernel_u().apply(&random_aps(c.grid(), &mut rng)).unwrap();
        let f = c.operator();
        assert!((f.apply(&r).unwrap() - &r).norm() <= 1e-8 * r.norm());
        let a1 = c.algorithm1(&r).unwrap();
        assert!((a1.r_d - &r).norm() <= 1e-8 * r.norm());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let c = small_converter(1.8e9, 1.9e9);
        let r = RVector::zeros(c.kernel_u().rows());
        let a1 = c.algorithm1(&r).unwrap();
        assert_eq!(a1.r_d.norm(), 0.0);
        assert!(a1.aps.to_stacked().iter().all(|v| *v == 0.0));
        let n = c.geometry().n_antennas();
        let out = c.convert(&CovarianceMatrix::zeros(n), &Method::Algorithm1(None)).unwrap();
        assert_eq!(out.r_d.frobenius(), 0.0);
    }

    #[test]
    fn operator_matches_algorithm1() {
        let c = small_converter(1.8e9, 1.9e9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = c.kernel_u().apply(&random_aps(c.grid(), &mut rng)).unwrap();
        let f = c.operator();
        let a1 = c.algorithm1(&r).unwrap();
        assert!((f.apply(&r).unwrap() - &a1.r_d).norm() <= 1e-10 * a1.r_d.norm());
        c.check_operator(&f).unwrap();
    }

    #[test]
    fn eapm_keeps_nonnegative_start() {
        // A spectrum in the row space with positive entries: the minimum-norm
        // solution of its own data is itself.
        let c = small_converter(1.8e9, 1.9e9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r0 = c.kernel_u().apply(&random_aps(c.grid(), &mut rng)).unwrap();
        let x1 = c.algorithm1(&r0).unwrap().aps.to_stacked();
        let shift = 1.0 - x1.min();
        // Adding a constant keeps the vector positive but may leave the row
        // space; project it back and check positivity before using it.
        let ones = c.algorithm1(&(c.kernel_u().matrix() * RVector::from_element(x1.len(), 1.0))).unwrap().aps.to_stacked();
        let x = &x1 + &ones * shift;
        if x.min() <= 0.0 {
            return;
        }
        let r = c.kernel_u().matrix() * &x;
        let start = c.algorithm1(&r).unwrap();
        assert!(start.aps.is_nonnegative());
        let out = c.algorithm2(&r, &EapmParams::default()).unwrap();
        assert!(out.iterations <= 2);
        let d = c.projector().weighted_norm(&(out.aps.to_stacked() - start.aps.to_stacked()));
        assert!(d <= 1e-9 * c.projector().weighted_norm(&start.aps.to_stacked()));
    }

    #[test]
    fn eapm_reaches_feasibility_on_noiseless_data() {
        let c = small_converter(1.8e9, 1.9e9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for extrapolate in [true, false] {
            let r = c.kernel_u().apply(&random_aps(c.grid(), &mut rng)).unwrap();
            let params = EapmParams {
                max_iterations: 2000,
                residual_tolerance: 1e-3,
                extrapolate,
            };
            let out = c.algorithm2(&r, &params).unwrap();
            assert!(out.aps.is_nonnegative());
            assert!(out.converged, "extrapolate={extrapolate}");
            assert!(out.residual <= 1e-3, "{}", out.residual);
            if !extrapolate {
                for w in out.cone_distance_trace.windows(2) {
                    assert!(w[1] <= w[0] + 1e-10);
                }
            }
        }
    }

    #[test]
    fn convert_identity_case() {
        let c = small_converter(1.8e9, 1.8e9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = covariance_from_aps(&random_aps(c.grid(), &mut rng), c.geometry(), 1.8e9, c.grid()).unwrap();
        let out = c.convert(&r, &Method::Algorithm1(None)).unwrap().r_d;
        let err = frobenius(&(out.matrix() - r.matrix())) / r.frobenius();
        assert!(err <= 1e-8, "{err}");
        let twice = c.convert(&out, &Method::Algorithm1(None)).unwrap().r_d;
        assert!(frobenius(&(twice.matrix() - out.matrix())) <= 1e-8 * out.frobenius());
    }
}
