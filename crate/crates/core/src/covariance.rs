//! Spatial covariance matrices: quadrature from polarized angular power
//! spectra, sample estimates, PSD projection, and the block structure of
//! cross-polarized UPA covariances (element averaging and compressed
//! vectorization).

use crate::error::{Error, Result};
use crate::geometry::{AngularGrid, ArrayManifold, UpaGeometry};
use crate::linalg::{frobenius, hermitian_defect, hermitian_eigen, hermitian_part, reconstruct};
use crate::{CMatrix, CVector, Complex, RVector};

/// Relative Hermitian tolerance accepted by [`psd_projection`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Relative structure tolerance accepted by [`structured_vectorize`].
pub const STRUCTURE_TOLERANCE: f64 = 1e-6;

/// `N × N` complex spatial covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(CMatrix);

impl CovarianceMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.0[(i, i)].re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        frobenius(&self.0)
    }

    pub fn hermitian_defect(&self) -> f64 {
        hermitian_defect(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigen(&self.0).values.last().copied().unwrap_or(0.0)
    }
}

/// Polarized angular power spectrum `(ρ_V, ρ_H)` sampled on a grid.
///
/// Entries may be negative (e.g. the minimum-norm estimate); nonnegativity
/// is a property checked where required, not a construction invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedAps {
    rho_v: Vec<f64>,
    rho_h: Vec<f64>,
    grid_fingerprint: u64,
}

impl PolarizedAps {
    pub fn new(grid: &AngularGrid, rho_v: Vec<f64>, rho_h: Vec<f64>) -> Result<Self> {
        for r in [&rho_v, &rho_h] {
            if r.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    actual: r.len(),
                });
            }
        }
        if rho_v.iter().chain(&rho_h).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("angular power spectrum has non-finite entries".into()));
        }
        Ok(Self {
            rho_v,
            rho_h,
            grid_fingerprint: grid.fingerprint(),
        })
    }

    pub fn zeros(grid: &AngularGrid) -> Self {
        Self {
            rho_v: vec![0.0; grid.len()],
            rho_h: vec![0.0; grid.len()],
            grid_fingerprint: grid.fingerprint(),
        }
    }

    /// Builds from the stacked vector `[ρ_V; ρ_H]` of length `2Q`.
    pub fn from_stacked(grid: &AngularGrid, x: &RVector) -> Result<Self> {
        let q = grid.len();
        if x.len() != 2 * q {
            return Err(Error::DimensionMismatch {
                expected: 2 * q,
                actual: x.len(),
            });
        }
        Self::new(grid, x.rows(0, q).iter().copied().collect(), x.rows(q, q).iter().copied().collect())
    }

    pub fn to_stacked(&self) -> RVector {
        RVector::from_iterator(2 * self.len(), self.rho_v.iter().chain(&self.rho_h).copied())
    }

    pub fn len(&self) -> usize {
        self.rho_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_v.is_empty()
    }

    pub fn rho_v(&self) -> &[f64] {
        &self.rho_v
    }

    pub fn rho_h(&self) -> &[f64] {
        &self.rho_h
    }

    pub fn grid_fingerprint(&self) -> u64 {
        self.grid_fingerprint
    }

    pub fn check_grid(&self, grid: &AngularGrid) -> Result<()> {
        if self.grid_fingerprint != grid.fingerprint() || self.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Smallest entry over both components.
    pub fn min_value(&self) -> f64 {
        self.rho_v.iter().chain(&self.rho_h).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.rho_v.iter().chain(&self.rho_h).all(|x| *x >= 0.0)
    }

    /// Quadrature of `ρ_V + ρ_H` over the domain.
    pub fn total_power(&self, grid: &AngularGrid) -> f64 {
        grid.weights()
            .iter()
            .zip(self.rho_v.iter().zip(&self.rho_h))
            .map(|(w, (v, h))| w * (v + h))
            .sum()
    }

    /// `a·self + b·other` on the same grid.
    pub fn combine(&self, a: f64, other: &PolarizedAps, b: f64) -> Result<Self> {
        if self.grid_fingerprint != other.grid_fingerprint {
            return Err(Error::GridMismatch);
        }
        let mix = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        Ok(Self {
            rho_v: mix(&self.rho_v, &other.rho_v),
            rho_h: mix(&self.rho_h, &other.rho_h),
            grid_fingerprint: self.grid_fingerprint,
        })
    }
}

/// Covariance from a gridded polarized APS by quadrature:
/// `R = Σ_q w_q [ρ_V(θ_q) a_V a_V^H + ρ_H(θ_q) a_H a_H^H]`.
pub fn covariance_from_aps(
    aps: &PolarizedAps,
    geom: &UpaGeometry,
    carrier_hz: f64,
    grid: &AngularGrid,
) -> Result<CovarianceMatrix> {
    aps.check_grid(grid)?;
    let manifold = ArrayManifold::new(geom, carrier_hz)?;
    Ok(covariance_from_aps_with(aps, &manifold, grid))
}

/// Same as [`covariance_from_aps`] with a prebuilt manifold; the grid must
/// already be checked against the APS.
pub(crate) fn covariance_from_aps_with(aps: &PolarizedAps, manifold: &ArrayManifold, grid: &AngularGrid) -> CovarianceMatrix {
    let ne = manifold.geometry().n_elements();
    // a_V[(k, n)] = f_V,k · e_n, so each node adds (w ρ_V f_V,k f_V,k' + w ρ_H f_H,k f_H,k') e e^H
    // to block (k, k'). Blocks (0,1) and (1,0) share real coefficients.
    let mut blocks = [CMatrix::zeros(ne, ne), CMatrix::zeros(ne, ne), CMatrix::zeros(ne, ne)];
    let mut ph = vec![Complex::new(0.0, 0.0); ne];
    let mut outer = CMatrix::zeros(ne, ne);
    for (q, dir) in grid.nodes().iter().enumerate() {
        let (rv, rh) = (aps.rho_v[q], aps.rho_h[q]);
        if rv == 0.0 && rh == 0.0 {
            continue;
        }
        let w = grid.weights()[q];
        let f = manifold.slant_fields(dir);
        let coef = [
            w * (rv * f[0].0 * f[0].0 + rh * f[0].1 * f[0].1),
            w * (rv * f[1].0 * f[0].0 + rh * f[1].1 * f[0].1),
            w * (rv * f[1].0 * f[1].0 + rh * f[1].1 * f[1].1),
        ];
        manifold.element_phasors(dir, &mut ph);
        for j in 0..ne {
            let cj = ph[j].conj();
            for i in 0..ne {
                outer[(i, j)] = ph[i] * cj;
            }
        }
        for (b, c) in blocks.iter_mut().zip(coef) {
            b.zip_apply(&outer, |acc, o| *acc += o * c);
        }
    }
    let mut r = CMatrix::zeros(2 * ne, 2 * ne);
    r.view_mut((0, 0), (ne, ne)).copy_from(&blocks[0]);
    r.view_mut((ne, 0), (ne, ne)).copy_from(&blocks[1]);
    r.view_mut((0, ne), (ne, ne)).copy_from(&blocks[1]);
    r.view_mut((ne, ne), (ne, ne)).copy_from(&blocks[2]);
    CovarianceMatrix(r)
}

/// Streaming sample covariance `(1/n) Σ h h^H`.
#[derive(Debug, Clone)]
pub struct SampleCovariance {
    sum: CMatrix,
    count: usize,
}

impl SampleCovariance {
    pub fn new(n: usize) -> Self {
        Self {
            sum: CMatrix::zeros(n, n),
            count: 0,
        }
    }

    pub fn push(&mut self, h: &CVector) -> Result<()> {
        if h.len() != self.sum.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.sum.nrows(),
                actual: h.len(),
            });
        }
        self.sum.gerc(Complex::new(1.0, 0.0), h, h, Complex::new(1.0, 0.0));
        self.count += 1;
        Ok(())
    }

    /// Adds every column of `h` as one snapshot.
    pub fn push_columns(&mut self, h: &CMatrix) -> Result<()> {
        if h.nrows() != self.sum.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.sum.nrows(),
                actual: h.nrows(),
            });
        }
        self.sum += h * h.adjoint();
        self.count += h.ncols();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<CovarianceMatrix> {
        if self.count == 0 {
            return Err(Error::Empty("snapshot list"));
        }
        Ok(CovarianceMatrix(hermitian_part(&self.sum.unscale(self.count as f64))))
    }
}

pub fn sample_covariance(snapshots: &[CVector]) -> Result<CovarianceMatrix> {
    let first = snapshots.first().ok_or(Error::Empty("snapshot list"))?;
    let mut acc = SampleCovariance::new(first.len());
    for h in snapshots {
        acc.push(h)?;
    }
    acc.finish()
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to 0.
pub fn psd_projection(h: &CMatrix) -> Result<CovarianceMatrix> {
    if h.nrows() != h.ncols() {
        return Err(Error::DimensionMismatch {
            expected: h.nrows(),
            actual: h.ncols(),
        });
    }
    let defect = hermitian_defect(h);
    if defect > HERMITIAN_TOLERANCE * frobenius(h).max(f64::MIN_POSITIVE) && defect > 0.0 {
        return Err(Error::NotHermitian { defect });
    }
    let eig = hermitian_eigen(h);
    if eig.values.iter().all(|l| *l >= 0.0) {
        return Ok(CovarianceMatrix(hermitian_part(h)));
    }
    let clipped: Vec<f64> = eig.values.iter().map(|l| l.max(0.0)).collect();
    Ok(CovarianceMatrix(reconstruct(&clipped, &eig.vectors)))
}

/// Number of reals in the compressed UPA vectorization,
/// `6(N_H + (N_V − 1)(N_H² − N_H + 1))`.
pub fn structured_len(geom: &UpaGeometry) -> usize {
    6 * params_per_macro_block(geom.n_vertical(), geom.n_horizontal())
}

/// Number of reals in the full vectorization, `2N²`.
pub fn full_len(geom: &UpaGeometry) -> usize {
    2 * geom.n_antennas() * geom.n_antennas()
}

fn params_per_macro_block(nv: usize, nh: usize) -> usize {
    nh + (nv - 1) * (nh * nh - nh + 1)
}

#[derive(Debug, Clone, Copy)]
struct EntryRef {
    param: u32,
    conj: bool,
}

/// The equality pattern of a cross-polarized UPA covariance:
///
/// `R = [B_1 B_2^H; B_2 B_3]`, each macro-block Hermitian and block-Toeplitz
/// with `N_H × N_H` blocks `B_{l,i}` (`i = 1..N_V` down the block diagonals),
/// every `B_{l,i}` with equal diagonal entries and every `B_{l,1}` Hermitian
/// Toeplitz.
///
/// Each free complex parameter owns a class of matrix entries that are equal
/// (or conjugate-equal) under this structure. Parameter order, which is also
/// the layout of [`StructuredVector`], is: for `l = 1, 2, 3`, the first
/// column of `B_{l,1}` (`N_H` values), then for `i = 2..N_V` the common
/// diagonal of `B_{l,i}` followed by its off-diagonal entries in row-major
/// order. Each complex parameter is stored as `(re, im)`.
#[derive(Debug, Clone)]
pub struct UpaStructure {
    n: usize,
    n_vertical: usize,
    n_horizontal: usize,
    /// Per matrix entry (column-major), the owning parameter.
    entries: Vec<EntryRef>,
    /// Per parameter, its member entries `(i, j, conj)`.
    members: Vec<Vec<(usize, usize, bool)>>,
    /// Per parameter, one entry holding the parameter itself (not conjugated).
    representatives: Vec<(usize, usize)>,
    /// Parameters constrained to be real (diagonal of Hermitian blocks).
    real_params: Vec<bool>,
}

impl UpaStructure {
    pub fn new(geom: &UpaGeometry) -> Self {
        let (nv, nh) = (geom.n_vertical(), geom.n_horizontal());
        let ne = nv * nh;
        let n = 2 * ne;
        let per_l = params_per_macro_block(nv, nh);
        let n_params = 3 * per_l;

        // Parameter of entry (a, c) inside block B_{l,i} (i is 1-based).
        let block_param = |l: usize, i: usize, a: usize, c: usize| -> EntryRef {
            let base = l * per_l;
            if i == 1 {
                if a >= c {
                    EntryRef { param: (base + a - c) as u32, conj: false }
                } else {
                    EntryRef { param: (base + c - a) as u32, conj: true }
                }
            } else {
                let block_base = base + nh + (i - 2) * (nh * nh - nh + 1);
                if a == c {
                    EntryRef { param: block_base as u32, conj: false }
                } else {
                    let idx = a * (nh - 1) + if c < a { c } else { c - 1 };
                    EntryRef { param: (block_base + 1 + idx) as u32, conj: false }
                }
            }
        };
        // Parameter of entry (x, y) of macro-block B_l.
        let macro_param = |l: usize, x: usize, y: usize| -> EntryRef {
            let (p, a) = (x / nh, x % nh);
            let (q, c) = (y / nh, y % nh);
            if p >= q {
                block_param(l, p - q + 1, a, c)
            } else {
                let e = block_param(l, q - p + 1, c, a);
                EntryRef { param: e.param, conj: !e.conj }
            }
        };

        let mut entries = vec![EntryRef { param: 0, conj: false }; n * n];
        let mut members: Vec<Vec<(usize, usize, bool)>> = vec![Vec::new(); n_params];
        let mut real_params = vec![false; n_params];
        for j in 0..n {
            for i in 0..n {
                let (bi, bj) = (i / ne, j / ne);
                let (x, y) = (i % ne, j % ne);
                let e = match (bi, bj) {
                    (0, 0) => macro_param(0, x, y),
                    (1, 1) => macro_param(2, x, y),
                    (1, 0) => macro_param(1, x, y),
                    // Upper-right block is B_2^H: R[y, ne + x] = conj(B_2[x, y]).
                    _ => {
                        let e = macro_param(1, y, x);
                        EntryRef { param: e.param, conj: !e.conj }
                    }
                };
                entries[j * n + i] = e;
                members[e.param as usize].push((i, j, e.conj));
                if x == y {
                    // Diagonal of a Hermitian macro-block is real.
                    members[e.param as usize].push((i, j, !e.conj));
                    real_params[e.param as usize] = true;
                }
            }
        }
        let representatives = members
            .iter()
            .map(|m| {
                let &(i, j, _) = m.iter().find(|(_, _, c)| !c).expect("every parameter has a direct member");
                (i, j)
            })
            .collect();
        Self {
            n,
            n_vertical: nv,
            n_horizontal: nh,
            entries,
            members,
            representatives,
            real_params,
        }
    }

    pub fn n_antennas(&self) -> usize {
        self.n
    }

    pub fn n_params(&self) -> usize {
        self.members.len()
    }

    /// Length of the real structured vector.
    pub fn len(&self) -> usize {
        2 * self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_vertical, self.n_horizontal)
    }

    /// Matrix entry `(i, j)` holding parameter `p` unconjugated.
    pub fn representative(&self, p: usize) -> (usize, usize) {
        self.representatives[p]
    }

    pub fn is_real_param(&self, p: usize) -> bool {
        self.real_params[p]
    }

    fn check_dims(&self, m: &CMatrix) -> Result<()> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: m.nrows().max(m.ncols()),
            });
        }
        Ok(())
    }

    /// Class averages of all entries assumed identical.
    pub fn average_params(&self, m: &CMatrix) -> Vec<Complex> {
        self.members
            .iter()
            .enumerate()
            .map(|(p, mem)| {
                let mut acc = Complex::new(0.0, 0.0);
                for &(i, j, c) in mem {
                    let z = m[(i, j)];
                    acc += if c { z.conj() } else { z };
                }
                let mut avg = acc / mem.len() as f64;
                if self.real_params[p] {
                    avg.im = 0.0;
                }
                avg
            })
            .collect()
    }

    /// Matrix with every entry set from its parameter.
    pub fn expand(&self, params: &[Complex]) -> CMatrix {
        let n = self.n;
        CMatrix::from_fn(n, n, |i, j| {
            let e = self.entries[j * n + i];
            let z = params[e.param as usize];
            if e.conj {
                z.conj()
            } else {
                z
            }
        })
    }

    /// Maximum deviation of any entry from its class representative.
    pub fn violation(&self, m: &CMatrix) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let e = self.entries[j * n + i];
                let p = e.param as usize;
                let (ri, rj) = self.representatives[p];
                let mut target = m[(ri, rj)];
                if self.real_params[p] {
                    worst = worst.max(target.im.abs());
                    target.im = 0.0;
                }
                let target = if e.conj { target.conj() } else { target };
                worst = worst.max((m[(i, j)] - target).norm());
            }
        }
        worst
    }

    /// Orthogonal projection onto structured matrices (element averaging).
    pub fn average(&self, m: &CMatrix) -> Result<CMatrix> {
        self.check_dims(m)?;
        Ok(self.expand(&self.average_params(m)))
    }

    /// Reads the parameters of a structured matrix from the representatives.
    pub fn vectorize(&self, m: &CMatrix) -> Result<StructuredVector> {
        self.check_dims(m)?;
        let violation = self.violation(m);
        let tolerance = STRUCTURE_TOLERANCE * frobenius(m);
        if violation > tolerance {
            return Err(Error::StructureViolation { violation, tolerance });
        }
        let mut values = RVector::zeros(self.len());
        for (p, &(i, j)) in self.representatives.iter().enumerate() {
            values[2 * p] = m[(i, j)].re;
            values[2 * p + 1] = if self.real_params[p] { 0.0 } else { m[(i, j)].im };
        }
        Ok(StructuredVector {
            values,
            dims: self.dims(),
        })
    }

    pub fn devectorize(&self, v: &StructuredVector) -> Result<CMatrix> {
        self.devectorize_values(&v.values)
    }

    pub fn devectorize_values(&self, v: &RVector) -> Result<CMatrix> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: v.len(),
            });
        }
        let params: Vec<Complex> = (0..self.n_params())
            .map(|p| {
                let im = if self.real_params[p] { 0.0 } else { v[2 * p + 1] };
                Complex::new(v[2 * p], im)
            })
            .collect();
        Ok(self.expand(&params))
    }
}

/// Compressed real vectorization of a structured UPA covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVector {
    pub values: RVector,
    pub dims: (usize, usize),
}

/// Replaces every entry by the average of all entries that the UPA
/// structure assumes identical.
pub fn upa_average(r: &CovarianceMatrix, geom: &UpaGeometry) -> Result<CovarianceMatrix> {
    let s = UpaStructure::new(geom);
    Ok(CovarianceMatrix(s.average(&r.0)?))
}

pub fn structured_vectorize(r: &CovarianceMatrix, geom: &UpaGeometry) -> Result<StructuredVector> {
    UpaStructure::new(geom).vectorize(&r.0)
}

pub fn structured_devectorize(v: &StructuredVector, geom: &UpaGeometry) -> Result<CovarianceMatrix> {
    if v.dims != (geom.n_vertical(), geom.n_horizontal()) {
        return Err(Error::DimensionMismatch {
            expected: geom.n_vertical() * geom.n_horizontal(),
            actual: v.dims.0 * v.dims.1,
        });
    }
    Ok(CovarianceMatrix(UpaStructure::new(geom).devectorize(v)?))
}

/// `vec([Re R, Im R])`: real part column-stacked, then imaginary part.
pub fn full_vectorize(r: &CMatrix) -> RVector {
    let nn = r.len();
    let mut out = RVector::zeros(2 * nn);
    for (k, z) in r.iter().enumerate() {
        out[k] = z.re;
        out[nn + k] = z.im;
    }
    out
}

pub fn full_devectorize(v: &RVector, n: usize) -> Result<CMatrix> {
    let nn = n * n;
    if v.len() != 2 * nn {
        return Err(Error::DimensionMismatch {
            expected: 2 * nn,
            actual: v.len(),
        });
    }
    Ok(CMatrix::from_fn(n, n, |i, j| Complex::new(v[j * n + i], v[nn + j * n + i])))
}
