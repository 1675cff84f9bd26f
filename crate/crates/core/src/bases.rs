//! Sparsifying bases and the secret-basis operators.
//!
//! The reality-preserving fractional cosine transform `R_α` is derived from
//! the eigensystem of the orthogonal DCT matrix `C = U Λ U*`:
//!
//! * `C_α = U Λ^α U*` with `λ_i^α = exp(j α φ_i)`, `φ_i ∈ (-π, π]`;
//! * a real length-`M` signal is packed into the complex half-length signal
//!   `x[..M/2] + j x[M/2..]`, transformed by `B_α = C_α` of size `M/2`, and
//!   unpacked again, which gives the real orthogonal block matrix
//!   `R_α = [[Re B_α, -Im B_α], [Im B_α, Re B_α]]`.
//!
//! A basis is handled through the [`Basis`] trait as a pair of linear maps:
//! synthesis `x = Ψ s` and analysis `s = Ψ⁻¹ x`. The key-dependent basis
//! `Ψ_K = R_αᵀ P D Q` is built by stacking the three column operators
//! [`f2_permute`], [`f1_scale`] and [`f3_mix`] on an orthonormal transform,
//! without ever materializing an `M x M` matrix for the 2D case.

use std::collections::HashMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::linalg::Schur;
use num_complex::Complex64;

use crate::ensembles::{Permutation, ScalingDiag};
use crate::error::{Error, Result};
use crate::matrix::{gemm, ComplexMatrix, DenseMatrix};

/// Orthogonal DCT-II analysis matrix: row `l` (frequency), column `i`
/// (sample) holds `ε_l cos(π (2i+1) l / 2n) / √n` with `ε_0 = 1` and
/// `ε_l = √2` otherwise.
pub fn dct_matrix(n: usize) -> DenseMatrix {
    assert!(n >= 1, "DCT size must be positive");
    let scale = 1.0 / (n as f64).sqrt();
    DenseMatrix::from_fn(n, n, |l, i| {
        let eps = if l == 0 { 1.0 } else { std::f64::consts::SQRT_2 };
        scale * eps * (2.0 * PI * ((2 * i + 1) * l) as f64 / (4 * n) as f64).cos()
    })
}

/// Orthonormal eigenvectors (columns of `u`) and eigenvalue arguments of a
/// unitary matrix, sorted by argument.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub u: ComplexMatrix,
    pub phis: Vec<f64>,
}

impl EigenSystem {
    /// `U diag(exp(j p φ_i)) U*`.
    pub fn power(&self, p: f64) -> ComplexMatrix {
        let n = self.phis.len();
        let scaled = ComplexMatrix::from_fn(n, n, |i, k| self.u[(i, k)] * Complex64::from_polar(1.0, p * self.phis[k]));
        scaled.matmul(&self.u.conj_transpose()).expect("square factors")
    }

    pub fn orthonormality_residual(&self) -> f64 {
        self.u.unitarity_residual()
    }
}

const BLOCK_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-9;

/// Eigensystem of `dct_matrix(n)`.
///
/// The real Schur form `C = Z T Zᵀ` of an orthogonal matrix is block
/// diagonal with `±1` entries and 2x2 orthogonal blocks. A rotation block by
/// `φ` carries the pair `exp(±jφ)` with eigenvectors `Z (1, ∓j)/√2`; a
/// reflection block splits into `+1` and `-1`. Eigenpairs are sorted by
/// argument; exact ties are ordered by their rounded eigenvector entries and
/// re-orthonormalized as a group.
pub fn dct_eigensystem(n: usize) -> Result<EigenSystem> {
    let c = dct_matrix(n);
    let schur = Schur::try_new(c.to_nalgebra(), 1e-15, 100 * n.max(10)).ok_or(Error::Eigen { residual: f64::INFINITY })?;
    let (z, t) = schur.unpack();
    let z = DenseMatrix::from_nalgebra(&z);
    let t = DenseMatrix::from_nalgebra(&t);

    let zero = Complex64::new(0.0, 0.0);
    let real_col = |j: usize| -> Vec<Complex64> { z.column(j).into_iter().map(|v| Complex64::new(v, 0.0)).collect() };
    let mut pairs: Vec<(f64, Vec<Complex64>)> = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > BLOCK_TOL {
            let (b00, b01, b10, b11) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let (z0, z1) = (z.column(i), z.column(i + 1));
            let det = b00 * b11 - b01 * b10;
            if det > 0.0 {
                let phi = (0.5 * (b10 - b01)).atan2(0.5 * (b00 + b11));
                if PI - phi.abs() < TIE_TOL {
                    // -I: a doubled -1 eigenvalue.
                    pairs.push((PI, real_col(i)));
                    pairs.push((PI, real_col(i + 1)));
                } else {
                    // R(φ)(1, -j)ᵀ = e^{jφ}(1, -j)ᵀ
                    let plus: Vec<Complex64> = z0.iter().zip(&z1).map(|(a, b)| Complex64::new(*a, -*b) * FRAC_1_SQRT_2).collect();
                    let minus: Vec<Complex64> = plus.iter().map(|v| v.conj()).collect();
                    pairs.push((phi, plus));
                    pairs.push((-phi, minus));
                }
            } else {
                // Symmetric reflection [[cos θ, sin θ], [sin θ, -cos θ]].
                let theta = (0.5 * (b01 + b10)).atan2(0.5 * (b00 - b11));
                let (s, co) = (0.5 * theta).sin_cos();
                let vp: Vec<Complex64> = z0.iter().zip(&z1).map(|(a, b)| Complex64::new(co * a + s * b, 0.0)).collect();
                let vm: Vec<Complex64> = z0.iter().zip(&z1).map(|(a, b)| Complex64::new(-s * a + co * b, 0.0)).collect();
                pairs.push((0.0, vp));
                pairs.push((PI, vm));
            }
            i += 2;
        } else {
            let phi = if t[(i, i)] >= 0.0 { 0.0 } else { PI };
            pairs.push((phi, real_col(i)));
            i += 1;
        }
    }

    let key = |v: &[Complex64]| -> Vec<(i64, i64)> { v.iter().map(|c| ((c.re * 1e8).round() as i64, (c.im * 1e8).round() as i64)).collect() };
    pairs.sort_by(|(pa, va), (pb, vb)| {
        if (pa - pb).abs() < TIE_TOL {
            key(va).cmp(&key(vb))
        } else {
            pa.total_cmp(pb)
        }
    });

    // Modified Gram–Schmidt within each group of tied eigenvalues.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (pairs[end].0 - pairs[start].0).abs() < TIE_TOL {
            end += 1;
        }
        for a in start..end {
            for b in start..a {
                let (left, right) = pairs.split_at_mut(a);
                let vb = &left[b].1;
                let va = &mut right[0].1;
                let dot: Complex64 = vb.iter().zip(va.iter()).map(|(p, q)| p.conj() * q).sum();
                for (q, p) in va.iter_mut().zip(vb) {
                    *q -= dot * p;
                }
            }
            let norm = pairs[a].1.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for q in pairs[a].1.iter_mut() {
                *q /= norm;
            }
        }
        start = end;
    }

    let phis: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let u = ComplexMatrix::from_fn(n, n, |r, k| if pairs[k].1.is_empty() { zero } else { pairs[k].1[r] });
    let system = EigenSystem { u, phis };
    let residual = system.power(1.0).max_abs_diff(&ComplexMatrix::from_real(&c));
    if residual > 1e-10 || !residual.is_finite() {
        return Err(Error::Eigen { residual });
    }
    Ok(system)
}

fn eigensystem_cache() -> &'static Mutex<HashMap<usize, Arc<EigenSystem>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<EigenSystem>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached_eigensystem(n: usize) -> Result<Arc<EigenSystem>> {
    if let Some(es) = eigensystem_cache().lock().expect("cache poisoned").get(&n) {
        return Ok(Arc::clone(es));
    }
    let es = Arc::new(dct_eigensystem(n)?);
    eigensystem_cache().lock().expect("cache poisoned").insert(n, Arc::clone(&es));
    Ok(es)
}

/// Discrete fractional cosine transform `C_α` of size `n`.
pub fn dfrct_matrix(n: usize, alpha: f64) -> Result<ComplexMatrix> {
    if n == 0 {
        return Err(Error::param("DFrCT size must be positive"));
    }
    Ok(cached_eigensystem(n)?.power(alpha))
}

/// Reality-preserving fractional cosine transform `R_α` of even size `m`.
pub fn rpfrct_matrix(m: usize, alpha: f64) -> Result<DenseMatrix> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::param(format!("RPFrCT size must be even and at least 2, got {m}")));
    }
    let h = m / 2;
    let b = dfrct_matrix(h, alpha)?;
    Ok(DenseMatrix::from_fn(m, m, |i, j| {
        let v = b[(i % h, j % h)];
        match (i < h, j < h) {
            (true, true) | (false, false) => v.re,
            (true, false) => -v.im,
            (false, true) => v.im,
        }
    }))
}

type RpKey = (usize, u64);

fn rpfrct_cache() -> &'static Mutex<HashMap<RpKey, Arc<DenseMatrix>>> {
    static CACHE: OnceLock<Mutex<HashMap<RpKey, Arc<DenseMatrix>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Shared `R_α`; repeated keys with the same order reuse one matrix.
pub fn rpfrct_shared(m: usize, alpha: f64) -> Result<Arc<DenseMatrix>> {
    let key = (m, alpha.to_bits());
    if let Some(r) = rpfrct_cache().lock().expect("cache poisoned").get(&key) {
        return Ok(Arc::clone(r));
    }
    let r = Arc::new(rpfrct_matrix(m, alpha)?);
    rpfrct_cache().lock().expect("cache poisoned").insert(key, Arc::clone(&r));
    Ok(r)
}

/// `S = R_α X R_βᵀ`.
pub fn rpfrct2d_forward(x: &DenseMatrix, alpha: f64, beta: f64) -> Result<DenseMatrix> {
    let (n, c) = x.shape();
    if n != c {
        return Err(Error::shape(format!("2D transform needs a square image, got {n}x{c}")));
    }
    let ra = rpfrct_shared(n, alpha)?;
    let rb = rpfrct_shared(n, beta)?;
    ra.matmul(x)?.matmul_nt(&rb)
}

/// `X = R_αᵀ S R_β`.
pub fn rpfrct2d_inverse(s: &DenseMatrix, alpha: f64, beta: f64) -> Result<DenseMatrix> {
    let (n, c) = s.shape();
    if n != c {
        return Err(Error::shape(format!("2D transform needs a square array, got {n}x{c}")));
    }
    let ra = rpfrct_shared(n, alpha)?;
    let rb = rpfrct_shared(n, beta)?;
    ra.matmul_tn(s)?.matmul(&rb)
}

/// A sparsifying basis as a pair of linear maps.
pub trait Basis: Send + Sync {
    fn dim(&self) -> usize;

    /// `x = Ψ s`.
    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>>;

    /// `s = Ψ⁻¹ x`.
    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>>;
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::shape(format!("basis of dimension {want} applied to length {got}")))
    }
}

/// `Ψ = Rᵀ` for an orthogonal analysis matrix `R`.
#[derive(Clone, Debug)]
pub struct OrthoBasis {
    analysis: Arc<DenseMatrix>,
}

impl OrthoBasis {
    pub fn new(analysis: Arc<DenseMatrix>) -> Result<Self> {
        if analysis.rows() != analysis.cols() {
            return Err(Error::shape("orthogonal basis must be square"));
        }
        Ok(Self { analysis })
    }

    pub fn identity(n: usize) -> Self {
        Self { analysis: Arc::new(DenseMatrix::identity(n)) }
    }

    pub fn dct(n: usize) -> Self {
        Self { analysis: Arc::new(dct_matrix(n)) }
    }

    pub fn rpfrct(m: usize, alpha: f64) -> Result<Self> {
        Ok(Self { analysis: rpfrct_shared(m, alpha)? })
    }

    pub fn analysis_matrix(&self) -> &DenseMatrix {
        &self.analysis
    }
}

impl Basis for OrthoBasis {
    fn dim(&self) -> usize {
        self.analysis.rows()
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(coeffs.len(), self.dim())?;
        self.analysis.matvec_t(coeffs)
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        check_len(signal.len(), self.dim())?;
        self.analysis.matvec(signal)
    }
}

/// Separable 2D transform on column-stacked `n x n` arrays:
/// `Ψ⁻¹ = R_β ⊗ R_α`, i.e. `vec(S) = vec(R_α X R_βᵀ)`.
#[derive(Clone, Debug)]
pub struct Kron2dBasis {
    ra: Arc<DenseMatrix>,
    rb: Arc<DenseMatrix>,
    n: usize,
}

impl Kron2dBasis {
    pub fn new(ra: Arc<DenseMatrix>, rb: Arc<DenseMatrix>) -> Result<Self> {
        let n = ra.rows();
        if ra.shape() != (n, n) || rb.shape() != (n, n) {
            return Err(Error::shape("2D basis factors must be square and equal-sized"));
        }
        Ok(Self { ra, rb, n })
    }

    pub fn rpfrct(n: usize, alpha: f64, beta: f64) -> Result<Self> {
        Self::new(rpfrct_shared(n, alpha)?, rpfrct_shared(n, beta)?)
    }

    pub fn side(&self) -> usize {
        self.n
    }

    /// `out = L · X · Rᵀ` on column-major buffers, with `L`, `R` given as
    /// row-major matrices that are optionally transposed.
    fn sandwich(&self, x: &[f64], left: &DenseMatrix, left_t: bool, right: &DenseMatrix, right_t: bool) -> Vec<f64> {
        let n = self.n as isize;
        let nn = self.n;
        let strides = |t: bool| if t { (1, n) } else { (n, 1) };
        let col_major = (1, n);
        let mut tmp = vec![0.0; nn * nn];
        gemm(nn, nn, nn, 1.0, left.as_slice(), strides(left_t), x, col_major, 0.0, &mut tmp, col_major);
        let mut out = vec![0.0; nn * nn];
        // (·)Rᵀ: Rᵀ(i, j) = R(j, i).
        let rt = if right_t { (n, 1) } else { (1, n) };
        gemm(nn, nn, nn, 1.0, &tmp, col_major, right.as_slice(), rt, 0.0, &mut out, col_major);
        out
    }
}

impl Basis for Kron2dBasis {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(coeffs.len(), self.dim())?;
        // X = R_αᵀ S R_β = R_αᵀ S (R_βᵀ)ᵀ
        Ok(self.sandwich(coeffs, &self.ra, true, &self.rb, true))
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        check_len(signal.len(), self.dim())?;
        Ok(self.sandwich(signal, &self.ra, false, &self.rb, false))
    }
}

/// F1: `Ψ' = Ψ diag(factors)`; coefficients become `s'_j = s_j / factor_j`.
pub struct Scaled {
    inner: Box<dyn Basis>,
    factors: Vec<f64>,
}

/// Scales column `j` of the basis by `d_j`.
pub fn f1_scale(basis: Box<dyn Basis>, d: &ScalingDiag) -> Result<Scaled> {
    f1_scale_factors(basis, d.values().to_vec())
}

pub(crate) fn f1_scale_factors(basis: Box<dyn Basis>, factors: Vec<f64>) -> Result<Scaled> {
    check_len(factors.len(), basis.dim())?;
    if factors.iter().any(|f| *f == 0.0 || !f.is_finite()) {
        return Err(Error::param("F1 scale factors must be finite and non-zero"));
    }
    Ok(Scaled { inner: basis, factors })
}

impl Basis for Scaled {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(coeffs.len(), self.dim())?;
        let scaled: Vec<f64> = coeffs.iter().zip(&self.factors).map(|(c, f)| c * f).collect();
        self.inner.synthesize(&scaled)
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.inner.analyze(signal)?;
        for (v, f) in s.iter_mut().zip(&self.factors) {
            *v /= f;
        }
        Ok(s)
    }
}

/// F2: `Ψ' = Ψ P`; coefficients become `s' = Pᵀ s`.
pub struct Permuted {
    inner: Box<dyn Basis>,
    perm: Permutation,
}

pub fn f2_permute(basis: Box<dyn Basis>, perm: Permutation) -> Result<Permuted> {
    check_len(perm.len(), basis.dim())?;
    Ok(Permuted { inner: basis, perm })
}

impl Basis for Permuted {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(coeffs.len(), self.dim())?;
        self.inner.synthesize(&self.perm.apply(coeffs))
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        Ok(self.perm.apply_transpose(&self.inner.analyze(signal)?))
    }
}

/// One F3 record: column `j` becomes `a ψ_j + b ψ_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnMix {
    pub j: usize,
    pub k: usize,
    pub a: f64,
    pub b: f64,
}

impl ColumnMix {
    /// `Q_i s`: the coefficient-side action of the mixed column.
    fn forward(&self, s: &mut [f64]) {
        let sj = s[self.j];
        s[self.j] = self.a * sj;
        s[self.k] += self.b * sj;
    }

    /// `Q_i⁻¹ s`: `s_j / a` at `j`, `s_k - s_j b / a` at `k`.
    pub fn inverse(&self, s: &mut [f64]) {
        let sj = s[self.j];
        s[self.j] = sj / self.a;
        s[self.k] -= sj * self.b / self.a;
    }
}

/// Set of coefficient indices expected to hold the significant coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexRegion {
    member: Vec<bool>,
}

impl IndexRegion {
    pub fn from_indices(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut member = vec![false; dim];
        for i in indices {
            member[i] = true;
        }
        Self { member }
    }

    /// Leading `round(frac · m/2)` indices of each half of a length-`m`
    /// vector (the low-frequency corner of both RPFrCT halves).
    pub fn corners_1d(m: usize, frac: f64) -> Self {
        let h = m / 2;
        let c = ((frac * h as f64).round() as usize).min(h);
        Self::from_indices(m, (0..c).chain(h..h + c))
    }

    /// Upper-left `c x c` corner of each of the four `n/2 x n/2` sub-blocks
    /// of a column-stacked `n x n` coefficient array, `c = round(frac · n/2)`.
    pub fn corners_2d(n: usize, frac: f64) -> Self {
        let h = n / 2;
        let c = ((frac * h as f64).round() as usize).min(h);
        let lines: Vec<usize> = (0..c).chain(h..h + c).collect();
        Self::from_indices(n * n, lines.iter().flat_map(|&col| lines.iter().map(move |&row| col * n + row)))
    }

    pub fn dim(&self) -> usize {
        self.member.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.member[i]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.member.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.member.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The region after coefficients are reordered by `s' = Pᵀ s`.
    pub fn permuted(&self, perm: &Permutation) -> Self {
        Self::from_indices(self.dim(), self.indices().into_iter().map(|i| perm.map()[i]))
    }
}

/// F3: `Ψ' = Ψ Q` with `Q = Q_1 ⋯ Q_r`, one factor per mix record.
pub struct Mixed {
    inner: Box<dyn Basis>,
    mixes: Vec<ColumnMix>,
}

pub fn f3_mix(basis: Box<dyn Basis>, mixes: Vec<ColumnMix>, region: &IndexRegion) -> Result<Mixed> {
    check_len(region.dim(), basis.dim())?;
    for m in &mixes {
        if m.j >= basis.dim() || m.k >= basis.dim() || m.j == m.k {
            return Err(Error::param(format!("mix pair ({}, {}) is not two distinct basis columns", m.j, m.k)));
        }
        if m.a == 0.0 || !m.a.is_finite() || !m.b.is_finite() {
            return Err(Error::param("mix weight a must be non-zero and finite"));
        }
        if region.contains(m.j) != region.contains(m.k) {
            return Err(Error::param(format!("mix pair ({}, {}) crosses the region boundary", m.j, m.k)));
        }
    }
    Ok(Mixed { inner: basis, mixes })
}

impl Basis for Mixed {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(coeffs.len(), self.dim())?;
        let mut s = coeffs.to_vec();
        for m in self.mixes.iter().rev() {
            m.forward(&mut s);
        }
        self.inner.synthesize(&s)
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        let mut s = self.inner.analyze(signal)?;
        for m in &self.mixes {
            m.inverse(&mut s);
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BasisShape {
    /// Signals of length `n`, transformed by `R_α`.
    OneD,
    /// Column-stacked `n x n` images, transformed by `R_β ⊗ R_α`.
    TwoD,
}

/// Everything that defines `Ψ_K = R_αᵀ P D Q`. `scale` holds the `d_j`
/// (`D = diag(1/d_j)`); `region` and the mix indices live in the final
/// coefficient space.
#[derive(Clone, Debug)]
pub struct SecretBasisSpec {
    pub n: usize,
    pub shape: BasisShape,
    pub alpha: f64,
    pub beta: f64,
    pub perm: Permutation,
    pub scale: ScalingDiag,
    pub mixes: Vec<ColumnMix>,
    pub region: IndexRegion,
}

impl SecretBasisSpec {
    pub fn dim(&self) -> usize {
        match self.shape {
            BasisShape::OneD => self.n,
            BasisShape::TwoD => self.n * self.n,
        }
    }

    /// Spec with no permutation, scaling or mixing.
    pub fn plain(n: usize, shape: BasisShape, alpha: f64, beta: f64) -> Self {
        let dim = if shape == BasisShape::OneD { n } else { n * n };
        Self {
            n,
            shape,
            alpha,
            beta,
            perm: Permutation::identity(dim),
            scale: ScalingDiag::ones(dim),
            mixes: Vec::new(),
            region: IndexRegion::from_indices(dim, []),
        }
    }
}

/// The composed key-dependent basis.
pub struct SecretBasis {
    inner: Box<dyn Basis>,
}

pub fn build_secret_basis(spec: &SecretBasisSpec) -> Result<SecretBasis> {
    let dim = spec.dim();
    if spec.perm.len() != dim || spec.scale.len() != dim || spec.region.dim() != dim {
        return Err(Error::param("secret basis components disagree on dimension"));
    }
    let base: Box<dyn Basis> = match spec.shape {
        BasisShape::OneD => Box::new(OrthoBasis::rpfrct(spec.n, spec.alpha)?),
        BasisShape::TwoD => Box::new(Kron2dBasis::rpfrct(spec.n, spec.alpha, spec.beta)?),
    };
    let permuted: Box<dyn Basis> =
        if spec.perm.is_identity() { base } else { Box::new(f2_permute(base, spec.perm.clone())?) };
    let scaled: Box<dyn Basis> = if spec.scale.values().iter().all(|d| *d == 1.0) {
        permuted
    } else {
        Box::new(f1_scale(permuted, &spec.scale.reciprocal())?)
    };
    let mixed: Box<dyn Basis> =
        if spec.mixes.is_empty() { scaled } else { Box::new(f3_mix(scaled, spec.mixes.clone(), &spec.region)?) };
    Ok(SecretBasis { inner: mixed })
}

impl Basis for SecretBasis {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.inner.synthesize(coeffs)
    }

    fn analyze(&self, signal: &[f64]) -> Result<Vec<f64>> {
        self.inner.analyze(signal)
    }
}

/// Keeps the `s` largest-magnitude entries and zeroes the rest. Equal
/// magnitudes are resolved in favour of the lower index.
pub fn best_s_term(coeffs: &[f64], s: usize) -> Vec<f64> {
    assert!(s <= coeffs.len(), "cannot keep {s} of {} coefficients", coeffs.len());
    let mut order: Vec<usize> = (0..coeffs.len()).collect();
    if s < coeffs.len() {
        order.select_nth_unstable_by(s, |&a, &b| coeffs[b].abs().total_cmp(&coeffs[a].abs()).then(a.cmp(&b)));
    }
    let mut out = vec![0.0; coeffs.len()];
    for &i in &order[..s] {
        out[i] = coeffs[i];
    }
    out
}

/// Number of entries with magnitude above `tol`.
pub fn count_nonzero(v: &[f64], tol: f64) -> usize {
    v.iter().filter(|x| x.abs() > tol).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyrand::{derive_stream, random_permutation, KeySeed};
    use crate::matrix::kron;

    #[test]
    fn dct_small_cases() {
        assert_eq!(dct_matrix(1).as_slice(), &[1.0]);
        assert!(dct_matrix(8).orthogonality_residual() < 1e-12);
        let c = dct_matrix(4);
        for l in 0..4 {
            for i in 0..4 {
                let eps = if l == 0 { 1.0 } else { 2f64.sqrt() };
                let direct = 0.5 * eps * (PI * (2.0 * i as f64 + 1.0) * l as f64 / 8.0).cos();
                assert!((c[(l, i)] - direct).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn eigensystem_reconstructs_and_is_orthonormal() {
        for n in [1, 2, 3, 4, 7, 8, 16, 33, 64] {
            let es = dct_eigensystem(n).unwrap();
            assert!(es.orthonormality_residual() < 1e-10, "n={n}");
            assert!(es.power(1.0).max_abs_diff(&ComplexMatrix::from_real(&dct_matrix(n))) < 1e-10, "n={n}");
            assert!(es.phis.iter().all(|p| *p > -PI && *p <= PI));
            assert!(es.phis.windows(2).all(|w| w[0] <= w[1] + TIE_TOL));
        }
    }

    #[test]
    fn dfrct_endpoint_orders() {
        for n in [4, 8, 16] {
            assert!(dfrct_matrix(n, 0.0).unwrap().max_abs_diff(&ComplexMatrix::identity(n)) < 1e-8);
            let one = dfrct_matrix(n, 1.0).unwrap();
            assert!(one.max_abs_diff(&ComplexMatrix::from_real(&dct_matrix(n))) < 1e-8);
            assert!(dfrct_matrix(n, 0.37).unwrap().unitarity_residual() < 1e-8);
        }
    }

    #[test]
    fn dfrct_orders_add() {
        for n in [8, 16, 32] {
            let prod = dfrct_matrix(n, 0.3).unwrap().matmul(&dfrct_matrix(n, 0.7).unwrap()).unwrap();
            assert!(prod.max_abs_diff(&dfrct_matrix(n, 1.0).unwrap()) < 1e-6);
        }
    }

    #[test]
    fn rpfrct_rejects_odd_sizes() {
        assert!(rpfrct_matrix(7, 0.5).is_err());
        assert!(rpfrct_matrix(0, 0.5).is_err());
    }

    #[test]
    fn rpfrct_endpoints() {
        assert!(rpfrct_matrix(8, 0.0).unwrap().max_abs_diff(&DenseMatrix::identity(8)) < 1e-8);
        let r1 = rpfrct_matrix(8, 1.0).unwrap();
        let c = dct_matrix(4);
        let expected = DenseMatrix::from_fn(8, 8, |i, j| if (i < 4) == (j < 4) { c[(i % 4, j % 4)] } else { 0.0 });
        assert!(r1.max_abs_diff(&expected) < 1e-8);
    }

    #[test]
    fn rpfrct_equals_packed_complex_transform() {
        let m = 8;
        let alpha = 0.63;
        let r = rpfrct_matrix(m, alpha).unwrap();
        let b = dfrct_matrix(m / 2, alpha).unwrap();
        let mut s = derive_stream(KeySeed(1), "x");
        let x: Vec<f64> = (0..m).map(|_| s.next_gaussian()).collect();
        let packed: Vec<Complex64> = (0..m / 2).map(|i| Complex64::new(x[i], x[i + m / 2])).collect();
        let y = b.matvec(&packed).unwrap();
        let expected: Vec<f64> = y.iter().map(|c| c.re).chain(y.iter().map(|c| c.im)).collect();
        let got = r.matvec(&x).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn transforms_are_orthogonal_across_sizes() {
        for n in [4, 8, 16, 64, 256, 512] {
            assert!(dct_matrix(n).orthogonality_residual() < 1e-8, "dct {n}");
            for alpha in [0.5, 0.95] {
                assert!(rpfrct_matrix(n, alpha).unwrap().orthogonality_residual() < 1e-8, "rpfrct {n} {alpha}");
            }
        }
    }

    #[test]
    fn rpfrct2d_matches_kronecker_and_round_trips() {
        let n = 4;
        let (alpha, beta) = (0.8, 0.35);
        let x = DenseMatrix::from_fn(n, n, |i, j| ((3 * i + 5 * j) as f64).sin() * 10.0);
        let s = rpfrct2d_forward(&x, alpha, beta).unwrap();
        let big = kron(&rpfrct_matrix(n, beta).unwrap(), &rpfrct_matrix(n, alpha).unwrap());
        let vec_x: Vec<f64> = (0..n).flat_map(|j| x.column(j)).collect();
        let vec_s = big.matvec(&vec_x).unwrap();
        for j in 0..n {
            for i in 0..n {
                assert!((s[(i, j)] - vec_s[j * n + i]).abs() < 1e-12);
            }
        }
        assert!((s.frobenius_norm() - x.frobenius_norm()).abs() < 1e-8);
        assert!(rpfrct2d_inverse(&s, alpha, beta).unwrap().max_abs_diff(&x) < 1e-8);
        assert!(rpfrct2d_forward(&x, 0.0, 0.0).unwrap().max_abs_diff(&x) < 1e-8);

        let basis = Kron2dBasis::rpfrct(n, alpha, beta).unwrap();
        let analyzed = basis.analyze(&vec_x).unwrap();
        for (a, b) in analyzed.iter().zip(&vec_s) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(rpfrct2d_forward(&DenseMatrix::zeros(4, 2), alpha, beta).is_err());
    }

    #[test]
    fn f1_identity_and_coefficient_rule() {
        let dct: Box<dyn Basis> = Box::new(OrthoBasis::dct(8));
        let ones = f1_scale(Box::new(OrthoBasis::dct(8)), &ScalingDiag::ones(8)).unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        assert_eq!(ones.analyze(&x).unwrap(), dct.analyze(&x).unwrap());

        let d = ScalingDiag::new((1..=8).map(f64::from).collect()).unwrap();
        let scaled = f1_scale(Box::new(OrthoBasis::dct(8)), &d).unwrap();
        let s = dct.analyze(&x).unwrap();
        let s2 = scaled.analyze(&x).unwrap();
        for j in 0..8 {
            assert!((s2[j] - s[j] / d.values()[j]).abs() < 1e-14);
        }
        assert!(f1_scale_factors(Box::new(OrthoBasis::dct(2)), vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn f2_moves_support() {
        let p = Permutation::new(vec![3, 0, 1, 2]).unwrap();
        let basis = f2_permute(Box::new(OrthoBasis::identity(4)), p.clone()).unwrap();
        let s = [0.0, 5.0, 0.0, 0.0];
        let x = OrthoBasis::identity(4).synthesize(&s).unwrap();
        let s2 = basis.analyze(&x).unwrap();
        // s' = Pᵀ s: entry i of s lands at map[i].
        assert_eq!(s2, vec![0.0, 0.0, 0.0, 0.0].iter().enumerate().map(|(i, _)| if i == p.map()[1] { 5.0 } else { 0.0 }).collect::<Vec<_>>());
        assert!(f2_permute(Box::new(OrthoBasis::identity(3)), p).is_err());
    }

    #[test]
    fn f3_coefficient_update_closed_form() {
        let mix = ColumnMix { j: 1, k: 3, a: 2.0, b: 3.0 };
        let region = IndexRegion::from_indices(5, [1, 3]);
        let basis = f3_mix(Box::new(OrthoBasis::identity(5)), vec![mix], &region).unwrap();
        let s = [0.0, 4.0, 0.0, 5.0, 0.0];
        let x = OrthoBasis::identity(5).synthesize(&s).unwrap();
        assert_eq!(basis.analyze(&x).unwrap(), vec![0.0, 2.0, 0.0, -1.0, 0.0]);

        let outside = f3_mix(Box::new(OrthoBasis::identity(5)), vec![ColumnMix { j: 0, k: 4, a: 2.0, b: 3.0 }], &region).unwrap();
        assert_eq!(outside.analyze(&x).unwrap(), s.to_vec());

        let trivial = f3_mix(Box::new(OrthoBasis::identity(5)), vec![ColumnMix { j: 0, k: 4, a: 1.0, b: 0.0 }], &region).unwrap();
        assert_eq!(trivial.analyze(&x).unwrap(), s.to_vec());

        let crossing = f3_mix(Box::new(OrthoBasis::identity(5)), vec![ColumnMix { j: 1, k: 2, a: 1.0, b: 1.0 }], &region);
        assert!(matches!(crossing, Err(Error::InvalidParameter(_))));
        let zero_a = f3_mix(Box::new(OrthoBasis::identity(5)), vec![ColumnMix { j: 1, k: 3, a: 0.0, b: 1.0 }], &region);
        assert!(zero_a.is_err());
    }

    #[test]
    fn plain_secret_basis_is_dct_blocks() {
        let spec = SecretBasisSpec::plain(16, BasisShape::OneD, 1.0, 1.0);
        let basis = build_secret_basis(&spec).unwrap();
        let r1 = rpfrct_matrix(16, 1.0).unwrap();
        let x: Vec<f64> = (0..16).map(|i| (i as f64).cos()).collect();
        let a = basis.analyze(&x).unwrap();
        let b = r1.matvec(&x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn secret_basis_round_trip() {
        let n = 64;
        let mut st = derive_stream(KeySeed(4), "basis");
        let perm = random_permutation(&mut st, n);
        let scale = ScalingDiag::random_integers(&mut st, n, 60).unwrap();
        let region = IndexRegion::corners_1d(n, 0.25).permuted(&perm);
        let idx = region.indices();
        let mixes = vec![
            ColumnMix { j: idx[0], k: idx[1], a: 1.5, b: -0.7 },
            ColumnMix { j: idx[2], k: idx[3], a: -0.6, b: 1.9 },
        ];
        let spec = SecretBasisSpec { n, shape: BasisShape::OneD, alpha: 0.9, beta: 0.9, perm, scale, mixes, region };
        let basis = build_secret_basis(&spec).unwrap();
        let x: Vec<f64> = (0..n).map(|_| st.next_gaussian()).collect();
        let back = basis.synthesize(&basis.analyze(&x).unwrap()).unwrap();
        let err = x.iter().zip(&back).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corner_regions() {
        let r = IndexRegion::corners_1d(16, 0.25);
        assert_eq!(r.indices(), vec![0, 1, 8, 9]);
        let r2 = IndexRegion::corners_2d(8, 0.25);
        // c = 1: the four sub-block origins (0,0), (4,0), (0,4), (4,4).
        assert_eq!(r2.indices(), vec![0, 4, 32, 36]);
    }

    #[test]
    fn best_s_term_examples() {
        let c = [3.0, -5.0, 1.0, 4.0];
        assert_eq!(best_s_term(&c, 4), c.to_vec());
        assert_eq!(best_s_term(&c, 0), vec![0.0; 4]);
        assert_eq!(best_s_term(&c, 2), vec![0.0, -5.0, 0.0, 4.0]);
    }

    #[test]
    fn best_s_term_beats_every_other_support() {
        let c = [3.0, -5.0, 1.0, 4.0];
        let kept = best_s_term(&c, 2);
        let err = |v: &[f64]| c.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for a in 0..4 {
            for b in a + 1..4 {
                let mut v = vec![0.0; 4];
                v[a] = c[a];
                v[b] = c[b];
                assert!(err(&kept) <= err(&v));
            }
        }
    }
}
