//! Measurement-matrix ensembles and their diagnostics.
//!
//! Gaussian and Bernoulli matrices are the RIP workhorses. The antipodal
//! scaled ensemble draws column `j` from `{+d_j, -d_j}`; with widely spread
//! `d_j` it is a non-RIP matrix whose l1 recovery needs far more rows, as
//! quantified by the coherence parameter and covariance condition number of
//! its row distribution.

use crate::error::{Error, Result};
use crate::keyrand::RandStream;
use crate::matrix::DenseMatrix;

/// A bijection of `0..n`. As a matrix `P`, row `i` holds its single one in
/// column `map[i]`, so `(P v)[i] = v[map[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &v in &map {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(Error::param("permutation map is not a bijection"));
            }
        }
        Ok(Self { map })
    }

    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &v)| i == v)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &v) in self.map.iter().enumerate() {
            inv[v] = i;
        }
        Self { map: inv }
    }

    /// Matrix product `self · other`.
    pub fn compose(&self, other: &Permutation) -> Self {
        assert_eq!(self.len(), other.len(), "composing permutations of different sizes");
        Self { map: self.map.iter().map(|&p| other.map[p]).collect() }
    }

    /// `P v`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.len(), "permutation length mismatch");
        self.map.iter().map(|&m| v[m]).collect()
    }

    /// `Pᵀ v`.
    pub fn apply_transpose<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.len(), "permutation length mismatch");
        let mut out = vec![T::default(); v.len()];
        for (i, &m) in self.map.iter().enumerate() {
            out[m] = v[i];
        }
        out
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        let n = self.len();
        let mut m = DenseMatrix::zeros(n, n);
        for (i, &v) in self.map.iter().enumerate() {
            m[(i, v)] = 1.0;
        }
        m
    }

    /// `P · a`.
    pub fn permute_rows(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        if a.rows() != self.len() {
            return Err(Error::shape("permute_rows: size mismatch"));
        }
        Ok(a.select_rows(&self.map))
    }

    /// `a · P`.
    pub fn permute_columns(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        if a.cols() != self.len() {
            return Err(Error::shape("permute_columns: size mismatch"));
        }
        Ok(a.select_columns(&self.inverse().map))
    }
}

/// Positive per-column scale factors `d_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingDiag {
    d: Vec<f64>,
}

impl ScalingDiag {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param("scale factors must be finite and positive"));
        }
        Ok(Self { d })
    }

    pub fn ones(n: usize) -> Self {
        Self { d: vec![1.0; n] }
    }

    /// Independent integers uniform in `[1, dmax]`.
    pub fn random_integers(stream: &mut RandStream, n: usize, dmax: u64) -> Result<Self> {
        if dmax < 1 {
            return Err(Error::param("dmax must be at least 1"));
        }
        Ok(Self { d: (0..n).map(|_| stream.next_int_inclusive(1, dmax) as f64).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn reciprocal(&self) -> Self {
        Self { d: self.d.iter().map(|v| 1.0 / v).collect() }
    }

    pub fn max(&self) -> f64 {
        self.d.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    Gaussian,
    Bernoulli,
    AntipodalScaled,
}

/// Row distribution of a measurement ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub rows: usize,
    pub cols: usize,
    pub scaling: Option<ScalingDiag>,
}

/// `rows x cols` matrix of i.i.d. N(0, 1) entries, drawn in row-major order.
pub fn gaussian_matrix(stream: &mut RandStream, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| stream.next_gaussian())
}

/// Equiprobable ±1 entries.
pub fn bernoulli_matrix(stream: &mut RandStream, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| stream.next_sign())
}

/// Column `j` takes `±d_j` with equal probability.
pub fn antipodal_scaled_matrix(
    stream: &mut RandStream,
    rows: usize,
    cols: usize,
    d: &ScalingDiag,
) -> Result<DenseMatrix> {
    if d.len() != cols {
        return Err(Error::shape(format!("{} scale factors for {cols} columns", d.len())));
    }
    let dv = d.values();
    Ok(DenseMatrix::from_fn(rows, cols, |_, j| stream.next_sign() * dv[j]))
}

/// `a · diag(1/d)` computed by division, so `±d_j / d_j` is exactly `±1`.
pub fn descale_columns(a: &DenseMatrix, d: &ScalingDiag) -> Result<DenseMatrix> {
    if d.len() != a.cols() {
        return Err(Error::shape(format!("{} scale factors for {} columns", d.len(), a.cols())));
    }
    let dv = d.values();
    Ok(DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] / dv[j]))
}

/// Rescales every column to unit l2 norm (zero columns are left alone).
pub fn normalize_columns(a: &DenseMatrix) -> DenseMatrix {
    let mut norms = vec![0.0; a.cols()];
    for i in 0..a.rows() {
        for (n, v) in norms.iter_mut().zip(a.row(i)) {
            *n += v * v;
        }
    }
    let factors: Vec<f64> = norms.iter().map(|n| if *n > 0.0 { 1.0 / n.sqrt() } else { 1.0 }).collect();
    a.scale_columns(&factors).expect("factor count equals column count")
}

/// Smallest `μ` with `max_i |<a, e_i>| <= μ` almost surely for a row `a`.
pub fn coherence_parameter(spec: &EnsembleSpec) -> Result<f64> {
    match spec.kind {
        EnsembleKind::Bernoulli => Ok(1.0),
        EnsembleKind::AntipodalScaled => spec
            .scaling
            .as_ref()
            .map(ScalingDiag::max)
            .ok_or_else(|| Error::param("antipodal ensemble needs scale factors")),
        EnsembleKind::Gaussian => Err(Error::param(
            "Gaussian rows are unbounded; the coherence parameter is only defined after truncation",
        )),
    }
}

/// Condition number of `Σ = E[a aᵀ]^{1/2}`. For the antipodal ensemble
/// `Σ = diag(d_j)`.
pub fn covariance_condition(spec: &EnsembleSpec) -> Result<f64> {
    match spec.kind {
        EnsembleKind::Gaussian | EnsembleKind::Bernoulli => Ok(1.0),
        EnsembleKind::AntipodalScaled => spec
            .scaling
            .as_ref()
            .map(|d| d.max() / d.min())
            .ok_or_else(|| Error::param("antipodal ensemble needs scale factors")),
    }
}

/// `μ θ ω² k ln M`, the RIPless row count with its unspecified constant set
/// to one. Only meaningful for relative comparisons.
pub fn ripless_sample_bound(mu: f64, theta: f64, k: f64, m: f64, omega: f64) -> f64 {
    assert!(
        mu > 0.0 && theta > 0.0 && k > 0.0 && m > 1.0 && omega > 0.0,
        "ripless_sample_bound arguments must be positive (and M > 1)"
    );
    mu * theta * omega * omega * k * m.ln()
}

/// Monte-Carlo lower estimate of the restricted isometry constant `δ_k`:
/// the largest `|‖A_T x‖² / ‖x‖² - 1|` over `trials` random supports of size
/// `k` and Gaussian coefficient vectors.
pub fn rip_check_montecarlo(a: &DenseMatrix, k: usize, trials: usize, stream: &mut RandStream) -> Result<f64> {
    if k == 0 || k >= a.cols() {
        return Err(Error::param(format!("sparsity {k} must lie in 1..{}", a.cols())));
    }
    let mut worst: f64 = 0.0;
    let mut ax = vec![0.0; a.rows()];
    for _ in 0..trials {
        let support = crate::keyrand::sample_indices(stream, a.cols(), k);
        let coeffs: Vec<f64> = (0..k).map(|_| stream.next_gaussian()).collect();
        let energy: f64 = coeffs.iter().map(|c| c * c).sum();
        if energy == 0.0 {
            continue;
        }
        for (i, out) in ax.iter_mut().enumerate() {
            let row = a.row(i);
            *out = support.iter().zip(&coeffs).map(|(&j, c)| row[j] * c).sum();
        }
        let ratio = ax.iter().map(|v| v * v).sum::<f64>() / energy;
        worst = worst.max((ratio - 1.0).abs());
    }
    Ok(worst)
}

/// Applies the block-diagonal `diag(A, …, A)` to `vec(X)`, i.e. `A` to each
/// column of `x`, without forming the big matrix.
pub fn block_diagonal_apply(a: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != x.rows() {
        return Err(Error::shape(format!(
            "block_diagonal_apply: A has {} columns, blocks have length {}",
            a.cols(),
            x.rows()
        )));
    }
    a.matmul(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyrand::{derive_stream, KeySeed};
    use crate::matrix::kron;

    fn stream(label: &str) -> RandStream {
        derive_stream(KeySeed(99), label)
    }

    #[test]
    fn permutation_matrix_actions_agree() {
        let p = Permutation::new(vec![2, 0, 3, 1]).unwrap();
        let v = [10.0, 20.0, 30.0, 40.0];
        let pm = p.to_matrix();
        assert_eq!(p.apply(&v), pm.matvec(&v).unwrap());
        assert_eq!(p.apply_transpose(&v), pm.matvec_t(&v).unwrap());
        let a = DenseMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64);
        assert_eq!(p.permute_rows(&a).unwrap(), pm.matmul(&a).unwrap());
        assert_eq!(p.permute_columns(&a).unwrap(), a.matmul(&pm).unwrap());
        let q = Permutation::new(vec![1, 2, 3, 0]).unwrap();
        assert_eq!(p.compose(&q).to_matrix(), pm.matmul(&q.to_matrix()).unwrap());
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![2, 0]).is_err());
    }

    #[test]
    fn gaussian_entries_have_unit_variance_and_replay() {
        let a = gaussian_matrix(&mut stream("g"), 1000, 1000);
        let n = a.as_slice().len() as f64;
        let mean = a.as_slice().iter().sum::<f64>() / n;
        let var = a.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
        assert_eq!(gaussian_matrix(&mut stream("g"), 3, 4), gaussian_matrix(&mut stream("g"), 3, 4));
    }

    #[test]
    fn bernoulli_entries_are_balanced_signs() {
        let a = bernoulli_matrix(&mut stream("b"), 1000, 1000);
        assert!(a.as_slice().iter().all(|v| *v == 1.0 || *v == -1.0));
        let plus = a.as_slice().iter().filter(|v| **v > 0.0).count() as f64 / 1e6;
        assert!((plus - 0.5).abs() < 0.002);
    }

    #[test]
    fn antipodal_reduces_to_bernoulli_and_descales_exactly() {
        let ones = ScalingDiag::ones(30);
        let a = antipodal_scaled_matrix(&mut stream("ap"), 20, 30, &ones).unwrap();
        assert_eq!(a, bernoulli_matrix(&mut stream("ap"), 20, 30));

        let d = ScalingDiag::random_integers(&mut stream("d"), 30, 60).unwrap();
        let phi = antipodal_scaled_matrix(&mut stream("ap"), 20, 30, &d).unwrap();
        for i in 0..20 {
            for j in 0..30 {
                assert_eq!(phi[(i, j)].abs(), d.values()[j]);
            }
        }
        let b = descale_columns(&phi, &d).unwrap();
        assert!(b.as_slice().iter().all(|v| *v == 1.0 || *v == -1.0));
        assert!(antipodal_scaled_matrix(&mut stream("ap"), 2, 3, &ones).is_err());
    }

    #[test]
    fn coherence_and_condition_closed_forms() {
        let bern = EnsembleSpec { kind: EnsembleKind::Bernoulli, rows: 60, cols: 500, scaling: None };
        assert_eq!(coherence_parameter(&bern).unwrap(), 1.0);
        let gauss = EnsembleSpec { kind: EnsembleKind::Gaussian, ..bern.clone() };
        assert_eq!(covariance_condition(&gauss).unwrap(), 1.0);
        assert!(coherence_parameter(&gauss).is_err());

        let flat = EnsembleSpec { kind: EnsembleKind::AntipodalScaled, scaling: Some(ScalingDiag::ones(500)), ..bern.clone() };
        assert_eq!(coherence_parameter(&flat).unwrap(), 1.0);
        assert_eq!(covariance_condition(&flat).unwrap(), 1.0);

        let mut d = vec![7.0; 500];
        d[3] = 60.0;
        d[10] = 1.0;
        let spread = EnsembleSpec { kind: EnsembleKind::AntipodalScaled, scaling: Some(ScalingDiag::new(d).unwrap()), ..bern };
        assert_eq!(coherence_parameter(&spread).unwrap(), 60.0);
        assert_eq!(covariance_condition(&spread).unwrap(), 60.0);
    }

    #[test]
    fn sample_bound_values() {
        let base = ripless_sample_bound(1.0, 1.0, 10.0, 500.0, 1.0);
        assert!((base - 10.0 * 500f64.ln()).abs() < 1e-12);
        assert!((base - 62.146).abs() < 1e-3);
        assert!((ripless_sample_bound(1.0, 1.0, 20.0, 500.0, 1.0) - 2.0 * base).abs() < 1e-12);
        // μθ = 60·60 for d in [1, 60]: thousands of rows, far above 60.
        assert!(ripless_sample_bound(60.0, 60.0, 10.0, 500.0, 1.0) > 100.0 * 60.0);
    }

    #[test]
    fn rip_estimate_zero_for_orthonormal() {
        let q = crate::bases::dct_matrix(32);
        let est = rip_check_montecarlo(&q, 5, 200, &mut stream("rip")).unwrap();
        assert!(est < 1e-12, "{est}");
        assert!(rip_check_montecarlo(&q, 32, 1, &mut stream("rip")).is_err());
    }

    #[test]
    fn rip_estimate_separates_gaussian_from_antipodal() {
        let a = gaussian_matrix(&mut stream("ga"), 60, 500).scaled(1.0 / 60f64.sqrt());
        let g = rip_check_montecarlo(&a, 10, 10_000, &mut stream("rip-g")).unwrap();
        assert!(g < 1.0, "gaussian estimate {g}");
        let d = ScalingDiag::random_integers(&mut stream("d"), 500, 60).unwrap();
        let phi = antipodal_scaled_matrix(&mut stream("phi"), 60, 500, &d).unwrap();
        let p = rip_check_montecarlo(&phi, 10, 10_000, &mut stream("rip-p")).unwrap();
        assert!(p >= 1.0, "antipodal estimate {p}");
    }

    #[test]
    fn normalized_gaussian_passes_rip_check_in_most_seeds() {
        let (m, k) = (500usize, 5usize);
        let rows = (4.0 * k as f64 * (m as f64).ln()).ceil() as usize;
        let mut passes = 0;
        for seed in 0..40 {
            let a = normalize_columns(&gaussian_matrix(&mut derive_stream(KeySeed(seed), "A"), rows, m));
            if rip_check_montecarlo(&a, k, 500, &mut derive_stream(KeySeed(seed), "rip")).unwrap() < 0.9 {
                passes += 1;
            }
        }
        assert!(passes >= 38, "{passes}/40");
    }

    #[test]
    fn block_diagonal_matches_kronecker() {
        let a = DenseMatrix::from_fn(4, 4, |i, j| (i as f64 + 1.0) * 0.5 - j as f64);
        let x = DenseMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64).cos());
        let y = block_diagonal_apply(&a, &x).unwrap();
        // vec stacks columns.
        let vec_x: Vec<f64> = (0..4).flat_map(|j| x.column(j)).collect();
        let big = kron(&DenseMatrix::identity(4), &a);
        let vec_y = big.matvec(&vec_x).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                assert!((y[(i, j)] - vec_y[j * 4 + i]).abs() < 1e-12);
            }
        }
        assert_eq!(block_diagonal_apply(&DenseMatrix::identity(4), &x).unwrap(), x);
        assert!(block_diagonal_apply(&DenseMatrix::identity(3), &x).is_err());
    }
}
