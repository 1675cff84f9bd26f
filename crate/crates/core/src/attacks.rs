//! Chosen-plaintext attacks and the wrong-key demonstrations.
//!
//! Every cipher in this crate is linear in the plaintext, so submitting the
//! canonical vectors `e_1, …, e_M` reveals the equivalent measurement matrix
//! column by column. For the scrambling and phase-mask ciphers that matrix,
//! combined with a public sparsifying basis, is as good as the key. For
//! BLP-CS it is `Φ = A_K Ψ_K⁻¹`, a non-RIP matrix with which sparse
//! decoding fails.

use std::cell::Cell;

use crate::bases::Basis;
use crate::ensembles::Permutation;
use crate::error::{Error, Result};
use crate::keyrand::{derive_stream, random_permutation, KeySeed, RandStream};
use crate::matrix::{norm2, relative_error, DenseMatrix};
use crate::solvers::{omp_recover, sparse_decode, SensingOperator, SolverConfig};

type EncodeFn<'a> = Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

/// Black-box access to an encoder under a fixed key. Queries are counted.
pub struct EncryptionOracle<'a> {
    m: usize,
    encode: EncodeFn<'a>,
    queries: Cell<usize>,
}

impl<'a> EncryptionOracle<'a> {
    pub fn new(m: usize, encode: impl Fn(&[f64]) -> Result<Vec<f64>> + 'a) -> Self {
        Self { m, encode: Box::new(encode), queries: Cell::new(0) }
    }

    pub fn input_len(&self) -> usize {
        self.m
    }

    pub fn query(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.m {
            return Err(Error::shape(format!("oracle takes length-{} inputs, got {}", self.m, x.len())));
        }
        self.queries.set(self.queries.get() + 1);
        (self.encode)(x)
    }

    pub fn queries(&self) -> usize {
        self.queries.get()
    }
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub recovered_matrix: DenseMatrix,
    /// Queries spent on recovering the matrix.
    pub queries_used: usize,
    /// Extra queries spent on the linearity spot check.
    pub check_queries: usize,
    pub break_success: bool,
    pub reconstruction_error: f64,
}

/// Relative error below which a decode counts as a break.
pub const BREAK_THRESHOLD: f64 = 1e-3;

const LINEARITY_TOL: f64 = 1e-9;

/// Column `j` of the recovered matrix is `oracle(e_j)`.
///
/// Afterwards two random superpositions are submitted and compared with the
/// recovered matrix's prediction; a relative mismatch above `1e-9` means the
/// oracle is not linear and is reported as [`Error::NotLinear`].
pub fn cpa_recover_matrix(oracle: &EncryptionOracle) -> Result<AttackReport> {
    let m = oracle.input_len();
    let start = oracle.queries();
    let mut e = vec![0.0; m];
    let mut cols = Vec::with_capacity(m);
    for j in 0..m {
        e[j] = 1.0;
        cols.push(oracle.query(&e)?);
        e[j] = 0.0;
    }
    let rows = cols.first().map_or(0, Vec::len);
    if cols.iter().any(|c| c.len() != rows) {
        return Err(Error::NotLinear { deviation: f64::INFINITY });
    }
    let recovered = DenseMatrix::from_columns(&cols)?;
    let queries_used = oracle.queries() - start;

    let mut st = derive_stream(KeySeed(0x5eed), "cpa/check");
    let mut deviation: f64 = 0.0;
    for _ in 0..2 {
        let u: Vec<f64> = (0..m).map(|_| st.next_gaussian()).collect();
        let got = oracle.query(&u)?;
        let predicted = recovered.matvec(&u)?;
        if got.len() != predicted.len() {
            return Err(Error::NotLinear { deviation: f64::INFINITY });
        }
        let scale = norm2(&got).max(norm2(&predicted)).max(f64::MIN_POSITIVE);
        let diff: f64 = got.iter().zip(&predicted).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        deviation = deviation.max(diff / scale);
    }
    if deviation > LINEARITY_TOL {
        return Err(Error::NotLinear { deviation });
    }
    Ok(AttackReport {
        recovered_matrix: recovered,
        queries_used,
        check_queries: oracle.queries() - start - queries_used,
        break_success: false,
        reconstruction_error: f64::NAN,
    })
}

/// Dense `Ψ` of a basis, one synthesized column per coefficient.
pub fn basis_matrix(basis: &dyn Basis) -> Result<DenseMatrix> {
    let n = basis.dim();
    let mut e = vec![0.0; n];
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        e[j] = 1.0;
        cols.push(basis.synthesize(&e)?);
        e[j] = 0.0;
    }
    DenseMatrix::from_columns(&cols)
}

/// Single-step decode with the recovered matrix: sparse `s` from
/// `c = recovered · Ψ s` under the public basis, then `x = Ψ s`.
pub fn cpa_break_and_decode(
    recovered: &DenseMatrix,
    c: &[f64],
    public_basis: &dyn Basis,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    if public_basis.dim() != recovered.cols() {
        return Err(Error::shape("public basis does not match the recovered matrix"));
    }
    let effective = recovered.matmul(&basis_matrix(public_basis)?)?;
    let rep = sparse_decode(&SensingOperator::new(effective), c, config)?;
    public_basis.synthesize(&rep.estimate)
}

/// Recover the matrix, decode `c`, and score against the true plaintext.
pub fn run_cpa(
    oracle: &EncryptionOracle,
    c: &[f64],
    truth: &[f64],
    public_basis: &dyn Basis,
    config: &SolverConfig,
) -> Result<AttackReport> {
    let mut report = cpa_recover_matrix(oracle)?;
    let x = cpa_break_and_decode(&report.recovered_matrix, c, public_basis, config)?;
    report.reconstruction_error = relative_error(&x, truth);
    report.break_success = report.reconstruction_error < BREAK_THRESHOLD;
    Ok(report)
}

/// Outcome of decoding under a substitute sensing matrix.
#[derive(Clone, Debug)]
pub struct WrongKeyReport {
    /// `K`-sparse solution under the substitute matrix.
    pub x_wrong: Vec<f64>,
    /// `‖y - A_wrong x_wrong‖₂`.
    pub residual: f64,
    pub support_size: usize,
    /// Solution of the legitimate decoder under the right matrix.
    pub x_right: Vec<f64>,
    /// `‖x_wrong - x_right‖ / ‖x_right‖`.
    pub relative_error: f64,
}

/// Decodes `y` under the right matrix and under a wrong one. With a
/// Gaussian `A_wrong` and `K < M`, a greedy fit with a budget of `K`
/// columns finds a `K`-sparse vector that explains `y` exactly but is
/// unrelated to the plaintext.
pub fn wrong_key_recovery_demo(a: &DenseMatrix, a_wrong: &DenseMatrix, y: &[f64]) -> Result<WrongKeyReport> {
    if a.shape() != a_wrong.shape() {
        return Err(Error::shape("right and wrong matrices differ in shape"));
    }
    let config = SolverConfig { residual_tol: 1e-12, ..SolverConfig::default() };
    let x_right = sparse_decode(&SensingOperator::new(a.clone()), y, &config)?.estimate;
    let wrong = omp_recover(a_wrong, y, a.rows().min(a.cols()), &config)?;
    let support_size = wrong.estimate.iter().filter(|v| **v != 0.0).count();
    Ok(WrongKeyReport {
        relative_error: relative_error(&wrong.estimate, &x_right),
        residual: wrong.residual_l2,
        support_size,
        x_wrong: wrong.estimate,
        x_right,
    })
}

/// Checks `EF = (EP)(PᵀF)` for `trials` random permutations, and that each
/// row of `EP` holds the same entries as the corresponding row of `E`.
pub fn decomposition_ambiguity_check(e: &DenseMatrix, f: &DenseMatrix, trials: usize, stream: &mut RandStream) -> Result<bool> {
    if e.cols() != f.rows() {
        return Err(Error::shape("E and F do not compose"));
    }
    let ef = e.matmul(f)?;
    let sorted_rows = |m: &DenseMatrix| -> Vec<Vec<f64>> {
        (0..m.rows())
            .map(|i| {
                let mut r = m.row(i).to_vec();
                r.sort_by(f64::total_cmp);
                r
            })
            .collect()
    };
    let e_rows = sorted_rows(e);
    for t in 0..trials {
        let p = if t == 0 { Permutation::identity(e.cols()) } else { random_permutation(stream, e.cols()) };
        let ep = p.permute_columns(e)?;
        let ptf = p.inverse().permute_rows(f)?;
        let tol = 1e-10 * (1.0 + ef.max_abs());
        if ep.matmul(&ptf)?.max_abs_diff(&ef) >= tol || sorted_rows(&ep) != e_rows {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Largest `M` for which `2^M` is exact in a 64-bit float with room for the
/// sign offset.
pub const SINGLE_QUERY_MAX_M: usize = 50;

/// Recovers a ±1 measurement matrix from one query with the plaintext
/// `(2^0, 2^1, …, 2^{M-1})`: each measurement `y_i = Σ_j b_ij 2^j` encodes
/// row `i` in binary through `(y_i + 2^M - 1) / 2`.
pub fn bernoulli_single_query_attack(oracle: &EncryptionOracle) -> Result<DenseMatrix> {
    let m = oracle.input_len();
    if m > SINGLE_QUERY_MAX_M {
        return Err(Error::Guard(format!("single-query attack limited to M <= {SINGLE_QUERY_MAX_M}, got {m}")));
    }
    let x: Vec<f64> = (0..m).map(|j| (1u64 << j) as f64).collect();
    let y = oracle.query(&x)?;
    let offset = (1u64 << m) - 1;
    let mut rows = Vec::with_capacity(y.len());
    for v in y {
        let shifted = v + offset as f64;
        if shifted.fract() != 0.0 || shifted < 0.0 || shifted > (2 * offset) as f64 || (shifted as u64) % 2 != 0 {
            return Err(Error::param("measurement is not a ±1 combination of powers of two"));
        }
        let bits = (shifted as u64) / 2;
        rows.push((0..m).map(|j| if bits >> j & 1 == 1 { 1.0 } else { -1.0 }).collect::<Vec<f64>>());
    }
    let flat: Vec<f64> = rows.concat();
    DenseMatrix::from_row_major(rows.len(), m, flat)
}
