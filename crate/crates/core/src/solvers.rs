//! Sparse recovery.
//!
//! * [`omp_recover`]: orthogonal matching pursuit for exactly sparse signals;
//! * [`ista_bpdn`]: iterative soft thresholding for
//!   `min ½‖y - A s‖² + λ‖s‖₁`, with geometric continuation on `λ`;
//! * [`ista_bpdn_columns`]: the same iteration run on many right-hand sides
//!   at once through matrix-matrix products (image columns);
//! * [`l0_bruteforce`]: exhaustive search over small supports;
//! * [`sparse_decode`] and [`two_step_decode`]: the decoder used by the
//!   cipher, which first solves for the coefficients and then synthesizes.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SVD};
use rayon::prelude::*;

use crate::bases::Basis;
use crate::error::{Error, Result};
use crate::matrix::{gemm, norm2, DenseMatrix};

/// Support-indexed sparse vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseRep {
    len: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRep {
    pub fn new(len: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::shape("support and values differ in length"));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) || support.last().is_some_and(|&i| i >= len) {
            return Err(Error::param("support must be strictly ascending and in range"));
        }
        Ok(Self { len, support, values })
    }

    /// Entries with magnitude above `tol`.
    pub fn from_dense(v: &[f64], tol: f64) -> Self {
        let (support, values) = v.iter().enumerate().filter(|(_, x)| x.abs() > tol).map(|(i, x)| (i, *x)).unzip();
        Self { len: v.len(), support, values }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (&i, &v) in self.support.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l0(&self) -> usize {
        self.support.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda {
    Absolute(f64),
    /// Fraction of `‖Aᵀy‖∞`.
    Relative(f64),
    /// `f · (N/K)² · ‖Aᵀy‖∞` with `K` the observed rows, capped at half the
    /// continuation start. Fewer rows fold more of a compressible tail into
    /// the measurements, so the weight grows as the rate drops.
    RateScaled(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub residual_tol: f64,
    /// Final shrinkage weight.
    pub lambda: Lambda,
    /// Geometric continuation from `0.1‖Aᵀy‖∞` down to the final weight.
    pub continuation: bool,
    pub stages: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 400, residual_tol: 1e-10, lambda: Lambda::Relative(1e-3), continuation: true, stages: 8 }
    }
}

impl SolverConfig {
    /// Settings for image columns: the weight equals `Relative(1e-3)` at
    /// half rate and follows the observed rate elsewhere.
    pub fn image() -> Self {
        Self { lambda: Lambda::RateScaled(2.5e-4), ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.residual_tol <= 0.0 || self.stages == 0 {
            return Err(Error::param("solver needs max_iters >= 1, residual_tol > 0 and stages >= 1"));
        }
        match self.lambda {
            Lambda::Absolute(l) | Lambda::Relative(l) | Lambda::RateScaled(l) if l.is_finite() && l >= 0.0 => Ok(()),
            _ => Err(Error::param("lambda must be finite and non-negative")),
        }
    }

    fn final_lambda(&self, aty_inf: f64, rate: f64) -> f64 {
        match self.lambda {
            Lambda::Absolute(l) => l,
            Lambda::Relative(f) => f * aty_inf,
            Lambda::RateScaled(f) => (f / (rate * rate)).min(0.05) * aty_inf,
        }
    }

    /// `(λ, iterations)` per continuation stage; `rate` is observed rows
    /// over unknowns.
    fn schedule(&self, aty_inf: f64, rate: f64) -> Vec<(f64, usize)> {
        let end = self.final_lambda(aty_inf, rate);
        let start = 0.1 * aty_inf;
        let stages = if self.continuation && start > end && end > 0.0 { self.stages.min(self.max_iters) } else { 1 };
        let per = self.max_iters / stages;
        (0..stages)
            .map(|s| {
                let lam = if stages == 1 { end } else { start * (end / start).powf(s as f64 / (stages - 1) as f64) };
                let iters = if s + 1 == stages { self.max_iters - per * (stages - 1) } else { per };
                (lam, iters)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RecoveryReport {
    pub estimate: Vec<f64>,
    /// `‖y - A·estimate‖₂`, recomputed at exit.
    pub residual_l2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The least-squares refit saw linearly dependent active columns.
    pub rank_deficient: bool,
    /// Objective value after every iteration, at that iteration's `λ`
    /// (ISTA only).
    pub objective: Vec<f64>,
}

struct OperatorInner {
    matrix: DenseMatrix,
    lipschitz: OnceLock<f64>,
    pinv: OnceLock<(DenseMatrix, usize)>,
    col_norms: OnceLock<Vec<f64>>,
}

/// A sensing matrix together with lazily computed, shared factorizations:
/// the spectral-norm estimate used for the ISTA step and the
/// pseudoinverse used when the system is square or overdetermined. Clones
/// share the caches, so many decodes under one key pay for them once.
#[derive(Clone)]
pub struct SensingOperator {
    inner: Arc<OperatorInner>,
}

impl SensingOperator {
    pub fn new(matrix: DenseMatrix) -> Self {
        Self {
            inner: Arc::new(OperatorInner {
                matrix,
                lipschitz: OnceLock::new(),
                pinv: OnceLock::new(),
                col_norms: OnceLock::new(),
            }),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.inner.matrix
    }

    pub fn rows(&self) -> usize {
        self.inner.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.inner.matrix.cols()
    }

    /// Upper estimate of `‖A‖₂²`: 30 power iterations on `AᵀA`, inflated
    /// by 2%.
    pub fn lipschitz(&self) -> f64 {
        *self.inner.lipschitz.get_or_init(|| 1.02 * spectral_norm_sq(&self.inner.matrix, 30))
    }

    /// Moore–Penrose pseudoinverse (cached).
    pub fn pseudoinverse(&self) -> &DenseMatrix {
        &self.factored().0
    }

    /// Numerical rank from the same SVD as the pseudoinverse.
    pub fn rank(&self) -> usize {
        self.factored().1
    }

    fn factored(&self) -> &(DenseMatrix, usize) {
        self.inner.pinv.get_or_init(|| {
            let a = self.inner.matrix.to_nalgebra();
            let svd = SVD::new(a, true, true);
            let eps = svd.singular_values.max() * 1e-12 * self.rows().max(self.cols()) as f64;
            let rank = svd.rank(eps);
            (DenseMatrix::from_nalgebra(&svd.pseudo_inverse(eps).expect("u and v were computed")), rank)
        })
    }

    fn col_norms(&self) -> &[f64] {
        self.inner.col_norms.get_or_init(|| {
            let a = &self.inner.matrix;
            let mut n = vec![0.0; a.cols()];
            for i in 0..a.rows() {
                for (acc, v) in n.iter_mut().zip(a.row(i)) {
                    *acc += v * v;
                }
            }
            n.into_iter().map(f64::sqrt).collect()
        })
    }

    fn ptr_eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl std::fmt::Debug for SensingOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SensingOperator").field("rows", &self.rows()).field("cols", &self.cols()).finish()
    }
}

impl PartialEq for SensingOperator {
    fn eq(&self, other: &Self) -> bool {
        self.ptr_eq(other) || self.matrix() == other.matrix()
    }
}

/// Power iteration for the largest eigenvalue of `AᵀA`.
fn spectral_norm_sq(a: &DenseMatrix, steps: usize) -> f64 {
    let n = a.cols();
    // Fixed, non-degenerate start vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let mut est = 0.0;
    for _ in 0..steps {
        let nv = norm2(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= nv);
        let av = a.matvec(&v).expect("shape");
        let w = a.matvec_t(&av).expect("shape");
        est = av.iter().map(|x| x * x).sum::<f64>();
        v = w;
    }
    est
}

/// Minimum-norm least squares through an SVD; returns `(solution, rank)`.
pub(crate) fn lstsq(a: &DenseMatrix, y: &[f64]) -> (Vec<f64>, usize) {
    if a.cols() == 0 {
        return (Vec::new(), 0);
    }
    let m = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
    let svd = SVD::new(m, true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * a.rows().max(a.cols()) as f64;
    let rank = svd.rank(eps);
    let b = DVector::from_column_slice(y);
    let x = svd.solve(&b, eps).expect("u and v were computed");
    (x.iter().copied().collect(), rank)
}

fn residual_norm(a: &DenseMatrix, s: &[f64], y: &[f64]) -> f64 {
    let ax = a.matvec(s).expect("shape");
    ax.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn check_rhs(a: &DenseMatrix, y: &[f64]) -> Result<()> {
    if a.rows() != y.len() {
        return Err(Error::shape(format!("{} measurements for a {}-row matrix", y.len(), a.rows())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("measurements must be finite"));
    }
    Ok(())
}

/// Orthogonal matching pursuit.
///
/// Each step selects the column with the largest normalized correlation
/// `|a_jᵀ r| / ‖a_j‖`, orthogonalizes it against the active set and updates
/// the residual. Stops after `budget` columns or once
/// `‖r‖ ≤ residual_tol · ‖y‖`. Coefficients come from the Gram–Schmidt QR
/// of the active columns; a column found to be dependent on the active set
/// flags the report and switches the final fit to a minimum-norm SVD solve.
pub fn omp_recover(a: &DenseMatrix, y: &[f64], budget: usize, config: &SolverConfig) -> Result<RecoveryReport> {
    config.validate()?;
    check_rhs(a, y)?;
    if budget > a.rows() {
        return Err(Error::param(format!("sparsity budget {budget} exceeds {} rows", a.rows())));
    }
    let op = SensingOperator::new(a.clone());
    Ok(omp_with(&op, y, budget, config))
}

fn omp_with(op: &SensingOperator, y: &[f64], budget: usize, config: &SolverConfig) -> RecoveryReport {
    let a = op.matrix();
    let norms = op.col_norms();
    let ynorm = norm2(y);
    let mut r = y.to_vec();
    let mut active: Vec<usize> = Vec::new();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut selected = vec![false; a.cols()];
    let mut rank_deficient = false;
    let stop = config.residual_tol * ynorm;

    while active.len() < budget && norm2(&r) > stop {
        let corr = a.matvec_t(&r).expect("shape");
        let mut best = None;
        let mut best_val = 0.0;
        for (j, c) in corr.iter().enumerate() {
            if selected[j] || norms[j] == 0.0 {
                continue;
            }
            let v = c.abs() / norms[j];
            if v > best_val {
                best_val = v;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        if best_val <= 1e-14 * ynorm.max(f64::MIN_POSITIVE) {
            break;
        }
        let mut q = a.column(j);
        let mut rcol = vec![0.0; basis.len() + 1];
        // Two Gram–Schmidt passes.
        for _ in 0..2 {
            for (b, rc) in basis.iter().zip(rcol.iter_mut()) {
                let d: f64 = b.iter().zip(&q).map(|(p, v)| p * v).sum();
                *rc += d;
                q.iter_mut().zip(b).for_each(|(v, p)| *v -= d * p);
            }
        }
        selected[j] = true;
        let qn = norm2(&q);
        if qn <= 1e-10 * norms[j] {
            rank_deficient = true;
            continue;
        }
        q.iter_mut().for_each(|v| *v /= qn);
        rcol[basis.len()] = qn;
        let d: f64 = q.iter().zip(&r).map(|(p, v)| p * v).sum();
        r.iter_mut().zip(&q).for_each(|(v, p)| *v -= d * p);
        basis.push(q);
        r_cols.push(rcol);
        active.push(j);
    }

    let mut estimate = vec![0.0; a.cols()];
    if rank_deficient {
        // Minimum-norm refit on everything that was tried.
        let tried: Vec<usize> = (0..a.cols()).filter(|&j| selected[j]).collect();
        let (coef, _) = lstsq(&a.select_columns(&tried), y);
        for (&j, c) in tried.iter().zip(&coef) {
            estimate[j] = *c;
        }
    } else {
        // Back substitution on A_S = Q R.
        let qty: Vec<f64> = basis.iter().map(|b| b.iter().zip(y).map(|(p, v)| p * v).sum()).collect();
        let t = active.len();
        let mut coef = vec![0.0; t];
        for i in (0..t).rev() {
            let tail: f64 = (i + 1..t).map(|c| r_cols[c][i] * coef[c]).sum();
            coef[i] = (qty[i] - tail) / r_cols[i][i];
        }
        for (&j, c) in active.iter().zip(&coef) {
            estimate[j] = *c;
        }
    }
    let residual_l2 = residual_norm(a, &estimate, y);
    RecoveryReport {
        estimate,
        residual_l2,
        iterations: active.len(),
        converged: residual_l2 <= stop.max(1e-12 * ynorm),
        rank_deficient,
        objective: Vec::new(),
    }
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn objective(r: &[f64], s: &[f64], lam: f64) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>() + lam * s.iter().map(|v| v.abs()).sum::<f64>()
}

/// Iterative soft thresholding with step `1/L`.
///
/// `L` starts from the power-iteration estimate of `‖A‖₂²` and is doubled
/// whenever a step would increase the objective, so the objective is
/// non-increasing within every continuation stage. A stage ends after its
/// iteration share or when the relative objective change drops below
/// `residual_tol`.
pub fn ista_bpdn(a: &DenseMatrix, y: &[f64], config: &SolverConfig) -> Result<RecoveryReport> {
    config.validate()?;
    check_rhs(a, y)?;
    ista_with(&SensingOperator::new(a.clone()), y, config)
}

fn ista_with(op: &SensingOperator, y: &[f64], config: &SolverConfig) -> Result<RecoveryReport> {
    let a = op.matrix();
    let n = a.cols();
    let aty = a.matvec_t(y)?;
    let aty_inf = aty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = vec![0.0; n];
    if aty_inf == 0.0 {
        return Ok(RecoveryReport {
            residual_l2: norm2(y),
            estimate: s,
            iterations: 0,
            converged: true,
            rank_deficient: false,
            objective: Vec::new(),
        });
    }
    let mut lip = op.lipschitz();
    if !(lip.is_finite() && lip > 0.0) {
        return Err(Error::Solver(format!("step size from spectral-norm estimate {lip}")));
    }
    let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let schedule = config.schedule(aty_inf, op.rows() as f64 / op.cols() as f64);
    let last_stage = schedule.len() - 1;
    for (stage, &(lam, iters)) in schedule.iter().enumerate() {
        let mut f = objective(&r, &s, lam);
        for _ in 0..iters {
            let g = a.matvec_t(&r)?;
            let (cand, cand_r, cand_f) = loop {
                let cand: Vec<f64> = s.iter().zip(&g).map(|(sv, gv)| soft(sv - gv / lip, lam / lip)).collect();
                let ax = a.matvec(&cand)?;
                let cand_r: Vec<f64> = ax.iter().zip(y).map(|(p, q)| p - q).collect();
                let cand_f = objective(&cand_r, &cand, lam);
                if cand_f <= f * (1.0 + 1e-14) + 1e-300 || lip > 1e300 {
                    break (cand, cand_r, cand_f);
                }
                lip *= 2.0;
            };
            iterations += 1;
            let change = (f - cand_f).abs() / f.max(f64::MIN_POSITIVE);
            s = cand;
            r = cand_r;
            f = cand_f;
            trace.push(f);
            if change < config.residual_tol {
                if stage == last_stage {
                    converged = true;
                }
                break;
            }
        }
    }
    Ok(RecoveryReport {
        residual_l2: residual_norm(a, &s, y),
        estimate: s,
        iterations,
        converged,
        rank_deficient: false,
        objective: trace,
    })
}

/// Column block size for the batched solver. Fixed so results do not
/// depend on the thread count.
const COLUMN_CHUNK: usize = 32;

/// ISTA on every column of `y` (`K x c`) at once, returning the `N x c`
/// coefficient matrix.
///
/// `mask`, when given, has the shape of `y` with 1 for a received and 0 for
/// a lost measurement; lost rows are dropped from that column's problem.
/// Each column uses its own `λ` schedule relative to its `‖Aᵀy‖∞`. The
/// full-matrix step size remains valid for every row subset.
pub fn ista_bpdn_columns(
    op: &SensingOperator,
    y: &DenseMatrix,
    mask: Option<&DenseMatrix>,
    config: &SolverConfig,
) -> Result<DenseMatrix> {
    config.validate()?;
    let a = op.matrix();
    let (k, n) = a.shape();
    let c = y.cols();
    if y.rows() != k {
        return Err(Error::shape(format!("{} measurement rows for a {k}-row matrix", y.rows())));
    }
    if let Some(m) = mask {
        if m.shape() != y.shape() {
            return Err(Error::shape("mask and measurements differ in shape"));
        }
    }
    let lip = op.lipschitz();
    if !(lip.is_finite() && lip > 0.0) {
        return Err(Error::Solver(format!("step size from spectral-norm estimate {lip}")));
    }

    let chunks: Vec<(usize, usize)> = (0..c).step_by(COLUMN_CHUNK).map(|s| (s, (s + COLUMN_CHUNK).min(c))).collect();
    let solved: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let w = end - start;
            let pick = |src: &DenseMatrix| -> Vec<f64> {
                let mut out = vec![0.0; k * w];
                for i in 0..k {
                    out[i * w..(i + 1) * w].copy_from_slice(&src.row(i)[start..end]);
                }
                out
            };
            let mut yb = pick(y);
            let mb = mask.map(pick);
            if let Some(m) = &mb {
                yb.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
            }
            ista_block(a, &yb, mb.as_deref(), w, lip, config, n)
        })
        .collect();

    let mut out = DenseMatrix::zeros(n, c);
    for (&(start, end), block) in chunks.iter().zip(&solved) {
        let w = end - start;
        for i in 0..n {
            out.as_mut_slice()[i * c + start..i * c + end].copy_from_slice(&block[i * w..(i + 1) * w]);
        }
    }
    Ok(out)
}

/// Batched iteration on a row-major `K x w` block.
fn ista_block(a: &DenseMatrix, y: &[f64], mask: Option<&[f64]>, w: usize, lip: f64, config: &SolverConfig, n: usize) -> Vec<f64> {
    let k = a.rows();
    let ni = n as isize;
    let wi = w as isize;
    let mut aty = vec![0.0; n * w];
    gemm(n, k, w, 1.0, a.as_slice(), (1, ni), y, (wi, 1), 0.0, &mut aty, (wi, 1));
    let mut aty_inf = vec![0.0f64; w];
    for i in 0..n {
        for (m, v) in aty_inf.iter_mut().zip(&aty[i * w..(i + 1) * w]) {
            *m = m.max(v.abs());
        }
    }
    let observed: Vec<f64> = match mask {
        Some(m) => (0..w).map(|j| (0..k).map(|i| m[i * w + j]).sum()).collect(),
        None => vec![k as f64; w],
    };
    let schedules: Vec<Vec<(f64, usize)>> =
        aty_inf.iter().zip(&observed).map(|(&t, &o)| config.schedule(t, o.max(1.0) / n as f64)).collect();
    // Every column with a non-zero right-hand side gets the same stage
    // layout; zero columns stay at zero.
    let layout: Vec<usize> = schedules.iter().find(|s| s.len() > 1).unwrap_or(&schedules[0]).iter().map(|p| p.1).collect();

    let mut s = vec![0.0; n * w];
    let mut r = vec![0.0; k * w];
    let mut g = vec![0.0; n * w];
    for (stage, &iters) in layout.iter().enumerate() {
        let thresh: Vec<f64> = (0..w)
            .map(|j| if aty_inf[j] == 0.0 { f64::INFINITY } else { schedules[j].get(stage).map_or(schedules[j][0].0, |p| p.0) / lip })
            .collect();
        for _ in 0..iters {
            r.copy_from_slice(y);
            gemm(k, n, w, 1.0, a.as_slice(), (ni, 1), &s, (wi, 1), -1.0, &mut r, (wi, 1));
            if let Some(m) = mask {
                r.iter_mut().zip(m).for_each(|(v, m)| *v *= m);
            }
            gemm(n, k, w, 1.0, a.as_slice(), (1, ni), &r, (wi, 1), 0.0, &mut g, (wi, 1));
            let mut moved = 0.0f64;
            let mut size = 0.0f64;
            for i in 0..n {
                let row = i * w;
                for j in 0..w {
                    let old = s[row + j];
                    let new = soft(old - g[row + j] / lip, thresh[j]);
                    moved = moved.max((new - old).abs());
                    size = size.max(new.abs());
                    s[row + j] = new;
                }
            }
            if moved <= config.residual_tol * size {
                break;
            }
        }
    }
    s
}

/// Exhaustive-search solution.
#[derive(Clone, Debug)]
pub struct L0Solution {
    pub rep: SparseRep,
    pub residual: f64,
    /// No other support of the same or smaller size reaches the optimal
    /// residual.
    pub unique: bool,
}

/// Number of supports of size `0..=k` out of `n`, saturating.
fn support_count(n: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut c: u128 = 1;
    for s in 0..=k.min(n) {
        if s > 0 {
            c = c * (n - s + 1) as u128 / s as u128;
        }
        total = total.saturating_add(c);
    }
    total
}

pub const L0_SUPPORT_GUARD: u128 = 1_000_000;

/// Least-squares fit on every support of size at most `k`; the smallest
/// residual wins, and among supports reaching it (within `1e-9 ‖y‖`) the
/// smallest one.
pub fn l0_bruteforce(a: &DenseMatrix, y: &[f64], k: usize) -> Result<L0Solution> {
    check_rhs(a, y)?;
    let n = a.cols();
    let count = support_count(n, k);
    if count > L0_SUPPORT_GUARD {
        return Err(Error::Guard(format!("{count} candidate supports exceed the limit of {L0_SUPPORT_GUARD}")));
    }
    let tol = 1e-9 * norm2(y).max(1e-300);
    let mut fits: Vec<(Vec<usize>, Vec<f64>, f64)> = vec![(Vec::new(), Vec::new(), norm2(y))];
    for size in 1..=k.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let sub = a.select_columns(&idx);
            let (coef, _) = lstsq(&sub, y);
            let res = residual_norm(&sub, &coef, y);
            fits.push((idx.clone(), coef, res));
            // Next combination in lexicographic order.
            let mut p = size;
            while p > 0 && idx[p - 1] == n - size + p - 1 {
                p -= 1;
            }
            if p == 0 {
                break;
            }
            idx[p - 1] += 1;
            for q in p..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    let best = fits.iter().map(|f| f.2).fold(f64::INFINITY, f64::min);
    let optimal: Vec<&(Vec<usize>, Vec<f64>, f64)> = fits.iter().filter(|f| f.2 <= best + tol).collect();
    let min_size = optimal.iter().map(|f| f.0.len()).min().expect("empty support is always a candidate");
    let smallest: Vec<_> = optimal.iter().filter(|f| f.0.len() == min_size).collect();
    let chosen = smallest.iter().min_by(|p, q| p.2.total_cmp(&q.2)).expect("non-empty");
    Ok(L0Solution {
        rep: SparseRep::new(n, chosen.0.clone(), chosen.1.clone())?,
        residual: chosen.2,
        unique: smallest.len() == 1,
    })
}

/// ISTA followed by a least-squares refit on the entries above `1e-3` of
/// the largest magnitude (at most `rows` of them).
pub fn l1_debiased(op: &SensingOperator, y: &[f64], config: &SolverConfig) -> Result<RecoveryReport> {
    config.validate()?;
    check_rhs(op.matrix(), y)?;
    let mut rep = ista_with(op, y, config)?;
    let a = op.matrix();
    let peak = rep.estimate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(rep);
    }
    let mut support: Vec<usize> = (0..a.cols()).filter(|&j| rep.estimate[j].abs() > 1e-3 * peak).collect();
    if support.len() > a.rows() {
        support.sort_by(|&p, &q| rep.estimate[q].abs().total_cmp(&rep.estimate[p].abs()).then(p.cmp(&q)));
        support.truncate(a.rows());
        support.sort_unstable();
    }
    let (coef, rank) = lstsq(&a.select_columns(&support), y);
    let mut estimate = vec![0.0; a.cols()];
    for (&j, c) in support.iter().zip(&coef) {
        estimate[j] = *c;
    }
    rep.residual_l2 = residual_norm(a, &estimate, y);
    rep.estimate = estimate;
    rep.rank_deficient = rank < support.len();
    Ok(rep)
}

/// Coefficient recovery used by the decoder.
///
/// Systems of full column rank are solved with the cached pseudoinverse.
/// The rest go through OMP with a budget of `r`, the numerical rank; if its
/// support exceeds `r / 2` (where an exact sparse solution is no longer
/// guaranteed to be unique) or it fails to fit `y`, the result of
/// [`l1_debiased`] is used instead.
pub fn sparse_decode(op: &SensingOperator, y: &[f64], config: &SolverConfig) -> Result<RecoveryReport> {
    config.validate()?;
    check_rhs(op.matrix(), y)?;
    let a = op.matrix();
    let rank = if a.rows() >= a.cols() { op.rank() } else { a.rows() };
    if rank == a.cols() {
        let estimate = op.pseudoinverse().matvec(y)?;
        let residual_l2 = residual_norm(a, &estimate, y);
        return Ok(RecoveryReport {
            converged: residual_l2 <= 1e-8 * norm2(y).max(1.0),
            estimate,
            residual_l2,
            iterations: 1,
            rank_deficient: false,
            objective: Vec::new(),
        });
    }
    let omp = omp_with(op, y, rank, config);
    let sparse_enough = 2 * SparseRep::from_dense(&omp.estimate, 0.0).l0() <= rank;
    if omp.converged && sparse_enough {
        return Ok(omp);
    }
    l1_debiased(op, y, config)
}

#[derive(Clone, Debug)]
pub struct TwoStepReport {
    pub x: Vec<f64>,
    pub coefficients: RecoveryReport,
}

/// Step one recovers `s` from `y = A s`; step two returns `x = Ψ s`.
pub fn two_step_decode(op: &SensingOperator, basis: &dyn Basis, y: &[f64], config: &SolverConfig) -> Result<TwoStepReport> {
    if basis.dim() != op.cols() {
        return Err(Error::shape(format!("basis of dimension {} after a {}-column sensing matrix", basis.dim(), op.cols())));
    }
    let coefficients = sparse_decode(op, y, config)?;
    let x = basis.synthesize(&coefficients.estimate)?;
    Ok(TwoStepReport { x, coefficients })
}
