//! Column-wise image sampling and reconstruction.
//!
//! An `n x n` image `X` is taken to coefficients `S' = Ψ_K⁻¹ vec(X)` (the 2D
//! RPFrCT, a global permutation of all `n²` coefficients, the per-entry
//! scaling and the F3 mixes), the coefficient vector is cut back into `n`
//! columns, and every column is measured with the same Gaussian `A`
//! (`K x n`). Each column's measurements travel as one
//! [`MeasurementPacket`].
//!
//! The permutation spreads the significant coefficients evenly over the
//! columns, so every column problem is about equally sparse. Without it
//! (the unscrambled baseline) columns holding the low frequencies are much
//! denser than the rest and are reconstructed poorly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::bases::{Basis, BasisShape};
use crate::cipher::{BlpKey, MeasurementPacket};
use crate::error::{Error, Result};
use crate::keyrand::{derive_stream, random_permutation, KeySeed, RandStream};
use crate::matrix::DenseMatrix;
use crate::solvers::{ista_bpdn_columns, SolverConfig};

/// Square grayscale image with an even side; pixels stored row-major as
/// reals.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    n: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(n: usize, pixels: Vec<f64>) -> Result<Self> {
        if n == 0 || n % 2 != 0 {
            return Err(Error::param(format!("image side must be even and positive, got {n}")));
        }
        if pixels.len() != n * n {
            return Err(Error::shape(format!("{} pixels for a {n}x{n} image", pixels.len())));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::param("pixels must be finite"));
        }
        Ok(Self { n, pixels })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                pixels.push(f(i, j));
            }
        }
        Self::new(n, pixels)
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.n + col]
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_row_major(self.n, self.n, self.pixels.clone()).expect("square buffer")
    }

    pub fn from_matrix(m: &DenseMatrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::shape("image matrix must be square"));
        }
        Self::new(m.rows(), m.as_slice().to_vec())
    }

    /// `vec(X)`: columns stacked top to bottom.
    pub fn column_stack(&self) -> Vec<f64> {
        let n = self.n;
        (0..n * n).map(|t| self.pixels[(t % n) * n + t / n]).collect()
    }

    pub fn from_column_stack(n: usize, v: &[f64]) -> Result<Self> {
        if v.len() != n * n {
            return Err(Error::shape(format!("{} values for a {n}x{n} image", v.len())));
        }
        Self::from_fn(n, |i, j| v[j * n + i])
    }

    pub fn clamped(&self) -> Self {
        Self { n: self.n, pixels: self.pixels.iter().map(|p| p.clamp(0.0, 255.0)).collect() }
    }

    /// `size x size` window with its upper-left corner at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Self> {
        if top + size > self.n || left + size > self.n {
            return Err(Error::shape("crop window leaves the image"));
        }
        Self::from_fn(size, |i, j| self.get(top + i, left + j))
    }
}

fn pgm_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return if tok.is_empty() { Err(Error::format("PGM header truncated")) } else { Ok(tok) };
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c as char);
        }
    }
}

/// Binary (P5) PGM with maxval 255.
pub fn read_pgm<R: Read>(r: R) -> Result<GrayImage> {
    let mut r = BufReader::new(r);
    if pgm_token(&mut r)? != "P5" {
        return Err(Error::format("not a binary PGM (P5) file"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = pgm_token(&mut r)?;
        t.parse().map_err(|_| Error::format(format!("PGM {what} {t:?} is not a number")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval != 255 {
        return Err(Error::format(format!("PGM maxval must be 255, got {maxval}")));
    }
    if w != h || w == 0 || w % 2 != 0 {
        return Err(Error::format(format!("PGM must be square with an even side, got {w}x{h}")));
    }
    let mut data = vec![0u8; w * h];
    r.read_exact(&mut data).map_err(|_| Error::format("PGM pixel data truncated"))?;
    GrayImage::new(w, data.into_iter().map(f64::from).collect())
}

/// Pixels are clamped to `[0, 255]` and rounded.
pub fn write_pgm<W: Write>(img: &GrayImage, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.n, img.n)?;
    let bytes: Vec<u8> = img.pixels.iter().map(|p| p.clamp(0.0, 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    read_pgm(fs::File::open(path)?)
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write_pgm(img, std::io::BufWriter::new(fs::File::create(path)?))
}

/// Per-column non-zero counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityVector {
    pub k: Vec<usize>,
}

impl SparsityVector {
    pub fn total(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn max(&self) -> usize {
        self.k.iter().copied().max().unwrap_or(0)
    }
}

/// Entries with `|x| > tol` in each column.
pub fn column_sparsity(x: &DenseMatrix, tol: f64) -> SparsityVector {
    let mut k = vec![0; x.cols()];
    for i in 0..x.rows() {
        for (c, v) in k.iter_mut().zip(x.row(i)) {
            if v.abs() > tol {
                *c += 1;
            }
        }
    }
    SparsityVector { k }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailPoint {
    pub t: f64,
    /// Fraction of scrambles with normalized deviation `≥ t`.
    pub empirical: f64,
    /// `n e^{-2nt²}`.
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PermutationStats {
    /// `‖k‖₁ / n`.
    pub expected: f64,
    /// Mean and standard deviation over scrambles of the first column's
    /// sparsity.
    pub column_mean: f64,
    pub column_std: f64,
    pub trials: usize,
    pub tail: Vec<TailPoint>,
}

/// Scrambles the entries of `x` with uniform random permutations and
/// records how far the densest column exceeds the average. Deviations are
/// normalized by the column length, `(max_j k_j - ‖k‖₁/n) / n`, which is the
/// scale on which the reference `n e^{-2nt²}` is stated.
pub fn acceptable_permutation_stats(x: &DenseMatrix, trials: usize, stream: &mut RandStream, t_grid: &[f64]) -> PermutationStats {
    let (rows, cols) = x.shape();
    let n = cols as f64;
    let col_major: Vec<bool> = (0..rows * cols).map(|t| x[(t % rows, t / rows)] != 0.0).collect();
    let total = col_major.iter().filter(|v| **v).count();
    let expected = total as f64 / n;
    let mut exceed = vec![0usize; t_grid.len()];
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut counts = vec![0usize; cols];
    for _ in 0..trials {
        let p = random_permutation(stream, rows * cols);
        counts.iter_mut().for_each(|c| *c = 0);
        for (dst, &src) in p.map().iter().enumerate() {
            if col_major[src] {
                counts[dst / rows] += 1;
            }
        }
        let c0 = counts[0] as f64;
        sum += c0;
        sq += c0 * c0;
        let dev = (*counts.iter().max().unwrap_or(&0) as f64 - expected) / rows as f64;
        for (e, &t) in exceed.iter_mut().zip(t_grid) {
            if dev >= t {
                *e += 1;
            }
        }
    }
    let tn = trials.max(1) as f64;
    let column_mean = sum / tn;
    PermutationStats {
        expected,
        column_mean,
        column_std: (sq / tn - column_mean * column_mean).max(0.0).sqrt(),
        trials,
        tail: t_grid
            .iter()
            .zip(&exceed)
            .map(|(&t, &e)| TailPoint { t, empirical: e as f64 / tn, reference: n * (-2.0 * n * t * t).exp() })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChannelKind {
    Ideal,
    Awgn,
    PacketLoss,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub kind: ChannelKind,
    pub noise_var: f64,
    pub plr: f64,
}

impl ChannelModel {
    pub fn ideal() -> Self {
        Self { kind: ChannelKind::Ideal, noise_var: 0.0, plr: 0.0 }
    }

    pub fn awgn(noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::param(format!("noise variance must be non-negative, got {noise_var}")));
        }
        Ok(Self { kind: ChannelKind::Awgn, noise_var, plr: 0.0 })
    }

    pub fn packet_loss(plr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&plr) {
            return Err(Error::param(format!("packet loss rate must lie in [0, 1), got {plr}")));
        }
        Ok(Self { kind: ChannelKind::PacketLoss, noise_var: 0.0, plr })
    }
}

/// Passes packets through the channel. Packet `j` draws from the stream
/// `channel/{j}`, so the outcome does not depend on processing order.
pub fn apply_channel(packets: &[MeasurementPacket], model: &ChannelModel, seed: KeySeed) -> Vec<MeasurementPacket> {
    packets
        .iter()
        .enumerate()
        .map(|(j, p)| match model.kind {
            ChannelKind::Ideal => p.clone(),
            ChannelKind::Awgn => {
                let mut st = derive_stream(seed, &format!("channel/{j}"));
                let sd = model.noise_var.sqrt();
                let values = p.values.iter().map(|v| v + sd * st.next_gaussian()).collect();
                MeasurementPacket { k: p.k, indices: p.indices.clone(), values }
            }
            ChannelKind::PacketLoss => {
                let mut st = derive_stream(seed, &format!("channel/{j}"));
                let (indices, values) =
                    p.indices.iter().zip(&p.values).filter(|_| st.next_uniform() >= model.plr).map(|(i, v)| (*i, *v)).unzip();
                MeasurementPacket { k: p.k, indices, values }
            }
        })
        .collect()
}

fn check_key_side(key: &BlpKey, n: usize) -> Result<()> {
    if key.m() != n {
        return Err(Error::shape(format!("key for columns of length {} used on a {n}x{n} image", key.m())));
    }
    Ok(())
}

/// One packet of `K` measurements per image column.
pub fn columnwise_encode(key: &BlpKey, image: &GrayImage) -> Result<Vec<MeasurementPacket>> {
    let n = image.side();
    check_key_side(key, n)?;
    let coeffs = key.secret_basis(BasisShape::TwoD)?.analyze(&image.column_stack())?;
    // Column j of S is coeffs[j n .. (j+1) n]; as a row-major matrix that is Sᵀ.
    let s = DenseMatrix::from_row_major(n, n, coeffs)?.transpose();
    let y = key.sensing_matrix().matmul(&s)?;
    Ok((0..n).map(|j| MeasurementPacket::full(y.column(j))).collect())
}

/// Reconstruction before clamping, as `vec(X̂)`.
pub fn columnwise_decode_raw(key: &BlpKey, packets: &[MeasurementPacket], config: &SolverConfig) -> Result<Vec<f64>> {
    let n = packets.len();
    check_key_side(key, n)?;
    let k = key.k();
    let mut y = DenseMatrix::zeros(k, n);
    let mut mask = DenseMatrix::zeros(k, n);
    let mut lossy = false;
    for (j, p) in packets.iter().enumerate() {
        if p.k != k || p.indices.len() != p.values.len() || p.indices.iter().any(|&i| i >= k) {
            return Err(Error::format(format!("packet {j} does not match K = {k}")));
        }
        lossy |= p.len() < k;
        for (&i, &v) in p.indices.iter().zip(&p.values) {
            y[(i, j)] = v;
            mask[(i, j)] = 1.0;
        }
    }
    let s = if !lossy && k >= n && key.sensing().rank() == n {
        key.sensing().pseudoinverse().matmul(&y)?
    } else {
        ista_bpdn_columns(key.sensing(), &y, lossy.then_some(&mask), config)?
    };
    let coeffs = s.transpose().into_vec();
    key.secret_basis(BasisShape::TwoD)?.synthesize(&coeffs)
}

/// `n` independent column solves, then the inverse of the secret
/// transform; the result is clamped to `[0, 255]`.
pub fn columnwise_decode(key: &BlpKey, packets: &[MeasurementPacket], config: &SolverConfig) -> Result<GrayImage> {
    let x = columnwise_decode_raw(key, packets, config)?;
    Ok(GrayImage::from_column_stack(packets.len(), &x)?.clamped())
}

/// The unscrambled baseline: same pipeline, no coefficient permutation.
pub fn bcs_in_encode(key: &BlpKey, image: &GrayImage) -> Result<Vec<MeasurementPacket>> {
    columnwise_encode(&key.without_permutation(), image)
}

pub fn bcs_in_decode(key: &BlpKey, packets: &[MeasurementPacket], config: &SolverConfig) -> Result<GrayImage> {
    columnwise_decode(&key.without_permutation(), packets, config)
}

/// `‖vec(X) - vec(X̂)‖₂²`.
pub fn error_energy(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    if reference.side() != test.side() {
        return Err(Error::shape(format!("comparing {}x{0} with {}x{1}", reference.side(), test.side())));
    }
    Ok(reference.pixels.iter().zip(&test.pixels).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `10 log10(M · 255² / ‖e‖²)`; identical images give `+∞`.
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    let m = (reference.side() * reference.side()) as f64;
    Ok(apsnr(&[error_energy(reference, test)?], m))
}

/// Averages `M · 255² / ‖e_t‖²` over trials, then takes `10 log10`.
pub fn apsnr(error_energies: &[f64], m: f64) -> f64 {
    if error_energies.is_empty() {
        return f64::NAN;
    }
    if error_energies.iter().any(|e| *e == 0.0) {
        return f64::INFINITY;
    }
    let mean = error_energies.iter().map(|e| m * 255.0 * 255.0 / e).sum::<f64>() / error_energies.len() as f64;
    10.0 * mean.log10()
}

/// Decibel value for text output: `inf` for the identical-image sentinel.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.2}")
    }
}
