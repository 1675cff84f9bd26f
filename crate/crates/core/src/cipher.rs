//! The BLP-CS cipher and the baseline ciphers used as attack targets.
//!
//! A [`BlpKey`] is a seed plus parameters. Everything secret is re-derived
//! from labeled streams:
//!
//! | label   | object                                              |
//! |---------|-----------------------------------------------------|
//! | `A`     | Gaussian sensing matrix `A_K`, `K x M`              |
//! | `perm`  | coefficient permutation `P`                         |
//! | `scale` | integer factors `d_j ∈ [1, dmax]`, `D = diag(1/d)`  |
//! | `mix`   | F3 column pairs and weights                         |
//!
//! Encoding is `y = A_K Ψ_K⁻¹ x`, with `Ψ_K = R_αᵀ P D Q`. The equivalent
//! measurement matrix `Φ = A_K Ψ_K⁻¹` is never formed unless asked for.
//!
//! The baseline ciphers (measurement scrambling, frequency scrambling and
//! the double-random-phase concatenation) are insecure under chosen
//! plaintexts and exist only as targets for [`crate::attacks`].

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::bases::{build_secret_basis, Basis, BasisShape, ColumnMix, IndexRegion, SecretBasis, SecretBasisSpec};
use crate::ensembles::{gaussian_matrix, Permutation, ScalingDiag};
use crate::error::{Error, Result};
use crate::keyrand::{derive_stream, random_permutation, sample_indices, KeySeed};
use crate::matrix::{kron, read_u32, ComplexMatrix, DenseMatrix};
use crate::solvers::{two_step_decode, SensingOperator, SolverConfig, TwoStepReport};

/// `round(sr · m)` with ties to even.
pub fn measurement_count(m: usize, sr: f64) -> usize {
    (sr * m as f64).round_ties_even() as usize
}

/// Key parameters as stored in the key file.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyParams {
    pub seed: KeySeed,
    /// Signal length, or the side of a square image.
    pub m: usize,
    pub sr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dmax: u64,
    /// Side of the F3 region's corners as a fraction of `m/2`.
    pub mix_region: f64,
    pub mix_count: usize,
}

impl KeyParams {
    pub fn new(seed: u64, m: usize, sr: f64) -> Self {
        Self { seed: KeySeed(seed), m, sr, alpha: 0.99, beta: 0.95, dmax: 60, mix_region: 0.25, mix_count: 8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.m % 2 != 0 {
            return Err(Error::param(format!("M must be even and at least 2, got {}", self.m)));
        }
        if !(self.sr > 0.0 && self.sr <= 1.0) {
            return Err(Error::param(format!("sr must lie in (0, 1], got {}", self.sr)));
        }
        if measurement_count(self.m, self.sr) == 0 {
            return Err(Error::param(format!("sr {} gives no measurements for M = {}", self.sr, self.m)));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::param("fractional orders must be finite"));
        }
        if self.dmax == 0 {
            return Err(Error::param("dmax must be at least 1"));
        }
        if !(self.mix_region > 0.0 && self.mix_region <= 1.0) {
            return Err(Error::param(format!("mix_region must lie in (0, 1], got {}", self.mix_region)));
        }
        let room = IndexRegion::corners_1d(self.m, self.mix_region).len();
        if 2 * self.mix_count > room {
            return Err(Error::param(format!("{} mix pairs do not fit in a region of {room} indices", self.mix_count)));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        measurement_count(self.m, self.sr)
    }

    /// Text form, one `name=value` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed.0);
        let _ = writeln!(s, "M={}", self.m);
        let _ = writeln!(s, "sr={}", self.sr);
        let _ = writeln!(s, "alpha={}", self.alpha);
        let _ = writeln!(s, "beta={}", self.beta);
        let _ = writeln!(s, "dmax={}", self.dmax);
        let _ = writeln!(s, "mix_region={}", self.mix_region);
        let _ = writeln!(s, "mix_count={}", self.mix_count);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields: [Option<&str>; 8] = [None; 8];
        const NAMES: [&str; 8] = ["seed", "M", "sr", "alpha", "beta", "dmax", "mix_region", "mix_count"];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, value) =
                line.split_once('=').ok_or_else(|| Error::format(format!("key line {}: expected name=value", lineno + 1)))?;
            let slot = NAMES
                .iter()
                .position(|n| *n == name.trim())
                .ok_or_else(|| Error::format(format!("key line {}: unknown field {name:?}", lineno + 1)))?;
            if fields[slot].replace(value.trim()).is_some() {
                return Err(Error::format(format!("key field {name} appears twice")));
            }
        }
        let get = |i: usize| fields[i].ok_or_else(|| Error::format(format!("key file lacks {}", NAMES[i])));
        fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::format(format!("key field {name}: cannot parse {v:?}")))
        }
        let params = Self {
            seed: KeySeed(num("seed", get(0)?)?),
            m: num("M", get(1)?)?,
            sr: num("sr", get(2)?)?,
            alpha: num("alpha", get(3)?)?,
            beta: num("beta", get(4)?)?,
            dmax: num("dmax", get(5)?)?,
            mix_region: num("mix_region", get(6)?)?,
            mix_count: num("mix_count", get(7)?)?,
        };
        params.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(params)
    }
}

/// Key with lazily derived, shared secret objects.
#[derive(Clone, Debug)]
pub struct BlpKey {
    params: KeyParams,
    scrambling: bool,
    sensing: Arc<OnceLock<SensingOperator>>,
}

/// Derives a key. Same parameters, same key, bit for bit.
pub fn keygen(params: KeyParams) -> Result<BlpKey> {
    params.validate()?;
    Ok(BlpKey { params, scrambling: true, sensing: Arc::new(OnceLock::new()) })
}

impl BlpKey {
    pub fn params(&self) -> &KeyParams {
        &self.params
    }

    pub fn seed(&self) -> KeySeed {
        self.params.seed
    }

    pub fn m(&self) -> usize {
        self.params.m
    }

    pub fn k(&self) -> usize {
        self.params.k()
    }

    pub fn sr(&self) -> f64 {
        self.params.sr
    }

    pub fn is_scrambling(&self) -> bool {
        self.scrambling
    }

    /// The same key with the coefficient permutation removed (the
    /// unscrambled column-wise baseline).
    pub fn without_permutation(&self) -> Self {
        Self { params: self.params.clone(), scrambling: false, sensing: Arc::clone(&self.sensing) }
    }

    pub fn sensing(&self) -> &SensingOperator {
        self.sensing.get_or_init(|| {
            let mut st = derive_stream(self.params.seed, "A");
            SensingOperator::new(gaussian_matrix(&mut st, self.k(), self.params.m))
        })
    }

    pub fn sensing_matrix(&self) -> &DenseMatrix {
        self.sensing().matrix()
    }

    /// Composition descriptor of `Ψ_K` for 1D signals or column-stacked
    /// images.
    pub fn basis_spec(&self, shape: BasisShape) -> Result<SecretBasisSpec> {
        let p = &self.params;
        let dim = match shape {
            BasisShape::OneD => p.m,
            BasisShape::TwoD => p.m * p.m,
        };
        let perm = if self.scrambling {
            random_permutation(&mut derive_stream(p.seed, "perm"), dim)
        } else {
            Permutation::identity(dim)
        };
        let scale = if p.dmax == 1 {
            ScalingDiag::ones(dim)
        } else {
            ScalingDiag::random_integers(&mut derive_stream(p.seed, "scale"), dim, p.dmax)?
        };
        let corners = match shape {
            BasisShape::OneD => IndexRegion::corners_1d(p.m, p.mix_region),
            BasisShape::TwoD => IndexRegion::corners_2d(p.m, p.mix_region),
        };
        let region = corners.permuted(&perm);
        let mixes = draw_mixes(p.seed, &region, p.mix_count)?;
        Ok(SecretBasisSpec { n: p.m, shape, alpha: p.alpha, beta: p.beta, perm, scale, mixes, region })
    }

    pub fn secret_basis(&self, shape: BasisShape) -> Result<SecretBasis> {
        build_secret_basis(&self.basis_spec(shape)?)
    }

    /// Materialized `Φ = A_K Ψ_K⁻¹` for 1D signals, `M ≤ 4096`.
    pub fn measurement_matrix(&self) -> Result<DenseMatrix> {
        let m = self.params.m;
        if m > 4096 {
            return Err(Error::Guard(format!("refusing to materialize a {m}-column measurement matrix")));
        }
        let basis = self.secret_basis(BasisShape::OneD)?;
        let mut e = vec![0.0; m];
        let mut cols = Vec::with_capacity(m);
        for j in 0..m {
            e[j] = 1.0;
            cols.push(basis.analyze(&e)?);
            e[j] = 0.0;
        }
        self.sensing_matrix().matmul(&DenseMatrix::from_columns(&cols)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.params.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        keygen(KeyParams::from_text(&fs::read_to_string(path)?)?)
    }
}

/// Disjoint pairs drawn without replacement from `region`, weights
/// `±U[0.5, 2]`.
fn draw_mixes(seed: KeySeed, region: &IndexRegion, count: usize) -> Result<Vec<ColumnMix>> {
    let idx = region.indices();
    if 2 * count > idx.len() {
        return Err(Error::param(format!("{count} mix pairs do not fit in a region of {} indices", idx.len())));
    }
    let mut st = derive_stream(seed, "mix");
    let picks = sample_indices(&mut st, idx.len(), 2 * count);
    Ok(picks
        .chunks_exact(2)
        .map(|p| {
            let a = st.next_sign() * st.next_range(0.5, 2.0);
            let b = st.next_sign() * st.next_range(0.5, 2.0);
            ColumnMix { j: idx[p[0]], k: idx[p[1]], a, b }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub y: Vec<f64>,
}

/// `y = A_K Ψ_K⁻¹ x`.
pub fn blp_encode(key: &BlpKey, x: &[f64]) -> Result<Ciphertext> {
    if x.len() != key.m() {
        return Err(Error::shape(format!("plaintext of length {} for a key with M = {}", x.len(), key.m())));
    }
    let s = key.secret_basis(BasisShape::OneD)?.analyze(x)?;
    Ok(Ciphertext { y: key.sensing_matrix().matvec(&s)? })
}

/// Solve `y = A_K s'` for a sparse `s'`, then `x = Ψ_K s'`.
pub fn blp_decode(key: &BlpKey, c: &Ciphertext, config: &SolverConfig) -> Result<TwoStepReport> {
    if c.y.len() != key.k() {
        return Err(Error::shape(format!("{} measurements for a key with K = {}", c.y.len(), key.k())));
    }
    let basis = key.secret_basis(BasisShape::OneD)?;
    two_step_decode(key.sensing(), &basis, &c.y, config)
}

/// One block of measurements with the row indices that survived transport.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementPacket {
    /// Number of measurements the block had before any loss.
    pub k: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl MeasurementPacket {
    pub fn full(values: Vec<f64>) -> Self {
        Self { k: values.len(), indices: (0..values.len()).collect(), values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::format("packet index and value counts differ"));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) || self.indices.last().is_some_and(|&i| i >= self.k) {
            return Err(Error::format(format!("packet row indices must ascend strictly below {}", self.k)));
        }
        Ok(())
    }
}

const BLPY_MAGIC: &[u8; 4] = b"BLPY";

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::param(format!("{what} {v} does not fit in 32 bits")))
}

pub fn write_packets<W: Write>(packets: &[MeasurementPacket], mut w: W) -> Result<()> {
    let k = packets.first().map_or(0, |p| p.k);
    if packets.iter().any(|p| p.k != k) {
        return Err(Error::param("all packets of a file must share K"));
    }
    for p in packets {
        p.validate()?;
    }
    w.write_all(BLPY_MAGIC)?;
    w.write_all(&u32_of(packets.len(), "block count")?.to_le_bytes())?;
    w.write_all(&u32_of(k, "K")?.to_le_bytes())?;
    for p in packets {
        w.write_all(&u32_of(p.len(), "entry count")?.to_le_bytes())?;
        for (&i, &v) in p.indices.iter().zip(&p.values) {
            w.write_all(&u32_of(i, "row index")?.to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_packets<R: Read>(mut r: R) -> Result<Vec<MeasurementPacket>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::format("measurement file too short"))?;
    if &magic != BLPY_MAGIC {
        return Err(Error::format("not a BLPY measurement file"));
    }
    let blocks = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let mut packets = Vec::with_capacity(blocks.min(1 << 16));
    for _ in 0..blocks {
        let count = read_u32(&mut r)? as usize;
        if count > k {
            return Err(Error::format(format!("block claims {count} entries but K = {k}")));
        }
        let mut p = MeasurementPacket { k, indices: Vec::with_capacity(count), values: Vec::with_capacity(count) };
        for _ in 0..count {
            p.indices.push(read_u32(&mut r)? as usize);
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| Error::format("measurement file truncated"))?;
            let v = f64::from_le_bytes(b);
            if !v.is_finite() {
                return Err(Error::format("non-finite measurement value"));
            }
            p.values.push(v);
        }
        p.validate()?;
        packets.push(p);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after the last block"));
    }
    Ok(packets)
}

pub fn save_packets(packets: &[MeasurementPacket], path: impl AsRef<Path>) -> Result<()> {
    write_packets(packets, std::io::BufWriter::new(fs::File::create(path)?))
}

pub fn load_packets(path: impl AsRef<Path>) -> Result<Vec<MeasurementPacket>> {
    read_packets(std::io::BufReader::new(fs::File::open(path)?))
}

/// Measurement scrambling: `ŷ = P_K Φ_K x`.
pub fn scramble_measurements_encode(phi: &DenseMatrix, p: &Permutation, x: &[f64]) -> Result<Ciphertext> {
    if p.len() != phi.rows() {
        return Err(Error::shape(format!("{}-point permutation for {} measurements", p.len(), phi.rows())));
    }
    Ok(Ciphertext { y: p.apply(&phi.matvec(x)?) })
}

/// Frequency scrambling: `ŷ = Φ_K P_M Ψ⁻¹ x`.
pub fn scramble_frequency_encode(phi: &DenseMatrix, p: &Permutation, basis: &dyn Basis, x: &[f64]) -> Result<Ciphertext> {
    if p.len() != phi.cols() || basis.dim() != phi.cols() {
        return Err(Error::shape("permutation, basis and measurement matrix disagree on M"));
    }
    Ok(Ciphertext { y: phi.matvec(&p.apply(&basis.analyze(x)?))? })
}

/// Spatial and Fourier-plane phase masks on an `m x m` plane (column-major).
#[derive(Clone, Debug, PartialEq)]
pub struct DrpeMasks {
    pub p: Vec<Complex64>,
    pub q: Vec<Complex64>,
}

impl DrpeMasks {
    /// `e^{j2πp}`, `e^{j2πq}` with `p, q` uniform in `[0, 1)`.
    pub fn random(seed: KeySeed, m: usize) -> Self {
        let mut sp = derive_stream(seed, "drpe/p");
        let mut sq = derive_stream(seed, "drpe/q");
        let p = (0..m * m).map(|_| Complex64::from_polar(1.0, TAU * sp.next_uniform())).collect();
        let q = (0..m * m).map(|_| Complex64::from_polar(1.0, TAU * sq.next_uniform())).collect();
        Self { p, q }
    }

    pub fn trivial(m: usize) -> Self {
        let one = Complex64::new(1.0, 0.0);
        Self { p: vec![one; m * m], q: vec![one; m * m] }
    }
}

pub const DRPE_MAX_SIDE: usize = 32;

/// Unitary DFT matrix `F[u][x] = e^{-j2πux/m} / √m`.
pub fn dft_matrix(m: usize) -> ComplexMatrix {
    let s = 1.0 / (m as f64).sqrt();
    ComplexMatrix::from_fn(m, m, |u, x| Complex64::from_polar(s, -TAU * ((u * x) % m) as f64 / m as f64))
}

/// `T = F̄* Q̄ F̄ P̄` with `F̄ = F ⊗ F`, so `T vec(Y)` is the phase-mask
/// pipeline applied to the `m x m` plane `Y`.
pub fn drpe_transfer_matrix(masks: &DrpeMasks, m: usize) -> Result<ComplexMatrix> {
    if m > DRPE_MAX_SIDE {
        return Err(Error::Guard(format!("dense phase-mask transfer matrix limited to m <= {DRPE_MAX_SIDE}, got {m}")));
    }
    if masks.p.len() != m * m || masks.q.len() != m * m {
        return Err(Error::shape(format!("masks of length {} for an {m}x{m} plane", masks.p.len())));
    }
    let f = dft_matrix(m);
    let fre = kron(&f.re(), &f.re());
    let fim = kron(&f.im(), &f.im());
    let fre_im = kron(&f.re(), &f.im());
    let fim_re = kron(&f.im(), &f.re());
    let mm = m * m;
    // (a + jb) ⊗ (a + jb) = (a⊗a - b⊗b) + j(a⊗b + b⊗a)
    let fbar = ComplexMatrix::from_fn(mm, mm, |i, j| {
        Complex64::new(fre[(i, j)] - fim[(i, j)], fre_im[(i, j)] + fim_re[(i, j)])
    });
    let qf = ComplexMatrix::from_fn(mm, mm, |i, j| masks.q[i] * fbar[(i, j)] * masks.p[j]);
    fbar.conj_transpose().matmul(&qf)
}

/// `vec(C) = T Φ x` for a measurement matrix with `m²` rows.
pub fn drpe_cs_encode(phi: &DenseMatrix, masks: &DrpeMasks, x: &[f64]) -> Result<Vec<Complex64>> {
    let m = (phi.rows() as f64).sqrt().round() as usize;
    if m * m != phi.rows() {
        return Err(Error::shape(format!("{} measurements do not form a square plane", phi.rows())));
    }
    let v: Vec<Complex64> = phi.matvec(x)?.into_iter().map(|r| Complex64::new(r, 0.0)).collect();
    drpe_transfer_matrix(masks, m)?.matvec(&v)
}

/// Real view `[Re c; Im c]` of a complex ciphertext.
pub fn stack_complex(c: &[Complex64]) -> Vec<f64> {
    c.iter().map(|v| v.re).chain(c.iter().map(|v| v.im)).collect()
}
