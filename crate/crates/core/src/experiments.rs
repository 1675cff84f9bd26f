//! Experiment drivers shared by the command-line tool and the acceptance
//! tests. Each driver returns typed rows; `*_csv` renders them with a fixed
//! header, `.` decimals and LF line endings.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::attacks::{run_cpa, AttackReport, EncryptionOracle};
use crate::bases::{best_s_term, dct_matrix, f1_scale, rpfrct2d_forward, rpfrct2d_inverse, Basis, BasisShape, OrthoBasis};
use crate::cipher::{
    blp_encode, drpe_cs_encode, keygen, scramble_frequency_encode, scramble_measurements_encode, stack_complex, BlpKey,
    DrpeMasks, KeyParams,
};
use crate::ensembles::{antipodal_scaled_matrix, descale_columns, gaussian_matrix, ScalingDiag};
use crate::error::{Error, Result};
use crate::imaging::{
    apply_channel, apsnr, bcs_in_decode, bcs_in_encode, columnwise_decode, columnwise_encode, error_energy, format_db, psnr,
    ChannelKind, ChannelModel, GrayImage,
};
use crate::keyrand::{derive_stream, random_permutation, sample_indices, KeySeed, RandStream};
use crate::matrix::{relative_error, DenseMatrix};
use crate::solvers::{ista_bpdn, two_step_decode, SensingOperator, SolverConfig};

fn sparse_vector(st: &mut RandStream, n: usize, k: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in sample_indices(st, n, k) {
        x[i] = st.next_gaussian();
    }
    x
}

#[derive(Clone, Debug)]
pub struct Fig1Config {
    pub seed: u64,
    pub trials: usize,
    pub m: usize,
    pub k: usize,
    pub rows: usize,
    pub dmax: u64,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self { seed: 1, trials: 100, m: 500, k: 10, rows: 60, dmax: 60 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fig1Row {
    pub seed: u64,
    pub two_step_error: f64,
    pub direct_error: f64,
}

/// Antipodal-scaled `Φ` with `d_j ∈ [1, dmax]` and a `k`-sparse `x`:
/// decoding through `A = ΦD` and `x = D s'` against `l1` decoding on `Φ`
/// itself.
pub fn fig1_trial(cfg: &Fig1Config, seed: u64) -> Result<Fig1Row> {
    let key = KeySeed(seed);
    let d = ScalingDiag::random_integers(&mut derive_stream(key, "scale"), cfg.m, cfg.dmax)?;
    let phi = antipodal_scaled_matrix(&mut derive_stream(key, "A"), cfg.rows, cfg.m, &d)?;
    let x = sparse_vector(&mut derive_stream(key, "signal"), cfg.m, cfg.k);
    let y = phi.matvec(&x)?;
    let config = SolverConfig::default();

    let a = SensingOperator::new(descale_columns(&phi, &d)?);
    let basis = f1_scale(Box::new(OrthoBasis::identity(cfg.m)), &d.reciprocal())?;
    let two_step = two_step_decode(&a, &basis, &y, &config)?;
    let direct = ista_bpdn(&phi, &y, &config)?;
    Ok(Fig1Row {
        seed,
        two_step_error: relative_error(&two_step.x, &x),
        direct_error: relative_error(&direct.estimate, &x),
    })
}

pub fn fig1(cfg: &Fig1Config) -> Result<Vec<Fig1Row>> {
    (0..cfg.trials as u64).into_par_iter().map(|t| fig1_trial(cfg, cfg.seed + t)).collect()
}

pub fn fig1_csv(cfg: &Fig1Config, rows: &[Fig1Row]) -> String {
    let mut s = String::from("seed,M,K,k,dmax,two_step_rel_error,direct_l1_rel_error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3e},{:.3e}",
            r.seed, cfg.m, cfg.rows, cfg.k, cfg.dmax, r.two_step_error, r.direct_error
        );
    }
    s
}

/// Best-`s`-term PSNR under the 2D RPFrCT against the quadrant-blockwise
/// 2D DCT, which is what the transform reduces to at `α = β = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StermRow {
    pub alpha: f64,
    pub beta: f64,
    pub keep_fraction: f64,
    pub psnr_rpfrct: f64,
    pub psnr_dct: f64,
}

impl StermRow {
    pub fn ratio(&self) -> f64 {
        self.psnr_rpfrct / self.psnr_dct
    }
}

fn quadrant_dct(n: usize) -> DenseMatrix {
    let h = n / 2;
    let c = dct_matrix(h);
    DenseMatrix::from_fn(n, n, |i, j| if (i < h) == (j < h) { c[(i % h, j % h)] } else { 0.0 })
}

fn s_term_psnr(image: &GrayImage, coeffs: &DenseMatrix, keep: usize, inverse: impl Fn(&DenseMatrix) -> Result<DenseMatrix>) -> Result<f64> {
    let kept = best_s_term(coeffs.as_slice(), keep);
    let n = image.side();
    let back = inverse(&DenseMatrix::from_row_major(n, n, kept)?)?;
    psnr(image, &GrayImage::from_matrix(&back)?)
}

pub fn sterm(image: &GrayImage, orders: &[(f64, f64)], keep_fractions: &[f64]) -> Result<Vec<StermRow>> {
    let n = image.side();
    let x = image.to_matrix();
    let c = quadrant_dct(n);
    let dct_coeffs = c.matmul(&x)?.matmul_nt(&c)?;
    let mut rows = Vec::new();
    for &(alpha, beta) in orders {
        let coeffs = rpfrct2d_forward(&x, alpha, beta)?;
        for &f in keep_fractions {
            let keep = ((f * (n * n) as f64).round() as usize).min(n * n);
            let psnr_rpfrct = s_term_psnr(image, &coeffs, keep, |s| rpfrct2d_inverse(s, alpha, beta))?;
            let psnr_dct = s_term_psnr(image, &dct_coeffs, keep, |s| c.matmul_tn(s)?.matmul(&c))?;
            rows.push(StermRow { alpha, beta, keep_fraction: f, psnr_rpfrct, psnr_dct });
        }
    }
    Ok(rows)
}

pub fn sterm_csv(rows: &[StermRow]) -> String {
    let mut s = String::from("alpha,beta,keep_fraction,psnr_rpfrct_db,psnr_dct2_db,ratio\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.8}",
            r.alpha,
            r.beta,
            r.keep_fraction,
            format_db(r.psnr_rpfrct),
            format_db(r.psnr_dct),
            r.ratio()
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingModel {
    Blp,
    BcsIn,
}

impl SamplingModel {
    pub fn name(self) -> &'static str {
        match self {
            SamplingModel::Blp => "blp-cs",
            SamplingModel::BcsIn => "bcs-in",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImageSweepConfig {
    pub image_name: String,
    pub seed: u64,
    pub srs: Vec<f64>,
    pub trials: usize,
    pub alpha: f64,
    pub beta: f64,
    pub mix_count: usize,
    pub solver: SolverConfig,
}

impl ImageSweepConfig {
    pub fn new(image_name: impl Into<String>) -> Self {
        Self {
            image_name: image_name.into(),
            seed: 1,
            srs: vec![0.1, 0.3, 0.5, 0.7],
            trials: 10,
            alpha: 0.99,
            beta: 0.95,
            mix_count: 8,
            solver: SolverConfig::image(),
        }
    }

    /// Key for trial `t`. Images are sampled without the `d_j` scaling.
    pub fn key(&self, n: usize, sr: f64, trial: usize) -> Result<BlpKey> {
        keygen(KeyParams {
            alpha: self.alpha,
            beta: self.beta,
            dmax: 1,
            mix_count: self.mix_count,
            ..KeyParams::new(self.seed + trial as u64, n, sr)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRow {
    pub image: String,
    pub sr: f64,
    pub model: SamplingModel,
    pub channel: ChannelModel,
    pub apsnr_db: f64,
    /// Mean wall time per decode.
    pub seconds: f64,
}

fn channel_name(c: &ChannelModel) -> &'static str {
    match c.kind {
        ChannelKind::Ideal => "ideal",
        ChannelKind::Awgn => "awgn",
        ChannelKind::PacketLoss => "plr",
    }
}

/// APSNR for every `(sr, model, channel)` cell, in that nesting order.
pub fn image_sweep(image: &GrayImage, cfg: &ImageSweepConfig, cells: &[(SamplingModel, ChannelModel)]) -> Result<Vec<ImageRow>> {
    let n = image.side();
    let m = (n * n) as f64;
    let mut rows = Vec::new();
    for &sr in &cfg.srs {
        for &(model, channel) in cells {
            let mut energies = Vec::with_capacity(cfg.trials);
            let mut elapsed = 0.0;
            for t in 0..cfg.trials {
                let key = cfg.key(n, sr, t)?;
                let packets = match model {
                    SamplingModel::Blp => columnwise_encode(&key, image)?,
                    SamplingModel::BcsIn => bcs_in_encode(&key, image)?,
                };
                let received = apply_channel(&packets, &channel, key.seed());
                let start = Instant::now();
                let decoded = match model {
                    SamplingModel::Blp => columnwise_decode(&key, &received, &cfg.solver)?,
                    SamplingModel::BcsIn => bcs_in_decode(&key, &received, &cfg.solver)?,
                };
                elapsed += start.elapsed().as_secs_f64();
                energies.push(error_energy(image, &decoded)?);
            }
            rows.push(ImageRow {
                image: cfg.image_name.clone(),
                sr,
                model,
                channel,
                apsnr_db: apsnr(&energies, m),
                seconds: elapsed / cfg.trials.max(1) as f64,
            });
        }
    }
    Ok(rows)
}

pub fn table1_cells() -> Vec<(SamplingModel, ChannelModel)> {
    vec![(SamplingModel::Blp, ChannelModel::ideal()), (SamplingModel::BcsIn, ChannelModel::ideal())]
}

pub fn table2_cells() -> Vec<(SamplingModel, ChannelModel)> {
    let mut cells = vec![
        (SamplingModel::Blp, ChannelModel::ideal()),
        (SamplingModel::Blp, ChannelModel::awgn(1.0).expect("valid variance")),
    ];
    for plr in [0.1, 0.2, 0.3] {
        cells.push((SamplingModel::Blp, ChannelModel::packet_loss(plr).expect("valid rate")));
    }
    cells
}

/// `timing = false` leaves the `seconds` column empty so that reruns give
/// identical bytes.
pub fn image_csv(rows: &[ImageRow], timing: bool) -> String {
    let mut s = String::from("image,sr,model,channel,plr,apsnr_db,seconds\n");
    for r in rows {
        let secs = if timing { format!("{:.3}", r.seconds) } else { String::new() };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.image,
            r.sr,
            r.model.name(),
            channel_name(&r.channel),
            r.channel.plr,
            format_db(r.apsnr_db),
            secs
        );
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackTarget {
    /// Measurement scrambling.
    ClassOne,
    /// Frequency scrambling.
    ClassTwo,
    /// Double random phase encoding after CS.
    Drpe,
    Blp,
}

impl AttackTarget {
    pub const ALL: [AttackTarget; 4] = [AttackTarget::ClassOne, AttackTarget::ClassTwo, AttackTarget::Drpe, AttackTarget::Blp];

    pub fn name(self) -> &'static str {
        match self {
            AttackTarget::ClassOne => "class1",
            AttackTarget::ClassTwo => "class2",
            AttackTarget::Drpe => "drpe",
            AttackTarget::Blp => "blp-cs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s || (s == "blp" && *t == AttackTarget::Blp))
    }
}

#[derive(Clone, Debug)]
pub struct AttackRow {
    pub target: AttackTarget,
    pub seed: u64,
    pub m: usize,
    pub k_rows: usize,
    pub sparsity: usize,
    pub report: AttackReport,
}

/// One chosen-plaintext attack: sizes `M = 256, K = 64, k = 8` for the
/// scrambling and BLP targets and `m = 4, M = 32, k = 4` for the phase
/// masks. Plaintexts are sparse under the DCT for the baselines (the public
/// basis) and under the secret basis for BLP-CS.
pub fn attack_trial(target: AttackTarget, seed: u64) -> Result<AttackRow> {
    let key = KeySeed(seed);
    let config = SolverConfig::default();
    // Phase masks keep only m² = 16 independent real equations for M = 32.
    let (m, k_rows, sparsity) = match target {
        AttackTarget::Drpe => (32, 16, 4),
        _ => (256, 64, 8),
    };
    let dct = OrthoBasis::dct(m);
    let mut sig = derive_stream(key, "signal");
    let report = match target {
        AttackTarget::ClassOne => {
            let phi = gaussian_matrix(&mut derive_stream(key, "A"), k_rows, m);
            let p = random_permutation(&mut derive_stream(key, "perm"), k_rows);
            let x = dct.synthesize(&sparse_vector(&mut sig, m, sparsity))?;
            let c = scramble_measurements_encode(&phi, &p, &x)?.y;
            let oracle = EncryptionOracle::new(m, |v| Ok(scramble_measurements_encode(&phi, &p, v)?.y));
            run_cpa(&oracle, &c, &x, &dct, &config)?
        }
        AttackTarget::ClassTwo => {
            let phi = gaussian_matrix(&mut derive_stream(key, "A"), k_rows, m);
            let p = random_permutation(&mut derive_stream(key, "perm"), m);
            let x = dct.synthesize(&sparse_vector(&mut sig, m, sparsity))?;
            let c = scramble_frequency_encode(&phi, &p, &dct, &x)?.y;
            let oracle = EncryptionOracle::new(m, |v| Ok(scramble_frequency_encode(&phi, &p, &dct, v)?.y));
            run_cpa(&oracle, &c, &x, &dct, &config)?
        }
        AttackTarget::Drpe => {
            let phi = gaussian_matrix(&mut derive_stream(key, "A"), k_rows, m);
            let masks = DrpeMasks::random(key, 4);
            let x = dct.synthesize(&sparse_vector(&mut sig, m, sparsity))?;
            let c = stack_complex(&drpe_cs_encode(&phi, &masks, &x)?);
            let oracle = EncryptionOracle::new(m, |v| Ok(stack_complex(&drpe_cs_encode(&phi, &masks, v)?)));
            run_cpa(&oracle, &c, &x, &dct, &config)?
        }
        AttackTarget::Blp => {
            let blp = keygen(KeyParams { sr: k_rows as f64 / m as f64, ..KeyParams::new(seed, m, 0.25) })?;
            let x = blp.secret_basis(BasisShape::OneD)?.synthesize(&sparse_vector(&mut sig, m, sparsity))?;
            let c = blp_encode(&blp, &x)?.y;
            let oracle = EncryptionOracle::new(m, |v| Ok(blp_encode(&blp, v)?.y));
            run_cpa(&oracle, &c, &x, &dct, &config)?
        }
    };
    Ok(AttackRow { target, seed, m, k_rows, sparsity, report })
}

pub fn attack_sweep(targets: &[AttackTarget], seed: u64, seeds: usize) -> Result<Vec<AttackRow>> {
    let jobs: Vec<(AttackTarget, u64)> =
        targets.iter().flat_map(|&t| (0..seeds as u64).map(move |s| (t, seed + s))).collect();
    jobs.into_par_iter().map(|(t, s)| attack_trial(t, s)).collect()
}

pub fn attack_csv(rows: &[AttackRow]) -> String {
    let mut s = String::from("target,seed,M,K,k,queries,break_success,rel_error\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.3e}",
            r.target.name(),
            r.seed,
            r.m,
            r.k_rows,
            r.sparsity,
            r.report.queries_used,
            r.report.break_success,
            r.report.reconstruction_error
        );
    }
    s
}

/// Pairs of plaintexts at growing distance under one BLP key, with the
/// distance of their ciphertexts. With a fixed key the measurement map is a
/// fixed linear map, so close plaintexts give close ciphertexts.
pub fn proximity_csv(seed: u64, pairs: usize) -> Result<String> {
    let key = keygen(KeyParams::new(seed, 256, 0.25))?;
    let mut st = derive_stream(KeySeed(seed), "proximity");
    let base: Vec<f64> = (0..256).map(|_| st.next_gaussian()).collect();
    let y0 = blp_encode(&key, &base)?.y;
    let mut s = String::from("pair,plain_distance,cipher_distance\n");
    for p in 0..pairs {
        let scale = 10f64.powf(-3.0 + 3.0 * p as f64 / pairs.max(1) as f64);
        let other: Vec<f64> = base.iter().map(|v| v + scale * st.next_gaussian()).collect();
        let y1 = blp_encode(&key, &other)?.y;
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        let _ = writeln!(s, "{p},{:.6e},{:.6e}", dist(&base, &other), dist(&y0, &y1));
    }
    Ok(s)
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::param(format!("not a number: {t:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig1_single_trial_shows_the_gap() {
        let row = fig1_trial(&Fig1Config::default(), 1).unwrap();
        assert!(row.two_step_error < 1e-6);
        assert!(row.direct_error > 0.1);
    }

    #[test]
    fn sterm_reduces_to_dct_at_order_one() {
        let img = GrayImage::from_fn(32, |i, j| 128.0 + 60.0 * ((i as f64) / 5.0).sin() * ((j as f64) / 7.0).cos()).unwrap();
        let rows = sterm(&img, &[(1.0, 1.0)], &[0.1]).unwrap();
        assert!((rows[0].ratio() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn attack_targets_parse() {
        for t in AttackTarget::ALL {
            assert_eq!(AttackTarget::parse(t.name()), Some(t));
        }
        assert_eq!(AttackTarget::parse("blp"), Some(AttackTarget::Blp));
        assert_eq!(AttackTarget::parse("nope"), None);
    }

    #[test]
    fn csv_headers() {
        assert!(attack_csv(&[]).starts_with("target,seed,M,K,k,queries,break_success,rel_error\n"));
        assert!(image_csv(&[], false).starts_with("image,sr,model,channel,plr,apsnr_db,seconds\n"));
        assert_eq!(parse_list("0.1, 0.3").unwrap(), vec![0.1, 0.3]);
        assert!(parse_list("a").is_err());
    }
}
