use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use blpcs::cipher::{keygen, load_packets, save_packets, BlpKey, KeyParams};
use blpcs::experiments::{
    attack_csv, attack_sweep, fig1, fig1_csv, image_csv, image_sweep, parse_list, proximity_csv, sterm, sterm_csv,
    table1_cells, table2_cells, AttackTarget, Fig1Config, ImageSweepConfig,
};
use blpcs::imaging::{apsnr, bcs_in_decode, bcs_in_encode, columnwise_decode, columnwise_encode, error_energy, format_db, load_pgm, save_pgm, GrayImage};
use blpcs::solvers::{Lambda, SolverConfig};
use blpcs::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blpcs", version, about = "Compressive-sensing cipher with secret fractional-cosine bases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a text key file.
    Keygen(KeygenArgs),
    /// Encrypt a square PGM image column by column.
    Encode(EncodeArgs),
    /// Decrypt a measurement file back to PGM.
    Decode(DecodeArgs),
    /// Chosen-plaintext attack against one scheme.
    Attack(AttackArgs),
    /// Regenerate an experiment as CSV.
    Exp(ExpArgs),
}

#[derive(Args)]
struct KeygenArgs {
    #[arg(long)]
    seed: u64,
    /// Signal length, or the image side.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    sr: f64,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    beta: f64,
    #[arg(long, default_value_t = 60)]
    dmax: u64,
    #[arg(long, default_value_t = 0.25)]
    mix_region: f64,
    #[arg(long, default_value_t = 8)]
    mix_count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Skip the coefficient permutation.
    #[arg(long)]
    bcs_in: bool,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    key: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Print the APSNR against this image.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    bcs_in: bool,
    #[arg(long, default_value_t = 400)]
    iters: usize,
}

#[derive(Args)]
struct AttackArgs {
    /// class1, class2, drpe or blp-cs.
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Also write plaintext/ciphertext distance pairs for BLP-CS here.
    #[arg(long)]
    proximity: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpArgs {
    /// fig1, sterm, table1, table2 or attack.
    name: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    /// PGM input for sterm, table1 and table2.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Comma-separated sampling ratios.
    #[arg(long)]
    srs: Option<String>,
    /// Comma-separated fractional orders for sterm; every pair is run.
    #[arg(long)]
    orders: Option<String>,
    /// Comma-separated kept-coefficient fractions for sterm.
    #[arg(long)]
    keep: Option<String>,
    /// Centre crop side for sterm; 0 keeps the whole image.
    #[arg(long, default_value_t = 128)]
    crop: usize,
    /// Fill the seconds column with wall times.
    #[arg(long)]
    timing: bool,
    /// Final shrinkage weight as a fraction of the largest correlation,
    /// before rate scaling.
    #[arg(long, default_value_t = 2.5e-4)]
    lambda: f64,
    /// Use the weight as given instead of scaling it by `(M/K)²`.
    #[arg(long)]
    fixed_lambda: bool,
    #[arg(long, default_value_t = 400)]
    iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidParameter(_)) | Some(Error::Shape(_)) => 2,
        Some(Error::Format(_)) | Some(Error::Io(_)) => 3,
        Some(_) => 4,
        None => 2,
    }
}

fn write_output(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(Error::from).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_key(path: &Path) -> anyhow::Result<BlpKey> {
    BlpKey::load(path).with_context(|| format!("reading key {}", path.display()))
}

fn load_image(path: &Path) -> anyhow::Result<GrayImage> {
    load_pgm(path).with_context(|| format!("reading image {}", path.display()))
}

fn image_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn quantized(img: &GrayImage) -> anyhow::Result<GrayImage> {
    Ok(GrayImage::new(img.side(), img.pixels().iter().map(|v| v.round()).collect())?)
}

fn cmd_keygen(a: KeygenArgs) -> anyhow::Result<()> {
    let params = KeyParams {
        alpha: a.alpha,
        beta: a.beta,
        dmax: a.dmax,
        mix_region: a.mix_region,
        mix_count: a.mix_count,
        ..KeyParams::new(a.seed, a.n, a.sr)
    };
    let key = keygen(params)?;
    key.save(&a.out).with_context(|| format!("writing {}", a.out.display()))
}

fn cmd_encode(a: EncodeArgs) -> anyhow::Result<()> {
    let key = load_key(&a.key)?;
    let img = load_image(&a.input)?;
    let packets = if a.bcs_in { bcs_in_encode(&key, &img)? } else { columnwise_encode(&key, &img)? };
    save_packets(&packets, &a.out).with_context(|| format!("writing {}", a.out.display()))
}

fn cmd_decode(a: DecodeArgs) -> anyhow::Result<()> {
    let key = load_key(&a.key)?;
    let packets = load_packets(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let config = SolverConfig { max_iters: a.iters, ..SolverConfig::image() };
    let img = if a.bcs_in { bcs_in_decode(&key, &packets, &config)? } else { columnwise_decode(&key, &packets, &config)? };
    let img = quantized(&img)?;
    save_pgm(&img, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(r) = &a.reference {
        let reference = load_image(r)?;
        let m = (img.side() * img.side()) as f64;
        println!("APSNR {} dB", format_db(apsnr(&[error_energy(&reference, &img)?], m)));
    }
    Ok(())
}

fn cmd_attack(a: AttackArgs) -> anyhow::Result<()> {
    let target =
        AttackTarget::parse(&a.target).ok_or_else(|| Error::InvalidParameter(format!("unknown target {:?}", a.target)))?;
    let rows = attack_sweep(&[target], a.seed, a.seeds)?;
    write_output(a.out.as_deref(), &attack_csv(&rows))?;
    if let Some(p) = &a.proximity {
        write_output(Some(p), &proximity_csv(a.seed, 50)?)?;
    }
    Ok(())
}

fn sweep_config(a: &ExpArgs, path: &Path) -> anyhow::Result<ImageSweepConfig> {
    let mut cfg = ImageSweepConfig::new(image_name(path));
    cfg.seed = a.seed;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(s) = &a.srs {
        cfg.srs = parse_list(s)?;
    }
    let lambda = if a.fixed_lambda { Lambda::Relative(a.lambda) } else { Lambda::RateScaled(a.lambda) };
    cfg.solver = SolverConfig { max_iters: a.iters, lambda, ..SolverConfig::default() };
    Ok(cfg)
}

fn require_image(a: &ExpArgs) -> anyhow::Result<&Path> {
    a.image.as_deref().ok_or_else(|| Error::InvalidParameter(format!("{} needs --image", a.name)).into())
}

fn cmd_exp(a: ExpArgs) -> anyhow::Result<()> {
    let csv = match a.name.as_str() {
        "fig1" => {
            let cfg = Fig1Config { seed: a.seed, trials: a.trials.unwrap_or(100), ..Fig1Config::default() };
            fig1_csv(&cfg, &fig1(&cfg)?)
        }
        "sterm" => {
            let mut img = load_image(require_image(&a)?)?;
            if a.crop > 0 && a.crop < img.side() {
                let off = (img.side() - a.crop) / 2;
                img = img.crop(off, off, a.crop)?;
            }
            let orders: Vec<(f64, f64)> = match &a.orders {
                Some(s) => {
                    let o = parse_list(s)?;
                    o.iter().flat_map(|&x| o.iter().map(move |&y| (x, y))).collect()
                }
                None => {
                    let o = [0.92, 0.95, 0.99];
                    let mut v: Vec<(f64, f64)> = o.iter().flat_map(|&x| o.iter().map(move |&y| (x, y))).collect();
                    v.push((1.0, 1.0));
                    v
                }
            };
            let keep = match &a.keep {
                Some(s) => parse_list(s)?,
                None => vec![0.05, 0.1, 0.2],
            };
            sterm_csv(&sterm(&img, &orders, &keep)?)
        }
        "table1" | "table2" => {
            let path = require_image(&a)?;
            let img = load_image(path)?;
            let cfg = sweep_config(&a, path)?;
            let cells = if a.name == "table1" { table1_cells() } else { table2_cells() };
            image_csv(&image_sweep(&img, &cfg, &cells)?, a.timing)
        }
        "attack" => attack_csv(&attack_sweep(&AttackTarget::ALL, a.seed, a.trials.unwrap_or(20))?),
        other => return Err(Error::InvalidParameter(format!("unknown experiment {other:?}")).into()),
    };
    write_output(a.out.as_deref(), &csv)
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("BLPCS_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::InvalidParameter(format!("BLPCS_THREADS={v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Keygen(a) => cmd_keygen(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Exp(a) => cmd_exp(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
