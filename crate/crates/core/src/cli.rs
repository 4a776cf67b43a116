//! The `dsr` command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::codec::{
    decode, encode, extract_signs, rc_encode_bits, restore_image, sign_residual,
    signs_at_coded_positions,
};
use crate::error::{Error, Result};
use crate::imageio::{crop_patches, encode_pgm, load_pgm, load_pgm_dir, pad_to_blocks, save_pgm, Image};
use crate::metrics::{aos, binary_entropy, bps_bpp, psnr, EvalReport};
use crate::neuralnet::{load_checkpoint, ModelParams, Variant};
use crate::trainer::{train, TrainConfig};
use crate::transform::{forward_quantize, reconstruct, QuantTable};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "DSR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dsr", version, about = "DCT image codec with learned sign retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a sign-retrieval model on random patches of a PGM directory.
    Train(TrainArgs),
    /// Compress a PGM image into a DSR1 stream.
    Encode(EncodeArgs),
    /// Decompress a DSR1 stream into a PGM image and print its SHA-256.
    Decode(DecodeArgs),
    /// Per-image, per-QF sign statistics as CSV.
    #[command(after_help = concat!(
        "CSV columns: image,qf,n_signs,n_pixels,bps,bpp,aos,psnr_restored,",
        "wall_time,baseline_bps,residual_bytes,raw_sign_bytes\n",
        "bps/bpp are residual entropies, baseline_bps the raw sign entropy, ",
        "psnr_restored compares the network output with the decoded image. ",
        "One `mean` row follows for each QF."
    ))]
    Eval(EvalArgs),
    /// Train one model per recursion depth, with and without projection.
    AblateK(AblateArgs),
    /// Time sign retrieval single-threaded and multi-threaded.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "rdsr")]
    pub variant: Variant,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub qf: u8,
    #[arg(long, default_value_t = 50_000)]
    pub patches: usize,
    #[arg(long, default_value_t = 256)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replace the projection after each stage with the identity.
    #[arg(long)]
    pub no_pocs: bool,
    /// Where to write `epoch,mean_loss` lines (default: stdout).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, required_unless_present = "no_retrieval")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub qf: u8,
    /// Store raw sign bits instead of a residual.
    #[arg(long, conflicts_with = "ckpt")]
    pub no_retrieval: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

fn default_qf_list() -> Vec<u8> {
    (1..=19).map(|i| 5 * i).collect()
}

fn check_qfs(list: &[u8]) -> Result<()> {
    if list.is_empty() {
        return Err(Error::Config("empty QF list".into()));
    }
    match list.iter().find(|q| !(1..=100).contains(*q)) {
        Some(q) => Err(Error::Config(format!("quality factor {q} outside 1..=100"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = default_qf_list())]
    pub qf_list: Vec<u8>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out evaluation images.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 2, 4])]
    pub k_list: Vec<usize>,
    /// Run only the arm without projection.
    #[arg(long)]
    pub no_pocs: bool,
    #[arg(long, default_value = "rdsr")]
    pub variant: Variant,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u8).range(1..=100))]
    pub qf: u8,
    #[arg(long, default_value_t = 2000)]
    pub patches: usize,
    #[arg(long, default_value_t = 64)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = default_qf_list())]
    pub qf_list: Vec<u8>,
}

/// Thread count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Lowercase hex SHA-256 of the PGM encoding of `image`.
pub fn image_hash(image: &Image) -> String {
    Sha256::digest(encode_pgm(image))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Sign statistics of one image at one quality factor.
///
/// `wall_time` covers sign retrieval, residual formation and the metrics.
pub fn evaluate(name: &str, image: &Image, qf: u8, params: &ModelParams) -> Result<EvalReport> {
    let table = QuantTable::for_quality(qf)?;
    let padded = pad_to_blocks(image);
    let grid = forward_quantize(&padded.image, &table)?;
    let (truth, _) = extract_signs(&grid, &table);
    let n_pixels = image.len();

    let start = Instant::now();
    let restored_image = restore_image(&grid, &table, params)?;
    let restored = signs_at_coded_positions(&restored_image, &grid)?;
    let residual = sign_residual(&truth, &restored)?;
    let (bps, bpp) = bps_bpp(&residual, n_pixels)?;
    let accuracy = aos(&truth, &restored)?;
    let wall_time = start.elapsed().as_secs_f64();

    let (w, h) = (image.width(), image.height());
    let decoded = reconstruct(&grid, &table).crop(0, 0, w, h)?;
    let psnr_restored = psnr(&restored_image.crop(0, 0, w, h)?, &decoded)?;
    Ok(EvalReport {
        image: name.to_string(),
        qf,
        n_signs: truth.len(),
        n_pixels,
        bps,
        bpp,
        aos: accuracy,
        psnr_restored,
        wall_time,
        baseline_bps: binary_entropy(truth.count_ones(), truth.len())?,
        residual_bytes: rc_encode_bits(residual.bits()).len(),
        raw_sign_bytes: truth.len().div_ceil(8),
    })
}

/// Reports for every image at every QF, followed by one mean row per QF.
pub fn evaluate_set(
    images: &[(String, Image)],
    qfs: &[u8],
    params: &ModelParams,
) -> Result<(Vec<EvalReport>, Vec<EvalReport>)> {
    check_qfs(qfs)?;
    let mut rows = Vec::with_capacity(images.len() * qfs.len());
    let mut means = Vec::with_capacity(qfs.len());
    for &qf in qfs {
        let start = rows.len();
        for (name, img) in images {
            rows.push(evaluate(name, img, qf, params)?);
        }
        means.extend(EvalReport::mean("mean", &rows[start..]));
    }
    Ok((rows, means))
}

/// One trained model of a recursion-depth ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub k: usize,
    pub pocs: bool,
    pub aos: f64,
    pub psnr_restored: f64,
    pub bps: f64,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str = "k,pocs,aos,psnr_restored,bps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.4},{:.6}",
            self.k, self.pocs, self.aos, self.psnr_restored, self.bps
        )
    }
}

/// Trains `base` once per `(k, pocs)` pair and evaluates each model on
/// `test` at `qf`. Every run uses the same patches and seed.
pub fn ablate_k(
    patches: &[Image],
    test: &[(String, Image)],
    ks: &[usize],
    arms: &[bool],
    base: &TrainConfig,
    qf: u8,
) -> Result<Vec<AblationRow>> {
    if ks.is_empty() {
        return Err(Error::Config("empty K list".into()));
    }
    let mut out = Vec::new();
    for &pocs in arms {
        for &k in ks {
            let cfg = TrainConfig {
                k,
                pocs,
                checkpoint: None,
                ..base.clone()
            };
            log::info!("ablation: training K={k} pocs={pocs}");
            let params = train(patches, &cfg, &mut io::sink())?;
            let (_, means) = evaluate_set(test, &[qf], &params)?;
            let m = &means[0];
            out.push(AblationRow {
                k,
                pocs,
                aos: m.aos,
                psnr_restored: m.psnr_restored,
                bps: m.bps,
            });
        }
    }
    Ok(out)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = TrainConfig {
        variant: a.variant,
        k: a.k,
        pocs: !a.no_pocs,
        qf: a.qf,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        checkpoint: Some(a.out.clone()),
    };
    config.validate()?;
    log::info!(
        "train: variant={} K={} pocs={} qf={} patches={} patch_size={} batch={} epochs={} lr={} seed={}",
        config.variant.name(),
        config.k,
        config.pocs,
        config.qf,
        a.patches,
        a.patch_size,
        config.batch,
        config.epochs,
        config.lr,
        config.seed
    );
    let sources: Vec<Image> = load_pgm_dir(&a.data)?.into_iter().map(|(_, i)| i).collect();
    let patches = crop_patches(&sources, a.patch_size, a.patches, a.seed)?;
    if patches.is_empty() {
        return Err(Error::Config("no training patches requested".into()));
    }
    let mut sink = output(a.loss_csv.as_deref())?;
    train(&patches, &config, &mut sink)?;
    sink.flush()?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let image = load_pgm(&a.input)?;
    let params = match &a.ckpt {
        Some(p) if !a.no_retrieval => Some(load_checkpoint(p)?),
        _ => None,
    };
    let bytes = encode(&image, a.qf, params.as_ref())?;
    fs::write(&a.out, &bytes)?;
    log::info!("{} bytes written to {}", bytes.len(), a.out.display());
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&a.input)?;
    let params = a.ckpt.as_ref().map(load_checkpoint).transpose()?;
    let image = decode(&bytes, params.as_ref())?;
    save_pgm(&image, &a.out)?;
    println!("sha256 {}", image_hash(&image));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    check_qfs(&a.qf_list)?;
    let params = load_checkpoint(&a.ckpt)?;
    let images = load_pgm_dir(&a.data)?;
    let (rows, means) = evaluate_set(&images, &a.qf_list, &params)?;
    let mut out = output(a.csv.as_deref())?;
    writeln!(out, "{}", EvalReport::CSV_HEADER)?;
    for r in rows.iter().chain(&means) {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let base = TrainConfig {
        variant: a.variant,
        qf: a.qf,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        ..TrainConfig::default()
    };
    for &k in &a.k_list {
        TrainConfig { k, ..base.clone() }.validate()?;
    }
    let sources: Vec<Image> = load_pgm_dir(&a.data)?.into_iter().map(|(_, i)| i).collect();
    let test = load_pgm_dir(&a.test)?;
    let patches = crop_patches(&sources, a.patch_size, a.patches, a.seed)?;
    let arms: &[bool] = if a.no_pocs { &[false] } else { &[true, false] };
    let rows = ablate_k(&patches, &test, &a.k_list, arms, &base, a.qf)?;
    let mut out = output(a.csv.as_deref())?;
    writeln!(out, "{}", AblationRow::CSV_HEADER)?;
    for r in &rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(())
}

/// Mean seconds per image (averaged over QFs) and the reports, run on a
/// dedicated pool of `threads` workers.
pub fn bench_run(
    images: &[(String, Image)],
    qfs: &[u8],
    params: &ModelParams,
    threads: usize,
) -> Result<(f64, Vec<EvalReport>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let start = Instant::now();
        let (rows, _) = evaluate_set(images, qfs, params)?;
        let per_image = start.elapsed().as_secs_f64() / (images.len() * qfs.len()) as f64;
        Ok((per_image, rows))
    })
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    check_qfs(&a.qf_list)?;
    let params = load_checkpoint(&a.ckpt)?;
    let images = load_pgm_dir(&a.data)?;
    let multi = threads_from_env().unwrap_or_else(rayon::current_num_threads);
    let (t1, r1) = bench_run(&images, &a.qf_list, &params, 1)?;
    let (tn, rn) = bench_run(&images, &a.qf_list, &params, multi)?;
    let same = r1
        .iter()
        .zip(&rn)
        .all(|(x, y)| (x.n_signs, x.aos, x.bps) == (y.n_signs, y.aos, y.bps));
    println!("threads,seconds_per_image");
    println!("1,{t1:.6}");
    println!("{multi},{tn:.6}");
    if !same {
        return Err(Error::Numerical("results depend on the thread count".into()));
    }
    log::info!(
        "{} images x {} QFs, speedup {:.2}, results identical across thread counts",
        images.len(),
        a.qf_list.len(),
        t1 / tn
    );
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::AblateK(a) => cmd_ablate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}
