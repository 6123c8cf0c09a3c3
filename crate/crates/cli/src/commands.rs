use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use fourierpet::ablation::{self, Sweep};
use fourierpet::analysis::{deviation_profile, freq_error_map, swap_study, ImageMetrics, Table};
use fourierpet::autodiff::{load_checkpoint, save_checkpoint};
use fourierpet::io::manifest::{list_manifests, load_pair, write_pair};
use fourierpet::io::pgm::write_pgm;
use fourierpet::io::{atomic_write, load_image, save_image, RunConfig};
use fourierpet::net::{self, FourierPet, NetConfig, NetInput, TrainingPair};
use fourierpet::projector::SystemMatrix;
use fourierpet::study::{self, Sample, TEST_SEED_OFFSET};
use fourierpet::{Error, ImageGrid, Result};

use crate::{AnalyzeMode, ConfigArgs, Dose, Method, Split};

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for item in &args.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {item}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the fully-resolved configuration next to a run's outputs.
fn log_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    atomic_write(path, cfg.to_text().as_bytes())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn geometry(cfg: &RunConfig) -> String {
    format!(
        "image {}x{}, sinogram {}x{}",
        cfg.width, cfg.height, cfg.n_angles, cfg.n_bins
    )
}

/// Loads every manifest in `dir`, rejecting pairs whose geometry differs
/// from the configured one.
fn load_samples(dir: &Path, cfg: &RunConfig) -> Result<Vec<Sample>> {
    let paths = list_manifests(dir)?;
    if paths.is_empty() {
        return Err(usage(format!("no manifests in {}", dir.display())));
    }
    paths.iter().map(|p| load_sample(p, cfg)).collect()
}

fn load_sample(path: &Path, cfg: &RunConfig) -> Result<Sample> {
    let pair = load_pair(path)?;
    let m = &pair.manifest;
    if (m.width, m.height, m.n_angles, m.n_bins) != (cfg.width, cfg.height, cfg.n_angles, cfg.n_bins) {
        return Err(Error::ShapeMismatch {
            expected: geometry(cfg),
            found: format!(
                "image {}x{}, sinogram {}x{} in {}",
                m.width,
                m.height,
                m.n_angles,
                m.n_bins,
                path.display()
            ),
        });
    }
    Ok(pair.into())
}

pub fn simulate(args: &ConfigArgs, out: &Path, count: Option<usize>, split: Split) -> Result<()> {
    let cfg = resolve_config(args)?;
    let a = study::projector(&cfg)?;
    let (n, offset, prefix) = match split {
        Split::Train => (count.unwrap_or(cfg.n_train), 0, "train"),
        Split::Test => (count.unwrap_or(cfg.n_test), TEST_SEED_OFFSET, "test"),
    };
    std::fs::create_dir_all(out)?;
    let samples = study::simulate_split(&a, &cfg, n, offset)?;
    for (i, s) in samples.iter().enumerate() {
        write_pair(out, &format!("{prefix}_{i:04}"), &s.phantom, &s.acquisition, &s.degradation)?;
    }
    log_config(&out.join("run.config"), &cfg)?;
    println!("simulate: wrote {n} {prefix} pairs to {}", out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<FourierPet> {
    let ckpt = load_checkpoint(path)?;
    FourierPet::from_params(NetConfig::from_metadata(&ckpt.metadata)?, ckpt.params)
}

pub fn reconstruct(
    args: &ConfigArgs,
    manifest: &Path,
    method: Method,
    checkpoint: Option<&Path>,
    dose: Dose,
    out: Option<&Path>,
    pgm: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(args)?;
    let sample = load_sample(manifest, &cfg)?;
    let a = Arc::new(study::projector(&cfg)?);
    let (y, scale) = match dose {
        Dose::Low => (&sample.acquisition.y_low, sample.low_scale()),
        Dose::Full => (&sample.acquisition.y_full, sample.acquisition.count_scale),
    };
    let start = Instant::now();
    let image = match method {
        Method::Mlem => study::mlem_image(&a, y, scale, &cfg)?,
        Method::Osem => study::osem_image(&a, y, scale, &cfg)?,
        Method::Fourierpet => {
            let path = checkpoint.ok_or_else(|| usage("--method fourierpet needs --checkpoint"))?;
            let model = load_model(path)?;
            model.reconstruct(&NetInput::new(a.clone(), y, scale)?)?.image
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(out) = out {
        save_image(out, &image)?;
        log_config(&sibling(out, ".config"), &cfg)?;
    }
    if let Some(pgm) = pgm {
        write_pgm(pgm, image.values(), image.width(), image.height())?;
    }
    let m = ImageMetrics::compute(&image, &sample.phantom.activity)?;
    println!(
        "metrics method={} sinogram={} psnr_db={:.4} ssim={:.4} rmse={:.6} seconds={elapsed:.3}",
        format!("{method:?}").to_lowercase(),
        format!("{dose:?}").to_lowercase(),
        m.psnr,
        m.ssim,
        m.rmse
    );
    Ok(())
}

fn pairs_of(samples: &[Sample], a: &Arc<SystemMatrix>) -> Result<Vec<TrainingPair>> {
    samples.iter().map(|s| s.training_pair(a)).collect()
}

pub fn train(args: &ConfigArgs, data: &Path, test_data: Option<&Path>, out: &Path, log: Option<PathBuf>) -> Result<()> {
    let cfg = resolve_config(args)?;
    let a = Arc::new(study::projector(&cfg)?);
    let samples = load_samples(data, &cfg)?;
    let pairs = pairs_of(&samples, &a)?;
    let mut model = FourierPet::new(study::net_config(&cfg)?, cfg.seed)?;
    let log_path = log.unwrap_or_else(|| sibling(out, ".log.jsonl"));
    let mut lines = String::new();
    let mut log_err = None;
    let start = Instant::now();
    let report = net::train(&mut model, &pairs, &study::train_config(&cfg), |rec| {
        match serde_json::to_string(rec) {
            Ok(line) => {
                lines.push_str(&line);
                lines.push('\n');
            }
            Err(e) => log_err = Some(e),
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::Format(format!("cannot encode training log: {e}")));
    }
    for e in &report.epochs {
        let resid: Vec<String> = e.mean_residuals.iter().map(|r| format!("{r:.4}")).collect();
        let mu: Vec<String> = e.mu.iter().map(|m| format!("{m:.4}")).collect();
        println!(
            "epoch {} loss {:.6} residuals [{}] mu [{}]",
            e.epoch + 1,
            e.mean_loss,
            resid.join(", "),
            mu.join(", ")
        );
    }
    save_checkpoint(out, &model.config.to_metadata(), &model.params, Some(&report.optimizer))?;
    atomic_write(&log_path, lines.as_bytes())?;
    log_config(&sibling(out, ".config"), &cfg)?;
    println!(
        "train: {} pairs, {} steps in {:.1}s -> {}",
        pairs.len(),
        report.steps.len(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    if let Some(dir) = test_data {
        let test = load_samples(dir, &cfg)?;
        let osem = study::score(&study::osem_images(&a, &test, &cfg)?, &test)?.0;
        let net = study::score(&study::network_images(&model, &a, &test)?, &test)?.0;
        println!(
            "test: n={} fourierpet psnr_db={:.4} ssim={:.4} | osem psnr_db={:.4} ssim={:.4}",
            test.len(),
            net.psnr,
            net.ssim,
            osem.psnr,
            osem.ssim
        );
    }
    Ok(())
}

pub struct AnalyzeArgs {
    pub mode: AnalyzeMode,
    pub truth: Option<PathBuf>,
    pub low: Option<PathBuf>,
    pub full: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub roi: Option<PathBuf>,
    pub roi_min: f64,
    pub bands: usize,
    pub out: Option<PathBuf>,
    pub pgm: Option<PathBuf>,
    pub jsonl: Option<PathBuf>,
}

fn required(path: &Option<PathBuf>, flag: &str, mode: &str) -> Result<ImageGrid> {
    let p = path
        .as_ref()
        .ok_or_else(|| usage(format!("--mode {mode} needs --{flag}")))?;
    load_image(p)
}

fn emit(tables: &[(&str, Table)], jsonl: Option<&Path>) -> Result<()> {
    let mut records = String::new();
    for (title, t) in tables {
        if tables.len() > 1 {
            println!("# {title}");
        }
        print!("{}", t.render());
        records.push_str(&t.to_json_lines());
    }
    if let Some(path) = jsonl {
        atomic_write(path, records.as_bytes())?;
    }
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let jsonl = args.jsonl.as_deref();
    match args.mode {
        AnalyzeMode::Swap => {
            let truth = required(&args.truth, "truth", "swap")?;
            let low = required(&args.low, "low", "swap")?;
            let full = required(&args.full, "full", "swap")?;
            let roi = match &args.roi {
                Some(p) => {
                    let g = load_image(p)?;
                    truth.ensure_same_dims(&g)?;
                    Some(g.values().iter().map(|&v| v > args.roi_min).collect::<Vec<bool>>())
                }
                None => None,
            };
            let study = swap_study(&truth, &low, &full, roi.as_deref())?;
            println!("# hybrids: real part of the inverse transform, clamped at 0");
            emit(&[("swap", study.table())], jsonl)
        }
        AnalyzeMode::Profile => {
            let low = required(&args.low, "low", "profile")?;
            let full = required(&args.full, "full", "profile")?;
            let p = deviation_profile(&low, &full, args.bands)?;
            emit(&[("rings", p.ring_table()), ("bands", p.band_table())], jsonl)
        }
        AnalyzeMode::FreqError => {
            let image = required(&args.image, "image", "freq-error")?;
            let reference = required(&args.reference, "reference", "freq-error")?;
            let map = freq_error_map(&image, &reference)?;
            if args.out.is_none() && args.pgm.is_none() {
                return Err(usage("--mode freq-error needs --out or --pgm"));
            }
            if let Some(out) = &args.out {
                save_image(out, &map)?;
            }
            if let Some(pgm) = &args.pgm {
                write_pgm(pgm, map.values(), map.width(), map.height())?;
            }
            let over = map.values().iter().filter(|&&v| v > 0.0).count();
            println!(
                "freq-error: min {:.4} max {:.4} mean {:.4}, {over} of {} bins overestimated",
                map.min(),
                map.max(),
                map.mean(),
                map.len()
            );
            Ok(())
        }
        AnalyzeMode::Metrics => {
            let image = required(&args.image, "image", "metrics")?;
            let reference = required(&args.reference, "reference", "metrics")?;
            let m = ImageMetrics::compute(&image, &reference)?;
            let mut t = Table::new(&["psnr_db", "ssim", "rmse"]);
            t.push(vec![
                format!("{:.4}", m.psnr),
                format!("{:.4}", m.ssim),
                format!("{:.6}", m.rmse),
            ]);
            emit(&[("metrics", t)], jsonl)
        }
    }
}

pub fn ablate(args: &ConfigArgs, sweep: &str, out: &Path) -> Result<()> {
    let cfg = resolve_config(args)?;
    let sweep: Sweep = sweep.parse()?;
    let a = Arc::new(study::projector(&cfg)?);
    let train_samples = study::train_split(&a, &cfg)?;
    let test_samples = study::test_split(&a, &cfg)?;
    std::fs::create_dir_all(out)?;
    let result = ablation::run(&a, &cfg, sweep, &train_samples, &test_samples, |line| {
        eprintln!("ablate: {line}");
    })?;
    let table = result.table();
    print!("{}", table.render());
    let stem = format!("ablate_{}", sweep.name().replace('-', "_"));
    atomic_write(&out.join(format!("{stem}.txt")), table.render().as_bytes())?;
    atomic_write(&out.join(format!("{stem}.jsonl")), table.to_json_lines().as_bytes())?;
    log_config(&out.join("run.config"), &cfg)?;
    Ok(())
}
