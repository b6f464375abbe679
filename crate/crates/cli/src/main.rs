use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nexus_core::data::{generate_phantom, preprocess_volume, LabelMap, NormScope, PhantomSpec, TumorSpec, VolumeSet};
use nexus_core::eval::{
    evaluate, morph_cleanup, report_boxstats, segment_volume, write_boxstats_csv, write_reports_csv, Region,
};
use nexus_core::models::{Architecture, NexusModel};
use nexus_core::train::{load_checkpoint, save_checkpoint, split_volumes, train, EpochRecord, RunHooks, TrainConfig, STREAM_INIT};
use nexus_core::{selftest, Error, Rng};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

/// Volume files end in this extension.
const VOLUME_EXT: &str = "nxv";

/// Brain-lesion segmentation with cascaded CNNs.
#[derive(Parser)]
#[command(name = "nexus", version)]
struct Cli {
    /// Worker threads (default: 1 for train, all cores otherwise).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic labeled phantom volumes.
    Synth(SynthArgs),
    /// Two-phase training on a directory of labeled volumes.
    Train(TrainArgs),
    /// Label a volume with a trained checkpoint.
    Segment(SegmentArgs),
    /// Score predicted label maps against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the built-in invariant checks.
    Check,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Extents as D,H,W.
    #[arg(long, default_value = "64,64,64", value_parser = parse_size)]
    size: [usize; 3],
    #[arg(long)]
    tumor_free: bool,
    /// Standard deviation of the additive intensity noise.
    #[arg(long, default_value_t = 25.0)]
    noise: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    arch: String,
    #[arg(long)]
    data: PathBuf,
    /// `key = value` file; unset keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    desk_scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training log CSV (default: the checkpoint path with a .csv extension).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also keep a checkpoint after every epoch here.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_postproc: bool,
    /// Directory for per-slice PPM overlays.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Label map file, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth file (label map or labeled volume), or a directory.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [d, h, w] if d > 0 && h > 0 && w > 0 => Ok([d, h, w]),
        _ => Err("expected three positive extents D,H,W".into()),
    }
}

/// Failures carrying their exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Numeric(_) => EXIT_NUMERIC,
            Error::Io(io) if !matches!(io.kind(), io::ErrorKind::UnexpectedEof | io::ErrorKind::InvalidData) => {
                EXIT_USAGE
            }
            _ => EXIT_DATA,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or(match cli.command {
        Command::Train(_) => 1,
        _ => 0,
    });
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("nexus: {e}");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Segment(a) => segment(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Check => check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("nexus: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn synth(a: &SynthArgs) -> Result<(), Failure> {
    fs::create_dir_all(&a.out)?;
    let tumor = if a.tumor_free { TumorSpec::None } else { TumorSpec::Random };
    let spec = PhantomSpec { dims: a.size, tumor, noise_std: a.noise };
    let mut manifest = csv::Writer::from_path(a.out.join("manifest.csv")).map_err(Error::from)?;
    manifest.write_record(["file", "seed", "tumor"]).map_err(Error::from)?;
    for i in 0..a.count {
        let seed = a.seed + i as u64;
        let name = format!("phantom-{i:03}.{VOLUME_EXT}");
        generate_phantom(seed, &spec)?.write(a.out.join(&name))?;
        manifest.write_record([name, seed.to_string(), (!a.tumor_free).to_string()]).map_err(Error::from)?;
    }
    manifest.flush()?;
    println!("wrote {} phantom(s) to {}", a.count, a.out.display());
    Ok(())
}

/// Volume files of a directory in name order.
fn volume_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == VOLUME_EXT))
        .collect();
    files.sort();
    Ok(files)
}

fn train_cmd(a: &TrainArgs) -> Result<(), Failure> {
    let arch: Architecture = a.arch.parse().map_err(|e: Error| usage(e.to_string()))?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.desk_scale {
        cfg.desk_scale = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let files = volume_files(&a.data)?;
    let mut vols = Vec::with_capacity(files.len());
    for f in &files {
        let v = VolumeSet::read(f)?;
        if v.labels.is_none() {
            return Err(Error::Config(format!("{} has no labels", f.display())).into());
        }
        vols.push(preprocess_volume(&v, NormScope::Slice));
    }
    if vols.len() < 2 {
        return Err(Error::Config(format!("need at least 2 labeled volumes in {}, found {}", a.data.display(), vols.len())).into());
    }
    let (fit, val) = split_volumes(vols.len(), cfg.val_fraction, cfg.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| vols[i].clone()).collect::<Vec<_>>();
    let (fit_vols, val_vols) = (pick(&fit), pick(&val));
    println!(
        "{}: {} training / {} validation volumes; phase 1 {} patches x {} epochs, phase 2 {} patches x {} epochs",
        arch.name(),
        fit_vols.len(),
        val_vols.len(),
        cfg.phase1_count(),
        cfg.phase1_epochs,
        cfg.phase2_count(),
        cfg.phase2_epochs
    );

    let mut model = NexusModel::build(arch, &cfg.model, &mut Rng::derive(cfg.seed, STREAM_INIT))?;
    if let Some(dir) = &a.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let mut hooks = RunHooks {
        checkpoint_dir: a.checkpoint_dir.clone(),
        on_epoch: Some(Box::new(|r: &EpochRecord| {
            println!(
                "phase {} epoch {}: train {:.4} val {:.4} lr {:.2e} ({:.1}s)",
                r.phase, r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
            )
        })),
    };
    let log = train(&mut model, &fit_vols, &val_vols, &cfg, &mut hooks)?;
    save_checkpoint(&model, &a.out)?;
    log.save_csv(a.log.clone().unwrap_or_else(|| a.out.with_extension("csv")))?;

    for (i, v) in val_vols.iter().enumerate() {
        let seg = morph_cleanup(&segment_volume(&model, v)?);
        let report = evaluate(&seg, v.labels.as_ref().expect("labels checked on load"))?;
        let s = report.region(Region::Complete);
        println!(
            "validation {}: complete dice {:.4} sensitivity {:.4} specificity {:.4}",
            files[val[i]].display(),
            s.dice,
            s.sensitivity,
            s.specificity
        );
    }
    if let Some(last) = log.records.last() {
        println!("final validation loss {:.4}", last.val_loss);
    }
    Ok(())
}

/// Tint per label: necrosis red, edema green, non-enhancing blue, enhancing yellow.
const LABEL_COLORS: [[u8; 3]; 5] = [[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];

fn write_overlays(dir: &Path, raw: &VolumeSet, labels: &LabelMap) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let [d, h, w] = labels.dims();
    // T1c as the grey background.
    let base = &raw.modalities[1];
    for z in 0..d {
        let plane = base.slice(z);
        let max = plane.iter().copied().fold(0.0f32, f32::max);
        let mut f = BufWriter::new(fs::File::create(dir.join(format!("slice-{z:03}.ppm")))?);
        write!(f, "P6\n{w} {h}\n255\n")?;
        let mut pixels = Vec::with_capacity(h * w * 3);
        for (&v, &l) in plane.iter().zip(labels.slice(z)) {
            if l == 0 {
                let g = if max > 0.0 { (v.max(0.0) / max * 255.0).round() as u8 } else { 0 };
                pixels.extend_from_slice(&[g, g, g]);
            } else {
                pixels.extend_from_slice(&LABEL_COLORS[l as usize]);
            }
        }
        f.write_all(&pixels)?;
        f.flush()?;
    }
    Ok(())
}

fn segment(a: &SegmentArgs) -> Result<(), Failure> {
    let model = load_checkpoint(&a.ckpt)?;
    let raw = VolumeSet::read(&a.input)?;
    let vol = preprocess_volume(&raw, NormScope::Slice);
    let mut labels = segment_volume(&model, &vol)?;
    if !a.no_postproc {
        labels = morph_cleanup(&labels);
    }
    labels.write(&a.out)?;
    if let Some(dir) = &a.overlay {
        write_overlays(dir, &raw, &labels)?;
    }
    let hist = labels.histogram();
    let tumor: usize = hist[1..].iter().sum();
    println!("{}: {tumor} tumor voxels {:?}", a.out.display(), hist);
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), Failure> {
    let mut f = BufWriter::new(fs::File::create(&a.out)?);
    match (a.pred.is_dir(), a.truth.is_dir()) {
        (false, false) => {
            let report = evaluate(&LabelMap::read(&a.pred)?, &LabelMap::read(&a.truth)?)?;
            report.write_csv(&mut f)?;
            let s = report.region(Region::Complete);
            println!("complete dice {:.4} sensitivity {:.4} specificity {:.4}", s.dice, s.sensitivity, s.specificity);
        }
        (true, true) => {
            let mut reports = Vec::new();
            for p in volume_files(&a.pred)? {
                let name = p.file_name().expect("listed file").to_string_lossy().into_owned();
                let t = a.truth.join(&name);
                if !t.exists() {
                    return Err(Error::Config(format!("no ground truth {} for {name}", t.display())).into());
                }
                reports.push((name, evaluate(&LabelMap::read(&p)?, &LabelMap::read(&t)?)?));
            }
            if reports.is_empty() {
                return Err(Error::Config(format!("no volume files in {}", a.pred.display())).into());
            }
            write_reports_csv(&reports, &mut f)?;
            writeln!(f)?;
            let only: Vec<_> = reports.into_iter().map(|(_, r)| r).collect();
            let stats = report_boxstats(&only)?;
            write_boxstats_csv(&stats, &mut f)?;
            println!("scored {} volume(s)", only.len());
        }
        _ => return Err(usage("--pred and --truth must both be files or both be directories")),
    }
    f.flush()?;
    Ok(())
}

fn check() -> Result<(), Failure> {
    let checks = selftest::run_all();
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed > 0 {
        return Err(Failure { code: EXIT_NUMERIC, message: format!("{failed} of {} checks failed", checks.len()) });
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}
