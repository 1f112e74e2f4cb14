use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use lattice_eit_core::dataset::{
    self, load_split, symmetry_permutations, training_matrices, DatasetConfig, DatasetSimulator,
    FULL_PER_TOUCH_COUNT,
};
use lattice_eit_core::forward::Protocol;
use lattice_eit_core::geometry::{SensorGeometry, DEFAULT_ELEMENT_SIZE};
use lattice_eit_core::gestures::{
    self, read_gesture_set, write_gesture_set, GestureClass, GestureSample, GestureScripts, GestureSynth,
    SequenceClassifier, TrainConfig, DEFAULT_SNR_DB,
};
use lattice_eit_core::inverse::{
    content_hash, fit_linear_map, sensor_raster_jacobian, InverseModel, Linearization, TikhonovSolver,
    DEFAULT_LAMBDA, DEFAULT_RIDGE,
};
use lattice_eit_core::metrics::{MetricReport, MetricSummary};
use lattice_eit_core::phantom::{apply_phantom, TouchMode, TouchPhantom, TouchPoint};
use lattice_eit_core::sweep::{run_sweep, v_rel, SweepConfig};

pub const GESTURE_FILE: &str = "gestures.bin";
pub const GESTURE_MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Tikhonov,
    Linear,
}

/// Reads a geometry TOML file, or the optimized default.
pub fn load_geometry(path: Option<&Path>) -> Result<SensorGeometry> {
    let g = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SensorGeometry::with_lattice(4.0, 3.0),
    };
    g.validate()?;
    Ok(g)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn sha256_hex(bytes: &[u8]) -> String {
    content_hash([bytes]).iter().map(|b| format!("{b:02x}")).collect()
}

// protocol

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    /// Print the 208-entry extended set (both orientations of every pair).
    #[arg(long)]
    pub extended: bool,
    #[arg(long, default_value_t = 16)]
    pub electrodes: usize,
}

pub fn protocol(args: &ProtocolArgs) -> Result<String> {
    let p = if args.extended {
        Protocol::extended(args.electrodes)
    } else {
        Protocol::adjacent(args.electrodes)
    };
    Ok(p.to_table())
}

// simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Touch as `x,y,radius,intensity` (depth in mm, or contrast factor).
    #[arg(long = "touch", value_parser = parse_touch)]
    pub touches: Vec<TouchPoint>,
    #[arg(long, value_enum, default_value_t = ModeArg::Depth)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_ELEMENT_SIZE)]
    pub element_size: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Contrast,
    Depth,
}

fn parse_touch(s: &str) -> std::result::Result<TouchPoint, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y, r, i] => Ok(TouchPoint::new(x, y, r, i)),
        _ => Err("expected x,y,radius,intensity".into()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulatedFrame {
    pub geometry_hash: String,
    pub protocol_version: u32,
    pub phantom: TouchPhantom,
    pub reference: Vec<f64>,
    pub frame: Vec<f64>,
    pub delta: Vec<f64>,
    pub v_rel: f64,
}

pub fn simulate(args: &SimulateArgs) -> Result<SimulatedFrame> {
    let geom = load_geometry(args.geometry.as_deref())?;
    let mode = match args.mode {
        ModeArg::Contrast => TouchMode::Contrast,
        ModeArg::Depth => TouchMode::Depth,
    };
    let phantom = TouchPhantom::new(mode, 0, args.touches.clone());
    phantom.validate(&geom)?;
    let sim = DatasetSimulator::new(&geom, args.element_size)?;
    let field = apply_phantom(&sim.baseline, &sim.mesh, &geom, &phantom)?;
    let frame = sim.model.simulate_frame(&field)?;
    let out = SimulatedFrame {
        geometry_hash: geom.hash().to_string(),
        protocol_version: frame.protocol_version,
        phantom,
        delta: frame.delta(&sim.reference)?,
        v_rel: v_rel(&frame, &sim.reference)?,
        reference: sim.reference.values.clone(),
        frame: frame.values,
    };
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &out)?;
    w.flush()?;
    Ok(out)
}

// sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0])]
    pub widths: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 3.0, 4.0, 5.0])]
    pub thicknesses: Vec<f64>,
    /// Phantoms per touch count (1, 2 and 3 touches).
    #[arg(long, default_value_t = 10)]
    pub phantoms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ELEMENT_SIZE)]
    pub element_size: f64,
    /// Output table (w,t,mean,std,n).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sweep(args: &SweepArgs) -> Result<String> {
    let config = SweepConfig {
        widths: args.widths.clone(),
        thicknesses: args.thicknesses.clone(),
        phantoms_per_condition: args.phantoms,
        master_seed: args.seed,
        element_size: args.element_size,
        ..SweepConfig::default()
    };
    let result = run_sweep(&config)?;
    let mut w = create(&args.out)?;
    w.write_all(result.to_table().as_bytes())?;
    w.flush()?;
    Ok(result.report())
}

// gen-data

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Base phantoms per touch count (1 to 5 touches).
    #[arg(long, default_value_t = dataset::DESK_PER_TOUCH_COUNT)]
    pub per_class: usize,
    #[arg(long, default_value_t = 2025)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// 10000 phantoms per touch count, overriding `--per-class`.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long, default_value_t = DEFAULT_ELEMENT_SIZE)]
    pub element_size: f64,
}

pub fn gen_data(args: &GenDataArgs, mut progress: impl FnMut(usize, usize)) -> Result<String> {
    let per = if args.full_scale { FULL_PER_TOUCH_COUNT } else { args.per_class };
    let config = DatasetConfig {
        element_size: args.element_size,
        ..DatasetConfig::uniform_counts(per, args.seed)
    };
    config.validate()?;
    let total = config.base_count();
    let sim = DatasetSimulator::new(&config.geometry, config.element_size)?;
    let data = dataset::generate_with(&config, &sim, |k| progress(k, total))?;
    let split = dataset::split(&data, args.seed)?;
    let manifest = split.save(&args.out)?;
    let mut out = format!("{} base phantoms -> {}\n", total, args.out.display());
    for (name, e) in &manifest.splits {
        out += &format!("{name:>6}: {:6} samples  sha256 {}\n", e.samples, e.sha256);
    }
    Ok(out)
}

// fit

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Linear)]
    pub method: MethodArg,
    /// Dataset directory (linear method).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ELEMENT_SIZE)]
    pub element_size: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn tikhonov_model(geom: &SensorGeometry, element_size: f64, lambda: f64) -> Result<TikhonovSolver> {
    let jr = sensor_raster_jacobian(geom, element_size, Linearization::Homogenized)?;
    Ok(TikhonovSolver::new(&jr, lambda)?)
}

pub fn fit(args: &FitArgs) -> Result<String> {
    let mut w = create(&args.out)?;
    let msg = match args.method {
        MethodArg::Linear => {
            let dir = args.data.as_deref().context("--data is required for the linear method")?;
            let (_, train) = load_split(dir, "train")?;
            let (x, y) = training_matrices(&train.samples);
            let map = fit_linear_map(&train.training_set(&x, &y), args.ridge)?;
            map.write_to(&mut w)?;
            format!("linear map fitted on {} samples", train.samples.len())
        }
        MethodArg::Tikhonov => {
            let geom = load_geometry(args.geometry.as_deref())?;
            tikhonov_model(&geom, args.element_size, args.lambda)?.write_to(&mut w)?;
            format!("tikhonov operator, lambda {}", args.lambda)
        }
    };
    w.flush()?;
    Ok(msg)
}

// reconstruct

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Tikhonov)]
    pub method: MethodArg,
    /// Model container; optional for Tikhonov (built from the geometry).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// JSON: an array of difference frames, or the output of `simulate`.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FramesInput {
    Many(Vec<Vec<f64>>),
    Simulated { delta: Vec<f64> },
}

pub fn load_inverse(path: &Path) -> Result<InverseModel> {
    Ok(InverseModel::read_from(&mut open(path)?)?)
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<Vec<Vec<f64>>> {
    let model = match (&args.model, args.method) {
        (Some(p), _) => load_inverse(p)?,
        (None, MethodArg::Tikhonov) => {
            let geom = load_geometry(args.geometry.as_deref())?;
            InverseModel::Tikhonov(tikhonov_model(&geom, DEFAULT_ELEMENT_SIZE, DEFAULT_LAMBDA)?)
        }
        (None, MethodArg::Linear) => bail!("--model is required for the linear method"),
    };
    match (&model, args.method) {
        (InverseModel::Tikhonov(_), MethodArg::Tikhonov) | (InverseModel::Linear(_), MethodArg::Linear) => {}
        _ => bail!("model file does not hold a {:?} model", args.method),
    }
    if let Some(g) = &args.geometry {
        load_geometry(Some(g))?.hash().ensure(model.geometry_hash())?;
    }
    let text = fs::read_to_string(&args.frames)?;
    let frames = match serde_json::from_str(&text).context("parsing frames")? {
        FramesInput::Many(f) => f,
        FramesInput::Simulated { delta } => vec![delta],
    };
    let images = frames
        .iter()
        .map(|f| Ok(model.reconstruct_delta(f)?.pixels))
        .collect::<Result<Vec<_>>>()?;
    let mut w = create(&args.out)?;
    serde_json::to_writer(&mut w, &images)?;
    w.flush()?;
    Ok(images)
}

// gestures

#[derive(Debug, Args)]
pub struct GenGesturesArgs {
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 2)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SNR_DB)]
    pub snr_db: f64,
    /// Gesture script table (TOML); the bundled scripts otherwise.
    #[arg(long)]
    pub scripts: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GestureManifest {
    pub per_class: usize,
    pub seed: u64,
    pub snr_db: f64,
    pub scripts_version: u32,
    pub geometry_hash: String,
    pub samples: usize,
    pub sha256: String,
}

pub fn gesture_synth(scripts: Option<&Path>, snr_db: f64) -> Result<GestureSynth> {
    let scripts = match scripts {
        Some(p) => GestureScripts::parse(&fs::read_to_string(p)?)?,
        None => GestureScripts::bundled(),
    };
    let geom = SensorGeometry::with_lattice(4.0, 3.0);
    let sim = DatasetSimulator::new(&geom, DEFAULT_ELEMENT_SIZE)?;
    Ok(GestureSynth::new(sim, scripts, snr_db)?)
}

pub fn gen_gestures(args: &GenGesturesArgs, mut progress: impl FnMut(usize, usize)) -> Result<GestureManifest> {
    let synth = gesture_synth(args.scripts.as_deref(), args.snr_db)?;
    let total = args.per_class * gestures::CLASS_COUNT;
    let set = synth.synthesize_set(args.per_class, args.seed, |k| progress(k, total))?;
    let mut bytes = Vec::new();
    write_gesture_set(&mut bytes, &set)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join(GESTURE_FILE), &bytes)?;
    let manifest = GestureManifest {
        per_class: args.per_class,
        seed: args.seed,
        snr_db: args.snr_db,
        scripts_version: synth.scripts.version,
        geometry_hash: synth.sim.geometry.hash().to_string(),
        samples: set.len(),
        sha256: sha256_hex(&bytes),
    };
    fs::write(args.out.join(GESTURE_MANIFEST), toml::to_string(&manifest)?)?;
    Ok(manifest)
}

pub fn load_gestures(dir: &Path) -> Result<Vec<GestureSample>> {
    let bytes = fs::read(dir.join(GESTURE_FILE)).with_context(|| format!("reading gestures in {}", dir.display()))?;
    let manifest: GestureManifest = toml::from_str(&fs::read_to_string(dir.join(GESTURE_MANIFEST))?)?;
    if sha256_hex(&bytes) != manifest.sha256 {
        bail!("{}: checksum mismatch", dir.join(GESTURE_FILE).display());
    }
    Ok(read_gesture_set(&mut bytes.as_slice())?)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Train on a set written by `gen-gestures` instead of synthesizing one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip the sensor-symmetry augmentation of training windows.
    #[arg(long)]
    pub no_augment: bool,
}

pub fn train(args: &TrainArgs, mut progress: impl FnMut(usize, usize)) -> Result<SequenceClassifier> {
    let geom = SensorGeometry::with_lattice(4.0, 3.0);
    let samples = match &args.data {
        Some(dir) => load_gestures(dir)?,
        None => {
            let synth = gesture_synth(None, DEFAULT_SNR_DB)?;
            let total = args.per_class * gestures::CLASS_COUNT;
            synth.synthesize_set(args.per_class, args.seed, |k| progress(k, total))?
        }
    };
    let mut config = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    let perms = if args.no_augment { vec![] } else { symmetry_permutations(&geom)? };
    let model = gestures::train_augmented(&samples, &perms, &config)?;
    let mut w = create(&args.out)?;
    model.write_to(&mut w)?;
    w.flush()?;
    Ok(model)
}

// eval

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gesture classifier or reconstruction model.
    #[arg(long)]
    pub model: PathBuf,
    /// `gen-gestures` output for a classifier, `gen-data` output otherwise.
    #[arg(long)]
    pub test: PathBuf,
    /// Per-sample table (CSV) destination.
    #[arg(long)]
    pub per_sample: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    let mut magic = [0u8; 8];
    open(&args.model)?.read_exact(&mut magic)?;
    if &magic == b"LEITMLP1" {
        let model = SequenceClassifier::read_from(&mut open(&args.model)?)?;
        let samples = load_gestures(&args.test)?;
        let confusion = gestures::evaluate(&model, &samples)?;
        if let Some(p) = &args.per_sample {
            let mut w = create(p)?;
            writeln!(w, "index,seed,label,predicted,confidence")?;
            for (i, s) in samples.iter().enumerate() {
                let (pred, probs) = model.predict(&s.frames)?;
                writeln!(w, "{i},{},{},{},{:.6}", s.seed, s.label, pred, probs[pred.index()])?;
            }
            w.flush()?;
        }
        Ok(format!(
            "accuracy {:.4} over {} samples, min diagonal {:.3}\n{}",
            confusion.accuracy(),
            samples.len(),
            confusion.min_diagonal(),
            confusion.to_table()
        ))
    } else {
        let model = load_inverse(&args.model)?;
        let (_, test) = load_split(&args.test, "test")?;
        model.geometry_hash().ensure(test.header.geometry_hash)?;
        let reports = test
            .samples
            .iter()
            .map(|s| Ok(MetricReport::evaluate(&model.reconstruct_delta(&s.frame_delta)?.pixels, &s.image_f64())?))
            .collect::<Result<Vec<_>>>()?;
        if let Some(p) = &args.per_sample {
            let mut w = create(p)?;
            writeln!(w, "index,phantom,touches,cc,re,psnr_db,ssim")?;
            for (i, (s, r)) in test.samples.iter().zip(&reports).enumerate() {
                let psnr = r.psnr_db.map_or("inf".to_string(), |v| format!("{v:.4}"));
                writeln!(
                    w,
                    "{i},{},{},{:.6},{:.6},{psnr},{:.6}",
                    s.phantom_id(),
                    s.touch_count(),
                    r.cc,
                    r.re,
                    r.ssim
                )?;
            }
            w.flush()?;
        }
        Ok(metric_table(&MetricSummary::from_reports(&reports)))
    }
}

pub fn metric_table(m: &MetricSummary) -> String {
    format!(
        "samples  {}\nCC       {:.4}\nRE       {:.4}\nPSNR dB  {:.4}\nSSIM     {:.4}\n",
        m.count, m.cc, m.re, m.psnr_db, m.ssim
    )
}

/// Label ordering used by every confusion table.
pub fn label_order() -> String {
    GestureClass::ALL
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i:2} {c}\n"))
        .collect()
}
