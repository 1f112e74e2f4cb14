//! Reconstruction dataset: simulated difference frames paired with ground
//! truth images, dihedral augmentation with per-variant noise, phantom-level
//! splitting and a compact binary storage format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{ElectrodePair, ForwardModel, MeasurementFrame, Protocol};
use crate::geometry::{
    baseline_field, generate_mesh, ConductivityField, GeometryHash, ImageGrid, Mesh, Rasterizer,
    SensorGeometry, Symmetry, DEFAULT_ELEMENT_SIZE, IMAGE_PIXELS,
};
use crate::inverse::TrainingSet;
use crate::phantom::{ground_truth_image, random_phantom, TouchMode, TouchPhantom, MAX_TOUCHES};
use crate::rng;

/// Noise levels assigned to the seven non-identity variants.
pub const SNR_LEVELS_DB: [u32; 7] = [35, 40, 45, 50, 55, 60, 65];
/// Tag code for a noise-free sample.
pub const CLEAN_CODE: u8 = 7;
pub const DESK_PER_TOUCH_COUNT: usize = 200;
pub const FULL_PER_TOUCH_COUNT: usize = 10_000;
pub const MIN_PER_TOUCH_COUNT: usize = 10;
pub const SPLIT_RATIO: [usize; 3] = [7, 2, 1];

const BLOB_MAGIC: &[u8; 8] = b"LEITDAT1";
const MANIFEST_NAME: &str = "manifest.toml";

/// Which symmetry produced a sample and what noise it carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentationTag {
    pub symmetry: Symmetry,
    pub snr_db: Option<u32>,
}

impl AugmentationTag {
    pub const CLEAN: AugmentationTag = AugmentationTag {
        symmetry: Symmetry::IDENTITY,
        snr_db: None,
    };

    /// `symmetry * 8 + snr code`, codes 0..6 for 35..65 dB and 7 for clean.
    pub fn to_byte(self) -> u8 {
        let code = match self.snr_db {
            None => CLEAN_CODE,
            Some(s) => SNR_LEVELS_DB
                .iter()
                .position(|&l| l == s)
                .expect("tags only hold listed SNR levels") as u8,
        };
        self.symmetry.id() * 8 + code
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        let symmetry = Symmetry::new(b / 8).ok_or_else(|| Error::Format {
            what: "augmentation tag",
            detail: format!("byte {b}"),
        })?;
        let code = b % 8;
        let snr_db = (code != CLEAN_CODE).then(|| SNR_LEVELS_DB[code as usize]);
        Ok(Self { symmetry, snr_db })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub frame_delta: Vec<f64>,
    pub image: Vec<f32>,
    pub phantom: TouchPhantom,
    pub tag: AugmentationTag,
}

impl Sample {
    pub fn touch_count(&self) -> usize {
        self.phantom.touches.len()
    }

    /// Phantoms carry their derived seed, which doubles as a unique id.
    pub fn phantom_id(&self) -> u64 {
        self.phantom.seed
    }

    pub fn image_f64(&self) -> Vec<f64> {
        self.image.iter().map(|&v| v as f64).collect()
    }

    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&[self.tag.to_byte()])?;
        for v in &self.frame_delta {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.image {
            w.write_all(&v.to_le_bytes())?;
        }
        let record = self.phantom.to_record();
        w.write_all(&(record.len() as u32).to_le_bytes())?;
        w.write_all(record.as_bytes())?;
        Ok(())
    }

    fn read_from<R: Read>(r: &mut R, channels: usize) -> Result<Self> {
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let tag = AugmentationTag::from_byte(b1[0])?;
        let mut b8 = [0u8; 8];
        let mut frame_delta = Vec::with_capacity(channels);
        for _ in 0..channels {
            r.read_exact(&mut b8)?;
            frame_delta.push(f64::from_le_bytes(b8));
        }
        let mut b4 = [0u8; 4];
        let mut image = Vec::with_capacity(IMAGE_PIXELS);
        for _ in 0..IMAGE_PIXELS {
            r.read_exact(&mut b4)?;
            image.push(f32::from_le_bytes(b4));
        }
        r.read_exact(&mut b4)?;
        let len = u32::from_le_bytes(b4) as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text)?;
        let text = String::from_utf8(text).map_err(|e| Error::Format {
            what: "phantom record",
            detail: e.to_string(),
        })?;
        Ok(Self {
            frame_delta,
            image,
            phantom: TouchPhantom::from_record(&text)?,
            tag,
        })
    }
}

/// Electrode relabeling and image transform induced by one square symmetry.
///
/// `apply_frame` maps the frame of a phantom to the frame of the transformed
/// phantom: `out[j] = sign[j] * in[source[j]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryPermutation {
    pub symmetry: Symmetry,
    pub electrode_map: Vec<usize>,
    pub source: Vec<usize>,
    pub sign: Vec<f64>,
    pub pixel_source: Vec<usize>,
}

impl SymmetryPermutation {
    pub fn apply_frame(&self, values: &[f64]) -> Vec<f64> {
        self.source
            .iter()
            .zip(&self.sign)
            .map(|(&s, &k)| k * values[s])
            .collect()
    }

    pub fn apply_image<T: Copy>(&self, pixels: &[T]) -> Vec<T> {
        self.pixel_source.iter().map(|&s| pixels[s]).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.source.iter().enumerate().all(|(i, &s)| i == s)
            && self.sign.iter().all(|&k| k == 1.0)
            && self.pixel_source.iter().enumerate().all(|(i, &s)| i == s)
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &SymmetryPermutation) -> SymmetryPermutation {
        let source = self.source.iter().map(|&s| first.source[s]).collect();
        let sign = self
            .source
            .iter()
            .zip(&self.sign)
            .map(|(&s, &k)| k * first.sign[s])
            .collect();
        let pixel_source = self
            .pixel_source
            .iter()
            .map(|&s| first.pixel_source[s])
            .collect();
        let electrode_map = first
            .electrode_map
            .iter()
            .map(|&e| self.electrode_map[e])
            .collect();
        SymmetryPermutation {
            symmetry: self.symmetry,
            electrode_map,
            source,
            sign,
            pixel_source,
        }
    }
}

/// All eight permutations for the adjacent protocol, identity first.
pub fn symmetry_permutations(geom: &SensorGeometry) -> Result<Vec<SymmetryPermutation>> {
    let protocol = Protocol::adjacent(geom.electrode_count);
    Symmetry::all()
        .map(|s| symmetry_permutation(geom, &protocol, s))
        .collect()
}

/// Builds the channel permutation for `sym` from the electrode geometry.
pub fn symmetry_permutation(
    geom: &SensorGeometry,
    protocol: &Protocol,
    sym: Symmetry,
) -> Result<SymmetryPermutation> {
    let n = geom.electrode_count;
    if protocol.electrode_count() != n {
        return Err(Error::Shape(format!(
            "protocol has {} electrodes, geometry {n}",
            protocol.electrode_count()
        )));
    }
    let l = geom.side_length;
    let tol = 1e-9 * l;
    let mut electrode_map = Vec::with_capacity(n);
    for e in 0..n {
        let p = sym.apply(geom.electrode_center(e), l);
        let image = (0..n)
            .find(|&f| geom.electrode_center(f).distance(p) <= tol)
            .ok_or_else(|| Error::AsymmetricLayout(sym.to_string()))?;
        let (a0, a1) = geom.electrode_arc_span(e);
        let (b0, b1) = geom.electrode_arc_span(image);
        if ((a1 - a0) - (b1 - b0)).abs() > tol {
            return Err(Error::AsymmetricLayout(sym.to_string()));
        }
        electrode_map.push(image);
    }

    // Orientation of a mapped pair relative to the protocol's listed pair.
    let map_pair = |p: ElectrodePair| ElectrodePair::new(electrode_map[p.pos], electrode_map[p.neg]);
    let index = protocol.index_map();
    let lookup = |d: ElectrodePair, m: ElectrodePair| -> Option<(usize, f64)> {
        for (dd, sd) in [(d, 1.0), (d.reversed(), -1.0)] {
            for (mm, sm) in [(m, 1.0), (m.reversed(), -1.0)] {
                // Reciprocity lets a channel stand in for its swapped twin.
                if let Some(&j) = index.get(&(dd, mm)).or_else(|| index.get(&(mm, dd))) {
                    return Some((j, sd * sm));
                }
            }
        }
        None
    };
    let len = protocol.len();
    let mut source = vec![usize::MAX; len];
    let mut sign = vec![0.0; len];
    for (i, c) in protocol.channels().iter().enumerate() {
        let (j, s) = lookup(map_pair(c.drive), map_pair(c.measure))
            .ok_or_else(|| Error::AsymmetricLayout(format!("{sym}: channel {i} has no image")))?;
        if source[j] != usize::MAX {
            return Err(Error::AsymmetricLayout(format!(
                "{sym}: channels {} and {i} collide",
                source[j]
            )));
        }
        source[j] = i;
        sign[j] = s;
    }
    Ok(SymmetryPermutation {
        symmetry: sym,
        electrode_map,
        source,
        sign,
        pixel_source: ImageGrid::new(l).symmetry_source(sym),
    })
}

/// Frame-delta noise: zero-mean Gaussian with power set so that
/// `10 log10(signal power / noise power) = snr_db`. An infinite SNR is a no-op.
pub fn add_noise<R: Rng + ?Sized>(sample: &Sample, snr_db: f64, rng: &mut R) -> Sample {
    let mut out = sample.clone();
    if snr_db.is_infinite() && snr_db > 0.0 {
        return out;
    }
    let power = sample.frame_delta.iter().map(|v| v * v).sum::<f64>()
        / sample.frame_delta.len().max(1) as f64;
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    if std > 0.0 {
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut out.frame_delta {
            *v += normal.sample(rng);
        }
    }
    out
}

/// The eight symmetry variants of a clean base sample. The identity stays
/// clean; the seven others get the seven SNR levels in shuffled order.
pub fn augment<R: Rng + ?Sized>(
    sample: &Sample,
    perms: &[SymmetryPermutation],
    side_length: f64,
    rng: &mut R,
) -> Vec<Sample> {
    let mut levels = SNR_LEVELS_DB;
    levels.shuffle(rng);
    let mut out = Vec::with_capacity(8);
    for perm in perms {
        let sym = perm.symmetry;
        let variant = Sample {
            frame_delta: perm.apply_frame(&sample.frame_delta),
            image: perm.apply_image(&sample.image),
            phantom: sample.phantom.transformed(sym, side_length),
            tag: AugmentationTag {
                symmetry: sym,
                snr_db: None,
            },
        };
        if sym == Symmetry::IDENTITY {
            out.push(variant);
        } else {
            let snr = levels[sym.id() as usize - 1];
            let mut noisy = add_noise(&variant, snr as f64, rng);
            noisy.tag.snr_db = Some(snr);
            out.push(noisy);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Base phantoms for touch counts 1..=5.
    pub per_touch_count: [usize; MAX_TOUCHES],
    pub master_seed: u64,
    pub element_size: f64,
    pub geometry: SensorGeometry,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            per_touch_count: [DESK_PER_TOUCH_COUNT; MAX_TOUCHES],
            master_seed: 2025,
            element_size: DEFAULT_ELEMENT_SIZE,
            geometry: SensorGeometry::with_lattice(4.0, 3.0),
        }
    }
}

impl DatasetConfig {
    pub fn uniform_counts(per_touch_count: usize, master_seed: u64) -> Self {
        Self {
            per_touch_count: [per_touch_count; MAX_TOUCHES],
            master_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if let Some(&c) = self.per_touch_count.iter().find(|&&c| c < MIN_PER_TOUCH_COUNT) {
            return Err(Error::Config(format!(
                "each touch count needs at least {MIN_PER_TOUCH_COUNT} phantoms, got {c}"
            )));
        }
        if !(self.element_size > 0.0) {
            return Err(Error::Config("element_size must be positive".into()));
        }
        Ok(())
    }

    pub fn base_count(&self) -> usize {
        self.per_touch_count.iter().sum()
    }
}

/// Simulation context shared by every sample of a dataset.
pub struct DatasetSimulator {
    pub geometry: SensorGeometry,
    pub mesh: Arc<Mesh>,
    pub model: ForwardModel,
    pub baseline: ConductivityField,
    pub rasterizer: Rasterizer,
    pub reference: MeasurementFrame,
}

impl DatasetSimulator {
    pub fn new(geometry: &SensorGeometry, element_size: f64) -> Result<Self> {
        let mesh = Arc::new(generate_mesh(geometry, element_size)?);
        let baseline = baseline_field(geometry, &mesh)?;
        let model = ForwardModel::new(mesh.clone(), Protocol::adjacent(geometry.electrode_count))?;
        let reference = model.simulate_frame(&baseline)?;
        Ok(Self {
            geometry: geometry.clone(),
            rasterizer: Rasterizer::new(&mesh),
            mesh,
            model,
            baseline,
            reference,
        })
    }

    /// Touched minus reference frame.
    pub fn frame_delta(&self, phantom: &TouchPhantom) -> Result<Vec<f64>> {
        let touched = crate::phantom::apply_phantom(&self.baseline, &self.mesh, &self.geometry, phantom)?;
        self.model.simulate_frame(&touched)?.delta(&self.reference)
    }

    /// Clean base sample for one phantom.
    pub fn sample(&self, phantom: &TouchPhantom) -> Result<Sample> {
        let image = ground_truth_image(phantom, &self.baseline, &self.mesh, &self.geometry, &self.rasterizer)?;
        Ok(Sample {
            frame_delta: self.frame_delta(phantom)?,
            image: image.pixels.iter().map(|&v| v as f32).collect(),
            phantom: phantom.clone(),
            tag: AugmentationTag::CLEAN,
        })
    }
}

/// Clean base samples, grouped by touch count in increasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
    pub samples: Vec<Sample>,
}

/// Seed of base phantom `index` (counted over all touch counts).
pub fn phantom_seed(master_seed: u64, index: usize) -> u64 {
    rng::derive_seed(master_seed, index as u64)
}

pub fn generate(config: &DatasetConfig) -> Result<Dataset> {
    generate_with(config, &DatasetSimulator::new(&config.geometry, config.element_size)?, |_| {})
}

/// As [`generate`] with a prepared simulator and a progress callback that
/// receives the number of finished phantoms.
pub fn generate_with(
    config: &DatasetConfig,
    sim: &DatasetSimulator,
    mut progress: impl FnMut(usize),
) -> Result<Dataset> {
    config.validate()?;
    config.geometry.hash().ensure(sim.mesh.geometry_hash())?;
    let mut samples = Vec::with_capacity(config.base_count());
    let mut index = 0;
    for (k, &count) in config.per_touch_count.iter().enumerate() {
        for _ in 0..count {
            let seed = phantom_seed(config.master_seed, index);
            let phantom = random_phantom(k + 1, TouchMode::Contrast, &config.geometry, seed)?;
            samples.push(sim.sample(&phantom)?);
            index += 1;
            progress(index);
        }
    }
    Ok(Dataset {
        config: config.clone(),
        geometry_hash: config.geometry.hash(),
        protocol_version: sim.model.protocol().version(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
    pub config: DatasetConfig,
}

/// Sizes of a 7:2:1 split of `n` items.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let total: usize = SPLIT_RATIO.iter().sum();
    let train = (n * SPLIT_RATIO[0] + total / 2) / total;
    let val = ((n * SPLIT_RATIO[1] + total / 2) / total).min(n - train);
    [train, val, n - train - val]
}

/// Splits base phantoms 7:2:1 within each touch count, then augments the
/// training part eight-fold. Validation and test samples stay clean.
pub fn split(dataset: &Dataset, seed: u64) -> Result<SplitDataset> {
    if dataset.samples.len() < MIN_PER_TOUCH_COUNT {
        return Err(Error::InsufficientData {
            needed: MIN_PER_TOUCH_COUNT,
            got: dataset.samples.len(),
        });
    }
    let geom = &dataset.config.geometry;
    let perms = symmetry_permutations(geom)?;
    let mut groups: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
    for s in &dataset.samples {
        groups.entry(s.touch_count()).or_default().push(s);
    }
    let mut shuffle = rng::stream(seed, 0);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for group in groups.values_mut() {
        group.shuffle(&mut shuffle);
        let [a, b, _] = split_sizes(group.len());
        for (i, s) in group.iter().enumerate() {
            if i < a {
                let mut noise = rng::stream(seed ^ s.phantom_id(), 1);
                train.extend(augment(s, &perms, geom.side_length, &mut noise));
            } else if i < a + b {
                val.push((*s).clone());
            } else {
                test.push((*s).clone());
            }
        }
    }
    Ok(SplitDataset {
        train,
        val,
        test,
        seed,
        geometry_hash: dataset.geometry_hash,
        protocol_version: dataset.protocol_version,
        config: dataset.config.clone(),
    })
}

/// Header of a split blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlobHeader {
    pub geometry_hash: GeometryHash,
    pub protocol_version: u32,
    pub channels: u32,
    pub count: u64,
}

pub fn write_samples<W: Write>(w: &mut W, header: BlobHeader, samples: &[Sample]) -> Result<()> {
    if header.count != samples.len() as u64 {
        return Err(Error::Shape(format!(
            "header says {} samples, got {}",
            header.count,
            samples.len()
        )));
    }
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&header.geometry_hash.0.to_le_bytes())?;
    w.write_all(&header.protocol_version.to_le_bytes())?;
    w.write_all(&header.channels.to_le_bytes())?;
    w.write_all(&header.count.to_le_bytes())?;
    for s in samples {
        if s.frame_delta.len() != header.channels as usize || s.image.len() != IMAGE_PIXELS {
            return Err(Error::Shape("sample does not match blob shape".into()));
        }
        s.write_to(w)?;
    }
    Ok(())
}

pub fn read_samples<R: Read>(r: &mut R) -> Result<(BlobHeader, Vec<Sample>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BLOB_MAGIC {
        return Err(Error::Format {
            what: "dataset blob",
            detail: "bad magic".into(),
        });
    }
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8)?;
    let geometry_hash = GeometryHash(u64::from_le_bytes(b8));
    r.read_exact(&mut b4)?;
    let protocol_version = u32::from_le_bytes(b4);
    r.read_exact(&mut b4)?;
    let channels = u32::from_le_bytes(b4);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8);
    let header = BlobHeader {
        geometry_hash,
        protocol_version,
        channels,
        count,
    };
    let mut samples = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        samples.push(Sample::read_from(r, channels as usize)?);
    }
    Ok((header, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub file: String,
    pub samples: usize,
    pub base_phantoms: usize,
    /// Base phantoms with 1..=5 touches.
    pub by_touch_count: [usize; MAX_TOUCHES],
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub split_seed: u64,
    pub split_ratio: [usize; 3],
    pub geometry_hash: String,
    pub protocol_version: u32,
    pub channels: usize,
    pub element_size: f64,
    pub geometry: SensorGeometry,
    pub splits: BTreeMap<String, SplitEntry>,
}

impl DatasetManifest {
    pub fn geometry_hash(&self) -> Result<GeometryHash> {
        u64::from_str_radix(&self.geometry_hash, 16)
            .map(GeometryHash)
            .map_err(|e| Error::Format {
                what: "manifest",
                detail: format!("geometry hash: {e}"),
            })
    }
}

fn split_entry(name: &str, samples: &[Sample], bytes: &[u8]) -> SplitEntry {
    let mut by_touch_count = [0; MAX_TOUCHES];
    let mut ids: HashMap<u64, usize> = HashMap::new();
    for s in samples {
        if ids.insert(s.phantom_id(), s.touch_count()).is_none() {
            by_touch_count[s.touch_count() - 1] += 1;
        }
    }
    SplitEntry {
        file: format!("{name}.bin"),
        samples: samples.len(),
        base_phantoms: ids.len(),
        by_touch_count,
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

impl SplitDataset {
    pub fn parts(&self) -> [(&'static str, &[Sample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    fn header(&self, count: usize) -> BlobHeader {
        BlobHeader {
            geometry_hash: self.geometry_hash,
            protocol_version: self.protocol_version,
            channels: self.train.first().or(self.val.first()).map_or(0, |s| s.frame_delta.len()) as u32,
            count: count as u64,
        }
    }

    pub fn encode(&self, samples: &[Sample]) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_samples(&mut buf, self.header(samples.len()), samples)?;
        Ok(buf)
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        let mut splits = BTreeMap::new();
        for (name, samples) in self.parts() {
            splits.insert(name.to_string(), split_entry(name, samples, &self.encode(samples)?));
        }
        Ok(self.manifest_with(splits))
    }

    fn manifest_with(&self, splits: BTreeMap<String, SplitEntry>) -> DatasetManifest {
        DatasetManifest {
            format_version: 1,
            master_seed: self.config.master_seed,
            split_seed: self.seed,
            split_ratio: SPLIT_RATIO,
            geometry_hash: format!("{:016x}", self.geometry_hash.0),
            protocol_version: self.protocol_version,
            channels: self.header(0).channels as usize,
            element_size: self.config.element_size,
            geometry: self.config.geometry.clone(),
            splits,
        }
    }

    /// Writes `train.bin`, `val.bin`, `test.bin` and `manifest.toml`.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        fs::create_dir_all(dir)?;
        let mut splits = BTreeMap::new();
        for (name, samples) in self.parts() {
            let bytes = self.encode(samples)?;
            let entry = split_entry(name, samples, &bytes);
            let mut w = BufWriter::new(fs::File::create(dir.join(&entry.file))?);
            w.write_all(&bytes)?;
            w.flush()?;
            splits.insert(name.to_string(), entry);
        }
        let manifest = self.manifest_with(splits);
        let text = toml::to_string(&manifest).map_err(|e| Error::Format {
            what: "manifest",
            detail: e.to_string(),
        })?;
        fs::write(dir.join(MANIFEST_NAME), text)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        what: "manifest",
        detail: e.to_string(),
    })
}

/// A split read back from disk, checked against the manifest.
pub struct LoadedSplit {
    pub samples: Vec<Sample>,
    pub header: BlobHeader,
    pub sha256: [u8; 32],
}

pub fn load_split(dir: &Path, name: &str) -> Result<(DatasetManifest, LoadedSplit)> {
    let manifest = read_manifest(dir)?;
    let entry = manifest.splits.get(name).ok_or_else(|| Error::Format {
        what: "manifest",
        detail: format!("no split `{name}`"),
    })?;
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(dir.join(&entry.file))?).read_to_end(&mut bytes)?;
    let digest: [u8; 32] = Sha256::digest(&bytes).into();
    if hex::encode(digest) != entry.sha256 {
        return Err(Error::Format {
            what: "dataset blob",
            detail: format!("{} checksum does not match the manifest", entry.file),
        });
    }
    let (header, samples) = read_samples(&mut bytes.as_slice())?;
    manifest.geometry_hash()?.ensure(header.geometry_hash)?;
    Ok((
        manifest,
        LoadedSplit {
            samples,
            header,
            sha256: digest,
        },
    ))
}

/// Input and target matrices (samples x channels, samples x pixels).
pub fn training_matrices(samples: &[Sample]) -> (DMatrix<f64>, DMatrix<f64>) {
    let channels = samples.first().map_or(0, |s| s.frame_delta.len());
    let x = DMatrix::from_fn(samples.len(), channels, |i, j| samples[i].frame_delta[j]);
    let y = DMatrix::from_fn(samples.len(), IMAGE_PIXELS, |i, j| samples[i].image[j] as f64);
    (x, y)
}

impl LoadedSplit {
    pub fn training_set<'a>(
        &self,
        inputs: &'a DMatrix<f64>,
        targets: &'a DMatrix<f64>,
    ) -> TrainingSet<'a> {
        TrainingSet {
            inputs,
            targets,
            geometry_hash: self.header.geometry_hash,
            protocol_version: self.header.protocol_version,
            dataset_hash: self.sha256,
        }
    }
}
