//! Scripted touch gestures rendered as 15-frame difference-voltage sequences,
//! and a small sequence classifier trained on them.

mod classifier;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSimulator;
use crate::error::{Error, Result};
use crate::geometry::{Point2, SensorGeometry, Symmetry};
use crate::phantom::{TouchMode, TouchPhantom, TouchPoint, MAX_TOUCHES};
use crate::rng;

pub use classifier::{
    evaluate, train, train_augmented, Confusion, EpochLog, SequenceClassifier, TrainConfig, HIDDEN_WIDTH,
};

pub const WINDOW_FRAMES: usize = 15;
pub const CLASS_COUNT: usize = 12;
pub const DEFAULT_SNR_DB: f64 = 40.0;
pub const MIN_PER_CLASS: usize = 40;

/// Versioned gesture definitions compiled into the library.
pub const DEFAULT_SCRIPTS: &str = include_str!("scripts.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GestureClass {
    NoContact,
    FingerPress,
    FourFingerScratch,
    FistPress,
    FingerDoubleTap,
    PalmPat,
    SwipeUp,
    SwipeDown,
    SwipeLeft,
    SwipeRight,
    ZoomIn,
    ZoomOut,
}

impl GestureClass {
    pub const ALL: [GestureClass; CLASS_COUNT] = [
        Self::NoContact,
        Self::FingerPress,
        Self::FourFingerScratch,
        Self::FistPress,
        Self::FingerDoubleTap,
        Self::PalmPat,
        Self::SwipeUp,
        Self::SwipeDown,
        Self::SwipeLeft,
        Self::SwipeRight,
        Self::ZoomIn,
        Self::ZoomOut,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::NoContact => "no-contact",
            Self::FingerPress => "finger-press",
            Self::FourFingerScratch => "four-finger-scratch",
            Self::FistPress => "fist-press",
            Self::FingerDoubleTap => "finger-double-tap",
            Self::PalmPat => "palm-pat",
            Self::SwipeUp => "swipe-up",
            Self::SwipeDown => "swipe-down",
            Self::SwipeLeft => "swipe-left",
            Self::SwipeRight => "swipe-right",
            Self::ZoomIn => "zoom-in",
            Self::ZoomOut => "zoom-out",
        }
    }

    /// The class a gesture becomes when the sensor is mirrored by `sym`.
    pub fn transformed(self, sym: Symmetry) -> Self {
        use GestureClass::*;
        let dir = match self {
            SwipeRight => (1, 0),
            SwipeLeft => (-1, 0),
            SwipeUp => (0, 1),
            SwipeDown => (0, -1),
            other => return other,
        };
        let p = sym.apply(Point2::new(dir.0 as f64, dir.1 as f64), 0.0);
        match (p.x.round() as i32, p.y.round() as i32) {
            (1, 0) => SwipeRight,
            (-1, 0) => SwipeLeft,
            (0, 1) => SwipeUp,
            _ => SwipeDown,
        }
    }
}

impl fmt::Display for GestureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GestureClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown gesture `{s}`")))
    }
}

/// One scripted gesture class. See the header of the bundled script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GestureScript {
    pub label: GestureClass,
    pub discs: usize,
    #[serde(default)]
    pub radius: [f64; 2],
    #[serde(default)]
    pub depth: [f64; 2],
    #[serde(default)]
    pub contact: Vec<[usize; 2]>,
    #[serde(default)]
    pub spacing: [f64; 2],
    pub spacing_end: Option<[f64; 2]>,
    #[serde(default)]
    pub axis_angle: [f64; 2],
    #[serde(default)]
    pub direction_angle: [f64; 2],
    #[serde(default)]
    pub travel: [f64; 2],
    #[serde(default)]
    pub cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScripts {
    pub version: u32,
    pub frames: usize,
    pub gesture: Vec<GestureScript>,
}

/// Edge clearance kept between discs and the sensor boundary (mm).
const EDGE_MARGIN: f64 = 1.0;

fn uniform<R: Rng + ?Sized>(range: [f64; 2], rng: &mut R) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

impl GestureScripts {
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_SCRIPTS).expect("bundled gesture scripts are valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Format {
            what: "gesture scripts",
            detail: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames != WINDOW_FRAMES {
            return Err(Error::Config(format!(
                "scripts define {} frames, expected {WINDOW_FRAMES}",
                self.frames
            )));
        }
        for c in GestureClass::ALL {
            let n = self.gesture.iter().filter(|g| g.label == c).count();
            if n != 1 {
                return Err(Error::Config(format!("{n} scripts for `{c}`")));
            }
        }
        for g in &self.gesture {
            let bad = |m: &str| Err(Error::Config(format!("`{}`: {m}", g.label)));
            if g.discs > MAX_TOUCHES {
                return bad("too many discs");
            }
            if g.discs > 0 {
                if g.contact.is_empty() {
                    return bad("discs without contact frames");
                }
                if g.contact.iter().any(|w| w[0] > w[1] || w[1] >= self.frames) {
                    return bad("contact window outside the sequence");
                }
                if !(g.radius[0] > 0.0 && g.radius[0] <= g.radius[1]) {
                    return bad("radius range");
                }
                if !(g.depth[0] > 0.0 && g.depth[0] <= g.depth[1]) {
                    return bad("depth range");
                }
            }
        }
        Ok(())
    }

    pub fn script(&self, class: GestureClass) -> &GestureScript {
        self.gesture
            .iter()
            .find(|g| g.label == class)
            .expect("validated scripts cover every class")
    }
}

impl GestureScript {
    fn contact_span(&self) -> (usize, usize) {
        let a = self.contact.iter().map(|w| w[0]).min().unwrap_or(0);
        let b = self.contact.iter().map(|w| w[1]).max().unwrap_or(0);
        (a, b)
    }

    fn in_contact(&self, frame: usize) -> bool {
        self.contact.iter().any(|w| (w[0]..=w[1]).contains(&frame))
    }

    /// Draws one instance: the phantom shown in each of the frames.
    pub fn instance<R: Rng + ?Sized>(
        &self,
        frames: usize,
        geom: &SensorGeometry,
        rng: &mut R,
    ) -> Result<Vec<TouchPhantom>> {
        if self.discs == 0 {
            return Ok(vec![TouchPhantom::empty(TouchMode::Depth); frames]);
        }
        let radius = uniform(self.radius, rng);
        let depth = uniform(self.depth, rng).min(0.95 * geom.layer_thickness);
        let spacing0 = uniform(self.spacing, rng);
        let spacing1 = self.spacing_end.map_or(spacing0, |r| uniform(r, rng));
        let axis = uniform(self.axis_angle, rng).to_radians();
        let dir = uniform(self.direction_angle, rng).to_radians();
        let travel = uniform(self.travel, rng);
        let (axis, dir) = ((axis.cos(), axis.sin()), (dir.cos(), dir.sin()));
        let (a, b) = self.contact_span();
        let n = self.discs;
        let offsets = |f: usize| -> Vec<(f64, f64)> {
            let p = if b > a {
                (f.clamp(a, b) - a) as f64 / (b - a) as f64
            } else {
                0.5
            };
            let s = spacing0 + (spacing1 - spacing0) * p;
            let d = if self.cycles == 0.0 {
                travel * (p - 0.5)
            } else {
                0.5 * travel * (std::f64::consts::TAU * self.cycles * p).sin()
            };
            (0..n)
                .map(|k| {
                    let m = k as f64 - 0.5 * (n as f64 - 1.0);
                    (axis.0 * m * s + dir.0 * d, axis.1 * m * s + dir.1 * d)
                })
                .collect()
        };
        let all: Vec<(f64, f64)> = (a..=b).flat_map(&offsets).collect();
        let reach = radius + EDGE_MARGIN;
        let l = geom.side_length;
        let lo_x = reach - all.iter().map(|o| o.0).fold(f64::INFINITY, f64::min);
        let hi_x = l - reach - all.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = reach - all.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
        let hi_y = l - reach - all.iter().map(|o| o.1).fold(f64::NEG_INFINITY, f64::max);
        if lo_x > hi_x || lo_y > hi_y {
            return Err(Error::Config(format!("`{}` does not fit on the sensor", self.label)));
        }
        let anchor = (uniform([lo_x, hi_x], rng), uniform([lo_y, hi_y], rng));
        Ok((0..frames)
            .map(|f| {
                if !self.in_contact(f) {
                    return TouchPhantom::empty(TouchMode::Depth);
                }
                let touches = offsets(f)
                    .into_iter()
                    .map(|o| TouchPoint::new(anchor.0 + o.0, anchor.1 + o.1, radius, depth))
                    .collect();
                TouchPhantom::new(TouchMode::Depth, 0, touches)
            })
            .collect())
    }
}

/// One 15 x 104 difference-voltage sequence, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSample {
    pub frames: Vec<f64>,
    pub label: GestureClass,
    pub seed: u64,
}

impl GestureSample {
    pub fn channels(&self) -> usize {
        self.frames.len() / WINDOW_FRAMES
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let c = self.channels();
        &self.frames[k * c..(k + 1) * c]
    }

    /// Applies a channel map to every frame.
    pub fn map_frames(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let frames = (0..WINDOW_FRAMES).flat_map(|k| f(self.frame(k))).collect();
        Self {
            frames,
            ..self.clone()
        }
    }
}

const SET_MAGIC: &[u8; 8] = b"LEITGST1";

/// Writes samples as: magic, channels and count (u32), then per sample the
/// label byte, seed (u64) and frames (f64), all little-endian.
pub fn write_gesture_set<W: Write>(w: &mut W, samples: &[GestureSample]) -> Result<()> {
    let channels = samples.first().map_or(0, GestureSample::channels);
    w.write_all(SET_MAGIC)?;
    w.write_all(&(channels as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        if s.frames.len() != channels * WINDOW_FRAMES {
            return Err(Error::Shape("gesture samples differ in channel count".into()));
        }
        w.write_all(&[s.label.index() as u8])?;
        w.write_all(&s.seed.to_le_bytes())?;
        for v in &s.frames {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_gesture_set<R: Read>(r: &mut R) -> Result<Vec<GestureSample>> {
    let bad = |detail: String| Error::Format {
        what: "gesture set",
        detail,
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SET_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let channels = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(count);
    let mut b8 = [0u8; 8];
    for _ in 0..count {
        let mut l = [0u8; 1];
        r.read_exact(&mut l)?;
        let label = GestureClass::from_index(l[0] as usize).ok_or_else(|| bad(format!("label {}", l[0])))?;
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut frames = Vec::with_capacity(channels * WINDOW_FRAMES);
        for _ in 0..channels * WINDOW_FRAMES {
            r.read_exact(&mut b8)?;
            frames.push(f64::from_le_bytes(b8));
        }
        out.push(GestureSample { frames, label, seed });
    }
    Ok(out)
}

/// Per-channel sensor noise fixed by a calibration press (r = 7 mm,
/// depth 2 mm, centred): its dV RMS sits `snr_db` above the noise.
pub fn sensor_noise_std(sim: &DatasetSimulator, snr_db: f64) -> Result<f64> {
    if snr_db.is_infinite() {
        return Ok(0.0);
    }
    let c = 0.5 * sim.geometry.side_length;
    let depth = 2.0f64.min(0.5 * sim.geometry.layer_thickness);
    let calib = TouchPhantom::new(TouchMode::Depth, 0, vec![TouchPoint::new(c, c, 7.0, depth)]);
    let dv = sim.frame_delta(&calib)?;
    let rms = (dv.iter().map(|v| v * v).sum::<f64>() / dv.len() as f64).sqrt();
    Ok(rms * 10f64.powf(-snr_db / 20.0))
}

/// Renders gesture scripts through the forward model with sensor noise.
pub struct GestureSynth {
    pub scripts: GestureScripts,
    pub sim: DatasetSimulator,
    pub snr_db: f64,
    /// Noise standard deviation per channel (V).
    pub noise_std: f64,
}

impl GestureSynth {
    pub fn new(sim: DatasetSimulator, scripts: GestureScripts, snr_db: f64) -> Result<Self> {
        let noise_std = sensor_noise_std(&sim, snr_db)?;
        Ok(Self {
            scripts,
            sim,
            snr_db,
            noise_std,
        })
    }

    pub fn channels(&self) -> usize {
        self.sim.reference.len()
    }

    /// One gesture instance; all randomness comes from `seed`.
    pub fn synthesize(&self, class: GestureClass, seed: u64) -> Result<GestureSample> {
        let mut rng = rng::seeded(seed);
        let phantoms = self
            .scripts
            .script(class)
            .instance(WINDOW_FRAMES, &self.sim.geometry, &mut rng)?;
        let channels = self.channels();
        let mut frames = Vec::with_capacity(WINDOW_FRAMES * channels);
        let mut last: Option<(&TouchPhantom, Vec<f64>)> = None;
        for ph in &phantoms {
            let dv = match &last {
                _ if ph.is_empty() => vec![0.0; channels],
                Some((prev, dv)) if *prev == ph => dv.clone(),
                _ => self.sim.frame_delta(ph)?,
            };
            frames.extend_from_slice(&dv);
            last = Some((ph, dv));
        }
        if self.noise_std > 0.0 {
            let normal = Normal::new(0.0, self.noise_std).expect("finite std");
            for v in &mut frames {
                *v += normal.sample(&mut rng);
            }
        }
        Ok(GestureSample {
            frames,
            label: class,
            seed,
        })
    }

    /// `per_class` instances of every class, interleaved so that any prefix
    /// of whole rounds is balanced.
    pub fn synthesize_set(
        &self,
        per_class: usize,
        master_seed: u64,
        mut progress: impl FnMut(usize),
    ) -> Result<Vec<GestureSample>> {
        let mut out = Vec::with_capacity(per_class * CLASS_COUNT);
        for k in 0..per_class {
            for class in GestureClass::ALL {
                let index = (k * CLASS_COUNT + class.index()) as u64;
                out.push(self.synthesize(class, rng::derive_seed(master_seed, index))?);
                progress(out.len());
            }
        }
        Ok(out)
    }
}
