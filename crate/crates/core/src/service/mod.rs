//! Real-time session engine: touch events mutate the session, ticks sample
//! it through the forward model, reconstruct, classify the last 15 frames and
//! map the result to an HMI action.

mod rules;
mod stream;

use std::collections::{BTreeMap, VecDeque};

use base64::Engine as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSimulator;
use crate::error::{Error, Result};
use crate::geometry::{Point2, ReconstructionImage, SensorGeometry, DEFAULT_ELEMENT_SIZE};
use crate::gestures::{sensor_noise_std, GestureClass, SequenceClassifier, DEFAULT_SNR_DB, WINDOW_FRAMES};
use crate::inverse::{sensor_raster_jacobian, InverseModel, Linearization, TikhonovSolver, DEFAULT_LAMBDA};
use crate::phantom::{TouchMode, TouchPhantom, TouchPoint, MAX_TOUCHES};
use crate::rng::{self, SimRng};

pub use rules::{Action, HmiAction, Rule, RuleEngine, RuleTable, TouchState, Trigger, DEFAULT_RULES};
pub use stream::{StreamHub, Subscriber};

/// Deepest press, as a fraction of the layer thickness.
pub const MAX_DEPTH_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Tikhonov,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub geometry: SensorGeometry,
    pub element_size: f64,
    pub method: Method,
    pub lambda: f64,
    /// Contact disc radius for every touch (mm).
    pub touch_radius: f64,
    /// Press depth used when a down event carries none (mm).
    pub default_depth: f64,
    /// Sensor noise level; `None` disables noise.
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub tick_hz: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            geometry: SensorGeometry::with_lattice(4.0, 3.0),
            element_size: DEFAULT_ELEMENT_SIZE,
            method: Method::Tikhonov,
            lambda: DEFAULT_LAMBDA,
            touch_radius: 7.0,
            default_depth: 1.5,
            snr_db: Some(DEFAULT_SNR_DB),
            seed: 0,
            tick_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TouchKind {
    Down,
    Move,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TouchEvent {
    pub id: u32,
    pub kind: TouchKind,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    pub depth: Option<f64>,
}

impl TouchEvent {
    pub fn down(id: u32, x: f64, y: f64, depth: f64) -> Self {
        Self {
            id,
            kind: TouchKind::Down,
            x,
            y,
            depth: Some(depth),
        }
    }

    pub fn moved(id: u32, x: f64, y: f64) -> Self {
        Self {
            id,
            kind: TouchKind::Move,
            x,
            y,
            depth: None,
        }
    }

    pub fn up(id: u32) -> Self {
        Self {
            id,
            kind: TouchKind::Up,
            x: 0.0,
            y: 0.0,
            depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub id: u32,
    pub active_touches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GesturePosterior {
    pub label: GestureClass,
    pub probabilities: Vec<f64>,
}

/// Everything one tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub seq: u64,
    pub dv: Vec<f64>,
    pub image: ReconstructionImage,
    pub gesture: Option<GesturePosterior>,
    pub action: HmiAction,
}

/// Streamed per-tick message. `img` is base-64 of 2304 row-major bytes of
/// the min-max normalized conductivity drop, so presses appear bright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    pub seq: u64,
    pub dv: Vec<f64>,
    pub img: String,
    pub gesture: Option<GesturePosterior>,
    pub action: HmiAction,
}

impl TickOutput {
    pub fn message(&self) -> TickMessage {
        let drop = ReconstructionImage {
            pixels: self.image.pixels.iter().map(|v| -v).collect(),
            geometry_hash: self.image.geometry_hash,
        };
        TickMessage {
            seq: self.seq,
            dv: self.dv.clone(),
            img: base64::engine::general_purpose::STANDARD.encode(drop.to_u8()),
            gesture: self.gesture.clone(),
            action: self.action.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ActiveTouch {
    point: TouchPoint,
    ticks: u64,
}

/// One step of a recorded interaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Tick { tick: u32 },
    Event(TouchEvent),
}

pub struct Session {
    pub config: SessionConfig,
    sim: DatasetSimulator,
    inverse: InverseModel,
    classifier: Option<SequenceClassifier>,
    rules: RuleEngine,
    active: BTreeMap<u32, ActiveTouch>,
    released: Vec<TouchState>,
    ring: VecDeque<Vec<f64>>,
    counter: u64,
    noise: Option<Normal<f64>>,
    rng: SimRng,
    last_clean: Option<(TouchPhantom, Vec<f64>)>,
    last_output: Option<TickOutput>,
}

impl Session {
    /// Builds the mesh, reference frame and reconstruction operator once.
    /// `inverse` overrides the Tikhonov operator built from `config`.
    pub fn new(
        config: SessionConfig,
        inverse: Option<InverseModel>,
        classifier: Option<SequenceClassifier>,
        rules: RuleTable,
    ) -> Result<Self> {
        config.geometry.validate()?;
        let sim = DatasetSimulator::new(&config.geometry, config.element_size)?;
        let inverse = match (inverse, config.method) {
            (Some(m), _) => m,
            (None, Method::Tikhonov) => {
                let jr = sensor_raster_jacobian(&config.geometry, config.element_size, Linearization::Homogenized)?;
                InverseModel::Tikhonov(TikhonovSolver::new(&jr, config.lambda)?)
            }
            (None, Method::Linear) => {
                return Err(Error::Config("linear method needs a fitted map".into()));
            }
        };
        config.geometry.hash().ensure(inverse.geometry_hash())?;
        if let Some(c) = &classifier {
            if c.channels != sim.reference.len() {
                return Err(Error::Shape(format!(
                    "classifier expects {} channels, sensor has {}",
                    c.channels,
                    sim.reference.len()
                )));
            }
        }
        let noise = match config.snr_db {
            Some(snr) => {
                let std = sensor_noise_std(&sim, snr)?;
                (std > 0.0).then(|| Normal::new(0.0, std).expect("finite std"))
            }
            None => None,
        };
        let rng = rng::seeded(config.seed);
        Ok(Self {
            config,
            sim,
            inverse,
            classifier,
            rules: RuleEngine::new(rules),
            active: BTreeMap::new(),
            released: Vec::new(),
            ring: VecDeque::with_capacity(WINDOW_FRAMES),
            counter: 0,
            noise,
            rng,
            last_clean: None,
            last_output: None,
        })
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.config.geometry
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    pub fn active_touches(&self) -> usize {
        self.active.len()
    }

    pub fn latest(&self) -> Option<&TickOutput> {
        self.last_output.as_ref()
    }

    pub fn reference(&self) -> &[f64] {
        &self.sim.reference.values
    }

    /// Disc centre for a touch point: clamped so the contact disc stays on
    /// the sensor.
    fn disc_center(&self, x: f64, y: f64) -> Result<Point2> {
        let l = self.config.geometry.side_length;
        let r = self.config.touch_radius;
        if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > l || y > l {
            return Err(Error::OutOfDomain { x, y, radius: r });
        }
        Ok(Point2::new(x.clamp(r, l - r), y.clamp(r, l - r)))
    }

    /// Presses deeper than the layer are clipped (the 2D model cannot
    /// represent them); non-positive depths are rejected.
    fn check_depth(&self, d: f64) -> Result<f64> {
        if d.is_finite() && d > 0.0 {
            Ok(d.min(MAX_DEPTH_FRACTION * self.config.geometry.layer_thickness))
        } else {
            Err(Error::InvalidPhantom(format!("press depth {d} must be positive")))
        }
    }

    pub fn ingest_touch(&mut self, event: TouchEvent) -> Result<Ack> {
        match event.kind {
            TouchKind::Down => {
                let c = self.disc_center(event.x, event.y)?;
                let d = self.check_depth(event.depth.unwrap_or(self.config.default_depth))?;
                if !self.active.contains_key(&event.id) && self.active.len() >= MAX_TOUCHES {
                    return Err(Error::InvalidPhantom(format!("at most {MAX_TOUCHES} touches")));
                }
                let point = TouchPoint::new(c.x, c.y, self.config.touch_radius, d);
                self.active.insert(event.id, ActiveTouch { point, ticks: 0 });
            }
            TouchKind::Move => {
                let c = self.disc_center(event.x, event.y)?;
                let d = event.depth.map(|d| self.check_depth(d)).transpose()?;
                let t = self
                    .active
                    .get_mut(&event.id)
                    .ok_or(Error::UnknownTouchId(event.id))?;
                t.point.center = c;
                if let Some(d) = d {
                    t.point.intensity = d;
                }
            }
            TouchKind::Up => {
                let t = self
                    .active
                    .remove(&event.id)
                    .ok_or(Error::UnknownTouchId(event.id))?;
                self.released.push(TouchState {
                    position: t.point.center,
                    ticks: t.ticks,
                });
            }
        }
        Ok(Ack {
            id: event.id,
            active_touches: self.active.len(),
        })
    }

    fn phantom(&self) -> TouchPhantom {
        TouchPhantom::new(
            TouchMode::Depth,
            0,
            self.active.values().map(|t| t.point).collect(),
        )
    }

    pub fn tick(&mut self) -> Result<TickOutput> {
        let phantom = self.phantom();
        let clean = match &self.last_clean {
            Some((p, dv)) if *p == phantom => dv.clone(),
            _ if phantom.is_empty() => vec![0.0; self.sim.reference.len()],
            _ => self.sim.frame_delta(&phantom)?,
        };
        self.last_clean = Some((phantom, clean.clone()));
        let mut dv = clean;
        if let Some(n) = &self.noise {
            for v in &mut dv {
                *v += n.sample(&mut self.rng);
            }
        }
        let image = self.inverse.reconstruct_delta(&dv)?;

        if self.ring.len() == WINDOW_FRAMES {
            self.ring.pop_front();
        }
        self.ring.push_back(dv.clone());
        let gesture = match &self.classifier {
            Some(c) if self.ring.len() == WINDOW_FRAMES => {
                let window: Vec<f64> = self.ring.iter().flatten().copied().collect();
                let (label, p) = c.predict(&window)?;
                Some(GesturePosterior {
                    label,
                    probabilities: p.to_vec(),
                })
            }
            _ => None,
        };

        self.counter += 1;
        for t in self.active.values_mut() {
            t.ticks += 1;
        }
        let held: Vec<TouchState> = self
            .active
            .values()
            .map(|t| TouchState {
                position: t.point.center,
                ticks: t.ticks,
            })
            .collect();
        let released = std::mem::take(&mut self.released);
        let g = gesture.as_ref().map(|g| (g.label, g.probabilities[g.label.index()]));
        let action = self.rules.evaluate(self.counter, &held, &released, g);
        let out = TickOutput {
            seq: self.counter,
            dv,
            image,
            gesture,
            action,
        };
        self.last_output = Some(out.clone());
        Ok(out)
    }

    /// Applies a recorded script and returns the action of every tick.
    pub fn replay(&mut self, steps: &[ScriptStep]) -> Result<Vec<Action>> {
        let mut actions = Vec::new();
        for step in steps {
            match step {
                ScriptStep::Event(e) => {
                    self.ingest_touch(*e)?;
                }
                ScriptStep::Tick { tick } => {
                    for _ in 0..*tick {
                        actions.push(self.tick()?.action.action);
                    }
                }
            }
        }
        Ok(actions)
    }
}

/// Parses a script with one JSON step per line (`{"tick": n}` or a touch event).
pub fn parse_script(text: &str) -> Result<Vec<ScriptStep>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                what: "session script",
                detail: format!("{e}: {l}"),
            })
        })
        .collect()
}

pub fn write_script(steps: &[ScriptStep]) -> String {
    steps
        .iter()
        .map(|s| serde_json::to_string(s).expect("steps serialize") + "\n")
        .collect()
}

/// Deterministic pseudo-random interaction of `events` touch events, with
/// ticks in between, for replay tests and benchmarks.
pub fn random_script(events: usize, geom: &SensorGeometry, seed: u64) -> Vec<ScriptStep> {
    use rand::Rng;
    let mut r = rng::seeded(seed);
    let l = geom.side_length;
    let dmax = 0.8 * geom.layer_thickness;
    let mut steps = Vec::new();
    let mut active: Vec<u32> = Vec::new();
    let mut next_id = 1;
    let mut emitted = 0;
    while emitted < events {
        let choice = r.random_range(0..10);
        let event = if active.is_empty() || (choice < 3 && active.len() < 3) {
            let id = next_id;
            next_id += 1;
            active.push(id);
            TouchEvent::down(id, r.random_range(0.0..l), r.random_range(0.0..l), r.random_range(0.5..dmax))
        } else if choice < 7 {
            let id = active[r.random_range(0..active.len())];
            TouchEvent::moved(id, r.random_range(0.0..l), r.random_range(0.0..l))
        } else {
            let id = active.swap_remove(r.random_range(0..active.len()));
            TouchEvent::up(id)
        };
        steps.push(ScriptStep::Event(event));
        emitted += 1;
        if r.random_range(0..3) > 0 {
            steps.push(ScriptStep::Tick {
                tick: r.random_range(1..4),
            });
        }
    }
    steps
}
