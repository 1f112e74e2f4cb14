use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{GestureClass, GestureSample, CLASS_COUNT, MIN_PER_CLASS, WINDOW_FRAMES};
use crate::dataset::SymmetryPermutation;
use crate::error::{Error, Result};
use crate::geometry::Symmetry;
use crate::rng;

pub const HIDDEN_WIDTH: usize = 128;
const MODEL_MAGIC: &[u8; 8] = b"LEITMLP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of the training set held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 3e-3,
            validation_fraction: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// Standardize, one ReLU hidden layer, softmax over the 12 classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceClassifier {
    pub channels: usize,
    /// Per-channel mean and standard deviation from the training split.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// hidden x input, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// classes x hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub best_epoch: u32,
    pub log: Vec<EpochLog>,
}

struct Activations {
    hidden: Vec<f64>,
    probs: [f64; CLASS_COUNT],
}

fn softmax(z: &mut [f64; CLASS_COUNT]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl SequenceClassifier {
    fn init(channels: usize, mean: Vec<f64>, std: Vec<f64>, seed: u64) -> Self {
        let input = channels * WINDOW_FRAMES;
        let mut r = rng::stream(seed, 7);
        let he = |fan_in: usize| Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
        let d1 = he(input);
        let d2 = he(HIDDEN_WIDTH);
        Self {
            channels,
            mean,
            std,
            w1: (0..HIDDEN_WIDTH * input).map(|_| d1.sample(&mut r)).collect(),
            b1: vec![0.0; HIDDEN_WIDTH],
            w2: (0..CLASS_COUNT * HIDDEN_WIDTH).map(|_| d2.sample(&mut r)).collect(),
            b2: vec![0.0; CLASS_COUNT],
            best_epoch: 0,
            log: Vec::new(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * WINDOW_FRAMES
    }

    fn standardize(&self, frames: &[f64]) -> Vec<f64> {
        frames
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i % self.channels;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let n = x.len();
        let hidden: Vec<f64> = (0..HIDDEN_WIDTH)
            .map(|j| {
                let row = &self.w1[j * n..(j + 1) * n];
                let a = self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                a.max(0.0)
            })
            .collect();
        let mut probs = [0.0; CLASS_COUNT];
        for (k, p) in probs.iter_mut().enumerate() {
            let row = &self.w2[k * HIDDEN_WIDTH..(k + 1) * HIDDEN_WIDTH];
            *p = self.b2[k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        softmax(&mut probs);
        Activations { hidden, probs }
    }

    /// Posterior over the 12 classes for one 15 x channels window.
    pub fn posterior(&self, frames: &[f64]) -> Result<[f64; CLASS_COUNT]> {
        if frames.len() != self.input_len() {
            return Err(Error::Shape(format!(
                "window has {} values, classifier expects {}",
                frames.len(),
                self.input_len()
            )));
        }
        Ok(self.forward(&self.standardize(frames)).probs)
    }

    pub fn predict(&self, frames: &[f64]) -> Result<(GestureClass, [f64; CLASS_COUNT])> {
        let p = self.posterior(frames)?;
        let k = argmax(&p);
        Ok((GestureClass::from_index(k).expect("12 outputs"), p))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        for v in [self.channels, WINDOW_FRAMES, HIDDEN_WIDTH, CLASS_COUNT] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for block in [&self.mean, &self.std, &self.w1, &self.b1, &self.w2, &self.b2] {
            for v in block.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&self.best_epoch.to_le_bytes())?;
        w.write_all(&(self.log.len() as u32).to_le_bytes())?;
        for e in &self.log {
            w.write_all(&e.epoch.to_le_bytes())?;
            for v in [e.loss, e.train_accuracy, e.val_accuracy] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "classifier",
            detail,
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut u32s = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut b4)?;
            Ok(u32::from_le_bytes(b4))
        };
        let channels = u32s(r)? as usize;
        let dims = [u32s(r)?, u32s(r)?, u32s(r)?];
        if dims != [WINDOW_FRAMES as u32, HIDDEN_WIDTH as u32, CLASS_COUNT as u32] {
            return Err(bad(format!("unsupported layout {dims:?}")));
        }
        let f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut b8 = [0u8; 8];
            (0..n)
                .map(|_| {
                    r.read_exact(&mut b8)?;
                    Ok(f64::from_le_bytes(b8))
                })
                .collect()
        };
        let input = channels * WINDOW_FRAMES;
        let mean = f64s(r, channels)?;
        let std = f64s(r, channels)?;
        let w1 = f64s(r, HIDDEN_WIDTH * input)?;
        let b1 = f64s(r, HIDDEN_WIDTH)?;
        let w2 = f64s(r, CLASS_COUNT * HIDDEN_WIDTH)?;
        let b2 = f64s(r, CLASS_COUNT)?;
        let best_epoch = u32s(r)?;
        let n_log = u32s(r)? as usize;
        let mut log = Vec::with_capacity(n_log.min(1 << 16));
        for _ in 0..n_log {
            let epoch = u32s(r)?;
            let v = f64s(r, 3)?;
            log.push(EpochLog {
                epoch,
                loss: v[0],
                train_accuracy: v[1],
                val_accuracy: v[2],
            });
        }
        Ok(Self {
            channels,
            mean,
            std,
            w1,
            b1,
            w2,
            b2,
            best_epoch,
            log,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    /// SHA-256 of the serialized model.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
        .0
}

fn channel_stats(samples: &[&GestureSample], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut n = 0.0;
    for s in samples {
        for (i, v) in s.frames.iter().enumerate() {
            sum[i % channels] += v;
            sq[i % channels] += v * v;
        }
        n += WINDOW_FRAMES as f64;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Stratified hold-out: the first `fraction` of each class after a seeded
/// shuffle goes to validation.
fn holdout<R: Rng>(samples: &[GestureSample], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in GestureClass::ALL {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == c).collect();
        idx.shuffle(rng);
        let k = (idx.len() as f64 * fraction).round() as usize;
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    (train, val)
}

/// Mini-batch momentum SGD on cross-entropy with L2 decay. The weights of the
/// epoch with the best validation accuracy are kept (latest on ties).
pub fn train(samples: &[GestureSample], config: &TrainConfig) -> Result<SequenceClassifier> {
    train_augmented(samples, &[], config)
}

/// As [`train`], with every training window (not the held-out part) also
/// presented under each given sensor symmetry, relabeled accordingly.
pub fn train_augmented(
    samples: &[GestureSample],
    symmetries: &[SymmetryPermutation],
    config: &TrainConfig,
) -> Result<SequenceClassifier> {
    let mut counts = [0usize; CLASS_COUNT];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
    if present.len() < 2 || present.iter().any(|&c| c < MIN_PER_CLASS) {
        return Err(Error::InsufficientData {
            needed: MIN_PER_CLASS,
            got: present.iter().copied().min().unwrap_or(0),
        });
    }
    let channels = samples[0].channels();
    if samples.iter().any(|s| s.frames.len() != channels * WINDOW_FRAMES) {
        return Err(Error::Shape("gesture windows differ in size".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) || config.batch_size == 0 {
        return Err(Error::Config("bad training configuration".into()));
    }
    let mut r = rng::stream(config.seed, 0);
    let (train_idx, val_idx) = holdout(samples, config.validation_fraction, &mut r);
    let extra: Vec<GestureSample> = symmetries
        .iter()
        .filter(|p| p.symmetry != Symmetry::IDENTITY)
        .flat_map(|p| {
            train_idx.iter().map(move |&i| {
                let mut g = samples[i].map_frames(|f| p.apply_frame(f));
                g.label = g.label.transformed(p.symmetry);
                g
            })
        })
        .collect();
    let all: Vec<&GestureSample> = samples.iter().chain(&extra).collect();
    let fit_idx: Vec<usize> = train_idx
        .iter()
        .copied()
        .chain(samples.len()..all.len())
        .collect();
    let train_refs: Vec<&GestureSample> = fit_idx.iter().map(|&i| all[i]).collect();
    let (mean, std) = channel_stats(&train_refs, channels);
    let mut model = SequenceClassifier::init(channels, mean, std, config.seed);
    let xs: Vec<Vec<f64>> = all.iter().map(|s| model.standardize(&s.frames)).collect();

    let input = model.input_len();
    let mut v1 = vec![0.0; model.w1.len()];
    let mut vb1 = vec![0.0; HIDDEN_WIDTH];
    let mut v2 = vec![0.0; model.w2.len()];
    let mut vb2 = vec![0.0; CLASS_COUNT];
    let mut g1 = vec![0.0; model.w1.len()];
    let mut gb1 = vec![0.0; HIDDEN_WIDTH];
    let mut g2 = vec![0.0; model.w2.len()];
    let mut gb2 = vec![0.0; CLASS_COUNT];

    let accuracy = |m: &SequenceClassifier, idx: &[usize]| -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        let hits = idx
            .iter()
            .filter(|&&i| argmax(&m.forward(&xs[i]).probs) == samples[i].label.index())
            .count();
        hits as f64 / idx.len() as f64
    };

    let mut order = fit_idx;
    let mut best: Option<(f64, SequenceClassifier)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            g1.iter_mut().for_each(|g| *g = 0.0);
            gb1.iter_mut().for_each(|g| *g = 0.0);
            g2.iter_mut().for_each(|g| *g = 0.0);
            gb2.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let x = &xs[i];
                let act = model.forward(x);
                let y = all[i].label.index();
                loss -= act.probs[y].max(1e-300).ln();
                let mut dz = act.probs;
                dz[y] -= 1.0;
                let mut dh = vec![0.0; HIDDEN_WIDTH];
                for k in 0..CLASS_COUNT {
                    gb2[k] += dz[k];
                    let row = k * HIDDEN_WIDTH;
                    for j in 0..HIDDEN_WIDTH {
                        g2[row + j] += dz[k] * act.hidden[j];
                        dh[j] += dz[k] * model.w2[row + j];
                    }
                }
                for j in 0..HIDDEN_WIDTH {
                    if act.hidden[j] <= 0.0 {
                        continue;
                    }
                    gb1[j] += dh[j];
                    let g = &mut g1[j * input..(j + 1) * input];
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi += dh[j] * xi;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let (lr, mu, wd) = (config.learning_rate, config.momentum, config.weight_decay);
            let step = |w: &mut [f64], v: &mut [f64], g: &[f64], decay: f64| {
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = mu * *vi - lr * (gi * scale + decay * *wi);
                    *wi += *vi;
                }
            };
            step(&mut model.w1, &mut v1, &g1, wd);
            step(&mut model.b1, &mut vb1, &gb1, 0.0);
            step(&mut model.w2, &mut v2, &g2, wd);
            step(&mut model.b2, &mut vb2, &gb2, 0.0);
        }
        let entry = EpochLog {
            epoch: epoch as u32 + 1,
            loss: loss / order.len() as f64,
            train_accuracy: accuracy(&model, &train_idx),
            val_accuracy: accuracy(&model, if val_idx.is_empty() { &train_idx } else { &val_idx }),
        };
        log.push(entry);
        if best.as_ref().is_none_or(|(acc, _)| entry.val_accuracy >= *acc) {
            let mut snapshot = model.clone();
            snapshot.best_epoch = entry.epoch;
            best = Some((entry.val_accuracy, snapshot));
        }
    }
    let mut model = best.map(|(_, m)| m).unwrap_or(model);
    model.log = log;
    Ok(model)
}

/// Counts of (true class, predicted class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; CLASS_COUNT]; CLASS_COUNT],
}

impl Default for Confusion {
    fn default() -> Self {
        Self {
            counts: [[0; CLASS_COUNT]; CLASS_COUNT],
        }
    }
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (GestureClass, GestureClass)>) -> Self {
        let mut c = Self::default();
        for (t, p) in pairs {
            c.counts[t.index()][p.index()] += 1;
        }
        c
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..CLASS_COUNT).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total().max(1) as f64
    }

    /// Rows sum to 1; rows of absent classes are all zero.
    pub fn row_normalized(&self) -> [[f64; CLASS_COUNT]; CLASS_COUNT] {
        let mut out = [[0.0; CLASS_COUNT]; CLASS_COUNT];
        for (i, row) in self.counts.iter().enumerate() {
            let n: usize = row.iter().sum();
            if n > 0 {
                for (j, &c) in row.iter().enumerate() {
                    out[i][j] = c as f64 / n as f64;
                }
            }
        }
        out
    }

    pub fn min_diagonal(&self) -> f64 {
        let r = self.row_normalized();
        (0..CLASS_COUNT)
            .filter(|&i| self.counts[i].iter().sum::<usize>() > 0)
            .map(|i| r[i][i])
            .fold(1.0, f64::min)
    }

    /// Row-normalized matrix with class labels, rows = true class.
    pub fn to_table(&self) -> String {
        let r = self.row_normalized();
        let mut out = String::from("true\\pred");
        for c in GestureClass::ALL {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (i, c) in GestureClass::ALL.iter().enumerate() {
            out.push_str(c.label());
            for v in r[i] {
                let _ = write!(out, ",{v:.3}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn evaluate(model: &SequenceClassifier, samples: &[GestureSample]) -> Result<Confusion> {
    let pairs = samples
        .iter()
        .map(|s| Ok((s.label, model.predict(&s.frames)?.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Confusion::from_pairs(pairs))
}
