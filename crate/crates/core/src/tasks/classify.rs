//! Small digit-glyph classification task and its binary dataset format.
//!
//! File layout (little endian): magic `FFDS`, then `u32` record count, `u32`
//! rows, `u32` cols, then per record `rows * cols` pixel bytes followed by
//! one label byte.

use super::{check_action, Environment, Step, TaskError, TaskKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const SIDE: usize = 8;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;
pub const MAGIC: &[u8; 4] = b"FFDS";
pub const TRAIN_SPLIT: usize = 0;
pub const TEST_SPLIT: usize = 1;
pub const DEFAULT_SIZE: usize = 600;
pub const EPISODE_LEN: usize = 40;
/// Share of records in the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// 5x7 digit bitmaps, one row per byte, MSB-first in the low five bits.
const GLYPHS: [[u8; 7]; CLASSES] = [
    [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
    [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
    [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
    [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
    [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
    [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
    [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
    [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
    [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
    [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    /// Balanced set of jittered, noisy glyphs.
    pub fn generate(count: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..count).map(|i| (i % CLASSES) as u8).collect();
        labels.shuffle(&mut rng);
        let pixels = labels
            .iter()
            .map(|&label| {
                let mut img = vec![0u8; PIXELS];
                let dx = rng.random_range(0..=SIDE - 5);
                let dy = rng.random_range(0..=SIDE - 7);
                for (r, bits) in GLYPHS[label as usize].iter().enumerate() {
                    for c in 0..5 {
                        if bits & (0x10 >> c) != 0 {
                            img[(r + dy) * SIDE + c + dx] = rng.random_range(160..=255);
                        }
                    }
                }
                for p in img.iter_mut() {
                    if rng.random::<f64>() < 0.04 {
                        *p = rng.random();
                    }
                }
                img
            })
            .collect();
        Dataset {
            rows: SIDE,
            cols: SIDE,
            pixels,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self, which: usize) -> std::ops::Range<usize> {
        let cut = (self.len() as f64 * TRAIN_FRACTION).round() as usize;
        if which == TRAIN_SPLIT {
            0..cut
        } else {
            cut..self.len()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (PIXELS + 1));
        out.extend_from_slice(MAGIC);
        for n in [self.len(), self.rows, self.cols] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for (img, label) in self.pixels.iter().zip(&self.labels) {
            out.extend_from_slice(img);
            out.push(*label);
        }
        out
    }

    /// Parses and validates a dataset. Errors name the first bad record;
    /// header problems are reported as record 0.
    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, TaskError> {
        let header = |reason: &str| TaskError::Dataset {
            index: 0,
            reason: format!("header: {reason}"),
        };
        if bytes.len() < 16 {
            return Err(header("truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(header("bad magic"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (count, rows, cols) = (word(0), word(1), word(2));
        if rows * cols != PIXELS {
            return Err(header(&format!("expected {SIDE}x{SIDE} images, got {rows}x{cols}")));
        }
        let record = PIXELS + 1;
        let body = &bytes[16..];
        let mut pixels = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for index in 0..count {
            let Some(rec) = body.get(index * record..(index + 1) * record) else {
                return Err(TaskError::Dataset {
                    index,
                    reason: "truncated".into(),
                });
            };
            let label = rec[PIXELS];
            if label as usize >= CLASSES {
                return Err(TaskError::Dataset {
                    index,
                    reason: format!("label {label} out of range"),
                });
            }
            pixels.push(rec[..PIXELS].to_vec());
            labels.push(label);
        }
        if body.len() != count * record {
            return Err(TaskError::Dataset {
                index: count,
                reason: "trailing bytes after the last record".into(),
            });
        }
        Ok(Dataset { rows, cols, pixels, labels })
    }

    pub fn load(path: &Path) -> Result<Dataset, TaskError> {
        let bytes = std::fs::read(path).map_err(|e| TaskError::Dataset {
            index: 0,
            reason: format!("{}: {e}", path.display()),
        })?;
        Dataset::from_bytes(&bytes)
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Each step presents one image; the action is the per-class output rate.
/// Reward is the margin of the true class over the strongest other class.
#[derive(Debug, Clone)]
pub struct MiniClassify {
    data: Dataset,
    len: usize,
    order: Vec<usize>,
    t: Option<usize>,
}

impl MiniClassify {
    pub fn new(data: Dataset, len: usize) -> MiniClassify {
        MiniClassify {
            data,
            len,
            order: Vec::new(),
            t: None,
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn obs(&self, t: usize) -> Vec<f64> {
        let idx = self.order[t % self.order.len()];
        self.data.pixels[idx].iter().map(|&p| p as f64 / 255.0).collect()
    }
}

impl Environment for MiniClassify {
    fn kind(&self) -> TaskKind {
        TaskKind::MiniClassify
    }

    fn obs_dim(&self) -> usize {
        PIXELS
    }

    fn action_dim(&self) -> usize {
        CLASSES
    }

    fn episode_len(&self) -> usize {
        self.len
    }

    /// `variant` selects the split; `seed` the presentation order.
    fn reset(&mut self, seed: u64, variant: usize) -> Result<Vec<f64>, TaskError> {
        super::check_variant(TaskKind::MiniClassify, variant)?;
        self.order = self.data.split(variant).collect();
        if self.order.is_empty() {
            return Err(TaskError::Dataset {
                index: 0,
                reason: "empty split".into(),
            });
        }
        self.order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.t = Some(0);
        Ok(self.obs(0))
    }

    fn step(&mut self, action: &[f64]) -> Result<Step, TaskError> {
        check_action(CLASSES, action)?;
        let t = self.t.ok_or(TaskError::NotReset)?;
        if t >= self.len {
            return Err(TaskError::EpisodeOver);
        }
        let label = self.data.labels[self.order[t % self.order.len()]] as usize;
        let other = (0..CLASSES)
            .filter(|&k| k != label)
            .map(|k| action[k])
            .fold(f64::NEG_INFINITY, f64::max);
        self.t = Some(t + 1);
        Ok(Step {
            obs: self.obs(t + 1),
            reward: action[label] - other,
            done: t + 1 == self.len,
            correct: Some(predict(action) == label),
        })
    }
}
