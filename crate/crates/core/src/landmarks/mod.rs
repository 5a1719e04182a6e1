//! Landmark data model: points, frames, padded sequences and the class registry.

mod file;

pub use file::{
    read_landmark_file, write_landmark_file, FileHeader, LandmarkFile, NanFloat, SequenceRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Body landmarks produced by the pose extractor for each frame.
pub const NUM_LANDMARKS: usize = 33;
/// `x, y, z, visibility`.
pub const FEATURES_PER_POINT: usize = 4;
/// Width of one flattened frame.
pub const FRAME_FEATURES: usize = NUM_LANDMARKS * FEATURES_PER_POINT;

pub const DEFAULT_PAD_VALUE: f32 = 0.0;
pub const DEFAULT_MAX_SEQ_LEN: usize = 32;

/// One landmark, hip-relative normalized coordinates plus extractor confidence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub visibility: f32,
}

impl LandmarkPoint {
    pub const fn new(x: f32, y: f32, z: f32, visibility: f32) -> Self {
        Self {
            x,
            y,
            z,
            visibility,
        }
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.visibility.is_finite()
    }

    fn to_array(self) -> [f32; FEATURES_PER_POINT] {
        [self.x, self.y, self.z, self.visibility]
    }
}

/// A single time step.
///
/// A padding frame is excluded from computation. Frames that were sanitized
/// into padding keep their raw points so they can be written back out
/// unchanged; [`flatten_frame`] never exposes them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkFrame {
    points: [LandmarkPoint; NUM_LANDMARKS],
    is_padding: bool,
}

impl LandmarkFrame {
    /// Builds a real frame. Every value must be finite.
    pub fn new(points: [LandmarkPoint; NUM_LANDMARKS]) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "landmark {i} has a non-finite value"
            )));
        }
        Ok(Self {
            points,
            is_padding: false,
        })
    }

    pub fn padding() -> Self {
        Self {
            points: [LandmarkPoint::default(); NUM_LANDMARKS],
            is_padding: true,
        }
    }

    pub fn is_padding(&self) -> bool {
        self.is_padding
    }

    pub fn points(&self) -> &[LandmarkPoint; NUM_LANDMARKS] {
        &self.points
    }

    /// The stored values in `[x0, y0, z0, v0, x1, ...]` order, including
    /// non-finite values of a sanitized frame.
    pub fn raw_values(&self) -> [f32; FRAME_FEATURES] {
        let mut out = [0.0; FRAME_FEATURES];
        for (chunk, p) in out.chunks_exact_mut(FEATURES_PER_POINT).zip(&self.points) {
            chunk.copy_from_slice(&p.to_array());
        }
        out
    }

    /// Bitwise comparison, so sanitized NaN frames compare equal to themselves.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.is_padding == other.is_padding
            && self
                .raw_values()
                .iter()
                .zip(other.raw_values().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Flattens a frame to `[x0, y0, z0, v0, x1, ...]`; padding frames become
/// `FRAME_FEATURES` copies of `pad_value`.
pub fn flatten_frame(frame: &LandmarkFrame, pad_value: f32) -> [f32; FRAME_FEATURES] {
    if frame.is_padding {
        [pad_value; FRAME_FEATURES]
    } else {
        frame.raw_values()
    }
}

/// Converts raw extractor output (33 × 4 values) into a frame.
///
/// Any non-finite value turns the whole frame into padding. Finite
/// visibility is clamped to `[0, 1]`.
pub fn sanitize_frame(raw: &[f32]) -> Result<LandmarkFrame> {
    if raw.len() != FRAME_FEATURES {
        return Err(Error::MalformedInput(format!(
            "expected {FRAME_FEATURES} values ({NUM_LANDMARKS} landmarks × {FEATURES_PER_POINT}), got {}",
            raw.len()
        )));
    }
    let mut points = [LandmarkPoint::default(); NUM_LANDMARKS];
    for (p, c) in points.iter_mut().zip(raw.chunks_exact(FEATURES_PER_POINT)) {
        *p = LandmarkPoint::new(c[0], c[1], c[2], c[3]);
    }
    let is_padding = raw.iter().any(|v| !v.is_finite());
    if !is_padding {
        for p in &mut points {
            p.visibility = p.visibility.clamp(0.0, 1.0);
        }
    }
    Ok(LandmarkFrame { points, is_padding })
}

/// Index into the class registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExerciseLabel(pub usize);

impl ExerciseLabel {
    pub const BODY_WEIGHT_SQUATS: Self = Self(0);
    pub const LUNGES: Self = Self(1);
    pub const PUSH_UPS: Self = Self(2);
    pub const THROWING_DISCUS: Self = Self(3);

    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered class names. The order is persisted in every file; index `i` is
/// output `i` of the network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassRegistry(Vec<String>);

impl Default for ClassRegistry {
    fn default() -> Self {
        Self(
            ["BodyWeightSquats", "Lunges", "PushUps", "ThrowingDiscus"]
                .into_iter()
                .map(String::from)
                .collect(),
        )
    }
}

impl ClassRegistry {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(
                "class registry needs at least 2 classes".into(),
            ));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Config(format!("class {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self(names))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn name(&self, label: ExerciseLabel) -> &str {
        &self.0[label.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ExerciseLabel> {
        self.0.iter().position(|n| n == name).map(ExerciseLabel)
    }

    pub fn labels(&self) -> impl Iterator<Item = ExerciseLabel> {
        (0..self.0.len()).map(ExerciseLabel)
    }
}

/// A fixed-length, post-padded sequence of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    frames: Vec<LandmarkFrame>,
    pub label: Option<ExerciseLabel>,
    real_len: usize,
}

impl PoseSequence {
    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of non-padding frames.
    pub fn real_len(&self) -> usize {
        self.real_len
    }

    pub fn with_label(mut self, label: ExerciseLabel) -> Self {
        self.label = Some(label);
        self
    }

    /// Builds a sequence from already laid out frames, without padding or
    /// truncation. Used where the caller controls layout (serving, tests).
    pub fn from_frames(frames: Vec<LandmarkFrame>, label: Option<ExerciseLabel>) -> Self {
        let real_len = frames.iter().filter(|f| !f.is_padding()).count();
        Self {
            frames,
            label,
            real_len,
        }
    }

    /// Flattened features, time-major: `len() * FRAME_FEATURES` values.
    pub fn to_features(&self, pad_value: f32) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.frames.len() * FRAME_FEATURES);
        for f in &self.frames {
            out.extend_from_slice(&flatten_frame(f, pad_value));
        }
        out
    }
}

/// Fits `frames` to exactly `max_seq_len` time steps.
///
/// Longer inputs keep their most recent `max_seq_len` frames; shorter ones
/// get padding frames appended.
pub fn pad_or_truncate(frames: &[LandmarkFrame], max_seq_len: usize) -> Result<PoseSequence> {
    if max_seq_len == 0 {
        return Err(Error::MalformedInput(
            "max_seq_len must be at least 1".into(),
        ));
    }
    if frames.is_empty() {
        return Err(Error::MalformedInput(
            "cannot pad an empty frame list".into(),
        ));
    }
    let start = frames.len().saturating_sub(max_seq_len);
    let mut out = Vec::with_capacity(max_seq_len);
    out.extend_from_slice(&frames[start..]);
    out.resize(max_seq_len, LandmarkFrame::padding());
    Ok(PoseSequence::from_frames(out, None))
}
