//! Live classification sessions and the streaming wire protocol.
//!
//! A [`Session`] keeps the most recent `window_size` frames of one client.
//! Every pushed frame is classified from the window contents placed at the
//! head of the model input, with the remaining positions masked.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{
    sanitize_frame, LandmarkFrame, NanFloat, PoseSequence, FEATURES_PER_POINT, NUM_LANDMARKS,
};
use crate::model::{forward, ClassProbabilities, Mode, SavedModel};

pub const DEFAULT_WINDOW_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationResult {
    pub probs: ClassProbabilities,
    /// Real (non-padding) frames in the window.
    pub window_fill: usize,
}

/// Per-client streaming state over a shared read-only model.
#[derive(Debug, Clone)]
pub struct Session {
    id: u64,
    model: Arc<SavedModel>,
    window_size: usize,
    window: VecDeque<LandmarkFrame>,
    frames_received: u64,
    frames_dropped: u64,
}

impl Session {
    pub fn new(id: u64, model: Arc<SavedModel>, window_size: usize) -> Result<Self> {
        if window_size == 0 || window_size > model.config.max_seq_len {
            return Err(Error::Config(format!(
                "window size {window_size} must be between 1 and max_seq_len {}",
                model.config.max_seq_len
            )));
        }
        Ok(Self {
            id,
            model,
            window_size,
            window: VecDeque::with_capacity(window_size),
            frames_received: 0,
            frames_dropped: 0,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn model(&self) -> &SavedModel {
        &self.model
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    /// Window contents, oldest first.
    pub fn window(&self) -> impl ExactSizeIterator<Item = &LandmarkFrame> {
        self.window.iter()
    }

    pub fn window_fill(&self) -> usize {
        self.window.iter().filter(|f| !f.is_padding()).count()
    }

    pub fn frames_received(&self) -> u64 {
        self.frames_received
    }

    /// Frames that arrived with missing values and entered the window as padding.
    pub fn frames_dropped(&self) -> u64 {
        self.frames_dropped
    }

    /// Empties the window. Counters keep running.
    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Sanitizes and appends one frame, then classifies the window.
    /// A malformed frame is rejected without touching the session.
    pub fn push_frame(&mut self, raw: &[f32]) -> Result<ClassificationResult> {
        let frame = sanitize_frame(raw)?;
        self.frames_received += 1;
        if frame.is_padding() {
            self.frames_dropped += 1;
        }
        if self.window.len() == self.window_size {
            self.window.pop_front();
        }
        self.window.push_back(frame);
        self.classify()
    }

    /// The model input for the current window: window frames first, then padding.
    pub fn model_input(&self) -> PoseSequence {
        window_input(self.window.iter().copied(), self.model.config.max_seq_len)
    }

    pub fn classify(&self) -> Result<ClassificationResult> {
        let (probs, _) = forward(
            &self.model_input(),
            &self.model.params,
            &self.model.config,
            Mode::Infer,
        )?;
        Ok(ClassificationResult {
            probs,
            window_fill: self.window_fill(),
        })
    }

    /// Handles one inbound text message. `reset` produces no reply.
    pub fn handle_text(&mut self, text: &str) -> Option<Outbound> {
        let msg = match serde_json::from_str::<Inbound>(text) {
            Ok(m) => m,
            Err(e) => {
                return Some(Outbound::Error {
                    reason: format!("malformed message: {e}"),
                })
            }
        };
        match msg {
            Inbound::Reset => {
                self.reset();
                None
            }
            Inbound::Frame { seq_no, landmarks } => {
                let reply = flatten_wire(&landmarks)
                    .and_then(|raw| self.push_frame(&raw))
                    .map(|r| Outbound::classification(seq_no, &r, &self.model));
                Some(reply.unwrap_or_else(|e| Outbound::Error {
                    reason: e.to_string(),
                }))
            }
        }
    }
}

/// Builds a `max_seq_len` input from window frames followed by padding.
pub fn window_input(
    frames: impl IntoIterator<Item = LandmarkFrame>,
    max_seq_len: usize,
) -> PoseSequence {
    let mut all: Vec<LandmarkFrame> = frames.into_iter().collect();
    all.resize(max_seq_len, LandmarkFrame::padding());
    PoseSequence::from_frames(all, None)
}

fn flatten_wire(landmarks: &[[NanFloat; FEATURES_PER_POINT]]) -> Result<Vec<f32>> {
    if landmarks.len() != NUM_LANDMARKS {
        return Err(Error::MalformedInput(format!(
            "expected {NUM_LANDMARKS} landmarks, got {}",
            landmarks.len()
        )));
    }
    Ok(landmarks.iter().flatten().map(|v| v.0).collect())
}

/// Client to server.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Inbound {
    Frame {
        seq_no: u64,
        landmarks: Vec<[NanFloat; FEATURES_PER_POINT]>,
    },
    Reset,
}

impl Inbound {
    pub fn frame(seq_no: u64, raw: &[f32]) -> Self {
        Inbound::Frame {
            seq_no,
            landmarks: raw
                .chunks(FEATURES_PER_POINT)
                .map(|c| std::array::from_fn(|i| NanFloat(c.get(i).copied().unwrap_or(f32::NAN))))
                .collect(),
        }
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Outbound {
    Classification {
        seq_no: u64,
        probs: BTreeMap<String, f32>,
        label: String,
        window_fill: usize,
    },
    Error {
        reason: String,
    },
}

impl Outbound {
    pub fn classification(seq_no: u64, r: &ClassificationResult, model: &SavedModel) -> Self {
        let probs = model
            .registry
            .names()
            .iter()
            .zip(&r.probs.probs)
            .map(|(name, &p)| (name.clone(), p as f32))
            .collect();
        Outbound::Classification {
            seq_no,
            probs,
            label: model.registry.name(r.probs.label).to_string(),
            window_fill: r.window_fill,
        }
    }
}
