//! Deterministic generator of labeled landmark sequences.
//!
//! Every clip is a periodic motion over a canonical 33-point skeleton in
//! hip-centered coordinates (x lateral, y down, z toward the camera is
//! negative). Per class:
//!
//! * `BodyWeightSquats`: hip/knee chain moves vertically with a forward
//!   step of the lead leg, which changes every repetition. Repetitions get
//!   deeper over the clip.
//! * `Lunges`: the same movement at 2.5 times the cadence, starting deep and
//!   getting shallower.
//! * `PushUps`: horizontal body, arm angle oscillating.
//! * `ThrowingDiscus`: torso yaw sweep with extended arms.
//!
//! Squats and lunges visit the same poses, so a single frame cannot separate
//! them. The cadence and the direction of the depth trend can.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::{
    sanitize_frame, ClassRegistry, ExerciseLabel, LandmarkFile, SequenceRecord, FRAME_FEATURES,
    NUM_LANDMARKS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Sequences per class, in registry order.
    pub counts: Vec<usize>,
    pub t_min: usize,
    pub t_max: usize,
    /// Standard deviation of Gaussian jitter on every coordinate.
    pub noise_sigma: f64,
    /// Probability that a frame is lost entirely (all values NaN).
    pub visibility_dropout_prob: f64,
    /// Motion cycles per clip. Lunges repeat 2.5 times as fast.
    pub freq_min: f64,
    pub freq_max: f64,
    /// Relative per-clip variation of body scale, camera yaw and amplitude.
    pub pose_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            counts: vec![120; 4],
            t_min: 24,
            t_max: 40,
            noise_sigma: 0.01,
            visibility_dropout_prob: 0.02,
            freq_min: 1.0,
            freq_max: 1.5,
            pose_jitter: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != 4 {
            return Err(Error::Config(format!(
                "counts must list 4 classes, got {}",
                self.counts.len()
            )));
        }
        if self.t_min < 8 || self.t_max < self.t_min {
            return Err(Error::Config(
                "frame range needs 8 <= t_min <= t_max".into(),
            ));
        }
        if [self.noise_sigma, self.pose_jitter]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::Config(
                "noise_sigma and pose_jitter must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.visibility_dropout_prob) {
            return Err(Error::Config(
                "visibility_dropout_prob must be in [0, 1]".into(),
            ));
        }
        if !(self.freq_min > 0.0 && self.freq_max >= self.freq_min) {
            return Err(Error::Config(
                "frequency range needs 0 < freq_min <= freq_max".into(),
            ));
        }
        Ok(())
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Rotation about the lateral axis; positive tips the head toward -z.
fn pitch(p: V3, a: f64) -> V3 {
    let (s, c) = a.sin_cos();
    [p[0], c * p[1] + s * p[2], -s * p[1] + c * p[2]]
}

/// Rotation about the vertical axis.
fn yaw(p: V3, a: f64) -> V3 {
    let (s, c) = a.sin_cos();
    [c * p[0] + s * p[2], p[1], -s * p[0] + c * p[2]]
}

/// Joint-space pose.
#[derive(Debug, Clone, Copy, Default)]
struct Pose {
    /// Squat depth, 0 standing to 1 deep.
    depth: f64,
    /// Left leg ahead for positive values, right leg for negative.
    stride: f64,
    /// Whole-body forward lean about the hips.
    body_pitch: f64,
    /// Upper-body rotation about the spine.
    torso_yaw: f64,
    /// Forward arm raise (radians, 0 = hanging).
    arm_elevation: f64,
    /// Sideways arm raise (radians).
    arm_abduction: f64,
    elbow_bend: f64,
}

fn arm(shoulder: V3, side: f64, pose: &Pose) -> [V3; 6] {
    let (e, a) = (pose.arm_elevation, pose.arm_abduction);
    let upper = [side * a.sin(), e.cos() * a.cos(), -e.sin() * a.cos()];
    let fore = pitch(upper, pose.elbow_bend);
    let elbow = add(shoulder, scale(upper, 0.28));
    let wrist = add(elbow, scale(fore, 0.25));
    let hand = add(wrist, scale(fore, 0.06));
    [
        elbow,
        wrist,
        add(hand, [side * 0.02, 0.0, 0.0]),      // pinky
        add(hand, [-side * 0.01, 0.0, -0.01]),   // index
        add(wrist, [-side * 0.02, 0.02, -0.02]), // thumb
        hand,
    ]
}

fn leg(side: f64, ahead: f64, behind: f64, depth: f64) -> [V3; 5] {
    let hip = [side * 0.1, 0.0, 0.0];
    let knee = [
        side * 0.1,
        0.45 - 0.25 * depth - 0.1 * ahead + 0.1 * behind,
        -0.25 * depth - 0.35 * ahead + 0.25 * behind,
    ];
    let ankle = [
        side * 0.1,
        0.85 - 0.35 * depth - 0.15 * ahead,
        -0.55 * ahead + 0.45 * behind,
    ];
    [
        hip,
        knee,
        ankle,
        add(ankle, [0.0, 0.04, 0.05]),
        add(ankle, [0.0, 0.05, -0.12]),
    ]
}

/// Places all 33 landmarks for `pose`, indexed like the extractor output.
fn skeleton(pose: &Pose) -> [V3; NUM_LANDMARKS] {
    let mut pts = [[0.0; 3]; NUM_LANDMARKS];
    let upper = |p: V3| yaw(p, pose.torso_yaw);

    pts[0] = [0.0, -0.68, -0.08];
    for (k, side) in [(1usize, 1.0), (4, -1.0)] {
        pts[k] = [side * 0.02, -0.71, -0.07];
        pts[k + 1] = [side * 0.035, -0.715, -0.065];
        pts[k + 2] = [side * 0.05, -0.71, -0.06];
    }
    pts[7] = [0.08, -0.69, 0.0];
    pts[8] = [-0.08, -0.69, 0.0];
    pts[9] = [0.03, -0.64, -0.07];
    pts[10] = [-0.03, -0.64, -0.07];
    let shoulder_l = [0.18, -0.5, 0.0];
    let shoulder_r = [-0.18, -0.5, 0.0];
    pts[11] = shoulder_l;
    pts[12] = shoulder_r;
    let al = arm(shoulder_l, 1.0, pose);
    let ar = arm(shoulder_r, -1.0, pose);
    for (j, idx) in [(0, 13), (1, 15), (2, 17), (3, 19), (4, 21)] {
        pts[idx] = al[j];
        pts[idx + 1] = ar[j];
    }
    for p in pts.iter_mut().take(23) {
        *p = upper(*p);
    }

    let ahead = pose.stride.max(0.0);
    let behind = (-pose.stride).max(0.0);
    let ll = leg(1.0, ahead, behind, pose.depth);
    let lr = leg(-1.0, behind, ahead, pose.depth);
    for (j, idx) in [(0, 23), (1, 25), (2, 27), (3, 29), (4, 31)] {
        pts[idx] = ll[j];
        pts[idx + 1] = lr[j];
    }
    for p in &mut pts {
        *p = pitch(*p, pose.body_pitch);
    }
    pts
}

/// Skeleton units per normalized coordinate unit.
const BODY_SCALE: f64 = 1.8;

/// Fraction of a squat cycle spent descending.
/// Lunge cycles per squat cycle at the same drawn frequency.
const LUNGE_TEMPO: f64 = 2.5;
/// How much of the full range of motion the set envelope sweeps.
const SET_RAMP: f64 = 0.9;

/// Amplitude scale at relative clip time `r ∈ [0, 1)`. Squat sets deepen
/// from shallow repetitions, lunge sets start deep and tire.
fn set_envelope(label: ExerciseLabel, r: f64) -> f64 {
    match label {
        ExerciseLabel::BODY_WEIGHT_SQUATS => 1.0 - SET_RAMP * (1.0 - r),
        ExerciseLabel::LUNGES => 1.0 - SET_RAMP * r,
        _ => 1.0,
    }
}

fn class_pose(label: ExerciseLabel, phase: f64, amp: f64) -> Pose {
    let cycle = 0.5 * (1.0 - phase.cos());
    match label.index() {
        0 | 1 => {
            let lead = if (phase / (2.0 * PI)).floor().rem_euclid(2.0) == 1.0 {
                -1.0
            } else {
                1.0
            };
            let depth = 0.9 * amp * cycle;
            Pose {
                depth,
                stride: lead * 0.8 * depth,
                body_pitch: 0.2 * depth,
                arm_elevation: depth,
                elbow_bend: 0.2,
                ..Pose::default()
            }
        }
        2 => {
            let bend = 1.2 * amp * cycle;
            Pose {
                body_pitch: FRAC_PI_2 - 0.15 * bend,
                arm_elevation: FRAC_PI_2 + 0.3 * bend,
                arm_abduction: 0.3,
                elbow_bend: bend,
                ..Pose::default()
            }
        }
        _ => Pose {
            depth: 0.2 + 0.1 * amp * phase.sin(),
            torso_yaw: 1.2 * amp * phase.sin(),
            arm_abduction: 1.3,
            arm_elevation: 0.2 * amp * phase.cos(),
            elbow_bend: 0.1,
            body_pitch: 0.1,
            ..Pose::default()
        },
    }
}

/// Visibility proxy: points turned away from the camera are less visible.
fn base_visibility(p: V3) -> f64 {
    (0.95 - 0.6 * p[2].max(0.0)).clamp(0.0, 1.0)
}

/// One clip of `len` frames starting at `phase0` with `freq` cycles.
/// Jitter and noise come from `rng`.
fn clip(
    spec: &SynthSpec,
    label: ExerciseLabel,
    len: usize,
    phase0: f64,
    freq: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<[f32; FRAME_FEATURES]> {
    let j = spec.pose_jitter;
    let mut jitter = |r: f64| {
        if j > 0.0 {
            rng.random_range(-j * r..=j * r)
        } else {
            0.0
        }
    };
    let body_scale = 1.0 + jitter(1.0);
    let view = jitter(3.0);
    let amp = 1.0 + jitter(1.5);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let tempo = if label == ExerciseLabel::LUNGES {
        LUNGE_TEMPO
    } else {
        1.0
    };

    (0..len)
        .map(|t| {
            let phase = phase0 + 2.0 * PI * tempo * freq * t as f64 / len as f64;
            let envelope = set_envelope(label, t as f64 / len as f64);
            let pts = skeleton(&class_pose(label, phase, amp * envelope));
            let dropped =
                spec.visibility_dropout_prob > 0.0 && rng.random_bool(spec.visibility_dropout_prob);
            let mut out = [0f32; FRAME_FEATURES];
            for (i, p) in pts.iter().enumerate() {
                let p = scale(yaw(*p, view), BODY_SCALE * body_scale);
                let mut n = || {
                    if spec.noise_sigma > 0.0 {
                        noise.sample(rng)
                    } else {
                        0.0
                    }
                };
                let v = (base_visibility(p) + 3.0 * n()).clamp(0.0, 1.0);
                let q = [p[0] + n(), p[1] + n(), p[2] + n(), v];
                for k in 0..4 {
                    out[4 * i + k] = if dropped { f32::NAN } else { q[k] as f32 };
                }
            }
            out
        })
        .collect()
}

/// Generates `counts[c]` clips of every class. Each clip draws from its own
/// stream of the seed, so output is independent of generation order.
pub fn generate(spec: &SynthSpec) -> Result<LandmarkFile> {
    spec.validate()?;
    let registry = ClassRegistry::default();
    let mut file = LandmarkFile::new(registry.clone());
    file.header.fps = Some(30.0);
    for (c, &count) in spec.counts.iter().enumerate() {
        let label = ExerciseLabel(c);
        for n in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((c as u64) << 32) | n as u64);
            let len = rng.random_range(spec.t_min..=spec.t_max);
            let phase0 = rng.random_range(0.0..4.0 * PI);
            let freq = if spec.freq_max > spec.freq_min {
                rng.random_range(spec.freq_min..spec.freq_max)
            } else {
                spec.freq_min
            };
            let frames = clip(spec, label, len, phase0, freq, &mut rng)
                .iter()
                .map(|raw| sanitize_frame(raw))
                .collect::<Result<Vec<_>>>()?;
            file.sequences.push(SequenceRecord {
                sequence_id: format!("{}-{n:04}", registry.name(label)),
                label: Some(label),
                frames,
            });
        }
    }
    Ok(file)
}
