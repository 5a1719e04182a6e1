//! Newline-delimited JSON landmark files.
//!
//! ```text
//! {"format_version":1,"fps":30.0,"class_registry":["BodyWeightSquats","Lunges","PushUps","ThrowingDiscus"]}
//! {"sequence_id":"squat-0000","label":"BodyWeightSquats","frames":[[[x,y,z,v], ... 33 points], ...]}
//! ```
//!
//! The first line is the header; every following non-empty line is one
//! sequence. Values are 32-bit floats written in shortest round-trip form;
//! non-finite values are written as the string `"NaN"`. Frames are stored
//! raw and sanitized on load.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    pad_or_truncate, sanitize_frame, ClassRegistry, ExerciseLabel, LandmarkFrame, PoseSequence,
    FEATURES_PER_POINT, NUM_LANDMARKS,
};
use crate::error::{Error, Result};

pub const LANDMARK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f32>,
    pub class_registry: ClassRegistry,
}

impl Default for FileHeader {
    fn default() -> Self {
        Self {
            format_version: LANDMARK_FORMAT_VERSION,
            fps: None,
            class_registry: ClassRegistry::default(),
        }
    }
}

/// One unpadded clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub sequence_id: String,
    pub label: Option<ExerciseLabel>,
    pub frames: Vec<LandmarkFrame>,
}

impl SequenceRecord {
    pub fn real_len(&self) -> usize {
        self.frames.iter().filter(|f| !f.is_padding()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LandmarkFile {
    pub header: FileHeader,
    pub sequences: Vec<SequenceRecord>,
}

/// An `f32` that serializes non-finite values as the string `"NaN"`.
#[derive(Debug, Clone, Copy)]
pub struct NanFloat(pub f32);

impl Serialize for NanFloat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f32(self.0)
        } else {
            s.serialize_str("NaN")
        }
    }
}

impl<'de> Deserialize<'de> for NanFloat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = NanFloat;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or \"NaN\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<NanFloat, E> {
                Ok(NanFloat(v as f32))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<NanFloat, E> {
                Ok(NanFloat(v as f32))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<NanFloat, E> {
                Ok(NanFloat(v as f32))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<NanFloat, E> {
                if v == "NaN" {
                    Ok(NanFloat(f32::NAN))
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    sequence_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    frames: Vec<Vec<[NanFloat; FEATURES_PER_POINT]>>,
}

impl LandmarkFile {
    pub fn new(class_registry: ClassRegistry) -> Self {
        Self {
            header: FileHeader {
                class_registry,
                ..FileHeader::default()
            },
            sequences: Vec::new(),
        }
    }

    /// Parses a landmark file. `origin` is only used in error messages.
    pub fn from_reader(reader: impl Read, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(reader).lines().enumerate();
        let header: FileHeader = loop {
            match lines.next() {
                None => return Err(err(1, "missing header record".into())),
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io(origin, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line)
                        .map_err(|e| err(i + 1, format!("header: {e}")))?;
                }
            }
        };
        if header.format_version != LANDMARK_FORMAT_VERSION {
            return Err(err(
                1,
                format!(
                    "format_version {} is not supported (expected {LANDMARK_FORMAT_VERSION})",
                    header.format_version
                ),
            ));
        }
        ClassRegistry::new(header.class_registry.names().to_vec())
            .map_err(|e| err(1, e.to_string()))?;

        let mut sequences = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(&line)
                .map_err(|e| err(line_no, format!("record {}: {e}", sequences.len())))?;
            let id = raw.sequence_id;
            let label = match raw.label {
                None => None,
                Some(name) => Some(header.class_registry.lookup(&name).ok_or_else(|| {
                    err(line_no, format!("sequence {id:?}: unknown label {name:?}"))
                })?),
            };
            let mut frames = Vec::with_capacity(raw.frames.len());
            for (fi, pts) in raw.frames.iter().enumerate() {
                if pts.len() != NUM_LANDMARKS {
                    return Err(err(
                        line_no,
                        format!(
                            "sequence {id:?}: frame {fi} has {} landmarks, expected {NUM_LANDMARKS}",
                            pts.len()
                        ),
                    ));
                }
                let values: Vec<f32> = pts.iter().flatten().map(|n| n.0).collect();
                frames.push(sanitize_frame(&values).map_err(|e| err(line_no, e.to_string()))?);
            }
            sequences.push(SequenceRecord {
                sequence_id: id,
                label,
                frames,
            });
        }
        Ok(Self { header, sequences })
    }

    pub fn to_writer(&self, mut w: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for seq in &self.sequences {
            let raw = RawRecord {
                sequence_id: seq.sequence_id.clone(),
                label: seq
                    .label
                    .map(|l| self.header.class_registry.name(l).to_string()),
                frames: seq
                    .frames
                    .iter()
                    .map(|f| {
                        f.points()
                            .iter()
                            .map(|p| {
                                [
                                    NanFloat(p.x),
                                    NanFloat(p.y),
                                    NanFloat(p.z),
                                    NanFloat(p.visibility),
                                ]
                            })
                            .collect()
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut w, &raw)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    /// Pads or truncates every sequence to `max_seq_len`.
    pub fn to_sequences(&self, max_seq_len: usize) -> Result<Vec<PoseSequence>> {
        self.sequences
            .iter()
            .map(|r| {
                let mut s = pad_or_truncate(&r.frames, max_seq_len).map_err(|e| {
                    Error::MalformedInput(format!("sequence {:?}: {e}", r.sequence_id))
                })?;
                s.label = r.label;
                Ok(s)
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

pub fn read_landmark_file(path: impl AsRef<Path>) -> Result<LandmarkFile> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    LandmarkFile::from_reader(f, path)
}

pub fn write_landmark_file(path: impl AsRef<Path>, file: &LandmarkFile) -> Result<()> {
    let path: PathBuf = path.as_ref().into();
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.to_writer(BufWriter::new(f))
        .map_err(|e| Error::io(&path, e))
}
