//! Config file layering: built-in defaults, then the TOML file, then flags.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use repsense_core::serving::DEFAULT_WINDOW_SIZE;
use repsense_core::{ModelConfig, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub listen: SocketAddr,
    pub window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_seq_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8765".parse().expect("literal address"),
            window: DEFAULT_WINDOW_SIZE,
            max_seq_len: None,
            log: None,
        }
    }
}

/// Everything a run can be configured with. Unused sections are ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub serve: ServeSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Renders the sections that a subcommand actually uses.
pub fn render<T: Serialize>(section: &str, value: &T) -> String {
    let mut table = toml::Table::new();
    table.insert(
        section.to_string(),
        toml::Value::try_from(value).expect("config sections are TOML tables"),
    );
    toml::to_string(&table).expect("config renders")
}

#[derive(Debug, Args)]
pub struct SynthFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sequences per class.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub t_min: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Probability that a frame is lost entirely.
    #[arg(long)]
    pub dropout_prob: Option<f64>,
    /// Minimum motion cycles per clip.
    #[arg(long)]
    pub freq_min: Option<f64>,
    #[arg(long)]
    pub freq_max: Option<f64>,
    #[arg(long)]
    pub pose_jitter: Option<f64>,
}

impl SynthFlags {
    pub fn apply(&self, s: &mut SynthSpec) {
        set(&mut s.seed, self.seed);
        if let Some(n) = self.per_class {
            s.counts = vec![n; s.counts.len()];
        }
        set(&mut s.t_min, self.t_min);
        set(&mut s.t_max, self.t_max);
        set(&mut s.noise_sigma, self.noise_sigma);
        set(&mut s.visibility_dropout_prob, self.dropout_prob);
        set(&mut s.freq_min, self.freq_min);
        set(&mut s.freq_max, self.freq_max);
        set(&mut s.pose_jitter, self.pose_jitter);
    }
}

#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Units per LSTM layer, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lstm_units: Option<Vec<usize>>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub pad_value: Option<f32>,
}

impl ModelFlags {
    pub fn apply(&self, m: &mut ModelConfig) {
        set(&mut m.lstm_units, self.lstm_units.clone());
        set(&mut m.max_seq_len, self.max_seq_len);
        set(&mut m.pad_value, self.pad_value);
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub recurrent_dropout: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Keep the training order fixed across epochs.
    #[arg(long)]
    pub no_shuffle: bool,
}

impl TrainFlags {
    pub fn apply(&self, t: &mut TrainConfig) {
        set(&mut t.seed, self.seed);
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.rmsprop_rho, self.rho);
        set(&mut t.rmsprop_epsilon, self.epsilon);
        set(&mut t.recurrent_dropout, self.recurrent_dropout);
        set(&mut t.val_fraction, self.val_fraction);
        if self.no_shuffle {
            t.shuffle_each_epoch = false;
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
