//! Run configuration: `key = value` lines, `#` comments.
//!
//! Precedence, lowest first: built-in defaults, `--config` file,
//! `KVSWARM_SEED`, command-line flags. The canonical rendering (every key,
//! sorted) plus the digests of input files is hashed into the run id.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use kvswarm_core::sim::{Addressing, DeviceModel, Mode, Selection};
use kvswarm_core::trace::Normalization;
use kvswarm_core::workload::{PlantedSpec, Popularity};
use kvswarm_core::AssignPolicy;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
}

/// Inclusive list of sweep points, written `a`, `a,b,c` or `lo..hi[:step]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep<T>(pub Vec<T>);

impl<T: fmt::Display> fmt::Display for Sweep<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl Sweep<u32> {
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Some((lo, rest)) = s.split_once("..") {
            let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
            let lo: u32 = lo.trim().parse().map_err(|_| "bad range start")?;
            let hi: u32 = hi.trim().parse().map_err(|_| "bad range end")?;
            let step: u32 = step.trim().parse().map_err(|_| "bad range step")?;
            if step == 0 || lo > hi {
                return Err("empty range".into());
            }
            return Ok(Sweep((lo..=hi).step_by(step as usize).collect()));
        }
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| format!("bad number `{x}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Sweep)
    }
}

impl Sweep<f64> {
    /// `lo..hi` without a step advances by `lo`, so `0.02..0.2` gives ten
    /// points.
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Some((lo, rest)) = s.split_once("..") {
            let lo: f64 = lo.trim().parse().map_err(|_| "bad range start")?;
            let (hi, step) = match rest.split_once(':') {
                Some((h, st)) => (h, st.trim().parse().map_err(|_| "bad range step")?),
                None => (rest, lo),
            };
            let hi: f64 = hi.trim().parse().map_err(|_| "bad range end")?;
            if step.is_nan() || step <= 0.0 || lo > hi {
                return Err("empty range".into());
            }
            let n = ((hi - lo) / step + 1e-9).floor() as usize;
            // rounded to 1e-9 so 0.1 + 0.2 style drift never leaks into output
            let pts = (0..=n)
                .map(|k| ((lo + k as f64 * step) * 1e9).round() / 1e9)
                .collect();
            return Ok(Sweep(pts));
        }
        s.split(',')
            .map(|x| x.trim().parse().map_err(|_| format!("bad number `{x}`")))
            .collect::<Result<Vec<_>, _>>()
            .map(Sweep)
    }
}

/// Entry sizes from per-model hidden dimensions.
pub const MODELS: &[(&str, u64)] = &[
    ("qwen3-14b", 5120),
    ("qwen3-32b", 5120),
    ("llama3.1-70b", 8192),
    ("gpt-oss-120b", 2880),
    ("qwen3-235b", 4096),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignKind {
    Coactivation,
    MinSize,
    MinDiff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // workload
    pub entries: u32,
    pub groups: u32,
    pub overlap: f64,
    pub noise: f64,
    pub sparsity: Sweep<f64>,
    pub steps: u32,
    pub decode_steps: u32,
    pub new_per_step: u32,
    pub popularity: String,
    pub zipf_exponent: f64,
    // clustering
    pub tau: Option<f64>,
    pub calibrate: f64,
    pub normalization: Normalization,
    pub max_replicas: usize,
    pub profile_fraction: f64,
    // storage
    pub disks: Sweep<u32>,
    pub device: String,
    pub t_base_us: f64,
    pub model: String,
    pub entry_size: u64,
    pub addressing: Addressing,
    // runtime
    pub modes: Vec<Mode>,
    pub selection: Selection,
    pub window: usize,
    pub cache_ratio: f64,
    pub adaptive_cache: bool,
    pub adapt_window: u32,
    pub adapt_tau: f64,
    pub assign: AssignKind,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            entries: 1024,
            groups: 16,
            overlap: 0.1,
            noise: 0.02,
            sparsity: Sweep(vec![0.1]),
            steps: 512,
            decode_steps: 0,
            new_per_step: 1,
            popularity: "zipf".into(),
            zipf_exponent: 1.0,
            tau: None,
            calibrate: 0.25,
            normalization: Normalization::Global,
            max_replicas: 0,
            profile_fraction: 0.5,
            disks: Sweep(vec![4]),
            device: "pm9a3".into(),
            t_base_us: 5.0,
            model: "qwen3-32b".into(),
            entry_size: 0,
            addressing: Addressing::PerStep,
            modes: vec![Mode::Swarm, Mode::NoBalance, Mode::Static, Mode::NoDedup],
            selection: Selection::Oracle,
            window: 64,
            cache_ratio: 0.1,
            adaptive_cache: true,
            adapt_window: 16,
            adapt_tau: 0.95,
            assign: AssignKind::Coactivation,
            threads: 0,
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| bad(key, value, "not a valid number or flag"))
}

fn fraction(key: &str, value: &str, lo_open: bool) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    let ok = if lo_open {
        v > 0.0 && v <= 1.0
    } else {
        (0.0..=1.0).contains(&v)
    };
    if ok {
        Ok(v)
    } else {
        Err(bad(key, value, "out of range"))
    }
}

pub const KEYS: &[&str] = &[
    "adapt_tau",
    "adapt_window",
    "adaptive_cache",
    "addressing",
    "assign",
    "cache_ratio",
    "calibrate",
    "decode_steps",
    "device",
    "disks",
    "entries",
    "entry_size",
    "groups",
    "max_replicas",
    "model",
    "modes",
    "new_per_step",
    "noise",
    "normalization",
    "overlap",
    "popularity",
    "profile_fraction",
    "seed",
    "selection",
    "sparsity",
    "steps",
    "t_base_us",
    "tau",
    "threads",
    "window",
    "zipf_exponent",
];

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "entries" => self.entries = parse(key, v)?,
            "groups" => self.groups = parse(key, v)?,
            "overlap" => self.overlap = fraction(key, v, false)?,
            "noise" => {
                let n: f64 = parse(key, v)?;
                if !(0.0..1.0).contains(&n) {
                    return Err(bad(key, v, "must be in [0, 1)"));
                }
                self.noise = n;
            }
            "sparsity" => {
                let s = Sweep::<f64>::parse(v).map_err(|r| bad(key, v, r))?;
                if s.0.iter().any(|&x| !(x > 0.0 && x <= 1.0)) {
                    return Err(bad(key, v, "must be in (0, 1]"));
                }
                self.sparsity = s;
            }
            "steps" => self.steps = parse(key, v)?,
            "decode_steps" => self.decode_steps = parse(key, v)?,
            "new_per_step" => self.new_per_step = parse(key, v)?,
            "popularity" => match v {
                "zipf" | "uniform" => self.popularity = v.into(),
                _ => return Err(bad(key, v, "expected zipf or uniform")),
            },
            "zipf_exponent" => self.zipf_exponent = parse(key, v)?,
            "tau" => {
                self.tau = match v {
                    "auto" => None,
                    _ => {
                        let t: f64 = parse(key, v)?;
                        if !(t > 0.0 && t < 1.0) {
                            return Err(bad(key, v, "must be strictly inside (0, 1)"));
                        }
                        Some(t)
                    }
                }
            }
            "calibrate" => self.calibrate = fraction(key, v, true)?,
            "normalization" => {
                self.normalization = match v {
                    "global" => Normalization::Global,
                    "max-pair" => Normalization::MaxPair,
                    _ => return Err(bad(key, v, "expected global or max-pair")),
                }
            }
            "max_replicas" => self.max_replicas = parse(key, v)?,
            "profile_fraction" => self.profile_fraction = fraction(key, v, true)?,
            "disks" => {
                let s = Sweep::<u32>::parse(v).map_err(|r| bad(key, v, r))?;
                if s.0.contains(&0) {
                    return Err(bad(key, v, "need at least one device"));
                }
                self.disks = s;
            }
            "device" => match v {
                "pm9a3" | "optane900p" => self.device = v.into(),
                _ => return Err(bad(key, v, "expected pm9a3 or optane900p")),
            },
            "t_base_us" => {
                let t: f64 = parse(key, v)?;
                if !(t > 0.0 && t.is_finite()) {
                    return Err(bad(key, v, "must be positive"));
                }
                self.t_base_us = t;
            }
            "model" => {
                if !MODELS.iter().any(|(m, _)| *m == v) {
                    return Err(bad(key, v, "unknown model preset"));
                }
                self.model = v.into();
            }
            "entry_size" => self.entry_size = parse(key, v)?,
            "addressing" => {
                self.addressing = match v {
                    "per_step" => Addressing::PerStep,
                    "per_entry" => Addressing::PerEntry,
                    _ => return Err(bad(key, v, "expected per_step or per_entry")),
                }
            }
            "modes" => {
                let mut modes = Vec::new();
                for m in v.split(',') {
                    let m: Mode = m.trim().parse().map_err(|_| bad(key, v, "unknown mode"))?;
                    if !modes.contains(&m) {
                        modes.push(m);
                    }
                }
                self.modes = modes;
            }
            "selection" => {
                self.selection = v
                    .parse()
                    .map_err(|_| bad(key, v, "expected oracle or medoid"))?
            }
            "window" => self.window = parse(key, v)?,
            "cache_ratio" => self.cache_ratio = fraction(key, v, false)?,
            "adaptive_cache" => self.adaptive_cache = parse(key, v)?,
            "adapt_window" => {
                let w: u32 = parse(key, v)?;
                if w == 0 {
                    return Err(bad(key, v, "must be positive"));
                }
                self.adapt_window = w;
            }
            "adapt_tau" => self.adapt_tau = fraction(key, v, true)?,
            "assign" => {
                self.assign = match v {
                    "coactivation" => AssignKind::Coactivation,
                    "min_size" => AssignKind::MinSize,
                    "min_diff" => AssignKind::MinDiff,
                    _ => return Err(bad(key, v, "expected coactivation, min_size or min_diff")),
                }
            }
            "threads" => self.threads = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    /// Applies a config file's contents.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key {
            "seed" => self.seed.to_string(),
            "entries" => self.entries.to_string(),
            "groups" => self.groups.to_string(),
            "overlap" => self.overlap.to_string(),
            "noise" => self.noise.to_string(),
            "sparsity" => self.sparsity.to_string(),
            "steps" => self.steps.to_string(),
            "decode_steps" => self.decode_steps.to_string(),
            "new_per_step" => self.new_per_step.to_string(),
            "popularity" => self.popularity.clone(),
            "zipf_exponent" => self.zipf_exponent.to_string(),
            "tau" => self.tau.map_or("auto".into(), |t| t.to_string()),
            "calibrate" => self.calibrate.to_string(),
            "normalization" => match self.normalization {
                Normalization::Global => "global".into(),
                Normalization::MaxPair => "max-pair".into(),
            },
            "max_replicas" => self.max_replicas.to_string(),
            "profile_fraction" => self.profile_fraction.to_string(),
            "disks" => self.disks.to_string(),
            "device" => self.device.clone(),
            "t_base_us" => self.t_base_us.to_string(),
            "model" => self.model.clone(),
            "entry_size" => self.entry_size.to_string(),
            "addressing" => match self.addressing {
                Addressing::PerStep => "per_step".into(),
                Addressing::PerEntry => "per_entry".into(),
            },
            "modes" => self
                .modes
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
            "selection" => self.selection.name().into(),
            "window" => self.window.to_string(),
            "cache_ratio" => self.cache_ratio.to_string(),
            "adaptive_cache" => self.adaptive_cache.to_string(),
            "adapt_window" => self.adapt_window.to_string(),
            "adapt_tau" => self.adapt_tau.to_string(),
            "assign" => match self.assign {
                AssignKind::Coactivation => "coactivation".into(),
                AssignKind::MinSize => "min_size".into(),
                AssignKind::MinDiff => "min_diff".into(),
            },
            "threads" => self.threads.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.get(k).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn planted_spec(&self, sparsity: f64) -> PlantedSpec {
        PlantedSpec {
            n_entries: self.entries,
            n_groups: self.groups,
            group_overlap: self.overlap,
            sparsity,
            noise: self.noise,
            steps: self.steps,
            decode_steps: self.decode_steps,
            new_per_step: self.new_per_step,
            popularity: if self.popularity == "uniform" {
                Popularity::Uniform
            } else {
                Popularity::Zipf(self.zipf_exponent)
            },
            seed: self.seed,
        }
    }

    pub fn device_model(&self) -> DeviceModel {
        let mut d = match self.device.as_str() {
            "optane900p" => DeviceModel::optane_900p(),
            _ => DeviceModel::pm9a3(),
        };
        d.t_base = self.t_base_us;
        d
    }

    pub fn entry_bytes(&self) -> u64 {
        if self.entry_size > 0 {
            return self.entry_size;
        }
        let hidden = MODELS
            .iter()
            .find(|(m, _)| *m == self.model)
            .map(|(_, h)| *h)
            .unwrap_or(5120);
        kvswarm_core::sim::entry_size_for_hidden(hidden)
    }

    pub fn assign_policy(&self) -> AssignPolicy {
        match self.assign {
            AssignKind::Coactivation => AssignPolicy::Coactivation {
                tau: self.adapt_tau,
            },
            AssignKind::MinSize => AssignPolicy::MinSize,
            AssignKind::MinDiff => AssignPolicy::MinDiff,
        }
    }
}

/// SHA-256 over the command name, canonical config and input digests.
pub fn config_hash(command: &str, cfg: &RunConfig, inputs: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    h.update(b"kvswarm 1\n");
    h.update(command.as_bytes());
    h.update(b"\n");
    h.update(cfg.canonical().as_bytes());
    for (name, digest) in inputs {
        h.update(format!("input {name} {digest}\n").as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
