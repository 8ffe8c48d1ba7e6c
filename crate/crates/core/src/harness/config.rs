//! Experiment configuration: line-oriented `key = value` text with `#`
//! comments. Command-line flags are applied on top of file values.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rxchain::MIN_ESTIMATION_SYMBOLS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxMode {
    Ideal,
    Nonideal,
    Compensated,
}

impl RxMode {
    pub fn name(&self) -> &'static str {
        match self {
            RxMode::Ideal => "ideal",
            RxMode::Nonideal => "nonideal",
            RxMode::Compensated => "compensated",
        }
    }
}

impl FromStr for RxMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(RxMode::Ideal),
            "nonideal" => Ok(RxMode::Nonideal),
            "compensated" => Ok(RxMode::Compensated),
            _ => Err(Error::parse("rx_mode", format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExperimentKind {
    Fig6a,
    Fig6b,
    Fig6c,
    Fig6d,
    Fig6ef,
    Fig7,
    Fig10,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Fig6a,
        ExperimentKind::Fig6b,
        ExperimentKind::Fig6c,
        ExperimentKind::Fig6d,
        ExperimentKind::Fig6ef,
        ExperimentKind::Fig7,
        ExperimentKind::Fig10,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Fig6a => "fig6a",
            ExperimentKind::Fig6b => "fig6b",
            ExperimentKind::Fig6c => "fig6c",
            ExperimentKind::Fig6d => "fig6d",
            ExperimentKind::Fig6ef => "fig6ef",
            ExperimentKind::Fig7 => "fig7",
            ExperimentKind::Fig10 => "fig10",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::parse("experiment", format!("unknown experiment '{s}'")))
    }
}

/// Everything needed to reproduce a run. The four axis fields are lists: the
/// experiment that sweeps an axis uses the whole list, every other experiment
/// uses the first entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_tx: Vec<usize>,
    pub n_hidden: Vec<usize>,
    pub n_train_iterations: Vec<usize>,
    pub ebn0_sigma_db: Vec<f64>,
    pub frame_bits: usize,
    pub rrc_enabled: bool,
    pub rx_mode: RxMode,
    pub n_eval_frames: usize,
    pub master_seed: u64,
    /// Independent replicates per sweep point; medians are reported.
    pub replicates: usize,
    pub evals_per_device: usize,
    pub nist_fleets: usize,
    pub nist_devices: usize,
    pub max_epochs: usize,
    pub target_error: f64,
    pub output_path: PathBuf,
    /// Keys given explicitly by a file or flag.
    explicit: BTreeSet<&'static str>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_tx: vec![200],
            n_hidden: vec![50],
            n_train_iterations: vec![10],
            ebn0_sigma_db: vec![2.0],
            frame_bits: 30_000,
            rrc_enabled: true,
            rx_mode: RxMode::Ideal,
            n_eval_frames: 2000,
            master_seed: 1,
            replicates: 3,
            evals_per_device: 50,
            nist_fleets: 20,
            nist_devices: 1000,
            max_epochs: 2000,
            target_error: 1e-3,
            output_path: PathBuf::from("results"),
            explicit: BTreeSet::new(),
        }
    }
}

const KEYS: [&str; 16] = [
    "n_tx",
    "n_hidden",
    "n_train_iterations",
    "ebn0_sigma_db",
    "frame_bits",
    "rrc_enabled",
    "rx_mode",
    "n_eval_frames",
    "master_seed",
    "replicates",
    "evals_per_device",
    "nist_fleets",
    "nist_devices",
    "max_epochs",
    "target_error",
    "output_path",
];

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::parse(key.to_string(), format!("cannot parse '{}'", v.trim())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let out: Vec<T> = v.split(',').map(|s| parse_one(key, s)).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::parse(key.to_string(), "empty list"));
    }
    Ok(out)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        other => Err(Error::parse(key.to_string(), format!("cannot parse '{other}' as a flag"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| Error::parse("config", format!("unknown key '{key}'")))?;
        match key {
            "n_tx" => self.n_tx = parse_list(key, value)?,
            "n_hidden" => self.n_hidden = parse_list(key, value)?,
            "n_train_iterations" => self.n_train_iterations = parse_list(key, value)?,
            "ebn0_sigma_db" => self.ebn0_sigma_db = parse_list(key, value)?,
            "frame_bits" => self.frame_bits = parse_one(key, value)?,
            "rrc_enabled" => self.rrc_enabled = parse_bool(key, value)?,
            "rx_mode" => self.rx_mode = value.trim().parse()?,
            "n_eval_frames" => self.n_eval_frames = parse_one(key, value)?,
            "master_seed" => self.master_seed = parse_one(key, value)?,
            "replicates" => self.replicates = parse_one(key, value)?,
            "evals_per_device" => self.evals_per_device = parse_one(key, value)?,
            "nist_fleets" => self.nist_fleets = parse_one(key, value)?,
            "nist_devices" => self.nist_devices = parse_one(key, value)?,
            "max_epochs" => self.max_epochs = parse_one(key, value)?,
            "target_error" => self.target_error = parse_one(key, value)?,
            "output_path" => self.output_path = PathBuf::from(value.trim()),
            _ => unreachable!(),
        }
        self.explicit.insert(key);
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Applies every `key = value` line of `text`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", no + 1), "expected 'key = value'"))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("frame_bits", self.frame_bits),
            ("n_eval_frames", self.n_eval_frames),
            ("replicates", self.replicates),
            ("evals_per_device", self.evals_per_device),
            ("nist_fleets", self.nist_fleets),
            ("nist_devices", self.nist_devices),
            ("max_epochs", self.max_epochs),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::invalid(format!("{k} must be >= 1")));
            }
        }
        let lists = [("n_tx", &self.n_tx), ("n_hidden", &self.n_hidden), ("n_train_iterations", &self.n_train_iterations)];
        for (k, v) in lists {
            if v.iter().any(|&x| x == 0) {
                return Err(Error::invalid(format!("{k} entries must be >= 1")));
            }
        }
        if self.n_tx.iter().any(|&n| n < 2) {
            return Err(Error::invalid("n_tx entries must be >= 2"));
        }
        if self.ebn0_sigma_db.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("ebn0_sigma_db entries must be finite and >= 0"));
        }
        if !(self.target_error >= 0.0) {
            return Err(Error::invalid("target_error must be >= 0"));
        }
        if self.frame_bits % 4 != 0 {
            return Err(Error::invalid("frame_bits must be a multiple of 4"));
        }
        if self.frame_bits / 4 < MIN_ESTIMATION_SYMBOLS {
            return Err(Error::invalid(format!(
                "frame_bits must be >= {} for frequency estimation",
                4 * MIN_ESTIMATION_SYMBOLS
            )));
        }
        Ok(())
    }

    /// The configuration an experiment actually runs with: the swept axis
    /// takes the experiment's default list unless it was set explicitly.
    pub fn resolved_for(&self, kind: ExperimentKind) -> Self {
        let mut c = self.clone();
        let keep = |k: &str| self.is_explicit(k);
        match kind {
            ExperimentKind::Fig6a if !keep("n_tx") => c.n_tx = vec![10, 50, 200, 1000],
            ExperimentKind::Fig6b if !keep("n_hidden") => c.n_hidden = vec![10, 25, 50, 100],
            ExperimentKind::Fig6c if !keep("n_train_iterations") => c.n_train_iterations = vec![1, 2, 5, 10],
            ExperimentKind::Fig6d if !keep("ebn0_sigma_db") => c.ebn0_sigma_db = vec![2.0, 6.0, 10.0],
            ExperimentKind::Fig10 if !keep("n_tx") => c.n_tx = vec![100],
            _ => {}
        }
        c
    }

    /// `key = value` lines covering every field; parses back to an equal
    /// configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n_tx", join(&self.n_tx));
        put("n_hidden", join(&self.n_hidden));
        put("n_train_iterations", join(&self.n_train_iterations));
        put("ebn0_sigma_db", join(&self.ebn0_sigma_db));
        put("frame_bits", self.frame_bits.to_string());
        put("rrc_enabled", self.rrc_enabled.to_string());
        put("rx_mode", self.rx_mode.name().to_string());
        put("n_eval_frames", self.n_eval_frames.to_string());
        put("master_seed", self.master_seed.to_string());
        put("replicates", self.replicates.to_string());
        put("evals_per_device", self.evals_per_device.to_string());
        put("nist_fleets", self.nist_fleets.to_string());
        put("nist_devices", self.nist_devices.to_string());
        put("max_epochs", self.max_epochs.to_string());
        put("target_error", self.target_error.to_string());
        put("output_path", self.output_path.display().to_string());
        s
    }
}
