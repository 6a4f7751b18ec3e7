//! Experiment configuration: flat key-value files with dotted section keys,
//! every key overridable from the command line.
//!
//! A `scale` profile (`desk` or `paper`) supplies the defaults; file entries
//! and CLI overrides are then applied on top, in that order.

use std::path::{Path, PathBuf};

use bopinn::bo::BoConfig;
use bopinn::lbfgs::LbfgsOptions;
use bopinn::wave::{WaveDomain, SPEED_RANGE};
use bopinn::{Error, Result};

/// Problem size profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Small domain and network; minutes-scale experiments.
    Desk,
    /// Full-size domain, deep network, dropout; hours-scale experiments.
    Paper,
}

impl Scale {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(Error::Config(format!("unknown scale {other:?} (expected desk|paper)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

/// Which forward model the target function uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Pinn,
    Analytic,
}

impl ForwardMode {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pinn" => Ok(ForwardMode::Pinn),
            "analytic" => Ok(ForwardMode::Analytic),
            other => Err(Error::Config(format!(
                "unknown forward mode {other:?} (expected pinn|analytic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForwardMode::Pinn => "pinn",
            ForwardMode::Analytic => "analytic",
        }
    }
}

/// Snapshot generation settings.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotConfig {
    pub t_obs: f64,
    pub n_sensors: usize,
    pub snr_db: f64,
}

/// PINN training settings used by the pinn forward mode.
#[derive(Debug, Clone)]
pub struct PinnConfig {
    pub arch: Vec<usize>,
    pub n_interior: usize,
    pub n_initial: usize,
    pub n_boundary: usize,
    pub dropout_rate: f64,
    pub opts: LbfgsOptions,
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub cases: Vec<f64>,
    pub runs: usize,
    pub seed_base: u64,
    pub forward_mode: ForwardMode,
    pub out_dir: PathBuf,
    pub domain: WaveDomain,
    pub snapshot: SnapshotConfig,
    pub bo: BoConfig,
    pub pinn: PinnConfig,
}

impl ExperimentConfig {
    /// Profile defaults for a scale.
    pub fn for_scale(scale: Scale) -> Self {
        let (domain, arch, colloc, max_iters, dropout) = match scale {
            Scale::Desk => (WaveDomain::desk(), vec![2, 32, 32, 32, 1], (2000, 200, 200), 500, 0.0),
            Scale::Paper => (
                WaveDomain::full(),
                vec![2, 64, 128, 128, 128, 128, 64, 1],
                (25_000, 500, 500),
                5000,
                0.1,
            ),
        };
        Self {
            scale,
            cases: vec![0.2, 0.55, 0.85],
            runs: 10,
            seed_base: 0,
            forward_mode: ForwardMode::Pinn,
            out_dir: PathBuf::from("out"),
            domain,
            snapshot: SnapshotConfig {
                t_obs: 0.25,
                n_sensors: 256,
                snr_db: 36.34,
            },
            bo: BoConfig::default(),
            pinn: PinnConfig {
                arch,
                n_interior: colloc.0,
                n_initial: colloc.1,
                n_boundary: colloc.2,
                dropout_rate: dropout,
                opts: LbfgsOptions {
                    memory: 20,
                    max_iters,
                    ..LbfgsOptions::default()
                },
            },
        }
    }

    /// Every key accepted in config files and as a `--key value` CLI flag.
    pub const KEYS: &'static [&'static str] = &[
        "scale",
        "cases",
        "runs",
        "seed_base",
        "forward",
        "out_dir",
        "domain.length",
        "domain.horizon",
        "snapshot.t_obs",
        "snapshot.n_sensors",
        "snapshot.snr_db",
        "bo.c_lo",
        "bo.c_hi",
        "bo.n_init",
        "bo.n_iters",
        "bo.kappa",
        "bo.acq_grid",
        "pinn.arch",
        "pinn.n_interior",
        "pinn.n_initial",
        "pinn.n_boundary",
        "pinn.dropout",
        "pinn.max_iters",
        "pinn.memory",
        "pinn.grad_tol",
    ];

    /// Apply one `key = value` entry.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {what}"));
        match key {
            "scale" => {
                // Scale is a profile selector; swapping it after the fact
                // would silently discard earlier overrides.
                return Err(Error::Config(
                    "scale must be resolved before other keys (use --scale or put it first)".into(),
                ));
            }
            "cases" => {
                self.cases = value
                    .split(',')
                    .map(|s| parse_f64(s).ok_or_else(|| bad("cases")))
                    .collect::<Result<_>>()?;
            }
            "runs" => self.runs = value.parse().map_err(|_| bad("runs"))?,
            "seed_base" => self.seed_base = value.parse().map_err(|_| bad("seed_base"))?,
            "forward" => self.forward_mode = ForwardMode::from_name(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "domain.length" => {
                let l = parse_f64(value).ok_or_else(|| bad("domain.length"))?;
                self.domain = WaveDomain::new(l, self.domain.horizon())?;
            }
            "domain.horizon" => {
                let t = parse_f64(value).ok_or_else(|| bad("domain.horizon"))?;
                self.domain = WaveDomain::new(self.domain.length(), t)?;
            }
            "snapshot.t_obs" => self.snapshot.t_obs = parse_f64(value).ok_or_else(|| bad("snapshot.t_obs"))?,
            "snapshot.n_sensors" => self.snapshot.n_sensors = value.parse().map_err(|_| bad("snapshot.n_sensors"))?,
            "snapshot.snr_db" => self.snapshot.snr_db = parse_f64(value).ok_or_else(|| bad("snapshot.snr_db"))?,
            "bo.c_lo" => self.bo.bounds.0 = parse_f64(value).ok_or_else(|| bad("bo.c_lo"))?,
            "bo.c_hi" => self.bo.bounds.1 = parse_f64(value).ok_or_else(|| bad("bo.c_hi"))?,
            "bo.n_init" => self.bo.n_init = value.parse().map_err(|_| bad("bo.n_init"))?,
            "bo.n_iters" => self.bo.n_iters = value.parse().map_err(|_| bad("bo.n_iters"))?,
            "bo.kappa" => self.bo.kappa = parse_f64(value).ok_or_else(|| bad("bo.kappa"))?,
            "bo.acq_grid" => self.bo.acq_grid = value.parse().map_err(|_| bad("bo.acq_grid"))?,
            "pinn.arch" => {
                self.pinn.arch = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| bad("pinn.arch")))
                    .collect::<std::result::Result<_, _>>()?;
            }
            "pinn.n_interior" => self.pinn.n_interior = value.parse().map_err(|_| bad("pinn.n_interior"))?,
            "pinn.n_initial" => self.pinn.n_initial = value.parse().map_err(|_| bad("pinn.n_initial"))?,
            "pinn.n_boundary" => self.pinn.n_boundary = value.parse().map_err(|_| bad("pinn.n_boundary"))?,
            "pinn.dropout" => self.pinn.dropout_rate = parse_f64(value).ok_or_else(|| bad("pinn.dropout"))?,
            "pinn.max_iters" => self.pinn.opts.max_iters = value.parse().map_err(|_| bad("pinn.max_iters"))?,
            "pinn.memory" => self.pinn.opts.memory = value.parse().map_err(|_| bad("pinn.memory"))?,
            "pinn.grad_tol" => self.pinn.opts.grad_tol = parse_f64(value).ok_or_else(|| bad("pinn.grad_tol"))?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.cases.is_empty() {
            // An empty case list is permitted (it produces an empty table),
            // but the values that are present must be usable.
            return Ok(());
        }
        let (lo, hi) = self.bo.bounds;
        for &c in &self.cases {
            if !(lo..=hi).contains(&c) {
                return Err(Error::Config(format!(
                    "case {c} lies outside bo bounds [{lo}, {hi}]"
                )));
            }
            if !(SPEED_RANGE.0..=SPEED_RANGE.1).contains(&c) {
                return Err(Error::Config(format!(
                    "case {c} lies outside the admissible speed range"
                )));
            }
        }
        self.bo.validate()?;
        self.pinn.opts.validate()?;
        if !(0.0..=self.domain.horizon()).contains(&self.snapshot.t_obs) {
            return Err(Error::Config(format!(
                "snapshot.t_obs = {} outside [0, {}]",
                self.snapshot.t_obs,
                self.domain.horizon()
            )));
        }
        if self.snapshot.n_sensors < 2 {
            return Err(Error::Config("snapshot.n_sensors must be >= 2".into()));
        }
        Ok(())
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        other => other.parse().ok(),
    }
}

/// Parse a config file into `(key, value)` entries. Lines are `key = value`;
/// `#` starts a comment; blank lines are ignored.
pub fn parse_config_text(text: &str, path_label: &str) -> Result<Vec<(String, String)>> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path_label.to_string(),
            message: format!("line {}: expected 'key = value', got {raw:?}", lineno + 1),
        })?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(entries)
}

/// Load a config file and fold in CLI overrides. `overrides` are applied
/// after the file; a `scale` entry in either place selects the base profile.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let file_entries = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            parse_config_text(&text, &p.display().to_string())?
        }
        None => Vec::new(),
    };

    let scale_of = |entries: &[(String, String)]| -> Result<Option<Scale>> {
        entries
            .iter()
            .rev()
            .find(|(k, _)| k == "scale")
            .map(|(_, v)| Scale::from_name(v))
            .transpose()
    };
    let scale = scale_of(overrides)?
        .or(scale_of(&file_entries)?)
        .unwrap_or(Scale::Desk);

    let mut cfg = ExperimentConfig::for_scale(scale);
    for (key, value) in file_entries.iter().chain(overrides) {
        if key == "scale" {
            continue;
        }
        cfg.apply(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_differ_where_expected() {
        let desk = ExperimentConfig::for_scale(Scale::Desk);
        let paper = ExperimentConfig::for_scale(Scale::Paper);
        assert_eq!(desk.domain.length(), 1.0);
        assert_eq!(paper.domain.length(), 10.0);
        assert_eq!(paper.pinn.arch, vec![2, 64, 128, 128, 128, 128, 64, 1]);
        assert_eq!(paper.pinn.n_interior, 25_000);
        assert_eq!(paper.pinn.dropout_rate, 0.1);
        assert_eq!(desk.bo.n_iters, 50);
        assert_eq!(desk.bo.kappa, 2.45);
        assert_eq!(desk.runs, 10);
    }

    #[test]
    fn file_and_cli_overrides_apply_in_order() {
        let text = "# comment\nruns = 3\nbo.kappa = 1.5\ncases = 0.2, 0.85\n";
        let entries = parse_config_text(text, "test").unwrap();
        let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
        for (k, v) in &entries {
            cfg.apply(k, v).unwrap();
        }
        assert_eq!(cfg.runs, 3);
        assert_eq!(cfg.bo.kappa, 1.5);
        assert_eq!(cfg.cases, vec![0.2, 0.85]);
        cfg.apply("bo.kappa", "2.0").unwrap();
        assert_eq!(cfg.bo.kappa, 2.0);
    }

    #[test]
    fn bad_entries_are_config_errors() {
        let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
        assert!(cfg.apply("runs", "three").is_err());
        assert!(cfg.apply("no.such.key", "1").is_err());
        assert!(cfg.apply("forward", "magic").is_err());
        assert!(parse_config_text("runs 3", "t").is_err());
    }

    #[test]
    fn validation_catches_out_of_band_cases() {
        let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
        cfg.cases = vec![0.05];
        assert!(cfg.validate().is_err());
        cfg.cases = vec![0.5];
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn every_documented_key_is_applicable() {
        let mut cfg = ExperimentConfig::for_scale(Scale::Desk);
        for key in ExperimentConfig::KEYS {
            if *key == "scale" {
                continue;
            }
            let value = match *key {
                "cases" => "0.3,0.4",
                "forward" => "analytic",
                "out_dir" => "somewhere",
                "pinn.arch" => "2,8,1",
                _ => "1",
            };
            cfg.apply(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
