//! Analytical ground truth for the 1D wave problem, synthetic snapshot
//! generation, and calibrated white-noise injection.
//!
//! The governing problem is `c² u_xx = u_tt` on `[0, L] × [0, T]` with
//! `u(x, 0) = -sin(πx)`, `u̇(x, 0) = 0` and `u(0, t) = u(L, t) = 0`.
//! For integer `L` the solution is the standing wave
//! `u(x, t) = -sin(πx) · cos(πct)`; see the unit tests for the
//! finite-difference and time-stepping checks that pin this down.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Fixed linear map between physical (m/s) and scaled wave speeds.
pub const SPEED_SCALE: f64 = 10_000.0;

/// Admissible scaled-speed interval.
pub const SPEED_RANGE: (f64, f64) = (0.1, 1.0);

/// The space-time box `[0, L] × [0, T]` in scaled units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveDomain {
    length: f64,
    horizon: f64,
}

impl WaveDomain {
    /// A domain with spatial length `length` and time horizon `horizon`.
    pub fn new(length: f64, horizon: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Domain(format!("length must be positive, got {length}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { length, horizon })
    }

    /// Small domain used by default: `L = 1`, `T = 1`.
    pub fn desk() -> Self {
        Self { length: 1.0, horizon: 1.0 }
    }

    /// Full-scale domain: `L = 10`, `T = 1`.
    pub fn full() -> Self {
        Self { length: 10.0, horizon: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when `(x, t)` lies inside the box.
    pub fn contains(&self, x: f64, t: f64) -> bool {
        (0.0..=self.length).contains(&x) && (0.0..=self.horizon).contains(&t)
    }
}

/// A wave speed, stored scaled to `[0.1, 1]`; the physical speed in m/s is
/// `10000 ×` the scaled value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveSpeed {
    scaled: f64,
}

impl WaveSpeed {
    /// From a scaled speed in `[0.1, 1]`.
    pub fn from_scaled(scaled: f64) -> Result<Self> {
        if !scaled.is_finite() || !(SPEED_RANGE.0..=SPEED_RANGE.1).contains(&scaled) {
            return Err(Error::Domain(format!(
                "scaled wave speed must lie in [{}, {}], got {scaled}",
                SPEED_RANGE.0, SPEED_RANGE.1
            )));
        }
        Ok(Self { scaled })
    }

    /// From a physical speed in `[1000, 10000]` m/s.
    pub fn from_physical(meters_per_second: f64) -> Result<Self> {
        Self::from_scaled(meters_per_second / SPEED_SCALE)
    }

    pub fn scaled(&self) -> f64 {
        self.scaled
    }

    pub fn physical(&self) -> f64 {
        self.scaled * SPEED_SCALE
    }
}

/// The standing-wave solution `-sin(πx) · cos(πct)`, with no domain checks.
///
/// Exact for the stated initial and boundary conditions whenever `L` is a
/// positive integer (so that `sin(πL) = 0`).
#[inline]
pub fn standing_wave(x: f64, t: f64, c: f64) -> f64 {
    -(PI * x).sin() * (PI * c * t).cos()
}

/// Displacement of the analytical solution at `(x, t)` for wave speed `c`.
///
/// Errors when `(x, t)` lies outside `domain`.
pub fn analytic_u(x: f64, t: f64, c: WaveSpeed, domain: &WaveDomain) -> Result<f64> {
    if !domain.contains(x, t) {
        return Err(Error::Domain(format!(
            "point (x={x}, t={t}) outside [0, {}] x [0, {}]",
            domain.length(),
            domain.horizon()
        )));
    }
    Ok(standing_wave(x, t, c.scaled()))
}

/// Add i.i.d. zero-mean Gaussian noise at the requested SNR (dB).
///
/// The noise variance is `P_signal / 10^(snr_db/10)` with `P_signal` the
/// mean square of `signal`. An infinite `snr_db` returns the signal
/// unchanged. Deterministic for a given `seed`.
pub fn add_noise(signal: &[f64], snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidInput("snr_db is NaN".into()));
    }
    if snr_db.is_infinite() {
        if snr_db > 0.0 {
            return Ok(signal.to_vec());
        }
        return Err(Error::InvalidInput("snr_db = -inf has no noise scale".into()));
    }
    let power: f64 = signal.iter().map(|u| u * u).sum::<f64>() / signal.len() as f64;
    if power == 0.0 {
        return Err(Error::InvalidInput(
            "all-zero signal: noise power undefined for finite SNR".into(),
        ));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(signal
        .iter()
        .map(|u| {
            let n: f64 = StandardNormal.sample(&mut rng);
            u + sigma * n
        })
        .collect())
}

/// A single-time observation of the displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Observation time.
    pub t_obs: f64,
    /// Sensor positions, strictly increasing, inside `[0, L]`.
    pub xs: Vec<f64>,
    /// Observed displacements, same length as `xs`.
    pub us: Vec<f64>,
    /// SNR of the injected noise in dB (`f64::INFINITY` = noise-free).
    pub snr_db: f64,
    /// RNG seed used for the noise draw.
    pub seed: u64,
    /// Scaled wave speed that generated the data, when known.
    pub c_true: Option<f64>,
}

impl Snapshot {
    /// Check the structural invariants (lengths, ordering, range).
    pub fn validate(&self, domain: &WaveDomain) -> Result<()> {
        if self.xs.len() != self.us.len() || self.xs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "snapshot needs >= 2 matched (x, u) pairs, got {} xs and {} us",
                self.xs.len(),
                self.us.len()
            )));
        }
        if !self.xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("sensor positions must be strictly increasing".into()));
        }
        let l = domain.length();
        if self.xs.first().copied().unwrap_or(0.0) < 0.0 || self.xs.last().copied().unwrap_or(0.0) > l {
            return Err(Error::Domain(format!("sensor positions must lie in [0, {l}]")));
        }
        Ok(())
    }

    /// Write the snapshot as a commented CSV file.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        if let Some(c) = self.c_true {
            let _ = writeln!(body, "# c_true={}", fmt_f64(c));
        }
        let _ = writeln!(body, "# t_obs={}", fmt_f64(self.t_obs));
        let _ = writeln!(body, "# snr_db={}", fmt_f64(self.snr_db));
        let _ = writeln!(body, "# seed={}", self.seed);
        body.push_str("x,u\n");
        for (x, u) in self.xs.iter().zip(&self.us) {
            let _ = writeln!(body, "{},{}", fmt_f64(*x), fmt_f64(*u));
        }
        write_file(path, body.as_bytes())
    }

    /// Read a snapshot written by [`Snapshot::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut snap = Snapshot {
            t_obs: f64::NAN,
            xs: Vec::new(),
            us: Vec::new(),
            snr_db: f64::INFINITY,
            seed: 0,
            c_true: None,
        };
        let parse = |s: &str, what: &str| -> Result<f64> {
            parse_f64(s).ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: format!("bad {what}: {s:?}"),
            })
        };
        let mut saw_header = false;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let meta = meta.trim();
                if let Some((key, value)) = meta.split_once('=') {
                    match key.trim() {
                        "c_true" => snap.c_true = Some(parse(value.trim(), "c_true")?),
                        "t_obs" => snap.t_obs = parse(value.trim(), "t_obs")?,
                        "snr_db" => snap.snr_db = parse(value.trim(), "snr_db")?,
                        "seed" => {
                            snap.seed = value.trim().parse().map_err(|_| Error::Parse {
                                path: path.display().to_string(),
                                message: format!("bad seed: {value:?}"),
                            })?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if !saw_header {
                if line != "x,u" {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        message: format!("expected header 'x,u', got {line:?}"),
                    });
                }
                saw_header = true;
                continue;
            }
            let (x, u) = line.split_once(',').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                message: format!("expected 'x,u' row, got {line:?}"),
            })?;
            snap.xs.push(parse(x, "x")?);
            snap.us.push(parse(u, "u")?);
        }
        if !saw_header || snap.t_obs.is_nan() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "missing header or t_obs metadata".into(),
            });
        }
        Ok(snap)
    }
}

/// Synthesize a snapshot: a uniform inclusive sensor grid over `[0, L]`,
/// analytical displacements at `t_obs`, then noise at `snr_db`.
pub fn make_snapshot(
    c: WaveSpeed,
    t_obs: f64,
    n_sensors: usize,
    snr_db: f64,
    seed: u64,
    domain: &WaveDomain,
) -> Result<Snapshot> {
    if n_sensors < 2 {
        return Err(Error::InvalidInput(format!("need >= 2 sensors, got {n_sensors}")));
    }
    let l = domain.length();
    let xs: Vec<f64> = (0..n_sensors)
        .map(|i| l * i as f64 / (n_sensors - 1) as f64)
        .collect();
    let clean: Vec<f64> = xs
        .iter()
        .map(|&x| analytic_u(x, t_obs, c, domain))
        .collect::<Result<_>>()?;
    let us = add_noise(&clean, snr_db, seed)?;
    Ok(Snapshot {
        t_obs,
        xs,
        us,
        snr_db,
        seed,
        c_true: Some(c.scaled()),
    })
}

/// Format a float with 17 significant digits so the value round-trips exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.16e}")
}

/// Parse a float written by [`fmt_f64`] (also accepts plain decimal forms).
pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        other => other.parse().ok(),
    }
}

/// Create the parent directories and write `bytes` to `path`.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))
}
