//! Run configuration: flat `key = value` text with dotted keys.
//!
//! Parsing is strict. Unknown keys, repeated keys, malformed values and
//! out-of-range numbers are all errors that name the offending key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sasaki_flow::conjugate::Variant;
use sasaki_flow::models::Family;

use crate::LabError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub t_end: f64,
    pub dt_safety: f64,
    /// Spacing of stored states and time-series rows.
    pub dt_out: f64,
    /// Amplitude of the initial potential `p·(s² − s³ + s/3)`.
    pub perturbation: f64,
    pub variant: Variant,
    pub tau_t: f64,
    pub mu_restarts: usize,
    pub mu_tol: f64,
    pub radii: Vec<f64>,
    pub mc_samples: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            family: Family::Round,
            a: 1.0,
            b: 1.0,
            n: 64,
            t_end: 2.0,
            dt_safety: 0.8,
            dt_out: 0.05,
            perturbation: 0.3,
            variant: Variant::W,
            tau_t: 1.0,
            mu_restarts: 8,
            mu_tol: 1e-8,
            radii: vec![0.02, 0.04, 0.06, 0.08, 0.1],
            mc_samples: 100_000,
            seed: 0,
            output_dir: PathBuf::from("out"),
            svg: false,
        }
    }
}

/// Every accepted key with a one-line description, in canonical order.
pub const KEYS: &[(&str, &str)] = &[
    ("model.family", "round | weighted"),
    ("model.a", "first Reeb weight, (0, 100]"),
    ("model.b", "second Reeb weight, (0, 100]"),
    ("grid.n", "Chebyshev nodes, 16..=1024"),
    ("flow.t_end", "final normalized time, (0, 100]"),
    ("flow.dt_safety", "fraction of the explicit stability limit, (0, 1]"),
    ("flow.dt_out", "output spacing, (0, 1]"),
    ("flow.perturbation", "amplitude of the initial potential, [0, 1]"),
    ("conjugate.variant", "F | W"),
    ("conjugate.tau_T", "terminal scale for W, (0, 100]"),
    ("mu.restarts", "restarts of the mu minimiser, 1..=64"),
    ("mu.tol", "gradient tolerance of the mu minimiser, [1e-14, 1e-2]"),
    ("tubes.radii", "comma-separated increasing radii in (0, 1.5]"),
    ("tubes.mc_samples", "Monte Carlo samples, 1..=100000000"),
    ("seed", "master seed, any u64"),
    ("output.dir", "output directory"),
    ("output.svg", "true | false"),
];

fn err(key: &str, msg: impl Into<String>) -> LabError {
    LabError::Config { key: key.to_owned(), msg: msg.into() }
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, LabError> {
    v.parse().map_err(|_| err(key, format!("cannot parse `{v}`")))
}

fn ranged(key: &str, v: &str, lo: f64, hi: f64, open_lo: bool) -> Result<f64, LabError> {
    let x: f64 = number(key, v)?;
    let ok = x.is_finite() && (if open_lo { x > lo } else { x >= lo }) && x <= hi;
    if !ok {
        let l = if open_lo { "(" } else { "[" };
        return Err(err(key, format!("{x} outside {l}{lo}, {hi}]")));
    }
    Ok(x)
}

fn ranged_int(key: &str, v: &str, lo: u64, hi: u64) -> Result<u64, LabError> {
    let x: u64 = number(key, v)?;
    if x < lo || x > hi {
        return Err(err(key, format!("{x} outside {lo}..={hi}")));
    }
    Ok(x)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), LabError> {
        let v = value.trim();
        match key {
            "model.family" => self.family = v.parse().map_err(|_| err(key, format!("unknown family `{v}`")))?,
            "model.a" => self.a = ranged(key, v, 0.0, 100.0, true)?,
            "model.b" => self.b = ranged(key, v, 0.0, 100.0, true)?,
            "grid.n" => self.n = ranged_int(key, v, 16, 1024)? as usize,
            "flow.t_end" => self.t_end = ranged(key, v, 0.0, 100.0, true)?,
            "flow.dt_safety" => self.dt_safety = ranged(key, v, 0.0, 1.0, true)?,
            "flow.dt_out" => self.dt_out = ranged(key, v, 0.0, 1.0, true)?,
            "flow.perturbation" => self.perturbation = ranged(key, v, 0.0, 1.0, false)?,
            "conjugate.variant" => self.variant = v.parse().map_err(|_| err(key, format!("unknown variant `{v}`")))?,
            "conjugate.tau_T" => self.tau_t = ranged(key, v, 0.0, 100.0, true)?,
            "mu.restarts" => self.mu_restarts = ranged_int(key, v, 1, 64)? as usize,
            "mu.tol" => self.mu_tol = ranged(key, v, 1e-14, 1e-2, false)?,
            "tubes.radii" => self.radii = parse_radii(key, v)?,
            "tubes.mc_samples" => self.mc_samples = ranged_int(key, v, 1, 100_000_000)? as usize,
            "seed" => self.seed = number(key, v)?,
            "output.dir" => {
                if v.is_empty() {
                    return Err(err(key, "empty path"));
                }
                self.output_dir = PathBuf::from(v);
            }
            "output.svg" => self.svg = number(key, v)?,
            _ => return Err(err(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` to `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), LabError> {
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(&format!("line {}", i + 1), format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(err(key, format!("repeated on line {}", i + 1)));
            }
            seen.push(key);
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("--config", format!("{}: {e}", path.display())))?;
        self.merge_text(&text)
    }

    /// Cross-field checks.
    pub fn validate(&self) -> Result<(), LabError> {
        if self.family == Family::Round && self.a != self.b {
            return Err(err("model.b", format!("round model needs a = b, got {} and {}", self.a, self.b)));
        }
        if self.dt_out > self.t_end {
            return Err(err("flow.dt_out", "larger than flow.t_end"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "model.family" => self.family.to_string(),
            "model.a" => format!("{:?}", self.a),
            "model.b" => format!("{:?}", self.b),
            "grid.n" => self.n.to_string(),
            "flow.t_end" => format!("{:?}", self.t_end),
            "flow.dt_safety" => format!("{:?}", self.dt_safety),
            "flow.dt_out" => format!("{:?}", self.dt_out),
            "flow.perturbation" => format!("{:?}", self.perturbation),
            "conjugate.variant" => self.variant.as_str().to_owned(),
            "conjugate.tau_T" => format!("{:?}", self.tau_t),
            "mu.restarts" => self.mu_restarts.to_string(),
            "mu.tol" => format!("{:?}", self.mu_tol),
            "tubes.radii" => self.radii.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(","),
            "tubes.mc_samples" => self.mc_samples.to_string(),
            "seed" => self.seed.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            "output.svg" => self.svg.to_string(),
            _ => unreachable!("not a key: {key}"),
        }
    }
}

fn parse_radii(key: &str, v: &str) -> Result<Vec<f64>, LabError> {
    let radii = v.split(',').map(|r| ranged(key, r.trim(), 0.0, 1.5, true)).collect::<Result<Vec<_>, _>>()?;
    if radii.len() > 32 {
        return Err(err(key, "at most 32 radii"));
    }
    if radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(err(key, "radii must be strictly increasing"));
    }
    Ok(radii)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("model.family", "weighted").unwrap();
        cfg.set("model.b", "1.4142135623730951").unwrap();
        cfg.set("tubes.radii", "0.01, 0.03").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("grid.n = 8").unwrap_err();
        assert!(matches!(e, LabError::Config { ref key, .. } if key == "grid.n"), "{e}");
        let e = RunConfig::parse("flow.bogus = 1").unwrap_err();
        assert!(matches!(e, LabError::Config { ref key, .. } if key == "flow.bogus"));
        let e = RunConfig::parse("seed = 1\nseed = 2").unwrap_err();
        assert!(matches!(e, LabError::Config { ref key, .. } if key == "seed"));
        let e = RunConfig::parse("model.a = 2").unwrap_err();
        assert!(matches!(e, LabError::Config { ref key, .. } if key == "model.b"));
        assert!(RunConfig::parse("tubes.radii = 0.1,0.05").is_err());
        assert!(RunConfig::parse("mu.tol = nan").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# header\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }
}
