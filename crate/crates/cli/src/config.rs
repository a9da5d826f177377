//! Flat `key = value` configuration with optional `[section]` headers.
//!
//! Sections only group keys for readability; every key is unique across
//! sections, so `--key value` on the command line can override any of them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use stokes_core::{GridSpec, SchemeKind, SolveConfig};

pub const SECTIONS: &[&str] = &[
    "grid",
    "time",
    "scheme",
    "partition",
    "solver",
    "output",
    "forcing",
    "study",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    Zero,
    Manufactured,
    Random,
}

impl FieldSource {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" | "none" => Ok(Self::Zero),
            "manufactured" => Ok(Self::Manufactured),
            "random" => Ok(Self::Random),
            _ => bail!("expected one of zero, manufactured, random (got {s:?})"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Manufactured => "manufactured",
            Self::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub l1: f64,
    pub l2: f64,
    pub n1: usize,
    pub n2: usize,
    pub tau: f64,
    pub t_final: f64,
    pub scheme: String,
    pub nu: f64,
    pub m: usize,
    pub overlap: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// `0` means the default cap of ten times the unknown count.
    pub max_iter: usize,
    pub out_dir: String,
    pub snapshot_every: usize,
    pub forcing: FieldSource,
    pub initial: FieldSource,
    pub seed: u64,
    /// Stability sweep step sizes.
    pub taus: Vec<f64>,
    /// Stability sweep step count per `τ`.
    pub steps: usize,
    /// Convergence sweep grid sizes (unit square, `n × n`).
    pub grids: Vec<usize>,
    /// Convergence sweep step sizes at the finest grid.
    pub conv_taus: Vec<f64>,
    /// Fixed step of the spatial sweep.
    pub spatial_tau: f64,
    /// The reference run uses `min(conv_taus) / reference_factor`.
    pub reference_factor: usize,
    explicit: BTreeSet<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l2: 1.0,
            n1: 32,
            n2: 32,
            tau: 0.05,
            t_final: 0.5,
            scheme: "monolithic".into(),
            nu: 1.0,
            m: 2,
            overlap: 2,
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_iter: 0,
            out_dir: "out".into(),
            snapshot_every: 0,
            forcing: FieldSource::Manufactured,
            initial: FieldSource::Manufactured,
            seed: 1,
            taus: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            steps: 200,
            grids: vec![16, 32, 64],
            conv_taus: vec![0.1, 0.05, 0.025, 0.0125],
            spatial_tau: 5e-4,
            reference_factor: 8,
            explicit: BTreeSet::new(),
        }
    }
}

/// Every key with its section, in manifest order.
pub const KEYS: &[(&str, &str)] = &[
    ("grid", "l1"),
    ("grid", "l2"),
    ("grid", "n1"),
    ("grid", "n2"),
    ("time", "tau"),
    ("time", "t_final"),
    ("scheme", "scheme"),
    ("scheme", "nu"),
    ("partition", "m"),
    ("partition", "overlap"),
    ("solver", "rel_tol"),
    ("solver", "abs_tol"),
    ("solver", "max_iter"),
    ("output", "out_dir"),
    ("output", "snapshot_every"),
    ("forcing", "forcing"),
    ("forcing", "initial"),
    ("forcing", "seed"),
    ("study", "taus"),
    ("study", "steps"),
    ("study", "grids"),
    ("study", "conv_taus"),
    ("study", "spatial_tau"),
    ("study", "reference_factor"),
];

fn num<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    Ok(value.trim().parse::<T>()?)
}

fn list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    let out = value.split(',').map(|s| num::<T>(s)).collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let res: Result<()> = (|| {
            match key.as_str() {
                "l1" => self.l1 = num(v)?,
                "l2" => self.l2 = num(v)?,
                "n1" => self.n1 = num(v)?,
                "n2" => self.n2 = num(v)?,
                "n" => {
                    self.n1 = num(v)?;
                    self.n2 = self.n1;
                }
                "tau" => self.tau = num(v)?,
                "t_final" => self.t_final = num(v)?,
                "scheme" => match v {
                    "monolithic" | "decomposed" => self.scheme = v.to_string(),
                    _ => bail!("expected monolithic or decomposed (got {v:?})"),
                },
                "nu" => self.nu = num(v)?,
                "m" => self.m = num(v)?,
                "overlap" => self.overlap = num(v)?,
                "rel_tol" => self.rel_tol = num(v)?,
                "abs_tol" => self.abs_tol = num(v)?,
                "max_iter" => self.max_iter = num(v)?,
                "out_dir" => self.out_dir = v.to_string(),
                "snapshot_every" => self.snapshot_every = num(v)?,
                "forcing" => self.forcing = FieldSource::parse(v)?,
                "initial" => self.initial = FieldSource::parse(v)?,
                "seed" => self.seed = num(v)?,
                "taus" => self.taus = list(v)?,
                "steps" => self.steps = num(v)?,
                "grids" => self.grids = list(v)?,
                "conv_taus" => self.conv_taus = list(v)?,
                "spatial_tau" => self.spatial_tau = num(v)?,
                "reference_factor" => self.reference_factor = num(v)?,
                _ => bail!("unknown key"),
            }
            Ok(())
        })();
        res.with_context(|| format!("config key {key:?} = {v:?}"))?;
        let canonical = if key == "n" { "n1" } else { key.as_str() };
        self.explicit.insert(canonical.to_string());
        if key == "n" {
            self.explicit.insert("n2".into());
        }
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn parse_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| anyhow!("line {}: unterminated section header", lineno + 1))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    bail!("line {}: unknown section [{name}]", lineno + 1);
                }
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", lineno + 1))?;
            self.set(k, v).with_context(|| format!("line {}", lineno + 1))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> stokes_core::Result<GridSpec> {
        GridSpec::new(self.l1, self.l2, self.n1, self.n2)
    }

    pub fn kind(&self) -> SchemeKind {
        match self.scheme.as_str() {
            "decomposed" => SchemeKind::Decomposed {
                m: self.m,
                overlap: self.overlap,
            },
            _ => SchemeKind::Monolithic,
        }
    }

    pub fn solver(&self) -> stokes_core::Result<SolveConfig> {
        let s = SolveConfig {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_iter: (self.max_iter > 0).then_some(self.max_iter),
            ..SolveConfig::default()
        };
        s.validate()?;
        Ok(s)
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "l1" => self.l1.to_string(),
            "l2" => self.l2.to_string(),
            "n1" => self.n1.to_string(),
            "n2" => self.n2.to_string(),
            "tau" => self.tau.to_string(),
            "t_final" => self.t_final.to_string(),
            "scheme" => self.scheme.clone(),
            "nu" => self.nu.to_string(),
            "m" => self.m.to_string(),
            "overlap" => self.overlap.to_string(),
            "rel_tol" => self.rel_tol.to_string(),
            "abs_tol" => self.abs_tol.to_string(),
            "max_iter" => self.max_iter.to_string(),
            "out_dir" => self.out_dir.clone(),
            "snapshot_every" => self.snapshot_every.to_string(),
            "forcing" => self.forcing.as_str().into(),
            "initial" => self.initial.as_str().into(),
            "seed" => self.seed.to_string(),
            "taus" => join(&self.taus),
            "steps" => self.steps.to_string(),
            "grids" => join(&self.grids),
            "conv_taus" => join(&self.conv_taus),
            "spatial_tau" => self.spatial_tau.to_string(),
            "reference_factor" => self.reference_factor.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// The configuration in its own file format; parsing it back yields the
    /// same values.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for &(sec, key) in KEYS {
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{sec}]");
                section = sec;
            }
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections_comments_and_overrides() {
        let mut c = Config::default();
        c.parse_str("# demo\n[grid]\nn1 = 8 # inline\nn2=12\n\n[scheme]\nscheme = decomposed\n[partition]\nm = 3\n")
            .unwrap();
        assert_eq!((c.n1, c.n2, c.m), (8, 12, 3));
        assert_eq!(c.kind(), SchemeKind::Decomposed { m: 3, overlap: 2 });
        c.set("t-final", "2.5").unwrap();
        assert_eq!(c.t_final, 2.5);
        assert!(c.is_explicit("t_final") && !c.is_explicit("tau"));
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Config::default();
        assert!(c.parse_str("[nowhere]\n").is_err());
        assert!(c.parse_str("bogus = 1\n").is_err());
        assert!(c.parse_str("n1 = -3\n").is_err());
        assert!(c.parse_str("just text\n").is_err());
        assert!(c.set("scheme", "spectral").is_err());
        assert!(c.set("taus", "1,,2").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut c = Config::default();
        c.set("taus", "0.001,10").unwrap();
        c.set("tau", "0.1").unwrap();
        c.set("initial", "random").unwrap();
        let mut back = Config::default();
        back.parse_str(&c.render()).unwrap();
        assert_eq!(back.render(), c.render());
        assert_eq!(back.taus, vec![0.001, 10.0]);
    }
}
