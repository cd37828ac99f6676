//! Scenario files: TOML with a fixed set of top-level keys and optional
//! tuning sections. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::baselines::{FcsMpcConfig, PiConfig};
use crate::converter::{equilibrium_solve, GridConfig};
use crate::dbn::DbnConfig;
use crate::ulm::UlmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    UlmQdrl,
    UlmFixed,
    Pi,
    FcsMpc,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::UlmQdrl,
        ControllerKind::UlmFixed,
        ControllerKind::Pi,
        ControllerKind::FcsMpc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::UlmQdrl => "ulm_qdrl",
            ControllerKind::UlmFixed => "ulm_fixed",
            ControllerKind::Pi => "pi",
            ControllerKind::FcsMpc => "fcs_mpc",
        }
    }

    pub fn learns(self) -> bool {
        self == ControllerKind::UlmQdrl
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown controller '{s}' (expected ulm_qdrl, ulm_fixed, pi or fcs_mpc)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSegment {
    pub start: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSegment {
    pub start: f64,
    pub v_ref: f64,
}

/// Capacitor-current feedback subtracted from the duty command of the
/// ULM and PI loops: `d = d_cmd - k_ad * i_C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DampingConfig {
    pub k_ad: f64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self { k_ad: 0.01 }
    }
}

/// Slew limit on the reference handed to the inner loops (V/s). Zero passes
/// reference steps through unchanged. Metrics and reward always use the
/// scheduled reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub slew_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub controller: ControllerKind,
    /// Simulated time per episode (s).
    pub duration: f64,
    pub dt_sim: f64,
    pub dt_ctrl: f64,
    pub seed: u64,
    /// Training episodes; only the last one is reported.
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub load: Vec<LoadSegment>,
    pub reference: Vec<ReferenceSegment>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub damping: DampingConfig,
    #[serde(default)]
    pub shaping: ShapingConfig,
    /// `control_period` is overwritten with `dt_ctrl` at run time.
    #[serde(default)]
    pub ulm: UlmConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub dbn: DbnConfig,
    #[serde(default)]
    pub pi: PiConfig,
    /// `horizon` is overwritten with `dt_ctrl` at run time.
    #[serde(default)]
    pub mpc: FcsMpcConfig,
}

fn default_episodes() -> usize {
    50
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}", fmt_located(.line, .message))]
    Parse { line: Option<usize>, message: String },
    #[error("{}", fmt_located(.line, .message))]
    Invalid { line: Option<usize>, message: String },
}

fn fmt_located(line: &Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("line {l}: {message}"),
        None => message.to_string(),
    }
}

impl ScenarioError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ScenarioError::Io { .. } => None,
            ScenarioError::Parse { line, .. } | ScenarioError::Invalid { line, .. } => *line,
        }
    }
}

/// Schedule boundaries expressed in control steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub steps: usize,
    pub substeps: usize,
    load: Vec<(usize, f64)>,
    reference: Vec<(usize, f64)>,
}

impl Schedule {
    fn lookup(table: &[(usize, f64)], k: usize) -> f64 {
        let idx = table.partition_point(|&(start, _)| start <= k);
        table[idx.saturating_sub(1)].1
    }

    pub fn p_cpl(&self, k: usize) -> f64 {
        Self::lookup(&self.load, k)
    }

    pub fn v_ref(&self, k: usize) -> f64 {
        Self::lookup(&self.reference, k)
    }

    /// Sorted union of load and reference boundaries, starting at 0.
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self
            .load
            .iter()
            .chain(&self.reference)
            .map(|&(k, _)| k)
            .filter(|&k| k <= self.steps)
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    pub fn reference_steps(&self) -> Vec<usize> {
        self.reference.iter().skip(1).map(|&(k, _)| k).collect()
    }

    pub fn load_steps(&self) -> Vec<usize> {
        self.load.iter().skip(1).map(|&(k, _)| k).collect()
    }
}

/// Round `x / unit` to an integer if it is one to within a relative 1e-9.
fn as_multiple(x: f64, unit: f64) -> Option<usize> {
    let r = x / unit;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * n.max(1.0) && n >= 0.0).then_some(n as usize)
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        if text.trim().is_empty() {
            return Err(ScenarioError::Parse {
                line: None,
                message: "scenario file is empty".into(),
            });
        }
        let sc: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        sc.validate().map_err(|(key, message)| ScenarioError::Invalid {
            line: key.and_then(|k| line_of_key(text, k)),
            message,
        })?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Validate physical and structural constraints. The error carries the
    /// offending key, used to point at a line in the source text.
    pub fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        let positive = |key: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((Some(key), format!("{key} must be finite and > 0, got {v}")))
            }
        };
        if self.name.trim().is_empty() {
            return Err((Some("name"), "name must not be empty".into()));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err((Some("duration"), format!("duration must be >= 0, got {}", self.duration)));
        }
        positive("dt_sim", self.dt_sim)?;
        positive("dt_ctrl", self.dt_ctrl)?;
        if as_multiple(self.dt_ctrl, self.dt_sim).map_or(true, |n| n == 0) {
            return Err((
                Some("dt_ctrl"),
                format!("dt_ctrl {} is not an integer multiple of dt_sim {}", self.dt_ctrl, self.dt_sim),
            ));
        }
        if as_multiple(self.duration, self.dt_ctrl).is_none() {
            return Err((
                Some("duration"),
                format!("duration {} is not an integer multiple of dt_ctrl {}", self.duration, self.dt_ctrl),
            ));
        }
        if self.episodes == 0 {
            return Err((Some("episodes"), "episodes must be >= 1".into()));
        }
        check_segments("load", self.load.iter().map(|s| (s.start, s.power)), |p| p >= 0.0)?;
        check_segments("reference", self.reference.iter().map(|s| (s.start, s.v_ref)), |v| v > 0.0)?;
        self.grid
            .validate()
            .map_err(|e| (Some("grid"), e.to_string()))?;
        if !(self.shaping.slew_rate.is_finite() && self.shaping.slew_rate >= 0.0) {
            return Err((
                Some("slew_rate"),
                format!("slew_rate must be >= 0, got {}", self.shaping.slew_rate),
            ));
        }
        if !(self.damping.k_ad.is_finite() && self.damping.k_ad >= 0.0) {
            return Err((Some("k_ad"), format!("k_ad must be >= 0, got {}", self.damping.k_ad)));
        }
        self.ulm.validate().map_err(|m| (Some("ulm"), m))?;
        self.agent.validate().map_err(|m| (Some("agent"), m))?;
        self.dbn.validate().map_err(|m| (Some("dbn"), m))?;
        self.pi.validate().map_err(|m| (Some("pi"), m))?;
        self.mpc.validate().map_err(|m| (Some("mpc"), m))?;
        let (p0, v0) = (self.load[0].power, self.reference[0].v_ref);
        equilibrium_solve(&self.grid, p0, v0)
            .map_err(|e| (Some("reference"), format!("no starting operating point: {e}")))?;
        Ok(())
    }

    pub fn schedule(&self) -> Schedule {
        let steps = as_multiple(self.duration, self.dt_ctrl).unwrap_or(0);
        let substeps = as_multiple(self.dt_ctrl, self.dt_sim).unwrap_or(1).max(1);
        let to_steps = |t: f64| (t / self.dt_ctrl).round() as usize;
        Schedule {
            steps,
            substeps,
            load: self.load.iter().map(|s| (to_steps(s.start), s.power)).collect(),
            reference: self.reference.iter().map(|s| (to_steps(s.start), s.v_ref)).collect(),
        }
    }

    pub fn ulm_config(&self) -> UlmConfig {
        UlmConfig {
            control_period: self.dt_ctrl,
            ..self.ulm
        }
    }

    pub fn mpc_config(&self) -> FcsMpcConfig {
        FcsMpcConfig {
            horizon: self.dt_ctrl,
            ..self.mpc.clone()
        }
    }
}

fn check_segments(
    key: &'static str,
    segs: impl Iterator<Item = (f64, f64)>,
    value_ok: impl Fn(f64) -> bool,
) -> Result<(), (Option<&'static str>, String)> {
    let segs: Vec<_> = segs.collect();
    let Some(&(first, _)) = segs.first() else {
        return Err((Some(key), format!("{key} profile is empty")));
    };
    if first != 0.0 {
        return Err((Some(key), format!("{key} profile must start at t = 0, starts at {first}")));
    }
    for w in segs.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err((Some(key), format!("{key} segment starts must increase: {} after {}", w[1].0, w[0].0)));
        }
    }
    for &(start, v) in &segs {
        if !(start.is_finite() && v.is_finite() && value_ok(v)) {
            return Err((Some(key), format!("{key} segment at {start} has non-physical value {v}")));
        }
    }
    Ok(())
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that assigns `key` or opens a `[key]` / `[[key]]` table.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        let bare = l.trim_start_matches('[').trim_end().trim_end_matches(']');
        let assigns = l
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='));
        assigns || (l.starts_with('[') && (bare == key || bare.ends_with(&format!(".{key}"))))
    })
    .map(|i| i + 1)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Scenario::from_toml_str(&text)
}
