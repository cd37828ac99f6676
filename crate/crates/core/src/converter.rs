//! Averaged model of two parallel boost converters feeding a shared DC bus
//! that supplies a constant-power load (CPL).
//!
//! Per converter `i`:
//!
//! ```text
//! L_b,i    di_L,i/dt    = E_i - (1 - d_i) v_out,i
//! C_b,i    dv_out,i/dt  = (1 - d_i) i_L,i - i_line,i
//! L_line,i di_line,i/dt = v_out,i - R_line,i i_line,i - v_dc
//! C_cpl    dv_dc/dt     = sum_i i_line,i - P_cpl / max(v_dc, v_min)
//! ```
//!
//! The state is advanced by a fixed-step classical RK4 with the duty ratios and
//! the load power held constant over the step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of converters in the shipped topology.
pub const N_CONV: usize = 2;

/// Duty limits applied where a controller command reaches the plant.
pub const DUTY_MIN: f64 = 0.05;
pub const DUTY_MAX: f64 = 0.95;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("simulation fault at t = {t:.6} s: non-finite state {state:?}")]
    NonFinite { t: f64, state: Box<SystemState> },
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
}

/// Electrical constants of one boost stage and the line that ties it to the bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConverterParams {
    /// Boost inductance (H).
    pub l_b: f64,
    /// Output capacitance (F).
    pub c_b: f64,
    /// Source voltage (V).
    pub e: f64,
    /// Line inductance (H).
    pub l_line: f64,
    /// Line resistance (Ohm).
    pub r_line: f64,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            l_b: 2e-3,
            c_b: 1e-3,
            e: 500.0,
            l_line: 0.5e-3,
            r_line: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub converters: [ConverterParams; N_CONV],
    /// Total bus capacitance on the load side (F).
    pub c_cpl_total: f64,
    /// Floor applied to v_dc in the CPL current term (V).
    pub v_min_clamp: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            converters: [ConverterParams::default(); N_CONV],
            c_cpl_total: 1e-3,
            v_min_clamp: 1.0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, c) in self.converters.iter().enumerate() {
            for (name, v) in [
                ("l_b", c.l_b),
                ("c_b", c.c_b),
                ("e", c.e),
                ("l_line", c.l_line),
                ("r_line", c.r_line),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(SimError::InvalidConfig(format!(
                        "converter {i}: {name} must be finite and > 0, got {v}"
                    )));
                }
            }
        }
        if !(self.c_cpl_total.is_finite() && self.c_cpl_total > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "c_cpl_total must be finite and > 0, got {}",
                self.c_cpl_total
            )));
        }
        if !(self.v_min_clamp.is_finite() && self.v_min_clamp > 0.0) {
            return Err(SimError::InvalidConfig(format!(
                "v_min_clamp must be finite and > 0, got {}",
                self.v_min_clamp
            )));
        }
        Ok(())
    }

    /// Parallel combination of the line resistances.
    pub fn r_parallel(&self) -> f64 {
        1.0 / self.converters.iter().map(|c| 1.0 / c.r_line).sum::<f64>()
    }
}

/// Plant state at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub t: f64,
    pub i_l: [f64; N_CONV],
    pub v_out: [f64; N_CONV],
    pub i_line: [f64; N_CONV],
    pub v_dc: f64,
}

impl SystemState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.v_dc.is_finite()
            && self
                .i_l
                .iter()
                .chain(&self.v_out)
                .chain(&self.i_line)
                .all(|x| x.is_finite())
    }

    /// Stored energy 1/2 sum(L i^2) + 1/2 sum(C v^2).
    pub fn stored_energy(&self, cfg: &GridConfig) -> f64 {
        let mut w = 0.5 * cfg.c_cpl_total * self.v_dc * self.v_dc;
        for (k, c) in cfg.converters.iter().enumerate() {
            w += 0.5 * c.l_b * self.i_l[k] * self.i_l[k];
            w += 0.5 * c.c_b * self.v_out[k] * self.v_out[k];
            w += 0.5 * c.l_line * self.i_line[k] * self.i_line[k];
        }
        w
    }

    /// Largest absolute entry over the dynamic variables, used to scale tolerances.
    pub fn max_abs(&self) -> f64 {
        self.i_l
            .iter()
            .chain(&self.v_out)
            .chain(&self.i_line)
            .chain(std::iter::once(&self.v_dc))
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    fn check_finite(&self) -> Result<(), SimError> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SimError::NonFinite {
                t: self.t,
                state: Box::new(*self),
            })
        }
    }

    fn offset(&self, k: &StateDerivative, h: f64) -> SystemState {
        let mut s = *self;
        for i in 0..N_CONV {
            s.i_l[i] += h * k.di_l[i];
            s.v_out[i] += h * k.dv_out[i];
            s.i_line[i] += h * k.di_line[i];
        }
        s.v_dc += h * k.dv_dc;
        s.t += h;
        s
    }
}

/// Time derivative of the dynamic part of [`SystemState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateDerivative {
    pub di_l: [f64; N_CONV],
    pub dv_out: [f64; N_CONV],
    pub di_line: [f64; N_CONV],
    pub dv_dc: f64,
}

impl StateDerivative {
    pub fn max_abs(&self) -> f64 {
        self.di_l
            .iter()
            .chain(&self.dv_out)
            .chain(&self.di_line)
            .chain(std::iter::once(&self.dv_dc))
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Flattened as `[i_l.., v_out.., i_line.., v_dc]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * N_CONV + 1);
        v.extend_from_slice(&self.di_l);
        v.extend_from_slice(&self.dv_out);
        v.extend_from_slice(&self.di_line);
        v.push(self.dv_dc);
        v
    }
}

/// CPL current drawn from the bus with the denominator floored at `v_min_clamp`.
#[inline]
pub fn cpl_current(p_cpl: f64, v_dc: f64, cfg: &GridConfig) -> f64 {
    p_cpl / v_dc.max(cfg.v_min_clamp)
}

#[inline]
fn derivatives_unchecked(
    s: &SystemState,
    duties: &[f64; N_CONV],
    p_cpl: f64,
    cfg: &GridConfig,
) -> StateDerivative {
    let mut k = StateDerivative::default();
    let mut line_sum = 0.0;
    for (i, c) in cfg.converters.iter().enumerate() {
        let m = 1.0 - duties[i];
        k.di_l[i] = (c.e - m * s.v_out[i]) / c.l_b;
        k.dv_out[i] = (m * s.i_l[i] - s.i_line[i]) / c.c_b;
        k.di_line[i] = (s.v_out[i] - c.r_line * s.i_line[i] - s.v_dc) / c.l_line;
        line_sum += s.i_line[i];
    }
    k.dv_dc = (line_sum - cpl_current(p_cpl, s.v_dc, cfg)) / cfg.c_cpl_total;
    k
}

/// Right-hand side of the averaged plant model.
pub fn derivatives(
    state: &SystemState,
    duties: &[f64; N_CONV],
    p_cpl: f64,
    cfg: &GridConfig,
) -> Result<StateDerivative, SimError> {
    if !state.is_finite() {
        return Err(SimError::Domain(format!("non-finite state {state:?}")));
    }
    if let Some(d) = duties.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(SimError::Domain(format!("duty {d} outside [0, 1]")));
    }
    if !p_cpl.is_finite() {
        return Err(SimError::Domain(format!("non-finite load power {p_cpl}")));
    }
    Ok(derivatives_unchecked(state, duties, p_cpl, cfg))
}

/// One classical RK4 step with zero-order hold on `duties` and `p_cpl`.
pub fn rk4_step(
    state: &SystemState,
    duties: &[f64; N_CONV],
    p_cpl: f64,
    cfg: &GridConfig,
    dt: f64,
) -> Result<SystemState, SimError> {
    if !(dt >= 0.0) {
        return Err(SimError::Domain(format!("step size {dt} must be >= 0")));
    }
    let k1 = derivatives(state, duties, p_cpl, cfg)?;
    if dt == 0.0 {
        return Ok(*state);
    }
    let k2 = derivatives_unchecked(&state.offset(&k1, 0.5 * dt), duties, p_cpl, cfg);
    let k3 = derivatives_unchecked(&state.offset(&k2, 0.5 * dt), duties, p_cpl, cfg);
    let k4 = derivatives_unchecked(&state.offset(&k3, dt), duties, p_cpl, cfg);

    let w = dt / 6.0;
    let mut next = *state;
    for i in 0..N_CONV {
        next.i_l[i] += w * (k1.di_l[i] + 2.0 * k2.di_l[i] + 2.0 * k3.di_l[i] + k4.di_l[i]);
        next.v_out[i] +=
            w * (k1.dv_out[i] + 2.0 * k2.dv_out[i] + 2.0 * k3.dv_out[i] + k4.dv_out[i]);
        next.i_line[i] +=
            w * (k1.di_line[i] + 2.0 * k2.di_line[i] + 2.0 * k3.di_line[i] + k4.di_line[i]);
    }
    next.v_dc += w * (k1.dv_dc + 2.0 * k2.dv_dc + 2.0 * k3.dv_dc + k4.dv_dc);
    next.t = state.t + dt;
    next.check_finite()?;
    Ok(next)
}

/// Advance `n` RK4 steps of size `dt` with the inputs held.
pub fn integrate(
    state: &SystemState,
    duties: &[f64; N_CONV],
    p_cpl: f64,
    cfg: &GridConfig,
    dt: f64,
    n: usize,
) -> Result<SystemState, SimError> {
    let t0 = state.t;
    let mut s = *state;
    for k in 0..n {
        s = rk4_step(&s, duties, p_cpl, cfg, dt)?;
        // keep time exact instead of accumulating rounding
        s.t = t0 + (k + 1) as f64 * dt;
    }
    Ok(s)
}

/// Clamp a duty command into the realizable range.
#[inline]
pub fn saturate_duty(d: f64) -> f64 {
    d.clamp(DUTY_MIN, DUTY_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub duties: [f64; N_CONV],
    pub state: SystemState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("no equilibrium: load {p_cpl} W cannot be delivered at {v_ref} V (max reachable bus voltage {v_max:.3} V)")]
    NoEquilibrium { p_cpl: f64, v_ref: f64, v_max: f64 },
    #[error(transparent)]
    Config(#[from] SimError),
}

/// Steady state that holds the bus at `v_ref` while delivering `p_cpl`.
///
/// All converters share one output voltage `v_out = v_ref + P R_par / v_ref`,
/// so line currents split in inverse proportion to line resistance. The duty
/// of each stage follows from the boost ratio `v_out = E / (1 - d)`.
///
/// Feasibility: with every converter at `DUTY_MAX` the highest output voltage
/// the group can jointly hold is `v_cap = min_i E_i / (1 - DUTY_MAX)`. The bus
/// then satisfies `v_dc^2 - v_cap v_dc + P R_par = 0`; a negative discriminant
/// means the load exceeds the transferable power, and a target above the
/// larger root is out of reach.
pub fn equilibrium_solve(
    cfg: &GridConfig,
    p_cpl: f64,
    v_ref: f64,
) -> Result<Equilibrium, EquilibriumError> {
    cfg.validate()?;
    if !(p_cpl.is_finite() && p_cpl >= 0.0) || !(v_ref.is_finite() && v_ref > 0.0) {
        return Err(SimError::Domain(format!("p_cpl = {p_cpl}, v_ref = {v_ref}")).into());
    }
    let r_par = cfg.r_parallel();
    let v_cap = cfg
        .converters
        .iter()
        .map(|c| c.e / (1.0 - DUTY_MAX))
        .fold(f64::INFINITY, f64::min);
    let disc = v_cap * v_cap - 4.0 * p_cpl * r_par;
    if disc < 0.0 {
        return Err(EquilibriumError::NoEquilibrium {
            p_cpl,
            v_ref,
            v_max: f64::NAN,
        });
    }
    let v_max = 0.5 * (v_cap + disc.sqrt());
    if v_ref > v_max {
        return Err(EquilibriumError::NoEquilibrium { p_cpl, v_ref, v_max });
    }

    let v_out = v_ref + p_cpl / v_ref * r_par;
    steady_state(cfg, v_out, v_ref)
        .ok_or(EquilibriumError::NoEquilibrium { p_cpl, v_ref, v_max })
}

/// Steady state with every converter output held at `v_out`.
///
/// The bus settles at the larger root of `v_dc^2 - v_out v_dc + P R_par = 0`;
/// no root means the lines cannot carry `p_cpl` from that output voltage.
pub fn output_equilibrium(
    cfg: &GridConfig,
    p_cpl: f64,
    v_out: f64,
) -> Result<Equilibrium, EquilibriumError> {
    cfg.validate()?;
    if !(p_cpl.is_finite() && p_cpl >= 0.0) || !(v_out.is_finite() && v_out > 0.0) {
        return Err(SimError::Domain(format!("p_cpl = {p_cpl}, v_out = {v_out}")).into());
    }
    let disc = v_out * v_out - 4.0 * p_cpl * cfg.r_parallel();
    let none = EquilibriumError::NoEquilibrium {
        p_cpl,
        v_ref: v_out,
        v_max: f64::NAN,
    };
    if disc < 0.0 {
        return Err(none);
    }
    let v_dc = 0.5 * (v_out + disc.sqrt());
    steady_state(cfg, v_out, v_dc).ok_or(none)
}

fn steady_state(cfg: &GridConfig, v_out: f64, v_dc: f64) -> Option<Equilibrium> {
    let mut duties = [0.0; N_CONV];
    let mut state = SystemState {
        v_dc,
        ..Default::default()
    };
    for (k, c) in cfg.converters.iter().enumerate() {
        let d = 1.0 - c.e / v_out;
        if !(0.0..=1.0).contains(&d) {
            // source above the required output voltage: a boost stage cannot step down
            return None;
        }
        let i_line = (v_out - v_dc) / c.r_line;
        duties[k] = d;
        state.v_out[k] = v_out;
        state.i_line[k] = i_line;
        state.i_l[k] = i_line / (1.0 - d);
    }
    Some(Equilibrium { duties, state })
}
