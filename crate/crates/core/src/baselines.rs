//! Comparator controllers: a fixed-gain PI and a one-step finite-control-set
//! MPC over a grid of duty ratios.

use serde::{Deserialize, Serialize};

use crate::converter::{output_equilibrium, rk4_step, GridConfig, SystemState, DUTY_MAX, DUTY_MIN, N_CONV};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiConfig {
    pub k_p: f64,
    pub k_i: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl Default for PiConfig {
    fn default() -> Self {
        Self {
            k_p: 5e-4,
            k_i: 0.5,
            out_min: DUTY_MIN,
            out_max: DUTY_MAX,
        }
    }
}

impl PiConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.out_min < self.out_max) {
            return Err(format!("PI limits out of order: {} >= {}", self.out_min, self.out_max));
        }
        if !(self.k_p.is_finite() && self.k_i.is_finite()) {
            return Err("PI gains must be finite".into());
        }
        Ok(())
    }
}

/// `clamp(Kp e + Ki integral)`.
pub fn pi_control(cfg: &PiConfig, e: f64, integral: f64) -> f64 {
    (cfg.k_p * e + cfg.k_i * integral).clamp(cfg.out_min, cfg.out_max)
}

/// PI loop with conditional-integration anti-windup.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub cfg: PiConfig,
    pub integral: f64,
}

impl PiController {
    pub fn new(cfg: PiConfig) -> Self {
        Self { cfg, integral: 0.0 }
    }

    /// Preload the integral so the first output equals `u0` at zero error.
    pub fn prime(&mut self, u0: f64) {
        if self.cfg.k_i != 0.0 {
            self.integral = u0 / self.cfg.k_i;
        }
    }

    pub fn step(&mut self, e: f64, dt: f64) -> f64 {
        let candidate = self.integral + e * dt;
        let raw = self.cfg.k_p * e + self.cfg.k_i * candidate;
        let saturated_high = raw > self.cfg.out_max && e * self.cfg.k_i > 0.0;
        let saturated_low = raw < self.cfg.out_min && e * self.cfg.k_i < 0.0;
        if !(saturated_high || saturated_low) {
            self.integral = candidate;
        }
        pi_control(&self.cfg, e, self.integral)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcsMpcConfig {
    /// Candidate duty ratios, evaluated in ascending order.
    pub candidates: Vec<f64>,
    /// Prediction step (one control period).
    pub horizon: f64,
    pub w_v: f64,
    pub w_i: f64,
    /// Outer voltage gain on the inductor-current reference (A/V).
    pub k_v: f64,
}

impl Default for FcsMpcConfig {
    fn default() -> Self {
        Self {
            candidates: duty_grid(21),
            horizon: 1e-4,
            w_v: 1.0,
            w_i: 1000.0,
            k_v: 1.0,
        }
    }
}

impl FcsMpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.candidates.is_empty() {
            return Err("MPC candidate grid is empty".into());
        }
        if self.candidates.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err("MPC candidates must lie in [0, 1]".into());
        }
        if !(self.w_v >= 0.0 && self.w_i >= 0.0 && self.k_v >= 0.0) {
            return Err("MPC weights and k_v must be >= 0".into());
        }
        if !(self.horizon > 0.0) {
            return Err("MPC horizon must be > 0".into());
        }
        Ok(())
    }
}

/// `n` duty values evenly spaced over `[DUTY_MIN, DUTY_MAX]`.
pub fn duty_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (DUTY_MIN + DUTY_MAX)];
    }
    let step = (DUTY_MAX - DUTY_MIN) / (n - 1) as f64;
    (0..n).map(|k| DUTY_MIN + step * k as f64).collect()
}

/// One-step prediction with the candidate duty applied to every converter.
pub fn mpc_predict(
    state: &SystemState,
    duty: f64,
    p_cpl: f64,
    grid: &GridConfig,
    horizon: f64,
) -> Option<SystemState> {
    rk4_step(state, &[duty; N_CONV], p_cpl, grid, horizon).ok()
}

/// Inductor currents that hold every converter output at `v_ref` while
/// delivering `p_cpl`, plus `k_v` per volt of output error. Falls back to the
/// present currents when that operating point does not exist.
pub fn current_reference(
    cfg: &FcsMpcConfig,
    state: &SystemState,
    p_cpl: f64,
    v_ref: f64,
    grid: &GridConfig,
) -> [f64; N_CONV] {
    let base = output_equilibrium(grid, p_cpl, v_ref).map_or(state.i_l, |eq| eq.state.i_l);
    std::array::from_fn(|k| base[k] + cfg.k_v * (v_ref - state.v_out[k]))
}

/// Cost of a candidate: `w_v sum (v_out' - v_ref)^2 + w_i sum (i_L' - i_L*)^2`.
pub fn mpc_cost(
    cfg: &FcsMpcConfig,
    state: &SystemState,
    duty: f64,
    p_cpl: f64,
    v_ref: f64,
    grid: &GridConfig,
    i_ref: &[f64; N_CONV],
) -> f64 {
    match mpc_predict(state, duty, p_cpl, grid, cfg.horizon) {
        Some(next) => (0..N_CONV)
            .map(|k| {
                let dv = next.v_out[k] - v_ref;
                let di = next.i_l[k] - i_ref[k];
                cfg.w_v * dv * dv + cfg.w_i * di * di
            })
            .sum(),
        None => f64::INFINITY,
    }
}

/// Candidate with the lowest predicted cost; ties go to the smaller duty.
pub fn fcs_mpc_control(
    cfg: &FcsMpcConfig,
    state: &SystemState,
    p_cpl: f64,
    v_ref: f64,
    grid: &GridConfig,
) -> f64 {
    let i_ref = current_reference(cfg, state, p_cpl, v_ref, grid);
    let mut sorted = cfg.candidates.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best = sorted[0];
    let mut best_cost = f64::INFINITY;
    for &d in &sorted {
        let j = mpc_cost(cfg, state, d, p_cpl, v_ref, grid, &i_ref);
        if j < best_cost {
            best_cost = j;
            best = d;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::equilibrium_solve;

    #[test]
    fn pi_zero_error_hits_lower_clamp() {
        assert_eq!(pi_control(&PiConfig::default(), 0.0, 0.0), DUTY_MIN);
    }

    #[test]
    fn pi_proportional_term() {
        let cfg = PiConfig {
            k_p: 0.01,
            k_i: 0.0,
            out_min: -10.0,
            out_max: 10.0,
        };
        assert!((pi_control(&cfg, 3.0, 0.0) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn pi_anti_windup_freezes_integral() {
        let mut pi = PiController::new(PiConfig::default());
        for _ in 0..1000 {
            pi.step(1e4, 1e-4);
        }
        assert!(pi.cfg.k_i * pi.integral <= DUTY_MAX + 1e-12);
    }

    #[test]
    fn duty_grid_spans_limits() {
        let g = duty_grid(21);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], DUTY_MIN);
        assert!((g[20] - DUTY_MAX).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_pick_smallest() {
        let cfg = FcsMpcConfig {
            w_v: 0.0,
            w_i: 0.0,
            ..Default::default()
        };
        let grid = GridConfig::default();
        let eq = equilibrium_solve(&grid, 30e3, 750.0).unwrap();
        assert_eq!(fcs_mpc_control(&cfg, &eq.state, 30e3, 750.0, &grid), DUTY_MIN);
    }

    #[test]
    fn output_is_a_candidate() {
        let cfg = FcsMpcConfig::default();
        let grid = GridConfig::default();
        let mut s = equilibrium_solve(&grid, 40e3, 750.0).unwrap().state;
        s.v_out[0] -= 25.0;
        s.i_l[1] += 7.0;
        let d = fcs_mpc_control(&cfg, &s, 40e3, 750.0, &grid);
        assert!(cfg.candidates.contains(&d));
    }
}
