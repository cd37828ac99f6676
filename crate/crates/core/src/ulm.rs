//! Ultra-local model (ULM) control with an intelligent PI (iPI) law.
//!
//! The local model `dy/dt = chi * u + F` lumps everything unknown into `F`,
//! which is re-estimated every control period from the measured output and
//! the previously applied input. The control law cancels the estimate and
//! closes a PI loop on the tracking error:
//!
//! ```text
//! u = (-(F_hat + delta) + dy_ref/dt + Kp e + Ki int(e)) / chi
//! ```
//!
//! `delta` is an external correction supplied by the learning agent.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::converter::{DUTY_MAX, DUTY_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlmConfig {
    pub chi_hat: f64,
    pub k_p: f64,
    pub k_i: f64,
    /// Number of past control periods spanned by the derivative estimate.
    pub estimator_window: usize,
    pub control_period: f64,
    /// Bound on the magnitude of the error integral.
    pub integral_limit: f64,
}

impl Default for UlmConfig {
    fn default() -> Self {
        Self {
            chi_hat: 1.0e6,
            k_p: 800.0,
            k_i: 0.0,
            estimator_window: 1,
            control_period: 1e-4,
            integral_limit: 1.0,
        }
    }
}

impl UlmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.chi_hat.is_finite() && self.chi_hat != 0.0) {
            return Err(format!("chi_hat must be finite and non-zero, got {}", self.chi_hat));
        }
        if self.estimator_window < 1 {
            return Err("estimator_window must be >= 1".into());
        }
        if !(self.control_period.is_finite() && self.control_period > 0.0) {
            return Err(format!("control_period must be > 0, got {}", self.control_period));
        }
        if !(self.integral_limit.is_finite() && self.integral_limit >= 0.0) {
            return Err(format!("integral_limit must be >= 0, got {}", self.integral_limit));
        }
        if !(self.k_p.is_finite() && self.k_i.is_finite()) {
            return Err("gains must be finite".into());
        }
        Ok(())
    }
}

/// Strategy for estimating the lumped dynamics `F`.
pub trait FEstimator {
    /// Record the output measured at the current period and return the new
    /// estimate. `history` holds `(y, u)` pairs, newest last, where `u` is the
    /// input applied after `y` was measured.
    fn estimate(&self, history: &VecDeque<(f64, f64)>, y_now: f64, cfg: &UlmConfig) -> f64;
}

/// Backward difference over the configured window: `F = dy/dt - chi * u`,
/// with `u` averaged over the same window.
#[derive(Debug, Clone, Copy, Default)]
pub struct WindowedDifference;

impl FEstimator for WindowedDifference {
    fn estimate(&self, history: &VecDeque<(f64, f64)>, y_now: f64, cfg: &UlmConfig) -> f64 {
        if history.is_empty() {
            return 0.0;
        }
        let w = cfg.estimator_window.min(history.len());
        let (y_old, _) = history[history.len() - w];
        let slope = (y_now - y_old) / (w as f64 * cfg.control_period);
        let u_mean = history.iter().rev().take(w).map(|&(_, u)| u).sum::<f64>() / w as f64;
        slope - cfg.chi_hat * u_mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UlmState {
    pub f_hat: f64,
    pub integral_accum: f64,
    pub last_y: Option<f64>,
    pub last_u: f64,
    last_e: Option<f64>,
    history: VecDeque<(f64, f64)>,
}

impl UlmState {
    /// Fresh controller state with zeroed accumulators.
    pub fn reset(_cfg: &UlmConfig) -> Self {
        Self {
            f_hat: 0.0,
            integral_accum: 0.0,
            last_y: None,
            last_u: 0.0,
            last_e: None,
            history: VecDeque::new(),
        }
    }

    /// Start from a known steady operating point `(y0, u0)` so the first
    /// command continues `u0` instead of jumping.
    pub fn primed(cfg: &UlmConfig, y0: f64, u0: f64) -> Self {
        let mut s = Self::reset(cfg);
        s.f_hat = -cfg.chi_hat * u0;
        s.last_y = Some(y0);
        s.last_u = u0;
        s.history.push_back((y0, u0));
        s
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// iPI controller for one output.
#[derive(Debug, Clone)]
pub struct UlmController<E = WindowedDifference> {
    pub cfg: UlmConfig,
    pub state: UlmState,
    estimator: E,
}

impl UlmController<WindowedDifference> {
    pub fn new(cfg: UlmConfig) -> Self {
        Self::with_estimator(cfg, WindowedDifference)
    }
}

impl<E: FEstimator> UlmController<E> {
    pub fn with_estimator(cfg: UlmConfig, estimator: E) -> Self {
        Self {
            state: UlmState::reset(&cfg),
            cfg,
            estimator,
        }
    }

    pub fn reset(&mut self) {
        self.state = UlmState::reset(&self.cfg);
    }

    pub fn prime(&mut self, y0: f64, u0: f64) {
        self.state = UlmState::primed(&self.cfg, y0, u0);
    }

    /// Update `f_hat` from the newest measurement. Returns 0 until one
    /// `(y, u)` sample has been recorded.
    pub fn estimate_f(&mut self, y_now: f64) -> f64 {
        self.state.f_hat = self.estimator.estimate(&self.state.history, y_now, &self.cfg);
        self.state.f_hat
    }

    /// Evaluate the iPI law with the current `f_hat` and return the saturated
    /// duty. Does not re-estimate `F`; see [`UlmController::step`].
    pub fn control_law(&mut self, y: f64, y_ref: f64, y_ref_dot: f64, delta_corr: f64) -> f64 {
        let cfg = &self.cfg;
        let st = &mut self.state;
        let e = y_ref - y;
        let prev_e = st.last_e.unwrap_or(e);
        let candidate = (st.integral_accum + 0.5 * (e + prev_e) * cfg.control_period)
            .clamp(-cfg.integral_limit, cfg.integral_limit);

        let raw = |integral: f64| {
            (-(st.f_hat + delta_corr) + y_ref_dot + cfg.k_p * e + cfg.k_i * integral) / cfg.chi_hat
        };
        let u_try = raw(candidate);
        let pushes_further = |u: f64| {
            let grow = candidate - st.integral_accum;
            // sign of du/d(integral) is sign(k_i / chi)
            let du = grow * cfg.k_i / cfg.chi_hat;
            (u > DUTY_MAX && du > 0.0) || (u < DUTY_MIN && du < 0.0)
        };
        if !pushes_further(u_try) {
            st.integral_accum = candidate;
        }
        let u = raw(st.integral_accum).clamp(DUTY_MIN, DUTY_MAX);
        st.last_e = Some(e);
        u
    }

    /// One control period: estimate `F`, evaluate the law, remember `(y, u)`.
    pub fn step(&mut self, y: f64, y_ref: f64, y_ref_dot: f64, delta_corr: f64) -> f64 {
        self.estimate_f(y);
        let u = self.control_law(y, y_ref, y_ref_dot, delta_corr);
        self.record(y, u);
        u
    }

    /// Remember the measurement and the input actually applied after it.
    pub fn record(&mut self, y: f64, u: f64) {
        let st = &mut self.state;
        st.last_y = Some(y);
        st.last_u = u;
        st.history.push_back((y, u));
        while st.history.len() > self.cfg.estimator_window {
            st.history.pop_front();
        }
    }
}
