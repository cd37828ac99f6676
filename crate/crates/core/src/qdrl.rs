//! Quantum-inspired tabular reinforcement learning.
//!
//! Each discretized plant state owns a row of action values (Q) and a row of
//! selection preferences (P). Before acting, the P row is mapped onto the
//! amplitudes of an `N_Q`-qubit register; measuring the register collapses it
//! onto one basis action `|k>` with probability `|C_k|^2`. The chosen discrete
//! action is then refined into a continuous correction using the neighbouring
//! actions and the collapse probability.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Ordered candidate corrections `a_0 < a_1 < ... < a_{M-1}`, `M = 2^N_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    values: Vec<f64>,
    n_qubits: u32,
}

impl ActionSet {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        let m = values.len();
        if m < 2 || !m.is_power_of_two() {
            return Err(format!("action count {m} must be a power of two >= 2"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err("action values must be finite".into());
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err("action values must be strictly increasing".into());
        }
        Ok(Self {
            n_qubits: m.trailing_zeros(),
            values,
        })
    }

    /// `2^n_qubits` values evenly spaced over `[-delta_max, delta_max]`.
    pub fn uniform(n_qubits: u32, delta_max: f64) -> Result<Self, String> {
        if n_qubits == 0 || n_qubits > 16 {
            return Err(format!("n_qubits {n_qubits} outside 1..=16"));
        }
        if !(delta_max.is_finite() && delta_max > 0.0) {
            return Err(format!("delta_max must be > 0, got {delta_max}"));
        }
        let m = 1usize << n_qubits;
        let step = 2.0 * delta_max / (m - 1) as f64;
        Self::new((0..m).map(|i| -delta_max + step * i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_qubits(&self) -> u32 {
        self.n_qubits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Refine discrete action `k` into a continuous correction:
///
/// `delta' = a_k + (a_{k+1} + a_{k-1}) / 2 * (q - 1/2)`
///
/// At either end of the set the missing neighbour is replaced by `a_k`.
pub fn synthesize_action(actions: &ActionSet, k: usize, q: f64) -> f64 {
    let v = actions.values();
    let a_k = v[k];
    let lower = if k == 0 { a_k } else { v[k - 1] };
    let upper = v.get(k + 1).copied().unwrap_or(a_k);
    a_k + 0.5 * (upper + lower) * (q - 0.5)
}

/// Amplitude register over the action basis. Amplitudes are kept real and
/// non-negative, so `|C_k|^2 = C_k^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumRegister {
    amplitudes: Vec<f64>,
}

impl QuantumRegister {
    /// Equal superposition over `2^n_qubits` basis states.
    pub fn uniform(n_qubits: u32) -> Self {
        let m = 1usize << n_qubits;
        Self {
            amplitudes: vec![(1.0 / m as f64).sqrt(); m],
        }
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.amplitudes[k] * self.amplitudes[k]
    }

    pub fn norm_sq(&self) -> f64 {
        self.amplitudes.iter().map(|c| c * c).sum()
    }

    /// Set `C_k = sqrt(P_k / sum(P))`. An all-zero (or unusable) row resets
    /// the register to the equal superposition.
    pub fn refresh_amplitudes(&mut self, p_row: &[f64]) {
        assert_eq!(p_row.len(), self.amplitudes.len(), "P row length mismatch");
        let total: f64 = p_row.iter().map(|p| p.max(0.0)).sum();
        if !(total.is_finite() && total > 0.0) {
            let c = (1.0 / p_row.len() as f64).sqrt();
            self.amplitudes.iter_mut().for_each(|a| *a = c);
            return;
        }
        for (a, p) in self.amplitudes.iter_mut().zip(p_row) {
            *a = (p.max(0.0) / total).sqrt();
        }
        // one more pass removes the rounding left by the square roots
        let norm = self.norm_sq().sqrt();
        self.amplitudes.iter_mut().for_each(|a| *a /= norm);
    }

    /// Measure the register: returns the basis index and its probability.
    pub fn collapse<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.gen::<f64>() * self.norm_sq();
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (k, c) in self.amplitudes.iter().enumerate() {
            let p = c * c;
            if p > 0.0 {
                last_nonzero = k;
            }
            acc += p;
            if u < acc {
                return (k, p);
            }
        }
        (last_nonzero, self.probability(last_nonzero))
    }
}

/// Q-value and P-value tables over (state bin, action).
#[derive(Debug, Clone, PartialEq)]
pub struct LearningTables {
    pub n_states: usize,
    pub n_actions: usize,
    q: Vec<f64>,
    p: Vec<f64>,
    /// Learning factor.
    pub zeta: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Preference update factor.
    pub mu: f64,
}

impl LearningTables {
    /// Zero Q values and uniform P rows.
    pub fn new(n_states: usize, n_actions: usize, zeta: f64, gamma: f64, mu: f64) -> Self {
        assert!(n_states > 0 && n_actions > 0);
        for (name, v) in [("zeta", zeta), ("gamma", gamma), ("mu", mu)] {
            assert!((0.0..=1.0).contains(&v), "{name} = {v} outside [0, 1]");
        }
        Self {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
            p: vec![1.0 / n_actions as f64; n_states * n_actions],
            zeta,
            gamma,
            mu,
        }
    }

    /// Set every Q value to `v`.
    pub fn fill_q(&mut self, v: f64) {
        self.q.iter_mut().for_each(|q| *q = v);
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn set_q(&mut self, s: usize, a: usize, v: f64) {
        self.q[s * self.n_actions + a] = v;
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn p_row(&self, s: usize) -> &[f64] {
        &self.p[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn set_p_row(&mut self, s: usize, row: &[f64]) {
        assert_eq!(row.len(), self.n_actions);
        self.p[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(row);
    }

    pub fn max_q(&self, s: usize) -> f64 {
        self.q_row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expected Q value of state `s` under its preference row.
    pub fn policy_value(&self, s: usize) -> f64 {
        self.q_row(s).iter().zip(self.p_row(s)).map(|(q, p)| q * p).sum()
    }

    /// `Q[s,a] += zeta * (r + gamma * max_a' Q[s_pred, a'] - Q[s,a])`.
    /// Returns the temporal-difference error.
    pub fn q_update(&mut self, s: usize, s_pred: usize, a: usize, r: f64) -> f64 {
        let target = r + self.gamma * self.max_q(s_pred);
        let idx = s * self.n_actions + a;
        let td = target - self.q[idx];
        self.q[idx] += self.zeta * td;
        td
    }

    /// Move the preference row for `s` toward (or away from) `a_taken`.
    ///
    /// Reinforce: `P[a] += mu (1 - P[a])`, others decay by `(1 - mu)`.
    /// Penalize: `P[a]` decays by `(1 - mu)` and the freed mass is shared
    /// evenly, `P[b] = (1 - mu) P[b] + mu / (M - 1)`. Both branches preserve
    /// the row sum; the row is renormalized against rounding drift.
    pub fn p_update(&mut self, s: usize, a_taken: usize, reinforce: bool) {
        let mu = self.mu;
        let n = self.n_actions;
        let share = if n > 1 { mu / (n - 1) as f64 } else { 0.0 };
        let row = &mut self.p[s * n..(s + 1) * n];
        for (a, p) in row.iter_mut().enumerate() {
            *p = match (reinforce, a == a_taken) {
                (true, true) => *p + mu * (1.0 - *p),
                (true, false) | (false, true) => (1.0 - mu) * *p,
                (false, false) => (1.0 - mu) * *p + share,
            };
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|p| *p = (*p / sum).clamp(0.0, 1.0));
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / n as f64);
        }
    }

    /// Write `kind,state,action_0,...` rows for both tables.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,state");
        for a in 0..self.n_actions {
            let _ = write!(out, ",a{a}");
        }
        out.push('\n');
        for (name, data) in [("Q", &self.q), ("P", &self.p)] {
            for s in 0..self.n_states {
                let _ = write!(out, "{name},{s}");
                for v in &data[s * self.n_actions..(s + 1) * self.n_actions] {
                    let _ = write!(out, ",{v:.9e}");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn dump_csv(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub c1: f64,
    pub c2: f64,
    /// Relative error below which the reward is positive.
    pub band: f64,
    pub reward_cap: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            c1: 100.0,
            c2: 1.0,
            band: 0.05,
            reward_cap: 1e3,
        }
    }
}

/// `c2 / eps` inside the band (capped), `-c1 * eps` outside, with
/// `eps = |v_o - v_ref| / v_ref`.
pub fn reward(v_o: f64, v_ref: f64, cfg: &RewardConfig) -> f64 {
    let eps = (v_o - v_ref).abs() / v_ref;
    if eps < cfg.band {
        if eps == 0.0 {
            cfg.reward_cap
        } else {
            (cfg.c2 / eps).min(cfg.reward_cap)
        }
    } else {
        -cfg.c1 * eps
    }
}

/// Uniform 2-D grid over normalized tracking error and error rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateGrid {
    /// Bins per axis (odd, so zero error lands on a centre bin).
    pub size: usize,
    /// Half-width of the `e / v_ref` axis.
    pub e_range: f64,
    /// Half-width of the `e_dot * tau / v_ref` axis.
    pub e_dot_range: f64,
    /// Time scale applied to `e_dot` (s).
    pub tau: f64,
}

impl Default for StateGrid {
    fn default() -> Self {
        Self {
            size: 11,
            e_range: 0.05,
            e_dot_range: 0.05,
            tau: 1e-3,
        }
    }
}

impl StateGrid {
    pub fn n_bins(&self) -> usize {
        self.size * self.size
    }

    fn axis(x: f64, half: f64, size: usize) -> usize {
        let x = if x.is_nan() { 0.0 } else { x };
        let pos = (x + half) / (2.0 * half) * size as f64;
        (pos.floor().max(0.0) as usize).min(size - 1)
    }

    pub fn bin_state(&self, e: f64, e_dot: f64, v_ref: f64) -> usize {
        let row = Self::axis(e / v_ref, self.e_range, self.size);
        let col = Self::axis(e_dot * self.tau / v_ref, self.e_dot_range, self.size);
        row * self.size + col
    }

    pub fn split(&self, bin: usize) -> (usize, usize) {
        (bin / self.size, bin % self.size)
    }

    pub fn join(&self, row: usize, col: usize) -> usize {
        row * self.size + col
    }
}
