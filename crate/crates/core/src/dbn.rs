//! Restricted Boltzmann machines and a small deep belief network used as a
//! next-state predictor for the agent.
//!
//! Units are Bernoulli. For one RBM with parameters `W` (visible x hidden),
//! `b_v` and `b_h`:
//!
//! ```text
//! E(v, h)      = -b_v.v - b_h.h - v^T W h
//! P(h_j=1 | v) = sigmoid(b_h[j] + sum_i v_i W[i][j])
//! P(v_i=1 | h) = sigmoid(b_v[i] + sum_j W[i][j] h_j)
//! ```

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest `n_visible + n_hidden` accepted by exact enumeration.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RbmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("exact enumeration refused: {units} units exceeds cap of {ENUMERATION_CAP}")]
    TooLarge { units: usize },
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub n_visible: usize,
    pub n_hidden: usize,
    /// Row-major `n_visible x n_hidden`.
    pub w: Vec<f64>,
    pub b_v: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl RbmParams {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            n_visible,
            n_hidden,
            w: vec![0.0; n_visible * n_hidden],
            b_v: vec![0.0; n_visible],
            b_h: vec![0.0; n_hidden],
        }
    }

    /// Small random weights, zero biases.
    pub fn random<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(n_visible, n_hidden);
        for w in &mut p.w {
            *w = scale * (2.0 * rng.gen::<f64>() - 1.0);
        }
        p
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_hidden + j]
    }

    #[inline]
    pub fn weight_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.w[i * self.n_hidden + j]
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b_v).chain(&self.b_h).all(|x| x.is_finite())
    }

    fn check(&self, v: &[f64], h: &[f64]) -> Result<(), RbmError> {
        if v.len() != self.n_visible {
            return Err(RbmError::Dimension {
                expected: self.n_visible,
                got: v.len(),
            });
        }
        if h.len() != self.n_hidden {
            return Err(RbmError::Dimension {
                expected: self.n_hidden,
                got: h.len(),
            });
        }
        Ok(())
    }

    pub fn energy(&self, v: &[f64], h: &[f64]) -> Result<f64, RbmError> {
        self.check(v, h)?;
        let mut e = 0.0;
        for (b, x) in self.b_v.iter().zip(v) {
            e -= b * x;
        }
        for (b, x) in self.b_h.iter().zip(h) {
            e -= b * x;
        }
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            for (j, hj) in h.iter().enumerate() {
                e -= vi * self.weight(i, j) * hj;
            }
        }
        Ok(e)
    }

    pub fn hidden_prob(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.n_visible);
        let mut act = self.b_h.clone();
        for (i, vi) in v.iter().enumerate() {
            if *vi == 0.0 {
                continue;
            }
            let row = &self.w[i * self.n_hidden..(i + 1) * self.n_hidden];
            for (a, w) in act.iter_mut().zip(row) {
                *a += vi * w;
            }
        }
        act.into_iter().map(sigmoid).collect()
    }

    pub fn visible_prob(&self, h: &[f64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.n_hidden);
        (0..self.n_visible)
            .map(|i| {
                let row = &self.w[i * self.n_hidden..(i + 1) * self.n_hidden];
                let a: f64 = row.iter().zip(h).map(|(w, x)| w * x).sum();
                sigmoid(self.b_v[i] + a)
            })
            .collect()
    }

    pub fn sample_hidden<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Vec<f64> {
        bernoulli(&self.hidden_prob(v), rng)
    }

    pub fn sample_visible<R: Rng + ?Sized>(&self, h: &[f64], rng: &mut R) -> Vec<f64> {
        bernoulli(&self.visible_prob(h), rng)
    }

    /// Exact `P(v)` by summing `exp(-E)` over every joint configuration.
    pub fn marginal_prob(&self, v: &[f64]) -> Result<f64, RbmError> {
        let units = self.n_visible + self.n_hidden;
        if units > ENUMERATION_CAP {
            return Err(RbmError::TooLarge { units });
        }
        if v.len() != self.n_visible {
            return Err(RbmError::Dimension {
                expected: self.n_visible,
                got: v.len(),
            });
        }
        // Shift by the minimum energy so the exponentials stay in range.
        let mut energies = Vec::with_capacity(1 << units);
        let mut num_idx = Vec::new();
        let v_code = bits_to_index(v);
        for vc in 0..(1usize << self.n_visible) {
            let vv = index_to_bits(vc, self.n_visible);
            for hc in 0..(1usize << self.n_hidden) {
                let hh = index_to_bits(hc, self.n_hidden);
                if vc == v_code {
                    num_idx.push(energies.len());
                }
                energies.push(self.energy(&vv, &hh)?);
            }
        }
        let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let z: f64 = energies.iter().map(|e| (e_min - e).exp()).sum();
        let num: f64 = num_idx.iter().map(|&k| (e_min - energies[k]).exp()).sum();
        Ok(num / z)
    }

    /// One CD-1 update on a minibatch of visible vectors. Returns the mean
    /// absolute reconstruction error `|v - P(v'|h)|` before the update.
    pub fn cd1_train<R: Rng + ?Sized>(&mut self, batch: &[Vec<f64>], lr: f64, rng: &mut R) -> f64 {
        assert!(!batch.is_empty(), "empty minibatch");
        let (nv, nh) = (self.n_visible, self.n_hidden);
        let mut dw = vec![0.0; nv * nh];
        let mut dbv = vec![0.0; nv];
        let mut dbh = vec![0.0; nh];
        let mut recon_err = 0.0;

        for v0 in batch {
            assert_eq!(v0.len(), nv);
            let ph0 = self.hidden_prob(v0);
            let h0 = bernoulli(&ph0, rng);
            let v1 = self.visible_prob(&h0);
            let ph1 = self.hidden_prob(&v1);

            for i in 0..nv {
                for j in 0..nh {
                    dw[i * nh + j] += v0[i] * ph0[j] - v1[i] * ph1[j];
                }
                dbv[i] += v0[i] - v1[i];
                recon_err += (v0[i] - v1[i]).abs();
            }
            for j in 0..nh {
                dbh[j] += ph0[j] - ph1[j];
            }
        }

        let scale = lr / batch.len() as f64;
        for (w, d) in self.w.iter_mut().zip(&dw) {
            *w += scale * d;
        }
        for (b, d) in self.b_v.iter_mut().zip(&dbv) {
            *b += scale * d;
        }
        for (b, d) in self.b_h.iter_mut().zip(&dbh) {
            *b += scale * d;
        }
        recon_err / (batch.len() * nv) as f64
    }

    /// Mean `|v - P(v'|h)|` with `h` sampled from `P(h|v)`.
    pub fn reconstruction_error<R: Rng + ?Sized>(&self, batch: &[Vec<f64>], rng: &mut R) -> f64 {
        let mut err = 0.0;
        for v in batch {
            let h = self.sample_hidden(v, rng);
            let r = self.visible_prob(&h);
            err += v.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
        err / (batch.len() * self.n_visible) as f64
    }

    pub fn to_csv(&self, layer: usize) -> String {
        let mut out = String::new();
        for i in 0..self.n_visible {
            for j in 0..self.n_hidden {
                let _ = writeln!(out, "{layer},w,{i},{j},{:.12e}", self.weight(i, j));
            }
        }
        for (i, b) in self.b_v.iter().enumerate() {
            let _ = writeln!(out, "{layer},b_v,{i},,{b:.12e}");
        }
        for (j, b) in self.b_h.iter().enumerate() {
            let _ = writeln!(out, "{layer},b_h,{j},,{b:.12e}");
        }
        out
    }
}

fn bernoulli<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Vec<f64> {
    p.iter()
        .map(|&p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
        .collect()
}

/// Little-endian binary expansion of `idx` into `n` units.
pub fn index_to_bits(idx: usize, n: usize) -> Vec<f64> {
    (0..n).map(|b| ((idx >> b) & 1) as f64).collect()
}

pub fn bits_to_index(bits: &[f64]) -> usize {
    bits.iter()
        .enumerate()
        .map(|(b, &x)| if x > 0.5 { 1usize << b } else { 0 })
        .sum()
}

fn bits_for(n: usize) -> usize {
    (usize::BITS - (n.max(2) - 1).leading_zeros()) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub readout_rate: f64,
    pub buffer: usize,
    pub batch: usize,
    pub cd_steps: usize,
}

impl Default for DbnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 16,
            learning_rate: 0.05,
            readout_rate: 0.5,
            buffer: 512,
            batch: 16,
            cd_steps: 1,
        }
    }
}

impl DbnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.layers == 0 || self.hidden == 0 {
            return Err("dbn needs at least one layer with one hidden unit".into());
        }
        if self.buffer == 0 || self.batch == 0 || self.cd_steps == 0 {
            return Err("dbn buffer, batch and cd_steps must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.readout_rate >= 0.0) {
            return Err("dbn learning rates must be >= 0".into());
        }
        Ok(())
    }
}

/// Stacked RBMs with a softmax readout over next-state bins.
///
/// The input is the binary code of `(state, action)`; mean-field activations
/// are propagated upward and scored linearly against every bin.
#[derive(Debug, Clone)]
pub struct DbnStack {
    pub cfg: DbnConfig,
    pub layers: Vec<RbmParams>,
    n_bins: usize,
    n_actions: usize,
    state_bits: usize,
    action_bits: usize,
    /// Row-major `n_bins x (top_hidden + 1)`, last column is the bias.
    readout: Vec<f64>,
    buffer: VecDeque<(usize, usize, usize)>,
    trained: bool,
    rng: ChaCha8Rng,
}

impl DbnStack {
    pub fn new(cfg: DbnConfig, n_bins: usize, n_actions: usize, seed: u64) -> Self {
        let state_bits = bits_for(n_bins);
        let action_bits = bits_for(n_actions);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut n_in = state_bits + action_bits;
        for _ in 0..cfg.layers {
            layers.push(RbmParams::random(n_in, cfg.hidden, 0.1, &mut rng));
            n_in = cfg.hidden;
        }
        Self {
            readout: vec![0.0; n_bins * (cfg.hidden + 1)],
            cfg,
            layers,
            n_bins,
            n_actions,
            state_bits,
            action_bits,
            buffer: VecDeque::with_capacity(cfg.buffer),
            trained: false,
            rng,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn n_visible(&self) -> usize {
        self.state_bits + self.action_bits
    }

    pub fn encode(&self, s: usize, a: usize) -> Vec<f64> {
        let mut v = index_to_bits(s, self.state_bits);
        v.extend(index_to_bits(a, self.action_bits));
        v
    }

    /// Mean-field activations of the top layer.
    pub fn propagate(&self, v: &[f64]) -> Vec<f64> {
        self.layers.iter().fold(v.to_vec(), |x, rbm| rbm.hidden_prob(&x))
    }

    fn scores(&self, top: &[f64]) -> Vec<f64> {
        let k = top.len() + 1;
        (0..self.n_bins)
            .map(|b| {
                let row = &self.readout[b * k..(b + 1) * k];
                row[..k - 1].iter().zip(top).map(|(w, x)| w * x).sum::<f64>() + row[k - 1]
            })
            .collect()
    }

    /// Most likely next bin; the identity until the first training step.
    pub fn predict_next_bin(&self, s: usize, a: usize) -> usize {
        if !self.trained {
            return s.min(self.n_bins - 1);
        }
        let top = self.propagate(&self.encode(s, a));
        let scores = self.scores(&top);
        let mut best = 0;
        for (b, sc) in scores.iter().enumerate() {
            if *sc > scores[best] {
                best = b;
            }
        }
        best.min(self.n_bins - 1)
    }

    /// Store a transition in the replay ring.
    pub fn observe(&mut self, s: usize, a: usize, s_next: usize) {
        debug_assert!(s < self.n_bins && s_next < self.n_bins && a < self.n_actions);
        if self.buffer.len() == self.cfg.buffer {
            self.buffer.pop_front();
        }
        self.buffer.push_back((s, a, s_next));
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// One minibatch: greedy CD updates layer by layer, then a supervised
    /// cross-entropy step on the readout that is also back-propagated into
    /// the recognition weights. No-op while the buffer is empty.
    pub fn train_step(&mut self) -> Option<f64> {
        if self.buffer.is_empty() {
            return None;
        }
        let n = self.cfg.batch;
        let picks: Vec<(usize, usize, usize)> = (0..n)
            .map(|_| self.buffer[self.rng.gen_range(0..self.buffer.len())])
            .collect();
        let inputs: Vec<Vec<f64>> = picks.iter().map(|&(s, a, _)| self.encode(s, a)).collect();

        let mut recon = 0.0;
        let mut data = inputs.clone();
        for l in 0..self.layers.len() {
            for _ in 0..self.cfg.cd_steps {
                let err = self.layers[l].cd1_train(&data, self.cfg.learning_rate, &mut self.rng);
                if l == 0 {
                    recon = err;
                }
            }
            data = data.iter().map(|x| self.layers[l].hidden_prob(x)).collect();
        }

        self.fine_tune(&inputs, &picks);
        self.trained = true;
        Some(recon)
    }

    fn fine_tune(&mut self, inputs: &[Vec<f64>], picks: &[(usize, usize, usize)]) {
        let k = self.cfg.hidden + 1;
        let n_layers = self.layers.len();
        let mut g_readout = vec![0.0; self.readout.len()];
        let mut g_w: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let mut g_b: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.b_h.len()]).collect();

        for (v, &(_, _, target)) in inputs.iter().zip(picks) {
            let mut acts = Vec::with_capacity(n_layers + 1);
            acts.push(v.clone());
            for rbm in &self.layers {
                let next = rbm.hidden_prob(acts.last().unwrap());
                acts.push(next);
            }
            let top = &acts[n_layers];
            let scores = self.scores(top);
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();

            let mut delta = vec![0.0; top.len()];
            for b in 0..self.n_bins {
                let g = exps[b] / z - if b == target { 1.0 } else { 0.0 };
                let row = &self.readout[b * k..(b + 1) * k];
                let grow = &mut g_readout[b * k..(b + 1) * k];
                for j in 0..top.len() {
                    grow[j] += g * top[j];
                    delta[j] += g * row[j];
                }
                grow[k - 1] += g;
            }
            for l in (0..n_layers).rev() {
                let out = &acts[l + 1];
                let inp = &acts[l];
                let rbm = &self.layers[l];
                // through the logistic
                let pre: Vec<f64> = delta.iter().zip(out).map(|(d, y)| d * y * (1.0 - y)).collect();
                let mut back = vec![0.0; rbm.n_visible];
                for i in 0..rbm.n_visible {
                    for j in 0..rbm.n_hidden {
                        g_w[l][i * rbm.n_hidden + j] += inp[i] * pre[j];
                        back[i] += rbm.weight(i, j) * pre[j];
                    }
                }
                for j in 0..rbm.n_hidden {
                    g_b[l][j] += pre[j];
                }
                delta = back;
            }
        }

        let scale = self.cfg.readout_rate / inputs.len() as f64;
        for (w, g) in self.readout.iter_mut().zip(&g_readout) {
            *w -= scale * g;
        }
        for l in 0..n_layers {
            for (w, g) in self.layers[l].w.iter_mut().zip(&g_w[l]) {
                *w -= scale * g;
            }
            for (b, g) in self.layers[l].b_h.iter_mut().zip(&g_b[l]) {
                *b -= scale * g;
            }
        }
    }

    /// Flat parameter dump: `layer,kind,i,j,value`, readout rows last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,kind,i,j,value\n");
        for (l, rbm) in self.layers.iter().enumerate() {
            out.push_str(&rbm.to_csv(l));
        }
        let k = self.cfg.hidden + 1;
        for b in 0..self.n_bins {
            for j in 0..k {
                let _ = writeln!(out, "readout,w,{b},{j},{:.12e}", self.readout[b * k + j]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn energy_zero_configuration() {
        let rbm = RbmParams::random(3, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(rbm.energy(&[0.0; 3], &[0.0; 2]).unwrap(), 0.0);
    }

    #[test]
    fn energy_single_unit() {
        let rbm = RbmParams {
            n_visible: 1,
            n_hidden: 1,
            w: vec![2.0],
            b_v: vec![0.5],
            b_h: vec![-0.25],
        };
        assert!((rbm.energy(&[1.0], &[1.0]).unwrap() + 2.25).abs() < 1e-15);
    }

    #[test]
    fn energy_dimension_mismatch() {
        let rbm = RbmParams::zeros(3, 2);
        assert!(matches!(
            rbm.energy(&[1.0; 2], &[0.0; 2]),
            Err(RbmError::Dimension { .. })
        ));
    }

    #[test]
    fn conditionals_zero_and_saturated() {
        let rbm = RbmParams::zeros(3, 2);
        assert_eq!(rbm.hidden_prob(&[1.0, 0.0, 1.0]), vec![0.5; 2]);
        assert_eq!(rbm.visible_prob(&[1.0, 1.0]), vec![0.5; 3]);
        let mut rbm = RbmParams::zeros(3, 2);
        rbm.b_h = vec![20.0; 2];
        rbm.b_v = vec![20.0; 3];
        assert!(rbm.hidden_prob(&[1.0, 1.0, 0.0]).iter().all(|p| (1.0 - p) < 1e-8));
        assert!(rbm.visible_prob(&[0.0, 1.0]).iter().all(|p| (1.0 - p) < 1e-8));
    }

    #[test]
    fn marginal_of_zero_rbm_is_uniform() {
        let rbm = RbmParams::zeros(4, 3);
        let p = rbm.marginal_prob(&[1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((p - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn marginal_refuses_large_models() {
        let rbm = RbmParams::zeros(12, 9);
        assert!(matches!(
            rbm.marginal_prob(&[0.0; 12]),
            Err(RbmError::TooLarge { units: 21 })
        ));
    }

    #[test]
    fn bit_codes_round_trip() {
        for i in 0..128 {
            assert_eq!(bits_to_index(&index_to_bits(i, 7)), i);
        }
        assert_eq!(bits_for(121), 7);
        assert_eq!(bits_for(16), 4);
        assert_eq!(bits_for(2), 1);
    }

    #[test]
    fn cd1_with_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rbm = RbmParams::random(4, 3, 0.5, &mut rng);
        let before = rbm.clone();
        rbm.cd1_train(&[vec![1.0, 0.0, 1.0, 0.0]], 0.0, &mut rng);
        assert_eq!(rbm, before);
    }

    #[test]
    fn untrained_stack_is_identity() {
        let dbn = DbnStack::new(DbnConfig::default(), 121, 16, 9);
        for s in [0, 17, 60, 120] {
            assert_eq!(dbn.predict_next_bin(s, 5), s);
        }
    }

    #[test]
    fn buffer_is_bounded() {
        let cfg = DbnConfig {
            buffer: 8,
            ..Default::default()
        };
        let mut dbn = DbnStack::new(cfg, 10, 4, 1);
        for k in 0..20 {
            dbn.observe(k % 10, k % 4, (k + 1) % 10);
        }
        assert_eq!(dbn.buffer_len(), 8);
    }
}
