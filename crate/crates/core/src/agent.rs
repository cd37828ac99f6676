//! The learning agent that supplies the ULM correction term.
//!
//! Per decision: bin the tracking state, load the P row into the register,
//! collapse it to pick an action, and refine it into a continuous correction.
//! When the next decision arrives the previous one is scored: reward on the
//! observed output, next-state prediction from the DBN, then the Q and P
//! updates and one DBN minibatch on the replay ring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dbn::{DbnConfig, DbnStack};
use crate::qdrl::{
    reward, synthesize_action, ActionSet, LearningTables, QuantumRegister, RewardConfig, StateGrid,
};

/// What decides whether the taken action's preference grows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinforcement {
    /// TD target at least the taken action's own Q value.
    TdError,
    /// Updated `Q[s,a]` at least the state's policy-weighted value `sum_a P Q`.
    Advantage,
    /// Taken action is greedy in the updated Q row (pursuit scheme).
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub n_qubits: u32,
    /// Half-width of the action range, same units as `F_hat`.
    pub delta_max: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub reward: RewardConfig,
    pub grid: StateGrid,
    /// Control periods between decisions.
    pub decision_period: usize,
    pub reinforcement: Reinforcement,
    /// Start Q at the largest discounted return, `reward_cap / (1 - gamma)`,
    /// so untried actions look attractive until sampled. Zero otherwise.
    pub optimistic_init: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            n_qubits: 4,
            delta_max: 4000.0,
            zeta: 0.05,
            gamma: 0.9,
            mu: 0.05,
            reward: RewardConfig::default(),
            grid: StateGrid::default(),
            decision_period: 10,
            reinforcement: Reinforcement::Greedy,
            optimistic_init: true,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), String> {
        ActionSet::uniform(self.n_qubits, self.delta_max)?;
        for (name, v) in [("zeta", self.zeta), ("gamma", self.gamma), ("mu", self.mu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        let r = &self.reward;
        if !(r.c1 > 0.0 && r.c2 > 0.0 && r.band > 0.0 && r.reward_cap > 0.0) {
            return Err("reward c1, c2, band and reward_cap must be > 0".into());
        }
        let g = &self.grid;
        if g.size == 0 || g.size.is_multiple_of(2) {
            return Err(format!("grid size {} must be odd", g.size));
        }
        if !(g.e_range > 0.0 && g.e_dot_range > 0.0 && g.tau > 0.0) {
            return Err("grid ranges and tau must be > 0".into());
        }
        if self.decision_period == 0 {
            return Err("decision_period must be >= 1".into());
        }
        Ok(())
    }
}

/// Outcome of one action selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub state: usize,
    pub action: usize,
    pub probability: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct QdrlAgent {
    pub cfg: AgentConfig,
    pub actions: ActionSet,
    pub tables: LearningTables,
    pub register: QuantumRegister,
    pub dbn: DbnStack,
    rng: ChaCha8Rng,
    pending: Option<Decision>,
}

impl QdrlAgent {
    pub fn new(cfg: AgentConfig, dbn_cfg: DbnConfig, seed: u64) -> Self {
        let actions = ActionSet::uniform(cfg.n_qubits, cfg.delta_max).expect("validated agent config");
        let n_bins = cfg.grid.n_bins();
        let mut tables = LearningTables::new(n_bins, actions.len(), cfg.zeta, cfg.gamma, cfg.mu);
        if cfg.optimistic_init {
            tables.fill_q(cfg.reward.reward_cap / (1.0 - cfg.gamma).max(1e-3));
        }
        Self {
            tables,
            register: QuantumRegister::uniform(cfg.n_qubits),
            dbn: DbnStack::new(dbn_cfg, n_bins, actions.len(), seed ^ 0x5DEE_CE66_D1CE_4E5B),
            rng: ChaCha8Rng::seed_from_u64(seed),
            actions,
            cfg,
            pending: None,
        }
    }

    pub fn bin(&self, e: f64, e_dot: f64, v_ref: f64) -> usize {
        self.cfg.grid.bin_state(e, e_dot, v_ref)
    }

    /// Select an action for `state` and remember it for the next `learn`.
    pub fn decide(&mut self, state: usize) -> Decision {
        self.register.refresh_amplitudes(self.tables.p_row(state));
        let (action, probability) = self.register.collapse(&mut self.rng);
        let delta = synthesize_action(&self.actions, action, probability);
        let d = Decision {
            state,
            action,
            probability,
            delta,
        };
        self.pending = Some(d);
        d
    }

    /// Score the pending decision against what was observed since.
    /// Returns the reward, or `None` when nothing was pending.
    pub fn learn(&mut self, v_o: f64, v_ref: f64, observed_state: usize) -> Option<f64> {
        let prev = self.pending.take()?;
        let r = reward(v_o, v_ref, &self.cfg.reward);
        let s_pred = self.dbn.predict_next_bin(prev.state, prev.action);
        let td = self.tables.q_update(prev.state, s_pred, prev.action, r);
        let reinforce = match self.cfg.reinforcement {
            Reinforcement::TdError => td >= 0.0,
            Reinforcement::Advantage => {
                self.tables.q(prev.state, prev.action) >= self.tables.policy_value(prev.state)
            }
            Reinforcement::Greedy => {
                self.tables.q(prev.state, prev.action) >= self.tables.max_q(prev.state)
            }
        };
        self.tables.p_update(prev.state, prev.action, reinforce);
        self.dbn.observe(prev.state, prev.action, observed_state);
        self.dbn.train_step();
        Some(r)
    }

    /// Forget the pending decision at an episode boundary. Tables persist.
    pub fn end_episode(&mut self) {
        self.pending = None;
    }
}
