//! Closed-loop runner: plant at `dt_sim`, controllers at `dt_ctrl`, agent
//! decisions every `decision_period` control periods.

use rayon::prelude::*;

use crate::agent::QdrlAgent;
use crate::baselines::{fcs_mpc_control, FcsMpcConfig, PiController};
use crate::converter::{equilibrium_solve, integrate, saturate_duty, SimError, SystemState, N_CONV};
use crate::qdrl::reward;
use crate::ulm::UlmController;

use super::metrics::{compute_metrics, RunMetrics, Sample, Trajectory};
use super::scenario::{ControllerKind, Scenario, Schedule};

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub fault: Option<SimError>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub metrics: RunMetrics,
    /// Fault of the reported (final) episode.
    pub fault: Option<SimError>,
    pub episodes_run: usize,
    /// Training episodes that ended in a fault.
    pub training_faults: usize,
    pub agent: Option<QdrlAgent>,
}

enum Loop {
    Ulm(Box<[UlmController; N_CONV]>),
    Pi([PiController; N_CONV]),
    Mpc(FcsMpcConfig),
}

/// Owns everything that persists across episodes: the scenario and, for the
/// learning controller, the agent.
pub struct Runner {
    pub scenario: Scenario,
    pub schedule: Schedule,
    pub agent: Option<QdrlAgent>,
}

impl Runner {
    pub fn new(scenario: Scenario) -> Self {
        let agent = scenario
            .controller
            .learns()
            .then(|| QdrlAgent::new(scenario.agent, scenario.dbn, scenario.seed));
        Self {
            schedule: scenario.schedule(),
            scenario,
            agent,
        }
    }

    fn initial_point(&self) -> Result<(SystemState, [f64; N_CONV]), SimError> {
        let sc = &self.scenario;
        let eq = equilibrium_solve(&sc.grid, self.schedule.p_cpl(0), self.schedule.v_ref(0))
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok((eq.state, eq.duties))
    }

    fn build_loop(&self, s0: &SystemState, d0: &[f64; N_CONV]) -> Loop {
        let sc = &self.scenario;
        match sc.controller {
            ControllerKind::UlmQdrl | ControllerKind::UlmFixed => {
                let cfg = sc.ulm_config();
                let ctl = std::array::from_fn(|i| {
                    let mut c = UlmController::new(cfg);
                    c.prime(s0.v_out[i], d0[i]);
                    c
                });
                Loop::Ulm(Box::new(ctl))
            }
            ControllerKind::Pi => Loop::Pi(std::array::from_fn(|i| {
                let mut c = PiController::new(sc.pi);
                c.prime(d0[i]);
                c
            })),
            ControllerKind::FcsMpc => Loop::Mpc(sc.mpc_config()),
        }
    }

    /// One episode from the starting equilibrium. Agent tables persist.
    pub fn run_episode(&mut self) -> EpisodeResult {
        let mut trajectory = Vec::new();
        if self.schedule.steps == 0 {
            return EpisodeResult { trajectory, fault: None };
        }
        let (mut s, d0) = match self.initial_point() {
            Ok(p) => p,
            Err(e) => return EpisodeResult { trajectory, fault: Some(e) },
        };
        let sc = &self.scenario;
        let sch = &self.schedule;
        let mut ctl = self.build_loop(&s, &d0);
        let dt = sc.dt_ctrl;
        let k_ad = sc.damping.k_ad;
        let period = sc.agent.decision_period;
        let mut applied = d0;
        let mut delta = 0.0;
        let mut prev_e: Option<f64> = None;
        let slew = sc.shaping.slew_rate * dt;
        let mut r = sch.v_ref(0);
        trajectory.reserve(sch.steps + 1);

        for k in 0..=sch.steps {
            let p = sch.p_cpl(k);
            let v_ref = sch.v_ref(k);

            if let Some(agent) = self.agent.as_mut() {
                if k % period == 0 {
                    let e = v_ref - s.v_dc;
                    let e_dot = prev_e.map_or(0.0, |pe| (e - pe) / (period as f64 * dt));
                    prev_e = Some(e);
                    let bin = agent.bin(e, e_dot, v_ref);
                    agent.learn(s.v_dc, v_ref, bin);
                    delta = agent.decide(bin).delta;
                }
            }

            let r_prev = r;
            r = if slew > 0.0 {
                r + (v_ref - r).clamp(-slew, slew)
            } else {
                v_ref
            };
            let r_dot = (r - r_prev) / dt;
            let damped = |cmd: f64, i: usize| {
                let i_c = (1.0 - applied[i]) * s.i_l[i] - s.i_line[i];
                saturate_duty(cmd - k_ad * i_c)
            };
            let duty: [f64; N_CONV] = match &mut ctl {
                Loop::Ulm(c) => std::array::from_fn(|i| damped(c[i].step(s.v_out[i], r, r_dot, delta), i)),
                Loop::Pi(c) => std::array::from_fn(|i| damped(c[i].step(r - s.v_out[i], dt), i)),
                Loop::Mpc(cfg) => [fcs_mpc_control(cfg, &s, p, r, &sc.grid); N_CONV],
            };
            applied = duty;

            trajectory.push(Sample {
                t: k as f64 * dt,
                v_dc: s.v_dc,
                v_out: s.v_out,
                i_line: s.i_line,
                i_l: s.i_l,
                duty,
                p_cpl: p,
                v_ref,
                reward: reward(s.v_dc, v_ref, &sc.agent.reward),
                delta_corr: delta,
            });

            if k == sch.steps {
                break;
            }
            match integrate(&s, &duty, p, &sc.grid, sc.dt_sim, sch.substeps) {
                Ok(next) => s = next,
                Err(e) => {
                    if let Some(agent) = self.agent.as_mut() {
                        agent.end_episode();
                    }
                    return EpisodeResult {
                        trajectory,
                        fault: Some(e),
                    };
                }
            }
            // Re-anchor time to the control grid so rows stay exact.
            s.t = (k + 1) as f64 * dt;
        }
        if let Some(agent) = self.agent.as_mut() {
            agent.end_episode();
        }
        EpisodeResult {
            trajectory,
            fault: None,
        }
    }
}

/// Run the scenario: `episodes` training repeats for the learning controller
/// (one for the others), reporting the last.
pub fn run(scenario: &Scenario) -> RunOutput {
    let episodes = if scenario.controller.learns() {
        scenario.episodes
    } else {
        1
    };
    let mut runner = Runner::new(scenario.clone());
    let mut training_faults = 0;
    let mut last = EpisodeResult {
        trajectory: Vec::new(),
        fault: None,
    };
    for ep in 0..episodes {
        last = runner.run_episode();
        if last.fault.is_some() && ep + 1 < episodes {
            training_faults += 1;
        }
    }
    let metrics = compute_metrics(&last.trajectory, &runner.schedule);
    RunOutput {
        trajectory: last.trajectory,
        metrics,
        fault: last.fault,
        episodes_run: episodes,
        training_faults,
        agent: runner.agent,
    }
}

/// Independent runs of the same scenario under different seeds, in parallel.
/// Results come back in the order of `seeds`.
pub fn sweep(scenario: &Scenario, seeds: &[u64]) -> Vec<(u64, RunOutput)> {
    seeds
        .par_iter()
        .map(|&seed| {
            let sc = Scenario {
                seed,
                ..scenario.clone()
            };
            (seed, run(&sc))
        })
        .collect()
}
