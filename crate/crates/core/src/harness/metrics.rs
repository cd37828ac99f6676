//! Trajectory samples and the per-segment and whole-run metrics.

use serde::{Deserialize, Serialize};

use super::scenario::Schedule;

/// One row per control period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v_dc: f64,
    pub v_out: [f64; 2],
    pub i_line: [f64; 2],
    pub i_l: [f64; 2],
    pub duty: [f64; 2],
    pub p_cpl: f64,
    pub v_ref: f64,
    pub reward: f64,
    pub delta_corr: f64,
}

pub type Trajectory = Vec<Sample>;

/// Band used for settling, as a fraction of `v_ref`.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub start: f64,
    pub end: f64,
    pub v_ref: f64,
    pub p_cpl: f64,
    /// Starts with a change of reference (as opposed to a load change).
    pub reference_step: bool,
    /// Percent of `v_ref`. For reference steps only excursions beyond the new
    /// reference in the direction of the step count.
    pub overshoot_pct: f64,
    /// Time from segment start after which `v_dc` stays within the band;
    /// `None` when it never settles.
    pub settling_time: Option<f64>,
    /// RMS of `v_dc - v_ref` over the second half of the segment (V).
    pub steady_state_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub segments: Vec<SegmentMetrics>,
    /// Whole-run RMS of `v_dc - v_ref` (V); `None` for an empty trajectory.
    pub rmse: Option<f64>,
    pub reward_sum: Option<f64>,
}

impl RunMetrics {
    pub fn is_flagged(&self) -> bool {
        self.rmse.is_none()
    }

    pub fn all_settled(&self) -> bool {
        self.segments.iter().all(|s| s.settling_time.is_some())
    }
}

/// Metrics over `traj`, split at every load or reference boundary of the
/// schedule. Row `k` is taken to be control step `k`.
pub fn compute_metrics(traj: &[Sample], schedule: &Schedule) -> RunMetrics {
    if traj.is_empty() {
        return RunMetrics::default();
    }
    let last = traj.len() - 1;
    let bounds: Vec<usize> = schedule.boundaries().into_iter().filter(|&k| k <= last).collect();
    let ref_steps = schedule.reference_steps();

    let mut segments = Vec::with_capacity(bounds.len());
    for (i, &k0) in bounds.iter().enumerate() {
        // The boundary row belongs to the segment it opens; segments share no rows
        // except the final one, which runs to the last row inclusive.
        let k1 = bounds.get(i + 1).map_or(last, |&n| n - 1);
        if k1 < k0 {
            continue;
        }
        let rows = &traj[k0..=k1];
        let v_ref = rows[0].v_ref;
        let reference_step = ref_steps.contains(&k0);
        let overshoot = if reference_step && k0 > 0 {
            let dir = (v_ref - traj[k0 - 1].v_ref).signum();
            rows.iter()
                .map(|s| dir * (s.v_dc - v_ref))
                .fold(0.0_f64, f64::max)
        } else {
            rows.iter().map(|s| (s.v_dc - v_ref).abs()).fold(0.0_f64, f64::max)
        };
        let band = SETTLING_BAND * v_ref;
        let settling_time = match rows.iter().rposition(|s| (s.v_dc - v_ref).abs() > band) {
            None => Some(0.0),
            Some(j) if j + 1 < rows.len() => Some(rows[j + 1].t - rows[0].t),
            Some(_) => None,
        };
        let tail = &rows[rows.len() / 2..];
        let ss = (tail.iter().map(|s| (s.v_dc - v_ref).powi(2)).sum::<f64>() / tail.len() as f64).sqrt();
        segments.push(SegmentMetrics {
            start: rows[0].t,
            end: rows[rows.len() - 1].t,
            v_ref,
            p_cpl: rows[0].p_cpl,
            reference_step,
            overshoot_pct: 100.0 * overshoot / v_ref,
            settling_time,
            steady_state_rms: ss,
        });
    }

    RunMetrics {
        segments,
        rmse: Some(rmse(traj)),
        reward_sum: Some(traj.iter().map(|s| s.reward).sum()),
    }
}

/// RMS of `v_dc - v_ref` over all rows (V).
pub fn rmse(traj: &[Sample]) -> f64 {
    (traj.iter().map(|s| (s.v_dc - s.v_ref).powi(2)).sum::<f64>() / traj.len().max(1) as f64).sqrt()
}
