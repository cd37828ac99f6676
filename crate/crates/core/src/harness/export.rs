//! CSV export of trajectories and metrics, plus an optional gnuplot script.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use super::metrics::{RunMetrics, Sample};

pub const CSV_COLUMNS: [&str; 14] = [
    "t", "v_dc", "v_out_1", "v_out_2", "i_line_1", "i_line_2", "i_L_1", "i_L_2", "duty_1", "duty_2",
    "p_cpl", "v_ref", "reward", "delta_corr",
];

/// Digits after the decimal point for every value column.
pub const CSV_DECIMALS: usize = 6;

fn row_values(s: &Sample) -> [f64; 14] {
    [
        s.t, s.v_dc, s.v_out[0], s.v_out[1], s.i_line[0], s.i_line[1], s.i_l[0], s.i_l[1], s.duty[0],
        s.duty[1], s.p_cpl, s.v_ref, s.reward, s.delta_corr,
    ]
}

pub fn trajectory_csv(traj: &[Sample]) -> String {
    let mut out = String::with_capacity(160 * (traj.len() + 1));
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for s in traj {
        for (i, v) in row_values(s).iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // Normalize -0.0 so equal values always print identically.
            let v = if *v == 0.0 { 0.0 } else { *v };
            write!(out, "{v:.CSV_DECIMALS$}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn export_csv(traj: &[Sample], path: &Path) -> io::Result<()> {
    std::fs::write(path, trajectory_csv(traj))
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<Sample>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("missing header")?;
    if header.split(',').map(str::trim).ne(CSV_COLUMNS) {
        return Err(format!("unexpected header: {header}"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("row {}: {e}", i + 1))?;
            if v.len() != CSV_COLUMNS.len() {
                return Err(format!("row {}: {} fields", i + 1, v.len()));
            }
            Ok(Sample {
                t: v[0],
                v_dc: v[1],
                v_out: [v[2], v[3]],
                i_line: [v[4], v[5]],
                i_l: [v[6], v[7]],
                duty: [v[8], v[9]],
                p_cpl: v[10],
                v_ref: v[11],
                reward: v[12],
                delta_corr: v[13],
            })
        })
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<Sample>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    parse_trajectory_csv(&text)
}

pub fn metrics_csv(m: &RunMetrics) -> String {
    let mut out = String::from(
        "segment_start,segment_end,v_ref,p_cpl,reference_step,overshoot_pct,settling_time,steady_state_rms\n",
    );
    for s in &m.segments {
        let settle = s
            .settling_time
            .map_or_else(|| "not_settled".to_string(), |t| format!("{t:.6}"));
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{},{:.6},{},{:.6}",
            s.start, s.end, s.v_ref, s.p_cpl, s.reference_step, s.overshoot_pct, settle, s.steady_state_rms
        )
        .unwrap();
    }
    out
}

pub fn gnuplot_script(csv_name: &str, title: &str) -> String {
    format!(
        r#"set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 1200,900
set output "{title}.png"
set multiplot layout 3,1 title "{title}"
set ylabel "V"
plot "{csv_name}" using 1:2 with lines title "v_dc", "" using 1:12 with lines dt 2 title "v_ref"
set ylabel "A"
plot "{csv_name}" using 1:7 with lines title "i_L_1", "" using 1:8 with lines title "i_L_2"
set ylabel "duty"
set xlabel "t (s)"
plot "{csv_name}" using 1:9 with lines title "duty_1", "" using 1:10 with lines title "duty_2"
unset multiplot
"#
    )
}
