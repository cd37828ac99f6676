#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qgrid::converter::{derivatives, GridConfig, SystemState};

pub const STATE_DIM: usize = 7;

pub fn to_vec(s: &SystemState) -> DVector<f64> {
    DVector::from_vec(vec![
        s.i_l[0], s.i_l[1], s.v_out[0], s.v_out[1], s.i_line[0], s.i_line[1], s.v_dc,
    ])
}

pub fn from_vec(x: &DVector<f64>, t: f64) -> SystemState {
    SystemState {
        t,
        i_l: [x[0], x[1]],
        v_out: [x[2], x[3]],
        i_line: [x[4], x[5]],
        v_dc: x[6],
    }
}

/// Central-difference Jacobian of the plant with duties and load frozen.
pub fn jacobian(s: &SystemState, duties: &[f64; 2], p: f64, cfg: &GridConfig) -> DMatrix<f64> {
    let x0 = to_vec(s);
    let f = |x: &DVector<f64>| {
        let d = derivatives(&from_vec(x, 0.0), duties, p, cfg).unwrap();
        DVector::from_vec(d.to_vec())
    };
    let mut j = DMatrix::zeros(STATE_DIM, STATE_DIM);
    for k in 0..STATE_DIM {
        let h = 1e-6 * x0[k].abs().max(1.0);
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn crate_path(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}
