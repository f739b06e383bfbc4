//! Text data files written by a run.
//!
//! Floats are written with 17 significant digits so a reloaded file
//! reproduces the in-memory values bit for bit.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt::Write as _;

use vanloan::transfer::{dft_matrix, freq_grid};
use vanloan::{c, ControlSequence, Error, Result};

pub const WAVEFORM_HEADER: &str = "# index, t_start, duration, a_1, ..., a_k";

pub fn format_controls(cs: &ControlSequence) -> String {
    let mut out = String::from(WAVEFORM_HEADER);
    out.push('\n');
    let starts = cs.start_times();
    for s in 0..cs.steps() {
        let _ = write!(out, "{}, {:.16e}, {:.16e}", s, starts[s], cs.durations()[s]);
        for ch in cs.amplitudes() {
            let _ = write!(out, ", {:.16e}", ch[s]);
        }
        out.push('\n');
    }
    out
}

pub fn parse_controls(text: &str) -> Result<ControlSequence> {
    let mut durations = Vec::new();
    let mut amps: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("line {}: {}", ln + 1, e)))?;
        if cols.len() < 4 {
            return Err(Error::InvalidArgument(format!("line {}: expected index, t_start, duration and amplitudes", ln + 1)));
        }
        if cols[0] != durations.len() as f64 {
            return Err(Error::InvalidArgument(format!("line {}: step index {} out of order", ln + 1, cols[0])));
        }
        if amps.is_empty() {
            amps = vec![Vec::new(); cols.len() - 3];
        } else if amps.len() != cols.len() - 3 {
            return Err(Error::InvalidArgument(format!("line {}: channel count changed", ln + 1)));
        }
        durations.push(cols[2]);
        for (a, v) in amps.iter_mut().zip(&cols[3..]) {
            a.push(*v);
        }
    }
    if durations.is_empty() {
        return Err(Error::InvalidArgument("waveform file has no steps".into()));
    }
    ControlSequence::new(amps, durations)
}

/// DFT of a_1 - i a_2 on the `freq_grid` ordering: (nu, re, im).
pub fn spectrum(cs: &ControlSequence) -> Result<Vec<(f64, f64, f64)>> {
    if cs.channels() != 2 {
        return Err(Error::Dimension(format!("spectrum needs two channels, got {}", cs.channels())));
    }
    let n = cs.steps();
    let dt = cs.durations()[0];
    let grid = freq_grid(n, dt)?;
    let w = dft_matrix(n)?;
    let a = cs.amplitudes();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &nu)| {
            let z = (0..n).fold(c(0.0, 0.0), |acc, s| acc + w[(k, s)] * c(a[0][s], -a[1][s]));
            (nu, z.re, z.im)
        })
        .collect())
}

pub fn format_spectrum(spec: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("# nu, re, im (nu in inverse time units of the grid)\n");
    for (nu, re, im) in spec {
        let _ = writeln!(out, "{:.16e}, {:.16e}, {:.16e}", nu, re, im);
    }
    out
}

pub fn format_history(history: &[f64]) -> String {
    let mut out = String::from("# iteration, phi\n");
    for (k, v) in history.iter().enumerate() {
        let _ = writeln!(out, "{}, {:.16e}", k, v);
    }
    out
}

/// Presentation basis: (a_x, a_y) -> ((a_x + a_y)/sqrt 2, (a_x - a_y)/sqrt 2).
pub fn emit_basis_rotated(cs: &ControlSequence) -> Result<ControlSequence> {
    if cs.channels() != 2 {
        return Err(Error::Dimension(format!("basis rotation needs two channels, got {}", cs.channels())));
    }
    let a = cs.amplitudes();
    let plus = a[0].iter().zip(&a[1]).map(|(x, y)| (x + y) * FRAC_1_SQRT_2).collect();
    let minus = a[0].iter().zip(&a[1]).map(|(x, y)| (x - y) * FRAC_1_SQRT_2).collect();
    ControlSequence::new(vec![plus, minus], cs.durations().to_vec())
}
