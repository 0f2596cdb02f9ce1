//! Figure data. `fig1.csv` holds the tier-1 ask and hedge speed against
//! inventory on a few impact slices, next to the closed-form ask;
//! `fig2.csv` holds speed, `p_E` and the no-hedging mask on the full grid.

use std::fmt::Write;

use fxmm_core::closedform::{ClosedFormCoeffs, Side};
use fxmm_core::hjb::ControlField;
use fxmm_core::intensity::IntensityCurve;
use fxmm_core::params::ModelParams;
use serde::Serialize;

const X_SLICES: [f64; 5] = [-0.5, -0.2, 0.0, 0.2, 0.5];

fn slices(f: &ControlField) -> Vec<usize> {
    // Mirror negative slices so the set stays symmetric on coarse grids.
    let nx = f.grid.nx();
    let mut js: Vec<usize> = X_SLICES
        .iter()
        .map(|&x| if x < 0.0 { nx - 1 - f.grid.x_index(-x) } else { f.grid.x_index(x) })
        .collect();
    js.dedup();
    js
}

pub fn fig1(f: &ControlField, curves: &[IntensityCurve], cf: &ClosedFormCoeffs) -> Vec<u8> {
    let g = &f.grid;
    let hedged = f.speed.is_some();
    let mut s = String::from(if hedged {
        "x,q,ask,approx_ask,speed\n"
    } else {
        "x,q,ask,approx_ask\n"
    });
    for j in slices(f) {
        for i in 0..g.nq() {
            let (q, x) = (g.q[i], g.x[j]);
            let ask = f.quote(0, Side::Ask, i, j);
            let approx = cf.approx_quote(&curves[0], q, x, Side::Ask);
            match f.speed(i, j) {
                Some(v) => writeln!(s, "{x},{q},{ask},{approx},{v}"),
                None => writeln!(s, "{x},{q},{ask},{approx}"),
            }
            .expect("writing to a String");
        }
    }
    s.into_bytes()
}

pub fn fig2(f: &ControlField) -> Vec<u8> {
    let g = &f.grid;
    let mut s = String::from("q,x,speed,p_exec,zone\n");
    for j in 0..g.nx() {
        for i in 0..g.nq() {
            let v = f.speed(i, j).unwrap_or(0.0);
            let p = f.p_exec_at(i, j).unwrap_or(0.0);
            let zone = u8::from(f.in_zone(i, j).unwrap_or(true));
            writeln!(s, "{},{},{v},{p},{zone}", g.q[i], g.x[j]).expect("writing to a String");
        }
    }
    s.into_bytes()
}

#[derive(Debug, Serialize)]
pub struct ZoneRow {
    pub x: f64,
    pub lower: f64,
    pub upper: f64,
    pub approx_lower: f64,
    pub approx_upper: f64,
}

/// No-hedging band per impact slice, numerical and closed form.
pub fn zone_rows(f: &ControlField, cf: &ClosedFormCoeffs, params: &ModelParams) -> Vec<ZoneRow> {
    let k = params.k;
    let slope = 2.0 * cf.a0 - k * (1.0 - cf.b0);
    let half = cf.internalization_half_width(k, f.psi);
    slices(f)
        .into_iter()
        .filter_map(|j| {
            let (lower, upper) = f.zone_band(j)?;
            let x = f.grid.x[j];
            let centre = -cf.b0 * x / slope;
            Some(ZoneRow {
                x,
                lower,
                upper,
                approx_lower: centre - half,
                approx_upper: centre + half,
            })
        })
        .collect()
}

pub const FIG1_GP: &str = r#"# gnuplot -p fig1.gp
set datafile separator ","
set key autotitle columnhead
set multiplot layout 1,2
set xlabel "q (M)"
set ylabel "tier-1 ask (bp)"
plot for [x in "-0.5 -0.2 0 0.2 0.5"] "fig1.csv" using ($1 == x ? $2 : 1/0):3 with lines title "x = ".x, \
     "fig1.csv" using ($1 == 0 ? $2 : 1/0):4 with lines dashtype 2 title "closed form, x = 0"
set ylabel "hedge speed (M/day)"
plot for [x in "-0.5 -0.2 0 0.2 0.5"] "fig1.csv" using ($1 == x ? $2 : 1/0):5 with lines title "x = ".x
unset multiplot
"#;

pub const FIG2_GP: &str = r#"# gnuplot -p fig2.gp
set datafile separator ","
set xlabel "q (M)"
set ylabel "x (bp)"
set view map
set dgrid3d
splot "fig2.csv" using 1:2:3 with pm3d title "hedge speed (M/day)", \
      "fig2.csv" using 1:2:($5 == 1 ? 0 : 1/0) with points pointtype 7 pointsize 0.3 title "no hedging"
"#;
