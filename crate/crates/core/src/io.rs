//! File formats: long-format CSV for fields and path statistics, and a
//! versioned little-endian binary cache for control fields.
//!
//! Control CSV columns: `q,x,tier,side,quote,speed,p_exec,zone`. Baseline
//! fields carry no hedging, so their CSV is `q,x,tier,side,quote`.
//!
//! Path statistics CSV columns: `time,series,mean,se,q05,q25,q50,q75,q95`.
//!
//! Binary control cache layout (all little-endian):
//!
//! ```text
//! magic "FXMMCTRL" | u32 version | u8 mode | u8 has_speed | u16 reserved
//! u64 nq | u64 nx | u64 n_tiers
//! f64 q_step | f64 x_step | f64 q0 | f64 x0 | f64 psi | f64 eta
//! f64 sizes[n_tiers]
//! f64 quotes[n_tiers * 2 * nx * nq]
//! f64 p_exec[nx * nq]   (only when has_speed)
//! f64 speed[nx * nq]    (only when has_speed)
//! u64 clamped_quotes
//! ```

use std::io::{self, Read, Write};

use crate::closedform::Side;
use crate::hjb::{ControlField, Grid, SolveMode, ValueField};
use crate::simulate::PathStats;

pub const CACHE_MAGIC: &[u8; 8] = b"FXMMCTRL";
pub const CACHE_VERSION: u32 = 1;

pub fn write_controls_csv<W: Write>(field: &ControlField, mut w: W) -> io::Result<()> {
    let g = &field.grid;
    let hedged = field.speed.is_some();
    if hedged {
        writeln!(w, "q,x,tier,side,quote,speed,p_exec,zone")?;
    } else {
        writeln!(w, "q,x,tier,side,quote")?;
    }
    for j in 0..g.nx() {
        for i in 0..g.nq() {
            for n in 0..field.n_tiers() {
                for side in Side::BOTH {
                    let quote = field.quote(n, side, i, j);
                    if hedged {
                        let v = field.speed(i, j).unwrap_or(0.0);
                        let p = field.p_exec_at(i, j).unwrap_or(0.0);
                        let zone = u8::from(field.in_zone(i, j).unwrap_or(true));
                        writeln!(
                            w,
                            "{},{},{},{},{},{},{},{}",
                            g.q[i],
                            g.x[j],
                            n + 1,
                            side.as_str(),
                            quote,
                            v,
                            p,
                            zone
                        )?;
                    } else {
                        writeln!(w, "{},{},{},{},{}", g.q[i], g.x[j], n + 1, side.as_str(), quote)?;
                    }
                }
            }
        }
    }
    Ok(())
}

pub fn write_value_csv<W: Write>(value: &ValueField, mut w: W) -> io::Result<()> {
    writeln!(w, "q,x,value")?;
    let g = &value.grid;
    for j in 0..g.nx() {
        for i in 0..g.nq() {
            writeln!(w, "{},{},{}", g.q[i], g.x[j], value.at(i, j))?;
        }
    }
    Ok(())
}

pub fn write_path_stats_csv<W: Write>(stats: &PathStats, mut w: W) -> io::Result<()> {
    writeln!(w, "time,series,mean,se,q05,q25,q50,q75,q95")?;
    for s in &stats.series {
        for (k, &t) in stats.times.iter().enumerate() {
            let q = s.quantiles[k];
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                t,
                s.series.as_str(),
                s.mean[k],
                s.se[k],
                q[0],
                q[1],
                q[2],
                q[3],
                q[4]
            )?;
        }
    }
    Ok(())
}

fn mode_code(mode: SolveMode) -> u8 {
    match mode {
        SolveMode::Transient => 0,
        SolveMode::Baseline => 1,
        SolveMode::AlmgrenChriss => 2,
    }
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_controls_cache<W: Write>(field: &ControlField, mut w: W) -> io::Result<()> {
    let g = &field.grid;
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&[mode_code(field.mode), u8::from(field.speed.is_some())])?;
    w.write_all(&0u16.to_le_bytes())?;
    for n in [g.nq(), g.nx(), field.n_tiers()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    put_f64s(&mut w, &[g.q_step, g.x_step, g.q[0], g.x[0], field.psi, field.eta])?;
    put_f64s(&mut w, &field.sizes)?;
    put_f64s(&mut w, &field.quotes)?;
    if let (Some(p), Some(v)) = (&field.p_exec, &field.speed) {
        put_f64s(&mut w, p)?;
        put_f64s(&mut w, v)?;
    }
    w.write_all(&(field.clamped_quotes as u64).to_le_bytes())?;
    Ok(())
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_controls_cache<R: Read>(r: R) -> io::Result<ControlField> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<8>()? != CACHE_MAGIC {
        return Err(invalid("not a control cache (bad magic)"));
    }
    let version = u32::from_le_bytes(c.bytes()?);
    if version != CACHE_VERSION {
        return Err(invalid(format!(
            "control cache version {version} unsupported (expected {CACHE_VERSION})"
        )));
    }
    let [mode, has_speed] = c.bytes::<2>()?;
    let _reserved = c.bytes::<2>()?;
    let mode = match mode {
        0 => SolveMode::Transient,
        1 => SolveMode::Baseline,
        2 => SolveMode::AlmgrenChriss,
        other => return Err(invalid(format!("unknown mode code {other}"))),
    };
    let nq = c.u64()? as usize;
    let nx = c.u64()? as usize;
    let n_tiers = c.u64()? as usize;
    if nq == 0 || nx == 0 || nq.saturating_mul(nx).saturating_mul(n_tiers.max(1)) > 1 << 32 {
        return Err(invalid("implausible grid dimensions"));
    }
    let q_step = c.f64()?;
    let x_step = c.f64()?;
    let q0 = c.f64()?;
    let x0 = c.f64()?;
    let psi = c.f64()?;
    let eta = c.f64()?;
    let sizes = c.f64s(n_tiers)?;
    let quotes = c.f64s(n_tiers * 2 * nx * nq)?;
    let (p_exec, speed) = if has_speed == 1 {
        (Some(c.f64s(nx * nq)?), Some(c.f64s(nx * nq)?))
    } else {
        (None, None)
    };
    let clamped_quotes = c.u64()? as usize;
    let grid = Grid {
        q: (0..nq).map(|i| q0 + i as f64 * q_step).collect(),
        x: (0..nx).map(|j| x0 + j as f64 * x_step).collect(),
        q_step,
        x_step,
    };
    Ok(ControlField {
        mode,
        grid,
        sizes,
        psi,
        eta,
        quotes,
        speed,
        p_exec,
        clamped_quotes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{extract_controls, GridSpec};
    use crate::intensity::curves_from_tiers;
    use crate::params::{fx_example, normalize};

    fn field() -> ControlField {
        let params = normalize(&fx_example());
        let curves = curves_from_tiers(&params.tiers[..2]).unwrap();
        let spec = GridSpec {
            q_max: 4.0,
            x_nodes: 3,
            ..GridSpec::default()
        };
        let grid = Grid::new(&spec, true).unwrap();
        let mut value = ValueField::zeros(grid.clone(), 0.0);
        for (k, v) in value.values.iter_mut().enumerate() {
            *v = -0.01 * (k as f64 - 13.0).powi(2);
        }
        extract_controls(&value, &params, &curves).unwrap()
    }

    #[test]
    fn cache_round_trip() {
        let f = field();
        let mut buf = Vec::new();
        write_controls_cache(&f, &mut buf).unwrap();
        let back = read_controls_cache(buf.as_slice()).unwrap();
        assert_eq!(back.quotes, f.quotes);
        assert_eq!(back.speed, f.speed);
        assert_eq!(back.p_exec, f.p_exec);
        assert_eq!(back.grid.q, f.grid.q);
        assert_eq!(back.mode, f.mode);
    }

    #[test]
    fn cache_rejects_other_versions() {
        let f = field();
        let mut buf = Vec::new();
        write_controls_cache(&f, &mut buf).unwrap();
        buf[8] = 99;
        let err = read_controls_cache(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 99"));
        assert!(read_controls_cache(&b"NOTACACHE......."[..]).is_err());
    }

    #[test]
    fn controls_csv_shape() {
        let f = field();
        let mut buf = Vec::new();
        write_controls_csv(&f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "q,x,tier,side,quote,speed,p_exec,zone");
        assert_eq!(lines.count(), 9 * 3 * 2 * 2);
    }
}
