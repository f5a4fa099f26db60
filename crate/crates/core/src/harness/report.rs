//! Plot-ready CSV files and the JSON summary.
//!
//! | file | columns |
//! |---|---|
//! | `rate_vs_snr.csv` | equalizer, kind, point, snr_db, rate, minimizing_s |
//! | `gain_vs_snr.csv` | equalizer, point, snr_db, gain |
//! | `rate_vs_multipliers.csv` | equalizer, point, multipliers, dense_multipliers, rate |
//! | `kernels_order1.csv`, `kernels_order3.csv` | equalizer, point, bit, offsets, value |
//! | `summary.json` | the serialized [`SweepResult`] |
//!
//! `point` is the sweep coordinate (SNR or OSNR in dB), `bit` is empty for
//! VNLE kernels, `offsets` are space-separated delays. Floats carry 9
//! significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::sweep::SweepResult;

pub const FILES: [&str; 6] = [
    "rate_vs_snr.csv",
    "gain_vs_snr.csv",
    "rate_vs_multipliers.csv",
    "kernels_order1.csv",
    "kernels_order3.csv",
    "summary.json",
];

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

/// Writes every report file into `dir`, creating it if needed. Points that
/// failed contribute no rows; non-finite values are skipped.
pub fn emit_reports(res: &SweepResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rate = String::from("equalizer,kind,point,snr_db,rate,minimizing_s\n");
    let mut gain = String::from("equalizer,point,snr_db,gain\n");
    let mut mult = String::from("equalizer,point,multipliers,dense_multipliers,rate\n");
    let mut k1 = String::from("equalizer,point,bit,offsets,value\n");
    let mut k3 = k1.clone();
    for p in &res.points {
        for e in &p.equalizers {
            let name = quote(&e.name);
            let (pt, snr) = (fmt_float(p.point), fmt_float(p.snr_db));
            if [p.point, p.snr_db, e.rate.rate, e.rate.minimizing_s].iter().all(|v| v.is_finite()) {
                let _ = writeln!(
                    rate,
                    "{name},{},{pt},{snr},{},{}",
                    e.kind,
                    fmt_float(e.rate.rate),
                    fmt_float(e.rate.minimizing_s)
                );
                let _ = writeln!(
                    mult,
                    "{name},{pt},{},{},{}",
                    e.complexity.multipliers,
                    e.complexity.dense_multipliers,
                    fmt_float(e.rate.rate)
                );
            }
            if let Some(g) = e.gain.filter(|g| g.is_finite() && p.snr_db.is_finite()) {
                let _ = writeln!(gain, "{name},{pt},{snr},{}", fmt_float(g));
            }
            for k in e.kernels.iter().filter(|k| k.value.is_finite()) {
                let target = match k.order {
                    1 => &mut k1,
                    3 => &mut k3,
                    _ => continue,
                };
                let offs: Vec<String> = k.offsets.iter().map(|o| o.to_string()).collect();
                let bit = k.bit.map(|b| b.to_string()).unwrap_or_default();
                let _ = writeln!(target, "{name},{pt},{bit},{},{}", offs.join(" "), fmt_float(k.value));
            }
        }
    }
    write(dir, FILES[0], &rate)?;
    write(dir, FILES[1], &gain)?;
    write(dir, FILES[2], &mult)?;
    write(dir, FILES[3], &k1)?;
    write(dir, FILES[4], &k3)?;
    let json = serde_json::to_string_pretty(res)?;
    write(dir, FILES[5], &json)
}
