//! CSV emitters. Every file starts with `#` provenance lines (tool version, config
//! hash, seed, timestamp) followed by a mandatory header row. Floats carry six
//! significant digits.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::config::RunManifest;
use super::{PsiRow, Table1Row};
use crate::bounds::GroupStats;
use crate::rollout::TrajectoryRow;

/// Formats a float with six significant digits, dropping trailing zeros.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // Exponent after rounding to six significant digits.
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn writer(path: &Path, manifest: &RunManifest) -> io::Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# psicert {}", manifest.tool_version)?;
    writeln!(out, "# config_sha256 {}", manifest.config_hash)?;
    writeln!(out, "# base_seed {}", manifest.base_seed)?;
    writeln!(out, "# generated_utc {}", manifest.timestamp_utc)?;
    Ok(csv::Writer::from_writer(out))
}

fn finish(w: csv::Writer<BufWriter<File>>) -> io::Result<()> {
    w.into_inner().map_err(|e| e.into_error())?.flush()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_groups_csv(path: &Path, manifest: &RunManifest, groups: &[GroupStats]) -> io::Result<()> {
    let mut w = writer(path, manifest)?;
    w.write_record(["group_id", "p_hat", "sigma2_hat", "eps_bernstein", "eps_hoeffding", "eps_scenario", "d_support"])
        .map_err(csv_err)?;
    for g in groups {
        w.write_record([
            g.group_index.to_string(),
            sig6(g.p_hat),
            sig6(g.sigma2_hat),
            sig6(g.eps_bernstein),
            sig6(g.eps_hoeffding),
            sig6(g.eps_scenario),
            g.d_support.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_table1_csv(path: &Path, manifest: &RunManifest, rows: &[Table1Row]) -> io::Result<()> {
    let mut w = writer(path, manifest)?;
    w.write_record(["w_bar", "N", "p_hat", "eps_B", "eps_H", "eps_S", "B_sat", "H_sat", "S_sat"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            sig6(r.w_bar),
            r.n_agents.to_string(),
            sig6(r.p_hat),
            sig6(r.eps_b),
            sig6(r.eps_h),
            sig6(r.eps_s),
            sig6(r.b_sat),
            sig6(r.h_sat),
            sig6(r.s_sat),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_psi_csv(path: &Path, manifest: &RunManifest, rows: &[PsiRow]) -> io::Result<()> {
    let mut w = writer(path, manifest)?;
    w.write_record(["psi", "N", "p_hat_v", "min_dist", "min_dist_worst"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            sig6(r.psi),
            r.n_agents.to_string(),
            sig6(r.p_hat_v),
            sig6(r.min_dist),
            sig6(r.min_dist_worst),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_trajectory_csv(path: &Path, manifest: &RunManifest, rows: &[TrajectoryRow]) -> io::Result<()> {
    let mut w = writer(path, manifest)?;
    let (n, m) = rows.first().map_or((0, 0), |r| (r.x.len(), r.u.len()));
    let mut header = vec!["t".to_string(), "agent".to_string()];
    header.extend((0..n).map(|k| format!("x{k}")));
    header.extend((0..m).map(|k| format!("u{k}")));
    header.push("min_pair_margin".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![sig6(r.t), r.agent.to_string()];
        rec.extend(r.x.iter().map(|&v| sig6(v)));
        rec.extend(r.u.iter().map(|&v| sig6(v)));
        rec.push(sig6(r.min_pair_margin));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish(w)
}
