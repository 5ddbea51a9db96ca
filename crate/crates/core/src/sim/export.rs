use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::sim::run::{Comparison, Metrics, SimRecord};

/// CSV columns, with units in brackets.
pub const COLUMNS: &[&str] = &[
    "k", "time[s]",
    "qx[m]", "qz[m]", "theta[rad]", "vx[m/s]", "vz[m/s]", "omega[rad/s]",
    "ybar1[m]", "ybar2[m]", "vbar1[m/s]", "vbar2[m/s]", "pitch[rad]", "pitch_rate[rad/s]",
    "z1[m]", "z2[m]",
    "u1[N]", "u2[N]",
    "yd1[m]", "yd2[m]",
    "y_est1[m]", "y_est2[m]",
    "e1[m]", "e2[m]",
    "pos_err1[m]", "pos_err2[m]",
    "fault", "fault_latched",
];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(s: &crate::sim::run::Sample) -> Vec<String> {
    let mut r = vec![s.k.to_string(), num(s.time)];
    for group in [&s.x, &s.xbar, &s.z, &s.u, &s.yd, &s.y_estimate, &s.flat_error, &s.position_error] {
        r.extend(group.iter().map(|v| num(*v)));
    }
    r.push(s.fault.map_or_else(String::new, |f| f.to_string()));
    r.push(u8::from(s.fault_latched).to_string());
    r
}

/// `run.csv` -> `run.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Writes one row per sample and a JSON sidecar with the run metadata.
pub fn export_csv(record: &SimRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for s in &record.samples {
        w.write_record(row(s))?;
    }
    w.flush()?;
    write_json(&sidecar_path(path), &record.meta)
}

#[derive(Serialize)]
struct Summary<'a> {
    implicit: &'a Metrics,
    explicit: &'a Metrics,
}

/// Writes `<stem>_implicit.csv`, `<stem>_explicit.csv`, `<stem>_report.txt` and
/// `<stem>_report.json` next to `base`. Returns the report text.
pub fn export_comparison(cmp: &Comparison, base: &Path) -> Result<String> {
    let with = |suffix: &str| {
        let stem = base.file_stem().map_or_else(|| "compare".into(), |s| s.to_string_lossy().into_owned());
        base.with_file_name(format!("{stem}{suffix}"))
    };
    export_csv(&cmp.implicit, &with("_implicit.csv"))?;
    export_csv(&cmp.explicit, &with("_explicit.csv"))?;
    let text = crate::sim::run::metrics_table(&[cmp.implicit_metrics.clone(), cmp.explicit_metrics.clone()]);
    std::fs::write(with("_report.txt"), &text)?;
    write_json(
        &with("_report.json"),
        &Summary {
            implicit: &cmp.implicit_metrics,
            explicit: &cmp.explicit_metrics,
        },
    )?;
    Ok(text)
}

/// Writes a sweep table as text and JSON (`<stem>.txt`, `<stem>.json`).
pub fn export_sweep(rows: &[Metrics], base: &Path) -> Result<String> {
    let text = crate::sim::run::metrics_table(rows);
    std::fs::write(base.with_extension("txt"), &text)?;
    write_json(&base.with_extension("json"), &rows)?;
    Ok(text)
}
